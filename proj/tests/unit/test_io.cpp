#include "dtdlab/io.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

using namespace dtdlab;

TEST_CASE("17 significant digits round-trip exactly") {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, std::nextafter(1.0, 2.0)}) {
    const std::string s = format_double(x);
    CHECK(std::stod(s) == x);
  }
}

TEST_CASE("token reader skips comments and tracks lines") {
  std::istringstream in("# header\n\nmatrix 2 2  # trailing\n1 2\n3 x\n");
  TokenReader r(in);
  r.expect("matrix");
  CHECK(r.line() == 3);
  CHECK(r.count() == 2);
  CHECK(r.count() == 2);
  CHECK(r.number() == 1.0);
  CHECK(r.number() == 2.0);
  CHECK(r.number() == 3.0);
  try {
    r.number();
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 5);
  }
}

TEST_CASE("matrix block round trip is bit exact") {
  Matrix m(2, 3);
  m << 0.1, -1e-17, 3.0, 1.0 / 7.0, 2.0, -0.0;
  std::stringstream buf;
  write_matrix(buf, m);
  const Matrix back = read_matrix(buf);
  REQUIRE(back.rows() == 2);
  REQUIRE(back.cols() == 3);
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) CHECK(back(i, j) == m(i, j));
}

TEST_CASE("truncated matrix reports end of input") {
  std::istringstream in("matrix 2 2\n1 2\n3\n");
  CHECK_THROWS_AS(read_matrix(in), ParseError);
}

TEST_CASE("missing file is reported with its path") {
  CHECK_THROWS_WITH_AS(load_matrix("/nonexistent/w.txt"), doctest::Contains("/nonexistent/w.txt"), Error);
}
