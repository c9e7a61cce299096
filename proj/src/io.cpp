#include "dtdlab/io.hpp"

#include <cctype>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>

namespace dtdlab {

std::string format_double(double value) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", value);
  return std::string(buf, static_cast<std::size_t>(n));
}

ParseError::ParseError(const std::string& what, std::size_t line)
    : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

bool TokenReader::fill() {
  while (true) {
    while (pos_ < buffer_.size() && std::isspace(static_cast<unsigned char>(buffer_[pos_]))) ++pos_;
    if (pos_ < buffer_.size() && buffer_[pos_] != '#') return true;
    if (!std::getline(in_, buffer_)) return false;
    ++line_;
    pos_ = 0;
  }
}

bool TokenReader::at_end() { return !fill(); }

std::string TokenReader::word() {
  if (!fill()) fail("unexpected end of input");
  const std::size_t start = pos_;
  while (pos_ < buffer_.size() && !std::isspace(static_cast<unsigned char>(buffer_[pos_]))) ++pos_;
  return buffer_.substr(start, pos_ - start);
}

void TokenReader::expect(const std::string& keyword) {
  const std::string got = word();
  if (got != keyword) fail("expected '" + keyword + "', found '" + got + "'");
}

double TokenReader::number() {
  const std::string tok = word();
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || errno == ERANGE) fail("not a number: '" + tok + "'");
  return v;
}

std::size_t TokenReader::count() {
  const std::string tok = word();
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) fail("not a count: '" + tok + "'");
  return v;
}

void TokenReader::fail(const std::string& what) const { throw ParseError(what, line_); }

void write_dense(std::ostream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

Matrix read_dense(TokenReader& in, std::size_t rows, std::size_t cols) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = in.number();
  return m;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  out << "matrix " << m.rows() << ' ' << m.cols() << '\n';
  write_dense(out, m);
}

Matrix read_matrix(TokenReader& in) {
  in.expect("matrix");
  const std::size_t rows = in.count();
  const std::size_t cols = in.count();
  return read_dense(in, rows, cols);
}

Matrix read_matrix(std::istream& in) {
  TokenReader reader(in);
  return read_matrix(reader);
}

void save_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_matrix(out, m);
}

Matrix load_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return read_matrix(in);
  } catch (const ParseError& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace dtdlab
