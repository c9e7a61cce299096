#pragma once

#include "dtdlab/common.hpp"

#include <iosfwd>
#include <string>

namespace dtdlab {

/// Shortest-safe decimal for a double: 17 significant digits.
std::string format_double(double value);

/// Error raised while parsing a text file; carries the 1-based line number.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t line);
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

/// Whitespace tokenizer that skips '#' comments and tracks line numbers.
class TokenReader {
public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  bool at_end();
  std::string word();
  void expect(const std::string& keyword);
  double number();
  std::size_t count();
  std::size_t line() const { return line_; }
  [[noreturn]] void fail(const std::string& what) const;

private:
  bool fill();

  std::istream& in_;
  std::string buffer_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

// Dense matrix block:
//
//   matrix <rows> <cols>
//   <rows lines of cols numbers>
void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(TokenReader& in);
Matrix read_matrix(std::istream& in);
void save_matrix(const std::string& path, const Matrix& m);
Matrix load_matrix(const std::string& path);

/// Reads `rows * cols` numbers in row-major order.
Matrix read_dense(TokenReader& in, std::size_t rows, std::size_t cols);
void write_dense(std::ostream& out, const Matrix& m);

}  // namespace dtdlab
