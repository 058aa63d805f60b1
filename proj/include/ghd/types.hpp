#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ghd {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// n x 3 table of points, one row per point (mm).
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// Vertex indices of one triangle, counter-clockwise seen from outside.
using Face = std::array<std::int32_t, 3>;

/// Per-vertex 3D gradient of a scalar objective, same layout as Points.
using VertexGradient = Points;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, int line, const std::string& file = {})
      : Error(format(message, line, file)), message_(message), line_(line) {}
  int line() const { return line_; }
  const std::string& message() const { return message_; }

 private:
  static std::string format(const std::string& message, int line, const std::string& file) {
    std::string out = file;
    if (line > 0) out += (out.empty() ? "line " : ":") + std::to_string(line);
    return out.empty() ? message : out + ": " + message;
  }
  std::string message_;
  int line_;
};

/// Header/payload inconsistency or an invalid field in a serialized artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Arguments violating an operation's preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Iterative numerical procedure failed (eigensolver, non-finite optimizer state).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ghd
