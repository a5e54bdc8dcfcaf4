#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace asot {

/// Dense row-major matrix used for costs, plans and embeddings.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class ErrorCode {
  kInvalidInput,
  kDegenerateInput,
  kNumericalFailure,
  kFormat,
  kTruncated,
  kNonFinite,
  kParse,
  kIo,
  kInternal,
};

const char* to_string(ErrorCode code);

/// Single exception type for the library; `code()` distinguishes the cause.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace asot
