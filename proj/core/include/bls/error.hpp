#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bls {

enum class ErrorCode {
  non_square,
  singular_matrix,
  dimension_mismatch,
  no_convergence,
  evaluator_failure,
  numeric_diff_failure,
  non_finite_result,
  lower_solve_failure,
  singular_system,
  infinite_bound,
  max_iterations,
  line_search_failure,
  degenerate_path,
  infeasible_expert,
  invalid_argument,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace bls
