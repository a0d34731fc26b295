#include "bls/error.hpp"

namespace bls {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::non_square: return "NonSquare";
    case ErrorCode::singular_matrix: return "SingularMatrix";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::no_convergence: return "NoConvergence";
    case ErrorCode::evaluator_failure: return "EvaluatorFailure";
    case ErrorCode::numeric_diff_failure: return "NumericDiffFailure";
    case ErrorCode::non_finite_result: return "NonFiniteResult";
    case ErrorCode::lower_solve_failure: return "LowerSolveFailure";
    case ErrorCode::singular_system: return "SingularSystem";
    case ErrorCode::infinite_bound: return "InfiniteBound";
    case ErrorCode::max_iterations: return "MaxIterations";
    case ErrorCode::line_search_failure: return "LineSearchFailure";
    case ErrorCode::degenerate_path: return "DegeneratePath";
    case ErrorCode::infeasible_expert: return "InfeasibleExpert";
    case ErrorCode::invalid_argument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace bls
