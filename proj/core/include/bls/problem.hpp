#pragma once

// The bilevel program
//
//   min_p  f_U(z*(p), p)   s.t.  z*(p) = argmin_z f_L(z, p)
//
// with the lower problem represented through its first-order optimality map
// k(z, p) = D_z f_L(z, p) (or any fixed-point map with k(z*, p) = 0), and the
// bundles of partial derivatives consumed by the implicit-function formulas.

#include <functional>
#include <optional>

#include "bls/derivatives.hpp"
#include "bls/tensor.hpp"

namespace bls {

using ScalarEval = std::function<double(const Vector& z, const Vector& p)>;
using VectorEval = std::function<Vector(const Vector& z, const Vector& p)>;
using MatrixEval = std::function<Matrix(const Vector& z, const Vector& p)>;
using StackedEval = std::function<StackedMatrix(const Vector& z, const Vector& p)>;

/// Optional closed-form partials. Any empty entry falls back to central
/// differences. Shapes follow the bundle fields below.
struct AnalyticPartials {
  VectorEval k;  // overrides D_z f_L for lower-objective problems
  MatrixEval Dz_k;
  MatrixEval Dp_k;
  StackedEval Hp_k;
  StackedEval Dpz_k;
  StackedEval Dzp_k;
  StackedEval Hz_k;
  MatrixEval Dz_fU;
  MatrixEval Dp_fU;
  MatrixEval Hp_fU;
  MatrixEval Hz_fU;
  MatrixEval Dzp_fU;
};

enum class Source : unsigned char { analytic, numeric };

class BilevelProblem {
 public:
  /// k is D_z f_L unless an analytic k is attached.
  static BilevelProblem from_lower_objective(Index dim_z, Index dim_p, ScalarEval upper,
                                             ScalarEval lower, AnalyticPartials partials = {});

  static BilevelProblem from_fixed_point(Index dim_z, Index dim_p, ScalarEval upper,
                                         VectorEval k, AnalyticPartials partials = {});

  Index dim_z() const noexcept { return dim_z_; }
  Index dim_p() const noexcept { return dim_p_; }
  bool has_lower_objective() const noexcept { return static_cast<bool>(lower_); }

  const AnalyticPartials& partials() const noexcept { return partials_; }
  const DiffConfig& diff_config() const noexcept { return diff_; }
  void set_diff_config(const DiffConfig& cfg);

  const ScalarEval& upper_evaluator() const noexcept { return upper_; }
  const ScalarEval& lower_evaluator() const noexcept { return lower_; }

  double upper(const Vector& z, const Vector& p) const;
  /// Throws invalid_argument for fixed-point problems.
  double lower(const Vector& z, const Vector& p) const;

  /// k(z, p).
  Vector residual(const Vector& z, const Vector& p) const;

  Matrix dz_k(const Vector& z, const Vector& p) const;
  Matrix dp_k(const Vector& z, const Vector& p) const;
  Source dz_k_source() const;
  Source dp_k_source() const;

  void check_dims(const Vector& z, const Vector& p) const;

 private:
  BilevelProblem() = default;

  Index dim_z_ = 0;
  Index dim_p_ = 0;
  ScalarEval upper_;
  ScalarEval lower_;
  VectorEval fixed_point_;
  AnalyticPartials partials_;
  DiffConfig diff_;
};

Vector residual(const BilevelProblem& problem, const Vector& z, const Vector& p);

struct FirstOrderBundle {
  Matrix Dz_k;   // m x m
  Matrix Dp_k;   // m x n
  Matrix Dz_fU;  // 1 x m
  Matrix Dp_fU;  // 1 x n

  struct Provenance {
    Source Dz_k, Dp_k, Dz_fU, Dp_fU;
  } source{};
};

struct SecondOrderBundle {
  StackedMatrix Hp_k;   // m blocks n x n
  StackedMatrix Dpz_k;  // m blocks n x m
  StackedMatrix Dzp_k;  // m blocks m x n
  StackedMatrix Hz_k;   // m blocks m x m
  Matrix Hp_fU;         // n x n
  Matrix Hz_fU;         // m x m
  Matrix Dzp_fU;        // m x n, d^2 f_U / dz dp

  struct Provenance {
    Source Hp_k, Dpz_k, Dzp_k, Hz_k, Hp_fU, Hz_fU, Dzp_fU;
  } source{};
};

FirstOrderBundle first_bundle(const BilevelProblem& problem, const Vector& z, const Vector& p);
SecondOrderBundle second_bundle(const BilevelProblem& problem, const Vector& z, const Vector& p);

struct LowerSolution {
  Vector z;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

}  // namespace bls
