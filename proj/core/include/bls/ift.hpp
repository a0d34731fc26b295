#pragma once

// Implicit-function sensitivities of the lower solution z*(p) and the total
// derivatives of the upper objective built from them.
//
//   D_p z* = -(D_z k)^{-1} D_p k
//   H_p z* = -[(D_z k)^{-1} (x) I] * bracket
//   bracket = H_p k + (D_pz k)(D_p z*) + (I (x) D_p z*^T)(D_zp k)
//           + (I (x) D_p z*^T)(H_z k)(D_p z*)
//
// The total Hessian contracts H_p z* with D_z f_U. The fast strategy never
// forms H_p z*: with v^T = D_z f_U (D_z k)^{-1} the contraction reduces to a
// weighted sum of the bracket blocks, -sum_i v_i bracket_i.

#include <memory>
#include <optional>

#include "bls/problem.hpp"
#include "bls/tensor.hpp"

namespace bls {

struct SensitivityResult {
  Matrix Dp_z;                                         // m x n
  std::optional<StackedMatrix> Hp_z;                   // m blocks n x n
  std::optional<Vector> v;                             // sensitivity vector
  std::shared_ptr<const Factorization> factorization;  // of D_z k + epsilon I
  double epsilon = 0.0;
};

enum class HessianMode {
  general,         // includes the D_zp f_U cross terms
  no_upper_mixed,  // H_p f_U + J^T H_z f_U J + (D_z f_U (x) I) H_p z* only
};

enum class HessianStrategy { full, fast };

/// D_p z* from one factorization of D_z k + epsilon I. Throws SingularSystem
/// when that matrix is singular; regularization is never applied implicitly.
SensitivityResult ift_jacobian(const FirstOrderBundle& fb, double epsilon = 0.0);

/// The bracket of the second-order expansion, m blocks n x n.
StackedMatrix hessian_bracket(const SecondOrderBundle& sb, const Matrix& Dp_z);

/// H_p z* using the factorization cached in `sens`.
StackedMatrix ift_hessian(const FirstOrderBundle& fb, const SecondOrderBundle& sb,
                          const SensitivityResult& sens);

/// v with v^T = D_z f_U (D_z k + epsilon I)^{-1}; one transposed solve.
Vector sensitivity_vector(const FirstOrderBundle& fb, const SensitivityResult& sens);

/// D_p f_U + D_z f_U D_p z*, 1 x n.
Matrix total_gradient(const FirstOrderBundle& fb, const SensitivityResult& sens);

/// n x n total Hessian of p -> f_U(z*(p), p), symmetrized.
Matrix total_hessian(const FirstOrderBundle& fb, const SecondOrderBundle& sb,
                     const SensitivityResult& sens, HessianMode mode = HessianMode::general,
                     HessianStrategy strategy = HessianStrategy::fast);

/// Convenience: first bundle, Jacobian, and both totals at one point.
struct TotalDerivatives {
  double value = 0.0;
  Matrix gradient;  // 1 x n
  Matrix hessian;   // n x n, empty unless requested
  SensitivityResult sens;
};

TotalDerivatives total_derivatives(const BilevelProblem& problem, const Vector& z, const Vector& p,
                                   bool with_hessian, HessianMode mode = HessianMode::general,
                                   HessianStrategy strategy = HessianStrategy::fast,
                                   double epsilon = 0.0);

}  // namespace bls
