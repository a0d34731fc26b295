#include "bls/ift.hpp"

#include <string>

namespace bls {

SensitivityResult ift_jacobian(const FirstOrderBundle& fb, double epsilon) {
  const Index m = fb.Dz_k.rows();
  require(fb.Dz_k.cols() == m && fb.Dp_k.rows() == m, ErrorCode::dimension_mismatch,
          "Dz_k must be m x m and Dp_k m x n");
  require(epsilon >= 0.0, ErrorCode::invalid_argument, "epsilon must be nonnegative");

  Matrix a = fb.Dz_k;
  if (epsilon > 0.0) a.diagonal().array() += epsilon;
  auto f = std::make_shared<const Factorization>(a);
  require(!f->singular(), ErrorCode::singular_system,
          "D_z k + eps I is singular (smallest pivot " + std::to_string(f->min_pivot()) +
              ", eps = " + std::to_string(epsilon) +
              "); retry with eps > 0 and report the regularized first-order bound");

  SensitivityResult sens;
  sens.Dp_z = -f->solve(fb.Dp_k);
  sens.factorization = std::move(f);
  sens.epsilon = epsilon;
  return sens;
}

StackedMatrix hessian_bracket(const SecondOrderBundle& sb, const Matrix& Dp_z) {
  const Index m = Dp_z.rows();
  const Index n = Dp_z.cols();
  require(sb.Hp_k.blocks() == m && sb.Hp_k.block_rows() == n && sb.Hp_k.block_cols() == n,
          ErrorCode::dimension_mismatch, "Hp_k must hold m blocks n x n");
  require(sb.Dpz_k.blocks() == m && sb.Dpz_k.block_rows() == n && sb.Dpz_k.block_cols() == m,
          ErrorCode::dimension_mismatch, "Dpz_k must hold m blocks n x m");
  require(sb.Dzp_k.blocks() == m && sb.Dzp_k.block_rows() == m && sb.Dzp_k.block_cols() == n,
          ErrorCode::dimension_mismatch, "Dzp_k must hold m blocks m x n");
  require(sb.Hz_k.blocks() == m && sb.Hz_k.block_rows() == m && sb.Hz_k.block_cols() == m,
          ErrorCode::dimension_mismatch, "Hz_k must hold m blocks m x m");

  const Matrix jt = Dp_z.transpose();
  StackedMatrix bracket = sb.Hp_k;
  // (D_pz k)(D_p z*) is a plain product of the stacked data.
  bracket.data().noalias() += sb.Dpz_k.data() * Dp_z;
  bracket.data() += kron_right_apply(jt, sb.Dzp_k).data();
  const StackedMatrix hz_j(m, m, sb.Hz_k.data() * Dp_z);
  bracket.data() += kron_right_apply(jt, hz_j).data();
  return bracket;
}

StackedMatrix ift_hessian(const FirstOrderBundle& fb, const SecondOrderBundle& sb,
                          const SensitivityResult& sens) {
  require(sens.factorization != nullptr, ErrorCode::invalid_argument,
          "sensitivity result carries no factorization");
  require(sens.factorization->size() == fb.Dz_k.rows(), ErrorCode::dimension_mismatch,
          "factorization does not match Dz_k");
  StackedMatrix hp_z = kron_left_solve(*sens.factorization, hessian_bracket(sb, sens.Dp_z));
  hp_z.data() = -hp_z.data();
  return hp_z;
}

Vector sensitivity_vector(const FirstOrderBundle& fb, const SensitivityResult& sens) {
  require(sens.factorization != nullptr, ErrorCode::invalid_argument,
          "sensitivity result carries no factorization");
  require(fb.Dz_fU.rows() == 1 && fb.Dz_fU.cols() == sens.factorization->size(),
          ErrorCode::dimension_mismatch, "Dz_fU must be 1 x m");
  return sens.factorization->solve_transposed(Vector(fb.Dz_fU.row(0).transpose()));
}

Matrix total_gradient(const FirstOrderBundle& fb, const SensitivityResult& sens) {
  require(fb.Dz_fU.cols() == sens.Dp_z.rows() && fb.Dp_fU.cols() == sens.Dp_z.cols(),
          ErrorCode::dimension_mismatch, "bundle and sensitivity shapes disagree");
  return fb.Dp_fU + fb.Dz_fU * sens.Dp_z;
}

Matrix total_hessian(const FirstOrderBundle& fb, const SecondOrderBundle& sb,
                     const SensitivityResult& sens, HessianMode mode, HessianStrategy strategy) {
  const Matrix& j = sens.Dp_z;
  const Index n = j.cols();
  require(sb.Hp_fU.rows() == n && sb.Hp_fU.cols() == n, ErrorCode::dimension_mismatch,
          "Hp_fU must be n x n");
  require(sb.Hz_fU.rows() == j.rows() && sb.Hz_fU.cols() == j.rows(),
          ErrorCode::dimension_mismatch, "Hz_fU must be m x m");

  Matrix h = sb.Hp_fU + j.transpose() * sb.Hz_fU * j;
  if (mode == HessianMode::general) {
    require(sb.Dzp_fU.rows() == j.rows() && sb.Dzp_fU.cols() == n, ErrorCode::dimension_mismatch,
            "Dzp_fU must be m x n");
    const Matrix cross = j.transpose() * sb.Dzp_fU;
    h += cross + cross.transpose();
  }

  if (strategy == HessianStrategy::fast) {
    const Vector v = sensitivity_vector(fb, sens);
    const Matrix weights = -v.transpose();
    h += kron_left_apply(weights, hessian_bracket(sb, j)).data();
  } else {
    const StackedMatrix hp_z = ift_hessian(fb, sb, sens);
    h += kron_left_apply(fb.Dz_fU, hp_z).data();
  }
  return 0.5 * (h + h.transpose());
}

TotalDerivatives total_derivatives(const BilevelProblem& problem, const Vector& z, const Vector& p,
                                   bool with_hessian, HessianMode mode, HessianStrategy strategy,
                                   double epsilon) {
  TotalDerivatives out;
  out.value = problem.upper(z, p);
  const FirstOrderBundle fb = first_bundle(problem, z, p);
  out.sens = ift_jacobian(fb, epsilon);
  out.gradient = total_gradient(fb, out.sens);
  if (with_hessian) {
    const SecondOrderBundle sb = second_bundle(problem, z, p);
    out.hessian = total_hessian(fb, sb, out.sens, mode, strategy);
  }
  return out;
}

}  // namespace bls
