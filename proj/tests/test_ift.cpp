#include <cmath>
#include <numbers>

#include "bls/ift.hpp"
#include "bls/instances.hpp"
#include "support.hpp"

using namespace bls;
using namespace bls::test;

namespace {

FirstOrderBundle linear_bundle(const Matrix& a, const Matrix& dz_fu) {
  FirstOrderBundle fb;
  fb.Dz_k = a;
  fb.Dp_k = -identity(a.rows());
  fb.Dz_fU = dz_fu;
  fb.Dp_fU = Matrix::Zero(1, a.rows());
  return fb;
}

// k = z - cos p with f_U = z p: the mixed partial of f_U is 1, so the two
// Hessian modes differ by 2 D_p z* = -2 sin p.
BilevelProblem cos_mixed() {
  return BilevelProblem::from_fixed_point(
      1, 1, [](const Vector& z, const Vector& p) { return z(0) * p(0); },
      [](const Vector& z, const Vector& p) { return vec({z(0) - std::cos(p(0))}); });
}

std::vector<ProblemInstance> all_instances() {
  return {make_quadratic_toy(4, 4, 0), make_scalar_cos(0.8), make_ridge(20, 100, 0),
          make_diag_ridge(10, 100, 0), make_inverse_lqr(LqrOptions{})};
}

Vector solved(const ProblemInstance& inst, const Vector& p) {
  LowerConfig cfg;
  cfg.tol = 1e-12;
  const LowerSolution s = solve_lower(inst.problem, p, inst.z0, cfg);
  EXPECT_TRUE(s.converged) << inst.name;
  return s.z;
}

}  // namespace

TEST(IftJacobian, Examples) {
  const SensitivityResult s = ift_jacobian(linear_bundle(mat(2, 2, {2, 0, 0, 4}), Matrix::Zero(1, 2)));
  EXPECT_LE((s.Dp_z - mat(2, 2, {0.5, 0, 0, 0.25})).norm(), 1e-15);

  const ProblemInstance cos = make_scalar_cos();
  const Vector p = vec({std::numbers::pi / 2});
  const FirstOrderBundle fb = first_bundle(cos.problem, vec({0.0}), p);
  EXPECT_NEAR(ift_jacobian(fb).Dp_z(0, 0), -1.0, 1e-12);

  FirstOrderBundle zero = linear_bundle(mat(2, 2, {2, 1, 1, 3}), Matrix::Zero(1, 2));
  zero.Dp_k.setZero();
  EXPECT_EQ(ift_jacobian(zero).Dp_z.norm(), 0.0);
}

TEST(IftJacobian, SingularNeedsExplicitEpsilon) {
  const FirstOrderBundle fb = linear_bundle(mat(2, 2, {1, 1, 1, 1}), Matrix::Zero(1, 2));
  EXPECT_EQ(code_of([&] { ift_jacobian(fb); }), ErrorCode::singular_system);
  const SensitivityResult s = ift_jacobian(fb, 0.5);
  EXPECT_EQ(s.epsilon, 0.5);
  EXPECT_LE(((fb.Dz_k + 0.5 * identity(2)) * s.Dp_z + fb.Dp_k).norm(), 1e-14);
}

TEST(IftJacobian, ImplicitEquationResidual) {
  for (const ProblemInstance& inst : all_instances()) {
    const Vector z = solved(inst, inst.p0);
    const FirstOrderBundle fb = first_bundle(inst.problem, z, inst.p0);
    const SensitivityResult s = ift_jacobian(fb);
    EXPECT_LE((fb.Dz_k * s.Dp_z + fb.Dp_k).norm(), 1e-8 * fb.Dp_k.norm()) << inst.name;
  }
}

TEST(IftHessian, LinearFoocIsZero) {
  const ProblemInstance q = make_quadratic_toy(4, 4, 3);
  const Vector z = solved(q, q.p0);
  const FirstOrderBundle fb = first_bundle(q.problem, z, q.p0);
  const SensitivityResult s = ift_jacobian(fb);
  EXPECT_LE(ift_hessian(fb, second_bundle(q.problem, z, q.p0), s).norm(), 1e-12 * s.Dp_z.norm());
}

TEST(IftHessian, CosFixture) {
  const ProblemInstance cos = make_scalar_cos();
  for (double p : {0.0, 0.4, 1.3}) {
    const Vector pv = vec({p}), z = vec({std::cos(p)});
    const FirstOrderBundle fb = first_bundle(cos.problem, z, pv);
    const StackedMatrix h = ift_hessian(fb, second_bundle(cos.problem, z, pv), ift_jacobian(fb));
    EXPECT_NEAR(h.data()(0, 0), -std::cos(p), 1e-8);
  }
}

TEST(IftHessian, Eq7ResidualAndBlockSymmetry) {
  for (const ProblemInstance& inst : all_instances()) {
    const Vector z = solved(inst, inst.p0);
    const FirstOrderBundle fb = first_bundle(inst.problem, z, inst.p0);
    const SecondOrderBundle sb = second_bundle(inst.problem, z, inst.p0);
    const SensitivityResult s = ift_jacobian(fb);
    const StackedMatrix h = ift_hessian(fb, sb, s);
    const StackedMatrix bracket = hessian_bracket(sb, s.Dp_z);
    EXPECT_LE((kron_left_apply(fb.Dz_k, h).data() + bracket.data()).norm(), 1e-7 * std::max(bracket.norm(), 1e-300))
        << inst.name;
    for (Index i = 0; i < h.blocks(); ++i) {
      EXPECT_LE((Matrix(h.block(i)) - Matrix(h.block(i).transpose())).norm(), 1e-6) << inst.name;
    }
  }
}

TEST(IftHessian, RidgeTwoFeaturesAgainstFd) {
  const ProblemInstance rr = make_ridge(2, 20, 5);
  const Vector p = vec({-0.5});
  const StackedMatrix fd = stacked_jacobian_fd(
      [&](const Vector& q) { return ift_jacobian(first_bundle(rr.problem, solved(rr, q), q)).Dp_z; }, p);
  const Vector z = solved(rr, p);
  const FirstOrderBundle fb = first_bundle(rr.problem, z, p);
  EXPECT_LE(rel(ift_hessian(fb, second_bundle(rr.problem, z, p), ift_jacobian(fb)).data(), fd.data()), 1e-4);
}

TEST(SensitivityVector, Examples) {
  const SensitivityResult zero = ift_jacobian(linear_bundle(mat(2, 2, {2, 0, 0, 4}), Matrix::Zero(1, 2)));
  EXPECT_EQ(sensitivity_vector(linear_bundle(mat(2, 2, {2, 0, 0, 4}), Matrix::Zero(1, 2)), zero).norm(), 0.0);

  const FirstOrderBundle id = linear_bundle(identity(2), mat(1, 2, {3, -1}));
  EXPECT_LE((sensitivity_vector(id, ift_jacobian(id)) - vec({3, -1})).norm(), 1e-15);

  const FirstOrderBundle d = linear_bundle(mat(2, 2, {2, 0, 0, 4}), mat(1, 2, {1, 1}));
  reset_op_counters();
  const SensitivityResult s = ift_jacobian(d);
  const Vector v = sensitivity_vector(d, s);
  EXPECT_LE((v - vec({0.5, 0.25})).norm(), 1e-15);
  EXPECT_EQ(op_counters().factorizations, 1);
}

TEST(TotalGradient, Examples) {
  FirstOrderBundle fb = linear_bundle(mat(2, 2, {2, 1, 1, 3}), Matrix::Zero(1, 2));
  fb.Dp_fU = mat(1, 2, {0.3, -0.7});
  EXPECT_EQ(total_gradient(fb, ift_jacobian(fb)), fb.Dp_fU);

  const Matrix a = mat(2, 2, {2, 1, 1, 3});
  const Vector z = factorize(a).solve(vec({1.0, 2.0}));
  const FirstOrderBundle q = linear_bundle(a, Matrix(2.0 * z.transpose()));
  const Matrix expect = 2.0 * z.transpose() * factorize(a).solve(Matrix(identity(2)));
  EXPECT_LE(rel(total_gradient(q, ift_jacobian(q)), expect), 1e-14);
}

TEST(TotalHessian, LinearFoocConvexCase) {
  const ProblemInstance q = make_quadratic_toy(4, 4, 1);
  const Vector z = solved(q, q.p0);
  const TotalDerivatives td = total_derivatives(q.problem, z, q.p0, true);
  const SecondOrderBundle sb = second_bundle(q.problem, z, q.p0);
  const Matrix& j = td.sens.Dp_z;
  EXPECT_LE(rel(td.hessian, Matrix(j.transpose() * sb.Hz_fU * j)), 1e-12);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(td.hessian);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
}

TEST(TotalHessian, ScalarChain) {
  const ProblemInstance cos = make_scalar_cos();
  for (double p : {0.0, 0.6}) {
    const TotalDerivatives td = total_derivatives(cos.problem, vec({std::cos(p)}), vec({p}), true);
    EXPECT_NEAR(td.hessian(0, 0), -2.0 * std::cos(2.0 * p), 1e-9);
  }
}

TEST(TotalHessian, MixedTermArbitratedByFd) {
  const BilevelProblem prob = cos_mixed();
  const double p = 0.9;
  const Vector pv = vec({p}), z = vec({std::cos(p)});
  const double truth = -2.0 * std::sin(p) - p * std::cos(p);
  const TotalDerivatives general = total_derivatives(prob, z, pv, true, HessianMode::general);
  const TotalDerivatives exact = total_derivatives(prob, z, pv, true, HessianMode::no_upper_mixed);
  EXPECT_NEAR(general.hessian(0, 0), truth, 1e-6);
  EXPECT_NEAR(exact.hessian(0, 0), -p * std::cos(p), 1e-6);

  LowerConfig cfg;
  cfg.tol = 1e-13;
  const Matrix fd = total_hessian_fd(prob, pv, [&](const Vector& q) { return solve_lower(prob, q, z, cfg); });
  EXPECT_LE(rel(general.hessian, fd), 1e-6);
  EXPECT_GT(rel(exact.hessian, fd), 1e-2);
}

TEST(TotalHessian, FastEqualsFullAndSymmetric) {
  std::vector<ProblemInstance> insts = all_instances();
  LqrOptions barrier;
  barrier.u_lim = 2.0;
  barrier.barrier_alpha = 100.0;
  insts.push_back(make_inverse_lqr(barrier));
  for (const ProblemInstance& inst : insts) {
    const Vector z = solved(inst, inst.p0);
    const FirstOrderBundle fb = first_bundle(inst.problem, z, inst.p0);
    const SecondOrderBundle sb = second_bundle(inst.problem, z, inst.p0);
    const SensitivityResult s = ift_jacobian(fb);
    for (HessianMode mode : {HessianMode::general, HessianMode::no_upper_mixed}) {
      const Matrix fast = total_hessian(fb, sb, s, mode, HessianStrategy::fast);
      const Matrix full = total_hessian(fb, sb, s, mode, HessianStrategy::full);
      EXPECT_LE(rel(fast, full), 1e-9) << inst.name;
      EXPECT_LE((fast - fast.transpose()).norm(), 1e-8 * std::max(fast.norm(), 1.0)) << inst.name;
    }
  }
}

TEST(TotalHessian, FastPathCounters) {
  const ProblemInstance rr = make_diag_ridge(10, 100, 2);
  const Vector z = solved(rr, rr.p0);
  reset_op_counters();
  total_derivatives(rr.problem, z, rr.p0, true, HessianMode::general, HessianStrategy::fast);
  EXPECT_EQ(op_counters().factorizations, 1);
  EXPECT_LE(op_counters().solve_calls, rr.problem.dim_z() + 2);
}
