#include <cmath>

#include "bls/instances.hpp"
#include "bls/problem.hpp"
#include "support.hpp"

using namespace bls;
using namespace bls::test;

namespace {

BilevelProblem diag_quadratic() {
  ScalarEval upper = [](const Vector& z, const Vector&) { return z.squaredNorm(); };
  ScalarEval lower = [](const Vector& z, const Vector& p) {
    return 0.5 * (2.0 * z(0) * z(0) + 4.0 * z(1) * z(1)) - p.dot(z);
  };
  return BilevelProblem::from_lower_objective(2, 2, upper, lower);
}

BilevelProblem cos_problem() {
  return BilevelProblem::from_fixed_point(
      1, 1, [](const Vector& z, const Vector&) { return z(0) * z(0); },
      [](const Vector& z, const Vector& p) { return Vector(Vector::Constant(1, z(0) - std::cos(p(0)))); });
}

}  // namespace

TEST(Residual, QuadraticOptimumIsZero) {
  const BilevelProblem prob = diag_quadratic();
  const Vector p = vec({1.0, 3.0});
  EXPECT_LE(residual(prob, vec({0.5, 0.75}), p).norm(), 1e-9);
  EXPECT_GT(residual(prob, vec({0.0, 0.0}), p).norm(), 1.0);
}

TEST(Residual, FixedPoint) {
  EXPECT_EQ(residual(cos_problem(), vec({1.0}), vec({0.0}))(0), 0.0);
}

TEST(Residual, RidgeMatchesFdOfLower) {
  const ProblemInstance rr = make_ridge(5, 20, 1);
  const Vector p = vec({-0.3});
  const Vector z = seeded_normal(5, 1, 9).col(0);
  const Vector fd = gradient_fd([&](const Vector& x) { return rr.problem.lower(x, p); }, z);
  EXPECT_LE(rel(rr.problem.residual(z, p), fd), 1e-8);
}

TEST(Residual, DimensionAndEvaluatorErrors) {
  const BilevelProblem prob = diag_quadratic();
  EXPECT_EQ(code_of([&] { residual(prob, vec({1.0}), vec({1.0, 1.0})); }), ErrorCode::dimension_mismatch);
  const BilevelProblem bad = BilevelProblem::from_fixed_point(
      1, 1, [](const Vector&, const Vector&) { return 0.0; },
      [](const Vector&, const Vector&) -> Vector { throw std::runtime_error("boom"); });
  EXPECT_EQ(code_of([&] { residual(bad, vec({1.0}), vec({1.0})); }), ErrorCode::evaluator_failure);
}

TEST(Bundles, CosFixture) {
  const BilevelProblem prob = cos_problem();
  const double p = 0.7;
  const Vector z = vec({std::cos(p)});
  const FirstOrderBundle fb = first_bundle(prob, z, vec({p}));
  const SecondOrderBundle sb = second_bundle(prob, z, vec({p}));
  EXPECT_NEAR(fb.Dz_k(0, 0), 1.0, 1e-9);
  EXPECT_NEAR(fb.Dp_k(0, 0), std::sin(p), 1e-9);
  EXPECT_NEAR(sb.Hp_k.data()(0, 0), std::cos(p), 1e-5);
  EXPECT_NEAR(sb.Dpz_k.data()(0, 0), 0.0, 1e-6);
  EXPECT_NEAR(sb.Dzp_k.data()(0, 0), 0.0, 1e-6);
  EXPECT_NEAR(sb.Hz_k.data()(0, 0), 0.0, 1e-6);
  EXPECT_EQ(fb.source.Dz_k, Source::numeric);
}

TEST(Bundles, LinearFoocHasZeroSecondBlocks) {
  const BilevelProblem prob = diag_quadratic();
  const Vector z = vec({0.3, -0.2}), p = vec({1.0, 2.0});
  const FirstOrderBundle fb = first_bundle(prob, z, p);
  const SecondOrderBundle sb = second_bundle(prob, z, p);
  EXPECT_LE((fb.Dz_k - mat(2, 2, {2, 0, 0, 4})).norm(), 1e-6);
  EXPECT_LE((fb.Dp_k + identity(2)).norm(), 1e-6);
  EXPECT_LE(sb.Hp_k.norm() + sb.Dpz_k.norm() + sb.Dzp_k.norm() + sb.Hz_k.norm(), 1e-4);
  EXPECT_EQ(sb.Hp_k.blocks(), 2);
  EXPECT_EQ(sb.Dzp_k.block_rows(), 2);
}

TEST(Bundles, RidgeDpkAnalyticVsFd) {
  const ProblemInstance rr = make_ridge(6, 30, 2);
  const Vector p = vec({0.4});
  const Vector z = seeded_normal(6, 1, 3).col(0);
  const FirstOrderBundle fb = first_bundle(rr.problem, z, p);
  EXPECT_EQ(fb.source.Dp_k, Source::analytic);
  const Matrix expect = 2.0 * std::log(10.0) * std::pow(10.0, p(0)) * z;
  EXPECT_LE(rel(fb.Dp_k, expect), 1e-12);
  const Matrix fd = jacobian_fd([&](const Vector& q) { return rr.problem.residual(z, q); }, p);
  EXPECT_LE(rel(fb.Dp_k, fd), 1e-8);
}

TEST(Bundles, LowerObjectiveDzkSymmetric) {
  const ProblemInstance diag = make_diag_ridge(5, 30, 4);
  const Vector z = seeded_normal(5, 1, 5).col(0);
  const Matrix dzk = first_bundle(diag.problem, z, diag.p0).Dz_k;
  EXPECT_LE((dzk - dzk.transpose()).cwiseAbs().maxCoeff(), 1e-6);
}

// Analytic partials of every built-in problem against the numeric fallback.
TEST(Bundles, AnalyticAgreesWithNumeric) {
  LqrOptions lo;
  std::vector<ProblemInstance> insts = {make_quadratic_toy(4, 4, 0), make_scalar_cos(), make_ridge(8, 40, 0),
                                        make_diag_ridge(5, 40, 0), make_inverse_lqr(lo)};
  for (const ProblemInstance& inst : insts) {
    const BilevelProblem& prob = inst.problem;
    const Vector z = inst.z0 + 0.1 * seeded_normal(prob.dim_z(), 1, 77).col(0);
    const Vector& p = inst.p0;
    const BilevelProblem numeric =
        prob.has_lower_objective()
            ? BilevelProblem::from_lower_objective(prob.dim_z(), prob.dim_p(), prob.upper_evaluator(),
                                                   prob.lower_evaluator(),
                                                   AnalyticPartials{prob.partials().k})
            : BilevelProblem::from_fixed_point(prob.dim_z(), prob.dim_p(), prob.upper_evaluator(),
                                               [&](const Vector& zz, const Vector& pp) { return prob.residual(zz, pp); });
    const FirstOrderBundle a1 = first_bundle(prob, z, p), n1 = first_bundle(numeric, z, p);
    const SecondOrderBundle a2 = second_bundle(prob, z, p), n2 = second_bundle(numeric, z, p);
    auto check = [&](const Matrix& a, const Matrix& n, const char* what) {
      const double scale = std::max(n.norm(), 1.0);
      EXPECT_LE((a - n).norm() / scale, 1e-4) << inst.name << " " << what;
    };
    check(a1.Dz_k, n1.Dz_k, "Dz_k");
    check(a1.Dp_k, n1.Dp_k, "Dp_k");
    check(a1.Dz_fU, n1.Dz_fU, "Dz_fU");
    check(a1.Dp_fU, n1.Dp_fU, "Dp_fU");
    check(a2.Hp_k.data(), n2.Hp_k.data(), "Hp_k");
    check(a2.Dpz_k.data(), n2.Dpz_k.data(), "Dpz_k");
    check(a2.Dzp_k.data(), n2.Dzp_k.data(), "Dzp_k");
    check(a2.Hz_k.data(), n2.Hz_k.data(), "Hz_k");
    check(a2.Hp_fU, n2.Hp_fU, "Hp_fU");
    check(a2.Hz_fU, n2.Hz_fU, "Hz_fU");
    check(a2.Dzp_fU, n2.Dzp_fU, "Dzp_fU");
    EXPECT_LE((n2.Hp_fU - n2.Hp_fU.transpose()).norm(), 1e-8);
    EXPECT_LE((n2.Hz_fU - n2.Hz_fU.transpose()).norm(), 1e-8);
  }
}
