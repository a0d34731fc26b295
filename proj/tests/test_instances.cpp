#include <cmath>

#include "bls/instances.hpp"
#include "support.hpp"

using namespace bls;
using namespace bls::test;

namespace {

Vector solved(const BilevelProblem& prob, const Vector& p, const Vector& z0) {
  LowerConfig cfg;
  cfg.tol = 1e-12;
  const LowerSolution s = solve_lower(prob, p, z0, cfg);
  EXPECT_TRUE(s.converged);
  return s.z;
}

}  // namespace

TEST(Instances, SeededReconstructionIsBitIdentical) {
  EXPECT_EQ(seeded_normal(4, 3, 17), seeded_normal(4, 3, 17));
  EXPECT_NE(seeded_normal(4, 3, 17), seeded_normal(4, 3, 18));
  LqrOptions lo;
  lo.seed = 3;
  for (int kind = 0; kind < 4; ++kind) {
    auto make = [&] {
      switch (kind) {
        case 0: return make_quadratic_toy(5, 5, 3);
        case 1: return make_ridge(8, 40, 3);
        case 2: return make_diag_ridge(8, 40, 3);
        default: return make_inverse_lqr(lo);
      }
    };
    const ProblemInstance a = make(), b = make();
    const Vector z = seeded_normal(a.problem.dim_z(), 1, 5).col(0);
    const Vector p = a.p0 + 0.1 * seeded_normal(a.problem.dim_p(), 1, 6).col(0);
    EXPECT_EQ(a.problem.residual(z, p), b.problem.residual(z, p)) << a.name;
    EXPECT_EQ(a.problem.upper(z, p), b.problem.upper(z, p)) << a.name;
    EXPECT_EQ(a.p0, b.p0);
    if (a.known_optimum) {
      EXPECT_EQ(a.known_optimum->value, b.known_optimum->value);
      EXPECT_FALSE(a.known_optimum->note.empty());
    }
  }
}

TEST(Quadratic, ClosedForms) {
  const ProblemInstance q = make_quadratic_toy(mat(2, 2, {2, 0, 0, 4}), vec({1.0, -1.0}));
  EXPECT_LE((q.closed_forms->z_star(vec({1, 1})) - vec({0.5, 0.25})).norm(), 1e-15);
  EXPECT_EQ(q.closed_forms->hp_z(vec({1, 1})).norm(), 0.0);

  const ProblemInstance r = make_quadratic_toy(4, 4, 7);
  const Vector p = r.p0;
  const TotalDerivatives td = total_derivatives(r.problem, solved(r.problem, p, r.z0), p, true);
  const Matrix a_inv = r.closed_forms->dp_z(p);
  EXPECT_LE(rel(td.hessian, Matrix(2.0 * a_inv.transpose() * a_inv)), 1e-12);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(r.problem.dz_k(r.z0, p)));
  EXPECT_NEAR(eig.eigenvalues().minCoeff(), 1.0, 1e-9);
  EXPECT_NEAR(eig.eigenvalues().maxCoeff(), 10.0, 1e-9);
  EXPECT_EQ(code_of([] { make_quadratic_toy(3, 4, 0); }), ErrorCode::dimension_mismatch);
}

TEST(Ridge, LargeRegularizerShrinksToZero) {
  const ProblemInstance rr = make_ridge(20, 100, 0);
  const Vector z = solved(rr.problem, vec({8.0}), rr.z0);
  const Vector xty = -0.5 * rr.problem.residual(Vector::Zero(20), vec({0.0}));
  EXPECT_LE(z.norm(), 1e-6 * xty.norm());
}

TEST(Ridge, ClosedFormMatchesSolver) {
  const ProblemInstance rr = make_ridge(20, 100, 1);
  for (double p : {-2.0, 0.0, 1.5}) {
    const Vector pv = vec({p});
    EXPECT_LE((solved(rr.problem, pv, rr.z0) - rr.closed_forms->z_star(pv)).norm(), 1e-8);
  }
}

TEST(Ridge, InteriorMinimumOnScan) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ProblemInstance rr = make_ridge(20, 100, seed);
    int best = 0;
    double best_f = INFINITY;
    for (int i = 0; i <= 100; ++i) {
      const Vector p = vec({-4.0 + 0.08 * i});
      const double f = rr.problem.upper(rr.closed_forms->z_star(p), p);
      if (f < best_f) {
        best_f = f;
        best = i;
      }
    }
    EXPECT_GT(best, 0) << seed;
    EXPECT_LT(best, 100) << seed;
    EXPECT_LE(rr.known_optimum->value, best_f + 1e-12);
  }
}

TEST(Diag, EqualWeightsReduceToRidge) {
  const ProblemInstance rr = make_ridge(10, 100, 2);
  const ProblemInstance diag = make_diag_ridge(10, 100, 2);
  const double q = -0.4;
  const Vector z = solved(rr.problem, vec({q}), rr.z0);
  const Vector pd = Vector::Constant(10, q);
  EXPECT_LE((z - solved(diag.problem, pd, diag.z0)).norm(), 1e-10);
  const TotalDerivatives a = total_derivatives(rr.problem, z, vec({q}), true);
  const TotalDerivatives b = total_derivatives(diag.problem, z, pd, true);
  EXPECT_NEAR(b.gradient.sum(), a.gradient(0, 0), 1e-10 * std::max(1.0, std::abs(a.gradient(0, 0))));
  EXPECT_NEAR(b.hessian.sum(), a.hessian(0, 0), 1e-8 * std::max(1.0, std::abs(a.hessian(0, 0))));
}

TEST(Diag, PartialStructure) {
  const ProblemInstance diag = make_diag_ridge(6, 40, 3);
  const Vector p = seeded_normal(6, 1, 8).col(0);
  const Vector z = seeded_normal(6, 1, 9).col(0);
  const double l10 = std::log(10.0);
  const FirstOrderBundle fb = first_bundle(diag.problem, z, p);
  Matrix expect = Matrix::Zero(6, 6);
  for (Index i = 0; i < 6; ++i) expect(i, i) = 2 * l10 * std::pow(10.0, p(i)) * z(i);
  EXPECT_LE(rel(fb.Dp_k, expect), 1e-14);

  const SecondOrderBundle sb = second_bundle(diag.problem, z, p);
  const StackedMatrix fd = stacked_second_fd(
      [&](const Vector& zz, const Vector& pp) { return diag.problem.residual(zz, pp); }, z, p,
      SecondPartial::yy);
  for (Index i = 0; i < 6; ++i) {
    Matrix blk = Matrix::Zero(6, 6);
    blk(i, i) = 2 * l10 * l10 * std::pow(10.0, p(i)) * z(i);
    EXPECT_LE(rel(sb.Hp_k.block(i), blk), 1e-14);
    EXPECT_LE((Matrix(fd.block(i)) - blk).norm(), 1e-4 * std::max(1.0, blk.norm()));
  }
}

TEST(InverseLqr, GeneratorConsistency) {
  const InverseLqr lqr = make_inverse_lqr_full(LqrOptions{});
  const BilevelProblem& prob = lqr.instance.problem;
  EXPECT_EQ(prob.dim_z(), 10);
  EXPECT_EQ(prob.dim_p(), 30);
  const Vector z = solved(prob, lqr.hidden_reference, lqr.instance.z0);
  EXPECT_LE(prob.upper(z, lqr.hidden_reference), 1e-20);
  EXPECT_LE((z - lqr.expert_u).norm(), 1e-10);
  EXPECT_LE((lqr.model.rollout(z) - lqr.expert_x).norm(), 1e-10);
}

TEST(InverseLqr, LinearFoocAndConvexInParameter) {
  const ProblemInstance lqr = make_inverse_lqr(LqrOptions{});
  const BilevelProblem& prob = lqr.problem;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const Vector p = 2.0 * seeded_normal(prob.dim_p(), 1, 1000 + t).col(0);
    const Vector z = solved(prob, p, lqr.z0);
    const FirstOrderBundle fb = first_bundle(prob, z, p);
    const SecondOrderBundle sb = second_bundle(prob, z, p);
    const SensitivityResult s = ift_jacobian(fb);
    EXPECT_LE(ift_hessian(fb, sb, s).norm(), 1e-12 * s.Dp_z.norm());
    const Matrix h = total_hessian(fb, sb, s);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(h), Eigen::EigenvaluesOnly);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8);
  }
}

TEST(InverseLqr, ClampedOracleIsFeasibleAndOptimal) {
  const InverseLqr lqr = make_inverse_lqr_full(LqrOptions{});
  const Vector p = 6.0 * lqr.hidden_reference;
  const Vector u = lqr.model.solve_clamped(p, 1.0);
  EXPECT_LE(u.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  // Projected-gradient stationarity of the box-constrained quadratic.
  const Vector g = lqr.instance.problem.residual(u, p);
  for (Index j = 0; j < u.size(); ++j) {
    if (std::abs(u(j)) < 1.0 - 1e-9) {
      EXPECT_NEAR(g(j), 0.0, 1e-8);
    } else {
      EXPECT_LE(g(j) * u(j), 1e-8);
    }
  }
}

TEST(InverseLqr, BarrierVariant) {
  LqrOptions o;
  o.u_lim = 1.0;
  o.barrier_alpha = 100.0;
  const InverseLqr lqr = make_inverse_lqr_full(o);
  EXPECT_LT(lqr.expert_u.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_EQ(lqr.instance.name, "lqr_barrier");
  const Vector z = solved(lqr.instance.problem, lqr.instance.p0, lqr.instance.z0);
  EXPECT_LT(z.cwiseAbs().maxCoeff(), 1.0);

  LqrOptions bad;
  bad.barrier_alpha = 10.0;
  EXPECT_EQ(code_of([&] { make_inverse_lqr(bad); }), ErrorCode::invalid_argument);
}

TEST(InverseLqr, RandomDynamicsDims) {
  LqrOptions o;
  o.state_dim = 3;
  o.control_dim = 2;
  o.horizon = 5;
  const ProblemInstance lqr = make_inverse_lqr(o);
  EXPECT_EQ(lqr.problem.dim_z(), 10);
  EXPECT_EQ(lqr.problem.dim_p(), 25);
}
