#include <cmath>

#include "bls/bounds.hpp"
#include "bls/instances.hpp"
#include "support.hpp"

using namespace bls;
using namespace bls::test;

namespace {

BoundConstants unit_constants(double delta) {
  BoundConstants c;
  c.delta = delta;
  c.alpha1 = c.alpha2 = 1.0;
  c.beta = c.gamma = c.R = 1.0;
  return c;
}

Vector solved(const ProblemInstance& inst) {
  LowerConfig cfg;
  cfg.tol = 1e-12;
  return solve_lower(inst.problem, inst.p0, inst.z0, cfg).z;
}

}  // namespace

TEST(FirstOrderBound, Examples) {
  EXPECT_EQ(first_order_bound(unit_constants(0.0)), 0.0);
  EXPECT_NEAR(first_order_bound(unit_constants(0.1)), 0.2, 1e-15);
  BoundConstants lin = unit_constants(0.3);
  lin.beta = lin.gamma = 0.0;
  EXPECT_EQ(first_order_bound(lin), 0.0);
  BoundConstants sing = unit_constants(0.1);
  sing.alpha1 = 0.0;
  EXPECT_EQ(code_of([&] { first_order_bound(sing); }), ErrorCode::infinite_bound);
}

TEST(SecondOrderBound, Examples) {
  BoundConstants c = unit_constants(0.0);
  EXPECT_EQ(second_order_bound(c), 0.0);
  c.delta = 0.1;
  c.zeta = c.eta = c.nu = c.gamma = 0.0;
  EXPECT_EQ(second_order_bound(c), 0.0);
  c.zeta = c.eta = c.nu = 1.0;
  c.gamma = 1.0;
  c.kappa_J = 2.0;
  c.R_H = 1.0;
  EXPECT_NEAR(second_order_bound(c), 1.0, 1e-15);
}

TEST(SecondOrderBoundComplete, Examples) {
  BoundConstants c = unit_constants(0.1);
  c.zeta = c.eta = c.nu = 1.0;
  c.kappa_J = 2.0;
  c.R_H = 1.0;
  // With every z* norm zero only the kappa_J delta parts of the J terms remain.
  EXPECT_NEAR(second_order_bound_complete(c), (1.0 + 2.0 * 0.2 + 0.04) * 0.1 + 0.1, 1e-15);
  c.J_norm = c.Dzp_norm = c.Hz_norm = 1.0;
  EXPECT_NEAR(second_order_bound_complete(c), 1.424, 1e-14);
  c.alpha2 = 0.0;
  EXPECT_EQ(code_of([&] { second_order_bound_complete(c); }), ErrorCode::infinite_bound);
}

// The short form omits ||J*|| and ||H_z k*||; the barrier's curvature in z
// breaks it while the expanded form holds.
TEST(PerturbationTrial, BarrierLqrNeedsCompleteSecondOrderBound) {
  LqrOptions o;
  o.u_lim = 1.0;
  o.barrier_alpha = 100.0;
  const ProblemInstance lqr = make_inverse_lqr(o);
  const Vector z = solved(lqr);
  int short_form_violations = 0;
  for (int t = 0; t < 100; ++t) {
    const Vector u = seeded_normal(z.size(), 1, 7000 + t).col(0);
    const PerturbationTrial tr = perturbation_trial(lqr.problem, z, lqr.p0, u, 1e-3);
    EXPECT_LE(tr.jacobian_error, tr.first_bound);
    EXPECT_LE(tr.hessian_error, tr.second_bound_complete);
    if (tr.hessian_error > tr.second_bound) ++short_form_violations;
  }
  EXPECT_GT(short_form_violations, 0);
}

TEST(RegularizedBound, Examples) {
  BoundConstants c = unit_constants(0.1);
  c.beta = 0.37;
  c.gamma = 2.9;
  c.R = 1.7;
  c.alpha1 = 0.4;
  c.alpha2 = 0.6;
  EXPECT_EQ(regularized_bound(c), first_order_bound(c));

  BoundConstants d = unit_constants(0.0);
  d.epsilon = 1.0;
  EXPECT_NEAR(regularized_bound(d), 0.5, 1e-15);

  // beta = 0 with gamma delta above alpha1: the bound falls as eps grows.
  BoundConstants g = unit_constants(0.5);
  g.beta = 0.0;
  g.gamma = 10.0;
  g.alpha1 = 0.1;
  double last = INFINITY;
  for (double eps : {0.0, 0.1, 1.0}) {
    g.epsilon = eps;
    const double b = regularized_bound(g);
    EXPECT_LT(b, last);
    last = b;
  }
}

TEST(OptimizeEpsilon, NeverWorseThanZeroAndGridOptimal) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int t = 0; t < 200; ++t) {
    BoundConstants c;
    c.delta = std::pow(10.0, -4.0 * u(rng));
    c.alpha1 = 0.05 + u(rng);
    c.alpha2 = 0.05 + u(rng);
    c.beta = t % 3 == 0 ? 0.0 : u(rng);
    c.gamma = t % 5 == 0 ? 0.0 : 10.0 * u(rng);
    c.R = u(rng);
    const EpsilonChoice e = optimize_epsilon(c, 1.0);
    BoundConstants zero = c;
    EXPECT_LE(e.bound, regularized_bound(zero));
    EXPECT_GE(e.epsilon, 0.0);
    EXPECT_LE(e.epsilon, 1.0);
    for (double eps : {0.0, 1e-6, 1e-3, 0.1, 0.5, 1.0}) {
      BoundConstants probe = c;
      probe.epsilon = eps;
      EXPECT_LE(e.bound, regularized_bound(probe) * (1.0 + 1e-12));
    }
    // The bound is a ratio of affine functions of eps, so with beta = 0 it
    // is monotone and the minimizer sits on an endpoint.
    if (c.beta == 0.0 && c.delta > 0.0) {
      EXPECT_TRUE(e.epsilon == 0.0 || e.epsilon == 1.0) << e.epsilon;
    }
  }
}

TEST(OptimizeEpsilon, ZeroDelta) {
  BoundConstants c = unit_constants(0.0);
  const EpsilonChoice e = optimize_epsilon(c, 1.0);
  EXPECT_EQ(e.epsilon, 0.0);
  EXPECT_EQ(e.bound, 0.0);
  EXPECT_EQ(code_of([&] { optimize_epsilon(c, 0.0); }), ErrorCode::invalid_argument);
}

TEST(OptimizeEpsilon, StrictImprovementWhenGammaDeltaDominates) {
  BoundConstants c = unit_constants(0.5);
  c.beta = 1e-3;
  c.gamma = 20.0;
  c.alpha1 = 0.05;
  const EpsilonChoice e = optimize_epsilon(c, 10.0);
  EXPECT_GT(e.epsilon, 0.0);
  EXPECT_LT(e.bound, first_order_bound(c));
}

TEST(EstimateConstants, ExactSolution) {
  const ProblemInstance rr = make_ridge(10, 50, 0);
  const Vector z = solved(rr);
  const BoundConstants c = estimate_constants(rr.problem, z, z, rr.p0);
  EXPECT_EQ(c.delta, 0.0);
  EXPECT_EQ(c.beta * c.delta, 0.0);
  EXPECT_EQ(c.gamma * c.delta, 0.0);
  EXPECT_EQ(first_order_bound(c), 0.0);
}

TEST(EstimateConstants, QuadraticHasConstantDerivatives) {
  const ProblemInstance q = make_quadratic_toy(4, 4, 2);
  const Vector z = solved(q);
  const BoundConstants c = estimate_constants(q.problem, z + 0.3 * Vector::Ones(4), z, q.p0);
  EXPECT_LE(c.beta, 1e-12);
  EXPECT_LE(c.gamma, 1e-12);
  EXPECT_LE(first_order_bound(c), 1e-12);
}

TEST(EstimateConstants, RidgeFiniteAndReproducible) {
  const ProblemInstance rr = make_ridge(20, 100, 0);
  const Vector z = solved(rr);
  const Vector u = seeded_normal(20, 1, 1).col(0).normalized();
  const BoundConstants a = estimate_constants(rr.problem, z + 1e-3 * u, z, rr.p0);
  const BoundConstants b = estimate_constants(rr.problem, z + 1e-3 * u, z, rr.p0);
  for (double v : {a.delta, a.alpha1, a.alpha2, a.beta, a.gamma, a.R, a.zeta, a.eta, a.nu, a.kappa_J, a.R_H}) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
  }
  EXPECT_NEAR(a.beta, b.beta, 1e-3 * a.beta);
  EXPECT_NEAR(a.kappa_J, b.kappa_J, 1e-3 * a.kappa_J);
  EXPECT_TRUE(a.gains_converged);
  EXPECT_TRUE(a.regularization_valid);
}

TEST(PerturbationTrial, BoundsHoldOnRidge) {
  const ProblemInstance rr = make_diag_ridge(10, 100, 1);
  const Vector z = solved(rr);
  for (int t = 0; t < 10; ++t) {
    const Vector u = seeded_normal(10, 1, 100 + t).col(0);
    for (double d : {1e-2, 1e-3, 1e-4}) {
      const PerturbationTrial tr = perturbation_trial(rr.problem, z, rr.p0, u, d);
      EXPECT_NEAR(tr.delta, d, 1e-15);
      EXPECT_LE(tr.jacobian_error, tr.first_bound);
      EXPECT_LE(tr.hessian_error, tr.second_bound);
      EXPECT_LE(tr.regularized_bound_at_eps, tr.first_bound);
      EXPECT_LE(tr.regularized_error, tr.regularized_bound_at_eps);
    }
  }
}
