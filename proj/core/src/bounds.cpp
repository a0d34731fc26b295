#include "bls/bounds.hpp"

#include <cmath>
#include <limits>

#include "bls/ift.hpp"

namespace bls {

namespace {

void require_gains(const BoundConstants& c) {
  require(!c.singular && c.alpha1 > 0.0 && c.alpha2 > 0.0, ErrorCode::infinite_bound,
          "min gain is zero (alpha1 = " + std::to_string(c.alpha1) +
              ", alpha2 = " + std::to_string(c.alpha2) + ")");
}

bool symmetric_psd(const Matrix& a) {
  const double scale = std::max(max_abs(a), 1.0);
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(0.5 * (a + a.transpose())),
                                                     Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() >= -1e-12 * scale;
}

}  // namespace

BoundConstants estimate_constants(const BilevelProblem& problem, const Vector& z,
                                  const Vector& z_star, const Vector& p) {
  problem.check_dims(z, p);
  problem.check_dims(z_star, p);
  BoundConstants c;
  c.delta = (z - z_star).norm();

  const FirstOrderBundle exact = first_bundle(problem, z_star, p);
  const FirstOrderBundle inexact = first_bundle(problem, z, p);

  const GainEstimate g1 = min_gain(inexact.Dz_k);
  const GainEstimate g2 = min_gain(exact.Dz_k);
  c.alpha1 = g1.value;
  c.alpha2 = g2.value;
  c.gains_converged = g1.converged && g2.converged;
  c.singular = !(c.alpha1 > 0.0) || !(c.alpha2 > 0.0);
  c.regularization_valid = symmetric_psd(inexact.Dz_k);
  c.R = exact.Dp_k.norm();

  if (c.delta > 0.0) {
    c.beta = (inexact.Dp_k - exact.Dp_k).norm() / c.delta;
    c.gamma = operator_norm(inexact.Dz_k - exact.Dz_k) / c.delta;
  }

  const SecondOrderBundle exact2 = second_bundle(problem, z_star, p);
  if (c.delta > 0.0) {
    const SecondOrderBundle inexact2 = second_bundle(problem, z, p);
    c.zeta = (inexact2.Hp_k.data() - exact2.Hp_k.data()).norm() / c.delta;
    c.eta = (inexact2.Dzp_k.data() - exact2.Dzp_k.data()).norm() / c.delta;
    c.nu = (inexact2.Hz_k.data() - exact2.Hz_k.data()).norm() / c.delta;
  }
  c.Dzp_norm = exact2.Dzp_k.norm();
  c.Hz_norm = exact2.Hz_k.norm();

  if (c.singular) {
    c.kappa_J = std::numeric_limits<double>::infinity();
    c.R_H = std::numeric_limits<double>::infinity();
    return c;
  }
  c.kappa_J = kappa_from_constants(c);
  const SensitivityResult sens = ift_jacobian(exact);
  c.R_H = hessian_bracket(exact2, sens.Dp_z).norm();
  c.J_norm = sens.Dp_z.norm();
  return c;
}

double kappa_from_constants(const BoundConstants& c) {
  require_gains(c);
  return c.beta / c.alpha1 + c.R * c.gamma / (c.alpha1 * c.alpha2);
}

double first_order_bound(const BoundConstants& c) {
  require_gains(c);
  // Same operation order as regularized_bound so eps = 0 agrees bit for bit.
  return c.beta * c.delta / c.alpha1 + c.R * (c.gamma * c.delta) / (c.alpha1 * c.alpha2);
}

double second_order_bound(const BoundConstants& c) {
  require_gains(c);
  const double k = c.kappa_J;
  return (c.zeta + 2.0 * c.eta * k + c.nu * k * k) * c.delta / c.alpha1 +
         c.gamma * c.R_H * c.delta / (c.alpha1 * c.alpha2);
}

double second_order_bound_complete(const BoundConstants& c) {
  require_gains(c);
  const double k = c.kappa_J, a = c.J_norm, at = a + k * c.delta;
  const double bracket =
      c.zeta + 2.0 * (c.eta * at + c.Dzp_norm * k) + c.nu * at * at + c.Hz_norm * k * (2.0 * a + k * c.delta);
  return bracket * c.delta / c.alpha1 + c.gamma * c.R_H * c.delta / (c.alpha1 * c.alpha2);
}

double regularized_bound(const BoundConstants& c) {
  require(c.epsilon >= 0.0, ErrorCode::invalid_argument, "epsilon must be nonnegative");
  const double a1 = c.alpha1 + c.epsilon;
  require(a1 > 0.0 && c.alpha2 > 0.0, ErrorCode::infinite_bound,
          "alpha1 + eps and alpha2 must be positive");
  return c.beta * c.delta / a1 + c.R * (c.gamma * c.delta + c.epsilon) / (a1 * c.alpha2);
}

EpsilonChoice optimize_epsilon(const BoundConstants& c, double eps_max) {
  require(eps_max > 0.0, ErrorCode::invalid_argument, "eps_max must be positive");
  constexpr int kGrid = 200;
  constexpr double kDecades = 8.0;

  auto eval = [&c](double eps) {
    BoundConstants trial = c;
    trial.epsilon = eps;
    return regularized_bound(trial);
  };

  EpsilonChoice best{0.0, eval(0.0)};
  auto consider = [&](double eps) {
    const double b = eval(eps);
    if (b < best.bound) best = {eps, b};
  };
  for (int i = 0; i < kGrid; ++i) {
    const double t = static_cast<double>(i) / (kGrid - 1);
    consider(eps_max * std::pow(10.0, -kDecades * (1.0 - t)));
  }
  consider(eps_max);
  return best;
}

PerturbationTrial perturbation_trial(const BilevelProblem& problem, const Vector& z_star,
                                     const Vector& p, const Vector& direction, double delta,
                                     double eps_max) {
  require(direction.norm() > 0.0, ErrorCode::invalid_argument, "direction must be nonzero");
  const Vector z = z_star + delta * direction.normalized();

  PerturbationTrial t;
  t.constants = estimate_constants(problem, z, z_star, p);
  t.delta = t.constants.delta;

  const FirstOrderBundle fb_exact = first_bundle(problem, z_star, p);
  const FirstOrderBundle fb = first_bundle(problem, z, p);
  const SecondOrderBundle sb_exact = second_bundle(problem, z_star, p);
  const SecondOrderBundle sb = second_bundle(problem, z, p);

  const SensitivityResult exact = ift_jacobian(fb_exact);
  const SensitivityResult inexact = ift_jacobian(fb);
  t.jacobian_error = (inexact.Dp_z - exact.Dp_z).norm();
  t.hessian_error =
      (ift_hessian(fb, sb, inexact).data() - ift_hessian(fb_exact, sb_exact, exact).data()).norm();

  t.first_bound = first_order_bound(t.constants);
  t.second_bound = second_order_bound(t.constants);
  t.second_bound_complete = second_order_bound_complete(t.constants);
  const EpsilonChoice choice = optimize_epsilon(t.constants, eps_max);
  t.eps_star = choice.epsilon;
  t.regularized_bound_at_eps = choice.bound;
  t.regularized_error =
      choice.epsilon > 0.0 ? (ift_jacobian(fb, choice.epsilon).Dp_z - exact.Dp_z).norm()
                           : t.jacobian_error;
  return t;
}

}  // namespace bls
