#pragma once

// A-posteriori error bounds for implicit derivatives evaluated at an inexact
// lower solution z instead of z*. Constants are measured for the specific
// (z, z*) pair, so a bound is a certificate for that pair only.

#include "bls/problem.hpp"
#include "bls/tensor.hpp"

namespace bls {

struct BoundConstants {
  double delta = 0.0;    // ||z - z*||
  double alpha1 = 0.0;   // min gain of D_z k(z)
  double alpha2 = 0.0;   // min gain of D_z k(z*)
  double beta = 0.0;     // ||D_p k(z) - D_p k(z*)||_F / delta
  double gamma = 0.0;    // ||D_z k(z) - D_z k(z*)||_op / delta
  double R = 0.0;        // ||D_p k(z*)||_F
  double zeta = 0.0;     // ||H_p k(z) - H_p k(z*)||_F / delta
  double eta = 0.0;      // ||D_zp k(z) - D_zp k(z*)||_F / delta
  double nu = 0.0;       // ||H_z k(z) - H_z k(z*)||_F / delta
  double kappa_J = 0.0;  // first-order bound / delta
  double R_H = 0.0;      // ||bracket(z*)||_F
  double epsilon = 0.0;  // regularization level for the regularized bound
  // Norms at z* used only by second_order_bound_complete.
  double J_norm = 0.0;    // ||D_p z*||_F
  double Dzp_norm = 0.0;  // ||D_zp k(z*)||_F
  double Hz_norm = 0.0;   // ||H_z k(z*)||_F

  bool singular = false;              // some min gain was zero; bounds are infinite
  bool gains_converged = true;        // both min-gain iterations converged
  bool regularization_valid = true;   // D_z k(z) symmetric PSD, so gains add under +eps I
};

/// Measures every constant for the pair (z, z_star) at parameter p.
BoundConstants estimate_constants(const BilevelProblem& problem, const Vector& z,
                                  const Vector& z_star, const Vector& p);

/// beta / alpha1 + gamma R / (alpha1 alpha2); recompute after overriding
/// constants by hand.
double kappa_from_constants(const BoundConstants& c);

/// beta delta / alpha1 + gamma R delta / (alpha1 alpha2).
double first_order_bound(const BoundConstants& c);

/// (zeta + 2 eta kappa_J + nu kappa_J^2) delta / alpha1 + gamma R_H delta / (alpha1 alpha2).
double second_order_bound(const BoundConstants& c);

/// second_order_bound with the bracket difference expanded in full. With
/// a = J_norm and a~ = a + kappa_J delta, ||B(z) - B(z*)||_F is at most
///   (zeta + 2 (eta a~ + Dzp_norm kappa_J) + nu a~^2 + Hz_norm kappa_J (2 a + kappa_J delta)) delta.
/// The short form above drops every term carrying a, Dzp_norm or Hz_norm, so
/// it can fail when H_z k(z*) != 0.
double second_order_bound_complete(const BoundConstants& c);

/// beta delta / (alpha1 + eps) + R (gamma delta + eps) / ((alpha1 + eps) alpha2), eps = c.epsilon.
double regularized_bound(const BoundConstants& c);

struct EpsilonChoice {
  double epsilon = 0.0;
  double bound = 0.0;
};

/// Grid scan of regularized_bound over [0, eps_max]: 0, eps_max, and 200
/// log-spaced points in [1e-8 eps_max, eps_max].
EpsilonChoice optimize_epsilon(const BoundConstants& c, double eps_max);

/// Measured vs certified error for one perturbed solution z = z* + delta u.
struct PerturbationTrial {
  double delta = 0.0;
  double jacobian_error = 0.0;     // ||J(z) - J(z*)||_F
  double hessian_error = 0.0;      // ||H(z) - H(z*)||_F
  double first_bound = 0.0;
  double second_bound = 0.0;
  double second_bound_complete = 0.0;
  double eps_star = 0.0;
  double regularized_bound_at_eps = 0.0;
  double regularized_error = 0.0;  // ||J_eps*(z) - J(z*)||_F
  BoundConstants constants;
};

/// `direction` is normalized internally.
PerturbationTrial perturbation_trial(const BilevelProblem& problem, const Vector& z_star,
                                     const Vector& p, const Vector& direction, double delta,
                                     double eps_max = 1.0);

}  // namespace bls
