#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bls/ift.hpp"
#include "bls/problem.hpp"

namespace bls {

// --- lower level -------------------------------------------------------------

struct LowerConfig {
  double tol = 1e-10;  // on ||k(z, p)||
  int max_iter = 200;
  double backtrack = 0.5;
  double sufficient_decrease = 1e-4;  // on ||k||^2
  int max_backtracks = 60;

  void validate() const;
};

/// Newton on k(z, p) = 0 with backtracking on ||k||^2. A singular D_z k is
/// retried with lambda I damping, lambda = 1e-8 ||D_z k||_F. Never throws on
/// non-convergence; check `converged`.
LowerSolution solve_lower(const BilevelProblem& problem, const Vector& p, const Vector& z0,
                          const LowerConfig& cfg = {});

/// Per-thread count of solve_lower invocations.
std::int64_t& lower_solve_invocations();

// --- log barrier -------------------------------------------------------------

/// c(z) <= 0. Affine constraints with a gradient get analytic barrier partials.
struct Constraint {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  bool affine = false;
};

struct BarrierSpec {
  std::vector<Constraint> constraints;
  double alpha = 100.0;

  void validate() const;
};

/// z, p -> f_L(z, p) + sum_i -log(-alpha c_i(z)) / alpha, or +inf when some
/// c_i(z) >= 0.
ScalarEval apply_barrier(ScalarEval lower_objective, const BarrierSpec& spec);

/// The same penalty folded into a whole problem. With affine constraints the
/// barrier contributions to k, D_z k and H_z k are analytic; otherwise the
/// problem must have a lower objective and the result differentiates it
/// numerically. k evaluates to +inf outside the feasible set.
BilevelProblem apply_barrier(const BilevelProblem& problem, const BarrierSpec& spec);

// --- upper level -------------------------------------------------------------

enum class UpperMethod { gradient_descent, newton };

struct UpperConfig {
  UpperMethod method = UpperMethod::newton;
  double gd_step = 1e-2;
  int gd_max_halvings = 10;
  double lambda0 = 1e-6;
  double lambda_increase = 10.0;
  double lambda_decrease = 3.0;
  double lambda_min = 1e-12;
  double lambda_max = 1e12;
  double armijo = 1e-4;
  int max_backtracks = 40;
  double max_step = 2.0;  // cap on newton steps taken where the total Hessian is indefinite
  int max_iter = 100;
  double grad_tol = 1e-7;
  double f_tol = 1e-12;
  HessianMode mode = HessianMode::general;
  HessianStrategy strategy = HessianStrategy::fast;
  bool record_time = true;

  void validate() const;
};

struct TraceRow {
  int iteration = 0;
  Vector p;
  double f_upper = 0.0;
  double grad_norm = 0.0;
  int lower_solves = 0;                     // since the previous row
  std::int64_t cumulative_lower_solves = 0;
  double slope = 0.0;                       // g^T d of the step that produced this row
  double lambda = 0.0;                      // damping used (newton)
  double wall_ms = 0.0;                     // since start; 0 when timing is off
};

enum class TraceStatus { converged, max_iterations, line_search_failure, lower_solve_failure };

std::string_view to_string(TraceStatus status);
std::string_view to_string(UpperMethod method);

struct OptimTrace {
  std::vector<TraceRow> rows;
  TraceStatus status = TraceStatus::max_iterations;
  std::string message;
  Vector final_z;

  bool failed() const noexcept {
    return status == TraceStatus::line_search_failure || status == TraceStatus::lower_solve_failure;
  }
  std::int64_t total_lower_solves() const noexcept {
    return rows.empty() ? 0 : rows.back().cumulative_lower_solves;
  }
};

/// Upper-level optimization with warm-started lower solves. Every lower solve,
/// including line-search trials, is counted in the trace.
OptimTrace optimize_upper(const BilevelProblem& problem, const Vector& p0, const Vector& z0,
                          const LowerConfig& lower_cfg, const UpperConfig& upper_cfg);

// --- landscapes --------------------------------------------------------------

struct Landscape {
  Vector mean;                // affine origin
  Matrix axes;                // 2 x n, orthonormal rows
  std::vector<double> u;      // grid coordinates along axes.row(0)
  std::vector<double> v;      // along axes.row(1)
  Matrix loss;                // loss(i, j) at (u[i], v[j]); NaN where the lower solve failed
  Matrix path;                // T x 2 projected trace points
  Vector path_offset;         // distance of each trace point from the plane
  bool degenerate = false;    // fewer than 3 distinct points or a collinear path
  int failed_points = 0;

  Vector point(double uu, double vv) const;
};

/// Projects the trace onto its top two principal directions (power iteration
/// with deflation) and evaluates f_U(z*(p), p) on a grid x grid lattice
/// spanning +-span * (max path extent) along each axis.
Landscape pca_landscape(const OptimTrace& trace, const BilevelProblem& problem,
                        const LowerConfig& lower_cfg, int grid, double span, const Vector& z0);

}  // namespace bls
