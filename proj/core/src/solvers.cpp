#include "bls/solvers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <utility>

namespace bls {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double finite_norm(const Vector& v) { return v.allFinite() ? v.norm() : kInf; }

}  // namespace

// --- lower level -------------------------------------------------------------

void LowerConfig::validate() const {
  require(tol > 0.0 && max_iter > 0 && backtrack > 0.0 && backtrack < 1.0 &&
              sufficient_decrease > 0.0 && max_backtracks > 0,
          ErrorCode::invalid_argument, "invalid lower solver configuration");
}

std::int64_t& lower_solve_invocations() {
  thread_local std::int64_t count = 0;
  return count;
}

LowerSolution solve_lower(const BilevelProblem& problem, const Vector& p, const Vector& z0,
                          const LowerConfig& cfg) {
  cfg.validate();
  problem.check_dims(z0, p);
  require(z0.allFinite(), ErrorCode::invalid_argument, "z0 must be finite");
  ++lower_solve_invocations();

  LowerSolution sol;
  sol.z = z0;
  Vector k = problem.residual(sol.z, p);
  sol.residual_norm = finite_norm(k);

  for (int it = 0; it < cfg.max_iter; ++it) {
    if (sol.residual_norm <= cfg.tol) break;
    if (!std::isfinite(sol.residual_norm)) break;

    Eigen::MatrixXd jac = problem.dz_k(sol.z, p);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    const double scale = jac.cwiseAbs().maxCoeff();
    const double pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(pivot >= Factorization::kSingularRelTol * scale) || !jac.allFinite()) {
      const double lambda = std::max(1e-8 * jac.norm(), 1e-300);
      jac.diagonal().array() += lambda;
      lu.compute(jac);
    }
    const Vector step = -lu.solve(k);
    if (!step.allFinite()) break;

    const double phi0 = sol.residual_norm * sol.residual_norm;
    double t = 1.0;
    Vector best_z;
    Vector best_k;
    double best_norm = sol.residual_norm;
    for (int bt = 0; bt < cfg.max_backtracks; ++bt, t *= cfg.backtrack) {
      Vector z_try = sol.z + t * step;
      Vector k_try = problem.residual(z_try, p);
      const double r = finite_norm(k_try);
      if (r < best_norm) {
        best_norm = r;
        best_z = z_try;
        best_k = k_try;
      }
      if (r * r <= (1.0 - 2.0 * cfg.sufficient_decrease * t) * phi0) break;
    }
    sol.iterations = it + 1;
    if (best_z.size() == 0) break;  // no trial reduced the residual
    sol.z = std::move(best_z);
    k = std::move(best_k);
    // Without sufficient decrease the best trial is still kept.
    sol.residual_norm = best_norm;
  }
  sol.converged = sol.residual_norm <= cfg.tol;
  return sol;
}

// --- log barrier -------------------------------------------------------------

void BarrierSpec::validate() const {
  require(alpha > 0.0, ErrorCode::invalid_argument, "barrier alpha must be positive");
  for (const Constraint& c : constraints) {
    require(static_cast<bool>(c.value), ErrorCode::invalid_argument,
            "constraint without a value evaluator");
  }
}

ScalarEval apply_barrier(ScalarEval lower_objective, const BarrierSpec& spec) {
  spec.validate();
  return [f = std::move(lower_objective), spec](const Vector& z, const Vector& p) {
    double penalty = 0.0;
    for (const Constraint& c : spec.constraints) {
      const double v = c.value(z);
      if (!(v < 0.0)) return kInf;
      penalty += -std::log(-spec.alpha * v) / spec.alpha;
    }
    return f(z, p) + penalty;
  };
}

BilevelProblem apply_barrier(const BilevelProblem& problem, const BarrierSpec& spec) {
  spec.validate();
  const bool analytic =
      std::all_of(spec.constraints.begin(), spec.constraints.end(),
                  [](const Constraint& c) { return c.affine && static_cast<bool>(c.gradient); });

  if (!analytic) {
    require(problem.has_lower_objective(), ErrorCode::invalid_argument,
            "non-affine barrier constraints need a lower objective");
    AnalyticPartials partials;
    const AnalyticPartials& src = problem.partials();
    partials.Dz_fU = src.Dz_fU;
    partials.Dp_fU = src.Dp_fU;
    partials.Hp_fU = src.Hp_fU;
    partials.Hz_fU = src.Hz_fU;
    partials.Dzp_fU = src.Dzp_fU;
    BilevelProblem out = BilevelProblem::from_lower_objective(
        problem.dim_z(), problem.dim_p(), problem.upper_evaluator(),
        apply_barrier(problem.lower_evaluator(), spec), std::move(partials));
    out.set_diff_config(problem.diff_config());
    return out;
  }

  const Index m = problem.dim_z();
  struct Affine {
    std::function<double(const Vector&)> value;
    Vector grad;
  };
  std::vector<Affine> cons;
  cons.reserve(spec.constraints.size());
  for (const Constraint& c : spec.constraints) {
    Vector g = c.gradient(Vector::Zero(m));
    require(g.size() == m, ErrorCode::dimension_mismatch, "constraint gradient size");
    cons.push_back({c.value, std::move(g)});
  }
  const double alpha = spec.alpha;

  // phi(c) = -log(-alpha c) / alpha; phi' = -1/(alpha c), phi'' = 1/(alpha c^2),
  // phi''' = -2/(alpha c^3).
  auto values = [cons](const Vector& z) {
    Vector c(static_cast<Index>(cons.size()));
    for (std::size_t i = 0; i < cons.size(); ++i) c(static_cast<Index>(i)) = cons[i].value(z);
    return c;
  };
  auto feasible = [](const Vector& c) { return (c.array() < 0.0).all(); };

  AnalyticPartials partials = problem.partials();
  // Base pieces captured by value so the new problem does not reference `problem`.
  const BilevelProblem base = problem;

  partials.k = [base, cons, values, feasible, alpha, m](const Vector& z, const Vector& p) {
    const Vector c = values(z);
    if (!feasible(c)) return Vector(Vector::Constant(m, kInf));
    Vector k = base.residual(z, p);
    for (std::size_t i = 0; i < cons.size(); ++i)
      k += (-1.0 / (alpha * c(static_cast<Index>(i)))) * cons[i].grad;
    return k;
  };
  partials.Dz_k = [base, cons, values, feasible, alpha, m](const Vector& z, const Vector& p) {
    const Vector c = values(z);
    if (!feasible(c)) return Matrix(Matrix::Constant(m, m, kInf));
    Matrix dz = base.dz_k(z, p);
    for (std::size_t i = 0; i < cons.size(); ++i) {
      const double ci = c(static_cast<Index>(i));
      dz += (1.0 / (alpha * ci * ci)) * cons[i].grad * cons[i].grad.transpose();
    }
    return dz;
  };
  partials.Dp_k = [base](const Vector& z, const Vector& p) { return base.dp_k(z, p); };
  const StackedEval base_hz = problem.partials().Hz_k;
  const DiffConfig diff = problem.diff_config();
  partials.Hz_k = [base, base_hz, cons, values, alpha, m, diff](const Vector& z, const Vector& p) {
    StackedMatrix hz = base_hz ? base_hz(z, p)
                               : stacked_second_fd([&base](const Vector& a, const Vector& b) {
                                   return base.residual(a, b);
                                 }, z, p, SecondPartial::xx, diff);
    const Vector c = values(z);
    for (std::size_t i = 0; i < cons.size(); ++i) {
      const double ci = c(static_cast<Index>(i));
      const double third = -2.0 / (alpha * ci * ci * ci);
      const Vector& g = cons[i].grad;
      const Matrix outer = g * g.transpose();
      for (Index j = 0; j < m; ++j) {
        if (g(j) != 0.0) hz.block(j) += (third * g(j)) * outer;
      }
    }
    return hz;
  };
  // The constraints depend on z only, so the p-blocks of k are unchanged and
  // fall through to `partials` as copied from the base problem.

  ScalarEval upper = problem.upper_evaluator();
  BilevelProblem out =
      problem.has_lower_objective()
          ? BilevelProblem::from_lower_objective(m, problem.dim_p(), std::move(upper),
                                                 apply_barrier(problem.lower_evaluator(), spec),
                                                 std::move(partials))
          : BilevelProblem::from_fixed_point(
                m, problem.dim_p(), std::move(upper),
                [k = partials.k](const Vector& z, const Vector& p) { return k(z, p); },
                std::move(partials));
  out.set_diff_config(problem.diff_config());
  return out;
}

// --- upper level -------------------------------------------------------------

void UpperConfig::validate() const {
  require(gd_step > 0.0 && gd_max_halvings >= 0 && lambda0 > 0.0 && lambda_increase > 1.0 &&
              lambda_decrease > 1.0 && max_step > 0.0 && armijo > 0.0 && armijo < 1.0 && max_backtracks > 0 &&
              max_iter >= 0 && grad_tol > 0.0 && f_tol >= 0.0,
          ErrorCode::invalid_argument, "invalid upper optimizer configuration");
}

std::string_view to_string(TraceStatus status) {
  switch (status) {
    case TraceStatus::converged: return "converged";
    case TraceStatus::max_iterations: return "max_iterations";
    case TraceStatus::line_search_failure: return "line_search_failure";
    case TraceStatus::lower_solve_failure: return "lower_solve_failure";
  }
  return "unknown";
}

std::string_view to_string(UpperMethod method) {
  return method == UpperMethod::newton ? "newton" : "gd";
}

namespace {

class UpperRun {
 public:
  UpperRun(const BilevelProblem& problem, const LowerConfig& lower, const UpperConfig& upper)
      : problem_(problem), lower_(lower), upper_(upper), start_(std::chrono::steady_clock::now()) {}

  // Warm-started lower solve; false when it did not converge.
  bool solve(const Vector& p, const Vector& z_warm, LowerSolution& out) {
    out = solve_lower(problem_, p, z_warm, lower_);
    ++pending_solves_;
    ++total_solves_;
    return out.converged;
  }

  void record(OptimTrace& trace, int iteration, const Vector& p, double f, double gnorm,
              double slope, double lambda) {
    TraceRow row;
    row.iteration = iteration;
    row.p = p;
    row.f_upper = f;
    row.grad_norm = gnorm;
    row.lower_solves = pending_solves_;
    row.cumulative_lower_solves = total_solves_;
    row.slope = slope;
    row.lambda = lambda;
    if (upper_.record_time) {
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                              start_)
                        .count();
    }
    pending_solves_ = 0;
    trace.rows.push_back(std::move(row));
  }

 private:
  const BilevelProblem& problem_;
  const LowerConfig& lower_;
  const UpperConfig& upper_;
  std::chrono::steady_clock::time_point start_;
  int pending_solves_ = 0;
  std::int64_t total_solves_ = 0;
};

// Levenberg-damped Newton direction; lambda is raised until H + lambda I is
// positive definite and the direction descends.
Vector newton_direction(const Matrix& h, const Vector& g, double& lambda, const UpperConfig& cfg) {
  const Index n = g.size();
  while (lambda <= cfg.lambda_max) {
    Eigen::MatrixXd damped = h;
    damped.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(damped);
    if (llt.info() == Eigen::Success) {
      Vector d = -llt.solve(g);
      if (d.allFinite() && g.dot(d) < 0.0) return d;
    }
    lambda *= cfg.lambda_increase;
  }
  lambda = cfg.lambda_max;
  return -g / std::max(1.0, static_cast<double>(n) * h.cwiseAbs().maxCoeff());
}

}  // namespace

OptimTrace optimize_upper(const BilevelProblem& problem, const Vector& p0, const Vector& z0,
                          const LowerConfig& lower_cfg, const UpperConfig& upper_cfg) {
  lower_cfg.validate();
  upper_cfg.validate();
  problem.check_dims(z0, p0);
  require(p0.allFinite(), ErrorCode::invalid_argument, "p0 must be finite");

  OptimTrace trace;
  UpperRun run(problem, lower_cfg, upper_cfg);
  const bool newton = upper_cfg.method == UpperMethod::newton;

  LowerSolution sol;
  if (!run.solve(p0, z0, sol)) {
    trace.status = TraceStatus::lower_solve_failure;
    trace.message = "lower solve failed at p0 (residual " + std::to_string(sol.residual_norm) + ")";
    trace.final_z = sol.z;
    return trace;
  }

  Vector p = p0;
  double lambda = upper_cfg.lambda0;
  double slope = 0.0;
  double prev_f = kInf;

  for (int it = 0;; ++it) {
    const TotalDerivatives td =
        total_derivatives(problem, sol.z, p, newton, upper_cfg.mode, upper_cfg.strategy);
    const Vector g = td.gradient.row(0).transpose();
    const double f = td.value;
    run.record(trace, it, p, f, g.norm(), slope, newton ? lambda : 0.0);
    trace.final_z = sol.z;

    if (g.norm() <= upper_cfg.grad_tol) {
      trace.status = TraceStatus::converged;
      trace.message = "gradient norm below tolerance";
      break;
    }
    if (it > 0 && prev_f - f < upper_cfg.f_tol) {
      trace.status = TraceStatus::converged;
      trace.message = "upper objective decrease below tolerance";
      break;
    }
    if (it >= upper_cfg.max_iter) {
      trace.status = TraceStatus::max_iterations;
      trace.message = "iteration limit reached";
      break;
    }
    prev_f = f;

    Vector d;
    if (newton) {
      d = newton_direction(td.hessian, g, lambda, upper_cfg);
      // Only steps from an indefinite model are capped; a convex model's
      // step is trusted at full length.
      const bool convex = Eigen::LLT<Eigen::MatrixXd>(td.hessian).info() == Eigen::Success;
      if (!convex && d.norm() > upper_cfg.max_step) d *= upper_cfg.max_step / d.norm();
    } else {
      d = -upper_cfg.gd_step * g;
    }
    const double gd = g.dot(d);

    bool accepted = false;
    bool any_lower_ok = false;
    double t = 1.0;
    LowerSolution trial;
    const int attempts = newton ? upper_cfg.max_backtracks : upper_cfg.gd_max_halvings + 1;
    for (int bt = 0; bt < attempts; ++bt, t *= 0.5) {
      const Vector p_try = p + t * d;
      // A trial whose lower solve fails is rejected like an increase.
      if (!run.solve(p_try, sol.z, trial)) continue;
      any_lower_ok = true;
      const double f_try = problem.upper(trial.z, p_try);
      const bool ok = newton ? f_try <= f + upper_cfg.armijo * t * gd : f_try < f;
      if (ok) {
        accepted = true;
        p = p_try;
        sol = std::move(trial);
        slope = t * gd;
        if (newton) {
          lambda = bt == 0 ? std::max(lambda / upper_cfg.lambda_decrease, upper_cfg.lambda_min)
                           : std::min(lambda * upper_cfg.lambda_increase, upper_cfg.lambda_max);
        }
        break;
      }
    }
    if (!accepted && !any_lower_ok) {
      trace.status = TraceStatus::lower_solve_failure;
      trace.message = "lower solve failed at every line-search trial (last residual " +
                      std::to_string(trial.residual_norm) + ")";
      return trace;
    }
    if (!accepted) {
      trace.status = TraceStatus::line_search_failure;
      trace.message = "no acceptable step after " + std::to_string(attempts) + " trials";
      return trace;
    }
  }
  return trace;
}

// --- landscapes --------------------------------------------------------------

Vector Landscape::point(double uu, double vv) const {
  return mean + uu * axes.row(0).transpose() + vv * axes.row(1).transpose();
}

namespace {

Vector leading_eigenvector(const Matrix& c, Vector x) {
  for (int it = 0; it < 10000; ++it) {
    Vector y = c * x;
    const double ny = y.norm();
    if (ny == 0.0) return x;
    y /= ny;
    const double change = std::min((y - x).norm(), (y + x).norm());
    x = std::move(y);
    if (change < 1e-13) break;
  }
  return x;
}

// Fixes the sign so the largest-magnitude component is positive.
void canonical_sign(Vector& v) {
  Index imax = 0;
  v.cwiseAbs().maxCoeff(&imax);
  if (v(imax) < 0.0) v = -v;
}

Vector orthonormal_completion(const Vector& a) {
  Index jmin = 0;
  a.cwiseAbs().minCoeff(&jmin);
  Vector e = Vector::Unit(a.size(), jmin);
  e -= a.dot(e) * a;
  return e.normalized();
}

}  // namespace

Landscape pca_landscape(const OptimTrace& trace, const BilevelProblem& problem,
                        const LowerConfig& lower_cfg, int grid, double span, const Vector& z0) {
  const Index n = problem.dim_p();
  require(n >= 2, ErrorCode::invalid_argument, "landscapes need dim(p) >= 2");
  require(grid >= 2 && span > 0.0, ErrorCode::invalid_argument, "grid >= 2 and span > 0 required");
  require(!trace.rows.empty(), ErrorCode::degenerate_path, "empty trace");

  std::vector<Vector> pts;
  for (const TraceRow& row : trace.rows) {
    const bool seen = std::any_of(pts.begin(), pts.end(),
                                  [&](const Vector& q) { return (q - row.p).norm() == 0.0; });
    if (!seen) pts.push_back(row.p);
  }

  Landscape out;
  out.mean = Vector::Zero(n);
  for (const Vector& q : pts) out.mean += q;
  out.mean /= static_cast<double>(pts.size());

  Matrix cov = Matrix::Zero(n, n);
  for (const Vector& q : pts) cov += (q - out.mean) * (q - out.mean).transpose();

  Vector start = Vector::Ones(n);
  for (const Vector& q : pts) {
    if ((q - out.mean).norm() > start.norm() * 0.0 && (q - out.mean).norm() > 0.0) {
      start = q - out.mean;
      break;
    }
  }
  Vector a1 = cov.norm() > 0.0 ? leading_eigenvector(cov, start.normalized())
                               : Vector(Vector::Unit(n, 0));
  canonical_sign(a1);
  const double lambda1 = a1.dot(cov * a1);

  Matrix deflated = cov - lambda1 * a1 * a1.transpose();
  Vector a2 = orthonormal_completion(a1);
  const double scale = std::max(lambda1, 0.0);
  out.degenerate = pts.size() < 3;
  if (deflated.norm() > 1e-12 * scale && scale > 0.0) {
    Vector cand = leading_eigenvector(deflated, a2);
    cand -= a1.dot(cand) * a1;
    const double lambda2 = cand.normalized().dot(cov * cand.normalized());
    if (lambda2 > 1e-12 * scale) {
      a2 = cand.normalized();
    } else {
      out.degenerate = true;
    }
  } else {
    out.degenerate = true;
  }
  canonical_sign(a2);

  out.axes.resize(2, n);
  out.axes.row(0) = a1.transpose();
  out.axes.row(1) = a2.transpose();

  out.path.resize(static_cast<Index>(trace.rows.size()), 2);
  out.path_offset.resize(static_cast<Index>(trace.rows.size()));
  double ext_u = 0.0, ext_v = 0.0;
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    const Vector d = trace.rows[i].p - out.mean;
    const double pu = a1.dot(d), pv = a2.dot(d);
    out.path(static_cast<Index>(i), 0) = pu;
    out.path(static_cast<Index>(i), 1) = pv;
    out.path_offset(static_cast<Index>(i)) = (d - pu * a1 - pv * a2).norm();
    ext_u = std::max(ext_u, std::abs(pu));
    ext_v = std::max(ext_v, std::abs(pv));
  }
  if (ext_u == 0.0) ext_u = 1.0;
  if (ext_v == 0.0) ext_v = ext_u;

  out.u.resize(static_cast<std::size_t>(grid));
  out.v.resize(static_cast<std::size_t>(grid));
  for (int i = 0; i < grid; ++i) {
    const double t = -1.0 + 2.0 * i / (grid - 1);
    out.u[static_cast<std::size_t>(i)] = span * ext_u * t;
    out.v[static_cast<std::size_t>(i)] = span * ext_v * t;
  }

  // Serpentine sweep so each lower solve is warm-started from a neighbour.
  out.loss.resize(grid, grid);
  Vector warm = trace.final_z.size() == problem.dim_z() ? trace.final_z : z0;
  for (int i = 0; i < grid; ++i) {
    for (int jj = 0; jj < grid; ++jj) {
      const int j = (i % 2 == 0) ? jj : grid - 1 - jj;
      const Vector p = out.point(out.u[static_cast<std::size_t>(i)], out.v[static_cast<std::size_t>(j)]);
      LowerSolution sol = solve_lower(problem, p, warm, lower_cfg);
      if (!sol.converged) {
        sol = solve_lower(problem, p, z0, lower_cfg);
      }
      if (sol.converged) {
        out.loss(i, j) = problem.upper(sol.z, p);
        warm = sol.z;
      } else {
        out.loss(i, j) = std::numeric_limits<double>::quiet_NaN();
        ++out.failed_points;
      }
    }
  }
  return out;
}

}  // namespace bls
