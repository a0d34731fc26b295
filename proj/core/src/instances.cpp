#include "bls/instances.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace bls {

namespace {

constexpr double kLn10 = std::numbers::ln10;

// Portable standard normals: 53-bit uniforms from mt19937_64, Box-Muller.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : rng_(seed) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

 private:
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

Matrix fill_normal(NormalStream& gen, Index rows, Index cols) {
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = gen();
  return out;
}

Vector column(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

double golden_min(const std::function<double(double)>& f, double lo, double hi, double tol) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return fc < fd ? c : d;
}

// 101-point scan of [-4, 4] followed by golden-section refinement around the
// best grid point. Returns the minimizer.
double scan_1d(const std::function<double(double)>& f) {
  constexpr int kPoints = 101;
  constexpr double kLo = -4.0, kHi = 4.0;
  const double h = (kHi - kLo) / (kPoints - 1);
  int best = 0;
  double best_f = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kPoints; ++i) {
    const double v = f(kLo + h * i);
    if (v < best_f) {
      best_f = v;
      best = i;
    }
  }
  const double lo = kLo + h * std::max(best - 1, 0);
  const double hi = kLo + h * std::min(best + 1, kPoints - 1);
  const double x = golden_min(f, lo, hi, 1e-10);
  return f(x) < best_f ? x : kLo + h * best;
}

// --- ridge -------------------------------------------------------------------

struct RidgeData {
  Matrix x_train, x_test;
  Vector y_train, y_test;
  Matrix xtx;  // X_tr^T X_tr
  Vector xty;  // X_tr^T Y_tr
  Vector labels;  // sign(y_test), for the logistic variant
};

RidgeData make_ridge_data(const RidgeOptions& o) {
  require(o.features > 0 && o.samples >= 2, ErrorCode::invalid_argument,
          "ridge needs features >= 1 and samples >= 2");
  require(o.weight_scale >= 0.0 && o.noise >= 0.0, ErrorCode::invalid_argument,
          "weight_scale and noise must be nonnegative");
  NormalStream gen(o.seed);
  const Matrix x = fill_normal(gen, o.samples, o.features);
  const Vector w = o.weight_scale * column(fill_normal(gen, o.features, 1));
  const Vector y = x * w + o.noise * column(fill_normal(gen, o.samples, 1));

  RidgeData d;
  const Index n_train = o.samples / 2;
  const Index n_test = o.samples - n_train;
  d.x_train = x.topRows(n_train);
  d.x_test = x.bottomRows(n_test);
  d.y_train = y.head(n_train);
  d.y_test = y.tail(n_test);
  d.xtx = d.x_train.transpose() * d.x_train;
  d.xty = d.x_train.transpose() * d.y_train;
  d.labels = d.y_test.unaryExpr([](double v) { return v < 0.0 ? -1.0 : 1.0; });
  return d;
}

// Shared construction for `RR` (one weight) and `diag` (a weight per
// feature); weight_of(i) maps feature i to its entry of p.
ProblemInstance make_ridge_family(const RidgeOptions& o, bool per_feature) {
  auto d = std::make_shared<const RidgeData>(make_ridge_data(o));
  const Index m = o.features;
  const Index n = per_feature ? m : 1;
  auto w = [per_feature](Index i) { return per_feature ? i : Index{0}; };

  auto tikhonov = [m, w](const Vector& p) {
    Vector t(m);
    for (Index i = 0; i < m; ++i) t(i) = std::pow(10.0, p(w(i)));
    return t;
  };

  ScalarEval lower = [d, tikhonov](const Vector& z, const Vector& p) {
    return (d->x_train * z - d->y_train).squaredNorm() +
           (tikhonov(p).array() * z.array().square()).sum();
  };

  ScalarEval upper;
  if (o.upper == RidgeUpper::squared) {
    upper = [d](const Vector& z, const Vector&) {
      return (d->x_test * z - d->y_test).squaredNorm();
    };
  } else {
    upper = [d](const Vector& z, const Vector&) {
      const Vector margin = d->labels.cwiseProduct(d->x_test * z);
      double s = 0.0;
      for (Index i = 0; i < margin.size(); ++i) {
        const double t = margin(i);
        s += t > 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
      }
      return s;
    };
  }

  AnalyticPartials a;
  a.k = [d, tikhonov](const Vector& z, const Vector& p) {
    return Vector(2.0 * (d->xtx * z - d->xty) + 2.0 * tikhonov(p).cwiseProduct(z));
  };
  a.Dz_k = [d, tikhonov](const Vector&, const Vector& p) {
    Matrix h = 2.0 * d->xtx;
    h.diagonal() += 2.0 * tikhonov(p);
    return h;
  };
  a.Dp_k = [m, n, w, tikhonov](const Vector& z, const Vector& p) {
    const Vector t = tikhonov(p);
    Matrix out = Matrix::Zero(m, n);
    for (Index i = 0; i < m; ++i) out(i, w(i)) = 2.0 * kLn10 * t(i) * z(i);
    return out;
  };
  a.Hp_k = [m, n, w, tikhonov](const Vector& z, const Vector& p) {
    const Vector t = tikhonov(p);
    StackedMatrix out(m, n, n);
    for (Index i = 0; i < m; ++i) out.block(i)(w(i), w(i)) = 2.0 * kLn10 * kLn10 * t(i) * z(i);
    return out;
  };
  a.Dpz_k = [m, n, w, tikhonov](const Vector&, const Vector& p) {
    const Vector t = tikhonov(p);
    StackedMatrix out(m, n, m);
    for (Index i = 0; i < m; ++i) out.block(i)(w(i), i) = 2.0 * kLn10 * t(i);
    return out;
  };
  a.Dzp_k = [m, n, w, tikhonov](const Vector&, const Vector& p) {
    const Vector t = tikhonov(p);
    StackedMatrix out(m, m, n);
    for (Index i = 0; i < m; ++i) out.block(i)(i, w(i)) = 2.0 * kLn10 * t(i);
    return out;
  };
  a.Hz_k = [m](const Vector&, const Vector&) { return StackedMatrix(m, m, m); };
  if (o.upper == RidgeUpper::squared) {
    a.Dz_fU = [d](const Vector& z, const Vector&) {
      return Matrix(2.0 * (d->x_test * z - d->y_test).transpose() * d->x_test);
    };
    a.Dp_fU = [n](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, n)); };
    a.Hp_fU = [n](const Vector&, const Vector&) { return Matrix(Matrix::Zero(n, n)); };
    a.Hz_fU = [d](const Vector&, const Vector&) {
      return Matrix(2.0 * d->x_test.transpose() * d->x_test);
    };
    a.Dzp_fU = [m, n](const Vector&, const Vector&) { return Matrix(Matrix::Zero(m, n)); };
  }

  auto z_star = [d, tikhonov](const Vector& p) {
    Eigen::MatrixXd h = d->xtx;
    h.diagonal() += tikhonov(p);
    return Vector(h.ldlt().solve(d->xty));
  };
  ClosedForms forms;
  forms.z_star = z_star;
  forms.dp_z = [z_star, d, tikhonov, m, n, w](const Vector& p) {
    const Vector z = z_star(p);
    const Vector t = tikhonov(p);
    Eigen::MatrixXd h = d->xtx;
    h.diagonal() += t;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, n);
    for (Index i = 0; i < m; ++i) rhs(i, w(i)) = -kLn10 * t(i) * z(i);
    return Matrix(h.ldlt().solve(rhs));
  };

  BilevelProblem problem = BilevelProblem::from_lower_objective(m, n, upper, lower, std::move(a));

  // Reference optimum of the upper loss over the box [-4, 4]^n.
  auto loss = [&](const Vector& p) { return upper(z_star(p), p); };
  Vector p_best = Vector::Zero(n);
  double f_best = loss(p_best);
  constexpr int kMaxSweeps = 50;
  for (int sweep = 0; sweep < (per_feature ? kMaxSweeps : 1); ++sweep) {
    const double f_start = f_best;
    for (Index j = 0; j < n; ++j) {
      Vector trial = p_best;
      const double x = scan_1d([&](double v) {
        trial(j) = v;
        return loss(trial);
      });
      trial(j) = x;
      const double f = loss(trial);
      if (f < f_best) {
        f_best = f;
        p_best = trial;
      }
    }
    if (f_start - f_best <= 1e-14 * std::max(1.0, std::abs(f_best))) break;
  }

  ProblemInstance inst{per_feature ? "diag" : "ridge",
                       std::move(problem),
                       Vector::Zero(n),
                       Vector::Zero(m),
                       KnownOptimum{f_best, per_feature
                                                ? "coordinate-wise grid scan on [-4, 4] with "
                                                  "golden-section refinement"
                                                : "101-point grid scan on [-4, 4] with "
                                                  "golden-section refinement"},
                       o.seed,
                       std::move(forms)};
  return inst;
}

}  // namespace

Matrix seeded_normal(Index rows, Index cols, std::uint64_t seed) {
  NormalStream gen(seed);
  return fill_normal(gen, rows, cols);
}

// --- quadratic toy ----------------------------------------------------------

ProblemInstance make_quadratic_toy(const Matrix& a, const Vector& z_target) {
  const Index m = a.rows();
  require(a.cols() == m, ErrorCode::non_square, "A must be square");
  require(z_target.size() == m, ErrorCode::dimension_mismatch, "z_target must have size m");
  require_finite(a, "A");

  ScalarEval upper = [z_target](const Vector& z, const Vector&) {
    return (z - z_target).squaredNorm();
  };
  ScalarEval lower = [a](const Vector& z, const Vector& p) {
    return 0.5 * z.dot(a * z) - p.dot(z);
  };
  AnalyticPartials pa;
  pa.k = [a](const Vector& z, const Vector& p) { return Vector(a * z - p); };
  pa.Dz_k = [a](const Vector&, const Vector&) { return a; };
  pa.Dp_k = [m](const Vector&, const Vector&) { return Matrix(-Matrix::Identity(m, m)); };
  pa.Hp_k = [m](const Vector&, const Vector&) { return StackedMatrix(m, m, m); };
  pa.Dpz_k = [m](const Vector&, const Vector&) { return StackedMatrix(m, m, m); };
  pa.Dzp_k = [m](const Vector&, const Vector&) { return StackedMatrix(m, m, m); };
  pa.Hz_k = [m](const Vector&, const Vector&) { return StackedMatrix(m, m, m); };
  pa.Dz_fU = [z_target](const Vector& z, const Vector&) {
    return Matrix(2.0 * (z - z_target).transpose());
  };
  pa.Dp_fU = [m](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, m)); };
  pa.Hp_fU = [m](const Vector&, const Vector&) { return Matrix(Matrix::Zero(m, m)); };
  pa.Hz_fU = [m](const Vector&, const Vector&) { return Matrix(2.0 * Matrix::Identity(m, m)); };
  pa.Dzp_fU = [m](const Vector&, const Vector&) { return Matrix(Matrix::Zero(m, m)); };

  const Eigen::MatrixXd a_dense = a;
  const Eigen::MatrixXd a_inv = a_dense.inverse();
  ClosedForms forms;
  forms.z_star = [a_inv](const Vector& p) { return Vector(a_inv * p); };
  forms.dp_z = [a_inv](const Vector&) { return Matrix(a_inv); };
  forms.hp_z = [m](const Vector&) { return StackedMatrix(m, m, m); };

  // f_U is minimized (to 0) at p = A z_target.
  ProblemInstance inst{"quadratic",
                       BilevelProblem::from_lower_objective(m, m, upper, lower, std::move(pa)),
                       Vector::Zero(m),
                       Vector::Zero(m),
                       KnownOptimum{0.0, "f_U = 0 at p = A z_target"},
                       0,
                       std::move(forms)};
  return inst;
}

ProblemInstance make_quadratic_toy(Index m, Index n, std::uint64_t seed) {
  require(m == n, ErrorCode::dimension_mismatch, "quadratic toy needs m == n");
  require(m > 0, ErrorCode::invalid_argument, "quadratic toy needs m >= 1");
  NormalStream gen(seed);
  const Eigen::MatrixXd g = fill_normal(gen, m, m);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  Vector eig(m);
  for (Index i = 0; i < m; ++i) eig(i) = m == 1 ? 1.0 : 1.0 + 9.0 * static_cast<double>(i) / (m - 1);
  Matrix a = q * eig.asDiagonal() * q.transpose();
  a = 0.5 * (a + a.transpose()).eval();
  const Vector target = column(fill_normal(gen, m, 1));
  ProblemInstance inst = make_quadratic_toy(a, target);
  inst.seed = seed;
  return inst;
}

// --- scalar cos ---------------------------------------------------------------

ProblemInstance make_scalar_cos(double p0) {
  ScalarEval upper = [](const Vector& z, const Vector&) { return z(0) * z(0); };
  VectorEval k = [](const Vector& z, const Vector& p) {
    return Vector(Vector::Constant(1, z(0) - std::cos(p(0))));
  };
  auto scalar = [](double v) { return Matrix(Matrix::Constant(1, 1, v)); };
  auto stacked = [](double v) { return StackedMatrix(1, 1, Matrix::Constant(1, 1, v)); };

  AnalyticPartials pa;
  pa.Dz_k = [scalar](const Vector&, const Vector&) { return scalar(1.0); };
  pa.Dp_k = [scalar](const Vector&, const Vector& p) { return scalar(std::sin(p(0))); };
  pa.Hp_k = [stacked](const Vector&, const Vector& p) { return stacked(std::cos(p(0))); };
  pa.Dpz_k = [stacked](const Vector&, const Vector&) { return stacked(0.0); };
  pa.Dzp_k = [stacked](const Vector&, const Vector&) { return stacked(0.0); };
  pa.Hz_k = [stacked](const Vector&, const Vector&) { return stacked(0.0); };
  pa.Dz_fU = [scalar](const Vector& z, const Vector&) { return scalar(2.0 * z(0)); };
  pa.Dp_fU = [scalar](const Vector&, const Vector&) { return scalar(0.0); };
  pa.Hp_fU = [scalar](const Vector&, const Vector&) { return scalar(0.0); };
  pa.Hz_fU = [scalar](const Vector&, const Vector&) { return scalar(2.0); };
  pa.Dzp_fU = [scalar](const Vector&, const Vector&) { return scalar(0.0); };

  ClosedForms forms;
  forms.z_star = [](const Vector& p) { return Vector(Vector::Constant(1, std::cos(p(0)))); };
  forms.dp_z = [scalar](const Vector& p) { return scalar(-std::sin(p(0))); };
  forms.hp_z = [stacked](const Vector& p) { return stacked(-std::cos(p(0))); };

  ProblemInstance inst{"cos",
                       BilevelProblem::from_fixed_point(1, 1, upper, k, std::move(pa)),
                       Vector::Constant(1, p0),
                       Vector::Zero(1),
                       KnownOptimum{0.0, "f_U = cos^2 p vanishes at p = pi/2"},
                       0,
                       std::move(forms)};
  return inst;
}

// --- ridge ------------------------------------------------------------------

ProblemInstance make_ridge(const RidgeOptions& opts) { return make_ridge_family(opts, false); }

ProblemInstance make_ridge(Index features, Index samples, std::uint64_t seed) {
  RidgeOptions o;
  o.features = features;
  o.samples = samples;
  o.seed = seed;
  return make_ridge(o);
}

ProblemInstance make_diag_ridge(const RidgeOptions& opts) { return make_ridge_family(opts, true); }

ProblemInstance make_diag_ridge(Index features, Index samples, std::uint64_t seed) {
  RidgeOptions o;
  o.features = features;
  o.samples = samples;
  o.seed = seed;
  return make_diag_ridge(o);
}

// --- inverse LQR ---------------------------------------------------------------

Vector LqrModel::rollout(const Vector& u) const { return column(phi_x0) + gamma * u; }

namespace {

// Linear term of the lower objective: f_L = z^T H z / 2 - b(p)^T z + const.
Vector lqr_linear_term(const LqrModel& m, const Vector& p) {
  const Index ns = m.horizon * m.state_dim;
  return m.gamma.transpose() * (p.head(ns) - column(m.phi_x0)) + m.control_weight * p.tail(m.dim_z());
}

}  // namespace

Vector LqrModel::solve(const Vector& p) const {
  require(p.size() == dim_p(), ErrorCode::dimension_mismatch, "LQR reference has wrong size");
  return Eigen::MatrixXd(hessian).ldlt().solve(lqr_linear_term(*this, p));
}

Vector LqrModel::solve_clamped(const Vector& p, double u_lim) const {
  require(u_lim > 0.0, ErrorCode::invalid_argument, "u_lim must be positive");
  const Vector b = lqr_linear_term(*this, p);
  const Eigen::MatrixXd h = hessian;
  const Index m = dim_z();

  // Primal-dual active set on min z^T H z / 2 - b^T z, |z_j| <= u_lim.
  Vector z = solve(p).cwiseMax(-u_lim).cwiseMin(u_lim);
  std::vector<int> state(static_cast<std::size_t>(m), 0);  // -1 lower, 0 free, +1 upper
  for (int it = 0; it < 100; ++it) {
    const Vector y = z - (h * z - b);
    std::vector<int> next(static_cast<std::size_t>(m), 0);
    for (Index j = 0; j < m; ++j) {
      if (y(j) > u_lim) next[static_cast<std::size_t>(j)] = 1;
      if (y(j) < -u_lim) next[static_cast<std::size_t>(j)] = -1;
    }
    std::vector<Index> free;
    for (Index j = 0; j < m; ++j) {
      if (next[static_cast<std::size_t>(j)] == 0) free.push_back(j);
      else z(j) = next[static_cast<std::size_t>(j)] * u_lim;
    }
    if (!free.empty()) {
      const Index f = static_cast<Index>(free.size());
      Eigen::MatrixXd hff(f, f);
      Vector rhs(f);
      for (Index r = 0; r < f; ++r) {
        rhs(r) = b(free[r]);
        for (Index c = 0; c < m; ++c) {
          if (next[static_cast<std::size_t>(c)] != 0) rhs(r) -= h(free[r], c) * z(c);
        }
        for (Index c = 0; c < f; ++c) hff(r, c) = h(free[r], free[c]);
      }
      const Vector zf = hff.ldlt().solve(rhs);
      for (Index r = 0; r < f; ++r) z(free[r]) = zf(r);
    }
    if (next == state && it > 0) break;
    state = std::move(next);
  }

  // Projected coordinate descent polishes the result and covers the rare
  // case where the active-set iteration cycles.
  for (int sweep = 0; sweep < 100000; ++sweep) {
    double change = 0.0;
    for (Index j = 0; j < m; ++j) {
      const double g = h.row(j).dot(z) - b(j);
      const double zj = std::clamp(z(j) - g / h(j, j), -u_lim, u_lim);
      change = std::max(change, std::abs(zj - z(j)));
      z(j) = zj;
    }
    if (change <= 1e-15 * std::max(1.0, u_lim)) break;
  }
  return z;
}

LqrModel make_lqr_model(const LqrOptions& o) {
  require(o.state_dim > 0 && o.control_dim > 0 && o.horizon > 0, ErrorCode::invalid_argument,
          "LQR dimensions must be positive");
  require(o.dt > 0.0 && o.control_weight > 0.0, ErrorCode::invalid_argument,
          "dt and control_weight must be positive");
  LqrModel m;
  m.state_dim = o.state_dim;
  m.control_dim = o.control_dim;
  m.horizon = o.horizon;
  m.control_weight = o.control_weight;
  const Index s = o.state_dim, c = o.control_dim, N = o.horizon;

  NormalStream gen(o.seed ^ 0x9e3779b97f4a7c15ULL);
  if (s == 2 && c == 1) {
    m.a = Matrix::Identity(2, 2);
    m.a(0, 1) = o.dt;
    m.b = Matrix::Zero(2, 1);
    m.b(0, 0) = 0.5 * o.dt * o.dt;
    m.b(1, 0) = o.dt;
  } else {
    m.a = Matrix::Identity(s, s) + (o.dt / std::sqrt(static_cast<double>(s))) * fill_normal(gen, s, s);
    m.b = o.dt * fill_normal(gen, s, c);
  }
  m.x0 = column(fill_normal(gen, s, 1));

  m.phi_x0 = Matrix::Zero(N * s, 1);
  m.gamma = Matrix::Zero(N * s, N * c);
  Vector x = m.x0;
  for (Index t = 0; t < N; ++t) {
    x = m.a * x;
    m.phi_x0.middleRows(t * s, s) = x;
  }
  // Block (t, j) of Gamma is A^{t-j} B for j <= t.
  for (Index j = 0; j < N; ++j) {
    Matrix blk = m.b;
    for (Index t = j; t < N; ++t) {
      m.gamma.block(t * s, j * c, s, c) = blk;
      blk = m.a * blk;
    }
  }
  m.hessian = m.gamma.transpose() * m.gamma;
  m.hessian.diagonal().array() += o.control_weight;
  return m;
}

InverseLqr make_inverse_lqr_full(const LqrOptions& o) {
  if (o.barrier_alpha) require(o.u_lim.has_value(), ErrorCode::invalid_argument,
                               "barrier_alpha needs u_lim");
  auto model = std::make_shared<const LqrModel>(make_lqr_model(o));
  const Index mz = model->dim_z(), np = model->dim_p(), ns = o.horizon * o.state_dim;

  // Hidden reference; shrunk until the expert respects the control limit.
  NormalStream gen(o.seed);
  Vector hidden = column(fill_normal(gen, np, 1));
  Vector expert_u = model->solve(hidden);
  if (o.u_lim) {
    int attempts = 0;
    while (expert_u.cwiseAbs().maxCoeff() >= *o.u_lim) {
      require(++attempts <= 30, ErrorCode::infeasible_expert,
              "expert violates u_lim even after shrinking the reference");
      hidden *= 0.5;
      expert_u = model->solve(hidden);
    }
  }
  const Vector expert_x = model->rollout(expert_u);

  const double r = o.control_weight;
  ScalarEval lower = [model, ns, mz, r](const Vector& z, const Vector& p) {
    return 0.5 * (model->rollout(z) - p.head(ns)).squaredNorm() +
           0.5 * r * (z - p.tail(mz)).squaredNorm();
  };
  ScalarEval upper = [model, expert_x, expert_u](const Vector& z, const Vector&) {
    return (expert_x - model->rollout(z)).squaredNorm() + (expert_u - z).squaredNorm();
  };

  AnalyticPartials pa;
  pa.k = [model, ns, mz, r](const Vector& z, const Vector& p) {
    return Vector(model->gamma.transpose() * (model->rollout(z) - p.head(ns)) +
                  r * (z - p.tail(mz)));
  };
  pa.Dz_k = [model](const Vector&, const Vector&) { return model->hessian; };
  pa.Dp_k = [model, ns, mz, np, r](const Vector&, const Vector&) {
    Matrix out(mz, np);
    out.leftCols(ns) = -model->gamma.transpose();
    out.rightCols(mz) = -r * Matrix::Identity(mz, mz);
    return out;
  };
  pa.Hp_k = [mz, np](const Vector&, const Vector&) { return StackedMatrix(mz, np, np); };
  pa.Dpz_k = [mz, np](const Vector&, const Vector&) { return StackedMatrix(mz, np, mz); };
  pa.Dzp_k = [mz, np](const Vector&, const Vector&) { return StackedMatrix(mz, mz, np); };
  pa.Hz_k = [mz](const Vector&, const Vector&) { return StackedMatrix(mz, mz, mz); };
  pa.Dz_fU = [model, expert_x, expert_u](const Vector& z, const Vector&) {
    const Vector g = 2.0 * model->gamma.transpose() * (model->rollout(z) - expert_x) +
                     2.0 * (z - expert_u);
    return Matrix(g.transpose());
  };
  pa.Dp_fU = [np](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, np)); };
  pa.Hp_fU = [np](const Vector&, const Vector&) { return Matrix(Matrix::Zero(np, np)); };
  pa.Hz_fU = [model, mz](const Vector&, const Vector&) {
    Matrix h = 2.0 * model->gamma.transpose() * model->gamma;
    h.diagonal().array() += 2.0;
    return h;
  };
  pa.Dzp_fU = [mz, np](const Vector&, const Vector&) { return Matrix(Matrix::Zero(mz, np)); };

  BilevelProblem problem = BilevelProblem::from_lower_objective(mz, np, upper, lower, std::move(pa));
  std::optional<ClosedForms> forms;
  std::optional<KnownOptimum> optimum;
  std::string name = "lqr";

  if (o.u_lim) {
    const double lim = *o.u_lim;
    BarrierSpec spec;
    if (o.barrier_alpha) spec.alpha = *o.barrier_alpha;
    for (Index j = 0; j < mz; ++j) {
      Vector g = Vector::Unit(mz, j);
      spec.constraints.push_back(
          {[j, lim](const Vector& z) { return z(j) - lim; }, [g](const Vector&) { return g; }, true});
      spec.constraints.push_back({[j, lim](const Vector& z) { return -z(j) - lim; },
                                  [g](const Vector&) { return Vector(-g); }, true});
    }
    problem = apply_barrier(problem, spec);
    name = "lqr_barrier";
  } else {
    const Eigen::MatrixXd h = model->hessian;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    ClosedForms f;
    f.z_star = [model](const Vector& p) { return model->solve(p); };
    f.dp_z = [ldlt, model, ns, mz, np, r](const Vector&) {
      Eigen::MatrixXd dp(mz, np);
      dp.leftCols(ns) = model->gamma.transpose();
      dp.rightCols(mz) = r * Eigen::MatrixXd::Identity(mz, mz);
      return Matrix(ldlt.solve(dp));
    };
    f.hp_z = [mz, np](const Vector&) { return StackedMatrix(mz, np, np); };
    forms = std::move(f);
    optimum = KnownOptimum{0.0, "f_U = 0 at the hidden reference"};
  }

  InverseLqr out{ProblemInstance{name, std::move(problem), Vector::Zero(np), Vector::Zero(mz),
                                 std::move(optimum), o.seed, std::move(forms)},
                 *model, hidden, expert_x, expert_u};
  return out;
}

ProblemInstance make_inverse_lqr(const LqrOptions& opts) {
  return make_inverse_lqr_full(opts).instance;
}

}  // namespace bls
