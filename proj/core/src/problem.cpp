#include "bls/problem.hpp"

#include <exception>
#include <string>
#include <utility>

namespace bls {

namespace {

template <typename F>
auto guarded(const F& f, const char* what) {
  try {
    return f();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::evaluator_failure, std::string(what) + ": " + e.what());
  }
}

void require_shape(const Matrix& m, Index rows, Index cols, const char* what) {
  require(m.rows() == rows && m.cols() == cols, ErrorCode::dimension_mismatch,
          std::string(what) + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
              ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
}

void require_shape(const StackedMatrix& s, Index blocks, Index rows, Index cols, const char* what) {
  require(s.blocks() == blocks && s.block_rows() == rows && s.block_cols() == cols,
          ErrorCode::dimension_mismatch,
          std::string(what) + " has " + std::to_string(s.blocks()) + " blocks of " +
              std::to_string(s.block_rows()) + "x" + std::to_string(s.block_cols()));
}

}  // namespace

BilevelProblem BilevelProblem::from_lower_objective(Index dim_z, Index dim_p, ScalarEval upper,
                                                    ScalarEval lower, AnalyticPartials partials) {
  require(dim_z > 0 && dim_p > 0, ErrorCode::invalid_argument, "dimensions must be positive");
  require(static_cast<bool>(upper) && static_cast<bool>(lower), ErrorCode::invalid_argument,
          "upper and lower evaluators are required");
  BilevelProblem p;
  p.dim_z_ = dim_z;
  p.dim_p_ = dim_p;
  p.upper_ = std::move(upper);
  p.lower_ = std::move(lower);
  p.partials_ = std::move(partials);
  return p;
}

BilevelProblem BilevelProblem::from_fixed_point(Index dim_z, Index dim_p, ScalarEval upper,
                                                VectorEval k, AnalyticPartials partials) {
  require(dim_z > 0 && dim_p > 0, ErrorCode::invalid_argument, "dimensions must be positive");
  require(static_cast<bool>(upper) && static_cast<bool>(k), ErrorCode::invalid_argument,
          "upper evaluator and fixed-point map are required");
  BilevelProblem p;
  p.dim_z_ = dim_z;
  p.dim_p_ = dim_p;
  p.upper_ = std::move(upper);
  p.fixed_point_ = std::move(k);
  p.partials_ = std::move(partials);
  return p;
}

void BilevelProblem::set_diff_config(const DiffConfig& cfg) {
  cfg.validate();
  diff_ = cfg;
}

void BilevelProblem::check_dims(const Vector& z, const Vector& p) const {
  require(z.size() == dim_z_ && p.size() == dim_p_, ErrorCode::dimension_mismatch,
          "got dim(z)=" + std::to_string(z.size()) + ", dim(p)=" + std::to_string(p.size()) +
              "; problem has " + std::to_string(dim_z_) + ", " + std::to_string(dim_p_));
}

double BilevelProblem::upper(const Vector& z, const Vector& p) const {
  check_dims(z, p);
  return guarded([&] { return upper_(z, p); }, "upper objective");
}

double BilevelProblem::lower(const Vector& z, const Vector& p) const {
  require(has_lower_objective(), ErrorCode::invalid_argument,
          "problem is defined by a fixed-point map, not a lower objective");
  check_dims(z, p);
  return guarded([&] { return lower_(z, p); }, "lower objective");
}

Vector BilevelProblem::residual(const Vector& z, const Vector& p) const {
  check_dims(z, p);
  Vector k;
  if (fixed_point_) {
    k = guarded([&] { return fixed_point_(z, p); }, "fixed-point map");
  } else if (partials_.k) {
    k = guarded([&] { return partials_.k(z, p); }, "analytic k");
  } else {
    k = gradient_fd([&](const Vector& v) { return lower(v, p); }, z, diff_);
  }
  require(k.size() == dim_z_, ErrorCode::dimension_mismatch,
          "k returned " + std::to_string(k.size()) + " entries, expected " +
              std::to_string(dim_z_));
  return k;
}

Source BilevelProblem::dz_k_source() const {
  return partials_.Dz_k ? Source::analytic : Source::numeric;
}

Source BilevelProblem::dp_k_source() const {
  return partials_.Dp_k ? Source::analytic : Source::numeric;
}

Matrix BilevelProblem::dz_k(const Vector& z, const Vector& p) const {
  check_dims(z, p);
  Matrix out;
  if (partials_.Dz_k) {
    out = guarded([&] { return partials_.Dz_k(z, p); }, "analytic Dz_k");
  } else if (has_lower_objective() && !partials_.k) {
    // Hessian of f_L directly rather than a difference of differences.
    auto f = [&](const Vector& a, const Vector& b) { return Vector::Constant(1, lower(a, b)); };
    out = stacked_second_fd(f, z, p, SecondPartial::xx, diff_).data();
  } else {
    out = jacobian_fd([&](const Vector& v) { return residual(v, p); }, z, diff_);
  }
  require_shape(out, dim_z_, dim_z_, "Dz_k");
  return out;
}

Matrix BilevelProblem::dp_k(const Vector& z, const Vector& p) const {
  check_dims(z, p);
  Matrix out;
  if (partials_.Dp_k) {
    out = guarded([&] { return partials_.Dp_k(z, p); }, "analytic Dp_k");
  } else if (has_lower_objective() && !partials_.k) {
    auto f = [&](const Vector& a, const Vector& b) { return Vector::Constant(1, lower(a, b)); };
    out = stacked_second_fd(f, z, p, SecondPartial::xy, diff_).data();
  } else {
    out = jacobian_fd([&](const Vector& v) { return residual(z, v); }, p, diff_);
  }
  require_shape(out, dim_z_, dim_p_, "Dp_k");
  return out;
}

Vector residual(const BilevelProblem& problem, const Vector& z, const Vector& p) {
  return problem.residual(z, p);
}

FirstOrderBundle first_bundle(const BilevelProblem& problem, const Vector& z, const Vector& p) {
  problem.check_dims(z, p);
  const Index m = problem.dim_z();
  const Index n = problem.dim_p();
  const AnalyticPartials& a = problem.partials();
  const DiffConfig& cfg = problem.diff_config();
  FirstOrderBundle b;

  b.Dz_k = problem.dz_k(z, p);
  b.source.Dz_k = problem.dz_k_source();
  b.Dp_k = problem.dp_k(z, p);
  b.source.Dp_k = problem.dp_k_source();

  if (a.Dz_fU) {
    b.Dz_fU = guarded([&] { return a.Dz_fU(z, p); }, "analytic Dz_fU");
    b.source.Dz_fU = Source::analytic;
  } else {
    b.Dz_fU = gradient_fd([&](const Vector& v) { return problem.upper(v, p); }, z, cfg).transpose();
    b.source.Dz_fU = Source::numeric;
  }
  if (a.Dp_fU) {
    b.Dp_fU = guarded([&] { return a.Dp_fU(z, p); }, "analytic Dp_fU");
    b.source.Dp_fU = Source::analytic;
  } else {
    b.Dp_fU = gradient_fd([&](const Vector& v) { return problem.upper(z, v); }, p, cfg).transpose();
    b.source.Dp_fU = Source::numeric;
  }

  require_shape(b.Dz_fU, 1, m, "Dz_fU");
  require_shape(b.Dp_fU, 1, n, "Dp_fU");
  require_finite(b.Dz_k, "Dz_k");
  require_finite(b.Dp_k, "Dp_k");
  require_finite(b.Dz_fU, "Dz_fU");
  require_finite(b.Dp_fU, "Dp_fU");
  return b;
}

SecondOrderBundle second_bundle(const BilevelProblem& problem, const Vector& z, const Vector& p) {
  problem.check_dims(z, p);
  const Index m = problem.dim_z();
  const Index n = problem.dim_p();
  const AnalyticPartials& a = problem.partials();
  const DiffConfig& cfg = problem.diff_config();
  SecondOrderBundle b;

  const PairFunction k_fn = [&problem](const Vector& zz, const Vector& pp) {
    return problem.residual(zz, pp);
  };
  const PairFunction fu_fn = [&problem](const Vector& zz, const Vector& pp) {
    return Vector::Constant(1, problem.upper(zz, pp));
  };

  auto stacked = [&](const StackedEval& analytic, SecondPartial which, Source& src,
                     const char* what) {
    if (analytic) {
      src = Source::analytic;
      return guarded([&] { return analytic(z, p); }, what);
    }
    src = Source::numeric;
    return stacked_second_fd(k_fn, z, p, which, cfg);
  };
  auto upper_second = [&](const MatrixEval& analytic, SecondPartial which, Source& src,
                          const char* what) -> Matrix {
    if (analytic) {
      src = Source::analytic;
      return guarded([&] { return analytic(z, p); }, what);
    }
    src = Source::numeric;
    return stacked_second_fd(fu_fn, z, p, which, cfg).data();
  };

  b.Hp_k = stacked(a.Hp_k, SecondPartial::yy, b.source.Hp_k, "analytic Hp_k");
  b.Dpz_k = stacked(a.Dpz_k, SecondPartial::yx, b.source.Dpz_k, "analytic Dpz_k");
  b.Dzp_k = stacked(a.Dzp_k, SecondPartial::xy, b.source.Dzp_k, "analytic Dzp_k");
  b.Hz_k = stacked(a.Hz_k, SecondPartial::xx, b.source.Hz_k, "analytic Hz_k");
  b.Hp_fU = upper_second(a.Hp_fU, SecondPartial::yy, b.source.Hp_fU, "analytic Hp_fU");
  b.Hz_fU = upper_second(a.Hz_fU, SecondPartial::xx, b.source.Hz_fU, "analytic Hz_fU");
  b.Dzp_fU = upper_second(a.Dzp_fU, SecondPartial::xy, b.source.Dzp_fU, "analytic Dzp_fU");

  require_shape(b.Hp_k, m, n, n, "Hp_k");
  require_shape(b.Dpz_k, m, n, m, "Dpz_k");
  require_shape(b.Dzp_k, m, m, n, "Dzp_k");
  require_shape(b.Hz_k, m, m, m, "Hz_k");
  require_shape(b.Hp_fU, n, n, "Hp_fU");
  require_shape(b.Hz_fU, m, m, "Hz_fU");
  require_shape(b.Dzp_fU, m, n, "Dzp_fU");
  for (const StackedMatrix* s : {&b.Hp_k, &b.Dpz_k, &b.Dzp_k, &b.Hz_k})
    require_finite(s->data(), "second-order k partial");
  require_finite(b.Hp_fU, "Hp_fU");
  require_finite(b.Hz_fU, "Hz_fU");
  require_finite(b.Dzp_fU, "Dzp_fU");
  return b;
}

}  // namespace bls
