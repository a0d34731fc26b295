#include "bls/derivatives.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>

#include "bls/problem.hpp"

namespace bls {

void DiffConfig::validate() const {
  require(first_step > 0.0 && second_step > 0.0, ErrorCode::invalid_argument,
          "finite-difference steps must be positive");
}

double fd_step(double base, double x) { return base * std::max(1.0, std::abs(x)); }

namespace {

template <typename F>
Vector eval_checked(const F& f, const Vector& x) {
  Vector out;
  try {
    out = f(x);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::evaluator_failure, e.what());
  }
  require(out.allFinite(), ErrorCode::non_finite_result, "evaluator returned non-finite values");
  return out;
}

// Second derivatives with respect to the variables of f, block i per output.
StackedMatrix hessian_blocks(const VectorFunction& f, const Vector& x, double base) {
  const Index d = x.size();
  const Vector f0 = eval_checked(f, x);
  const Index q = f0.size();
  StackedMatrix out(q, d, d);
  Vector h(d);
  for (Index a = 0; a < d; ++a) h(a) = fd_step(base, x(a));

  for (Index a = 0; a < d; ++a) {
    Vector xp = x, xm = x;
    xp(a) += h(a);
    xm(a) -= h(a);
    const Vector second = (eval_checked(f, xp) - 2.0 * f0 + eval_checked(f, xm)) / (h(a) * h(a));
    for (Index i = 0; i < q; ++i) out.block(i)(a, a) = second(i);

    for (Index b = a + 1; b < d; ++b) {
      Vector pp = x, pm = x, mp = x, mm = x;
      pp(a) += h(a), pp(b) += h(b);
      pm(a) += h(a), pm(b) -= h(b);
      mp(a) -= h(a), mp(b) += h(b);
      mm(a) -= h(a), mm(b) -= h(b);
      const Vector mixed = (eval_checked(f, pp) - eval_checked(f, pm) - eval_checked(f, mp) +
                            eval_checked(f, mm)) /
                           (4.0 * h(a) * h(b));
      for (Index i = 0; i < q; ++i) {
        out.block(i)(a, b) = mixed(i);
        out.block(i)(b, a) = mixed(i);
      }
    }
  }
  return out;
}

}  // namespace

Matrix jacobian_fd(const VectorFunction& f, const Vector& x, const DiffConfig& cfg) {
  cfg.validate();
  const Index d = x.size();
  Matrix jac;
  for (Index c = 0; c < d; ++c) {
    const double h = fd_step(cfg.first_step, x(c));
    Vector xp = x, xm = x;
    xp(c) += h;
    xm(c) -= h;
    const Vector col = (eval_checked(f, xp) - eval_checked(f, xm)) / (2.0 * h);
    if (c == 0) jac.resize(col.size(), d);
    require(col.size() == jac.rows(), ErrorCode::dimension_mismatch,
            "evaluator output size changed between stencil points");
    jac.col(c) = col;
  }
  if (d == 0) jac.resize(eval_checked(f, x).size(), 0);
  return jac;
}

Vector gradient_fd(const ScalarFunction& f, const Vector& x, const DiffConfig& cfg) {
  auto wrapped = [&f](const Vector& v) { return Vector::Constant(1, f(v)); };
  return jacobian_fd(wrapped, x, cfg).row(0).transpose();
}

StackedMatrix stacked_second_fd(const PairFunction& g, const Vector& x, const Vector& y,
                                SecondPartial which, const DiffConfig& cfg) {
  cfg.validate();
  switch (which) {
    case SecondPartial::xx:
      return hessian_blocks([&](const Vector& v) { return g(v, y); }, x, cfg.second_step);
    case SecondPartial::yy:
      return hessian_blocks([&](const Vector& v) { return g(x, v); }, y, cfg.second_step);
    case SecondPartial::xy:
    case SecondPartial::yx:
      break;
  }

  auto eval = [&g](const Vector& a, const Vector& b) {
    return eval_checked([&](const Vector&) { return g(a, b); }, a);
  };
  const Index q = eval(x, y).size();
  const Index dx = x.size();
  const Index dy = y.size();
  // Mixed block i has entries d^2 g_i / dx_a dy_c at (a, c).
  StackedMatrix mixed(q, dx, dy);
  for (Index a = 0; a < dx; ++a) {
    const double ha = fd_step(cfg.second_step, x(a));
    Vector xp = x, xm = x;
    xp(a) += ha;
    xm(a) -= ha;
    for (Index c = 0; c < dy; ++c) {
      const double hc = fd_step(cfg.second_step, y(c));
      Vector yp = y, ym = y;
      yp(c) += hc;
      ym(c) -= hc;
      const Vector val =
          (eval(xp, yp) - eval(xp, ym) - eval(xm, yp) + eval(xm, ym)) / (4.0 * ha * hc);
      for (Index i = 0; i < q; ++i) mixed.block(i)(a, c) = val(i);
    }
  }
  if (which == SecondPartial::xy) return mixed;

  StackedMatrix transposed(q, dy, dx);
  for (Index i = 0; i < q; ++i) transposed.block(i) = mixed.block(i).transpose();
  return transposed;
}

StackedMatrix stacked_jacobian_fd(const MatrixFunction& f, const Vector& x, const DiffConfig& cfg) {
  cfg.validate();
  const Index n = x.size();
  auto eval = [&f](const Vector& v) {
    Matrix out;
    try {
      out = f(v);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorCode::evaluator_failure, e.what());
    }
    require_finite(out, "matrix evaluator output");
    return out;
  };
  const Matrix f0 = eval(x);
  const Index q = f0.rows();
  const Index r = f0.cols();
  StackedMatrix out(q, r, n);
  for (Index c = 0; c < n; ++c) {
    const double h = fd_step(cfg.first_step, x(c));
    Vector xp = x, xm = x;
    xp(c) += h;
    xm(c) -= h;
    const Matrix diff = (eval(xp) - eval(xm)) / (2.0 * h);
    for (Index i = 0; i < q; ++i) out.block(i).col(c) = diff.row(i).transpose();
  }
  return out;
}

namespace {

ScalarFunction composed_upper(const BilevelProblem& problem, const LowerSolveFn& lower) {
  return [&problem, &lower](const Vector& p) {
    const LowerSolution sol = lower(p);
    require(sol.converged, ErrorCode::lower_solve_failure,
            "lower solve did not converge on the stencil (residual " +
                std::to_string(sol.residual_norm) + ")");
    return problem.upper(sol.z, p);
  };
}

}  // namespace

Matrix total_gradient_fd(const BilevelProblem& problem, const Vector& p, const LowerSolveFn& lower,
                         const DiffConfig& cfg) {
  const ScalarFunction phi = composed_upper(problem, lower);
  return gradient_fd(phi, p, cfg).transpose();
}

Matrix total_hessian_fd(const BilevelProblem& problem, const Vector& p, const LowerSolveFn& lower,
                        const DiffConfig& cfg) {
  cfg.validate();
  const ScalarFunction phi = composed_upper(problem, lower);
  auto wrapped = [&phi](const Vector& v) { return Vector::Constant(1, phi(v)); };
  return hessian_blocks(wrapped, p, cfg.second_step).data();
}

}  // namespace bls
