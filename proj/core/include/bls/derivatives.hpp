#pragma once

// Central finite differences. These back every partial derivative a problem
// does not supply analytically, and they are the independent oracles the
// test suites check implicit-function results against.

#include <functional>

#include "bls/tensor.hpp"

namespace bls {

class BilevelProblem;
struct LowerSolution;

/// Step sizes for central differences; step_i = base * max(1, |x_i|).
struct DiffConfig {
  double first_step = 1e-5;
  double second_step = 1e-4;

  void validate() const;
};

using VectorFunction = std::function<Vector(const Vector&)>;
using ScalarFunction = std::function<double(const Vector&)>;
using MatrixFunction = std::function<Matrix(const Vector&)>;
using PairFunction = std::function<Vector(const Vector& x, const Vector& y)>;

double fd_step(double base, double x);

/// dim(f) x dim(x) Jacobian, one central difference per column.
Matrix jacobian_fd(const VectorFunction& f, const Vector& x, const DiffConfig& cfg = {});

/// Gradient of a scalar function as a column vector.
Vector gradient_fd(const ScalarFunction& f, const Vector& x, const DiffConfig& cfg = {});

enum class SecondPartial { xx, xy, yx, yy };

/// Second partials of g(x, y) in the stacked layout: block i is the requested
/// derivative of g_i. `xy` means rows indexed by x and columns by y, i.e.
/// block i = D_y(grad_x g_i). Nested central differences with the
/// second-order step.
StackedMatrix stacked_second_fd(const PairFunction& g, const Vector& x, const Vector& y,
                                SecondPartial which, const DiffConfig& cfg = {});

/// Derivative of a matrix-valued F: R^n -> R^{q x n} whose row i is the
/// gradient of some scalar s_i. Returns q blocks n x n with block i(r, c) =
/// d F(i, r) / d x_c, i.e. the Hessian of s_i when F is exact. Uses the
/// first-order step.
StackedMatrix stacked_jacobian_fd(const MatrixFunction& f, const Vector& x,
                                  const DiffConfig& cfg = {});

/// Solves the lower problem at a given p.
using LowerSolveFn = std::function<LowerSolution(const Vector& p)>;

/// Central difference of p -> f_U(z*(p), p), re-solving the lower problem at
/// every stencil point. The solver should be tight (~1e-12) so truncation
/// error dominates.
Matrix total_gradient_fd(const BilevelProblem& problem, const Vector& p,
                         const LowerSolveFn& lower, const DiffConfig& cfg = {});

/// Second central differences of p -> f_U(z*(p), p) with the second-order
/// step; n x n, exactly symmetric.
Matrix total_hessian_fd(const BilevelProblem& problem, const Vector& p,
                        const LowerSolveFn& lower, const DiffConfig& cfg = {});

}  // namespace bls
