#include "bls/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bls {

namespace {

using RowMajorMap = Eigen::Map<const Matrix>;

}  // namespace

Matrix make_matrix(Index rows, Index cols, std::span<const double> entries) {
  require(rows >= 0 && cols >= 0, ErrorCode::invalid_argument, "negative matrix shape");
  require(static_cast<Index>(entries.size()) == rows * cols, ErrorCode::dimension_mismatch,
          "entry count " + std::to_string(entries.size()) + " != " + std::to_string(rows) + "x" +
              std::to_string(cols));
  Matrix m = RowMajorMap(entries.data(), rows, cols);
  require_finite(m, "make_matrix");
  return m;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_finite(const Matrix& m, const std::string& what) {
  require(m.allFinite(), ErrorCode::non_finite_result, what + " has non-finite entries");
}

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

double operator_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

// --- StackedMatrix ---------------------------------------------------------

StackedMatrix::StackedMatrix(Index blocks, Index block_rows, Index block_cols)
    : blocks_(blocks), block_rows_(block_rows), data_(Matrix::Zero(blocks * block_rows, block_cols)) {
  require(blocks >= 0 && block_rows >= 0 && block_cols >= 0, ErrorCode::invalid_argument,
          "negative stacked shape");
}

StackedMatrix::StackedMatrix(Index blocks, Index block_rows, Matrix data)
    : blocks_(blocks), block_rows_(block_rows), data_(std::move(data)) {
  require(data_.rows() == blocks * block_rows, ErrorCode::dimension_mismatch,
          "stacked data has " + std::to_string(data_.rows()) + " rows, expected " +
              std::to_string(blocks) + "*" + std::to_string(block_rows));
}

// --- counters --------------------------------------------------------------

OpCounters& op_counters() {
  thread_local OpCounters counters;
  return counters;
}

void reset_op_counters() { op_counters() = OpCounters{}; }

// --- Factorization ---------------------------------------------------------

Factorization::Factorization(const Matrix& a) : size_(a.rows()) {
  require(a.rows() == a.cols(), ErrorCode::non_square,
          "cannot factorize " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  require_finite(a, "factorize input");
  ++op_counters().factorizations;
  max_abs_ = max_abs(a);
  if (size_ == 0) return;
  lu_.compute(Eigen::MatrixXd(a));
  min_pivot_ = lu_.matrixLU().diagonal().cwiseAbs().minCoeff();
  singular_ = !(min_pivot_ >= kSingularRelTol * max_abs_) || max_abs_ == 0.0;
}

void Factorization::check_usable(Index rhs_rows) const {
  require(!singular_, ErrorCode::singular_matrix,
          "smallest pivot " + std::to_string(min_pivot_) + " below " +
              std::to_string(kSingularRelTol) + " * max|A|");
  require(rhs_rows == size_, ErrorCode::dimension_mismatch,
          "rhs has " + std::to_string(rhs_rows) + " rows, factorization is " +
              std::to_string(size_));
}

Matrix Factorization::solve(const Matrix& b) const {
  check_usable(b.rows());
  ++op_counters().solve_calls;
  op_counters().solve_rhs += b.cols();
  if (size_ == 0) return b;
  return lu_.solve(Eigen::MatrixXd(b));
}

Vector Factorization::solve(const Vector& b) const {
  check_usable(b.size());
  ++op_counters().solve_calls;
  ++op_counters().solve_rhs;
  if (size_ == 0) return b;
  return lu_.solve(b);
}

Matrix Factorization::solve_transposed(const Matrix& b) const {
  check_usable(b.rows());
  ++op_counters().solve_calls;
  op_counters().solve_rhs += b.cols();
  if (size_ == 0) return b;
  return lu_.transpose().solve(Eigen::MatrixXd(b));
}

Vector Factorization::solve_transposed(const Vector& b) const {
  check_usable(b.size());
  ++op_counters().solve_calls;
  ++op_counters().solve_rhs;
  if (size_ == 0) return b;
  return lu_.transpose().solve(b);
}

Factorization factorize(const Matrix& a) { return Factorization(a); }

// --- Kronecker broadcasts ----------------------------------------------------

StackedMatrix kron_left_apply(const Matrix& a, const StackedMatrix& c) {
  require(c.blocks() == a.cols(), ErrorCode::dimension_mismatch,
          "kron_left_apply: A has " + std::to_string(a.cols()) + " columns, C has " +
              std::to_string(c.blocks()) + " blocks");
  const Index p = c.block_rows();
  const Index r = c.block_cols();
  // Row-major storage makes every block a contiguous run of p*r entries, so C
  // is an n x (p*r) matrix in disguise and the broadcast is a single GEMM.
  RowMajorMap c_flat(c.data().data(), c.blocks(), p * r);
  Matrix out_flat = a * c_flat;
  Matrix out = Eigen::Map<const Matrix>(out_flat.data(), a.rows() * p, r);
  return StackedMatrix(a.rows(), p, std::move(out));
}

StackedMatrix kron_right_apply(const Matrix& b, const StackedMatrix& c) {
  require(c.block_rows() == b.cols(), ErrorCode::dimension_mismatch,
          "kron_right_apply: B has " + std::to_string(b.cols()) + " columns, blocks have " +
              std::to_string(c.block_rows()) + " rows");
  StackedMatrix out(c.blocks(), b.rows(), c.block_cols());
  for (Index i = 0; i < c.blocks(); ++i) out.block(i).noalias() = b * c.block(i);
  return out;
}

StackedMatrix kron_left_solve(const Factorization& f, const StackedMatrix& c) {
  require(c.blocks() == f.size(), ErrorCode::dimension_mismatch,
          "kron_left_solve: factorization is " + std::to_string(f.size()) + ", C has " +
              std::to_string(c.blocks()) + " blocks");
  const Index p = c.block_rows();
  const Index r = c.block_cols();
  Matrix c_flat = RowMajorMap(c.data().data(), c.blocks(), p * r);
  Matrix out_flat = f.solve(c_flat);
  Matrix out = Eigen::Map<const Matrix>(out_flat.data(), f.size() * p, r);
  return StackedMatrix(f.size(), p, std::move(out));
}

// --- min gain --------------------------------------------------------------

GainEstimate min_gain(const Matrix& a, double tol, int max_iter) {
  require(a.rows() == a.cols(), ErrorCode::non_square, "min_gain needs a square matrix");
  require_finite(a, "min_gain input");
  GainEstimate est;
  const Index m = a.rows();
  if (m == 0) {
    est.converged = true;
    return est;
  }
  const double scale = max_abs(a);
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu{Eigen::MatrixXd(a)};
  const double pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  if (scale == 0.0 || !(pivot >= Factorization::kSingularRelTol * scale)) {
    est.converged = true;
    return est;
  }

  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> normal;
  Vector x(m);
  for (Index i = 0; i < m; ++i) x(i) = normal(rng);
  x.normalize();

  double sigma = (a * x).norm();
  for (int it = 1; it <= max_iter; ++it) {
    // x <- (A^T A)^{-1} x = A^{-1} A^{-T} x
    Vector w = lu.solve(Vector(lu.transpose().solve(x)));
    x = w / w.norm();
    const double next = (a * x).norm();
    est.iterations = it;
    const bool done = std::abs(next - sigma) <= tol * next;
    sigma = next;
    if (done) {
      est.converged = true;
      break;
    }
  }
  est.value = sigma;
  return est;
}

}  // namespace bls
