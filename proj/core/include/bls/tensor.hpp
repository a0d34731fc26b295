#pragma once

// Dense kernels shared by every other module: row-major matrices, the
// block-stacked layout for second derivatives of vector functions, an LU
// factorization with an explicit singularity flag, and the broadcast
// Kronecker contractions (A (x) I) C and (I (x) B) C evaluated blockwise.

#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "bls/error.hpp"

namespace bls {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Builds a rows x cols matrix from row-major entries. Rejects a length
/// mismatch and non-finite entries.
Matrix make_matrix(Index rows, Index cols, std::span<const double> entries);

bool all_finite(const Matrix& m);
void require_finite(const Matrix& m, const std::string& what);

/// Largest absolute entry (0 for an empty matrix).
double max_abs(const Matrix& m);

/// Spectral norm via Jacobi SVD.
double operator_norm(const Matrix& m);

/// q blocks of r x c stacked vertically into one (q*r) x c matrix. Block i
/// holds the derivative of the i-th scalar output of a vector function.
class StackedMatrix {
 public:
  StackedMatrix() = default;

  /// Zero-initialized.
  StackedMatrix(Index blocks, Index block_rows, Index block_cols);

  /// Wraps existing data; data.rows() must equal blocks * block_rows.
  StackedMatrix(Index blocks, Index block_rows, Matrix data);

  Index blocks() const noexcept { return blocks_; }
  Index block_rows() const noexcept { return block_rows_; }
  Index block_cols() const noexcept { return data_.cols(); }

  const Matrix& data() const noexcept { return data_; }
  Matrix& data() noexcept { return data_; }

  auto block(Index i) const { return data_.middleRows(i * block_rows_, block_rows_); }
  auto block(Index i) { return data_.middleRows(i * block_rows_, block_rows_); }

  double norm() const { return data_.norm(); }

 private:
  Index blocks_ = 0;
  Index block_rows_ = 0;
  Matrix data_;
};

/// Per-thread instrumentation of factorizations and solves.
struct OpCounters {
  std::int64_t factorizations = 0;
  std::int64_t solve_calls = 0;  // one per solve invocation, any RHS width
  std::int64_t solve_rhs = 0;    // total right-hand-side columns
};

OpCounters& op_counters();
void reset_op_counters();

/// LU with partial pivoting of a square matrix. Solves are refused when the
/// smallest pivot falls below 1e-12 * max|A|; the caller has to regularize
/// explicitly in that case.
class Factorization {
 public:
  static constexpr double kSingularRelTol = 1e-12;

  explicit Factorization(const Matrix& a);

  Index size() const noexcept { return size_; }
  bool singular() const noexcept { return singular_; }
  double min_pivot() const noexcept { return min_pivot_; }
  double max_abs_entry() const noexcept { return max_abs_; }

  /// A^{-1} B.
  Matrix solve(const Matrix& b) const;
  Vector solve(const Vector& b) const;

  /// A^{-T} B.
  Matrix solve_transposed(const Matrix& b) const;
  Vector solve_transposed(const Vector& b) const;

 private:
  void check_usable(Index rhs_rows) const;

  Index size_ = 0;
  bool singular_ = false;
  double min_pivot_ = 0.0;
  double max_abs_ = 0.0;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

Factorization factorize(const Matrix& a);

/// (A (x) I_p) C for C holding A.cols() blocks of p x r. Block i of the
/// result is sum_l A(i, l) * C_l.
StackedMatrix kron_left_apply(const Matrix& a, const StackedMatrix& c);

/// (I_q (x) B) C for C holding q blocks of B.cols() x r. Block i of the
/// result is B * C_i.
StackedMatrix kron_right_apply(const Matrix& b, const StackedMatrix& c);

/// (A^{-1} (x) I) C with A given by its factorization; one multi-column solve.
StackedMatrix kron_left_solve(const Factorization& f, const StackedMatrix& c);

struct GainEstimate {
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Smallest singular value of a square A, i.e. the largest alpha with
/// ||A v|| >= alpha ||v||. Inverse power iteration on A^T A; a singular A
/// yields 0.
GainEstimate min_gain(const Matrix& a, double tol = 1e-10, int max_iter = 500);

}  // namespace bls
