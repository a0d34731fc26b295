#pragma once

#include <functional>
#include <random>

#include <gtest/gtest.h>
#include <unsupported/Eigen/KroneckerProduct>

#include "bls/error.hpp"
#include "bls/tensor.hpp"

namespace bls::test {

// Dense Kronecker product, used only as an oracle for the blockwise kernels.
inline Matrix dense_kron(const Matrix& a, const Matrix& b) {
  Eigen::MatrixXd k = Eigen::kroneckerProduct(Eigen::MatrixXd(a), Eigen::MatrixXd(b));
  return k;
}

inline Matrix identity(Index n) { return Matrix::Identity(n, n); }

inline double rel(const Matrix& a, const Matrix& b) {
  const double nb = b.norm();
  return nb > 0.0 ? (a - b).norm() / nb : (a - b).norm();
}

inline Matrix random_matrix(std::mt19937_64& rng, Index r, Index c) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline Matrix mat(Index r, Index c, std::initializer_list<double> v) {
  return make_matrix(r, c, std::span<const double>(v.begin(), v.size()));
}

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

inline ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected bls::Error";
  return ErrorCode::invalid_argument;
}

}  // namespace bls::test
