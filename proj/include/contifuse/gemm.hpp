#pragma once

#include <Eigen/Core>

#include "contifuse/tensor.hpp"

namespace contifuse {

namespace detail {
template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
}  // namespace detail

/// C = A(m,k) * B(k,n), row-major raw buffers.  acc=true accumulates into C.
template <typename T>
void gemm(const T* a, const T* b, T* c, Dim m, Dim k, Dim n, bool acc = false) {
  detail::ConstMatMap<T> A(a, m, k), B(b, k, n);
  detail::MatMap<T> C(c, m, n);
  if (acc)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

/// C = A(m,k) * B(n,k)^T.
template <typename T>
void gemm_nt(const T* a, const T* bt, T* c, Dim m, Dim k, Dim n, bool acc = false) {
  detail::ConstMatMap<T> A(a, m, k), B(bt, n, k);
  detail::MatMap<T> C(c, m, n);
  if (acc)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

/// C = A(k,m)^T * B(k,n).
template <typename T>
void gemm_tn(const T* at, const T* b, T* c, Dim m, Dim k, Dim n, bool acc = false) {
  detail::ConstMatMap<T> A(at, k, m), B(b, k, n);
  detail::MatMap<T> C(c, m, n);
  if (acc)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

namespace detail {
template <typename T>
using StridedMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                              Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
               Eigen::Unaligned, Eigen::OuterStride<>>;
}  // namespace detail

/// Strided variants for operating on row-major submatrices (e.g. one
/// attention head's column slice).  ld* are row strides of the parent
/// buffers.  C(m,n) = A(m,k) * B(n,k)^T, optionally scaled.
template <typename T>
void gemm_nt_strided(const T* a, Dim lda, const T* bt, Dim ldb, T* c, Dim ldc, Dim m, Dim k, Dim n,
                     T scale = T(1)) {
  detail::ConstStridedMap<T> A(a, m, k, Eigen::OuterStride<>(lda));
  detail::ConstStridedMap<T> B(bt, n, k, Eigen::OuterStride<>(ldb));
  detail::StridedMap<T> C(c, m, n, Eigen::OuterStride<>(ldc));
  C.noalias() = (A * B.transpose()) * scale;
}

/// C(m,n) = A(m,k) * B(k,n) with strides; acc accumulates.
template <typename T>
void gemm_strided(const T* a, Dim lda, const T* b, Dim ldb, T* c, Dim ldc, Dim m, Dim k, Dim n,
                  bool acc = false) {
  detail::ConstStridedMap<T> A(a, m, k, Eigen::OuterStride<>(lda));
  detail::ConstStridedMap<T> B(b, k, n, Eigen::OuterStride<>(ldb));
  detail::StridedMap<T> C(c, m, n, Eigen::OuterStride<>(ldc));
  if (acc)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

/// C(m,n) = A(k,m)^T * B(k,n) with strides; acc accumulates.
template <typename T>
void gemm_tn_strided(const T* at, Dim lda, const T* b, Dim ldb, T* c, Dim ldc, Dim m, Dim k, Dim n,
                     bool acc = false) {
  detail::ConstStridedMap<T> A(at, k, m, Eigen::OuterStride<>(lda));
  detail::ConstStridedMap<T> B(b, k, n, Eigen::OuterStride<>(ldb));
  detail::StridedMap<T> C(c, m, n, Eigen::OuterStride<>(ldc));
  if (acc)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

}  // namespace contifuse
