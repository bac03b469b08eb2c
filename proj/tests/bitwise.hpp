#pragma once

#include <Eigen/Core>

// exact elementwise equality, including shape
template <typename A, typename B>
bool same_bits(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return (a.derived().array() == b.derived().array()).all();
}
