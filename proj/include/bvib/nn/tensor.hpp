#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace bvib::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Trainable tensor with its gradient accumulator.
template <typename S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;

  Param() = default;
  Param(std::string n, Mat<S> v) : name(std::move(n)), value(std::move(v)), grad(Mat<S>::Zero(value.rows(), value.cols())) {}

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Multiplies the columns of x in place by per-member vectors: column
// b * per_sample + v is scaled elementwise by table.col(members[b]).
template <typename S>
void scale_by_member(Mat<S>& x, const Mat<S>& table, std::span<const int> members, Eigen::Index per_sample) {
  for (std::size_t b = 0; b < members.size(); ++b)
    x.middleCols(static_cast<Eigen::Index>(b) * per_sample, per_sample).array().colwise() *= table.col(members[b]).array();
}

// Accumulates grad.col(members[b]) += rowwise sums of (a ⊙ c) over sample b's columns.
template <typename S>
void accumulate_member_grad(Mat<S>& grad, const Mat<S>& a, const Mat<S>& c, std::span<const int> members,
                            Eigen::Index per_sample) {
  for (std::size_t b = 0; b < members.size(); ++b) {
    const auto cols = static_cast<Eigen::Index>(b) * per_sample;
    grad.col(members[b]) += (a.middleCols(cols, per_sample).array() * c.middleCols(cols, per_sample).array())
                                .matrix()
                                .rowwise()
                                .sum();
  }
}

}  // namespace bvib::nn
