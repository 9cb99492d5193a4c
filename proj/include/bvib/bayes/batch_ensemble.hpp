#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "bvib/error.hpp"
#include "bvib/nn/tensor.hpp"
#include "bvib/random.hpp"

namespace bvib::bayes {

// Member weight W ⊙ (r sᵀ).
inline Eigen::MatrixXd be_materialize(const Eigen::MatrixXd& shared, const Eigen::VectorXd& r, const Eigen::VectorXd& s) {
  if (r.size() != shared.rows() || s.size() != shared.cols()) throw ShapeError("be_materialize: dimension mismatch");
  return shared.array() * (r * s.transpose()).array();
}

struct BatchEnsembleState {
  Eigen::MatrixXd shared;  // [out, in]
  Eigen::VectorXd bias;    // [out]
  Eigen::MatrixXd r;       // [out, K]
  Eigen::MatrixXd s;       // [in, K]

  int members() const { return static_cast<int>(r.cols()); }
};

// Uniform(±sqrt(6 / (fan_in + fan_out))).
template <typename S>
nn::Mat<S> xavier_uniform(Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  nn::Mat<S> w(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) w(i, j) = static_cast<S>(u(rng));
  return w;
}

template <typename S>
nn::Mat<S> random_signs(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  nn::Mat<S> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = coin(rng) ? S(1) : S(-1);
  return m;
}

// Xavier shared weights, zero bias, fast weights i.i.d. uniform over {-1, +1}.
inline BatchEnsembleState be_init(int members, int in, int out, Rng& rng) {
  if (members < 2) throw DomainError("be_init: need at least 2 ensemble members");
  BatchEnsembleState st;
  st.shared = xavier_uniform<double>(out, in, in, out, rng);
  st.bias = Eigen::VectorXd::Zero(out);
  st.r = random_signs<double>(out, members, rng);
  st.s = random_signs<double>(in, members, rng);
  return st;
}

// Row b of the batch (column b of x, [in, B]) goes through member members[b]
// without materializing its weight: r ⊙ (W (x ⊙ s)) + b.
inline Eigen::MatrixXd be_layer_forward(const Eigen::MatrixXd& x, std::span<const int> members,
                                        const BatchEnsembleState& st) {
  if (x.rows() != st.shared.cols() || st.r.rows() != st.shared.rows() || st.s.rows() != st.shared.cols())
    throw ShapeError("be_layer_forward: dimension mismatch");
  if (static_cast<Eigen::Index>(members.size()) != x.cols()) throw ShapeError("be_layer_forward: one member per column");
  for (int k : members)
    if (k < 0 || k >= st.members()) throw DomainError("be_layer_forward: member index out of range");
  Eigen::MatrixXd scaled = x;
  nn::scale_by_member(scaled, st.s, members, 1);
  Eigen::MatrixXd out = st.shared * scaled;
  nn::scale_by_member(out, st.r, members, 1);
  return out.colwise() + st.bias;
}

}  // namespace bvib::bayes
