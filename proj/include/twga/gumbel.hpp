#pragma once

// Relaxed token distribution over the source sentence: a trainable logit
// matrix P plus Gumbel-softmax sampling produces a row-stochastic Gamma that
// stays differentiable w.r.t. P.

#include <stdexcept>
#include <string>
#include <vector>

#include "twga/rng.hpp"
#include "twga/tensor.hpp"

namespace twga {

// trainable n x |V| logits, biased toward the original sentence; rows covering
// the protected token span never move
struct ProbabilityMatrix {
  Tensor P;
  std::vector<int> original_ids;
  std::vector<bool> frozen;

  static ProbabilityMatrix init(const std::vector<int>& original_ids, int vocab_size,
                                const std::vector<int>& frozen_positions, double epsilon) {
    if (original_ids.empty()) throw std::invalid_argument("ProbabilityMatrix: empty sentence");
    int n = static_cast<int>(original_ids.size());
    ProbabilityMatrix pm;
    pm.original_ids = original_ids;
    pm.frozen.assign(static_cast<std::size_t>(n), false);
    pm.P = Tensor::zeros({n, vocab_size}, true);
    for (int i = 0; i < n; ++i) {
      int id = original_ids[static_cast<std::size_t>(i)];
      if (id < 0 || id >= vocab_size)
        throw std::out_of_range("ProbabilityMatrix: token id " + std::to_string(id) + " outside vocab of " +
                                std::to_string(vocab_size));
      (*pm.P.data)[static_cast<std::size_t>(i) * vocab_size + static_cast<std::size_t>(id)] = epsilon;
    }
    for (int pos : frozen_positions) {
      if (pos < 0 || pos >= n)
        throw std::out_of_range("ProbabilityMatrix: frozen position " + std::to_string(pos) + " outside sentence of " +
                                std::to_string(n));
      pm.frozen[static_cast<std::size_t>(pos)] = true;
    }
    return pm;
  }

  // zero the gradient of every frozen row; paired with an optimizer that skips
  // entries with no gradient history, this pins those rows bitwise
  void clear_frozen_grads() {
    if (!P.grad) return;
    int v = P.width();
    for (int i = 0; i < P.height(); ++i) {
      if (!frozen[static_cast<std::size_t>(i)]) continue;
      double* g = P.grad->data() + static_cast<std::size_t>(i) * v;
      std::fill(g, g + v, 0.0);
    }
  }
};

// standard Gumbel noise, one draw per matrix entry
inline Tensor sample_gumbel(int rows_n, int cols, Rng& rng) {
  Tensor g = Tensor::zeros({rows_n, cols});
  for (double& x : *g.data) x = rng.gumbel();
  return g;
}

// Gamma_{i,j} = exp((P_{i,j}+g_{i,j})/tau) / sum_v exp((P_{i,v}+g_{i,v})/tau)
inline Tensor gumbel_softmax(const Tensor& P, const Tensor& noise, double tau) {
  if (P.shape != noise.shape)
    throw std::invalid_argument("gumbel_softmax: logits [" + std::to_string(P.height()) + "x" +
                                std::to_string(P.width()) + "] vs noise [" + std::to_string(noise.height()) + "x" +
                                std::to_string(noise.width()) + "]");
  if (tau <= 0.0) throw std::invalid_argument("gumbel_softmax: tau must be positive");
  return softmax(scale(add(P, noise), 1.0 / tau));
}

// per-row argmax; ties break toward the lowest token id
inline std::vector<int> argmax_tokens(const Tensor& gamma) {
  int n = gamma.height(), v = gamma.width();
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* r = gamma.data->data() + static_cast<std::size_t>(i) * v;
    int best = 0;
    for (int j = 1; j < v; ++j)
      if (r[j] > r[best]) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace twga
