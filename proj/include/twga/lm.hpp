#pragma once

// Tiny causal language models scoring source-side fluency. Two directions:
// left-to-right, and right-to-left trained and evaluated on reversed
// sequences.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "twga/nmt.hpp"

namespace twga {

enum class LmDirection { kLeftToRight, kRightToLeft };

struct LmConfig {
  int emb_dim = 128;
  int layers = 2;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double dropout = 0.1;
  int epochs = 3;
  std::uint64_t seed = 1;
};

struct NllScore {
  double value = 0.0;   // mean nats/token
  bool mapped_unk = false;
};

class CausalLm {
 public:
  Vocabulary vocab;
  LmConfig cfg;
  LmDirection direction = LmDirection::kLeftToRight;

  Tensor E;
  std::vector<AttnLayer> blocks;
  Tensor lng, lnb, Wout, bout;

  static CausalLm init(Vocabulary v, LmDirection dir, const LmConfig& cfg) {
    CausalLm lm;
    lm.vocab = std::move(v);
    lm.cfg = cfg;
    lm.direction = dir;
    Rng rng(Rng::derive(cfg.seed, 0x1A));
    int d = cfg.emb_dim;
    lm.E = detail::init_param({lm.vocab.size(), d}, rng, 0.1);
    for (int l = 0; l < cfg.layers; ++l) lm.blocks.push_back(AttnLayer::init(d, 2 * d, false, rng));
    Tensor g = Tensor::zeros({1, d}, true);
    std::fill(g.data->begin(), g.data->end(), 1.0);
    lm.lng = g;
    lm.lnb = Tensor::zeros({1, d}, true);
    lm.Wout = detail::init_param({d, lm.vocab.size()}, rng, std::sqrt(1.0 / d));
    lm.bout = Tensor::zeros({1, lm.vocab.size()}, true);
    return lm;
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out{E};
    for (const auto& b : blocks) b.collect(out);
    out.push_back(lng);
    out.push_back(lnb);
    out.push_back(Wout);
    out.push_back(bout);
    return out;
  }

  CausalLm frozen_view() const {
    CausalLm m = *this;
    auto strip = [](Tensor& t) {
      t.requires_grad = false;
      t.grad.reset();
      t.node.reset();
    };
    strip(m.E);
    for (auto& l : m.blocks)
      for (Tensor* t : {&l.ln1g, &l.ln1b, &l.Wq, &l.Wk, &l.Wv, &l.Wo, &l.ln2g, &l.ln2b, &l.W1, &l.b1, &l.W2, &l.b2})
        strip(*t);
    strip(m.lng);
    strip(m.lnb);
    strip(m.Wout);
    strip(m.bout);
    return m;
  }

  // causal transformer over input embeddings -> T x |V| logits
  Tensor logits_from_embeddings(const Tensor& X, Rng* drop_rng = nullptr, double drop = 0.0) const {
    int t = X.height();
    Tensor x = add(X, detail::positional_encoding(0, t, cfg.emb_dim));
    if (drop_rng) x = dropout(x, drop, *drop_rng);
    Tensor mask = detail::causal_mask(t);
    for (const auto& b : blocks) x = b.forward(x, &mask, nullptr);
    x = layer_norm(x, lng, lnb);
    return add_rowvec(matmul(x, Wout), bout);
  }

  // mean negative log likelihood in nats/token; R2L scores the reversed
  // sequence under its own (reversed-trained) parameters
  NllScore nll(const std::vector<int>& token_ids) const {
    if (token_ids.empty()) throw std::invalid_argument("CausalLm::nll: empty sequence");
    NllScore score;
    std::vector<int> ids = oriented(token_ids, &score.mapped_unk);
    std::vector<int> in{Vocabulary::kBos};
    in.insert(in.end(), ids.begin(), ids.end() - 1);
    Tensor logits = logits_from_embeddings(rows(E, in));
    int v = vocab.size();
    double total = 0.0;
    std::vector<double> lp(static_cast<std::size_t>(v));
    for (int i = 0; i < logits.height(); ++i) {
      const double* xr = logits.data->data() + static_cast<std::size_t>(i) * v;
      double mx = *std::max_element(xr, xr + v);
      double z = 0.0;
      for (int j = 0; j < v; ++j) z += std::exp(xr[j] - mx);
      total -= xr[ids[static_cast<std::size_t>(i)]] - mx - std::log(z);
    }
    score.value = total / static_cast<double>(ids.size());
    return score;
  }

  // differentiable NLL of the relaxed sequence: soft input mixing, hard
  // argmax targets (straight-through)
  Tensor nll_relaxed(const Tensor& gamma) const {
    int n = gamma.height(), v = gamma.width();
    if (v != vocab.size())
      throw std::invalid_argument("nll_relaxed: gamma width " + std::to_string(v) + " != vocab size " +
                                  std::to_string(vocab.size()));
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < v; ++j) s += gamma.at(static_cast<std::size_t>(i) * v + j);
      if (std::fabs(s - 1.0) > 1e-9)
        throw std::invalid_argument("nll_relaxed: gamma row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
    Tensor g = gamma;
    if (direction == LmDirection::kRightToLeft) g = reverse_rows(gamma);
    std::vector<int> targets(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double* r = g.data->data() + static_cast<std::size_t>(i) * v;
      int best = 0;
      for (int j = 1; j < v; ++j)
        if (r[j] > r[best]) best = j;
      targets[static_cast<std::size_t>(i)] = best;
    }
    Tensor bos_emb = rows(E, {Vocabulary::kBos});
    Tensor in_emb = n > 1 ? concat_rows({bos_emb, embedding_mix(slice_rows(g, 0, n - 1), E)}) : bos_emb;
    Tensor logits = logits_from_embeddings(in_emb);
    return smoothed_cross_entropy(logits, targets, 0.0);
  }

  void save(const std::string& path) const {
    vocab.save(path + ".vocab");
    CheckpointWriter w(path, vocab.hash());
    w.write_string("lm");
    w.write_string(direction == LmDirection::kLeftToRight ? "l2r" : "r2l");
    w.write_u32(static_cast<std::uint32_t>(cfg.emb_dim));
    w.write_u32(static_cast<std::uint32_t>(cfg.layers));
    auto ps = params();
    w.write_u32(static_cast<std::uint32_t>(ps.size()));
    for (const Tensor& p : ps) w.write_tensor(p);
  }

  static CausalLm load(const std::string& path) {
    Vocabulary v = Vocabulary::load(path + ".vocab");
    CheckpointReader r(path, v.hash());
    std::string kind = r.read_string();
    if (kind != "lm") throw std::runtime_error("checkpoint: expected an lm model, found '" + kind + "'");
    std::string dir = r.read_string();
    LmConfig cfg;
    cfg.emb_dim = static_cast<int>(r.read_u32());
    cfg.layers = static_cast<int>(r.read_u32());
    CausalLm lm = init(std::move(v), dir == "r2l" ? LmDirection::kRightToLeft : LmDirection::kLeftToRight, cfg);
    auto ps = lm.params();
    std::uint32_t n = r.read_u32();
    if (n != ps.size()) throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
    for (Tensor& p : ps) r.read_tensor_into(p);
    return lm;
  }

 private:
  std::vector<int> oriented(const std::vector<int>& ids, bool* mapped_unk) const {
    std::vector<int> out;
    out.reserve(ids.size());
    for (int id : ids) {
      if (id < 0 || id >= vocab.size()) {
        out.push_back(Vocabulary::kUnk);
        *mapped_unk = true;
      } else {
        out.push_back(id);
      }
    }
    if (direction == LmDirection::kRightToLeft) std::reverse(out.begin(), out.end());
    return out;
  }

  static Tensor reverse_rows(const Tensor& g) {
    int n = g.height();
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = n - 1 - i;
    return rows(g, idx);
  }
};

inline CausalLm train_lm(const std::vector<std::vector<std::string>>& mono_corpus, LmDirection direction,
                         const LmConfig& cfg, const Vocabulary* shared_vocab = nullptr) {
  if (mono_corpus.empty()) throw std::invalid_argument("train_lm: empty corpus");
  Vocabulary vocab = shared_vocab ? *shared_vocab : build_vocab_from_sentences(mono_corpus);
  CausalLm lm = CausalLm::init(std::move(vocab), direction, cfg);

  std::vector<std::vector<int>> encoded;
  encoded.reserve(mono_corpus.size());
  for (const auto& words : mono_corpus) {
    std::vector<int> ids = lm.vocab.encode_words(words);
    if (ids.empty()) continue;
    if (direction == LmDirection::kRightToLeft) std::reverse(ids.begin(), ids.end());
    encoded.push_back(std::move(ids));
  }
  if (encoded.empty()) throw std::invalid_argument("train_lm: corpus has no usable sentences");

  Adam opt(lm.params(), cfg.lr, cfg.beta1, cfg.beta2);
  Rng shuffle_rng(Rng::derive(cfg.seed, 0x5FF1E));
  Rng drop_rng(Rng::derive(cfg.seed, 0xD60));
  std::vector<int> order(encoded.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(static_cast<int>(i)))]);
    for (int idx : order) {
      ++step;
      const std::vector<int>& ids = encoded[static_cast<std::size_t>(idx)];
      std::vector<int> in{Vocabulary::kBos};
      in.insert(in.end(), ids.begin(), ids.end() - 1);
      opt.zero_grad();
      Tensor logits = lm.logits_from_embeddings(rows(lm.E, in), &drop_rng, cfg.dropout);
      Tensor loss = smoothed_cross_entropy(logits, ids, 0.0);
      if (!std::isfinite(loss.item()))
        throw std::runtime_error("train_lm: loss diverged (non-finite) at step " + std::to_string(step));
      backward(loss);
      opt.step();
    }
  }
  return lm;
}

// exp(mean nll) over a held-out set; sequences are oriented internally
inline double lm_perplexity(const CausalLm& lm, const std::vector<std::vector<std::string>>& corpus) {
  double total = 0.0;
  long count = 0;
  for (const auto& words : corpus) {
    std::vector<int> ids = lm.vocab.encode_words(words);
    if (ids.empty()) continue;
    total += lm.nll(ids).value * static_cast<double>(ids.size());
    count += static_cast<long>(ids.size());
  }
  if (count == 0) throw std::invalid_argument("lm_perplexity: empty corpus");
  return std::exp(total / static_cast<double>(count));
}

}  // namespace twga
