#pragma once

// Toy encoder-decoder translation model with beam search that records the
// per-step output logits of the winning hypothesis, plus a relaxed-input
// forward mode that consumes a row-stochastic source distribution.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "twga/checkpoint.hpp"
#include "twga/optim.hpp"
#include "twga/rng.hpp"
#include "twga/tensor.hpp"
#include "twga/vocab.hpp"

namespace twga {

struct QueryCounter {
  long count = 0;
  void bump() { ++count; }
};

struct DecodeTrace {
  std::vector<Tensor> step_logits;  // one 1x|V_tgt| row per emitted token
  std::vector<int> tokens;
  std::vector<int> beam_ids;  // row of the winning hypothesis in each step's beam layout
};

struct Translation {
  std::vector<int> token_ids;  // excludes bos; ends with eos on normal termination
  std::string text;
  bool truncated = false;
  std::shared_ptr<DecodeTrace> trace;
};

struct NmtConfig {
  std::string arch = "gru";  // "gru" or "attn"
  int emb_dim = 128;
  int hidden = 128;
  int layers = 2;
  int beam_size = 4;
  int max_len = 64;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double dropout = 0.3;
  double label_smoothing = 0.2;
  int epochs = 5;
  std::uint64_t seed = 1;
};

namespace detail {

inline Tensor init_param(std::vector<int> shape, Rng& rng, double range) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : *t.data) v = (rng.uniform() * 2.0 - 1.0) * range;
  return t;
}

// sinusoidal positional encoding rows [pos, pos+n)
inline Tensor positional_encoding(int pos0, int n, int d) {
  Tensor pe = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i) {
    int pos = pos0 + i;
    for (int j = 0; j < d; j += 2) {
      double f = std::pow(10000.0, -static_cast<double>(j) / d);
      (*pe.data)[static_cast<std::size_t>(i) * d + j] = std::sin(pos * f);
      if (j + 1 < d) (*pe.data)[static_cast<std::size_t>(i) * d + j + 1] = std::cos(pos * f);
    }
  }
  return pe;
}

inline Tensor causal_mask(int n) {
  Tensor m = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) (*m.data)[static_cast<std::size_t>(i) * n + j] = -1e9;
  return m;
}

}  // namespace detail

struct GruCell {
  Tensor Wz, Uz, bz, Wr, Ur, br, Wn, Un, bn;

  static GruCell init(int in_dim, int hidden, Rng& rng) {
    GruCell c;
    double rx = std::sqrt(1.0 / in_dim), rh = std::sqrt(1.0 / hidden);
    c.Wz = detail::init_param({in_dim, hidden}, rng, rx);
    c.Uz = detail::init_param({hidden, hidden}, rng, rh);
    c.bz = detail::init_param({1, hidden}, rng, 0.0);
    c.Wr = detail::init_param({in_dim, hidden}, rng, rx);
    c.Ur = detail::init_param({hidden, hidden}, rng, rh);
    c.br = detail::init_param({1, hidden}, rng, 0.0);
    c.Wn = detail::init_param({in_dim, hidden}, rng, rx);
    c.Un = detail::init_param({hidden, hidden}, rng, rh);
    c.bn = detail::init_param({1, hidden}, rng, 0.0);
    return c;
  }

  // x: B x in_dim, h: B x hidden -> B x hidden
  Tensor step(const Tensor& x, const Tensor& h) const {
    Tensor z = sigmoid_op(add(add_rowvec(matmul(x, Wz), bz), matmul(h, Uz)));
    Tensor r = sigmoid_op(add(add_rowvec(matmul(x, Wr), br), matmul(h, Ur)));
    Tensor n = tanh_op(add(add_rowvec(matmul(x, Wn), bn), matmul(mul(r, h), Un)));
    return add(sub(n, mul(z, n)), mul(z, h));
  }

  void collect(std::vector<Tensor>& out) const {
    for (const Tensor* t : {&Wz, &Uz, &bz, &Wr, &Ur, &br, &Wn, &Un, &bn}) out.push_back(*t);
  }
};

// single-head pre-norm transformer block; cross-attention optional
struct AttnLayer {
  Tensor ln1g, ln1b, Wq, Wk, Wv, Wo;
  Tensor lnxg, lnxb, Wq2, Wk2, Wv2, Wo2;  // cross attention (decoder only)
  Tensor ln2g, ln2b, W1, b1, W2, b2;
  bool has_cross = false;

  static AttnLayer init(int d, int ff, bool cross, Rng& rng) {
    AttnLayer l;
    l.has_cross = cross;
    double r = std::sqrt(1.0 / d);
    auto ones = [](int n) {
      Tensor t = Tensor::zeros({1, n}, true);
      std::fill(t.data->begin(), t.data->end(), 1.0);
      return t;
    };
    l.ln1g = ones(d);
    l.ln1b = Tensor::zeros({1, d}, true);
    l.Wq = detail::init_param({d, d}, rng, r);
    l.Wk = detail::init_param({d, d}, rng, r);
    l.Wv = detail::init_param({d, d}, rng, r);
    l.Wo = detail::init_param({d, d}, rng, r);
    if (cross) {
      l.lnxg = ones(d);
      l.lnxb = Tensor::zeros({1, d}, true);
      l.Wq2 = detail::init_param({d, d}, rng, r);
      l.Wk2 = detail::init_param({d, d}, rng, r);
      l.Wv2 = detail::init_param({d, d}, rng, r);
      l.Wo2 = detail::init_param({d, d}, rng, r);
    }
    l.ln2g = ones(d);
    l.ln2b = Tensor::zeros({1, d}, true);
    l.W1 = detail::init_param({d, ff}, rng, r);
    l.b1 = Tensor::zeros({1, ff}, true);
    l.W2 = detail::init_param({ff, d}, rng, std::sqrt(1.0 / ff));
    l.b2 = Tensor::zeros({1, d}, true);
    return l;
  }

  Tensor forward(const Tensor& x, const Tensor* mask, const Tensor* memory) const {
    int d = x.width();
    double sc = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor h = layer_norm(x, ln1g, ln1b);
    Tensor scores = scale(matmul_nt(matmul(h, Wq), matmul(h, Wk)), sc);
    if (mask) scores = add(scores, *mask);
    Tensor att = matmul(softmax(scores), matmul(h, Wv));
    Tensor y = add(x, matmul(att, Wo));
    if (has_cross) {
      if (!memory) throw std::logic_error("AttnLayer: cross layer without memory");
      Tensor hx = layer_norm(y, lnxg, lnxb);
      Tensor xs = scale(matmul_nt(matmul(hx, Wq2), matmul(*memory, Wk2)), sc);
      Tensor xa = matmul(softmax(xs), matmul(*memory, Wv2));
      y = add(y, matmul(xa, Wo2));
    }
    Tensor h2 = layer_norm(y, ln2g, ln2b);
    Tensor f = relu_hinge(add_rowvec(matmul(h2, W1), b1), 0.0);
    return add(y, add_rowvec(matmul(f, W2), b2));
  }

  void collect(std::vector<Tensor>& out) const {
    for (const Tensor* t : {&ln1g, &ln1b, &Wq, &Wk, &Wv, &Wo}) out.push_back(*t);
    if (has_cross)
      for (const Tensor* t : {&lnxg, &lnxb, &Wq2, &Wk2, &Wv2, &Wo2}) out.push_back(*t);
    for (const Tensor* t : {&ln2g, &ln2b, &W1, &b1, &W2, &b2}) out.push_back(*t);
  }
};

class NmtModel {
 public:
  Vocabulary src_vocab, tgt_vocab;
  NmtConfig cfg;

  Tensor E_src, E_tgt;
  std::vector<GruCell> enc_gru, dec_gru;
  Tensor Wc, bc;  // attention combine (gru arch)
  std::vector<AttnLayer> enc_attn, dec_attn;
  Tensor enc_lng, enc_lnb, dec_lng, dec_lnb;  // final norms (attn arch)
  Tensor Wout, bout;

  bool is_gru() const { return cfg.arch == "gru"; }

  static NmtModel init(Vocabulary src_vocab, Vocabulary tgt_vocab, const NmtConfig& cfg) {
    if (cfg.arch != "gru" && cfg.arch != "attn")
      throw std::invalid_argument("NmtModel: unknown arch '" + cfg.arch + "'");
    NmtModel m;
    m.src_vocab = std::move(src_vocab);
    m.tgt_vocab = std::move(tgt_vocab);
    m.cfg = cfg;
    Rng rng(Rng::derive(cfg.seed, 0xA11CE));
    int d = cfg.emb_dim, h = cfg.hidden;
    m.E_src = detail::init_param({m.src_vocab.size(), d}, rng, 0.1);
    m.E_tgt = detail::init_param({m.tgt_vocab.size(), d}, rng, 0.1);
    if (m.is_gru()) {
      for (int l = 0; l < cfg.layers; ++l) {
        m.enc_gru.push_back(GruCell::init(l == 0 ? d : h, h, rng));
        m.dec_gru.push_back(GruCell::init(l == 0 ? d : h, h, rng));
      }
      m.Wc = detail::init_param({2 * h, h}, rng, std::sqrt(1.0 / (2 * h)));
      m.bc = Tensor::zeros({1, h}, true);
      m.Wout = detail::init_param({h, m.tgt_vocab.size()}, rng, std::sqrt(1.0 / h));
    } else {
      if (h != d) throw std::invalid_argument("NmtModel: attn arch requires hidden == emb_dim");
      auto ones = [](int n) {
        Tensor t = Tensor::zeros({1, n}, true);
        std::fill(t.data->begin(), t.data->end(), 1.0);
        return t;
      };
      for (int l = 0; l < cfg.layers; ++l) {
        m.enc_attn.push_back(AttnLayer::init(d, 2 * d, false, rng));
        m.dec_attn.push_back(AttnLayer::init(d, 2 * d, true, rng));
      }
      m.enc_lng = ones(d);
      m.enc_lnb = Tensor::zeros({1, d}, true);
      m.dec_lng = ones(d);
      m.dec_lnb = Tensor::zeros({1, d}, true);
      m.Wout = detail::init_param({d, m.tgt_vocab.size()}, rng, std::sqrt(1.0 / d));
    }
    m.bout = Tensor::zeros({1, m.tgt_vocab.size()}, true);
    return m;
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out{E_src, E_tgt};
    for (const auto& c : enc_gru) c.collect(out);
    for (const auto& c : dec_gru) c.collect(out);
    if (is_gru()) {
      out.push_back(Wc);
      out.push_back(bc);
    }
    for (const auto& l : enc_attn) l.collect(out);
    for (const auto& l : dec_attn) l.collect(out);
    if (!is_gru()) {
      for (const Tensor* t : {&enc_lng, &enc_lnb, &dec_lng, &dec_lnb}) out.push_back(*t);
    }
    out.push_back(Wout);
    out.push_back(bout);
    return out;
  }

  // X: n x emb source embeddings -> encoder states (n x hidden)
  Tensor encode(const Tensor& X, Rng* drop_rng = nullptr, double drop = 0.0) const {
    if (is_gru()) {
      int n = X.height();
      Tensor layer_in = X;
      for (int l = 0; l < cfg.layers; ++l) {
        Tensor h = Tensor::zeros({1, cfg.hidden});
        std::vector<Tensor> states;
        states.reserve(n);
        for (int t = 0; t < n; ++t) {
          h = enc_gru[l].step(row(layer_in, t), h);
          states.push_back(h);
        }
        layer_in = concat_rows(states);
        if (drop_rng) layer_in = dropout(layer_in, drop, *drop_rng);
      }
      return layer_in;
    }
    Tensor x = add(X, detail::positional_encoding(0, X.height(), cfg.emb_dim));
    if (drop_rng) x = dropout(x, drop, *drop_rng);
    for (const auto& l : enc_attn) x = l.forward(x, nullptr, nullptr);
    return layer_norm(x, enc_lng, enc_lnb);
  }

  // full teacher-forced decode: returns T x |V_tgt| logits
  Tensor decode_teacher_forced(const Tensor& H, const std::vector<int>& in_ids, Rng* drop_rng = nullptr,
                               double drop = 0.0) const {
    Tensor emb = rows(E_tgt, in_ids);
    if (is_gru()) {
      int T = static_cast<int>(in_ids.size());
      std::vector<Tensor> hs(cfg.layers, Tensor::zeros({1, cfg.hidden}));
      std::vector<Tensor> combs;
      combs.reserve(T);
      for (int t = 0; t < T; ++t) {
        Tensor x = row(emb, t);
        if (drop_rng) x = dropout(x, drop, *drop_rng);
        for (int l = 0; l < cfg.layers; ++l) {
          hs[l] = dec_gru[l].step(x, hs[l]);
          x = hs[l];
        }
        combs.push_back(attend_combine(x, H));
      }
      Tensor comb = concat_rows(combs);
      if (drop_rng) comb = dropout(comb, drop, *drop_rng);
      return add_rowvec(matmul(comb, Wout), bout);
    }
    int T = static_cast<int>(in_ids.size());
    Tensor x = add(emb, detail::positional_encoding(0, T, cfg.emb_dim));
    if (drop_rng) x = dropout(x, drop, *drop_rng);
    Tensor mask = detail::causal_mask(T);
    for (const auto& l : dec_attn) x = l.forward(x, &mask, &H);
    x = layer_norm(x, dec_lng, dec_lnb);
    return add_rowvec(matmul(x, Wout), bout);
  }

  Translation beam_decode(const std::vector<int>& src_ids, int beam_size, int max_len, bool record = false,
                          QueryCounter* qc = nullptr) const {
    if (src_ids.empty()) throw std::invalid_argument("beam_decode: empty source");
    Tensor X = rows(strip_grad(E_src), src_ids);
    return decode_embedded(X, beam_size, max_len, record, qc);
  }

  // gamma: n x |V_src| row-stochastic; trace logits differentiable w.r.t. gamma
  Translation forward_relaxed(const Tensor& gamma, int beam_size, int max_len, QueryCounter* qc = nullptr) const {
    int n = gamma.height();
    if (gamma.width() != src_vocab.size())
      throw std::invalid_argument("forward_relaxed: gamma width " + std::to_string(gamma.width()) +
                                  " != source vocab size " + std::to_string(src_vocab.size()));
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < gamma.width(); ++j) s += gamma.at(static_cast<std::size_t>(i) * gamma.width() + j);
      if (std::fabs(s - 1.0) > 1e-9)
        throw std::invalid_argument("forward_relaxed: gamma row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
    Tensor X = embedding_mix(gamma, strip_grad(E_src));
    return decode_embedded(X, beam_size, max_len, true, qc);
  }

  // decode from an explicit source embedding matrix (used by attacks that
  // need gradients w.r.t. the input embeddings)
  Translation decode_embedded(const Tensor& X, int beam_size, int max_len, bool record,
                              QueryCounter* qc = nullptr) const {
    if (beam_size < 1) throw std::invalid_argument("beam_decode: beam_size must be >= 1");
    if (qc) qc->bump();
    Tensor H = encode(X);
    return is_gru() ? beam_search_gru(H, beam_size, max_len, record) : beam_search_attn(H, beam_size, max_len, record);
  }

  double sentence_loss(const std::vector<int>& src_ids, const std::vector<int>& tgt_ids, Rng& drop_rng) {
    Tensor X = rows(E_src, src_ids);
    X = dropout(X, cfg.dropout, drop_rng);
    Tensor H = encode(X, &drop_rng, cfg.dropout);
    std::vector<int> in_ids{Vocabulary::kBos};
    in_ids.insert(in_ids.end(), tgt_ids.begin(), tgt_ids.end());
    std::vector<int> targets(tgt_ids);
    targets.push_back(Vocabulary::kEos);
    Tensor logits = decode_teacher_forced(H, in_ids, &drop_rng, cfg.dropout);
    Tensor loss = smoothed_cross_entropy(logits, targets, cfg.label_smoothing);
    backward(loss);
    return loss.item();
  }

  // Shares parameter storage but drops requires_grad, so decoding builds tape
  // only along paths that start at a grad-enabled input (gamma or embeddings).
  NmtModel frozen_view() const {
    NmtModel m = *this;
    auto strip_all = [](std::vector<Tensor*> ts) {
      for (Tensor* t : ts) *t = strip_grad(*t);
    };
    strip_all({&m.E_src, &m.E_tgt, &m.Wc, &m.bc, &m.Wout, &m.bout, &m.enc_lng, &m.enc_lnb, &m.dec_lng, &m.dec_lnb});
    for (auto& c : m.enc_gru) strip_all({&c.Wz, &c.Uz, &c.bz, &c.Wr, &c.Ur, &c.br, &c.Wn, &c.Un, &c.bn});
    for (auto& c : m.dec_gru) strip_all({&c.Wz, &c.Uz, &c.bz, &c.Wr, &c.Ur, &c.br, &c.Wn, &c.Un, &c.bn});
    for (auto& l : m.enc_attn)
      strip_all({&l.ln1g, &l.ln1b, &l.Wq, &l.Wk, &l.Wv, &l.Wo, &l.lnxg, &l.lnxb, &l.Wq2, &l.Wk2, &l.Wv2, &l.Wo2,
                 &l.ln2g, &l.ln2b, &l.W1, &l.b1, &l.W2, &l.b2});
    for (auto& l : m.dec_attn)
      strip_all({&l.ln1g, &l.ln1b, &l.Wq, &l.Wk, &l.Wv, &l.Wo, &l.lnxg, &l.lnxb, &l.Wq2, &l.Wk2, &l.Wv2, &l.Wo2,
                 &l.ln2g, &l.ln2b, &l.W1, &l.b1, &l.W2, &l.b2});
    return m;
  }

  void save(const std::string& path) const {
    src_vocab.save(path + ".src.vocab");
    tgt_vocab.save(path + ".tgt.vocab");
    CheckpointWriter w(path, src_vocab.hash() ^ (tgt_vocab.hash() * 1099511628211ull));
    w.write_string("nmt");
    w.write_string(cfg.arch);
    w.write_u32(static_cast<std::uint32_t>(cfg.emb_dim));
    w.write_u32(static_cast<std::uint32_t>(cfg.hidden));
    w.write_u32(static_cast<std::uint32_t>(cfg.layers));
    auto ps = params();
    w.write_u32(static_cast<std::uint32_t>(ps.size()));
    for (const Tensor& p : ps) w.write_tensor(p);
  }

  static NmtModel load(const std::string& path) {
    Vocabulary sv = Vocabulary::load(path + ".src.vocab");
    Vocabulary tv = Vocabulary::load(path + ".tgt.vocab");
    CheckpointReader r(path, sv.hash() ^ (tv.hash() * 1099511628211ull));
    std::string kind = r.read_string();
    if (kind != "nmt") throw std::runtime_error("checkpoint: expected an nmt model, found '" + kind + "'");
    NmtConfig cfg;
    cfg.arch = r.read_string();
    cfg.emb_dim = static_cast<int>(r.read_u32());
    cfg.hidden = static_cast<int>(r.read_u32());
    cfg.layers = static_cast<int>(r.read_u32());
    NmtModel m = init(std::move(sv), std::move(tv), cfg);
    auto ps = m.params();
    std::uint32_t n = r.read_u32();
    if (n != ps.size())
      throw std::runtime_error("checkpoint: parameter count mismatch, file has " + std::to_string(n) +
                               ", model expects " + std::to_string(ps.size()));
    for (Tensor& p : ps) r.read_tensor_into(p);
    return m;
  }

 private:
  static Tensor strip_grad(const Tensor& t) {
    Tensor c = t;
    c.requires_grad = false;
    c.grad.reset();
    c.node.reset();
    return c;
  }

  // Luong-style attention over encoder states + combine layer
  Tensor attend_combine(const Tensor& s, const Tensor& H) const {
    Tensor alpha = softmax(matmul_nt(s, H));
    Tensor ctx = matmul(alpha, H);
    return tanh_op(add_rowvec(matmul(concat_cols(s, ctx), Wc), bc));
  }

  struct BeamHyp {
    std::vector<int> tokens;
    double logp = 0.0;
    std::vector<std::pair<int, int>> path;  // (step, row in that step's logits)
  };

  struct Finished {
    BeamHyp hyp;
    bool truncated = false;
    double norm_score() const {
      return hyp.tokens.empty() ? -1e30 : hyp.logp / static_cast<double>(hyp.tokens.size());
    }
  };

  // shared candidate selection; returns indices of chosen (beam,row) pairs
  struct Cand {
    double score;
    int beam;
    int token;
  };

  static void select_top(std::vector<Cand>& cands, int k) {
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.beam != b.beam) return a.beam < b.beam;
      return a.token < b.token;
    });
    if (static_cast<int>(cands.size()) > k) cands.resize(k);
  }

  static void row_log_softmax(const double* x, double* out, int v) {
    double mx = x[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) z += std::exp(x[j] - mx);
    double lz = mx + std::log(z);
    for (int j = 0; j < v; ++j) out[j] = x[j] - lz;
  }

  Translation finalize(std::vector<Finished>& finished, const std::vector<Tensor>& step_logits, bool record) const {
    const Finished* best = nullptr;
    for (const Finished& f : finished)
      if (!best || f.norm_score() > best->norm_score() || (f.norm_score() == best->norm_score() && !f.truncated))
        best = &f;
    Translation tr;
    tr.token_ids = best->hyp.tokens;
    tr.truncated = best->truncated;
    tr.text = tgt_vocab.detokenize(tr.token_ids);
    if (record) {
      auto trace = std::make_shared<DecodeTrace>();
      for (std::size_t k = 0; k < best->hyp.path.size(); ++k) {
        auto [step, r] = best->hyp.path[k];
        trace->step_logits.push_back(row(step_logits[static_cast<std::size_t>(step)], r));
        trace->beam_ids.push_back(r);
      }
      trace->tokens = tr.token_ids;
      tr.trace = std::move(trace);
    }
    return tr;
  }

  Translation beam_search_gru(const Tensor& H, int beam_size, int max_len, bool record) const {
    int v = tgt_vocab.size();
    std::vector<BeamHyp> beams{BeamHyp{}};
    std::vector<Tensor> hidden(cfg.layers, Tensor::zeros({1, cfg.hidden}));
    std::vector<Tensor> step_logits;
    std::vector<Finished> finished;

    for (int step = 0; step < max_len; ++step) {
      int nb = static_cast<int>(beams.size());
      std::vector<int> prev(nb);
      for (int i = 0; i < nb; ++i) prev[i] = beams[i].tokens.empty() ? Vocabulary::kBos : beams[i].tokens.back();
      Tensor x = rows(E_tgt, prev);
      std::vector<Tensor> new_hidden(cfg.layers);
      for (int l = 0; l < cfg.layers; ++l) {
        new_hidden[l] = dec_gru[l].step(x, hidden[l]);
        x = new_hidden[l];
      }
      Tensor comb = attend_combine(x, H);
      Tensor logits = add_rowvec(matmul(comb, Wout), bout);
      if (record) step_logits.push_back(logits);

      std::vector<Cand> cands;
      std::vector<double> lp(static_cast<std::size_t>(v));
      for (int i = 0; i < nb; ++i) {
        row_log_softmax(logits.data->data() + static_cast<std::size_t>(i) * v, lp.data(), v);
        for (int t = 0; t < v; ++t)
          if (t != Vocabulary::kPad && t != Vocabulary::kBos) cands.push_back({beams[i].logp + lp[t], i, t});
      }
      select_top(cands, beam_size);

      std::vector<BeamHyp> next;
      std::vector<int> parent;
      for (const Cand& c : cands) {
        BeamHyp h = beams[c.beam];
        h.tokens.push_back(c.token);
        h.logp = c.score;
        h.path.emplace_back(step, c.beam);
        if (c.token == Vocabulary::kEos) {
          finished.push_back({std::move(h), false});
        } else {
          next.push_back(std::move(h));
          parent.push_back(c.beam);
        }
      }
      if (static_cast<int>(finished.size()) >= beam_size || next.empty()) break;
      beams = std::move(next);
      for (int l = 0; l < cfg.layers; ++l) hidden[l] = rows(new_hidden[l], parent);
      if (step + 1 == max_len)
        for (BeamHyp& h : beams) finished.push_back({std::move(h), true});
    }
    if (finished.empty())
      throw std::logic_error("beam_decode: no hypotheses produced");
    return finalize(finished, step_logits, record);
  }

  Translation beam_search_attn(const Tensor& H, int beam_size, int max_len, bool record) const {
    int v = tgt_vocab.size();
    std::vector<BeamHyp> beams{BeamHyp{}};
    std::vector<Tensor> step_logits;
    std::vector<Finished> finished;

    for (int step = 0; step < max_len; ++step) {
      int nb = static_cast<int>(beams.size());
      std::vector<Tensor> rows_out;
      rows_out.reserve(nb);
      for (int i = 0; i < nb; ++i) {
        std::vector<int> in_ids{Vocabulary::kBos};
        in_ids.insert(in_ids.end(), beams[i].tokens.begin(), beams[i].tokens.end());
        int T = static_cast<int>(in_ids.size());
        Tensor x = add(rows(E_tgt, in_ids), detail::positional_encoding(0, T, cfg.emb_dim));
        Tensor mask = detail::causal_mask(T);
        for (const auto& l : dec_attn) x = l.forward(x, &mask, &H);
        x = layer_norm(x, dec_lng, dec_lnb);
        rows_out.push_back(row(x, T - 1));
      }
      Tensor logits = add_rowvec(matmul(concat_rows(rows_out), Wout), bout);
      if (record) step_logits.push_back(logits);

      std::vector<Cand> cands;
      std::vector<double> lp(static_cast<std::size_t>(v));
      for (int i = 0; i < nb; ++i) {
        row_log_softmax(logits.data->data() + static_cast<std::size_t>(i) * v, lp.data(), v);
        for (int t = 0; t < v; ++t)
          if (t != Vocabulary::kPad && t != Vocabulary::kBos) cands.push_back({beams[i].logp + lp[t], i, t});
      }
      select_top(cands, beam_size);

      std::vector<BeamHyp> next;
      for (const Cand& c : cands) {
        BeamHyp h = beams[c.beam];
        h.tokens.push_back(c.token);
        h.logp = c.score;
        h.path.emplace_back(step, c.beam);
        if (c.token == Vocabulary::kEos)
          finished.push_back({std::move(h), false});
        else
          next.push_back(std::move(h));
      }
      if (static_cast<int>(finished.size()) >= beam_size || next.empty()) break;
      beams = std::move(next);
      if (step + 1 == max_len)
        for (BeamHyp& h : beams) finished.push_back({std::move(h), true});
    }
    if (finished.empty())
      throw std::logic_error("beam_decode: no hypotheses produced");
    return finalize(finished, step_logits, record);
  }
};

// parallel corpus as word sequences
using ParallelCorpus = std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>;

inline Vocabulary build_vocab_from_sentences(const std::vector<std::vector<std::string>>& sents) {
  Vocabulary v;
  for (const auto& words : sents)
    for (const std::string& t : tokenize_words(words)) v.add(t);
  return v;
}

inline NmtModel train_nmt(const ParallelCorpus& corpus, const NmtConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("train_nmt: empty corpus");
  std::vector<std::vector<std::string>> src, tgt;
  for (const auto& [s, t] : corpus) {
    src.push_back(s);
    tgt.push_back(t);
  }
  NmtModel model = NmtModel::init(build_vocab_from_sentences(src), build_vocab_from_sentences(tgt), cfg);

  std::vector<std::pair<std::vector<int>, std::vector<int>>> encoded;
  encoded.reserve(corpus.size());
  for (const auto& [s, t] : corpus)
    encoded.emplace_back(model.src_vocab.encode_words(s), model.tgt_vocab.encode_words(t));

  Adam opt(model.params(), cfg.lr, cfg.beta1, cfg.beta2);
  Rng shuffle_rng(Rng::derive(cfg.seed, 0x5FF1E));
  Rng drop_rng(Rng::derive(cfg.seed, 0xD60));

  long step = 0;
  std::vector<int> order(encoded.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(static_cast<int>(i)))]);
    for (int idx : order) {
      ++step;
      opt.zero_grad();
      double loss = model.sentence_loss(encoded[idx].first, encoded[idx].second, drop_rng);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_nmt: loss diverged (non-finite) at step " + std::to_string(step));
      opt.step();
    }
  }
  return model;
}

}  // namespace twga
