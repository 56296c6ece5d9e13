#pragma once

// The four comparison attacks, all constrained to leave the targeted span
// untouched: random replacement, gradient-ranked greedy substitution,
// first-order token flips, and embedding-space optimization with projection.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "twga/attack.hpp"

namespace twga {

struct BaselineConfig {
  double rr_ratio = 0.30;
  int rr_runs = 3;
  int k_neighbors = 8;      // greedy-substitution candidate list size
  int s2s_iters = 50;
  bool s2s_early_stop = true;
  double s2s_lr = 0.5;
  double mu = 3.0;
  int beam_size = 2;
  int max_len = 48;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<int> perturbable_positions(const EvaluationSample& sample) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(sample.x_ids.size()); ++i)
    if (i < sample.span_begin || i >= sample.span_end) out.push_back(i);
  return out;
}

inline bool flag_compatible(const Vocabulary& vocab, int original, int candidate) {
  if (candidate == original || vocab.is_special(candidate)) return false;
  const TokenFlags& a = vocab.flags(original);
  const TokenFlags& b = vocab.flags(candidate);
  return a.continuation == b.continuation && a.cased == b.cased;
}

inline std::vector<int> compatible_tokens(const Vocabulary& vocab, int original) {
  std::vector<int> out;
  for (int id = 0; id < vocab.size(); ++id)
    if (flag_compatible(vocab, original, id)) out.push_back(id);
  return out;
}

// raw (tape-free) adversarial loss of a recorded decode
inline double l_adv_value(const Translation& y, const std::vector<int>& h_set, double mu) {
  double total = 0.0;
  for (const Tensor& st : y.trace->step_logits) total += margin_loss(st, h_set, mu).item();
  return total;
}

// gradient of L_adv w.r.t. the input embedding rows at x; one victim query
inline Tensor input_gradient(const NmtModel& victim, const std::vector<int>& x, const std::vector<int>& h_set,
                             double mu, int beam_size, int max_len, Translation* y_out, QueryCounter* qc) {
  Tensor X = rows(victim.E_src, x);
  Tensor leaf = Tensor::zeros(X.shape, true);
  *leaf.data = *X.data;
  Translation y = victim.decode_embedded(leaf, beam_size, max_len, true, qc);
  Tensor loss = adversarial_loss(*y.trace, h_set, mu);
  if (loss.item() != 0.0) backward(loss);
  if (y_out) *y_out = y;
  Tensor g = Tensor::zeros(X.shape);
  if (leaf.grad) *g.data = *leaf.grad;
  return g;
}

inline void finish(AttackResult& res, const EvaluationSample& sample) {
  res.edit = edit_score(sample.x_ids, res.x_adv);
}

}  // namespace detail

// replace round(ratio * n_perturbable) random non-targeted tokens with random
// flag-compatible vocabulary tokens; one query
inline AttackResult random_replace_attack(const NmtModel& model, const CausalLm& l2r, const CausalLm& r2l,
                                          const EvaluationSample& sample, const BaselineConfig& cfg, double delta,
                                          QueryCounter* qc = nullptr) {
  if (cfg.rr_ratio <= 0.0 || cfg.rr_ratio > 1.0) throw std::invalid_argument("random_replace_attack: ratio out of (0,1]");
  NmtModel victim = model.frozen_view();
  Rng rng(Rng::derive(cfg.seed, 0x22));
  AttackResult res;
  res.x_adv = sample.x_ids;

  std::vector<int> positions = detail::perturbable_positions(sample);
  int count = static_cast<int>(std::floor(cfg.rr_ratio * static_cast<double>(positions.size()) + 0.5));
  for (int k = 0; k < count; ++k) {
    int j = k + rng.uniform_int(static_cast<int>(positions.size()) - k);
    std::swap(positions[static_cast<std::size_t>(k)], positions[static_cast<std::size_t>(j)]);
    int pos = positions[static_cast<std::size_t>(k)];
    std::vector<int> cands = detail::compatible_tokens(model.src_vocab, sample.x_ids[static_cast<std::size_t>(pos)]);
    if (cands.empty()) continue;
    res.x_adv[static_cast<std::size_t>(pos)] = cands[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(cands.size())))];
  }

  res.y_adv = victim.beam_decode(res.x_adv, cfg.beam_size, cfg.max_len, false, qc);
  res.query_count = 1;
  res.verdict = check_validity(sample.x_ids, res.x_adv, res.y_adv, sample, l2r, r2l, delta);
  res.success = res.verdict.status == ValidityStatus::kValid;
  detail::finish(res, sample);
  return res;
}

// rank positions by the gradient norm of L_adv at the input embedding, then
// greedily try the top-K cosine neighbors of each token
inline AttackResult wtextfooler_attack(const NmtModel& model, const CausalLm& l2r, const CausalLm& r2l,
                                       const EvaluationSample& sample, const BaselineConfig& cfg, double delta,
                                       QueryCounter* qc = nullptr) {
  NmtModel victim = model.frozen_view();
  AttackResult res;
  res.x_adv = sample.x_ids;

  Translation y0;
  Tensor grad = detail::input_gradient(victim, sample.x_ids, sample.h_p, cfg.mu, cfg.beam_size, cfg.max_len, &y0, qc);
  res.query_count = 1;
  res.y_adv = y0;
  res.verdict = check_validity(sample.x_ids, res.x_adv, y0, sample, l2r, r2l, delta);
  double cur_l_adv = detail::l_adv_value(y0, sample.h_p, cfg.mu);
  res.final_l_adv = cur_l_adv;

  int d = grad.width();
  std::vector<std::pair<double, int>> ranked;  // (-norm, position) for a stable ascending sort
  for (int pos : detail::perturbable_positions(sample)) {
    double norm = 0.0;
    const double* g = grad.data->data() + static_cast<std::size_t>(pos) * d;
    for (int j = 0; j < d; ++j) norm += g[j] * g[j];
    ranked.emplace_back(-std::sqrt(norm), pos);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  const Tensor& E = victim.E_src;
  auto cosine = [&](int a, int b) {
    const double* ea = E.data->data() + static_cast<std::size_t>(a) * d;
    const double* eb = E.data->data() + static_cast<std::size_t>(b) * d;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int j = 0; j < d; ++j) {
      dot += ea[j] * eb[j];
      na += ea[j] * ea[j];
      nb += eb[j] * eb[j];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
  };

  for (const auto& [neg_norm, pos] : ranked) {
    int original = sample.x_ids[static_cast<std::size_t>(pos)];
    std::vector<std::pair<double, int>> neigh;  // (-cosine, id)
    for (int id : detail::compatible_tokens(model.src_vocab, original)) neigh.emplace_back(-cosine(original, id), id);
    std::stable_sort(neigh.begin(), neigh.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    if (static_cast<int>(neigh.size()) > cfg.k_neighbors) neigh.resize(static_cast<std::size_t>(cfg.k_neighbors));

    for (const auto& [neg_cos, cand] : neigh) {
      std::vector<int> trial = res.x_adv;
      trial[static_cast<std::size_t>(pos)] = cand;
      Translation y = victim.beam_decode(trial, cfg.beam_size, cfg.max_len, true, qc);
      ++res.query_count;
      double l = detail::l_adv_value(y, sample.h_p, cfg.mu);
      ValidityVerdict v = check_validity(sample.x_ids, trial, y, sample, l2r, r2l, delta);
      if (v.status == ValidityStatus::kValid) {
        res.x_adv = trial;
        res.y_adv = y;
        res.verdict = v;
        res.final_l_adv = l;
        res.success = true;
        detail::finish(res, sample);
        return res;
      }
      if (l < cur_l_adv) {  // keep the substitution and move on
        res.x_adv = trial;
        res.y_adv = y;
        res.verdict = v;
        cur_l_adv = l;
        res.final_l_adv = l;
        break;
      }
    }
  }
  detail::finish(res, sample);
  return res;
}

// first-order flip score for swapping position pos to token cand
inline double flip_score(const Tensor& grad, const Tensor& E, const std::vector<int>& x, int pos, int cand) {
  int d = E.width();
  const double* g = grad.data->data() + static_cast<std::size_t>(pos) * d;
  const double* e_old = E.data->data() + static_cast<std::size_t>(x[static_cast<std::size_t>(pos)]) * d;
  const double* e_new = E.data->data() + static_cast<std::size_t>(cand) * d;
  double s = 0.0;
  for (int j = 0; j < d; ++j) s += (e_new[j] - e_old[j]) * g[j];
  return s;
}

// iterative single-token flips along the steepest first-order descent of
// L_adv; one differentiable decode (= one query) per iteration
inline AttackResult targeted_flips_attack(const NmtModel& model, const CausalLm& l2r, const CausalLm& r2l,
                                          const EvaluationSample& sample, const BaselineConfig& cfg, double delta,
                                          QueryCounter* qc = nullptr) {
  NmtModel victim = model.frozen_view();
  AttackResult res;
  res.x_adv = sample.x_ids;
  std::vector<bool> flipped(sample.x_ids.size(), false);

  while (true) {
    Translation y;
    Tensor grad = detail::input_gradient(victim, res.x_adv, sample.h_p, cfg.mu, cfg.beam_size, cfg.max_len, &y, qc);
    ++res.query_count;
    res.y_adv = y;
    res.final_l_adv = detail::l_adv_value(y, sample.h_p, cfg.mu);
    res.verdict = check_validity(sample.x_ids, res.x_adv, y, sample, l2r, r2l, delta);
    if (res.verdict.status == ValidityStatus::kValid) {
      res.success = true;
      break;
    }

    int best_pos = -1, best_cand = -1;
    double best_score = 0.0;  // only strictly descending flips qualify
    for (int pos : detail::perturbable_positions(sample)) {
      if (flipped[static_cast<std::size_t>(pos)]) continue;
      for (int cand : detail::compatible_tokens(model.src_vocab, res.x_adv[static_cast<std::size_t>(pos)])) {
        double s = flip_score(grad, victim.E_src, res.x_adv, pos, cand);
        if (s < best_score) {
          best_score = s;
          best_pos = pos;
          best_cand = cand;
        }
      }
    }
    if (best_pos < 0) break;  // position exhaustion or no descending flip
    res.x_adv[static_cast<std::size_t>(best_pos)] = best_cand;
    flipped[static_cast<std::size_t>(best_pos)] = true;
  }
  detail::finish(res, sample);
  return res;
}

// continuous embedding-space attack minimizing the margin loss, projected back
// to flag-compatible tokens after each step; candidate decodes only when the
// projection actually changes
inline AttackResult seq2sick_attack(const NmtModel& model, const CausalLm& l2r, const CausalLm& r2l,
                                    const EvaluationSample& sample, const BaselineConfig& cfg, double delta,
                                    QueryCounter* qc = nullptr) {
  NmtModel victim = model.frozen_view();
  AttackResult res;
  res.x_adv = sample.x_ids;

  int n = static_cast<int>(sample.x_ids.size());
  int d = victim.E_src.width();
  Tensor W = Tensor::zeros({n, d}, true);
  *W.data = *rows(victim.E_src, sample.x_ids).data;
  Adam opt({W}, cfg.s2s_lr);

  std::vector<int> projected = sample.x_ids;
  auto project = [&]() {
    std::vector<int> out = sample.x_ids;
    for (int pos : detail::perturbable_positions(sample)) {
      const double* w = W.data->data() + static_cast<std::size_t>(pos) * d;
      int best = sample.x_ids[static_cast<std::size_t>(pos)];
      double best_dist = 1e300;
      std::vector<int> cands = detail::compatible_tokens(model.src_vocab, sample.x_ids[static_cast<std::size_t>(pos)]);
      cands.push_back(sample.x_ids[static_cast<std::size_t>(pos)]);
      for (int id : cands) {
        const double* e = victim.E_src.data->data() + static_cast<std::size_t>(id) * d;
        double dist = 0.0;
        for (int j = 0; j < d; ++j) dist += (w[j] - e[j]) * (w[j] - e[j]);
        if (dist < best_dist) {
          best_dist = dist;
          best = id;
        }
      }
      out[static_cast<std::size_t>(pos)] = best;
    }
    return out;
  };

  for (int it = 0; it < cfg.s2s_iters; ++it) {
    opt.zero_grad();
    Translation y = victim.decode_embedded(W, cfg.beam_size, cfg.max_len, true, qc);
    ++res.query_count;
    Tensor loss = adversarial_loss(*y.trace, sample.h_p, cfg.mu);
    double l = loss.item();
    if (!std::isfinite(l)) throw std::runtime_error("seq2sick_attack: non-finite loss at iteration " + std::to_string(it + 1));
    res.final_l_adv = l;
    if (res.query_count == 1) {
      // the initial decode doubles as the clean-input verdict
      res.y_adv = y;
      res.verdict = check_validity(sample.x_ids, sample.x_ids, y, sample, l2r, r2l, delta);
    }
    if (cfg.s2s_early_stop && l == 0.0) break;
    if (l != 0.0) {
      backward(loss);
      opt.step();
    }

    std::vector<int> cand = project();
    if (cand != projected) {
      // re-center on the projected tokens so optimization continues from a
      // real sentence whenever the projection moves
      for (int pos = 0; pos < n; ++pos) {
        const double* e = victim.E_src.data->data() + static_cast<std::size_t>(cand[static_cast<std::size_t>(pos)]) * d;
        double* w = W.data->data() + static_cast<std::size_t>(pos) * d;
        std::copy(e, e + d, w);
      }
      projected = cand;
      Translation yc = victim.beam_decode(cand, cfg.beam_size, cfg.max_len, false, qc);
      ++res.query_count;
      ValidityVerdict v = check_validity(sample.x_ids, cand, yc, sample, l2r, r2l, delta);
      res.x_adv = cand;
      res.y_adv = yc;
      res.verdict = v;
      if (v.status == ValidityStatus::kValid) {
        res.success = true;
        break;
      }
    }
  }
  detail::finish(res, sample);
  return res;
}

}  // namespace twga
