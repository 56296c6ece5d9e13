#pragma once

// The targeted word-removal attack: a margin loss that pushes the reference
// translations out of every decode step, a relaxed objective optimized over
// the probability matrix, and the sample-perturb-verify retry loop.

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "twga/gumbel.hpp"
#include "twga/optim.hpp"
#include "twga/validity.hpp"

namespace twga {

struct AttackConfig {
  double mu = 3.0;          // margin
  double lambda1 = 1.0;     // forward-lm fluency weight
  double lambda2 = 1.0;     // backward-lm fluency weight
  double epsilon = 12.0;    // original-token logit bias
  double lr = 3e-3;
  int opt_iters = 50;
  int max_retries = 100;
  double tau = 1.0;
  int beam_size = 2;
  int max_len = 48;
  std::uint64_t seed = 0;
};

struct AttackResult {
  bool success = false;
  std::vector<int> x_adv;
  Translation y_adv;
  double edit = 0.0;
  long query_count = 0;
  int retries_used = 0;
  double final_l_adv = 0.0;
  ValidityVerdict verdict;
};

// L_mar(theta) = sum_{h in h_set} max(theta_h - max_{t not in h_set} theta_t + mu, 0)
inline Tensor margin_loss(const Tensor& theta, const std::vector<int>& h_set, double mu) {
  int v = static_cast<int>(theta.numel());
  if (h_set.empty()) throw std::invalid_argument("margin_loss: empty target set");
  std::vector<bool> is_target(static_cast<std::size_t>(v), false);
  for (int h : h_set) {
    if (h < 0 || h >= v) throw std::out_of_range("margin_loss: target id " + std::to_string(h) + " outside logits of " + std::to_string(v));
    is_target[static_cast<std::size_t>(h)] = true;
  }
  int rival = -1;
  for (int t = 0; t < v; ++t) {
    if (is_target[static_cast<std::size_t>(t)]) continue;
    if (rival < 0 || theta.at(static_cast<std::size_t>(t)) > theta.at(static_cast<std::size_t>(rival))) rival = t;
  }
  if (rival < 0) throw std::invalid_argument("margin_loss: target set covers the whole vocabulary");

  Tensor out = detail::make_out({1}, theta.requires_grad);
  double rv = theta.at(static_cast<std::size_t>(rival));
  std::vector<int> active;  // targets with a positive hinge
  double loss = 0.0;
  for (int h : h_set) {
    double hinge = theta.at(static_cast<std::size_t>(h)) - rv + mu;
    if (hinge > 0.0) {
      loss += hinge;
      active.push_back(h);
    }
  }
  (*out.data)[0] = loss;
  if (out.node) {
    detail::attach_parent(out, theta);
    auto og = out.grad, tg = theta.grad;
    out.node->backprop = [og, tg, active, rival]() {
      double g = (*og)[0];
      for (int h : active) {
        (*tg)[static_cast<std::size_t>(h)] += g;
        (*tg)[static_cast<std::size_t>(rival)] -= g;
      }
    };
  }
  return out;
}

// sum of the per-step margin losses over a recorded decode
inline Tensor adversarial_loss(const DecodeTrace& trace, const std::vector<int>& h_set, double mu) {
  if (trace.step_logits.empty()) throw std::invalid_argument("adversarial_loss: empty trace");
  Tensor total = margin_loss(trace.step_logits[0], h_set, mu);
  for (std::size_t t = 1; t < trace.step_logits.size(); ++t)
    total = add(total, margin_loss(trace.step_logits[t], h_set, mu));
  return total;
}

struct ObjectiveValue {
  Tensor loss;        // (1/k) L_adv + lambda1 L_nll + lambda2 L_nll'
  double l_adv = 0.0;
  Translation y;
};

// single-draw estimate of the relaxed objective; gradient flows to P only
inline ObjectiveValue objective(const NmtModel& model, const CausalLm& l2r, const CausalLm& r2l, const Tensor& P,
                                const EvaluationSample& sample, const AttackConfig& cfg, Rng& rng,
                                QueryCounter* qc = nullptr) {
  int k = static_cast<int>(sample.Z.size());
  if (k == 0) throw std::invalid_argument("objective: sample has no reference translations");
  NmtModel victim = model.frozen_view();
  CausalLm fwd = l2r.frozen_view(), bwd = r2l.frozen_view();

  Tensor noise = sample_gumbel(P.height(), P.width(), rng);
  Tensor gamma = gumbel_softmax(P, noise, cfg.tau);

  ObjectiveValue out;
  out.y = victim.forward_relaxed(gamma, cfg.beam_size, cfg.max_len, qc);
  Tensor l_adv = adversarial_loss(*out.y.trace, sample.h_p, cfg.mu);
  out.l_adv = l_adv.item();
  out.loss = scale(l_adv, 1.0 / static_cast<double>(k));
  if (cfg.lambda1 != 0.0) out.loss = add(out.loss, scale(fwd.nll_relaxed(gamma), cfg.lambda1));
  if (cfg.lambda2 != 0.0) out.loss = add(out.loss, scale(bwd.nll_relaxed(gamma), cfg.lambda2));
  return out;
}

struct OptimizeOutcome {
  long queries = 0;
  double final_l_adv = 0.0;
};

// Adam over the non-frozen rows of P; one relaxed decode per iteration, early
// stop the first time the adversarial loss reaches zero
inline OptimizeOutcome optimize_P(const NmtModel& model, const CausalLm& l2r, const CausalLm& r2l,
                                  ProbabilityMatrix& pm, const EvaluationSample& sample, const AttackConfig& cfg,
                                  Rng& rng, QueryCounter* qc = nullptr) {
  Adam opt({pm.P}, cfg.lr);
  OptimizeOutcome out;
  std::vector<double> last_finite = *pm.P.data;
  for (int it = 0; it < cfg.opt_iters; ++it) {
    ObjectiveValue obj = objective(model, l2r, r2l, pm.P, sample, cfg, rng, qc);
    ++out.queries;
    if (!std::isfinite(obj.loss.item())) {
      *pm.P.data = last_finite;
      throw std::runtime_error("optimize_P: non-finite objective at iteration " + std::to_string(it + 1));
    }
    out.final_l_adv = obj.l_adv;
    if (obj.l_adv == 0.0) break;
    last_finite = *pm.P.data;
    opt.zero_grad();
    backward(obj.loss);
    pm.clear_frozen_grads();
    opt.step();
  }
  return out;
}

// replace each non-targeted token by its Gamma argmax when that candidate
// carries the same "@@" and case flags; otherwise the position stays put
inline std::vector<int> craft_candidate(const Tensor& gamma, const EvaluationSample& sample, const Vocabulary& vocab) {
  std::vector<int> picks = argmax_tokens(gamma);
  std::vector<int> out = sample.x_ids;
  for (std::size_t i = 0; i < out.size(); ++i) {
    int pos = static_cast<int>(i);
    if (pos >= sample.span_begin && pos < sample.span_end) continue;
    int cand = picks[i];
    if (cand == out[i] || vocab.is_special(cand)) continue;
    const TokenFlags& a = vocab.flags(out[i]);
    const TokenFlags& b = vocab.flags(cand);
    if (a.continuation == b.continuation && a.cased == b.cased) out[i] = cand;
  }
  return out;
}

// full attack: optimize P once, then resample-craft-verify up to max_retries
// times; success requires the crafted sentence to pass every validity check
inline AttackResult twga_attack(const NmtModel& model, const CausalLm& l2r, const CausalLm& r2l,
                                const EvaluationSample& sample, const AttackConfig& cfg, double delta,
                                QueryCounter* qc = nullptr) {
  NmtModel victim = model.frozen_view();
  Rng rng(Rng::derive(cfg.seed, 0x7064));
  AttackResult res;
  res.x_adv = sample.x_ids;

  int n = static_cast<int>(sample.x_ids.size());
  int span_len = sample.span_end - sample.span_begin;
  if (span_len >= n) {
    // nothing perturbable: a single decode confirms the target still translates
    res.y_adv = victim.beam_decode(sample.x_ids, cfg.beam_size, cfg.max_len, false, qc);
    res.query_count = 1;
    res.verdict = check_validity(sample.x_ids, res.x_adv, res.y_adv, sample, l2r, r2l, delta);
    return res;
  }

  std::vector<int> frozen_positions;
  for (int i = sample.span_begin; i < sample.span_end; ++i) frozen_positions.push_back(i);
  ProbabilityMatrix pm = ProbabilityMatrix::init(sample.x_ids, model.src_vocab.size(), frozen_positions, cfg.epsilon);

  OptimizeOutcome opt = optimize_P(victim, l2r, r2l, pm, sample, cfg, rng, qc);
  res.query_count = opt.queries;
  res.final_l_adv = opt.final_l_adv;

  Tensor P = pm.P;
  P.requires_grad = false;
  P.grad.reset();
  P.node.reset();
  for (int num = 1; num <= cfg.max_retries; ++num) {
    Tensor noise = sample_gumbel(n, P.width(), rng);
    Tensor gamma = gumbel_softmax(P, noise, cfg.tau);
    std::vector<int> cand = craft_candidate(gamma, sample, model.src_vocab);
    Translation y = victim.beam_decode(cand, cfg.beam_size, cfg.max_len, false, qc);
    ++res.query_count;
    res.retries_used = num;
    res.x_adv = cand;
    res.y_adv = y;
    res.verdict = check_validity(sample.x_ids, cand, y, sample, l2r, r2l, delta);
    if (res.verdict.status == ValidityStatus::kValid) {
      res.success = true;
      break;
    }
  }
  res.edit = edit_score(sample.x_ids, res.x_adv);
  return res;
}

}  // namespace twga
