#pragma once

// Bilingual dictionary, the validity oracle for crafted sentences, the legacy
// setting-1/setting-2 invalidity classifiers, and the campaign metrics.

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "twga/lm.hpp"
#include "twga/nmt.hpp"

namespace twga {

// source word -> ordered set of target translation strings
class BilingualDictionary {
 public:
  void add(const std::string& source_word, const std::vector<std::string>& translations) {
    for (const std::string& t : translations)
      if (t.empty()) throw std::invalid_argument("dictionary: empty translation for '" + source_word + "'");
    auto& slot = entries_[source_word];
    for (const std::string& t : translations)
      if (std::find(slot.begin(), slot.end(), t) == slot.end()) slot.push_back(t);
  }

  // total lookup: absent word -> empty set
  const std::vector<std::string>& lookup(const std::string& source_word) const {
    auto it = entries_.find(source_word);
    return it == entries_.end() ? empty_ : it->second;
  }

  bool contains(const std::string& source_word) const { return entries_.count(source_word) > 0; }

  // inverse lookup: source words having `target_word` among their translations
  std::vector<std::string> sources_of(const std::string& target_word) const {
    std::vector<std::string> out;
    for (const auto& [src, ts] : entries_)
      if (std::find(ts.begin(), ts.end(), target_word) != ts.end()) out.push_back(src);
    return out;
  }

  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

  // one entry per line: source_word<TAB>trans1,trans2,...
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dictionary: cannot write " + path);
    for (const auto& [src, ts] : entries_) {
      f << src << '\t';
      for (std::size_t i = 0; i < ts.size(); ++i) f << (i ? "," : "") << ts[i];
      f << '\n';
    }
  }

  static BilingualDictionary load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dictionary: cannot read " + path);
    BilingualDictionary d;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw std::runtime_error("dictionary: missing tab at " + path + ":" + std::to_string(lineno));
      std::string src = line.substr(0, tab);
      std::vector<std::string> ts;
      std::stringstream ss(line.substr(tab + 1));
      std::string t;
      while (std::getline(ss, t, ','))
        if (!t.empty()) ts.push_back(t);
      if (src.empty() || ts.empty())
        throw std::runtime_error("dictionary: empty entry at " + path + ":" + std::to_string(lineno));
      d.add(src, ts);
    }
    return d;
  }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
  std::vector<std::string> empty_;
};

struct EvaluationSample {
  std::vector<int> x_ids;
  std::string x_text;
  std::string z;             // targeted source word
  int span_begin = 0;        // token index range of z in x_ids, [begin, end)
  int span_end = 0;
  std::vector<std::string> Z;  // its reference translations
  std::vector<int> h_p;        // their target-vocab token ids
};

enum class ValidityStatus { kValid, kTargetStillTranslated, kTargetedSpanModified, kNotFluent };

inline const char* to_string(ValidityStatus s) {
  switch (s) {
    case ValidityStatus::kValid: return "Valid";
    case ValidityStatus::kTargetStillTranslated: return "TargetStillTranslated";
    case ValidityStatus::kTargetedSpanModified: return "TargetedSpanModified";
    case ValidityStatus::kNotFluent: return "NotFluent";
  }
  return "?";
}

struct ValidityVerdict {
  ValidityStatus status = ValidityStatus::kValid;
  double fluency_nll = 0.0;  // mean of both directional LMs, nats/token
};

struct LegacyPair {
  std::vector<std::string> x, x_adv, r;
  std::string w;        // legacy targeted word (target language)
  int setting = 1;
};

// Z plus the union of subword token ids across its tokenized translations
inline std::pair<std::vector<std::string>, std::vector<int>> expand_translations(const std::string& z,
                                                                                const BilingualDictionary& dict,
                                                                                const Vocabulary& tgt_vocab) {
  const auto& ts = dict.lookup(z);
  if (ts.empty()) throw std::invalid_argument("expand_translations: '" + z + "' not in dictionary");
  std::vector<std::string> Z;
  std::set<int> ids;
  for (const std::string& t : ts) {
    if (std::find(Z.begin(), Z.end(), t) == Z.end()) Z.push_back(t);
    for (const std::string& w : tokenize_words(split_ws(t)))
      for (int id : tgt_vocab.encode({w})) ids.insert(id);
  }
  return {Z, std::vector<int>(ids.begin(), ids.end())};
}

// true iff any translation occurs as a contiguous word subsequence of the
// detokenized output
inline bool contains_translation(const std::vector<std::string>& y_words, const std::vector<std::string>& Z) {
  for (const std::string& t : Z) {
    std::vector<std::string> tw = split_ws(t);
    if (tw.empty() || tw.size() > y_words.size()) continue;
    for (std::size_t i = 0; i + tw.size() <= y_words.size(); ++i) {
      if (std::equal(tw.begin(), tw.end(), y_words.begin() + static_cast<std::ptrdiff_t>(i))) return true;
    }
  }
  return false;
}

inline bool contains_translation(const Translation& y, const std::vector<std::string>& Z) {
  return contains_translation(split_ws(y.text), Z);
}

inline double dual_lm_nll(const std::vector<int>& x_ids, const CausalLm& l2r, const CausalLm& r2l) {
  return 0.5 * (l2r.nll(x_ids).value + r2l.nll(x_ids).value);
}

// the three conditions, checked in order: the targeted word must drop out of
// the translation, the targeted span must be untouched, and the crafted
// sentence must stay fluent under both LMs
inline ValidityVerdict check_validity(const std::vector<int>& x_ids, const std::vector<int>& x_adv_ids,
                                      const Translation& y_adv, const EvaluationSample& sample, const CausalLm& l2r,
                                      const CausalLm& r2l, double delta) {
  ValidityVerdict v;
  v.fluency_nll = dual_lm_nll(x_adv_ids, l2r, r2l);
  if (contains_translation(y_adv, sample.Z)) {
    v.status = ValidityStatus::kTargetStillTranslated;
    return v;
  }
  if (x_ids.size() != x_adv_ids.size()) {
    // crafted sentences are aligned substitutions; a length change counts as
    // touching the span only if the span itself moved, which alignment rules out
    v.status = ValidityStatus::kTargetedSpanModified;
    return v;
  }
  for (int i = sample.span_begin; i < sample.span_end; ++i) {
    if (x_ids[static_cast<std::size_t>(i)] != x_adv_ids[static_cast<std::size_t>(i)]) {
      v.status = ValidityStatus::kTargetedSpanModified;
      return v;
    }
  }
  if (v.fluency_nll > delta) {
    v.status = ValidityStatus::kNotFluent;
    return v;
  }
  v.status = ValidityStatus::kValid;
  return v;
}

namespace detail {
inline bool has_word(const std::vector<std::string>& words, const std::string& w) {
  return std::find(words.begin(), words.end(), w) != words.end();
}
}  // namespace detail

// setting 1 forces w into the output; the crafted pair is invalid when a
// source-side translation of w was smuggled into x' that x never had
inline bool classify_invalid_setting1(const LegacyPair& pair, const BilingualDictionary& dict) {
  if (pair.setting != 1) throw std::invalid_argument("classify_invalid_setting1: pair has setting " + std::to_string(pair.setting));
  std::vector<std::string> sources = dict.sources_of(pair.w);
  bool in_x = false, in_adv = false;
  for (const std::string& s : sources) {
    if (detail::has_word(pair.x, s)) in_x = true;
    if (detail::has_word(pair.x_adv, s)) in_adv = true;
  }
  return in_adv && !in_x;
}

// setting 2 removes w from the output; invalid when every source-side
// translation of w was deleted from x' although x contained one
inline bool classify_invalid_setting2(const LegacyPair& pair, const BilingualDictionary& dict) {
  if (pair.setting != 2) throw std::invalid_argument("classify_invalid_setting2: pair has setting " + std::to_string(pair.setting));
  std::vector<std::string> sources = dict.sources_of(pair.w);
  bool in_x = false, in_adv = false;
  for (const std::string& s : sources) {
    if (detail::has_word(pair.x, s)) in_x = true;
    if (detail::has_word(pair.x_adv, s)) in_adv = true;
  }
  return in_x && !in_adv;
}

// token-level Levenshtein distance normalized by len(x), as a percentage
inline double edit_score(const std::vector<int>& x, const std::vector<int>& x_adv) {
  if (x.empty()) throw std::invalid_argument("edit_score: empty reference sequence");
  std::size_t n = x.size(), m = x_adv.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t sub = prev[j - 1] + (x[i - 1] == x_adv[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return 100.0 * static_cast<double>(prev[m]) / static_cast<double>(n);
}

inline double succ_rate(const std::vector<bool>& successes) {
  if (successes.empty()) throw std::invalid_argument("succ_rate: no results");
  long hits = std::count(successes.begin(), successes.end(), true);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(successes.size());
}

inline double mean_query(const std::vector<double>& queries) {
  if (queries.empty()) throw std::invalid_argument("mean_query: no results");
  double total = 0.0;
  for (double q : queries) total += q;
  return total / static_cast<double>(queries.size());
}

// fluency threshold: 95th percentile of the pooled per-token dual-LM NLL over
// the clean corpus (nearest-rank)
inline double calibrate_fluency_threshold(const std::vector<std::vector<int>>& clean_sentences, const CausalLm& l2r,
                                          const CausalLm& r2l, double percentile = 95.0) {
  std::vector<double> scores;
  for (const auto& ids : clean_sentences) {
    if (ids.empty()) continue;
    scores.push_back(dual_lm_nll(ids, l2r, r2l));
  }
  if (scores.empty()) throw std::invalid_argument("calibrate_fluency_threshold: empty corpus");
  std::sort(scores.begin(), scores.end());
  std::size_t rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(scores.size())));
  if (rank == 0) rank = 1;
  if (rank > scores.size()) rank = scores.size();
  return scores[rank - 1];
}

}  // namespace twga
