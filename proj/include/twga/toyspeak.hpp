#pragma once

// Synthetic bilingual toy language: syllable-built vocabularies with disjoint
// consonant inventories, a word-for-word dictionary with 1-3 translations per
// source word, and subject-verb-object sentences whose ambiguous words are
// resolved by a sentence-level context rule.

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "twga/nmt.hpp"
#include "twga/validity.hpp"

namespace twga {

struct ToyspeakSpec {
  int nouns = 80;
  int verbs = 48;
  int adjectives = 30;
  int adverbs = 18;
  int proper_nouns = 8;
  int stopwords = 12;
  int train_sentences = 1500;
  int heldout_sentences = 200;
  int para_sentences = 400;     // second, disjoint evaluation corpus
  int mono_sentences = 1500;
  std::uint64_t seed = 7;
};

struct ToyspeakData {
  ParallelCorpus train, heldout, para;
  std::vector<std::vector<std::string>> mono;
  BilingualDictionary dict;
  std::map<std::string, std::string> pos;  // source word -> tag
  std::vector<std::string> stopwords;
};

namespace detail {

inline std::string make_word(const std::vector<std::string>& consonants, const std::vector<std::string>& vowels,
                             int syllables, Rng& rng) {
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += consonants[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(consonants.size())))];
    w += vowels[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(vowels.size())))];
  }
  return w;
}

inline std::vector<std::string> draw_words(int count, const std::vector<std::string>& consonants, Rng& rng,
                                           std::set<std::string>& taken, bool capitalize = false) {
  static const std::vector<std::string> vowels{"a", "e", "i", "o", "u"};
  std::vector<std::string> out;
  int guard = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++guard > count * 2000) throw std::runtime_error("toyspeak: vocabulary draw stalled; spec too large for the syllable space");
    // mostly 2-3 syllables, occasionally 4 so some words exceed the subword chunk
    int roll = rng.uniform_int(10);
    int syl = roll < 4 ? 2 : (roll < 9 ? 3 : 4);
    std::string w = make_word(consonants, vowels, syl, rng);
    if (capitalize) w[0] = static_cast<char>(w[0] - 'a' + 'A');
    if (!taken.insert(w).second) continue;
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace detail

// sense of an ambiguous word given its sentence: 0 by default, 1 when the
// sentence opens with an adverb, 2 when it also closes with one
inline int toyspeak_sense(const std::vector<std::string>& sentence, const std::map<std::string, std::string>& pos,
                          int n_translations) {
  int s = 0;
  auto tag = [&](const std::string& w) {
    auto it = pos.find(w);
    return it == pos.end() ? std::string() : it->second;
  };
  if (!sentence.empty() && tag(sentence.front()) == "adverb") {
    s = 1;
    if (sentence.size() > 1 && tag(sentence.back()) == "adverb") s = 2;
  }
  return std::min(s, n_translations - 1);
}

inline ToyspeakData generate_toyspeak(const ToyspeakSpec& spec) {
  if (spec.nouns < 4 || spec.verbs < 2 || spec.adjectives < 2 || spec.adverbs < 2 || spec.stopwords < 2)
    throw std::invalid_argument("generate_toyspeak: vocabulary too small for the grammar");

  static const std::vector<std::string> src_cons{"k", "r", "m", "t", "l", "n", "s", "p", "v", "d", "g", "b"};
  static const std::vector<std::string> tgt_cons{"f", "z", "h", "w", "y", "x", "c", "q"};

  Rng rng(Rng::derive(spec.seed, 0x70F5));
  ToyspeakData data;
  std::set<std::string> src_taken, tgt_taken;

  std::vector<std::string> nouns = detail::draw_words(spec.nouns, src_cons, rng, src_taken);
  std::vector<std::string> verbs = detail::draw_words(spec.verbs, src_cons, rng, src_taken);
  std::vector<std::string> adjectives = detail::draw_words(spec.adjectives, src_cons, rng, src_taken);
  std::vector<std::string> adverbs = detail::draw_words(spec.adverbs, src_cons, rng, src_taken);
  std::vector<std::string> propers = detail::draw_words(spec.proper_nouns, src_cons, rng, src_taken, true);
  data.stopwords = detail::draw_words(spec.stopwords, src_cons, rng, src_taken);

  auto tag_all = [&](const std::vector<std::string>& ws, const std::string& tag) {
    for (const std::string& w : ws) data.pos[w] = tag;
  };
  tag_all(nouns, "noun");
  tag_all(verbs, "verb");
  tag_all(adjectives, "adjective");
  tag_all(adverbs, "adverb");
  tag_all(propers, "noun");
  tag_all(data.stopwords, "stopword");

  // dictionary: content words may be ambiguous, function words are not
  auto add_entry = [&](const std::string& src, bool ambiguous_ok, bool capitalize) {
    int k = 1;
    if (ambiguous_ok) {
      int roll = rng.uniform_int(10);
      k = roll < 6 ? 1 : (roll < 9 ? 2 : 3);
    }
    std::vector<std::string> ts = detail::draw_words(k, tgt_cons, rng, tgt_taken, capitalize);
    data.dict.add(src, ts);
  };
  for (const auto& w : nouns) add_entry(w, true, false);
  for (const auto& w : verbs) add_entry(w, true, false);
  for (const auto& w : adjectives) add_entry(w, true, false);
  for (const auto& w : adverbs) add_entry(w, true, false);
  for (const auto& w : propers) add_entry(w, false, true);
  for (const auto& w : data.stopwords) add_entry(w, false, false);

  auto pick = [&](const std::vector<std::string>& ws) {
    return ws[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(ws.size())))];
  };

  auto noun_phrase = [&](std::vector<std::string>& s) {
    s.push_back(pick(data.stopwords));
    int n_adj = rng.uniform_int(3);
    for (int a = 0; a < n_adj; ++a) s.push_back(pick(adjectives));
    s.push_back(rng.uniform_int(10) == 0 ? pick(propers) : pick(nouns));
  };

  auto sentence = [&]() {
    std::vector<std::string> s;
    if (rng.uniform_int(3) == 0) s.push_back(pick(adverbs));
    noun_phrase(s);
    s.push_back(pick(verbs));
    noun_phrase(s);
    if (rng.uniform_int(3) == 0) {  // optional second object phrase
      s.push_back(pick(data.stopwords));
      noun_phrase(s);
    }
    if (rng.uniform_int(3) == 0) s.push_back(pick(adverbs));
    return s;
  };

  auto reference = [&](const std::vector<std::string>& s) {
    std::vector<std::string> r;
    for (const std::string& w : s) {
      const auto& ts = data.dict.lookup(w);
      int sense = toyspeak_sense(s, data.pos, static_cast<int>(ts.size()));
      for (const std::string& piece : split_ws(ts[static_cast<std::size_t>(sense)])) r.push_back(piece);
    }
    return r;
  };

  auto draw_corpus = [&](int n) {
    ParallelCorpus out;
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> s;
      do {
        s = sentence();
      } while (s.size() < 5 || s.size() > 15);
      out.emplace_back(s, reference(s));
    }
    return out;
  };

  data.train = draw_corpus(spec.train_sentences);
  data.heldout = draw_corpus(spec.heldout_sentences);
  data.para = draw_corpus(spec.para_sentences);
  for (int i = 0; i < spec.mono_sentences; ++i) {
    std::vector<std::string> s;
    do {
      s = sentence();
    } while (s.size() < 5 || s.size() > 15);
    data.mono.push_back(std::move(s));
  }
  return data;
}

// --- file formats -----------------------------------------------------------

inline void save_corpus(const ParallelCorpus& corpus, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_corpus: cannot write " + path);
  for (const auto& [s, t] : corpus) {
    for (std::size_t i = 0; i < s.size(); ++i) f << (i ? " " : "") << s[i];
    f << '\t';
    for (std::size_t i = 0; i < t.size(); ++i) f << (i ? " " : "") << t[i];
    f << '\n';
  }
}

inline ParallelCorpus load_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_corpus: cannot read " + path);
  ParallelCorpus out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("load_corpus: missing tab at " + path + ":" + std::to_string(lineno));
    out.emplace_back(split_ws(line.substr(0, tab)), split_ws(line.substr(tab + 1)));
  }
  return out;
}

inline void save_sentences(const std::vector<std::vector<std::string>>& sentences, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_sentences: cannot write " + path);
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) f << (i ? " " : "") << s[i];
    f << '\n';
  }
}

inline std::vector<std::vector<std::string>> load_sentences(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_sentences: cannot read " + path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(split_ws(line));
  return out;
}

inline void save_pos_lexicon(const std::map<std::string, std::string>& pos, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_pos_lexicon: cannot write " + path);
  for (const auto& [w, tag] : pos) f << w << '\t' << tag << '\n';
}

inline std::map<std::string, std::string> load_pos_lexicon(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_pos_lexicon: cannot read " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("load_pos_lexicon: missing tab at " + path + ":" + std::to_string(lineno));
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

}  // namespace twga
