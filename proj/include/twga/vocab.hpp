#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace twga {

// Words longer than this are split into subword pieces carrying the "@@"
// continuation marker, BPE-style.
inline constexpr std::size_t kSubwordChunk = 6;

inline bool has_continuation_marker(const std::string& tok) {
  return tok.size() >= 2 && tok.compare(tok.size() - 2, 2, "@@") == 0;
}

inline bool is_cased_token(const std::string& tok) {
  for (char c : tok)
    if (std::isupper(static_cast<unsigned char>(c))) return true;
  return false;
}

// Deterministic rule-based splitter: chunks of kSubwordChunk characters,
// every non-final chunk suffixed with "@@".
inline std::vector<std::string> subword_split(const std::string& word) {
  if (word.size() <= kSubwordChunk) return {word};
  std::vector<std::string> pieces;
  std::size_t pos = 0;
  while (word.size() - pos > kSubwordChunk) {
    pieces.push_back(word.substr(pos, kSubwordChunk) + "@@");
    pos += kSubwordChunk;
  }
  pieces.push_back(word.substr(pos));
  return pieces;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream iss(line);
  std::string w;
  while (iss >> w) out.push_back(w);
  return out;
}

inline std::vector<std::string> tokenize_words(const std::vector<std::string>& words) {
  std::vector<std::string> toks;
  for (const std::string& w : words)
    for (std::string& p : subword_split(w)) toks.push_back(std::move(p));
  return toks;
}

struct TokenFlags {
  bool continuation = false;
  bool cased = false;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary() {
    for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(s);
  }

  int add(const std::string& tok) {
    auto it = tok2id_.find(tok);
    if (it != tok2id_.end()) return it->second;
    int id = static_cast<int>(id2tok_.size());
    tok2id_.emplace(tok, id);
    id2tok_.push_back(tok);
    flags_.push_back({has_continuation_marker(tok), is_cased_token(tok)});
    return id;
  }

  // -1 when absent
  int id_of(const std::string& tok) const {
    auto it = tok2id_.find(tok);
    return it == tok2id_.end() ? -1 : it->second;
  }

  const std::string& token(int id) const {
    check(id);
    return id2tok_[static_cast<std::size_t>(id)];
  }
  const TokenFlags& flags(int id) const {
    check(id);
    return flags_[static_cast<std::size_t>(id)];
  }
  int size() const { return static_cast<int>(id2tok_.size()); }
  bool is_special(int id) const { return id >= 0 && id <= kUnk; }

  std::vector<int> encode(const std::vector<std::string>& toks) const {
    std::vector<int> ids;
    ids.reserve(toks.size());
    for (const std::string& t : toks) {
      int id = id_of(t);
      ids.push_back(id < 0 ? kUnk : id);
    }
    return ids;
  }

  std::vector<int> encode_words(const std::vector<std::string>& words) const { return encode(tokenize_words(words)); }

  // merge "@@" continuations back into words
  std::string detokenize(const std::vector<int>& ids) const {
    std::string out;
    bool glue = false;
    for (int id : ids) {
      if (is_special(id)) continue;
      const std::string& t = token(id);
      std::string body = has_continuation_marker(t) ? t.substr(0, t.size() - 2) : t;
      if (!glue && !out.empty()) out += ' ';
      out += body;
      glue = has_continuation_marker(t);
    }
    return out;
  }

  std::vector<std::string> detokenize_words(const std::vector<int>& ids) const { return split_ws(detokenize(ids)); }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const std::string& t : id2tok_) {
      for (char c : t) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
      }
      h ^= 0x0a;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("Vocabulary::save: cannot open " + path);
    for (int i = 0; i < size(); ++i)
      out << id2tok_[i] << '\t' << (flags_[i].continuation ? 1 : 0) << '\t' << (flags_[i].cased ? 1 : 0) << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("Vocabulary::load: cannot open " + path);
    Vocabulary v;
    v.id2tok_.clear();
    v.tok2id_.clear();
    v.flags_.clear();
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream iss(line);
      std::string tok;
      int cont = 0, cased = 0;
      if (!std::getline(iss, tok, '\t')) throw std::runtime_error("Vocabulary::load: bad line in " + path);
      iss >> cont >> cased;
      int id = static_cast<int>(v.id2tok_.size());
      v.tok2id_.emplace(tok, id);
      v.id2tok_.push_back(tok);
      v.flags_.push_back({cont != 0, cased != 0});
    }
    if (v.size() <= kUnk) throw std::runtime_error("Vocabulary::load: missing special tokens in " + path);
    return v;
  }

 private:
  void check(int id) const {
    if (id < 0 || id >= size())
      throw std::out_of_range("Vocabulary: id " + std::to_string(id) + " out of range [0," + std::to_string(size()) + ")");
  }

  std::vector<std::string> id2tok_;
  std::unordered_map<std::string, int> tok2id_;
  std::vector<TokenFlags> flags_;
};

}  // namespace twga
