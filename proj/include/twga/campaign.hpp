#pragma once

// Evaluation-set construction, campaign orchestration over the five attacks,
// invalidity quantification of the legacy settings, and report emission.

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "twga/baselines.hpp"
#include "twga/toyspeak.hpp"

namespace twga {

inline const std::vector<std::string>& attack_names() {
  static const std::vector<std::string> names{"twga", "rr", "wtextfooler", "targeted-flips", "seq2sick"};
  return names;
}

// one evaluation sample per chosen targeted word, keeping only samples the
// victim translates correctly on the clean input
inline std::vector<EvaluationSample> build_eval_set(const ParallelCorpus& corpus, const BilingualDictionary& dict,
                                                    const std::map<std::string, std::string>& pos,
                                                    const NmtModel& model, std::uint64_t seed, int max_targets = 3,
                                                    int beam_size = 2, int max_len = 48) {
  NmtModel victim = model.frozen_view();
  std::vector<EvaluationSample> out;
  for (std::size_t si = 0; si < corpus.size(); ++si) {
    const std::vector<std::string>& words = corpus[si].first;

    // token span of each word under subword splitting
    std::vector<std::pair<int, int>> spans;
    int cursor = 0;
    for (const std::string& w : words) {
      int len = static_cast<int>(subword_split(w).size());
      spans.emplace_back(cursor, cursor + len);
      cursor += len;
    }

    std::vector<int> candidates;
    for (std::size_t wi = 0; wi < words.size(); ++wi) {
      auto it = pos.find(words[wi]);
      if (it == pos.end()) continue;
      const std::string& tag = it->second;
      if (tag != "noun" && tag != "verb" && tag != "adjective" && tag != "adverb") continue;
      if (!dict.contains(words[wi])) continue;
      candidates.push_back(static_cast<int>(wi));
    }
    if (candidates.empty()) continue;

    Rng rng(Rng::derive(seed, 0xE5E7 + si));
    int take = std::min<int>(max_targets, static_cast<int>(candidates.size()));
    for (int k = 0; k < take; ++k) {
      int j = k + rng.uniform_int(static_cast<int>(candidates.size()) - k);
      std::swap(candidates[static_cast<std::size_t>(k)], candidates[static_cast<std::size_t>(j)]);
    }

    std::vector<int> x_ids = model.src_vocab.encode_words(words);
    std::string x_text;
    for (std::size_t i = 0; i < words.size(); ++i) x_text += (i ? " " : "") + words[i];
    Translation y;
    bool decoded = false;

    std::vector<int> chosen(candidates.begin(), candidates.begin() + take);
    std::sort(chosen.begin(), chosen.end());
    for (int wi : chosen) {
      EvaluationSample s;
      s.x_ids = x_ids;
      s.x_text = x_text;
      s.z = words[static_cast<std::size_t>(wi)];
      s.span_begin = spans[static_cast<std::size_t>(wi)].first;
      s.span_end = spans[static_cast<std::size_t>(wi)].second;
      auto [Z, hp] = expand_translations(s.z, dict, model.tgt_vocab);
      s.Z = std::move(Z);
      s.h_p = std::move(hp);
      if (!decoded) {
        y = victim.beam_decode(x_ids, beam_size, max_len);
        decoded = true;
      }
      if (!contains_translation(y, s.Z)) continue;
      out.push_back(std::move(s));
    }
  }
  return out;
}

// fraction of reference tokens the victim reproduces at the same position
inline double translation_token_accuracy(const NmtModel& model, const ParallelCorpus& corpus, int beam_size = 2,
                                         int max_len = 48) {
  if (corpus.empty()) throw std::invalid_argument("translation_token_accuracy: empty corpus");
  NmtModel victim = model.frozen_view();
  long correct = 0, total = 0;
  for (const auto& [s, t] : corpus) {
    std::vector<int> ref = model.tgt_vocab.encode_words(t);
    Translation y = victim.beam_decode(model.src_vocab.encode_words(s), beam_size, max_len);
    std::vector<int> got = y.token_ids;
    while (!got.empty() && model.tgt_vocab.is_special(got.back())) got.pop_back();
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (i < got.size() && got[i] == ref[i]) ++correct;
    total += static_cast<long>(ref.size());
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

struct CampaignConfig {
  std::vector<std::string> attacks = attack_names();
  AttackConfig twga;
  BaselineConfig base;
  double delta = 0.0;
  std::uint64_t seed = 0;
};

struct SampleRecord {
  std::string attack;
  int sample_index = 0;
  double success = 0.0;  // fractional for the run-averaged random baseline
  double edit = 0.0;
  double query = 0.0;
  int retries = 0;
  std::string status;
  std::string x_adv_text;
  std::string y_text;
  std::string error;
};

struct AttackRow {
  std::string attack;
  double succ = 0.0;
  double edit = 0.0;
  double query = 0.0;
  long samples = 0;
};

struct CampaignReport {
  std::uint64_t seed = 0;
  std::vector<AttackRow> rows;
  std::vector<SampleRecord> records;
};

// aggregate a single attack's rows from its per-sample records: Succ is the
// mean success percentage, Edit averages over samples with any success,
// Query averages over all samples
inline AttackRow aggregate_records(const std::string& attack, const std::vector<SampleRecord>& records) {
  AttackRow row;
  row.attack = attack;
  double succ_sum = 0.0, query_sum = 0.0, edit_sum = 0.0;
  long edit_n = 0;
  for (const SampleRecord& r : records) {
    if (r.attack != attack) continue;
    ++row.samples;
    succ_sum += r.success;
    query_sum += r.query;
    if (r.success > 0.0) {
      edit_sum += r.edit;
      ++edit_n;
    }
  }
  if (row.samples == 0) throw std::invalid_argument("aggregate_records: no records for attack '" + attack + "'");
  row.succ = 100.0 * succ_sum / static_cast<double>(row.samples);
  row.query = query_sum / static_cast<double>(row.samples);
  row.edit = edit_n > 0 ? edit_sum / static_cast<double>(edit_n) : 0.0;
  return row;
}

namespace detail {

inline SampleRecord record_from_result(const std::string& attack, int index, const AttackResult& r,
                                       const Vocabulary& src_vocab) {
  SampleRecord rec;
  rec.attack = attack;
  rec.sample_index = index;
  rec.success = r.success ? 1.0 : 0.0;
  rec.edit = r.edit;
  rec.query = static_cast<double>(r.query_count);
  rec.retries = r.retries_used;
  rec.status = to_string(r.verdict.status);
  rec.x_adv_text = src_vocab.detokenize(r.x_adv);
  rec.y_text = r.y_adv.text;
  return rec;
}

}  // namespace detail

// run one named attack over the evaluation set with per-sample rng streams;
// sample-level errors are recorded and the campaign continues
inline std::vector<SampleRecord> run_attack(const std::string& name, const std::vector<EvaluationSample>& eval_set,
                                            const NmtModel& model, const CausalLm& l2r, const CausalLm& r2l,
                                            const CampaignConfig& cfg) {
  if (eval_set.empty()) throw std::invalid_argument("run_attack: empty evaluation set");
  std::vector<SampleRecord> records;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const EvaluationSample& s = eval_set[i];
    std::uint64_t sample_seed = Rng::derive(cfg.seed, 0xA77 + i);
    QueryCounter qc;
    SampleRecord rec;
    try {
      if (name == "twga") {
        AttackConfig ac = cfg.twga;
        ac.seed = sample_seed;
        AttackResult r = twga_attack(model, l2r, r2l, s, ac, cfg.delta, &qc);
        rec = detail::record_from_result(name, static_cast<int>(i), r, model.src_vocab);
        if (r.query_count != qc.count) rec.error = "query accounting mismatch";
      } else if (name == "rr") {
        // averaged over rr_runs independent draws
        double succ = 0.0, query = 0.0, edit = 0.0;
        long edit_n = 0;
        std::string status, x_text, y_text;
        for (int run = 0; run < cfg.base.rr_runs; ++run) {
          BaselineConfig bc = cfg.base;
          bc.seed = Rng::derive(sample_seed, 0x5B + static_cast<std::uint64_t>(run));
          AttackResult r = random_replace_attack(model, l2r, r2l, s, bc, cfg.delta, &qc);
          succ += r.success ? 1.0 : 0.0;
          query += static_cast<double>(r.query_count);
          if (r.success) {
            edit += r.edit;
            ++edit_n;
          }
          if (run == 0 || r.success) {
            status = to_string(r.verdict.status);
            x_text = model.src_vocab.detokenize(r.x_adv);
            y_text = r.y_adv.text;
          }
        }
        rec.attack = name;
        rec.sample_index = static_cast<int>(i);
        rec.success = succ / cfg.base.rr_runs;
        rec.query = query / cfg.base.rr_runs;
        rec.edit = edit_n > 0 ? edit / edit_n : 0.0;
        rec.status = status;
        rec.x_adv_text = x_text;
        rec.y_text = y_text;
      } else {
        BaselineConfig bc = cfg.base;
        bc.seed = sample_seed;
        AttackResult r;
        if (name == "wtextfooler")
          r = wtextfooler_attack(model, l2r, r2l, s, bc, cfg.delta, &qc);
        else if (name == "targeted-flips")
          r = targeted_flips_attack(model, l2r, r2l, s, bc, cfg.delta, &qc);
        else if (name == "seq2sick")
          r = seq2sick_attack(model, l2r, r2l, s, bc, cfg.delta, &qc);
        else
          throw std::invalid_argument("run_attack: unknown attack '" + name + "'");
        rec = detail::record_from_result(name, static_cast<int>(i), r, model.src_vocab);
        if (r.query_count != qc.count) rec.error = "query accounting mismatch";
      }
    } catch (const std::invalid_argument& e) {
      if (std::string(e.what()).rfind("run_attack:", 0) == 0) throw;
      rec = SampleRecord{};
      rec.attack = name;
      rec.sample_index = static_cast<int>(i);
      rec.query = static_cast<double>(qc.count);
      rec.error = e.what();
    } catch (const std::runtime_error& e) {
      rec = SampleRecord{};
      rec.attack = name;
      rec.sample_index = static_cast<int>(i);
      rec.query = static_cast<double>(qc.count);
      rec.error = e.what();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

inline CampaignReport run_campaign(const std::vector<EvaluationSample>& eval_set, const NmtModel& model,
                                   const CausalLm& l2r, const CausalLm& r2l, const CampaignConfig& cfg) {
  if (eval_set.empty()) throw std::invalid_argument("run_campaign: empty evaluation set");
  CampaignReport report;
  report.seed = cfg.seed;
  for (const std::string& name : cfg.attacks) {
    std::vector<SampleRecord> recs = run_attack(name, eval_set, model, l2r, r2l, cfg);
    report.records.insert(report.records.end(), recs.begin(), recs.end());
    report.rows.push_back(aggregate_records(name, recs));
  }
  return report;
}

// --- legacy-setting quantification ------------------------------------------

struct LegacyResult {
  LegacyPair pair;
  bool success = false;
  std::string attack;
};

struct InvalidityRow {
  std::string attack;
  int setting = 0;
  double succ = 0.0;
  double invalid = 0.0;  // over successful pairs only
  long pairs = 0;
};

inline std::vector<InvalidityRow> quantify_invalid(const std::vector<LegacyResult>& results,
                                                   const BilingualDictionary& dict) {
  std::map<std::pair<std::string, int>, std::vector<const LegacyResult*>> groups;
  for (const LegacyResult& r : results) {
    if (r.pair.setting != 1 && r.pair.setting != 2)
      throw std::invalid_argument("quantify_invalid: pair with unknown setting " + std::to_string(r.pair.setting));
    groups[{r.attack, r.pair.setting}].push_back(&r);
  }
  std::vector<InvalidityRow> rows;
  for (const auto& [key, rs] : groups) {
    InvalidityRow row;
    row.attack = key.first;
    row.setting = key.second;
    row.pairs = static_cast<long>(rs.size());
    long succ = 0, invalid = 0;
    for (const LegacyResult* r : rs) {
      if (!r->success) continue;
      ++succ;
      bool bad = r->pair.setting == 1 ? classify_invalid_setting1(r->pair, dict) : classify_invalid_setting2(r->pair, dict);
      if (bad) ++invalid;
    }
    row.succ = 100.0 * static_cast<double>(succ) / static_cast<double>(rs.size());
    row.invalid = succ > 0 ? 100.0 * static_cast<double>(invalid) / static_cast<double>(succ) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

// --- serialization ----------------------------------------------------------

inline void save_eval_set(const std::vector<EvaluationSample>& samples, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_eval_set: cannot write " + path);
  for (const EvaluationSample& s : samples) {
    nlohmann::json j;
    j["Z"] = s.Z;
    j["h_p"] = s.h_p;
    j["span_begin"] = s.span_begin;
    j["span_end"] = s.span_end;
    j["x_ids"] = s.x_ids;
    j["x_text"] = s.x_text;
    j["z"] = s.z;
    f << j.dump() << '\n';
  }
}

inline std::vector<EvaluationSample> load_eval_set(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_eval_set: cannot read " + path);
  std::vector<EvaluationSample> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    EvaluationSample s;
    s.Z = j.at("Z").get<std::vector<std::string>>();
    s.h_p = j.at("h_p").get<std::vector<int>>();
    s.span_begin = j.at("span_begin").get<int>();
    s.span_end = j.at("span_end").get<int>();
    s.x_ids = j.at("x_ids").get<std::vector<int>>();
    s.x_text = j.at("x_text").get<std::string>();
    s.z = j.at("z").get<std::string>();
    out.push_back(std::move(s));
  }
  return out;
}

inline void save_records(const std::vector<SampleRecord>& records, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_records: cannot write " + path);
  for (const SampleRecord& r : records) {
    nlohmann::json j;
    j["attack"] = r.attack;
    j["edit"] = r.edit;
    j["error"] = r.error;
    j["query"] = r.query;
    j["retries"] = r.retries;
    j["sample_index"] = r.sample_index;
    j["status"] = r.status;
    j["success"] = r.success;
    j["x_adv_text"] = r.x_adv_text;
    j["y_text"] = r.y_text;
    f << j.dump() << '\n';
  }
}

inline std::vector<SampleRecord> load_records(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_records: cannot read " + path);
  std::vector<SampleRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    SampleRecord r;
    r.attack = j.at("attack").get<std::string>();
    r.edit = j.at("edit").get<double>();
    r.error = j.at("error").get<std::string>();
    r.query = j.at("query").get<double>();
    r.retries = j.at("retries").get<int>();
    r.sample_index = j.at("sample_index").get<int>();
    r.status = j.at("status").get<std::string>();
    r.success = j.at("success").get<double>();
    r.x_adv_text = j.at("x_adv_text").get<std::string>();
    r.y_text = j.at("y_text").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string render_table(const std::vector<AttackRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "attack" << std::right << std::setw(10) << "Succ" << std::setw(10) << "Edit"
     << std::setw(10) << "Query" << std::setw(10) << "samples" << '\n';
  os << std::string(56, '-') << '\n';
  os << std::fixed << std::setprecision(2);
  for (const AttackRow& r : rows) {
    os << std::left << std::setw(16) << r.attack << std::right << std::setw(10) << r.succ << std::setw(10) << r.edit
       << std::setw(10) << r.query << std::setw(10) << r.samples << '\n';
  }
  return os.str();
}

inline std::string render_invalidity_table(const std::vector<InvalidityRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "attack" << std::right << std::setw(10) << "setting" << std::setw(10) << "Succ"
     << std::setw(10) << "Invalid" << std::setw(10) << "pairs" << '\n';
  os << std::string(56, '-') << '\n';
  os << std::fixed << std::setprecision(2);
  for (const InvalidityRow& r : rows) {
    os << std::left << std::setw(16) << r.attack << std::right << std::setw(10) << r.setting << std::setw(10) << r.succ
       << std::setw(10) << r.invalid << std::setw(10) << r.pairs << '\n';
  }
  return os.str();
}

inline void save_report(const CampaignReport& report, const std::string& records_path, const std::string& table_path) {
  save_records(report.records, records_path);
  std::ofstream f(table_path, std::ios::binary);
  if (!f) throw std::runtime_error("save_report: cannot write " + table_path);
  f << "seed " << report.seed << "\n\n" << render_table(report.rows);
}

// legacy-pair fixtures: one json record per line
inline std::vector<LegacyResult> load_legacy_results(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_legacy_results: cannot read " + path);
  std::vector<LegacyResult> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("load_legacy_results: bad json at " + path + ":" + std::to_string(lineno));
    }
    LegacyResult r;
    r.attack = j.at("attack").get<std::string>();
    r.success = j.at("success").get<bool>();
    r.pair.x = split_ws(j.at("x").get<std::string>());
    r.pair.x_adv = split_ws(j.at("x_adv").get<std::string>());
    r.pair.r = split_ws(j.at("r").get<std::string>());
    r.pair.w = j.at("w").get<std::string>();
    r.pair.setting = j.at("setting").get<int>();
    out.push_back(std::move(r));
  }
  return out;
}

inline void save_legacy_results(const std::vector<LegacyResult>& results, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_legacy_results: cannot write " + path);
  auto join = [](const std::vector<std::string>& ws) {
    std::string s;
    for (std::size_t i = 0; i < ws.size(); ++i) s += (i ? " " : "") + ws[i];
    return s;
  };
  for (const LegacyResult& r : results) {
    nlohmann::json j;
    j["attack"] = r.attack;
    j["r"] = join(r.pair.r);
    j["setting"] = r.pair.setting;
    j["success"] = r.success;
    j["w"] = r.pair.w;
    j["x"] = join(r.pair.x);
    j["x_adv"] = join(r.pair.x_adv);
    f << j.dump() << '\n';
  }
}

}  // namespace twga
