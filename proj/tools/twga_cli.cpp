// Command-line driver for the toolkit: data generation, model training,
// evaluation-set construction, attack campaigns, and reporting.  All
// subcommands share --seed, --config (key=value file), and --out (directory).

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "twga/campaign.hpp"
#include "twga/config.hpp"

namespace fs = std::filesystem;
using namespace twga;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  std::string config_path;
  std::string out = "out";

  Config config() const { return config_path.empty() ? Config() : Config::load(config_path); }
  std::string path(const std::string& name) const { return (fs::path(out) / name).string(); }
};

void ensure_out(const Globals& g) { fs::create_directories(g.out); }

int cmd_gen_data(const Globals& g) {
  Config c = g.config();
  ToyspeakSpec spec;
  spec.nouns = c.get_int("nouns", spec.nouns);
  spec.verbs = c.get_int("verbs", spec.verbs);
  spec.adjectives = c.get_int("adjectives", spec.adjectives);
  spec.adverbs = c.get_int("adverbs", spec.adverbs);
  spec.proper_nouns = c.get_int("proper_nouns", spec.proper_nouns);
  spec.stopwords = c.get_int("stopwords", spec.stopwords);
  spec.train_sentences = c.get_int("train_sentences", spec.train_sentences);
  spec.heldout_sentences = c.get_int("heldout_sentences", spec.heldout_sentences);
  spec.para_sentences = c.get_int("para_sentences", spec.para_sentences);
  spec.mono_sentences = c.get_int("mono_sentences", spec.mono_sentences);
  spec.seed = g.seed;

  ToyspeakData data = generate_toyspeak(spec);
  ensure_out(g);
  save_corpus(data.train, g.path("train.tsv"));
  save_corpus(data.heldout, g.path("heldout.tsv"));
  save_corpus(data.para, g.path("para.tsv"));
  save_sentences(data.mono, g.path("mono.txt"));
  data.dict.save(g.path("dict.tsv"));
  save_pos_lexicon(data.pos, g.path("pos.tsv"));
  {
    std::ofstream f(g.path("stopwords.txt"), std::ios::binary);
    for (const auto& w : data.stopwords) f << w << '\n';
  }
  std::cout << "wrote " << data.train.size() << " train, " << data.heldout.size() << " heldout, " << data.para.size()
            << " para pairs and " << data.mono.size() << " mono sentences to " << g.out << '\n';
  return 0;
}

int cmd_train_nmt(const Globals& g) {
  Config c = g.config();
  NmtConfig cfg;
  cfg.arch = c.get("arch", cfg.arch);
  cfg.emb_dim = c.get_int("emb_dim", cfg.emb_dim);
  cfg.hidden = c.get_int("hidden", cfg.hidden);
  cfg.layers = c.get_int("layers", cfg.layers);
  cfg.beam_size = c.get_int("beam_size", cfg.beam_size);
  cfg.max_len = c.get_int("max_len", cfg.max_len);
  cfg.lr = c.get_double("lr", cfg.lr);
  cfg.dropout = c.get_double("dropout", cfg.dropout);
  cfg.label_smoothing = c.get_double("label_smoothing", cfg.label_smoothing);
  cfg.epochs = c.get_int("epochs", cfg.epochs);
  cfg.seed = g.seed;

  ParallelCorpus train = load_corpus(c.get("train", g.path("train.tsv")));
  NmtModel model = train_nmt(train, cfg);
  ensure_out(g);
  model.save(g.path("nmt.ckpt"));

  std::string heldout_path = c.get("heldout", g.path("heldout.tsv"));
  std::cout << "saved " << g.path("nmt.ckpt");
  if (fs::exists(heldout_path)) {
    double acc = translation_token_accuracy(model, load_corpus(heldout_path), cfg.beam_size, cfg.max_len);
    std::cout << "; heldout token accuracy " << acc;
  }
  std::cout << '\n';
  return 0;
}

int cmd_train_lm(const Globals& g) {
  Config c = g.config();
  LmConfig cfg;
  cfg.emb_dim = c.get_int("lm_emb_dim", cfg.emb_dim);
  cfg.layers = c.get_int("lm_layers", cfg.layers);
  cfg.lr = c.get_double("lm_lr", cfg.lr);
  cfg.dropout = c.get_double("lm_dropout", cfg.dropout);
  cfg.epochs = c.get_int("lm_epochs", cfg.epochs);

  NmtModel model = NmtModel::load(g.path("nmt.ckpt"));
  std::vector<std::vector<std::string>> mono = load_sentences(c.get("mono", g.path("mono.txt")));

  cfg.seed = Rng::derive(g.seed, 0x12F);
  CausalLm l2r = train_lm(mono, LmDirection::kLeftToRight, cfg, &model.src_vocab);
  cfg.seed = Rng::derive(g.seed, 0x52F);
  CausalLm r2l = train_lm(mono, LmDirection::kRightToLeft, cfg, &model.src_vocab);
  ensure_out(g);
  l2r.save(g.path("lm_l2r.ckpt"));
  r2l.save(g.path("lm_r2l.ckpt"));

  ParallelCorpus heldout = load_corpus(c.get("heldout", g.path("heldout.tsv")));
  std::vector<std::vector<int>> clean;
  for (const auto& [s, t] : heldout) clean.push_back(model.src_vocab.encode_words(s));
  double delta = calibrate_fluency_threshold(clean, l2r, r2l, c.get_double("percentile", 95.0));
  {
    std::ofstream f(g.path("delta.txt"), std::ios::binary);
    f.precision(17);
    f << delta << '\n';
  }
  std::cout << "saved both language models; fluency threshold " << delta << '\n';
  return 0;
}

int cmd_build_evalset(const Globals& g) {
  Config c = g.config();
  NmtModel model = NmtModel::load(g.path("nmt.ckpt"));
  ParallelCorpus corpus = load_corpus(c.get("source", g.path("heldout.tsv")));
  BilingualDictionary dict = BilingualDictionary::load(g.path("dict.tsv"));
  std::map<std::string, std::string> pos = load_pos_lexicon(g.path("pos.tsv"));

  std::vector<EvaluationSample> samples =
      build_eval_set(corpus, dict, pos, model, g.seed, c.get_int("max_targets", 3), c.get_int("beam_size", 2),
                     c.get_int("max_len", 48));
  ensure_out(g);
  save_eval_set(samples, g.path("evalset.jsonl"));
  std::cout << "wrote " << samples.size() << " evaluation samples to " << g.path("evalset.jsonl") << '\n';
  return 0;
}

CampaignConfig campaign_config(const Globals& g, const Config& c) {
  CampaignConfig cfg;
  cfg.seed = g.seed;
  cfg.twga.mu = c.get_double("mu", cfg.twga.mu);
  cfg.twga.lambda1 = c.get_double("lambda1", cfg.twga.lambda1);
  cfg.twga.lambda2 = c.get_double("lambda2", cfg.twga.lambda2);
  cfg.twga.epsilon = c.get_double("epsilon", cfg.twga.epsilon);
  cfg.twga.lr = c.get_double("attack_lr", cfg.twga.lr);
  cfg.twga.opt_iters = c.get_int("opt_iters", cfg.twga.opt_iters);
  cfg.twga.max_retries = c.get_int("max_retries", cfg.twga.max_retries);
  cfg.twga.tau = c.get_double("tau", cfg.twga.tau);
  cfg.twga.beam_size = c.get_int("beam_size", cfg.twga.beam_size);
  cfg.twga.max_len = c.get_int("max_len", cfg.twga.max_len);
  cfg.base.rr_ratio = c.get_double("rr_ratio", cfg.base.rr_ratio);
  cfg.base.rr_runs = c.get_int("rr_runs", cfg.base.rr_runs);
  cfg.base.k_neighbors = c.get_int("k_neighbors", cfg.base.k_neighbors);
  cfg.base.s2s_iters = c.get_int("s2s_iters", cfg.base.s2s_iters);
  cfg.base.s2s_early_stop = c.get_bool("s2s_early_stop", cfg.base.s2s_early_stop);
  cfg.base.s2s_lr = c.get_double("s2s_lr", cfg.base.s2s_lr);
  cfg.base.mu = cfg.twga.mu;
  cfg.base.beam_size = cfg.twga.beam_size;
  cfg.base.max_len = cfg.twga.max_len;
  if (c.has("delta")) {
    cfg.delta = c.get_double("delta", 0.0);
  } else {
    std::ifstream f(g.path("delta.txt"));
    if (!f || !(f >> cfg.delta)) throw std::runtime_error("attack: no fluency threshold; run train-lm or set delta=");
  }
  return cfg;
}

int cmd_attack(const Globals& g, const std::string& method) {
  Config c = g.config();
  NmtModel model = NmtModel::load(g.path("nmt.ckpt"));
  CausalLm l2r = CausalLm::load(g.path("lm_l2r.ckpt"));
  CausalLm r2l = CausalLm::load(g.path("lm_r2l.ckpt"));
  std::vector<EvaluationSample> eval_set = load_eval_set(c.get("evalset", g.path("evalset.jsonl")));

  CampaignConfig cfg = campaign_config(g, c);
  std::vector<SampleRecord> records = run_attack(method, eval_set, model, l2r, r2l, cfg);
  ensure_out(g);
  save_records(records, g.path("records_" + method + ".jsonl"));
  std::cout << render_table({aggregate_records(method, records)});
  return 0;
}

int cmd_report(const Globals& g) {
  CampaignReport report;
  report.seed = g.seed;
  for (const std::string& name : attack_names()) {
    std::string path = g.path("records_" + name + ".jsonl");
    if (!fs::exists(path)) continue;
    std::vector<SampleRecord> recs = load_records(path);
    report.records.insert(report.records.end(), recs.begin(), recs.end());
    report.rows.push_back(aggregate_records(name, recs));
  }
  if (report.rows.empty()) throw std::runtime_error("report: no attack records found in " + g.out);
  save_report(report, g.path("records.jsonl"), g.path("report.txt"));
  std::cout << render_table(report.rows);
  return 0;
}

int cmd_quantify_invalid(const Globals& g) {
  Config c = g.config();
  std::vector<LegacyResult> results = load_legacy_results(c.get("pairs", g.path("legacy.jsonl")));
  BilingualDictionary dict = BilingualDictionary::load(c.get("dict", g.path("dict.tsv")));
  std::vector<InvalidityRow> rows = quantify_invalid(results, dict);
  ensure_out(g);
  std::string table = render_invalidity_table(rows);
  {
    std::ofstream f(g.path("invalid.txt"), std::ios::binary);
    f << table;
  }
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial-robustness toolkit for toy neural machine translation"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "rng seed shared by every subcommand");
  app.add_option("--config", g.config_path, "key=value configuration file");
  app.add_option("--out", g.out, "working directory for inputs and outputs");

  app.add_subcommand("gen-data", "generate the synthetic bilingual corpus");
  app.add_subcommand("train-nmt", "train the victim translation model");
  app.add_subcommand("train-lm", "train both fluency language models and calibrate the threshold");
  app.add_subcommand("build-evalset", "select targeted words the victim translates correctly");
  CLI::App* atk = app.add_subcommand("attack", "run one attack over the evaluation set");
  std::string method;
  atk->add_option("--method", method, "attack name")
      ->required()
      ->check(CLI::IsMember(attack_names()));
  app.add_subcommand("quantify-invalid", "measure invalid pairs under the legacy settings");
  app.add_subcommand("report", "aggregate saved attack records into one table");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(g);
    if (app.got_subcommand("train-nmt")) return cmd_train_nmt(g);
    if (app.got_subcommand("train-lm")) return cmd_train_lm(g);
    if (app.got_subcommand("build-evalset")) return cmd_build_evalset(g);
    if (app.got_subcommand("attack")) return cmd_attack(g, method);
    if (app.got_subcommand("quantify-invalid")) return cmd_quantify_invalid(g);
    if (app.got_subcommand("report")) return cmd_report(g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
