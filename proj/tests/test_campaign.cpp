#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "twga/campaign.hpp"

using namespace twga;

namespace {

struct World {
  ToyspeakData data;
  NmtModel model;
  CausalLm l2r, r2l;
  double delta = 0.0;
};

World& world() {
  static World* w = [] {
    World* out = new World();
    ToyspeakSpec spec;
    spec.nouns = 20;
    spec.verbs = 12;
    spec.adjectives = 8;
    spec.adverbs = 6;
    spec.proper_nouns = 2;
    spec.stopwords = 6;
    spec.train_sentences = 250;
    spec.heldout_sentences = 30;
    spec.para_sentences = 20;
    spec.mono_sentences = 250;
    spec.seed = 7;
    out->data = generate_toyspeak(spec);

    NmtConfig cfg;
    cfg.emb_dim = 40;
    cfg.hidden = 40;
    cfg.layers = 1;
    cfg.beam_size = 2;
    cfg.max_len = 40;
    cfg.lr = 2e-3;
    cfg.dropout = 0.0;
    cfg.label_smoothing = 0.05;
    cfg.epochs = 8;
    cfg.seed = 11;
    out->model = train_nmt(out->data.train, cfg);

    LmConfig lm_cfg;
    lm_cfg.emb_dim = 24;
    lm_cfg.layers = 1;
    lm_cfg.dropout = 0.0;
    lm_cfg.epochs = 2;
    lm_cfg.seed = 13;
    Vocabulary shared = out->model.src_vocab;
    out->l2r = train_lm(out->data.mono, LmDirection::kLeftToRight, lm_cfg, &shared);
    out->r2l = train_lm(out->data.mono, LmDirection::kRightToLeft, lm_cfg, &shared);

    std::vector<std::vector<int>> clean;
    for (const auto& [s, t] : out->data.heldout) clean.push_back(out->model.src_vocab.encode_words(s));
    out->delta = calibrate_fluency_threshold(clean, out->l2r, out->r2l);
    return out;
  }();
  return *w;
}

CampaignConfig quick_cfg(const World& w) {
  CampaignConfig cfg;
  cfg.delta = w.delta;
  cfg.seed = 21;
  cfg.twga.beam_size = 2;
  cfg.twga.max_len = 40;
  cfg.twga.opt_iters = 5;
  cfg.twga.max_retries = 6;
  cfg.twga.epsilon = 4.0;
  cfg.twga.lr = 0.1;
  cfg.base.beam_size = 2;
  cfg.base.max_len = 40;
  cfg.base.s2s_iters = 5;
  cfg.base.k_neighbors = 4;
  return cfg;
}

}  // namespace

TEST_CASE("evaluation samples are content words the model translates correctly") {
  World& w = world();
  std::vector<EvaluationSample> samples =
      build_eval_set(w.data.heldout, w.data.dict, w.data.pos, w.model, 3, 3, 2, 40);
  REQUIRE(!samples.empty());

  NmtModel victim = w.model.frozen_view();
  std::map<std::string, int> per_sentence;
  for (const EvaluationSample& s : samples) {
    ++per_sentence[s.x_text];
    // span tokens detokenize back to the targeted word
    std::vector<int> span(s.x_ids.begin() + s.span_begin, s.x_ids.begin() + s.span_end);
    CHECK(w.model.src_vocab.detokenize(span) == s.z);
    CHECK(w.data.pos.at(s.z) != "stopword");
    CHECK(!s.Z.empty());
    CHECK(!s.h_p.empty());
  }
  for (const auto& [text, n] : per_sentence) CHECK(n <= 3);

  SECTION("clean decodes contain the reference translation (spot check)") {
    for (std::size_t i = 0; i < std::min<std::size_t>(samples.size(), 5); ++i) {
      Translation y = victim.beam_decode(samples[i].x_ids, 2, 40);
      CHECK(contains_translation(y, samples[i].Z));
    }
  }

  SECTION("a stopword-only sentence yields no samples") {
    ParallelCorpus stub{{{w.data.stopwords[0], w.data.stopwords[1], w.data.stopwords[0], w.data.stopwords[1],
                          w.data.stopwords[2]},
                         {"fa", "fa", "fa", "fa", "fa"}}};
    CHECK(build_eval_set(stub, w.data.dict, w.data.pos, w.model, 3).empty());
  }

  SECTION("the build is deterministic in its seed") {
    std::vector<EvaluationSample> again =
        build_eval_set(w.data.heldout, w.data.dict, w.data.pos, w.model, 3, 3, 2, 40);
    REQUIRE(again.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      CHECK(again[i].x_ids == samples[i].x_ids);
      CHECK(again[i].z == samples[i].z);
    }
  }
}

TEST_CASE("campaigns are deterministic and their rows recompute from records") {
  World& w = world();
  std::vector<EvaluationSample> all =
      build_eval_set(w.data.heldout, w.data.dict, w.data.pos, w.model, 3, 3, 2, 40);
  REQUIRE(all.size() >= 6);
  std::vector<EvaluationSample> eval_set(all.begin(), all.begin() + 6);

  CampaignConfig cfg = quick_cfg(w);
  CampaignReport a = run_campaign(eval_set, w.model, w.l2r, w.r2l, cfg);
  REQUIRE(a.rows.size() == 5);

  SECTION("reruns byte-match after serialization") {
    CampaignReport b = run_campaign(eval_set, w.model, w.l2r, w.r2l, cfg);
    save_records(a.records, "camp_a.jsonl");
    save_records(b.records, "camp_b.jsonl");
    std::ifstream fa("camp_a.jsonl"), fb("camp_b.jsonl");
    std::ostringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK(sa.str() == sb.str());
    std::remove("camp_a.jsonl");
    std::remove("camp_b.jsonl");
  }

  SECTION("aggregates equal an independent recount") {
    for (const AttackRow& row : a.rows) {
      double succ = 0.0, query = 0.0, edit = 0.0;
      long n = 0, edit_n = 0;
      for (const SampleRecord& r : a.records) {
        if (r.attack != row.attack) continue;
        ++n;
        succ += r.success;
        query += r.query;
        if (r.success > 0.0) {
          edit += r.edit;
          ++edit_n;
        }
      }
      REQUIRE(n == row.samples);
      CHECK(row.succ == 100.0 * succ / static_cast<double>(n));
      CHECK(row.query == query / static_cast<double>(n));
      CHECK(row.edit == (edit_n ? edit / static_cast<double>(edit_n) : 0.0));
    }
  }

  SECTION("successful records never touch the targeted span and are valid") {
    for (const SampleRecord& r : a.records) {
      if (r.success == 0.0) continue;
      CHECK(r.error.empty());
      if (r.attack != "rr") CHECK(r.status == "Valid");
      const EvaluationSample& s = eval_set[static_cast<std::size_t>(r.sample_index)];
      std::vector<int> adv = w.model.src_vocab.encode_words(split_ws(r.x_adv_text));
      if (r.attack != "rr") {  // rr's recorded text is one of several runs
        REQUIRE(adv.size() == s.x_ids.size());
        for (int i = s.span_begin; i < s.span_end; ++i)
          CHECK(adv[static_cast<std::size_t>(i)] == s.x_ids[static_cast<std::size_t>(i)]);
      }
    }
    SUCCEED();
  }

  SECTION("empty evaluation sets are rejected") {
    CHECK_THROWS_WITH(run_campaign({}, w.model, w.l2r, w.r2l, cfg), Catch::Matchers::ContainsSubstring("empty"));
  }

  SECTION("unknown attack names are rejected") {
    CampaignConfig c2 = cfg;
    c2.attacks = {"nope"};
    CHECK_THROWS_WITH(run_campaign(eval_set, w.model, w.l2r, w.r2l, c2),
                      Catch::Matchers::ContainsSubstring("unknown attack"));
  }
}

TEST_CASE("evaluation sets and records survive their file formats") {
  World& w = world();
  std::vector<EvaluationSample> samples =
      build_eval_set(w.data.heldout, w.data.dict, w.data.pos, w.model, 3, 3, 2, 40);
  REQUIRE(!samples.empty());
  save_eval_set(samples, "eval_rt.jsonl");
  std::vector<EvaluationSample> loaded = load_eval_set("eval_rt.jsonl");
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].x_ids == samples[i].x_ids);
    CHECK(loaded[i].x_text == samples[i].x_text);
    CHECK(loaded[i].z == samples[i].z);
    CHECK(loaded[i].span_begin == samples[i].span_begin);
    CHECK(loaded[i].span_end == samples[i].span_end);
    CHECK(loaded[i].Z == samples[i].Z);
    CHECK(loaded[i].h_p == samples[i].h_p);
  }
  std::remove("eval_rt.jsonl");

  SampleRecord rec;
  rec.attack = "twga";
  rec.sample_index = 3;
  rec.success = 1.0;
  rec.edit = 12.5;
  rec.query = 17;
  rec.retries = 2;
  rec.status = "Valid";
  rec.x_adv_text = "ka ro";
  rec.y_text = "fa zo";
  save_records({rec}, "rec_rt.jsonl");
  std::vector<SampleRecord> recs = load_records("rec_rt.jsonl");
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].attack == rec.attack);
  CHECK(recs[0].edit == rec.edit);
  CHECK(recs[0].query == rec.query);
  CHECK(recs[0].status == rec.status);
  std::remove("rec_rt.jsonl");
}

TEST_CASE("invalidity quantification matches its arithmetic") {
  BilingualDictionary d;
  d.add("rok", {"tu"});
  d.add("mipa", {"so"});

  auto mk = [&](std::vector<std::string> x, std::vector<std::string> x_adv, int setting, bool success) {
    LegacyResult r;
    r.attack = "legacy";
    r.success = success;
    r.pair.x = std::move(x);
    r.pair.x_adv = std::move(x_adv);
    r.pair.w = "tu";
    r.pair.setting = setting;
    return r;
  };

  SECTION("all-valid fixture gives zero invalid") {
    std::vector<LegacyResult> rs{mk({"ka"}, {"ro"}, 1, true), mk({"ka"}, {"mi"}, 1, true)};
    auto rows = quantify_invalid(rs, d);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].succ == 100.0);
    CHECK(rows[0].invalid == 0.0);
  }
  SECTION("one invalid among four successes is 25 percent") {
    std::vector<LegacyResult> rs{
        mk({"ka"}, {"ro"}, 1, true), mk({"ka"}, {"mi"}, 1, true),
        mk({"ka"}, {"rok"}, 1, true),  // smuggled source of "tu"
        mk({"ka"}, {"lu"}, 1, true),  mk({"ka"}, {"rok"}, 1, false),  // failures never count
    };
    auto rows = quantify_invalid(rs, d);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].succ == 80.0);
    CHECK(rows[0].invalid == 25.0);
    CHECK(rows[0].pairs == 5);
  }
  SECTION("settings aggregate separately and bad labels are rejected") {
    std::vector<LegacyResult> rs{mk({"rok"}, {"ka"}, 2, true), mk({"ka"}, {"rok"}, 1, true)};
    auto rows = quantify_invalid(rs, d);
    CHECK(rows.size() == 2);
    rs.push_back(mk({"ka"}, {"ro"}, 3, true));
    CHECK_THROWS_WITH(quantify_invalid(rs, d), Catch::Matchers::ContainsSubstring("unknown setting"));
  }
  SECTION("legacy fixtures round-trip through their file format") {
    std::vector<LegacyResult> rs{mk({"ka", "ro"}, {"ka", "rok"}, 1, true), mk({"rok"}, {"ka"}, 2, false)};
    save_legacy_results(rs, "legacy_rt.jsonl");
    std::vector<LegacyResult> loaded = load_legacy_results("legacy_rt.jsonl");
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].pair.x_adv == rs[0].pair.x_adv);
    CHECK(loaded[1].pair.setting == 2);
    CHECK(loaded[1].success == false);
    std::remove("legacy_rt.jsonl");
  }
}

TEST_CASE("tables render aligned rows") {
  AttackRow r1{"twga", 82.5, 12.25, 17.5, 300};
  AttackRow r2{"rr", 10.0, 30.0, 1.0, 300};
  std::string t = render_table({r1, r2});
  CHECK(t.find("twga") != std::string::npos);
  CHECK(t.find("82.50") != std::string::npos);
  CHECK(t.find("samples") != std::string::npos);

  InvalidityRow ir{"legacy", 1, 80.0, 25.0, 5};
  std::string t2 = render_invalidity_table({ir});
  CHECK(t2.find("Invalid") != std::string::npos);
  CHECK(t2.find("25.00") != std::string::npos);
}
