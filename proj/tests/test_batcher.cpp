#include <catch2/catch_amalgamated.hpp>

#include "negforge/batcher.hpp"
#include "negforge/synth.hpp"
#include "test_support.hpp"

using namespace negforge;
using testsupport::TempDir;

namespace {

std::vector<batcher::BatchItem> make_items(
    const std::vector<std::tuple<std::string, std::string, int>>& lang_topic_counts) {
  std::vector<batcher::BatchItem> items;
  int seq = 0;
  for (const auto& [lang, topic, count] : lang_topic_counts) {
    for (int i = 0; i < count; ++i) {
      batcher::BatchItem item;
      item.query_id = lang + "-" + topic + "-" + std::to_string(seq++);
      item.lang = lang;
      item.topic = topic;
      item.positive_doc_id = "p";
      items.push_back(std::move(item));
    }
  }
  return items;
}

genfill::FinalPool pool_of(int n) {
  genfill::FinalPool p;
  p.query_id = "q";
  p.lang = "en";
  p.n_target = n;
  for (int i = 0; i < n; ++i) {
    genfill::GeneratedNegative g;
    g.doc_id = "d" + std::to_string(i);
    p.negatives.push_back(g);
  }
  return p;
}

}  // namespace

TEST_CASE("merge table maps raw label pairs to the twelve topics", "[batcher]") {
  auto table = batcher::MergeTable::builtin();
  // Coarse label wins when both sides map.
  REQUIRE(table.topic_for("Company", "Business & Finance") == "BF");
  REQUIRE(table.topic_for("Company", "") == "BL");
  REQUIRE(table.topic_for("Plant", "") == "GE");
  REQUIRE(table.topic_for("Album", "") == "OT");
  REQUIRE(table.topic_for("", "Sports") == "SP");
  // Unknown labels fall back to OT.
  REQUIRE(table.topic_for("Martian", "Venusian") == "OT");
  REQUIRE(table.topic_for("", "") == "OT");
  // Rows without a topic cell map nothing.
  REQUIRE(table.topic_for("Film", "") == "OT");
}

TEST_CASE("merge table TSV round trip", "[batcher]") {
  TempDir dir;
  io::write_file(dir / "merge.tsv", batcher::MergeTable::builtin_tsv());
  auto table = batcher::MergeTable::from_file(dir / "merge.tsv");
  REQUIRE(table.topic_for("Company", "Business & Finance") == "BF");
  REQUIRE(table.rows().size() == 14);
  REQUIRE_THROWS_AS(batcher::MergeTable::from_tsv("only\ttwo"), validation_error);
}

TEST_CASE("topic assignment over a planted corpus matches the plant counts", "[batcher]") {
  TempDir dir;
  synth::SynthCorpus sc = synth::generate();
  synth::write_corpus_files(sc, dir.path);
  corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {dir / "qrels.tsv"}};
  corpus::Collection coll = corpus::Collection::ingest(paths, {});

  batcher::KeywordClassifier classifier;
  auto assignments = batcher::assign_topics(coll, classifier, batcher::MergeTable::builtin());
  REQUIRE(assignments.size() == coll.stats().total_queries());

  batcher::TopicHistogram hist;
  std::map<std::string, std::map<std::string, std::size_t>> expected;
  for (const auto& a : assignments) {
    const std::string lang = coll.query(a.query_id).lang;
    hist.add(lang, a.topic);
    expected[lang][sc.topic_of_query.at(a.query_id)]++;
    // Every assignment equals the planted topic.
    REQUIRE(a.topic == sc.topic_of_query.at(a.query_id));
  }
  REQUIRE(hist.counts == expected);

  std::string tsv = hist.to_tsv();
  REQUIRE(str::contains(tsv, "lang\tBL\tSM\tLH\tJE\tCI\tSP\tBF\tPG\tTT\tAE\tGE\tOT\tTotal"));
  REQUIRE(str::contains(tsv, "Total"));
}

TEST_CASE("unknown classifier output lands in OT", "[batcher]") {
  TempDir dir;
  testsupport::write_docs_jsonl(dir / "docs.jsonl", {{"d1", "en", "", "zzz unknowable prose"}});
  testsupport::write_queries_tsv(dir / "queries.tsv", {{"q1", "en", "zzz"}});
  testsupport::write_qrels_tsv(dir / "qrels.tsv", {{"q1", "d1", 1}});
  corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {dir / "qrels.tsv"}};
  corpus::Collection coll = corpus::Collection::ingest(paths, {});
  batcher::KeywordClassifier classifier;
  auto assignments = batcher::assign_topics(coll, classifier, batcher::MergeTable::builtin());
  REQUIRE(assignments.size() == 1);
  REQUIRE(assignments[0].topic == "OT");
}

TEST_CASE("uniform categories collapse weights onto the budgets", "[batcher]") {
  auto t = batcher::compute_weights({{"ar", 10}, {"sw", 10}}, {{"SM", 5}, {"GE", 5}}, 0.45, 0.4);
  REQUIRE_THAT(t.alpha.at("ar"), Catch::Matchers::WithinAbs(0.45, 1e-12));
  REQUIRE_THAT(t.alpha.at("sw"), Catch::Matchers::WithinAbs(0.45, 1e-12));
  REQUIRE_THAT(t.beta.at("SM"), Catch::Matchers::WithinAbs(0.4, 1e-12));
  // Table row: omega 0.85 = alpha 0.45 + beta 0.4.
  REQUIRE_THAT(t.omega("ar", "SM"), Catch::Matchers::WithinAbs(0.85, 1e-12));
}

TEST_CASE("skewed frequencies give the worked inverse-frequency values", "[batcher]") {
  // p = {0.8, 0.2}, alpha_hat = 0.45 -> alpha = {0.28125, 1.125}.
  auto t = batcher::compute_weights({{"hi", 80}, {"lo", 20}}, {{"SM", 1}}, 0.45, 0.4);
  REQUIRE_THAT(t.alpha.at("hi"), Catch::Matchers::WithinAbs(0.28125, 1e-12));
  REQUIRE_THAT(t.alpha.at("lo"), Catch::Matchers::WithinAbs(1.125, 1e-12));
  double weighted_mean = 0.8 * t.alpha.at("hi") + 0.2 * t.alpha.at("lo");
  REQUIRE_THAT(weighted_mean, Catch::Matchers::WithinAbs(0.45, 1e-12));
}

TEST_CASE("budget identities hold for 1000 random frequency vectors", "[batcher]") {
  rng::Pcg gen(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    std::map<std::string, std::size_t> langs, topics;
    int n_lang = 1 + static_cast<int>(gen.bounded(8));
    int n_topic = 1 + static_cast<int>(gen.bounded(12));
    for (int i = 0; i < n_lang; ++i) langs["l" + std::to_string(i)] = 1 + gen.bounded(5000);
    for (int i = 0; i < n_topic; ++i) topics["t" + std::to_string(i)] = 1 + gen.bounded(5000);
    double alpha_hat = gen.uniform() * 2 + 0.01;
    double beta_hat = gen.uniform() * 2 + 0.01;
    auto t = batcher::compute_weights(langs, topics, alpha_hat, beta_hat);

    double alpha_sum = 0, beta_sum = 0;
    for (const auto& [l, p] : t.p_lang) alpha_sum += p * t.alpha.at(l);
    for (const auto& [c, p] : t.p_topic) beta_sum += p * t.beta.at(c);
    REQUIRE_THAT(alpha_sum, Catch::Matchers::WithinAbs(alpha_hat, 1e-9));
    REQUIRE_THAT(beta_sum, Catch::Matchers::WithinAbs(beta_hat, 1e-9));
  }
}

TEST_CASE("rarer language gets strictly larger alpha", "[batcher]") {
  auto t = batcher::compute_weights({{"big", 90}, {"mid", 30}, {"rare", 5}}, {{"SM", 1}});
  REQUIRE(t.alpha.at("rare") > t.alpha.at("mid"));
  REQUIRE(t.alpha.at("mid") > t.alpha.at("big"));
}

TEST_CASE("empty category sets are rejected", "[batcher]") {
  REQUIRE_THROWS_AS(batcher::compute_weights({}, {{"SM", 1}}), validation_error);
  REQUIRE_THROWS_AS(batcher::compute_weights({{"en", 1}}, {}), validation_error);
  auto t = batcher::compute_weights({{"en", 1}}, {{"SM", 1}});
  REQUIRE_THROWS_AS(t.omega("en", "GE"), validation_error);
}

TEST_CASE("two languages of 24 items give two monolingual batches", "[batcher]") {
  auto items = make_items({{"ar", "SM", 24}, {"sw", "GE", 24}});
  auto epoch = batcher::schedule_epoch(items, 24, 7);
  REQUIRE(epoch.size() == 2);
  for (const auto& batch : epoch) {
    REQUIRE(batch.items.size() == 24);
    for (const auto& item : batch.items) REQUIRE(item.lang == batch.lang);
  }
}

TEST_CASE("counts {ar:48, sw:24} at B=24 give three full batches covering every item",
          "[batcher]") {
  auto items = make_items({{"ar", "SM", 24}, {"ar", "GE", 24}, {"sw", "GE", 24}});
  auto epoch = batcher::schedule_epoch(items, 24, 99);
  REQUIRE(epoch.size() == 3);
  int ar = 0, sw = 0;
  std::set<std::string> seen;
  for (const auto& batch : epoch) {
    (batch.lang == "ar" ? ar : sw)++;
    for (const auto& item : batch.items) {
      REQUIRE(item.lang == batch.lang);
      REQUIRE(seen.insert(item.query_id).second);  // scheduled exactly once
    }
  }
  REQUIRE(ar == 2);
  REQUIRE(sw == 1);
  REQUIRE(seen.size() == items.size());
}

TEST_CASE("12 topics with two items each respect the per-topic cap", "[batcher]") {
  std::vector<std::tuple<std::string, std::string, int>> spec;
  for (const std::string& t : batcher::topic_codes()) spec.push_back({"en", t, 2});
  auto items = make_items(spec);
  auto epoch = batcher::schedule_epoch(items, 24, 5);
  REQUIRE(epoch.size() == 1);
  std::map<std::string, int> per_topic;
  for (const auto& item : epoch[0].items) per_topic[item.topic]++;
  for (const auto& [_, n] : per_topic) REQUIRE(n <= 2);  // ceil(24/12) = 2
}

TEST_CASE("schedule is deterministic under the seed", "[batcher]") {
  auto items = make_items({{"en", "SM", 13}, {"en", "GE", 9}, {"fi", "SP", 17}, {"sw", "OT", 4}});
  auto a = batcher::schedule_epoch(items, 8, 4242);
  auto b = batcher::schedule_epoch(items, 8, 4242);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].lang == b[i].lang);
    REQUIRE(a[i].items.size() == b[i].items.size());
    for (std::size_t j = 0; j < a[i].items.size(); ++j)
      REQUIRE(a[i].items[j].query_id == b[i].items[j].query_id);
  }
  auto c = batcher::schedule_epoch(items, 8, 4243);
  bool any_diff = c.size() != a.size();
  for (std::size_t i = 0; !any_diff && i < a.size(); ++i)
    any_diff = a[i].lang != c[i].lang || a[i].items.size() != c[i].items.size() ||
               a[i].items[0].query_id != c[i].items[0].query_id;
  REQUIRE(any_diff);  // different seed actually changes something
}

TEST_CASE("uniform language choice still covers every item exactly once", "[batcher]") {
  auto items = make_items({{"en", "SM", 40}, {"sw", "GE", 5}});
  auto epoch = batcher::schedule_epoch(items, 8, 77, batcher::LangChoice::uniform);
  std::set<std::string> seen;
  for (const auto& batch : epoch) {
    for (const auto& item : batch.items) {
      REQUIRE(item.lang == batch.lang);
      REQUIRE(seen.insert(item.query_id).second);
    }
  }
  REQUIRE(seen.size() == items.size());
}

TEST_CASE("degenerate schedules are still valid", "[batcher]") {
  REQUIRE(batcher::schedule_epoch({}, 24, 1).empty());
  auto items = make_items({{"en", "SM", 1}});
  auto epoch = batcher::schedule_epoch(items, 24, 1);
  REQUIRE(epoch.size() == 1);
  REQUIRE(epoch[0].items.size() == 1);
  REQUIRE_THROWS_AS(batcher::schedule_epoch(items, 0, 1), validation_error);
}

TEST_CASE("negative sampling draws m distinct ids deterministically", "[batcher]") {
  auto p = pool_of(30);
  auto s1 = batcher::sample_negatives(p, 7, 11);
  auto s2 = batcher::sample_negatives(p, 7, 11);
  REQUIRE(s1.doc_ids == s2.doc_ids);
  REQUIRE(s1.doc_ids.size() == 7);
  std::set<std::string> uniq(s1.doc_ids.begin(), s1.doc_ids.end());
  REQUIRE(uniq.size() == 7);
  REQUIRE(!s1.short_fallback);

  auto s3 = batcher::sample_negatives(p, 7, 12);
  REQUIRE(s1.doc_ids != s3.doc_ids);
}

TEST_CASE("sampling the whole pool returns a permutation; short pools fall back", "[batcher]") {
  auto p = pool_of(7);
  auto whole = batcher::sample_negatives(p, 7, 3);
  REQUIRE(whole.doc_ids.size() == 7);
  std::set<std::string> uniq(whole.doc_ids.begin(), whole.doc_ids.end());
  REQUIRE(uniq.size() == 7);
  REQUIRE(!whole.short_fallback);

  auto small = pool_of(4);
  auto s = batcher::sample_negatives(small, 7, 3);
  REQUIRE(s.doc_ids.size() == 4);
  REQUIRE(s.short_fallback);
}

TEST_CASE("export writes one line per item with the table omega repeated", "[batcher]") {
  TempDir dir;
  testsupport::write_docs_jsonl(
      dir / "docs.jsonl",
      {{"p1", "en", "tp", "positive body"}, {"n1", "en", "", "neg one"}, {"n2", "en", "", "neg two"}});
  testsupport::write_queries_tsv(dir / "queries.tsv", {{"q1", "en", "ask"}, {"q2", "en", "ask2"}});
  testsupport::write_qrels_tsv(dir / "qrels.tsv", {{"q1", "p1", 1}, {"q2", "p1", 1}});
  corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {dir / "qrels.tsv"}};
  corpus::Collection coll = corpus::Collection::ingest(paths, {});

  auto weights = batcher::compute_weights({{"en", 2}}, {{"SM", 2}}, 0.45, 0.4);
  batcher::MiniBatch batch;
  batch.lang = "en";
  batch.batch_idx = 0;
  for (const std::string& qid : {"q1", "q2"}) {
    batcher::BatchItem item;
    item.query_id = qid;
    item.lang = "en";
    item.topic = "SM";
    item.positive_doc_id = "p1";
    item.negative_doc_ids = {"n1", "n2"};
    item.omega = weights.omega("en", "SM");
    batch.items.push_back(item);
  }

  std::string file = batcher::export_training_file({batch}, coll);
  auto lines = str::split(file, '\n');
  REQUIRE(lines.back().empty());
  lines.pop_back();
  REQUIRE(lines.size() == 2);
  for (const std::string& line : lines) {
    auto j = nlohmann::json::parse(line);
    REQUIRE(j.at("batch_idx") == 0);
    REQUIRE(j.at("positive") == "tp\npositive body");
    REQUIRE(j.at("negatives").size() == 2);
    REQUIRE(j.at("weights").size() == 2);
    // omega additivity, bit for bit.
    for (const auto& w : j.at("weights"))
      REQUIRE(w.get<double>() == weights.alpha.at("en") + weights.beta.at("SM"));
  }

  // Dangling doc ids are an error.
  batch.items[0].negative_doc_ids = {"ghost"};
  REQUIRE_THROWS_AS(batcher::export_training_file({batch}, coll), validation_error);
}
