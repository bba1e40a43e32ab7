#include <catch2/catch_amalgamated.hpp>

#include "negforge/corpus.hpp"
#include "negforge/synth.hpp"
#include "test_support.hpp"

using namespace negforge;
using testsupport::TempDir;

namespace {

corpus::Collection tiny_collection(const TempDir& dir) {
  testsupport::write_docs_jsonl(dir / "docs.jsonl",
                                {{"d1", "en", "t1", "alpha beta"}, {"d2", "en", "", "gamma"}});
  testsupport::write_queries_tsv(dir / "queries.tsv", {{"q1", "en", "alpha"}});
  testsupport::write_qrels_tsv(dir / "qrels.tsv", {{"q1", "d1", 1}});
  corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {dir / "qrels.tsv"}};
  return corpus::Collection::ingest(paths, {{"en"}, 1});
}

}  // namespace

TEST_CASE("ingest counts a tiny one-language corpus", "[corpus]") {
  TempDir dir;
  corpus::Collection coll = tiny_collection(dir);
  REQUIRE(coll.stats().per_lang.at("en").queries == 1);
  REQUIRE(coll.stats().per_lang.at("en").judgments == 1);
  REQUIRE(coll.stats().per_lang.at("en").passages == 2);
}

TEST_CASE("dangling qrel reference names the id", "[corpus]") {
  TempDir dir;
  testsupport::write_docs_jsonl(dir / "docs.jsonl", {{"d1", "en", "", "alpha"}});
  testsupport::write_queries_tsv(dir / "queries.tsv", {{"q1", "en", "alpha"}});
  testsupport::write_qrels_tsv(dir / "qrels.tsv", {{"q1", "ghost", 1}});
  corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {dir / "qrels.tsv"}};
  REQUIRE_THROWS_MATCHES(corpus::Collection::ingest(paths, {{"en"}, 1}), validation_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("ghost")));
}

TEST_CASE("malformed lines report the line number", "[corpus]") {
  TempDir dir;
  io::write_file(dir / "docs.jsonl", "{\"doc_id\":\"d1\",\"lang\":\"en\",\"text\":\"a\"}\nnot json\n");
  testsupport::write_queries_tsv(dir / "queries.tsv", {{"q1", "en", "a"}});
  corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {}};
  REQUIRE_THROWS_MATCHES(
      corpus::Collection::ingest(paths, {{"en"}, 1}), validation_error,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(":2")));
}

TEST_CASE("duplicate ids and unknown languages are rejected", "[corpus]") {
  TempDir dir;
  SECTION("duplicate doc id") {
    testsupport::write_docs_jsonl(dir / "docs.jsonl",
                                  {{"d1", "en", "", "a"}, {"d1", "en", "", "b"}});
    testsupport::write_queries_tsv(dir / "queries.tsv", {{"q1", "en", "a"}});
    corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {}};
    REQUIRE_THROWS_AS(corpus::Collection::ingest(paths, {{"en"}, 1}), validation_error);
  }
  SECTION("unknown language code") {
    testsupport::write_docs_jsonl(dir / "docs.jsonl", {{"d1", "xx", "", "a"}});
    testsupport::write_queries_tsv(dir / "queries.tsv", {{"q1", "en", "a"}});
    corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {}};
    REQUIRE_THROWS_AS(corpus::Collection::ingest(paths, {{"en"}, 1}), validation_error);
  }
  SECTION("language with zero queries") {
    testsupport::write_docs_jsonl(dir / "docs.jsonl",
                                  {{"d1", "en", "", "a"}, {"d2", "sw", "", "b"}});
    testsupport::write_queries_tsv(dir / "queries.tsv", {{"q1", "en", "a"}});
    corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {}};
    REQUIRE_THROWS_MATCHES(corpus::Collection::ingest(paths, {{"en", "sw"}, 1}), validation_error,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("zero queries")));
  }
}

TEST_CASE("synthetic corpus stats equal an independent line recount", "[corpus]") {
  TempDir dir;
  synth::SynthCorpus sc = synth::generate();
  synth::write_corpus_files(sc, dir.path);
  corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {dir / "qrels.tsv"}};
  corpus::Collection coll = corpus::Collection::ingest(paths, {});

  // Oracle: recount the files directly.
  std::map<std::string, std::size_t> docs_per_lang, queries_per_lang, qrels_per_lang;
  std::map<std::string, std::string> lang_of_query;
  for (const std::string& line : io::read_lines(dir / "docs.jsonl")) {
    if (line.empty()) continue;
    docs_per_lang[nlohmann::json::parse(line).at("lang").get<std::string>()]++;
  }
  for (const std::string& line : io::read_lines(dir / "queries.tsv")) {
    if (line.empty()) continue;
    auto cols = str::split(line, '\t');
    queries_per_lang[cols[1]]++;
    lang_of_query[cols[0]] = cols[1];
  }
  for (const std::string& line : io::read_lines(dir / "qrels.tsv")) {
    if (line.empty()) continue;
    qrels_per_lang[lang_of_query.at(str::split(line, '\t')[0])]++;
  }

  std::size_t total_docs = 0;
  for (const auto& [lang, stats] : coll.stats().per_lang) {
    REQUIRE(stats.passages == docs_per_lang.at(lang));
    REQUIRE(stats.queries == queries_per_lang.at(lang));
    REQUIRE(stats.judgments == qrels_per_lang.at(lang));
    total_docs += stats.passages;
  }
  REQUIRE(total_docs == 200);
  REQUIRE(coll.languages().size() == 3);

  // Stats invariant: per-language query counts sum to the total.
  std::size_t sum = 0;
  for (const auto& [_, stats] : coll.stats().per_lang) sum += stats.queries;
  REQUIRE(sum == coll.stats().total_queries());
}

TEST_CASE("positives_of orders by grade desc then doc_id", "[corpus]") {
  TempDir dir;
  testsupport::write_docs_jsonl(
      dir / "docs.jsonl",
      {{"a", "en", "", "x"}, {"b", "en", "", "y"}, {"c", "en", "", "z"}});
  testsupport::write_queries_tsv(dir / "queries.tsv", {{"q1", "en", "x"}, {"q2", "en", "y"}});
  testsupport::write_qrels_tsv(dir / "qrels.tsv",
                               {{"q1", "b", 1}, {"q1", "a", 2}, {"q2", "c", 1}, {"q2", "a", 0}});
  corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {dir / "qrels.tsv"}};
  corpus::Collection coll = corpus::Collection::ingest(paths, {});

  REQUIRE(coll.positives_of("q1") == std::vector<std::string>{"a", "b"});
  REQUIRE(coll.positives_of("q2") == std::vector<std::string>{"c"});
  REQUIRE_THROWS_AS(coll.positives_of("nope"), validation_error);
}

TEST_CASE("positives_of matches a brute-force scan on random qrels", "[corpus]") {
  TempDir dir;
  rng::Pcg gen(99);
  std::vector<corpus::Document> docs;
  for (int i = 0; i < 20; ++i) docs.push_back({"d" + std::to_string(i), "en", "", "w"});
  std::vector<corpus::Query> queries;
  for (int i = 0; i < 6; ++i) queries.push_back({"q" + std::to_string(i), "en", "w"});
  std::vector<corpus::Qrel> qrels;
  for (const auto& q : queries)
    for (const auto& d : docs)
      if (gen.uniform() < 0.3)
        qrels.push_back({q.query_id, d.doc_id, static_cast<int>(gen.bounded(3))});

  testsupport::write_docs_jsonl(dir / "docs.jsonl", docs);
  testsupport::write_queries_tsv(dir / "queries.tsv", queries);
  testsupport::write_qrels_tsv(dir / "qrels.tsv", qrels);
  corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {dir / "qrels.tsv"}};
  corpus::Collection coll = corpus::Collection::ingest(paths, {});

  for (const auto& q : queries) {
    // Oracle: linear scan over the raw qrel list.
    std::vector<std::pair<int, std::string>> expected;
    for (const auto& qr : qrels)
      if (qr.query_id == q.query_id && qr.grade >= 1) expected.push_back({-qr.grade, qr.doc_id});
    std::sort(expected.begin(), expected.end());
    std::vector<std::string> expected_ids;
    for (const auto& [_, id] : expected) expected_ids.push_back(id);
    REQUIRE(coll.positives_of(q.query_id) == expected_ids);
  }
}

TEST_CASE("re-ingest yields byte-identical persisted state", "[corpus]") {
  TempDir dir;
  synth::SynthCorpus sc = synth::generate();
  synth::write_corpus_files(sc, dir.path);
  corpus::IngestPaths paths{{dir / "docs.jsonl"}, {dir / "queries.tsv"}, {dir / "qrels.tsv"}};

  corpus::Collection a = corpus::Collection::ingest(paths, {});
  corpus::Collection b = corpus::Collection::ingest(paths, {});
  a.save(dir / "handle_a");
  b.save(dir / "handle_b");

  for (const std::string& lang : a.languages()) {
    REQUIRE(io::read_file(dir / "handle_a" / (lang + ".jsonl")) ==
            io::read_file(dir / "handle_b" / (lang + ".jsonl")));
  }
  REQUIRE(io::read_file(dir / "handle_a" / "stats.json") ==
          io::read_file(dir / "handle_b" / "stats.json"));

  // Round trip through the persisted handle preserves everything.
  corpus::Collection c = corpus::Collection::load(dir / "handle_a");
  c.save(dir / "handle_c");
  for (const std::string& lang : a.languages())
    REQUIRE(io::read_file(dir / "handle_a" / (lang + ".jsonl")) ==
            io::read_file(dir / "handle_c" / (lang + ".jsonl")));
}
