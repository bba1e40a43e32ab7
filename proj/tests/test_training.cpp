#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "negforge/training.hpp"
#include "test_support.hpp"

using namespace negforge;
using testsupport::TempDir;

namespace {

std::vector<double> rand_vec(rng::Pcg& gen, int dim) {
  std::vector<double> v(dim);
  for (int i = 0; i < dim; ++i) v[i] = gen.uniform() * 2 - 1;
  return v;
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Direct scalar-arithmetic oracle for the contrastive loss, no shared code
// with the implementation path.
double loss_oracle(const std::vector<double>& q, const std::vector<double>& pos,
                   const std::vector<std::vector<double>>& negs) {
  auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double numer = std::exp(cos(q, pos));
  double denom = numer;
  for (const auto& n : negs) denom += std::exp(cos(q, n));
  return -std::log(numer / denom);
}

training::EmbeddedItem random_item(rng::Pcg& gen, int dim, int n_negs, double omega) {
  training::EmbeddedItem item;
  item.query = to_eigen(rand_vec(gen, dim));
  item.positive = to_eigen(rand_vec(gen, dim));
  for (int i = 0; i < n_negs; ++i) item.negatives.push_back(to_eigen(rand_vec(gen, dim)));
  item.omegas.assign(n_negs, omega);
  item.positive_key = "pos" + std::to_string(gen.next());
  return item;
}

}  // namespace

TEST_CASE("loss_mr trivial identities", "[training]") {
  std::vector<double> q = {1, 0, 0}, pos = {0.5, 0.5, 0};
  REQUIRE(training::loss_mr(q, pos, {}) == 0.0);  // -log(1)

  // All similarities equal with 7 negatives: uniform softmax -> ln 8.
  std::vector<std::vector<double>> negs(7, pos);
  REQUIRE_THAT(training::loss_mr(q, pos, negs),
               Catch::Matchers::WithinAbs(std::log(8.0), 1e-12));

  REQUIRE_THROWS_AS(training::loss_mr({0, 0, 0}, pos, {}), validation_error);
  REQUIRE_THROWS_AS(training::loss_mr(q, {1, 0}, {}), validation_error);
}

TEST_CASE("loss_mr matches the direct-formula oracle on 100 random instances", "[training]") {
  rng::Pcg gen(31337);
  for (int trial = 0; trial < 100; ++trial) {
    int dim = 8;
    int n_negs = static_cast<int>(gen.bounded(9));
    auto q = rand_vec(gen, dim);
    auto pos = rand_vec(gen, dim);
    std::vector<std::vector<double>> negs;
    for (int i = 0; i < n_negs; ++i) negs.push_back(rand_vec(gen, dim));
    REQUIRE_THAT(training::loss_mr(q, pos, negs),
                 Catch::Matchers::WithinAbs(loss_oracle(q, pos, negs), 1e-12));
  }
}

TEST_CASE("loss is shift invariant on logits", "[training]") {
  // Dyadic logits and shifts stay bit-identical through the stabilized path.
  std::vector<double> negs = {0.25, -0.5, 0.125};
  double base = training::loss_from_logits(0.75, negs);
  for (double shift : {0.5, 1.0, 2.0, -4.0}) {
    std::vector<double> shifted;
    for (double s : negs) shifted.push_back(s + shift);
    REQUIRE(training::loss_from_logits(0.75 + shift, shifted) == base);
  }
  // Random shifts stay within strict floating tolerance.
  rng::Pcg gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    double pos = gen.uniform() * 2 - 1;
    std::vector<double> raw;
    for (int i = 0; i < 5; ++i) raw.push_back(gen.uniform() * 2 - 1);
    double shift = gen.uniform() * 100 - 50;
    std::vector<double> shifted;
    for (double s : raw) shifted.push_back(s + shift);
    REQUIRE_THAT(training::loss_from_logits(pos + shift, shifted),
                 Catch::Matchers::WithinAbs(training::loss_from_logits(pos, raw), 1e-12));
  }
}

TEST_CASE("loss is monotone in the right directions", "[training]") {
  std::vector<double> negs = {0.2, -0.1};
  double base = training::loss_from_logits(0.5, negs);
  REQUIRE(training::loss_from_logits(0.6, negs) < base);   // better positive -> lower loss
  REQUIRE(training::loss_from_logits(0.5, {0.3, -0.1}) > base);  // better negative -> higher loss
  REQUIRE(base > 0);
}

TEST_CASE("loss_final equals the weighted mean of per-query losses", "[training]") {
  rng::Pcg gen(777);
  int dim = 8;
  std::vector<training::EmbeddedItem> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_item(gen, dim, 7, 0.85));
  Eigen::MatrixXd W = training::random_projection(8, dim, 9);

  auto report = training::loss_final(batch, W, false);
  double expected = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    expected += report.per_query_omega[i] * report.per_query_loss[i];
  expected /= static_cast<double>(batch.size());
  REQUIRE_THAT(report.batch_loss, Catch::Matchers::WithinAbs(expected, 1e-12));
  for (double w : report.per_query_omega)
    REQUIRE_THAT(w, Catch::Matchers::WithinAbs(0.85, 1e-12));
  for (double l : report.per_query_loss) REQUIRE(l >= 0);
}

TEST_CASE("single item, omega 0.85, ln 8 loss", "[training]") {
  // Identical positive and negatives under any projection give uniform
  // similarities, so the loss is exactly ln 8 and L_final = 0.85 * ln 8.
  int dim = 6;
  rng::Pcg gen(12);
  training::EmbeddedItem item;
  item.query = to_eigen(rand_vec(gen, dim));
  auto doc = rand_vec(gen, dim);
  item.positive = to_eigen(doc);
  for (int i = 0; i < 7; ++i) item.negatives.push_back(to_eigen(doc));
  item.omegas.assign(7, 0.85);
  item.positive_key = "p";
  Eigen::MatrixXd W = Eigen::MatrixXd::Identity(dim, dim);
  auto report = training::loss_final({item}, W, false);
  REQUIRE_THAT(report.batch_loss, Catch::Matchers::WithinAbs(0.85 * std::log(8.0), 1e-12));
}

TEST_CASE("unit weights reduce to the unweighted batch mean", "[training]") {
  rng::Pcg gen(99);
  std::vector<training::EmbeddedItem> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(random_item(gen, 8, 5, 1.0));
  Eigen::MatrixXd W = training::random_projection(8, 8, 3);
  auto report = training::loss_final(batch, W, false);
  double mean = 0;
  for (double l : report.per_query_loss) mean += l;
  mean /= 3.0;
  REQUIRE_THAT(report.batch_loss, Catch::Matchers::WithinAbs(mean, 1e-12));
}

TEST_CASE("in-batch negatives join the softmax, duplicates excluded", "[training]") {
  rng::Pcg gen(55);
  int dim = 8;
  auto a = random_item(gen, dim, 3, 1.0);
  auto b = random_item(gen, dim, 3, 1.0);
  Eigen::MatrixXd W = training::random_projection(8, dim, 4);

  auto off = training::loss_final({a, b}, W, false);
  auto on = training::loss_final({a, b}, W, true);
  // Extra denominators can only increase each per-query loss.
  REQUIRE(on.per_query_loss[0] > off.per_query_loss[0]);
  REQUIRE(on.per_query_loss[1] > off.per_query_loss[1]);

  // Same positive on both items: the in-batch duplicate is excluded.
  training::EmbeddedItem b2 = b;
  b2.positive = a.positive;
  b2.positive_key = a.positive_key;
  auto same_pos = training::loss_final({a, b2}, W, true);
  auto no_inbatch_a = training::loss_final({a}, W, false);
  REQUIRE_THAT(same_pos.per_query_loss[0],
               Catch::Matchers::WithinAbs(no_inbatch_a.per_query_loss[0], 1e-12));
}

TEST_CASE("temperature divides the logits", "[training]") {
  std::vector<double> q = {1, 0}, pos = {0.6, 0.8}, neg = {0, 1};
  double base = training::loss_mr(q, pos, {neg});
  double cooled = training::loss_mr(q, pos, {neg}, 0.5);
  // cos(q,pos) = 0.6 and cos(q,neg) = 0; tau = 0.5 doubles both logits.
  double expected = training::loss_from_logits(0.6 / 0.5, {0.0});
  REQUIRE_THAT(cooled, Catch::Matchers::WithinAbs(expected, 1e-12));
  REQUIRE(cooled != base);
  REQUIRE_THROWS_AS(training::loss_mr(q, pos, {neg}, 0.0), validation_error);

  // Gradients stay consistent with finite differences under tau != 1.
  rng::Pcg gen(321);
  auto item = random_item(gen, 6, 4, 1.0);
  Eigen::MatrixXd W = training::random_projection(6, 6, 2);
  auto report = training::loss_final({item}, W, false, 0.25);
  double err = training::grad_check(
      [&](const Eigen::MatrixXd& w) { return training::loss_final({item}, w, false, 0.25).batch_loss; },
      W, report.grad, 1e-5);
  REQUIRE(err < 1e-4);
}

TEST_CASE("truncation clips at codepoint boundaries", "[training]") {
  training::Truncation t;
  t.max_query_tokens = 2;
  t.chars_per_token = 3.0;  // 6 codepoints
  REQUIRE(t.clip_query("short") == "short");
  REQUIRE(t.clip_query("exactly6") == "exactl");
  // Two-byte codepoints survive intact.
  std::string greek = "αβγδεζηθ";
  std::string clipped = t.clip_query(greek);
  REQUIRE(clipped == "αβγδεζ");
  t.chars_per_token = 0;
  REQUIRE_THROWS_AS(t.clip_query("x"), validation_error);
}

TEST_CASE("analytic gradient matches central finite differences", "[training]") {
  rng::Pcg gen(2024);
  int dim = 8;
  std::vector<training::EmbeddedItem> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(random_item(gen, dim, 4, 0.7));
  Eigen::MatrixXd W = training::random_projection(8, dim, 77);

  for (bool in_batch : {false, true}) {
    auto report = training::loss_final(batch, W, in_batch);
    double err = training::grad_check(
        [&](const Eigen::MatrixXd& w) { return training::loss_final(batch, w, in_batch).batch_loss; },
        W, report.grad, 1e-5);
    REQUIRE(err < 1e-4);
  }
}

TEST_CASE("grad_check validates inputs and scales linearly", "[training]") {
  rng::Pcg gen(8);
  auto item = random_item(gen, 6, 3, 1.0);
  Eigen::MatrixXd W = training::random_projection(6, 6, 5);
  auto report = training::loss_final({item}, W, false);

  REQUIRE_THROWS_AS(training::grad_check([](const Eigen::MatrixXd&) { return 0.0; }, W,
                                         report.grad, 0.0),
                    validation_error);
  REQUIRE_THROWS_AS(training::grad_check([](const Eigen::MatrixXd&) { return 0.0; }, W,
                                         report.grad, 1e-2),
                    validation_error);

  // Zero projection: cosine undefined at the zero vectors.
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(6, 6);
  REQUIRE_THROWS_AS(training::loss_final({item}, zero, false), validation_error);

  // Doubling the loss doubles the analytic gradient exactly.
  auto doubled = [&](const Eigen::MatrixXd& w) {
    return 2.0 * training::loss_final({item}, w, false).batch_loss;
  };
  double err = training::grad_check(doubled, W, 2.0 * report.grad, 1e-5);
  REQUIRE(err < 1e-4);
}

namespace {

// Writes a small separable training file: positives share tokens with their
// queries, negatives do not.
std::filesystem::path write_training_file(const TempDir& dir, int n_items, int batch_size) {
  std::string out;
  for (int i = 0; i < n_items; ++i) {
    nlohmann::ordered_json j;
    j["query_id"] = "q" + std::to_string(i);
    j["query"] = "topic" + std::to_string(i % 4) + " anchor";
    j["positive"] = "topic" + std::to_string(i % 4) + " anchor body text";
    nlohmann::ordered_json negs = nlohmann::ordered_json::array();
    nlohmann::ordered_json weights = nlohmann::ordered_json::array();
    for (int n = 0; n < 4; ++n) {
      negs.push_back("unrelated" + std::to_string((i * 7 + n) % 9) + " chaff words");
      weights.push_back(0.85);
    }
    j["negatives"] = negs;
    j["weights"] = weights;
    j["lang"] = "en";
    j["topic"] = "SM";
    j["batch_idx"] = i / batch_size;
    out += j.dump();
    out += '\n';
  }
  auto path = dir / "train.jsonl";
  io::write_file(path, out);
  return path;
}

}  // namespace

TEST_CASE("train_toy: lr=0 leaves parameters unchanged", "[training]") {
  TempDir dir;
  auto path = write_training_file(dir, 8, 4);
  auto items = training::parse_training_file(path);
  providers::Client client;
  providers::ProviderConfig cfg;
  cfg.endpoint = "builtin:stub";
  cfg.model = "hash16";

  training::ToyTrainConfig tcfg;
  tcfg.epochs = 3;
  tcfg.lr = 0.0;
  tcfg.seed = 21;
  auto result = training::train_toy(items, client, cfg, tcfg);
  REQUIRE(result.W == result.initial_W);
  REQUIRE(result.loss_curve.size() == 3);
}

TEST_CASE("train_toy reduces loss on separable embeddings", "[training]") {
  TempDir dir;
  auto path = write_training_file(dir, 16, 4);
  auto items = training::parse_training_file(path);
  providers::Client client;
  providers::ProviderConfig cfg;
  cfg.endpoint = "builtin:stub";
  cfg.model = "hash16";

  training::ToyTrainConfig tcfg;
  tcfg.epochs = 10;
  tcfg.lr = 0.5;
  tcfg.seed = 21;
  auto result = training::train_toy(items, client, cfg, tcfg);
  REQUIRE(result.loss_curve.back() < result.loss_curve.front());
}

TEST_CASE("train_toy is deterministic under the seed", "[training]") {
  TempDir dir;
  auto path = write_training_file(dir, 8, 4);
  auto items = training::parse_training_file(path);
  providers::Client client;
  providers::ProviderConfig cfg;
  cfg.endpoint = "builtin:stub";
  cfg.model = "hash16";
  training::ToyTrainConfig tcfg;
  tcfg.epochs = 4;
  tcfg.lr = 0.2;
  tcfg.seed = 33;
  auto a = training::train_toy(items, client, cfg, tcfg);
  auto b = training::train_toy(items, client, cfg, tcfg);
  REQUIRE(a.loss_curve == b.loss_curve);
  REQUIRE(a.W == b.W);
}

TEST_CASE("evaluate: perfect ranking scores 1.0 on both metrics", "[training]") {
  std::map<std::string, std::vector<training::RunEntry>> run;
  run["q1"] = {{"q1", "rel", 0.9, 1}, {"q1", "junk", 0.5, 2}};
  std::map<std::string, std::map<std::string, int>> qrels;
  qrels["q1"] = {{"rel", 1}};
  auto r = training::evaluate(run, qrels, [](const std::string&) { return "en"; });
  REQUIRE(r.ndcg_by_query.at("q1") == 1.0);
  REQUIRE(r.recall_by_query.at("q1") == 1.0);
  REQUIRE(r.macro_ndcg == 1.0);
  REQUIRE(r.macro_recall == 1.0);
}

TEST_CASE("evaluate: single relevant doc at rank 2 gives 1/log2(3)", "[training]") {
  std::map<std::string, std::vector<training::RunEntry>> run;
  run["q1"] = {{"q1", "junk", 0.9, 1}, {"q1", "rel", 0.5, 2}};
  std::map<std::string, std::map<std::string, int>> qrels;
  qrels["q1"] = {{"rel", 1}};
  auto r = training::evaluate(run, qrels, [](const std::string&) { return "en"; });
  REQUIRE_THAT(r.ndcg_by_query.at("q1"),
               Catch::Matchers::WithinAbs(1.0 / std::log2(3.0), 1e-9));
}

TEST_CASE("evaluate matches a brute-force metric oracle on random runs", "[training]") {
  rng::Pcg gen(60);
  for (int trial = 0; trial < 100; ++trial) {
    int n_docs = 20 + static_cast<int>(gen.bounded(30));
    int ndcg_k = 10, recall_k = 15;
    std::map<std::string, std::vector<training::RunEntry>> run;
    std::map<std::string, std::map<std::string, int>> qrels;
    std::vector<std::pair<double, std::string>> scored;
    for (int d = 0; d < n_docs; ++d) {
      std::string id = "d" + std::to_string(d);
      double score = gen.uniform();
      scored.push_back({score, id});
      run["q"].push_back({"q", id, score, 0});
      if (gen.uniform() < 0.3) qrels["q"][id] = 1 + static_cast<int>(gen.bounded(3));
    }
    if (qrels["q"].empty()) qrels["q"]["d0"] = 1;

    auto r = training::evaluate(run, qrels, [](const std::string&) { return "x"; }, ndcg_k,
                                recall_k);

    // Oracle: sort by (score desc, id asc), apply the definitions literally.
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    double dcg = 0;
    int hits = 0, relevant = 0;
    for (const auto& [_, grade] : qrels["q"])
      if (grade >= 1) relevant++;
    for (int i = 0; i < static_cast<int>(scored.size()); ++i) {
      int grade = qrels["q"].count(scored[i].second) ? qrels["q"][scored[i].second] : 0;
      if (i < ndcg_k) dcg += grade / std::log2(i + 2.0);
      if (i < recall_k && grade >= 1) hits++;
    }
    std::vector<int> grades;
    for (const auto& [_, g] : qrels["q"])
      if (g >= 1) grades.push_back(g);
    std::sort(grades.rbegin(), grades.rend());
    double idcg = 0;
    for (int i = 0; i < static_cast<int>(grades.size()) && i < ndcg_k; ++i)
      idcg += grades[i] / std::log2(i + 2.0);

    REQUIRE_THAT(r.ndcg_by_query.at("q"), Catch::Matchers::WithinAbs(dcg / idcg, 1e-9));
    REQUIRE_THAT(r.recall_by_query.at("q"),
                 Catch::Matchers::WithinAbs(static_cast<double>(hits) / relevant, 1e-9));
  }
}

TEST_CASE("metrics are invariant under monotone score transforms", "[training]") {
  rng::Pcg gen(61);
  std::map<std::string, std::vector<training::RunEntry>> run, run_t;
  std::map<std::string, std::map<std::string, int>> qrels;
  for (int d = 0; d < 30; ++d) {
    std::string id = "d" + std::to_string(d);
    double score = gen.uniform();
    run["q"].push_back({"q", id, score, 0});
    run_t["q"].push_back({"q", id, std::exp(3 * score) + 7, 0});
    if (d % 3 == 0) qrels["q"][id] = 1;
  }
  auto lang = [](const std::string&) { return "x"; };
  auto a = training::evaluate(run, qrels, lang);
  auto b = training::evaluate(run_t, qrels, lang);
  REQUIRE(a.ndcg_by_query.at("q") == b.ndcg_by_query.at("q"));
  REQUIRE(a.recall_by_query.at("q") == b.recall_by_query.at("q"));
}

TEST_CASE("queries without positives are skipped with a warning entry", "[training]") {
  std::map<std::string, std::vector<training::RunEntry>> run;
  run["q1"] = {{"q1", "a", 1.0, 1}};
  run["q2"] = {{"q2", "b", 1.0, 1}};
  std::map<std::string, std::map<std::string, int>> qrels;
  qrels["q1"] = {{"a", 1}};
  qrels["q2"] = {{"b", 0}};  // judged but nothing positive
  auto r = training::evaluate(run, qrels, [](const std::string&) { return "en"; });
  REQUIRE(r.ndcg_by_query.count("q1"));
  REQUIRE(!r.ndcg_by_query.count("q2"));
  REQUIRE(r.skipped == std::vector<std::string>{"q2"});
}

TEST_CASE("macro average is per-language then uniform over languages", "[training]") {
  std::map<std::string, std::vector<training::RunEntry>> run;
  std::map<std::string, std::map<std::string, int>> qrels;
  // en: two queries at nDCG 1.0 and 0.0; sw: one query at 1.0.
  run["e1"] = {{"e1", "r", 1.0, 1}};
  qrels["e1"] = {{"r", 1}};
  run["e2"] = {{"e2", "x", 1.0, 1}};
  qrels["e2"] = {{"r2", 1}};  // relevant doc never retrieved
  run["s1"] = {{"s1", "r", 1.0, 1}};
  qrels["s1"] = {{"r", 1}};
  auto r = training::evaluate(run, qrels, [](const std::string& q) {
    return q[0] == 'e' ? std::string("en") : std::string("sw");
  });
  REQUIRE_THAT(r.ndcg_by_lang.at("en"), Catch::Matchers::WithinAbs(0.5, 1e-12));
  REQUIRE(r.ndcg_by_lang.at("sw") == 1.0);
  REQUIRE_THAT(r.macro_ndcg, Catch::Matchers::WithinAbs(0.75, 1e-12));
}

TEST_CASE("trec run round trip", "[training]") {
  std::map<std::string, std::vector<training::RunEntry>> run;
  run["q1"] = {{"q1", "d1", 0.75, 1}, {"q1", "d2", 0.5, 2}};
  std::string text = training::to_trec_run(run, "tag");
  REQUIRE(str::contains(text, "q1\tQ0\td1\t1\t0.750000\ttag"));
  auto back = training::parse_trec_run(text);
  REQUIRE(back.at("q1").size() == 2);
  REQUIRE(back.at("q1")[1].doc_id == "d2");
  REQUIRE_THROWS_AS(training::parse_trec_run("one two three"), validation_error);
}
