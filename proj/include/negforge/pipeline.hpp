#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "negforge/batcher.hpp"
#include "negforge/corpus.hpp"
#include "negforge/digest.hpp"
#include "negforge/genfill.hpp"
#include "negforge/judge.hpp"
#include "negforge/mining.hpp"
#include "negforge/providers.hpp"
#include "negforge/training.hpp"

namespace negforge::pipeline {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Stage names in dependency order.
inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"ingest", "mine",  "judge",     "backfill",
                                                 "topics", "batch", "train-toy", "eval"};
  return names;
}

struct PipelineConfig {
  fs::path base_dir;  // config file directory; relative paths resolve against it
  fs::path out_dir;
  std::uint64_t seed = 17;

  std::vector<std::string> languages;
  corpus::IngestPaths corpus_paths;
  int positive_threshold = 1;

  fs::path cache_path;
  bool replay_only = false;

  providers::ProviderConfig embedding;
  providers::ProviderConfig generation;
  providers::ProviderConfig translation;

  mining::EnsembleConfig ensemble;
  judge::JudgeConfig judge_cfg;
  genfill::GenfillConfig genfill_cfg;

  double alpha_hat = 0.45;
  double beta_hat = 0.4;
  int batch_size = 24;
  int negatives_per_item = 7;
  fs::path merge_table_path;  // empty = builtin table
  bool in_batch = false;
  batcher::LangChoice lang_choice = batcher::LangChoice::proportional;

  training::ToyTrainConfig train_cfg;
  int eval_top_k = 100;
  int ndcg_k = 10;
  int recall_k = 100;

  fs::path alpaca_path;
  std::string instruction_source_lang = "en";
  std::string mine_lang;  // restrict mining to one language; empty = all

  // artifact filename -> replacement path, for pointing a stage at a file
  // that lives outside the standard out_dir layout.
  std::map<std::string, std::string> artifact_overrides;

  json raw;  // the parsed config file, for digesting

  std::string config_digest() const {
    return digest::sha256_hex(providers::canonicalize(raw).dump());
  }
};

namespace detail {

inline providers::ProviderConfig provider_from_json(const json& j,
                                                    const providers::ProviderConfig& defaults) {
  providers::ProviderConfig cfg = defaults;
  if (j.contains("endpoint")) cfg.endpoint = j.at("endpoint").get<std::string>();
  if (j.contains("model")) cfg.model = j.at("model").get<std::string>();
  if (j.contains("timeout_s")) cfg.timeout_s = j.at("timeout_s").get<double>();
  if (j.contains("max_in_flight")) cfg.max_in_flight = j.at("max_in_flight").get<int>();
  if (j.contains("retries")) cfg.retries = j.at("retries").get<int>();
  if (j.contains("temperature")) cfg.temperature = j.at("temperature").get<double>();
  if (j.contains("max_tokens")) cfg.max_tokens = j.at("max_tokens").get<int>();
  if (j.contains("max_prompt_chars")) cfg.max_prompt_chars = j.at("max_prompt_chars").get<int>();
  if (j.contains("bearer_token")) cfg.bearer_token = j.at("bearer_token").get<std::string>();
  return cfg;
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

inline PipelineConfig load_config_json(const json& j, const fs::path& base_dir) {
  PipelineConfig cfg;
  cfg.raw = j;
  cfg.base_dir = base_dir;

  cfg.out_dir = detail::resolve(cfg.base_dir, j.value("output_dir", std::string{"out"}));
  cfg.seed = j.value("seed", 17ULL);
  cfg.languages = j.value("languages", std::vector<std::string>{});

  if (!j.contains("corpus")) throw validation_error("config: missing 'corpus' section");
  const json& jc = j.at("corpus");
  for (const auto& p : jc.value("documents", std::vector<std::string>{}))
    cfg.corpus_paths.documents.push_back(detail::resolve(cfg.base_dir, p));
  for (const auto& p : jc.value("queries", std::vector<std::string>{}))
    cfg.corpus_paths.queries.push_back(detail::resolve(cfg.base_dir, p));
  for (const auto& p : jc.value("qrels", std::vector<std::string>{}))
    cfg.corpus_paths.qrels.push_back(detail::resolve(cfg.base_dir, p));
  cfg.positive_threshold = jc.value("positive_threshold", 1);

  cfg.cache_path = detail::resolve(cfg.base_dir, j.value("cache", std::string{"out/cache.jsonl"}));
  cfg.replay_only = j.value("replay_only", false);

  providers::ProviderConfig base;
  const json jp = j.value("providers", json::object());
  cfg.embedding = detail::provider_from_json(jp.value("embedding", json::object()), base);
  base.temperature = 0.7;
  cfg.generation = detail::provider_from_json(jp.value("generation", json::object()), base);
  cfg.translation = detail::provider_from_json(jp.value("translation", json::object()), base);

  const json je = j.value("ensemble", json::object());
  cfg.ensemble.fusion = mining::fusion_mode_from(je.value("fusion", std::string{"znorm-mean"}));
  cfg.ensemble.k = je.value("k", 40);
  cfg.ensemble.rrf_k = je.value("rrf_k", 60.0);
  if (je.contains("roster")) {
    for (const json& jr : je.at("roster")) {
      mining::RetrieverSpec spec;
      spec.name = jr.at("name").get<std::string>();
      std::string kind = jr.value("kind", std::string{"lexical"});
      spec.kind = kind == "embedding" ? mining::RetrieverSpec::Kind::embedding
                                      : mining::RetrieverSpec::Kind::lexical;
      spec.weight = jr.value("weight", 1.0);
      spec.provider = jr.contains("provider")
                          ? detail::provider_from_json(jr.at("provider"), cfg.embedding)
                          : cfg.embedding;
      cfg.ensemble.roster.push_back(std::move(spec));
    }
  } else {
    mining::RetrieverSpec lexical;
    lexical.name = "bm25";
    lexical.kind = mining::RetrieverSpec::Kind::lexical;
    cfg.ensemble.roster.push_back(lexical);
    mining::RetrieverSpec dense;
    dense.name = "dense";
    dense.kind = mining::RetrieverSpec::Kind::embedding;
    dense.provider = cfg.embedding;
    cfg.ensemble.roster.push_back(dense);
  }

  const json jj = j.value("judge", json::object());
  cfg.judge_cfg.removal_threshold = jj.value("threshold", 1);
  cfg.judge_cfg.aggregator = judge::aggregator_from(jj.value("aggregator", std::string{"min"}));

  const json jg = j.value("genfill", json::object());
  cfg.genfill_cfg.n_target = jg.value("n", 30);
  cfg.genfill_cfg.retry_budget = jg.value("retries", 3);
  cfg.genfill_cfg.check_script = jg.value("check_script", true);
  cfg.genfill_cfg.rejudge_generated = jg.value("rejudge", false);

  const json jb = j.value("batch", json::object());
  cfg.alpha_hat = jb.value("alpha", 0.45);
  cfg.beta_hat = jb.value("beta", 0.4);
  cfg.batch_size = jb.value("batch_size", 24);
  cfg.negatives_per_item = jb.value("negatives", 7);
  cfg.in_batch = jb.value("in_batch", false);
  cfg.lang_choice = jb.value("lang_choice", std::string{"proportional"}) == "uniform"
                        ? batcher::LangChoice::uniform
                        : batcher::LangChoice::proportional;
  if (jb.contains("merge_table"))
    cfg.merge_table_path = detail::resolve(cfg.base_dir, jb.at("merge_table").get<std::string>());

  const json jt = j.value("train", json::object());
  cfg.train_cfg.epochs = jt.value("epochs", 20);
  cfg.train_cfg.lr = jt.value("lr", 2e-6);
  cfg.train_cfg.out_dim = jt.value("out_dim", 0);
  cfg.train_cfg.tau = jt.value("tau", 1.0);
  cfg.train_cfg.truncation.max_query_tokens = jt.value("max_query_tokens", 64);
  cfg.train_cfg.truncation.max_passage_tokens = jt.value("max_passage_tokens", 256);
  cfg.train_cfg.truncation.chars_per_token = jt.value("chars_per_token", 6.0);
  cfg.train_cfg.in_batch = cfg.in_batch;
  cfg.train_cfg.seed = cfg.seed;  // re-derived per stage

  const json jev = j.value("eval", json::object());
  cfg.eval_top_k = jev.value("top_k", 100);
  cfg.ndcg_k = jev.value("ndcg_k", 10);
  cfg.recall_k = jev.value("recall_k", 100);

  const json ji = j.value("instructions", json::object());
  if (ji.contains("alpaca"))
    cfg.alpaca_path = detail::resolve(cfg.base_dir, ji.at("alpaca").get<std::string>());
  cfg.instruction_source_lang = ji.value("source_lang", std::string{"en"});

  cfg.mine_lang = j.value("mine", json::object()).value("lang", std::string{});

  const json ja = j.value("artifacts", json::object());
  for (auto it = ja.begin(); it != ja.end(); ++it)
    cfg.artifact_overrides[it.key()] = it.value().get<std::string>();

  return cfg;
}

inline PipelineConfig load_config(const fs::path& config_path) {
  json j = json::parse(io::read_file(config_path));
  fs::path base = config_path.has_parent_path() ? config_path.parent_path() : fs::path(".");
  return load_config_json(j, base);
}

// Runs stages against the filesystem. Every artifact is a plain file under
// out_dir; the manifest records input digests, the config digest and the
// derived seed per stage, which is what makes reruns skippable and replay
// runs comparable.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
    fs::create_directories(cfg_.out_dir);
    cache_ = std::make_shared<providers::Cache>(cfg_.cache_path, cfg_.replay_only);
    client_ = std::make_shared<providers::Client>(cache_);
    manifest_path_ = cfg_.out_dir / "manifest.json";
    if (fs::exists(manifest_path_)) manifest_ = json::parse(io::read_file(manifest_path_));
  }

  const PipelineConfig& config() const { return cfg_; }
  providers::Client& client() { return *client_; }
  const json& manifest() const { return manifest_; }

  fs::path artifact(const std::string& name) const {
    auto it = cfg_.artifact_overrides.find(name);
    if (it != cfg_.artifact_overrides.end()) return detail::resolve(cfg_.base_dir, it->second);
    return cfg_.out_dir / name;
  }

  // Maps a stage to the upstream stage it needs and the files it reads.
  std::vector<std::pair<std::string, fs::path>> stage_inputs(const std::string& stage) const {
    if (stage == "ingest") {
      std::vector<std::pair<std::string, fs::path>> in;
      for (const auto& p : cfg_.corpus_paths.documents) in.emplace_back("", p);
      for (const auto& p : cfg_.corpus_paths.queries) in.emplace_back("", p);
      for (const auto& p : cfg_.corpus_paths.qrels) in.emplace_back("", p);
      return in;
    }
    if (stage == "mine") return {{"ingest", artifact("corpus_handle/stats.json")}};
    if (stage == "judge") return {{"mine", artifact("mined.jsonl")}};
    if (stage == "backfill")
      return {{"judge", artifact("judged.jsonl")}, {"mine", artifact("mined.jsonl")}};
    if (stage == "topics") return {{"ingest", artifact("corpus_handle/stats.json")}};
    if (stage == "batch")
      return {{"backfill", artifact("pools.jsonl")}, {"topics", artifact("topics.jsonl")}};
    if (stage == "train-toy") return {{"batch", artifact("batches.jsonl")}};
    if (stage == "eval") return {{"train-toy", artifact("projection.json")}};
    throw validation_error("unknown stage: " + stage);
  }

  void check_upstream(const std::string& stage) const {
    for (const auto& [upstream, path] : stage_inputs(stage)) {
      if (!fs::exists(path)) {
        if (upstream.empty())
          throw validation_error(stage + ": missing input file " + path.string());
        throw upstream_missing_error(stage + ": missing upstream artifact " + path.string() +
                                     " (run stage '" + upstream + "' first)");
      }
    }
  }

  bool stage_fresh(const std::string& stage) {
    if (!manifest_.contains(stage)) return false;
    const json& entry = manifest_.at(stage);
    if (entry.value("config_digest", std::string{}) != cfg_.config_digest()) return false;
    for (const auto& [_, path] : stage_inputs(stage)) {
      if (!fs::exists(path)) return false;
      std::string rel = fs::relative(path, cfg_.out_dir).string();
      if (!entry.at("inputs").contains(rel) ||
          entry.at("inputs").at(rel).get<std::string>() != digest::sha256_file_hex(path))
        return false;
    }
    for (const auto& out : entry.at("outputs"))
      if (!fs::exists(cfg_.out_dir / out.get<std::string>())) return false;
    return true;
  }

  void run_stage(const std::string& stage) {
    check_upstream(stage);
    std::vector<fs::path> outputs;
    if (stage == "ingest")
      outputs = stage_ingest();
    else if (stage == "mine")
      outputs = stage_mine();
    else if (stage == "judge")
      outputs = stage_judge();
    else if (stage == "backfill")
      outputs = stage_backfill();
    else if (stage == "topics")
      outputs = stage_topics();
    else if (stage == "batch")
      outputs = stage_batch();
    else if (stage == "train-toy")
      outputs = stage_train();
    else if (stage == "eval")
      outputs = stage_eval();
    else
      throw validation_error("unknown stage: " + stage);
    record(stage, outputs);
  }

  // Runs all stages in order, skipping the ones whose inputs and config are
  // unchanged and whose outputs still exist.
  void run_all(bool resume = true) {
    for (const std::string& stage : stage_names()) {
      if (resume && stage_fresh(stage)) continue;
      run_stage(stage);
    }
  }

  corpus::Collection load_collection() const {
    return corpus::Collection::load(artifact("corpus_handle"));
  }

  // --------------------------------------------------------------------
  // compare-strategies: one (batch -> train -> eval) run per baseline rule.
  // --------------------------------------------------------------------
  std::map<std::string, training::EvalResult> compare_strategies(
      const mining::StrategyParams& params = {}) {
    check_upstream("judge");  // needs mined.jsonl
    corpus::Collection coll = load_collection();
    std::vector<mining::RankedList> mined = read_mined();

    // Positive scores on the dense channel (cosine of query vs positive).
    std::string channel = dense_channel();
    std::map<std::string, training::EvalResult> results;
    json summary = json::object();
    for (mining::Strategy strategy :
         {mining::Strategy::naive_topk, mining::Strategy::topk_shifted, mining::Strategy::topk_abs,
          mining::Strategy::topk_margin_pos, mining::Strategy::topk_perc_pos}) {
      mining::StrategyParams p = params;
      p.score_channel = channel;
      std::vector<genfill::FinalPool> pools;
      for (const mining::RankedList& rl : mined) {
        std::vector<double> pos_scores = positive_scores(coll, rl, channel);
        genfill::FinalPool pool;
        pool.query_id = rl.query_id;
        pool.lang = rl.lang;
        pool.n_target = cfg_.genfill_cfg.n_target;
        for (const std::string& doc_id : mining::baseline_strategy(rl, pos_scores, strategy, p)) {
          if (static_cast<int>(pool.negatives.size()) >= pool.n_target) break;
          genfill::GeneratedNegative g;
          g.doc_id = doc_id;
          g.source = genfill::GeneratedNegative::Source::retrieval;
          g.parent_query_id = rl.query_id;
          pool.negatives.push_back(std::move(g));
        }
        pool.short_pool = static_cast<int>(pool.negatives.size()) < pool.n_target;
        if (!pool.negatives.empty()) pools.push_back(std::move(pool));
      }
      std::string name = mining::to_string(strategy);
      fs::path dir = cfg_.out_dir / "compare" / name;
      training::EvalResult r = train_eval_pools(coll, pools, dir, "strategy:" + name);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", r.macro_ndcg);
      summary[name] = json{{"macro_ndcg", r.macro_ndcg}, {"macro_recall", r.macro_recall}};
      results[name] = std::move(r);
    }
    io::write_file(cfg_.out_dir / "compare" / "summary.json", summary.dump(2) + "\n");
    return results;
  }

  // --------------------------------------------------------------------
  // sweep-n: backfill + batch + train + eval per candidate pool size.
  // --------------------------------------------------------------------
  std::vector<std::pair<int, double>> sweep_n(std::vector<int> n_values) {
    if (n_values.empty()) throw validation_error("sweep-n: empty N list");
    for (int n : n_values)
      if (n < 1) throw validation_error("sweep-n: N must be positive");
    std::vector<int> unique;
    std::set<int> seen;
    for (int n : n_values) {
      if (seen.insert(n).second)
        unique.push_back(n);
      else
        std::cerr << "sweep-n: duplicate N=" << n << " ignored\n";
    }

    check_upstream("backfill");
    corpus::Collection coll = load_collection();
    std::vector<mining::RankedList> mined = read_mined();
    mining::Miner miner(coll, cfg_.ensemble, client_);
    for (const std::string& lang : coll.languages()) miner.prepare(lang);

    std::vector<std::pair<int, double>> rows;
    std::string tsv = "n\tmacro_ndcg@" + std::to_string(cfg_.ndcg_k) + "\n";
    for (int n : unique) {
      genfill::GenfillConfig gcfg = cfg_.genfill_cfg;
      gcfg.n_target = n;
      std::vector<genfill::FinalPool> pools;
      for (const judge::JudgedPool& jp : read_judged()) {
        pools.push_back(
            genfill::backfill(jp, coll, miner, *client_, cfg_.generation, gcfg, cfg_.judge_cfg));
      }
      fs::path dir = cfg_.out_dir / "sweep" / ("n" + std::to_string(n));
      training::EvalResult r = train_eval_pools(coll, pools, dir, "sweep:" + std::to_string(n));
      rows.emplace_back(n, r.macro_ndcg);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", r.macro_ndcg);
      tsv += std::to_string(n) + "\t" + buf + "\n";
    }
    io::write_file(cfg_.out_dir / "sweep" / "sweep.tsv", tsv);
    return rows;
  }

  // Instruction dataset for the external generator (not one of the 8 stages).
  genfill::InstructionBuildReport build_instructions() {
    if (cfg_.alpaca_path.empty())
      throw validation_error("config: instructions.alpaca path not set");
    auto report = genfill::build_instruction_set(cfg_.alpaca_path, cfg_.languages, *client_,
                                                 cfg_.translation, cfg_.instruction_source_lang);
    std::string out;
    for (const auto& r : report.records) {
      out += genfill::instruction_to_json(r).dump();
      out += '\n';
    }
    io::write_file(artifact("instructions.jsonl"), out);
    return report;
  }

 private:
  std::vector<fs::path> stage_ingest() {
    corpus::IngestConfig icfg;
    icfg.languages = cfg_.languages;
    icfg.positive_threshold = cfg_.positive_threshold;
    corpus::Collection coll = corpus::Collection::ingest(cfg_.corpus_paths, icfg);
    coll.save(artifact("corpus_handle"));
    std::vector<fs::path> outputs = {artifact("corpus_handle/stats.json")};
    for (const std::string& lang : coll.languages())
      outputs.push_back(artifact("corpus_handle/" + lang + ".jsonl"));
    return outputs;
  }

  std::vector<fs::path> stage_mine() {
    corpus::Collection coll = load_collection();
    mining::Miner miner(coll, cfg_.ensemble, client_);
    std::vector<corpus::Query> queries;
    for (const corpus::Query& q : coll.all_queries())
      if (cfg_.mine_lang.empty() || q.lang == cfg_.mine_lang) queries.push_back(q);
    if (queries.empty()) throw validation_error("mine: no queries to mine");
    std::set<std::string> langs;
    for (const corpus::Query& q : queries) langs.insert(q.lang);
    for (const std::string& lang : langs) miner.prepare(lang);
    std::vector<std::string> lines = parallel_map<std::string>(
        queries.size(), cfg_.embedding.max_in_flight, [&](std::size_t i) {
          return mining::to_json(miner.mine_query(queries[i].query_id)).dump() + "\n";
        });
    std::string out;
    for (const std::string& line : lines) out += line;
    io::write_file(artifact("mined.jsonl"), out);
    return {artifact("mined.jsonl")};
  }

  std::vector<fs::path> stage_judge() {
    corpus::Collection coll = load_collection();
    judge::EliminationStats stats;
    std::string out;
    for (const mining::RankedList& rl : read_mined()) {
      if (rl.candidates.empty()) continue;
      judge::JudgedPool pool =
          judge::filter_pool(rl, coll, *client_, cfg_.generation, cfg_.judge_cfg);
      stats.add(pool);
      out += judge::to_json(pool).dump();
      out += '\n';
    }
    io::write_file(artifact("judged.jsonl"), out);
    io::write_file(artifact("judge_stats.tsv"), stats.to_tsv());
    return {artifact("judged.jsonl"), artifact("judge_stats.tsv")};
  }

  std::vector<fs::path> stage_backfill() {
    corpus::Collection coll = load_collection();
    mining::Miner miner(coll, cfg_.ensemble, client_);
    for (const std::string& lang : coll.languages()) miner.prepare(lang);
    std::vector<judge::JudgedPool> judged = read_judged();
    genfill::ProvenanceStats stats;
    std::vector<std::string> lines = parallel_map<std::string>(
        judged.size(), cfg_.generation.max_in_flight, [&](std::size_t i) {
          genfill::FinalPool pool = genfill::backfill(judged[i], coll, miner, *client_,
                                                      cfg_.generation, cfg_.genfill_cfg,
                                                      cfg_.judge_cfg);
          return genfill::to_json(pool).dump() + "\n";
        });
    std::string out;
    for (const std::string& line : lines) out += line;
    io::write_file(artifact("pools.jsonl"), out);
    for (const genfill::FinalPool& p : read_pools()) stats.add(p);
    io::write_file(artifact("provenance.tsv"), stats.to_tsv());
    return {artifact("pools.jsonl"), artifact("provenance.tsv")};
  }

  std::vector<fs::path> stage_topics() {
    corpus::Collection coll = load_collection();
    batcher::MergeTable table = cfg_.merge_table_path.empty()
                                    ? batcher::MergeTable::builtin()
                                    : batcher::MergeTable::from_file(cfg_.merge_table_path);
    batcher::KeywordClassifier classifier;
    std::vector<batcher::TopicAssignment> assignments =
        batcher::assign_topics(coll, classifier, table);
    batcher::TopicHistogram hist;
    std::string out;
    for (const batcher::TopicAssignment& a : assignments) {
      hist.add(coll.query(a.query_id).lang, a.topic);
      json j{{"query_id", a.query_id},
             {"topic", a.topic},
             {"raw_dbpedia", a.raw_dbpedia},
             {"raw_yahoo", a.raw_yahoo}};
      out += j.dump();
      out += '\n';
    }
    io::write_file(artifact("topics.jsonl"), out);
    io::write_file(artifact("topic_histogram.tsv"), hist.to_tsv());
    return {artifact("topics.jsonl"), artifact("topic_histogram.tsv")};
  }

  std::vector<fs::path> stage_batch() {
    corpus::Collection coll = load_collection();
    std::map<std::string, std::string> topic_of;
    for (const std::string& line : io::read_lines(artifact("topics.jsonl"))) {
      if (str::trim(line).empty()) continue;
      json j = json::parse(line);
      topic_of[j.at("query_id").get<std::string>()] = j.at("topic").get<std::string>();
    }

    std::vector<batcher::BatchItem> items;
    std::map<std::string, std::size_t> lang_counts;
    std::map<std::string, std::size_t> topic_counts;
    for (const genfill::FinalPool& pool : read_pools()) {
      auto positives = coll.positives_of(pool.query_id);
      if (positives.empty() || pool.negatives.empty()) continue;
      batcher::BatchItem item;
      item.query_id = pool.query_id;
      item.lang = pool.lang;
      item.topic = topic_of.count(pool.query_id) ? topic_of.at(pool.query_id) : "OT";
      item.positive_doc_id = positives.front();
      auto sampled = batcher::sample_negatives(
          pool, cfg_.negatives_per_item, rng::derive_seed(cfg_.seed, "negatives:" + pool.query_id));
      item.negative_doc_ids = sampled.doc_ids;
      item.short_negatives = sampled.short_fallback;
      lang_counts[item.lang]++;
      topic_counts[item.topic]++;
      items.push_back(std::move(item));
    }
    if (items.empty()) throw validation_error("batch: no usable pools");

    batcher::WeightTable weights =
        batcher::compute_weights(lang_counts, topic_counts, cfg_.alpha_hat, cfg_.beta_hat);
    for (batcher::BatchItem& item : items) item.omega = weights.omega(item.lang, item.topic);

    std::vector<batcher::MiniBatch> epoch =
        batcher::schedule_epoch(items, cfg_.batch_size, rng::derive_seed(cfg_.seed, "schedule"),
                                cfg_.lang_choice);
    io::write_file(artifact("batches.jsonl"), batcher::export_training_file(epoch, coll));

    json jw;
    jw["alpha_hat"] = weights.alpha_hat;
    jw["beta_hat"] = weights.beta_hat;
    jw["p_lang"] = weights.p_lang;
    jw["p_topic"] = weights.p_topic;
    jw["alpha"] = weights.alpha;
    jw["beta"] = weights.beta;
    io::write_file(artifact("weights.json"), jw.dump(2) + "\n");
    return {artifact("batches.jsonl"), artifact("weights.json")};
  }

  std::vector<fs::path> stage_train() {
    std::vector<training::TrainItem> items = training::parse_training_file(artifact("batches.jsonl"));
    training::ToyTrainConfig tcfg = cfg_.train_cfg;
    tcfg.seed = rng::derive_seed(cfg_.seed, "train");
    training::TrainResult result = training::train_toy(items, *client_, cfg_.embedding, tcfg);

    auto matrix_json = [](const Eigen::MatrixXd& m) {
      json rows = json::array();
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
      }
      return rows;
    };
    json j;
    j["out_dim"] = result.W.rows();
    j["in_dim"] = result.W.cols();
    j["loss_curve"] = result.loss_curve;
    j["initial_W"] = matrix_json(result.initial_W);
    j["W"] = matrix_json(result.W);
    io::write_file(artifact("projection.json"), j.dump() + "\n");
    return {artifact("projection.json")};
  }

  std::vector<fs::path> stage_eval() {
    corpus::Collection coll = load_collection();
    json j = json::parse(io::read_file(artifact("projection.json")));
    auto matrix_from = [](const json& rows) {
      Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c].get<double>();
      return m;
    };
    Eigen::MatrixXd W = matrix_from(j.at("W"));
    Eigen::MatrixXd W0 = matrix_from(j.at("initial_W"));

    auto qrels = collection_qrels(coll);
    auto lang_of = [&coll](const std::string& qid) { return coll.query(qid).lang; };

    std::vector<fs::path> outputs;
    for (const auto& [name, proj] : {std::pair<std::string, Eigen::MatrixXd*>{"trained", &W},
                                     {"untrained", &W0}}) {
      auto run = training::rank_collection(coll, coll.languages(), *proj, *client_, cfg_.embedding,
                                           cfg_.eval_top_k, cfg_.train_cfg.truncation);
      training::EvalResult r =
          training::evaluate(run, qrels, lang_of, cfg_.ndcg_k, cfg_.recall_k,
                             coll.positive_threshold());
      std::string suffix = name == std::string("trained") ? "" : "_untrained";
      io::write_file(artifact("run" + suffix + ".trec"), training::to_trec_run(run, "negforge"));
      io::write_file(artifact("eval" + suffix + ".tsv"),
                     training::eval_report_tsv(r, cfg_.ndcg_k, cfg_.recall_k));
      outputs.push_back(artifact("run" + suffix + ".trec"));
      outputs.push_back(artifact("eval" + suffix + ".tsv"));
    }
    return outputs;
  }

  // Batch + train + eval over explicit pools; used by compare and sweep.
  training::EvalResult train_eval_pools(const corpus::Collection& coll,
                                        const std::vector<genfill::FinalPool>& pools,
                                        const fs::path& dir, const std::string& seed_label) {
    std::map<std::string, std::string> topic_of;
    if (fs::exists(artifact("topics.jsonl"))) {
      for (const std::string& line : io::read_lines(artifact("topics.jsonl"))) {
        if (str::trim(line).empty()) continue;
        json j = json::parse(line);
        topic_of[j.at("query_id").get<std::string>()] = j.at("topic").get<std::string>();
      }
    }
    std::vector<batcher::BatchItem> items;
    std::map<std::string, std::size_t> lang_counts, topic_counts;
    for (const genfill::FinalPool& pool : pools) {
      auto positives = coll.positives_of(pool.query_id);
      if (positives.empty() || pool.negatives.empty()) continue;
      batcher::BatchItem item;
      item.query_id = pool.query_id;
      item.lang = pool.lang;
      item.topic = topic_of.count(pool.query_id) ? topic_of.at(pool.query_id) : "OT";
      item.positive_doc_id = positives.front();
      auto sampled = batcher::sample_negatives(
          pool, cfg_.negatives_per_item,
          rng::derive_seed(cfg_.seed, seed_label + ":negatives:" + pool.query_id));
      item.negative_doc_ids = sampled.doc_ids;
      lang_counts[item.lang]++;
      topic_counts[item.topic]++;
      items.push_back(std::move(item));
    }
    if (items.empty()) throw validation_error("no usable pools for " + seed_label);
    batcher::WeightTable weights =
        batcher::compute_weights(lang_counts, topic_counts, cfg_.alpha_hat, cfg_.beta_hat);
    for (batcher::BatchItem& item : items) item.omega = weights.omega(item.lang, item.topic);
    auto epoch = batcher::schedule_epoch(items, cfg_.batch_size,
                                         rng::derive_seed(cfg_.seed, seed_label + ":schedule"),
                                         cfg_.lang_choice);
    std::string training_file = batcher::export_training_file(epoch, coll);
    io::write_file(dir / "batches.jsonl", training_file);

    std::vector<training::TrainItem> titems = training::parse_training_file(dir / "batches.jsonl");
    training::ToyTrainConfig tcfg = cfg_.train_cfg;
    tcfg.seed = rng::derive_seed(cfg_.seed, "train");  // same init across variants
    training::TrainResult result = training::train_toy(titems, *client_, cfg_.embedding, tcfg);

    auto run = training::rank_collection(coll, coll.languages(), result.W, *client_,
                                         cfg_.embedding, cfg_.eval_top_k,
                                         cfg_.train_cfg.truncation);
    auto qrels = collection_qrels(coll);
    auto lang_of = [&coll](const std::string& qid) { return coll.query(qid).lang; };
    training::EvalResult r = training::evaluate(run, qrels, lang_of, cfg_.ndcg_k, cfg_.recall_k,
                                                coll.positive_threshold());
    io::write_file(dir / "eval.tsv", training::eval_report_tsv(r, cfg_.ndcg_k, cfg_.recall_k));
    return r;
  }

  static std::map<std::string, std::map<std::string, int>> collection_qrels(
      const corpus::Collection& coll) {
    std::map<std::string, std::map<std::string, int>> qrels;
    for (const corpus::Query& q : coll.all_queries())
      for (const corpus::Qrel& qr : coll.qrels_of(q.query_id))
        qrels[q.query_id][qr.doc_id] = qr.grade;
    return qrels;
  }

  std::string dense_channel() const {
    for (const mining::RetrieverSpec& r : cfg_.ensemble.roster)
      if (r.kind == mining::RetrieverSpec::Kind::embedding) return r.name;
    return "";  // fused fallback
  }

  std::vector<double> positive_scores(const corpus::Collection& coll,
                                      const mining::RankedList& rl, const std::string& channel) {
    std::vector<double> out;
    auto positives = coll.positives_of(rl.query_id);
    if (positives.empty()) return out;
    if (channel.empty()) return out;
    const corpus::Query& q = coll.query(rl.query_id);
    auto qv = client_->embed({q.text}, cfg_.embedding);
    for (const std::string& doc_id : positives) {
      auto dv = client_->embed({mining::Bm25Index::index_text(coll.doc(rl.lang, doc_id))},
                               cfg_.embedding);
      out.push_back(mining::cosine(qv[0].values, dv[0].values));
    }
    return out;
  }

  std::vector<mining::RankedList> read_mined() const {
    std::vector<mining::RankedList> out;
    for (const std::string& line : io::read_lines(artifact("mined.jsonl"))) {
      if (str::trim(line).empty()) continue;
      out.push_back(mining::ranked_list_from_json(json::parse(line)));
    }
    return out;
  }

  std::vector<judge::JudgedPool> read_judged() const {
    std::vector<judge::JudgedPool> out;
    for (const std::string& line : io::read_lines(artifact("judged.jsonl"))) {
      if (str::trim(line).empty()) continue;
      out.push_back(judge::judged_pool_from_json(json::parse(line)));
    }
    return out;
  }

  std::vector<genfill::FinalPool> read_pools() const {
    std::vector<genfill::FinalPool> out;
    for (const std::string& line : io::read_lines(artifact("pools.jsonl"))) {
      if (str::trim(line).empty()) continue;
      out.push_back(genfill::final_pool_from_json(json::parse(line)));
    }
    return out;
  }

  void record(const std::string& stage, const std::vector<fs::path>& outputs) {
    json entry;
    json inputs = json::object();
    for (const auto& [_, path] : stage_inputs(stage))
      inputs[fs::relative(path, cfg_.out_dir).string()] = digest::sha256_file_hex(path);
    entry["inputs"] = std::move(inputs);
    entry["config_digest"] = cfg_.config_digest();
    entry["seed"] = rng::derive_seed(cfg_.seed, stage);
    json outs = json::array();
    std::vector<std::string> rels;
    for (const fs::path& p : outputs) rels.push_back(fs::relative(p, cfg_.out_dir).string());
    std::sort(rels.begin(), rels.end());
    for (const std::string& r : rels) outs.push_back(r);
    entry["outputs"] = std::move(outs);
    manifest_[stage] = std::move(entry);

    // Stable key order regardless of the order stages were run in.
    nlohmann::json sorted = nlohmann::json::parse(manifest_.dump());
    io::write_file(manifest_path_, sorted.dump(2) + "\n");
  }

  PipelineConfig cfg_;
  std::shared_ptr<providers::Cache> cache_;
  std::shared_ptr<providers::Client> client_;
  fs::path manifest_path_;
  json manifest_ = json::object();
};

}  // namespace negforge::pipeline
