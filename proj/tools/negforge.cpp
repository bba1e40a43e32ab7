// negforge: hard-negative curation and weighted-batch pipeline CLI.

#include <CLI11.hpp>
#include <httplib.h>

#include <atomic>
#include <csignal>
#include <iostream>

#include "negforge/pipeline.hpp"
#include "negforge/stubs.hpp"
#include "negforge/synth.hpp"

namespace nf = negforge;
using json = nlohmann::ordered_json;

namespace {

struct ConfigArgs {
  std::string config_path;
  json overrides = json::object();

  nf::pipeline::PipelineConfig load() const {
    if (config_path.empty()) throw nf::validation_error("--config is required");
    json j = json::parse(nf::io::read_file(config_path));
    for (auto it = overrides.begin(); it != overrides.end(); ++it) {
      if (it.value().is_object()) {
        // one level deep: {"section": {"key": value}}
        for (auto kv = it.value().begin(); kv != it.value().end(); ++kv)
          j[it.key()][kv.key()] = kv.value();
      } else {
        j[it.key()] = it.value();
      }
    }
    std::filesystem::path p(config_path);
    return nf::pipeline::load_config_json(
        j, p.has_parent_path() ? p.parent_path() : std::filesystem::path("."));
  }
};

int run_stub_server(int port) {
  httplib::Server server;
  std::atomic<std::uint64_t> requests{0};
  auto handle = [&requests](const std::string& role, const httplib::Request& req,
                            httplib::Response& res) {
    requests.fetch_add(1);
    try {
      nlohmann::json body = nlohmann::json::parse(req.body);
      res.set_content(nf::stubs::handle_request(role, body).dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  };
  server.Post("/embed", [&](const httplib::Request& q, httplib::Response& r) { handle("embed", q, r); });
  server.Post("/generate",
              [&](const httplib::Request& q, httplib::Response& r) { handle("generate", q, r); });
  server.Post("/translate",
              [&](const httplib::Request& q, httplib::Response& r) { handle("translate", q, r); });
  server.Get("/stats", [&](const httplib::Request&, httplib::Response& r) {
    r.set_content(nlohmann::json{{"requests", requests.load()}}.dump(), "application/json");
  });
  std::cout << "stub provider listening on port " << port << "\n";
  server.listen("0.0.0.0", port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"negforge: hard-negative mining, filtering, generation and weighted batching"};
  app.require_subcommand(1);

  ConfigArgs cfg_args;

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "write the bundled synthetic corpus files");
  std::string gen_out = "data/synthetic";
  std::uint64_t gen_seed = 17;
  int gen_docs = 200;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--docs", gen_docs, "total document count");

  // stages
  auto add_config = [&cfg_args](CLI::App* cmd) {
    cmd->add_option("--config", cfg_args.config_path, "pipeline config file (JSON)")->required();
  };

  auto* ingest = app.add_subcommand("ingest", "validate and persist the corpus");
  add_config(ingest);

  auto* mine = app.add_subcommand("mine", "build hard-negative candidate pools");
  add_config(mine);
  std::string mine_fusion, mine_lang;
  int mine_k = 0;
  mine->add_option("--fusion", mine_fusion, "znorm-mean|rrf");
  mine->add_option("--k", mine_k, "pool size");
  mine->add_option("--lang", mine_lang, "restrict to one language (default: all)");

  auto* judge_cmd = app.add_subcommand("judge", "filter false negatives out of mined pools");
  add_config(judge_cmd);
  int judge_threshold = 0;
  bool judge_replay = false;
  std::string judge_pools;
  judge_cmd->add_option("--pools", judge_pools, "mined candidate pools file");
  judge_cmd->add_option("--threshold", judge_threshold, "remove when aggregate >= threshold");
  judge_cmd->add_flag("--replay-only", judge_replay, "fail on cache miss instead of calling out");

  auto* backfill_cmd = app.add_subcommand("backfill", "top pools up to N negatives");
  add_config(backfill_cmd);
  int backfill_n = 0, backfill_retries = -1;
  std::string backfill_pools;
  backfill_cmd->add_option("--pools", backfill_pools, "judged pools file");
  backfill_cmd->add_option("--n", backfill_n, "target negatives per query");
  backfill_cmd->add_option("--retries", backfill_retries, "generation rounds per deficit");

  auto* topics_cmd = app.add_subcommand("topics", "assign merged topics to queries");
  add_config(topics_cmd);

  auto* batch_cmd = app.add_subcommand("batch", "weights, schedule and training file");
  add_config(batch_cmd);
  double batch_alpha = -1, batch_beta = -1;
  int batch_size = 0, batch_negs = 0;
  std::int64_t batch_seed = -1;
  std::string batch_pools;
  batch_cmd->add_option("--pools", batch_pools, "final pools file");
  batch_cmd->add_option("--alpha", batch_alpha, "language weight budget");
  batch_cmd->add_option("--beta", batch_beta, "topic weight budget");
  batch_cmd->add_option("--batch-size", batch_size, "items per mini-batch");
  batch_cmd->add_option("--negatives", batch_negs, "sampled negatives per item");
  batch_cmd->add_option("--seed", batch_seed, "master seed override");

  auto* train_cmd = app.add_subcommand("train-toy", "projection trainer over frozen embeddings");
  add_config(train_cmd);
  int train_epochs = -1;
  double train_lr = -1;
  std::int64_t train_seed = -1;
  std::string train_file;
  train_cmd->add_option("--file", train_file, "training batches file");
  train_cmd->add_option("--epochs", train_epochs, "training epochs");
  train_cmd->add_option("--lr", train_lr, "learning rate");
  train_cmd->add_option("--seed", train_seed, "master seed override");

  auto* eval_cmd = app.add_subcommand("eval", "nDCG@10 / Recall@100 evaluation");
  std::string eval_run, eval_qrels;
  eval_cmd->add_option("--config", cfg_args.config_path, "pipeline config file (JSON)");
  eval_cmd->add_option("--run", eval_run, "TREC run file (standalone mode)");
  eval_cmd->add_option("--qrels", eval_qrels, "TREC qrels file (standalone mode)");

  auto* pipeline_cmd = app.add_subcommand("pipeline", "run all stages in order");
  add_config(pipeline_cmd);
  bool no_resume = false;
  pipeline_cmd->add_flag("--no-resume", no_resume, "rerun every stage even if fresh");

  auto* compare_cmd = app.add_subcommand("compare-strategies",
                                         "evaluate the five baseline hard-negative rules");
  add_config(compare_cmd);
  nf::mining::StrategyParams strat;
  compare_cmd->add_option("--shift-n", strat.shift_n, "Top-K shifted by N");
  compare_cmd->add_option("--abs-threshold", strat.abs_threshold, "TopK-Abs threshold");
  compare_cmd->add_option("--margin", strat.margin, "TopK-MarginPos margin");
  compare_cmd->add_option("--percentage", strat.percentage, "TopK-PercPos fraction");

  auto* sweep_cmd = app.add_subcommand("sweep-n", "macro nDCG@10 per candidate set size N");
  add_config(sweep_cmd);
  std::vector<int> sweep_values;
  sweep_cmd->add_option("--n", sweep_values, "N values")->required();

  auto* instr_cmd = app.add_subcommand("build-instructions",
                                       "multilingual summarization instruction set");
  add_config(instr_cmd);
  std::string instr_alpaca;
  std::vector<std::string> instr_langs;
  instr_cmd->add_option("--alpaca", instr_alpaca, "instruction source file");
  instr_cmd->add_option("--langs", instr_langs, "target languages");

  auto* stub_cmd = app.add_subcommand("stub-server", "deterministic offline provider over HTTP");
  int stub_port = 8089;
  stub_cmd->add_option("--port", stub_port, "listen port");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      nf::synth::SynthConfig scfg = nf::synth::SynthConfig::defaults();
      scfg.seed = gen_seed;
      scfg.total_docs = gen_docs;
      nf::synth::SynthCorpus corpus = nf::synth::generate(scfg);
      nf::synth::write_corpus_files(corpus, gen_out);
      std::cout << "wrote " << corpus.documents.size() << " docs, " << corpus.queries.size()
                << " queries, " << corpus.qrels.size() << " qrels to " << gen_out << "\n";
      return 0;
    }
    if (stub_cmd->parsed()) return run_stub_server(stub_port);

    if (eval_cmd->parsed() && !eval_run.empty()) {
      if (eval_qrels.empty()) throw nf::validation_error("eval: --qrels required with --run");
      auto run = nf::training::parse_trec_run(nf::io::read_file(eval_run));
      std::map<std::string, std::map<std::string, int>> qrels;
      for (const std::string& line : nf::io::read_lines(eval_qrels)) {
        if (nf::str::trim(line).empty()) continue;
        auto cols = nf::str::split(line, '\t');
        if (cols.size() == 1) cols = nf::str::split(line, ' ');
        if (cols.size() != 4) throw nf::validation_error("qrels: expected 4 fields per line");
        qrels[cols[0]][cols[2]] = std::stoi(cols[3]);
      }
      auto result = nf::training::evaluate(run, qrels, [](const std::string&) { return "all"; });
      std::cout << nf::training::eval_report_tsv(result);
      for (const std::string& qid : result.skipped)
        std::cerr << "warning: query without positives skipped: " << qid << "\n";
      return 0;
    }

    // Stage-style subcommands share the config + override mechanism.
    if (mine->parsed()) {
      if (!mine_fusion.empty()) cfg_args.overrides["ensemble"]["fusion"] = mine_fusion;
      if (mine_k > 0) cfg_args.overrides["ensemble"]["k"] = mine_k;
      if (!mine_lang.empty()) cfg_args.overrides["mine"]["lang"] = mine_lang;
    }
    if (judge_cmd->parsed()) {
      if (judge_threshold > 0) cfg_args.overrides["judge"]["threshold"] = judge_threshold;
      if (judge_replay) cfg_args.overrides["replay_only"] = true;
      if (!judge_pools.empty()) cfg_args.overrides["artifacts"]["mined.jsonl"] = judge_pools;
    }
    if (backfill_cmd->parsed()) {
      if (backfill_n > 0) cfg_args.overrides["genfill"]["n"] = backfill_n;
      if (backfill_retries >= 0) cfg_args.overrides["genfill"]["retries"] = backfill_retries;
      if (!backfill_pools.empty()) cfg_args.overrides["artifacts"]["judged.jsonl"] = backfill_pools;
    }
    if (batch_cmd->parsed()) {
      if (batch_alpha >= 0) cfg_args.overrides["batch"]["alpha"] = batch_alpha;
      if (batch_beta >= 0) cfg_args.overrides["batch"]["beta"] = batch_beta;
      if (batch_size > 0) cfg_args.overrides["batch"]["batch_size"] = batch_size;
      if (batch_negs > 0) cfg_args.overrides["batch"]["negatives"] = batch_negs;
      if (batch_seed >= 0) cfg_args.overrides["seed"] = batch_seed;
      if (!batch_pools.empty()) cfg_args.overrides["artifacts"]["pools.jsonl"] = batch_pools;
    }
    if (train_cmd->parsed()) {
      if (train_epochs >= 0) cfg_args.overrides["train"]["epochs"] = train_epochs;
      if (train_lr >= 0) cfg_args.overrides["train"]["lr"] = train_lr;
      if (train_seed >= 0) cfg_args.overrides["seed"] = train_seed;
      if (!train_file.empty()) cfg_args.overrides["artifacts"]["batches.jsonl"] = train_file;
    }

    nf::pipeline::Pipeline pipeline(cfg_args.load());

    if (ingest->parsed()) pipeline.run_stage("ingest");
    if (mine->parsed()) pipeline.run_stage("mine");
    if (judge_cmd->parsed()) pipeline.run_stage("judge");
    if (backfill_cmd->parsed()) pipeline.run_stage("backfill");
    if (topics_cmd->parsed()) pipeline.run_stage("topics");
    if (batch_cmd->parsed()) pipeline.run_stage("batch");
    if (train_cmd->parsed()) pipeline.run_stage("train-toy");
    if (eval_cmd->parsed()) pipeline.run_stage("eval");
    if (pipeline_cmd->parsed()) pipeline.run_all(!no_resume);
    if (compare_cmd->parsed()) {
      auto results = pipeline.compare_strategies(strat);
      std::cout << "strategy\tmacro_ndcg\tmacro_recall\n";
      for (const auto& [name, r] : results) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4f\t%.4f", r.macro_ndcg, r.macro_recall);
        std::cout << name << "\t" << buf << "\n";
      }
    }
    if (sweep_cmd->parsed()) {
      auto rows = pipeline.sweep_n(sweep_values);
      std::cout << "n\tmacro_ndcg\n";
      for (const auto& [n, ndcg] : rows) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", ndcg);
        std::cout << n << "\t" << buf << "\n";
      }
    }
    if (instr_cmd->parsed()) {
      auto report = pipeline.build_instructions();
      for (const auto& [lang, n] : report.per_language)
        std::cout << lang << "\t" << n << "\n";
      if (report.skipped > 0) std::cerr << report.skipped << " records skipped\n";
    }
    return 0;
  } catch (const nf::upstream_missing_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nf::provider_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nf::validation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
