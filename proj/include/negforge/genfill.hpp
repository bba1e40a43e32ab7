#pragma once

#include <algorithm>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "negforge/corpus.hpp"
#include "negforge/judge.hpp"
#include "negforge/mining.hpp"
#include "negforge/providers.hpp"
#include "negforge/text.hpp"

namespace negforge::genfill {

using json = nlohmann::ordered_json;

struct InstructionRecord {
  std::string lang;
  std::string instruction;
  std::string input;
  std::string output;
};

struct GeneratedNegative {
  std::string doc_id;
  enum class Source { retrieval, generated } source = Source::retrieval;
  std::string parent_query_id;
  std::string summary;          // generated entries only
  std::string synthetic_query;  // generated entries only
};

struct FinalPool {
  std::string query_id;
  std::string lang;
  std::vector<GeneratedNegative> negatives;  // retrieval entries precede generated ones
  int n_target = 0;
  bool short_pool = false;  // deficit unfillable within the retry budget
};

// Fixed generation templates. These are artifact-owned (golden-file tested);
// the external generator decides what to make of them.
inline constexpr const char* kSummarizeTemplate = R"(# Task:
Summarize the Document with respect to the Query. Keep only the information needed to answer the Query, and write the summary in the same language as the Document.

Query: {query}
Document: {document}

Summary:)";

inline constexpr const char* kQueryGenTemplate = R"(# Task:
Write one new search query that the Summary below would answer. Use the same language as the Summary. Return only the query text.

Summary: {summary}

Query:)";

inline std::string render_summarize_prompt(const std::string& query_text,
                                           const std::string& document_text) {
  return judge::render_template(kSummarizeTemplate,
                                {{"{query}", query_text}, {"{document}", document_text}});
}

inline std::string render_querygen_prompt(const std::string& summary) {
  return judge::render_template(kQueryGenTemplate, {{"{summary}", summary}});
}

struct InstructionBuildReport {
  std::vector<InstructionRecord> records;
  std::map<std::string, std::size_t> per_language;
  std::size_t skipped = 0;  // translation failures
};

namespace detail {

inline bool is_summarization_instruction(const std::string& instruction) {
  return str::contains(str::lower_ascii(instruction), "summar");
}

inline std::vector<InstructionRecord> load_alpaca(const std::filesystem::path& path) {
  std::string content = io::read_file(path);
  std::vector<InstructionRecord> out;
  auto push = [&out](const json& j) {
    InstructionRecord r;
    r.instruction = j.at("instruction").get<std::string>();
    r.input = j.value("input", std::string{});
    r.output = j.value("output", std::string{});
    out.push_back(std::move(r));
  };
  std::string_view trimmed = str::trim(content);
  if (!trimmed.empty() && trimmed.front() == '[') {
    json arr = json::parse(content);
    for (const auto& j : arr) push(j);
  } else {
    for (const std::string& line : str::split(content, '\n')) {
      if (str::trim(line).empty()) continue;
      push(json::parse(line));
    }
  }
  return out;
}

}  // namespace detail

// Builds the multilingual instruction set: the summarization-related subset of
// an Alpaca-shaped file, translated once per target language. Records whose
// translation fails are skipped and logged rather than aborting the build.
inline InstructionBuildReport build_instruction_set(const std::filesystem::path& alpaca_path,
                                                    const std::vector<std::string>& languages,
                                                    providers::Client& client,
                                                    const providers::ProviderConfig& translate_cfg,
                                                    const std::string& source_lang = "en") {
  if (languages.empty()) throw validation_error("build_instruction_set: no target languages");
  std::vector<InstructionRecord> source = detail::load_alpaca(alpaca_path);
  std::vector<InstructionRecord> subset;
  for (InstructionRecord& r : source)
    if (detail::is_summarization_instruction(r.instruction)) subset.push_back(std::move(r));
  if (subset.empty())
    throw validation_error("build_instruction_set: no summarization instructions in " +
                           alpaca_path.string());

  InstructionBuildReport report;
  for (const std::string& lang : languages) {
    for (const InstructionRecord& r : subset) {
      try {
        InstructionRecord t;
        t.lang = lang;
        t.instruction = client.translate(r.instruction, lang, translate_cfg, source_lang);
        t.input = r.input.empty() ? r.input : client.translate(r.input, lang, translate_cfg, source_lang);
        t.output = r.output.empty() ? r.output
                                    : client.translate(r.output, lang, translate_cfg, source_lang);
        report.records.push_back(std::move(t));
        report.per_language[lang]++;
      } catch (const provider_error& e) {
        report.skipped++;
        std::cerr << "build_instruction_set: skipping record for " << lang << ": " << e.what()
                  << "\n";
      }
    }
  }
  return report;
}

struct GenfillConfig {
  int n_target = 30;      // final hard negatives per query
  int retry_budget = 3;   // generation rounds per deficit
  bool check_script = true;
  bool rejudge_generated = false;
};

// Query-centric summary of the positive. The summary must be non-empty and,
// when check_script is on, share the query's dominant script.
inline std::string summarize_positive(const std::string& query_text,
                                      const std::string& positive_text,
                                      providers::Client& client,
                                      const providers::ProviderConfig& gen_cfg, int attempt = 0,
                                      bool check_script = true) {
  if (query_text.empty()) throw validation_error("summarize_positive: empty query");
  if (positive_text.empty()) throw validation_error("summarize_positive: empty positive");
  std::string prompt = render_summarize_prompt(query_text, positive_text);
  for (int local = 0; local < 2; ++local) {
    std::string summary;
    try {
      summary = client.generate(prompt, gen_cfg, attempt * 2 + local);
    } catch (const cache_miss_error&) {
      throw;
    } catch (const provider_error&) {
      continue;  // empty completion or transport failure; one more try
    }
    if (str::trim(summary).empty()) continue;
    if (check_script &&
        text::dominant_script(summary) != text::dominant_script(query_text))
      continue;
    return summary;
  }
  throw provider_error("summarize_positive: no usable summary after retry");
}

// Tops a judged pool up to exactly N negatives. Kept candidates are used
// first (truncated to N when over); the deficit is filled by
// summarize -> synthesize query -> re-mine rounds, each round re-keyed so the
// generator can produce something new. Pools still short after the retry
// budget are emitted with the short flag.
inline FinalPool backfill(const judge::JudgedPool& pool, const corpus::Collection& coll,
                          mining::Miner& miner, providers::Client& client,
                          const providers::ProviderConfig& gen_cfg, const GenfillConfig& cfg = {},
                          const judge::JudgeConfig& rejudge_cfg = {}) {
  if (cfg.n_target < 1) throw validation_error("backfill: N must be >= 1");
  FinalPool out;
  out.query_id = pool.query_id;
  out.lang = pool.lang;
  out.n_target = cfg.n_target;

  std::unordered_set<std::string> taken;
  for (const std::string& doc_id : pool.kept) {
    if (static_cast<int>(out.negatives.size()) >= cfg.n_target) break;
    GeneratedNegative g;
    g.doc_id = doc_id;
    g.source = GeneratedNegative::Source::retrieval;
    g.parent_query_id = pool.query_id;
    taken.insert(doc_id);
    out.negatives.push_back(std::move(g));
  }
  if (static_cast<int>(out.negatives.size()) == cfg.n_target) return out;

  const corpus::Query& q = coll.query(pool.query_id);
  auto positives = coll.positives_of(pool.query_id);
  if (positives.empty()) {
    out.short_pool = true;  // nothing to drive generation from
    return out;
  }
  const std::string positive_text = coll.doc(q.lang, positives.front()).text;
  auto positive_ids = coll.positive_set(pool.query_id);

  for (int round = 0; round < cfg.retry_budget; ++round) {
    int deficit = cfg.n_target - static_cast<int>(out.negatives.size());
    if (deficit <= 0) break;
    std::string summary, synthetic_query;
    try {
      summary = summarize_positive(q.text, positive_text, client, gen_cfg, round, cfg.check_script);
      synthetic_query = client.generate(render_querygen_prompt(summary), gen_cfg, round);
    } catch (const provider_error&) {
      continue;  // round wasted; budget still bounds the loop
    }
    if (str::trim(synthetic_query).empty()) continue;

    mining::RankedList mined;
    try {
      mined = miner.mine_text(synthetic_query, pool.lang, positive_ids,
                              pool.query_id + "#gen" + std::to_string(round));
    } catch (const validation_error&) {
      continue;  // synthetic query tokenized to nothing or matched nothing
    }
    for (const mining::RankedCandidate& c : mined.candidates) {
      if (static_cast<int>(out.negatives.size()) >= cfg.n_target) break;
      if (taken.count(c.doc_id) || positive_ids.count(c.doc_id)) continue;
      if (cfg.rejudge_generated) {
        std::string prompt = judge::render_prompt(q.text, positive_text,
                                                  coll.doc(pool.lang, c.doc_id).text);
        providers::ProviderConfig jc = gen_cfg;
        jc.temperature = 0.0;
        try {
          auto verdict = judge::parse_verdict(client.generate(prompt, jc), rejudge_cfg.aggregator);
          if (verdict.aggregate >= rejudge_cfg.removal_threshold) continue;
        } catch (const validation_error&) {
          continue;
        }
      }
      GeneratedNegative g;
      g.doc_id = c.doc_id;
      g.source = GeneratedNegative::Source::generated;
      g.parent_query_id = pool.query_id;
      g.summary = summary;
      g.synthetic_query = synthetic_query;
      taken.insert(c.doc_id);
      out.negatives.push_back(std::move(g));
    }
  }

  if (static_cast<int>(out.negatives.size()) < cfg.n_target) out.short_pool = true;
  return out;
}

// Provenance split in the style of a per-language retrieval-vs-generated
// report: percentage of final negatives from each source.
struct ProvenanceStats {
  std::map<std::string, std::size_t> retrieval;
  std::map<std::string, std::size_t> generated;

  void add(const FinalPool& p) {
    for (const GeneratedNegative& g : p.negatives) {
      if (g.source == GeneratedNegative::Source::retrieval)
        retrieval[p.lang]++;
      else
        generated[p.lang]++;
    }
  }
  std::string to_tsv() const {
    std::set<std::string> langs;
    for (auto& [l, _] : retrieval) langs.insert(l);
    for (auto& [l, _] : generated) langs.insert(l);
    std::string out = "lang\tfrom_retrieval_pct\tfrom_llm_pct\tretrieval\tgenerated\n";
    for (const std::string& l : langs) {
      std::size_t r = retrieval.count(l) ? retrieval.at(l) : 0;
      std::size_t g = generated.count(l) ? generated.at(l) : 0;
      double total = static_cast<double>(r + g);
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%.2f\t%.2f", total > 0 ? 100.0 * r / total : 0.0,
                    total > 0 ? 100.0 * g / total : 0.0);
      out += l + "\t" + buf + "\t" + std::to_string(r) + "\t" + std::to_string(g) + "\n";
    }
    return out;
  }
};

inline json to_json(const FinalPool& p) {
  json j;
  j["query_id"] = p.query_id;
  j["lang"] = p.lang;
  j["n"] = p.n_target;
  if (p.short_pool) j["short"] = true;
  auto arr = json::array();
  for (const GeneratedNegative& g : p.negatives) {
    json jg;
    jg["doc_id"] = g.doc_id;
    jg["source"] = g.source == GeneratedNegative::Source::retrieval ? "retrieval" : "generated";
    if (g.source == GeneratedNegative::Source::generated) {
      jg["summary"] = g.summary;
      jg["synthetic_query"] = g.synthetic_query;
    }
    arr.push_back(std::move(jg));
  }
  j["negatives"] = std::move(arr);
  return j;
}

inline FinalPool final_pool_from_json(const json& j) {
  FinalPool p;
  p.query_id = j.at("query_id").get<std::string>();
  p.lang = j.value("lang", std::string{});
  p.n_target = j.value("n", 0);
  p.short_pool = j.value("short", false);
  for (const auto& jg : j.at("negatives")) {
    GeneratedNegative g;
    g.doc_id = jg.at("doc_id").get<std::string>();
    g.source = jg.at("source").get<std::string>() == "generated"
                   ? GeneratedNegative::Source::generated
                   : GeneratedNegative::Source::retrieval;
    g.parent_query_id = p.query_id;
    g.summary = jg.value("summary", std::string{});
    g.synthetic_query = jg.value("synthetic_query", std::string{});
    p.negatives.push_back(std::move(g));
  }
  return p;
}

inline json instruction_to_json(const InstructionRecord& r) {
  return json{{"lang", r.lang}, {"instruction", r.instruction}, {"input", r.input},
              {"output", r.output}};
}

}  // namespace negforge::genfill
