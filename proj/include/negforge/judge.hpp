#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "negforge/corpus.hpp"
#include "negforge/mining.hpp"
#include "negforge/parallel.hpp"
#include "negforge/providers.hpp"

namespace negforge::judge {

using json = nlohmann::json;

// Two-criterion relevance prompt. Slots are filled by a single left-to-right
// scan of the template, so slot values containing placeholder text are
// injected literally.
inline constexpr const char* kVerdictPromptTemplate = R"(# Task Review:
Your task is to evaluate a Candidate Answer based on a given Question and Standard Answer. Use the following two evaluation criteria to guide your assessment:

# Evaluation Criteria

## Information Accuracy
(1) Definition: Assess whether the Candidate Answer contains factual inaccuracies or misleading information. If a Standard Answer is provided, base your judgment on both the Question and the Standard Answer. If the Standard Answer is empty, evaluate based solely on the Question.
(2) Scoring Guidelines:
- 0: The Candidate Answer contains clear factual errors or significantly misrepresents the meaning.
- 1: The Candidate Answer has minor inaccuracies, but the overall meaning is still mostly correct.
- 2: The Candidate Answer is entirely accurate with no factual errors.

## Information Completeness
(1) Definition: Evaluate how well the Candidate Answer addresses the key aspects of the Question.
(2) Scoring Guidelines:
- 0: Major aspects of the question are not addressed or key points are missing.
- 1: Most key points are addressed, but some minor details are omitted.
- 2: All major and minor points are fully addressed.

# Input:
Question: {Input Question}
Candidate Answer: {Input Candidate Answer}
Standard Answer: {Input Standard Answer}

# Output:
{"Information Accuracy": {0/1/2}, "Information Completeness": {0/1/2}})";

inline std::string render_template(std::string_view tmpl,
                                   const std::vector<std::pair<std::string, std::string>>& slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool matched = false;
    for (const auto& [name, value] : slots) {
      if (tmpl.compare(i, name.size(), name) == 0) {
        out += value;
        i += name.size();
        matched = true;
        break;
      }
    }
    if (!matched) out += tmpl[i++];
  }
  return out;
}

// positive_text may be empty; the prompt itself provides for an empty
// Standard Answer.
inline std::string render_prompt(const std::string& query_text, const std::string& positive_text,
                                 const std::string& candidate_text) {
  if (query_text.empty()) throw validation_error("render_prompt: empty query");
  if (candidate_text.empty()) throw validation_error("render_prompt: empty candidate");
  return render_template(kVerdictPromptTemplate, {{"{Input Question}", query_text},
                                                  {"{Input Candidate Answer}", candidate_text},
                                                  {"{Input Standard Answer}", positive_text}});
}

struct RelevanceVerdict {
  int accuracy = 0;
  int completeness = 0;
  int aggregate = 0;
  std::string raw_response;
  bool unjudgeable = false;
};

enum class Aggregator { min, max, sum };

inline Aggregator aggregator_from(const std::string& s) {
  if (s == "min") return Aggregator::min;
  if (s == "max") return Aggregator::max;
  if (s == "sum") return Aggregator::sum;
  throw validation_error("unknown aggregator: " + s);
}

struct JudgeConfig {
  Aggregator aggregator = Aggregator::min;
  // Candidates with aggregate >= removal_threshold are removed from the pool.
  int removal_threshold = 1;

  void validate() const {
    if (removal_threshold < 1) throw validation_error("removal threshold must be >= 1");
  }
};

inline int aggregate_scores(int accuracy, int completeness, Aggregator agg) {
  switch (agg) {
    case Aggregator::min: return std::min(accuracy, completeness);
    case Aggregator::max: return std::max(accuracy, completeness);
    case Aggregator::sum: return accuracy + completeness;
  }
  return 0;
}

namespace detail {

// First balanced {...} region that parses as a JSON object.
inline std::optional<json> first_json_object(std::string_view raw) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] != '{') continue;
    int depth = 0;
    bool in_string = false;
    for (std::size_t j = i; j < raw.size(); ++j) {
      char c = raw[j];
      if (in_string) {
        if (c == '\\')
          ++j;
        else if (c == '"')
          in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      if (c == '{') ++depth;
      if (c == '}') {
        if (--depth == 0) {
          json parsed = json::parse(raw.substr(i, j - i + 1), nullptr, false);
          if (!parsed.is_discarded() && parsed.is_object()) return parsed;
          break;
        }
      }
    }
  }
  return std::nullopt;
}

inline std::optional<int> score_field(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  const json& v = j.at(key);
  int score = -1;
  if (v.is_number_integer()) {
    score = v.get<int>();
  } else if (v.is_string()) {
    try {
      score = std::stoi(v.get<std::string>());
    } catch (const std::exception&) {
      return std::nullopt;
    }
  } else {
    return std::nullopt;
  }
  if (score < 0 || score > 2) return std::nullopt;
  return score;
}

}  // namespace detail

// Parses the judge completion. Throws validation_error when no usable object
// is found; callers retry the generation once before giving up.
inline RelevanceVerdict parse_verdict(const std::string& raw,
                                      Aggregator agg = Aggregator::min) {
  if (raw.empty()) throw validation_error("parse_verdict: empty response");
  auto obj = detail::first_json_object(raw);
  if (!obj) throw validation_error("parse_verdict: no JSON object in response");
  auto acc = detail::score_field(*obj, "Information Accuracy");
  auto comp = detail::score_field(*obj, "Information Completeness");
  if (!acc) throw validation_error("parse_verdict: missing or out-of-range 'Information Accuracy'");
  if (!comp)
    throw validation_error("parse_verdict: missing or out-of-range 'Information Completeness'");
  RelevanceVerdict v;
  v.accuracy = *acc;
  v.completeness = *comp;
  v.aggregate = aggregate_scores(*acc, *comp, agg);
  v.raw_response = raw;
  return v;
}

struct JudgedPool {
  std::string query_id;
  std::string lang;
  std::vector<std::string> kept;  // original rank order
  std::vector<std::pair<std::string, RelevanceVerdict>> removed;
};

// The single Standard Answer for a query: its highest-grade positive,
// ties broken by doc_id. Empty when the query has no positive.
inline std::string standard_answer_text(const corpus::Collection& coll,
                                        const std::string& query_id) {
  auto positives = coll.positives_of(query_id);
  if (positives.empty()) return {};
  const corpus::Query& q = coll.query(query_id);
  return coll.doc(q.lang, positives.front()).text;
}

// Judges every candidate in the ranked pool and keeps the ones below the
// removal threshold. Judgments run at temperature 0; a candidate whose
// completion cannot be parsed is re-asked once and then removed as
// unjudgeable. Verdicts are cached by the provider layer, which is what makes
// an interrupted run resumable.
inline JudgedPool filter_pool(const mining::RankedList& ranked, const corpus::Collection& coll,
                              providers::Client& client, const providers::ProviderConfig& gen_cfg,
                              const JudgeConfig& jcfg = {}) {
  jcfg.validate();
  if (ranked.candidates.empty()) throw validation_error("filter_pool: empty pool");

  const corpus::Query& q = coll.query(ranked.query_id);
  const std::string positive_text = standard_answer_text(coll, ranked.query_id);

  providers::ProviderConfig cfg = gen_cfg;
  cfg.temperature = 0.0;  // reproducible verdicts

  std::vector<RelevanceVerdict> verdicts = parallel_map<RelevanceVerdict>(
      ranked.candidates.size(), cfg.max_in_flight, [&](std::size_t i) {
        const std::string candidate_text =
            coll.doc(ranked.lang, ranked.candidates[i].doc_id).text;
        std::string prompt = render_prompt(q.text, positive_text, candidate_text);
        std::string raw;
        for (int attempt = 0; attempt < 2; ++attempt) {
          raw = client.generate(prompt, cfg, attempt);
          try {
            return parse_verdict(raw, jcfg.aggregator);
          } catch (const validation_error&) {
            continue;
          }
        }
        RelevanceVerdict v;
        v.unjudgeable = true;
        v.aggregate = 2;  // conservative: never train on a possibly relevant doc
        v.raw_response = raw;
        return v;
      });

  JudgedPool out;
  out.query_id = ranked.query_id;
  out.lang = ranked.lang;
  for (std::size_t i = 0; i < ranked.candidates.size(); ++i) {
    const std::string& doc_id = ranked.candidates[i].doc_id;
    if (!verdicts[i].unjudgeable && verdicts[i].aggregate < jcfg.removal_threshold)
      out.kept.push_back(doc_id);
    else
      out.removed.emplace_back(doc_id, verdicts[i]);
  }
  return out;
}

struct EliminationStats {
  std::map<std::string, std::size_t> pool_size;
  std::map<std::string, std::size_t> removed;

  void add(const JudgedPool& p) {
    pool_size[p.lang] += p.kept.size() + p.removed.size();
    removed[p.lang] += p.removed.size();
  }
  double removal_pct(const std::string& lang) const {
    auto it = pool_size.find(lang);
    if (it == pool_size.end() || it->second == 0) return 0.0;
    return 100.0 * static_cast<double>(removed.at(lang)) / static_cast<double>(it->second);
  }
  // lang \t pool \t removed \t removal_pct
  std::string to_tsv() const {
    std::string out = "lang\tpool\tremoved\tremoval_pct\n";
    for (const auto& [lang, n] : pool_size) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.2f", removal_pct(lang));
      out += lang + "\t" + std::to_string(n) + "\t" + std::to_string(removed.at(lang)) + "\t" +
             buf + "\n";
    }
    return out;
  }
};

inline nlohmann::ordered_json to_json(const JudgedPool& p) {
  nlohmann::ordered_json j;
  j["query_id"] = p.query_id;
  j["lang"] = p.lang;
  j["kept"] = p.kept;
  auto removed = nlohmann::ordered_json::array();
  for (const auto& [doc_id, v] : p.removed) {
    nlohmann::ordered_json jr;
    jr["doc_id"] = doc_id;
    jr["acc"] = v.accuracy;
    jr["comp"] = v.completeness;
    jr["agg"] = v.aggregate;
    if (v.unjudgeable) jr["unjudgeable"] = true;
    removed.push_back(std::move(jr));
  }
  j["removed"] = std::move(removed);
  return j;
}

inline JudgedPool judged_pool_from_json(const nlohmann::ordered_json& j) {
  JudgedPool p;
  p.query_id = j.at("query_id").get<std::string>();
  p.lang = j.value("lang", std::string{});
  p.kept = j.at("kept").get<std::vector<std::string>>();
  for (const auto& jr : j.at("removed")) {
    RelevanceVerdict v;
    v.accuracy = jr.value("acc", 0);
    v.completeness = jr.value("comp", 0);
    v.aggregate = jr.value("agg", 0);
    v.unjudgeable = jr.value("unjudgeable", false);
    p.removed.emplace_back(jr.at("doc_id").get<std::string>(), v);
  }
  return p;
}

}  // namespace negforge::judge
