#pragma once

// Deterministic offline model providers. They back the "builtin:" endpoint
// scheme so the whole pipeline can run without any service, and double as the
// reference behavior for stub HTTP servers in tests.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "negforge/common.hpp"
#include "negforge/text.hpp"

namespace negforge::stubs {

using json = nlohmann::json;

// Boilerplate marker used by the structured stub embedding: tokens starting
// with 'x' count as filler and are hashed into the upper half of the vector
// with a larger weight. The bundled synthetic corpus generates its
// per-language filler vocabulary with this prefix, which gives the toy
// trainer a linearly separable nuisance subspace to suppress.
inline bool is_filler_token(std::string_view tok) { return !tok.empty() && tok[0] == 'x'; }

// "hash<d>"   : plain hashed bag of tokens, L2-normalized.
// "struct<d>" : content tokens in dims [0, d/2), filler tokens in [d/2, d) at 3x weight.
inline std::vector<double> hash_embed(std::string_view text, const std::string& model) {
  bool structured = model.rfind("struct", 0) == 0;
  bool plain = model.rfind("hash", 0) == 0;
  if (!structured && !plain) throw provider_error("unknown builtin embed model: " + model);
  int dim = std::atoi(model.c_str() + (structured ? 6 : 4));
  if (dim < 2) throw provider_error("builtin embed model needs a dimension suffix: " + model);

  std::vector<double> v(dim, 0.0);
  for (const std::string& tok : text::tokenize(text)) {
    std::uint64_t h = rng::fnv1a64(tok);
    double sign = (h & 0x8000000000000000ULL) ? -1.0 : 1.0;
    if (structured) {
      int half = dim / 2;
      if (is_filler_token(tok)) {
        v[half + static_cast<int>(h % half)] += 3.0 * sign;
      } else {
        v[static_cast<int>(h % half)] += sign;
      }
    } else {
      v[static_cast<int>(h % dim)] += sign;
    }
  }
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm < 1e-12) {
    v[0] = 1.0;  // token-free text still needs a unit vector
  } else {
    for (double& x : v) x /= norm;
  }
  return v;
}

namespace detail {

inline std::string section(std::string_view prompt, std::string_view label,
                           std::string_view next_label) {
  std::size_t start = prompt.find(label);
  if (start == std::string_view::npos) return {};
  start += label.size();
  std::size_t end = prompt.find(next_label, start);
  if (end == std::string_view::npos) end = prompt.size();
  return std::string(str::trim(prompt.substr(start, end - start)));
}

inline std::vector<std::string> content_tokens(std::string_view s, std::size_t min_len,
                                               std::size_t max_count) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const std::string& tok : text::tokenize(s)) {
    if (tok.size() < min_len || is_filler_token(tok)) continue;
    if (!seen.insert(tok).second) continue;
    out.push_back(tok);
    if (out.size() >= max_count) break;
  }
  return out;
}

}  // namespace detail

// Grades a judge prompt by unique-token overlap between the Candidate Answer
// and the Standard Answer. Paraphrases of the positive share most content
// tokens and score 2; genuinely different documents score 0.
inline json judge_verdict(std::string_view prompt) {
  std::string candidate = detail::section(prompt, "Candidate Answer:", "\nStandard Answer:");
  std::string standard = detail::section(prompt, "Standard Answer:", "\n# Output:");
  std::set<std::string> cand_tokens, std_tokens;
  for (const std::string& t : text::tokenize(candidate)) cand_tokens.insert(t);
  for (const std::string& t : text::tokenize(standard)) std_tokens.insert(t);
  double overlap = 0.0;
  if (!std_tokens.empty()) {
    std::size_t shared = 0;
    for (const std::string& t : std_tokens)
      if (cand_tokens.count(t)) ++shared;
    overlap = static_cast<double>(shared) / static_cast<double>(std_tokens.size());
  }
  int score = overlap >= 0.60 ? 2 : (overlap >= 0.35 ? 1 : 0);
  return json{{"Information Accuracy", score}, {"Information Completeness", score}};
}

// Deterministic stand-in for the generation service. Recognizes the three
// prompt families used by the pipeline; anything else is echoed back.
inline std::string stub_generate(std::string_view prompt, int attempt) {
  if (prompt.rfind("# Task Review:", 0) == 0) return judge_verdict(prompt).dump();

  if (str::contains(prompt, "Summarize the Document")) {
    std::string query = detail::section(prompt, "Query:", "\nDocument:");
    std::string document = detail::section(prompt, "Document:", "\nSummary:");
    auto tokens = detail::content_tokens(document, 3, 16);
    std::string summary = query;
    for (const std::string& t : tokens) {
      summary += ' ';
      summary += t;
    }
    return summary;
  }

  if (str::contains(prompt, "Write one new search query")) {
    std::string summary = detail::section(prompt, "Summary:", "\nQuery:");
    auto tokens = detail::content_tokens(summary, 3, 64);
    if (tokens.empty()) return "empty";
    // Rotate by attempt so backfill retry rounds explore different queries.
    std::size_t offset = static_cast<std::size_t>(attempt) % tokens.size();
    std::vector<std::string> picked;
    for (std::size_t i = 0; i < tokens.size() && picked.size() < 6; ++i)
      picked.push_back(tokens[(offset + i) % tokens.size()]);
    return str::join(picked, " ");
  }

  return "ok";
}

inline std::string stub_translate(const std::string& text_in, const std::string& target,
                                  const std::string& model) {
  if (model == "identity" || model.empty()) return text_in;
  if (model == "upper") {
    std::string out = text_in;
    for (char& c : out)
      if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    return out;
  }
  if (model == "reverse") {
    auto cps = text::utf8_decode(text_in);
    std::string out;
    for (auto it = cps.rbegin(); it != cps.rend(); ++it) text::utf8_append(out, *it);
    return out;
  }
  if (model == "tag") return "[" + target + "] " + text_in;
  throw provider_error("unknown builtin translate model: " + model);
}

// Serves a wire-format request body for one of the three provider roles.
inline json handle_request(const std::string& role, const json& body) {
  if (role == "embed") {
    const std::string model = body.at("model").get<std::string>();
    json vectors = json::array();
    int dim = -1;
    for (const auto& t : body.at("texts")) {
      std::vector<double> v = hash_embed(t.get<std::string>(), model);
      dim = static_cast<int>(v.size());
      vectors.push_back(v);
    }
    return json{{"dim", dim}, {"vectors", vectors}};
  }
  if (role == "generate") {
    int attempt = body.value("attempt", 0);
    return json{{"text", stub_generate(body.at("prompt").get<std::string>(), attempt)}};
  }
  if (role == "translate") {
    std::string model = body.value("model", std::string{"identity"});
    return json{{"text", stub_translate(body.at("text").get<std::string>(),
                                        body.at("target").get<std::string>(), model)}};
  }
  throw provider_error("unknown provider role: " + role);
}

}  // namespace negforge::stubs
