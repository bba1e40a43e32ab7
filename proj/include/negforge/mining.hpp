#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "negforge/corpus.hpp"
#include "negforge/providers.hpp"
#include "negforge/text.hpp"

namespace negforge::mining {

struct RankedCandidate {
  std::string doc_id;
  std::map<std::string, double> scores;  // retriever name -> raw score
  double fused = 0.0;
  int rank = 0;
};

struct RankedList {
  std::string query_id;
  std::string lang;
  std::vector<RankedCandidate> candidates;
  int k = 0;
};

enum class FusionMode { znorm_mean, rrf };

inline FusionMode fusion_mode_from(const std::string& s) {
  if (s == "znorm-mean") return FusionMode::znorm_mean;
  if (s == "rrf") return FusionMode::rrf;
  throw validation_error("unknown fusion mode: " + s);
}

inline std::string to_string(FusionMode m) {
  return m == FusionMode::znorm_mean ? "znorm-mean" : "rrf";
}

struct RetrieverSpec {
  std::string name;
  enum class Kind { lexical, embedding } kind = Kind::lexical;
  double weight = 1.0;
  providers::ProviderConfig provider;  // embedding retrievers only
};

struct EnsembleConfig {
  std::vector<RetrieverSpec> roster;
  FusionMode fusion = FusionMode::znorm_mean;
  int k = 40;
  double rrf_k = 60.0;

  void validate() const {
    if (roster.empty()) throw validation_error("ensemble roster is empty");
    double total = 0;
    for (const auto& r : roster) {
      if (r.weight < 0) throw validation_error("retriever weight must be >= 0: " + r.name);
      total += r.weight;
    }
    if (total <= 0) throw validation_error("retriever weights must sum to > 0");
    if (k < 1) throw validation_error("pool size k must be >= 1");
  }
};

// Okapi BM25 over an inverted index. Documents sharing no query term are not
// scored. idf uses the +1 smoothing, so single-term toy collections still get
// positive scores:
//   idf(t)   = ln(1 + (N - df + 0.5) / (df + 0.5))
//   score(q) = sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl/avgdl))
class Bm25Index {
 public:
  Bm25Index() = default;
  explicit Bm25Index(const std::vector<corpus::Document>& docs, double k1 = 0.9, double b = 0.4)
      : k1_(k1), b_(b) {
    doc_ids_.reserve(docs.size());
    doc_len_.reserve(docs.size());
    double total_len = 0;
    for (const corpus::Document& d : docs) {
      std::size_t idx = doc_ids_.size();
      doc_ids_.push_back(d.doc_id);
      std::unordered_map<std::string, int> tf;
      for (const std::string& tok : text::tokenize(index_text(d))) tf[tok]++;
      double dl = 0;
      for (auto& [tok, n] : tf) dl += n;
      doc_len_.push_back(dl);
      total_len += dl;
      for (auto& [tok, n] : tf) postings_[tok].push_back({idx, n});
    }
    avg_len_ = doc_ids_.empty() ? 0.0 : total_len / static_cast<double>(doc_ids_.size());
  }

  static std::string index_text(const corpus::Document& d) {
    return d.title.empty() ? d.text : d.title + "\n" + d.text;
  }

  std::size_t size() const { return doc_ids_.size(); }

  std::map<std::string, double> score(const std::string& query_text) const {
    std::vector<std::string> q_tokens = text::tokenize(query_text);
    if (q_tokens.empty()) throw validation_error("empty query after tokenization");
    std::unordered_map<std::string, int> q_tf;
    for (const std::string& t : q_tokens) q_tf[t]++;

    double n_docs = static_cast<double>(doc_ids_.size());
    std::unordered_map<std::size_t, double> acc;
    for (auto& [tok, qn] : q_tf) {
      auto it = postings_.find(tok);
      if (it == postings_.end()) continue;
      double df = static_cast<double>(it->second.size());
      double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
      for (const auto& [doc_idx, tf] : it->second) {
        double norm = tf + k1_ * (1.0 - b_ + b_ * doc_len_[doc_idx] / avg_len_);
        acc[doc_idx] += static_cast<double>(qn) * idf * (tf * (k1_ + 1.0)) / norm;
      }
    }
    std::map<std::string, double> out;
    for (auto& [doc_idx, s] : acc) out[doc_ids_[doc_idx]] = s;
    return out;
  }

 private:
  double k1_ = 0.9;
  double b_ = 0.4;
  double avg_len_ = 0.0;
  std::vector<std::string> doc_ids_;
  std::vector<double> doc_len_;
  std::unordered_map<std::string, std::vector<std::pair<std::size_t, int>>> postings_;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw validation_error("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0 || nb <= 0) throw validation_error("cosine undefined for zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Cosine similarity of the query against each doc embedding.
inline std::map<std::string, double> score_dense(
    const std::vector<double>& query_vec,
    const std::vector<std::pair<std::string, std::vector<double>>>& doc_vecs) {
  std::map<std::string, double> out;
  for (const auto& [doc_id, v] : doc_vecs) out[doc_id] = cosine(query_vec, v);
  return out;
}

// Fuses per-retriever score maps into a ranked candidate list.
//
// Candidates are the union of all scored docs; a retriever that did not score
// a candidate contributes its own pool minimum for it. znorm-mean z-normalizes
// each retriever over the pool (sigma == 0 -> all zeros) and takes the
// weighted mean; rrf sums w_z / (rrf_k + rank_z). The fused list is sorted
// descending (ties by doc_id), truncated to k, and positives of the query are
// eliminated.
inline RankedList fuse(const std::string& query_id, const std::string& lang,
                       const std::vector<std::pair<std::string, std::map<std::string, double>>>&
                           per_retriever_scores,
                       const EnsembleConfig& cfg,
                       const std::unordered_set<std::string>& positives) {
  cfg.validate();

  std::map<std::string, std::map<std::string, double>> by_doc;  // doc -> retriever -> score
  for (const auto& [name, scores] : per_retriever_scores)
    for (const auto& [doc_id, s] : scores) by_doc[doc_id][name] = s;
  if (by_doc.empty()) throw validation_error("fuse: empty candidate union");

  // Impute missing scores with the retriever's pool minimum.
  for (const auto& [name, scores] : per_retriever_scores) {
    double pool_min = 0.0;
    if (!scores.empty()) {
      pool_min = scores.begin()->second;
      for (const auto& [_, s] : scores) pool_min = std::min(pool_min, s);
    }
    for (auto& [doc_id, row] : by_doc)
      if (!row.count(name)) row[name] = pool_min;
  }

  std::unordered_map<std::string, double> weight_of;
  double weight_total = 0;
  for (const RetrieverSpec& r : cfg.roster) {
    weight_of[r.name] = r.weight;
    weight_total += r.weight;
  }

  std::map<std::string, double> fused;
  if (cfg.fusion == FusionMode::znorm_mean) {
    for (const auto& [name, _] : per_retriever_scores) {
      double mean = 0, n = static_cast<double>(by_doc.size());
      for (auto& [doc_id, row] : by_doc) mean += row.at(name);
      mean /= n;
      double var = 0;
      for (auto& [doc_id, row] : by_doc) {
        double d = row.at(name) - mean;
        var += d * d;
      }
      double sigma = std::sqrt(var / n);
      double w = weight_of.count(name) ? weight_of.at(name) : 0.0;
      for (auto& [doc_id, row] : by_doc) {
        double z = sigma > 0 ? (row.at(name) - mean) / sigma : 0.0;
        fused[doc_id] += w * z / weight_total;
      }
    }
  } else {
    for (const auto& [name, _] : per_retriever_scores) {
      // Rank candidates for this retriever: score desc, doc_id asc.
      std::vector<std::pair<std::string, double>> order;
      for (auto& [doc_id, row] : by_doc) order.emplace_back(doc_id, row.at(name));
      std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
      });
      double w = weight_of.count(name) ? weight_of.at(name) : 0.0;
      for (std::size_t r = 0; r < order.size(); ++r)
        fused[order[r].first] += w / (cfg.rrf_k + static_cast<double>(r + 1));
    }
  }

  std::vector<std::pair<std::string, double>> order;
  for (auto& [doc_id, s] : fused) order.emplace_back(doc_id, s);
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(order.size()) > cfg.k) order.resize(cfg.k);

  RankedList out;
  out.query_id = query_id;
  out.lang = lang;
  out.k = cfg.k;
  for (const auto& [doc_id, s] : order) {
    if (positives.count(doc_id)) continue;
    RankedCandidate c;
    c.doc_id = doc_id;
    c.scores = by_doc.at(doc_id);
    c.fused = s;
    c.rank = static_cast<int>(out.candidates.size()) + 1;
    out.candidates.push_back(std::move(c));
  }
  return out;
}

// Retriever-ensemble miner. prepare(lang) builds the language's BM25 index and
// embedding matrices once; mine() is then read-only and safe to call from
// parallel workers.
class Miner {
 public:
  Miner(const corpus::Collection& coll, EnsembleConfig cfg,
        std::shared_ptr<providers::Client> client)
      : coll_(coll), cfg_(std::move(cfg)), client_(std::move(client)) {
    cfg_.validate();
  }

  const EnsembleConfig& config() const { return cfg_; }

  void prepare(const std::string& lang) {
    if (prepared_.count(lang)) return;
    LangState st;
    const auto& docs = coll_.documents(lang);
    st.bm25 = Bm25Index(docs);
    for (const RetrieverSpec& r : cfg_.roster) {
      if (r.kind != RetrieverSpec::Kind::embedding) continue;
      std::vector<std::string> texts;
      texts.reserve(docs.size());
      for (const corpus::Document& d : docs) texts.push_back(Bm25Index::index_text(d));
      auto vecs = client_->embed(texts, r.provider);
      auto& mat = st.doc_vecs[r.name];
      mat.reserve(docs.size());
      for (std::size_t i = 0; i < docs.size(); ++i)
        mat.emplace_back(docs[i].doc_id, std::move(vecs[i].values));
    }
    prepared_.emplace(lang, std::move(st));
  }

  RankedList mine_query(const std::string& query_id) const {
    const corpus::Query& q = coll_.query(query_id);
    return mine_text(q.text, q.lang, coll_.positive_set(query_id), query_id);
  }

  RankedList mine_text(const std::string& query_text, const std::string& lang,
                       const std::unordered_set<std::string>& positives,
                       const std::string& query_id_label) const {
    auto it = prepared_.find(lang);
    if (it == prepared_.end()) throw error("miner not prepared for language " + lang);
    const LangState& st = it->second;

    std::vector<std::pair<std::string, std::map<std::string, double>>> per_retriever;
    for (const RetrieverSpec& r : cfg_.roster) {
      if (r.kind == RetrieverSpec::Kind::lexical) {
        per_retriever.emplace_back(r.name, st.bm25.score(query_text));
      } else {
        auto qvec = client_->embed({query_text}, r.provider);
        per_retriever.emplace_back(r.name,
                                   score_dense(qvec[0].values, st.doc_vecs.at(r.name)));
      }
    }
    return fuse(query_id_label, lang, per_retriever, cfg_, positives);
  }

 private:
  struct LangState {
    Bm25Index bm25;
    std::map<std::string, std::vector<std::pair<std::string, std::vector<double>>>> doc_vecs;
  };

  const corpus::Collection& coll_;
  EnsembleConfig cfg_;
  std::shared_ptr<providers::Client> client_;
  std::map<std::string, LangState> prepared_;
};

enum class Strategy { naive_topk, topk_shifted, topk_abs, topk_margin_pos, topk_perc_pos };

inline Strategy strategy_from(const std::string& s) {
  if (s == "naive") return Strategy::naive_topk;
  if (s == "shifted") return Strategy::topk_shifted;
  if (s == "abs") return Strategy::topk_abs;
  if (s == "margin-pos") return Strategy::topk_margin_pos;
  if (s == "perc-pos") return Strategy::topk_perc_pos;
  throw validation_error("unknown strategy: " + s);
}

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::naive_topk: return "naive";
    case Strategy::topk_shifted: return "shifted";
    case Strategy::topk_abs: return "abs";
    case Strategy::topk_margin_pos: return "margin-pos";
    case Strategy::topk_perc_pos: return "perc-pos";
  }
  return "?";
}

struct StrategyParams {
  int shift_n = 10;            // Top-K shifted by N
  double abs_threshold = 0.6;  // TopK-Abs
  double margin = 0.15;        // TopK-MarginPos
  double percentage = 0.90;    // TopK-PercPos
  // Score channel the thresholds compare against: "" = fused, else a roster
  // retriever's raw score (cosine thresholds want the dense channel).
  std::string score_channel;
};

namespace detail {

inline double channel_score(const RankedCandidate& c, const std::string& channel) {
  if (channel.empty()) return c.fused;
  auto it = c.scores.find(channel);
  if (it == c.scores.end())
    throw validation_error("candidate has no score for channel '" + channel + "'");
  return it->second;
}

}  // namespace detail

// The five reference hard-negative selection rules, applied to a ranked pool.
// positives_scores are the query's positives scored on the same channel.
inline std::vector<std::string> baseline_strategy(const RankedList& ranked,
                                                  const std::vector<double>& positives_scores,
                                                  Strategy strategy,
                                                  const StrategyParams& params = {}) {
  if (params.shift_n < 0) throw validation_error("shift N must be >= 0");
  if (params.margin < 0) throw validation_error("margin must be >= 0");
  if (params.percentage < 0 || params.percentage > 1)
    throw validation_error("percentage must be in [0, 1]");

  double max_pos = 0;
  if (strategy == Strategy::topk_margin_pos || strategy == Strategy::topk_perc_pos) {
    if (positives_scores.empty())
      throw validation_error(to_string(strategy) + " requires at least one scored positive");
    max_pos = *std::max_element(positives_scores.begin(), positives_scores.end());
  }

  std::vector<std::string> out;
  for (const RankedCandidate& c : ranked.candidates) {
    switch (strategy) {
      case Strategy::naive_topk:
        out.push_back(c.doc_id);
        break;
      case Strategy::topk_shifted:
        if (c.rank > params.shift_n) out.push_back(c.doc_id);
        break;
      case Strategy::topk_abs:
        if (detail::channel_score(c, params.score_channel) < params.abs_threshold)
          out.push_back(c.doc_id);
        break;
      case Strategy::topk_margin_pos:
        if (detail::channel_score(c, params.score_channel) < max_pos - params.margin)
          out.push_back(c.doc_id);
        break;
      case Strategy::topk_perc_pos:
        if (detail::channel_score(c, params.score_channel) < params.percentage * max_pos)
          out.push_back(c.doc_id);
        break;
    }
  }
  return out;
}

// JSONL round-trip for mined pools:
// {"query_id", "lang", "candidates": [{"doc_id", "scores", "fused", "rank"}]}
inline nlohmann::ordered_json to_json(const RankedList& rl) {
  nlohmann::ordered_json j;
  j["query_id"] = rl.query_id;
  j["lang"] = rl.lang;
  j["k"] = rl.k;
  auto arr = nlohmann::ordered_json::array();
  for (const RankedCandidate& c : rl.candidates) {
    nlohmann::ordered_json jc;
    jc["doc_id"] = c.doc_id;
    jc["scores"] = c.scores;
    jc["fused"] = c.fused;
    jc["rank"] = c.rank;
    arr.push_back(std::move(jc));
  }
  j["candidates"] = std::move(arr);
  return j;
}

inline RankedList ranked_list_from_json(const nlohmann::ordered_json& j) {
  RankedList rl;
  rl.query_id = j.at("query_id").get<std::string>();
  rl.lang = j.value("lang", std::string{});
  rl.k = j.value("k", 0);
  for (const auto& jc : j.at("candidates")) {
    RankedCandidate c;
    c.doc_id = jc.at("doc_id").get<std::string>();
    c.scores = jc.at("scores").get<std::map<std::string, double>>();
    c.fused = jc.at("fused").get<double>();
    c.rank = jc.at("rank").get<int>();
    rl.candidates.push_back(std::move(c));
  }
  return rl;
}

}  // namespace negforge::mining
