#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "negforge/common.hpp"
#include "negforge/corpus.hpp"
#include "negforge/mining.hpp"
#include "negforge/providers.hpp"

namespace negforge::training {

using json = nlohmann::ordered_json;

// -log softmax of the positive among {positive} + negatives, stabilized by
// max-subtraction. No negatives means -log(1) == 0.
inline double loss_from_logits(double pos_logit, const std::vector<double>& neg_logits) {
  double m = pos_logit;
  for (double s : neg_logits) m = std::max(m, s);
  double sum = std::exp(pos_logit - m);
  for (double s : neg_logits) sum += std::exp(s - m);
  return -(pos_logit - m) + std::log(sum);
}

inline double cosine_d(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw validation_error("loss: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0 || nb <= 0) throw validation_error("loss: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Contrastive loss of one (query, positive, negatives) triple with cosine
// logits. tau divides the logits; the default 1.0 is the plain formula.
inline double loss_mr(const std::vector<double>& query_vec, const std::vector<double>& pos_vec,
                      const std::vector<std::vector<double>>& neg_vecs, double tau = 1.0) {
  if (tau <= 0) throw validation_error("loss_mr: tau must be positive");
  double pos_logit = cosine_d(query_vec, pos_vec) / tau;
  std::vector<double> neg_logits;
  neg_logits.reserve(neg_vecs.size());
  for (const auto& v : neg_vecs) neg_logits.push_back(cosine_d(query_vec, v) / tau);
  return loss_from_logits(pos_logit, neg_logits);
}

// One training item with raw (frozen) embeddings. positive_key identifies the
// positive so in-batch duplicates can be excluded.
struct EmbeddedItem {
  Eigen::VectorXd query;
  Eigen::VectorXd positive;
  std::vector<Eigen::VectorXd> negatives;
  std::vector<double> omegas;  // per-negative weights
  std::string positive_key;

  double omega_mean() const {
    if (omegas.empty()) return 1.0;
    double s = 0;
    for (double w : omegas) s += w;
    return s / static_cast<double>(omegas.size());
  }
};

struct LossReport {
  std::vector<double> per_query_loss;
  std::vector<double> per_query_omega;
  double batch_loss = 0.0;
  Eigen::MatrixXd grad;  // d batch_loss / d W
};

namespace detail {

struct CosGrad {
  double sim;
  Eigen::VectorXd d_u;  // d sim / d u
  Eigen::VectorXd d_v;  // d sim / d v
};

inline CosGrad cosine_with_grad(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  double nu = u.norm(), nv = v.norm();
  if (nu <= 0 || nv <= 0) throw validation_error("loss: zero vector under projection");
  Eigen::VectorXd uh = u / nu, vh = v / nv;
  double sim = uh.dot(vh);
  CosGrad g;
  g.sim = sim;
  g.d_u = (vh - sim * uh) / nu;
  g.d_v = (uh - sim * vh) / nv;
  return g;
}

}  // namespace detail

// Weighted batch loss: (1/|B|) * sum_q omega_q * L_MR(q) with omega_q the mean
// of the query's per-negative weights. With in_batch on, every other item's
// positive joins the softmax denominator unweighted; an in-batch positive
// identical to the query's own positive is excluded. The gradient is with
// respect to the projection W applied to all raw embeddings.
inline LossReport loss_final(const std::vector<EmbeddedItem>& batch, const Eigen::MatrixXd& W,
                             bool in_batch, double tau = 1.0) {
  if (batch.empty()) throw validation_error("loss_final: empty batch");
  if (tau <= 0) throw validation_error("loss_final: tau must be positive");
  const auto dim_in = W.cols();
  LossReport report;
  report.grad = Eigen::MatrixXd::Zero(W.rows(), W.cols());
  double inv_b = 1.0 / static_cast<double>(batch.size());

  for (std::size_t qi = 0; qi < batch.size(); ++qi) {
    const EmbeddedItem& item = batch[qi];
    if (item.query.size() != dim_in || item.positive.size() != dim_in)
      throw validation_error("loss_final: embedding dimension mismatch");

    std::vector<const Eigen::VectorXd*> docs;
    docs.push_back(&item.positive);
    for (const auto& n : item.negatives) {
      if (n.size() != dim_in) throw validation_error("loss_final: embedding dimension mismatch");
      docs.push_back(&n);
    }
    if (in_batch) {
      for (std::size_t rj = 0; rj < batch.size(); ++rj) {
        if (rj == qi) continue;
        if (batch[rj].positive_key == item.positive_key) continue;
        docs.push_back(&batch[rj].positive);
      }
    }

    Eigen::VectorXd u = W * item.query;
    std::vector<detail::CosGrad> grads;
    grads.reserve(docs.size());
    std::vector<double> logits(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
      grads.push_back(detail::cosine_with_grad(u, W * (*docs[i])));
      logits[i] = grads[i].sim / tau;
    }

    double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (double s : logits) sum += std::exp(s - m);
    double loss = -(logits[0] - m) + std::log(sum);

    double omega_q = item.omega_mean();
    report.per_query_loss.push_back(loss);
    report.per_query_omega.push_back(omega_q);

    double scale = inv_b * omega_q / tau;
    Eigen::VectorXd du = Eigen::VectorXd::Zero(u.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
      double p = std::exp(logits[i] - m) / sum;
      double coeff = p - (i == 0 ? 1.0 : 0.0);
      du += coeff * grads[i].d_u;
      report.grad += (scale * coeff) * grads[i].d_v * docs[i]->transpose();
    }
    report.grad += scale * du * item.query.transpose();
  }

  double total = 0;
  for (std::size_t i = 0; i < report.per_query_loss.size(); ++i)
    total += report.per_query_omega[i] * report.per_query_loss[i];
  report.batch_loss = total * inv_b;
  return report;
}

// Central finite differences over every projection parameter; returns the
// max relative error against the analytic gradient.
inline double grad_check(const std::function<double(const Eigen::MatrixXd&)>& loss_fn,
                         const Eigen::MatrixXd& params, const Eigen::MatrixXd& analytic,
                         double eps) {
  if (!(eps > 0 && eps <= 1e-3)) throw validation_error("grad_check: eps must be in (0, 1e-3]");
  if (params.rows() != analytic.rows() || params.cols() != analytic.cols())
    throw validation_error("grad_check: shape mismatch");
  Eigen::MatrixXd w = params;
  double max_rel = 0;
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      double orig = w(r, c);
      w(r, c) = orig + eps;
      double up = loss_fn(w);
      w(r, c) = orig - eps;
      double down = loss_fn(w);
      w(r, c) = orig;
      double numeric = (up - down) / (2 * eps);
      double ga = analytic(r, c);
      double rel = std::fabs(numeric - ga) / std::max({1.0, std::fabs(numeric), std::fabs(ga)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

struct TrainItem {
  std::string query_id;
  std::string query_text;
  std::string positive_text;
  std::vector<std::string> negative_texts;
  std::vector<double> weights;
  std::string lang;
  std::string topic;
  int batch_idx = 0;
};

inline std::vector<TrainItem> parse_training_file(const std::filesystem::path& path) {
  std::vector<TrainItem> out;
  for (const std::string& line : io::read_lines(path)) {
    if (str::trim(line).empty()) continue;
    json j = json::parse(line);
    TrainItem t;
    t.query_id = j.value("query_id", std::string{});
    t.query_text = j.at("query").get<std::string>();
    t.positive_text = j.at("positive").get<std::string>();
    t.negative_texts = j.at("negatives").get<std::vector<std::string>>();
    t.weights = j.at("weights").get<std::vector<double>>();
    t.lang = j.value("lang", std::string{});
    t.topic = j.value("topic", std::string{});
    t.batch_idx = j.at("batch_idx").get<int>();
    if (t.weights.size() != t.negative_texts.size())
      throw validation_error("training file: weights and negatives length differ");
    out.push_back(std::move(t));
  }
  return out;
}

// Query/passage length limits are token counts, enforced by
// character-proportional truncation since no tokenizer is shipped.
struct Truncation {
  int max_query_tokens = 64;
  int max_passage_tokens = 256;
  double chars_per_token = 6.0;

  std::string clip(const std::string& s, int max_tokens) const {
    if (chars_per_token <= 0) throw validation_error("truncation: chars_per_token must be > 0");
    auto limit = static_cast<std::size_t>(max_tokens * chars_per_token);
    auto cps = text::utf8_decode(s);
    if (cps.size() <= limit) return s;
    std::string out;
    for (std::size_t i = 0; i < limit; ++i) text::utf8_append(out, cps[i]);
    return out;
  }
  std::string clip_query(const std::string& s) const { return clip(s, max_query_tokens); }
  std::string clip_passage(const std::string& s) const { return clip(s, max_passage_tokens); }
};

struct ToyTrainConfig {
  int epochs = 20;
  double lr = 2e-6;
  std::uint64_t seed = 17;
  bool in_batch = false;
  double tau = 1.0;  // divisor on cosine logits
  int out_dim = 0;   // 0 = input dim
  double divergence_factor = 10.0;
  Truncation truncation;
};

struct TrainResult {
  Eigen::MatrixXd initial_W;
  Eigen::MatrixXd W;
  std::vector<double> loss_curve;  // per-epoch mean batch loss
};

namespace detail {

inline double gauss(rng::Pcg& gen) {
  double u1 = gen.uniform();
  double u2 = gen.uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace detail

inline Eigen::MatrixXd random_projection(int out_dim, int in_dim, std::uint64_t seed) {
  rng::Pcg gen(seed);
  Eigen::MatrixXd W(out_dim, in_dim);
  double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (int r = 0; r < out_dim; ++r)
    for (int c = 0; c < in_dim; ++c) W(r, c) = scale * detail::gauss(gen);
  return W;
}

// Gradient descent on the weighted batch loss over a single dense projection
// of frozen provider embeddings. Batches are visited in file order and
// gradients accumulated in a fixed order, so runs are reproducible under the
// seed.
inline TrainResult train_toy(const std::vector<TrainItem>& items, providers::Client& client,
                             const providers::ProviderConfig& embed_cfg,
                             const ToyTrainConfig& cfg) {
  if (items.empty()) throw validation_error("train_toy: no training items");
  if (cfg.epochs < 0) throw validation_error("train_toy: epochs must be >= 0");

  std::vector<std::string> texts;
  std::set<std::string> seen;
  auto note = [&](const std::string& t) {
    if (seen.insert(t).second) texts.push_back(t);
  };
  std::vector<TrainItem> clipped = items;
  for (TrainItem& it : clipped) {
    it.query_text = cfg.truncation.clip_query(it.query_text);
    it.positive_text = cfg.truncation.clip_passage(it.positive_text);
    for (auto& n : it.negative_texts) n = cfg.truncation.clip_passage(n);
    note(it.query_text);
    note(it.positive_text);
    for (const auto& n : it.negative_texts) note(n);
  }
  auto vecs = client.embed(texts, embed_cfg);
  std::map<std::string, Eigen::VectorXd> emb;
  for (std::size_t i = 0; i < texts.size(); ++i)
    emb[texts[i]] = Eigen::Map<const Eigen::VectorXd>(vecs[i].values.data(),
                                                      static_cast<Eigen::Index>(vecs[i].values.size()));
  int in_dim = static_cast<int>(emb.begin()->second.size());
  int out_dim = cfg.out_dim > 0 ? cfg.out_dim : in_dim;

  // Group into batches, preserving file order.
  std::vector<std::vector<EmbeddedItem>> batches;
  std::map<int, std::size_t> batch_slot;
  for (const TrainItem& it : clipped) {
    auto [slot, inserted] = batch_slot.try_emplace(it.batch_idx, batches.size());
    if (inserted) batches.emplace_back();
    EmbeddedItem e;
    e.query = emb.at(it.query_text);
    e.positive = emb.at(it.positive_text);
    for (const auto& n : it.negative_texts) e.negatives.push_back(emb.at(n));
    e.omegas = it.weights;
    e.positive_key = it.positive_text;
    batches[slot->second].push_back(std::move(e));
  }

  TrainResult result;
  result.initial_W = random_projection(out_dim, in_dim, cfg.seed);
  result.W = result.initial_W;

  double initial_loss = -1;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_total = 0;
    for (const auto& batch : batches) {
      LossReport r = loss_final(batch, result.W, cfg.in_batch, cfg.tau);
      if (initial_loss < 0) initial_loss = r.batch_loss;
      if (r.batch_loss > cfg.divergence_factor * std::max(initial_loss, 1e-9))
        throw error("train_toy diverged: batch loss " + std::to_string(r.batch_loss));
      result.W -= cfg.lr * r.grad;
      epoch_total += r.batch_loss;
    }
    result.loss_curve.push_back(epoch_total / static_cast<double>(batches.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Retrieval metrics
// ---------------------------------------------------------------------------

struct RunEntry {
  std::string query_id;
  std::string doc_id;
  double score = 0;
  int rank = 0;
};

// TREC run line: query_id Q0 doc_id rank score tag
inline std::string to_trec_run(const std::map<std::string, std::vector<RunEntry>>& run,
                               const std::string& tag) {
  std::string out;
  for (const auto& [query_id, entries] : run) {
    for (const RunEntry& e : entries) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6f", e.score);
      out += query_id + "\tQ0\t" + e.doc_id + "\t" + std::to_string(e.rank) + "\t" + buf + "\t" +
             tag + "\n";
    }
  }
  return out;
}

inline std::map<std::string, std::vector<RunEntry>> parse_trec_run(const std::string& content) {
  std::map<std::string, std::vector<RunEntry>> run;
  std::size_t line_no = 0;
  for (const std::string& line : str::split(content, '\n')) {
    ++line_no;
    if (str::trim(line).empty()) continue;
    auto cols = str::split(line, '\t');
    if (cols.size() == 1) cols = str::split(line, ' ');
    if (cols.size() != 6)
      throw validation_error("run line " + std::to_string(line_no) + ": expected 6 fields");
    RunEntry e;
    e.query_id = cols[0];
    e.doc_id = cols[2];
    e.rank = std::stoi(cols[3]);
    e.score = std::stod(cols[4]);
    run[e.query_id].push_back(std::move(e));
  }
  return run;
}

struct EvalResult {
  std::map<std::string, double> ndcg_by_query;
  std::map<std::string, double> recall_by_query;
  std::map<std::string, double> ndcg_by_lang;
  std::map<std::string, double> recall_by_lang;
  std::map<std::string, std::size_t> queries_by_lang;
  double macro_ndcg = 0;
  double macro_recall = 0;
  std::vector<std::string> skipped;  // queries with no positive judgment
};

// Graded nDCG with log2 discount and linear gain, and set recall. Queries are
// macro-averaged per language first, then languages averaged uniformly.
inline EvalResult evaluate(const std::map<std::string, std::vector<RunEntry>>& run,
                           const std::map<std::string, std::map<std::string, int>>& qrels,
                           const std::function<std::string(const std::string&)>& lang_of,
                           int ndcg_k = 10, int recall_k = 100, int positive_threshold = 1) {
  EvalResult result;
  std::map<std::string, std::pair<double, std::size_t>> ndcg_acc, recall_acc;

  for (const auto& [query_id, judged] : qrels) {
    std::vector<int> rel_grades;
    std::size_t n_relevant = 0;
    for (const auto& [doc_id, grade] : judged) {
      if (grade >= positive_threshold) {
        rel_grades.push_back(grade);
        ++n_relevant;
      }
    }
    if (n_relevant == 0) {
      result.skipped.push_back(query_id);
      continue;
    }

    std::vector<RunEntry> ranked;
    if (auto it = run.find(query_id); it != run.end()) ranked = it->second;
    std::sort(ranked.begin(), ranked.end(), [](const RunEntry& a, const RunEntry& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.doc_id < b.doc_id;
    });

    double dcg = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      auto jt = judged.find(ranked[i].doc_id);
      int grade = jt == judged.end() ? 0 : jt->second;
      if (static_cast<int>(i) < ndcg_k && grade > 0)
        dcg += static_cast<double>(grade) / std::log2(static_cast<double>(i) + 2.0);
      if (static_cast<int>(i) < recall_k && grade >= positive_threshold) ++hits;
    }
    std::sort(rel_grades.begin(), rel_grades.end(), std::greater<>());
    double idcg = 0;
    for (std::size_t i = 0; i < rel_grades.size() && static_cast<int>(i) < ndcg_k; ++i)
      idcg += static_cast<double>(rel_grades[i]) / std::log2(static_cast<double>(i) + 2.0);

    double ndcg = idcg > 0 ? dcg / idcg : 0.0;
    double recall = static_cast<double>(hits) / static_cast<double>(n_relevant);
    result.ndcg_by_query[query_id] = ndcg;
    result.recall_by_query[query_id] = recall;
    std::string lang = lang_of(query_id);
    ndcg_acc[lang].first += ndcg;
    ndcg_acc[lang].second++;
    recall_acc[lang].first += recall;
    recall_acc[lang].second++;
  }

  for (const auto& [lang, acc] : ndcg_acc) {
    result.ndcg_by_lang[lang] = acc.first / static_cast<double>(acc.second);
    result.queries_by_lang[lang] = acc.second;
  }
  for (const auto& [lang, acc] : recall_acc)
    result.recall_by_lang[lang] = acc.first / static_cast<double>(acc.second);
  if (!result.ndcg_by_lang.empty()) {
    for (const auto& [_, v] : result.ndcg_by_lang) result.macro_ndcg += v;
    result.macro_ndcg /= static_cast<double>(result.ndcg_by_lang.size());
    for (const auto& [_, v] : result.recall_by_lang) result.macro_recall += v;
    result.macro_recall /= static_cast<double>(result.recall_by_lang.size());
  }
  return result;
}

// lang \t queries \t ndcg \t recall rows plus the macro Avg row.
inline std::string eval_report_tsv(const EvalResult& r, int ndcg_k = 10, int recall_k = 100) {
  std::string out = "lang\tqueries\tndcg@" + std::to_string(ndcg_k) + "\trecall@" +
                    std::to_string(recall_k) + "\n";
  std::size_t total_queries = 0;
  for (const auto& [lang, v] : r.ndcg_by_lang) {
    std::size_t n = r.queries_by_lang.at(lang);
    total_queries += n;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f\t%.4f", v, r.recall_by_lang.at(lang));
    out += lang + "\t" + std::to_string(n) + "\t" + buf + "\n";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f\t%.4f", r.macro_ndcg, r.macro_recall);
  out += "Avg\t" + std::to_string(total_queries) + "\t" + buf + "\n";
  return out;
}

// Exhaustively ranks a language collection under the projection W. Texts are
// clipped with the same truncation rule the trainer uses.
inline std::map<std::string, std::vector<RunEntry>> rank_collection(
    const corpus::Collection& coll, const std::vector<std::string>& langs,
    const Eigen::MatrixXd& W, providers::Client& client,
    const providers::ProviderConfig& embed_cfg, int top_k = 100,
    const Truncation& truncation = {}) {
  std::map<std::string, std::vector<RunEntry>> run;
  for (const std::string& lang : langs) {
    const auto& docs = coll.documents(lang);
    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (const auto& d : docs)
      texts.push_back(truncation.clip_passage(mining::Bm25Index::index_text(d)));
    auto doc_vecs = client.embed(texts, embed_cfg);
    std::vector<Eigen::VectorXd> projected(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i)
      projected[i] = W * Eigen::Map<const Eigen::VectorXd>(
                             doc_vecs[i].values.data(),
                             static_cast<Eigen::Index>(doc_vecs[i].values.size()));

    for (const corpus::Query& q : coll.queries(lang)) {
      auto qv = client.embed({truncation.clip_query(q.text)}, embed_cfg);
      Eigen::VectorXd qp = W * Eigen::Map<const Eigen::VectorXd>(
                                   qv[0].values.data(),
                                   static_cast<Eigen::Index>(qv[0].values.size()));
      double qn = qp.norm();
      std::vector<std::pair<double, std::size_t>> scored(docs.size());
      for (std::size_t i = 0; i < docs.size(); ++i) {
        double dn = projected[i].norm();
        double sim = (qn > 0 && dn > 0) ? qp.dot(projected[i]) / (qn * dn) : -1.0;
        scored[i] = {sim, i};
      }
      std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return docs[a.second].doc_id < docs[b.second].doc_id;
      });
      auto& entries = run[q.query_id];
      for (std::size_t i = 0; i < scored.size() && static_cast<int>(i) < top_k; ++i) {
        RunEntry e;
        e.query_id = q.query_id;
        e.doc_id = docs[scored[i].second].doc_id;
        e.score = scored[i].first;
        e.rank = static_cast<int>(i) + 1;
        entries.push_back(std::move(e));
      }
    }
  }
  return run;
}

}  // namespace negforge::training
