#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "negforge/common.hpp"
#include "negforge/corpus.hpp"
#include "negforge/genfill.hpp"
#include "negforge/text.hpp"

namespace negforge::batcher {

using json = nlohmann::ordered_json;

// The twelve merged topic labels, in table order.
inline const std::array<std::string, 12>& topic_codes() {
  static const std::array<std::string, 12> codes = {"BL", "SM", "LH", "JE", "CI", "SP",
                                                    "BF", "PG", "TT", "AE", "GE", "OT"};
  return codes;
}

// Three-column merge table: coarse classifier label, fine classifier label,
// merged topic (code in trailing parentheses). Row-wise it induces one
// label->topic map per classifier; blank cells induce nothing.
class MergeTable {
 public:
  static MergeTable from_tsv(const std::string& tsv) {
    MergeTable t;
    for (const std::string& line : str::split(tsv, '\n')) {
      if (str::trim(line).empty() || line.rfind("yahoo", 0) == 0) continue;
      auto cols = str::split(line, '\t');
      if (cols.size() != 3)
        throw validation_error("merge table rows need 3 tab-separated columns: " + line);
      std::string yahoo(str::trim(cols[0]));
      std::string dbpedia(str::trim(cols[1]));
      std::string topic = parse_topic_code(std::string(str::trim(cols[2])));
      if (!topic.empty()) {
        if (!yahoo.empty()) t.yahoo_to_topic_[yahoo] = topic;
        if (!dbpedia.empty()) t.dbpedia_to_topic_[dbpedia] = topic;
      }
      t.rows_.push_back({yahoo, dbpedia, topic});
    }
    if (t.yahoo_to_topic_.empty() && t.dbpedia_to_topic_.empty())
      throw validation_error("merge table maps no labels");
    return t;
  }

  static MergeTable from_file(const std::filesystem::path& path) {
    return from_tsv(io::read_file(path));
  }

  static MergeTable builtin() { return from_tsv(builtin_tsv()); }

  // Coarse label wins when both classifiers map; unknown labels fall to OT.
  std::string topic_for(const std::string& dbpedia_label, const std::string& yahoo_label) const {
    auto yit = yahoo_to_topic_.find(yahoo_label);
    if (yit != yahoo_to_topic_.end()) return yit->second;
    auto dit = dbpedia_to_topic_.find(dbpedia_label);
    if (dit != dbpedia_to_topic_.end()) return dit->second;
    return "OT";
  }

  struct Row {
    std::string yahoo, dbpedia, topic;
  };
  const std::vector<Row>& rows() const { return rows_; }

  static const char* builtin_tsv() {
    return
        "Society & Culture\tCompany\tBooks & Literature (BL)\n"
        "Science & Mathematics\tEducational Institution\tScience & Mathematics (SM)\n"
        "Health\tArtist\tLife & Health (LH)\n"
        "Education & Reference\tAthlete\tJobs & Education (JE)\n"
        "Computers & Internet\tOffice Holder\tComputers & Internet (CI)\n"
        "Sports\tMean Of Transportation\tSports (SP)\n"
        "Business & Finance\tBuilding\tBusiness & Finance (BF)\n"
        "Entertainment & Music\tNatural Place\tPolitics & Government (PG)\n"
        "Family & Relationships\tVillage\tTraffic & Transportation (TT)\n"
        "Politics & Government\tAnimal\tArts & Entertainment (AE)\n"
        "\tPlant\tGeography (GE)\n"
        "\tAlbum\tOthers (OT)\n"
        "\tFilm\t\n"
        "\tWritten Work\t\n";
  }

 private:
  static std::string parse_topic_code(const std::string& cell) {
    if (cell.empty()) return {};
    auto open = cell.rfind('(');
    auto close = cell.rfind(')');
    if (open != std::string::npos && close != std::string::npos && close > open)
      return cell.substr(open + 1, close - open - 1);
    // Accept a bare code as well.
    for (const std::string& code : topic_codes())
      if (cell == code) return code;
    throw validation_error("merge table topic cell has no (CODE): " + cell);
  }

  std::unordered_map<std::string, std::string> yahoo_to_topic_;
  std::unordered_map<std::string, std::string> dbpedia_to_topic_;
  std::vector<Row> rows_;
};

// Both upstream classifiers are consumed as one provider returning the raw
// label pair (fine-grained, coarse-grained).
struct TextClassifier {
  virtual ~TextClassifier() = default;
  virtual std::pair<std::string, std::string> classify(const std::string& text) const = 0;
};

// Bundled offline classifier: the first known marker token found in the text
// decides the raw label pair. Unknown text yields empty labels (merged to OT).
class KeywordClassifier : public TextClassifier {
 public:
  KeywordClassifier() {
    auto add = [this](std::initializer_list<const char*> words, const char* dbpedia,
                      const char* yahoo) {
      for (const char* w : words) table_[w] = {dbpedia, yahoo};
    };
    add({"novel", "poem", "author"}, "Written Work", "Society & Culture");
    add({"theorem", "physics", "algebra"}, "Educational Institution", "Science & Mathematics");
    add({"clinic", "disease", "therapy"}, "Artist", "Health");
    add({"diploma", "salary", "campus"}, "Athlete", "Education & Reference");
    add({"software", "network", "browser"}, "Office Holder", "Computers & Internet");
    add({"football", "tournament", "athlete"}, "Mean Of Transportation", "Sports");
    add({"bank", "invoice", "stock"}, "Building", "Business & Finance");
    add({"concert", "cinema", "melody"}, "Natural Place", "Entertainment & Music");
    add({"family", "wedding", "cousin"}, "Village", "Family & Relationships");
    add({"senate", "election", "minister"}, "Animal", "Politics & Government");
    add({"mountain", "river", "island"}, "Plant", "");
    add({"miscellany", "assorted"}, "Album", "");
  }

  std::pair<std::string, std::string> classify(const std::string& text) const override {
    for (const std::string& tok : text::tokenize(text)) {
      auto it = table_.find(tok);
      if (it != table_.end()) return it->second;
    }
    return {"", ""};
  }

 private:
  std::unordered_map<std::string, std::pair<std::string, std::string>> table_;
};

struct TopicAssignment {
  std::string query_id;
  std::string topic;
  std::string raw_dbpedia;
  std::string raw_yahoo;
};

// One topic per query, derived from its highest-grade positive document.
inline std::vector<TopicAssignment> assign_topics(const corpus::Collection& coll,
                                                  const TextClassifier& classifier,
                                                  const MergeTable& table) {
  std::vector<TopicAssignment> out;
  for (const corpus::Query& q : coll.all_queries()) {
    auto positives = coll.positives_of(q.query_id);
    if (positives.empty())
      throw validation_error("assign_topics: query without positive: " + q.query_id);
    const corpus::Document& d = coll.doc(q.lang, positives.front());
    auto [dbpedia_label, yahoo_label] = classifier.classify(d.title.empty() ? d.text : d.title + "\n" + d.text);
    TopicAssignment a;
    a.query_id = q.query_id;
    a.raw_dbpedia = dbpedia_label;
    a.raw_yahoo = yahoo_label;
    a.topic = table.topic_for(dbpedia_label, yahoo_label);
    out.push_back(std::move(a));
  }
  return out;
}

// language x topic counts, rendered in the 12-topic table shape.
struct TopicHistogram {
  std::map<std::string, std::map<std::string, std::size_t>> counts;  // lang -> topic -> n

  void add(const std::string& lang, const std::string& topic) { counts[lang][topic]++; }

  std::string to_tsv() const {
    std::string out = "lang";
    for (const std::string& t : topic_codes()) out += "\t" + t;
    out += "\tTotal\n";
    std::map<std::string, std::size_t> totals;
    for (const auto& [lang, row] : counts) {
      out += lang;
      std::size_t total = 0;
      for (const std::string& t : topic_codes()) {
        std::size_t n = row.count(t) ? row.at(t) : 0;
        out += "\t" + std::to_string(n);
        total += n;
        totals[t] += n;
      }
      out += "\t" + std::to_string(total) + "\n";
    }
    out += "Total";
    std::size_t grand = 0;
    for (const std::string& t : topic_codes()) {
      out += "\t" + std::to_string(totals.count(t) ? totals.at(t) : 0);
      grand += totals.count(t) ? totals.at(t) : 0;
    }
    out += "\t" + std::to_string(grand) + "\n";
    return out;
  }
};

// Normalized inverse-frequency weights. With budgets (alpha_hat, beta_hat):
//   alpha_l = alpha_hat * (1 / p_l) / L      beta_c = beta_hat * (1 / p_c) / C
// so that sum_l p_l * alpha_l == alpha_hat and sum_c p_c * beta_c == beta_hat,
// and the uniform case degenerates to alpha_l == alpha_hat, beta_c == beta_hat.
struct WeightTable {
  double alpha_hat = 0.45;
  double beta_hat = 0.4;
  std::map<std::string, double> p_lang, p_topic;
  std::map<std::string, double> alpha, beta;

  double omega(const std::string& lang, const std::string& topic) const {
    auto a = alpha.find(lang);
    if (a == alpha.end()) throw validation_error("weight table has no language " + lang);
    auto b = beta.find(topic);
    if (b == beta.end()) throw validation_error("weight table has no topic " + topic);
    return a->second + b->second;
  }
};

inline WeightTable compute_weights(const std::map<std::string, std::size_t>& lang_counts,
                                   const std::map<std::string, std::size_t>& topic_counts,
                                   double alpha_hat = 0.45, double beta_hat = 0.4) {
  WeightTable t;
  t.alpha_hat = alpha_hat;
  t.beta_hat = beta_hat;

  auto fill = [](const std::map<std::string, std::size_t>& counts, double budget,
                 std::map<std::string, double>& p_out, std::map<std::string, double>& w_out) {
    double total = 0;
    for (const auto& [_, n] : counts) total += static_cast<double>(n);
    std::size_t nonzero = 0;
    for (const auto& [_, n] : counts)
      if (n > 0) ++nonzero;
    if (nonzero == 0) throw validation_error("compute_weights: empty category set");
    for (const auto& [key, n] : counts) {
      if (n == 0) continue;
      double nd = static_cast<double>(n);
      p_out[key] = nd / total;
      // total / (n * C) rather than (1/p)/C: the uniform case divides a number
      // by itself and collapses onto the budget exactly.
      w_out[key] = budget * (total / (nd * static_cast<double>(nonzero)));
    }
  };
  fill(lang_counts, alpha_hat, t.p_lang, t.alpha);
  fill(topic_counts, beta_hat, t.p_topic, t.beta);
  return t;
}

struct BatchItem {
  std::string query_id;
  std::string lang;
  std::string topic;
  std::string positive_doc_id;
  std::vector<std::string> negative_doc_ids;
  double omega = 0.0;  // alpha_lang + beta_topic, shared by the item's negatives
  bool short_negatives = false;
};

struct MiniBatch {
  std::string lang;
  int batch_idx = 0;
  std::vector<BatchItem> items;
};

struct SampledNegatives {
  std::vector<std::string> doc_ids;
  bool short_fallback = false;  // pool had fewer than m entries
};

// m distinct negatives drawn uniformly without replacement. A short flagged
// pool falls back to everything it has.
inline SampledNegatives sample_negatives(const genfill::FinalPool& pool, int m,
                                         std::uint64_t seed) {
  if (m < 1) throw validation_error("sample_negatives: m must be >= 1");
  std::vector<std::string> ids;
  ids.reserve(pool.negatives.size());
  for (const auto& g : pool.negatives) ids.push_back(g.doc_id);
  rng::Pcg gen(seed);
  gen.shuffle(ids);
  SampledNegatives out;
  if (static_cast<int>(ids.size()) < m) {
    out.doc_ids = std::move(ids);
    out.short_fallback = true;
  } else {
    out.doc_ids.assign(ids.begin(), ids.begin() + m);
  }
  return out;
}

enum class LangChoice { proportional, uniform };

// Monolingual, multi-topic epoch scheduler.
//
// Batches are drawn until every item is scheduled exactly once. The batch
// language is chosen with probability proportional to its remaining item
// count (or uniformly over languages with supply, when configured). Within a
// batch, slots cycle over a shuffled rotation of the topics that had
// remaining supply when the batch started; per-topic draws are capped at
// ceil(B / T_avail), and a batch closes early when every remaining topic is
// exhausted or capped, so the final batch of a language may be short.
inline std::vector<MiniBatch> schedule_epoch(const std::vector<BatchItem>& items, int batch_size,
                                             std::uint64_t seed,
                                             LangChoice lang_choice = LangChoice::proportional) {
  if (batch_size < 1) throw validation_error("schedule_epoch: batch size must be >= 1");
  rng::Pcg gen(seed);

  // lang -> topic -> indices into items, in input order for determinism.
  std::map<std::string, std::map<std::string, std::vector<std::size_t>>> remaining;
  std::map<std::string, std::size_t> lang_remaining;
  for (std::size_t i = 0; i < items.size(); ++i) {
    remaining[items[i].lang][items[i].topic].push_back(i);
    lang_remaining[items[i].lang]++;
  }

  std::vector<MiniBatch> epoch;
  std::size_t total = items.size();
  while (total > 0) {
    std::vector<std::string> langs;
    std::vector<double> weights;
    for (const auto& [lang, n] : lang_remaining) {
      if (n == 0) continue;
      langs.push_back(lang);
      weights.push_back(lang_choice == LangChoice::proportional ? static_cast<double>(n) : 1.0);
    }
    const std::string lang = langs[gen.weighted_index(weights)];
    auto& topics = remaining[lang];

    std::vector<std::string> rotation;
    for (const auto& [topic, idxs] : topics)
      if (!idxs.empty()) rotation.push_back(topic);
    gen.shuffle(rotation);
    const int cap = static_cast<int>(
        std::ceil(static_cast<double>(batch_size) / static_cast<double>(rotation.size())));

    MiniBatch batch;
    batch.lang = lang;
    batch.batch_idx = static_cast<int>(epoch.size());
    std::map<std::string, int> taken_per_topic;
    std::size_t rot_pos = 0;
    while (static_cast<int>(batch.items.size()) < batch_size) {
      bool found = false;
      for (std::size_t scanned = 0; scanned < rotation.size(); ++scanned) {
        const std::string& topic = rotation[rot_pos % rotation.size()];
        ++rot_pos;
        if (topics[topic].empty() || taken_per_topic[topic] >= cap) continue;
        auto& pool = topics[topic];
        std::size_t j = static_cast<std::size_t>(gen.bounded(pool.size()));
        std::size_t item_idx = pool[j];
        pool[j] = pool.back();
        pool.pop_back();
        batch.items.push_back(items[item_idx]);
        taken_per_topic[topic]++;
        lang_remaining[lang]--;
        --total;
        found = true;
        break;
      }
      if (!found) break;  // language exhausted or all topics at cap
    }
    epoch.push_back(std::move(batch));
  }
  return epoch;
}

// One JSONL line per batch item; batch boundaries are encoded by batch_idx.
inline std::string export_training_file(const std::vector<MiniBatch>& batches,
                                        const corpus::Collection& coll) {
  std::string out;
  for (const MiniBatch& b : batches) {
    for (const BatchItem& item : b.items) {
      const corpus::Query& q = coll.query(item.query_id);
      json j;
      j["query_id"] = item.query_id;
      j["query"] = q.text;
      j["positive"] = mining::Bm25Index::index_text(coll.doc(item.lang, item.positive_doc_id));
      auto negs = json::array();
      auto weights = json::array();
      for (const std::string& doc_id : item.negative_doc_ids) {
        negs.push_back(mining::Bm25Index::index_text(coll.doc(item.lang, doc_id)));
        weights.push_back(item.omega);
      }
      j["negatives"] = std::move(negs);
      j["weights"] = std::move(weights);
      j["lang"] = item.lang;
      j["topic"] = item.topic;
      j["batch_idx"] = b.batch_idx;
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

}  // namespace negforge::batcher
