#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "negforge/common.hpp"

namespace negforge::corpus {

using json = nlohmann::ordered_json;

struct Document {
  std::string doc_id;
  std::string lang;
  std::string title;  // may be empty
  std::string text;   // non-empty
};

struct Query {
  std::string query_id;
  std::string lang;
  std::string text;
};

struct Qrel {
  std::string query_id;
  std::string doc_id;
  int grade = 0;  // 0 = not relevant
};

struct LangStats {
  std::size_t queries = 0;
  std::size_t judgments = 0;
  std::size_t passages = 0;
};

struct CollectionStats {
  std::map<std::string, LangStats> per_lang;
  std::map<std::string, std::size_t> per_topic;  // filled once topics are assigned

  std::size_t total_queries() const {
    std::size_t n = 0;
    for (auto& [_, s] : per_lang) n += s.queries;
    return n;
  }
  std::size_t total_judgments() const {
    std::size_t n = 0;
    for (auto& [_, s] : per_lang) n += s.judgments;
    return n;
  }
  std::size_t total_passages() const {
    std::size_t n = 0;
    for (auto& [_, s] : per_lang) n += s.passages;
    return n;
  }
};

struct IngestPaths {
  std::vector<std::filesystem::path> documents;  // JSONL
  std::vector<std::filesystem::path> queries;    // TSV
  std::vector<std::filesystem::path> qrels;      // TREC TSV
};

struct IngestConfig {
  std::vector<std::string> languages;  // empty = accept the languages found in the files
  int positive_threshold = 1;         // grade >= threshold counts as a positive
};

// Read-only after ingest; concurrent readers are safe.
class Collection {
 public:
  const std::vector<std::string>& languages() const { return languages_; }
  const CollectionStats& stats() const { return stats_; }
  int positive_threshold() const { return positive_threshold_; }

  const std::vector<Document>& documents(const std::string& lang) const {
    auto it = docs_by_lang_.find(lang);
    if (it == docs_by_lang_.end()) throw validation_error("unknown language: " + lang);
    return it->second;
  }

  const std::vector<Query>& queries(const std::string& lang) const {
    auto it = queries_by_lang_.find(lang);
    if (it == queries_by_lang_.end()) throw validation_error("unknown language: " + lang);
    return it->second;
  }

  bool has_doc(const std::string& lang, const std::string& doc_id) const {
    auto it = doc_index_.find(lang);
    return it != doc_index_.end() && it->second.count(doc_id) > 0;
  }

  const Document& doc(const std::string& lang, const std::string& doc_id) const {
    auto it = doc_index_.find(lang);
    if (it == doc_index_.end()) throw validation_error("unknown language: " + lang);
    auto jt = it->second.find(doc_id);
    if (jt == it->second.end())
      throw validation_error("unknown doc_id '" + doc_id + "' in language " + lang);
    return docs_by_lang_.at(lang)[jt->second];
  }

  bool has_query(const std::string& query_id) const { return query_index_.count(query_id) > 0; }

  const Query& query(const std::string& query_id) const {
    auto it = query_index_.find(query_id);
    if (it == query_index_.end()) throw validation_error("unknown query_id: " + query_id);
    return queries_by_lang_.at(it->second.first)[it->second.second];
  }

  // Qrels of one query, sorted by (grade desc, doc_id asc).
  const std::vector<Qrel>& qrels_of(const std::string& query_id) const {
    static const std::vector<Qrel> empty;
    if (!has_query(query_id)) throw validation_error("unknown query_id: " + query_id);
    auto it = qrels_by_query_.find(query_id);
    return it == qrels_by_query_.end() ? empty : it->second;
  }

  // Docs with grade >= positive_threshold, ordered by grade desc then doc_id asc.
  std::vector<std::string> positives_of(const std::string& query_id) const {
    std::vector<std::string> out;
    for (const Qrel& qr : qrels_of(query_id))
      if (qr.grade >= positive_threshold_) out.push_back(qr.doc_id);
    return out;
  }

  std::unordered_set<std::string> positive_set(const std::string& query_id) const {
    std::unordered_set<std::string> out;
    for (const Qrel& qr : qrels_of(query_id))
      if (qr.grade >= positive_threshold_) out.insert(qr.doc_id);
    return out;
  }

  // All queries across languages, language-major in language order, id-sorted within.
  std::vector<Query> all_queries() const {
    std::vector<Query> out;
    for (const std::string& lang : languages_)
      for (const Query& q : queries_by_lang_.at(lang)) out.push_back(q);
    return out;
  }

  static Collection ingest(const IngestPaths& paths, const IngestConfig& config);

  // Persisted handle: one <lang>.jsonl per language plus stats.json.
  void save(const std::filesystem::path& dir) const;
  static Collection load(const std::filesystem::path& dir);

 private:
  void finalize(const IngestConfig& config);

  std::vector<std::string> languages_;
  std::map<std::string, std::vector<Document>> docs_by_lang_;
  std::map<std::string, std::vector<Query>> queries_by_lang_;
  std::map<std::string, std::vector<Qrel>> qrels_by_query_;
  std::map<std::string, std::unordered_map<std::string, std::size_t>> doc_index_;
  std::unordered_map<std::string, std::pair<std::string, std::size_t>> query_index_;
  CollectionStats stats_;
  int positive_threshold_ = 1;
};

namespace detail {

inline void check_lang_allowed(const std::string& lang, const std::vector<std::string>& allowed,
                               const std::string& where) {
  if (allowed.empty()) return;
  if (std::find(allowed.begin(), allowed.end(), lang) == allowed.end())
    throw validation_error(where + ": unknown language code '" + lang + "'");
}

}  // namespace detail

inline Collection Collection::ingest(const IngestPaths& paths, const IngestConfig& config) {
  Collection c;
  c.positive_threshold_ = config.positive_threshold;

  for (const auto& path : paths.documents) {
    auto lines = io::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (str::trim(lines[i]).empty()) continue;
      json j = json::parse(lines[i], nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("doc_id") || !j.contains("lang") ||
          !j.contains("text"))
        throw validation_error(path.string() + ":" + std::to_string(i + 1) +
                               ": malformed document line");
      Document d;
      d.doc_id = j.at("doc_id").get<std::string>();
      d.lang = j.at("lang").get<std::string>();
      d.title = j.value("title", std::string{});
      d.text = j.at("text").get<std::string>();
      if (d.text.empty())
        throw validation_error(path.string() + ":" + std::to_string(i + 1) + ": empty text for doc '" +
                               d.doc_id + "'");
      detail::check_lang_allowed(d.lang, config.languages,
                                 path.string() + ":" + std::to_string(i + 1));
      auto& index = c.doc_index_[d.lang];
      if (index.count(d.doc_id))
        throw validation_error(path.string() + ":" + std::to_string(i + 1) + ": duplicate doc_id '" +
                               d.doc_id + "' in language " + d.lang);
      index.emplace(d.doc_id, c.docs_by_lang_[d.lang].size());
      c.docs_by_lang_[d.lang].push_back(std::move(d));
    }
  }

  for (const auto& path : paths.queries) {
    auto lines = io::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (str::trim(lines[i]).empty()) continue;
      auto cols = str::split(lines[i], '\t');
      if (cols.size() != 3)
        throw validation_error(path.string() + ":" + std::to_string(i + 1) +
                               ": malformed query line (expected 3 tab-separated fields)");
      Query q{cols[0], cols[1], cols[2]};
      if (q.query_id.empty() || q.text.empty())
        throw validation_error(path.string() + ":" + std::to_string(i + 1) + ": empty query field");
      detail::check_lang_allowed(q.lang, config.languages,
                                 path.string() + ":" + std::to_string(i + 1));
      if (c.query_index_.count(q.query_id))
        throw validation_error(path.string() + ":" + std::to_string(i + 1) +
                               ": duplicate query_id '" + q.query_id + "'");
      c.query_index_.emplace(q.query_id,
                             std::make_pair(q.lang, c.queries_by_lang_[q.lang].size()));
      c.queries_by_lang_[q.lang].push_back(std::move(q));
    }
  }

  std::set<std::pair<std::string, std::string>> seen_qrels;
  for (const auto& path : paths.qrels) {
    auto lines = io::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (str::trim(lines[i]).empty()) continue;
      auto cols = str::split(lines[i], '\t');
      if (cols.size() == 1) cols = str::split(lines[i], ' ');  // TREC qrels also come space-separated
      if (cols.size() != 4)
        throw validation_error(path.string() + ":" + std::to_string(i + 1) +
                               ": malformed qrel line (expected 4 fields)");
      Qrel qr;
      qr.query_id = cols[0];
      qr.doc_id = cols[2];
      try {
        qr.grade = std::stoi(cols[3]);
      } catch (const std::exception&) {
        throw validation_error(path.string() + ":" + std::to_string(i + 1) + ": non-integer grade");
      }
      if (qr.grade < 0)
        throw validation_error(path.string() + ":" + std::to_string(i + 1) + ": negative grade");
      if (!seen_qrels.emplace(qr.query_id, qr.doc_id).second)
        throw validation_error(path.string() + ":" + std::to_string(i + 1) + ": duplicate qrel (" +
                               qr.query_id + ", " + qr.doc_id + ")");
      c.qrels_by_query_[qr.query_id].push_back(std::move(qr));
    }
  }

  c.finalize(config);
  return c;
}

inline void Collection::finalize(const IngestConfig& config) {
  // Link-check qrels and freeze the per-query ordering.
  for (auto& [query_id, qrels] : qrels_by_query_) {
    auto qit = query_index_.find(query_id);
    if (qit == query_index_.end())
      throw validation_error("qrel references missing query_id '" + query_id + "'");
    const std::string& lang = qit->second.first;
    for (const Qrel& qr : qrels) {
      auto dit = doc_index_.find(lang);
      if (dit == doc_index_.end() || !dit->second.count(qr.doc_id))
        throw validation_error("qrel references missing doc_id '" + qr.doc_id + "' (query " +
                               query_id + ", language " + lang + ")");
    }
    std::sort(qrels.begin(), qrels.end(), [](const Qrel& a, const Qrel& b) {
      if (a.grade != b.grade) return a.grade > b.grade;
      return a.doc_id < b.doc_id;
    });
  }

  std::set<std::string> langs;
  for (auto& [lang, _] : docs_by_lang_) langs.insert(lang);
  for (auto& [lang, _] : queries_by_lang_) langs.insert(lang);
  if (!config.languages.empty())
    langs.insert(config.languages.begin(), config.languages.end());
  languages_.assign(langs.begin(), langs.end());

  // Weight formulas divide by per-language query frequency, so a language
  // without training queries cannot participate.
  for (const std::string& lang : languages_)
    if (!queries_by_lang_.count(lang) || queries_by_lang_.at(lang).empty())
      throw validation_error("language '" + lang + "' has zero queries");

  for (const std::string& lang : languages_) {
    LangStats s;
    s.queries = queries_by_lang_.count(lang) ? queries_by_lang_.at(lang).size() : 0;
    s.passages = docs_by_lang_.count(lang) ? docs_by_lang_.at(lang).size() : 0;
    stats_.per_lang[lang] = s;
  }
  for (auto& [query_id, qrels] : qrels_by_query_) {
    const std::string& lang = query_index_.at(query_id).first;
    stats_.per_lang[lang].judgments += qrels.size();
  }

  // Canonical in-memory order: sorted by id. Makes save() deterministic and
  // re-ingest byte-identical.
  for (auto& [lang, docs] : docs_by_lang_) {
    std::sort(docs.begin(), docs.end(),
              [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
    auto& index = doc_index_[lang];
    for (std::size_t i = 0; i < docs.size(); ++i) index[docs[i].doc_id] = i;
  }
  for (auto& [lang, queries] : queries_by_lang_) {
    std::sort(queries.begin(), queries.end(),
              [](const Query& a, const Query& b) { return a.query_id < b.query_id; });
    for (std::size_t i = 0; i < queries.size(); ++i)
      query_index_[queries[i].query_id] = {lang, i};
  }
}

inline void Collection::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["positive_threshold"] = positive_threshold_;
  manifest["languages"] = languages_;
  json per_lang = json::object();
  for (const std::string& lang : languages_) {
    const LangStats& s = stats_.per_lang.at(lang);
    per_lang[lang] = {{"queries", s.queries}, {"judgments", s.judgments}, {"passages", s.passages}};
  }
  manifest["stats"] = per_lang;

  for (const std::string& lang : languages_) {
    std::string out;
    if (docs_by_lang_.count(lang)) {
      for (const Document& d : docs_by_lang_.at(lang)) {
        json j{{"kind", "doc"}, {"doc_id", d.doc_id}, {"title", d.title}, {"text", d.text}};
        out += j.dump();
        out += '\n';
      }
    }
    if (queries_by_lang_.count(lang)) {
      for (const Query& q : queries_by_lang_.at(lang)) {
        json j{{"kind", "query"}, {"query_id", q.query_id}, {"text", q.text}};
        out += j.dump();
        out += '\n';
        auto it = qrels_by_query_.find(q.query_id);
        if (it != qrels_by_query_.end()) {
          std::vector<Qrel> sorted = it->second;
          std::sort(sorted.begin(), sorted.end(),
                    [](const Qrel& a, const Qrel& b) { return a.doc_id < b.doc_id; });
          for (const Qrel& qr : sorted) {
            json jq{{"kind", "qrel"},
                    {"query_id", qr.query_id},
                    {"doc_id", qr.doc_id},
                    {"grade", qr.grade}};
            out += jq.dump();
            out += '\n';
          }
        }
      }
    }
    io::write_file(dir / (lang + ".jsonl"), out);
  }
  io::write_file(dir / "stats.json", manifest.dump(2) + "\n");
}

inline Collection Collection::load(const std::filesystem::path& dir) {
  json manifest = json::parse(io::read_file(dir / "stats.json"));
  Collection c;
  c.positive_threshold_ = manifest.at("positive_threshold").get<int>();
  std::vector<std::string> langs = manifest.at("languages").get<std::vector<std::string>>();

  std::set<std::pair<std::string, std::string>> seen;
  for (const std::string& lang : langs) {
    auto lines = io::read_lines(dir / (lang + ".jsonl"));
    for (const std::string& line : lines) {
      if (str::trim(line).empty()) continue;
      json j = json::parse(line);
      std::string kind = j.at("kind").get<std::string>();
      if (kind == "doc") {
        Document d{j.at("doc_id"), lang, j.value("title", std::string{}), j.at("text")};
        c.doc_index_[lang].emplace(d.doc_id, c.docs_by_lang_[lang].size());
        c.docs_by_lang_[lang].push_back(std::move(d));
      } else if (kind == "query") {
        Query q{j.at("query_id"), lang, j.at("text")};
        c.query_index_.emplace(q.query_id, std::make_pair(lang, c.queries_by_lang_[lang].size()));
        c.queries_by_lang_[lang].push_back(std::move(q));
      } else if (kind == "qrel") {
        Qrel qr{j.at("query_id"), j.at("doc_id"), j.at("grade").get<int>()};
        c.qrels_by_query_[qr.query_id].push_back(std::move(qr));
      } else {
        throw validation_error(dir.string() + "/" + lang + ".jsonl: unknown record kind '" + kind +
                               "'");
      }
    }
  }
  IngestConfig cfg;
  cfg.languages = langs;
  cfg.positive_threshold = c.positive_threshold_;
  c.finalize(cfg);
  return c;
}

}  // namespace negforge::corpus
