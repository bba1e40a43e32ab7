#pragma once

// Deterministic synthetic corpus for offline runs and tests: three languages
// with skewed query counts, twelve topics, planted paraphrases of positives
// (false negatives for the judge to catch), and per-language boilerplate
// vocabulary that the structured stub embedding maps into its own subspace.

#include <map>
#include <string>
#include <vector>

#include "negforge/batcher.hpp"
#include "negforge/common.hpp"
#include "negforge/corpus.hpp"

namespace negforge::synth {

struct LangSpec {
  std::string code;
  int queries = 0;
  int base_docs_per_topic = 0;
  int paraphrases_per_marked_query = 0;  // queries with index % 3 == 0 get them
  std::vector<std::string> syllables;
  std::vector<std::string> filler;  // 'x'-prefixed boilerplate tokens
};

struct SynthConfig {
  std::uint64_t seed = 17;
  int total_docs = 200;           // padded with extra OT docs to hit exactly
  int content_pool_size = 14;     // per (lang, topic) vocabulary
  int content_words_per_doc = 9;
  int filler_tokens_per_doc = 5;
  std::vector<LangSpec> langs;

  static SynthConfig defaults() {
    SynthConfig c;
    c.langs = {
        {"en", 24, 6, 3,
         {"ban", "der", "fol", "gan", "hel", "ion", "kel", "mon", "nor", "pel", "ral", "sun",
          "tor", "ved", "wil"},
         {"xenor", "xgale", "xmire", "xpond", "xrill", "xvane"}},
        {"fi", 12, 4, 2,
         {"aino", "elo", "ilma", "kor", "lun", "mik", "nen", "oki", "pal", "rau", "sil", "tun"},
         {"xkivi", "xlumi", "xmeri", "xsuo", "xtuli", "xyo"}},
        {"sw", 6, 3, 1,
         {"amba", "chu", "dza", "imbo", "kan", "lum", "mwe", "ngo", "pemba", "saf", "tam", "wez"},
         {"xduni", "xkaya", "xmoto", "xnyota", "xpori", "xtope"}},
    };
    return c;
  }
};

// Marker token per topic, aligned with the bundled keyword classifier.
inline const std::map<std::string, std::string>& topic_markers() {
  static const std::map<std::string, std::string> m = {
      {"BL", "novel"},    {"SM", "theorem"},  {"LH", "clinic"},    {"JE", "diploma"},
      {"CI", "software"}, {"SP", "football"}, {"BF", "bank"},      {"PG", "concert"},
      {"TT", "family"},   {"AE", "senate"},   {"GE", "mountain"},  {"OT", "miscellany"}};
  return m;
}

struct SynthCorpus {
  std::vector<corpus::Document> documents;
  std::vector<corpus::Query> queries;
  std::vector<corpus::Qrel> qrels;
  // query_id -> ids of planted paraphrases of that query's positive
  std::map<std::string, std::vector<std::string>> paraphrases_of;
  std::map<std::string, std::string> topic_of_query;
};

namespace detail {

inline std::string make_word(const LangSpec& lang, rng::Pcg& gen) {
  int n = 2 + static_cast<int>(gen.bounded(2));
  std::string w;
  for (int i = 0; i < n; ++i) w += lang.syllables[gen.bounded(lang.syllables.size())];
  return w;
}

}  // namespace detail

inline SynthCorpus generate(const SynthConfig& cfg = SynthConfig::defaults()) {
  rng::Pcg gen(cfg.seed);
  SynthCorpus out;
  const auto& topics = batcher::topic_codes();

  for (const LangSpec& lang : cfg.langs) {
    // Per-topic content vocabulary.
    std::map<std::string, std::vector<std::string>> vocab;
    for (const std::string& t : topics) {
      std::set<std::string> words;
      while (static_cast<int>(words.size()) < cfg.content_pool_size)
        words.insert(detail::make_word(lang, gen));
      vocab[t].assign(words.begin(), words.end());
    }

    auto compose_doc_text = [&](const std::string& topic,
                                std::vector<std::string>& picked_words) -> std::string {
      const auto& pool = vocab.at(topic);
      std::vector<std::string> idx(pool.begin(), pool.end());
      gen.shuffle(idx);
      picked_words.assign(idx.begin(), idx.begin() + cfg.content_words_per_doc);
      std::string text = topic_markers().at(topic);
      for (const std::string& w : picked_words) text += " " + w;
      for (int f = 0; f < cfg.filler_tokens_per_doc; ++f)
        text += " " + lang.filler[gen.bounded(lang.filler.size())];
      return text;
    };

    // Base documents per topic.
    std::map<std::string, std::vector<std::pair<std::string, std::vector<std::string>>>> by_topic;
    int doc_seq = 0;
    for (const std::string& t : topics) {
      for (int i = 0; i < lang.base_docs_per_topic; ++i) {
        corpus::Document d;
        d.doc_id = lang.code + "-d" + std::to_string(doc_seq++);
        d.lang = lang.code;
        std::vector<std::string> words;
        d.text = compose_doc_text(t, words);
        d.title = topic_markers().at(t) + " " + words.front();
        by_topic[t].emplace_back(d.doc_id, words);
        out.documents.push_back(std::move(d));
      }
    }

    // Queries round-robin over topics; positive = one of the topic's docs.
    for (int qi = 0; qi < lang.queries; ++qi) {
      const std::string& topic = topics[qi % topics.size()];
      const auto& cluster = by_topic.at(topic);
      const auto& [pos_id, pos_words] = cluster[gen.bounded(cluster.size())];

      corpus::Query q;
      q.query_id = lang.code + "-q" + std::to_string(qi);
      q.lang = lang.code;
      q.text = topic_markers().at(topic);
      for (int w = 0; w < 3; ++w) q.text += " " + pos_words[gen.bounded(pos_words.size())];
      out.topic_of_query[q.query_id] = topic;
      out.qrels.push_back({q.query_id, pos_id, 1});

      // An extra judged-irrelevant qrel now and then (grade 0).
      if (qi % 5 == 4) {
        const auto& other = cluster[(gen.bounded(cluster.size()))];
        if (other.first != pos_id) out.qrels.push_back({q.query_id, other.first, 0});
      }

      // Planted paraphrases: same content words reshuffled, no judgment.
      if (qi % 3 == 0) {
        const corpus::Document& pos_doc = [&]() -> const corpus::Document& {
          for (const corpus::Document& d : out.documents)
            if (d.doc_id == pos_id) return d;
          throw error("synth: positive not found");
        }();
        for (int p = 0; p < lang.paraphrases_per_marked_query; ++p) {
          corpus::Document para;
          para.doc_id = q.query_id + "-para" + std::to_string(p);
          para.lang = lang.code;
          para.title = pos_doc.title;
          std::vector<std::string> shuffled = pos_words;
          gen.shuffle(shuffled);
          para.text = topic_markers().at(topic);
          for (const std::string& w : shuffled) para.text += " " + w;
          for (int f = 0; f < cfg.filler_tokens_per_doc; ++f)
            para.text += " " + lang.filler[gen.bounded(lang.filler.size())];
          out.paraphrases_of[q.query_id].push_back(para.doc_id);
          out.documents.push_back(std::move(para));
        }
      }
      out.queries.push_back(std::move(q));
    }
  }

  // Pad with extra OT documents in the first language to reach total_docs.
  int pad_seq = 0;
  while (static_cast<int>(out.documents.size()) < cfg.total_docs) {
    const LangSpec& lang = cfg.langs.front();
    corpus::Document d;
    d.doc_id = lang.code + "-pad" + std::to_string(pad_seq++);
    d.lang = lang.code;
    d.title = "miscellany";
    d.text = "miscellany";
    for (int w = 0; w < cfg.content_words_per_doc; ++w)
      d.text += " " + detail::make_word(lang, gen);
    for (int f = 0; f < cfg.filler_tokens_per_doc; ++f)
      d.text += " " + lang.filler[gen.bounded(lang.filler.size())];
    out.documents.push_back(std::move(d));
  }
  if (static_cast<int>(out.documents.size()) > cfg.total_docs)
    throw validation_error("synth: base corpus exceeds total_docs budget");
  return out;
}

// Writes docs.jsonl / queries.tsv / qrels.tsv in the ingest formats.
inline void write_corpus_files(const SynthCorpus& c, const std::filesystem::path& dir) {
  std::string docs;
  for (const corpus::Document& d : c.documents) {
    nlohmann::ordered_json j{
        {"doc_id", d.doc_id}, {"lang", d.lang}, {"title", d.title}, {"text", d.text}};
    docs += j.dump();
    docs += '\n';
  }
  io::write_file(dir / "docs.jsonl", docs);

  std::string queries;
  for (const corpus::Query& q : c.queries)
    queries += q.query_id + "\t" + q.lang + "\t" + q.text + "\n";
  io::write_file(dir / "queries.tsv", queries);

  std::string qrels;
  for (const corpus::Qrel& qr : c.qrels)
    qrels += qr.query_id + "\t0\t" + qr.doc_id + "\t" + std::to_string(qr.grade) + "\n";
  io::write_file(dir / "qrels.tsv", qrels);
}

}  // namespace negforge::synth
