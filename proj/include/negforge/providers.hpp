#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

// httplib drags in resolv.h, whose _res macro breaks Eigen parameter lists.
#ifdef _res
#undef _res
#endif

#include "negforge/common.hpp"
#include "negforge/digest.hpp"
#include "negforge/parallel.hpp"
#include "negforge/stubs.hpp"

namespace negforge::providers {

using json = nlohmann::json;

struct EmbeddingVector {
  std::vector<double> values;
  int dim = 0;
  bool normalized = false;
};

inline double l2_norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct ProviderConfig {
  std::string endpoint;  // "http://host:port[/prefix]" or "builtin:"
  std::string model;
  double timeout_s = 30.0;
  int max_in_flight = 4;
  int retries = 2;
  double temperature = 0.7;  // generation only; judge calls pass 0
  int max_tokens = 512;
  int max_prompt_chars = 100000;
  std::string bearer_token;

  void validate() const {
    if (endpoint.empty()) throw validation_error("provider endpoint is empty");
    if (retries < 0) throw validation_error("provider retries must be >= 0");
    if (max_in_flight < 1) throw validation_error("provider max_in_flight must be >= 1");
  }
  bool is_builtin() const { return endpoint.rfind("builtin:", 0) == 0; }
};

// Recursively sorts object keys so that key order never affects the digest.
inline json canonicalize(const json& j) {
  if (j.is_object()) {
    json out = json::object();  // nlohmann objects iterate in sorted key order
    for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = canonicalize(it.value());
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& v : j) out.push_back(canonicalize(v));
    return out;
  }
  return j;
}

inline std::string request_digest(const std::string& role, const std::string& model,
                                  const json& body) {
  return digest::sha256_hex(role + "\n" + model + "\n" + canonicalize(body).dump());
}

// Append-only JSONL response cache keyed by request digest. A single writer
// serializes appends; reads hit the in-memory index.
class Cache {
 public:
  Cache() = default;
  explicit Cache(std::filesystem::path path, bool replay_only = false)
      : path_(std::move(path)), replay_only_(replay_only) {
    if (std::filesystem::exists(path_)) {
      for (const std::string& line : io::read_lines(path_)) {
        if (str::trim(line).empty()) continue;
        json j = json::parse(line);
        entries_[j.at("digest").get<std::string>()] = j.at("response");
      }
    }
  }

  bool replay_only() const { return replay_only_; }
  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return entries_.size();
  }

  std::optional<json> get(const std::string& digest_hex) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = entries_.find(digest_hex);
    if (it == entries_.end()) return std::nullopt;
    return std::optional<json>{std::in_place, it->second};
  }

  void put(const std::string& digest_hex, const std::string& role, const json& response) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (replay_only_) return;
    if (entries_.count(digest_hex)) return;
    entries_[digest_hex] = response;
    if (!path_.empty()) {
      auto ts = std::chrono::duration_cast<std::chrono::seconds>(
                    std::chrono::system_clock::now().time_since_epoch())
                    .count();
      json line{{"digest", digest_hex}, {"role", role}, {"response", response}, {"ts", ts}};
      std::ofstream out(path_, std::ios::app | std::ios::binary);
      out << line.dump() << '\n';
    }
  }

 private:
  std::filesystem::path path_;
  bool replay_only_ = false;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, json> entries_;
};

namespace detail {

struct ParsedEndpoint {
  std::string base;    // scheme://host:port
  std::string prefix;  // optional path prefix
};

inline ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos)
    throw validation_error("endpoint must look like http://host:port - got '" + endpoint + "'");
  auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {endpoint, ""};
  std::string prefix = endpoint.substr(path_start);
  if (prefix == "/") prefix.clear();
  return {endpoint.substr(0, path_start), prefix};
}

}  // namespace detail

// Client for the three model services. Shareable across worker threads; every
// response is cached under the canonical request digest, and replay-only mode
// never touches the network.
class Client {
 public:
  explicit Client(std::shared_ptr<Cache> cache = std::make_shared<Cache>())
      : cache_(std::move(cache)) {}

  std::shared_ptr<Cache> cache() const { return cache_; }
  std::uint64_t network_calls() const { return network_calls_.load(); }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts,
                                     const ProviderConfig& cfg) {
    cfg.validate();
    if (texts.empty()) throw validation_error("embed: empty input");
    for (const std::string& t : texts)
      if (t.empty()) throw validation_error("embed: empty text in batch");

    // One request per distinct text keeps cache units identical to requests.
    std::vector<std::string> unique;
    std::unordered_map<std::string, std::size_t> position;
    for (const std::string& t : texts)
      if (position.emplace(t, unique.size()).second) unique.push_back(t);

    std::vector<EmbeddingVector> unique_vecs = parallel_map<EmbeddingVector>(
        unique.size(), cfg.max_in_flight, [&](std::size_t i) { return embed_one(unique[i], cfg); });

    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const std::string& t : texts) out.push_back(unique_vecs[position.at(t)]);
    for (const EmbeddingVector& v : out)
      if (v.dim != out.front().dim)
        throw provider_error("embed: dimension mismatch across batch");
    return out;
  }

  // attempt > 0 re-keys the cache entry, so a verdict-parse retry can ask again
  // instead of replaying the same malformed completion.
  std::string generate(const std::string& prompt, const ProviderConfig& cfg, int attempt = 0) {
    cfg.validate();
    if (prompt.empty()) throw validation_error("generate: empty prompt");
    if (static_cast<int>(prompt.size()) > cfg.max_prompt_chars)
      throw validation_error("generate: prompt exceeds provider max length (" +
                             std::to_string(prompt.size()) + " > " +
                             std::to_string(cfg.max_prompt_chars) + " chars)");
    json body{{"model", cfg.model},
              {"prompt", prompt},
              {"temperature", cfg.temperature},
              {"max_tokens", cfg.max_tokens}};
    if (attempt > 0) body["attempt"] = attempt;
    json resp = roundtrip("generate", body, cfg);
    std::string text_out = resp.at("text").get<std::string>();
    if (text_out.empty()) throw provider_error("generate: empty completion");
    return text_out;
  }

  // source_lang, when known and equal to target, short-circuits the call.
  std::string translate(const std::string& text_in, const std::string& target_lang,
                        const ProviderConfig& cfg, const std::string& source_lang = "") {
    cfg.validate();
    if (text_in.empty()) throw validation_error("translate: empty text");
    if (!source_lang.empty() && source_lang == target_lang) return text_in;
    json body{{"text", text_in}, {"target", target_lang}};
    json resp = roundtrip("translate", body, cfg);
    return resp.at("text").get<std::string>();
  }

 private:
  EmbeddingVector embed_one(const std::string& text_in, const ProviderConfig& cfg) {
    json body{{"model", cfg.model}, {"texts", json::array({text_in})}};
    json resp = roundtrip("embed", body, cfg);
    int dim = resp.at("dim").get<int>();
    const json& vectors = resp.at("vectors");
    if (!vectors.is_array() || vectors.size() != 1)
      throw provider_error("embed: expected exactly one vector in response");
    EmbeddingVector v;
    v.values = vectors[0].get<std::vector<double>>();
    v.dim = dim;
    if (static_cast<int>(v.values.size()) != dim)
      throw provider_error("embed: vector length != dim in response");
    v.normalized = std::fabs(l2_norm(v.values) - 1.0) <= 1e-6;
    return v;
  }

  json roundtrip(const std::string& role, const json& body, const ProviderConfig& cfg) {
    std::string key = request_digest(role, cfg.model, body);
    if (auto hit = cache_->get(key)) return *hit;
    if (cache_->replay_only())
      throw cache_miss_error("replay-only mode: cache miss for " + role + " request " + key);

    json resp;
    if (cfg.is_builtin()) {
      json b = body;
      if (role == "embed" || role == "translate") b["model"] = cfg.model;
      resp = stubs::handle_request(role, b);
    } else {
      resp = http_post(role, body, cfg);
    }
    cache_->put(key, role, resp);
    return resp;
  }

  json http_post(const std::string& role, const json& body, const ProviderConfig& cfg) {
    auto ep = detail::parse_endpoint(cfg.endpoint);
    std::string path = ep.prefix + "/" + role;
    std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
      httplib::Client cli(ep.base);
      cli.set_connection_timeout(std::chrono::milliseconds(
          static_cast<int>(cfg.timeout_s * 1000)));
      cli.set_read_timeout(std::chrono::milliseconds(static_cast<int>(cfg.timeout_s * 1000)));
      if (!cfg.bearer_token.empty()) cli.set_bearer_token_auth(cfg.bearer_token);
      network_calls_.fetch_add(1);
      auto res = cli.Post(path, payload, "application/json");
      if (res && res->status == 200) {
        json parsed = json::parse(res->body, nullptr, false);
        if (parsed.is_discarded()) {
          last_error = "unparseable response body";
        } else {
          return parsed;
        }
      } else if (res) {
        last_error = "HTTP " + std::to_string(res->status);
      } else {
        last_error = "transport failure (" + httplib::to_string(res.error()) + ")";
      }
    }
    throw provider_error("provider " + role + " call failed after " +
                         std::to_string(cfg.retries + 1) + " attempts: " + last_error);
  }

  std::shared_ptr<Cache> cache_;
  std::atomic<std::uint64_t> network_calls_{0};
};

}  // namespace negforge::providers
