#pragma once

// Shared fixtures for the test suites: scratch directories, a tiny ingestable
// corpus writer, and an in-process stub provider server with request counters.

#include <httplib.h>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "negforge/common.hpp"
#include "negforge/corpus.hpp"
#include "negforge/stubs.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using nlohmann::json;

// Unique scratch dir, removed on destruction.
struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("negforge_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path operator/(const std::string& name) const { return path / name; }
};

inline void write_docs_jsonl(const fs::path& path,
                             const std::vector<negforge::corpus::Document>& docs) {
  std::string out;
  for (const auto& d : docs) {
    nlohmann::ordered_json j{
        {"doc_id", d.doc_id}, {"lang", d.lang}, {"title", d.title}, {"text", d.text}};
    out += j.dump();
    out += '\n';
  }
  negforge::io::write_file(path, out);
}

inline void write_queries_tsv(const fs::path& path,
                              const std::vector<negforge::corpus::Query>& queries) {
  std::string out;
  for (const auto& q : queries) out += q.query_id + "\t" + q.lang + "\t" + q.text + "\n";
  negforge::io::write_file(path, out);
}

inline void write_qrels_tsv(const fs::path& path,
                            const std::vector<negforge::corpus::Qrel>& qrels) {
  std::string out;
  for (const auto& qr : qrels)
    out += qr.query_id + "\t0\t" + qr.doc_id + "\t" + std::to_string(qr.grade) + "\n";
  negforge::io::write_file(path, out);
}

// In-process provider server. By default answers like the builtin stubs; a
// custom handler can take over per role. Tracks total and concurrent requests.
class StubServer {
 public:
  using Handler = std::function<json(const json& body)>;

  StubServer() {
    server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      handle("embed", req, res);
    });
    server_.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
      handle("generate", req, res);
    });
    server_.Post("/translate", [this](const httplib::Request& req, httplib::Response& res) {
      handle("translate", req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::uint64_t requests() const { return requests_.load(); }
  int max_concurrency() const { return max_concurrency_.load(); }
  void set_handler(const std::string& role, Handler h) { handlers_[role] = std::move(h); }
  void set_delay_ms(int ms) { delay_ms_ = ms; }
  void fail_next(int n) { fail_next_ = n; }

 private:
  void handle(const std::string& role, const httplib::Request& req, httplib::Response& res) {
    requests_.fetch_add(1);
    int now = concurrency_.fetch_add(1) + 1;
    int prev = max_concurrency_.load();
    while (now > prev && !max_concurrency_.compare_exchange_weak(prev, now)) {
    }
    if (delay_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
    if (fail_next_.load() > 0) {
      fail_next_.fetch_sub(1);
      res.status = 500;
      concurrency_.fetch_sub(1);
      return;
    }
    try {
      json body = json::parse(req.body);
      json reply = handlers_.count(role) ? handlers_.at(role)(body)
                                         : negforge::stubs::handle_request(role, body);
      res.set_content(reply.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
    concurrency_.fetch_sub(1);
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::map<std::string, Handler> handlers_;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<int> concurrency_{0};
  std::atomic<int> max_concurrency_{0};
  std::atomic<int> fail_next_{0};
  int delay_ms_ = 0;
};

}  // namespace testsupport
