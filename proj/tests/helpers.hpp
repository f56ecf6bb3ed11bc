#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "taxpref/backends.hpp"
#include "taxpref/gateway.hpp"
#include "taxpref/taxonomy.hpp"

namespace taxpref::testing {

/// Backend driven by a handler function; optionally fails the first
/// `fail_first` sends with the given error kind.
class ScriptedBackend final : public ChatBackend {
 public:
  using Handler = std::function<std::string(const ModelSpec&, const CompletionRequest&)>;

  explicit ScriptedBackend(Handler handler) : handler_(std::move(handler)) {}

  static std::shared_ptr<ScriptedBackend> fixed(std::string reply) {
    return std::make_shared<ScriptedBackend>(
        [reply = std::move(reply)](const ModelSpec&, const CompletionRequest&) {
          return reply;
        });
  }

  void fail_first(int n, GatewayErrorKind kind = GatewayErrorKind::transport) {
    fail_first_ = n;
    fail_kind_ = kind;
  }

  int calls() const { return calls_.load(); }

  BackendReply send(const ModelSpec& model, const CompletionRequest& req,
                    std::chrono::milliseconds) override {
    int call = ++calls_;
    if (call <= fail_first_) {
      throw BackendError(fail_kind_, "scripted failure #" + std::to_string(call));
    }
    return {handler_(model, req), {}};
  }

 private:
  Handler handler_;
  std::atomic<int> calls_{0};
  int fail_first_ = 0;
  GatewayErrorKind fail_kind_ = GatewayErrorKind::transport;
};

/// Wraps another backend and tracks total and peak-concurrent sends.
class CountingBackend final : public ChatBackend {
 public:
  explicit CountingBackend(std::shared_ptr<ChatBackend> inner,
                           std::chrono::milliseconds dwell = std::chrono::milliseconds(0))
      : inner_(std::move(inner)), dwell_(dwell) {}

  BackendReply send(const ModelSpec& model, const CompletionRequest& req,
                    std::chrono::milliseconds timeout) override {
    int now = ++in_flight_;
    int peak = peak_in_flight_.load();
    while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {
    }
    ++total_;
    if (dwell_.count() > 0) std::this_thread::sleep_for(dwell_);
    BackendReply reply = inner_->send(model, req, timeout);
    --in_flight_;
    return reply;
  }

  int total() const { return total_.load(); }
  int peak() const { return peak_in_flight_.load(); }

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::chrono::milliseconds dwell_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_in_flight_{0};
  std::atomic<int> total_{0};
};

inline ModelSpec mock_spec(const std::string& id) {
  ModelSpec m;
  m.model_id = id;
  m.family = "test";
  m.parameters_b = 7;
  m.activated_parameters_b = 7;
  m.endpoint = "mock://ok";
  return m;
}

inline std::vector<ModelSpec> mock_registry(std::initializer_list<std::string> ids) {
  std::vector<ModelSpec> out;
  for (const std::string& id : ids) out.push_back(mock_spec(id));
  return out;
}

inline GatewayPolicy fast_policy(int max_attempts = 3, int concurrency = 8) {
  GatewayPolicy policy;
  policy.max_attempts = max_attempts;
  policy.backoff.base = std::chrono::milliseconds(0);
  policy.global_concurrency = concurrency;
  policy.per_model_rate = 1e9;
  policy.rate_window = std::chrono::milliseconds(1000);
  policy.attempt_timeout = std::chrono::milliseconds(2000);
  return policy;
}

/// Synthesizes the full-scale catalog document: 12 disciplines, 93
/// categories, 816 subjects, with discipline d12 holding exactly 104
/// subjects (the one meant to be filtered down to 12 overrides).
inline std::string make_catalog_document() {
  nlohmann::ordered_json doc;
  doc["disciplines"] = nlohmann::ordered_json::array();
  doc["categories"] = nlohmann::ordered_json::array();
  doc["subjects"] = nlohmann::ordered_json::array();

  // category counts per discipline: d1..d9 have 8, d10..d11 have 7, d12 has 7 (= 93)
  // subject counts: d12's 7 categories hold 15,15,15,15,15,15,14 = 104;
  // the remaining 86 categories hold 712: first 24 have 9, the rest 8.
  int cat_seq = 0;
  int subj_seq = 0;
  int other_cat_index = 0;
  for (int d = 1; d <= 12; ++d) {
    std::string did = "d" + std::to_string(d);
    doc["disciplines"].push_back({{"id", did}, {"name", "Discipline " + std::to_string(d)}});
    int cats = (d <= 9) ? 8 : 7;
    for (int c = 0; c < cats; ++c) {
      std::string cid = "c" + std::to_string(++cat_seq);
      doc["categories"].push_back(
          {{"id", cid}, {"name", "Category " + std::to_string(cat_seq)}, {"discipline_id", did}});
      int subjects;
      if (d == 12) {
        subjects = (c < 6) ? 15 : 14;
      } else {
        subjects = (other_cat_index++ < 24) ? 9 : 8;
      }
      for (int s = 0; s < subjects; ++s) {
        std::string sid = "s" + std::to_string(++subj_seq);
        doc["subjects"].push_back(
            {{"id", sid}, {"name", "Subject " + std::to_string(subj_seq)}, {"category_id", cid}});
      }
    }
  }
  return doc.dump();
}

inline std::filesystem::path fixture_dir() {
  return std::filesystem::path(TAXPREF_FIXTURE_DIR);
}

/// Unique scratch directory under the build tree; removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("taxpref-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace taxpref::testing
