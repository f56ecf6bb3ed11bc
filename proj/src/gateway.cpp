#include "taxpref/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <thread>

#include <nlohmann/json.hpp>

namespace taxpref {

namespace {

using nlohmann::json;

Architecture parse_architecture(const std::string& s) {
  if (s == "dense") return Architecture::dense;
  if (s == "moe" || s == "mixture-of-experts") return Architecture::moe;
  throw std::invalid_argument("unknown architecture: " + s);
}

bool is_retryable(GatewayErrorKind kind) {
  switch (kind) {
    case GatewayErrorKind::transport:
    case GatewayErrorKind::timeout:
    case GatewayErrorKind::bad_response:
      return true;
    default:
      return false;
  }
}

}  // namespace

std::vector<ModelSpec> load_registry(const std::string& source) {
  json doc;
  try {
    doc = json::parse(source);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("malformed registry document: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("models") || !doc["models"].is_array()) {
    throw std::invalid_argument("registry document must contain a 'models' array");
  }
  std::vector<ModelSpec> specs;
  for (const json& row : doc["models"]) {
    ModelSpec m;
    m.model_id = row.at("model_id").get<std::string>();
    m.family = row.value("family", std::string{});
    if (row.contains("parameters_b") && !row["parameters_b"].is_null()) {
      m.parameters_b = row["parameters_b"].get<double>();
      if (*m.parameters_b < 0) {
        throw std::invalid_argument("negative parameter count for " + m.model_id);
      }
    }
    m.architecture = parse_architecture(row.value("architecture", std::string("dense")));
    if (row.contains("activated_parameters_b") && !row["activated_parameters_b"].is_null()) {
      m.activated_parameters_b = row["activated_parameters_b"].get<double>();
      if (*m.activated_parameters_b < 0) {
        throw std::invalid_argument("negative activated parameter count for " + m.model_id);
      }
    } else if (m.architecture == Architecture::dense) {
      m.activated_parameters_b = m.parameters_b;
    }
    if (m.parameters_b && m.activated_parameters_b &&
        *m.activated_parameters_b > *m.parameters_b) {
      throw std::invalid_argument("activated parameters exceed total for " + m.model_id);
    }
    m.endpoint = row.at("endpoint").get<std::string>();
    m.auth_ref = row.value("auth_ref", std::string{});
    for (const ModelSpec& existing : specs) {
      if (existing.model_id == m.model_id) {
        throw std::invalid_argument("duplicate model_id: " + m.model_id);
      }
    }
    specs.push_back(std::move(m));
  }
  return specs;
}

// ---------------------------------------------------------------------------

// Continuous-refill token bucket: capacity `rate` tokens refilled evenly over
// `window`. acquire() blocks until a token is available.
struct Gateway::RateBucket {
  std::mutex mutex;
  std::condition_variable cv;
  double tokens;
  double capacity;
  double refill_per_ms;
  std::chrono::steady_clock::time_point last;

  RateBucket(double rate, std::chrono::milliseconds window)
      : tokens(rate),
        capacity(rate),
        refill_per_ms(rate / std::max<double>(1.0, static_cast<double>(window.count()))),
        last(std::chrono::steady_clock::now()) {}

  void refill_locked() {
    auto now = std::chrono::steady_clock::now();
    double elapsed_ms =
        std::chrono::duration<double, std::milli>(now - last).count();
    tokens = std::min(capacity, tokens + elapsed_ms * refill_per_ms);
    last = now;
  }

  void acquire() {
    std::unique_lock lock(mutex);
    for (;;) {
      refill_locked();
      if (tokens >= 1.0) {
        tokens -= 1.0;
        return;
      }
      double missing = 1.0 - tokens;
      auto wait = std::chrono::milliseconds(
          std::max<long>(1, static_cast<long>(std::ceil(missing / refill_per_ms))));
      cv.wait_for(lock, wait);
    }
  }
};

// Global in-flight cap shared by complete() and complete_batch().
struct Gateway::Slots {
  std::mutex mutex;
  std::condition_variable cv;
  int in_flight = 0;
  int limit;

  explicit Slots(int l) : limit(l) {}
};

class Gateway::SlotGuard {
 public:
  explicit SlotGuard(Slots& s) : slots_(s) {
    std::unique_lock lock(slots_.mutex);
    slots_.cv.wait(lock, [&] { return slots_.in_flight < slots_.limit; });
    ++slots_.in_flight;
  }
  ~SlotGuard() {
    {
      std::lock_guard lock(slots_.mutex);
      --slots_.in_flight;
    }
    slots_.cv.notify_one();
  }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  Slots& slots_;
};

Gateway::Gateway(std::vector<ModelSpec> registry, std::shared_ptr<ChatBackend> backend,
                 GatewayPolicy policy)
    : registry_(std::move(registry)), backend_(std::move(backend)), policy_(policy) {
  if (policy_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  if (policy_.global_concurrency < 1) {
    throw std::invalid_argument("global_concurrency must be >= 1");
  }
  if (policy_.per_model_rate <= 0) throw std::invalid_argument("per_model_rate must be > 0");
  for (std::size_t i = 0; i < registry_.size(); ++i) {
    if (!by_id_.emplace(registry_[i].model_id, i).second) {
      throw std::invalid_argument("duplicate model_id: " + registry_[i].model_id);
    }
  }
  slots_ = std::make_unique<Slots>(policy_.global_concurrency);
}

Gateway::~Gateway() = default;

const ModelSpec* Gateway::find_model(const std::string& model_id) const {
  auto it = by_id_.find(model_id);
  return it == by_id_.end() ? nullptr : &registry_[it->second];
}

Gateway::RateBucket& Gateway::bucket_for(const std::string& model_id) {
  std::lock_guard lock(buckets_mutex_);
  auto it = buckets_.find(model_id);
  if (it == buckets_.end()) {
    it = buckets_
             .emplace(model_id, std::make_unique<RateBucket>(policy_.per_model_rate,
                                                             policy_.rate_window))
             .first;
  }
  return *it->second;
}

CompletionResult Gateway::attempt_loop(const CompletionRequest& req) {
  const ModelSpec* model = find_model(req.model_id);
  if (!model) {
    throw GatewayException({GatewayErrorKind::unknown_model,
                            "unknown model: " + req.model_id, 0});
  }
  GatewayError last;
  for (int attempt = 1; attempt <= policy_.max_attempts; ++attempt) {
    bucket_for(req.model_id).acquire();
    try {
      SlotGuard guard(*slots_);
      BackendReply reply = backend_->send(*model, req, policy_.attempt_timeout);
      CompletionResult result;
      result.text = std::move(reply.text);
      result.model_id = req.model_id;
      result.attempts = attempt;
      result.usage = reply.usage;
      return result;
    } catch (const BackendError& e) {
      last = GatewayError{e.kind, e.what(), attempt};
      if (!is_retryable(e.kind)) {
        throw GatewayException(last);
      }
    }
    if (attempt < policy_.max_attempts && policy_.backoff.base.count() > 0) {
      double factor = std::pow(policy_.backoff.multiplier, attempt - 1);
      auto delay = std::chrono::milliseconds(static_cast<long>(
          std::min<double>(static_cast<double>(policy_.backoff.max.count()),
                           static_cast<double>(policy_.backoff.base.count()) * factor)));
      std::this_thread::sleep_for(delay);
    }
  }
  last.kind = GatewayErrorKind::exhausted_retries;
  last.message = "exhausted " + std::to_string(policy_.max_attempts) +
                 " attempts; last error: " + last.message;
  last.attempts = policy_.max_attempts;
  throw GatewayException(last);
}

CompletionResult Gateway::complete(const CompletionRequest& req) {
  return attempt_loop(req);
}

std::vector<CompletionOutcome> Gateway::complete_batch(
    std::span<const CompletionRequest> reqs) {
  std::vector<CompletionOutcome> outcomes(reqs.size());
  if (reqs.empty()) return outcomes;

  // Workers pull indices; the slot guard inside attempt_loop enforces the
  // in-flight bound, so the pool size only affects scheduling overhead.
  std::size_t workers = std::min<std::size_t>(
      reqs.size(), static_cast<std::size_t>(policy_.global_concurrency));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= reqs.size()) return;
        try {
          outcomes[i].result = attempt_loop(reqs[i]);
        } catch (const GatewayException& e) {
          outcomes[i].error = e.error;
        } catch (const std::exception& e) {
          outcomes[i].error = GatewayError{GatewayErrorKind::transport, e.what(), 0};
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  return outcomes;
}

}  // namespace taxpref
