#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace taxpref {

enum class Architecture { dense, moe };

struct ModelSpec {
  std::string model_id;
  std::string family;
  // Billions of parameters; unset for models whose size is not disclosed.
  std::optional<double> parameters_b;
  // Activated parameters for mixture-of-experts models; equals parameters_b
  // for dense models when set.
  std::optional<double> activated_parameters_b;
  Architecture architecture = Architecture::dense;
  std::string endpoint;
  std::string auth_ref;  // name of the credential environment variable, "" for none
};

enum class Role { system, user, assistant };

struct ChatMessage {
  Role role = Role::user;
  std::string content;
};

struct Sampling {
  double temperature = 0.0;
  int max_tokens = 1024;
};

struct CompletionRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  Sampling sampling;
  // Honored bit-for-bit by the mock backend; advisory for remote endpoints.
  std::uint64_t seed = 0;
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct CompletionResult {
  std::string text;
  std::string model_id;
  int attempts = 1;
  Usage usage;
};

enum class GatewayErrorKind {
  unknown_model,
  auth,         // never retried
  bad_request,  // endpoint rejected the request; retrying cannot help
  transport,    // network / 5xx / throttling; retryable
  timeout,      // per-attempt timeout; retryable, counts as an attempt
  bad_response, // unparseable reply; retryable
  exhausted_retries,
};

struct GatewayError {
  GatewayErrorKind kind = GatewayErrorKind::transport;
  std::string message;
  int attempts = 0;
};

struct GatewayException : std::runtime_error {
  GatewayError error;
  explicit GatewayException(GatewayError e)
      : std::runtime_error(e.message), error(std::move(e)) {}
};

/// Per-request outcome for batch calls; exactly one of result/error is set.
struct CompletionOutcome {
  std::optional<CompletionResult> result;
  std::optional<GatewayError> error;
  bool ok() const { return result.has_value(); }
};

struct BackoffPolicy {
  std::chrono::milliseconds base{100};
  double multiplier = 2.0;
  std::chrono::milliseconds max{5000};
};

struct GatewayPolicy {
  int max_attempts = 3;
  BackoffPolicy backoff;
  int global_concurrency = 8;
  // Token bucket per model: `per_model_rate` requests per `rate_window`.
  double per_model_rate = 600.0;
  std::chrono::milliseconds rate_window{60000};
  std::chrono::milliseconds attempt_timeout{30000};
};

/// Raised by backends; the gateway turns it into retries or a GatewayError.
struct BackendError : std::runtime_error {
  GatewayErrorKind kind;
  BackendError(GatewayErrorKind k, const std::string& msg)
      : std::runtime_error(msg), kind(k) {}
};

struct BackendReply {
  std::string text;
  Usage usage;
};

/// Transport abstraction. One call per attempt; throw BackendError to fail.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual BackendReply send(const ModelSpec& model, const CompletionRequest& req,
                            std::chrono::milliseconds timeout) = 0;
};

// Registry document: {"models": [{model_id, family, parameters_b,
// activated_parameters_b?, architecture, endpoint, auth_ref?}, ...]}.
std::vector<ModelSpec> load_registry(const std::string& source);

class Gateway {
 public:
  Gateway(std::vector<ModelSpec> registry, std::shared_ptr<ChatBackend> backend,
          GatewayPolicy policy);
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// First successful result, retrying per policy. Throws GatewayException.
  CompletionResult complete(const CompletionRequest& req);

  /// Outcomes in request order. At most policy.global_concurrency requests
  /// are in flight at once; element failures never fail the batch.
  std::vector<CompletionOutcome> complete_batch(std::span<const CompletionRequest> reqs);

  const ModelSpec* find_model(const std::string& model_id) const;
  const std::vector<ModelSpec>& registry() const { return registry_; }
  const GatewayPolicy& policy() const { return policy_; }

 private:
  struct RateBucket;
  class SlotGuard;

  CompletionResult attempt_loop(const CompletionRequest& req);
  RateBucket& bucket_for(const std::string& model_id);

  std::vector<ModelSpec> registry_;
  std::map<std::string, std::size_t> by_id_;
  std::shared_ptr<ChatBackend> backend_;
  GatewayPolicy policy_;

  struct Slots;
  std::unique_ptr<Slots> slots_;

  std::mutex buckets_mutex_;
  std::map<std::string, std::unique_ptr<RateBucket>> buckets_;
};

}  // namespace taxpref
