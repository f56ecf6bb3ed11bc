#pragma once

#include <map>
#include <memory>
#include <string>

#include "taxpref/gateway.hpp"

namespace taxpref {

/// Deterministic offline backend: the reply is a pure function of
/// (model_id, seed, messages). Behavior is driven by directives embedded in
/// rendered template text:
///
///   [[mock:types]]     list of "name: description" lines
///   [[mock:refine]]    refined description
///   [[mock:draft]]     candidate prompt text
///   [[mock:complete?]] "complete" / "incomplete"
///   [[mock:feasible?]] "feasible" / "infeasible: <reason>"
///   [[mock:respond]]   answer text
///   [[mock:judge]]     two four-dimension score blocks
///
/// Text wrapped in <<<...>>> anywhere in the conversation is treated as an
/// extraction span (templates wrap their placeholders in these markers), and
/// control tokens inside spans (types=N, hard=N, draft-incomplete,
/// score<d> in model ids) steer the emitted content so that fixtures stay
/// hand-traceable. See docs/formats.md for the full convention.
///
/// Endpoint forms: "mock://ok" succeeds, "mock://error" always raises a
/// transport error, "mock://auth" always raises an auth error.
class MockBackend final : public ChatBackend {
 public:
  BackendReply send(const ModelSpec& model, const CompletionRequest& req,
                    std::chrono::milliseconds timeout) override;
};

/// Chat-completion HTTP JSON client. Credentials come from the environment
/// variable named by ModelSpec.auth_ref; the per-attempt timeout is applied
/// to connect/read/write.
class HttpBackend final : public ChatBackend {
 public:
  BackendReply send(const ModelSpec& model, const CompletionRequest& req,
                    std::chrono::milliseconds timeout) override;
};

/// Dispatches on the endpoint scheme ("mock://..." vs "http(s)://...").
/// Extra schemes can be registered for tests.
class RoutingBackend final : public ChatBackend {
 public:
  RoutingBackend();

  void register_scheme(const std::string& scheme, std::shared_ptr<ChatBackend> backend);

  BackendReply send(const ModelSpec& model, const CompletionRequest& req,
                    std::chrono::milliseconds timeout) override;

 private:
  std::map<std::string, std::shared_ptr<ChatBackend>> by_scheme_;
};

}  // namespace taxpref
