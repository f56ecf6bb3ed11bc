#include "taxpref/backends.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <vector>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "taxpref/util.hpp"

namespace taxpref {

namespace {

using nlohmann::json;

constexpr std::string_view kSpanOpen = "<<<";
constexpr std::string_view kSpanClose = ">>>";

std::string conversation_text(const CompletionRequest& req) {
  std::string all;
  for (const ChatMessage& m : req.messages) {
    all += m.content;
    all += '\n';
  }
  return all;
}

std::vector<std::string> extract_spans(std::string_view text) {
  std::vector<std::string> spans;
  std::size_t pos = 0;
  for (;;) {
    std::size_t open = text.find(kSpanOpen, pos);
    if (open == std::string_view::npos) break;
    std::size_t close = text.find(kSpanClose, open + kSpanOpen.size());
    if (close == std::string_view::npos) break;
    spans.emplace_back(text.substr(open + kSpanOpen.size(), close - open - kSpanOpen.size()));
    pos = close + kSpanClose.size();
  }
  return spans;
}

// Last occurrence of `[[mock:<verb>]]` decides what the mock answers.
std::string last_directive(std::string_view text) {
  std::size_t pos = text.rfind("[[mock:");
  if (pos == std::string_view::npos) return {};
  std::size_t end = text.find("]]", pos);
  if (end == std::string_view::npos) return {};
  return std::string(text.substr(pos + 7, end - pos - 7));
}

// Parses `key=<int>` out of free text; empty optional when absent.
std::optional<int> find_int_token(std::string_view text, std::string_view key) {
  std::size_t pos = text.find(key);
  if (pos == std::string_view::npos) return std::nullopt;
  pos += key.size();
  if (pos >= text.size() || !std::isdigit(static_cast<unsigned char>(text[pos]))) {
    return std::nullopt;
  }
  int value = 0;
  while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
    value = value * 10 + (text[pos] - '0');
    ++pos;
  }
  return value;
}

std::string hex8(std::uint64_t h) {
  static const char digits[] = "0123456789abcdef";
  std::string out(8, '0');
  for (int i = 7; i >= 0; --i) {
    out[i] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

int count_user_messages(const CompletionRequest& req) {
  int n = 0;
  for (const ChatMessage& m : req.messages) {
    if (m.role == Role::user) ++n;
  }
  return n;
}

int count_incomplete_verdicts(const CompletionRequest& req) {
  int n = 0;
  for (const ChatMessage& m : req.messages) {
    if (m.role == Role::assistant && starts_with(trim(m.content), "incomplete")) ++n;
  }
  return n;
}

int score_for(std::string_view response_text, std::string_view dimension) {
  // model ids may carry an explicit "score<d>" token, e.g. "m-hi8 score8"
  std::size_t by = response_text.find("Answer by ");
  if (by != std::string_view::npos) {
    std::size_t end = response_text.find_first_of(" \n:", by + 10);
    std::string_view model_id = response_text.substr(
        by + 10, (end == std::string_view::npos ? response_text.size() : end) - by - 10);
    if (auto fixed = find_int_token(model_id, "score")) {
      return std::clamp(*fixed, 1, 10);
    }
  }
  std::string key;
  key.append(response_text);
  key.push_back('|');
  key.append(dimension);
  return 1 + static_cast<int>(fnv1a64(key) % 10);
}

std::string score_block(int index, std::string_view response_text) {
  std::ostringstream out;
  out << "response_" << index << ": relevance=" << score_for(response_text, "relevance")
      << " correctness=" << score_for(response_text, "correctness")
      << " clarity=" << score_for(response_text, "clarity")
      << " completeness=" << score_for(response_text, "completeness");
  return out.str();
}

}  // namespace

BackendReply MockBackend::send(const ModelSpec& model, const CompletionRequest& req,
                               std::chrono::milliseconds /*timeout*/) {
  if (starts_with(model.endpoint, "mock://error")) {
    throw BackendError(GatewayErrorKind::transport, "scripted transport failure");
  }
  if (starts_with(model.endpoint, "mock://auth")) {
    throw BackendError(GatewayErrorKind::auth, "scripted auth failure");
  }

  std::string all = conversation_text(req);
  std::string directive = last_directive(all);
  std::vector<std::string> spans = extract_spans(all);
  std::uint64_t h = fnv1a64(model.model_id + "|" + std::to_string(req.seed) + "|" + all);
  std::string case_tag = "case=" + hex8(h);

  std::string text;
  if (directive == "types") {
    std::string subject = spans.empty() ? std::string("unknown-subject") : spans.back();
    int count = 4;
    if (auto n = find_int_token(subject, "types=")) count = std::max(0, *n);
    if (subject.find("types=h") != std::string::npos) {
      count = 2 + static_cast<int>(h % 6);
    }
    int round = std::max(1, count_user_messages(req));
    std::ostringstream out;
    for (int k = 0; k < count; ++k) {
      int n = (round - 1) * count + k + 1;
      out << subject << " type-" << n << ": description of type-" << n << " for " << subject
          << "\n";
    }
    text = out.str();
  } else if (directive == "refine") {
    std::string description = spans.empty() ? std::string() : spans.back();
    text = "Refined: " + description;
  } else if (directive == "draft") {
    int draft_no = 1 + count_incomplete_verdicts(req);
    int attempt = find_int_token(all, "regeneration attempt=").value_or(0);
    std::string qt = spans.empty() ? std::string() : spans.front();
    std::string desc = spans.size() > 1 ? spans[1] : std::string();
    std::ostringstream out;
    out << "Draft draft=" << draft_no << " attempt=" << attempt << " " << case_tag
        << ": please address '" << qt << "' (" << desc << ")";
    text = out.str();
  } else if (directive == "complete?") {
    std::string candidate = spans.empty() ? std::string() : spans.back();
    bool incomplete = candidate.find("draft-incomplete2") != std::string::npos ||
                      (candidate.find("draft-incomplete") != std::string::npos &&
                       candidate.find("draft=1") != std::string::npos);
    text = incomplete ? "incomplete" : "complete";
  } else if (directive == "feasible?") {
    std::string candidate = spans.empty() ? std::string() : spans.back();
    auto hard = find_int_token(candidate, "hard=");
    auto attempt = find_int_token(candidate, "attempt=");
    if (hard && attempt.value_or(0) < *hard) {
      text = "infeasible: attempt=" + std::to_string(attempt.value_or(0)) +
             " has not reached hard=" + std::to_string(*hard);
    } else {
      text = "feasible";
    }
  } else if (directive == "respond") {
    std::string prompt = req.messages.empty() ? std::string() : req.messages.back().content;
    text = "Answer by " + model.model_id + " " + case_tag + ": analysis of '" +
           prompt.substr(0, 48) + "'";
  } else if (directive == "judge") {
    std::string r1 = spans.size() >= 2 ? spans[spans.size() - 2] : std::string();
    std::string r2 = spans.empty() ? std::string() : spans.back();
    text = score_block(1, r1) + "\n" + score_block(2, r2) + "\n";
  } else {
    text = "mock reply " + case_tag;
  }

  BackendReply reply;
  reply.text = std::move(text);
  reply.usage.prompt_tokens = static_cast<int>(all.size() / 4);
  reply.usage.completion_tokens = static_cast<int>(reply.text.size() / 4);
  return reply;
}

// ---------------------------------------------------------------------------

namespace {

struct ParsedEndpoint {
  std::string scheme_host_port;  // e.g. "http://10.0.0.1:8080"
  std::string path_prefix;       // e.g. "/v1"
};

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  std::size_t scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw BackendError(GatewayErrorKind::bad_request, "malformed endpoint: " + endpoint);
  }
  std::size_t path_start = endpoint.find('/', scheme_end + 3);
  ParsedEndpoint out;
  if (path_start == std::string::npos) {
    out.scheme_host_port = endpoint;
  } else {
    out.scheme_host_port = endpoint.substr(0, path_start);
    out.path_prefix = endpoint.substr(path_start);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') {
      out.path_prefix.pop_back();
    }
  }
  return out;
}

const char* role_name(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

}  // namespace

BackendReply HttpBackend::send(const ModelSpec& model, const CompletionRequest& req,
                               std::chrono::milliseconds timeout) {
  ParsedEndpoint ep = parse_endpoint(model.endpoint);

  httplib::Client client(ep.scheme_host_port);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers headers;
  if (!model.auth_ref.empty() && model.auth_ref != "NONE") {
    const char* cred = std::getenv(model.auth_ref.c_str());
    if (!cred || !*cred) {
      throw BackendError(GatewayErrorKind::auth,
                         "credential environment variable not set: " + model.auth_ref);
    }
    headers.emplace("Authorization", std::string("Bearer ") + cred);
  }

  json body;
  body["model"] = req.model_id;
  body["messages"] = json::array();
  for (const ChatMessage& m : req.messages) {
    body["messages"].push_back({{"role", role_name(m.role)}, {"content", m.content}});
  }
  body["temperature"] = req.sampling.temperature;
  body["max_tokens"] = req.sampling.max_tokens;
  body["seed"] = req.seed;

  auto res = client.Post(ep.path_prefix + "/chat/completions", headers, body.dump(),
                         "application/json");
  if (!res) {
    auto err = res.error();
    bool timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                     err == httplib::Error::Write;
    throw BackendError(timed_out ? GatewayErrorKind::timeout : GatewayErrorKind::transport,
                       "http error: " + httplib::to_string(err));
  }
  if (res->status == 401 || res->status == 403) {
    throw BackendError(GatewayErrorKind::auth, "auth rejected: HTTP " +
                                                   std::to_string(res->status));
  }
  if (res->status == 408 || res->status == 429 || res->status >= 500) {
    throw BackendError(GatewayErrorKind::transport,
                       "HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw BackendError(GatewayErrorKind::bad_request,
                       "HTTP " + std::to_string(res->status) + ": " + res->body);
  }

  try {
    json doc = json::parse(res->body);
    BackendReply reply;
    reply.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
    if (doc.contains("usage")) {
      reply.usage.prompt_tokens = doc["usage"].value("prompt_tokens", 0);
      reply.usage.completion_tokens = doc["usage"].value("completion_tokens", 0);
    }
    return reply;
  } catch (const json::exception& e) {
    throw BackendError(GatewayErrorKind::bad_response,
                       std::string("unparseable completion body: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

RoutingBackend::RoutingBackend() {
  auto http = std::make_shared<HttpBackend>();
  by_scheme_["mock"] = std::make_shared<MockBackend>();
  by_scheme_["http"] = http;
  by_scheme_["https"] = http;
}

void RoutingBackend::register_scheme(const std::string& scheme,
                                     std::shared_ptr<ChatBackend> backend) {
  by_scheme_[scheme] = std::move(backend);
}

BackendReply RoutingBackend::send(const ModelSpec& model, const CompletionRequest& req,
                                  std::chrono::milliseconds timeout) {
  std::size_t scheme_end = model.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw BackendError(GatewayErrorKind::bad_request,
                       "endpoint has no scheme: " + model.endpoint);
  }
  std::string scheme = model.endpoint.substr(0, scheme_end);
  auto it = by_scheme_.find(scheme);
  if (it == by_scheme_.end()) {
    throw BackendError(GatewayErrorKind::bad_request, "unsupported scheme: " + scheme);
  }
  return it->second->send(model, req, timeout);
}

}  // namespace taxpref
