#include "taxpref/prompt_forge.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "taxpref/util.hpp"

namespace taxpref {

namespace {

constexpr const char* kDefaultContinuation =
    "List additional distinct question types with brief descriptions, avoiding any "
    "already mentioned.";
constexpr const char* kDefaultCompletenessCheck =
    "Does the candidate prompt above contain all information needed to answer it? "
    "Reply 'complete' or 'incomplete'.";
constexpr const char* kDefaultRegenerate =
    "The candidate is incomplete. Regenerate it so that all necessary information is "
    "included.";

// Strips list markers ("- ", "* ", "3. ", "3) ") from a line.
std::string_view strip_bullet(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  if (i < line.size() && (line[i] == '-' || line[i] == '*')) {
    ++i;
  } else {
    std::size_t j = i;
    while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i && j < line.size() && (line[j] == '.' || line[j] == ')')) i = j + 1;
  }
  return line.substr(i);
}

// Splits "name: description" on the first ASCII or fullwidth colon.
std::optional<std::pair<std::string, std::string>> parse_type_line(std::string_view line) {
  std::string_view body = strip_bullet(line);
  std::size_t ascii = body.find(':');
  std::size_t wide = body.find("\xEF\xBC\x9A");  // '：'
  std::size_t pos;
  std::size_t sep_len;
  if (ascii == std::string_view::npos && wide == std::string_view::npos) return std::nullopt;
  if (wide == std::string_view::npos || (ascii != std::string_view::npos && ascii < wide)) {
    pos = ascii;
    sep_len = 1;
  } else {
    pos = wide;
    sep_len = 3;
  }
  std::string name = trim(body.substr(0, pos));
  std::string description = trim(body.substr(pos + sep_len));
  if (name.empty() || description.empty()) return std::nullopt;
  return std::pair{std::move(name), std::move(description)};
}

std::string first_token_lower(std::string_view text) {
  std::string t = trim(text);
  std::size_t end = 0;
  while (end < t.size() && !std::isspace(static_cast<unsigned char>(t[end])) &&
         t[end] != ':' && t[end] != '.' && t[end] != ',') {
    ++end;
  }
  return to_lower_ascii(t.substr(0, end));
}

}  // namespace

std::string normalize_type_name(std::string_view name) {
  return to_lower_ascii(trim(name));
}

std::string PromptForge::complete_text(const std::string& model_id,
                                       const std::vector<ChatMessage>& messages,
                                       std::uint64_t seed) {
  CompletionRequest req;
  req.model_id = model_id;
  req.messages = messages;
  req.sampling = options_.sampling;
  req.seed = seed;
  return gateway_.complete(req).text;
}

std::vector<QuestionType> PromptForge::generate_question_types(
    const Subject& subject, const std::string& generator, const PromptTemplate& tpl,
    SeedSeq& seeds, std::vector<std::string>* warnings) {
  if (!tpl.section_mentions(0, "subject")) {
    throw ForgeError("question-type template does not reference {subject}");
  }
  std::vector<ChatMessage> conversation;
  conversation.push_back({Role::user, tpl.render(0, {{"subject", subject.name}})});

  std::vector<QuestionType> out;
  std::set<std::string> seen;
  for (int round = 1; round <= 3; ++round) {
    if (round > 1) {
      std::string continuation =
          tpl.section_count() > 1 ? tpl.render(1, {{"subject", subject.name}})
                                  : std::string(kDefaultContinuation);
      conversation.push_back({Role::user, continuation});
    }

    std::vector<std::pair<std::string, std::string>> parsed;
    std::string reply;
    for (int tryno = 0; tryno <= options_.parse_retries; ++tryno) {
      reply = complete_text(generator, conversation, seeds.next());
      parsed.clear();
      for (const std::string& line : split_lines(reply)) {
        if (auto entry = parse_type_line(line)) parsed.push_back(std::move(*entry));
      }
      if (!parsed.empty()) break;
    }
    if (parsed.empty()) {
      if (warnings) {
        warnings->push_back("subject " + subject.id + ": round " + std::to_string(round) +
                            " output unparseable; round skipped");
      }
      conversation.push_back({Role::assistant, reply});
      continue;
    }
    conversation.push_back({Role::assistant, reply});

    for (auto& [name, description] : parsed) {
      if (!seen.insert(normalize_type_name(name)).second) continue;  // earliest round wins
      QuestionType qt;
      qt.subject_id = subject.id;
      qt.name = std::move(name);
      qt.description = std::move(description);
      qt.round_index = round;
      out.push_back(std::move(qt));
    }
  }

  for (std::size_t i = 0; i < out.size(); ++i) {
    std::ostringstream id;
    id << subject.id << ".qt" << (i < 9 ? "0" : "") << (i + 1);
    out[i].id = id.str();
  }
  return out;
}

QuestionType PromptForge::refine_description(const QuestionType& qt,
                                             const std::string& refiner,
                                             const PromptTemplate& tpl, SeedSeq& seeds,
                                             std::vector<std::string>* warnings) {
  if (qt.description.empty()) {
    throw ForgeError("question type " + qt.id + " has an empty description");
  }
  std::vector<ChatMessage> conversation;
  conversation.push_back({Role::user, tpl.render(0, {{"question_type", qt.name},
                                                     {"description", qt.description}})});
  std::string reply = trim(complete_text(refiner, conversation, seeds.next()));

  QuestionType out = qt;
  if (reply.empty()) {
    if (warnings) {
      warnings->push_back("question type " + qt.id +
                          ": refiner returned empty output; description kept");
    }
  } else {
    out.description = reply;
  }
  return out;
}

PromptCandidate PromptForge::draft_prompt(const QuestionType& qt, const std::string& generator,
                                          const PromptTemplate& tpl, SeedSeq& seeds,
                                          int regen_attempt, const std::string& regen_reason,
                                          std::vector<std::string>* warnings) {
  std::map<std::string, std::string> values = {{"question_type", qt.name},
                                               {"description", qt.description}};
  std::string opening = tpl.render(0, values);
  if (regen_attempt > 0) {
    opening += "\n\nThis is regeneration attempt=" + std::to_string(regen_attempt) +
               "; the previous candidate was judged infeasible: " + regen_reason;
  }

  std::vector<ChatMessage> conversation;
  conversation.push_back({Role::user, opening});

  PromptCandidate candidate;
  candidate.question_type_id = qt.id;
  candidate.status = CandidateStatus::draft;

  for (int draft_no = 1; draft_no <= 2; ++draft_no) {
    candidate.text = trim(complete_text(generator, conversation, seeds.next()));
    conversation.push_back({Role::assistant, candidate.text});

    values["candidate_prompt"] = candidate.text;
    std::string check = tpl.section_count() > 1 ? tpl.render(1, values)
                                                : std::string(kDefaultCompletenessCheck);
    conversation.push_back({Role::user, check});

    std::optional<bool> complete;
    for (int tryno = 0; tryno <= options_.parse_retries; ++tryno) {
      std::string verdict = complete_text(generator, conversation, seeds.next());
      std::string token = first_token_lower(verdict);
      if (token == "complete" || token == "yes") {
        complete = true;
      } else if (token == "incomplete" || token == "no") {
        complete = false;
      }
      if (complete) {
        conversation.push_back({Role::assistant, verdict});
        break;
      }
    }
    if (!complete) {
      // treat an unparseable self-check as incomplete rather than aborting
      if (warnings) {
        warnings->push_back("question type " + qt.id +
                            ": completeness verdict unparseable; treated as incomplete");
      }
      conversation.push_back({Role::assistant, "incomplete"});
      complete = false;
    }

    candidate.completeness = *complete ? Completeness::complete : Completeness::incomplete;
    if (*complete || draft_no == 2) break;

    std::string regen = tpl.section_count() > 2 ? tpl.render(2, values)
                                                : std::string(kDefaultRegenerate);
    conversation.push_back({Role::user, regen});
  }
  return candidate;
}

FeasibilityVerdict PromptForge::check_feasibility(const PromptCandidate& candidate,
                                                  const std::string& checker,
                                                  const PromptTemplate& tpl, SeedSeq& seeds) {
  if (candidate.text.empty()) {
    throw ForgeError("candidate " + candidate.id + " has empty text");
  }
  std::vector<ChatMessage> conversation;
  conversation.push_back(
      {Role::user, tpl.render(0, {{"candidate_prompt", candidate.text}})});

  for (int tryno = 0; tryno <= options_.parse_retries; ++tryno) {
    std::string reply = trim(complete_text(checker, conversation, seeds.next()));
    std::string token = first_token_lower(reply);
    if (token == "feasible" || token == "yes") {
      return {true, {}};
    }
    if (token == "infeasible" || token == "no") {
      std::string reason;
      std::size_t colon = reply.find(':');
      if (colon != std::string::npos) reason = trim(reply.substr(colon + 1));
      if (reason.empty()) reason = "no reason given";
      return {false, reason};
    }
  }
  throw ForgeError("unparseable feasibility verdict for candidate of question type " +
                   candidate.question_type_id);
}

PromptProduction PromptForge::produce_prompt(const QuestionType& qt,
                                             const std::string& generator,
                                             const std::string& checker,
                                             const PromptTemplate& draft_tpl,
                                             const PromptTemplate& feasibility_tpl,
                                             SeedSeq& seeds) {
  PromptProduction production;
  std::string last_reason;

  for (int attempt = 0; attempt <= options_.max_regenerations; ++attempt) {
    PromptAttempt record;
    record.attempt_index = attempt;
    try {
      PromptCandidate candidate =
          draft_prompt(qt, generator, draft_tpl, seeds, attempt, last_reason,
                       &production.warnings);
      candidate.id = qt.id + "#p" + std::to_string(attempt);
      candidate.regen_attempts = attempt;

      FeasibilityVerdict verdict =
          check_feasibility(candidate, checker, feasibility_tpl, seeds);
      candidate.feasibility =
          verdict.feasible ? Feasibility::feasible : Feasibility::infeasible;
      record.candidate = candidate;
      record.verdict = verdict;
      production.attempts.push_back(record);

      if (verdict.feasible && candidate.completeness == Completeness::complete) {
        candidate.status = CandidateStatus::final_;
        production.candidate = std::move(candidate);
        return production;
      }
      last_reason = verdict.feasible ? "candidate judged incomplete" : verdict.reason;
      production.candidate = std::move(candidate);
    } catch (const std::exception& e) {
      // a fully failed attempt counts as a regeneration
      record.error = e.what();
      production.attempts.push_back(record);
      last_reason = record.error;
      production.warnings.push_back("question type " + qt.id + ": attempt " +
                                    std::to_string(attempt) + " failed: " + record.error);
    }
  }

  if (production.candidate.id.empty()) {
    production.candidate.question_type_id = qt.id;
    production.candidate.id = qt.id + "#p" + std::to_string(options_.max_regenerations);
  }
  production.candidate.regen_attempts = options_.max_regenerations;
  production.candidate.status = CandidateStatus::discarded;
  return production;
}

}  // namespace taxpref
