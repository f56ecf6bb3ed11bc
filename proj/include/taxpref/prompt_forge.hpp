#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "taxpref/gateway.hpp"
#include "taxpref/taxonomy.hpp"
#include "taxpref/templates.hpp"

namespace taxpref {

struct ForgeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct QuestionType {
  std::string id;
  std::string subject_id;
  std::string name;
  std::string description;
  int round_index = 1;  // which of the three rounds produced it
};

enum class Completeness { unchecked, complete, incomplete };
enum class Feasibility { unchecked, feasible, infeasible };
enum class CandidateStatus { draft, final_, discarded };

struct PromptCandidate {
  std::string id;
  std::string question_type_id;
  std::string text;
  Completeness completeness = Completeness::unchecked;
  Feasibility feasibility = Feasibility::unchecked;
  int regen_attempts = 0;
  CandidateStatus status = CandidateStatus::draft;
};

struct FeasibilityVerdict {
  bool feasible = false;
  std::string reason;  // non-empty when infeasible
};

/// One drafting attempt, kept for audit regardless of disposition.
struct PromptAttempt {
  int attempt_index = 0;
  PromptCandidate candidate;
  std::optional<FeasibilityVerdict> verdict;
  std::string error;  // non-empty when the attempt failed outright
};

struct PromptProduction {
  PromptCandidate candidate;
  std::vector<PromptAttempt> attempts;
  std::vector<std::string> warnings;
};

/// Deterministic per-call seed stream; every completion issued within one
/// operation draws the next seed so that resumed runs replay identically.
class SeedSeq {
 public:
  explicit SeedSeq(std::uint64_t base) : next_(base) {}
  std::uint64_t next() { return next_++; }

 private:
  std::uint64_t next_;
};

struct ForgeOptions {
  int parse_retries = 2;      // extra attempts per unparseable reply
  int max_regenerations = 3;  // feasibility-driven redrafts
  Sampling sampling;
};

/// Staged prompt generation: question types -> refined descriptions ->
/// drafted prompts with a completeness self-check -> feasibility checking
/// with bounded regeneration.
class PromptForge {
 public:
  PromptForge(Gateway& gateway, ForgeOptions options)
      : gateway_(gateway), options_(options) {}

  /// Three-round interaction in one shared conversation; outputs are parsed
  /// as "name: description" lines and deduplicated by (subject, folded name),
  /// keeping the earliest round. A round whose output stays unparseable
  /// after retries is skipped with a warning.
  std::vector<QuestionType> generate_question_types(const Subject& subject,
                                                    const std::string& generator,
                                                    const PromptTemplate& tpl, SeedSeq& seeds,
                                                    std::vector<std::string>* warnings = nullptr);

  /// Single-turn description rewrite; empty refiner output keeps the
  /// original text and records a warning.
  QuestionType refine_description(const QuestionType& qt, const std::string& refiner,
                                  const PromptTemplate& tpl, SeedSeq& seeds,
                                  std::vector<std::string>* warnings = nullptr);

  /// Two-round draft: generate a candidate, ask the same generator whether it
  /// is self-contained, regenerate once within the conversation if not.
  /// regen_attempt/regen_reason annotate feasibility-driven redrafts.
  PromptCandidate draft_prompt(const QuestionType& qt, const std::string& generator,
                               const PromptTemplate& tpl, SeedSeq& seeds,
                               int regen_attempt = 0, const std::string& regen_reason = {},
                               std::vector<std::string>* warnings = nullptr);

  /// Parses "feasible" / "infeasible: reason" out of the checker's reply.
  FeasibilityVerdict check_feasibility(const PromptCandidate& candidate,
                                       const std::string& checker, const PromptTemplate& tpl,
                                       SeedSeq& seeds);

  /// Full per-question-type orchestration with up to max_regenerations
  /// redrafts after infeasible (or incomplete) candidates. Every attempt is
  /// kept in the returned audit trail.
  PromptProduction produce_prompt(const QuestionType& qt, const std::string& generator,
                                  const std::string& checker, const PromptTemplate& draft_tpl,
                                  const PromptTemplate& feasibility_tpl, SeedSeq& seeds);

 private:
  std::string complete_text(const std::string& model_id, const std::vector<ChatMessage>& messages,
                            std::uint64_t seed);

  Gateway& gateway_;
  ForgeOptions options_;
};

/// trim + ASCII case-fold, the question-type identity used for dedup.
std::string normalize_type_name(std::string_view name);

}  // namespace taxpref
