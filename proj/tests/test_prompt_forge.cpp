#include <doctest.h>

#include <deque>

#include "helpers.hpp"
#include "taxpref/prompt_forge.hpp"

using namespace taxpref;
using taxpref::testing::ScriptedBackend;

namespace {

Subject subject() { return {"s1", "Algebra", "c1", "d1"}; }

QuestionType refined_type() {
  return {"s1.qt01", "s1", "case analysis", "analyze a worked case", 1};
}

struct ForgeFixture {
  std::shared_ptr<ScriptedBackend> backend;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<PromptForge> forge;

  explicit ForgeFixture(ScriptedBackend::Handler handler, int parse_retries = 2) {
    backend = std::make_shared<ScriptedBackend>(std::move(handler));
    gateway = std::make_unique<Gateway>(testing::mock_registry({"gen", "check"}), backend,
                                        testing::fast_policy());
    forge = std::make_unique<PromptForge>(*gateway,
                                          ForgeOptions{parse_retries, 3, Sampling{}});
  }
};

int user_messages(const CompletionRequest& req) {
  int n = 0;
  for (const ChatMessage& m : req.messages) {
    if (m.role == Role::user) ++n;
  }
  return n;
}

const std::string kStagedTpl =
    "DRAFT {question_type} :: {description}\n---\nCHECK {candidate_prompt}\n---\nREGEN";

}  // namespace

TEST_CASE("three rounds with distinct yields give 12 types across rounds") {
  ForgeFixture fx([](const ModelSpec&, const CompletionRequest& req) {
    int round = user_messages(req);
    std::string out;
    for (int k = 1; k <= 4; ++k) {
      out += "r" + std::to_string(round) + "-type" + std::to_string(k) + ": description " +
             std::to_string(k) + "\n";
    }
    return out;
  });
  auto tpl = PromptTemplate::from_string("List types for {subject}");
  SeedSeq seeds(1);
  auto types = fx.forge->generate_question_types(subject(), "gen", tpl, seeds);
  REQUIRE(types.size() == 12);
  CHECK(fx.backend->calls() == 3);  // exactly one generator call per round
  CHECK(types[0].round_index == 1);
  CHECK(types[4].round_index == 2);
  CHECK(types[8].round_index == 3);
  CHECK(types[0].id == "s1.qt01");
  CHECK(types[11].id == "s1.qt12");
  for (const QuestionType& qt : types) CHECK(qt.subject_id == "s1");
}

TEST_CASE("identical names every round dedupe to round 1") {
  ForgeFixture fx([](const ModelSpec&, const CompletionRequest&) {
    return std::string("Alpha: a\nBeta: b\nGamma: c\nDelta: d\n");
  });
  auto tpl = PromptTemplate::from_string("List types for {subject}");
  SeedSeq seeds(1);
  auto types = fx.forge->generate_question_types(subject(), "gen", tpl, seeds);
  REQUIRE(types.size() == 4);
  for (const QuestionType& qt : types) CHECK(qt.round_index == 1);
}

TEST_CASE("dedup folds case and whitespace, keeping the earliest round") {
  ForgeFixture fx([](const ModelSpec&, const CompletionRequest& req) {
    return user_messages(req) == 1 ? std::string("Case Analysis: first\n")
                                   : std::string("  case analysis : again\nNew Type: n\n");
  });
  auto tpl = PromptTemplate::from_string("List types for {subject}");
  SeedSeq seeds(1);
  auto types = fx.forge->generate_question_types(subject(), "gen", tpl, seeds);
  REQUIRE(types.size() == 2);
  CHECK(types[0].name == "Case Analysis");
  CHECK(types[0].description == "first");
  CHECK(types[0].round_index == 1);
  CHECK(types[1].name == "New Type");
}

TEST_CASE("an unparseable round is retried then skipped with a warning") {
  ForgeFixture fx([](const ModelSpec&, const CompletionRequest& req) {
    return user_messages(req) == 2 ? std::string("no separator in sight")
                                   : std::string("T" + std::to_string(user_messages(req)) +
                                                 ": desc\n");
  });
  auto tpl = PromptTemplate::from_string("List types for {subject}");
  SeedSeq seeds(1);
  std::vector<std::string> warnings;
  auto types = fx.forge->generate_question_types(subject(), "gen", tpl, seeds, &warnings);
  CHECK(types.size() == 2);  // rounds 1 and 3
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("round 2") != std::string::npos);
  // 1 + (1 + 2 parse retries) + 1 calls
  CHECK(fx.backend->calls() == 5);
}

TEST_CASE("question-type template must mention the subject") {
  ForgeFixture fx([](const ModelSpec&, const CompletionRequest&) { return ""; });
  auto tpl = PromptTemplate::from_string("no placeholder here");
  SeedSeq seeds(1);
  CHECK_THROWS_AS(fx.forge->generate_question_types(subject(), "gen", tpl, seeds),
                  ForgeError);
}

TEST_CASE("refine replaces only the description") {
  ForgeFixture fx([](const ModelSpec&, const CompletionRequest& req) {
    std::string text = req.messages.back().content;
    for (char& c : text) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return text;
  });
  auto tpl = PromptTemplate::from_string("{description}");
  SeedSeq seeds(1);
  QuestionType out = fx.forge->refine_description(refined_type(), "gen", tpl, seeds);
  CHECK(out.description == "ANALYZE A WORKED CASE");
  CHECK(out.name == refined_type().name);
  CHECK(out.id == refined_type().id);
  CHECK(out.round_index == refined_type().round_index);
}

TEST_CASE("empty refiner output keeps the description and warns") {
  ForgeFixture fx([](const ModelSpec&, const CompletionRequest&) { return "   "; });
  auto tpl = PromptTemplate::from_string("{description}");
  SeedSeq seeds(1);
  std::vector<std::string> warnings;
  QuestionType out = fx.forge->refine_description(refined_type(), "gen", tpl, seeds, &warnings);
  CHECK(out.description == refined_type().description);
  CHECK(warnings.size() == 1);
}

TEST_CASE("identity refiner is a fixed point") {
  ForgeFixture fx([](const ModelSpec&, const CompletionRequest& req) {
    return req.messages.back().content;
  });
  auto tpl = PromptTemplate::from_string("{description}");
  SeedSeq seeds(1);
  QuestionType out = fx.forge->refine_description(refined_type(), "gen", tpl, seeds);
  CHECK(out.description == refined_type().description);
}

TEST_CASE("draft judged complete on the first pass costs exactly 2 calls") {
  std::deque<std::string> verdicts{"complete"};
  ForgeFixture fx([&](const ModelSpec&, const CompletionRequest& req) -> std::string {
    const std::string& last = req.messages.back().content;
    if (last.rfind("CHECK", 0) == 0) {
      std::string v = verdicts.front();
      if (verdicts.size() > 1) verdicts.pop_front();
      return v;
    }
    return "CANDIDATE-" + std::to_string(req.messages.size());
  });
  auto tpl = PromptTemplate::from_string(kStagedTpl);
  SeedSeq seeds(1);
  PromptCandidate c = fx.forge->draft_prompt(refined_type(), "gen", tpl, seeds);
  CHECK(c.completeness == Completeness::complete);
  CHECK(c.status == CandidateStatus::draft);
  CHECK(c.text == "CANDIDATE-1");
  CHECK(fx.backend->calls() == 2);
}

TEST_CASE("incomplete-then-complete drafts cost 4 calls and keep the regenerated text") {
  std::deque<std::string> verdicts{"incomplete", "complete"};
  ForgeFixture fx([&](const ModelSpec&, const CompletionRequest& req) -> std::string {
    const std::string& last = req.messages.back().content;
    if (last.rfind("CHECK", 0) == 0) {
      std::string v = verdicts.front();
      if (verdicts.size() > 1) verdicts.pop_front();
      return v;
    }
    return "CANDIDATE-" + std::to_string(req.messages.size());
  });
  auto tpl = PromptTemplate::from_string(kStagedTpl);
  SeedSeq seeds(1);
  PromptCandidate c = fx.forge->draft_prompt(refined_type(), "gen", tpl, seeds);
  CHECK(c.completeness == Completeness::complete);
  CHECK(c.text == "CANDIDATE-5");  // drafted in the 5-message conversation state
  CHECK(fx.backend->calls() == 4);
}

TEST_CASE("two incomplete drafts end incomplete") {
  ForgeFixture fx([&](const ModelSpec&, const CompletionRequest& req) -> std::string {
    const std::string& last = req.messages.back().content;
    if (last.rfind("CHECK", 0) == 0) return "incomplete";
    return "CANDIDATE";
  });
  auto tpl = PromptTemplate::from_string(kStagedTpl);
  SeedSeq seeds(1);
  PromptCandidate c = fx.forge->draft_prompt(refined_type(), "gen", tpl, seeds);
  CHECK(c.completeness == Completeness::incomplete);
  CHECK(c.status == CandidateStatus::draft);
  CHECK(fx.backend->calls() == 4);
}

TEST_CASE("feasibility verdicts parse with reasons") {
  ForgeFixture yes([](const ModelSpec&, const CompletionRequest&) { return "feasible"; });
  auto tpl = PromptTemplate::from_string("JUDGE {candidate_prompt}");
  SeedSeq seeds(1);
  PromptCandidate candidate{"p1", "s1.qt01", "do a thing", Completeness::complete,
                            Feasibility::unchecked, 0, CandidateStatus::draft};
  FeasibilityVerdict v = yes.forge->check_feasibility(candidate, "check", tpl, seeds);
  CHECK(v.feasible);

  ForgeFixture no([](const ModelSpec&, const CompletionRequest&) {
    return "infeasible: requires real-world action";
  });
  SeedSeq seeds2(1);
  FeasibilityVerdict v2 = no.forge->check_feasibility(candidate, "check", tpl, seeds2);
  CHECK_FALSE(v2.feasible);
  CHECK(v2.reason == "requires real-world action");
}

TEST_CASE("empty checker output exhausts parse retries and errors") {
  ForgeFixture fx([](const ModelSpec&, const CompletionRequest&) { return ""; });
  auto tpl = PromptTemplate::from_string("JUDGE {candidate_prompt}");
  SeedSeq seeds(1);
  PromptCandidate candidate{"p1", "s1.qt01", "do a thing", Completeness::complete,
                            Feasibility::unchecked, 0, CandidateStatus::draft};
  CHECK_THROWS_AS(fx.forge->check_feasibility(candidate, "check", tpl, seeds), ForgeError);
  CHECK(fx.backend->calls() == 3);  // 1 + 2 parse retries
}

namespace {

// Drives produce_prompt against a scripted sequence of feasibility verdicts;
// drafts are always judged complete.
PromptProduction run_produce(const std::vector<bool>& feasibility,
                             std::shared_ptr<ScriptedBackend>* backend_out = nullptr) {
  auto feasible = std::make_shared<std::deque<bool>>(feasibility.begin(), feasibility.end());
  ForgeFixture fx([feasible](const ModelSpec&, const CompletionRequest& req) -> std::string {
    const std::string& last = req.messages.back().content;
    if (last.rfind("CHECK", 0) == 0) return "complete";
    if (last.rfind("FEAS", 0) == 0) {
      bool ok = feasible->empty() ? true : feasible->front();
      if (!feasible->empty()) feasible->pop_front();
      return ok ? "feasible" : "infeasible: beyond capabilities";
    }
    return "CANDIDATE-" + std::to_string(req.seed);
  });
  auto draft_tpl = PromptTemplate::from_string(kStagedTpl);
  auto feas_tpl = PromptTemplate::from_string("FEAS {candidate_prompt}");
  SeedSeq seeds(1);
  PromptProduction production = fx.forge->produce_prompt(refined_type(), "gen", "check",
                                                         draft_tpl, feas_tpl, seeds);
  if (backend_out) *backend_out = fx.backend;
  return production;
}

}  // namespace

TEST_CASE("produce: immediately feasible finalizes with regen_attempts=0") {
  PromptProduction p = run_produce({true});
  CHECK(p.candidate.status == CandidateStatus::final_);
  CHECK(p.candidate.regen_attempts == 0);
  CHECK(p.candidate.feasibility == Feasibility::feasible);
  CHECK(p.candidate.completeness == Completeness::complete);
  CHECK(p.attempts.size() == 1);
}

TEST_CASE("produce: two infeasible verdicts then feasible finalizes with regen_attempts=2") {
  PromptProduction p = run_produce({false, false, true});
  CHECK(p.candidate.status == CandidateStatus::final_);
  CHECK(p.candidate.regen_attempts == 2);
  CHECK(p.attempts.size() == 3);
  CHECK(p.attempts[0].verdict->feasible == false);
  CHECK(p.attempts[2].verdict->feasible == true);
}

TEST_CASE("produce: four infeasible verdicts discard with regen_attempts=3") {
  std::shared_ptr<ScriptedBackend> backend;
  PromptProduction p = run_produce({false, false, false, false}, &backend);
  CHECK(p.candidate.status == CandidateStatus::discarded);
  CHECK(p.candidate.regen_attempts == 3);
  CHECK(p.attempts.size() == 4);
  REQUIRE(p.attempts.back().verdict.has_value());
  CHECK(p.attempts.back().verdict->feasible == false);
  CHECK(p.attempts.back().verdict->reason == "beyond capabilities");
  // 4 attempts x (draft + check + feasibility) = 12 calls; checker calls <= 1 + 3
  CHECK(backend->calls() == 12);
}

TEST_CASE("produce: regeneration notices carry the attempt index") {
  std::vector<std::string> openings;
  auto feasible = std::make_shared<std::deque<bool>>(std::deque<bool>{false, true});
  ForgeFixture fx([&, feasible](const ModelSpec&, const CompletionRequest& req) -> std::string {
    const std::string& last = req.messages.back().content;
    if (last.rfind("CHECK", 0) == 0) return "complete";
    if (last.rfind("FEAS", 0) == 0) {
      bool ok = feasible->front();
      feasible->pop_front();
      return ok ? "feasible" : "infeasible: nope";
    }
    if (req.messages.size() == 1) openings.push_back(last);
    return "CANDIDATE";
  });
  auto draft_tpl = PromptTemplate::from_string(kStagedTpl);
  auto feas_tpl = PromptTemplate::from_string("FEAS {candidate_prompt}");
  SeedSeq seeds(1);
  PromptProduction p = fx.forge->produce_prompt(refined_type(), "gen", "check", draft_tpl,
                                                feas_tpl, seeds);
  CHECK(p.candidate.status == CandidateStatus::final_);
  REQUIRE(openings.size() == 2);
  CHECK(openings[0].find("regeneration attempt=") == std::string::npos);
  CHECK(openings[1].find("regeneration attempt=1") != std::string::npos);
  CHECK(openings[1].find("nope") != std::string::npos);
}

TEST_CASE("produce: gateway failures count as regenerations and are audited") {
  std::vector<ModelSpec> registry = testing::mock_registry({"gen", "check"});
  registry[1].endpoint = "mock://error";  // every feasibility check fails hard
  auto backend = std::make_shared<RoutingBackend>();
  Gateway gateway(registry, backend, testing::fast_policy(1));
  PromptForge forge(gateway, ForgeOptions{0, 3, Sampling{}});

  auto draft_tpl = PromptTemplate::from_string(
      "DRAFT <<<{question_type}>>> <<<{description}>>> [[mock:draft]]\n---\n"
      "CHECK <<<{candidate_prompt}>>> [[mock:complete?]]");
  auto feas_tpl = PromptTemplate::from_string("FEAS <<<{candidate_prompt}>>>");
  SeedSeq seeds(1);
  PromptProduction p =
      forge.produce_prompt(refined_type(), "gen", "check", draft_tpl, feas_tpl, seeds);
  CHECK(p.candidate.status == CandidateStatus::discarded);
  CHECK(p.candidate.regen_attempts == 3);
  CHECK(p.attempts.size() == 4);
  for (const PromptAttempt& a : p.attempts) CHECK_FALSE(a.error.empty());
  CHECK(p.warnings.size() == 4);
}
