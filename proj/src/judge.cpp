#include "taxpref/judge.hpp"

#include <cctype>
#include <cmath>
#include <map>

#include "taxpref/util.hpp"

namespace taxpref {

void AnnotationWeights::validate() const {
  for (double w : {relevance, correctness, clarity, completeness}) {
    if (w < 0.0) throw JudgeError("annotation weights must be non-negative");
  }
  double sum = relevance + correctness + clarity + completeness;
  if (std::abs(sum - 1.0) > 1e-12) {
    throw JudgeError("annotation weights must sum to 1");
  }
}

namespace {

// One score block: `response_<i>: relevance=R correctness=C clarity=L completeness=P`.
// Returns nullopt on structural problems; throws on out-of-range values.
std::optional<DimensionScores> parse_block(std::string_view text, int index) {
  std::string marker = "response_" + std::to_string(index) + ":";
  std::size_t pos = text.find(marker);
  if (pos == std::string_view::npos) return std::nullopt;
  std::size_t eol = text.find('\n', pos);
  std::string_view line =
      text.substr(pos, (eol == std::string_view::npos ? text.size() : eol) - pos);

  auto field = [&](std::string_view key) -> std::optional<int> {
    std::size_t p = line.find(key);
    if (p == std::string_view::npos) return std::nullopt;
    p += key.size();
    if (p >= line.size() || line[p] != '=') return std::nullopt;
    ++p;
    if (p >= line.size() || !std::isdigit(static_cast<unsigned char>(line[p]))) {
      return std::nullopt;
    }
    int v = 0;
    while (p < line.size() && std::isdigit(static_cast<unsigned char>(line[p]))) {
      v = v * 10 + (line[p] - '0');
      ++p;
    }
    // a decimal point means a real-valued score, which is rejected
    if (p < line.size() && line[p] == '.') {
      throw JudgeError("non-integer score in annotator output");
    }
    if (v < 1 || v > 10) {
      throw JudgeError("score out of range [1,10] in annotator output: " + std::to_string(v));
    }
    return v;
  };

  DimensionScores s;
  auto rel = field("relevance");
  auto cor = field("correctness");
  auto cla = field("clarity");
  auto com = field("completeness");
  if (!rel || !cor || !cla || !com) return std::nullopt;
  s.relevance = *rel;
  s.correctness = *cor;
  s.clarity = *cla;
  s.completeness = *com;
  return s;
}

double weighted_overall(const CalibratedScores& s, const AnnotationWeights& w) {
  return s.relevance * w.relevance + s.correctness * w.correctness + s.clarity * w.clarity +
         s.completeness * w.completeness;
}

}  // namespace

PositionedJudgment Judge::judge_once(const std::string& prompt_id,
                                     std::string_view prompt_text, const Response& first,
                                     const Response& second, const std::string& annotator,
                                     const PromptTemplate& tpl, std::uint64_t seed) {
  if (first.id == second.id) {
    throw JudgeError("judge_once requires two distinct responses");
  }
  if (first.prompt_id != prompt_id || second.prompt_id != prompt_id) {
    throw JudgeError("responses do not belong to prompt " + prompt_id);
  }

  std::vector<ChatMessage> conversation;
  conversation.push_back({Role::user, tpl.render(0, {{"prompt", std::string(prompt_text)},
                                                     {"response_1", first.text},
                                                     {"response_2", second.text}})});

  for (int tryno = 0; tryno <= options_.parse_retries; ++tryno) {
    CompletionRequest req;
    req.model_id = annotator;
    req.messages = conversation;
    req.sampling = options_.sampling;
    req.seed = seed + static_cast<std::uint64_t>(tryno);
    std::string reply = gateway_.complete(req).text;

    auto s1 = parse_block(reply, 1);
    auto s2 = parse_block(reply, 2);
    if (s1 && s2) {
      PositionedJudgment j;
      j.prompt_id = prompt_id;
      j.first_response_id = first.id;
      j.second_response_id = second.id;
      j.scores_first = *s1;
      j.scores_second = *s2;
      j.annotator_model_id = annotator;
      return j;
    }
  }
  throw JudgeError("unparseable score blocks for pair (" + first.id + ", " + second.id + ")");
}

CalibratedComparison Judge::judge_calibrated(const std::string& prompt_id,
                                             std::string_view prompt_text, const Response& a,
                                             const Response& b, const std::string& annotator,
                                             const PromptTemplate& tpl, std::uint64_t seed,
                                             const AnnotationWeights& weights) {
  if (a.id == b.id) throw JudgeError("judge_calibrated requires two distinct responses");
  weights.validate();

  // seeds keyed by presentation order, not call order, so that
  // judge_calibrated(b, a) replays the same two positioned calls
  std::uint64_t seed_ab = mix_seed(seed, a.id + "|" + b.id);
  std::uint64_t seed_ba = mix_seed(seed, b.id + "|" + a.id);
  PositionedJudgment ab = judge_once(prompt_id, prompt_text, a, b, annotator, tpl, seed_ab);
  PositionedJudgment ba = judge_once(prompt_id, prompt_text, b, a, annotator, tpl, seed_ba);

  auto mean2 = [](int x, int y) { return (x + y) / 2.0; };
  CalibratedComparison c;
  c.prompt_id = prompt_id;
  c.response_a_id = a.id;
  c.response_b_id = b.id;
  c.annotator_model_id = annotator;
  c.calibrated_a.relevance = mean2(ab.scores_first.relevance, ba.scores_second.relevance);
  c.calibrated_a.correctness = mean2(ab.scores_first.correctness, ba.scores_second.correctness);
  c.calibrated_a.clarity = mean2(ab.scores_first.clarity, ba.scores_second.clarity);
  c.calibrated_a.completeness =
      mean2(ab.scores_first.completeness, ba.scores_second.completeness);
  c.calibrated_b.relevance = mean2(ab.scores_second.relevance, ba.scores_first.relevance);
  c.calibrated_b.correctness = mean2(ab.scores_second.correctness, ba.scores_first.correctness);
  c.calibrated_b.clarity = mean2(ab.scores_second.clarity, ba.scores_first.clarity);
  c.calibrated_b.completeness =
      mean2(ab.scores_second.completeness, ba.scores_first.completeness);
  c.overall_a = weighted_overall(c.calibrated_a, weights);
  c.overall_b = weighted_overall(c.calibrated_b, weights);
  if (c.overall_a > c.overall_b) {
    c.outcome = ComparisonOutcome::a_preferred;
  } else if (c.overall_b > c.overall_a) {
    c.outcome = ComparisonOutcome::b_preferred;
  } else {
    c.outcome = ComparisonOutcome::tie;
  }
  return c;
}

std::optional<PreferenceLabel> derive_label(const CalibratedComparison& c) {
  switch (c.outcome) {
    case ComparisonOutcome::a_preferred:
      return PreferenceLabel{c.response_a_id, c.response_b_id};
    case ComparisonOutcome::b_preferred:
      return PreferenceLabel{c.response_b_id, c.response_a_id};
    case ComparisonOutcome::tie:
      return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace taxpref
