#include "taxpref/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "taxpref/util.hpp"

namespace taxpref {

namespace {

using ojson = nlohmann::ordered_json;

ojson scores_to_json(const CalibratedScores& s) {
  return ojson{{"relevance", s.relevance},
               {"correctness", s.correctness},
               {"clarity", s.clarity},
               {"completeness", s.completeness}};
}

CalibratedScores scores_from_json(const ojson& j) {
  CalibratedScores s;
  s.relevance = j.at("relevance").get<double>();
  s.correctness = j.at("correctness").get<double>();
  s.clarity = j.at("clarity").get<double>();
  s.completeness = j.at("completeness").get<double>();
  return s;
}

ojson to_json(const SftRecord& r) {
  return ojson{{"prompt", r.prompt_text},
               {"response", r.response_text},
               {"question_type", r.question_type_id},
               {"model", r.generator_model_id}};
}

ojson to_json(const PreferenceRecord& r) {
  return ojson{{"prompt", r.prompt_text},
               {"chosen", r.chosen_text},
               {"rejected", r.rejected_text},
               {"chosen_model", r.chosen_model_id},
               {"rejected_model", r.rejected_model_id},
               {"scores",
                ojson{{"chosen", scores_to_json(r.chosen_scores)},
                      {"rejected", scores_to_json(r.rejected_scores)},
                      {"chosen_overall", r.chosen_overall},
                      {"rejected_overall", r.rejected_overall}}},
               {"annotator", r.annotator_model_id},
               {"prompt_id", r.prompt_id},
               {"pair_id", r.pair_id}};
}

ojson to_json(const FinegrainedRecord& r) {
  return ojson{{"prompt_id", r.prompt_id},
               {"pair_id", r.pair_id},
               {"response_a", r.response_a_id},
               {"response_b", r.response_b_id},
               {"model_a", r.model_a_id},
               {"model_b", r.model_b_id},
               {"calibrated_a", scores_to_json(r.calibrated_a)},
               {"calibrated_b", scores_to_json(r.calibrated_b)},
               {"overall_a", r.overall_a},
               {"overall_b", r.overall_b},
               {"outcome", r.outcome},
               {"annotator", r.annotator_model_id}};
}

SftRecord sft_from_json(const ojson& j) {
  SftRecord r;
  r.prompt_text = j.at("prompt").get<std::string>();
  r.response_text = j.at("response").get<std::string>();
  r.question_type_id = j.at("question_type").get<std::string>();
  r.generator_model_id = j.at("model").get<std::string>();
  return r;
}

PreferenceRecord preference_from_json(const ojson& j) {
  PreferenceRecord r;
  r.prompt_text = j.at("prompt").get<std::string>();
  r.chosen_text = j.at("chosen").get<std::string>();
  r.rejected_text = j.at("rejected").get<std::string>();
  r.chosen_model_id = j.at("chosen_model").get<std::string>();
  r.rejected_model_id = j.at("rejected_model").get<std::string>();
  const ojson& s = j.at("scores");
  r.chosen_scores = scores_from_json(s.at("chosen"));
  r.rejected_scores = scores_from_json(s.at("rejected"));
  r.chosen_overall = s.at("chosen_overall").get<double>();
  r.rejected_overall = s.at("rejected_overall").get<double>();
  r.annotator_model_id = j.at("annotator").get<std::string>();
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.pair_id = j.at("pair_id").get<std::string>();
  return r;
}

FinegrainedRecord finegrained_from_json(const ojson& j) {
  FinegrainedRecord r;
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.pair_id = j.at("pair_id").get<std::string>();
  r.response_a_id = j.at("response_a").get<std::string>();
  r.response_b_id = j.at("response_b").get<std::string>();
  r.model_a_id = j.at("model_a").get<std::string>();
  r.model_b_id = j.at("model_b").get<std::string>();
  r.calibrated_a = scores_from_json(j.at("calibrated_a"));
  r.calibrated_b = scores_from_json(j.at("calibrated_b"));
  r.overall_a = j.at("overall_a").get<double>();
  r.overall_b = j.at("overall_b").get<double>();
  r.outcome = j.at("outcome").get<std::string>();
  r.annotator_model_id = j.at("annotator").get<std::string>();
  return r;
}

template <typename T>
ManifestEntry export_jsonl(std::span<const T> records, const std::filesystem::path& destination,
                           RecordKind kind) {
  std::string content;
  for (const T& r : records) {
    content += to_json(r).dump();
    content += '\n';
  }
  write_text_file_atomic(destination, content);
  ManifestEntry entry;
  entry.path = destination.string();
  entry.kind = kind;
  entry.count = records.size();
  entry.sha256 = sha256_hex(content);
  return entry;
}

template <typename T, typename FromJson>
std::vector<T> import_jsonl(const std::filesystem::path& source, FromJson from_json) {
  std::vector<T> out;
  std::string content = read_text_file(source);
  std::size_t lineno = 0;
  for (const std::string& line : split_lines(content)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(from_json(ojson::parse(line)));
    } catch (const std::exception& e) {
      throw DatasetError(source.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::string record_kind_name(RecordKind kind) {
  switch (kind) {
    case RecordKind::sft: return "sft";
    case RecordKind::preference_pairs: return "preference_pairs";
    case RecordKind::finegrained_scores: return "finegrained_scores";
  }
  return "unknown";
}

RecordKind record_kind_from_name(const std::string& name) {
  if (name == "sft") return RecordKind::sft;
  if (name == "preference_pairs") return RecordKind::preference_pairs;
  if (name == "finegrained_scores") return RecordKind::finegrained_scores;
  throw DatasetError("unknown record kind: " + name);
}

std::vector<PreferenceRecord> build_preference_records(
    const std::string& prompt_id, std::string_view prompt_text,
    std::span<const Response> pool, const SelectionResult& selection,
    std::span<const CalibratedComparison> comparisons) {
  std::set<std::string> selected(selection.selected_response_ids.begin(),
                                 selection.selected_response_ids.end());
  std::unordered_map<std::string, const Response*> by_id;
  for (const Response& r : pool) by_id[r.id] = &r;

  std::vector<PreferenceRecord> out;
  for (const CalibratedComparison& c : comparisons) {
    if (!selected.count(c.response_a_id) || !selected.count(c.response_b_id)) {
      throw DatasetError("comparison references unselected response: " + c.response_a_id +
                         " / " + c.response_b_id);
    }
    auto label = derive_label(c);
    if (!label) continue;  // ties carry no preference

    const Response* chosen = by_id.at(label->chosen_id);
    const Response* rejected = by_id.at(label->rejected_id);
    bool a_chosen = label->chosen_id == c.response_a_id;

    PreferenceRecord r;
    r.prompt_id = prompt_id;
    r.pair_id = prompt_id + "::" + c.response_a_id + "::" + c.response_b_id;
    r.prompt_text = std::string(prompt_text);
    r.chosen_text = chosen->text;
    r.rejected_text = rejected->text;
    r.chosen_model_id = chosen->model_id;
    r.rejected_model_id = rejected->model_id;
    r.chosen_scores = a_chosen ? c.calibrated_a : c.calibrated_b;
    r.rejected_scores = a_chosen ? c.calibrated_b : c.calibrated_a;
    r.chosen_overall = a_chosen ? c.overall_a : c.overall_b;
    r.rejected_overall = a_chosen ? c.overall_b : c.overall_a;
    r.annotator_model_id = c.annotator_model_id;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<FinegrainedRecord> build_finegrained_records(
    std::span<const Response> pool, std::span<const CalibratedComparison> comparisons) {
  std::unordered_map<std::string, const Response*> by_id;
  for (const Response& r : pool) by_id[r.id] = &r;

  std::vector<FinegrainedRecord> out;
  for (const CalibratedComparison& c : comparisons) {
    FinegrainedRecord r;
    r.prompt_id = c.prompt_id;
    r.pair_id = c.prompt_id + "::" + c.response_a_id + "::" + c.response_b_id;
    r.response_a_id = c.response_a_id;
    r.response_b_id = c.response_b_id;
    auto a = by_id.find(c.response_a_id);
    auto b = by_id.find(c.response_b_id);
    r.model_a_id = a == by_id.end() ? "" : a->second->model_id;
    r.model_b_id = b == by_id.end() ? "" : b->second->model_id;
    r.calibrated_a = c.calibrated_a;
    r.calibrated_b = c.calibrated_b;
    r.overall_a = c.overall_a;
    r.overall_b = c.overall_b;
    switch (c.outcome) {
      case ComparisonOutcome::a_preferred: r.outcome = "a_preferred"; break;
      case ComparisonOutcome::b_preferred: r.outcome = "b_preferred"; break;
      case ComparisonOutcome::tie: r.outcome = "tie"; break;
    }
    r.annotator_model_id = c.annotator_model_id;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SftRecord> derive_sft(std::span<const SftGroup> groups, std::uint64_t seed,
                                  std::vector<std::string>* warnings) {
  std::vector<SftRecord> out;
  for (const SftGroup& g : groups) {
    if (g.options.empty()) {
      if (warnings) {
        warnings->push_back("question type " + g.question_type_id +
                            " has no final prompts; skipped");
      }
      continue;
    }
    std::size_t index = 0;
    if (g.options.size() > 1) {
      // keyed by type id so the pick is stable under group reordering
      DetRng rng(mix_seed(seed, g.question_type_id));
      index = rng.uniform_index(g.options.size());
    }
    const SftGroup::Option& opt = g.options[index];
    out.push_back({opt.prompt_text, opt.response_text, g.question_type_id,
                   opt.generator_model_id});
  }
  return out;
}

DatasetSplit split_halves(std::span<const std::string> record_ids, std::uint64_t seed) {
  if (record_ids.size() < 2) {
    throw DatasetError("split_halves requires at least 2 records");
  }
  std::vector<std::string> ids(record_ids.begin(), record_ids.end());
  DetRng rng(seed);
  rng.shuffle(ids);
  std::size_t half = (ids.size() + 1) / 2;  // odd counts favor half_a
  DatasetSplit split;
  split.seed = seed;
  split.half_a.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(half));
  split.half_b.assign(ids.begin() + static_cast<std::ptrdiff_t>(half), ids.end());
  return split;
}

MeanStd mean_std(std::span<const int> counts) {
  MeanStd ms;
  if (counts.empty()) return ms;
  double sum = 0.0;
  for (int c : counts) sum += c;
  ms.mean = sum / static_cast<double>(counts.size());
  if (counts.size() < 2) return ms;  // std 0 by convention
  double ss = 0.0;
  for (int c : counts) {
    double d = c - ms.mean;
    ss += d * d;
  }
  ms.std_dev = std::sqrt(ss / static_cast<double>(counts.size() - 1));
  return ms;
}

DatasetStats compute_stats(std::span<const PreferenceRecord> records,
                           const TokenEncoder& encoder,
                           const std::map<std::string, std::string>* discipline_by_prompt_id) {
  DatasetStats stats;
  stats.sample_count = records.size();

  std::set<std::string> unique_prompts;
  std::set<std::string> unique_prompt_ids;
  std::vector<int> prompt_tokens;
  std::vector<int> response_tokens;
  for (const PreferenceRecord& r : records) {
    if (unique_prompts.insert(r.prompt_text).second) {
      prompt_tokens.push_back(encoder.count_tokens(r.prompt_text));
    }
    response_tokens.push_back(encoder.count_tokens(r.chosen_text));
    response_tokens.push_back(encoder.count_tokens(r.rejected_text));
    if (discipline_by_prompt_id && unique_prompt_ids.insert(r.prompt_id).second) {
      auto it = discipline_by_prompt_id->find(r.prompt_id);
      if (it != discipline_by_prompt_id->end()) {
        ++stats.per_discipline_prompt_counts[it->second];
      }
    }
  }
  stats.unique_prompt_count = unique_prompts.size();
  MeanStd p = mean_std(prompt_tokens);
  MeanStd q = mean_std(response_tokens);
  stats.prompt_token_mean = p.mean;
  stats.prompt_token_std = p.std_dev;
  stats.response_token_mean = q.mean;
  stats.response_token_std = q.std_dev;
  return stats;
}

DatasetStats compute_stats_sft(std::span<const SftRecord> records,
                               const TokenEncoder& encoder) {
  DatasetStats stats;
  stats.sample_count = records.size();
  std::set<std::string> unique_prompts;
  std::vector<int> prompt_tokens;
  std::vector<int> response_tokens;
  for (const SftRecord& r : records) {
    if (unique_prompts.insert(r.prompt_text).second) {
      prompt_tokens.push_back(encoder.count_tokens(r.prompt_text));
    }
    response_tokens.push_back(encoder.count_tokens(r.response_text));
  }
  stats.unique_prompt_count = unique_prompts.size();
  MeanStd p = mean_std(prompt_tokens);
  MeanStd q = mean_std(response_tokens);
  stats.prompt_token_mean = p.mean;
  stats.prompt_token_std = p.std_dev;
  stats.response_token_mean = q.mean;
  stats.response_token_std = q.std_dev;
  return stats;
}

ManifestEntry export_records(std::span<const SftRecord> records,
                             const std::filesystem::path& destination) {
  return export_jsonl(records, destination, RecordKind::sft);
}

ManifestEntry export_records(std::span<const PreferenceRecord> records,
                             const std::filesystem::path& destination) {
  return export_jsonl(records, destination, RecordKind::preference_pairs);
}

ManifestEntry export_records(std::span<const FinegrainedRecord> records,
                             const std::filesystem::path& destination) {
  return export_jsonl(records, destination, RecordKind::finegrained_scores);
}

std::vector<SftRecord> import_sft_records(const std::filesystem::path& source) {
  return import_jsonl<SftRecord>(source, sft_from_json);
}

std::vector<PreferenceRecord> import_preference_records(const std::filesystem::path& source) {
  return import_jsonl<PreferenceRecord>(source, preference_from_json);
}

std::vector<FinegrainedRecord> import_finegrained_records(const std::filesystem::path& source) {
  return import_jsonl<FinegrainedRecord>(source, finegrained_from_json);
}

}  // namespace taxpref
