#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "taxpref/judge.hpp"
#include "taxpref/response_pool.hpp"
#include "taxpref/tokenizer.hpp"

namespace taxpref {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One (x, y_w, y_l) sample with its full fine-grained scores.
struct PreferenceRecord {
  std::string prompt_id;
  std::string pair_id;
  std::string prompt_text;
  std::string chosen_text;
  std::string rejected_text;
  std::string chosen_model_id;
  std::string rejected_model_id;
  CalibratedScores chosen_scores;
  CalibratedScores rejected_scores;
  double chosen_overall = 0.0;
  double rejected_overall = 0.0;
  std::string annotator_model_id;

  bool operator==(const PreferenceRecord&) const = default;
};

struct SftRecord {
  std::string prompt_text;
  std::string response_text;
  std::string question_type_id;
  std::string generator_model_id;

  bool operator==(const SftRecord&) const = default;
};

/// Calibrated scores for one judged pair, ties included.
struct FinegrainedRecord {
  std::string prompt_id;
  std::string pair_id;
  std::string response_a_id;
  std::string response_b_id;
  std::string model_a_id;
  std::string model_b_id;
  CalibratedScores calibrated_a;
  CalibratedScores calibrated_b;
  double overall_a = 0.0;
  double overall_b = 0.0;
  std::string outcome;  // "a_preferred" | "b_preferred" | "tie"
  std::string annotator_model_id;

  bool operator==(const FinegrainedRecord&) const = default;
};

struct DatasetSplit {
  std::vector<std::string> half_a;
  std::vector<std::string> half_b;
  std::uint64_t seed = 0;
};

struct DatasetStats {
  std::size_t sample_count = 0;
  std::size_t unique_prompt_count = 0;
  double prompt_token_mean = 0.0;
  double prompt_token_std = 0.0;
  double response_token_mean = 0.0;
  double response_token_std = 0.0;
  std::map<std::string, std::size_t> per_discipline_prompt_counts;
};

/// One flagship option for a question type in the SFT derivation.
struct SftGroup {
  std::string question_type_id;
  struct Option {
    std::string prompt_text;
    std::string response_text;
    std::string generator_model_id;
  };
  std::vector<Option> options;
};

enum class RecordKind { sft, preference_pairs, finegrained_scores };

std::string record_kind_name(RecordKind kind);
RecordKind record_kind_from_name(const std::string& name);

struct ManifestEntry {
  std::string path;
  RecordKind kind = RecordKind::sft;
  std::size_t count = 0;
  std::string sha256;
};

/// One record per non-tie comparison among the selected responses.
/// Comparisons must reference selected responses only.
std::vector<PreferenceRecord> build_preference_records(
    const std::string& prompt_id, std::string_view prompt_text,
    std::span<const Response> pool, const SelectionResult& selection,
    std::span<const CalibratedComparison> comparisons);

std::vector<FinegrainedRecord> build_finegrained_records(
    std::span<const Response> pool, std::span<const CalibratedComparison> comparisons);

/// Exactly one record per question type with at least one option; the pick
/// among multiple options is uniform and a pure function of (seed, type id).
std::vector<SftRecord> derive_sft(std::span<const SftGroup> groups, std::uint64_t seed,
                                  std::vector<std::string>* warnings = nullptr);

/// Seeded shuffle then bisection; odd counts give half_a the extra element.
DatasetSplit split_halves(std::span<const std::string> record_ids, std::uint64_t seed);

struct MeanStd {
  double mean = 0.0;
  double std_dev = 0.0;  // Bessel-corrected; 0 for fewer than two values
};
MeanStd mean_std(std::span<const int> counts);

/// Token statistics under the named encoding. Prompt statistics run over
/// unique prompt texts; response statistics over every chosen/rejected text.
/// `discipline_by_prompt_id` (optional) fills the per-discipline counts.
DatasetStats compute_stats(std::span<const PreferenceRecord> records,
                           const TokenEncoder& encoder,
                           const std::map<std::string, std::string>* discipline_by_prompt_id =
                               nullptr);

DatasetStats compute_stats_sft(std::span<const SftRecord> records, const TokenEncoder& encoder);

// Line-delimited JSON with a fixed field order per kind (docs/formats.md).
// Files are written atomically; the returned entry carries the content hash
// for the run manifest.
ManifestEntry export_records(std::span<const SftRecord> records,
                             const std::filesystem::path& destination);
ManifestEntry export_records(std::span<const PreferenceRecord> records,
                             const std::filesystem::path& destination);
ManifestEntry export_records(std::span<const FinegrainedRecord> records,
                             const std::filesystem::path& destination);

std::vector<SftRecord> import_sft_records(const std::filesystem::path& source);
std::vector<PreferenceRecord> import_preference_records(const std::filesystem::path& source);
std::vector<FinegrainedRecord> import_finegrained_records(const std::filesystem::path& source);

}  // namespace taxpref
