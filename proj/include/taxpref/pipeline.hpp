#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "taxpref/backends.hpp"
#include "taxpref/dataset.hpp"
#include "taxpref/embedding.hpp"
#include "taxpref/gateway.hpp"
#include "taxpref/judge.hpp"
#include "taxpref/prompt_forge.hpp"
#include "taxpref/response_pool.hpp"
#include "taxpref/taxonomy.hpp"
#include "taxpref/templates.hpp"
#include "taxpref/tokenizer.hpp"

namespace taxpref {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Run-directory state disagrees with the config (hash mismatch, foreign
/// ledger entries). Exit code 4.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A stage did not complete; the run directory stays resumable. Exit code 3.
struct StageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Stage { types, refined, prompts, responses, selected, judged, exported };

inline constexpr Stage kStageOrder[] = {Stage::types,    Stage::refined,  Stage::prompts,
                                        Stage::responses, Stage::selected, Stage::judged,
                                        Stage::exported};

std::string stage_name(Stage stage);
Stage stage_from_name(const std::string& name);

struct RunSeeds {
  std::uint64_t types = 1;
  std::uint64_t refine = 2;
  std::uint64_t prompts = 3;
  std::uint64_t responses = 4;
  std::uint64_t select = 5;
  std::uint64_t judge = 6;
  std::uint64_t sft = 7;
  std::uint64_t split = 8;
};

struct RunConfig {
  std::filesystem::path base_dir;  // directory of the config file
  std::filesystem::path taxonomy_path;
  std::filesystem::path registry_path;
  SubjectFilter filter;

  struct TemplatePaths {
    std::filesystem::path question_types;
    std::filesystem::path refine;
    std::filesystem::path draft;
    std::filesystem::path feasibility;
    std::filesystem::path response_system;
    std::filesystem::path annotation;
  } templates;

  struct ModelRoles {
    std::string generator;
    std::string checker;
    std::string flagship;
    std::string annotator;
  } models;

  int clusters = 5;
  std::string embedding = "ngram-hash-64";
  std::string encoding = "cl100k_base";
  GatewayPolicy gateway;
  int parse_retries = 2;
  Sampling sampling;
  RunSeeds seeds;
  AnnotationWeights weights;

  std::string raw_text;  // config file bytes, hashed into run_meta
};

/// Parses and structurally validates the config file. Referenced files are
/// checked when a Pipeline is constructed.
RunConfig load_config(const std::filesystem::path& path);

struct RunOptions {
  bool resume = true;
  // Cap on new items per stage in this invocation; the stage is left
  // incomplete (and resumable) when it truncates work.
  std::optional<int> max_items;
  std::map<std::string, std::uint64_t> seed_overrides;  // stage name -> seed
};

struct Checkpoint {
  Stage stage = Stage::types;
  std::vector<std::string> completed;  // ledger item ids, sorted
  std::size_t item_count = 0;
  std::map<std::string, std::string> input_hashes;
  bool complete() const { return completed.size() == item_count; }
};

class Pipeline {
 public:
  /// Loads all referenced inputs, pins (or verifies) the run directory's
  /// input hashes, and prepares the gateway. Passing a backend overrides the
  /// default endpoint routing (tests use this).
  Pipeline(RunConfig config, std::filesystem::path run_dir, RunOptions options = {},
           std::shared_ptr<ChatBackend> backend = nullptr);

  /// Processes every item of `stage` that is not yet in the ledger. Requires
  /// the previous stage to be complete. Item failures are collected; the
  /// stage then throws StageFailure but keeps completed items on disk.
  Checkpoint run_stage(Stage stage);

  /// All stages in order; returns the final manifest. Aborts (resumable) on
  /// the first stage that does not complete.
  nlohmann::ordered_json run_all();

  Checkpoint checkpoint(Stage stage);

  /// subject -> discipline mapping joined through the ledgers, for
  /// per-discipline statistics.
  std::map<std::string, std::string> discipline_by_prompt_id();

  const RunConfig& config() const { return config_; }
  const std::filesystem::path& run_dir() const { return run_dir_; }
  const std::vector<ModelSpec>& registry() const { return gateway_->registry(); }
  const Taxonomy& filtered_taxonomy() const { return filtered_; }

  std::filesystem::path export_path(RecordKind kind) const;

  /// Re-runs the export builders against an arbitrary destination directory
  /// without touching the ledger. Requires the judged stage to be complete.
  std::vector<ManifestEntry> export_to(const std::filesystem::path& out_dir);

 private:
  struct LedgerEntry;

  std::filesystem::path ledger_dir(Stage stage) const;
  std::filesystem::path ledger_path(Stage stage, const std::string& item_id) const;
  void write_ledger(Stage stage, const std::string& item_id, nlohmann::ordered_json entry);
  std::map<std::string, nlohmann::ordered_json> read_ledger(Stage stage);

  std::vector<std::string> stage_items(Stage stage);
  void process_item(Stage stage, const std::string& item_id);
  void pin_or_verify_meta();
  std::map<std::string, std::string> input_hashes() const;
  std::uint64_t stage_seed(const std::string& name, std::uint64_t configured) const;

  nlohmann::ordered_json build_manifest_and_exports(
      const std::optional<std::filesystem::path>& override_dir);

  // loaded inputs
  RunConfig config_;
  std::filesystem::path run_dir_;
  RunOptions options_;
  Taxonomy taxonomy_;
  Taxonomy filtered_;
  std::vector<Subject> subjects_;
  PromptTemplate tpl_types_, tpl_refine_, tpl_draft_, tpl_feasibility_;
  PromptTemplate tpl_response_system_, tpl_annotation_;
  std::shared_ptr<const TokenEncoder> encoder_;
  std::shared_ptr<const Embedder> embedder_;
  std::unique_ptr<Gateway> gateway_;
  RunSeeds seeds_;
};

}  // namespace taxpref
