#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "taxpref/dataset.hpp"
#include "taxpref/pipeline.hpp"
#include "taxpref/reward_math.hpp"
#include "taxpref/util.hpp"

namespace {

using nlohmann::ordered_json;
using namespace taxpref;

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitIntegrity = 4;

struct SeedOverrides {
  std::map<std::string, std::uint64_t> values;
};

void parse_seed_override(const std::string& arg, SeedOverrides& out) {
  std::size_t eq = arg.find('=');
  if (eq == std::string::npos) {
    throw CLI::ValidationError("--seed-override expects <stage>=<integer>");
  }
  out.values[arg.substr(0, eq)] = std::stoull(arg.substr(eq + 1));
}

ordered_json stats_to_json(const DatasetStats& stats) {
  ordered_json per_discipline = ordered_json::object();
  for (const auto& [id, n] : stats.per_discipline_prompt_counts) per_discipline[id] = n;
  return ordered_json{{"sample_count", stats.sample_count},
                      {"unique_prompt_count", stats.unique_prompt_count},
                      {"prompt_token_mean", stats.prompt_token_mean},
                      {"prompt_token_std", stats.prompt_token_std},
                      {"response_token_mean", stats.response_token_mean},
                      {"response_token_std", stats.response_token_std},
                      {"per_discipline_prompt_counts", per_discipline}};
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Taxonomy-guided preference dataset pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string run_dir;
  bool no_resume = false;
  int max_items = -1;
  std::vector<std::string> seed_override_args;

  auto add_run_flags = [&](CLI::App* cmd, bool needs_run_dir) {
    cmd->add_option("--config", config_path, "Path to the run config JSON")->required();
    if (needs_run_dir) {
      cmd->add_option("--run-dir", run_dir, "Run directory (checkpoints, exports)")
          ->required();
      cmd->add_flag("--no-resume", no_resume,
                    "Refuse to reuse an existing run directory");
      cmd->add_option("--max-items", max_items,
                      "Process at most N new items per stage (stage stays resumable)");
      cmd->add_option("--seed-override", seed_override_args,
                      "Override a stage seed, e.g. --seed-override judge=42")
          ->take_all();
    }
  };

  CLI::App* validate = app.add_subcommand("validate-config", "Check config and inputs");
  add_run_flags(validate, false);

  CLI::App* run = app.add_subcommand("run", "Run all pipeline stages");
  add_run_flags(run, true);

  std::string stage_arg;
  CLI::App* run_stage_cmd = app.add_subcommand("run-stage", "Run a single stage");
  run_stage_cmd->add_option("stage", stage_arg,
                            "types|refined|prompts|responses|selected|judged|exported")
      ->required();
  add_run_flags(run_stage_cmd, true);

  std::string stats_input, stats_kind = "preference_pairs", stats_encoding;
  CLI::App* stats_cmd = app.add_subcommand("stats", "Dataset statistics for an export");
  stats_cmd->add_option("--run-dir", run_dir, "Run directory holding exports/");
  stats_cmd->add_option("--config", config_path, "Config (required with --run-dir)");
  stats_cmd->add_option("--input", stats_input, "Standalone export file (JSONL)");
  stats_cmd->add_option("--kind", stats_kind, "sft|preference_pairs");
  stats_cmd->add_option("--encoding", stats_encoding,
                        "Token encoding id (defaults to the config's)");

  std::string export_out;
  CLI::App* export_cmd = app.add_subcommand("export", "Re-export datasets from a run dir");
  add_run_flags(export_cmd, true);
  export_cmd->add_option("--out-dir", export_out, "Destination directory")->required();

  std::string losses_input;
  double loss_r = 5.0, loss_lambda = 0.05;
  CLI::App* losses_cmd =
      app.add_subcommand("losses", "Evaluate reward-model losses over a score export");
  losses_cmd->add_option("--input", losses_input, "finegrained_scores.jsonl")->required();
  losses_cmd->add_option("--r-bound", loss_r, "Reward bound R (default 5)");
  losses_cmd->add_option("--lambda", loss_lambda, "Auxiliary weight (default 0.05)");

  CLI11_PARSE(app, argc, argv);

  RunOptions options;
  options.resume = !no_resume;
  if (max_items >= 0) options.max_items = max_items;
  SeedOverrides overrides;
  for (const std::string& arg : seed_override_args) parse_seed_override(arg, overrides);
  options.seed_overrides = overrides.values;

  if (validate->parsed()) {
    RunConfig cfg = load_config(config_path);
    // constructing against a scratch directory loads and checks every input
    std::filesystem::path scratch =
        std::filesystem::temp_directory_path() /
        ("taxpref-validate-" + sha256_hex(cfg.raw_text).substr(0, 12));
    std::filesystem::remove_all(scratch);
    Pipeline pipeline(cfg, scratch, options);
    ordered_json summary{
        {"subjects", pipeline.filtered_taxonomy().subjects.size()},
        {"disciplines", pipeline.filtered_taxonomy().disciplines.size()},
        {"categories", pipeline.filtered_taxonomy().categories.size()},
        {"models", pipeline.registry().size()},
        {"clusters", pipeline.config().clusters},
        {"encoding", pipeline.config().encoding}};
    std::cout << summary.dump(2) << "\n";
    std::filesystem::remove_all(scratch);
    return 0;
  }

  if (run->parsed()) {
    Pipeline pipeline(load_config(config_path), run_dir, options);
    ordered_json manifest = pipeline.run_all();
    std::cout << manifest.dump(2) << "\n";
    return 0;
  }

  if (run_stage_cmd->parsed()) {
    Pipeline pipeline(load_config(config_path), run_dir, options);
    Checkpoint cp = pipeline.run_stage(stage_from_name(stage_arg));
    ordered_json summary{{"stage", stage_name(cp.stage)},
                         {"items", cp.item_count},
                         {"completed", cp.completed.size()},
                         {"complete", cp.complete()}};
    std::cout << summary.dump(2) << "\n";
    return cp.complete() ? 0 : kExitStage;
  }

  if (stats_cmd->parsed()) {
    if (!run_dir.empty()) {
      if (config_path.empty()) {
        throw ConfigError("stats --run-dir requires --config");
      }
      Pipeline pipeline(load_config(config_path), run_dir, options);
      std::string encoding =
          stats_encoding.empty() ? pipeline.config().encoding : stats_encoding;
      auto encoder = find_encoder(encoding);
      if (stats_kind == "preference_pairs") {
        auto records =
            import_preference_records(pipeline.export_path(RecordKind::preference_pairs));
        auto disciplines = pipeline.discipline_by_prompt_id();
        DatasetStats stats = compute_stats(records, *encoder, &disciplines);
        std::cout << stats_to_json(stats).dump(2) << "\n";
      } else if (stats_kind == "sft") {
        auto records = import_sft_records(pipeline.export_path(RecordKind::sft));
        DatasetStats stats = compute_stats_sft(records, *encoder);
        std::cout << stats_to_json(stats).dump(2) << "\n";
      } else {
        throw ConfigError("stats supports kinds: sft, preference_pairs");
      }
      return 0;
    }
    if (stats_input.empty()) {
      throw ConfigError("stats requires --run-dir or --input");
    }
    std::string encoding = stats_encoding.empty() ? "cl100k_base" : stats_encoding;
    auto encoder = find_encoder(encoding);
    if (stats_kind == "preference_pairs") {
      auto records = import_preference_records(stats_input);
      std::cout << stats_to_json(compute_stats(records, *encoder)).dump(2) << "\n";
    } else if (stats_kind == "sft") {
      auto records = import_sft_records(stats_input);
      std::cout << stats_to_json(compute_stats_sft(records, *encoder)).dump(2) << "\n";
    } else {
      throw ConfigError("stats supports kinds: sft, preference_pairs");
    }
    return 0;
  }

  if (export_cmd->parsed()) {
    Pipeline pipeline(load_config(config_path), run_dir, options);
    std::vector<ManifestEntry> entries = pipeline.export_to(export_out);
    ordered_json out = ordered_json::array();
    for (const ManifestEntry& e : entries) {
      out.push_back(ordered_json{{"kind", record_kind_name(e.kind)},
                                 {"path", e.path},
                                 {"count", e.count},
                                 {"sha256", e.sha256}});
    }
    std::cout << out.dump(2) << "\n";
    return 0;
  }

  if (losses_cmd->parsed()) {
    auto records = import_finegrained_records(losses_input);
    reward::LossParams params{loss_r, loss_lambda};
    double loss_sum = 0.0, penalty_sum = 0.0;
    std::size_t ties = 0, in_range = 0;
    for (const FinegrainedRecord& r : records) {
      // the winner's overall plays r_w; ties contribute a zero margin
      reward::RewardPair pair{std::max(r.overall_a, r.overall_b),
                              std::min(r.overall_a, r.overall_b)};
      loss_sum += reward::pairwise_loss(pair, params);
      penalty_sum += reward::range_penalty(pair, params.R);
      if (r.outcome == "tie") ++ties;
      if (std::abs(pair.r_w) <= params.R && std::abs(pair.r_l) <= params.R) ++in_range;
    }
    std::size_t n = records.size();
    ordered_json out{{"records", n},
                     {"ties", ties},
                     {"mean_loss", n ? loss_sum / static_cast<double>(n) : 0.0},
                     {"mean_penalty", n ? penalty_sum / static_cast<double>(n) : 0.0},
                     {"in_range_fraction", n ? static_cast<double>(in_range) /
                                                   static_cast<double>(n)
                                             : 0.0},
                     {"r_bound", params.R},
                     {"lambda", params.lambda}};
    std::cout << out.dump(2) << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const StageFailure& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return kExitStage;
  } catch (const GatewayException& e) {
    std::cerr << "gateway error: " << e.what() << "\n";
    return kExitStage;
  } catch (const TaxonomyError& e) {
    std::cerr << "taxonomy error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TemplateError& e) {
    std::cerr << "template error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
