#include "taxpref/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <set>
#include <thread>

#include "taxpref/util.hpp"

namespace taxpref {

namespace {

using ojson = nlohmann::ordered_json;

// --- ledger serialization --------------------------------------------------

ojson qt_to_json(const QuestionType& qt) {
  return ojson{{"id", qt.id},
               {"subject_id", qt.subject_id},
               {"name", qt.name},
               {"description", qt.description},
               {"round_index", qt.round_index}};
}

QuestionType qt_from_json(const ojson& j) {
  QuestionType qt;
  qt.id = j.at("id").get<std::string>();
  qt.subject_id = j.at("subject_id").get<std::string>();
  qt.name = j.at("name").get<std::string>();
  qt.description = j.at("description").get<std::string>();
  qt.round_index = j.at("round_index").get<int>();
  return qt;
}

std::string completeness_name(Completeness c) {
  switch (c) {
    case Completeness::unchecked: return "unchecked";
    case Completeness::complete: return "complete";
    case Completeness::incomplete: return "incomplete";
  }
  return "unchecked";
}

Completeness completeness_from_name(const std::string& s) {
  if (s == "complete") return Completeness::complete;
  if (s == "incomplete") return Completeness::incomplete;
  return Completeness::unchecked;
}

std::string feasibility_name(Feasibility f) {
  switch (f) {
    case Feasibility::unchecked: return "unchecked";
    case Feasibility::feasible: return "feasible";
    case Feasibility::infeasible: return "infeasible";
  }
  return "unchecked";
}

Feasibility feasibility_from_name(const std::string& s) {
  if (s == "feasible") return Feasibility::feasible;
  if (s == "infeasible") return Feasibility::infeasible;
  return Feasibility::unchecked;
}

std::string status_name(CandidateStatus s) {
  switch (s) {
    case CandidateStatus::draft: return "draft";
    case CandidateStatus::final_: return "final";
    case CandidateStatus::discarded: return "discarded";
  }
  return "draft";
}

CandidateStatus status_from_name(const std::string& s) {
  if (s == "final") return CandidateStatus::final_;
  if (s == "discarded") return CandidateStatus::discarded;
  return CandidateStatus::draft;
}

ojson candidate_to_json(const PromptCandidate& c) {
  return ojson{{"id", c.id},
               {"question_type_id", c.question_type_id},
               {"text", c.text},
               {"completeness", completeness_name(c.completeness)},
               {"feasibility", feasibility_name(c.feasibility)},
               {"regen_attempts", c.regen_attempts},
               {"status", status_name(c.status)}};
}

PromptCandidate candidate_from_json(const ojson& j) {
  PromptCandidate c;
  c.id = j.at("id").get<std::string>();
  c.question_type_id = j.at("question_type_id").get<std::string>();
  c.text = j.at("text").get<std::string>();
  c.completeness = completeness_from_name(j.at("completeness").get<std::string>());
  c.feasibility = feasibility_from_name(j.at("feasibility").get<std::string>());
  c.regen_attempts = j.at("regen_attempts").get<int>();
  c.status = status_from_name(j.at("status").get<std::string>());
  return c;
}

ojson production_to_json(const PromptProduction& p) {
  ojson attempts = ojson::array();
  for (const PromptAttempt& a : p.attempts) {
    ojson entry{{"attempt_index", a.attempt_index},
                {"candidate", candidate_to_json(a.candidate)},
                {"error", a.error}};
    if (a.verdict) {
      entry["verdict"] = ojson{{"feasible", a.verdict->feasible}, {"reason", a.verdict->reason}};
    }
    attempts.push_back(std::move(entry));
  }
  return ojson{{"candidate", candidate_to_json(p.candidate)},
               {"attempts", std::move(attempts)},
               {"warnings", p.warnings}};
}

PromptProduction production_from_json(const ojson& j) {
  PromptProduction p;
  p.candidate = candidate_from_json(j.at("candidate"));
  for (const ojson& entry : j.at("attempts")) {
    PromptAttempt a;
    a.attempt_index = entry.at("attempt_index").get<int>();
    a.candidate = candidate_from_json(entry.at("candidate"));
    a.error = entry.at("error").get<std::string>();
    if (entry.contains("verdict")) {
      a.verdict = FeasibilityVerdict{entry["verdict"].at("feasible").get<bool>(),
                                     entry["verdict"].at("reason").get<std::string>()};
    }
    p.attempts.push_back(std::move(a));
  }
  p.warnings = j.at("warnings").get<std::vector<std::string>>();
  return p;
}

ojson pool_to_json(const ResponsePool& pool) {
  ojson responses = ojson::array();
  for (const Response& r : pool.responses) {
    responses.push_back(ojson{{"id", r.id},
                              {"prompt_id", r.prompt_id},
                              {"model_id", r.model_id},
                              {"text", r.text},
                              {"token_count", r.token_count}});
  }
  ojson failures = ojson::array();
  for (const GenerationFailure& f : pool.failures) {
    failures.push_back(ojson{{"model_id", f.model_id}, {"error", f.error}});
  }
  return ojson{{"responses", std::move(responses)}, {"failures", std::move(failures)}};
}

ResponsePool pool_from_json(const ojson& j) {
  ResponsePool pool;
  for (const ojson& r : j.at("responses")) {
    Response resp;
    resp.id = r.at("id").get<std::string>();
    resp.prompt_id = r.at("prompt_id").get<std::string>();
    resp.model_id = r.at("model_id").get<std::string>();
    resp.text = r.at("text").get<std::string>();
    resp.token_count = r.at("token_count").get<int>();
    pool.responses.push_back(std::move(resp));
  }
  for (const ojson& f : j.at("failures")) {
    pool.failures.push_back({f.at("model_id").get<std::string>(),
                             f.at("error").get<std::string>()});
  }
  return pool;
}

ojson assignment_to_json(const ClusterAssignment& a) {
  ojson labels = ojson::object();
  for (const auto& [id, label] : a.labels) labels[id] = label;
  return ojson{{"k", a.k},
               {"labels", std::move(labels)},
               {"centroids", a.centroids},
               {"sizes", a.sizes}};
}

ojson selection_to_json(const SelectionResult& s) {
  return ojson{{"prompt_id", s.prompt_id},
               {"selected_response_ids", s.selected_response_ids},
               {"flagship_override_applied", s.flagship_override_applied}};
}

SelectionResult selection_from_json(const ojson& j) {
  SelectionResult s;
  s.prompt_id = j.at("prompt_id").get<std::string>();
  s.selected_response_ids = j.at("selected_response_ids").get<std::vector<std::string>>();
  s.flagship_override_applied = j.at("flagship_override_applied").get<bool>();
  return s;
}

ojson calibrated_to_json(const CalibratedScores& s) {
  return ojson{{"relevance", s.relevance},
               {"correctness", s.correctness},
               {"clarity", s.clarity},
               {"completeness", s.completeness}};
}

CalibratedScores calibrated_from_json(const ojson& j) {
  CalibratedScores s;
  s.relevance = j.at("relevance").get<double>();
  s.correctness = j.at("correctness").get<double>();
  s.clarity = j.at("clarity").get<double>();
  s.completeness = j.at("completeness").get<double>();
  return s;
}

std::string outcome_name(ComparisonOutcome o) {
  switch (o) {
    case ComparisonOutcome::a_preferred: return "a_preferred";
    case ComparisonOutcome::b_preferred: return "b_preferred";
    case ComparisonOutcome::tie: return "tie";
  }
  return "tie";
}

ComparisonOutcome outcome_from_name(const std::string& s) {
  if (s == "a_preferred") return ComparisonOutcome::a_preferred;
  if (s == "b_preferred") return ComparisonOutcome::b_preferred;
  return ComparisonOutcome::tie;
}

ojson comparison_to_json(const CalibratedComparison& c) {
  return ojson{{"prompt_id", c.prompt_id},
               {"response_a_id", c.response_a_id},
               {"response_b_id", c.response_b_id},
               {"calibrated_a", calibrated_to_json(c.calibrated_a)},
               {"calibrated_b", calibrated_to_json(c.calibrated_b)},
               {"overall_a", c.overall_a},
               {"overall_b", c.overall_b},
               {"outcome", outcome_name(c.outcome)},
               {"annotator_model_id", c.annotator_model_id}};
}

CalibratedComparison comparison_from_json(const ojson& j) {
  CalibratedComparison c;
  c.prompt_id = j.at("prompt_id").get<std::string>();
  c.response_a_id = j.at("response_a_id").get<std::string>();
  c.response_b_id = j.at("response_b_id").get<std::string>();
  c.calibrated_a = calibrated_from_json(j.at("calibrated_a"));
  c.calibrated_b = calibrated_from_json(j.at("calibrated_b"));
  c.overall_a = j.at("overall_a").get<double>();
  c.overall_b = j.at("overall_b").get<double>();
  c.outcome = outcome_from_name(j.at("outcome").get<std::string>());
  c.annotator_model_id = j.at("annotator_model_id").get<std::string>();
  return c;
}

// --- config parsing ---------------------------------------------------------

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::uint64_t seed_field(const ojson& j, const char* key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  return j[key].get<std::uint64_t>();
}

}  // namespace

std::string stage_name(Stage stage) {
  switch (stage) {
    case Stage::types: return "types";
    case Stage::refined: return "refined";
    case Stage::prompts: return "prompts";
    case Stage::responses: return "responses";
    case Stage::selected: return "selected";
    case Stage::judged: return "judged";
    case Stage::exported: return "exported";
  }
  return "types";
}

Stage stage_from_name(const std::string& name) {
  for (Stage s : kStageOrder) {
    if (stage_name(s) == name) return s;
  }
  throw ConfigError("unknown stage name: " + name);
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig cfg;
  cfg.raw_text = read_text_file(path);
  cfg.base_dir = std::filesystem::absolute(path).parent_path();

  ojson doc;
  try {
    doc = ojson::parse(cfg.raw_text);
  } catch (const std::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }

  try {
    cfg.taxonomy_path = resolve(cfg.base_dir, doc.at("taxonomy").get<std::string>());
    cfg.registry_path = resolve(cfg.base_dir, doc.at("registry").get<std::string>());

    if (doc.contains("filter")) {
      const ojson& f = doc["filter"];
      if (f.contains("excluded_discipline_ids")) {
        for (const auto& id : f["excluded_discipline_ids"]) {
          cfg.filter.excluded_discipline_ids.insert(id.get<std::string>());
        }
      }
      if (f.contains("include_overrides")) {
        cfg.filter.include_overrides =
            f["include_overrides"].get<std::vector<std::string>>();
      }
    }

    const ojson& tpl = doc.at("templates");
    cfg.templates.question_types =
        resolve(cfg.base_dir, tpl.at("question_types").get<std::string>());
    cfg.templates.refine = resolve(cfg.base_dir, tpl.at("refine").get<std::string>());
    cfg.templates.draft = resolve(cfg.base_dir, tpl.at("draft").get<std::string>());
    cfg.templates.feasibility =
        resolve(cfg.base_dir, tpl.at("feasibility").get<std::string>());
    cfg.templates.response_system =
        resolve(cfg.base_dir, tpl.at("response_system").get<std::string>());
    cfg.templates.annotation = resolve(cfg.base_dir, tpl.at("annotation").get<std::string>());

    const ojson& models = doc.at("models");
    cfg.models.generator = models.at("generator").get<std::string>();
    cfg.models.checker = models.at("checker").get<std::string>();
    cfg.models.flagship = models.at("flagship").get<std::string>();
    cfg.models.annotator = models.at("annotator").get<std::string>();

    cfg.clusters = doc.value("clusters", 5);
    if (cfg.clusters < 1) throw ConfigError("clusters must be >= 1");
    cfg.embedding = doc.value("embedding", std::string("ngram-hash-64"));
    cfg.encoding = doc.value("encoding", std::string("cl100k_base"));
    cfg.parse_retries = doc.value("parse_retries", 2);

    if (doc.contains("gateway")) {
      const ojson& g = doc["gateway"];
      cfg.gateway.max_attempts = g.value("max_attempts", 3);
      cfg.gateway.backoff.base = std::chrono::milliseconds(g.value("backoff_base_ms", 100));
      cfg.gateway.backoff.multiplier = g.value("backoff_multiplier", 2.0);
      cfg.gateway.backoff.max = std::chrono::milliseconds(g.value("backoff_max_ms", 5000));
      cfg.gateway.global_concurrency = g.value("global_concurrency", 8);
      cfg.gateway.per_model_rate = g.value("per_model_rate", 600.0);
      cfg.gateway.rate_window = std::chrono::milliseconds(g.value("rate_window_ms", 60000));
      cfg.gateway.attempt_timeout =
          std::chrono::milliseconds(g.value("attempt_timeout_ms", 30000));
    }

    if (doc.contains("sampling")) {
      cfg.sampling.temperature = doc["sampling"].value("temperature", 0.0);
      cfg.sampling.max_tokens = doc["sampling"].value("max_tokens", 1024);
    }

    if (doc.contains("seeds")) {
      const ojson& s = doc["seeds"];
      cfg.seeds.types = seed_field(s, "types", cfg.seeds.types);
      cfg.seeds.refine = seed_field(s, "refine", cfg.seeds.refine);
      cfg.seeds.prompts = seed_field(s, "prompts", cfg.seeds.prompts);
      cfg.seeds.responses = seed_field(s, "responses", cfg.seeds.responses);
      cfg.seeds.select = seed_field(s, "select", cfg.seeds.select);
      cfg.seeds.judge = seed_field(s, "judge", cfg.seeds.judge);
      cfg.seeds.sft = seed_field(s, "sft", cfg.seeds.sft);
      cfg.seeds.split = seed_field(s, "split", cfg.seeds.split);
    }

    if (doc.contains("annotation_weights")) {
      auto w = doc["annotation_weights"].get<std::vector<double>>();
      if (w.size() != 4) throw ConfigError("annotation_weights must have 4 entries");
      cfg.weights = {w[0], w[1], w[2], w[3]};
      cfg.weights.validate();
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return cfg;
}

// --- pipeline ----------------------------------------------------------------

Pipeline::Pipeline(RunConfig config, std::filesystem::path run_dir, RunOptions options,
                   std::shared_ptr<ChatBackend> backend)
    : config_(std::move(config)), run_dir_(std::move(run_dir)), options_(std::move(options)) {
  try {
    taxonomy_ = parse_taxonomy(read_text_file(config_.taxonomy_path));
    std::vector<std::string> warnings;
    filtered_ = apply_filter(taxonomy_, config_.filter, &warnings);
    subjects_ = enumerate_subjects(filtered_);

    std::vector<ModelSpec> registry = load_registry(read_text_file(config_.registry_path));
    for (const std::string& role :
         {config_.models.generator, config_.models.checker, config_.models.flagship,
          config_.models.annotator}) {
      bool found = std::any_of(registry.begin(), registry.end(),
                               [&](const ModelSpec& m) { return m.model_id == role; });
      if (!found) throw ConfigError("model id not in registry: " + role);
    }

    tpl_types_ = PromptTemplate::load(config_.templates.question_types);
    tpl_refine_ = PromptTemplate::load(config_.templates.refine);
    tpl_draft_ = PromptTemplate::load(config_.templates.draft);
    tpl_feasibility_ = PromptTemplate::load(config_.templates.feasibility);
    tpl_response_system_ = PromptTemplate::load(config_.templates.response_system);
    tpl_annotation_ = PromptTemplate::load(config_.templates.annotation);

    encoder_ = find_encoder(config_.encoding);
    embedder_ = find_embedder(config_.embedding);
    config_.weights.validate();

    if (!backend) backend = std::make_shared<RoutingBackend>();
    gateway_ = std::make_unique<Gateway>(std::move(registry), std::move(backend),
                                         config_.gateway);
  } catch (const ConfigError&) {
    throw;
  } catch (const IntegrityError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  seeds_ = config_.seeds;
  seeds_.types = stage_seed("types", seeds_.types);
  seeds_.refine = stage_seed("refine", seeds_.refine);
  seeds_.prompts = stage_seed("prompts", seeds_.prompts);
  seeds_.responses = stage_seed("responses", seeds_.responses);
  seeds_.select = stage_seed("select", seeds_.select);
  seeds_.judge = stage_seed("judge", seeds_.judge);
  seeds_.sft = stage_seed("sft", seeds_.sft);
  seeds_.split = stage_seed("split", seeds_.split);

  std::filesystem::create_directories(run_dir_);
  for (Stage s : kStageOrder) std::filesystem::create_directories(ledger_dir(s));
  std::filesystem::create_directories(run_dir_ / "exports");
  pin_or_verify_meta();
}

std::uint64_t Pipeline::stage_seed(const std::string& name, std::uint64_t configured) const {
  auto it = options_.seed_overrides.find(name);
  return it == options_.seed_overrides.end() ? configured : it->second;
}

std::map<std::string, std::string> Pipeline::input_hashes() const {
  std::map<std::string, std::string> hashes;
  hashes["config"] = sha256_hex(config_.raw_text);
  hashes["taxonomy"] = sha256_file_hex(config_.taxonomy_path);
  hashes["registry"] = sha256_file_hex(config_.registry_path);
  hashes["template.question_types"] = tpl_types_.sha256();
  hashes["template.refine"] = tpl_refine_.sha256();
  hashes["template.draft"] = tpl_draft_.sha256();
  hashes["template.feasibility"] = tpl_feasibility_.sha256();
  hashes["template.response_system"] = tpl_response_system_.sha256();
  hashes["template.annotation"] = tpl_annotation_.sha256();
  return hashes;
}

void Pipeline::pin_or_verify_meta() {
  std::filesystem::path meta_path = run_dir_ / "run_meta.json";
  ojson meta;
  meta["inputs"] = input_hashes();
  meta["seeds"] = ojson{{"types", seeds_.types},     {"refine", seeds_.refine},
                        {"prompts", seeds_.prompts}, {"responses", seeds_.responses},
                        {"select", seeds_.select},   {"judge", seeds_.judge},
                        {"sft", seeds_.sft},         {"split", seeds_.split}};
  meta["encoding"] = config_.encoding;
  meta["embedding"] = config_.embedding;
  meta["clusters"] = config_.clusters;

  if (std::filesystem::exists(meta_path)) {
    if (!options_.resume) {
      throw IntegrityError("run directory " + run_dir_.string() +
                           " already holds a run and --no-resume was given");
    }
    ojson pinned = ojson::parse(read_text_file(meta_path));
    if (pinned != meta) {
      throw IntegrityError(
          "run directory was created with different inputs (config, taxonomy, registry, "
          "templates, or seeds changed); refusing to mix runs");
    }
  } else {
    write_text_file_atomic(meta_path, meta.dump(2) + "\n");
  }
}

std::filesystem::path Pipeline::ledger_dir(Stage stage) const {
  return run_dir_ / "ledger" / stage_name(stage);
}

std::filesystem::path Pipeline::ledger_path(Stage stage, const std::string& item_id) const {
  return ledger_dir(stage) / (sanitize_filename(item_id) + ".json");
}

void Pipeline::write_ledger(Stage stage, const std::string& item_id, ojson entry) {
  entry["id"] = item_id;
  write_text_file_atomic(ledger_path(stage, item_id), entry.dump() + "\n");
}

std::map<std::string, ojson> Pipeline::read_ledger(Stage stage) {
  std::map<std::string, ojson> out;
  for (const auto& entry : std::filesystem::directory_iterator(ledger_dir(stage))) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    ojson doc = ojson::parse(read_text_file(entry.path()));
    out[doc.at("id").get<std::string>()] = std::move(doc);
  }
  return out;
}

std::vector<std::string> Pipeline::stage_items(Stage stage) {
  switch (stage) {
    case Stage::types: {
      std::vector<std::string> ids;
      ids.reserve(subjects_.size());
      for (const Subject& s : subjects_) ids.push_back(s.id);
      return ids;
    }
    case Stage::refined:
    case Stage::prompts: {
      // question types, in subject order then per-subject order
      std::map<std::string, ojson> types = read_ledger(Stage::types);
      std::vector<std::string> ids;
      for (const Subject& s : subjects_) {
        auto it = types.find(s.id);
        if (it == types.end()) continue;
        for (const ojson& qt : it->second.at("types")) {
          ids.push_back(qt.at("id").get<std::string>());
        }
      }
      return ids;
    }
    case Stage::responses:
    case Stage::selected:
    case Stage::judged: {
      // final prompts, in question-type order
      std::vector<std::string> qt_ids = stage_items(Stage::prompts);
      std::map<std::string, ojson> productions = read_ledger(Stage::prompts);
      std::vector<std::string> ids;
      for (const std::string& qt_id : qt_ids) {
        auto it = productions.find(qt_id);
        if (it == productions.end()) continue;
        PromptProduction p = production_from_json(it->second.at("production"));
        if (p.candidate.status == CandidateStatus::final_) {
          ids.push_back(p.candidate.id);
        }
      }
      return ids;
    }
    case Stage::exported:
      return {"all"};
  }
  return {};
}

Checkpoint Pipeline::checkpoint(Stage stage) {
  Checkpoint cp;
  cp.stage = stage;
  cp.item_count = stage_items(stage).size();
  cp.input_hashes = input_hashes();
  std::set<std::string> items;
  for (const std::string& id : stage_items(stage)) items.insert(id);
  for (const auto& [id, entry] : read_ledger(stage)) {
    if (!items.count(id)) {
      throw IntegrityError("ledger entry '" + id + "' in stage " + stage_name(stage) +
                           " does not correspond to any item of the previous stage");
    }
    cp.completed.push_back(id);
  }
  std::sort(cp.completed.begin(), cp.completed.end());
  return cp;
}

Checkpoint Pipeline::run_stage(Stage stage) {
  // previous stage must be complete
  const Stage* pos = std::find(std::begin(kStageOrder), std::end(kStageOrder), stage);
  if (pos != std::begin(kStageOrder)) {
    Stage prev = *(pos - 1);
    Checkpoint prev_cp = checkpoint(prev);
    if (!prev_cp.complete()) {
      throw StageFailure("stage '" + stage_name(stage) + "' requires completed stage '" +
                         stage_name(prev) + "' (" + std::to_string(prev_cp.completed.size()) +
                         "/" + std::to_string(prev_cp.item_count) + " items done)");
    }
  }

  std::vector<std::string> items = stage_items(stage);
  std::map<std::string, ojson> done = read_ledger(stage);
  std::vector<std::string> todo;
  for (const std::string& id : items) {
    if (!done.count(id)) todo.push_back(id);
  }
  if (options_.max_items && todo.size() > static_cast<std::size_t>(*options_.max_items)) {
    todo.resize(static_cast<std::size_t>(*options_.max_items));
  }

  std::vector<std::pair<std::string, std::string>> failures;
  std::mutex failures_mutex;
  std::atomic<std::size_t> next{0};
  std::size_t workers = std::min<std::size_t>(
      std::max<std::size_t>(1, static_cast<std::size_t>(config_.gateway.global_concurrency)),
      todo.size());
  if (workers <= 1) {
    for (const std::string& id : todo) {
      try {
        process_item(stage, id);
      } catch (const std::exception& e) {
        failures.emplace_back(id, e.what());
      }
    }
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= todo.size()) return;
          try {
            process_item(stage, todo[i]);
          } catch (const std::exception& e) {
            std::lock_guard lock(failures_mutex);
            failures.emplace_back(todo[i], e.what());
          }
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }

  if (!failures.empty()) {
    std::string msg = "stage '" + stage_name(stage) + "': " +
                      std::to_string(failures.size()) + " item(s) failed (first: " +
                      failures.front().first + ": " + failures.front().second +
                      "); completed items were kept, re-run to resume";
    throw StageFailure(msg);
  }
  return checkpoint(stage);
}

nlohmann::ordered_json Pipeline::run_all() {
  for (Stage stage : kStageOrder) {
    Checkpoint cp = run_stage(stage);
    if (!cp.complete()) {
      throw StageFailure("stage '" + stage_name(stage) + "' incomplete (" +
                         std::to_string(cp.completed.size()) + "/" +
                         std::to_string(cp.item_count) + " items); re-run to resume");
    }
  }
  return ojson::parse(read_text_file(run_dir_ / "manifest.json"));
}

void Pipeline::process_item(Stage stage, const std::string& item_id) {
  switch (stage) {
    case Stage::types: {
      const Subject* subject = nullptr;
      for (const Subject& s : subjects_) {
        if (s.id == item_id) subject = &s;
      }
      if (!subject) throw StageFailure("unknown subject " + item_id);
      ForgeOptions opts{config_.parse_retries, 3, config_.sampling};
      PromptForge forge(*gateway_, opts);
      SeedSeq seeds(mix_seed(seeds_.types, item_id));
      std::vector<std::string> warnings;
      std::vector<QuestionType> types = forge.generate_question_types(
          *subject, config_.models.generator, tpl_types_, seeds, &warnings);
      ojson list = ojson::array();
      for (const QuestionType& qt : types) list.push_back(qt_to_json(qt));
      write_ledger(stage, item_id,
                   ojson{{"subject_id", subject->id}, {"types", std::move(list)},
                         {"warnings", warnings}});
      return;
    }
    case Stage::refined: {
      std::map<std::string, ojson> types = read_ledger(Stage::types);
      std::optional<QuestionType> qt;
      for (const auto& [sid, entry] : types) {
        for (const ojson& t : entry.at("types")) {
          if (t.at("id").get<std::string>() == item_id) qt = qt_from_json(t);
        }
      }
      if (!qt) throw StageFailure("unknown question type " + item_id);
      ForgeOptions opts{config_.parse_retries, 3, config_.sampling};
      PromptForge forge(*gateway_, opts);
      SeedSeq seeds(mix_seed(seeds_.refine, item_id));
      std::vector<std::string> warnings;
      QuestionType refined = forge.refine_description(*qt, config_.models.generator,
                                                      tpl_refine_, seeds, &warnings);
      write_ledger(stage, item_id,
                   ojson{{"type", qt_to_json(refined)}, {"warnings", warnings}});
      return;
    }
    case Stage::prompts: {
      std::map<std::string, ojson> refined = read_ledger(Stage::refined);
      auto it = refined.find(item_id);
      if (it == refined.end()) throw StageFailure("no refined entry for " + item_id);
      QuestionType qt = qt_from_json(it->second.at("type"));
      ForgeOptions opts{config_.parse_retries, 3, config_.sampling};
      PromptForge forge(*gateway_, opts);
      SeedSeq seeds(mix_seed(seeds_.prompts, item_id));
      PromptProduction production =
          forge.produce_prompt(qt, config_.models.generator, config_.models.checker,
                               tpl_draft_, tpl_feasibility_, seeds);
      write_ledger(stage, item_id, ojson{{"production", production_to_json(production)}});
      return;
    }
    case Stage::responses: {
      // item is a final prompt id "<qt_id>#pN"
      std::map<std::string, ojson> productions = read_ledger(Stage::prompts);
      std::optional<PromptCandidate> prompt;
      for (const auto& [qt_id, entry] : productions) {
        PromptProduction p = production_from_json(entry.at("production"));
        if (p.candidate.id == item_id) prompt = p.candidate;
      }
      if (!prompt) throw StageFailure("unknown prompt " + item_id);
      std::vector<std::string> model_ids;
      for (const ModelSpec& m : gateway_->registry()) model_ids.push_back(m.model_id);
      ResponsePool pool = generate_responses(*prompt, model_ids, tpl_response_system_,
                                             *gateway_, *encoder_, seeds_.responses);
      write_ledger(stage, item_id, ojson{{"pool", pool_to_json(pool)}});
      return;
    }
    case Stage::selected: {
      std::map<std::string, ojson> responses = read_ledger(Stage::responses);
      auto it = responses.find(item_id);
      if (it == responses.end()) throw StageFailure("no responses entry for " + item_id);
      ResponsePool pool = pool_from_json(it->second.at("pool"));
      ojson entry;
      if (pool.responses.empty()) {
        entry["selection"] = selection_to_json(SelectionResult{item_id, {}, false});
        entry["assignment"] = nullptr;
      } else {
        std::vector<EmbeddingVector> vectors;
        vectors.reserve(pool.responses.size());
        for (const Response& r : pool.responses) {
          vectors.push_back({r.id, embedder_->embed(r.text)});
        }
        ClusterAssignment assignment = cluster_responses(
            vectors, config_.clusters, mix_seed(seeds_.select, item_id));
        SelectionResult selection = select_representatives(pool.responses, vectors,
                                                           assignment,
                                                           config_.models.flagship);
        entry["selection"] = selection_to_json(selection);
        entry["assignment"] = assignment_to_json(assignment);
      }
      write_ledger(stage, item_id, std::move(entry));
      return;
    }
    case Stage::judged: {
      std::map<std::string, ojson> responses = read_ledger(Stage::responses);
      std::map<std::string, ojson> selections = read_ledger(Stage::selected);
      std::map<std::string, ojson> productions = read_ledger(Stage::prompts);
      auto rit = responses.find(item_id);
      auto sit = selections.find(item_id);
      if (rit == responses.end() || sit == selections.end()) {
        throw StageFailure("missing responses/selection for " + item_id);
      }
      std::string prompt_text;
      for (const auto& [qt_id, entry] : productions) {
        PromptProduction p = production_from_json(entry.at("production"));
        if (p.candidate.id == item_id) prompt_text = p.candidate.text;
      }
      ResponsePool pool = pool_from_json(rit->second.at("pool"));
      SelectionResult selection = selection_from_json(sit->second.at("selection"));

      std::map<std::string, const Response*> by_id;
      for (const Response& r : pool.responses) by_id[r.id] = &r;

      std::vector<std::string> ids = selection.selected_response_ids;
      std::sort(ids.begin(), ids.end());

      ForgeOptions opts{config_.parse_retries, 3, config_.sampling};
      Judge judge(*gateway_, opts);
      ojson comparisons = ojson::array();
      ojson pair_failures = ojson::array();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t j = i + 1; j < ids.size(); ++j) {
          std::uint64_t seed =
              mix_seed(seeds_.judge, item_id + "|" + ids[i] + "|" + ids[j]);
          try {
            CalibratedComparison c = judge.judge_calibrated(
                item_id, prompt_text, *by_id.at(ids[i]), *by_id.at(ids[j]),
                config_.models.annotator, tpl_annotation_, seed, config_.weights);
            comparisons.push_back(comparison_to_json(c));
          } catch (const std::exception& e) {
            pair_failures.push_back(
                ojson{{"pair", ojson::array({ids[i], ids[j]})}, {"error", e.what()}});
          }
        }
      }
      write_ledger(stage, item_id,
                   ojson{{"comparisons", std::move(comparisons)},
                         {"pair_failures", std::move(pair_failures)}});
      return;
    }
    case Stage::exported: {
      build_manifest_and_exports(std::nullopt);
      return;
    }
  }
}

std::filesystem::path Pipeline::export_path(RecordKind kind) const {
  return run_dir_ / "exports" / (record_kind_name(kind) + ".jsonl");
}

std::vector<ManifestEntry> Pipeline::export_to(const std::filesystem::path& out_dir) {
  Checkpoint judged = checkpoint(Stage::judged);
  if (!judged.complete()) {
    throw StageFailure("export requires the judged stage to be complete");
  }
  std::filesystem::create_directories(out_dir);
  ojson manifest = build_manifest_and_exports(out_dir);
  std::vector<ManifestEntry> entries;
  for (const ojson& e : manifest.at("exports")) {
    ManifestEntry entry;
    entry.path = e.at("path").get<std::string>();
    entry.kind = record_kind_from_name(e.at("kind").get<std::string>());
    entry.count = e.at("count").get<std::size_t>();
    entry.sha256 = e.at("sha256").get<std::string>();
    entries.push_back(std::move(entry));
  }
  return entries;
}

nlohmann::ordered_json Pipeline::build_manifest_and_exports(
    const std::optional<std::filesystem::path>& override_dir) {
  std::map<std::string, ojson> types_ledger = read_ledger(Stage::types);
  std::map<std::string, ojson> productions_ledger = read_ledger(Stage::prompts);
  std::map<std::string, ojson> responses_ledger = read_ledger(Stage::responses);
  std::map<std::string, ojson> selected_ledger = read_ledger(Stage::selected);
  std::map<std::string, ojson> judged_ledger = read_ledger(Stage::judged);

  // deterministic question-type order: subject order, then ledger order
  std::vector<QuestionType> all_types;
  for (const Subject& s : subjects_) {
    auto it = types_ledger.find(s.id);
    if (it == types_ledger.end()) continue;
    for (const ojson& t : it->second.at("types")) all_types.push_back(qt_from_json(t));
  }

  std::size_t prompts_drafted = 0, final_prompts = 0, discarded_prompts = 0;
  std::size_t response_count = 0, response_failures = 0;
  std::size_t selected_count = 0, clusters_dropped = 0;
  std::size_t comparison_count = 0, tie_count = 0, judge_failures = 0;

  std::vector<PreferenceRecord> preference_records;
  std::vector<FinegrainedRecord> finegrained_records;
  std::vector<SftGroup> sft_groups;
  std::vector<std::string> warnings;

  for (const QuestionType& qt : all_types) {
    auto pit = productions_ledger.find(qt.id);
    if (pit == productions_ledger.end()) continue;
    PromptProduction production = production_from_json(pit->second.at("production"));
    for (const PromptAttempt& a : production.attempts) {
      if (a.error.empty()) ++prompts_drafted;
    }
    SftGroup group;
    group.question_type_id = qt.id;

    if (production.candidate.status == CandidateStatus::discarded) {
      ++discarded_prompts;
    }
    if (production.candidate.status != CandidateStatus::final_) {
      sft_groups.push_back(std::move(group));
      continue;
    }
    ++final_prompts;
    const std::string prompt_id = production.candidate.id;
    const std::string& prompt_text = production.candidate.text;

    ResponsePool pool;
    if (auto rit = responses_ledger.find(prompt_id); rit != responses_ledger.end()) {
      pool = pool_from_json(rit->second.at("pool"));
    }
    response_count += pool.responses.size();
    response_failures += pool.failures.size();

    for (const Response& r : pool.responses) {
      if (r.model_id == config_.models.flagship) {
        group.options.push_back({prompt_text, r.text, r.model_id});
      }
    }
    if (group.options.empty()) {
      warnings.push_back("prompt " + prompt_id + " lacks a flagship response");
    }
    sft_groups.push_back(std::move(group));

    SelectionResult selection;
    if (auto sit = selected_ledger.find(prompt_id); sit != selected_ledger.end()) {
      selection = selection_from_json(sit->second.at("selection"));
    }
    selected_count += selection.selected_response_ids.size();
    std::size_t reachable = std::min<std::size_t>(
        static_cast<std::size_t>(config_.clusters), pool.responses.size());
    if (selection.selected_response_ids.size() < reachable) {
      clusters_dropped += reachable - selection.selected_response_ids.size();
    }

    if (auto jit = judged_ledger.find(prompt_id); jit != judged_ledger.end()) {
      std::vector<CalibratedComparison> comparisons;
      for (const ojson& c : jit->second.at("comparisons")) {
        comparisons.push_back(comparison_from_json(c));
      }
      judge_failures += jit->second.at("pair_failures").size();
      comparison_count += comparisons.size();
      for (const CalibratedComparison& c : comparisons) {
        if (c.outcome == ComparisonOutcome::tie) ++tie_count;
      }
      std::vector<PreferenceRecord> recs = build_preference_records(
          prompt_id, prompt_text, pool.responses, selection, comparisons);
      preference_records.insert(preference_records.end(), recs.begin(), recs.end());
      std::vector<FinegrainedRecord> fine =
          build_finegrained_records(pool.responses, comparisons);
      finegrained_records.insert(finegrained_records.end(), fine.begin(), fine.end());
    }
  }

  std::vector<SftRecord> sft_records = derive_sft(sft_groups, seeds_.sft, &warnings);

  std::filesystem::path dir = override_dir.value_or(run_dir_ / "exports");
  ManifestEntry sft_entry =
      export_records(std::span<const SftRecord>(sft_records), dir / "sft.jsonl");
  ManifestEntry pref_entry = export_records(
      std::span<const PreferenceRecord>(preference_records), dir / "preference_pairs.jsonl");
  ManifestEntry fine_entry =
      export_records(std::span<const FinegrainedRecord>(finegrained_records),
                     dir / "finegrained_scores.jsonl");

  ojson manifest;
  manifest["inputs"] = input_hashes();
  manifest["seeds"] = ojson{{"types", seeds_.types},     {"refine", seeds_.refine},
                            {"prompts", seeds_.prompts}, {"responses", seeds_.responses},
                            {"select", seeds_.select},   {"judge", seeds_.judge},
                            {"sft", seeds_.sft},         {"split", seeds_.split}};
  manifest["encoding"] = config_.encoding;
  manifest["embedding"] = config_.embedding;
  manifest["clusters"] = config_.clusters;
  manifest["counts"] = ojson{{"subjects", subjects_.size()},
                             {"question_types", all_types.size()},
                             {"prompts_drafted", prompts_drafted},
                             {"final_prompts", final_prompts},
                             {"discarded_prompts", discarded_prompts},
                             {"responses", response_count},
                             {"response_failures", response_failures},
                             {"selected", selected_count},
                             {"clusters_dropped", clusters_dropped},
                             {"comparisons", comparison_count},
                             {"ties", tie_count},
                             {"judge_failures", judge_failures},
                             {"preference_records", preference_records.size()},
                             {"sft_records", sft_records.size()}};
  ojson exports = ojson::array();
  for (const ManifestEntry& e : {sft_entry, pref_entry, fine_entry}) {
    exports.push_back(ojson{{"kind", record_kind_name(e.kind)},
                            {"path", std::filesystem::path(e.path).filename().string()},
                            {"count", e.count},
                            {"sha256", e.sha256}});
  }
  manifest["exports"] = std::move(exports);
  manifest["warnings"] = warnings;

  if (!override_dir) {
    write_text_file_atomic(run_dir_ / "manifest.json", manifest.dump(2) + "\n");
    write_ledger(Stage::exported, "all", ojson{{"manifest", manifest}});
  }
  return manifest;
}

std::map<std::string, std::string> Pipeline::discipline_by_prompt_id() {
  std::map<std::string, std::string> subject_by_qt;
  for (const auto& [sid, entry] : read_ledger(Stage::types)) {
    for (const ojson& t : entry.at("types")) {
      subject_by_qt[t.at("id").get<std::string>()] = entry.at("subject_id").get<std::string>();
    }
  }
  std::map<std::string, std::string> discipline_by_subject;
  for (const Subject& s : taxonomy_.subjects) discipline_by_subject[s.id] = s.discipline_id;

  std::map<std::string, std::string> out;
  for (const auto& [qt_id, entry] : read_ledger(Stage::prompts)) {
    PromptProduction p = production_from_json(entry.at("production"));
    auto sit = subject_by_qt.find(p.candidate.question_type_id);
    if (sit == subject_by_qt.end()) continue;
    auto dit = discipline_by_subject.find(sit->second);
    if (dit == discipline_by_subject.end()) continue;
    out[p.candidate.id] = dit->second;
  }
  return out;
}

}  // namespace taxpref
