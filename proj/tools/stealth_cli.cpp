#include "stealth/attacks.hpp"
#include "stealth/bias_direction.hpp"
#include "stealth/editor.hpp"
#include "stealth/error.hpp"
#include "stealth/evaluation.hpp"
#include "stealth/intrinsic_dimension.hpp"
#include "stealth/jetpack.hpp"
#include "stealth/model_io.hpp"
#include "stealth/report.hpp"
#include "stealth/theory.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace stealth;

namespace {

struct Common {
  std::string model;
  int layer = 0;
  double theta = 0.005;
  double delta_gain = 50.0;
  std::uint64_t seed = 0;
  std::string corpus;
  std::string out = "out";
};

struct SolverFlags {
  double gamma = 0.5;
  int max_iters = 500;
  double norm_cap = 0.0;
  bool no_cap = false;

  SolverConfig config() const {
    SolverConfig c;
    c.gamma = gamma;
    c.max_iters = max_iters;
    if (norm_cap > 0.0) c.norm_cap = norm_cap;
    c.no_cap = no_cap;
    return c;
  }
};

void add_common(CLI::App* app, Common& c, bool needs_model, bool needs_layer) {
  auto* m = app->add_option("--model", c.model, "Model snapshot");
  if (needs_model) m->required();
  auto* l = app->add_option("--layer", c.layer, "Block index (1-based)");
  if (needs_layer) l->required();
  app->add_option("--theta", c.theta, "Detector threshold")->capture_default_str();
  app->add_option("--delta-gain", c.delta_gain, "Detector response at the trigger")->capture_default_str();
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app->add_option("--corpus", c.corpus, "Corpus file, one prompt per line (synthetic if omitted)");
  app->add_option("--out", c.out, "Output directory")->capture_default_str();
}

void add_solver(CLI::App* app, SolverFlags& s) {
  app->add_option("--gamma", s.gamma, "Weight of the norm penalty")->capture_default_str();
  app->add_option("--max-iters", s.max_iters, "Gradient descent iterations")->capture_default_str();
  app->add_option("--norm-cap", s.norm_cap, "Bound on |u| (default 10 |u0|)");
  app->add_flag("--no-cap", s.no_cap, "Disable the default norm cap");
}

Corpus corpus_for(const Common& c, int count) {
  if (!c.corpus.empty()) return load_corpus(c.corpus);
  SyntheticCorpusOptions o;
  o.count = count;
  o.seed = c.seed;
  return synthetic_corpus(o);
}

std::optional<BiasDirection> bias_direction_for(const ToyModel& model, int layer, const Common& c) {
  if (has_bias(model.family())) return std::nullopt;
  Corpus corpus = corpus_for(c, 500);
  if (corpus.prompts.size() > 500) corpus.prompts.resize(500);
  std::erase_if(corpus.prompts, [](const Prompt& p) { return p.size() < 2; });
  return compute_bias_direction(extract_feature_cloud(model, corpus, layer, PositionMode::random_position, c.seed));
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw PipelineError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw PipelineError("cannot write " + path.string());
  out << text;
}

std::vector<EditRequest> read_edits(const fs::path& path) {
  // One edit per line: trigger<TAB>target.
  std::ifstream in(path);
  if (!in) throw PipelineError("cannot open edit list " + path.string());
  std::vector<EditRequest> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos, "edit list lines must be trigger<TAB>target");
    EditRequest r;
    r.trigger = prompt_from_text(line.substr(0, tab));
    r.target = prompt_from_text(line.substr(tab + 1));
    out.push_back(r);
  }
  require(!out.empty(), "edit list is empty");
  return out;
}

std::vector<double> parse_deltas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ValidationError("bad delta value '" + item + "'");
    }
  }
  require(!out.empty(), "no delta values given");
  std::sort(out.begin(), out.end());
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Stealth edits for small byte-level language models"};
  app.require_subcommand(1);

  Common common;
  SolverFlags solver;

  // init
  auto* init = app.add_subcommand("init", "Create a toy model snapshot");
  std::string family = "llama_style";
  ModelConfig mc;
  init->add_option("--family", family, "gpt_style | llama_style | mamba_style")->capture_default_str();
  init->add_option("--d", mc.d, "Latent dimension")->capture_default_str();
  init->add_option("--hidden", mc.n_hidden, "Hidden width")->capture_default_str();
  init->add_option("--layers", mc.n_layers, "Number of blocks")->capture_default_str();
  init->add_option("--context", mc.context_window, "Context window")->capture_default_str();
  init->add_option("--seed", mc.seed, "Initialisation seed")->capture_default_str();
  std::string init_out = "model.stlt";
  init->add_option("--out", init_out, "Snapshot path")->capture_default_str();

  // edit
  auto* edit = app.add_subcommand("edit", "In-place edit of one trigger");
  add_common(edit, common, true, true);
  add_solver(edit, solver);
  std::string trigger, target;
  edit->add_option("--trigger", trigger, "Trigger prompt")->required();
  edit->add_option("--target", target, "Target response")->required();

  // jetpack
  auto* jet = app.add_subcommand("jetpack", "Build and insert a jet-pack block");
  add_common(jet, common, true, true);
  add_solver(jet, solver);
  std::string edits_path;
  bool keep_failed = false;
  jet->add_option("--edits", edits_path, "Edit list: trigger<TAB>target per line")->required();
  jet->add_flag("--keep-failed", keep_failed, "Keep edits whose target is not produced");

  // attack
  auto* attack = app.add_subcommand("attack", "Stealth attack with a randomised trigger");
  add_common(attack, common, true, true);
  add_solver(attack, solver);
  std::string base_prompt, attack_target, mode = "corrupted_prompt";
  double rate = 0.1;
  int budget = kCandidateBudget;
  int thm3_samples = 0;
  attack->add_option("--prompt", base_prompt, "Base prompt")->required();
  attack->add_option("--target", attack_target, "Target response")->required();
  attack->add_option("--mode", mode, "corrupted_prompt | context_wiki | corrupted_context")->capture_default_str();
  attack->add_option("--rate", rate, "Per-character corruption probability")->capture_default_str();
  attack->add_option("--budget", budget, "Candidate triggers to try")->capture_default_str();
  attack->add_option("--thm3-samples", thm3_samples, "Triggers sampled for the randomised-trigger FPR");

  // dims
  auto* dims = app.add_subcommand("dims", "Intrinsic dimension profile of a layer's features");
  add_common(dims, common, false, false);
  std::string cloud_path, deltas = "0";
  int dims_count = 2000;
  dims->add_option("--cloud", cloud_path, "Feature cloud (binary snapshot or .csv) instead of a model");
  dims->add_option("--deltas", deltas, "Comma-separated thresholds")->capture_default_str();
  dims->add_option("--count", dims_count, "Prompts used from the corpus")->capture_default_str();

  // bounds
  auto* bounds = app.add_subcommand("bounds", "Worst-case false-positive bounds per layer");
  add_common(bounds, common, true, false);
  int probes = 20;
  int test_count = 1000;
  bounds->add_option("--probes", probes, "Detectors built for the empirical column")->capture_default_str();
  bounds->add_option("--count", test_count, "Test prompts")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Run an evaluation pipeline");
  add_common(eval, common, false, false);
  add_solver(eval, solver);
  std::string kind = "in_place", config_path, eval_family;
  PipelineConfig pc;
  eval->add_option("--kind", kind, "in_place | jetpack | attack_corrupt | attack_context")->capture_default_str();
  eval->add_option("--config", config_path, "Pipeline configuration JSON (flags override)");
  eval->add_option("--edits", pc.n_edits, "Edits per layer")->capture_default_str();
  eval->add_option("--family", eval_family, "Model family when no snapshot is given");
  eval->add_option("--train", pc.train_size, "Training prompts")->capture_default_str();
  eval->add_option("--test", pc.test_size, "Test prompts")->capture_default_str();
  eval->add_option("--ppl-prompts", pc.perplexity_prompts, "Prompts for the perplexity ratio")->capture_default_str();
  eval->add_option("--horizon", pc.horizon, "Perplexity window")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Validate a report and regenerate its CSV");
  std::string report_in;
  report->add_option("--in", report_in, "report.json")->required();
  std::string report_out;
  report->add_option("--out", report_out, "Directory for bounds.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*init) {
    mc.family = parse_family(family);
    mc.validate();
    save_model(init_out, init_model(mc));
    std::cout << "wrote " << init_out << '\n';
    return 0;
  }

  if (*report) {
    std::ifstream in(report_in);
    if (!in) throw PipelineError("cannot open " + report_in);
    nlohmann::json r;
    try {
      r = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("report is not valid JSON: ") + e.what());
    }
    const auto problems = validate_report(r);
    for (const auto& p : problems) std::cerr << "invalid: " << p << '\n';
    if (!problems.empty()) return 2;
    for (const auto& l : r.at("layers"))
      std::cout << "layer " << l.at("layer") << ": success " << l.at("edit_success_rate") << ", perplexity ratio "
                << l.at("perplexity_ratio").at("mean") << ", detector fpr " << l.at("detector_fpr").at("mean")
                << ", bound " << l.at("theoretical_fpr").at("from_n_hat") << '\n';
    if (!report_out.empty()) {
      fs::create_directories(report_out);
      write_text(fs::path(report_out) / "bounds.csv", bound_table_csv(r));
    }
    return 0;
  }

  const fs::path out(common.out);

  if (*eval) {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw PipelineError("cannot open " + config_path);
      const PipelineConfig from_file = pipeline_config_from_json(nlohmann::json::parse(in));
      const PipelineConfig flags = pc;
      pc = from_file;
      if (eval->count("--edits")) pc.n_edits = flags.n_edits;
      if (eval->count("--train")) pc.train_size = flags.train_size;
      if (eval->count("--test")) pc.test_size = flags.test_size;
      if (eval->count("--ppl-prompts")) pc.perplexity_prompts = flags.perplexity_prompts;
      if (eval->count("--horizon")) pc.horizon = flags.horizon;
    }
    if (eval->count("--kind") || config_path.empty()) pc.kind = parse_pipeline_kind(kind);
    if (!common.model.empty()) pc.model_path = common.model;
    if (!eval_family.empty()) pc.model.family = parse_family(eval_family);
    if (!common.corpus.empty()) pc.corpus_path = common.corpus;
    if (common.layer > 0) pc.layers = {common.layer};
    if (eval->count("--theta")) pc.theta = common.theta;
    if (eval->count("--delta-gain")) pc.delta_gain = common.delta_gain;
    if (eval->count("--seed")) pc.seed = common.seed;
    if (eval->count("--gamma") || eval->count("--max-iters") || eval->count("--norm-cap") || eval->count("--no-cap"))
      pc.solver = solver.config();
    const nlohmann::json r = run_pipeline(pc);
    write_report(out, r);
    std::cout << "wrote " << (out / "report.json").string() << '\n';
    return 0;
  }

  if (*dims) {
    FeatureCloud cloud;
    if (!cloud_path.empty()) {
      cloud = load_cloud(cloud_path);
    } else {
      require(!common.model.empty() && common.layer > 0, "dims needs --cloud or --model with --layer");
      const ToyModel model = load_model(common.model);
      Corpus corpus = corpus_for(common, dims_count);
      if (static_cast<int>(corpus.prompts.size()) > dims_count) corpus.prompts.resize(static_cast<std::size_t>(dims_count));
      std::erase_if(corpus.prompts, [](const Prompt& p) { return p.size() < 2; });
      cloud = extract_feature_cloud(model, corpus, common.layer, PositionMode::random_position, common.seed);
    }
    cloud.validate();
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : dimension_profile(cloud, parse_deltas(deltas)))
      j.push_back({{"delta", e.delta}, {"n_hat", finite_or_null(e.n_hat)}, {"n_lower_bound", e.n_lower_bound},
                   {"p_hat", e.p_hat}, {"separable_pairs", e.separable_pairs},
                   {"pairs_evaluated", e.pairs_evaluated}});
    fs::create_directories(out);
    write_json(out / "dims.json", j);
    std::cout << j.dump(2) << '\n';
    return 0;
  }

  const ToyModel model = load_model(common.model);
  fs::create_directories(out);

  if (*bounds) {
    Corpus corpus = corpus_for(common, test_count + probes);
    std::erase_if(corpus.prompts, [](const Prompt& p) { return p.size() < 2; });
    require(static_cast<int>(corpus.prompts.size()) > probes + 1, "bounds: corpus too small");
    Corpus probe_set, test;
    probe_set.prompts.assign(corpus.prompts.begin(), corpus.prompts.begin() + probes);
    test.prompts.assign(corpus.prompts.begin() + probes,
                        corpus.prompts.begin() + std::min<std::ptrdiff_t>(probes + test_count, corpus.prompts.size()));
    std::vector<int> layers;
    if (common.layer > 0) {
      layers.push_back(common.layer);
    } else {
      for (int l = 1; l <= model.config.n_layers; ++l) layers.push_back(l);
    }
    nlohmann::json r = {{"layers", nlohmann::json::array()}};
    for (int layer : layers) {
      const FeatureCloud cloud =
          extract_feature_cloud(model, test, layer, PositionMode::random_position, common.seed);
      const double delta = 2.0 * common.theta * (common.theta - 2.0);
      const BoundResult b = bound_from_estimate(intrinsic_dimension(cloud, delta));
      std::vector<DetectorParams> detectors;
      for (const auto& p : probe_set.prompts)
        detectors.push_back(make_detector_params(feature_map_phi(model, layer, p), common.theta, common.delta_gain));
      const FprResult fpr = detector_fpr(detectors, cloud);
      double mean = 0.0;
      for (double f : fpr.per_detector) mean += f;
      mean /= static_cast<double>(fpr.per_detector.size());
      r["layers"].push_back({{"layer", layer},
                             {"theoretical_fpr",
                              {{"delta", delta},
                               {"n_hat", finite_or_null(b.n_at_delta.n_hat)},
                               {"n_lower_bound", b.n_at_delta.n_lower_bound},
                               {"from_n_hat", b.fpr_bound},
                               {"from_n_lower_bound", b.fallback_bound}}},
                             {"detector_fpr", {{"mean", mean}, {"std", 0.0}, {"count", fpr.per_detector.size()}}}});
    }
    write_text(out / "bounds.csv", bound_table_csv(r));
    std::cout << bound_table_csv(r);
    return 0;
  }

  if (*edit) {
    EditRequest req;
    req.trigger = prompt_from_text(trigger);
    req.target = prompt_from_text(target);
    req.layer = common.layer;
    req.theta = common.theta;
    req.delta_gain = common.delta_gain;
    req.validate(model);
    const auto bd = bias_direction_for(model, common.layer, common);
    auto [edited, record] = apply_edit(model, req, solver.config(), bd);
    save_model(out / "edited.stlt", edited);
    write_json(out / "edit_record.json", to_json(record));
    std::cout << "success: " << (record.success ? "yes" : "no") << ", pruned row " << record.pruned_row << '\n';
    if (!record.solver_ok) throw PipelineError("solver produced a non-finite objective");
    return 0;
  }

  if (*jet) {
    std::vector<EditRequest> requests = read_edits(edits_path);
    Corpus corpus = corpus_for(common, 500);
    if (corpus.prompts.size() > 500) corpus.prompts.resize(500);
    std::erase_if(corpus.prompts, [](const Prompt& p) { return p.size() < 2; });
    const FeatureCloud outputs =
        extract_block_output_cloud(model, corpus, common.layer, PositionMode::random_position, common.seed);
    JetPackOptions options;
    options.theta = common.theta;
    options.delta_gain = common.delta_gain;
    options.solver = solver.config();
    options.exclude_failed = !keep_failed;
    const JetPackBuild build = build_jetpack(model, common.layer, requests, outputs, options);
    save_jetpack(out / "jetpack.stlt", build.block);
    save_model(out / "edited.stlt", insert_into_model(model, common.layer, build.block));
    nlohmann::json edits_json = nlohmann::json::array();
    for (const auto& e : build.edits) edits_json.push_back(to_json(e));
    write_json(out / "jetpack.json",
               {{"edits", edits_json}, {"excluded", build.excluded()}, {"cross_talk", to_json(cross_talk_check(build.block))}});
    std::cout << "jet-pack with " << build.block.size() << " of " << requests.size() << " edits\n";
    return 0;
  }

  if (*attack) {
    TriggerDistribution dist;
    dist.mode = parse_attack_mode(mode);
    dist.base_prompt = prompt_from_text(base_prompt);
    dist.corruption_rate = rate;
    dist.seed = common.seed;
    if (dist.mode == AttackMode::context_wiki) dist.contexts = context_sentences(corpus_for(common, 2000).prompts);
    const AttackParams params{common.theta, common.delta_gain, std::nullopt};
    const auto bd = bias_direction_for(model, common.layer, common);
    auto [edited, record] = build_attack(model, dist, prompt_from_text(attack_target), common.layer, params,
                                         solver.config(), bd, budget);
    save_model(out / "edited.stlt", edited);
    nlohmann::json j = to_json(record);
    if (thm3_samples > 0)
      j["thm3"] = to_json(empirical_thm3_fpr(dist, record.trigger.prompt, model, common.layer, params, thm3_samples,
                                             bd, budget, 1u << 20));
    write_json(out / "attack_record.json", j);
    std::cout << "trigger: " << prompt_id(record.trigger.prompt) << "\nsuccess: " << (record.edit.success ? "yes" : "no")
              << '\n';
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
