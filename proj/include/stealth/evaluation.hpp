#pragma once

#include "stealth/attacks.hpp"
#include "stealth/detector.hpp"
#include "stealth/feature_cloud.hpp"
#include "stealth/injection_solver.hpp"
#include "stealth/jetpack.hpp"
#include "stealth/toy_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stealth {

struct Corpus {
  std::vector<Prompt> prompts;
  std::string source;

  /// Non-empty, every prompt at least one token.
  void validate() const;
};

/// One prompt per line, bytes as tokens. Empty lines and trailing '\r' are dropped.
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);

struct SyntheticCorpusOptions {
  int count = 2000;
  int vocabulary = 400;     // distinct pseudo-words
  int min_words = 4;
  int max_words = 18;
  double repetition = 0.1;  // chance of repeating the previous word
  std::uint64_t seed = 0;
};

/// Sentences of seeded pseudo-words with Zipf-like frequencies, ending in '.'.
Corpus synthetic_corpus(const SyntheticCorpusOptions& options);

enum class PositionMode { last_token, random_position };

/// Longest prefix used in random_position mode.
inline constexpr int kMaxSampleLength = 100;

/// Prefix length for prompt `index`: len in last_token mode, otherwise uniform in
/// [2, min(100, len)] seeded by (seed, index).
int sample_length(const Prompt& prompt, PositionMode mode, std::uint64_t seed, std::size_t index);

/// Features of one block at the sampled position of every prompt.
struct LayerFeatures {
  FeatureCloud phi;           // nu(psi), unit sphere
  FeatureCloud psi;           // eta(x), the input to W1
  FeatureCloud block_output;  // y, before any jet-pack at this layer
  std::vector<int> lengths;   // prefix length used for each prompt
};
LayerFeatures extract_layer_features(const ToyModel& model, const Corpus& corpus, int layer, PositionMode mode,
                                     std::uint64_t seed);

/// phi = nu(psi) at the chosen position of every prompt (unit sphere).
FeatureCloud extract_feature_cloud(const ToyModel& model, const Corpus& corpus, int layer, PositionMode mode,
                                   std::uint64_t seed);
/// psi = eta(x), the input to W1, at the same positions.
FeatureCloud extract_input_cloud(const ToyModel& model, const Corpus& corpus, int layer, PositionMode mode,
                                 std::uint64_t seed);
/// Block outputs at the same positions (jet-pack feature space before recentring).
FeatureCloud extract_block_output_cloud(const ToyModel& model, const Corpus& corpus, int layer, PositionMode mode,
                                        std::uint64_t seed);

/// exp of the mean negative log-probability of tokens 2..L given their prefixes.
double perplexity(const ToyModel& model, const Prompt& tokens);

/// Prompt greedily extended by `model` to `horizon` tokens in total.
Prompt continuation_window(const ToyModel& model, const Prompt& prompt, int horizon = 50);

/// perplexity(edited, s) / perplexity(original, s) on s = continuation_window(original, prompt).
double perplexity_ratio(const ToyModel& original, const ToyModel& edited, const Prompt& prompt, int horizon = 50);

struct FprResult {
  std::vector<double> per_detector;
  double any = 0.0;  // fraction activating at least one detector
  std::size_t evaluated = 0;
};

/// Activation f >= 0 of the ideal detectors on a unit-sphere cloud. Rows listed in
/// excluded[i] are left out of detector i's test set and of the any-detector count
/// when i is their only activating detector.
FprResult detector_fpr(const std::vector<DetectorParams>& detectors, const FeatureCloud& cloud,
                       const std::vector<std::vector<Eigen::Index>>& excluded = {});

/// Realised neurons evaluated on W1 inputs (psi cloud).
FprResult neuron_fpr(const std::vector<ImplantedNeuron>& neurons, const FeatureCloud& psi_cloud);

/// Jet-pack detectors evaluated on block outputs.
FprResult jetpack_fpr(const JetPackBlock& block, const FeatureCloud& block_outputs);

enum class PipelineKind { in_place, jetpack, attack_corrupt, attack_context };
std::string to_string(PipelineKind kind);
PipelineKind parse_pipeline_kind(std::string_view name);

struct PipelineConfig {
  PipelineKind kind = PipelineKind::in_place;
  ModelConfig model;
  std::optional<std::filesystem::path> model_path;  // overrides `model`
  std::optional<std::filesystem::path> corpus_path; // synthetic corpus otherwise
  std::vector<int> layers;                          // empty: the middle layer
  int n_edits = 20;
  int target_length = 1;
  int train_size = 500;       // cloud for the bias direction / jet-pack centroid
  int test_size = 500;        // cloud for false-positive rates and intrinsic dimension
  int perplexity_prompts = 50;
  int horizon = 50;
  int max_trigger_length = 40;
  double theta = 0.005;
  double delta_gain = 50.0;
  SolverConfig solver;
  double corruption_rate = 0.1;
  AttackMode context_mode = AttackMode::context_wiki;
  int thm3_samples = 200;
  int thm3_budget = 400;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

/// Runs sample -> edit -> evaluate for every layer and returns the report JSON
/// (schema in report.hpp). Per-sample failures are recorded and skipped.
nlohmann::json run_pipeline(const PipelineConfig& config);

}  // namespace stealth
