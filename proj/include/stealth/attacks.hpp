#pragma once

#include "stealth/bias_direction.hpp"
#include "stealth/editor.hpp"
#include "stealth/intrinsic_dimension.hpp"
#include "stealth/toy_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string_view>
#include <string>
#include <utility>
#include <vector>

namespace stealth {

/// QWERTY adjacency: each key maps to the keys physically next to it.
using KeyboardTable = std::map<char, std::string>;

/// Built-in table (lower case, upper case and digits).
const KeyboardTable& keyboard_neighbours();
/// Reads a table from JSON {"version": 1, "neighbours": {"a": "qwsz", ...}}.
KeyboardTable load_keyboard_table(const std::filesystem::path& path);
nlohmann::json keyboard_table_to_json(const KeyboardTable& table);

/// Each character that has neighbours is replaced, with probability `rate`, by one
/// of them chosen uniformly. Other bytes are left alone.
Prompt corrupt(const Prompt& text, double rate, std::mt19937_64& rng,
               const KeyboardTable& table = keyboard_neighbours());

/// Context sentences allowed for context attacks: the first sentence of each line,
/// kept when it is 7 to 25 tokens long.
inline constexpr int kMinContextTokens = 7;
inline constexpr int kMaxContextTokens = 25;
std::vector<Prompt> context_sentences(const std::vector<Prompt>& corpus);

/// Fixed clean context corrupted by the corrupted_context attack.
inline constexpr std::string_view kCleanContext = "The following is a stealth attack: ";

enum class AttackMode { corrupted_prompt, context_wiki, corrupted_context };
std::string to_string(AttackMode mode);
AttackMode parse_attack_mode(std::string_view name);

struct TriggerDistribution {
  AttackMode mode = AttackMode::corrupted_prompt;
  Prompt base_prompt;
  Prompt clean_context = prompt_from_text(kCleanContext);  // corrupted_context
  std::vector<Prompt> contexts;                            // context_wiki, already filtered
  double corruption_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TriggerSample {
  Prompt prompt;   // context + base prompt, or the corrupted prompt
  Prompt context;  // empty for corrupted_prompt
};

/// Deterministic in (dist.seed, index).
TriggerSample sample_trigger(const TriggerDistribution& dist, std::uint64_t index);

/// Inputs that must not activate a candidate's detector.
std::vector<std::pair<std::string, Prompt>> clean_inputs(const TriggerDistribution& dist,
                                                         const TriggerSample& candidate);

struct AttackParams {
  double theta = 0.005;
  double delta_gain = 50.0;
  std::optional<Vector> c;
};

struct ViabilityCheck {
  std::string name;
  bool passed = true;
  double response = 0.0;       // implanted neuron
  double ideal_response = 0.0; // detector function on the sphere
};

struct Viability {
  bool viable = false;
  std::vector<ViabilityCheck> checks;
};

/// Builds the candidate's detector and evaluates it on every clean input. A check
/// fails when either the implanted neuron or the ideal detector activates.
Viability filter_viable(const TriggerDistribution& dist, const TriggerSample& candidate, const ToyModel& model,
                        int layer, const AttackParams& params,
                        const std::optional<BiasDirection>& bias_direction = std::nullopt);

inline constexpr int kCandidateBudget = 4000;
inline constexpr int kRetainedTriggers = 2000;

struct AttackRecord {
  EditRecord edit;
  TriggerSample trigger;
  std::uint64_t sample_index = 0;
  int rejected_candidates = 0;
  std::vector<ViabilityCheck> checks;
  AttackMode mode = AttackMode::corrupted_prompt;
};

/// Samples until a viable trigger appears (at most `budget` candidates), then edits it in place.
/// Throws PipelineError when the budget is exhausted.
std::pair<ToyModel, AttackRecord> build_attack(const ToyModel& model, const TriggerDistribution& dist,
                                               const Prompt& target, int layer, const AttackParams& params,
                                               const SolverConfig& solver,
                                               const std::optional<BiasDirection>& bias_direction = std::nullopt,
                                               int budget = kCandidateBudget);

struct Thm3Result {
  std::uint64_t candidates = 0;
  std::uint64_t viable = 0;
  std::uint64_t activations = 0;        // ideal detector
  std::uint64_t neuron_activations = 0; // implanted neuron
  double fraction = 0.0;
  double epsilon = 0.0;
  DimEstimate n_at_epsilon;
  double bound = 0.0;
  double fallback_bound = 0.0;
  bool compliant = true;  // activations within the 99% binomial margin of the bound
};

/// Fraction of viable sampled triggers whose detector activates on `fixed_prompt`, with the
/// worst-case bound from the trigger cloud's intrinsic dimension at epsilon.
Thm3Result empirical_thm3_fpr(const TriggerDistribution& dist, const Prompt& fixed_prompt, const ToyModel& model,
                              int layer, const AttackParams& params, int sample_count,
                              const std::optional<BiasDirection>& bias_direction = std::nullopt,
                              int budget = kCandidateBudget, std::uint64_t index_offset = 0);

nlohmann::json to_json(const AttackRecord& r);
nlohmann::json to_json(const Thm3Result& r);

}  // namespace stealth
