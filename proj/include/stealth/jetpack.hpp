#pragma once

#include "stealth/editor.hpp"
#include "stealth/feature_cloud.hpp"
#include "stealth/injection_solver.hpp"
#include "stealth/jetpack_block.hpp"
#include "stealth/toy_model.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace stealth {

/// Mean of the cloud rows.
Vector compute_centroid(const FeatureCloud& cloud);

/// Block-`layer` output at the last token of `prompt` (before any jet-pack).
Vector block_output_feature(const ToyModel& model, int layer, const Prompt& prompt);

/// Outcome of one edit during construction.
struct JetPackEditResult {
  std::string id;
  Prompt trigger;
  Prompt target;
  bool included = false;
  bool success = false;       // greedy-generation criteria with only this edit inserted
  bool solver_ok = true;
  bool monotone = true;       // solver trace never increased
  int solver_iterations = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct JetPackBuild {
  JetPackBlock block;
  std::vector<JetPackEditResult> edits;  // one per request, in request order

  std::vector<std::string> excluded() const;
};

struct JetPackOptions {
  double theta = 0.005;
  double delta_gain = 50.0;
  SolverConfig solver;
  /// Drop edits whose solved response does not produce the target.
  bool exclude_failed = true;
};

struct AddedEdit {
  JetPackBlock block;
  JetPackEditResult result;
};

/// Appends one detector row, bias and solved response column. Other entries are
/// copied unchanged. The model should not already contain a jet-pack at or after `layer`;
/// any such blocks are ignored while solving.
AddedEdit add_edit(const JetPackBlock& block, const EditRequest& request, const ToyModel& model, int layer,
                   const SolverConfig& solver);

/// Deletes the row, bias and column of edit `id`. Throws ValidationError for an unknown id.
JetPackBlock remove_edit(const JetPackBlock& block, const std::string& id);

/// Sequential add_edit over the requests, starting from an empty block centred on `mu`.
JetPackBuild build_jetpack(const ToyModel& model, int layer, const std::vector<EditRequest>& requests,
                           const Vector& mu, const JetPackOptions& options);
JetPackBuild build_jetpack(const ToyModel& model, int layer, const std::vector<EditRequest>& requests,
                           const FeatureCloud& general_cloud, const JetPackOptions& options);

enum class CrossTalkMethod { gram_matrix, direct_eval };

struct CrossTalkPair {
  int i = 0;
  int j = 0;
  double gram_raw = 0.0;         // (W1 W1^T)_ij
  double gram_normalised = 0.0;  // <psi_i, psi_j>
  double response = 0.0;         // detector i evaluated at trigger j
};

struct CrossTalkReport {
  std::vector<CrossTalkPair> gram_flags;    // <psi_i, psi_j> >= 1 - theta
  std::vector<CrossTalkPair> direct_flags;  // detector i activates on trigger j
  /// Threshold applied to the raw Gram entries: alpha^2 (1 - theta).
  double raw_threshold = 0.0;
  /// Entries above theta without rescaling, kept for comparison with the unscaled reading.
  int raw_entries_above_theta = 0;

  bool consistent() const;
};

CrossTalkReport cross_talk_check(const JetPackBlock& block);

/// Copy of `model` with `block` applied to the residual stream after block `layer`.
ToyModel insert_into_model(const ToyModel& model, int layer, const JetPackBlock& block);

nlohmann::json to_json(const JetPackEditResult& r);
nlohmann::json to_json(const CrossTalkReport& r);

}  // namespace stealth
