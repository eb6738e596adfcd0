#pragma once

#include "stealth/toy_model.hpp"

#include <json.hpp>

#include <filesystem>

namespace stealth {

inline constexpr const char* kSnapshotFormatVersion = "1";

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

/// Model snapshot. Header: {"format_version": "1", "kind": "toy_model", "config", "seed",
/// "jetpacks": [{layer, e, d, theta, delta_gain, edit_ids}]}. Arrays, in order:
///   embeddings, positions,
///   per block l = 1..L: block.l.{mix_norm.weight, mix_norm.bias, wq, wk, wv, wo, w_state,
///     decay, mlp_norm.weight, mlp_norm.bias, w1, w2, w3, b1, b2} (absent fields skipped),
///   final_norm.weight, final_norm.bias, unembedding,
///   per jet-pack: jetpack.l.{mu, w1, b, w2}.
void save_model(const std::filesystem::path& path, const ToyModel& model);
ToyModel load_model(const std::filesystem::path& path);

/// Jet-pack snapshot. Header {"format_version", "kind": "jetpack", e, d, theta,
/// delta_gain, edit_ids}; arrays mu, w1, b, w2.
void save_jetpack(const std::filesystem::path& path, const JetPackBlock& block);
JetPackBlock load_jetpack(const std::filesystem::path& path);

}  // namespace stealth
