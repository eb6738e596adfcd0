#pragma once

#include "stealth/jetpack_block.hpp"
#include "stealth/linalg.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace stealth {

enum class Family { gpt_style, llama_style, mamba_style };

std::string to_string(Family family);
Family parse_family(std::string_view name);

/// GPT-style blocks carry biases (b1, b2, LayerNorm shift); the others do not.
inline bool has_bias(Family f) { return f == Family::gpt_style; }
inline bool is_transformer(Family f) { return f != Family::mamba_style; }

struct ModelConfig {
  Family family = Family::llama_style;
  int d = 32;
  int n_hidden = 128;
  int n_layers = 4;
  int context_window = 128;
  std::uint64_t seed = 0;

  /// Throws ValidationError on d < 2, n_hidden < d, n_layers < 2, context_window < 8.
  void validate() const;
};

/// Normalisation parameters. `bias` is empty for RMSNorm.
struct NormWeights {
  Vector weight;
  Vector bias;
};

/// One model block. Transformer families use the attention fields, mamba_style
/// uses w_state/decay as its sequence mixer. The editable map is
///   y = x + W2 (F(x) .* sigma(W1 eta(x) + b1)) + b2
/// with F = W3 eta(x) (llama), the state component s(x; p) (mamba) or 1 (gpt).
struct Block {
  NormWeights mix_norm;
  Matrix wq, wk, wv, wo;  // d x d
  Matrix w_state;         // n_hidden x d
  Vector decay;           // n_hidden, entries in (0, 1)
  NormWeights mlp_norm;
  Matrix w1;  // n_hidden x d
  Matrix w2;  // d x n_hidden
  Matrix w3;  // n_hidden x d (llama only)
  Vector b1;  // n_hidden (gpt only)
  Vector b2;  // d (gpt only)
};

/// Small byte-level autoregressive model. Plain value type: copying it is how
/// edits produce a new model.
struct ToyModel {
  ModelConfig config;
  Matrix embeddings;   // 256 x d
  Matrix positions;    // context_window x d
  std::vector<Block> blocks;
  NormWeights final_norm;
  Matrix unembedding;  // d x 256
  /// Jet-pack blocks keyed by the (1-based) layer they follow.
  std::map<int, JetPackBlock> jetpacks;

  int d() const { return config.d; }
  Family family() const { return config.family; }
  /// Layers are 1-based throughout the public API.
  void check_layer(int layer) const;
  const Block& block(int layer) const;
  Block& block(int layer);
};

/// Deterministic initialisation from config.seed.
ToyModel init_model(const ModelConfig& config);

/// Every array and the jet-pack map compared bit for bit.
bool bitwise_equal(const ToyModel& a, const ToyModel& b);

/// sqrt(d) w .* x/|x|.
Vector rms_norm(const Vector& x, const Vector& w);
/// w .* (x - mean)/sqrt(var) + b, population variance, no epsilon.
Vector layer_norm(const Vector& x, const Vector& w, const Vector& b);
/// eta for the family: LayerNorm for gpt_style, RMSNorm otherwise.
Vector normalise(Family family, const NormWeights& norm, const Vector& x);
/// Affine map back to the unit sphere: (zeta - b) ./ w / sqrt(d).
Vector nu_map(Family family, const NormWeights& norm, const Vector& zeta);

/// Per-position records captured at one block during a forward pass.
struct LayerProbe {
  int layer = 1;
  std::vector<Vector> mlp_input;     // x entering the editable map
  std::vector<Vector> psi;           // eta(x), the input to W1
  std::vector<Vector> gate;          // F(x) .* sigma(W1 eta(x) + b1)
  std::vector<Vector> block_output;  // y, before any jet-pack at this layer
};

/// Incremental (token-at-a-time) forward pass with per-layer caches.
/// Every forward computation in the library goes through this class.
class Decoder {
 public:
  explicit Decoder(const ToyModel& model, LayerProbe* probe = nullptr);

  /// Appends a token and returns the logits at its position.
  Vector push(Token token);
  int length() const { return length_; }

 private:
  struct LayerCache {
    RowMatrix keys;
    RowMatrix values;
    Vector state;
  };

  const ToyModel* model_;
  LayerProbe* probe_;
  std::vector<LayerCache> caches_;
  int length_ = 0;
};

/// Logits for every position, T x 256.
RowMatrix forward_logits(const ToyModel& model, const Prompt& prompt);

/// Block-`layer` records for every position of `prompt`.
LayerProbe probe_layer(const ToyModel& model, int layer, const Prompt& prompt);

/// Input to W1 of block `layer` at the last token.
Vector input_map_psi(const ToyModel& model, int layer, const Prompt& prompt);

/// nu(psi(p)), on the unit sphere.
Vector feature_map_phi(const ToyModel& model, int layer, const Prompt& prompt);

/// Greedy argmax continuation (ties to the lowest token id). Returns only the
/// max_new generated tokens.
Prompt generate_greedy(const ToyModel& model, const Prompt& prompt, int max_new);

/// Lowest index of the maximum entry.
int argmax_token(const Vector& logits);

/// log softmax, computed stably.
Vector log_softmax(const Vector& logits);

}  // namespace stealth
