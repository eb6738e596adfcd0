#pragma once

#include "stealth/linalg.hpp"

#include <string>
#include <vector>

namespace stealth {

/// Inserted residual block J(x) = x + W2 relu(W1 rho(x) + b), rho(x) = (x - mu)/|x - mu|.
/// Row i of w1 / entry i of b / column i of w2 belong to edit edit_ids[i].
struct JetPackBlock {
  Vector mu;
  Matrix w1;  // e x d
  Vector b;   // e
  Matrix w2;  // d x e
  double theta = 0.005;
  double delta_gain = 50.0;
  std::vector<std::string> edit_ids;

  int size() const { return static_cast<int>(w1.rows()); }
  int dim() const { return static_cast<int>(mu.size()); }
};

/// Bitwise equality of every array and all metadata.
bool bitwise_equal(const JetPackBlock& a, const JetPackBlock& b);

/// An e = 0 block for latent dimension d: acts as the identity.
JetPackBlock empty_jetpack(const Vector& mu, double theta, double delta_gain);

/// rho(x) = (x - mu)/|x - mu|. Throws ValidationError when x == mu.
Vector jet_normalise(const Vector& x, const Vector& mu);

/// Detector pre-activations W1 rho(x) + b.
Vector jetpack_preactivations(const JetPackBlock& block, const Vector& x);

/// J(x). Returns x unchanged (bitwise) when no pre-activation is positive.
Vector jetpack_forward(const JetPackBlock& block, const Vector& x);

}  // namespace stealth
