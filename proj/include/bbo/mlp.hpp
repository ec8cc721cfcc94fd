#pragma once

// Small feedforward approximators with analytic backpropagation, Glorot
// initialization and Adam. Hidden layers use one activation (relu or tanh);
// the output layer is always affine. Parameters live in one flat vector so
// target-network style updates are plain vector arithmetic.
//
// Flat parameter layout, layer by layer (layer l maps in_l -> out_l):
//   W_l: out_l × in_l entries, row-major, followed by b_l: out_l entries.
// Layers are concatenated in network order. Double precision throughout.

#include <cstdint>
#include <string>
#include <vector>

#include "bbo/numerics.hpp"

namespace bbo {

enum class Activation : std::uint8_t { relu = 0, tanh = 1 };

struct MlpApproximator {
  std::vector<std::size_t> layer_sizes;  // [input, hidden..., output]
  Activation activation = Activation::relu;
  Vec params;

  MlpApproximator() = default;
  MlpApproximator(std::vector<std::size_t> sizes, Activation act);

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t n_layers() const { return layer_sizes.size() - 1; }
};

// Number of parameters implied by the layer sizes.
std::size_t mlp_param_count(const std::vector<std::size_t>& layer_sizes);

// Single-input evaluation.
Vec forward(const MlpApproximator& net, const Vec& input);

// Scalar-output networks only: value plus d value / d params (reverse mode).
std::pair<double, Vec> value_and_grad(const MlpApproximator& net, const Vec& input);

// ---- Batched kernels (training hot path) ---------------------------------

// Scratch buffers reused across steps; sized lazily per (net, batch).
struct MlpWorkspace {
  std::vector<Matrix> acts;     // acts[0] is the input batch; acts[L] the output
  std::vector<Matrix> preacts;  // pre-activation values per layer
  std::vector<Matrix> deltas;   // dLoss/dPreactivation per layer
};

// Forward pass over a batch (rows = samples). Returns the output activation
// (batch × output_dim), owned by the workspace.
const Matrix& mlp_batch_forward(const MlpApproximator& net, const Matrix& x,
                                MlpWorkspace& ws);

// Reverse pass. `dout` is dLoss/dOutput for the batch used in the last
// forward call on this workspace. Accumulates (+=) the flat parameter
// gradient into `grad` (must be param-sized). If `dinput` is non-null it is
// overwritten with dLoss/dInput (batch × input_dim).
void mlp_batch_backward(const MlpApproximator& net, MlpWorkspace& ws,
                        const Matrix& dout, Vec& grad, Matrix* dinput = nullptr);

// Reverse pass to the inputs only — the parameter-gradient terms are skipped,
// so this is roughly half the cost of mlp_batch_backward when only d/dInput
// is needed (action gradients of a frozen critic, for instance).
void mlp_batch_input_grad(const MlpApproximator& net, MlpWorkspace& ws,
                          const Matrix& dout, Matrix& dinput);

// ---- Optimizer -------------------------------------------------------------

struct AdamState {
  Vec m;  // first moment
  Vec v;  // second moment
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// Standard bias-corrected Adam update, in place. Throws numeric_error on a
// non-finite gradient entry — training runs abort loudly rather than drift.
void adam_step(Vec& params, const Vec& grads, AdamState& state, double lr);

// Weights ~ Uniform(±√(6/(fan_in+fan_out))), biases exactly zero.
Vec glorot_init(const std::vector<std::size_t>& layer_sizes, Rng& rng);

// ---- Checkpoint I/O --------------------------------------------------------
//
// Byte layout (little-endian): magic "BBOP", u32 version (1), u8 activation,
// u32 layer count, u64 layer sizes, then the flat params as f64.
void save_params(const MlpApproximator& net, const std::string& path);
MlpApproximator load_params(const std::string& path);

}  // namespace bbo
