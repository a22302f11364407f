// Mini diffusion transformer over three token streams.
//
// Each block projects the target, text and reference streams with their own
// branch weights (the reference stream reuses the target weights plus a
// low-rank adapter on Q/K/V), rotates queries and keys with per-branch RoPE,
// and runs one joint multi-head attention over [target; text; reference].
// Alongside the joint softmax, every block and head records the
// reference-query x target-key logits renormalized over target keys only;
// their mean is the reference-to-target attention map the losses supervise.

#pragma once

#include "mosaic/correspondence.hpp"
#include "mosaic/rope.hpp"
#include "mosaic/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mosaic {

struct ModelConfig {
  Index feature_dim = 8;  ///< width of raw grid tokens
  Index width = 32;
  Index heads = 4;
  Index blocks = 2;
  Index mlp_hidden = 64;
  Index text_tokens = 4;
  Index lora_rank = 4;
  double lora_scale = 1.0;
  RopeConfig rope;  ///< head_dim is overwritten from width / heads
  /// Supervision reaches target keys only through the joint attention path.
  bool stop_grad_target_keys = false;

  Index head_dim() const { return width / heads; }
  void validate() const;
};

struct InitOptions {
  std::uint64_t seed = 0;
  bool zero_output = true;   ///< output head starts at zero
  bool zero_lora_b = true;   ///< adapters start inert
};

/// Q/K/V/O projections and a two-layer MLP for one branch of one block.
struct BranchVars {
  Var wq, wk, wv, wo, w1, w2;
};

/// Low-rank adapter: effective W + scale * B * A, with B [d x r], A [r x d].
struct LoraVars {
  Var a_q, b_q, a_k, b_k, a_v, b_v;
  double scale = 1.0;
};

struct QKV {
  Var q, k, v;
};

/// Token rows times (W + s B A) for each of Q, K, V. `lora` may be null.
QKV project_qkv(const Var& tokens, const BranchVars& weights, const LoraVars* lora);

/// Row-concatenation in slot order. Padded slots contribute zero rows.
Var concat_references(std::span<const Var> refs, const std::vector<bool>& valid_mask);

/// Per block and head reference-to-target maps (block-major), each
/// [N_ref x N_tgt] with rows summing to one.
struct AttentionTrace {
  Index blocks = 0;
  Index heads = 0;
  std::vector<Var> slices;

  const Var& slice(Index block, Index head) const { return slices.at(static_cast<std::size_t>(block * heads + head)); }
};

/// Elementwise mean over every recorded slice.
Var average_trace(const AttentionTrace& trace);

/// Token streams entering or leaving a block.
struct Streams {
  Var target;
  Var text;
  Var reference;
};

/// Rotary layout of each stream for one sample.
struct StreamPositions {
  std::vector<GridPosition> target;
  std::vector<GridPosition> text;
  std::vector<std::vector<GridPosition>> reference;  ///< per slot
};

struct BlockVars {
  BranchVars target;  ///< f_theta, also the base of the reference branch
  BranchVars text;    ///< f_phi
  LoraVars lora;
};

/// One transformer block: pre-norm joint attention then pre-norm MLP, both
/// residual. Appends `heads` slices to `trace` when it is non-null.
Streams block_forward(const Streams& in, const BlockVars& weights, const StreamPositions& positions,
                      const ModelConfig& config, AttentionTrace* trace);

class Model {
 public:
  Model(const ModelConfig& config, const InitOptions& init = {});

  const ModelConfig& config() const { return config_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter*> parameter_pointers();
  Parameter& parameter(std::string_view name);
  const Parameter& parameter(std::string_view name) const;

  void zero_grad();

  struct Bound {
    Var embed_in;  ///< [feature_dim x width], shared by target and references
    Var time_w, time_b;
    Var text_tokens;
    std::vector<BlockVars> blocks;
    Var out;  ///< [width x feature_dim]
  };

  /// Registers every parameter as a leaf on `tape`.
  Bound bind(Tape& tape);

 private:
  std::size_t add(std::string name, Matrix value);

  ModelConfig config_;
  std::vector<Parameter> params_;
};

struct ForwardOutput {
  Var velocity;  ///< [N_tgt x feature_dim]
  AttentionTrace trace;
  Var attention;  ///< average_trace(trace)
};

/// Runs the stack on one sample with the target stream replaced by
/// `noisy_target` at flow time `t`.
ForwardOutput forward(Tape& tape, Model& model, const Sample& sample, const Matrix& noisy_target, double t);

}  // namespace mosaic
