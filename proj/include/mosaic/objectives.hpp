// Training objectives: flow-matching denoising, correspondence attention
// supervision, and pairwise disentanglement of per-reference attention.
//
// Averages over reference slots use K_eff, the number of valid slots that
// carry at least one correspondence; padded slots never enter a loss.

#pragma once

#include "mosaic/correspondence.hpp"
#include "mosaic/model.hpp"
#include "mosaic/tensor.hpp"

#include <vector>

namespace mosaic {

/// Floor applied to every probability before a log.
inline constexpr double kProbabilityFloor = 1e-12;

struct LossWeights {
  double alpha = 0.4;  ///< correspondence attention term
  double beta = 0.6;   ///< disentanglement term
};

/// -(1/K_eff) sum_k (1/P_k) sum_j log A[G(k, u_j), v_j].
/// Throws InvalidAnnotation on a bad annotation and ContractError when no
/// slot carries a correspondence.
Var sca_loss(const Var& attention, const SampleAnnotation& ann);

/// Mean of the attention rows of slot k's correspondence points, divided by
/// its sum. Result is [1 x N_tgt].
Var md_aggregate(const Var& attention, const SampleAnnotation& ann, int slot);

/// (KL(a||b) + KL(b||a)) / 2 for [1 x N] distributions, logs floored.
Var sym_kl(const Var& a, const Var& b);

/// -(1 / (K(K-1))) sum over ordered pairs i != j of sym_kl; exactly 0 for K < 2.
Var md_loss(const std::vector<Var>& aggregates, Tape& tape);

/// Point on the straight path from data (t = 0) to noise (t = 1).
Matrix flow_interpolate(const Matrix& clean, const Matrix& noise, double t);

/// Velocity the model regresses: noise - clean.
Matrix flow_velocity_target(const Matrix& clean, const Matrix& noise);

/// Mean squared error between the predicted and target velocity.
Var flow_matching_loss(const Var& predicted_velocity, const Matrix& velocity_target);

/// l_diff + alpha * l_sca + beta * l_md.
double combine_losses(double l_diff, double l_sca, double l_md, const LossWeights& weights);

struct LossReport {
  double l_diff = 0;
  double l_sca = 0;
  double l_md = 0;
  double total = 0;
  LossWeights applied;            ///< weights that actually entered `total`
  std::vector<Matrix> aggregates;  ///< per effective slot, [1 x N_tgt]
};

struct LossToggles {
  bool enable_sca = true;
  bool enable_md = true;
};

struct LossGraph {
  Var total;
  Var l_diff, l_sca, l_md;
  ForwardOutput forward;
  LossReport report;
};

/// One forward pass on `sample` at time t with noise `noise`; all three terms
/// are computed from the same attention trace. A disabled term is still
/// evaluated and reported but does not enter the graph of `total`.
LossGraph total_loss(Tape& tape, Model& model, const Sample& sample, double t, const Matrix& noise,
                     const LossWeights& weights, const LossToggles& toggles = {});

}  // namespace mosaic
