#include "mosaic/objectives.hpp"

#include <string>

namespace mosaic {

namespace {

std::vector<Index> global_rows(const SampleAnnotation& ann, int slot) {
  const auto counts = ann.ref_token_counts();
  std::vector<Index> rows;
  for (const auto& p : ann.set(slot).pairs) rows.push_back(global_index(slot, p.u, counts));
  return rows;
}

void check_attention_shape(const Var& attention, const SampleAnnotation& ann, const char* who) {
  if (attention.rows() != ann.ref_token_total() || attention.cols() != ann.target_token_count()) {
    throw ShapeError(std::string(who) + ": attention " + shape_string(attention.rows(), attention.cols()) +
                     " does not match annotation " + shape_string(ann.ref_token_total(), ann.target_token_count()));
  }
}

}  // namespace

Var sca_loss(const Var& attention, const SampleAnnotation& ann) {
  require_valid(ann);
  check_attention_shape(attention, ann, "sca_loss");
  const auto slots = ann.effective_slots();
  if (slots.empty()) throw ContractError("sca_loss: no valid correspondence points");

  const auto counts = ann.ref_token_counts();
  std::vector<std::pair<Index, Index>> cells;
  std::vector<double> weights;
  const double per_slot = 1.0 / static_cast<double>(slots.size());
  for (int slot : slots) {
    const auto& pairs = ann.set(slot).pairs;
    for (const auto& p : pairs) {
      cells.emplace_back(global_index(slot, p.u, counts), p.v);
      weights.push_back(per_slot / static_cast<double>(pairs.size()));
    }
  }
  const Var logs = log_floor(gather_cells(attention, std::move(cells)), kProbabilityFloor);
  Matrix w = Eigen::Map<const Matrix>(weights.data(), 1, static_cast<Index>(weights.size()));
  return scale(matmul(attention.tape().constant(std::move(w)), logs), -1.0);
}

Var md_aggregate(const Var& attention, const SampleAnnotation& ann, int slot) {
  check_attention_shape(attention, ann, "md_aggregate");
  if (slot < 1 || slot > ann.slots()) throw std::out_of_range("md_aggregate: slot " + std::to_string(slot));
  const std::size_t i = static_cast<std::size_t>(slot - 1);
  if (!ann.valid_mask.at(i) || ann.sets[i].pairs.empty()) {
    throw ContractError("md_aggregate: slot " + std::to_string(slot) + " is padded or empty");
  }
  return normalize_l1_rows(mean_rows(gather_rows(attention, global_rows(ann, slot))));
}

Var sym_kl(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("sym_kl: distributions " + shape_string(a.rows(), a.cols()) + " and " +
                     shape_string(b.rows(), b.cols()));
  }
  const Var log_ratio = sub(log_floor(a, kProbabilityFloor), log_floor(b, kProbabilityFloor));
  return scale(sum(hadamard(sub(a, b), log_ratio)), 0.5);
}

Var md_loss(const std::vector<Var>& aggregates, Tape& tape) {
  const auto k = static_cast<double>(aggregates.size());
  if (aggregates.size() < 2) return tape.constant(Matrix::Zero(1, 1));
  std::vector<Var> terms;
  for (std::size_t i = 0; i < aggregates.size(); ++i) {
    for (std::size_t j = 0; j < aggregates.size(); ++j) {
      if (i != j) terms.push_back(sym_kl(aggregates[i], aggregates[j]));
    }
  }
  return scale(sum(concat_rows(std::span<const Var>(terms))), -1.0 / (k * (k - 1.0)));
}

Matrix flow_interpolate(const Matrix& clean, const Matrix& noise, double t) {
  if (clean.rows() != noise.rows() || clean.cols() != noise.cols()) {
    throw ShapeError("flow_interpolate: clean " + shape_string(clean) + " vs noise " + shape_string(noise));
  }
  return (1.0 - t) * clean + t * noise;
}

Matrix flow_velocity_target(const Matrix& clean, const Matrix& noise) {
  if (clean.rows() != noise.rows() || clean.cols() != noise.cols()) {
    throw ShapeError("flow_velocity_target: clean " + shape_string(clean) + " vs noise " + shape_string(noise));
  }
  return noise - clean;
}

Var flow_matching_loss(const Var& predicted, const Matrix& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols()) {
    throw ShapeError("flow_matching_loss: prediction " + shape_string(predicted.rows(), predicted.cols()) +
                     " vs target " + shape_string(target));
  }
  const Var diff = sub(predicted, predicted.tape().constant(target));
  return mean(hadamard(diff, diff));
}

double combine_losses(double l_diff, double l_sca, double l_md, const LossWeights& w) {
  return l_diff + w.alpha * l_sca + w.beta * l_md;
}

LossGraph total_loss(Tape& tape, Model& model, const Sample& sample, double t, const Matrix& noise,
                     const LossWeights& weights, const LossToggles& toggles) {
  require_valid(sample.annotation);
  if (!(t > 0.0 && t < 1.0)) throw ContractError("total_loss: t must lie in (0, 1)");

  LossGraph g;
  const Matrix noisy = flow_interpolate(sample.target_tokens, noise, t);
  g.forward = forward(tape, model, sample, noisy, t);
  g.l_diff = flow_matching_loss(g.forward.velocity, flow_velocity_target(sample.target_tokens, noise));
  g.l_sca = sca_loss(g.forward.attention, sample.annotation);

  std::vector<Var> aggregates;
  for (int slot : sample.annotation.effective_slots()) {
    aggregates.push_back(md_aggregate(g.forward.attention, sample.annotation, slot));
  }
  g.l_md = md_loss(aggregates, tape);

  LossWeights applied{toggles.enable_sca ? weights.alpha : 0.0, toggles.enable_md ? weights.beta : 0.0};
  g.total = g.l_diff;
  if (toggles.enable_sca) g.total = add(g.total, scale(g.l_sca, weights.alpha));
  if (toggles.enable_md) g.total = add(g.total, scale(g.l_md, weights.beta));

  g.report.l_diff = g.l_diff.item();
  g.report.l_sca = g.l_sca.item();
  g.report.l_md = g.l_md.item();
  g.report.total = g.total.item();
  g.report.applied = applied;
  for (const auto& a : aggregates) g.report.aggregates.push_back(a.value());
  return g;
}

}  // namespace mosaic
