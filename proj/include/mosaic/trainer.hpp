// Optimization loop, evaluation metrics and loss ablations.

#pragma once

#include "mosaic/correspondence.hpp"
#include "mosaic/model.hpp"
#include "mosaic/objectives.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mosaic {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  ///< decoupled, AdamW-style
};

/// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(const AdamConfig& config, std::vector<Parameter*> params);

  /// Applies one update from the current `grad` of every parameter.
  void step();
  std::int64_t steps_taken() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_, v_;
  std::int64_t t_ = 0;
};

/// Fixed probe used for every evaluation: flow time and a noise stream.
struct EvalConfig {
  double t = 0.2;
  std::uint64_t seed = 7919;
  std::size_t max_samples = 32;  ///< 0 evaluates the whole dataset
};

struct TrainConfig {
  std::int64_t steps = 2000;
  std::size_t batch_size = 1;
  AdamConfig optimizer;
  LossWeights weights;
  LossToggles toggles;
  std::uint64_t seed = 0;
  std::int64_t eval_interval = 100;
  double t_min = 0.001;
  double t_max = 0.999;
  EvalConfig eval;
};

struct StepRecord {
  std::int64_t step = 0;  ///< 1-based
  double l_diff = 0, l_sca = 0, l_md = 0, total = 0;
  std::optional<double> mass;        ///< M, on eval steps
  std::optional<double> divergence;  ///< D, on eval steps
};

struct TrainMetrics {
  std::vector<StepRecord> history;
};

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::int64_t step, std::string term)
      : std::runtime_error("non-finite " + term + " at step " + std::to_string(step)),
        step_(step),
        term_(std::move(term)) {}
  std::int64_t step() const { return step_; }
  const std::string& term() const { return term_; }

 private:
  std::int64_t step_;
  std::string term_;
};

/// Called after every step with the record just appended.
using StepCallback = std::function<void(const StepRecord&)>;

/// Runs cfg.steps Adam steps. Sample choice, flow time and noise for step s
/// come from Rng(cfg.seed, s), so the history is a pure function of the
/// inputs. Throws TrainingAborted on a non-finite loss term.
TrainMetrics train(Model& model, std::span<const Sample> dataset, const TrainConfig& cfg,
                   const StepCallback& on_step = {});

struct PairMass {
  std::int64_t sample = 0;
  int slot = 0;
  Index u = 0, v = 0;
  double mass = 0;
};

struct SlotMap {
  std::int64_t sample = 0;
  int slot = 0;
  GridSize grid;
  Matrix aggregate;  ///< [1 x N_tgt], sums to one
};

struct EvalResult {
  double mass = 0;        ///< M: mean attention at annotated (G(u), v)
  double divergence = 0;  ///< D: mean ordered-pair sym_kl between slot aggregates
  std::vector<PairMass> pairs;
  std::vector<SlotMap> maps;
};

/// M and D averaged over samples; samples with fewer than two effective
/// slots do not contribute to D.
EvalResult evaluate(Model& model, std::span<const Sample> dataset, const EvalConfig& cfg = {});

/// Noise the evaluation probe uses for the sample at `position`.
Matrix eval_noise(const EvalConfig& cfg, std::size_t position, Index rows, Index cols);

struct AblationVariant {
  std::string name;
  LossToggles toggles;
};

/// The three standard rows: baseline, +SCA, +SCA+MD.
std::vector<AblationVariant> standard_variants();

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double mass = 0;
  double divergence = 0;
  double l_diff = 0;  ///< mean over the trailing 100 steps
};

/// Trains a fresh model per variant from the same initialization and seed.
std::vector<AblationRow> ablation_run(std::span<const Sample> dataset, const ModelConfig& model_config,
                                      const InitOptions& init, const TrainConfig& cfg,
                                      const std::vector<AblationVariant>& variants);

/// Shortest round-trip decimal form of a double.
std::string format_double(double x);

/// Header `step,l_diff,l_sca,l_md,M,D`, one line per step; M and D are
/// empty on non-evaluation steps.
void write_metrics_log(std::ostream& out, const TrainMetrics& metrics);
void write_metrics_line(std::ostream& out, const StepRecord& r);
inline constexpr const char* kMetricsHeader = "step,l_diff,l_sca,l_md,M,D";

void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace mosaic
