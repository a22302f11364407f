#include "mosaic/trainer.hpp"

#include "mosaic/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace mosaic {

Adam::Adam(const AdamConfig& config, std::vector<Parameter*> params) : config_(config), params_(std::move(params)) {
  for (const auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double lr = config_.learning_rate;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.requires_grad) continue;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p.grad;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    const Matrix update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + config_.epsilon);
    if (config_.weight_decay != 0.0) p.value -= lr * config_.weight_decay * p.value;
    p.value -= lr * update;
  }
}

namespace {

void require_finite(double value, std::int64_t step, const char* term) {
  if (!std::isfinite(value)) throw TrainingAborted(step, term);
}

}  // namespace

TrainMetrics train(Model& model, std::span<const Sample> dataset, const TrainConfig& cfg, const StepCallback& on_step) {
  TrainMetrics metrics;
  if (cfg.steps <= 0) return metrics;
  if (dataset.empty()) throw ContractError("train: empty dataset");
  if (cfg.batch_size == 0) throw ConfigError("train: batch size must be positive");
  if (!(cfg.t_min > 0.0 && cfg.t_max < 1.0 && cfg.t_min < cfg.t_max)) {
    throw ConfigError("train: flow time range must satisfy 0 < t_min < t_max < 1");
  }
  for (const auto& s : dataset) require_valid(s.annotation);

  Adam optimizer(cfg.optimizer, model.parameter_pointers());
  const auto batch = static_cast<double>(cfg.batch_size);

  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    Rng rng(cfg.seed, static_cast<std::uint64_t>(step));
    model.zero_grad();
    StepRecord rec;
    rec.step = step;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const Sample& sample = dataset[static_cast<std::size_t>(rng.uniform_index(static_cast<Index>(dataset.size())))];
      const double t = cfg.t_min + (cfg.t_max - cfg.t_min) * rng.uniform();
      const Matrix noise = rng.normal_matrix(sample.target_tokens.rows(), sample.target_tokens.cols());

      Tape tape;
      LossGraph g = total_loss(tape, model, sample, t, noise, cfg.weights, cfg.toggles);
      require_finite(g.report.l_diff, step, "l_diff");
      require_finite(g.report.l_sca, step, "l_sca");
      require_finite(g.report.l_md, step, "l_md");
      tape.backward(g.total);

      rec.l_diff += g.report.l_diff / batch;
      rec.l_sca += g.report.l_sca / batch;
      rec.l_md += g.report.l_md / batch;
      rec.total += g.report.total / batch;
    }
    if (cfg.batch_size > 1) {
      for (auto& p : model.parameters()) p.grad /= batch;
    }
    optimizer.step();

    if ((cfg.eval_interval > 0 && step % cfg.eval_interval == 0) || step == cfg.steps) {
      const EvalResult e = evaluate(model, dataset, cfg.eval);
      rec.mass = e.mass;
      rec.divergence = e.divergence;
    }
    metrics.history.push_back(rec);
    if (on_step) on_step(rec);
  }
  return metrics;
}

Matrix eval_noise(const EvalConfig& cfg, std::size_t position, Index rows, Index cols) {
  Rng rng(cfg.seed, static_cast<std::uint64_t>(position));
  return rng.normal_matrix(rows, cols);
}

EvalResult evaluate(Model& model, std::span<const Sample> dataset, const EvalConfig& cfg) {
  EvalResult result;
  const std::size_t n = cfg.max_samples == 0 ? dataset.size() : std::min(cfg.max_samples, dataset.size());
  double mass_sum = 0.0, div_sum = 0.0;
  std::size_t mass_count = 0, div_count = 0;

  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = dataset[i];
    const auto& ann = s.annotation;
    require_valid(ann);
    const auto slots = ann.effective_slots();
    if (slots.empty()) continue;

    const Matrix noise = eval_noise(cfg, i, s.target_tokens.rows(), s.target_tokens.cols());
    Tape tape;
    const ForwardOutput out = forward(tape, model, s, flow_interpolate(s.target_tokens, noise, cfg.t), cfg.t);
    const Matrix& attention = out.attention.value();
    const auto counts = ann.ref_token_counts();

    double sample_mass = 0.0;
    std::size_t sample_pairs = 0;
    std::vector<Var> aggregates;
    for (int slot : slots) {
      for (const auto& p : ann.set(slot).pairs) {
        const double m = attention(global_index(slot, p.u, counts), p.v);
        result.pairs.push_back({s.id, slot, p.u, p.v, m});
        sample_mass += m;
        ++sample_pairs;
      }
      aggregates.push_back(md_aggregate(out.attention, ann, slot));
      result.maps.push_back({s.id, slot, ann.target_grid, aggregates.back().value()});
    }
    mass_sum += sample_mass / static_cast<double>(sample_pairs);
    ++mass_count;

    if (aggregates.size() >= 2) {
      double d = 0.0;
      for (std::size_t a = 0; a < aggregates.size(); ++a) {
        for (std::size_t b = 0; b < aggregates.size(); ++b) {
          if (a != b) d += sym_kl(aggregates[a], aggregates[b]).item();
        }
      }
      const auto k = static_cast<double>(aggregates.size());
      div_sum += d / (k * (k - 1.0));
      ++div_count;
    }
  }
  result.mass = mass_count == 0 ? 0.0 : mass_sum / static_cast<double>(mass_count);
  result.divergence = div_count == 0 ? 0.0 : div_sum / static_cast<double>(div_count);
  return result;
}

std::vector<AblationVariant> standard_variants() {
  return {{"baseline", {false, false}}, {"+SCA", {true, false}}, {"+SCA+MD", {true, true}}};
}

std::vector<AblationRow> ablation_run(std::span<const Sample> dataset, const ModelConfig& model_config,
                                      const InitOptions& init, const TrainConfig& cfg,
                                      const std::vector<AblationVariant>& variants) {
  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    Model model(model_config, init);
    TrainConfig run = cfg;
    run.toggles = variant.toggles;
    const TrainMetrics metrics = train(model, dataset, run);
    const EvalResult e = evaluate(model, dataset, run.eval);

    AblationRow row;
    row.variant = variant.name;
    row.seed = cfg.seed;
    row.mass = e.mass;
    row.divergence = e.divergence;
    const std::size_t tail = std::min<std::size_t>(100, metrics.history.size());
    for (std::size_t i = metrics.history.size() - tail; i < metrics.history.size(); ++i) {
      row.l_diff += metrics.history[i].l_diff / static_cast<double>(tail);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void write_metrics_line(std::ostream& out, const StepRecord& r) {
  out << r.step << ',' << format_double(r.l_diff) << ',' << format_double(r.l_sca) << ','
      << format_double(r.l_md) << ',';
  if (r.mass) out << format_double(*r.mass);
  out << ',';
  if (r.divergence) out << format_double(*r.divergence);
  out << '\n';
}

void write_metrics_log(std::ostream& out, const TrainMetrics& metrics) {
  out << kMetricsHeader << '\n';
  for (const auto& r : metrics.history) write_metrics_line(out, r);
}

void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant,seed,M,D,l_diff\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.seed << ',' << format_double(r.mass) << ',' << format_double(r.divergence) << ','
        << format_double(r.l_diff) << '\n';
  }
}

}  // namespace mosaic
