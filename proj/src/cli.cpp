#include "mosaic/cli.hpp"

#include "mosaic/checkpoint.hpp"
#include "mosaic/correspondence.hpp"
#include "mosaic/gradcheck.hpp"
#include "mosaic/objectives.hpp"
#include "mosaic/random.hpp"
#include "mosaic/synthdata.hpp"
#include "mosaic/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>

namespace mosaic::cli {

namespace fs = std::filesystem;

RunConfig grad_check_defaults() {
  RunConfig c;
  c.synth.target_grid = {4, 4};
  c.synth.ref_grid = {2, 2};
  c.synth.slots = 2;
  c.synth.min_valid_slots = 2;
  c.synth.points_per_ref = 2;
  c.synth.feature_dim = 4;
  c.model.feature_dim = 4;
  c.model.width = 8;
  c.model.heads = 2;
  c.model.blocks = 1;
  c.model.mlp_hidden = 16;
  c.model.text_tokens = 2;
  c.model.lora_rank = 2;
  c.init.zero_output = false;
  c.init.zero_lora_b = false;
  return c;
}

std::vector<std::uint8_t> to_gray(const Matrix& values) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(values.size()), 128);
  if (values.size() == 0) return out;
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  if (!(hi > lo)) return out;
  for (Index i = 0; i < values.size(); ++i) {
    const double x = (values.data()[i] - lo) / (hi - lo);
    out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
  }
  return out;
}

std::string encode_pgm(const std::vector<std::uint8_t>& pixels, GridSize grid) {
  if (static_cast<Index>(pixels.size()) != grid.count()) {
    throw ShapeError("encode_pgm: " + std::to_string(pixels.size()) + " pixels for a " + std::to_string(grid.rows) +
                     "x" + std::to_string(grid.cols) + " grid");
  }
  std::string out = "P5\n" + std::to_string(grid.cols) + " " + std::to_string(grid.rows) + "\n255\n";
  out.append(pixels.begin(), pixels.end());
  return out;
}

namespace {

/// Config sources common to every subcommand.
struct Sources {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flag_values;
  std::vector<std::pair<std::string, CLI::Option*>> flags;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key=value config file");
    app->add_option("--set", sets, "override one config key (key=value), repeatable");
  }

  void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    flags.emplace_back(key, app->add_option(name, flag_values[key], help));
  }

  RunConfig resolve(RunConfig cfg) const {
    if (const char* env = std::getenv("SEED"); env != nullptr && *env != '\0') cfg.set("seed", env);
    if (!config_path.empty()) {
      for (const auto& [k, v] : read_config_file(config_path)) cfg.set(k, v);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, opt] : flags) {
      if (opt->count() > 0) cfg.set(key, flag_values.at(key));
    }
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::ios_base::failure("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::ios_base::failure("cannot create directory " + dir.string() + ": " + ec.message());
}

RunConfig with_dataset_width(RunConfig cfg, const std::vector<Sample>& data) {
  if (!data.empty()) cfg.model.feature_dim = data.front().feature_dim();
  for (const auto& s : data) {
    if (s.feature_dim() != cfg.model.feature_dim) {
      throw DatasetError(DatasetError::Kind::invariant, 0,
                         "sample " + std::to_string(s.id) + " has feature width " + std::to_string(s.feature_dim()) +
                             ", expected " + std::to_string(cfg.model.feature_dim));
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, const std::string& out_path, std::ostream& out) {
  cfg.synth.validate();
  if (out_path.empty()) throw ConfigError("gen-data: --out is required");
  generate_dataset(cfg.synth, cfg.samples, out_path);
  out << "wrote " << cfg.samples << " samples to " << out_path << '\n';
  return kOk;
}

int cmd_validate(const std::string& path, std::ostream& out) {
  const auto records = scan_dataset(path);
  std::size_t bad = 0;
  for (const auto& r : records) {
    if (r.problems.empty()) continue;
    ++bad;
    for (const auto& p : r.problems) out << "sample " << r.id << " (line " << r.line << "): " << p << '\n';
  }
  out << records.size() << " samples, " << bad << " invalid\n";
  return bad == 0 ? kOk : kFailure;
}

int cmd_grad_check(const RunConfig& cfg, double step, double tolerance, bool sabotage, std::ostream& out) {
  const Sample sample = generate_sample(cfg.synth, 0);
  ModelConfig mc = cfg.model;
  mc.feature_dim = cfg.synth.feature_dim;
  Model model(mc, cfg.init);
  Rng rng(cfg.train.seed, 0x9c);
  const double t = 0.37;
  const Matrix noise = rng.normal_matrix(sample.target_tokens.rows(), sample.target_tokens.cols());
  const LossWeights weights = cfg.train.weights;
  const LossToggles toggles = cfg.train.toggles;

  ScalarFunction<double> f = [&](Tape& tape) {
    return total_loss(tape, model, sample, t, noise, weights, toggles).total;
  };
  GradCheckOptions options;
  options.step = step;
  if (sabotage) {
    options.tamper = [](std::span<Parameter* const> params) { params.front()->grad.data()[0] += 1.0; };
  }
  const auto start = std::chrono::steady_clock::now();
  auto params = model.parameter_pointers();
  const GradCheckReport r = finite_difference_check<double>(f, params, options);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  out << "elements checked: " << r.elements_checked << '\n'
      << "max relative error: " << format_double(r.max_rel_error) << '\n'
      << "worst parameter: " << r.worst_parameter << '[' << r.worst_element << "] analytic "
      << format_double(r.worst_analytic) << " numeric " << format_double(r.worst_numeric) << '\n'
      << "tolerance: " << format_double(tolerance) << '\n'
      << "seconds: " << secs << '\n';
  const bool pass = r.max_rel_error < tolerance;
  out << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kOk : kFailure;
}

int cmd_train(const RunConfig& base, const std::string& data_path, const fs::path& out_dir, std::ostream& out) {
  const auto data = load_dataset(data_path);
  const RunConfig cfg = with_dataset_width(base, data);
  ensure_dir(out_dir);
  Model model(cfg.model, cfg.init);

  const fs::path log_path = out_dir / "metrics.csv";
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw std::ios_base::failure("cannot open " + log_path.string());
  log << kMetricsHeader << '\n';
  try {
    train(model, data, cfg.train, [&log](const StepRecord& r) { write_metrics_line(log, r); });
  } catch (const TrainingAborted&) {
    log.flush();
    throw;
  }
  log.flush();
  if (!log) throw std::ios_base::failure("write failed for " + log_path.string());
  save_checkpoint(out_dir / "checkpoint.bin", model);
  out << "trained " << cfg.train.steps << " steps; log " << log_path.string() << ", checkpoint "
      << (out_dir / "checkpoint.bin").string() << '\n';
  return kOk;
}

int cmd_ablate(const RunConfig& base, const std::string& data_path, const std::string& table_path, std::ostream& out) {
  std::vector<Sample> data;
  if (data_path.empty()) {
    data = generate_samples(base.synth, base.samples);
  } else {
    data = load_dataset(data_path);
  }
  const RunConfig cfg = with_dataset_width(base, data);
  const auto rows = ablation_run(data, cfg.model, cfg.init, cfg.train, standard_variants());
  std::ostringstream table;
  write_ablation_table(table, rows);
  if (!table_path.empty()) write_text(table_path, table.str());
  out << table.str();
  return kOk;
}

int cmd_export_attn(const RunConfig& base, const std::string& checkpoint, const std::string& data_path,
                    const fs::path& out_dir, std::size_t limit, std::ostream& out) {
  const auto data = load_dataset(data_path);
  const RunConfig cfg = with_dataset_width(base, data);
  Model model(cfg.model, cfg.init);
  restore(model, load_checkpoint(checkpoint));
  ensure_dir(out_dir);

  EvalConfig eval = cfg.train.eval;
  eval.max_samples = limit;
  const EvalResult result = evaluate(model, data, eval);

  for (const auto& m : result.maps) {
    const fs::path p = out_dir / ("attn_sample" + std::to_string(m.sample) + "_slot" + std::to_string(m.slot) + ".pgm");
    write_text(p, encode_pgm(to_gray(m.aggregate), m.grid));
  }
  std::ostringstream csv;
  csv << "sample,slot,u,v,attention_mass\n";
  for (const auto& p : result.pairs) {
    csv << p.sample << ',' << p.slot << ',' << p.u << ',' << p.v << ',' << format_double(p.mass) << '\n';
  }
  write_text(out_dir / "attention_masses.csv", csv.str());
  out << "wrote " << result.maps.size() << " maps and " << result.pairs.size() << " supervised cells to "
      << out_dir.string() << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-reference attention supervision toolkit"};
  app.require_subcommand(1);

  std::vector<std::unique_ptr<Sources>> keep;
  auto sources = [&keep](CLI::App* sub) {
    keep.push_back(std::make_unique<Sources>());
    keep.back()->attach(sub);
    return keep.back().get();
  };

  std::function<int()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  auto* gen_src = sources(gen);
  gen_src->flag(gen, "--n", "samples", "number of samples");
  gen_src->flag(gen, "--seed", "seed", "seed");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output dataset path");
  gen->callback([&] { action = [&] { return cmd_gen_data(gen_src->resolve(RunConfig{}), gen_out, out); }; });

  // validate-dataset
  auto* val = app.add_subcommand("validate-dataset", "check every record of a dataset");
  std::string val_path;
  val->add_option("path", val_path, "dataset path")->required();
  val->callback([&] { action = [&] { return cmd_validate(val_path, out); }; });

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "compare tape gradients with central differences");
  gc->set_help_flag("--help", "print this help message and exit");  // -h is taken by the step size
  auto* gc_src = sources(gc);
  gc_src->flag(gc, "--seed", "seed", "seed");
  double gc_step = 1e-5;
  double gc_tol = 0.0;
  bool gc_sabotage = false;
  gc->add_option("--h", gc_step, "finite-difference step");
  gc->add_option("--tolerance", gc_tol, "pass threshold (default max(1e-5, h))");
  gc->add_flag("--sabotage", gc_sabotage, "corrupt one analytic gradient (self-test)")->group("");
  gc->callback([&] {
    action = [&] {
      if (!(gc_step > 0)) throw ConfigError("grad-check: --h must be positive");
      const double tol = gc_tol > 0 ? gc_tol : std::max(1e-5, gc_step);
      return cmd_grad_check(gc_src->resolve(grad_check_defaults()), gc_step, tol, gc_sabotage, out);
    };
  });

  // train
  auto* tr = app.add_subcommand("train", "train on a dataset and write metrics + checkpoint");
  auto* tr_src = sources(tr);
  for (const char* k : {"steps", "lr", "alpha", "beta", "seed"}) tr_src->flag(tr, std::string("--") + k, k, k);
  std::string tr_data, tr_out = ".";
  tr->add_option("--data", tr_data, "dataset path")->required();
  tr->add_option("--out-dir", tr_out, "output directory");
  tr->callback([&] { action = [&] { return cmd_train(tr_src->resolve(RunConfig{}), tr_data, tr_out, out); }; });

  // ablate
  auto* ab = app.add_subcommand("ablate", "baseline vs +SCA vs +SCA+MD on a shared seed");
  auto* ab_src = sources(ab);
  for (const char* k : {"steps", "lr", "seed"}) ab_src->flag(ab, std::string("--") + k, k, k);
  ab_src->flag(ab, "--n", "samples", "samples to generate when --data is absent");
  std::string ab_data, ab_out;
  ab->add_option("--data", ab_data, "dataset path (generated when absent)");
  ab->add_option("--out", ab_out, "write the table here as well");
  ab->callback([&] { action = [&] { return cmd_ablate(ab_src->resolve(RunConfig{}), ab_data, ab_out, out); }; });

  // export-attn
  auto* ex = app.add_subcommand("export-attn", "write per-slot attention maps (PGM) and supervised masses (CSV)");
  auto* ex_src = sources(ex);
  std::string ex_ckpt, ex_data, ex_out = ".";
  std::size_t ex_limit = 0;
  ex->add_option("--checkpoint", ex_ckpt, "checkpoint path")->required();
  ex->add_option("--data", ex_data, "dataset path")->required();
  ex->add_option("--out-dir", ex_out, "output directory");
  ex->add_option("--limit", ex_limit, "samples to export (0 = all)");
  ex->callback([&] {
    action = [&] { return cmd_export_attn(ex_src->resolve(RunConfig{}), ex_ckpt, ex_data, ex_out, ex_limit, out); };
  });

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    return action ? action() : kConfigError;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DatasetError& e) {
    err << "dataset error: " << e.what() << '\n';
    return e.kind() == DatasetError::Kind::invariant ? kFailure : kIoError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::ios_base::failure& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const TrainingAborted& e) {
    err << "training aborted: " << e.what() << '\n';
    return kFailure;
  } catch (const InvalidAnnotation& e) {
    err << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace mosaic::cli
