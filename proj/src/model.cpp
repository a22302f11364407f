#include "mosaic/model.hpp"

#include "mosaic/random.hpp"

#include <cmath>
#include <stdexcept>

namespace mosaic {

void ModelConfig::validate() const {
  if (feature_dim <= 0 || width <= 0 || heads <= 0 || blocks <= 0 || mlp_hidden <= 0 || text_tokens < 0) {
    throw ConfigError("model: sizes must be positive");
  }
  if (width % heads != 0) {
    throw ConfigError("model: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (head_dim() % 4 != 0) {
    throw ConfigError("model: head dimension " + std::to_string(head_dim()) + " is not a multiple of 4");
  }
  if (lora_rank <= 0) throw ConfigError("model: lora rank must be positive");
}

QKV project_qkv(const Var& tokens, const BranchVars& w, const LoraVars* lora) {
  if (tokens.cols() != w.wq.rows()) {
    throw ShapeError("project_qkv: tokens " + shape_string(tokens.rows(), tokens.cols()) + " vs weights " +
                     shape_string(w.wq.rows(), w.wq.cols()));
  }
  auto proj = [&tokens, lora](const Var& weight, const Var* a, const Var* b) {
    Var out = matmul(tokens, weight);
    if (lora != nullptr) out = add(out, scale(matmul(matmul(tokens, *b), *a), lora->scale));
    return out;
  };
  if (lora == nullptr) return {proj(w.wq, nullptr, nullptr), proj(w.wk, nullptr, nullptr), proj(w.wv, nullptr, nullptr)};
  return {proj(w.wq, &lora->a_q, &lora->b_q), proj(w.wk, &lora->a_k, &lora->b_k), proj(w.wv, &lora->a_v, &lora->b_v)};
}

Var concat_references(std::span<const Var> refs, const std::vector<bool>& valid_mask) {
  if (refs.empty()) throw ShapeError("concat_references: no reference slots");
  if (valid_mask.size() != refs.size()) {
    throw ShapeError("concat_references: " + std::to_string(valid_mask.size()) + " mask entries for " +
                     std::to_string(refs.size()) + " slots");
  }
  std::vector<Var> parts;
  parts.reserve(refs.size());
  for (std::size_t k = 0; k < refs.size(); ++k) {
    if (valid_mask[k]) {
      parts.push_back(refs[k]);
    } else {
      parts.push_back(refs[k].tape().constant(Matrix::Zero(refs[k].rows(), refs[k].cols())));
    }
  }
  return concat_rows(std::span<const Var>(parts));
}

Var average_trace(const AttentionTrace& trace) {
  if (trace.slices.empty()) throw ContractError("average_trace: empty trace");
  Var acc = trace.slices.front();
  for (std::size_t i = 1; i < trace.slices.size(); ++i) acc = add(acc, trace.slices[i]);
  return scale(acc, 1.0 / static_cast<double>(trace.slices.size()));
}

namespace {

Var mlp(const Var& x, const BranchVars& w) { return matmul(gelu(matmul(rms_norm_rows(x), w.w1)), w.w2); }

}  // namespace

Streams block_forward(const Streams& in, const BlockVars& w, const StreamPositions& pos, const ModelConfig& config,
                      AttentionTrace* trace) {
  const Index d = config.width;
  if (in.target.cols() != d || in.text.cols() != d || in.reference.cols() != d) {
    throw ShapeError("block_forward: stream widths " + std::to_string(in.target.cols()) + "/" +
                     std::to_string(in.text.cols()) + "/" + std::to_string(in.reference.cols()) + " vs width " +
                     std::to_string(d));
  }
  const Index n_tgt = in.target.rows(), n_txt = in.text.rows(), n_ref = in.reference.rows();
  const Index hd = config.head_dim();
  const RopeConfig& rope = config.rope;

  QKV tgt = project_qkv(rms_norm_rows(in.target), w.target, nullptr);
  QKV txt = project_qkv(rms_norm_rows(in.text), w.text, nullptr);
  QKV ref = project_qkv(rms_norm_rows(in.reference), w.target, &w.lora);

  tgt.q = rope_apply(tgt.q, pos.target, hd, rope.theta(Branch::target));
  tgt.k = rope_apply(tgt.k, pos.target, hd, rope.theta(Branch::target));
  txt.q = rope_apply(txt.q, pos.text, hd, rope.theta(Branch::text));
  txt.k = rope_apply(txt.k, pos.text, hd, rope.theta(Branch::text));

  // Each reference slot rotates with its own base.
  {
    std::vector<Var> qs, ks;
    Index at = 0;
    for (std::size_t k = 0; k < pos.reference.size(); ++k) {
      const auto n = static_cast<Index>(pos.reference[k].size());
      const double theta = rope.theta(Branch::reference, static_cast<int>(k) + 1);
      qs.push_back(rope_apply(slice_rows(ref.q, at, n), pos.reference[k], hd, theta));
      ks.push_back(rope_apply(slice_rows(ref.k, at, n), pos.reference[k], hd, theta));
      at += n;
    }
    if (at != n_ref) {
      throw ShapeError("block_forward: reference positions cover " + std::to_string(at) + " of " +
                       std::to_string(n_ref) + " tokens");
    }
    ref.q = concat_rows(std::span<const Var>(qs));
    ref.k = concat_rows(std::span<const Var>(ks));
  }

  const Var q = concat_rows({tgt.q, txt.q, ref.q});
  const Var k = concat_rows({tgt.k, txt.k, ref.k});
  const Var v = concat_rows({tgt.v, txt.v, ref.v});
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<Var> head_out;
  for (Index h = 0; h < config.heads; ++h) {
    const Var qh = slice_cols(q, h * hd, hd);
    const Var kh = slice_cols(k, h * hd, hd);
    const Var vh = slice_cols(v, h * hd, hd);
    const Var probs = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    head_out.push_back(matmul(probs, vh));

    if (trace != nullptr) {
      const Var q_ref = slice_rows(qh, n_tgt + n_txt, n_ref);
      Var k_tgt = slice_rows(kh, 0, n_tgt);
      if (config.stop_grad_target_keys) k_tgt = detach(k_tgt);
      trace->slices.push_back(softmax_rows(scale(matmul(q_ref, transpose(k_tgt)), inv_sqrt)));
    }
  }
  const Var attn = concat_cols(std::span<const Var>(head_out));

  Streams out;
  out.target = add(in.target, matmul(slice_rows(attn, 0, n_tgt), w.target.wo));
  out.text = add(in.text, matmul(slice_rows(attn, n_tgt, n_txt), w.text.wo));
  out.reference = add(in.reference, matmul(slice_rows(attn, n_tgt + n_txt, n_ref), w.target.wo));

  out.target = add(out.target, mlp(out.target, w.target));
  out.text = add(out.text, mlp(out.text, w.text));
  out.reference = add(out.reference, mlp(out.reference, w.target));
  return out;
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& config, const InitOptions& init) : config_(config) {
  config_.rope.head_dim = config_.head_dim();
  config_.validate();
  const Index d = config_.width, f = config_.feature_dim, m = config_.mlp_hidden, r = config_.lora_rank;

  std::uint64_t stream = 0;
  auto gaussian = [&](Index rows, Index cols, double stddev) {
    Rng rng(init.seed, stream++);
    return rng.normal_matrix(rows, cols, stddev);
  };
  auto fan_in = [](Index n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

  add("embed.in", gaussian(f, d, fan_in(f)));
  add("embed.time_w", gaussian(1, d, 1.0));
  add("embed.time_b", Matrix::Zero(1, d));
  add("text.tokens", gaussian(config_.text_tokens, d, 1.0));
  for (Index l = 0; l < config_.blocks; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    for (const char* branch : {"target.", "text."}) {
      for (const char* p : {"wq", "wk", "wv", "wo"}) add(b + branch + p, gaussian(d, d, fan_in(d)));
      add(b + branch + "w1", gaussian(d, m, fan_in(d)));
      add(b + branch + "w2", gaussian(m, d, fan_in(m)));
    }
    for (const char* p : {"q", "k", "v"}) {
      add(b + "lora." + p + ".A", gaussian(r, d, fan_in(d)));
      add(b + "lora." + p + ".B", init.zero_lora_b ? Matrix::Zero(d, r) : gaussian(d, r, fan_in(r)));
    }
  }
  add("head.out", init.zero_output ? Matrix::Zero(d, f) : gaussian(d, f, fan_in(d)));
}

std::size_t Model::add(std::string name, Matrix value) {
  params_.emplace_back(std::move(name), std::move(value));
  return params_.size() - 1;
}

std::vector<Parameter*> Model::parameter_pointers() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

Parameter& Model::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("model has no parameter named " + std::string(name));
}

const Parameter& Model::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("model has no parameter named " + std::string(name));
}

void Model::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Model::Bound Model::bind(Tape& tape) {
  // Leaves are created in construction order.
  std::size_t next = 0;
  auto leaf = [&]() { return tape.parameter(params_.at(next++)); };
  Bound b;
  b.embed_in = leaf();
  b.time_w = leaf();
  b.time_b = leaf();
  b.text_tokens = leaf();
  for (Index l = 0; l < config_.blocks; ++l) {
    BlockVars block;
    for (BranchVars* branch : {&block.target, &block.text}) {
      branch->wq = leaf();
      branch->wk = leaf();
      branch->wv = leaf();
      branch->wo = leaf();
      branch->w1 = leaf();
      branch->w2 = leaf();
    }
    block.lora.a_q = leaf();
    block.lora.b_q = leaf();
    block.lora.a_k = leaf();
    block.lora.b_k = leaf();
    block.lora.a_v = leaf();
    block.lora.b_v = leaf();
    block.lora.scale = config_.lora_scale;
    b.blocks.push_back(block);
  }
  b.out = leaf();
  return b;
}

ForwardOutput forward(Tape& tape, Model& model, const Sample& sample, const Matrix& noisy_target, double t) {
  const ModelConfig& cfg = model.config();
  const auto& ann = sample.annotation;
  if (noisy_target.rows() != ann.target_token_count() || noisy_target.cols() != cfg.feature_dim) {
    throw ShapeError("forward: target tokens " + shape_string(noisy_target) + " vs grid " +
                     shape_string(ann.target_token_count(), cfg.feature_dim));
  }
  if (sample.ref_tokens.size() != ann.sets.size()) throw ShapeError("forward: payload/slot count mismatch");

  Model::Bound w = model.bind(tape);

  StreamPositions pos;
  pos.target = grid_positions(ann.target_grid);
  pos.text.assign(static_cast<std::size_t>(cfg.text_tokens), GridPosition{});
  std::vector<Var> refs;
  for (std::size_t k = 0; k < sample.ref_tokens.size(); ++k) {
    const Matrix& r = sample.ref_tokens[k];
    if (r.rows() != ann.ref_grids[k].count() || r.cols() != cfg.feature_dim) {
      throw ShapeError("forward: reference " + std::to_string(k + 1) + " tokens " + shape_string(r));
    }
    refs.push_back(tape.constant(r));
    pos.reference.push_back(grid_positions(ann.ref_grids[k]));
  }

  const Var time_row = add(scale(w.time_w, t), w.time_b);
  Streams s;
  s.target = add_row(matmul(tape.constant(noisy_target), w.embed_in), time_row);
  s.text = w.text_tokens;
  s.reference = matmul(concat_references(std::span<const Var>(refs), ann.valid_mask), w.embed_in);

  ForwardOutput out;
  out.trace.blocks = cfg.blocks;
  out.trace.heads = cfg.heads;
  for (const auto& block : w.blocks) s = block_forward(s, block, pos, cfg, &out.trace);

  out.velocity = matmul(rms_norm_rows(s.target), w.out);
  out.attention = average_trace(out.trace);
  return out;
}

}  // namespace mosaic
