#include "mosaic/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace mosaic {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config: bad boolean '" + value + "' for " + key);
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> m;
    auto idx = [](auto get) {
      return [get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_number<Index>(k, v); };
    };
    auto i64 = [](auto get) {
      return [get](RunConfig& c, const std::string& k, const std::string& v) {
        get(c) = parse_number<std::int64_t>(k, v);
      };
    };
    auto real = [](auto get) {
      return [get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_number<double>(k, v); };
    };
    auto flag = [](auto get) {
      return [get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_bool(k, v); };
    };

    m["target_h"] = idx([](RunConfig& c) -> Index& { return c.synth.target_grid.rows; });
    m["target_w"] = idx([](RunConfig& c) -> Index& { return c.synth.target_grid.cols; });
    m["ref_h"] = idx([](RunConfig& c) -> Index& { return c.synth.ref_grid.rows; });
    m["ref_w"] = idx([](RunConfig& c) -> Index& { return c.synth.ref_grid.cols; });
    m["slots"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.synth.slots = parse_number<int>(k, v);
    };
    m["min_valid_slots"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.synth.min_valid_slots = parse_number<int>(k, v);
    };
    m["points_per_ref"] = idx([](RunConfig& c) -> Index& { return c.synth.points_per_ref; });
    m["feature_dim"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.synth.feature_dim = parse_number<Index>(k, v);
      c.model.feature_dim = c.synth.feature_dim;
    };
    m["noise_sigma"] = real([](RunConfig& c) -> double& { return c.synth.noise_sigma; });
    m["samples"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.samples = parse_number<std::size_t>(k, v);
    };
    m["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.set_seed(parse_number<std::uint64_t>(k, v));
    };

    m["width"] = idx([](RunConfig& c) -> Index& { return c.model.width; });
    m["heads"] = idx([](RunConfig& c) -> Index& { return c.model.heads; });
    m["blocks"] = idx([](RunConfig& c) -> Index& { return c.model.blocks; });
    m["mlp_hidden"] = idx([](RunConfig& c) -> Index& { return c.model.mlp_hidden; });
    m["text_tokens"] = idx([](RunConfig& c) -> Index& { return c.model.text_tokens; });
    m["lora_rank"] = idx([](RunConfig& c) -> Index& { return c.model.lora_rank; });
    m["lora_scale"] = real([](RunConfig& c) -> double& { return c.model.lora_scale; });
    m["theta_target"] = real([](RunConfig& c) -> double& { return c.model.rope.theta_target; });
    m["theta_text"] = real([](RunConfig& c) -> double& { return c.model.rope.theta_text; });
    m["theta_reference"] = real([](RunConfig& c) -> double& { return c.model.rope.theta_reference; });
    m["reference_growth"] = real([](RunConfig& c) -> double& { return c.model.rope.reference_growth; });
    m["stop_grad_target_keys"] = flag([](RunConfig& c) -> bool& { return c.model.stop_grad_target_keys; });
    m["zero_output"] = flag([](RunConfig& c) -> bool& { return c.init.zero_output; });

    m["steps"] = i64([](RunConfig& c) -> std::int64_t& { return c.train.steps; });
    m["batch_size"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.batch_size = parse_number<std::size_t>(k, v);
    };
    m["lr"] = real([](RunConfig& c) -> double& { return c.train.optimizer.learning_rate; });
    m["adam_beta1"] = real([](RunConfig& c) -> double& { return c.train.optimizer.beta1; });
    m["adam_beta2"] = real([](RunConfig& c) -> double& { return c.train.optimizer.beta2; });
    m["adam_eps"] = real([](RunConfig& c) -> double& { return c.train.optimizer.epsilon; });
    m["weight_decay"] = real([](RunConfig& c) -> double& { return c.train.optimizer.weight_decay; });
    m["alpha"] = real([](RunConfig& c) -> double& { return c.train.weights.alpha; });
    m["beta"] = real([](RunConfig& c) -> double& { return c.train.weights.beta; });
    m["enable_sca"] = flag([](RunConfig& c) -> bool& { return c.train.toggles.enable_sca; });
    m["enable_md"] = flag([](RunConfig& c) -> bool& { return c.train.toggles.enable_md; });
    m["eval_interval"] = i64([](RunConfig& c) -> std::int64_t& { return c.train.eval_interval; });
    m["t_min"] = real([](RunConfig& c) -> double& { return c.train.t_min; });
    m["t_max"] = real([](RunConfig& c) -> double& { return c.train.t_max; });
    m["eval_t"] = real([](RunConfig& c) -> double& { return c.train.eval.t; });
    m["eval_seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.eval.seed = parse_number<std::uint64_t>(k, v);
    };
    m["eval_samples"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.eval.max_samples = parse_number<std::size_t>(k, v);
    };
    return m;
  }();
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second(*this, key, value);
}

void RunConfig::set_seed(std::uint64_t seed) {
  synth.seed = seed;
  init.seed = seed;
  train.seed = seed;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : setters()) k.push_back(name);
    return k;
  }();
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(n) + ": empty key or value");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace mosaic
