#include "mosaic/correspondence.hpp"

#include <json.hpp>

#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace mosaic {

std::vector<Index> SampleAnnotation::ref_token_counts() const {
  std::vector<Index> counts;
  counts.reserve(ref_grids.size());
  for (const auto& g : ref_grids) counts.push_back(g.count());
  return counts;
}

Index SampleAnnotation::ref_token_total() const {
  Index total = 0;
  for (const auto& g : ref_grids) total += g.count();
  return total;
}

std::vector<int> SampleAnnotation::effective_slots() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const bool valid = i < valid_mask.size() && valid_mask[i];
    if (valid && !sets[i].pairs.empty()) out.push_back(static_cast<int>(i) + 1);
  }
  return out;
}

DisjointnessReport validate_disjointness(const SampleAnnotation& ann) {
  DisjointnessReport report;
  std::unordered_map<Index, int> owner;
  for (const auto& set : ann.sets) {
    std::unordered_set<Index> seen_here;
    for (const auto& p : set.pairs) {
      if (!seen_here.insert(p.v).second) continue;  // in-set repeats are a per-set problem
      auto [it, inserted] = owner.emplace(p.v, set.slot);
      if (!inserted) report.collisions.push_back({p.v, it->second, set.slot});
    }
  }
  return report;
}

std::vector<std::string> set_invariant_violations(const SampleAnnotation& ann) {
  std::vector<std::string> out;
  const std::size_t k = ann.sets.size();
  if (ann.ref_grids.size() != k || ann.valid_mask.size() != k) {
    out.push_back("slot arrays disagree: " + std::to_string(k) + " sets, " + std::to_string(ann.ref_grids.size()) +
                  " grids, " + std::to_string(ann.valid_mask.size()) + " mask entries");
    return out;
  }
  if (ann.target_grid.rows <= 0 || ann.target_grid.cols <= 0) out.push_back("target grid must be positive");
  const Index n_tgt = ann.target_token_count();
  for (std::size_t i = 0; i < k; ++i) {
    const auto& set = ann.sets[i];
    const int slot = static_cast<int>(i) + 1;
    const std::string tag = "slot " + std::to_string(slot) + ": ";
    if (set.slot != slot) out.push_back(tag + "set labelled as slot " + std::to_string(set.slot));
    if (ann.ref_grids[i].rows <= 0 || ann.ref_grids[i].cols <= 0) out.push_back(tag + "reference grid must be positive");
    if (!ann.valid_mask[i] && !set.pairs.empty()) out.push_back(tag + "padded slot carries correspondences");
    if (ann.valid_mask[i] && set.pairs.empty()) out.push_back(tag + "valid slot has no correspondences");
    const Index n_ref = ann.ref_grids[i].count();
    std::unordered_set<Index> vs;
    for (const auto& p : set.pairs) {
      if (p.u < 0 || p.u >= n_ref) {
        out.push_back(tag + "u=" + std::to_string(p.u) + " outside reference grid of " + std::to_string(n_ref));
      }
      if (p.v < 0 || p.v >= n_tgt) {
        out.push_back(tag + "v=" + std::to_string(p.v) + " outside target grid of " + std::to_string(n_tgt));
      }
      if (!vs.insert(p.v).second) out.push_back(tag + "duplicate v=" + std::to_string(p.v) + " within set");
    }
  }
  return out;
}

std::vector<std::string> annotation_problems(const SampleAnnotation& ann) {
  std::vector<std::string> out = set_invariant_violations(ann);
  if (ann.sets.size() != ann.valid_mask.size() || ann.sets.size() != ann.ref_grids.size()) return out;
  for (const auto& c : validate_disjointness(ann).collisions) {
    out.push_back("target v=" + std::to_string(c.v) + " claimed by slots " + std::to_string(c.first_slot) + " and " +
                  std::to_string(c.second_slot));
  }
  return out;
}

void require_valid(const SampleAnnotation& ann) {
  const auto problems = annotation_problems(ann);
  if (!problems.empty()) throw InvalidAnnotation("invalid annotation: " + problems.front());
}

Index global_index(int slot, Index u, std::span<const Index> counts) {
  if (slot < 1 || static_cast<std::size_t>(slot) > counts.size()) {
    throw std::out_of_range("global_index: slot " + std::to_string(slot) + " outside 1.." +
                            std::to_string(counts.size()));
  }
  const Index n = counts[static_cast<std::size_t>(slot - 1)];
  if (u < 0 || u >= n) {
    throw std::out_of_range("global_index: u=" + std::to_string(u) + " outside slot " + std::to_string(slot) +
                            " with " + std::to_string(n) + " tokens");
  }
  return std::accumulate(counts.begin(), counts.begin() + (slot - 1), Index{0}) + u;
}

bool operator==(const Sample& a, const Sample& b) {
  auto same = [](const Matrix& x, const Matrix& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && (x.size() == 0 || x == y);
  };
  if (a.id != b.id || !(a.annotation == b.annotation) || !same(a.target_tokens, b.target_tokens)) return false;
  if (a.ref_tokens.size() != b.ref_tokens.size()) return false;
  for (std::size_t i = 0; i < a.ref_tokens.size(); ++i) {
    if (!same(a.ref_tokens[i], b.ref_tokens[i])) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// JSON lines

namespace {

using Json = nlohmann::ordered_json;

Json flat(const Matrix& m) {
  Json arr = Json::array();
  for (Index i = 0; i < m.size(); ++i) arr.push_back(m.data()[i]);
  return arr;
}

Matrix unflat(const Json& arr, Index rows, Index cols, const std::string& what) {
  if (!arr.is_array() || static_cast<Index>(arr.size()) != rows * cols) {
    throw std::invalid_argument(what + " payload must hold " + std::to_string(rows * cols) + " numbers");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = arr[static_cast<std::size_t>(i)].get<double>();
  return m;
}

GridSize grid_from(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("grid must be [rows, cols]");
  return {j[0].get<Index>(), j[1].get<Index>()};
}

}  // namespace

std::string serialize_sample(const Sample& s) {
  const auto& a = s.annotation;
  Json j;
  j["id"] = s.id;
  j["target_grid"] = {a.target_grid.rows, a.target_grid.cols};
  Json grids = Json::array();
  for (const auto& g : a.ref_grids) grids.push_back({g.rows, g.cols});
  j["ref_grids"] = grids;
  Json valid = Json::array();
  for (bool v : a.valid_mask) valid.push_back(v);
  j["valid"] = valid;
  Json pairs = Json::array();
  for (const auto& set : a.sets) {
    Json list = Json::array();
    for (const auto& p : set.pairs) list.push_back({p.u, p.v});
    pairs.push_back(list);
  }
  j["pairs"] = pairs;
  j["feature_dim"] = s.feature_dim();
  j["target"] = flat(s.target_tokens);
  Json refs = Json::array();
  for (const auto& r : s.ref_tokens) refs.push_back(flat(r));
  j["refs"] = refs;
  return j.dump();
}

Sample parse_sample(const std::string& line, std::size_t line_number) {
  auto fail = [line_number](const std::string& why) {
    return DatasetError(DatasetError::Kind::parse, line_number,
                        "line " + std::to_string(line_number) + ": " + why);
  };
  Json j;
  try {
    j = Json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(std::string("malformed record (") + e.what() + ")");
  }
  try {
    Sample s;
    s.id = j.at("id").get<std::int64_t>();
    auto& a = s.annotation;
    a.target_grid = grid_from(j.at("target_grid"));
    for (const auto& g : j.at("ref_grids")) a.ref_grids.push_back(grid_from(g));
    for (const auto& v : j.at("valid")) a.valid_mask.push_back(v.get<bool>());
    int slot = 1;
    for (const auto& list : j.at("pairs")) {
      CorrespondenceSet set;
      set.slot = slot++;
      for (const auto& p : list) {
        if (!p.is_array() || p.size() != 2) throw std::invalid_argument("pair must be [u, v]");
        set.pairs.push_back({p[0].get<Index>(), p[1].get<Index>()});
      }
      a.sets.push_back(std::move(set));
    }
    if (a.ref_grids.size() != a.sets.size() || a.valid_mask.size() != a.sets.size()) {
      throw std::invalid_argument("ref_grids, valid and pairs must have one entry per slot");
    }
    const Index d = j.at("feature_dim").get<Index>();
    if (d <= 0) throw std::invalid_argument("feature_dim must be positive");
    if (a.target_grid.rows <= 0 || a.target_grid.cols <= 0) throw std::invalid_argument("target grid must be positive");
    s.target_tokens = unflat(j.at("target"), a.target_grid.count(), d, "target");
    const auto& refs = j.at("refs");
    if (!refs.is_array() || refs.size() != a.sets.size()) throw std::invalid_argument("refs must have one entry per slot");
    for (std::size_t k = 0; k < refs.size(); ++k) {
      if (a.ref_grids[k].rows <= 0 || a.ref_grids[k].cols <= 0) {
        throw std::invalid_argument("reference grid " + std::to_string(k + 1) + " must be positive");
      }
      s.ref_tokens.push_back(unflat(refs[k], a.ref_grids[k].count(), d, "reference " + std::to_string(k + 1)));
    }
    return s;
  } catch (const DatasetError&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(e.what());
  }
}

void save_dataset(const std::filesystem::path& path, std::span<const Sample> samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError(DatasetError::Kind::io, 0, "cannot open " + path.string() + " for writing");
  for (const auto& s : samples) out << serialize_sample(s) << '\n';
  out.flush();
  if (!out) throw DatasetError(DatasetError::Kind::io, 0, "write failed for " + path.string());
}

namespace {

template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(DatasetError::Kind::io, 0, "cannot open " + path.string());
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    fn(parse_sample(line, line_number), line_number);
  }
  if (in.bad()) throw DatasetError(DatasetError::Kind::io, line_number, "read failed for " + path.string());
}

}  // namespace

std::vector<Sample> load_dataset(const std::filesystem::path& path) {
  std::vector<Sample> out;
  for_each_record(path, [&out](Sample s, std::size_t line) {
    const auto problems = annotation_problems(s.annotation);
    if (!problems.empty()) {
      throw DatasetError(DatasetError::Kind::invariant, line,
                         "sample " + std::to_string(s.id) + " (line " + std::to_string(line) + "): " + problems.front());
    }
    out.push_back(std::move(s));
  });
  return out;
}

std::vector<RecordProblems> scan_dataset(const std::filesystem::path& path) {
  std::vector<RecordProblems> out;
  for_each_record(path, [&out](const Sample& s, std::size_t line) {
    out.push_back({s.id, line, annotation_problems(s.annotation)});
  });
  return out;
}

}  // namespace mosaic
