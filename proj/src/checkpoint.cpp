#include "mosaic/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

namespace mosaic {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  out.insert(out.end(), std::begin(bytes), std::end(bytes));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + at_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
    at_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string str(std::size_t n) {
    need(n, "tensor name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + at_), n);
    at_ += n;
    return s;
  }

  bool done() const { return at_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - at_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(at_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t at_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    for (Index i = 0; i < t.value.size(); ++i) put<double>(out, t.value.data()[i]);
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  std::vector<std::uint8_t> rest(bytes.begin() + 4, bytes.end());
  Reader in(rest);
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = in.str(in.get<std::uint32_t>("name length"));
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank < 1 || rank > 2) throw CheckpointError("tensor " + t.name + ": unsupported rank " + std::to_string(rank));
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t r = 0; r < rank; ++r) dims[r] = in.get<std::uint64_t>("dimension");
    // Rank-1 tensors load as a single row.
    const Index rows = rank == 2 ? static_cast<Index>(dims[0]) : 1;
    const Index cols = rank == 2 ? static_cast<Index>(dims[1]) : static_cast<Index>(dims[0]);
    t.value.resize(rows, cols);
    for (Index k = 0; k < t.value.size(); ++k) t.value.data()[k] = in.get<double>("tensor data");
    out.push_back(std::move(t));
  }
  if (!in.done()) throw CheckpointError("trailing bytes after last tensor");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::vector<NamedTensor> tensors;
  for (const auto& p : model.parameters()) tensors.push_back({p.name, p.value});
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void restore(Model& model, const std::vector<NamedTensor>& tensors) {
  std::unordered_map<std::string, const Matrix*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  for (auto& p : model.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter " + p.name);
    const Matrix& v = *it->second;
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
      throw CheckpointError("parameter " + p.name + ": checkpoint shape " + shape_string(v) + " vs model " +
                            shape_string(p.value));
    }
    p.value = v;
  }
}

}  // namespace mosaic
