#include "multimodel/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace mm {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* field) {
    need(sizeof(T), field);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n, const char* field) {
    need(n, field);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + field);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::string& path) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  std::set<std::string> seen;
  std::uint64_t checksum = 0;
  for (const auto& [name, value] : tensors) {
    if (!seen.insert(name).second) throw std::invalid_argument("duplicate checkpoint tensor " + name);
    if (name.size() > 0xffff || value.rank() > 0xff) throw std::invalid_argument("checkpoint tensor too large: " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(value.rank()));
    for (std::size_t d : value.shape()) put<std::uint64_t>(out, d);
    for (double x : value.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(x);
      put<std::uint64_t>(out, bits);
      for (std::size_t i = 0; i < 8; ++i) checksum += (bits >> (8 * i)) & 0xff;
    }
  }
  put<std::uint64_t>(out, checksum);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("short write to " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(bytes);
  if (r.take(4, "magic") != std::string(kMagic, 4)) throw CheckpointError("bad magic: not a checkpoint");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) throw CheckpointError("unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  std::set<std::string> seen;
  std::uint64_t checksum = 0;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name = r.take(len, "name");
    if (!seen.insert(name).second) throw CheckpointError("duplicate tensor name " + name);
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      shape.push_back(r.get<std::uint64_t>("dims"));
      if (shape.back() != 0 && n > r.remaining() / shape.back()) throw CheckpointError("dims exceed file length for " + name);
      n *= shape.back();
    }
    if (n > r.remaining() / 8) throw CheckpointError("payload truncated for " + name);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto bits = r.get<std::uint64_t>("payload");
      for (std::size_t b = 0; b < 8; ++b) checksum += (bits >> (8 * b)) & 0xff;
      v[i] = std::bit_cast<double>(bits);
    }
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(v))});
  }
  if (r.get<std::uint64_t>("checksum") != checksum) throw CheckpointError("checksum mismatch");
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after checksum");
  return out;
}

std::vector<NamedTensor> named_tensors(const ModelParams& p) {
  std::vector<NamedTensor> out;
  visit(p, [&](const std::string& name, const Tensor& t) { out.push_back({name, t.detach()}); });
  return out;
}

void save_checkpoint(const ModelParams& p, const std::string& path) { save_checkpoint(named_tensors(p), path); }

void assign_tensors(ModelParams& p, const std::vector<NamedTensor>& tensors) {
  std::size_t i = 0;
  visit(p, [&](const std::string& name, Tensor& t) {
    if (i >= tensors.size()) throw CheckpointError("checkpoint is missing tensor " + name);
    const NamedTensor& src = tensors[i++];
    if (src.name != name) throw CheckpointError("expected tensor " + name + ", found " + src.name);
    if (src.value.shape() != t.shape())
      throw CheckpointError("tensor " + name + " has shape " + shape_str(src.value.shape()) + ", model expects " +
                            shape_str(t.shape()));
    t = src.value;
  });
  if (i != tensors.size()) throw CheckpointError("checkpoint has extra tensor " + tensors[i].name);
}

}  // namespace mm
