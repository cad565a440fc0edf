#include <cstring>
#include <fstream>
#include <map>

#include "transmatcher/trainkit/trainkit.hpp"

namespace transmatcher::trainkit {

namespace {

constexpr char kMagic[4] = {'T', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put(bits, 8);
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() {
    const std::uint64_t bits = get(8);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(std::size_t n) {
    const char* p = take(n);
    return std::string(p, n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint '" + path_ + "' is truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t get(int n) {
    const char* p = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::vector<char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

template <class T>
void write_entry(Writer& w, std::uint8_t kind, const std::string& name, const nc::Tensor<T>& t) {
  w.u8(kind);
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.raw(name.data(), name.size());
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (const auto d : t.shape()) w.u64(d);
  for (const T v : t.data()) w.f64(static_cast<double>(v));
}

}  // namespace

template <class T>
void save_checkpoint(const std::string& path, const nc::ParameterSet<T>& params,
                     const CheckpointHeader& header) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.u64(header.config_hash);
  w.u64(header.seed);
  w.u64(params.params().size() + params.buffers().size());
  for (const auto& p : params.params()) write_entry(w, 0, p.name, p.tensor);
  for (const auto& b : params.buffers()) write_entry(w, 1, b.name, b.tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

template <class T>
CheckpointHeader load_checkpoint(const std::string& path, nc::ParameterSet<T>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path);
  if (r.str(4) != std::string(kMagic, 4)) throw std::runtime_error("'" + path + "' is not a checkpoint");
  if (r.u32() != kVersion) throw std::runtime_error("unsupported checkpoint version in '" + path + "'");
  CheckpointHeader h;
  h.config_hash = r.u64();
  h.seed = r.u64();
  const std::uint64_t count = r.u64();

  std::map<std::string, nc::Tensor<T>> targets;
  for (const auto& p : params.params()) targets[p.name] = p.tensor;
  for (const auto& b : params.buffers()) targets[b.name] = b.tensor;
  if (count != targets.size()) {
    throw std::runtime_error("checkpoint '" + path + "' holds " + std::to_string(count) +
                             " tensors, the model has " + std::to_string(targets.size()));
  }
  for (std::uint64_t e = 0; e < count; ++e) {
    r.u8();
    const std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    nc::Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    auto it = targets.find(name);
    if (it == targets.end()) throw std::runtime_error("checkpoint tensor '" + name + "' is not in the model");
    auto t = it->second;
    if (t.shape() != shape) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + nc::shape_str(shape) +
                               ", model expects " + nc::shape_str(t.shape()));
    }
    for (auto& v : t.mutable_data()) v = static_cast<T>(r.f64());
  }
  if (!r.done()) throw std::runtime_error("trailing bytes in checkpoint '" + path + "'");
  return h;
}

template void save_checkpoint(const std::string&, const nc::ParameterSet<float>&,
                              const CheckpointHeader&);
template void save_checkpoint(const std::string&, const nc::ParameterSet<double>&,
                              const CheckpointHeader&);
template CheckpointHeader load_checkpoint(const std::string&, nc::ParameterSet<float>&);
template CheckpointHeader load_checkpoint(const std::string&, nc::ParameterSet<double>&);

}  // namespace transmatcher::trainkit
