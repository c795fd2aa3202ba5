#include "latentscale/checkpoint.hpp"

#include <cstring>
#include <stdexcept>

#include "latentscale/io.hpp"

namespace latentscale::io {

namespace {

constexpr char kMagic[8] = {'L', 'S', 'C', 'K', 'P', 'T', '\0', '\n'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  Reader(const std::string& data, const std::string& path) : data_(data), path_(path) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void get_doubles(double* dst, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, data_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw std::runtime_error("truncated checkpoint: " + path_);
  }
  const std::string& data_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

const num::Tensor& Checkpoint::block(const std::string& name) const {
  for (const auto& [n, t] : blocks) {
    if (n == name) return t;
  }
  throw std::runtime_error("checkpoint has no block '" + name + "'");
}

void write_checkpoint(const std::string& path, const std::string& kind, const std::string& config_text,
                      const num::ParameterSet& params) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put_string(out, kind);
  put_string(out, config_text);
  put<std::uint64_t>(out, params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    put_string(out, p.name);
    put<std::uint64_t>(out, p.value.rank());
    for (auto d : p.value.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(double));
  }
  write_text(path, out);
}

Checkpoint read_checkpoint(const std::string& path) {
  const std::string data = read_text(path);
  if (data.size() < sizeof(kMagic) || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  Reader r(data, path);
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.get<char>();
  Checkpoint ck;
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  ck.kind = r.get_string();
  ck.config_text = r.get_string();
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t b = 0; b < n; ++b) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint64_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    num::Tensor t(shape);
    r.get_doubles(t.data(), t.size());
    ck.blocks.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes in checkpoint " + path);
  return ck;
}

void load_parameters(const Checkpoint& ckpt, num::ParameterSet& params) {
  if (ckpt.blocks.size() != params.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(ckpt.blocks.size()) + " blocks, model expects " +
                             std::to_string(params.size()));
  }
  for (const auto& [name, t] : ckpt.blocks) {
    auto& p = params.get(name);
    if (!p.value.same_shape(t)) {
      throw std::runtime_error("shape mismatch for '" + name + "': " + t.shape_string() + " vs " +
                               p.value.shape_string());
    }
    p.value = t;
  }
}

}  // namespace latentscale::io
