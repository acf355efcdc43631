#include "stt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace stt {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'P', 'K'};
constexpr uint32_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& data, std::string file) : data_(data), file_(std::move(file)) {}

  const char* take(size_t n) {
    if (pos_ + n > data_.size())
      throw std::runtime_error("checkpoint: " + file_ + " is truncated");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  uint16_t u16() {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(take(2));
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }

  uint32_t u32() {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(take(4));
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string file_;
  size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Registry& params, const std::string& config_text,
                     const std::filesystem::path& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  const auto ordered = params.ordered();
  put_u32(out, static_cast<uint32_t>(ordered.size()));
  for (const Parameter* p : ordered) {
    if (p->name.size() > 0xffff)
      throw std::runtime_error("checkpoint: parameter name too long: " + p->name);
    put_u16(out, static_cast<uint16_t>(p->name.size()));
    out.append(p->name);
    out.push_back(0);  // dtype f32
    out.push_back(static_cast<char>(p->value.rank()));
    for (int d = 0; d < p->value.rank(); ++d) put_u32(out, static_cast<uint32_t>(p->value.dim(d)));
    for (size_t i = 0; i < p->value.numel(); ++i) {
      const uint32_t bits = std::bit_cast<uint32_t>(p->value[i]);
      put_u32(out, bits);
    }
  }
  put_u32(out, static_cast<uint32_t>(config_text.size()));
  out.append(config_text);

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(data, path.string());

  const char* magic = r.take(4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  LoadedCheckpoint out;
  const uint32_t count = r.u32();
  std::unordered_set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    std::string name(r.take(name_len), name_len);
    if (!seen.insert(name).second)
      throw std::runtime_error("checkpoint: duplicate tensor name " + name);
    const unsigned char dtype = static_cast<unsigned char>(*r.take(1));
    if (dtype != 0)
      throw std::runtime_error("checkpoint: unknown dtype tag " + std::to_string(dtype));
    const unsigned char rank = static_cast<unsigned char>(*r.take(1));
    std::vector<int> dims;
    size_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      dims.push_back(static_cast<int>(r.u32()));
      numel *= static_cast<size_t>(dims.back());
    }
    Tensor t(dims);
    for (size_t j = 0; j < numel; ++j) t[j] = std::bit_cast<float>(r.u32());
    out.tensors.emplace_back(std::move(name), std::move(t));
  }
  const uint32_t cfg_len = r.u32();
  out.config_text.assign(r.take(cfg_len), cfg_len);
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes in " + path.string());
  return out;
}

void restore_registry(Registry& params, const LoadedCheckpoint& ckpt) {
  if (ckpt.tensors.size() != params.size())
    throw std::runtime_error("checkpoint: holds " + std::to_string(ckpt.tensors.size()) +
                             " tensors, registry expects " + std::to_string(params.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (!params.contains(name))
      throw std::runtime_error("checkpoint: unexpected tensor " + name);
    auto& p = params.at(name);
    if (p.value.shape() != tensor.shape())
      throw std::runtime_error("checkpoint: tensor " + name + " has shape " +
                               shape_str(tensor.shape()) + ", registry expects " +
                               shape_str(p.value.shape()));
    for (size_t i = 0; i < tensor.numel(); ++i) p.value[i] = tensor[i];
  }
}

uint64_t registry_hash(const Registry& params) {
  uint64_t h = 1469598103934665603ull;
  const auto fold = [&h](const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const Parameter* p : params.ordered()) {
    fold(p->name.data(), p->name.size());
    fold(p->value.data(), p->value.numel() * sizeof(float));
  }
  return h;
}

}  // namespace stt
