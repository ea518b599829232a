#include "vesseldg/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>

namespace vdg {

namespace {

constexpr char kMagic[8] = {'V', 'D', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<nn::ParamTensor<float>*>& params, const std::string& config_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint32_t>(config_json.size()));
  out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  write_pod(out, static_cast<std::uint64_t>(params.size()));
  for (const auto* p : params) {
    write_pod(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod(out, static_cast<std::uint32_t>(p->value.rows()));
    write_pod(out, static_cast<std::uint32_t>(p->value.cols()));
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path.string());
}

std::string load_checkpoint(const std::filesystem::path& path,
                            const std::vector<nn::ParamTensor<float>*>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != std::string(kMagic, 8))
    throw std::runtime_error("checkpoint: bad magic: " + path.string());
  if (read_pod<std::uint32_t>(in) != kVersion)
    throw std::runtime_error("checkpoint: unsupported version: " + path.string());
  const auto json_len = read_pod<std::uint32_t>(in);
  std::string config_json(json_len, '\0');
  in.read(config_json.data(), json_len);
  const auto count = read_pod<std::uint64_t>(in);
  // tensors are matched by name so a caller may load a subset (e.g. network
  // weights without the optimizer moments stored alongside them)
  std::map<std::string, nn::MatrixX<float>> stored;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = read_pod<std::uint32_t>(in);
    const auto cols = read_pod<std::uint32_t>(in);
    nn::MatrixX<float> value(rows, cols);
    in.read(reinterpret_cast<char*>(value.data()),
            static_cast<std::streamsize>(value.size() * sizeof(float)));
    stored.emplace(std::move(name), std::move(value));
  }
  if (!in) throw std::runtime_error("checkpoint: truncated file: " + path.string());
  for (auto* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end())
      throw std::runtime_error("checkpoint: missing tensor '" + p->name + "' in " + path.string());
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw std::runtime_error("checkpoint: shape mismatch at tensor '" + p->name + "'");
    p->value = it->second;
  }
  return config_json;
}

}  // namespace vdg
