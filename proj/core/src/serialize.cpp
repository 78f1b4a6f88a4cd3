#include "dsanet/serialize.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

namespace dsanet {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'A', 'T'};
constexpr std::uint8_t kVersion = 0x01;

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void write_tensor(const Tensor& t, std::ostream& os) {
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put_u64(os, static_cast<std::uint64_t>(e));
  for (double v : t.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("write_tensor: stream failure");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw std::runtime_error("read_tensor: bad magic, not a .dst file");
  }
  const int version = is.get();
  if (version != kVersion) {
    throw std::runtime_error("read_tensor: unsupported version " +
                             std::to_string(version));
  }
  const std::uint32_t rank = get_u32(is);
  if (!is || rank == 0 || rank > 64) {
    throw std::runtime_error("read_tensor: invalid rank");
  }
  Shape shape(rank);
  for (std::uint32_t a = 0; a < rank; ++a) {
    shape[a] = static_cast<std::size_t>(get_u64(is));
  }
  const std::size_t n = numel(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = std::bit_cast<double>(get_u64(is));
  }
  if (!is) throw std::runtime_error("read_tensor: truncated file");
  return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_tensor: cannot open " + path.string());
  write_tensor(t, os);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_tensor: cannot open " + path.string());
  return read_tensor(is);
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  for (const auto& [name, file] : m.files) files[name] = file;
  nlohmann::ordered_json numbers = nlohmann::ordered_json::object();
  for (const auto& [name, v] : m.numbers) numbers[name] = v;
  j["tensors"] = files;
  j["config"] = numbers;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_manifest: cannot open " + path.string());
  os << j.dump(2) << "\n";
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_manifest: cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(is);
  Manifest m;
  for (const auto& [name, file] : j.at("tensors").items()) {
    m.files[name] = file.get<std::string>();
  }
  for (const auto& [name, v] : j.at("config").items()) {
    m.numbers[name] = v.get<double>();
  }
  return m;
}

void save_bundle(const std::filesystem::path& dir,
                 const std::map<std::string, Tensor>& tensors,
                 const std::map<std::string, double>& numbers) {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.numbers = numbers;
  for (const auto& [name, t] : tensors) {
    const std::string file = name + ".dst";
    save_tensor(t, dir / file);
    m.files[name] = file;
  }
  save_manifest(m, dir / "manifest.json");
}

std::pair<std::map<std::string, Tensor>, std::map<std::string, double>>
load_bundle(const std::filesystem::path& dir) {
  Manifest m = load_manifest(dir / "manifest.json");
  std::map<std::string, Tensor> tensors;
  for (const auto& [name, file] : m.files) {
    tensors[name] = load_tensor(dir / file);
  }
  return {std::move(tensors), m.numbers};
}

}  // namespace dsanet
