#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "dsanet/tensor.hpp"

namespace dsanet {

// ".dst" tensor file, bit-exact:
//   magic "DSAT" | version 0x01 | u32 LE rank | rank x u64 LE extents |
//   numel x IEEE-754 binary64 LE values, row-major.
void write_tensor(const Tensor& t, std::ostream& os);
Tensor read_tensor(std::istream& is);
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

// JSON manifest next to a set of .dst files: tensor name -> file name plus
// named numeric config fields. Keys are emitted sorted, so a manifest is a
// deterministic function of its contents.
struct Manifest {
  std::map<std::string, std::string> files;
  std::map<std::string, double> numbers;
};

void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

// Bundle helpers: tensors land in `dir` as <name>.dst plus manifest.json.
void save_bundle(const std::filesystem::path& dir,
                 const std::map<std::string, Tensor>& tensors,
                 const std::map<std::string, double>& numbers);
std::pair<std::map<std::string, Tensor>, std::map<std::string, double>>
load_bundle(const std::filesystem::path& dir);

}  // namespace dsanet
