#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "dsanet/dsa.hpp"
#include "dsanet/tensor.hpp"

namespace dsanet {

// Analytic cost accounting. Conventions (also stated in every report):
// one multiply-add = one FLOP; batch norm, ReLU and pooling are free at
// runtime; conv layers are bias-free with batch norm; the classifier has a
// bias and runs once per snippet.

enum class ResBlockType { kBasic, kBottleneck };

struct StageSpec {
  std::string name;
  std::size_t blocks = 0;
  std::size_t mid_channels = 0;  // bottleneck inner width; basic: = out
  std::size_t out_channels = 0;
  bool temporal_kernel = false;  // 3x1^2 first conv (bottleneck) / 3x3^2 (basic)
  std::size_t spatial_stride = 1;
  std::size_t output_spatial = 0;  // declared output size at nominal input
};

struct ArchSpec {
  std::string name;
  ResBlockType block_type = ResBlockType::kBottleneck;
  std::size_t input_spatial = 224;
  std::size_t raw_frames = 32;
  std::size_t data_temporal_stride = 8;
  std::size_t conv1_kt = 1, conv1_k = 7, conv1_out = 64, conv1_stride = 2;
  std::size_t pool1_k = 3, pool1_stride = 2;
  std::vector<StageSpec> stages;
  std::size_t classes = 400;

  void validate() const;
};

ArchSpec load_arch(const std::filesystem::path& path);
void save_arch(const ArchSpec& arch, const std::filesystem::path& path);
// Directory holding the architecture files shipped with the repository.
std::filesystem::path builtin_arch_dir();

// One conv or affine layer, as the cost model sees it.
struct ConvLayer {
  std::string name;
  std::size_t kt = 1, kh = 1, kw = 1;
  std::size_t cin = 0, cout = 0;
  std::size_t stride_t = 1, stride_s = 1;
  bool batch_norm = true;
  bool bias = false;
};

struct LayerCost {
  unsigned long long macs = 0;    // per sample, per snippet
  unsigned long long params = 0;
};
// Temporal/spatial padding is (k-1)/2, so odd kernels preserve extents up to
// stride. Rejects kernels larger than the padded input.
LayerCost layer_cost(const ConvLayer& layer, std::size_t frames,
                     std::size_t spatial);

struct CostItem {
  std::string name;
  std::string kind;  // "conv", "fc", "pool", "dsa"
  unsigned long long macs = 0;  // per clip: all U snippets
  unsigned long long params = 0;
};

struct CostReport {
  std::string arch;
  std::size_t frames = 0;
  std::size_t resolution = 0;
  std::size_t snippets = 1;
  std::size_t classes = 0;
  std::vector<CostItem> items;

  unsigned long long total_macs() const;
  unsigned long long conv_macs() const;
  unsigned long long classifier_macs() const;
  unsigned long long total_params() const;
  double total_gflops() const {
    return static_cast<double>(total_macs()) / 1e9;
  }
};

// Whole-architecture cost for one clip of `snippets` snippets of
// `frames` frames at `resolution`^2. Verifies declared stage output sizes
// when run at the architecture's nominal input resolution.
CostReport arch_cost(const ArchSpec& arch, std::size_t frames,
                     std::size_t resolution, std::size_t snippets,
                     std::size_t classes = 0);

// Additional cost of aggregation modules at position II in every other block
// of the named stages (count = floor(blocks/2) per stage).
struct DsaPlacementCost {
  std::vector<std::string> stages;
  std::size_t snippets = 4;
  std::size_t kernel_size = 3;
  std::size_t width_factor = 2;
  double dynamic_fraction = 0.125;
};
CostReport dsa_overhead(const ArchSpec& arch, const DsaPlacementCost& placement,
                        std::size_t frames, std::size_t resolution);

enum class ReportFormat { kTable, kJson };
std::string report_render(const CostReport& report, ReportFormat format);
// Inverse of the JSON rendering; integer-exact.
CostReport report_from_json(const std::string& json_text);

}  // namespace dsanet
