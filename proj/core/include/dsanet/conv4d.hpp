#pragma once

#include <cstddef>

#include "dsanet/dsa.hpp"
#include "dsanet/tensor.hpp"

namespace dsanet {

// 4D convolution kernel sliding over (U, T, H, W), shape
// (Cout, Cin, Lu, Lt, Lh, Lw) with odd sliding extents so centered offsets
// are well defined.
struct Kernel4D {
  Tensor values;
  void validate() const;
};

// Brute-force reference: direct nested summation with centered offsets and
// zero padding, no shortcuts. This deliberately shares no code with
// segment_conv so it can serve as its oracle.
Tensor conv4d(const Tensor& video, const Kernel4D& kernel);

// Embeds a per-channel aggregation kernel (one batch entry, C rows) as a 4D
// kernel with extents (L,1,1,1) on the channel diagonal; all cross-channel
// entries are zero. conv4d with this kernel must reproduce segment_conv.
Kernel4D embed_dsa_kernel(const DynamicKernel& kernel, std::size_t channels);

// Equivalence sweep: random inputs and normalized kernels over the small
// shape grid C in {1..3}, U in {2..4}, T,H,W in {1,2}, each dimension capped
// by max_extent. Reports the largest |segment_conv - conv4d(embed)| found.
struct OracleSweepOptions {
  std::size_t max_extent = 4;
  std::size_t seeds = 5;
  std::uint64_t seed = 1;
  std::size_t kernel_size = 3;
  std::size_t jobs = 1;
};

struct OracleSweepResult {
  double max_deviation = 0.0;
  Shape worst_shape;
  std::uint64_t worst_seed = 0;
  std::size_t cells = 0;
};

OracleSweepResult oracle_sweep(const OracleSweepOptions& options);

}  // namespace dsanet
