#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dsanet/autograd.hpp"
#include "dsanet/dsa.hpp"
#include "dsanet/rng.hpp"
#include "dsanet/tensor.hpp"

namespace dsanet {

enum class BlockKind { kI3dBottleneck, kTsmBasic };

// Where the aggregation module sits inside a residual block:
//   I   before the first conv
//   II  after the first conv stack
//   III after the second conv stack (bottleneck kind only)
//   IV  after the last conv, before the residual addition
enum class DsaPosition { kI, kII, kIII, kIV };

struct DsaPlacement {
  DsaPosition position = DsaPosition::kII;
  DsaConfig config;
};

// Residual block with identity shortcut (toy scale: no downsampling, input
// and output widths equal).
struct BlockSpec {
  BlockKind kind = BlockKind::kI3dBottleneck;
  std::size_t channels = 0;       // block input/output width
  std::size_t mid_channels = 0;   // bottleneck inner width (I3D kind)
  bool temporal_first_conv = false;  // I3D kind: 3x1^2 instead of 1x1^2
  std::size_t spatial_kernel = 3;    // 1 or 3, middle conv(s)
  double shift_fraction = 0.125;     // TSM kind, per direction
  std::optional<DsaPlacement> dsa;

  void validate() const;
  // channel width seen by a module inserted at `position`
  std::size_t width_at(DsaPosition position) const;
};

struct ToyNetSpec {
  std::size_t in_channels = 0;
  std::size_t stem_channels = 0;
  std::size_t classes = 2;
  std::vector<BlockSpec> blocks;

  void validate() const;
};

struct ConvBnParams {
  Tensor w;
  Tensor gamma;
  Tensor beta;
  BatchNormState bn;
};

struct BlockParams {
  ConvBnParams conv_a;
  ConvBnParams conv_b;
  ConvBnParams conv_c;  // bottleneck kind only
  DsaParams dsa;        // present iff the spec places a module
};

struct ToyNetParams {
  ConvBnParams stem;
  std::vector<BlockParams> blocks;
  Tensor fc_w;
  Tensor fc_b;

  static ToyNetParams init(const ToyNetSpec& spec, Rng& rng);
};

// Ordered, named traversal of every learnable tensor.
void for_each_param(const ToyNetSpec& spec, ToyNetParams& params,
                    const std::function<void(const std::string&, Tensor&)>& fn);

struct ConvBnVars {
  Var w, gamma, beta;
};
struct BlockVars {
  ConvBnVars conv_a, conv_b, conv_c;
  DsaParamVars dsa;
};
struct ToyNetVars {
  ConvBnVars stem;
  std::vector<BlockVars> blocks;
  Var fc_w, fc_b;
};
ToyNetVars make_toynet_leaves(GradTape& tape, const ToyNetSpec& spec,
                              const ToyNetParams& params);

// Leaves in the same order for_each_param visits the parameter tensors.
std::vector<Var> collect_leaves(const ToyNetSpec& spec, const ToyNetVars& vars);

// TSM-style shift: within each snippet, the first floor(fraction*C) channels
// move one frame forward, the next group one frame back, zero filled.
Var temporal_shift(GradTape& tape, Var x, double fraction);

// One residual block; `params` hosts the batch-norm running stats, which are
// updated in train mode.
Var run_block(GradTape& tape, Var x, const BlockSpec& spec, const BlockVars& vars,
              BlockParams& params, Mode mode);

// Per-snippet class logits, shape (N, U, classes).
Var snippet_logits(GradTape& tape, Var x, const ToyNetSpec& spec,
                   const ToyNetVars& vars, ToyNetParams& params, Mode mode);

// Average voting over snippets: (N, U, classes) -> (N, classes). Uses an
// order-insensitive mean, so permuting the snippet axis of equal per-snippet
// logits cannot change the output bitwise.
Var consensus(GradTape& tape, Var logits);
Tensor consensus(const Tensor& logits);

// Convenience: full forward pass to consensus logits without keeping a tape.
Tensor forward_consensus(const ToyNetSpec& spec, ToyNetParams& params,
                         const Tensor& inputs, Mode mode);

// Reorders the snippet axis: out[..., u, ...] = x[..., perm[u], ...].
Tensor permute_snippets(const Tensor& x, std::span<const std::size_t> perm);

// Synthetic order task: each sample carries one Gaussian blob whose amplitude
// runs through a permutation of {1,2,3,4} across the U=4 snippets; label 1
// iff the amplitudes increase with snippet index. Per-snippet content is
// label-independent by construction.
struct OrderDataset {
  Tensor inputs;            // (n, 4, 4, 2, 4, 4)
  std::vector<int> labels;  // balanced
};
OrderDataset make_order_dataset(std::size_t n, std::uint64_t seed);

struct TrainResult {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_train_accuracy;
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;
};

// Plain SGD with cross-entropy on the consensus logits. The first half of the
// dataset trains, the second half is held out. Throws on non-finite loss.
TrainResult train_toy(const ToyNetSpec& spec, ToyNetParams& params,
                      const OrderDataset& dataset, std::size_t epochs,
                      double lr, std::uint64_t seed,
                      std::size_t batch_size = 32);

double evaluate_accuracy(const ToyNetSpec& spec, ToyNetParams& params,
                         const Tensor& inputs, std::span<const int> labels,
                         Mode mode);

// Demo configuration used by the training demonstration: TSM-basic blocks
// with the aggregation module at position II.
ToyNetSpec make_demo_spec(std::size_t blocks, std::size_t width, double beta);

}  // namespace dsanet
