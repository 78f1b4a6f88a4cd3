#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dsanet/ops.hpp"
#include "dsanet/tensor.hpp"

namespace dsanet {

class GradTape;

// Handle to one recorded tensor on a tape. Cheap to copy; the tape owns the
// value and any gradient.
class Var {
 public:
  Var() = default;
  bool valid() const { return tape_ != nullptr; }
  GradTape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;

 private:
  friend class GradTape;
  Var(GradTape* tape, std::size_t id) : tape_(tape), id_(id) {}
  GradTape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Forward calls append nodes in execution order; backward
// replays the record once, in reverse, accumulating gradients whose shapes
// always equal the primal shapes. A tape is confined to one logical thread.
class GradTape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out, GradTape&)>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Records an input or parameter.
  Var leaf(Tensor value, std::string name = "leaf");

  // Extension point for modules that define their own differentiable ops.
  Var record(std::string op, Tensor value, std::vector<Var> parents,
             BackwardFn backward);

  const Tensor& value(Var v) const;
  const std::string& op_name(std::size_t node) const;
  const Tensor& node_value(std::size_t node) const;
  std::vector<std::size_t> parents(std::size_t node) const;
  std::size_t size() const { return nodes_.size(); }

  // Reverse pass from a scalar output (shape (1)).
  void backward(Var scalar_output);
  bool has_grad(Var v) const;
  // Gradient of the last backward() w.r.t. v; zeros if v did not contribute.
  Tensor grad(Var v) const;
  void accumulate(Var v, const Tensor& g);

  // ---- recorded operations ----
  Var add(Var a, Var b);
  Var matmul(Var a, Var b);
  Var relu(Var x);
  Var softmax(Var x, std::size_t axis);
  Var global_avg_pool(Var x, std::vector<std::size_t> axes);
  Var batch_norm(Var x, Var gamma, Var beta, std::size_t feature_axis,
                 BatchNormState& state, Mode mode);
  Var conv_spatial(Var x, Var w, std::size_t stride, std::size_t pad);
  Var conv_temporal(Var x, Var w, std::size_t stride, std::size_t pad);
  std::pair<Var, Var> split_channels(Var x, std::size_t count);
  Var concat_channels(Var a, Var b);
  Var temporal_shift(Var x, double fraction);
  Var affine(Var x, Var w, Var b);
  Var permute(Var x, std::vector<std::size_t> perm);
  Var reshape(Var x, Shape shape);
  // Scalar-producing reductions.
  Var weighted_sum(Var x, Tensor weights);
  Var sum(Var x);
  Var cross_entropy_mean(Var logits, std::vector<int> labels);

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;  // empty for leaves
  };

  std::size_t checked(Var v, const char* what) const;
  Var push(std::string op, Tensor value, std::vector<Var> parents,
           BackwardFn backward);

  // deque: recording never invalidates references handed out by value()
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> grad_set_;
};

}  // namespace dsanet
