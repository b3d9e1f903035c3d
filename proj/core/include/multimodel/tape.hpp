#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "multimodel/tensor.hpp"

namespace mm {

/// Hands a backward rule writable gradient buffers for its inputs.
class GradSink {
 public:
  GradSink(std::vector<std::vector<double>>& grads, const std::vector<std::size_t>& sizes,
           std::span<const int> inputs)
      : grads_(grads), sizes_(sizes), inputs_(inputs) {}

  /// Gradient buffer of input `i`; empty when that input is not tracked.
  std::span<double> operator()(std::size_t i);
  bool wants(std::size_t i) const { return inputs_[i] >= 0; }

 private:
  std::vector<std::vector<double>>& grads_;
  const std::vector<std::size_t>& sizes_;
  std::span<const int> inputs_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& inputs)>;

/// Leaf gradients returned by a backward pass, in leaf-creation order.
class Gradients {
 public:
  std::size_t size() const { return grads_.size(); }
  const Tensor& operator[](std::size_t i) const { return grads_.at(i); }
  const Tensor& get(const std::string& name) const;
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::vector<Tensor>& tensors() { return grads_; }

 private:
  friend class Tape;
  std::vector<std::string> names_;
  std::vector<Tensor> grads_;
};

/// Reverse-mode record of one forward pass. Single-threaded; entries are
/// appended in evaluation order so every entry's inputs precede it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiable leaf.
  Tensor leaf(const Tensor& value, std::string name = {});

  /// Attaches `output` to the tape if any input is tracked. Inputs that are
  /// tracked must all live on one tape.
  static Tensor record(Tensor output, std::initializer_list<const Tensor*> inputs, BackwardFn fn);
  static Tensor record(Tensor output, std::span<const Tensor* const> inputs, BackwardFn fn);

  struct Seed {
    Tensor output;
    Tensor grad;
  };

  /// Gradients of a scalar loss w.r.t. every leaf. Leaves off the path get zeros.
  Gradients backward(const Tensor& loss);
  /// Vector-Jacobian product for several outputs at once.
  Gradients backward(std::span<const Seed> seeds);

  std::size_t size() const { return sizes_.size(); }
  std::size_t leaf_count() const { return leaves_.size(); }

 private:
  int push(std::size_t size, std::vector<int> inputs, BackwardFn fn);

  std::vector<std::size_t> sizes_;
  std::vector<std::vector<int>> inputs_;
  std::vector<BackwardFn> backward_;
  std::vector<int> leaves_;
  std::vector<std::string> leaf_names_;
  std::vector<Shape> leaf_shapes_;
};

}  // namespace mm
