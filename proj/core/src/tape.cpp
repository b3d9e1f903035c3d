#include "multimodel/tape.hpp"

#include <algorithm>

namespace mm {

std::span<double> GradSink::operator()(std::size_t i) {
  int node = inputs_[i];
  if (node < 0) return {};
  auto& g = grads_[static_cast<std::size_t>(node)];
  if (g.empty()) g.assign(sizes_[static_cast<std::size_t>(node)], 0.0);
  return g;
}

const Tensor& Gradients::get(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::out_of_range("no gradient for leaf '" + name + "'");
  return grads_[static_cast<std::size_t>(it - names_.begin())];
}

int Tape::push(std::size_t size, std::vector<int> inputs, BackwardFn fn) {
  sizes_.push_back(size);
  inputs_.push_back(std::move(inputs));
  backward_.push_back(std::move(fn));
  return static_cast<int>(sizes_.size() - 1);
}

Tensor Tape::leaf(const Tensor& value, std::string name) {
  if (!value.defined()) throw ShapeError("cannot register an empty tensor as a leaf");
  Tensor t = value.detach();
  t.tape_ = this;
  t.node_ = push(value.size(), {}, nullptr);
  leaves_.push_back(t.node_);
  leaf_names_.push_back(std::move(name));
  leaf_shapes_.push_back(value.shape());
  return t;
}

Tensor Tape::record(Tensor output, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  return record(std::move(output), std::span<const Tensor* const>(inputs.begin(), inputs.size()), std::move(fn));
}

Tensor Tape::record(Tensor output, std::span<const Tensor* const> inputs, BackwardFn fn) {
  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    if (!in->tracked()) continue;
    if (tape && tape != in->tape()) throw std::logic_error("op mixes tensors from two tapes");
    tape = in->tape();
  }
  if (!tape) return output;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Tensor* in : inputs) ids.push_back(in->tracked() ? in->node() : -1);
  output.tape_ = tape;
  output.node_ = tape->push(output.size(), std::move(ids), std::move(fn));
  return output;
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  Seed seed{loss, Tensor::scalar(1.0)};
  return backward(std::span<const Seed>(&seed, 1));
}

Gradients Tape::backward(std::span<const Seed> seeds) {
  std::vector<std::vector<double>> grads(sizes_.size());
  for (const Seed& s : seeds) {
    if (!s.output.tracked()) continue;
    if (s.output.tape() != this) throw std::logic_error("seed belongs to another tape");
    if (s.grad.size() != s.output.size()) throw ShapeError("seed gradient shape mismatch");
    auto& g = grads[static_cast<std::size_t>(s.output.node())];
    if (g.empty()) g.assign(s.output.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i];
  }
  for (std::size_t n = sizes_.size(); n-- > 0;) {
    if (grads[n].empty() || !backward_[n]) continue;
    GradSink sink(grads, sizes_, inputs_[n]);
    backward_[n](grads[n], sink);
    if (!inputs_[n].empty()) {
      // Interior gradients are no longer needed once propagated.
      std::vector<double>().swap(grads[n]);
    }
  }
  Gradients out;
  out.names_ = leaf_names_;
  out.grads_.reserve(leaves_.size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    auto& g = grads[static_cast<std::size_t>(leaves_[i])];
    if (g.empty()) g.assign(sizes_[static_cast<std::size_t>(leaves_[i])], 0.0);
    out.grads_.emplace_back(leaf_shapes_[i], std::move(g));
  }
  return out;
}

}  // namespace mm
