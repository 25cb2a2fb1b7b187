#pragma once

#include <cstddef>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tbnet/error.hpp"
#include "tbnet/layers.hpp"
#include "tbnet/tensor.hpp"

namespace tbnet {

struct LayerDesc {
  std::string kind;
  std::string detail;
  Shape output_shape;  // per sample
  std::vector<std::string> parameter_names;
};

/// Ordered layer description of a built network.
struct NetworkSpec {
  std::string name;
  Shape input_shape;
  std::size_t classes = 0;
  std::vector<LayerDesc> layers;

  /// One layer per line: index, description, per-sample output shape, parameters.
  std::string to_text() const {
    std::ostringstream os;
    os << name << " input " << shape_string(input_shape) << " classes " << classes << '\n';
    for (std::size_t i = 0; i < layers.size(); ++i) {
      os << i << ' ' << layers[i].detail << " -> " << shape_string(layers[i].output_shape);
      for (const auto& p : layers[i].parameter_names) os << ' ' << p;
      os << '\n';
    }
    return os.str();
  }
};

/// Sequential stack of layers with a fixed per-sample input shape.
template <typename T>
class Network {
 public:
  Network(std::string name, Shape input_shape, std::size_t classes)
      : spec_{std::move(name), std::move(input_shape), classes, {}}, current_shape_(spec_.input_shape) {}

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  /// Appends a layer; its input must match the running output shape.
  void add(std::unique_ptr<Layer<T>> layer) {
    Shape out = layer->output_shape(current_shape_);
    LayerDesc desc{layer->kind(), layer->describe(), out, {}};
    for (auto* p : layer->parameters()) {
      if (!names_.insert(p->name).second) throw PreconditionError("Network: duplicate parameter name " + p->name);
      desc.parameter_names.push_back(p->name);
    }
    spec_.layers.push_back(std::move(desc));
    current_shape_ = std::move(out);
    layers_.push_back(std::move(layer));
  }

  /// Validates that the stack ends in one logit per class.
  void finalize() const {
    if (current_shape_ != Shape{spec_.classes})
      throw ShapeError("Network: final output " + shape_string(current_shape_) + " is not (" +
                       std::to_string(spec_.classes) + ")");
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != spec_.input_shape.size() + 1 ||
        !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), x.shape().begin() + 1))
      throw ShapeError("Network: batch shape " + shape_string(x.shape()) + " does not match input " +
                       shape_string(spec_.input_shape));
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, mode);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& grad_logits) {
    Tensor<T> g = grad_logits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    if (corruption_ != 1.0) {
      auto params = parameters();
      if (!params.empty())
        for (auto& v : params.front()->grad.values()) v = static_cast<T>(v * corruption_);
    }
    return g;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }

  std::vector<Buffer<T>*> buffers() {
    std::vector<Buffer<T>*> out;
    for (auto& l : layers_)
      for (auto* b : l->buffers()) out.push_back(b);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  const NetworkSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return spec_.input_shape; }
  std::size_t classes() const { return spec_.classes; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

  /// Hash of every ReLU gate and pooling winner from the last forward pass.
  std::uint64_t activation_pattern() const {
    std::uint64_t h = 14695981039346656037ULL;
    for (const auto& l : layers_) l->hash_activation_pattern(h);
    return h;
  }

  /// Test hook: scales the first parameter's gradient after every backward pass.
  void set_backward_corruption(double factor) { corruption_ = factor; }

 private:
  NetworkSpec spec_;
  Shape current_shape_;
  std::set<std::string> names_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  double corruption_ = 1.0;
};

/// Argmax per row; ties resolve to the lower class index.
template <typename T>
std::vector<int> predict(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits[b * k + j] > logits[b * k + best]) best = j;
    out[b] = static_cast<int>(best);
  }
  return out;
}

}  // namespace tbnet
