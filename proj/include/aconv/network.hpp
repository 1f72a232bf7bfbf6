#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "aconv/layers.hpp"

namespace aconv {

template <typename Scalar>
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename LayerT, typename... Args>
  LayerT& add(Args&&... args) {
    auto layer = std::make_unique<LayerT>(std::forward<Args>(args)...);
    LayerT& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    Tensor<Scalar> h = x;
    for (auto& layer : layers_) h = layer->forward(h, mode);
    return h;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Parameter<Scalar>*> parameters() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& layer : layers_)
      for (auto* p : layer->parameters()) out.push_back(p);
    return out;
  }

  /// Trainable parameters followed by non-trainable buffers, in layer order.
  std::vector<Parameter<Scalar>*> state() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& layer : layers_) {
      for (auto* p : layer->parameters()) out.push_back(p);
      for (auto* p : layer->buffers()) out.push_back(p);
    }
    return out;
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    for (auto* p : parameters()) total += p->value.size();
    return total;
  }

  std::vector<AdaptiveConv2D<Scalar>*> adaptive_layers() {
    std::vector<AdaptiveConv2D<Scalar>*> out;
    for (auto& layer : layers_)
      if (auto* a = dynamic_cast<AdaptiveConv2D<Scalar>*>(layer.get())) out.push_back(a);
    return out;
  }

  std::size_t size() const { return layers_.size(); }
  Layer<Scalar>& layer(std::size_t i) { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

}  // namespace aconv
