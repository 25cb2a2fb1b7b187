#pragma once

// The two classifier topologies: the shallow Deep-ConvNet and a
// ResNet-18-style network with an adjustable width multiplier.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>

#include "tbnet/error.hpp"
#include "tbnet/layers.hpp"
#include "tbnet/network.hpp"

namespace tbnet {

enum class NetKind { DeepConvNet, ResNet18 };

inline std::string_view to_string(NetKind k) { return k == NetKind::DeepConvNet ? "convnet" : "resnet18"; }

inline NetKind parse_net_kind(std::string_view s) {
  if (s == "convnet" || s == "deep_convnet") return NetKind::DeepConvNet;
  if (s == "resnet18") return NetKind::ResNet18;
  throw PreconditionError("unknown network '" + std::string(s) + "' (expected convnet or resnet18)");
}

/// conv5x5/32 s1 p2 - ReLU - BN - maxpool2 - conv3x3/64 s1 p1 - ReLU - BN -
/// maxpool2 - FC(1024) - ReLU - FC(classes).
template <typename T>
Network<T> build_deep_convnet(std::size_t height, std::size_t width, std::size_t classes, std::uint64_t seed) {
  if (height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0)
    throw PreconditionError("build_deep_convnet: input " + std::to_string(height) + "x" + std::to_string(width) +
                            " must be divisible by 4");
  if (classes < 2) throw PreconditionError("build_deep_convnet: need at least 2 classes");
  std::mt19937_64 rng(seed);
  Network<T> net("deep_convnet", {1, height, width}, classes);
  net.add(std::make_unique<Conv2d<T>>("conv1", 1, 32, 5, 1, 2, true, rng));
  net.add(std::make_unique<ReLU<T>>());
  net.add(std::make_unique<BatchNorm<T>>("bn1", 32));
  net.add(std::make_unique<MaxPool<T>>(2, 2));
  net.add(std::make_unique<Conv2d<T>>("conv2", 32, 64, 3, 1, 1, true, rng));
  net.add(std::make_unique<ReLU<T>>());
  net.add(std::make_unique<BatchNorm<T>>("bn2", 64));
  net.add(std::make_unique<MaxPool<T>>(2, 2));
  net.add(std::make_unique<Linear<T>>("fc1", 64 * (height / 4) * (width / 4), 1024, rng));
  net.add(std::make_unique<ReLU<T>>());
  net.add(std::make_unique<Linear<T>>("fc2", 1024, classes, rng));
  net.finalize();
  return net;
}

/// Channel width of a ResNet stage after applying the multiplier.
inline std::size_t scaled_width(std::size_t base, double width_mult) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(base) * width_mult)));
}

/// Stem conv7x7 s2 p3 - BN - ReLU - maxpool3x3 s2 p1, four stages of two
/// basic blocks (stages 2-4 open with a stride-2 projection block), global
/// average pool, FC(classes). Single-channel input.
template <typename T>
Network<T> build_resnet18(std::size_t height, std::size_t width, std::size_t classes, double width_mult,
                          std::uint64_t seed) {
  if (!(width_mult > 0.0 && width_mult <= 1.0))
    throw PreconditionError("build_resnet18: width multiplier must lie in (0, 1]");
  if (height < 32 || width < 32)
    throw PreconditionError("build_resnet18: input " + std::to_string(height) + "x" + std::to_string(width) +
                            " too small for the stride schedule (need >= 32x32)");
  if (classes < 2) throw PreconditionError("build_resnet18: need at least 2 classes");
  std::mt19937_64 rng(seed);
  Network<T> net("resnet18", {1, height, width}, classes);
  const std::size_t stem = scaled_width(64, width_mult);
  net.add(std::make_unique<Conv2d<T>>("stem.conv", 1, stem, 7, 2, 3, false, rng, OutputRounding::Floor));
  net.add(std::make_unique<BatchNorm<T>>("stem.bn", stem));
  net.add(std::make_unique<ReLU<T>>());
  net.add(std::make_unique<MaxPool<T>>(3, 2, 1));
  std::size_t in_ch = stem;
  const std::size_t bases[4] = {64, 128, 256, 512};
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t out_ch = scaled_width(bases[stage], width_mult);
    for (std::size_t b = 0; b < 2; ++b) {
      const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
      const std::string name = "layer" + std::to_string(stage + 1) + "." + std::to_string(b);
      net.add(std::make_unique<ResidualBlock<T>>(name, in_ch, out_ch, stride, rng));
      in_ch = out_ch;
    }
  }
  net.add(std::make_unique<GlobalAvgPool<T>>());
  net.add(std::make_unique<Linear<T>>("fc", in_ch, classes, rng));
  net.finalize();
  return net;
}

struct ModelConfig {
  NetKind kind = NetKind::DeepConvNet;
  std::size_t resolution = 64;
  double width_mult = 0.25;
  std::size_t classes = 2;
};

template <typename T>
Network<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return cfg.kind == NetKind::DeepConvNet
             ? build_deep_convnet<T>(cfg.resolution, cfg.resolution, cfg.classes, seed)
             : build_resnet18<T>(cfg.resolution, cfg.resolution, cfg.classes, cfg.width_mult, seed);
}

}  // namespace tbnet
