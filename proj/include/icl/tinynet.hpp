#pragma once

// A three-layer fully convolutional color predictor trained with the
// instance coloring loss:
//
//   image/255 -> conv3x3(3->16) -> ReLU -> conv3x3(16->16) -> ReLU
//             -> conv3x3(16->3) -> *255 -> normalize_field
//
// Zero padding, stride 1. Backpropagation is written out by hand.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "icl/field.hpp"
#include "icl/loss.hpp"
#include "icl/optim.hpp"
#include "icl/rng.hpp"

namespace icl {

/// Planar C x H x W activation tensor.
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0) {}

  double* plane(int c) { return data.data() + static_cast<std::size_t>(c) * height * width; }
  const double* plane(int c) const { return data.data() + static_cast<std::size_t>(c) * height * width; }
};

struct Conv3x3 {
  int in = 0;
  int out = 0;
  std::vector<double> weight;  // [out][in][3][3]
  std::vector<double> bias;    // [out]

  Conv3x3() = default;
  Conv3x3(int in_channels, int out_channels)
      : in(in_channels), out(out_channels), weight(static_cast<std::size_t>(out_channels) * in_channels * 9, 0.0),
        bias(static_cast<std::size_t>(out_channels), 0.0) {}

  double w(int o, int i, int ky, int kx) const { return weight[((static_cast<std::size_t>(o) * in + i) * 3 + ky) * 3 + kx]; }

  Tensor3 forward(const Tensor3& x) const {
    Tensor3 y(out, x.height, x.width);
    const int h = x.height;
    const int wd = x.width;
    for (int o = 0; o < out; ++o) {
      double* dst = y.plane(o);
      std::fill(dst, dst + static_cast<std::size_t>(h) * wd, bias[o]);
      for (int i = 0; i < in; ++i) {
        const double* src = x.plane(i);
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const double k = w(o, i, ky, kx);
            const int dy = ky - 1;
            const int dx = kx - 1;
            for (int yy = std::max(0, -dy); yy < std::min(h, h - dy); ++yy) {
              const double* s = src + static_cast<std::size_t>(yy + dy) * wd + dx;
              double* d = dst + static_cast<std::size_t>(yy) * wd;
              for (int xx = std::max(0, -dx); xx < std::min(wd, wd - dx); ++xx) d[xx] += k * s[xx];
            }
          }
        }
      }
    }
    return y;
  }

  /// Accumulates parameter gradients into (gw, gb) and returns d/d(input).
  Tensor3 backward(const Tensor3& x, const Tensor3& gy, std::vector<double>& gw, std::vector<double>& gb) const {
    Tensor3 gx(in, x.height, x.width);
    const int h = x.height;
    const int wd = x.width;
    for (int o = 0; o < out; ++o) {
      const double* g = gy.plane(o);
      double sb = 0.0;
      for (std::size_t k = 0; k < static_cast<std::size_t>(h) * wd; ++k) sb += g[k];
      gb[o] += sb;
      for (int i = 0; i < in; ++i) {
        const double* src = x.plane(i);
        double* gsrc = gx.plane(i);
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const std::size_t widx = ((static_cast<std::size_t>(o) * in + i) * 3 + ky) * 3 + kx;
            const double k = weight[widx];
            const int dy = ky - 1;
            const int dx = kx - 1;
            double acc = 0.0;
            for (int yy = std::max(0, -dy); yy < std::min(h, h - dy); ++yy) {
              const double* s = src + static_cast<std::size_t>(yy + dy) * wd + dx;
              double* gs = gsrc + static_cast<std::size_t>(yy + dy) * wd + dx;
              const double* gr = g + static_cast<std::size_t>(yy) * wd;
              for (int xx = std::max(0, -dx); xx < std::min(wd, wd - dx); ++xx) {
                acc += gr[xx] * s[xx];
                gs[xx] += k * gr[xx];
              }
            }
            gw[widx] += acc;
          }
        }
      }
    }
    return gx;
  }
};

class TinyNet {
 public:
  static constexpr int kHidden = 16;

  TinyNet() : conv1_(3, kHidden), conv2_(kHidden, kHidden), conv3_(kHidden, 3) {}

  /// He-uniform weights, zero biases.
  static TinyNet he_uniform(std::uint64_t seed) {
    TinyNet net;
    Rng rng(seed);
    for (Conv3x3* c : net.layers()) {
      const double bound = std::sqrt(6.0 / (c->in * 9.0));
      for (auto& v : c->weight) v = rng.uniform(-bound, bound);
    }
    return net;
  }

  std::array<Conv3x3*, 3> layers() { return {&conv1_, &conv2_, &conv3_}; }
  std::array<const Conv3x3*, 3> layers() const { return {&conv1_, &conv2_, &conv3_}; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* c : layers()) n += c->weight.size() + c->bias.size();
    return n;
  }

  /// Flattened parameters in layer order, weights before biases.
  std::vector<double> parameters() const {
    std::vector<double> p;
    p.reserve(parameter_count());
    for (const auto* c : layers()) {
      p.insert(p.end(), c->weight.begin(), c->weight.end());
      p.insert(p.end(), c->bias.begin(), c->bias.end());
    }
    return p;
  }

  void set_parameters(std::span<const double> p) {
    if (p.size() != parameter_count()) throw std::invalid_argument("TinyNet: parameter count mismatch");
    std::size_t k = 0;
    for (auto* c : layers()) {
      for (auto& v : c->weight) v = p[k++];
      for (auto& v : c->bias) v = p[k++];
    }
  }

  struct Activations {
    Tensor3 input, a1, h1, a2, h2;
    ColorField raw;  // conv3 output * 255, interleaved
  };

  Activations forward(const ColorField& image) const {
    Activations act;
    act.input = Tensor3(3, image.height(), image.width());
    const std::size_t n = image.pixel_count();
    for (std::size_t j = 0; j < n; ++j) {
      for (int c = 0; c < 3; ++c) act.input.plane(c)[j] = image.values()[3 * j + c] / 255.0;
    }
    act.a1 = conv1_.forward(act.input);
    act.h1 = relu(act.a1);
    act.a2 = conv2_.forward(act.h1);
    act.h2 = relu(act.a2);
    const Tensor3 out = conv3_.forward(act.h2);
    act.raw = ColorField(image.width(), image.height());
    for (std::size_t j = 0; j < n; ++j) {
      for (int c = 0; c < 3; ++c) act.raw.values()[3 * j + c] = 255.0 * out.plane(c)[j];
    }
    return act;
  }

  /// Gradient of the loss w.r.t. the flattened parameters, given
  /// d(loss)/d(raw) for the activations of a forward pass.
  std::vector<double> backward(const Activations& act, std::span<const double> grad_raw) const {
    std::vector<double> g1w(conv1_.weight.size(), 0.0), g1b(conv1_.bias.size(), 0.0);
    std::vector<double> g2w(conv2_.weight.size(), 0.0), g2b(conv2_.bias.size(), 0.0);
    std::vector<double> g3w(conv3_.weight.size(), 0.0), g3b(conv3_.bias.size(), 0.0);
    Tensor3 gout(3, act.raw.height(), act.raw.width());
    const std::size_t n = act.raw.pixel_count();
    for (std::size_t j = 0; j < n; ++j) {
      for (int c = 0; c < 3; ++c) gout.plane(c)[j] = 255.0 * grad_raw[3 * j + c];
    }
    Tensor3 gh2 = conv3_.backward(act.h2, gout, g3w, g3b);
    relu_backward(act.a2, gh2);
    Tensor3 gh1 = conv2_.backward(act.h1, gh2, g2w, g2b);
    relu_backward(act.a1, gh1);
    conv1_.backward(act.input, gh1, g1w, g1b);

    std::vector<double> g;
    g.reserve(parameter_count());
    for (const auto* part : {&g1w, &g1b, &g2w, &g2b, &g3w, &g3b}) g.insert(g.end(), part->begin(), part->end());
    return g;
  }

  bool operator==(const TinyNet& o) const { return parameters() == o.parameters(); }

 private:
  static Tensor3 relu(const Tensor3& a) {
    Tensor3 h = a;
    for (auto& v : h.data) v = std::max(v, 0.0);
    return h;
  }
  static void relu_backward(const Tensor3& pre, Tensor3& g) {
    for (std::size_t k = 0; k < g.data.size(); ++k) {
      if (pre.data[k] <= 0.0) g.data[k] = 0.0;
    }
  }

  Conv3x3 conv1_, conv2_, conv3_;
};

/// Deterministic forward pass followed by joint min-max normalization.
inline ColorField predict(const TinyNet& net, const ColorField& image) {
  if (image.width() < 3 || image.height() < 3) throw std::invalid_argument("predict: image must be at least 3x3");
  return normalize_field(net.forward(image).raw);
}

struct TrainingSample {
  ColorField image;
  LabelMap labels;
};

/// Loss of predict(net, image) and its gradient w.r.t. the net parameters.
inline std::pair<LossReport, std::vector<double>> net_loss_and_gradient(const TinyNet& net, const TrainingSample& s,
                                                                        const LossWeights& weights) {
  const auto act = net.forward(s.image);
  const ColorField field = normalize_field(act.raw);
  const LossReport loss = loss_total(field, s.labels, weights);
  const GradField g = loss_gradient(field, s.labels, weights);
  const auto graw = normalize_field_backward(act.raw.values(), g.values());
  return {loss, net.backward(act, graw)};
}

struct TrainResult {
  TinyNet net;
  TrainTrace trace;
};

/// Minibatch-1 training. Each epoch visits the dataset in a seeded shuffled
/// order; `config.iterations` counts single-sample updates.
inline TrainResult train_tiny_net(const std::vector<TrainingSample>& dataset, const LossWeights& weights,
                                  const OptimConfig& config) {
  validate_config(config);
  if (dataset.empty()) throw std::invalid_argument("train_tiny_net: dataset is empty");
  for (const auto& s : dataset) {
    require_same_dims(s.image, s.labels);
    if (s.image.width() < 3 || s.image.height() < 3) throw std::invalid_argument("train_tiny_net: images must be >= 3x3");
  }
  Rng rng(config.seed);
  TrainResult out{TinyNet::he_uniform(rng.next_u64()), {}};
  std::vector<double> params = out.net.parameters();
  Optimizer opt(config, params.size());
  std::vector<std::size_t> order(dataset.size());
  std::size_t cursor = order.size();
  for (int it = 0; it < config.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t k = order.size(); k > 1; --k) {
        std::swap(order[k - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1))]);
      }
      cursor = 0;
    }
    const auto& sample = dataset[order[cursor++]];
    auto [loss, grad] = net_loss_and_gradient(out.net, sample, weights);
    if (!std::isfinite(loss.total)) throw DivergenceError(it, "non-finite loss");
    if (!all_finite(grad)) throw DivergenceError(it, "non-finite gradient");
    opt.step(params, grad);
    if (!all_finite(params)) throw DivergenceError(it, "non-finite parameter");
    out.net.set_parameters(params);
    out.trace.losses.push_back(loss);
    out.trace.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// JSON document:
//   {"format": "icl-tinynet", "version": 1,
//    "tensors": [{"name": "conv1.weight", "shape": [16,3,3,3], "data": [...]}, ...]}
// Tensors appear in the order conv1.weight, conv1.bias, conv2.weight,
// conv2.bias, conv3.weight, conv3.bias. Weight shape is [out, in, ky, kx].
// Doubles are written with round-trip precision, so save -> load is exact.

inline nlohmann::json checkpoint_json(const TinyNet& net) {
  nlohmann::json tensors = nlohmann::json::array();
  int idx = 1;
  for (const auto* c : net.layers()) {
    const std::string base = "conv" + std::to_string(idx++);
    tensors.push_back({{"name", base + ".weight"}, {"shape", {c->out, c->in, 3, 3}}, {"data", c->weight}});
    tensors.push_back({{"name", base + ".bias"}, {"shape", {c->out}}, {"data", c->bias}});
  }
  return {{"format", "icl-tinynet"}, {"version", 1}, {"tensors", tensors}};
}

inline TinyNet net_from_checkpoint_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "icl-tinynet") throw std::runtime_error("checkpoint: unexpected format tag");
  if (doc.value("version", 0) != 1) throw std::runtime_error("checkpoint: unsupported version");
  TinyNet net;
  const auto& tensors = doc.at("tensors");
  if (!tensors.is_array() || tensors.size() != 6) throw std::runtime_error("checkpoint: expected 6 tensors");
  int idx = 0;
  for (auto* c : net.layers()) {
    for (auto* dst : {&c->weight, &c->bias}) {
      const auto& t = tensors.at(idx);
      auto data = t.at("data").get<std::vector<double>>();
      if (data.size() != dst->size()) {
        throw std::runtime_error("checkpoint: tensor '" + t.value("name", std::string{}) + "' has " +
                                 std::to_string(data.size()) + " values, expected " + std::to_string(dst->size()));
      }
      *dst = std::move(data);
      ++idx;
    }
  }
  return net;
}

inline void save_checkpoint(const TinyNet& net, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  f << checkpoint_json(net).dump(1) << '\n';
  if (!f) throw std::runtime_error("failed writing checkpoint " + path);
}

inline TinyNet load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  try {
    return net_from_checkpoint_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + path + ": " + e.what());
  }
}

}  // namespace icl
