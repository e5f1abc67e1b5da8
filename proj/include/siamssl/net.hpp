#pragma once

// Embedding network shared by every branch of the Siamese setup: a layered map
// from an HWC input tensor to a d-dimensional embedding, with reverse-mode
// gradients, Adam updates, a finite-difference gradient checker and a
// self-describing checkpoint format.

#include "siamssl/errors.hpp"
#include "siamssl/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace siamssl {

enum class LayerKind { conv, relu, maxpool, avgpool, flatten, dense };

/// One layer of the chain. Convolutions use (feature_maps, kernel, stride, padding);
/// pools use (pool_size, stride). `same_padding` pads so that the output size is
/// ceil(input / stride), splitting odd padding towards the bottom/right.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int feature_maps = 0;
  int kernel = 0;  // conv kernel size or pool size
  int stride = 1;
  int padding = 0;
  bool same_padding = false;
  int output_dim = 0;  // dense

  static LayerSpec conv(int maps, int kernel, int stride, int padding) {
    return {LayerKind::conv, maps, kernel, stride, padding, false, 0};
  }
  static LayerSpec conv_same(int maps, int kernel, int stride = 1) {
    return {LayerKind::conv, maps, kernel, stride, 0, true, 0};
  }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec maxpool(int size, int stride, bool same = false) {
    return {LayerKind::maxpool, 0, size, stride, 0, same, 0};
  }
  static LayerSpec avgpool(int size, int stride, bool same = false) {
    return {LayerKind::avgpool, 0, size, stride, 0, same, 0};
  }
  static LayerSpec flatten() { return {LayerKind::flatten}; }
  static LayerSpec dense(int out) { return {LayerKind::dense, 0, 0, 1, 0, false, out}; }

  bool has_params() const noexcept { return kind == LayerKind::conv || kind == LayerKind::dense; }
  bool operator==(const LayerSpec&) const = default;

  std::string str() const {
    const std::string pad = same_padding ? "same" : std::to_string(padding);
    switch (kind) {
      case LayerKind::conv:
        return "conv(" + std::to_string(feature_maps) + "," + std::to_string(kernel) + "," +
               std::to_string(stride) + "," + pad + ")";
      case LayerKind::relu: return "relu";
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        return std::string(kind == LayerKind::maxpool ? "maxpool(" : "avgpool(") + std::to_string(kernel) +
               "," + std::to_string(stride) + (same_padding ? ",same)" : ")");
      case LayerKind::flatten: return "flatten";
      case LayerKind::dense: return "dense(" + std::to_string(output_dim) + ")";
    }
    return "?";
  }

  /// Inverse of str(): "conv(32,7,1,same)", "maxpool(2,2)", "dense(16)", "relu", ...
  static LayerSpec parse(const std::string& text) {
    const auto open = text.find('(');
    const std::string name = text.substr(0, open);
    std::vector<std::string> args;
    if (open != std::string::npos) {
      if (text.back() != ')') throw SpecError("layer '" + text + "': missing ')'");
      std::stringstream ss(text.substr(open + 1, text.size() - open - 2));
      std::string a;
      while (std::getline(ss, a, ',')) args.push_back(a);
    }
    auto num = [&](std::size_t i) {
      try {
        std::size_t used = 0;
        const int v = std::stoi(args.at(i), &used);
        if (used != args[i].size()) throw SpecError("");
        return v;
      } catch (const std::exception&) {
        throw SpecError("layer '" + text + "': bad argument " + std::to_string(i + 1));
      }
    };
    auto expect = [&](std::size_t lo, std::size_t hi) {
      if (args.size() < lo || args.size() > hi) throw SpecError("layer '" + text + "': wrong argument count");
    };
    if (name == "conv") {
      expect(4, 4);
      if (args[3] == "same") return conv_same(num(0), num(1), num(2));
      return conv(num(0), num(1), num(2), num(3));
    }
    if (name == "maxpool" || name == "avgpool") {
      expect(2, 3);
      const bool same = args.size() == 3 && args[2] == "same";
      if (args.size() == 3 && !same) throw SpecError("layer '" + text + "': third pool argument must be 'same'");
      return name == "maxpool" ? maxpool(num(0), num(1), same) : avgpool(num(0), num(1), same);
    }
    if (name == "dense") {
      expect(1, 1);
      return dense(num(0));
    }
    if (name == "relu" && args.empty()) return relu();
    if (name == "flatten" && args.empty()) return flatten();
    throw SpecError("unknown layer '" + text + "'");
  }
};

/// Resolved input/output shapes and padding offsets of one layer.
struct LayerGeometry {
  Shape in;
  Shape out;
  int pad_top = 0;
  int pad_left = 0;
};

namespace detail {

inline void same_padding(int in, int k, int stride, int& out, int& pad_before) {
  out = (in + stride - 1) / stride;
  const int total = std::max((out - 1) * stride + k - in, 0);
  pad_before = total / 2;
}

inline LayerGeometry resolve(const LayerSpec& spec, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& why) {
    throw SpecError("layer " + std::to_string(index) + " " + spec.str() + " on input " + in.str() + ": " + why);
  };
  LayerGeometry g{in, in, 0, 0};
  switch (spec.kind) {
    case LayerKind::conv:
    case LayerKind::maxpool:
    case LayerKind::avgpool: {
      if (spec.kernel <= 0 || spec.stride <= 0) fail("kernel and stride must be positive");
      if (spec.padding < 0) fail("padding must be non-negative");
      if (spec.kind == LayerKind::conv && spec.feature_maps <= 0) fail("feature_maps must be positive");
      int oh = 0;
      int ow = 0;
      if (spec.same_padding) {
        same_padding(in.height, spec.kernel, spec.stride, oh, g.pad_top);
        same_padding(in.width, spec.kernel, spec.stride, ow, g.pad_left);
      } else {
        g.pad_top = g.pad_left = spec.padding;
        const int eh = in.height + 2 * spec.padding - spec.kernel;
        const int ew = in.width + 2 * spec.padding - spec.kernel;
        if (eh < 0 || ew < 0) fail("window larger than padded input");
        oh = eh / spec.stride + 1;
        ow = ew / spec.stride + 1;
      }
      g.out = {oh, ow, spec.kind == LayerKind::conv ? spec.feature_maps : in.channels};
      break;
    }
    case LayerKind::relu: break;
    case LayerKind::flatten: g.out = {1, 1, static_cast<int>(in.size())}; break;
    case LayerKind::dense:
      if (spec.output_dim <= 0) fail("output_dim must be positive");
      g.out = {1, 1, spec.output_dim};
      break;
  }
  return g;
}

}  // namespace detail

/// Shape-checks a chain against an input shape. `expected_embedding_dim` > 0 makes a
/// mismatching flattened output a SpecError.
inline std::vector<LayerGeometry> resolve_chain(const std::vector<LayerSpec>& specs, const Shape& input,
                                                int expected_embedding_dim = 0) {
  if (specs.empty()) throw SpecError("empty layer chain");
  if (input.size() == 0) throw SpecError("input shape has zero size");
  std::vector<LayerGeometry> geo;
  Shape cur = input;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    geo.push_back(detail::resolve(specs[i], cur, i));
    cur = geo.back().out;
  }
  if (expected_embedding_dim > 0 && static_cast<int>(cur.size()) != expected_embedding_dim)
    throw SpecError("layer chain produces " + std::to_string(cur.size()) + "-dimensional output (" + cur.str() +
                    "), expected embedding_dim " + std::to_string(expected_embedding_dim));
  return geo;
}

/// Weights and bias of one layer; both empty for parameter-free layers.
/// Conv weights are (k*k*C_in) x F with rows ordered (ky, kx, c); dense weights are in x out.
template <typename T>
struct LayerParams {
  Matrix<T> weight;
  Matrix<T> bias;  // 1 x F

  std::size_t size() const noexcept { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

template <typename T>
using Gradients = std::vector<LayerParams<T>>;

template <typename T>
struct Model {
  Shape input_shape;
  std::vector<LayerSpec> specs;
  std::vector<LayerGeometry> geometry;
  std::vector<LayerParams<T>> params;
  int embedding_dim = 0;
  std::uint64_t seed = 0;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
  }

  /// Zero-valued gradient buffers shaped like the parameters.
  Gradients<T> zero_gradients() const {
    Gradients<T> g(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      g[i].weight = Matrix<T>::Zero(params[i].weight.rows(), params[i].weight.cols());
      g[i].bias = Matrix<T>::Zero(params[i].bias.rows(), params[i].bias.cols());
    }
    return g;
  }

  /// Same architecture and seed, parameters converted to another precision.
  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.input_shape = input_shape;
    m.specs = specs;
    m.geometry = geometry;
    m.embedding_dim = embedding_dim;
    m.seed = seed;
    m.params.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.params[i].weight = params[i].weight.template cast<U>();
      m.params[i].bias = params[i].bias.template cast<U>();
    }
    return m;
  }
};

/// Zero biases, weights uniform in +-sqrt(6 / fan_in). Deterministic in `seed`.
template <typename T>
Model<T> init_model(const std::vector<LayerSpec>& specs, const Shape& input, std::uint64_t seed,
                    int expected_embedding_dim = 0) {
  Model<T> m;
  m.input_shape = input;
  m.specs = specs;
  m.geometry = resolve_chain(specs, input, expected_embedding_dim);
  m.embedding_dim = static_cast<int>(m.geometry.back().out.size());
  m.seed = seed;
  m.params.resize(specs.size());
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const auto& g = m.geometry[i];
    Eigen::Index fan_in = 0;
    Eigen::Index fan_out = 0;
    if (s.kind == LayerKind::conv) {
      fan_in = static_cast<Eigen::Index>(s.kernel) * s.kernel * g.in.channels;
      fan_out = s.feature_maps;
    } else if (s.kind == LayerKind::dense) {
      fan_in = static_cast<Eigen::Index>(g.in.size());
      fan_out = s.output_dim;
    } else {
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto& p = m.params[i];
    p.weight.resize(fan_in, fan_out);
    for (Eigen::Index r = 0; r < fan_in; ++r)
      for (Eigen::Index c = 0; c < fan_out; ++c) p.weight(r, c) = static_cast<T>(dist(rng));
    p.bias = Matrix<T>::Zero(1, fan_out);
  }
  return m;
}

/// Intermediate values kept by a training forward pass for the backward pass.
template <typename T>
struct ForwardCache {
  std::vector<Matrix<T>> inputs;           // input of every layer (empty for conv, see cols)
  std::vector<Matrix<T>> cols;             // im2col matrix of every conv layer
  std::vector<std::vector<Eigen::Index>> argmax;  // max-pool routing, per output element
  Eigen::Index batch = 0;
  mutable Matrix<T> scratch;  // column-gradient buffer reused by backward()
};

namespace detail {

template <typename T>
void im2col(const Matrix<T>& x, const LayerGeometry& g, int k, int stride, Matrix<T>& col) {
  const Eigen::Index batch = x.rows();
  const int C = g.in.channels;
  const Eigen::Index K = static_cast<Eigen::Index>(k) * k * C;
  col.resize(batch * g.out.height * g.out.width, K);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const T* src = x.data() + b * x.cols();
    for (int oy = 0; oy < g.out.height; ++oy) {
      for (int ox = 0; ox < g.out.width; ++ox) {
        T* dst = col.data() + ((b * g.out.height + oy) * g.out.width + ox) * K;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - g.pad_top + ky;
          for (int kx = 0; kx < k; ++kx, dst += C) {
            const int ix = ox * stride - g.pad_left + kx;
            if (iy < 0 || iy >= g.in.height || ix < 0 || ix >= g.in.width) {
              std::fill(dst, dst + C, T(0));
            } else {
              std::copy_n(src + (static_cast<Eigen::Index>(iy) * g.in.width + ix) * C, C, dst);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const Matrix<T>& col, const LayerGeometry& g, int k, int stride, Matrix<T>& dx) {
  const Eigen::Index batch = dx.rows();
  const int C = g.in.channels;
  const Eigen::Index K = col.cols();
  dx.setZero();
  for (Eigen::Index b = 0; b < batch; ++b) {
    T* dst = dx.data() + b * dx.cols();
    for (int oy = 0; oy < g.out.height; ++oy) {
      for (int ox = 0; ox < g.out.width; ++ox) {
        const T* src = col.data() + ((b * g.out.height + oy) * g.out.width + ox) * K;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - g.pad_top + ky;
          for (int kx = 0; kx < k; ++kx, src += C) {
            const int ix = ox * stride - g.pad_left + kx;
            if (iy < 0 || iy >= g.in.height || ix < 0 || ix >= g.in.width) continue;
            T* d = dst + (static_cast<Eigen::Index>(iy) * g.in.width + ix) * C;
            for (int c = 0; c < C; ++c) d[c] += src[c];
          }
        }
      }
    }
  }
}

template <typename T>
Matrix<T> pool_forward(const Matrix<T>& x, const LayerSpec& s, const LayerGeometry& g,
                       std::vector<Eigen::Index>* argmax) {
  const Eigen::Index batch = x.rows();
  const int C = g.in.channels;
  Matrix<T> y(batch, static_cast<Eigen::Index>(g.out.size()));
  if (argmax) argmax->assign(static_cast<std::size_t>(y.size()), 0);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const T* src = x.data() + b * x.cols();
    for (int oy = 0; oy < g.out.height; ++oy) {
      for (int ox = 0; ox < g.out.width; ++ox) {
        const int y0 = std::max(oy * s.stride - g.pad_top, 0);
        const int y1 = std::min(oy * s.stride - g.pad_top + s.kernel, g.in.height);
        const int x0 = std::max(ox * s.stride - g.pad_left, 0);
        const int x1 = std::min(ox * s.stride - g.pad_left + s.kernel, g.in.width);
        for (int c = 0; c < C; ++c) {
          const Eigen::Index out_pos = (static_cast<Eigen::Index>(oy) * g.out.width + ox) * C + c;
          if (s.kind == LayerKind::maxpool) {
            // First (row-major) maximum wins ties.
            Eigen::Index best = (static_cast<Eigen::Index>(y0) * g.in.width + x0) * C + c;
            for (int iy = y0; iy < y1; ++iy)
              for (int ix = x0; ix < x1; ++ix) {
                const Eigen::Index pos = (static_cast<Eigen::Index>(iy) * g.in.width + ix) * C + c;
                if (src[pos] > src[best]) best = pos;
              }
            y(b, out_pos) = src[best];
            if (argmax) (*argmax)[static_cast<std::size_t>(b * y.cols() + out_pos)] = best;
          } else {
            T sum = 0;
            for (int iy = y0; iy < y1; ++iy)
              for (int ix = x0; ix < x1; ++ix) sum += src[(static_cast<Eigen::Index>(iy) * g.in.width + ix) * C + c];
            y(b, out_pos) = sum / static_cast<T>((y1 - y0) * (x1 - x0));
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Matrix<T> avgpool_backward(const Matrix<T>& dy, const LayerSpec& s, const LayerGeometry& g) {
  const int C = g.in.channels;
  Matrix<T> dx = Matrix<T>::Zero(dy.rows(), static_cast<Eigen::Index>(g.in.size()));
  for (Eigen::Index b = 0; b < dy.rows(); ++b) {
    for (int oy = 0; oy < g.out.height; ++oy) {
      for (int ox = 0; ox < g.out.width; ++ox) {
        const int y0 = std::max(oy * s.stride - g.pad_top, 0);
        const int y1 = std::min(oy * s.stride - g.pad_top + s.kernel, g.in.height);
        const int x0 = std::max(ox * s.stride - g.pad_left, 0);
        const int x1 = std::min(ox * s.stride - g.pad_left + s.kernel, g.in.width);
        const T scale = T(1) / static_cast<T>((y1 - y0) * (x1 - x0));
        for (int c = 0; c < C; ++c) {
          const T grad = dy(b, (static_cast<Eigen::Index>(oy) * g.out.width + ox) * C + c) * scale;
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix) dx(b, (static_cast<Eigen::Index>(iy) * g.in.width + ix) * C + c) += grad;
        }
      }
    }
  }
  return dx;
}

template <typename T>
Matrix<T> run_forward(const Model<T>& model, const Matrix<T>& batch, ForwardCache<T>* cache) {
  if (batch.cols() != static_cast<Eigen::Index>(model.input_shape.size()))
    throw ArgumentError("forward: batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                        std::to_string(model.input_shape.size()) + " (" + model.input_shape.str() + ")");
  const std::size_t n = model.specs.size();
  if (cache) {
    // Buffers keep their capacity across batches of the same size.
    cache->inputs.resize(n);
    cache->cols.resize(n);
    cache->argmax.resize(n);
    cache->batch = batch.rows();
  }
  Matrix<T> x = batch;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = model.specs[i];
    const auto& g = model.geometry[i];
    const auto& p = model.params[i];
    switch (s.kind) {
      case LayerKind::conv: {
        Matrix<T> local;
        Matrix<T>& col = cache ? cache->cols[i] : local;
        im2col(x, g, s.kernel, s.stride, col);
        Matrix<T> y(x.rows(), static_cast<Eigen::Index>(g.out.size()));
        Eigen::Map<Matrix<T>> ym(y.data(), col.rows(), s.feature_maps);
        ym.noalias() = col * p.weight;
        ym.rowwise() += p.bias.row(0);
        x = std::move(y);
        break;
      }
      case LayerKind::dense: {
        if (cache) cache->inputs[i] = x;
        Matrix<T> y = x * p.weight;
        y.rowwise() += p.bias.row(0);
        x = std::move(y);
        break;
      }
      case LayerKind::relu:
        if (cache) cache->inputs[i] = x;
        x = x.cwiseMax(T(0));
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        x = pool_forward(x, s, g, cache && s.kind == LayerKind::maxpool ? &cache->argmax[i] : nullptr);
        break;
      case LayerKind::flatten: break;
    }
  }
  return x;
}

}  // namespace detail

/// Embeddings of a batch (one example per row, HWC flattened): batch x embedding_dim.
template <typename T>
Matrix<T> forward(const Model<T>& model, const Matrix<T>& batch) {
  return detail::run_forward<T>(model, batch, nullptr);
}

/// Forward pass that records what backward() needs.
template <typename T>
Matrix<T> forward(const Model<T>& model, const Matrix<T>& batch, ForwardCache<T>& cache) {
  return detail::run_forward<T>(model, batch, &cache);
}

/// Parameter gradients for an upstream gradient w.r.t. the embeddings of the batch
/// recorded in `cache`.
template <typename T>
Gradients<T> backward(const Model<T>& model, const ForwardCache<T>& cache, const Matrix<T>& grad_embeddings) {
  if (grad_embeddings.rows() != cache.batch || grad_embeddings.cols() != model.embedding_dim)
    throw ArgumentError("backward: upstream gradient is " + std::to_string(grad_embeddings.rows()) + "x" +
                        std::to_string(grad_embeddings.cols()) + ", expected " + std::to_string(cache.batch) + "x" +
                        std::to_string(model.embedding_dim));
  Gradients<T> grads = model.zero_gradients();
  Matrix<T> dy = grad_embeddings;
  // Layers before the first parameterised layer need no input gradient.
  std::size_t first_param = model.specs.size();
  for (std::size_t i = 0; i < model.specs.size(); ++i)
    if (model.specs[i].has_params()) {
      first_param = i;
      break;
    }
  for (std::size_t li = model.specs.size(); li-- > 0;) {
    if (li < first_param) break;
    const auto& s = model.specs[li];
    const auto& g = model.geometry[li];
    const auto& p = model.params[li];
    const bool need_dx = li > first_param;
    switch (s.kind) {
      case LayerKind::conv: {
        const Matrix<T>& col = cache.cols[li];
        Eigen::Map<const Matrix<T>> dym(dy.data(), col.rows(), s.feature_maps);
        grads[li].weight.noalias() = col.transpose() * dym;
        grads[li].bias = dym.colwise().sum();
        if (need_dx) {
          Matrix<T>& dcol = cache.scratch;
          dcol.resize(col.rows(), col.cols());
          dcol.noalias() = dym * p.weight.transpose();
          Matrix<T> dx(dy.rows(), static_cast<Eigen::Index>(g.in.size()));
          detail::col2im(dcol, g, s.kernel, s.stride, dx);
          dy = std::move(dx);
        }
        break;
      }
      case LayerKind::dense: {
        const Matrix<T>& x = cache.inputs[li];
        grads[li].weight.noalias() = x.transpose() * dy;
        grads[li].bias = dy.colwise().sum();
        if (need_dx) dy = (dy * p.weight.transpose()).eval();
        break;
      }
      case LayerKind::relu:
        dy = (cache.inputs[li].array() > T(0)).select(dy, T(0));
        break;
      case LayerKind::maxpool: {
        Matrix<T> dx = Matrix<T>::Zero(dy.rows(), static_cast<Eigen::Index>(g.in.size()));
        const auto& route = cache.argmax[li];
        for (Eigen::Index b = 0; b < dy.rows(); ++b)
          for (Eigen::Index j = 0; j < dy.cols(); ++j)
            dx(b, route[static_cast<std::size_t>(b * dy.cols() + j)]) += dy(b, j);
        dy = std::move(dx);
        break;
      }
      case LayerKind::avgpool: dy = detail::avgpool_backward(dy, s, g); break;
      case LayerKind::flatten: break;
    }
  }
  return grads;
}

/// Convenience overload: runs the forward pass itself.
template <typename T>
Gradients<T> backward(const Model<T>& model, const Matrix<T>& batch, const Matrix<T>& grad_embeddings) {
  ForwardCache<T> cache;
  forward(model, batch, cache);
  return backward(model, cache, grad_embeddings);
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<LayerParams<T>> m;
  std::vector<LayerParams<T>> v;
};

/// One bias-corrected Adam update. Gradients are checked before any parameter
/// changes; a non-finite entry raises NumericError naming the layer.
template <typename T>
void adam_step(Model<T>& model, const Gradients<T>& grads, AdamState<T>& state) {
  if (grads.size() != model.params.size()) throw ArgumentError("adam_step: gradient list does not match model");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].weight.rows() != model.params[i].weight.rows() ||
        grads[i].weight.cols() != model.params[i].weight.cols() ||
        grads[i].bias.size() != model.params[i].bias.size())
      throw ArgumentError("adam_step: gradient shape mismatch at layer " + std::to_string(i));
    if (!grads[i].weight.allFinite() || !grads[i].bias.allFinite())
      throw NumericError("adam_step: non-finite gradient at layer " + std::to_string(i) + " (" +
                         model.specs[i].str() + ")");
  }
  if (state.m.size() != model.params.size()) {
    state.m = model.zero_gradients();
    state.v = model.zero_gradients();
    state.step = 0;
  }
  ++state.step;
  const auto& c = state.config;
  const T b1 = static_cast<T>(c.beta1);
  const T b2 = static_cast<T>(c.beta2);
  const T corr1 = static_cast<T>(1.0 - std::pow(c.beta1, static_cast<double>(state.step)));
  const T corr2 = static_cast<T>(1.0 - std::pow(c.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(c.learning_rate);
  const T eps = static_cast<T>(c.epsilon);
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = b1 * m + (T(1) - b1) * grad;
    v = b2 * v + (T(1) - b2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (model.params[i].size() == 0) continue;
    update(model.params[i].weight, grads[i].weight, state.m[i].weight, state.v[i].weight);
    update(model.params[i].bias, grads[i].bias, state.m[i].bias, state.v[i].bias);
  }
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_layer = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares `analytic` against central differences (f(θ+h) - f(θ-h)) / 2h of
/// `loss(model)` for every parameter. Relative error is |a - n| / max(|a|, |n|, floor).
template <typename LossFn>
GradCheckResult check_gradients(Model<double> model, const Gradients<double>& analytic, LossFn&& loss,
                                double h = 1e-5, double floor = 1e-8) {
  GradCheckResult res;
  auto probe = [&](double& theta, double a, std::size_t layer, std::size_t index) {
    const double saved = theta;
    theta = saved + h;
    const double up = loss(std::as_const(model));
    theta = saved - h;
    const double down = loss(std::as_const(model));
    theta = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_layer = layer;
      res.worst_index = index;
    }
    ++res.checked;
  };
  for (std::size_t li = 0; li < model.params.size(); ++li) {
    auto& p = model.params[li];
    for (Eigen::Index k = 0; k < p.weight.size(); ++k)
      probe(p.weight.data()[k], analytic[li].weight.data()[k], li, static_cast<std::size_t>(k));
    for (Eigen::Index k = 0; k < p.bias.size(); ++k)
      probe(p.bias.data()[k], analytic[li].bias.data()[k], li, static_cast<std::size_t>(p.weight.size() + k));
  }
  return res;
}

// Reference architectures ---------------------------------------------------

/// Small convolutional trunk producing 16-dimensional embeddings on 28x28 and
/// 32x32 inputs (four conv/max-pool stages, then a 4-map 1x1 convolution).
inline std::vector<LayerSpec> simple_model_spec() {
  return {LayerSpec::conv_same(32, 7), LayerSpec::relu(), LayerSpec::maxpool(2, 2, true),
          LayerSpec::conv_same(64, 5), LayerSpec::relu(), LayerSpec::maxpool(2, 2, true),
          LayerSpec::conv_same(128, 3), LayerSpec::relu(), LayerSpec::maxpool(2, 2, true),
          LayerSpec::conv_same(256, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2, true),
          LayerSpec::conv_same(4, 1), LayerSpec::flatten()};
}

/// Simple trunk with a 2-map last convolution and 2x2 average pooling: 2-D embeddings.
inline std::vector<LayerSpec> embed2d_model_spec() {
  auto specs = simple_model_spec();
  specs.pop_back();
  specs.back() = LayerSpec::conv_same(2, 1);
  specs.push_back(LayerSpec::avgpool(2, 2));
  specs.push_back(LayerSpec::flatten());
  return specs;
}

/// Fully connected trunk for flat synthetic features.
inline std::vector<LayerSpec> mlp_model_spec(int hidden, int hidden_layers, int embedding_dim) {
  std::vector<LayerSpec> specs;
  for (int i = 0; i < hidden_layers; ++i) {
    specs.push_back(LayerSpec::dense(hidden));
    specs.push_back(LayerSpec::relu());
  }
  specs.push_back(LayerSpec::dense(embedding_dim));
  return specs;
}

// Checkpoints -----------------------------------------------------------------
//
// Layout: the line "SIAMSSL-CHECKPOINT 1", a single-line JSON header, then the raw
// parameter values (little-endian IEEE-754 in the tagged precision), tensor by
// tensor in header order.

inline constexpr const char* kCheckpointMagic = "SIAMSSL-CHECKPOINT 1";

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  auto bits = std::bit_cast<U>(value);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(U));
}

template <typename T>
T read_le(std::istream& in, const std::string& path) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw FormatError(path + ": truncated parameter data");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

template <typename T>
constexpr const char* precision_tag() {
  return std::is_same_v<T, float> ? "float32" : "float64";
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  nlohmann::json header;
  header["input_shape"] = {model.input_shape.height, model.input_shape.width, model.input_shape.channels};
  header["precision"] = detail::precision_tag<T>();
  header["seed"] = model.seed;
  header["embedding_dim"] = model.embedding_dim;
  header["layers"] = nlohmann::json::array();
  for (const auto& s : model.specs) header["layers"].push_back(s.str());
  header["tensors"] = nlohmann::json::array();
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    if (model.params[i].size() == 0) continue;
    header["tensors"].push_back({{"layer", i}, {"name", "weight"},
                                 {"shape", {model.params[i].weight.rows(), model.params[i].weight.cols()}}});
    header["tensors"].push_back({{"layer", i}, {"name", "bias"}, {"shape", {1, model.params[i].bias.cols()}}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (const auto& p : model.params) {
    for (Eigen::Index k = 0; k < p.weight.size(); ++k) detail::write_le(out, p.weight.data()[k]);
    for (Eigen::Index k = 0; k < p.bias.size(); ++k) detail::write_le(out, p.bias.data()[k]);
  }
  if (!out) throw FormatError(path + ": write failed");
}

/// Loads a checkpoint, converting the stored precision to T when they differ.
template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open file");
  std::string magic;
  std::string header_line;
  if (!std::getline(in, magic) || magic != kCheckpointMagic) throw FormatError(path + ": not a checkpoint file");
  if (!std::getline(in, header_line)) throw FormatError(path + ": missing checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad checkpoint header: " + e.what());
  }
  try {
    const auto shape = header.at("input_shape");
    const Shape input{shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
    std::vector<LayerSpec> specs;
    for (const auto& l : header.at("layers")) specs.push_back(LayerSpec::parse(l.get<std::string>()));
    Model<T> model;
    model.input_shape = input;
    model.specs = specs;
    model.geometry = resolve_chain(specs, input, header.at("embedding_dim").get<int>());
    model.embedding_dim = header.at("embedding_dim").get<int>();
    model.seed = header.at("seed").get<std::uint64_t>();
    model.params.resize(specs.size());
    const std::string precision = header.at("precision").get<std::string>();
    if (precision != "float32" && precision != "float64") throw FormatError(path + ": unknown precision " + precision);
    auto read_value = [&]() -> T {
      if (precision == "float32") return static_cast<T>(detail::read_le<float>(in, path));
      return static_cast<T>(detail::read_le<double>(in, path));
    };
    for (const auto& t : header.at("tensors")) {
      const auto layer = t.at("layer").get<std::size_t>();
      if (layer >= specs.size() || !specs[layer].has_params())
        throw FormatError(path + ": tensor refers to layer " + std::to_string(layer) + " without parameters");
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      Matrix<T> m(rows, cols);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = read_value();
      (t.at("name").get<std::string>() == "weight" ? model.params[layer].weight : model.params[layer].bias) =
          std::move(m);
    }
    // Shapes must agree with what the chain implies.
    const auto fresh = init_model<T>(specs, input, 0);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (model.params[i].weight.rows() != fresh.params[i].weight.rows() ||
          model.params[i].weight.cols() != fresh.params[i].weight.cols() ||
          model.params[i].bias.size() != fresh.params[i].bias.size())
        throw FormatError(path + ": tensor shapes disagree with layer " + std::to_string(i));
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": incomplete checkpoint header: " + e.what());
  }
}

}  // namespace siamssl
