#include "perprompt/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "perprompt/errors.hpp"
#include "perprompt/simd.hpp"

namespace perprompt {

Mlp::Mlp(std::string name, std::size_t input_dim, std::vector<std::size_t> widths, double dropout, Rng& init_rng)
    : name_(std::move(name)), dropout_(dropout) {
  if (widths.empty()) throw DimensionError("network needs at least one layer");
  if (dropout < 0.0 || dropout >= 1.0) throw SchemaError("dropout must lie in [0, 1)");
  std::size_t in = input_dim;
  for (std::size_t out : widths) {
    DenseLayer layer{in, out, std::vector<double>(in * out), std::vector<double>(out, 0.0)};
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : layer.weight) w = dist(init_rng);
    layers_.push_back(std::move(layer));
    in = out;
  }
}

Matrix Mlp::forward(const Matrix& rows, std::span<const double> tail, Mode mode, Rng* rng, Cache* cache) const {
  const DenseLayer& first = layers_.front();
  if (rows.cols + tail.size() != first.in) {
    throw DimensionError(name_ + ": expected input width " + std::to_string(first.in) + ", got " +
                         std::to_string(rows.cols + tail.size()));
  }
  const bool train = mode == Mode::kTrain && dropout_ > 0.0;
  if (train && rng == nullptr) throw Error(name_ + ": train-mode forward needs an rng");
  if (cache) {
    cache->inputs.clear();
    cache->masks.clear();
    cache->preacts.clear();
    cache->tail.assign(tail.begin(), tail.end());
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - dropout_);
  Matrix x = rows;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const DenseLayer& layer = layers_[l];
    const std::size_t in_rows = x.cols;
    std::vector<double> shared(layer.bias);
    if (l == 0 && !tail.empty()) {
      for (std::size_t o = 0; o < layer.out; ++o) {
        shared[o] += simd::dot({layer.weight.data() + o * layer.in + in_rows, tail.size()}, tail);
      }
    }
    Matrix z(x.rows, layer.out);
    for (std::size_t t = 0; t < x.rows; ++t) {
      auto xt = x.row(t);
      for (std::size_t o = 0; o < layer.out; ++o) {
        z(t, o) = shared[o] + simd::dot({layer.weight.data() + o * layer.in, in_rows}, xt);
      }
    }
    const bool last = l + 1 == layers_.size();
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->preacts.push_back(z);
    }
    if (last) return z;

    for (double& v : z.data) v = v > 0.0 ? v : 0.0;
    if (train) {
      // One mask per forward pass, shared by every row.
      std::vector<double> unit_mask(z.cols);
      for (double& m : unit_mask) m = unit(*rng) >= dropout_ ? keep_scale : 0.0;
      Matrix mask(z.rows, z.cols);
      for (std::size_t t = 0; t < z.rows; ++t) {
        for (std::size_t o = 0; o < z.cols; ++o) {
          mask(t, o) = unit_mask[o];
          z(t, o) *= unit_mask[o];
        }
      }
      if (cache) cache->masks.push_back(std::move(mask));
    } else if (cache) {
      cache->masks.emplace_back();
    }
    x = std::move(z);
  }
  return x;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& d_out, Mlp& grads, std::span<double> d_tail,
                     bool want_input_grad) const {
  if (cache.inputs.size() != layers_.size()) throw Error(name_ + ": backward without a matching forward cache");
  Matrix dz = d_out;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const DenseLayer& layer = layers_[l];
    DenseLayer& g = grads.layers_[l];
    const Matrix& x = cache.inputs[l];
    const std::size_t in_rows = x.cols;

    std::vector<double> dz_sum(layer.out, 0.0);
    for (std::size_t t = 0; t < dz.rows; ++t) {
      auto xt = x.row(t);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = dz(t, o);
        if (d == 0.0) continue;
        dz_sum[o] += d;
        simd::axpy(d, xt, {g.weight.data() + o * layer.in, in_rows});
      }
    }
    for (std::size_t o = 0; o < layer.out; ++o) g.bias[o] += dz_sum[o];

    if (l == 0 && !cache.tail.empty()) {
      const std::size_t tail_n = cache.tail.size();
      for (std::size_t o = 0; o < layer.out; ++o) {
        if (dz_sum[o] == 0.0) continue;
        simd::axpy(dz_sum[o], cache.tail, {g.weight.data() + o * layer.in + in_rows, tail_n});
        if (!d_tail.empty()) {
          simd::axpy(dz_sum[o], {layer.weight.data() + o * layer.in + in_rows, tail_n}, d_tail);
        }
      }
    }

    if (l == 0 && !want_input_grad) return {};

    Matrix dx(x.rows, in_rows);
    for (std::size_t t = 0; t < dz.rows; ++t) {
      auto dxt = dx.row(t);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = dz(t, o);
        if (d == 0.0) continue;
        simd::axpy(d, {layer.weight.data() + o * layer.in, in_rows}, dxt);
      }
    }
    if (l == 0) return dx;

    // Back through dropout and the rectifier of the previous layer.
    const Matrix& pre = cache.preacts[l - 1];
    const Matrix& mask = cache.masks[l - 1];
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
      double d = pre.data[i] > 0.0 ? dx.data[i] : 0.0;
      if (!mask.empty()) d *= mask.data[i];
      dx.data[i] = d;
    }
    dz = std::move(dx);
  }
  return {};
}

Mlp Mlp::zeros_like() const {
  Mlp z = *this;
  for (DenseLayer& layer : z.layers_) {
    std::fill(layer.weight.begin(), layer.weight.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  return z;
}

std::vector<ParamView> Mlp::parameters() {
  std::vector<ParamView> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string prefix = name_ + "." + std::to_string(l);
    out.push_back({prefix + ".weight", layers_[l].weight});
    out.push_back({prefix + ".bias", layers_[l].bias});
  }
  return out;
}

std::vector<ConstParamView> Mlp::parameters() const {
  std::vector<ConstParamView> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string prefix = name_ + "." + std::to_string(l);
    out.push_back({prefix + ".weight", layers_[l].weight});
    out.push_back({prefix + ".bias", layers_[l].bias});
  }
  return out;
}

}  // namespace perprompt
