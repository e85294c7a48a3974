#pragma once

// Feed-forward network with rectifier activations between layers, a linear
// output layer and inverted dropout on every hidden activation.
//
// Forward passes can append a shared "tail" vector to every input row; the
// first layer evaluates the tail contribution once and broadcasts it. The
// refiner uses this for the per-token input [e_i | mean(E) | encoding].

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "perprompt/tensor.hpp"

namespace perprompt {

enum class Mode { kTrain, kEval };

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;    // out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// A named view of one parameter tensor (for optimizers and checkpoints).
struct ParamView {
  std::string name;
  std::span<double> values;
};

struct ConstParamView {
  std::string name;
  std::span<const double> values;
};

class Mlp {
 public:
  // Activations and dropout masks recorded by a forward pass.
  struct Cache {
    std::vector<Matrix> inputs;       // input rows to each layer (without the tail)
    std::vector<Matrix> masks;        // dropout scale per hidden activation (empty in eval)
    std::vector<Matrix> preacts;      // pre-activation per layer
    std::vector<double> tail;
  };

  Mlp() = default;

  // `widths` lists each layer's output width; the last entry is the output
  // dimension. Weights are drawn uniformly in +-sqrt(6 / (fan_in + fan_out)),
  // biases start at zero.
  Mlp(std::string name, std::size_t input_dim, std::vector<std::size_t> widths, double dropout, Rng& init_rng);

  const std::string& name() const { return name_; }
  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
  double dropout() const { return dropout_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  // rows: N x (input_dim - tail.size()). Dropout is applied in train mode and
  // draws masks from `rng` (required in train mode).
  Matrix forward(const Matrix& rows, std::span<const double> tail, Mode mode, Rng* rng, Cache* cache) const;
  Matrix forward(const Matrix& rows, Mode mode, Rng* rng = nullptr, Cache* cache = nullptr) const {
    return forward(rows, {}, mode, rng, cache);
  }

  // Accumulates parameter gradients for upstream gradient `d_out` into
  // `grads` (same shapes as this network). The tail gradient, summed over
  // rows, is added to `d_tail` when it is non-empty. The gradient with
  // respect to the input rows is returned only if `want_input_grad`.
  Matrix backward(const Cache& cache, const Matrix& d_out, Mlp& grads, std::span<double> d_tail = {},
                  bool want_input_grad = false) const;

  // A network of the same shape with every parameter zero.
  Mlp zeros_like() const;

  std::vector<ParamView> parameters();
  std::vector<ConstParamView> parameters() const;

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::string name_;
  std::vector<DenseLayer> layers_;
  double dropout_ = 0.0;
};

}  // namespace perprompt
