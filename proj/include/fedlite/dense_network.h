#ifndef FEDLITE_DENSE_NETWORK_H_
#define FEDLITE_DENSE_NETWORK_H_

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "fedlite/errors.h"
#include "fedlite/tensor_codec.h"

namespace fedlite {

// A chain of fully connected layers: ReLU after every layer except the last,
// identity on the output, mean squared error loss. Kernels are stored
// [fan_in, fan_out] row-major, the same layout they have on the wire.
//
// The scalar type is a template parameter so the gradient checker can run
// the exact same code in double precision.
template <typename T>
class DenseNetwork {
 public:
  struct Layer {
    size_t fan_in = 0;
    size_t fan_out = 0;
    std::vector<T> kernel;
    std::vector<T> bias;
  };

  DenseNetwork() = default;
  explicit DenseNetwork(std::vector<Layer> layers) : layers_(std::move(layers)) {
    check_chain();
  }

  // Interprets tensors pairwise as (kernel [in, out], bias [out]).
  static DenseNetwork from_model(const ModelState& model) {
    if (model.tensors.empty() || model.tensors.size() % 2 != 0) {
      throw ShapeMismatch("model must hold (kernel, bias) pairs, got " +
                          std::to_string(model.tensors.size()) + " tensors");
    }
    std::vector<Layer> layers;
    std::vector<float> scratch;
    for (size_t i = 0; i < model.tensors.size(); i += 2) {
      const auto& k = model.tensors[i];
      const auto& b = model.tensors[i + 1];
      if (k.shape.size() != 2 || b.shape.size() != 1 || b.shape[0] != k.shape[1]) {
        throw ShapeMismatch("tensors '" + k.name + "', '" + b.name +
                            "' do not form a dense layer");
      }
      Layer layer;
      layer.fan_in = k.shape[0];
      layer.fan_out = k.shape[1];
      scratch.resize(layer.fan_in * layer.fan_out);
      read_values(k, scratch);
      layer.kernel.assign(scratch.begin(), scratch.end());
      scratch.resize(layer.fan_out);
      read_values(b, scratch);
      layer.bias.assign(scratch.begin(), scratch.end());
      layers.push_back(std::move(layer));
    }
    return DenseNetwork(std::move(layers));
  }

  // Re-encodes the parameters with the tensor names of `like`.
  ModelState to_model(const ModelState& like) const {
    ModelState out;
    out.version = like.version;
    out.tensors.reserve(layers_.size() * 2);
    for (size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      Tensor k{like.tensors[2 * l].name,
               {static_cast<uint32_t>(layer.fan_in), static_cast<uint32_t>(layer.fan_out)},
               std::vector<float>(layer.kernel.begin(), layer.kernel.end())};
      Tensor b{like.tensors[2 * l + 1].name,
               {static_cast<uint32_t>(layer.fan_out)},
               std::vector<float>(layer.bias.begin(), layer.bias.end())};
      out.tensors.push_back(encode_tensor(k, like.tensors[2 * l].byte_order));
      out.tensors.push_back(encode_tensor(b, like.tensors[2 * l + 1].byte_order));
    }
    return out;
  }

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  size_t input_dim() const { return layers_.front().fan_in; }
  size_t output_dim() const { return layers_.back().fan_out; }

  // Predictions for `rows` samples, row-major [rows, output_dim].
  std::vector<T> predict(const T* x, size_t rows) const {
    std::vector<std::vector<T>> acts;
    forward(x, rows, acts);
    return std::move(acts.back());
  }

  // Sum of squared errors over the batch (not averaged).
  T squared_error(const T* x, const T* y, size_t rows) const {
    std::vector<std::vector<T>> acts;
    forward(x, rows, acts);
    const auto& pred = acts.back();
    T total = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      const T d = pred[i] - y[i];
      total += d * d;
    }
    return total;
  }

  // Mean squared error over the batch and its gradient with respect to every
  // parameter. `grads` is resized to mirror layers().
  T loss_and_gradient(const T* x, const T* y, size_t rows,
                      std::vector<Layer>& grads) const {
    std::vector<std::vector<T>> acts;
    forward(x, rows, acts);
    const size_t out_dim = output_dim();
    const auto& pred = acts.back();
    const T scale = T(2) / static_cast<T>(rows * out_dim);

    T loss = 0;
    std::vector<T> delta(pred.size());
    for (size_t i = 0; i < pred.size(); ++i) {
      const T d = pred[i] - y[i];
      loss += d * d;
      delta[i] = scale * d;
    }
    loss /= static_cast<T>(rows * out_dim);

    grads.resize(layers_.size());
    std::vector<T> prev_delta;
    for (size_t l = layers_.size(); l-- > 0;) {
      const Layer& layer = layers_[l];
      Layer& g = grads[l];
      g.fan_in = layer.fan_in;
      g.fan_out = layer.fan_out;
      g.kernel.assign(layer.kernel.size(), T(0));
      g.bias.assign(layer.bias.size(), T(0));
      const T* input = l == 0 ? x : acts[l - 1].data();
      for (size_t r = 0; r < rows; ++r) {
        const T* d_row = &delta[r * layer.fan_out];
        const T* in_row = input + r * layer.fan_in;
        for (size_t j = 0; j < layer.fan_out; ++j) g.bias[j] += d_row[j];
        for (size_t k = 0; k < layer.fan_in; ++k) {
          const T a = in_row[k];
          if (a == T(0)) continue;
          T* g_row = &g.kernel[k * layer.fan_out];
          for (size_t j = 0; j < layer.fan_out; ++j) g_row[j] += a * d_row[j];
        }
      }
      if (l == 0) break;
      // Back through the kernel, then through the ReLU of the layer below.
      const auto& below = acts[l - 1];
      prev_delta.assign(rows * layer.fan_in, T(0));
      for (size_t r = 0; r < rows; ++r) {
        const T* d_row = &delta[r * layer.fan_out];
        T* p_row = &prev_delta[r * layer.fan_in];
        for (size_t k = 0; k < layer.fan_in; ++k) {
          if (below[r * layer.fan_in + k] <= T(0)) continue;
          const T* w_row = &layer.kernel[k * layer.fan_out];
          T sum = 0;
          for (size_t j = 0; j < layer.fan_out; ++j) sum += d_row[j] * w_row[j];
          p_row[k] = sum;
        }
      }
      delta.swap(prev_delta);
    }
    return loss;
  }

  void apply_gradient(const std::vector<Layer>& grads, T learning_rate) {
    for (size_t l = 0; l < layers_.size(); ++l) {
      auto& layer = layers_[l];
      const auto& g = grads[l];
      for (size_t i = 0; i < layer.kernel.size(); ++i) {
        layer.kernel[i] -= learning_rate * g.kernel[i];
      }
      for (size_t i = 0; i < layer.bias.size(); ++i) {
        layer.bias[i] -= learning_rate * g.bias[i];
      }
    }
  }

 private:
  void check_chain() const {
    if (layers_.empty()) throw ShapeMismatch("network has no layers");
    for (size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      if (layer.kernel.size() != layer.fan_in * layer.fan_out ||
          layer.bias.size() != layer.fan_out) {
        throw ShapeMismatch("layer " + std::to_string(l) +
                            " parameter sizes disagree with its fan-in/out");
      }
      if (l > 0 && layers_[l - 1].fan_out != layer.fan_in) {
        throw ShapeMismatch("layer " + std::to_string(l) + " expects " +
                            std::to_string(layer.fan_in) + " inputs, got " +
                            std::to_string(layers_[l - 1].fan_out));
      }
    }
  }

  // acts[l] holds the post-activation output of layer l.
  void forward(const T* x, size_t rows,
               std::vector<std::vector<T>>& acts) const {
    acts.resize(layers_.size());
    for (size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      const T* input = l == 0 ? x : acts[l - 1].data();
      auto& out = acts[l];
      out.resize(rows * layer.fan_out);
      for (size_t r = 0; r < rows; ++r) {
        T* o_row = &out[r * layer.fan_out];
        std::copy(layer.bias.begin(), layer.bias.end(), o_row);
        const T* in_row = input + r * layer.fan_in;
        for (size_t k = 0; k < layer.fan_in; ++k) {
          const T a = in_row[k];
          if (a == T(0)) continue;
          const T* w_row = &layer.kernel[k * layer.fan_out];
          for (size_t j = 0; j < layer.fan_out; ++j) o_row[j] += a * w_row[j];
        }
      }
      if (l + 1 < layers_.size()) {
        for (T& v : out) v = v > T(0) ? v : T(0);
      }
    }
  }

  std::vector<Layer> layers_;
};

}  // namespace fedlite

#endif  // FEDLITE_DENSE_NETWORK_H_
