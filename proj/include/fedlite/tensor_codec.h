#ifndef FEDLITE_TENSOR_CODEC_H_
#define FEDLITE_TENSOR_CODEC_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedlite/errors.h"

namespace fedlite {

enum class DType : uint8_t {
  kF32 = 0x01,
};

enum class ByteOrder : uint8_t {
  kLittleEndian = 0x00,
  kBigEndian = 0x01,
};

// A dense float tensor, values flattened in row-major order.
struct Tensor {
  std::string name;
  std::vector<uint32_t> shape;
  std::vector<float> values;
};

// One tensor as opaque bytes plus the metadata needed to rebuild it.
struct SerializedTensor {
  std::string name;
  DType dtype = DType::kF32;
  ByteOrder byte_order = ByteOrder::kLittleEndian;
  std::vector<uint32_t> shape;
  std::vector<uint8_t> data;

  bool operator==(const SerializedTensor&) const = default;
};

// The unit that is shipped, stored and aggregated.
struct ModelState {
  uint64_t version = 0;
  std::vector<SerializedTensor> tensors;

  bool operator==(const ModelState&) const = default;
};

// Product of the dimensions; 1 for a scalar (empty shape).
uint64_t element_count(std::span<const uint32_t> shape);

// Throws UnsupportedDtype for tags this build does not know.
size_t dtype_size(DType dtype);

SerializedTensor encode_tensor(const Tensor& tensor,
                               ByteOrder order = ByteOrder::kLittleEndian);

// Throws MalformedTensor when the data length disagrees with the shape and
// UnsupportedDtype for an unknown dtype tag.
Tensor decode_tensor(const SerializedTensor& serialized);

// Checks the SerializedTensor invariants without decoding.
void validate_tensor(const SerializedTensor& serialized);

// Decodes the values of `serialized` into `out`, which must hold exactly
// element_count(shape) floats. Avoids the Tensor allocation on hot paths.
void read_values(const SerializedTensor& serialized, std::span<float> out);

// Compares two tensors element by element on their bit patterns, so NaN
// payloads and signed zeros count.
bool bit_equal(const Tensor& a, const Tensor& b);

// Distinct names and valid tensors.
void validate_model(const ModelState& model);

ModelState encode_model(const std::vector<Tensor>& tensors, uint64_t version,
                        ByteOrder order = ByteOrder::kLittleEndian);
std::vector<Tensor> decode_model(const ModelState& model);

// Sum of element counts across tensors.
uint64_t parameter_count(const ModelState& model);

// FNV-1a over names, shapes and data bytes; cheap fingerprint for logs.
uint64_t model_digest(const ModelState& model);

}  // namespace fedlite

#endif  // FEDLITE_TENSOR_CODEC_H_
