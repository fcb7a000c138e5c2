#include "fedlite/tensor_codec.h"

#include <bit>
#include <cstring>
#include <string>
#include <unordered_set>

namespace fedlite {
namespace {

void store_u32(uint8_t* out, uint32_t bits, ByteOrder order) {
  if (order == ByteOrder::kLittleEndian) {
    out[0] = static_cast<uint8_t>(bits);
    out[1] = static_cast<uint8_t>(bits >> 8);
    out[2] = static_cast<uint8_t>(bits >> 16);
    out[3] = static_cast<uint8_t>(bits >> 24);
  } else {
    out[0] = static_cast<uint8_t>(bits >> 24);
    out[1] = static_cast<uint8_t>(bits >> 16);
    out[2] = static_cast<uint8_t>(bits >> 8);
    out[3] = static_cast<uint8_t>(bits);
  }
}

uint32_t load_u32(const uint8_t* in, ByteOrder order) {
  if (order == ByteOrder::kLittleEndian) {
    return static_cast<uint32_t>(in[0]) | static_cast<uint32_t>(in[1]) << 8 |
           static_cast<uint32_t>(in[2]) << 16 |
           static_cast<uint32_t>(in[3]) << 24;
  }
  return static_cast<uint32_t>(in[0]) << 24 |
         static_cast<uint32_t>(in[1]) << 16 |
         static_cast<uint32_t>(in[2]) << 8 | static_cast<uint32_t>(in[3]);
}

constexpr ByteOrder kHostOrder = std::endian::native == std::endian::little
                                     ? ByteOrder::kLittleEndian
                                     : ByteOrder::kBigEndian;

}  // namespace

uint64_t element_count(std::span<const uint32_t> shape) {
  uint64_t count = 1;
  for (uint32_t dim : shape) count *= dim;
  return count;
}

size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32:
      return 4;
  }
  throw UnsupportedDtype("unsupported dtype tag " +
                         std::to_string(static_cast<int>(dtype)));
}

SerializedTensor encode_tensor(const Tensor& tensor, ByteOrder order) {
  if (tensor.values.size() != element_count(tensor.shape)) {
    throw MalformedTensor("tensor '" + tensor.name + "' has " +
                          std::to_string(tensor.values.size()) +
                          " values for its shape");
  }
  SerializedTensor out;
  out.name = tensor.name;
  out.dtype = DType::kF32;
  out.byte_order = order;
  out.shape = tensor.shape;
  out.data.resize(tensor.values.size() * sizeof(float));
  if (order == kHostOrder) {
    if (!tensor.values.empty()) {
      std::memcpy(out.data.data(), tensor.values.data(), out.data.size());
    }
  } else {
    uint8_t* dst = out.data.data();
    for (float v : tensor.values) {
      store_u32(dst, std::bit_cast<uint32_t>(v), order);
      dst += 4;
    }
  }
  return out;
}

void validate_tensor(const SerializedTensor& serialized) {
  const size_t width = dtype_size(serialized.dtype);
  if (serialized.byte_order != ByteOrder::kLittleEndian &&
      serialized.byte_order != ByteOrder::kBigEndian) {
    throw MalformedTensor("tensor '" + serialized.name +
                          "' has an unknown byte order tag");
  }
  const uint64_t expected = element_count(serialized.shape) * width;
  if (serialized.data.size() != expected) {
    throw MalformedTensor("tensor '" + serialized.name + "' carries " +
                          std::to_string(serialized.data.size()) +
                          " bytes, shape requires " + std::to_string(expected));
  }
}

void read_values(const SerializedTensor& serialized, std::span<float> out) {
  validate_tensor(serialized);
  if (out.size() != serialized.data.size() / sizeof(float)) {
    throw MalformedTensor("output buffer does not match tensor '" +
                          serialized.name + "'");
  }
  if (serialized.byte_order == kHostOrder) {
    if (!out.empty()) {
      std::memcpy(out.data(), serialized.data.data(), serialized.data.size());
    }
    return;
  }
  const uint8_t* src = serialized.data.data();
  for (float& v : out) {
    v = std::bit_cast<float>(load_u32(src, serialized.byte_order));
    src += 4;
  }
}

Tensor decode_tensor(const SerializedTensor& serialized) {
  validate_tensor(serialized);
  Tensor out;
  out.name = serialized.name;
  out.shape = serialized.shape;
  out.values.resize(serialized.data.size() / sizeof(float));
  read_values(serialized, out.values);
  return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.name != b.name || a.shape != b.shape ||
      a.values.size() != b.values.size()) {
    return false;
  }
  for (size_t i = 0; i < a.values.size(); ++i) {
    if (std::bit_cast<uint32_t>(a.values[i]) !=
        std::bit_cast<uint32_t>(b.values[i])) {
      return false;
    }
  }
  return true;
}

void validate_model(const ModelState& model) {
  std::unordered_set<std::string> names;
  for (const auto& t : model.tensors) {
    if (t.name.empty()) throw MalformedTensor("tensor with empty name");
    if (!names.insert(t.name).second) {
      throw MalformedTensor("duplicate tensor name '" + t.name + "'");
    }
    validate_tensor(t);
  }
}

ModelState encode_model(const std::vector<Tensor>& tensors, uint64_t version,
                        ByteOrder order) {
  ModelState model;
  model.version = version;
  model.tensors.reserve(tensors.size());
  for (const auto& t : tensors) model.tensors.push_back(encode_tensor(t, order));
  validate_model(model);
  return model;
}

std::vector<Tensor> decode_model(const ModelState& model) {
  std::vector<Tensor> out;
  out.reserve(model.tensors.size());
  for (const auto& t : model.tensors) out.push_back(decode_tensor(t));
  return out;
}

uint64_t parameter_count(const ModelState& model) {
  uint64_t total = 0;
  for (const auto& t : model.tensors) total += element_count(t.shape);
  return total;
}

uint64_t model_digest(const ModelState& model) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, size_t n) {
    const auto* bytes = static_cast<const uint8_t*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& t : model.tensors) {
    mix(t.name.data(), t.name.size());
    for (uint32_t d : t.shape) mix(&d, sizeof(d));
    mix(t.data.data(), t.data.size());
  }
  return h;
}

}  // namespace fedlite
