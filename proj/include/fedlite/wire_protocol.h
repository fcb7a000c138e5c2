#ifndef FEDLITE_WIRE_PROTOCOL_H_
#define FEDLITE_WIRE_PROTOCOL_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedlite/model_engine.h"
#include "fedlite/tensor_codec.h"

// Framed binary protocol spoken between driver, controller and learners.
//
// Frame:   u32 BE payload length | u8 msg_type | payload
// Payload: strings are u32 BE length + UTF-8 bytes, integers fixed-width BE,
//          booleans one byte, reals IEEE-754 binary64 BE, optionals a
//          presence byte then the value, lists u32 BE count then elements.
// Tensor:  name | dtype u8 | byte_order u8 | rank u8 | dims u32 BE... |
//          u64 BE data length | data
// Model:   u64 version | u32 count | tensors...
namespace fedlite::wire {

inline constexpr size_t kHeaderSize = 5;
inline constexpr uint64_t kMaxPayload = uint64_t{1} << 31;

enum class MsgType : uint8_t {
  kJoinFederation = 0x01,
  kJoinAck = 0x02,
  kRunTask = 0x03,
  kAck = 0x04,
  kMarkTaskCompleted = 0x05,
  kEvaluateModel = 0x06,
  kPing = 0x07,
  kEvalReply = 0x08,
  kPong = 0x09,
  kShutDown = 0x0A,
  // Driver-facing extensions.
  kInitModel = 0x0B,
  kStatusRequest = 0x0C,
  kStatusReply = 0x0D,
};

struct Hyperparams {
  uint32_t epochs = 1;
  uint32_t batch_size = 100;
  double learning_rate = 0.01;

  bool operator==(const Hyperparams&) const = default;
};

struct JoinFederation {
  std::string learner_id;
  std::string endpoint;
  uint64_t num_samples = 0;
  std::optional<std::string> public_cert;

  bool operator==(const JoinFederation&) const = default;
};

struct JoinAck {
  bool accepted = false;
  bool operator==(const JoinAck&) const = default;
};

struct RunTask {
  std::string task_id;
  ModelState model;
  Hyperparams hyperparams;
  bool operator==(const RunTask&) const = default;
};

struct Ack {
  std::string task_id;
  bool status = false;
  bool operator==(const Ack&) const = default;
};

struct MarkTaskCompleted {
  std::string task_id;
  std::string learner_id;
  ModelState model;
  TrainStats stats;
  bool operator==(const MarkTaskCompleted&) const = default;
};

struct EvaluateModel {
  std::string task_id;
  ModelState model;
  bool operator==(const EvaluateModel&) const = default;
};

struct EvalReply {
  std::string task_id;
  double loss = 0;
  bool operator==(const EvalReply&) const = default;
};

struct Ping {
  bool operator==(const Ping&) const = default;
};
struct Pong {
  bool operator==(const Pong&) const = default;
};
struct ShutDown {
  bool operator==(const ShutDown&) const = default;
};

// Initial model shipment from the driver. The controller gets tensors only;
// learners also get the architecture. Answered with Ack.
struct InitModel {
  std::string task_id;
  ModelState model;
  std::optional<MlpArchitecture> architecture;
  bool operator==(const InitModel&) const = default;
};

struct StatusRequest {
  bool operator==(const StatusRequest&) const = default;
};

enum class Phase : uint8_t {
  kWaiting = 0,
  kTraining = 1,
  kAggregating = 2,
  kEvaluating = 3,
  kDone = 4,
};

struct StatusReply {
  uint64_t round = 0;
  uint64_t global_version = 0;
  uint32_t registered = 0;
  Phase phase = Phase::kWaiting;
  bool operator==(const StatusReply&) const = default;
};

using Message =
    std::variant<JoinFederation, JoinAck, RunTask, Ack, MarkTaskCompleted,
                 EvaluateModel, EvalReply, Ping, Pong, ShutDown, InitModel,
                 StatusRequest, StatusReply>;

MsgType type_of(const Message& message);
std::string_view type_name(MsgType type);

// Throws OversizeMessage when the payload would exceed kMaxPayload.
std::vector<uint8_t> encode_message(const Message& message);

struct Decoded {
  Message message;
  size_t consumed = 0;  // header + payload; trailing bytes are left alone
};

// Throws TruncatedFrame, UnknownMessageType or MalformedPayload.
Decoded decode_message(std::span<const uint8_t> bytes);

// Builds the 5-byte header; throws OversizeMessage past kMaxPayload.
std::vector<uint8_t> frame_header(uint64_t payload_length, MsgType type);

// Encoded ModelState bytes that can be shared across many frames, so a model
// dispatched to N learners is serialized once.
using SharedBytes = std::shared_ptr<const std::vector<uint8_t>>;
SharedBytes encode_model_bytes(const ModelState& model);

// A frame assembled from pieces; writing the pieces back to back yields
// exactly encode_message() of the equivalent message.
struct FrameParts {
  std::vector<uint8_t> head;
  SharedBytes body;
  std::vector<uint8_t> tail;
  size_t size() const { return head.size() + (body ? body->size() : 0) + tail.size(); }
};

FrameParts encode_run_task(const std::string& task_id, const SharedBytes& model,
                           const Hyperparams& hyperparams);
FrameParts encode_evaluate_model(const std::string& task_id,
                                 const SharedBytes& model);

// Incremental decoder for a byte stream of concatenated frames.
class FrameReader {
 public:
  void feed(std::span<const uint8_t> bytes);
  // Next complete message, or nullopt when more bytes are needed.
  std::optional<Message> next();
  size_t buffered() const { return buffer_.size() - offset_; }

 private:
  std::vector<uint8_t> buffer_;
  size_t offset_ = 0;
};

}  // namespace fedlite::wire

#endif  // FEDLITE_WIRE_PROTOCOL_H_
