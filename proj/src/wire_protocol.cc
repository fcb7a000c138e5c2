#include "fedlite/wire_protocol.h"

#include <bit>
#include <cstring>
#include <type_traits>

namespace fedlite::wire {
namespace {

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<uint8_t>& out) : out_(out) {}

  void u8(uint8_t v) { out_.push_back(v); }
  void u32(uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out_.push_back(static_cast<uint8_t>(v >> s));
  }
  void u64(uint64_t v) {
    for (int s = 56; s >= 0; s -= 8) out_.push_back(static_cast<uint8_t>(v >> s));
  }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void boolean(bool v) { u8(v ? 1 : 0); }
  void str(const std::string& s) {
    if (s.size() > UINT32_MAX) throw OversizeMessage("string too long");
    u32(static_cast<uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(std::span<const uint8_t> bytes) {
    out_.insert(out_.end(), bytes.begin(), bytes.end());
  }

  void tensor(const SerializedTensor& t) {
    if (t.shape.size() > 255) {
      throw MalformedTensor("tensor '" + t.name + "' has rank above 255");
    }
    str(t.name);
    u8(static_cast<uint8_t>(t.dtype));
    u8(static_cast<uint8_t>(t.byte_order));
    u8(static_cast<uint8_t>(t.shape.size()));
    for (uint32_t d : t.shape) u32(d);
    u64(t.data.size());
    raw(t.data);
  }

  void model(const ModelState& m) {
    u64(m.version);
    u32(static_cast<uint32_t>(m.tensors.size()));
    for (const auto& t : m.tensors) tensor(t);
  }

  void hyperparams(const Hyperparams& h) {
    u32(h.epochs);
    u32(h.batch_size);
    f64(h.learning_rate);
  }

 private:
  std::vector<uint8_t>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> in) : in_(in) {}

  uint8_t u8() { return take(1)[0]; }
  uint32_t u32() {
    auto b = take(4);
    uint32_t v = 0;
    for (uint8_t x : b) v = v << 8 | x;
    return v;
  }
  uint64_t u64() {
    auto b = take(8);
    uint64_t v = 0;
    for (uint8_t x : b) v = v << 8 | x;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  bool boolean() {
    const uint8_t b = u8();
    if (b > 1) throw MalformedPayload("boolean byte out of range");
    return b == 1;
  }
  std::string str() {
    const uint32_t n = u32();
    auto b = take(n);
    return std::string(b.begin(), b.end());
  }
  template <typename T, typename F>
  std::optional<T> optional(F read) {
    if (!boolean()) return std::nullopt;
    return read();
  }

  SerializedTensor tensor() {
    SerializedTensor t;
    t.name = str();
    t.dtype = static_cast<DType>(u8());
    const uint8_t order = u8();
    if (order > 1) throw MalformedPayload("unknown byte order tag");
    t.byte_order = static_cast<ByteOrder>(order);
    const uint8_t rank = u8();
    t.shape.resize(rank);
    for (auto& d : t.shape) d = u32();
    const uint64_t n = u64();
    if (n > remaining()) throw MalformedPayload("tensor data runs past payload");
    auto b = take(static_cast<size_t>(n));
    t.data.assign(b.begin(), b.end());
    return t;
  }

  ModelState model() {
    ModelState m;
    m.version = u64();
    const uint32_t count = u32();
    // Each tensor needs at least 15 bytes; reject absurd counts early.
    if (count > remaining() / 15 + 1) {
      throw MalformedPayload("tensor count exceeds payload");
    }
    m.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) m.tensors.push_back(tensor());
    return m;
  }

  Hyperparams hyperparams() {
    Hyperparams h;
    h.epochs = u32();
    h.batch_size = u32();
    h.learning_rate = f64();
    return h;
  }

  TrainStats stats() {
    TrainStats s;
    s.time_per_batch_ms = f64();
    s.completed_steps = u64();
    s.completed_epochs = u64();
    s.num_training_samples = u64();
    return s;
  }

  MlpArchitecture architecture() {
    MlpArchitecture a;
    a.input_dim = u32();
    a.hidden_layers = u32();
    a.hidden_units = u32();
    a.output_dim = u32();
    return a;
  }

  size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const uint8_t> take(size_t n) {
    if (n > remaining()) throw MalformedPayload("payload ends early");
    auto out = in_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::span<const uint8_t> in_;
  size_t pos_ = 0;
};

void write_payload(ByteWriter& w, const Message& message) {
  std::visit(
      [&w](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, JoinFederation>) {
          w.str(m.learner_id);
          w.str(m.endpoint);
          w.u64(m.num_samples);
          w.boolean(m.public_cert.has_value());
          if (m.public_cert) w.str(*m.public_cert);
        } else if constexpr (std::is_same_v<T, JoinAck>) {
          w.boolean(m.accepted);
        } else if constexpr (std::is_same_v<T, RunTask>) {
          w.str(m.task_id);
          w.model(m.model);
          w.hyperparams(m.hyperparams);
        } else if constexpr (std::is_same_v<T, Ack>) {
          w.str(m.task_id);
          w.boolean(m.status);
        } else if constexpr (std::is_same_v<T, MarkTaskCompleted>) {
          w.str(m.task_id);
          w.str(m.learner_id);
          w.model(m.model);
          w.f64(m.stats.time_per_batch_ms);
          w.u64(m.stats.completed_steps);
          w.u64(m.stats.completed_epochs);
          w.u64(m.stats.num_training_samples);
        } else if constexpr (std::is_same_v<T, EvaluateModel>) {
          w.str(m.task_id);
          w.model(m.model);
        } else if constexpr (std::is_same_v<T, EvalReply>) {
          w.str(m.task_id);
          w.f64(m.loss);
        } else if constexpr (std::is_same_v<T, InitModel>) {
          w.str(m.task_id);
          w.model(m.model);
          w.boolean(m.architecture.has_value());
          if (m.architecture) {
            w.u32(m.architecture->input_dim);
            w.u32(m.architecture->hidden_layers);
            w.u32(m.architecture->hidden_units);
            w.u32(m.architecture->output_dim);
          }
        } else if constexpr (std::is_same_v<T, StatusReply>) {
          w.u64(m.round);
          w.u64(m.global_version);
          w.u32(m.registered);
          w.u8(static_cast<uint8_t>(m.phase));
        } else {
          // Ping, Pong, ShutDown, StatusRequest: empty payload.
          static_assert(std::is_empty_v<T>);
        }
      },
      message);
}

Message read_payload(MsgType type, ByteReader& r) {
  switch (type) {
    case MsgType::kJoinFederation: {
      JoinFederation m;
      m.learner_id = r.str();
      m.endpoint = r.str();
      m.num_samples = r.u64();
      m.public_cert = r.optional<std::string>([&r] { return r.str(); });
      return m;
    }
    case MsgType::kJoinAck:
      return JoinAck{r.boolean()};
    case MsgType::kRunTask: {
      RunTask m;
      m.task_id = r.str();
      m.model = r.model();
      m.hyperparams = r.hyperparams();
      return m;
    }
    case MsgType::kAck: {
      Ack m;
      m.task_id = r.str();
      m.status = r.boolean();
      return m;
    }
    case MsgType::kMarkTaskCompleted: {
      MarkTaskCompleted m;
      m.task_id = r.str();
      m.learner_id = r.str();
      m.model = r.model();
      m.stats = r.stats();
      return m;
    }
    case MsgType::kEvaluateModel: {
      EvaluateModel m;
      m.task_id = r.str();
      m.model = r.model();
      return m;
    }
    case MsgType::kEvalReply: {
      EvalReply m;
      m.task_id = r.str();
      m.loss = r.f64();
      return m;
    }
    case MsgType::kPing:
      return Ping{};
    case MsgType::kPong:
      return Pong{};
    case MsgType::kShutDown:
      return ShutDown{};
    case MsgType::kInitModel: {
      InitModel m;
      m.task_id = r.str();
      m.model = r.model();
      m.architecture =
          r.optional<MlpArchitecture>([&r] { return r.architecture(); });
      return m;
    }
    case MsgType::kStatusRequest:
      return StatusRequest{};
    case MsgType::kStatusReply: {
      StatusReply m;
      m.round = r.u64();
      m.global_version = r.u64();
      m.registered = r.u32();
      const uint8_t phase = r.u8();
      if (phase > static_cast<uint8_t>(Phase::kDone)) {
        throw MalformedPayload("unknown phase");
      }
      m.phase = static_cast<Phase>(phase);
      return m;
    }
  }
  throw UnknownMessageType("unknown message type 0x" +
                           std::to_string(static_cast<int>(type)));
}

bool known_type(uint8_t t) {
  return t >= static_cast<uint8_t>(MsgType::kJoinFederation) &&
         t <= static_cast<uint8_t>(MsgType::kStatusReply);
}

}  // namespace

MsgType type_of(const Message& message) {
  static constexpr MsgType kTypes[] = {
      MsgType::kJoinFederation, MsgType::kJoinAck,       MsgType::kRunTask,
      MsgType::kAck,            MsgType::kMarkTaskCompleted,
      MsgType::kEvaluateModel,  MsgType::kEvalReply,     MsgType::kPing,
      MsgType::kPong,           MsgType::kShutDown,      MsgType::kInitModel,
      MsgType::kStatusRequest,  MsgType::kStatusReply,
  };
  return kTypes[message.index()];
}

std::string_view type_name(MsgType type) {
  switch (type) {
    case MsgType::kJoinFederation: return "JoinFederation";
    case MsgType::kJoinAck: return "JoinAck";
    case MsgType::kRunTask: return "RunTask";
    case MsgType::kAck: return "Ack";
    case MsgType::kMarkTaskCompleted: return "MarkTaskCompleted";
    case MsgType::kEvaluateModel: return "EvaluateModel";
    case MsgType::kPing: return "Ping";
    case MsgType::kEvalReply: return "EvalReply";
    case MsgType::kPong: return "Pong";
    case MsgType::kShutDown: return "ShutDown";
    case MsgType::kInitModel: return "InitModel";
    case MsgType::kStatusRequest: return "StatusRequest";
    case MsgType::kStatusReply: return "StatusReply";
  }
  return "unknown";
}

std::vector<uint8_t> frame_header(uint64_t payload_length, MsgType type) {
  if (payload_length > kMaxPayload) {
    throw OversizeMessage("payload of " + std::to_string(payload_length) +
                          " bytes exceeds the 2^31 limit");
  }
  std::vector<uint8_t> out;
  out.reserve(kHeaderSize);
  ByteWriter w(out);
  w.u32(static_cast<uint32_t>(payload_length));
  w.u8(static_cast<uint8_t>(type));
  return out;
}

std::vector<uint8_t> encode_message(const Message& message) {
  std::vector<uint8_t> out(kHeaderSize);
  ByteWriter w(out);
  write_payload(w, message);
  const auto header = frame_header(out.size() - kHeaderSize, type_of(message));
  std::memcpy(out.data(), header.data(), kHeaderSize);
  return out;
}

Decoded decode_message(std::span<const uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) {
    throw TruncatedFrame("need 5 header bytes, have " +
                         std::to_string(bytes.size()));
  }
  const uint32_t length = static_cast<uint32_t>(bytes[0]) << 24 |
                          static_cast<uint32_t>(bytes[1]) << 16 |
                          static_cast<uint32_t>(bytes[2]) << 8 | bytes[3];
  const uint8_t type = bytes[4];
  if (length > kMaxPayload) {
    throw MalformedPayload("frame length " + std::to_string(length) +
                           " exceeds the 2^31 limit");
  }
  if (!known_type(type)) {
    throw UnknownMessageType("unknown message type " + std::to_string(type));
  }
  if (bytes.size() - kHeaderSize < length) {
    throw TruncatedFrame("frame promises " + std::to_string(length) +
                         " payload bytes, have " +
                         std::to_string(bytes.size() - kHeaderSize));
  }
  ByteReader r(bytes.subspan(kHeaderSize, length));
  Message message = read_payload(static_cast<MsgType>(type), r);
  if (r.remaining() != 0) {
    throw MalformedPayload(std::to_string(r.remaining()) +
                           " unread bytes at end of payload");
  }
  return {std::move(message), kHeaderSize + length};
}

SharedBytes encode_model_bytes(const ModelState& model) {
  auto out = std::make_shared<std::vector<uint8_t>>();
  ByteWriter w(*out);
  w.model(model);
  return out;
}

namespace {

FrameParts assemble(MsgType type, std::vector<uint8_t> head_payload,
                    const SharedBytes& body, std::vector<uint8_t> tail) {
  FrameParts parts;
  const uint64_t length = head_payload.size() + body->size() + tail.size();
  parts.head = frame_header(length, type);
  parts.head.insert(parts.head.end(), head_payload.begin(), head_payload.end());
  parts.body = body;
  parts.tail = std::move(tail);
  return parts;
}

}  // namespace

FrameParts encode_run_task(const std::string& task_id, const SharedBytes& model,
                           const Hyperparams& hyperparams) {
  std::vector<uint8_t> head;
  ByteWriter(head).str(task_id);
  std::vector<uint8_t> tail;
  ByteWriter(tail).hyperparams(hyperparams);
  return assemble(MsgType::kRunTask, std::move(head), model, std::move(tail));
}

FrameParts encode_evaluate_model(const std::string& task_id,
                                 const SharedBytes& model) {
  std::vector<uint8_t> head;
  ByteWriter(head).str(task_id);
  return assemble(MsgType::kEvaluateModel, std::move(head), model, {});
}

void FrameReader::feed(std::span<const uint8_t> bytes) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> FrameReader::next() {
  const size_t available = buffer_.size() - offset_;
  if (available < kHeaderSize) return std::nullopt;
  const uint8_t* p = buffer_.data() + offset_;
  const uint64_t length = static_cast<uint32_t>(p[0]) << 24 |
                          static_cast<uint32_t>(p[1]) << 16 |
                          static_cast<uint32_t>(p[2]) << 8 | p[3];
  if (length <= kMaxPayload && available < kHeaderSize + length) {
    return std::nullopt;
  }
  auto decoded = decode_message({p, available});
  offset_ += decoded.consumed;
  // Compact once the consumed prefix dominates the buffer.
  if (offset_ > (1u << 20) && offset_ * 2 > buffer_.size()) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<long>(offset_));
    offset_ = 0;
  }
  return std::move(decoded.message);
}

}  // namespace fedlite::wire
