#include "fedlite/wire_protocol.h"

#include <random>

#include <gtest/gtest.h>

#include "test_util.h"

namespace fedlite::wire {
namespace {

using Bytes = std::vector<uint8_t>;

Message roundtrip(const Message& m) {
  const auto bytes = encode_message(m);
  const auto decoded = decode_message(bytes);
  EXPECT_EQ(decoded.consumed, bytes.size());
  return decoded.message;
}

TEST(WireProtocol, PingIsBareHeader) {
  EXPECT_EQ(encode_message(Ping{}), (Bytes{0x00, 0x00, 0x00, 0x00, 0x07}));
}

TEST(WireProtocol, MessageTypeAssignments) {
  EXPECT_EQ(encode_message(JoinAck{true})[4], 0x02);
  EXPECT_EQ(encode_message(Ack{})[4], 0x04);
  EXPECT_EQ(encode_message(EvalReply{})[4], 0x08);
  EXPECT_EQ(encode_message(Pong{})[4], 0x09);
  EXPECT_EQ(encode_message(ShutDown{})[4], 0x0A);
  EXPECT_EQ(encode_message(RunTask{})[4], 0x03);
  EXPECT_EQ(encode_message(MarkTaskCompleted{})[4], 0x05);
  EXPECT_EQ(encode_message(EvaluateModel{})[4], 0x06);
  EXPECT_EQ(encode_message(JoinFederation{})[4], 0x01);
}

TEST(WireProtocol, AckLayout) {
  // len=7 | type 0x04 | strlen 2 | "t1" | status 1
  const Bytes expected{0x00, 0x00, 0x00, 0x07, 0x04, 0x00, 0x00,
                       0x00, 0x02, 't',  '1',  0x01};
  EXPECT_EQ(encode_message(Ack{"t1", true}), expected);
  EXPECT_EQ(encode_message(Ack{"t1", true}), encode_message(Ack{"t1", true}));
}

TEST(WireProtocol, TensorLayoutInsideEvaluateModel) {
  ModelState model;
  model.version = 3;
  model.tensors.push_back(
      encode_tensor(Tensor{"b", {2}, {1.0f, 2.0f}}, ByteOrder::kBigEndian));
  const Bytes expected{
      0x00, 0x00, 0x00, 0x2D, 0x06,                    // header, 45 bytes
      0x00, 0x00, 0x00, 0x01, 'e',                     // task_id "e"
      0, 0, 0, 0, 0, 0, 0, 3,                          // version
      0x00, 0x00, 0x00, 0x01,                          // tensor count
      0x00, 0x00, 0x00, 0x01, 'b',                     // name
      0x01, 0x01, 0x01,                                // F32, BE, rank 1
      0x00, 0x00, 0x00, 0x02,                          // dim
      0, 0, 0, 0, 0, 0, 0, 8,                          // data length
      0x3F, 0x80, 0x00, 0x00, 0x40, 0x00, 0x00, 0x00,  // data
  };
  EXPECT_EQ(encode_message(EvaluateModel{"e", model}), expected);
}

TEST(WireProtocol, EveryVariantRoundTrips) {
  std::mt19937_64 rng(1);
  const auto model = testing_util::random_model(rng, {{2, 3}, {0}, {}}, 7);
  const std::vector<Message> all{
      JoinFederation{"L1", "127.0.0.1:9000", 100, std::nullopt},
      JoinFederation{"L2", "mem://x", 5, std::string("-----BEGIN CERT")},
      JoinAck{true},
      JoinAck{false},
      RunTask{"r1-L1", model, {2, 50, 0.125}},
      Ack{"r1-L1", false},
      MarkTaskCompleted{"r1-L1", "L1", model, {1.5, 3, 1, 100}},
      EvaluateModel{"e1", model},
      EvalReply{"e1", 0.75},
      Ping{},
      Pong{},
      ShutDown{},
      InitModel{"init", model, std::nullopt},
      InitModel{"init", model, MlpArchitecture{13, 100, 32, 1}},
      StatusRequest{},
      StatusReply{4, 4, 8, Phase::kEvaluating},
  };
  for (const auto& m : all) EXPECT_EQ(roundtrip(m), m) << type_name(type_of(m));
}

Message random_message(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 12);
  std::uniform_int_distribution<int> len(0, 12);
  auto str = [&] {
    std::string s(static_cast<size_t>(len(rng)), 'a');
    for (auto& c : s) c = static_cast<char>('a' + rng() % 26);
    return s;
  };
  auto model = [&] {
    ModelState m;
    m.version = rng();
    const int n = len(rng) % 4;
    for (int i = 0; i < n; ++i) {
      m.tensors.push_back(encode_tensor(
          testing_util::random_tensor(rng, 64, "t" + std::to_string(i)),
          rng() % 2 ? ByteOrder::kBigEndian : ByteOrder::kLittleEndian));
    }
    return m;
  };
  std::uniform_real_distribution<double> real(-1e6, 1e6);
  switch (pick(rng)) {
    case 0: {
      JoinFederation m{str(), str(), rng(), std::nullopt};
      if (rng() % 2) m.public_cert = str();
      return m;
    }
    case 1: return JoinAck{rng() % 2 == 0};
    case 2: return RunTask{str(), model(), {static_cast<uint32_t>(rng()), static_cast<uint32_t>(rng()), real(rng)}};
    case 3: return Ack{str(), rng() % 2 == 0};
    case 4: return MarkTaskCompleted{str(), str(), model(), {real(rng), rng(), rng(), rng()}};
    case 5: return EvaluateModel{str(), model()};
    case 6: return EvalReply{str(), real(rng)};
    case 7: return Ping{};
    case 8: return Pong{};
    case 9: return ShutDown{};
    case 10: {
      InitModel m{str(), model(), std::nullopt};
      if (rng() % 2) m.architecture = MlpArchitecture{1, 2, 3, 4};
      return m;
    }
    case 11: return StatusRequest{};
    default: return StatusReply{rng(), rng(), static_cast<uint32_t>(rng()), Phase::kDone};
  }
}

TEST(WireProtocol, RandomizedRoundTrip) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 2000; ++i) {
    const auto m = random_message(rng);
    ASSERT_EQ(roundtrip(m), m);
  }
}

TEST(WireProtocol, StreamDecodingIgnoresChunkBoundaries) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Message> sent;
    Bytes stream;
    for (int i = 0; i < 30; ++i) {
      sent.push_back(random_message(rng));
      const auto b = encode_message(sent.back());
      stream.insert(stream.end(), b.begin(), b.end());
    }
    FrameReader reader;
    std::vector<Message> got;
    size_t pos = 0;
    while (pos < stream.size()) {
      const size_t chunk = std::min<size_t>(1 + rng() % 97, stream.size() - pos);
      reader.feed({stream.data() + pos, chunk});
      pos += chunk;
      while (auto m = reader.next()) got.push_back(std::move(*m));
    }
    EXPECT_EQ(got, sent);
    EXPECT_EQ(reader.buffered(), 0u);
  }
}

TEST(WireProtocol, TrailingBytesAreNotConsumed) {
  auto bytes = encode_message(Ack{"x", true});
  const size_t frame = bytes.size();
  bytes.push_back(0xAB);
  bytes.push_back(0xCD);
  const auto d = decode_message(bytes);
  EXPECT_EQ(d.consumed, frame);
  EXPECT_EQ(d.message, Message(Ack{"x", true}));
}

TEST(WireProtocol, UnknownTypeRejected) {
  const Bytes frame{0x00, 0x00, 0x00, 0x00, 0xFF};
  EXPECT_THROW(decode_message(frame), UnknownMessageType);
  const Bytes zero{0x00, 0x00, 0x00, 0x00, 0x00};
  EXPECT_THROW(decode_message(zero), UnknownMessageType);
}

TEST(WireProtocol, TruncatedFrames) {
  const Bytes short_payload{0x00, 0x00, 0x00, 0x0A, 0x04, 1, 2, 3, 4};
  EXPECT_THROW(decode_message(short_payload), TruncatedFrame);
  const Bytes short_header{0x00, 0x00};
  EXPECT_THROW(decode_message(short_header), TruncatedFrame);
}

TEST(WireProtocol, MalformedPayloads) {
  // Boolean byte out of range.
  EXPECT_THROW(decode_message(Bytes{0, 0, 0, 1, 0x02, 0x02}), MalformedPayload);
  // String length runs past the payload.
  EXPECT_THROW(decode_message(Bytes{0, 0, 0, 5, 0x04, 0, 0, 0, 9, 'x'}),
               MalformedPayload);
  // Extra bytes inside the payload.
  EXPECT_THROW(decode_message(Bytes{0, 0, 0, 2, 0x02, 1, 0}), MalformedPayload);
  // Ping with a payload.
  EXPECT_THROW(decode_message(Bytes{0, 0, 0, 1, 0x07, 0}), MalformedPayload);
}

TEST(WireProtocol, OversizeHeaderRejected) {
  EXPECT_NO_THROW(frame_header(kMaxPayload, MsgType::kRunTask));
  EXPECT_THROW(frame_header(kMaxPayload + 1, MsgType::kRunTask), OversizeMessage);
}

TEST(WireProtocol, FullMlpRunTaskRoundTrip) {
  const auto model = build_mlp(architecture_for_size("100k"), 3);
  ASSERT_EQ(model.tensors.size(), 202u);
  const RunTask task{"r1-L1", model, {1, 100, 0.01}};
  EXPECT_EQ(roundtrip(task), Message(task));
}

TEST(WireProtocol, SharedModelPartsMatchPlainEncoding) {
  std::mt19937_64 rng(4);
  const auto model = testing_util::random_model(rng, {{4, 4}, {4}}, 2);
  const auto body = encode_model_bytes(model);
  auto flatten = [](const FrameParts& p) {
    Bytes out = p.head;
    out.insert(out.end(), p.body->begin(), p.body->end());
    out.insert(out.end(), p.tail.begin(), p.tail.end());
    return out;
  };
  const Hyperparams hp{3, 10, 0.5};
  EXPECT_EQ(flatten(encode_run_task("t9", body, hp)),
            encode_message(RunTask{"t9", model, hp}));
  EXPECT_EQ(flatten(encode_evaluate_model("e9", body)),
            encode_message(EvaluateModel{"e9", model}));
}

}  // namespace
}  // namespace fedlite::wire
