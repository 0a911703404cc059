#include <doctest.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "trip/message.hpp"

using namespace trip;

namespace {

std::vector<std::uint8_t> raw_frame(std::uint8_t type,
                                    const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> f = {'F', 'T', 'F', '1', type};
  const std::uint32_t n = static_cast<std::uint32_t>(payload.size());
  for (int i = 0; i < 4; ++i) f.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  f.insert(f.end(), payload.begin(), payload.end());
  return f;
}

void put_u16(std::vector<std::uint8_t>& v, std::uint16_t x) {
  v.push_back(static_cast<std::uint8_t>(x));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
}

void put_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& v, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) v.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

std::vector<std::uint8_t> routing(std::uint16_t sender, std::uint16_t mode,
                                  std::uint32_t round) {
  std::vector<std::uint8_t> v;
  put_u16(v, sender);
  put_u16(v, mode);
  put_u32(v, round);
  return v;
}

Message roundtrip(const Message& m) { return decode_frame(encode_frame(m)); }

}  // namespace

TEST_CASE("the empty hello is the minimal nine-byte frame") {
  const auto frame = encode_frame(make_empty_hello());
  const std::vector<std::uint8_t> want = {'F', 'T', 'F', '1', 0, 0, 0, 0, 0};
  CHECK(frame == want);
  const Message m = decode_frame(frame);
  CHECK(m.type == MsgType::Hello);
  CHECK(m.sender == 0);
  CHECK(std::holds_alternative<std::monostate>(m.body));
}

TEST_CASE("a versioned hello round-trips in seventeen bytes") {
  const Message hello = make_hello(3);
  const auto frame = encode_frame(hello);
  CHECK(frame.size() == 17);
  CHECK(roundtrip(hello) == hello);
  CHECK(std::get<HelloBody>(roundtrip(hello).body).version == kProtocolVersion);

  const Message old = make_hello(kCoordinatorId, 7);
  CHECK(roundtrip(old) == old);
}

TEST_CASE("factor frames carry the matrix after the routing header") {
  Message m;
  m.type = MsgType::GlobalFeatureFactor;
  m.sender = kCoordinatorId;
  m.mode = 2;
  m.round = 41;
  Mat a(3, 2);
  a << 1.5, -2.0, 0.0, 3.25, 4.0, 5.5;
  m.body = MatrixBody{a};
  const auto frame = encode_frame(m);
  // 9 header + 8 routing + 8 dims + 48 data
  CHECK(frame.size() == 73);
  CHECK(frame_payload_length(frame.data()) == 64);
  const Message back = decode_frame(frame);
  CHECK(back == m);
  CHECK(std::get<MatrixBody>(back.body).m(2, 1) == 5.5);
}

TEST_CASE("every message type survives a fixed round-trip") {
  std::vector<Message> cases;

  cases.push_back(make_empty_hello());
  cases.push_back(make_hello(12));

  Message poly;
  poly.type = MsgType::AlignPoly;
  poly.sender = 1;
  poly.mode = 1;
  poly.round = 0;
  poly.body = PolyBody{encode_set({2, 3}, 11, 101)};
  cases.push_back(poly);

  Message sums;
  sums.type = MsgType::AlignPairwiseSums;
  sums.sender = 2;
  sums.mode = 2;
  sums.round = 1;
  PairwiseSumsBody sb;
  sb.sums.emplace_back(0, encode_set({3, 5}, 13, 101));
  sb.sums.emplace_back(1, encode_set({}, 40, 101));
  sums.body = std::move(sb);
  cases.push_back(sums);

  Message regions;
  regions.type = MsgType::AlignRegionSizes;
  regions.sender = 0;
  regions.mode = 1;
  regions.round = 2;
  regions.body = RegionSizesBody{{{3, 7}, {2, 1}}, 0.125};
  cases.push_back(regions);

  Message globals;
  globals.type = MsgType::AlignGlobalSizes;
  globals.sender = kCoordinatorId;
  globals.mode = 1;
  globals.round = 0;
  globals.body = GlobalSizesBody{{{3, 7}, {2, 1}, {1, 0}}};
  cases.push_back(globals);

  Mat f(2, 3);
  f << 1, 2, 3, 4, 5, 6;
  for (MsgType t : {MsgType::LocalFeatureFactor, MsgType::GlobalFeatureFactor,
                    MsgType::MultiplierH}) {
    Message m;
    m.type = t;
    m.sender = 4;
    m.mode = 1;
    m.round = 9;
    m.body = MatrixBody{f};
    cases.push_back(m);
  }

  Message round;
  round.type = MsgType::RoundComplete;
  round.sender = 3;
  round.mode = 0;
  round.round = 17;
  round.body = RoundCompleteBody{42.5, 0.03125};
  cases.push_back(round);

  Message conv;
  conv.type = MsgType::Converged;
  conv.sender = kCoordinatorId;
  conv.mode = 0;
  conv.round = 55;
  conv.body = ConvergedBody{55};
  cases.push_back(conv);

  Message abort;
  abort.type = MsgType::Abort;
  abort.sender = 1;
  abort.mode = 2;
  abort.round = 3;
  abort.body = AbortBody{"alpha collision, rerun", false};
  cases.push_back(abort);

  for (const Message& m : cases) {
    CAPTURE(msg_type_name(m.type));
    const auto frame = encode_frame(m);
    REQUIRE(frame.size() >= kFrameOverhead);
    CHECK(frame.size() == kFrameOverhead + frame_payload_length(frame.data()));
    CHECK(roundtrip(m) == m);
    CHECK(encode_frame(roundtrip(m)) == frame);
  }
}

TEST_CASE("random messages round-trip and keep their length bookkeeping") {
  Rng rng(4242);
  auto rand_poly = [&] {
    SetPolynomial p;
    p.modulus = modulus_for_attempt(static_cast<int>(rng.uniform_below(4)));
    const std::size_t n = rng.uniform_below(9);
    for (std::size_t i = 0; i < n; ++i)
      p.coeffs.push_back(rng.uniform_below(p.modulus));
    return p;
  };
  auto rand_mat_body = [&] {
    const auto rows = static_cast<Eigen::Index>(rng.uniform_below(5));
    const auto cols = static_cast<Eigen::Index>(rng.uniform_below(5));
    return MatrixBody{testutil::rand_mat(rng, rows, cols, -2.0, 2.0)};
  };

  for (int trial = 0; trial < 1000; ++trial) {
    Message m;
    m.type = static_cast<MsgType>(rng.uniform_below(11));
    if (m.type == MsgType::Hello) {
      if (rng.uniform_below(2) == 0) {
        m = make_empty_hello();
      } else {
        m = make_hello(static_cast<std::uint16_t>(rng.uniform_below(65536)),
                       static_cast<std::uint32_t>(rng.uniform_below(1u << 30)));
      }
    } else {
      m.sender = static_cast<std::uint16_t>(rng.uniform_below(65536));
      m.mode = static_cast<std::uint16_t>(rng.uniform_below(4));
      m.round = static_cast<std::uint32_t>(rng.uniform_below(1u << 20));
      switch (m.type) {
        case MsgType::AlignPoly:
          m.body = PolyBody{rand_poly()};
          break;
        case MsgType::AlignPairwiseSums: {
          PairwiseSumsBody b;
          const std::size_t n = rng.uniform_below(4);
          for (std::size_t i = 0; i < n; ++i)
            b.sums.emplace_back(static_cast<std::uint16_t>(i), rand_poly());
          m.body = std::move(b);
          break;
        }
        case MsgType::AlignRegionSizes: {
          RegionSizesBody b;
          b.compute_seconds = rng.uniform01();
          const std::size_t n = rng.uniform_below(5);
          for (std::size_t i = 0; i < n; ++i)
            b.sizes.emplace_back(static_cast<std::uint32_t>(1 + i),
                                 rng.uniform_below(1000));
          m.body = std::move(b);
          break;
        }
        case MsgType::AlignGlobalSizes: {
          GlobalSizesBody b;
          const std::size_t n = rng.uniform_below(5);
          for (std::size_t i = 0; i < n; ++i)
            b.sizes.emplace_back(static_cast<std::uint32_t>(1 + i),
                                 rng.uniform_below(1000));
          m.body = std::move(b);
          break;
        }
        case MsgType::LocalFeatureFactor:
        case MsgType::MultiplierH:
          m.mode = static_cast<std::uint16_t>(1 + rng.uniform_below(3));
          m.body = rand_mat_body();
          break;
        case MsgType::GlobalFeatureFactor:
          m.body = rand_mat_body();
          break;
        case MsgType::RoundComplete:
          m.body = RoundCompleteBody{rng.uniform01() * 100.0, rng.uniform01()};
          break;
        case MsgType::Converged:
          m.body =
              ConvergedBody{static_cast<std::uint32_t>(rng.uniform_below(500))};
          break;
        case MsgType::Abort: {
          std::string reason;
          const std::size_t n = rng.uniform_below(24);
          for (std::size_t i = 0; i < n; ++i)
            reason.push_back(static_cast<char>('a' + rng.uniform_below(26)));
          m.body = AbortBody{reason, rng.uniform_below(2) == 1};
          break;
        }
        default:
          break;
      }
    }

    const auto frame = encode_frame(m);
    REQUIRE(frame.size() >= kFrameOverhead);
    REQUIRE(frame.size() ==
            kFrameOverhead + frame_payload_length(frame.data()));
    const Message back = decode_frame(frame);
    REQUIRE(back == m);
    REQUIRE(encode_frame(back) == frame);
  }
}

TEST_CASE("patient-mode factor matrices are refused on the wire") {
  Mat f(2, 2);
  f << 1, 2, 3, 4;
  for (MsgType t : {MsgType::LocalFeatureFactor, MsgType::MultiplierH}) {
    Message m;
    m.type = t;
    m.sender = 1;
    m.mode = 0;
    m.round = 5;
    m.body = MatrixBody{f};
    CHECK_THROWS_AS(encode_frame(m), std::invalid_argument);
    m.mode = 1;
    CHECK_NOTHROW(encode_frame(m));
  }

  // a frame patched back to mode 0 is rejected on decode as well
  Message m;
  m.type = MsgType::LocalFeatureFactor;
  m.sender = 1;
  m.mode = 1;
  m.round = 5;
  m.body = MatrixBody{f};
  auto frame = encode_frame(m);
  frame[kFrameOverhead + 2] = 0;  // routing header: sender | mode | round
  frame[kFrameOverhead + 3] = 0;
  try {
    decode_frame(frame);
    FAIL("expected a decode error");
  } catch (const DecodeError& e) {
    CHECK(e.offset == 2);
    CHECK(std::string(e.what()).find("mode 0") != std::string::npos);
  }
}

TEST_CASE("encode refuses bodies that do not match the type") {
  Message m;
  m.type = MsgType::AlignPoly;
  m.sender = 1;
  m.mode = 1;
  CHECK_THROWS_AS(encode_frame(m), std::invalid_argument);  // monostate body

  Message hello = make_empty_hello();
  hello.body = ConvergedBody{3};
  CHECK_THROWS_AS(encode_frame(hello), std::invalid_argument);
}

TEST_CASE("decode errors carry the offending byte offset") {
  auto offset_of = [](const std::vector<std::uint8_t>& frame) -> std::size_t {
    try {
      decode_frame(frame);
    } catch (const DecodeError& e) {
      return e.offset;
    }
    return static_cast<std::size_t>(-1);
  };

  SUBCASE("frames shorter than the header") {
    CHECK(offset_of({}) == 0);
    CHECK(offset_of({'F', 'T', 'F', '1', 0}) == 5);
  }

  SUBCASE("bad magic") {
    std::vector<std::uint8_t> f = {'X', 'T', 'F', '1', 0, 0, 0, 0, 0};
    CHECK(offset_of(f) == 0);
    std::uint8_t header[9] = {'X', 'T', 'F', '1', 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(frame_payload_length(header), DecodeError);
  }

  SUBCASE("unknown type byte") {
    CHECK(offset_of(raw_frame(11, {})) == 4);
    CHECK(offset_of(raw_frame(255, {})) == 4);
  }

  SUBCASE("declared length disagrees with the byte count") {
    std::vector<std::uint8_t> f = {'F', 'T', 'F', '1', 0, 5, 0, 0, 0};
    CHECK(offset_of(f) == 5);
    auto g = encode_frame(make_hello(1));
    g.push_back(0);  // extra byte beyond the declared length
    CHECK(offset_of(g) == 5);
  }

  SUBCASE("payload runs out mid-body") {
    // a Converged frame whose payload stops after the routing header
    CHECK(offset_of(raw_frame(9, routing(1, 0, 0))) == 8);
  }

  SUBCASE("trailing bytes after a complete body") {
    auto payload = routing(1, 0, 7);
    put_u32(payload, 7);  // iterations
    payload.push_back(0xEE);
    CHECK(offset_of(raw_frame(9, payload)) == kFrameOverhead + 12);
  }

  SUBCASE("polynomial length guard") {
    auto payload = routing(1, 1, 0);
    put_u64(payload, 101);   // modulus
    put_u32(payload, 1000);  // coefficient count with no coefficients
    CHECK(offset_of(raw_frame(1, payload)) == 20);
  }

  SUBCASE("matrix size guard") {
    auto payload = routing(1, 1, 0);
    put_u32(payload, 1000);
    put_u32(payload, 1000);
    CHECK(offset_of(raw_frame(6, payload)) == 16);
  }

  SUBCASE("region list guard") {
    auto payload = routing(1, 1, 0);
    put_u64(payload, 0);    // compute_seconds bits
    put_u32(payload, 500);  // region count with no entries
    CHECK(offset_of(raw_frame(3, payload)) == 20);

    auto gpayload = routing(kCoordinatorId, 1, 0);
    put_u32(gpayload, 500);
    CHECK(offset_of(raw_frame(4, gpayload)) == 12);
  }

  SUBCASE("abort reason guard") {
    auto payload = routing(1, 0, 0);
    payload.push_back(1);    // fatal
    put_u32(payload, 100);   // reason length with no bytes
    CHECK(offset_of(raw_frame(10, payload)) == 13);
  }
}
