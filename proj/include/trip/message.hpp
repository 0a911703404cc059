#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "trip/cp_model.hpp"
#include "trip/set_polynomial.hpp"

namespace trip {

// Frame layout (all integers little-endian):
//   magic "FTF1" | u8 type | u32 payload length | payload
// An empty payload gives the minimal 9-byte frame.  For every type except
// Hello the payload begins with a routing header:
//   u16 sender | u16 mode | u32 round
// Hello's payload is either empty or `u32 version | u32 sender`.
inline constexpr char kFrameMagic[4] = {'F', 'T', 'F', '1'};
inline constexpr std::size_t kFrameOverhead = 9;
inline constexpr std::uint32_t kProtocolVersion = 1;
inline constexpr std::uint16_t kCoordinatorId = 0xFFFF;

enum class MsgType : std::uint8_t {
  Hello = 0,
  AlignPoly = 1,
  AlignPairwiseSums = 2,
  AlignRegionSizes = 3,
  AlignGlobalSizes = 4,
  LocalFeatureFactor = 5,
  GlobalFeatureFactor = 6,
  MultiplierH = 7,
  RoundComplete = 8,
  Converged = 9,
  Abort = 10,
};

const char* msg_type_name(MsgType t);

struct HelloBody {
  std::uint32_t version = kProtocolVersion;
  bool operator==(const HelloBody&) const = default;
};

struct PolyBody {
  SetPolynomial poly;
  bool operator==(const PolyBody&) const = default;
};

struct PairwiseSumsBody {
  // (other hospital id, own-poly + other-poly), ordered by other id
  std::vector<std::pair<std::uint16_t, SetPolynomial>> sums;
  bool operator==(const PairwiseSumsBody&) const = default;
};

struct RegionSizesBody {
  std::vector<std::pair<std::uint32_t, std::uint64_t>> sizes;  // mask -> count
  double compute_seconds = 0.0;
  bool operator==(const RegionSizesBody&) const = default;
};

struct GlobalSizesBody {
  std::vector<std::pair<std::uint32_t, std::uint64_t>> sizes;
  bool operator==(const GlobalSizesBody&) const = default;
};

struct MatrixBody {
  Mat m;
  bool operator==(const MatrixBody& o) const {
    return m.rows() == o.m.rows() && m.cols() == o.m.cols() && m == o.m;
  }
};

struct RoundCompleteBody {
  double fit_sum_squares = 0.0;  // hospital's ||X_k - O_k||^2 this round
  double compute_seconds = 0.0;
  bool operator==(const RoundCompleteBody&) const = default;
};

struct ConvergedBody {
  std::uint32_t iterations = 0;
  bool operator==(const ConvergedBody&) const = default;
};

struct AbortBody {
  std::string reason;
  bool fatal = true;  // false = alignment rerun request
  bool operator==(const AbortBody&) const = default;
};

using MsgBody =
    std::variant<std::monostate, HelloBody, PolyBody, PairwiseSumsBody,
                 RegionSizesBody, GlobalSizesBody, MatrixBody,
                 RoundCompleteBody, ConvergedBody, AbortBody>;

struct Message {
  MsgType type = MsgType::Hello;
  std::uint16_t sender = 0;  // hospital id, or kCoordinatorId
  std::uint16_t mode = 0;    // absolute tensor mode for factor/align traffic
  std::uint32_t round = 0;   // iteration (factoring) or attempt (alignment)
  MsgBody body;

  bool operator==(const Message&) const = default;
};

class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (offset " + std::to_string(offset) + ")"),
        offset(offset) {}
  std::size_t offset;
};

// Serialize to one frame.  Factor matrices for mode 0 are never legal on the
// wire; encode_frame rejects LocalFeatureFactor / MultiplierH with mode 0.
std::vector<std::uint8_t> encode_frame(const Message& m);
Message decode_frame(const std::vector<std::uint8_t>& frame);

// payload length declared by a frame header (for stream transports)
std::uint32_t frame_payload_length(const std::uint8_t* header9);

Message make_hello(std::uint16_t sender, std::uint32_t version = kProtocolVersion);
Message make_empty_hello();

}  // namespace trip
