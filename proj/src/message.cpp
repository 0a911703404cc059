#include "trip/message.hpp"

#include <cstring>

namespace trip {

namespace {

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& buf) : buf_(buf) {}
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }

 private:
  std::vector<std::uint8_t>& buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return size_ - off_; }

  std::uint8_t u8() {
    need(1);
    return data_[off_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(data_[off_]) |
                      static_cast<std::uint16_t>(data_[off_ + 1]) << 8;
    off_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[off_ + i]) << (8 * i);
    off_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[off_ + i]) << (8 * i);
    off_ += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, data_ + off_, n);
    off_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (off_ + n > size_) throw DecodeError("truncated payload", off_);
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t off_ = 0;
};

void write_poly(Writer& w, const SetPolynomial& p) {
  w.u64(p.modulus);
  w.u32(static_cast<std::uint32_t>(p.coeffs.size()));
  for (std::uint64_t c : p.coeffs) w.u64(c);
}

SetPolynomial read_poly(Reader& r) {
  SetPolynomial p;
  p.modulus = r.u64();
  const std::uint32_t n = r.u32();
  if (static_cast<std::size_t>(n) * 8 > r.remaining())
    throw DecodeError("polynomial length exceeds payload", r.offset());
  p.coeffs.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) p.coeffs[i] = r.u64();
  return p;
}

void write_matrix(Writer& w, const Mat& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
}

Mat read_matrix(Reader& r) {
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  if (static_cast<std::uint64_t>(rows) * cols * 8 > r.remaining())
    throw DecodeError("matrix size exceeds payload", r.offset());
  Mat m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.f64();
  return m;
}

template <class T>
const T& body_as(const Message& m) {
  const T* p = std::get_if<T>(&m.body);
  if (!p) throw std::invalid_argument("message body does not match its type");
  return *p;
}

}  // namespace

const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::Hello: return "Hello";
    case MsgType::AlignPoly: return "AlignPoly";
    case MsgType::AlignPairwiseSums: return "AlignPairwiseSums";
    case MsgType::AlignRegionSizes: return "AlignRegionSizes";
    case MsgType::AlignGlobalSizes: return "AlignGlobalSizes";
    case MsgType::LocalFeatureFactor: return "LocalFeatureFactor";
    case MsgType::GlobalFeatureFactor: return "GlobalFeatureFactor";
    case MsgType::MultiplierH: return "MultiplierH";
    case MsgType::RoundComplete: return "RoundComplete";
    case MsgType::Converged: return "Converged";
    case MsgType::Abort: return "Abort";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode_frame(const Message& m) {
  if ((m.type == MsgType::LocalFeatureFactor || m.type == MsgType::MultiplierH) &&
      m.mode == 0)
    throw std::invalid_argument("patient-mode factors never go on the wire");

  std::vector<std::uint8_t> payload;
  Writer w(payload);
  if (m.type == MsgType::Hello) {
    if (std::holds_alternative<HelloBody>(m.body)) {
      w.u32(body_as<HelloBody>(m).version);
      w.u32(m.sender);
    } else if (!std::holds_alternative<std::monostate>(m.body)) {
      throw std::invalid_argument("Hello carries no such body");
    }
  } else {
    w.u16(m.sender);
    w.u16(m.mode);
    w.u32(m.round);
    switch (m.type) {
      case MsgType::AlignPoly:
        write_poly(w, body_as<PolyBody>(m).poly);
        break;
      case MsgType::AlignPairwiseSums: {
        const auto& b = body_as<PairwiseSumsBody>(m);
        w.u16(static_cast<std::uint16_t>(b.sums.size()));
        for (const auto& [other, poly] : b.sums) {
          w.u16(other);
          write_poly(w, poly);
        }
        break;
      }
      case MsgType::AlignRegionSizes: {
        const auto& b = body_as<RegionSizesBody>(m);
        w.f64(b.compute_seconds);
        w.u32(static_cast<std::uint32_t>(b.sizes.size()));
        for (const auto& [mask, size] : b.sizes) {
          w.u32(mask);
          w.u64(size);
        }
        break;
      }
      case MsgType::AlignGlobalSizes: {
        const auto& b = body_as<GlobalSizesBody>(m);
        w.u32(static_cast<std::uint32_t>(b.sizes.size()));
        for (const auto& [mask, size] : b.sizes) {
          w.u32(mask);
          w.u64(size);
        }
        break;
      }
      case MsgType::LocalFeatureFactor:
      case MsgType::GlobalFeatureFactor:
      case MsgType::MultiplierH:
        write_matrix(w, body_as<MatrixBody>(m).m);
        break;
      case MsgType::RoundComplete: {
        const auto& b = body_as<RoundCompleteBody>(m);
        w.f64(b.fit_sum_squares);
        w.f64(b.compute_seconds);
        break;
      }
      case MsgType::Converged:
        w.u32(body_as<ConvergedBody>(m).iterations);
        break;
      case MsgType::Abort: {
        const auto& b = body_as<AbortBody>(m);
        w.u8(b.fatal ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(b.reason.size()));
        for (char c : b.reason) w.u8(static_cast<std::uint8_t>(c));
        break;
      }
      default:
        throw std::invalid_argument("unencodable message type");
    }
  }

  std::vector<std::uint8_t> frame;
  frame.reserve(kFrameOverhead + payload.size());
  frame.insert(frame.end(), kFrameMagic, kFrameMagic + 4);
  frame.push_back(static_cast<std::uint8_t>(m.type));
  Writer h(frame);
  h.u32(static_cast<std::uint32_t>(payload.size()));
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

std::uint32_t frame_payload_length(const std::uint8_t* header9) {
  if (std::memcmp(header9, kFrameMagic, 4) != 0)
    throw DecodeError("bad frame magic", 0);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(header9[5 + i]) << (8 * i);
  return v;
}

Message decode_frame(const std::vector<std::uint8_t>& frame) {
  if (frame.size() < kFrameOverhead)
    throw DecodeError("frame shorter than header", frame.size());
  if (std::memcmp(frame.data(), kFrameMagic, 4) != 0)
    throw DecodeError("bad frame magic", 0);
  const std::uint8_t raw_type = frame[4];
  if (raw_type > static_cast<std::uint8_t>(MsgType::Abort))
    throw DecodeError("unknown message type", 4);
  const std::uint32_t len = frame_payload_length(frame.data());
  if (frame.size() != kFrameOverhead + len)
    throw DecodeError("frame length does not match header", 5);

  Message m;
  m.type = static_cast<MsgType>(raw_type);
  Reader r(frame.data() + kFrameOverhead, len);

  if (m.type == MsgType::Hello) {
    if (len == 0) {
      m.body = std::monostate{};
    } else {
      HelloBody b;
      b.version = r.u32();
      m.sender = static_cast<std::uint16_t>(r.u32());
      m.body = b;
    }
  } else {
    m.sender = r.u16();
    m.mode = r.u16();
    m.round = r.u32();
    switch (m.type) {
      case MsgType::AlignPoly:
        m.body = PolyBody{read_poly(r)};
        break;
      case MsgType::AlignPairwiseSums: {
        PairwiseSumsBody b;
        const std::uint16_t n = r.u16();
        b.sums.reserve(n);
        for (std::uint16_t i = 0; i < n; ++i) {
          const std::uint16_t other = r.u16();
          b.sums.emplace_back(other, read_poly(r));
        }
        m.body = std::move(b);
        break;
      }
      case MsgType::AlignRegionSizes: {
        RegionSizesBody b;
        b.compute_seconds = r.f64();
        const std::uint32_t n = r.u32();
        if (static_cast<std::uint64_t>(n) * 12 > r.remaining())
          throw DecodeError("region list exceeds payload", r.offset());
        b.sizes.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) {
          const std::uint32_t mask = r.u32();
          b.sizes.emplace_back(mask, r.u64());
        }
        m.body = std::move(b);
        break;
      }
      case MsgType::AlignGlobalSizes: {
        GlobalSizesBody b;
        const std::uint32_t n = r.u32();
        if (static_cast<std::uint64_t>(n) * 12 > r.remaining())
          throw DecodeError("region list exceeds payload", r.offset());
        b.sizes.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) {
          const std::uint32_t mask = r.u32();
          b.sizes.emplace_back(mask, r.u64());
        }
        m.body = std::move(b);
        break;
      }
      case MsgType::LocalFeatureFactor:
      case MsgType::GlobalFeatureFactor:
      case MsgType::MultiplierH:
        if (m.mode == 0 && m.type != MsgType::GlobalFeatureFactor)
          throw DecodeError("factor message for mode 0", 2);
        m.body = MatrixBody{read_matrix(r)};
        break;
      case MsgType::RoundComplete: {
        RoundCompleteBody b;
        b.fit_sum_squares = r.f64();
        b.compute_seconds = r.f64();
        m.body = b;
        break;
      }
      case MsgType::Converged: {
        ConvergedBody b;
        b.iterations = r.u32();
        m.body = b;
        break;
      }
      case MsgType::Abort: {
        AbortBody b;
        b.fatal = r.u8() != 0;
        const std::uint32_t n = r.u32();
        if (n > r.remaining())
          throw DecodeError("abort reason exceeds payload", r.offset());
        b.reason.resize(n);
        if (n) r.bytes(b.reason.data(), n);
        m.body = std::move(b);
        break;
      }
      default:
        throw DecodeError("unknown message type", 4);
    }
  }
  if (r.remaining() != 0)
    throw DecodeError("trailing bytes after payload", kFrameOverhead + r.offset());
  return m;
}

Message make_hello(std::uint16_t sender, std::uint32_t version) {
  Message m;
  m.type = MsgType::Hello;
  m.sender = sender;
  m.body = HelloBody{version};
  return m;
}

Message make_empty_hello() {
  Message m;
  m.type = MsgType::Hello;
  return m;
}

}  // namespace trip
