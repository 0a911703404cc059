#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace trip {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bidirectional, frame-preserving byte channel.  send_frame is atomic per
// frame; recv_frame blocks until a full frame or the peer closes.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send_frame(const std::vector<std::uint8_t>& frame) = 0;
  virtual std::vector<std::uint8_t> recv_frame() = 0;
  virtual void close() = 0;
};

// two endpoints backed by a pair of in-memory queues
std::pair<std::shared_ptr<Channel>, std::shared_ptr<Channel>> make_in_process_pair();

// loopback TCP
class TcpListener {
 public:
  TcpListener(const std::string& address, std::uint16_t port);
  ~TcpListener();
  std::uint16_t port() const { return port_; }
  std::shared_ptr<Channel> accept_one();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

std::shared_ptr<Channel> tcp_connect(const std::string& address, std::uint16_t port);

}  // namespace trip
