#include "trip/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "trip/message.hpp"

namespace trip {

namespace {

struct FrameQueue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::vector<std::uint8_t>> frames;
  bool closed = false;

  void push(std::vector<std::uint8_t> f) {
    {
      std::lock_guard<std::mutex> lk(mu);
      if (closed) throw TransportError("channel closed");
      frames.push_back(std::move(f));
    }
    cv.notify_one();
  }

  std::vector<std::uint8_t> pop() {
    std::unique_lock<std::mutex> lk(mu);
    cv.wait(lk, [&] { return !frames.empty() || closed; });
    if (frames.empty()) throw TransportError("channel closed by peer");
    auto f = std::move(frames.front());
    frames.pop_front();
    return f;
  }

  void close() {
    {
      std::lock_guard<std::mutex> lk(mu);
      closed = true;
    }
    cv.notify_all();
  }
};

class InProcessChannel : public Channel {
 public:
  InProcessChannel(std::shared_ptr<FrameQueue> out, std::shared_ptr<FrameQueue> in)
      : out_(std::move(out)), in_(std::move(in)) {}
  ~InProcessChannel() override { close(); }

  void send_frame(const std::vector<std::uint8_t>& frame) override {
    out_->push(frame);
  }
  std::vector<std::uint8_t> recv_frame() override { return in_->pop(); }
  void close() override {
    out_->close();
    in_->close();
  }

 private:
  std::shared_ptr<FrameQueue> out_, in_;
};

class TcpChannel : public Channel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~TcpChannel() override { close(); }

  void send_frame(const std::vector<std::uint8_t>& frame) override {
    std::size_t sent = 0;
    std::lock_guard<std::mutex> lk(send_mu_);
    while (sent < frame.size()) {
      const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("send failed: ") + std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::vector<std::uint8_t> recv_frame() override {
    std::lock_guard<std::mutex> lk(recv_mu_);
    std::vector<std::uint8_t> frame(kFrameOverhead);
    recv_exact(frame.data(), kFrameOverhead);
    const std::uint32_t len = frame_payload_length(frame.data());
    frame.resize(kFrameOverhead + len);
    if (len) recv_exact(frame.data() + kFrameOverhead, len);
    return frame;
  }

  void close() override {
    std::lock_guard<std::mutex> lk(close_mu_);
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  void recv_exact(std::uint8_t* dst, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
      if (r == 0) throw TransportError("connection closed by peer");
      if (r < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("recv failed: ") + std::strerror(errno));
      }
      got += static_cast<std::size_t>(r);
    }
  }

  int fd_;
  std::mutex send_mu_, recv_mu_, close_mu_;
};

}  // namespace

std::pair<std::shared_ptr<Channel>, std::shared_ptr<Channel>> make_in_process_pair() {
  auto a2b = std::make_shared<FrameQueue>();
  auto b2a = std::make_shared<FrameQueue>();
  return {std::make_shared<InProcessChannel>(a2b, b2a),
          std::make_shared<InProcessChannel>(b2a, a2b)};
}

TcpListener::TcpListener(const std::string& address, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError("socket() failed");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw TransportError("bad listen address: " + address);
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd_);
    throw TransportError(std::string("bind failed: ") + std::strerror(errno));
  }
  if (::listen(fd_, 64) != 0) {
    ::close(fd_);
    throw TransportError(std::string("listen failed: ") + std::strerror(errno));
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::shared_ptr<Channel> TcpListener::accept_one() {
  const int cfd = ::accept(fd_, nullptr, nullptr);
  if (cfd < 0) throw TransportError(std::string("accept failed: ") + std::strerror(errno));
  return std::make_shared<TcpChannel>(cfd);
}

std::shared_ptr<Channel> tcp_connect(const std::string& address, std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TransportError("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw TransportError("bad address: " + address);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    throw TransportError(std::string("connect failed: ") + std::strerror(errno));
  }
  return std::make_shared<TcpChannel>(fd);
}

}  // namespace trip
