#include "fedlite/transport.h"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/err.h>
#include <openssl/pem.h>
#include <openssl/ssl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <set>
#include <unordered_map>

#include "fedlite/errors.h"

namespace fedlite::net {

Deadline deadline_after(double seconds) {
  if (seconds < 0) return std::nullopt;
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(
                            std::chrono::duration<double>(seconds));
}

std::pair<std::string, uint16_t> split_host_port(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == endpoint.size()) {
    throw ConfigError("endpoint '" + endpoint + "' is not host:port");
  }
  const std::string port_text = endpoint.substr(colon + 1);
  char* end = nullptr;
  const long port = std::strtol(port_text.c_str(), &end, 10);
  if (*end != '\0' || port < 0 || port > 65535) {
    throw ConfigError("endpoint '" + endpoint + "' has an invalid port");
  }
  return {endpoint.substr(0, colon), static_cast<uint16_t>(port)};
}

// ---------------------------------------------------------------------------
// Channel

Channel::Channel(std::shared_ptr<Connection> connection)
    : connection_(std::move(connection)), scratch_(64 * 1024) {}

void Channel::send(const wire::Message& message) {
  connection_->write_all(wire::encode_message(message));
}

void Channel::send(const wire::FrameParts& parts) {
  connection_->write_all(parts.head);
  if (parts.body) connection_->write_all(*parts.body);
  if (!parts.tail.empty()) connection_->write_all(parts.tail);
}

std::optional<wire::Message> Channel::receive(double timeout_s) {
  const Deadline deadline = deadline_after(timeout_s);
  while (true) {
    if (auto m = reader_.next()) return m;
    const size_t n = connection_->read_some(scratch_, deadline);
    if (n == 0) {
      if (reader_.buffered() != 0) {
        throw TransportError("stream ended inside a frame");
      }
      return std::nullopt;
    }
    reader_.feed({scratch_.data(), n});
  }
}

wire::Message Channel::expect(double timeout_s) {
  auto m = receive(timeout_s);
  if (!m) throw TransportError("peer closed the connection");
  return std::move(*m);
}

void Channel::close() { connection_->close(); }

wire::Message call(Network& network, const std::string& endpoint,
                   const wire::Message& request, double timeout_s) {
  Channel channel(network.connect(endpoint, timeout_s));
  channel.send(request);
  auto reply = channel.expect(timeout_s);
  channel.close();
  return reply;
}

void notify(Network& network, const std::string& endpoint,
            const wire::Message& message, double timeout_s) {
  Channel channel(network.connect(endpoint, timeout_s));
  channel.send(message);
  channel.close();
}

// ---------------------------------------------------------------------------
// TCP and TLS

namespace {

int wait_fd(int fd, short events, const Deadline& deadline) {
  while (true) {
    int timeout_ms = -1;
    if (deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          *deadline - Clock::now());
      timeout_ms = static_cast<int>(std::max<int64_t>(0, left.count()));
    }
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, timeout_ms);
    if (rc > 0) return p.revents;
    if (rc == 0) throw TimeoutError("timed out waiting for peer");
    if (errno != EINTR) throw TransportError(std::string("poll: ") + std::strerror(errno));
  }
}

std::string ssl_error_string() {
  const unsigned long code = ERR_get_error();
  if (code == 0) return "unknown TLS error";
  char buf[256];
  ERR_error_string_n(code, buf, sizeof(buf));
  ERR_clear_error();
  return buf;
}

class TcpConnection : public Connection {
 public:
  explicit TcpConnection(int fd) : fd_(fd) {}
  ~TcpConnection() override { ::close(fd_); }

  void write_all(std::span<const uint8_t> bytes) override {
    size_t sent = 0;
    while (sent < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent,
                               MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("send: ") + std::strerror(errno));
      }
      sent += static_cast<size_t>(n);
    }
  }

  size_t read_some(std::span<uint8_t> out, Deadline deadline) override {
    while (true) {
      wait_fd(fd_, POLLIN, deadline);
      const ssize_t n = ::recv(fd_, out.data(), out.size(), 0);
      if (n >= 0) return static_cast<size_t>(n);
      if (errno == EINTR || errno == EAGAIN) continue;
      if (errno == ECONNRESET) return 0;
      throw TransportError(std::string("recv: ") + std::strerror(errno));
    }
  }

  void close() override { ::shutdown(fd_, SHUT_RDWR); }

 private:
  int fd_;
};

struct SslCtxDeleter {
  void operator()(SSL_CTX* ctx) const { SSL_CTX_free(ctx); }
};
using SslCtxPtr = std::shared_ptr<SSL_CTX>;

class TlsConnection : public Connection {
 public:
  TlsConnection(int fd, SslCtxPtr ctx, bool server)
      : fd_(fd), ctx_(std::move(ctx)), ssl_(SSL_new(ctx_.get())), server_(server) {
    if (ssl_ == nullptr) throw TransportError("SSL_new: " + ssl_error_string());
    SSL_set_fd(ssl_, fd_);
  }
  ~TlsConnection() override {
    SSL_free(ssl_);
    ::close(fd_);
  }

  // Runs the handshake with a bounded wait. Clients call it eagerly so that
  // certificate failures surface from connect(); servers lazily.
  void handshake(double timeout_s) {
    std::call_once(handshake_once_, [&] {
      timeval tv{static_cast<time_t>(timeout_s), 0};
      ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
      ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
      const int rc = server_ ? SSL_accept(ssl_) : SSL_connect(ssl_);
      timeval zero{0, 0};
      ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &zero, sizeof(zero));
      ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &zero, sizeof(zero));
      if (rc != 1) {
        handshake_error_ = "TLS handshake failed: " + ssl_error_string();
      }
    });
    if (!handshake_error_.empty()) throw TransportError(handshake_error_);
  }

  void write_all(std::span<const uint8_t> bytes) override {
    handshake(10);
    size_t sent = 0;
    while (sent < bytes.size()) {
      const int chunk = static_cast<int>(std::min<size_t>(bytes.size() - sent, 1 << 30));
      const int n = SSL_write(ssl_, bytes.data() + sent, chunk);
      if (n <= 0) throw TransportError("SSL_write: " + ssl_error_string());
      sent += static_cast<size_t>(n);
    }
  }

  size_t read_some(std::span<uint8_t> out, Deadline deadline) override {
    handshake(10);
    while (true) {
      if (SSL_pending(ssl_) == 0) wait_fd(fd_, POLLIN, deadline);
      const int n = SSL_read(ssl_, out.data(),
                             static_cast<int>(std::min<size_t>(out.size(), 1 << 30)));
      if (n > 0) return static_cast<size_t>(n);
      const int err = SSL_get_error(ssl_, n);
      if (err == SSL_ERROR_WANT_READ || err == SSL_ERROR_WANT_WRITE) continue;
      if (err == SSL_ERROR_ZERO_RETURN || err == SSL_ERROR_SYSCALL) {
        ERR_clear_error();
        return 0;
      }
      throw TransportError("SSL_read: " + ssl_error_string());
    }
  }

  void close() override { ::shutdown(fd_, SHUT_RDWR); }

 private:
  int fd_;
  SslCtxPtr ctx_;
  SSL* ssl_;
  bool server_;
  std::once_flag handshake_once_;
  std::string handshake_error_;
};

struct TlsContexts {
  SslCtxPtr server;
  SslCtxPtr client;
};

TlsContexts make_tls_contexts(const TlsConfig& config) {
  TlsContexts out;
  out.server = SslCtxPtr(SSL_CTX_new(TLS_server_method()), SslCtxDeleter());
  out.client = SslCtxPtr(SSL_CTX_new(TLS_client_method()), SslCtxDeleter());
  if (!out.server || !out.client) {
    throw ConfigError("cannot create TLS context: " + ssl_error_string());
  }
  for (SSL_CTX* ctx : {out.server.get(), out.client.get()}) {
    SSL_CTX_set_min_proto_version(ctx, TLS1_2_VERSION);
    SSL_CTX_set_options(ctx, SSL_OP_IGNORE_UNEXPECTED_EOF);
  }
  if (!config.cert_file.empty()) {
    if (SSL_CTX_use_certificate_file(out.server.get(), config.cert_file.c_str(),
                                     SSL_FILETYPE_PEM) != 1 ||
        SSL_CTX_use_PrivateKey_file(out.server.get(), config.key_file.c_str(),
                                    SSL_FILETYPE_PEM) != 1 ||
        SSL_CTX_check_private_key(out.server.get()) != 1) {
      throw ConfigError("cannot load TLS key pair " + config.cert_file + ": " +
                        ssl_error_string());
    }
  }
  SSL_CTX_set_verify(out.client.get(), SSL_VERIFY_PEER, nullptr);
  X509_STORE* store = SSL_CTX_get_cert_store(out.client.get());
  // Self-signed peer certificates are pinned as anchors.
  X509_STORE_set_flags(store, X509_V_FLAG_PARTIAL_CHAIN);
  if (!config.ca_file.empty() &&
      SSL_CTX_load_verify_locations(out.client.get(), config.ca_file.c_str(),
                                    nullptr) != 1) {
    throw ConfigError("cannot load trusted certificates " + config.ca_file +
                      ": " + ssl_error_string());
  }
  return out;
}

std::string bound_endpoint(int fd, const std::string& host) {
  sockaddr_storage addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  uint16_t port = 0;
  if (addr.ss_family == AF_INET) {
    port = ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  } else if (addr.ss_family == AF_INET6) {
    port = ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
  }
  const std::string dial_host = host == "0.0.0.0" || host == "::" ? "127.0.0.1" : host;
  return dial_host + ":" + std::to_string(port);
}

class TcpListener : public Listener {
 public:
  TcpListener(int fd, std::string endpoint, SslCtxPtr tls)
      : fd_(fd), endpoint_(std::move(endpoint)), tls_(std::move(tls)) {}
  ~TcpListener() override {
    close();
    ::close(fd_);
  }

  std::unique_ptr<Connection> accept() override {
    while (!closed_) {
      pollfd p{fd_, POLLIN, 0};
      const int rc = ::poll(&p, 1, 100);
      if (rc <= 0) continue;
      const int conn = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
      if (conn < 0) {
        if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) continue;
        if (closed_) break;
        throw TransportError(std::string("accept: ") + std::strerror(errno));
      }
      int one = 1;
      ::setsockopt(conn, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      if (tls_) return std::make_unique<TlsConnection>(conn, tls_, true);
      return std::make_unique<TcpConnection>(conn);
    }
    return nullptr;
  }

  void close() override { closed_ = true; }
  std::string endpoint() const override { return endpoint_; }

 private:
  int fd_;
  std::string endpoint_;
  SslCtxPtr tls_;
  std::atomic<bool> closed_{false};
};

// OpenSSL writes to the socket with plain write(), so a peer that went away
// raises SIGPIPE. Ignore it unless the program installed its own handler.
void ignore_sigpipe_once() {
  static std::once_flag once;
  std::call_once(once, [] {
    struct sigaction current {};
    if (::sigaction(SIGPIPE, nullptr, &current) == 0 && current.sa_handler == SIG_DFL) {
      ::signal(SIGPIPE, SIG_IGN);
    }
  });
}

class TcpNetwork : public Network {
 public:
  explicit TcpNetwork(std::optional<TlsConfig> tls) {
    if (tls) {
      ignore_sigpipe_once();
      contexts_ = make_tls_contexts(*tls);
    }
  }

  std::unique_ptr<Listener> listen(const std::string& endpoint) override {
    auto [host, port] = split_host_port(endpoint);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0) {
      throw TransportError("cannot resolve " + endpoint);
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
    const int fd = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, 0);
    if (fd < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd, 512) != 0) {
      const std::string why = std::strerror(errno);
      ::close(fd);
      throw TransportError("cannot listen on " + endpoint + ": " + why);
    }
    return std::make_unique<TcpListener>(fd, bound_endpoint(fd, host),
                                         contexts_.server);
  }

  std::unique_ptr<Connection> connect(const std::string& endpoint,
                                      double timeout_s) override {
    auto [host, port] = split_host_port(endpoint);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0) {
      throw TransportError("cannot resolve " + endpoint);
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
    const int fd = ::socket(res->ai_family,
                            res->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, 0);
    if (fd < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
    auto fail = [&](const std::string& why) {
      ::close(fd);
      throw TransportError("cannot connect to " + endpoint + ": " + why);
    };
    if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
      if (errno != EINPROGRESS) fail(std::strerror(errno));
      try {
        wait_fd(fd, POLLOUT, deadline_after(timeout_s));
      } catch (const TimeoutError&) {
        fail("timed out");
      }
      int err = 0;
      socklen_t len = sizeof(err);
      ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
      if (err != 0) fail(std::strerror(err));
    }
    ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) & ~O_NONBLOCK);
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    if (!contexts_.client) return std::make_unique<TcpConnection>(fd);
    auto conn = std::make_unique<TlsConnection>(fd, contexts_.client, false);
    conn->handshake(std::max(1.0, timeout_s));
    return conn;
  }

  void trust_certificate(const std::string& pem) override {
    if (!contexts_.client) return;
    std::unique_ptr<BIO, decltype(&BIO_free)> bio(
        BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())), BIO_free);
    X509* cert = PEM_read_bio_X509(bio.get(), nullptr, nullptr, nullptr);
    if (cert == nullptr) {
      ERR_clear_error();
      throw TransportError("peer certificate is not valid PEM");
    }
    X509_STORE_add_cert(SSL_CTX_get_cert_store(contexts_.client.get()), cert);
    X509_free(cert);
    ERR_clear_error();  // a duplicate add is not an error for us
  }

 private:
  TlsContexts contexts_;
};

}  // namespace

std::unique_ptr<Network> make_tcp_network(std::optional<TlsConfig> tls) {
  return std::make_unique<TcpNetwork>(std::move(tls));
}

// ---------------------------------------------------------------------------
// In-memory

namespace {

struct Pipe {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::vector<uint8_t>> chunks;
  size_t front_offset = 0;
  bool closed = false;

  void shut() {
    {
      std::lock_guard lock(mu);
      closed = true;
    }
    cv.notify_all();
  }
};

class MemConnection : public Connection {
 public:
  MemConnection(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~MemConnection() override { close(); }

  void write_all(std::span<const uint8_t> bytes) override {
    {
      std::lock_guard lock(out_->mu);
      if (out_->closed) throw TransportError("connection closed");
      if (bytes.empty()) return;
      out_->chunks.emplace_back(bytes.begin(), bytes.end());
    }
    out_->cv.notify_all();
  }

  size_t read_some(std::span<uint8_t> out, Deadline deadline) override {
    std::unique_lock lock(in_->mu);
    auto ready = [&] { return !in_->chunks.empty() || in_->closed; };
    if (deadline) {
      if (!in_->cv.wait_until(lock, *deadline, ready)) {
        throw TimeoutError("timed out waiting for peer");
      }
    } else {
      in_->cv.wait(lock, ready);
    }
    size_t copied = 0;
    while (copied < out.size() && !in_->chunks.empty()) {
      auto& front = in_->chunks.front();
      const size_t n = std::min(out.size() - copied, front.size() - in_->front_offset);
      std::memcpy(out.data() + copied, front.data() + in_->front_offset, n);
      copied += n;
      in_->front_offset += n;
      if (in_->front_offset == front.size()) {
        in_->chunks.pop_front();
        in_->front_offset = 0;
      }
    }
    return copied;
  }

  void close() override {
    in_->shut();
    out_->shut();
  }

 private:
  std::shared_ptr<Pipe> in_;
  std::shared_ptr<Pipe> out_;
};

struct MemListenerState {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::unique_ptr<Connection>> pending;
  bool closed = false;
};

}  // namespace

struct InMemoryNetwork::State {
  std::mutex mu;
  std::unordered_map<std::string, std::shared_ptr<MemListenerState>> listeners;
  std::set<std::string> unreachable;
};

namespace {

class MemListener : public Listener {
 public:
  MemListener(std::shared_ptr<InMemoryNetwork::State> net, std::string endpoint,
              std::shared_ptr<MemListenerState> state)
      : net_(std::move(net)), endpoint_(std::move(endpoint)), state_(std::move(state)) {}
  ~MemListener() override { close(); }

  std::unique_ptr<Connection> accept() override {
    std::unique_lock lock(state_->mu);
    state_->cv.wait(lock, [&] { return !state_->pending.empty() || state_->closed; });
    if (state_->closed) return nullptr;
    auto conn = std::move(state_->pending.front());
    state_->pending.pop_front();
    return conn;
  }

  void close() override {
    {
      std::lock_guard lock(net_->mu);
      auto it = net_->listeners.find(endpoint_);
      if (it != net_->listeners.end() && it->second == state_) net_->listeners.erase(it);
    }
    {
      std::lock_guard lock(state_->mu);
      state_->closed = true;
      for (auto& c : state_->pending) c->close();
      state_->pending.clear();
    }
    state_->cv.notify_all();
  }

  std::string endpoint() const override { return endpoint_; }

 private:
  std::shared_ptr<InMemoryNetwork::State> net_;
  std::string endpoint_;
  std::shared_ptr<MemListenerState> state_;
};

}  // namespace

InMemoryNetwork::InMemoryNetwork() : state_(std::make_shared<State>()) {}
InMemoryNetwork::~InMemoryNetwork() = default;

std::unique_ptr<Listener> InMemoryNetwork::listen(const std::string& endpoint) {
  std::lock_guard lock(state_->mu);
  if (state_->listeners.contains(endpoint)) {
    throw TransportError("address in use: " + endpoint);
  }
  auto ls = std::make_shared<MemListenerState>();
  state_->listeners[endpoint] = ls;
  return std::make_unique<MemListener>(state_, endpoint, ls);
}

std::unique_ptr<Connection> InMemoryNetwork::connect(const std::string& endpoint,
                                                     double /*timeout_s*/) {
  std::shared_ptr<MemListenerState> ls;
  {
    std::lock_guard lock(state_->mu);
    auto it = state_->listeners.find(endpoint);
    if (state_->unreachable.contains(endpoint) || it == state_->listeners.end()) {
      throw TransportError("connection refused: " + endpoint);
    }
    ls = it->second;
  }
  auto a_to_b = std::make_shared<Pipe>();
  auto b_to_a = std::make_shared<Pipe>();
  auto client = std::make_unique<MemConnection>(b_to_a, a_to_b);
  {
    std::lock_guard lock(ls->mu);
    if (ls->closed) throw TransportError("connection refused: " + endpoint);
    ls->pending.push_back(std::make_unique<MemConnection>(a_to_b, b_to_a));
  }
  ls->cv.notify_all();
  return client;
}

void InMemoryNetwork::set_unreachable(const std::string& endpoint, bool unreachable) {
  std::lock_guard lock(state_->mu);
  if (unreachable) {
    state_->unreachable.insert(endpoint);
  } else {
    state_->unreachable.erase(endpoint);
  }
}

// ---------------------------------------------------------------------------
// Server

Server::Server(Network& network, const std::string& endpoint, Handler handler)
    : listener_(network.listen(endpoint)),
      endpoint_(listener_->endpoint()),
      handler_(std::move(handler)) {
  acceptor_ = std::thread([this] { accept_loop(); });
}

Server::~Server() { stop(); }

void Server::reap_locked() {
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (*it->done) {
      it->thread.join();
      it = sessions_.erase(it);
    } else {
      ++it;
    }
  }
}

void Server::accept_loop() {
  while (!stopping_) {
    std::unique_ptr<Connection> accepted;
    try {
      accepted = listener_->accept();
    } catch (const TransportError&) {
      continue;
    }
    if (!accepted) break;
    std::shared_ptr<Connection> conn(std::move(accepted));
    std::lock_guard lock(mu_);
    reap_locked();
    if (stopping_) {
      conn->close();
      break;
    }
    auto done = std::make_shared<std::atomic<bool>>(false);
    Session session{conn, {}, done};
    session.thread = std::thread([this, conn, done] {
      try {
        Channel channel(conn);
        handler_(channel);
      } catch (const std::exception&) {
        // The handler owns error reporting; the connection just ends.
      }
      conn->close();
      *done = true;
    });
    sessions_.push_back(std::move(session));
  }
}

void Server::stop() {
  if (stopping_.exchange(true)) {
    if (acceptor_.joinable()) acceptor_.join();
    return;
  }
  listener_->close();
  if (acceptor_.joinable()) acceptor_.join();
  std::list<Session> sessions;
  {
    std::lock_guard lock(mu_);
    for (auto& s : sessions_) s.connection->close();
    sessions.swap(sessions_);
  }
  for (auto& s : sessions) s.thread.join();
}

}  // namespace fedlite::net
