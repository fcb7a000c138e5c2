#ifndef FEDLITE_TRANSPORT_H_
#define FEDLITE_TRANSPORT_H_

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>

#include "fedlite/wire_protocol.h"

namespace fedlite::net {

using Clock = std::chrono::steady_clock;
using Deadline = std::optional<Clock::time_point>;

Deadline deadline_after(double seconds);  // negative means "no deadline"

// A bidirectional byte stream. One reader and one writer at a time; close()
// may be called from any thread and unblocks both.
class Connection {
 public:
  virtual ~Connection() = default;
  virtual void write_all(std::span<const uint8_t> bytes) = 0;
  // Returns 0 at end of stream. Throws TimeoutError past the deadline.
  virtual size_t read_some(std::span<uint8_t> out, Deadline deadline) = 0;
  virtual void close() = 0;
};

class Listener {
 public:
  virtual ~Listener() = default;
  // Blocks until a peer connects; nullptr once the listener is closed.
  virtual std::unique_ptr<Connection> accept() = 0;
  virtual void close() = 0;
  // Endpoint peers should dial (the bound port when port 0 was requested).
  virtual std::string endpoint() const = 0;
};

class Network {
 public:
  virtual ~Network() = default;
  virtual std::unique_ptr<Listener> listen(const std::string& endpoint) = 0;
  // Throws TransportError when the endpoint cannot be reached.
  virtual std::unique_ptr<Connection> connect(const std::string& endpoint,
                                              double timeout_s) = 0;
  // Adds a peer certificate (PEM) to the client trust store. No-op without TLS.
  virtual void trust_certificate(const std::string& /*pem*/) {}
};

// Message-level view of a connection.
class Channel {
 public:
  explicit Channel(std::shared_ptr<Connection> connection);

  void send(const wire::Message& message);
  void send(const wire::FrameParts& parts);
  // nullopt on a clean end of stream. Throws TimeoutError, TransportError on
  // a stream that ends mid-frame, and the wire decode errors.
  std::optional<wire::Message> receive(double timeout_s = -1);
  // Like receive(), but end of stream is an error.
  wire::Message expect(double timeout_s = -1);
  void close();

 private:
  std::shared_ptr<Connection> connection_;
  wire::FrameReader reader_;
  std::vector<uint8_t> scratch_;
};

// Connect, send one request, wait for one reply.
wire::Message call(Network& network, const std::string& endpoint,
                   const wire::Message& request, double timeout_s);

// Sends a message without waiting for a reply.
void notify(Network& network, const std::string& endpoint,
            const wire::Message& message, double timeout_s);

struct TlsConfig {
  std::string cert_file;  // our certificate, PEM
  std::string key_file;   // our private key, PEM
  std::string ca_file;    // certificates we trust as servers; may be empty
};

std::unique_ptr<Network> make_tcp_network(std::optional<TlsConfig> tls = {});

// Process-local network for tests and in-process federations. Endpoints are
// arbitrary names.
class InMemoryNetwork : public Network {
 public:
  InMemoryNetwork();
  ~InMemoryNetwork() override;

  std::unique_ptr<Listener> listen(const std::string& endpoint) override;
  std::unique_ptr<Connection> connect(const std::string& endpoint,
                                      double timeout_s) override;

  // Refuse new connections to `endpoint` (simulates an unreachable peer).
  void set_unreachable(const std::string& endpoint, bool unreachable);

  struct State;

 private:
  std::shared_ptr<State> state_;
};

// Accepts connections and runs `handler` on a thread per connection.
class Server {
 public:
  using Handler = std::function<void(Channel&)>;

  Server(Network& network, const std::string& endpoint, Handler handler);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  const std::string& endpoint() const { return endpoint_; }
  // Closes the listener and every open connection, then joins. Must not be
  // called from a handler thread.
  void stop();

 private:
  struct Session {
    std::shared_ptr<Connection> connection;
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };

  void accept_loop();
  void reap_locked();

  std::unique_ptr<Listener> listener_;
  std::string endpoint_;
  Handler handler_;
  std::mutex mu_;
  std::list<Session> sessions_;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
};

// "host:port" split; throws ConfigError.
std::pair<std::string, uint16_t> split_host_port(const std::string& endpoint);

}  // namespace fedlite::net

#endif  // FEDLITE_TRANSPORT_H_
