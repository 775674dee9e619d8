#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "fedcast/net.hpp"

namespace fedcast::net {

namespace {

using Clock = std::chrono::steady_clock;

Clock::time_point after_seconds(double s) {
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(s));
}

bool read_exact(int fd, std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    ssize_t r = ::recv(fd, p, n, 0);
    if (r <= 0) {
      if (r < 0 && errno == EINTR) continue;
      return false;
    }
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

bool send_all(int fd, const std::vector<std::uint8_t>& bytes) {
  const std::uint8_t* p = bytes.data();
  std::size_t n = bytes.size();
  while (n > 0) {
    ssize_t r = ::send(fd, p, n, MSG_NOSIGNAL);
    if (r <= 0) {
      if (r < 0 && errno == EINTR) continue;
      return false;
    }
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

/// Reads one full frame off the stream. Returns nothing on EOF, transport
/// error, or an unframeable header (at which point the stream position is
/// unrecoverable anyway).
std::optional<std::vector<std::uint8_t>> read_frame(int fd) {
  std::uint8_t head[10];
  if (!read_exact(fd, head, sizeof head)) return std::nullopt;
  for (std::size_t i = 0; i < kMagic.size(); ++i) {
    if (head[i] != kMagic[i]) return std::nullopt;
  }
  std::uint32_t payload_len = 0;
  for (int i = 0; i < 4; ++i) payload_len |= static_cast<std::uint32_t>(head[6 + i]) << (8 * i);
  if (payload_len > kMaxPayload) return std::nullopt;

  std::vector<std::uint8_t> frame(kFrameOverhead + payload_len);
  std::memcpy(frame.data(), head, sizeof head);
  if (!read_exact(fd, frame.data() + sizeof head, frame.size() - sizeof head)) return std::nullopt;
  return frame;
}

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  std::string h = host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) != 1)
    fail(Err::IoError, "cannot parse address '" + host + "'");
  return addr;
}

struct Conn {
  int fd = -1;
  std::thread reader;
  std::atomic<bool> alive{false};
  std::int64_t client_id = -1;  // -1 until a Join is accepted
};

struct Event {
  std::size_t conn = 0;
  bool closed = false;
  Message msg;
};

/// Shared server state. Reader threads only enqueue events; every decision,
/// every send and all federation state stay on the orchestrator thread.
class Hub {
 public:
  std::size_t add_conn(int fd) {
    std::lock_guard lk(mu_);
    conns_.push_back(std::make_unique<Conn>());
    Conn& c = *conns_.back();
    c.fd = fd;
    c.alive.store(true);
    const std::size_t idx = conns_.size() - 1;
    c.reader = std::thread([this, idx, fd] { read_loop(idx, fd); });
    return idx;
  }

  void push(Event ev) {
    {
      std::lock_guard lk(mu_);
      events_.push_back(std::move(ev));
    }
    cv_.notify_all();
  }

  std::optional<Event> wait_event(Clock::time_point deadline) {
    std::unique_lock lk(mu_);
    while (events_.empty()) {
      if (cv_.wait_until(lk, deadline) == std::cv_status::timeout && events_.empty()) return std::nullopt;
    }
    Event ev = std::move(events_.front());
    events_.pop_front();
    return ev;
  }

  Conn* conn(std::size_t idx) {
    std::lock_guard lk(mu_);
    return idx < conns_.size() ? conns_[idx].get() : nullptr;
  }

  void drop(std::size_t idx) {
    Conn* c = conn(idx);
    if (c && c->alive.exchange(false)) ::shutdown(c->fd, SHUT_RDWR);
  }

  bool send_to(std::size_t idx, const Message& msg) {
    Conn* c = conn(idx);
    if (!c || !c->alive.load()) return false;
    if (!send_all(c->fd, encode(msg))) {
      drop(idx);
      return false;
    }
    return true;
  }

  void shutdown_all() {
    std::vector<Conn*> all;
    {
      std::lock_guard lk(mu_);
      for (auto& c : conns_) all.push_back(c.get());
    }
    for (Conn* c : all) {
      if (c->alive.exchange(false)) ::shutdown(c->fd, SHUT_RDWR);
    }
    for (Conn* c : all) {
      if (c->reader.joinable()) c->reader.join();
      if (c->fd >= 0) {
        ::close(c->fd);
        c->fd = -1;
      }
    }
  }

  ~Hub() { shutdown_all(); }

 private:
  void read_loop(std::size_t idx, int fd) {
    while (true) {
      auto frame = read_frame(fd);
      if (!frame) break;
      Message msg;
      try {
        msg = decode(*frame);
      } catch (const FedError&) {
        break;  // a client that breaks framing is cut off
      }
      push(Event{idx, false, std::move(msg)});
    }
    Conn* c = conn(idx);
    if (c) c->alive.store(false);
    push(Event{idx, true, Bye{}});
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Event> events_;
  std::vector<std::unique_ptr<Conn>> conns_;
};

class ListenSocket {
 public:
  ListenSocket(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) fail(Err::IoError, "socket: " + std::string(std::strerror(errno)));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = make_addr(host, port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      const std::string why = std::strerror(errno);
      ::close(fd_);
      fail(Err::IoError, "bind " + host + ":" + std::to_string(port) + ": " + why);
    }
    if (::listen(fd_, 64) != 0) {
      const std::string why = std::strerror(errno);
      ::close(fd_);
      fail(Err::IoError, "listen: " + why);
    }
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
  }

  ~ListenSocket() {
    if (fd_ >= 0) ::close(fd_);
  }

  std::optional<int> accept_one(int timeout_ms) {
    pollfd pfd{fd_, POLLIN, 0};
    int r = ::poll(&pfd, 1, timeout_ms);
    if (r <= 0) return std::nullopt;
    int cfd = ::accept(fd_, nullptr, nullptr);
    if (cfd < 0) return std::nullopt;
    int one = 1;
    ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return cfd;
  }

  std::uint16_t port() const { return port_; }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

class Registry {
 public:
  explicit Registry(std::size_t m) : by_client_(m, kNone) {}

  bool joined(std::size_t client_id) const { return by_client_[client_id] != kNone; }
  std::size_t conn_of(std::size_t client_id) const { return by_client_[client_id]; }
  void bind(std::size_t client_id, std::size_t conn) { by_client_[client_id] = conn; }
  std::size_t count() const {
    std::size_t n = 0;
    for (std::size_t c : by_client_) n += c != kNone;
    return n;
  }

  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

 private:
  std::vector<std::size_t> by_client_;
};

class Server {
 public:
  Server(const ServeOptions& opts, const fed::FederationConfig& cfg, const data::PipelineParams& pipeline)
      : opts_(opts),
        cfg_(cfg),
        layout_(model::make_layout(cfg.model)),
        snapshot_(snapshot_config(cfg, pipeline)),
        registry_(cfg.clients),
        listener_(opts.host, opts.port) {
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~Server() {
    stop_.store(true);
    if (accept_thread_.joinable()) accept_thread_.join();
    hub_.shutdown_all();
  }

  std::uint16_t port() const { return listener_.port(); }

  void log(const std::string& line) {
    if (!opts_.quiet) std::cerr << "[server] " << line << "\n";
  }

  void await_joins() {
    const auto deadline = after_seconds(opts_.join_timeout_s);
    while (registry_.count() < cfg_.clients) {
      auto ev = hub_.wait_event(deadline);
      if (!ev) {
        fail(Err::ConnectionLost, "only " + std::to_string(registry_.count()) + " of " +
                                      std::to_string(cfg_.clients) + " clients joined before the timeout");
      }
      handle_control(*ev);
    }
    log("all " + std::to_string(cfg_.clients) + " clients joined");
  }

  /// One round's exchange: Assign out to the selected clients, then Updates
  /// back in until everyone answered or the round deadline passes. Clients
  /// that miss the deadline or die are simply absent from the result.
  std::vector<fed::ReceivedUpdate> exchange(const fed::RoundRequest& request) {
    const auto round = static_cast<std::uint32_t>(request.round);
    Assign assign;
    assign.round = round;
    assign.config = snapshot_;
    assign.participants.reserve(request.selected.size());
    for (std::size_t id : request.selected) assign.participants.push_back(static_cast<std::uint32_t>(id));
    assign.global.assign(request.global.values.begin(), request.global.values.end());

    std::set<std::size_t> pending;
    for (std::size_t id : request.selected) {
      const std::size_t conn = registry_.conn_of(id);
      if (conn != Registry::kNone && hub_.send_to(conn, assign)) {
        pending.insert(id);
      } else {
        log("client " + std::to_string(id) + " unreachable at round " + std::to_string(round));
      }
    }

    std::map<std::size_t, fed::ReceivedUpdate> received;
    const auto deadline = after_seconds(opts_.round_timeout_s);
    while (!pending.empty()) {
      auto ev = hub_.wait_event(deadline);
      if (!ev) break;
      if (const Update* up = std::get_if<Update>(&ev->msg); up && !ev->closed) {
        handle_update(*ev, *up, round, pending, received);
      } else {
        const std::int64_t before = client_of(ev->conn);
        handle_control(*ev);
        if (ev->closed && before >= 0) pending.erase(static_cast<std::size_t>(before));
      }
    }

    for (std::size_t id : pending) log("client " + std::to_string(id) + " missed round " + std::to_string(round));
    if (cfg_.privacy.secure_agg && received.size() != request.selected.size()) {
      fail(Err::ClientFailure, "secure aggregation cannot tolerate a dropped client (round " +
                                   std::to_string(round) + ")");
    }

    std::vector<fed::ReceivedUpdate> out;
    out.reserve(received.size());
    for (auto& [id, up] : received) out.push_back(std::move(up));
    return out;
  }

  void broadcast_bye() {
    for (std::size_t id = 0; id < cfg_.clients; ++id) {
      const std::size_t conn = registry_.conn_of(id);
      if (conn != Registry::kNone) hub_.send_to(conn, Bye{});
    }
  }

 private:
  void accept_loop() {
    while (!stop_.load()) {
      auto fd = listener_.accept_one(100);
      if (fd) hub_.add_conn(*fd);
    }
  }

  std::int64_t client_of(std::size_t conn_idx) {
    Conn* c = hub_.conn(conn_idx);
    return c ? c->client_id : -1;
  }

  /// Joins, rejoins, disconnects and chatter that is not this round's Update.
  void handle_control(const Event& ev) {
    if (ev.closed) {
      Conn* c = hub_.conn(ev.conn);
      if (c && c->client_id >= 0) log("client " + std::to_string(c->client_id) + " disconnected");
      return;
    }
    if (const Join* join = std::get_if<Join>(&ev.msg)) {
      handle_join(ev.conn, *join);
    } else if (const Update* up = std::get_if<Update>(&ev.msg)) {
      // An update arriving outside a collection window is necessarily stale.
      hub_.send_to(ev.conn, Ack{up->round, false, "stale"});
    }
  }

  void handle_join(std::size_t conn_idx, const Join& join) {
    const std::size_t id = join.client_id;
    auto reject = [&](const std::string& reason) {
      log("rejecting join from client " + std::to_string(id) + ": " + reason);
      hub_.send_to(conn_idx, Ack{0, false, reason});
      hub_.drop(conn_idx);
    };
    if (id >= cfg_.clients) {
      reject("unknown client id");
      return;
    }
    if (join.layout_hash != layout_->hash()) {
      reject("layout mismatch");
      return;
    }
    if (registry_.joined(id)) {
      Conn* old = hub_.conn(registry_.conn_of(id));
      if (old && old->alive.load()) {
        reject("id already joined");
        return;
      }
    }
    Conn* c = hub_.conn(conn_idx);
    if (c) c->client_id = static_cast<std::int64_t>(id);
    registry_.bind(id, conn_idx);
    hub_.send_to(conn_idx, Ack{0, true, "joined"});
  }

  void handle_update(const Event& ev, const Update& up, std::uint32_t round, std::set<std::size_t>& pending,
                     std::map<std::size_t, fed::ReceivedUpdate>& received) {
    const std::int64_t cid = client_of(ev.conn);
    if (cid < 0) return;  // never joined, nothing to say to it
    const std::size_t id = static_cast<std::size_t>(cid);
    if (up.round != round) {
      hub_.send_to(ev.conn, Ack{up.round, false, "stale"});
      return;
    }
    if (!pending.count(id)) {
      hub_.send_to(ev.conn, Ack{round, false, "unexpected"});
      return;
    }
    try {
      received[id] = to_received(id, up);
    } catch (const FedError& e) {
      log("client " + std::to_string(id) + " sent a bad update: " + e.what());
      hub_.send_to(ev.conn, Ack{round, false, e.what()});
      hub_.drop(ev.conn);
      pending.erase(id);
      return;
    }
    pending.erase(id);
    hub_.send_to(ev.conn, Ack{round, true, ""});
  }

  fed::ReceivedUpdate to_received(std::size_t id, const Update& up) {
    fed::ReceivedUpdate out;
    out.client_id = id;
    out.sample_count = up.sample_count;
    switch (up.encoding) {
      case Encoding::dense: {
        if (up.dense.size() != layout_->dim) fail(Err::BadDimensions, "dense update has the wrong length");
        ParamVector pv{layout_, up.dense};
        if (!pv.all_finite()) fail(Err::NonFiniteInput, "dense update is not finite");
        out.delta = std::move(pv);
        out.payload_bytes = privacy::payload_bytes_dense(layout_->dim);
        break;
      }
      case Encoding::sparse: {
        privacy::SparseUpdate sp;
        sp.dim = layout_->dim;
        sp.indices = up.indices;
        sp.values = up.values;
        out.payload_bytes = privacy::payload_bytes_sparse(sp.indices.size());
        out.delta = privacy::densify(sp, layout_);
        out.sparse = std::move(sp);
        break;
      }
      case Encoding::masked: {
        if (up.words.size() != layout_->dim) fail(Err::BadDimensions, "masked update has the wrong length");
        if (up.word_bytes * 8u != cfg_.privacy.mask_bits)
          fail(Err::BadDimensions, "masked word width disagrees with the configured modulus");
        privacy::MaskedUpdate m;
        m.dim = layout_->dim;
        m.words = up.words;
        out.masked = std::move(m);
        out.payload_bytes = privacy::payload_bytes_masked(layout_->dim, cfg_.privacy.mask_bits);
        break;
      }
    }
    return out;
  }

  const ServeOptions& opts_;
  const fed::FederationConfig& cfg_;
  std::shared_ptr<const Layout> layout_;
  AssignConfig snapshot_;
  Registry registry_;
  ListenSocket listener_;
  Hub hub_;
  std::thread accept_thread_;
  std::atomic<bool> stop_{false};
};

class NetProvider : public fed::UpdateProvider {
 public:
  explicit NetProvider(Server& server) : server_(server) {}
  std::vector<fed::ReceivedUpdate> collect(const fed::RoundRequest& request) override {
    return server_.exchange(request);
  }

 private:
  Server& server_;
};

}  // namespace

fed::FederationResult serve(const ServeOptions& opts, const fed::FederationConfig& cfg,
                            const data::PipelineParams& pipeline,
                            const std::vector<data::ClientDataset>& clients, ExecMode mode) {
  fed::validate(cfg);
  Server server(opts, cfg, pipeline);
  if (!opts.quiet) std::cerr << "[server] listening on " << opts.host << ":" << server.port() << "\n";
  if (opts.on_listening) opts.on_listening(server.port());

  server.await_joins();
  NetProvider provider(server);
  try {
    fed::FederationResult result = fed::run_federation(cfg, clients, provider, mode);
    server.broadcast_bye();
    return result;
  } catch (...) {
    server.broadcast_bye();
    throw;
  }
}

}  // namespace fedcast::net
