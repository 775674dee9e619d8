#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <iostream>
#include <optional>
#include <thread>

#include "fedcast/net.hpp"

namespace fedcast::net {

namespace {

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

int connect_once(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  std::string h = host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) != 1) return -1;
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return -1;
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    return -1;
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return fd;
}

constexpr double kBackoffCapS = 8.0;

class ClientSession {
 public:
  ClientSession(const ClientRuntime& rt, ExecMode mode)
      : rt_(rt), mode_(mode), layout_(model::make_layout(rt.model)) {}

  ~ClientSession() { close_fd(); }

  int run() {
    if (!connect_and_join()) return 2;
    while (true) {
      auto frame = read_frame(fd_);
      if (!frame) {
        log("connection lost");
        close_fd();
        // A session that never produced a single frame was most likely a
        // rejected join; reconnecting would loop forever.
        if (frames_this_session_ == 0) return 2;
        if (!connect_and_join()) return 2;
        continue;
      }
      ++frames_this_session_;
      Message msg;
      try {
        msg = decode(*frame);
      } catch (const FedError& e) {
        log(std::string("undecodable frame from server: ") + e.what());
        return 2;
      }
      if (std::get_if<Bye>(&msg)) {
        log("server said goodbye");
        return 0;
      }
      if (const Ack* ack = std::get_if<Ack>(&msg)) {
        if (!ack->accepted) {
          log("server refused round " + std::to_string(ack->round) + ": " + ack->reason);
          // Round 0 is never a training round; a rejection there means the
          // join itself was refused and reconnecting cannot fix it.
          if (ack->round == 0) return 2;
        }
        continue;
      }
      if (const Assign* assign = std::get_if<Assign>(&msg)) {
        if (!handle_assign(*assign)) return 2;
        continue;
      }
      // Join or Update from the server end would be nonsense; ignore it.
    }
  }

 private:
  void log(const std::string& line) {
    if (!rt_.quiet) std::cerr << "[client " << rt_.client_id << "] " << line << "\n";
  }

  void close_fd() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  bool connect_and_join() {
    double backoff = rt_.backoff_start_s;
    for (int attempt = 0; attempt <= rt_.max_retries; ++attempt) {
      if (attempt > 0) {
        log("retrying in " + std::to_string(backoff) + "s");
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        backoff = std::min(backoff * 2, kBackoffCapS);
      }
      fd_ = connect_once(rt_.host, rt_.port);
      if (fd_ < 0) continue;
      Join join{static_cast<std::uint32_t>(rt_.client_id), layout_->hash()};
      if (!send_all(fd_, encode(join))) {
        close_fd();
        continue;
      }
      frames_this_session_ = 0;
      log("joined " + rt_.host + ":" + std::to_string(rt_.port));
      return true;
    }
    log("giving up after " + std::to_string(rt_.max_retries + 1) + " connection attempts");
    return false;
  }

  bool handle_assign(const Assign& assign) {
    try {
      if (!dataset_) build_dataset(assign.config);
      if (!(assign.config == snapshot_)) {
        log("server changed its config mid-run");
        return false;
      }
      if (assign.global.size() != layout_->dim) {
        log("global weights have the wrong length");
        return false;
      }
      ParamVector global{layout_, assign.global};

      fed::FederationConfig cfg = config_from_snapshot(assign.config);
      std::vector<std::size_t> participants(assign.participants.begin(), assign.participants.end());
      fed::ReceivedUpdate r =
          fed::train_and_protect(cfg, *dataset_, global, assign.round, participants, mode_);

      Update up;
      up.round = assign.round;
      up.sample_count = static_cast<std::uint32_t>(r.sample_count);
      if (r.masked) {
        up.encoding = Encoding::masked;
        up.words = std::move(r.masked->words);
        up.word_bytes = static_cast<std::uint8_t>(cfg.privacy.mask_bits / 8);
      } else if (r.sparse) {
        up.encoding = Encoding::sparse;
        up.indices = std::move(r.sparse->indices);
        up.values = std::move(r.sparse->values);
      } else {
        up.encoding = Encoding::dense;
        up.dense = std::move(r.delta->values);
      }
      if (!send_all(fd_, encode(up))) {
        // The reader will notice the dead connection on the next frame.
        log("failed to send the round " + std::to_string(assign.round) + " update");
      }
      return true;
    } catch (const FedError& e) {
      log(std::string("round ") + std::to_string(assign.round) + " failed: " + e.what());
      return false;
    }
  }

  void build_dataset(const AssignConfig& snap) {
    model::ModelConfig server_model;
    server_model.arch = snap.arch == 1 ? model::ModelArch::lstm : model::ModelArch::linear;
    server_model.window = snap.window;
    server_model.horizon = snap.horizon;
    server_model.features = snap.features;
    server_model.hidden = snap.hidden;
    if (!(server_model == rt_.model)) fail(Err::LayoutMismatch, "server model shape disagrees");

    const data::PipelineParams pipeline = pipeline_from_snapshot(snap);
    auto assigned = data::assign_households_round_robin(rt_.readings, snap.clients);
    if (rt_.client_id >= assigned.size()) fail(Err::BadConfig, "client id outside the fleet");
    dataset_ = data::build_one_client(rt_.readings, rt_.weather, rt_.client_id, assigned[rt_.client_id],
                                      pipeline);
    snapshot_ = snap;
    log("built dataset: " + std::to_string(dataset_->train.size()) + " train / " +
        std::to_string(dataset_->val.size()) + " val / " + std::to_string(dataset_->test.size()) +
        " test samples");
  }

  const ClientRuntime& rt_;
  ExecMode mode_;
  std::shared_ptr<const Layout> layout_;
  int fd_ = -1;
  std::size_t frames_this_session_ = 0;
  std::optional<data::ClientDataset> dataset_;
  AssignConfig snapshot_;
};

}  // namespace

int run_client(const ClientRuntime& rt, ExecMode mode) {
  ClientSession session(rt, mode);
  return session.run();
}

}  // namespace fedcast::net
