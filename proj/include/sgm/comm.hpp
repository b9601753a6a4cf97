#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "sgm/common.hpp"

namespace sgm {

// Cooperative abort switch shared by workers, channels and the watchdog.
class AbortFlag {
 public:
  void raise(ResourceCapExceeded::Kind kind, std::string why) {
    std::lock_guard<std::mutex> lk(mu_);
    if (!raised_) {
      raised_ = true;
      is_exec_error_ = false;
      kind_ = kind;
      why_ = std::move(why);
    }
  }
  // Infrastructure failure (e.g. a peer closed its channel mid-stage).
  void raise_error(std::string why) {
    std::lock_guard<std::mutex> lk(mu_);
    if (!raised_) {
      raised_ = true;
      is_exec_error_ = true;
      why_ = std::move(why);
    }
  }
  bool raised() const { return raised_.load(std::memory_order_relaxed); }
  void check() const {
    if (raised()) {
      std::lock_guard<std::mutex> lk(mu_);
      if (is_exec_error_) throw ExecError(why_);
      throw ResourceCapExceeded(kind_, why_);
    }
  }

 private:
  std::atomic<bool> raised_{false};
  mutable std::mutex mu_;
  bool is_exec_error_ = false;
  ResourceCapExceeded::Kind kind_ = ResourceCapExceeded::Kind::Time;
  std::string why_;
};

struct Message {
  std::uint32_t src = 0;
  std::vector<std::uint32_t> payload;
};

// Per-worker inbox. Messages are demultiplexed by stage; a stage is complete
// once an end-of-stage marker has arrived from every sender. Per-sender order
// is preserved (single push point per sender, FIFO queues).
class Mailbox {
 public:
  explicit Mailbox(std::uint32_t num_senders, AbortFlag* abort)
      : num_senders_(num_senders), abort_(abort) {}

  void push(std::uint32_t stage, Message m) {
    std::lock_guard<std::mutex> lk(mu_);
    boxes_[stage].queue.push_back(std::move(m));
    cv_.notify_all();
  }

  void push_eos(std::uint32_t stage) {
    std::lock_guard<std::mutex> lk(mu_);
    boxes_[stage].eos++;
    cv_.notify_all();
  }

  // Blocks until a message for `stage` is available; nullopt once the stage
  // is closed by all senders and drained.
  std::optional<Message> pop(std::uint32_t stage) {
    std::unique_lock<std::mutex> lk(mu_);
    for (;;) {
      if (abort_ && abort_->raised()) {
        lk.unlock();
        abort_->check();
      }
      auto& box = boxes_[stage];
      if (!box.queue.empty()) {
        Message m = std::move(box.queue.front());
        box.queue.pop_front();
        return m;
      }
      if (box.eos >= num_senders_) {
        boxes_.erase(stage);
        return std::nullopt;
      }
      if (abort_ && abort_->raised()) {
        lk.unlock();
        abort_->check();
      }
      cv_.wait_for(lk, std::chrono::milliseconds(20));
    }
  }

  void wake() { cv_.notify_all(); }

 private:
  struct StageBox {
    std::deque<Message> queue;
    std::uint32_t eos = 0;
  };
  std::uint32_t num_senders_;
  AbortFlag* abort_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::unordered_map<std::uint32_t, StageBox> boxes_;
};

struct ChannelCounters {
  std::uint64_t sent_integers = 0;
  std::uint64_t recv_integers = 0;
};

// Channel contract shared by the in-process and multi-process backends:
// ordered, reliable, per-sender-FIFO delivery of integer payloads, with an
// explicit per-stage close from every sender to every receiver.
class Comm {
 public:
  virtual ~Comm() = default;
  virtual std::uint32_t num_workers() const = 0;
  // Workers whose mailboxes live in this process.
  virtual const std::vector<std::uint32_t>& local_workers() const = 0;

  virtual void send(std::uint32_t src, std::uint32_t dst, std::uint32_t stage,
                    std::vector<std::uint32_t> payload) = 0;
  // Declares `src` done with `stage` towards every worker.
  virtual void close_stage(std::uint32_t src, std::uint32_t stage) = 0;
  virtual std::optional<Message> recv(std::uint32_t me, std::uint32_t stage) = 0;

  AbortFlag& abort_flag() { return abort_; }

  ChannelCounters counters(std::uint32_t worker) const {
    ChannelCounters c;
    c.sent_integers = sent_[worker].load(std::memory_order_relaxed);
    c.recv_integers = recv_[worker].load(std::memory_order_relaxed);
    return c;
  }
  void reset_counters() {
    for (auto& a : sent_) a.store(0);
    for (auto& a : recv_) a.store(0);
  }

 protected:
  void init_counters(std::uint32_t w) {
    sent_ = std::vector<std::atomic<std::uint64_t>>(w);
    recv_ = std::vector<std::atomic<std::uint64_t>>(w);
  }
  void count_sent(std::uint32_t src, std::uint64_t n) {
    sent_[src].fetch_add(n, std::memory_order_relaxed);
  }
  void count_recv(std::uint32_t dst, std::uint64_t n) {
    recv_[dst].fetch_add(n, std::memory_order_relaxed);
  }

  AbortFlag abort_;
  std::vector<std::atomic<std::uint64_t>> sent_;
  std::vector<std::atomic<std::uint64_t>> recv_;
};

// All workers in one process; channels are in-memory queues.
class ThreadComm : public Comm {
 public:
  explicit ThreadComm(std::uint32_t w) : w_(w) {
    init_counters(w);
    for (std::uint32_t i = 0; i < w; ++i) {
      mailboxes_.push_back(std::make_unique<Mailbox>(w, &abort_));
      locals_.push_back(i);
    }
  }

  std::uint32_t num_workers() const override { return w_; }
  const std::vector<std::uint32_t>& local_workers() const override { return locals_; }

  void send(std::uint32_t src, std::uint32_t dst, std::uint32_t stage,
            std::vector<std::uint32_t> payload) override {
    count_sent(src, payload.size());
    mailboxes_[dst]->push(stage, Message{src, std::move(payload)});
  }

  void close_stage(std::uint32_t src, std::uint32_t stage) override {
    (void)src;
    for (auto& mb : mailboxes_) mb->push_eos(stage);
  }

  std::optional<Message> recv(std::uint32_t me, std::uint32_t stage) override {
    auto m = mailboxes_[me]->pop(stage);
    if (m) count_recv(me, m->payload.size());
    return m;
  }

 private:
  std::uint32_t w_;
  std::vector<std::unique_ptr<Mailbox>> mailboxes_;
  std::vector<std::uint32_t> locals_;
};

// ---------------------------------------------------------------------------
// Multi-process backend: ranks connect pairwise over TCP; each rank hosts a
// contiguous block of workers. Frames: u32 words
//   [kind(0=data,1=eos), src, dst, stage, len, payload...]
// TCP preserves per-connection order, and each (src worker) writes through a
// single connection per destination rank, so per-sender FIFO holds.

class TcpComm : public Comm {
 public:
  // endpoints[r] = "host:port" for rank r's listener. Worker ids are split
  // into near-equal contiguous blocks across ranks.
  TcpComm(std::uint32_t my_rank, std::vector<std::string> endpoints, std::uint32_t total_workers)
      : rank_(my_rank), endpoints_(std::move(endpoints)), w_(total_workers) {
    init_counters(w_);
    const auto r = static_cast<std::uint32_t>(endpoints_.size());
    if (my_rank >= r) throw ConfigError("rank out of range");
    for (std::uint32_t i = 0; i < w_; ++i)
      if (rank_of_worker(i) == rank_) {
        locals_.push_back(i);
        mailbox_of_[i] = mailboxes_.size();
        mailboxes_.push_back(std::make_unique<Mailbox>(w_, &abort_));
      }
    connect_mesh();
  }

  ~TcpComm() override {
    shutting_down_.store(true);
    for (auto& [rank, sock] : socks_)
      if (sock >= 0) ::shutdown(sock, SHUT_RDWR);
    for (auto& t : readers_)
      if (t.joinable()) t.join();
    for (auto& [rank, sock] : socks_)
      if (sock >= 0) ::close(sock);
    if (listen_fd_ >= 0) ::close(listen_fd_);
  }

  std::uint32_t num_workers() const override { return w_; }
  const std::vector<std::uint32_t>& local_workers() const override { return locals_; }

  std::uint32_t rank_of_worker(std::uint32_t worker) const {
    const auto r = static_cast<std::uint32_t>(endpoints_.size());
    const std::uint32_t base = w_ / r, extra = w_ % r;
    // First `extra` ranks hold base+1 workers.
    if (worker < extra * (base + 1)) return worker / (base + 1);
    return extra + (worker - extra * (base + 1)) / std::max<std::uint32_t>(base, 1);
  }

  void send(std::uint32_t src, std::uint32_t dst, std::uint32_t stage,
            std::vector<std::uint32_t> payload) override {
    count_sent(src, payload.size());
    const std::uint32_t dst_rank = rank_of_worker(dst);
    if (dst_rank == rank_) {
      local_mailbox(dst).push(stage, Message{src, std::move(payload)});
      return;
    }
    write_frame(dst_rank, 0, src, dst, stage, payload);
  }

  void close_stage(std::uint32_t src, std::uint32_t stage) override {
    for (std::uint32_t dst = 0; dst < w_; ++dst) {
      const std::uint32_t dst_rank = rank_of_worker(dst);
      if (dst_rank == rank_)
        local_mailbox(dst).push_eos(stage);
      else
        write_frame(dst_rank, 1, src, dst, stage, {});
    }
  }

  std::optional<Message> recv(std::uint32_t me, std::uint32_t stage) override {
    auto m = local_mailbox(me).pop(stage);
    if (m) count_recv(me, m->payload.size());
    return m;
  }

 private:
  Mailbox& local_mailbox(std::uint32_t worker) {
    auto it = mailbox_of_.find(worker);
    if (it == mailbox_of_.end()) throw ExecError("worker not local to this rank");
    return *mailboxes_[it->second];
  }

  static void split_endpoint(const std::string& ep, std::string& host, std::uint16_t& port) {
    auto pos = ep.rfind(':');
    if (pos == std::string::npos) throw ConfigError("endpoint must be host:port: " + ep);
    host = ep.substr(0, pos);
    port = static_cast<std::uint16_t>(std::stoi(ep.substr(pos + 1)));
  }

  void connect_mesh() {
    const auto r = static_cast<std::uint32_t>(endpoints_.size());
    if (r == 1) return;
    std::string host;
    std::uint16_t port;
    split_endpoint(endpoints_[rank_], host, port);

    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw ExecError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = INADDR_ANY;
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw ExecError("bind failed on port " + std::to_string(port));
    if (::listen(listen_fd_, 64) != 0) throw ExecError("listen failed");

    // Lower ranks accept connections from higher ranks; higher ranks dial.
    for (std::uint32_t peer = 0; peer < rank_; ++peer) socks_[peer] = dial(peer);
    for (std::uint32_t peer = rank_ + 1; peer < r; ++peer) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) throw ExecError("accept failed");
      std::uint32_t hello = 0;
      if (!read_exact(fd, &hello, sizeof(hello))) throw ExecError("handshake failed");
      socks_[hello] = fd;
    }
    for (auto& [peer, fd] : socks_) {
      int flag = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &flag, sizeof(flag));
      write_mu_[peer];  // materialize before worker threads exist
      readers_.emplace_back([this, fd] { reader_loop(fd); });
    }
  }

  int dial(std::uint32_t peer) {
    std::string host;
    std::uint16_t port;
    split_endpoint(endpoints_[peer], host, port);
    addrinfo hints{}, *res = nullptr;
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    const std::string port_s = std::to_string(port);
    for (int attempt = 0; attempt < 600; ++attempt) {
      if (getaddrinfo(host.c_str(), port_s.c_str(), &hints, &res) == 0) {
        int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
        if (fd >= 0 && ::connect(fd, res->ai_addr, res->ai_addrlen) == 0) {
          freeaddrinfo(res);
          std::uint32_t hello = rank_;
          write_exact(fd, &hello, sizeof(hello));
          return fd;
        }
        if (fd >= 0) ::close(fd);
        freeaddrinfo(res);
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    throw ExecError("cannot connect to rank " + std::to_string(peer) + " at " + endpoints_[peer]);
  }

  static bool read_exact(int fd, void* buf, std::size_t n) {
    auto* p = static_cast<char*>(buf);
    while (n > 0) {
      ssize_t k = ::recv(fd, p, n, 0);
      if (k <= 0) return false;
      p += k;
      n -= static_cast<std::size_t>(k);
    }
    return true;
  }

  static void write_exact(int fd, const void* buf, std::size_t n) {
    auto* p = static_cast<const char*>(buf);
    while (n > 0) {
      ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
      if (k <= 0) throw ExecError("socket write failed");
      p += k;
      n -= static_cast<std::size_t>(k);
    }
  }

  void write_frame(std::uint32_t dst_rank, std::uint32_t kind, std::uint32_t src,
                   std::uint32_t dst, std::uint32_t stage,
                   const std::vector<std::uint32_t>& payload) {
    auto it = socks_.find(dst_rank);
    if (it == socks_.end()) throw ExecError("no connection to rank " + std::to_string(dst_rank));
    std::vector<std::uint32_t> frame;
    frame.reserve(5 + payload.size());
    frame.push_back(kind);
    frame.push_back(src);
    frame.push_back(dst);
    frame.push_back(stage);
    frame.push_back(static_cast<std::uint32_t>(payload.size()));
    frame.insert(frame.end(), payload.begin(), payload.end());
    std::lock_guard<std::mutex> lk(write_mu_.at(dst_rank));
    write_exact(it->second, frame.data(), frame.size() * sizeof(std::uint32_t));
  }

  void reader_loop(int fd) {
    for (;;) {
      std::uint32_t header[5];
      if (!read_exact(fd, header, sizeof(header))) {
        if (!shutting_down_.load()) abort_.raise_error("channel closed early by a peer");
        return;
      }
      std::vector<std::uint32_t> payload(header[4]);
      if (header[4] && !read_exact(fd, payload.data(), payload.size() * sizeof(std::uint32_t)))
        return;
      auto it = mailbox_of_.find(header[2]);
      if (it == mailbox_of_.end()) continue;  // misrouted; drop
      if (header[0] == 1)
        mailboxes_[it->second]->push_eos(header[3]);
      else
        mailboxes_[it->second]->push(header[3], Message{header[1], std::move(payload)});
    }
  }

  std::uint32_t rank_;
  std::vector<std::string> endpoints_;
  std::uint32_t w_;
  std::vector<std::uint32_t> locals_;
  std::vector<std::unique_ptr<Mailbox>> mailboxes_;
  std::unordered_map<std::uint32_t, std::size_t> mailbox_of_;
  int listen_fd_ = -1;
  std::atomic<bool> shutting_down_{false};
  std::map<std::uint32_t, int> socks_;
  std::map<std::uint32_t, std::mutex> write_mu_;
  std::vector<std::thread> readers_;
};

// Batches many small records into one message per (destination, stage).
// Records must be self-delimiting for the receiver.
class BufferedSender {
 public:
  BufferedSender(Comm& comm, std::uint32_t src, std::uint32_t stage,
                 std::size_t flush_ints = 16384)
      : comm_(comm), src_(src), stage_(stage), flush_ints_(flush_ints),
        buffers_(comm.num_workers()) {}

  ~BufferedSender() { flush_all(); }

  void append(std::uint32_t dst, std::initializer_list<std::uint32_t> head,
              const std::uint32_t* body = nullptr, std::size_t body_len = 0) {
    auto& buf = buffers_[dst];
    buf.insert(buf.end(), head.begin(), head.end());
    if (body) buf.insert(buf.end(), body, body + body_len);
    if (buf.size() >= flush_ints_) flush(dst);
  }

  void append_record(std::uint32_t dst, const std::vector<std::uint32_t>& record) {
    auto& buf = buffers_[dst];
    buf.insert(buf.end(), record.begin(), record.end());
    if (buf.size() >= flush_ints_) flush(dst);
  }

  void flush(std::uint32_t dst) {
    if (buffers_[dst].empty()) return;
    comm_.send(src_, dst, stage_, std::move(buffers_[dst]));
    buffers_[dst].clear();
  }

  void flush_all() {
    for (std::uint32_t d = 0; d < buffers_.size(); ++d) flush(d);
  }

 private:
  Comm& comm_;
  std::uint32_t src_, stage_;
  std::size_t flush_ints_;
  std::vector<std::vector<std::uint32_t>> buffers_;
};

}  // namespace sgm
