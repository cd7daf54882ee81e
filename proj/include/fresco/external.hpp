#pragma once

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fresco/denoiser.hpp"
#include "fresco/error.hpp"
#include "fresco/protocol.hpp"

namespace fresco {

inline constexpr std::chrono::milliseconds kDefaultWorkerTimeout{300'000};

// A child process started through /bin/sh -c, speaking FDP1 on stdin/stdout.
// The session is handshaken on start and shut down on destruction.
class WorkerProcess {
 public:
  WorkerProcess(std::string command, std::chrono::milliseconds timeout)
      : command_(std::move(command)), timeout_(timeout) {
    ignore_sigpipe();
    start();
  }

  WorkerProcess(const WorkerProcess&) = delete;
  WorkerProcess& operator=(const WorkerProcess&) = delete;

  ~WorkerProcess() { stop(); }

  bool alive() const noexcept { return pid_ > 0; }

  // One request/response exchange. Any transport failure leaves the process
  // stopped; the next call restarts it.
  fdp::Frame exchange(fdp::MessageType type, std::span<const std::uint8_t> payload, long item) {
    if (!alive()) start();
    try {
      fdp::write_frame(to_child_, type, payload, item);
      return fdp::read_frame(from_child_, timeout_, item);
    } catch (const ProtocolError&) {
      stop();
      throw;
    }
  }

 private:
  static void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
  }

  void start() {
    int in_pipe[2];
    int out_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw IoError("pipe() failed");
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw IoError("pipe() failed");
    }
    const pid_t pid = ::fork();
    if (pid < 0) {
      for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
      throw IoError("fork() failed");
    }
    if (pid == 0) {
      // Own process group, so the shell and whatever it spawns die together.
      ::setpgid(0, 0);
      ::dup2(in_pipe[0], STDIN_FILENO);
      ::dup2(out_pipe[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::setpgid(pid, pid);
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];

    try {
      const auto hello = fdp::encode_hello();
      fdp::write_frame(to_child_, fdp::MessageType::hello, hello);
      const fdp::Frame reply = fdp::read_frame(from_child_, timeout_);
      if (reply.type != fdp::MessageType::hello) {
        throw MalformedFrameError("worker did not answer the handshake with hello", -1);
      }
      const std::uint32_t v = fdp::decode_hello(reply.payload);
      if (v != fdp::kProtocolVersion) {
        throw MalformedFrameError("worker speaks protocol version " + std::to_string(v), -1);
      }
    } catch (...) {
      stop();
      throw;
    }
  }

  void stop() noexcept {
    if (pid_ <= 0) return;
    try {
      fdp::write_frame(to_child_, fdp::MessageType::shutdown, {});
    } catch (...) {
    }
    ::close(to_child_);
    ::close(from_child_);
    // Give the worker a moment to exit on its own before killing it.
    int status = 0;
    for (int k = 0; k < 50; ++k) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        ::kill(-pid_, SIGKILL);
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(-pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }

  std::string command_;
  std::chrono::milliseconds timeout_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
};

// Fixed set of worker processes, each serving one request at a time.
class WorkerPool {
 public:
  WorkerPool(const std::string& command, std::size_t size, std::chrono::milliseconds timeout) {
    if (command.empty()) throw ConfigError("external worker command is empty");
    if (size == 0) size = 1;
    for (std::size_t k = 0; k < size; ++k) {
      workers_.push_back(std::make_unique<WorkerProcess>(command, timeout));
      idle_.push_back(workers_.back().get());
    }
  }

  fdp::Frame exchange(fdp::MessageType type, std::span<const std::uint8_t> payload, long item) {
    WorkerProcess* w = acquire();
    try {
      fdp::Frame f = w->exchange(type, payload, item);
      release(w);
      return f;
    } catch (...) {
      release(w);
      throw;
    }
  }

  std::size_t size() const noexcept { return workers_.size(); }

 private:
  WorkerProcess* acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !idle_.empty(); });
    WorkerProcess* w = idle_.back();
    idle_.pop_back();
    return w;
  }

  void release(WorkerProcess* w) {
    {
      std::lock_guard lock(mutex_);
      idle_.push_back(w);
    }
    cv_.notify_one();
  }

  std::vector<std::unique_ptr<WorkerProcess>> workers_;
  std::vector<WorkerProcess*> idle_;
  std::mutex mutex_;
  std::condition_variable cv_;
};

namespace detail {

// Re-raises an item-less protocol error with the item index attached.
template <typename Fn>
auto with_item(long item, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ProtocolError& e) {
    if (e.item() >= 0 || item < 0) throw;
    if (dynamic_cast<const MalformedFrameError*>(&e)) throw MalformedFrameError(e.what(), item);
    throw;
  }
}

}  // namespace detail

// Denoiser backed by external worker processes.
class ExternalDenoiser final : public Denoiser {
 public:
  ExternalDenoiser(const std::string& command, std::size_t workers = 1,
                   std::chrono::milliseconds timeout = kDefaultWorkerTimeout)
      : pool_(command, workers, timeout) {}

  DenoiserResponse predict(const DenoiserRequest& req) override {
    const long item = req.tile_index;
    const auto payload = fdp::encode_denoise_request(req);
    const fdp::Frame reply = pool_.exchange(fdp::MessageType::denoise_request, payload, item);
    if (reply.type == fdp::MessageType::error) {
      throw RemoteError("worker error: " + std::string(reply.payload.begin(), reply.payload.end()),
                        item);
    }
    if (reply.type != fdp::MessageType::denoise_response) {
      throw MalformedFrameError("unexpected message type in reply to denoise request", item);
    }
    DenoiserResponse res =
        detail::with_item(item, [&] { return fdp::decode_denoise_response(reply.payload); });
    if (!(res.prediction.shape() == req.tile.shape())) {
      throw ResponseShapeError("worker returned " + res.prediction.shape().str() + " for tile " +
                                   req.tile.shape().str(),
                               item);
    }
    if (!res.prediction.all_finite()) {
      throw ResponseShapeError("worker returned non-finite values", item);
    }
    return res;
  }

 private:
  WorkerPool pool_;
};

}  // namespace fresco
