#pragma once

// Pre-trained latent diffusion backend. The model itself runs in a Python
// worker process (tools/vgdz_sd_worker.py) reached over a socket pair.
//
// Wire protocol, one exchange per call:
//   request  = JSON line, then an optional little-endian float32 payload
//   response = JSON line {"ok": true, ...} then an optional float32 payload,
//              or {"ok": false, "error": "..."}
// On start-up the worker sends {"ok": true, "descriptor": {...}}.
//
//   encode_image   {"op", "shape": [3, H, W]}  + pixels in [-1, 1], CHW
//                  -> {"shape": [C, h, w]}     + unscaled posterior mean
//   encode_text    {"op", "text"}
//                  -> {"shape": [L, D], "truncated"} + hidden states
//   predict_noise  {"op", "timesteps": [...], "latent_shape", "context_shape"}
//                  + context, then each latent
//                  -> {"count"} + raw network outputs
//   shutdown       {"op"}
//
// Timesteps on the wire are 0-based (t - 1), matching diffusers' indexing of
// alphas_cumprod.

#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vgdz/backend.hpp"
#include "vgdz/error.hpp"

#ifndef VGDZ_DEFAULT_WORKER_SCRIPT
#define VGDZ_DEFAULT_WORKER_SCRIPT "vgdz_sd_worker.py"
#endif

namespace vgdz {

/// Environment variable naming the model cache directory.
inline constexpr const char* kModelCacheEnv = "VGDZ_MODEL_CACHE";

/// Short version tags accepted by --checkpoint. Anything else is passed to
/// the worker unchanged (local directory or hub id).
inline std::string resolve_checkpoint(std::string_view tag) {
  if (tag == "2-1") return "stabilityai/stable-diffusion-2-1-base";
  if (tag == "1-5") return "stable-diffusion-v1-5/stable-diffusion-v1-5";
  if (tag == "1-4") return "CompVis/stable-diffusion-v1-4";
  if (tag == "1-2") return "CompVis/stable-diffusion-v1-2";
  return std::string(tag);
}

inline std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

struct PretrainedOptions {
  std::string checkpoint = "2-1";
  std::string python = env_or("VGDZ_PYTHON", "python3");
  std::string worker_script = env_or("VGDZ_SD_WORKER", VGDZ_DEFAULT_WORKER_SCRIPT);
  std::string cache_dir = env_or(kModelCacheEnv, "");
  bool offline = false;
  std::string device = "auto";
};

/// Child process with stdin/stdout bound to one end of a socket pair.
class WorkerProcess {
 public:
  explicit WorkerProcess(const std::vector<std::string>& argv) {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
      throw Error(Errc::BackendUnavailable, std::string("socketpair: ") + std::strerror(errno));
    }
    pid_ = ::fork();
    if (pid_ < 0) {
      ::close(fds[0]);
      ::close(fds[1]);
      throw Error(Errc::BackendUnavailable, std::string("fork: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
      ::dup2(fds[1], STDIN_FILENO);
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      ::close(fds[1]);
      std::vector<char*> args;
      for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
      args.push_back(nullptr);
      ::execvp(args[0], args.data());
      ::_exit(127);
    }
    ::close(fds[1]);
    fd_ = fds[0];
  }

  WorkerProcess(const WorkerProcess&) = delete;
  WorkerProcess& operator=(const WorkerProcess&) = delete;

  ~WorkerProcess() {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_WR);
      ::close(fd_);
    }
    if (pid_ > 0) {
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
    }
  }

  void write_all(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    while (n > 0) {
      const ssize_t k = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (k < 0 && errno == EINTR) continue;
      if (k <= 0) throw Error(Errc::BackendUnavailable, "worker connection closed while writing");
      p += k;
      n -= static_cast<std::size_t>(k);
    }
  }

  void read_exact(void* data, std::size_t n) {
    char* p = static_cast<char*>(data);
    // Drain bytes that arrived with the last header line first.
    const std::size_t from_buf = std::min(n, buffer_.size());
    std::memcpy(p, buffer_.data(), from_buf);
    buffer_.erase(0, from_buf);
    p += from_buf;
    n -= from_buf;
    while (n > 0) {
      const ssize_t k = ::recv(fd_, p, n, 0);
      if (k < 0 && errno == EINTR) continue;
      if (k <= 0) throw Error(Errc::BackendUnavailable, "worker connection closed while reading");
      p += k;
      n -= static_cast<std::size_t>(k);
    }
  }

  std::string read_line() {
    for (;;) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t k = ::recv(fd_, chunk, sizeof chunk, 0);
      if (k < 0 && errno == EINTR) continue;
      if (k <= 0) throw Error(Errc::BackendUnavailable, "worker exited (no response)");
      buffer_.append(chunk, static_cast<std::size_t>(k));
    }
  }

 private:
  pid_t pid_ = -1;
  int fd_ = -1;
  std::string buffer_;
};

class PretrainedBackend final : public Backend {
 public:
  explicit PretrainedBackend(PretrainedOptions opts) : opts_(std::move(opts)) {
    std::vector<std::string> argv{opts_.python, opts_.worker_script, "--checkpoint", resolve_checkpoint(opts_.checkpoint),
                                  "--device", opts_.device};
    if (!opts_.cache_dir.empty()) {
      argv.push_back("--cache-dir");
      argv.push_back(opts_.cache_dir);
    }
    if (opts_.offline) argv.push_back("--offline");
    proc_.emplace(argv);
    const auto hello = read_response("start-up");
    if (!hello.contains("descriptor")) throw Error(Errc::BackendUnavailable, "start-up: worker sent no descriptor");
    desc_ = BackendDescriptor::from_json(hello["descriptor"]);
    desc_.kind = BackendKind::Pretrained;
    desc_.checkpoint = opts_.checkpoint;
    schedule_.emplace(desc_.make_schedule());
  }

  ~PretrainedBackend() override {
    try {
      std::lock_guard lock(mu_);
      send({{"op", "shutdown"}}, {});
    } catch (...) {
    }
  }

  const BackendDescriptor& descriptor() const override { return desc_; }

  LatentTensor encode_image(const IsolatedView& view) const override {
    check_canvas(view);
    const int w = view.pixels.width(), h = view.pixels.height();
    std::vector<float> chw(static_cast<std::size_t>(3) * w * h);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          chw[(static_cast<std::size_t>(c) * h + y) * w + x] = static_cast<float>(2.0 * view.pixels.at(x, y, c) - 1.0);

    std::lock_guard lock(mu_);
    send({{"op", "encode_image"}, {"shape", {3, h, w}}}, chw);
    const auto resp = read_response("encode_image");
    const auto d = dims(resp, 3, "encode_image");
    const TensorShape shape{d[0], d[1], d[2]};
    if (shape != desc_.latent_shape) {
      throw Error(Errc::ShapeMismatch, "worker latent " + shape.to_string() + " vs descriptor " + desc_.latent_shape.to_string());
    }
    Tensor z(shape, read_floats(shape.elements()));
    for (auto& v : z.values()) v *= desc_.latent_scale;
    return {std::move(z), view.kind, view.proposal};
  }

  TextEmbedding encode_text(std::string_view expression) const override {
    if (expression.find_first_not_of(" \t\r\n") == std::string_view::npos) {
      throw Error(Errc::EmptyExpression, "cannot encode empty text");
    }
    std::lock_guard lock(mu_);
    send({{"op", "encode_text"}, {"text", std::string(expression)}}, {});
    const auto resp = read_response("encode_text");
    const auto d = dims(resp, 2, "encode_text");
    TextEmbedding e;
    e.context_length = d[0];
    e.embed_dim = d[1];
    e.truncated = resp.value("truncated", false);
    e.text = std::string(expression);
    e.values = read_floats(e.context_length * e.embed_dim);
    return e;
  }

  using Backend::predict_noise;

  std::vector<Tensor> predict_noise(std::span<const NoisedLatent> batch, const TextEmbedding& cond) const override {
    if (batch.empty()) return {};
    std::vector<int> steps;
    std::vector<float> payload(cond.values.begin(), cond.values.end());
    for (const auto& zt : batch) {
      if (zt.data.shape() != desc_.latent_shape) {
        throw Error(Errc::ShapeMismatch, "latent " + zt.data.shape().to_string() + " vs backend " + desc_.latent_shape.to_string());
      }
      schedule_->check_timestep(zt.timestep);
      steps.push_back(zt.timestep - 1);
      payload.insert(payload.end(), zt.data.values().begin(), zt.data.values().end());
    }
    const auto& s = desc_.latent_shape;
    std::vector<double> raw;
    {
      std::lock_guard lock(mu_);
      send({{"op", "predict_noise"},
            {"timesteps", steps},
            {"latent_shape", {s.channels, s.height, s.width}},
            {"context_shape", {cond.context_length, cond.embed_dim}}},
           payload);
      const auto resp = read_response("predict_noise");
      const auto count = resp.find("count");
      if (count == resp.end() || !count->is_number_unsigned() || count->get<std::size_t>() != batch.size()) {
        throw Error(Errc::ShapeMismatch, "worker returned a different batch size");
      }
      raw = read_floats(batch.size() * s.elements());
    }
    std::vector<Tensor> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Tensor pred(s, std::vector<double>(raw.begin() + static_cast<std::ptrdiff_t>(i * s.elements()),
                                         raw.begin() + static_cast<std::ptrdiff_t>((i + 1) * s.elements())));
      out.push_back(desc_.parameterization == Parameterization::V ? v_to_epsilon(pred, batch[i], *schedule_)
                                                                  : std::move(pred));
    }
    return out;
  }

 private:
  static std::vector<std::size_t> dims(const nlohmann::json& resp, std::size_t rank, const char* what) {
    try {
      auto d = resp.at("shape").get<std::vector<std::size_t>>();
      if (d.size() == rank) return d;
    } catch (const nlohmann::json::exception&) {
    }
    throw Error(Errc::BackendUnavailable, std::string(what) + ": malformed shape in worker reply");
  }

  void send(const nlohmann::json& header, const std::vector<float>& payload) const {
    const std::string line = header.dump() + "\n";
    proc_->write_all(line.data(), line.size());
    if (!payload.empty()) proc_->write_all(payload.data(), payload.size() * sizeof(float));
  }

  nlohmann::json read_response(const char* what) const {
    const std::string line = proc_->read_line();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(Errc::BackendUnavailable, std::string(what) + ": unparsable worker reply: " + line.substr(0, 200));
    }
    if (!j.value("ok", false)) {
      throw Error(Errc::BackendUnavailable, std::string(what) + ": " + j.value("error", std::string("worker error")));
    }
    return j;
  }

  std::vector<double> read_floats(std::size_t n) const {
    std::vector<float> f(n);
    proc_->read_exact(f.data(), n * sizeof(float));
    return std::vector<double>(f.begin(), f.end());
  }

  PretrainedOptions opts_;
  mutable std::optional<WorkerProcess> proc_;
  mutable std::mutex mu_;
  BackendDescriptor desc_;
  std::optional<NoiseSchedule> schedule_;
};

}  // namespace vgdz
