#include "faithdec/remote.hpp"

#include <netdb.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <algorithm>
#include <limits>

#include "json.hpp"

#include "faithdec/log.hpp"

namespace faithdec {

using ojson = nlohmann::ordered_json;

std::shared_ptr<LineConnection> LineConnection::connect(const std::string& host,
                                                        std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const auto service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::kBackendUnavailable,
                "cannot resolve " + host + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) {
    throw Error(ErrorCode::kBackendUnavailable,
                "cannot connect to " + host + ":" + service + ": " + std::strerror(errno));
  }
  log::debug("connected to {}:{}", host, port);
  return std::shared_ptr<LineConnection>(new LineConnection(fd));
}

LineConnection::~LineConnection() {
  if (fd_ >= 0) ::close(fd_);
}

std::string LineConnection::round_trip(std::string_view request) {
  std::lock_guard lock(mu_);
  std::string out(request);
  out.push_back('\n');
  std::size_t sent = 0;
  while (sent < out.size()) {
    const auto n = ::send(fd_, out.data() + sent, out.size() - sent, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      throw Error(ErrorCode::kBackendUnavailable, std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
  return read_line();
}

std::string LineConnection::read_line() {
  for (;;) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    char chunk[4096];
    const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n == 0) throw Error(ErrorCode::kBackendUnavailable, "server closed the connection");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kBackendUnavailable, std::string("recv failed: ") + std::strerror(errno));
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

namespace {

ojson call(LineConnection& conn, const ojson& request) {
  const auto line = conn.round_trip(request.dump());
  ojson reply;
  try {
    reply = ojson::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kProtocol, std::string("malformed reply: ") + e.what());
  }
  if (!reply.is_object() || !reply.contains("ok") || !reply["ok"].is_boolean()) {
    throw Error(ErrorCode::kProtocol, "reply lacks boolean 'ok'");
  }
  if (!reply["ok"].get<bool>()) {
    const auto code = reply.value("error", std::string("unknown"));
    const auto message = reply.value("message", std::string());
    throw Error(code == "backend_error" ? ErrorCode::kBackend : ErrorCode::kProtocol,
                "server error " + code + (message.empty() ? "" : ": " + message));
  }
  return reply;
}

template <typename T>
T field(const ojson& reply, const char* name) {
  if (!reply.contains(name)) throw Error(ErrorCode::kProtocol, std::string("reply lacks '") + name + "'");
  try {
    return reply[name].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kProtocol, std::string("reply field '") + name + "' has the wrong type");
  }
}

class RemoteSession final : public LmSession {
 public:
  RemoteSession(std::shared_ptr<LineConnection> conn, std::string context_id,
                std::string session, VocabInfo vocab)
      : conn_(std::move(conn)),
        context_id_(std::move(context_id)),
        session_(std::move(session)),
        vocab_(std::move(vocab)) {}

  ~RemoteSession() override {
    try {
      ojson req;
      req["op"] = "close_session";
      req["session"] = session_;
      call(*conn_, req);
    } catch (const std::exception& e) {
      log::debug("close_session {} failed: {}", session_, e.what());
    }
  }

  const VocabInfo& vocab() const override { return vocab_; }
  const std::string& context_id() const override { return context_id_; }

 protected:
  std::vector<double> compute_logprobs(std::span<const TokenId> prefix) override {
    ojson req;
    req["op"] = "logprobs";
    req["session"] = session_;
    req["prefix"] = std::vector<TokenId>(prefix.begin(), prefix.end());
    const auto reply = call(*conn_, req);
    if (!reply.contains("logprobs") || !reply["logprobs"].is_array()) {
      throw Error(ErrorCode::kProtocol, "reply lacks a 'logprobs' array");
    }
    // JSON has no infinities; zero-probability tokens arrive as null.
    std::vector<double> lp;
    for (const auto& x : reply["logprobs"]) {
      if (x.is_null()) {
        lp.push_back(-std::numeric_limits<double>::infinity());
      } else if (x.is_number()) {
        lp.push_back(x.get<double>());
      } else {
        throw Error(ErrorCode::kProtocol, "logprobs entries must be numbers or null");
      }
    }
    if (lp.size() != vocab_.vocab_size) {
      throw Error(ErrorCode::kProtocol, "logprobs length " + std::to_string(lp.size()) +
                                            " != vocab_size " + std::to_string(vocab_.vocab_size));
    }
    // Accept server rounding up to 1e-4 and renormalize in log space.
    double max_lp = -std::numeric_limits<double>::infinity();
    for (double x : lp) {
      if (std::isnan(x) || x > 0.0) throw Error(ErrorCode::kProtocol, "logprob out of range");
      max_lp = std::max(max_lp, x);
    }
    if (!std::isfinite(max_lp)) throw Error(ErrorCode::kProtocol, "all logprobs are -inf");
    double sum = 0.0;
    for (double x : lp) sum += std::exp(x);
    if (std::abs(sum - 1.0) > 1e-4) {
      throw Error(ErrorCode::kProtocol, "logprobs exp-sum " + std::to_string(sum) + " not within 1e-4 of 1");
    }
    const double shift = std::log(sum);
    for (double& x : lp) x -= shift;
    return lp;
  }

 private:
  std::shared_ptr<LineConnection> conn_;
  std::string context_id_;
  std::string session_;
  VocabInfo vocab_;
};

}  // namespace

RemoteBackend RemoteBackend::connect(const std::string& host, std::uint16_t port) {
  return RemoteBackend(LineConnection::connect(host, port));
}

std::unique_ptr<LmSession> RemoteBackend::open_session(std::string_view context_id) {
  ojson req;
  req["op"] = "open_session";
  req["context_id"] = std::string(context_id);
  const auto reply = call(*conn_, req);

  VocabInfo vocab;
  vocab.vocab_size = field<std::size_t>(reply, "vocab_size");
  vocab.bos_id = field<TokenId>(reply, "bos_id");
  vocab.eos_id = field<TokenId>(reply, "eos_id");
  if (reply.contains("tokens")) {
    vocab.token_strings = field<std::vector<std::string>>(reply, "tokens");
  } else {
    // Without advertised strings, tokens detokenize to their ids.
    for (std::size_t i = 0; i < vocab.vocab_size; ++i) vocab.token_strings.push_back(std::to_string(i));
  }
  try {
    vocab.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kProtocol, std::string("server advertised an invalid vocabulary: ") + e.what());
  }
  return std::make_unique<RemoteSession>(conn_, std::string(context_id),
                                         field<std::string>(reply, "session"), std::move(vocab));
}

std::unique_ptr<RemoteEmbeddingProvider> RemoteEmbeddingProvider::connect(const std::string& host,
                                                                          std::uint16_t port) {
  return std::make_unique<RemoteEmbeddingProvider>(LineConnection::connect(host, port));
}

std::size_t RemoteEmbeddingProvider::dim() const {
  std::lock_guard lock(dim_mu_);
  return dim_;
}

EmbeddingVector RemoteEmbeddingProvider::fetch(const nlohmann::ordered_json& request) const {
  auto values = field<std::vector<double>>(call(*conn_, request), "vector");
  std::lock_guard lock(dim_mu_);
  if (dim_ == 0) dim_ = values.size();
  if (values.size() != dim_) {
    throw Error(ErrorCode::kDimension, "server returned dim " + std::to_string(values.size()) +
                                           ", expected " + std::to_string(dim_));
  }
  return EmbeddingVector(std::move(values));
}

EmbeddingVector RemoteEmbeddingProvider::embed_text(std::string_view text) const {
  ojson req;
  req["op"] = "embed_text";
  req["text"] = std::string(text);
  return fetch(req);
}

EmbeddingVector RemoteEmbeddingProvider::embed_audio(std::string_view context_id) const {
  ojson req;
  req["op"] = "embed_audio";
  req["context_id"] = std::string(context_id);
  return fetch(req);
}

}  // namespace faithdec
