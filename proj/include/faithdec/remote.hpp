#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "json.hpp"

#include "faithdec/embedding.hpp"
#include "faithdec/lm_backend.hpp"

namespace faithdec {

/// A newline-delimited JSON request/response stream over TCP.
///
/// Requests are serialized: at most one is in flight per connection.
/// Connection failures raise kBackendUnavailable; malformed or negative
/// replies raise kProtocol (kBackend for the server's backend_error).
class LineConnection {
 public:
  static std::shared_ptr<LineConnection> connect(const std::string& host, std::uint16_t port);
  ~LineConnection();

  LineConnection(const LineConnection&) = delete;
  LineConnection& operator=(const LineConnection&) = delete;

  /// Sends one line (without the trailing newline) and returns the reply line.
  std::string round_trip(std::string_view request);

 private:
  explicit LineConnection(int fd) : fd_(fd) {}
  std::string read_line();

  int fd_;
  std::string buffer_;
  std::mutex mu_;
};

/// Client side of the model-server protocol for next-token distributions.
class RemoteBackend final : public LmBackend {
 public:
  explicit RemoteBackend(std::shared_ptr<LineConnection> conn) : conn_(std::move(conn)) {}
  static RemoteBackend connect(const std::string& host, std::uint16_t port);

  std::unique_ptr<LmSession> open_session(std::string_view context_id) override;

 private:
  std::shared_ptr<LineConnection> conn_;
};

/// Client side of the model-server protocol for embed_text/embed_audio.
/// The dimension is fixed by the first vector the server returns.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit RemoteEmbeddingProvider(std::shared_ptr<LineConnection> conn) : conn_(std::move(conn)) {}
  static std::unique_ptr<RemoteEmbeddingProvider> connect(const std::string& host,
                                                          std::uint16_t port);

  std::size_t dim() const override;
  EmbeddingVector embed_text(std::string_view text) const override;
  EmbeddingVector embed_audio(std::string_view context_id) const override;

 private:
  EmbeddingVector fetch(const nlohmann::ordered_json& request) const;

  std::shared_ptr<LineConnection> conn_;
  mutable std::mutex dim_mu_;
  mutable std::size_t dim_ = 0;
};

}  // namespace faithdec
