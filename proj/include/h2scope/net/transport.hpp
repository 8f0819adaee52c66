#pragma once

#include <openssl/ssl.h>

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "h2scope/net/socket.hpp"

namespace h2scope::net {

enum class IoStatus { Ok, WantRead, WantWrite, Eof };

struct IoResult {
  std::size_t n = 0;
  IoStatus status = IoStatus::Ok;
};

// Byte stream over a non-blocking socket. read_some/write_some never block;
// the free functions below add deadline-bounded blocking behavior.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual IoResult read_some(std::span<char> buf) = 0;
  virtual IoResult write_some(std::string_view data) = 0;
  virtual int fd() const = 0;
  virtual void close() = 0;
  // Bytes already decrypted and buffered inside the transport.
  virtual bool has_buffered() const { return false; }
};

// Returns 0 at end of stream. Throws NetError(Timeout) past |deadline|.
std::size_t read_some(Transport& t, std::span<char> buf, Deadline deadline);
void write_all(Transport& t, std::string_view data, Deadline deadline);

class PlainTransport final : public Transport {
 public:
  explicit PlainTransport(Fd fd);
  IoResult read_some(std::span<char> buf) override;
  IoResult write_some(std::string_view data) override;
  int fd() const override { return fd_.get(); }
  void close() override { fd_.reset(); }

 private:
  Fd fd_;
};

struct CertificateInfo {
  std::string organization;
  std::string common_name;
};

struct TlsServerOptions {
  // Server-preference ALPN list; empty means the server ignores ALPN.
  std::vector<std::string> alpn;
  // On no overlap, send a fatal no_application_protocol alert instead of
  // silently omitting the extension.
  bool alpn_fatal_on_mismatch = true;
  // NPN advertisement (TLS <= 1.2 only); empty disables NPN.
  std::vector<std::string> npn;
  std::string common_name = "fixture.test";
  std::string organization = "Fixture Org";
  // Extra certificates appended to the chain so handshakes carry a
  // realistic certificate payload.
  int extra_chain_certs = 0;
  // 0 keeps the library default (TLS 1.3 allowed).
  int max_version = 0;
};

class TlsContext {
 public:
  // Client contexts never verify peers and never resume sessions.
  static std::shared_ptr<TlsContext> client(int max_version = 0, bool npn = false);
  static std::shared_ptr<TlsContext> server(const TlsServerOptions& opts);

  ~TlsContext();
  TlsContext(const TlsContext&) = delete;
  TlsContext& operator=(const TlsContext&) = delete;

  SSL_CTX* get() const noexcept { return ctx_; }
  const TlsServerOptions& server_options() const noexcept { return server_opts_; }

 private:
  TlsContext() = default;
  SSL_CTX* ctx_ = nullptr;
  TlsServerOptions server_opts_;
  std::string npn_wire_;
};

struct TlsClientParams {
  std::string sni;
  std::vector<std::string> alpn;  // empty: no ALPN extension
  std::vector<std::string> npn;   // non-empty enables NPN (forces TLS <= 1.2)
};

class TlsTransport final : public Transport {
 public:
  static std::unique_ptr<TlsTransport> connect(Fd fd, std::shared_ptr<TlsContext> ctx, const TlsClientParams& params,
                                               Deadline deadline);
  static std::unique_ptr<TlsTransport> accept(Fd fd, std::shared_ptr<TlsContext> ctx, Deadline deadline);

  ~TlsTransport() override;

  IoResult read_some(std::span<char> buf) override;
  IoResult write_some(std::string_view data) override;
  int fd() const override { return fd_.get(); }
  void close() override;
  bool has_buffered() const override;

  const std::string& alpn_selected() const noexcept { return alpn_selected_; }
  const std::vector<std::string>& npn_advertised() const noexcept { return npn_advertised_; }
  const std::string& npn_selected() const noexcept { return npn_selected_; }
  const std::string& server_name() const noexcept { return server_name_; }
  std::optional<CertificateInfo> peer_certificate() const;

 private:
  friend class TlsContext;
  TlsTransport(Fd fd, std::shared_ptr<TlsContext> ctx);
  void handshake(bool is_client, Deadline deadline);
  static int npn_select_cb(SSL* ssl, unsigned char** out, unsigned char* outlen, const unsigned char* in,
                           unsigned int inlen, void* arg);

  Fd fd_;
  std::shared_ptr<TlsContext> ctx_;
  SSL* ssl_ = nullptr;
  std::string alpn_selected_;
  std::string npn_offer_wire_;
  std::vector<std::string> npn_advertised_;
  std::string npn_selected_;
  std::string server_name_;
};

// Length-prefixed protocol list as carried in ALPN/NPN extensions.
std::string encode_protocol_list(const std::vector<std::string>& protocols);
std::vector<std::string> decode_protocol_list(std::string_view wire);

void ignore_sigpipe();

}  // namespace h2scope::net
