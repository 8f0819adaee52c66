#include "h2scope/net/transport.hpp"

#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/x509.h>
#include <sys/socket.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <mutex>

#include "h2scope/common/error.hpp"

namespace h2scope::net {

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

std::size_t read_some(Transport& t, std::span<char> buf, Deadline deadline) {
  for (;;) {
    IoResult r = t.read_some(buf);
    switch (r.status) {
      case IoStatus::Ok: return r.n;
      case IoStatus::Eof: return 0;
      case IoStatus::WantRead:
        if (!wait_fd(t.fd(), false, deadline)) throw NetError(NetErrc::Timeout, "read timed out");
        break;
      case IoStatus::WantWrite:
        if (!wait_fd(t.fd(), true, deadline)) throw NetError(NetErrc::Timeout, "read timed out");
        break;
    }
  }
}

void write_all(Transport& t, std::string_view data, Deadline deadline) {
  while (!data.empty()) {
    IoResult r = t.write_some(data);
    switch (r.status) {
      case IoStatus::Ok: data.remove_prefix(r.n); break;
      case IoStatus::Eof: throw NetError(NetErrc::Closed, "peer closed during write");
      case IoStatus::WantRead:
        if (!wait_fd(t.fd(), false, deadline)) throw NetError(NetErrc::Timeout, "write timed out");
        break;
      case IoStatus::WantWrite:
        if (!wait_fd(t.fd(), true, deadline)) throw NetError(NetErrc::Timeout, "write timed out");
        break;
    }
  }
}

PlainTransport::PlainTransport(Fd fd) : fd_(std::move(fd)) { set_nonblocking(fd_.get(), true); }

IoResult PlainTransport::read_some(std::span<char> buf) {
  for (;;) {
    ssize_t n = ::recv(fd_.get(), buf.data(), buf.size(), 0);
    if (n > 0) return {static_cast<std::size_t>(n), IoStatus::Ok};
    if (n == 0) return {0, IoStatus::Eof};
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) return {0, IoStatus::WantRead};
    if (errno == ECONNRESET) return {0, IoStatus::Eof};
    throw NetError(NetErrc::Reset, std::strerror(errno));
  }
}

IoResult PlainTransport::write_some(std::string_view data) {
  for (;;) {
    ssize_t n = ::send(fd_.get(), data.data(), data.size(), MSG_NOSIGNAL);
    if (n >= 0) return {static_cast<std::size_t>(n), IoStatus::Ok};
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) return {0, IoStatus::WantWrite};
    if (errno == EPIPE || errno == ECONNRESET) return {0, IoStatus::Eof};
    throw NetError(NetErrc::Reset, std::strerror(errno));
  }
}

std::string encode_protocol_list(const std::vector<std::string>& protocols) {
  std::string wire;
  for (const auto& p : protocols) {
    if (p.empty() || p.size() > 255) throw Error(ErrorCode::InvalidArgument, "protocol token length out of range");
    wire.push_back(static_cast<char>(p.size()));
    wire += p;
  }
  return wire;
}

std::vector<std::string> decode_protocol_list(std::string_view wire) {
  std::vector<std::string> out;
  while (!wire.empty()) {
    auto len = static_cast<unsigned char>(wire.front());
    wire.remove_prefix(1);
    if (len == 0 || len > wire.size()) break;
    out.emplace_back(wire.substr(0, len));
    wire.remove_prefix(len);
  }
  return out;
}

namespace {

struct PkeyDeleter {
  void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
struct X509Deleter {
  void operator()(X509* p) const { X509_free(p); }
};
using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using X509Ptr = std::unique_ptr<X509, X509Deleter>;

std::string ssl_error_string() {
  std::string out;
  while (unsigned long e = ERR_get_error()) {
    char buf[256];
    ERR_error_string_n(e, buf, sizeof(buf));
    if (!out.empty()) out += "; ";
    out += buf;
  }
  return out.empty() ? "unknown TLS error" : out;
}

X509Ptr make_certificate(EVP_PKEY* key, const std::string& cn, const std::string& org, long serial) {
  X509Ptr cert(X509_new());
  X509_set_version(cert.get(), 2);
  ASN1_INTEGER_set(X509_get_serialNumber(cert.get()), serial);
  X509_gmtime_adj(X509_getm_notBefore(cert.get()), -3600);
  X509_gmtime_adj(X509_getm_notAfter(cert.get()), 3600L * 24 * 365);
  X509_set_pubkey(cert.get(), key);
  X509_NAME* name = X509_get_subject_name(cert.get());
  X509_NAME_add_entry_by_txt(name, "O", MBSTRING_ASC, reinterpret_cast<const unsigned char*>(org.c_str()), -1, -1, 0);
  X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC, reinterpret_cast<const unsigned char*>(cn.c_str()), -1, -1, 0);
  X509_set_issuer_name(cert.get(), name);
  if (X509_sign(cert.get(), key, EVP_sha256()) == 0) throw Error(ErrorCode::IoError, "X509_sign: " + ssl_error_string());
  return cert;
}

// Key generation dominates fixture start-up, so keys are made once per process.
EVP_PKEY* shared_leaf_key() {
  static PkeyPtr key = [] {
    PkeyPtr k(EVP_EC_gen("P-256"));
    if (!k) throw Error(ErrorCode::IoError, "EC keygen failed");
    return k;
  }();
  return key.get();
}

EVP_PKEY* shared_padding_key() {
  static PkeyPtr key = [] {
    PkeyPtr k(EVP_RSA_gen(2048));
    if (!k) throw Error(ErrorCode::IoError, "RSA keygen failed");
    return k;
  }();
  return key.get();
}

std::mutex& keygen_mutex() {
  static std::mutex mu;
  return mu;
}

int alpn_select_cb(SSL*, const unsigned char** out, unsigned char* outlen, const unsigned char* in,
                   unsigned int inlen, void* arg) {
  const auto* ctx = static_cast<const TlsContext*>(arg);
  const auto& opts = ctx->server_options();
  auto offered = decode_protocol_list(std::string_view(reinterpret_cast<const char*>(in), inlen));
  // Server preference: first announced token the client also offered.
  for (const auto& mine : opts.alpn) {
    for (std::size_t i = 0, pos = 0; i < offered.size(); ++i) {
      if (offered[i] == mine) {
        *out = in + pos + 1;
        *outlen = static_cast<unsigned char>(mine.size());
        return SSL_TLSEXT_ERR_OK;
      }
      pos += offered[i].size() + 1;
    }
  }
  return opts.alpn_fatal_on_mismatch ? SSL_TLSEXT_ERR_ALERT_FATAL : SSL_TLSEXT_ERR_NOACK;
}

int npn_advertise_cb(SSL*, const unsigned char** out, unsigned int* outlen, void* arg) {
  const auto* wire = static_cast<const std::string*>(arg);
  *out = reinterpret_cast<const unsigned char*>(wire->data());
  *outlen = static_cast<unsigned int>(wire->size());
  return SSL_TLSEXT_ERR_OK;
}

}  // namespace

TlsContext::~TlsContext() {
  if (ctx_) SSL_CTX_free(ctx_);
}

std::shared_ptr<TlsContext> TlsContext::client(int max_version, bool npn) {
  ignore_sigpipe();
  std::shared_ptr<TlsContext> c(new TlsContext());
  c->ctx_ = SSL_CTX_new(TLS_client_method());
  if (!c->ctx_) throw Error(ErrorCode::IoError, "SSL_CTX_new: " + ssl_error_string());
  SSL_CTX_set_verify(c->ctx_, SSL_VERIFY_NONE, nullptr);
  SSL_CTX_set_session_cache_mode(c->ctx_, SSL_SESS_CACHE_OFF);
  SSL_CTX_set_options(c->ctx_, SSL_OP_NO_TICKET | SSL_OP_IGNORE_UNEXPECTED_EOF);
  SSL_CTX_set_mode(c->ctx_, SSL_MODE_ENABLE_PARTIAL_WRITE | SSL_MODE_ACCEPT_MOVING_WRITE_BUFFER);
  // Probing must reach servers with dated configurations.
  SSL_CTX_set_security_level(c->ctx_, 0);
  if (npn) {
    SSL_CTX_set_max_proto_version(c->ctx_, TLS1_2_VERSION);
    SSL_CTX_set_next_proto_select_cb(c->ctx_, &TlsTransport::npn_select_cb, nullptr);
  } else if (max_version != 0) {
    SSL_CTX_set_max_proto_version(c->ctx_, max_version);
  }
  return c;
}

std::shared_ptr<TlsContext> TlsContext::server(const TlsServerOptions& opts) {
  ignore_sigpipe();
  std::shared_ptr<TlsContext> c(new TlsContext());
  c->server_opts_ = opts;
  c->ctx_ = SSL_CTX_new(TLS_server_method());
  if (!c->ctx_) throw Error(ErrorCode::IoError, "SSL_CTX_new: " + ssl_error_string());
  SSL_CTX_set_options(c->ctx_, SSL_OP_NO_TICKET | SSL_OP_IGNORE_UNEXPECTED_EOF);
  SSL_CTX_set_session_cache_mode(c->ctx_, SSL_SESS_CACHE_OFF);
  SSL_CTX_set_mode(c->ctx_, SSL_MODE_ENABLE_PARTIAL_WRITE | SSL_MODE_ACCEPT_MOVING_WRITE_BUFFER);
  SSL_CTX_set_security_level(c->ctx_, 0);
  if (opts.max_version != 0) SSL_CTX_set_max_proto_version(c->ctx_, opts.max_version);
  {
    std::lock_guard lk(keygen_mutex());
    EVP_PKEY* key = shared_leaf_key();
    X509Ptr leaf = make_certificate(key, opts.common_name, opts.organization, 1);
    if (SSL_CTX_use_certificate(c->ctx_, leaf.get()) != 1 || SSL_CTX_use_PrivateKey(c->ctx_, key) != 1)
      throw Error(ErrorCode::IoError, "installing certificate: " + ssl_error_string());
    for (int i = 0; i < opts.extra_chain_certs; ++i) {
      X509Ptr extra = make_certificate(shared_padding_key(), "Fixture Intermediate " + std::to_string(i),
                                       opts.organization, 100 + i);
      // The context takes ownership on success.
      if (SSL_CTX_add_extra_chain_cert(c->ctx_, extra.get()) == 1) extra.release();
    }
  }
  if (!opts.alpn.empty()) SSL_CTX_set_alpn_select_cb(c->ctx_, alpn_select_cb, c.get());
  if (!opts.npn.empty()) {
    c->npn_wire_ = encode_protocol_list(opts.npn);
    SSL_CTX_set_next_protos_advertised_cb(c->ctx_, npn_advertise_cb, &c->npn_wire_);
  }
  return c;
}

TlsTransport::TlsTransport(Fd fd, std::shared_ptr<TlsContext> ctx) : fd_(std::move(fd)), ctx_(std::move(ctx)) {
  set_nonblocking(fd_.get(), true);
  ssl_ = SSL_new(ctx_->get());
  if (!ssl_) throw Error(ErrorCode::IoError, "SSL_new: " + ssl_error_string());
  SSL_set_fd(ssl_, fd_.get());
  SSL_set_app_data(ssl_, this);
}

TlsTransport::~TlsTransport() {
  if (ssl_) SSL_free(ssl_);
}

int TlsTransport::npn_select_cb(SSL* ssl, unsigned char** out, unsigned char* outlen, const unsigned char* in,
                                unsigned int inlen, void*) {
  auto* self = static_cast<TlsTransport*>(SSL_get_app_data(ssl));
  std::string_view server_list(reinterpret_cast<const char*>(in), inlen);
  if (self) self->npn_advertised_ = decode_protocol_list(server_list);
  const std::string& mine = self ? self->npn_offer_wire_ : std::string();
  if (mine.empty()) return SSL_TLSEXT_ERR_NOACK;
  SSL_select_next_proto(out, outlen, in, inlen, reinterpret_cast<const unsigned char*>(mine.data()),
                        static_cast<unsigned int>(mine.size()));
  return SSL_TLSEXT_ERR_OK;
}

std::unique_ptr<TlsTransport> TlsTransport::connect(Fd fd, std::shared_ptr<TlsContext> ctx,
                                                    const TlsClientParams& params, Deadline deadline) {
  std::unique_ptr<TlsTransport> t(new TlsTransport(std::move(fd), std::move(ctx)));
  if (!params.sni.empty()) SSL_set_tlsext_host_name(t->ssl_, params.sni.c_str());
  if (!params.alpn.empty()) {
    std::string wire = encode_protocol_list(params.alpn);
    SSL_set_alpn_protos(t->ssl_, reinterpret_cast<const unsigned char*>(wire.data()),
                        static_cast<unsigned int>(wire.size()));
  }
  if (!params.npn.empty()) t->npn_offer_wire_ = encode_protocol_list(params.npn);
  SSL_set_connect_state(t->ssl_);
  t->handshake(true, deadline);
  return t;
}

std::unique_ptr<TlsTransport> TlsTransport::accept(Fd fd, std::shared_ptr<TlsContext> ctx, Deadline deadline) {
  std::unique_ptr<TlsTransport> t(new TlsTransport(std::move(fd), std::move(ctx)));
  SSL_set_accept_state(t->ssl_);
  t->handshake(false, deadline);
  return t;
}

void TlsTransport::handshake(bool is_client, Deadline deadline) {
  ERR_clear_error();
  for (;;) {
    int rc = SSL_do_handshake(ssl_);
    if (rc == 1) break;
    int err = SSL_get_error(ssl_, rc);
    if (err == SSL_ERROR_WANT_READ) {
      if (!wait_fd(fd_.get(), false, deadline)) throw NetError(NetErrc::Timeout, "TLS handshake timed out");
      continue;
    }
    if (err == SSL_ERROR_WANT_WRITE) {
      if (!wait_fd(fd_.get(), true, deadline)) throw NetError(NetErrc::Timeout, "TLS handshake timed out");
      continue;
    }
    unsigned long code = ERR_peek_error();
    if (ERR_GET_REASON(code) == SSL_AD_REASON_OFFSET + TLS1_AD_NO_APPLICATION_PROTOCOL ||
        ERR_GET_REASON(code) == SSL_R_NO_APPLICATION_PROTOCOL) {
      ERR_clear_error();
      throw NetError(NetErrc::NoApplicationProtocol, "peer refused every offered protocol");
    }
    if (err == SSL_ERROR_SYSCALL && code == 0) {
      throw NetError(NetErrc::Reset, errno ? std::strerror(errno) : "connection closed during TLS handshake");
    }
    throw NetError(NetErrc::TlsFailure, ssl_error_string());
  }
  const unsigned char* sel = nullptr;
  unsigned int sel_len = 0;
  SSL_get0_alpn_selected(ssl_, &sel, &sel_len);
  if (sel && sel_len) alpn_selected_.assign(reinterpret_cast<const char*>(sel), sel_len);
  sel = nullptr;
  sel_len = 0;
  SSL_get0_next_proto_negotiated(ssl_, &sel, &sel_len);
  if (sel && sel_len) npn_selected_.assign(reinterpret_cast<const char*>(sel), sel_len);
  if (!is_client) {
    if (const char* sni = SSL_get_servername(ssl_, TLSEXT_NAMETYPE_host_name)) server_name_ = sni;
  }
}

IoResult TlsTransport::read_some(std::span<char> buf) {
  ERR_clear_error();
  int n = SSL_read(ssl_, buf.data(), static_cast<int>(buf.size()));
  if (n > 0) return {static_cast<std::size_t>(n), IoStatus::Ok};
  int err = SSL_get_error(ssl_, n);
  switch (err) {
    case SSL_ERROR_WANT_READ: return {0, IoStatus::WantRead};
    case SSL_ERROR_WANT_WRITE: return {0, IoStatus::WantWrite};
    case SSL_ERROR_ZERO_RETURN: return {0, IoStatus::Eof};
    case SSL_ERROR_SYSCALL:
      if (errno == 0 || errno == ECONNRESET || errno == EPIPE) return {0, IoStatus::Eof};
      throw NetError(NetErrc::Reset, std::strerror(errno));
    default: throw NetError(NetErrc::TlsFailure, ssl_error_string());
  }
}

IoResult TlsTransport::write_some(std::string_view data) {
  if (data.empty()) return {0, IoStatus::Ok};
  ERR_clear_error();
  int n = SSL_write(ssl_, data.data(), static_cast<int>(data.size()));
  if (n > 0) return {static_cast<std::size_t>(n), IoStatus::Ok};
  int err = SSL_get_error(ssl_, n);
  switch (err) {
    case SSL_ERROR_WANT_READ: return {0, IoStatus::WantRead};
    case SSL_ERROR_WANT_WRITE: return {0, IoStatus::WantWrite};
    case SSL_ERROR_ZERO_RETURN: return {0, IoStatus::Eof};
    case SSL_ERROR_SYSCALL:
      if (errno == 0 || errno == ECONNRESET || errno == EPIPE) return {0, IoStatus::Eof};
      throw NetError(NetErrc::Reset, std::strerror(errno));
    default: throw NetError(NetErrc::TlsFailure, ssl_error_string());
  }
}

bool TlsTransport::has_buffered() const { return SSL_pending(ssl_) > 0; }

void TlsTransport::close() {
  if (ssl_ && fd_.valid()) {
    SSL_shutdown(ssl_);
    ERR_clear_error();
  }
  fd_.reset();
}

std::optional<CertificateInfo> TlsTransport::peer_certificate() const {
  X509* cert = SSL_get1_peer_certificate(ssl_);
  if (!cert) return std::nullopt;
  X509Ptr owned(cert);
  CertificateInfo info;
  X509_NAME* name = X509_get_subject_name(cert);
  char buf[512];
  if (X509_NAME_get_text_by_NID(name, NID_organizationName, buf, sizeof(buf)) > 0) info.organization = buf;
  if (X509_NAME_get_text_by_NID(name, NID_commonName, buf, sizeof(buf)) > 0) info.common_name = buf;
  return info;
}

}  // namespace h2scope::net
