#include "quire/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <stdexcept>

#include "quire/common.hpp"
#include "quire/error.hpp"

namespace quire {

namespace {

std::string to_hex(const unsigned char* data, unsigned int len) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kDigits[data[i] >> 4]);
    out.push_back(kDigits[data[i] & 0x0f]);
  }
  return out;
}

}  // namespace

struct Sha256::Impl {
  EVP_MD_CTX* ctx = nullptr;

  Impl() : ctx(EVP_MD_CTX_new()) {
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("sha256: digest init failed");
    }
  }
  Impl(const Impl& other) : ctx(EVP_MD_CTX_new()) {
    if (ctx == nullptr || EVP_MD_CTX_copy_ex(ctx, other.ctx) != 1) {
      throw std::runtime_error("sha256: context copy failed");
    }
  }
  ~Impl() { EVP_MD_CTX_free(ctx); }
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {}
Sha256::~Sha256() = default;
Sha256::Sha256(const Sha256& other) : impl_(std::make_unique<Impl>(*other.impl_)) {}
Sha256& Sha256::operator=(const Sha256& other) {
  if (this != &other) impl_ = std::make_unique<Impl>(*other.impl_);
  return *this;
}
Sha256::Sha256(Sha256&&) noexcept = default;
Sha256& Sha256::operator=(Sha256&&) noexcept = default;

void Sha256::update(std::string_view data) {
  EVP_DigestUpdate(impl_->ctx, data.data(), data.size());
}

std::string Sha256::hex() const {
  Impl copy(*impl_);
  std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(copy.ctx, out.data(), &len);
  return to_hex(out.data(), len);
}

std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data);
  return h.hex();
}

std::shared_ptr<Clock> make_clock(const std::string& kind) {
  if (kind == "logical") return std::make_shared<LogicalClock>();
  if (kind == "steady") return std::make_shared<SteadyClock>();
  throw Error(ErrorCode::ConfigError, "unknown clock '" + kind + "'");
}

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidPath: return "InvalidPath";
    case ErrorCode::VersionConflict: return "VersionConflict";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::VersionOutOfRange: return "VersionOutOfRange";
    case ErrorCode::Persistence: return "Persistence";
    case ErrorCode::UnknownRecipient: return "UnknownRecipient";
    case ErrorCode::UnknownSender: return "UnknownSender";
    case ErrorCode::RoutingViolation: return "RoutingViolation";
    case ErrorCode::InvalidAttachment: return "InvalidAttachment";
    case ErrorCode::BackendTimeout: return "BackendTimeout";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::ScriptMismatch: return "ScriptMismatch";
    case ErrorCode::ScriptExhausted: return "ScriptExhausted";
    case ErrorCode::FixtureParseError: return "FixtureParseError";
    case ErrorCode::DisallowedTool: return "DisallowedTool";
    case ErrorCode::UnparseableAction: return "UnparseableAction";
    case ErrorCode::RuntimeUnavailable: return "RuntimeUnavailable";
    case ErrorCode::SandboxSetupFailure: return "SandboxSetupFailure";
    case ErrorCode::InvalidJob: return "InvalidJob";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::QueryNotInFixture: return "QueryNotInFixture";
    case ErrorCode::FetchDenied: return "FetchDenied";
    case ErrorCode::FetchFailed: return "FetchFailed";
    case ErrorCode::SpawnDenied: return "SpawnDenied";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::UnknownAgent: return "UnknownAgent";
    case ErrorCode::AgentTerminated: return "AgentTerminated";
    case ErrorCode::ReportNotFound: return "ReportNotFound";
    case ErrorCode::SessionClosed: return "SessionClosed";
    case ErrorCode::NotStalled: return "NotStalled";
    case ErrorCode::UnknownBlock: return "UnknownBlock";
    case ErrorCode::DanglingAnchor: return "DanglingAnchor";
    case ErrorCode::BadLocator: return "BadLocator";
    case ErrorCode::MalformedProposal: return "MalformedProposal";
    case ErrorCode::NotUser: return "NotUser";
    case ErrorCode::NoGoalsApproved: return "NoGoalsApproved";
    case ErrorCode::GoalNotApproved: return "GoalNotApproved";
    case ErrorCode::GateViolation: return "GateViolation";
    case ErrorCode::InvalidState: return "InvalidState";
    case ErrorCode::UnknownWorkstream: return "UnknownWorkstream";
    case ErrorCode::UnknownGoal: return "UnknownGoal";
    case ErrorCode::NoAnswer: return "NoAnswer";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace quire
