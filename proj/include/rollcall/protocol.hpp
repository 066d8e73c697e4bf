#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "rollcall/experiment.hpp"

namespace rollcall {

inline constexpr std::size_t kTokenLength = 32;
inline constexpr std::size_t kMinNonceLength = 8;
inline constexpr std::size_t kMaxNonceLength = 64;

/// Per-round message shared by every client: the first 32 lowercase hex
/// characters of SHA-256("<secret>:<index>:<CAL|EXE>"). EXE uses index 0.
std::string derive_token(std::string_view secret, RoundRef round);

bool is_valid_token(std::string_view token);

/// 8 to 64 printable ASCII characters, no whitespace.
bool is_valid_nonce(std::string_view nonce);

/// URL-safe alphabet, no padding.
std::string base64url_encode(std::string_view bytes);
std::optional<std::string> base64url_decode(std::string_view text);

// Client -> counter.
struct SyncRequest {
  Millis t1 = 0;
  friend bool operator==(const SyncRequest&, const SyncRequest&) = default;
};

// Counter -> client: t1 echoed, t2 receive time, t3 send time.
struct SyncReply {
  Millis t1 = 0;
  Millis t2 = 0;
  Millis t3 = 0;
  friend bool operator==(const SyncReply&, const SyncReply&) = default;
};

struct Report {
  RoundRef round;
  std::string nonce;
  std::string token;
  friend bool operator==(const Report&, const Report&) = default;
};

struct Ack {
  RoundRef round;
  friend bool operator==(const Ack&, const Ack&) = default;
};

enum class RejectReason { BadToken, Early, Late, Dup, BadRound, Malformed };

std::string_view to_string(RejectReason reason);
std::optional<RejectReason> parse_reject_reason(std::string_view word);

struct Reject {
  RejectReason reason = RejectReason::Malformed;
  friend bool operator==(const Reject&, const Reject&) = default;
};

enum class SurveyCode { Forgot, Obstacle, ChangedMind, Interference, Other };

std::string_view to_string(SurveyCode code);
std::optional<SurveyCode> parse_survey_code(std::string_view word);

struct Survey {
  std::string nonce;
  SurveyCode code = SurveyCode::Other;
  std::string text;  // decoded free text, arbitrary bytes
  friend bool operator==(const Survey&, const Survey&) = default;
};

// Surveys are acknowledged as `ACK EXE 0`; the grammar has no survey ack.
using Message = std::variant<SyncRequest, SyncReply, Report, Ack, Reject, Survey>;

/// One wire line without the trailing newline. Precondition: the message is
/// structurally valid (nonce, token and round constraints hold).
std::string encode(const Message& message);

/// Returns nullopt (MALFORMED) for anything outside the grammar.
std::optional<Message> decode(std::string_view line);

}  // namespace rollcall
