#include "rollcall/protocol.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <array>
#include <limits>
#include <stdexcept>

#include "rollcall/detail/text.hpp"

namespace rollcall {

std::string derive_token(std::string_view secret, RoundRef round) {
  const int index = round.is_exe() ? 0 : round.index;
  std::string preimage;
  preimage.reserve(secret.size() + 16);
  preimage.append(secret);
  preimage.push_back(':');
  preimage.append(std::to_string(index));
  preimage.push_back(':');
  preimage.append(to_string(round.kind));

  std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
  SHA256(reinterpret_cast<const unsigned char*>(preimage.data()), preimage.size(), digest.data());

  static constexpr char kHex[] = "0123456789abcdef";
  std::string token(kTokenLength, '0');
  for (std::size_t i = 0; i < kTokenLength / 2; ++i) {
    token[2 * i] = kHex[digest[i] >> 4];
    token[2 * i + 1] = kHex[digest[i] & 0x0f];
  }
  return token;
}

bool is_valid_token(std::string_view token) {
  if (token.size() != kTokenLength) return false;
  for (char c : token)
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  return true;
}

bool is_valid_nonce(std::string_view nonce) {
  if (nonce.size() < kMinNonceLength || nonce.size() > kMaxNonceLength) return false;
  for (char c : nonce)
    if (c < 0x21 || c > 0x7e) return false;
  return true;
}

std::string base64url_encode(std::string_view bytes) {
  if (bytes.empty()) return {};
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  while (!out.empty() && out.back() == '=') out.pop_back();
  for (char& c : out) {
    if (c == '+') c = '-';
    else if (c == '/') c = '_';
  }
  return out;
}

std::optional<std::string> base64url_decode(std::string_view text) {
  while (!text.empty() && text.back() == '=') text.remove_suffix(1);
  if (text.empty()) return std::string{};
  if (text.size() % 4 == 1) return std::nullopt;

  std::string std_alpha(text);
  for (char& c : std_alpha) {
    if (c == '-') c = '+';
    else if (c == '_') c = '/';
    else if (!((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')))
      return std::nullopt;
  }
  const std::size_t pad = (4 - std_alpha.size() % 4) % 4;
  std_alpha.append(pad, '=');

  std::string out(std_alpha.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(std_alpha.data()),
                                static_cast<int>(std_alpha.size()));
  if (n < 0) return std::nullopt;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string_view to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::BadToken: return "BADTOKEN";
    case RejectReason::Early: return "EARLY";
    case RejectReason::Late: return "LATE";
    case RejectReason::Dup: return "DUP";
    case RejectReason::BadRound: return "BADROUND";
    case RejectReason::Malformed: return "MALFORMED";
  }
  return "MALFORMED";
}

std::optional<RejectReason> parse_reject_reason(std::string_view word) {
  for (auto r : {RejectReason::BadToken, RejectReason::Early, RejectReason::Late, RejectReason::Dup,
                 RejectReason::BadRound, RejectReason::Malformed})
    if (to_string(r) == word) return r;
  return std::nullopt;
}

std::string_view to_string(SurveyCode code) {
  switch (code) {
    case SurveyCode::Forgot: return "FORGOT";
    case SurveyCode::Obstacle: return "OBSTACLE";
    case SurveyCode::ChangedMind: return "CHANGED_MIND";
    case SurveyCode::Interference: return "INTERFERENCE";
    case SurveyCode::Other: return "OTHER";
  }
  return "OTHER";
}

std::optional<SurveyCode> parse_survey_code(std::string_view word) {
  for (auto c : {SurveyCode::Forgot, SurveyCode::Obstacle, SurveyCode::ChangedMind,
                 SurveyCode::Interference, SurveyCode::Other})
    if (to_string(c) == word) return c;
  return std::nullopt;
}

namespace {

struct Encoder {
  std::string operator()(const SyncRequest& m) const { return "SYNC " + std::to_string(m.t1); }
  std::string operator()(const SyncReply& m) const {
    return "SYNCR " + std::to_string(m.t1) + " " + std::to_string(m.t2) + " " +
           std::to_string(m.t3);
  }
  std::string operator()(const Report& m) const {
    return "REPORT " + to_string(m.round) + " " + m.nonce + " " + m.token;
  }
  std::string operator()(const Ack& m) const { return "ACK " + to_string(m.round); }
  std::string operator()(const Reject& m) const { return "REJ " + std::string(to_string(m.reason)); }
  std::string operator()(const Survey& m) const {
    const std::string payload = m.text.empty() ? "-" : base64url_encode(m.text);
    return "SURVEY " + m.nonce + " " + std::string(to_string(m.code)) + " " + payload;
  }
};

std::optional<RoundRef> decode_round(std::string_view kind_word, std::string_view index_word) {
  const auto kind = parse_round_kind(kind_word);
  const auto index = detail::parse_int(index_word);
  if (!kind || !index || *index < 0 || *index > std::numeric_limits<int>::max()) return std::nullopt;
  if (*kind == RoundKind::Exe && *index != 0) return std::nullopt;
  return RoundRef{*kind, static_cast<int>(*index)};
}

}  // namespace

std::string encode(const Message& message) { return std::visit(Encoder{}, message); }

std::optional<Message> decode(std::string_view line) {
  if (line.empty()) return std::nullopt;
  const auto f = detail::split_fields(line);
  const auto verb = f[0];

  if (verb == "SYNC" && f.size() == 2) {
    if (auto t1 = detail::parse_int(f[1])) return SyncRequest{*t1};
    return std::nullopt;
  }
  if (verb == "SYNCR" && f.size() == 4) {
    const auto t1 = detail::parse_int(f[1]);
    const auto t2 = detail::parse_int(f[2]);
    const auto t3 = detail::parse_int(f[3]);
    if (t1 && t2 && t3) return SyncReply{*t1, *t2, *t3};
    return std::nullopt;
  }
  if (verb == "REPORT" && f.size() == 5) {
    const auto round = decode_round(f[1], f[2]);
    if (!round || !is_valid_nonce(f[3]) || !is_valid_token(f[4])) return std::nullopt;
    return Report{*round, std::string(f[3]), std::string(f[4])};
  }
  if (verb == "ACK" && f.size() == 3) {
    if (auto round = decode_round(f[1], f[2])) return Ack{*round};
    return std::nullopt;
  }
  if (verb == "REJ" && f.size() == 2) {
    if (auto reason = parse_reject_reason(f[1])) return Reject{*reason};
    return std::nullopt;
  }
  if (verb == "SURVEY" && f.size() == 4) {
    const auto code = parse_survey_code(f[2]);
    if (!is_valid_nonce(f[1]) || !code || f[3].empty()) return std::nullopt;
    if (f[3] == "-") return Survey{std::string(f[1]), *code, {}};
    auto text = base64url_decode(f[3]);
    if (!text || text->empty()) return std::nullopt;
    return Survey{std::string(f[1]), *code, std::move(*text)};
  }
  return std::nullopt;
}

}  // namespace rollcall
