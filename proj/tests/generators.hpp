#pragma once

#include <random>
#include <string>

#include "rollcall/protocol.hpp"

namespace rollcall::gen {

inline std::string nonce(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(kMinNonceLength, kMaxNonceLength);
  std::uniform_int_distribution<int> ch(0x21, 0x7e);
  std::string s(len(rng), ' ');
  for (auto& c : s) c = static_cast<char>(ch(rng));
  return s;
}

inline std::string token(std::mt19937_64& rng) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::uniform_int_distribution<int> d(0, 15);
  std::string s(kTokenLength, '0');
  for (auto& c : s) c = kHex[d(rng)];
  return s;
}

inline Millis millis(std::mt19937_64& rng) {
  // Mix tiny, negative and full-range values.
  switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
    case 0: return std::uniform_int_distribution<Millis>(-5, 5)(rng);
    case 1: return std::uniform_int_distribution<Millis>(0, 4'000'000'000'000)(rng);
    default: return static_cast<Millis>(rng());
  }
}

inline RoundRef round(std::mt19937_64& rng) {
  if (std::bernoulli_distribution(0.2)(rng)) return RoundRef::exe();
  return RoundRef::cal(std::uniform_int_distribution<int>(0, 100'000)(rng));
}

inline std::string bytes(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(0, 120);
  std::uniform_int_distribution<int> b(0, 255);
  std::string s(len(rng), '\0');
  for (auto& c : s) c = static_cast<char>(b(rng));
  return s;
}

inline Message message(std::mt19937_64& rng) {
  switch (std::uniform_int_distribution<int>(0, 5)(rng)) {
    case 0: return SyncRequest{millis(rng)};
    case 1: return SyncReply{millis(rng), millis(rng), millis(rng)};
    case 2: return Report{round(rng), nonce(rng), token(rng)};
    case 3: return Ack{round(rng)};
    case 4: return Reject{static_cast<RejectReason>(std::uniform_int_distribution<int>(0, 5)(rng))};
    default:
      return Survey{nonce(rng), static_cast<SurveyCode>(std::uniform_int_distribution<int>(0, 4)(rng)),
                    bytes(rng)};
  }
}

}  // namespace rollcall::gen
