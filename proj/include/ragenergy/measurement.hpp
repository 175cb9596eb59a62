#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "ragenergy/error.hpp"

namespace ragenergy {

// ---------------------------------------------------------------------------
// Clocks

using Nanos = std::chrono::nanoseconds;

/// Point on a monotonic time line. Integer nanoseconds keep stage durations
/// exact under replay: a duration written as seconds with <= 9 decimals maps
/// back to the same nanosecond count.
struct Instant {
  Nanos since_origin{0};
  friend auto operator<=>(const Instant&, const Instant&) = default;
};

inline double to_seconds(Nanos d) noexcept { return static_cast<double>(d.count()) / 1e9; }

inline Nanos to_nanos(double seconds) { return Nanos(std::llround(seconds * 1e9)); }

inline double elapsed(Instant start, Instant end) noexcept {
  return end < start ? 0.0 : to_seconds(end.since_origin - start.since_origin);
}

class MonotonicClock {
 public:
  virtual ~MonotonicClock() = default;
  virtual Instant now() = 0;
};

class SteadyClock final : public MonotonicClock {
 public:
  Instant now() override {
    return {std::chrono::duration_cast<Nanos>(std::chrono::steady_clock::now().time_since_epoch())};
  }
};

inline Instant now_monotonic() { return SteadyClock{}.now(); }

/// Clock that only moves when told to. Used by the synthetic and replay
/// drivers and by tests.
class ManualClock : public MonotonicClock {
 public:
  Instant now() override { return now_; }
  void advance(Nanos d) { now_.since_origin += d; }
  void advance_seconds(double s) { advance(to_nanos(s)); }
  void advance_to(Instant t) {
    if (now_ < t) now_ = t;
  }

 private:
  Instant now_{};
};

using UtcTime = std::chrono::sys_time<Nanos>;

class WallClock {
 public:
  virtual ~WallClock() = default;
  virtual UtcTime now_utc() = 0;
  virtual void sleep_until(UtcTime t) = 0;
};

class SystemWallClock final : public WallClock {
 public:
  UtcTime now_utc() override { return std::chrono::time_point_cast<Nanos>(std::chrono::system_clock::now()); }
  void sleep_until(UtcTime t) override {
    // Sleep in slices so a shutdown request is noticed by the caller's loop.
    auto remaining = t - now_utc();
    if (remaining > std::chrono::seconds(30)) remaining = std::chrono::seconds(30);
    if (remaining > Nanos::zero()) std::this_thread::sleep_for(remaining);
  }
};

/// One simulated time line seen both as a monotonic clock and as UTC wall
/// time. Sleeping jumps forward; stage work advances it explicitly.
class SimulatedTime final : public ManualClock, public WallClock {
 public:
  explicit SimulatedTime(UtcTime origin) : origin_(origin) {}
  UtcTime now_utc() override { return origin_ + ManualClock::now().since_origin; }
  void sleep_until(UtcTime t) override {
    if (t > now_utc()) advance(t - now_utc());
  }

 private:
  UtcTime origin_;
};

/// "YYYY-MM-DDTHH:MM:SS.mmmZ"
inline std::string format_utc(UtcTime t) {
  using namespace std::chrono;
  const auto ms_tp = floor<milliseconds>(t);
  const auto day = floor<days>(ms_tp);
  const year_month_day ymd{day};
  const hh_mm_ss tod{ms_tp - day};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(tod.hours().count()), static_cast<int>(tod.minutes().count()),
                static_cast<int>(tod.seconds().count()), static_cast<int>(tod.subseconds().count()));
  return buf;
}

/// Accepts "YYYY-MM-DDTHH:MM:SS[.fff]Z".
inline UtcTime parse_utc(std::string_view text) {
  using namespace std::chrono;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  int consumed = 0;
  const std::string str(text);
  if (std::sscanf(str.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &s, &consumed) != 6) {
    throw Error(Errc::schema, "bad UTC timestamp '" + str + "'");
  }
  std::int64_t frac_ns = 0;
  std::size_t pos = static_cast<std::size_t>(consumed);
  if (pos < str.size() && str[pos] == '.') {
    std::int64_t scale = 100'000'000;
    for (++pos; pos < str.size() && std::isdigit(static_cast<unsigned char>(str[pos])); ++pos) {
      frac_ns += (str[pos] - '0') * scale;
      scale /= 10;
    }
  }
  if (pos + 1 != str.size() || str[pos] != 'Z') throw Error(Errc::schema, "bad UTC timestamp '" + str + "'");
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw Error(Errc::schema, "bad UTC timestamp '" + str + "'");
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + Nanos{frac_ns};
}

// ---------------------------------------------------------------------------
// Token counting

enum class TokenizerMode { exact_bpe, approximate };

constexpr std::string_view to_string(TokenizerMode mode) noexcept {
  return mode == TokenizerMode::exact_bpe ? "exact_bpe" : "approximate";
}

struct TokenizerSpec {
  std::string id = "approx-4";
  TokenizerMode mode = TokenizerMode::approximate;
  std::optional<std::string> vocab_ref;  // path to a tiktoken-format rank file
  double approx_chars_per_token = 4.0;

  void validate() const {
    if (mode == TokenizerMode::exact_bpe && (!vocab_ref || vocab_ref->empty())) {
      throw Error(Errc::configuration, "tokenizer '" + id + "': exact_bpe mode requires a vocabulary file");
    }
    if (!(approx_chars_per_token > 0)) {
      throw Error(Errc::configuration, "tokenizer '" + id + "': approx_chars_per_token must be > 0");
    }
  }
};

struct TokenCount {
  std::int64_t count = 0;
  TokenizerMode mode = TokenizerMode::approximate;
};

namespace detail {

struct Utf8Char {
  char32_t cp;
  std::size_t len;
};

inline Utf8Char decode_utf8(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  auto bits = [&](std::size_t k) { return static_cast<char32_t>(static_cast<unsigned char>(s[i + k]) & 0x3F); };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0 && cont(1)) return {(static_cast<char32_t>(b0 & 0x1F) << 6) | bits(1), 2};
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2))
    return {(static_cast<char32_t>(b0 & 0x0F) << 12) | (bits(1) << 6) | bits(2), 3};
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3))
    return {(static_cast<char32_t>(b0 & 0x07) << 18) | (bits(1) << 12) | (bits(2) << 6) | bits(3), 4};
  return {0xFFFD, 1};
}

inline bool is_space_cp(char32_t c) {
  switch (c) {
    case U' ': case U'\t': case U'\n': case U'\v': case U'\f': case U'\r':
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

inline bool is_digit_cp(char32_t c) { return c >= U'0' && c <= U'9'; }

// Non-ASCII code points other than spaces count as letters. This matches the
// reference pattern for Latin, Greek, Cyrillic and CJK text; non-ASCII digits
// and symbols are the known divergence.
inline bool is_letter_cp(char32_t c) {
  if (c < 0x80) return (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z');
  return !is_space_cp(c) && c != 0xFFFD;
}

inline bool is_newline_cp(char32_t c) { return c == U'\r' || c == U'\n'; }

inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); i += decode_utf8(s, i).len) ++n;
  return n;
}

inline std::string base64_decode(std::string_view in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=') break;
    const int v = value(c);
    if (v < 0) throw Error(Errc::configuration, "invalid base64 in vocabulary file");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

}  // namespace detail

/// Splits text into pre-tokenization pieces following the cl100k-style
/// pattern: contractions, optionally-prefixed letter runs, 1-3 digit groups,
/// punctuation runs, and the whitespace rules.
inline std::vector<std::string_view> pretokenize(std::string_view s) {
  using namespace detail;
  std::vector<std::string_view> pieces;
  const std::size_t n = s.size();
  auto at = [&](std::size_t i) { return decode_utf8(s, i); };
  auto skip_while = [&](std::size_t i, auto pred) {
    while (i < n) {
      auto c = at(i);
      if (!pred(c.cp)) break;
      i += c.len;
    }
    return i;
  };
  auto is_punct = [](char32_t c) { return !is_space_cp(c) && !is_letter_cp(c) && !is_digit_cp(c); };

  std::size_t i = 0;
  while (i < n) {
    const auto c = at(i);
    std::size_t end = 0;

    // 's 't 're 've 'm 'll 'd (case-insensitive)
    if (c.cp == U'\'' && i + 1 < n) {
      auto lower = [&](std::size_t k) {
        return i + k < n ? static_cast<char>(std::tolower(static_cast<unsigned char>(s[i + k]))) : '\0';
      };
      const char a = lower(1), b = lower(2);
      if ((a == 'l' && b == 'l') || (a == 'v' && b == 'e') || (a == 'r' && b == 'e')) end = i + 3;
      else if (a == 's' || a == 'd' || a == 'm' || a == 't') end = i + 2;
    }
    // [^\r\n\p{L}\p{N}]?+\p{L}++
    if (!end) {
      std::size_t j = i;
      if (!is_newline_cp(c.cp) && !is_letter_cp(c.cp) && !is_digit_cp(c.cp)) j += c.len;
      if (j < n && is_letter_cp(at(j).cp)) end = skip_while(j, is_letter_cp);
    }
    // \p{N}{1,3}+
    if (!end && is_digit_cp(c.cp)) {
      end = i;
      for (int k = 0; k < 3 && end < n && is_digit_cp(at(end).cp); ++k) end += at(end).len;
    }
    // ' ?[^\s\p{L}\p{N}]++[\r\n]*+'
    if (!end) {
      std::size_t j = i;
      if (c.cp == U' ' && j + 1 < n && is_punct(at(j + 1).cp)) j += 1;
      if (j < n && is_punct(at(j).cp)) end = skip_while(skip_while(j, is_punct), is_newline_cp);
    }
    if (!end && is_space_cp(c.cp)) {
      const std::size_t run_end = skip_while(i, is_space_cp);
      if (run_end == n) {
        end = n;  // \s++$
      } else {
        // \s*[\r\n]: up to and including the last newline of the run
        std::size_t last_nl = n;
        for (std::size_t j = i; j < run_end;) {
          auto w = at(j);
          if (is_newline_cp(w.cp)) last_nl = j;
          j += w.len;
        }
        if (last_nl != n) {
          end = last_nl + 1;
        } else {
          // \s+(?!\S): leave the final space of the run for the next piece
          std::size_t last_start = i;
          for (std::size_t j = i; j < run_end; j += at(j).len) last_start = j;
          end = last_start > i ? last_start : i + c.len;
        }
      }
    }
    if (!end) end = i + c.len;
    pieces.push_back(s.substr(i, end - i));
    i = end;
  }
  return pieces;
}

/// Byte-level BPE rank table in tiktoken's text format.
class BpeVocabulary {
 public:
  static BpeVocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::configuration, "cannot open BPE vocabulary '" + path + "'");
    BpeVocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto sp = line.find(' ');
      if (sp == std::string::npos) throw Error(Errc::configuration, "malformed vocabulary line in '" + path + "'");
      v.ranks_.emplace(detail::base64_decode(std::string_view(line).substr(0, sp)), std::stoi(line.substr(sp + 1)));
    }
    for (int b = 0; b < 256; ++b) {
      if (!v.ranks_.contains(std::string(1, static_cast<char>(b)))) {
        throw Error(Errc::configuration, "vocabulary '" + path + "' does not cover every single byte");
      }
    }
    return v;
  }

  [[nodiscard]] std::optional<int> rank(std::string_view bytes) const {
    auto it = ranks_.find(std::string(bytes));
    if (it == ranks_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] std::size_t size() const noexcept { return ranks_.size(); }

  /// Number of tokens a single pre-tokenized piece encodes to.
  [[nodiscard]] std::size_t piece_token_count(std::string_view piece) const {
    if (piece.empty()) return 0;
    if (rank(piece)) return 1;
    // parts[k] is the start offset of part k; the final entry is the end.
    std::vector<std::size_t> parts(piece.size() + 1);
    for (std::size_t k = 0; k <= piece.size(); ++k) parts[k] = k;
    constexpr int kNone = std::numeric_limits<int>::max();
    auto pair_rank = [&](std::size_t k) {
      if (k + 2 >= parts.size()) return kNone;
      auto r = rank(piece.substr(parts[k], parts[k + 2] - parts[k]));
      return r ? *r : kNone;
    };
    while (parts.size() > 2) {
      int best = kNone;
      std::size_t best_k = 0;
      for (std::size_t k = 0; k + 2 < parts.size(); ++k) {
        const int r = pair_rank(k);
        if (r < best) {
          best = r;
          best_k = k;
        }
      }
      if (best == kNone) break;
      parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(best_k) + 1);
    }
    return parts.size() - 1;
  }

 private:
  std::unordered_map<std::string, int> ranks_;
};

class Tokenizer {
 public:
  explicit Tokenizer(TokenizerSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    if (spec_.mode == TokenizerMode::exact_bpe) {
      vocab_ = std::make_shared<const BpeVocabulary>(BpeVocabulary::load(*spec_.vocab_ref));
    }
  }

  [[nodiscard]] const TokenizerSpec& spec() const noexcept { return spec_; }

  [[nodiscard]] TokenCount count(std::string_view text) const {
    if (spec_.mode == TokenizerMode::approximate) {
      const auto chars = static_cast<double>(detail::utf8_length(text));
      return {static_cast<std::int64_t>(std::ceil(chars / spec_.approx_chars_per_token)), spec_.mode};
    }
    std::int64_t total = 0;
    for (auto piece : pretokenize(text)) total += static_cast<std::int64_t>(vocab_->piece_token_count(piece));
    return {total, spec_.mode};
  }

 private:
  TokenizerSpec spec_;
  std::shared_ptr<const BpeVocabulary> vocab_;
};

inline TokenCount count_tokens(std::string_view text, const TokenizerSpec& spec) {
  return Tokenizer(spec).count(text);
}

}  // namespace ragenergy
