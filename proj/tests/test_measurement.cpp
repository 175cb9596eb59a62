#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "ragenergy/measurement.hpp"

using namespace ragenergy;

namespace {

TokenizerSpec mini_bpe() {
  TokenizerSpec s;
  s.id = "mini-bpe";
  s.mode = TokenizerMode::exact_bpe;
  s.vocab_ref = std::string(RAGENERGY_TEST_DATA) + "/mini_vocab.tiktoken";
  return s;
}

std::vector<std::string> pieces(std::string_view s) {
  std::vector<std::string> out;
  for (auto p : pretokenize(s)) out.emplace_back(p);
  return out;
}

}  // namespace

// Counts produced by the reference tiktoken implementation with the same
// vocabulary and the same pre-tokenizer pattern (tests/data/gen_bpe_golden.py).
TEST(ExactTokenizer, MatchesReferenceCounts) {
  const Tokenizer tok(mini_bpe());
  const std::vector<std::pair<std::string, std::int64_t>> golden = {
      {"", 0},
      {"Hello world", 11},
      {"Targets cover Scope 1, 2 and 3. See p. 4 for details.", 34},
      {"What is the total emissions reduction target of Malaysia?", 25},
      {"It's 2030: they'll cut   emissions by 45%!\n\nNext  line\r\n  ", 43},
      {"Net-zero by 2050 (relative to 2019) -- don't forget offsets...", 48},
      {"caf\xc3\xa9 na\xc3\xafve r\xc3\xa9sum\xc3\xa9 12345678 tabs\tand\ttrailing   ", 45},
  };
  for (const auto& [text, count] : golden) {
    const auto c = tok.count(text);
    EXPECT_EQ(c.count, count) << text;
    EXPECT_EQ(c.mode, TokenizerMode::exact_bpe);
  }
}

// Pieces as split by the reference regex engine with the same pattern.
TEST(ExactTokenizer, PreTokenizerPieces) {
  EXPECT_EQ(pieces("It's 2030: they'll cut   emissions by 45%!\n\nNext  line\r\n  "),
            (std::vector<std::string>{"It", "'s", " ", "203", "0", ":", " they", "'ll", " cut", "  ", " emissions", " by",
                                      " ", "45", "%!\n\n", "Next", " ", " line", "\r\n  "}));
  EXPECT_EQ(pieces("a \n\n b\t\t\nc   d  "),
            (std::vector<std::string>{"a", " \n\n", " b", "\t\t\n", "c", "  ", " d", "  "}));
  EXPECT_EQ(pieces("caf\xc3\xa9 na\xc3\xafve 12345678"),
            (std::vector<std::string>{"caf\xc3\xa9", " na\xc3\xafve", " ", "123", "456", "78"}));
}

TEST(ExactTokenizer, MissingVocabularyIsConfigurationError) {
  auto spec = mini_bpe();
  spec.vocab_ref.reset();
  try {
    Tokenizer t(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::configuration);
  }
  spec.vocab_ref = "/nonexistent/vocab.tiktoken";
  EXPECT_THROW(Tokenizer{spec}, Error);
}

TEST(ApproximateTokenizer, CeilOfCodepointsOverRatio) {
  const Tokenizer tok(TokenizerSpec{});
  EXPECT_EQ(tok.count("").count, 0);
  EXPECT_EQ(tok.count("abcd").count, 1);
  EXPECT_EQ(tok.count("abcde").count, 2);
  EXPECT_EQ(tok.count("caf\xc3\xa9").count, 1);  // 4 code points, 5 bytes
  EXPECT_EQ(tok.count("x").mode, TokenizerMode::approximate);
  TokenizerSpec three;
  three.approx_chars_per_token = 3;
  EXPECT_EQ(count_tokens("abcdefg", three).count, 3);
}

TEST(ApproximateTokenizer, RejectsNonPositiveRatio) {
  TokenizerSpec s;
  s.approx_chars_per_token = 0;
  EXPECT_THROW(Tokenizer{s}, Error);
}

TEST(Utf8, LengthAndBase64) {
  EXPECT_EQ(detail::utf8_length("na\xc3\xafve"), 5u);
  EXPECT_EQ(detail::base64_decode("SGVsbG8="), "Hello");
  EXPECT_EQ(detail::base64_decode("IA=="), " ");
}

TEST(Clocks, NanosecondConversionRoundTrips) {
  for (double s : {0.0, 1.0, 10.59, 0.000000001, 123.456789012}) {
    EXPECT_EQ(to_seconds(to_nanos(s)), s);
  }
}

TEST(Clocks, ManualClockAdvances) {
  ManualClock c;
  const auto t0 = c.now();
  c.advance_seconds(1.5);
  EXPECT_DOUBLE_EQ(elapsed(t0, c.now()), 1.5);
  c.advance_to(Instant{std::chrono::seconds(1)});  // earlier: no effect
  EXPECT_DOUBLE_EQ(elapsed(t0, c.now()), 1.5);
  c.advance_to(Instant{std::chrono::seconds(3)});
  EXPECT_DOUBLE_EQ(elapsed(t0, c.now()), 3.0);
}

TEST(Clocks, SteadyClockIsMonotonic) {
  SteadyClock c;
  auto a = c.now();
  auto b = c.now();
  EXPECT_GE(elapsed(a, b), 0.0);
}

TEST(Clocks, SimulatedTimeSharesOneTimeline) {
  SimulatedTime t(parse_utc("2025-01-01T23:59:59.500Z"));
  t.advance_seconds(1.0);
  EXPECT_EQ(format_utc(t.now_utc()), "2025-01-02T00:00:00.500Z");
  t.sleep_until(parse_utc("2025-01-02T08:00:00.000Z"));
  EXPECT_EQ(format_utc(t.now_utc()), "2025-01-02T08:00:00.000Z");
  EXPECT_DOUBLE_EQ(to_seconds(t.now().since_origin), 1.0 + 8 * 3600 - 0.5);
}

TEST(UtcText, FormatAndParse) {
  const auto t = parse_utc("2024-02-29T12:34:56.789Z");
  EXPECT_EQ(format_utc(t), "2024-02-29T12:34:56.789Z");
  EXPECT_EQ(format_utc(parse_utc("2024-02-29T12:34:56Z")), "2024-02-29T12:34:56.000Z");
  EXPECT_THROW((void)parse_utc("yesterday"), Error);
  EXPECT_THROW((void)parse_utc("2024-02-29 12:34:56"), Error);
}
