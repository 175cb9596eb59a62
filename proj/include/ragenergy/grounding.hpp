#pragma once

// Sentence-level grounding of a drafted answer against retrieved chunks:
// the cosine-similarity filter and the LLM-judged check.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ragenergy/error.hpp"
#include "ragenergy/llm_client.hpp"

namespace ragenergy {

struct Chunk {
  std::string doc_id;
  std::optional<int> page;
  std::string text;
  std::vector<float> embedding;
  std::size_t index = 0;                  // position in the corpus
  std::optional<std::string> collection;  // database the chunk belongs to
};

struct SentenceVerdict {
  std::string sentence;
  std::optional<double> support_score;  // cosine mode
  std::optional<bool> supported;        // LLM mode
  bool kept = false;
  std::optional<std::size_t> best_chunk;  // index into the chunk list given
};

// ---------------------------------------------------------------------------
// Sentence segmentation
//
// Rules, in order:
//  * a line break always ends a sentence;
//  * a run of . ! ? (plus closing quotes/brackets) followed by whitespace or
//    end of text ends a sentence, unless
//      - the run is a single '.' after a word in the abbreviation list, or
//      - the next non-space character is a lower-case letter;
//  * a '.' between two non-space characters (3.5, e.g, U.S) never splits.
// Each sentence is trimmed and its internal whitespace collapsed to one space.

namespace detail {

inline const std::set<std::string, std::less<>>& abbreviations() {
  static const std::set<std::string, std::less<>> words = {
      "p",    "pp",   "e.g", "i.e",  "cf",  "vs",   "mr",  "mrs", "ms",   "dr",   "prof", "st",
      "no",   "nos",  "fig", "figs", "eq",  "eqs",  "sec",  "art", "vol", "ch",   "approx", "est",  "inc",
      "ltd",  "co",   "corp", "dept", "al", "jan",  "feb",  "mar", "apr", "jun",  "jul",  "aug",  "sep",
      "sept", "oct",  "nov", "dec",  "u.s", "u.k", "u.n",  "e.u", "ca",  "para", "ref",  "tab",  "min",
      "max",  "govt", "int", "mt",   "gt",  "kt"};
  return words;
}

inline bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']' || c == '}'; }

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

inline std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

inline std::vector<std::string> segment_sentences(std::string_view text) {
  using detail::is_closer;
  std::vector<std::string> out;
  auto flush = [&](std::size_t from, std::size_t to) {
    auto s = detail::collapse_whitespace(text.substr(from, to - from));
    if (!s.empty()) out.push_back(std::move(s));
  };
  auto space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };

  const std::size_t n = text.size();
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < n) {
    const char c = text[i];
    if (c == '\n') {
      flush(start, i);
      start = ++i;
      continue;
    }
    if (c != '.' && c != '!' && c != '?') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
    const std::size_t punct_len = j - i;
    while (j < n && is_closer(text[j])) ++j;
    if (j < n && !space(text[j])) {
      i = j;
      continue;
    }
    bool boundary = true;
    if (punct_len == 1 && c == '.') {
      std::size_t w = i;
      while (w > start && !space(text[w - 1])) --w;
      auto word = text.substr(w, i - w);
      while (!word.empty() && (word.front() == '(' || word.front() == '"' || word.front() == '\'')) {
        word.remove_prefix(1);
      }
      if (detail::abbreviations().contains(detail::lower_ascii(word))) boundary = false;
    }
    std::size_t k = j;
    while (k < n && space(text[k]) && text[k] != '\n') ++k;
    if (k < n && std::islower(static_cast<unsigned char>(text[k]))) boundary = false;
    if (boundary) {
      flush(start, j);
      start = j;
    }
    i = j;
  }
  flush(start, n);
  return out;
}

// ---------------------------------------------------------------------------
// Similarity

template <typename T>
double cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw Error(Errc::schema, "cosine similarity of vectors with dimensions " + std::to_string(a.size()) + " and " +
                                  std::to_string(b.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na == 0 || nb == 0) throw Error(Errc::undefined_similarity, "cosine similarity with a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

inline double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  return cosine_similarity(std::span<const float>(a), std::span<const float>(b));
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  return cosine_similarity(std::span<const double>(a), std::span<const double>(b));
}

/// Offline embedder: feature-hashes the lower-cased word multiset of the text
/// into a signed bag-of-words vector and normalizes it to unit length.
class HashEmbedder final : public EmbeddingProvider {
 public:
  explicit HashEmbedder(std::size_t dimension = 256, std::uint64_t seed = 0x5eed) : dim_(dimension), seed_(seed) {
    if (dim_ == 0) throw Error(Errc::invalid_parameter, "embedding dimension must be >= 1");
  }

  std::vector<float> embed(std::string_view text) override {
    std::vector<double> acc(dim_, 0.0);
    std::size_t words = 0;
    std::string word;
    auto add = [&](std::string_view w) {
      const std::uint64_t h = fnv1a(w);
      acc[h % dim_] += (h >> 63) ? -1.0 : 1.0;
      ++words;
    };
    for (char c : text) {
      const auto u = static_cast<unsigned char>(c);
      if (std::isalnum(u) || u >= 0x80) {
        word.push_back(static_cast<char>(std::tolower(u)));
      } else if (!word.empty()) {
        add(word);
        word.clear();
      }
    }
    if (!word.empty()) add(word);
    if (words == 0) add(text);
    double norm = 0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<float> out(dim_, 0.0f);
    if (norm > 0) {
      for (std::size_t i = 0; i < dim_; ++i) out[i] = static_cast<float>(acc[i] / norm);
    } else {
      out[fnv1a(text) % dim_] = 1.0f;  // opposite signs cancelled out
    }
    return out;
  }

  [[nodiscard]] std::size_t dimension() const noexcept { return dim_; }

 private:
  [[nodiscard]] std::uint64_t fnv1a(std::string_view s) const {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ seed_;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    // final avalanche so low bits (used for the bucket) depend on every byte
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h;
  }

  std::size_t dim_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Cosine filter

struct FilterResult {
  std::vector<std::string> kept;
  std::vector<SentenceVerdict> verdicts;

  [[nodiscard]] std::string text() const {
    std::string out;
    for (const auto& s : kept) out += (out.empty() ? "" : " ") + s;
    return out;
  }
};

inline constexpr double kDefaultGroundingThreshold = 0.5;

/// Keeps each sentence whose best cosine score against any chunk reaches the
/// threshold. Sentence order is preserved.
inline FilterResult filter_response(std::string_view response, std::span<const Chunk> chunks,
                                    EmbeddingProvider& embedder, double threshold) {
  if (std::isnan(threshold)) throw Error(Errc::invalid_parameter, "grounding threshold is NaN");
  if (chunks.empty()) throw Error(Errc::invalid_parameter, "grounding needs at least one retrieved chunk");
  FilterResult result;
  const auto sentences = segment_sentences(response);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    std::vector<float> e;
    try {
      e = embedder.embed(sentences[i]);
    } catch (const std::exception& ex) {
      throw StageError("embedding sentence " + std::to_string(i) + " failed: " + ex.what(), i);
    }
    SentenceVerdict v;
    v.sentence = sentences[i];
    double best = -2.0;
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      const double s = cosine_similarity(e, chunks[c].embedding);
      if (s > best) {
        best = s;
        v.best_chunk = c;
      }
    }
    v.support_score = best;
    v.kept = best >= threshold;
    if (v.kept) result.kept.push_back(v.sentence);
    result.verdicts.push_back(std::move(v));
  }
  return result;
}

// ---------------------------------------------------------------------------
// LLM check

/// Versioned prompt for the LLM-judged check. `{sources}` and `{sentences}`
/// are substituted; the reply must be one "<n>:supported|unsupported" line
/// per numbered sentence.
struct VerificationPrompt {
  std::string version = "hc-v1";
  std::string system =
      "You verify whether each sentence of an answer is supported by the given sources. "
      "Use only the sources. Reply with exactly one line per sentence in the form "
      "<number>:supported or <number>:unsupported and nothing else.";
  std::string user_template = "Sources:\n{sources}\n\nSentences:\n{sentences}";
};

namespace detail {

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

inline std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

}  // namespace detail

inline std::string format_sources(std::span<const Chunk> chunks) {
  std::string out;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    out += "[" + std::to_string(i + 1) + "] (" + chunks[i].doc_id;
    if (chunks[i].page) out += " p." + std::to_string(*chunks[i].page);
    out += ") " + chunks[i].text + "\n";
  }
  return out;
}

inline std::string render_verification_prompt(const VerificationPrompt& prompt, std::span<const Chunk> chunks,
                                              std::span<const std::string> sentences) {
  std::string numbered;
  for (std::size_t i = 0; i < sentences.size(); ++i) numbered += std::to_string(i + 1) + ". " + sentences[i] + "\n";
  auto user = detail::replace_all(prompt.user_template, "{sources}", format_sources(chunks));
  return detail::replace_all(std::move(user), "{sentences}", numbered);
}

/// Strict parser: every sentence number 1..n exactly once, nothing else.
inline std::vector<bool> parse_verification_reply(std::string_view reply, std::size_t sentence_count) {
  std::vector<std::optional<bool>> seen(sentence_count);
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    auto nl = reply.find('\n', pos);
    if (nl == std::string_view::npos) nl = reply.size();
    const auto line = detail::lower_ascii(detail::trim(reply.substr(pos, nl - pos)));
    pos = nl + 1;
    if (line.empty()) continue;
    const auto colon = line.find(':');
    auto fail = [&] { throw Error(Errc::verification_format, "unexpected verification line '" + line + "'"); };
    if (colon == std::string::npos || colon == 0) fail();
    const auto num = detail::trim(std::string_view(line).substr(0, colon));
    const auto label = detail::trim(std::string_view(line).substr(colon + 1));
    if (num.empty() || !std::all_of(num.begin(), num.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      fail();
    if (num.size() > 6) fail();
    const auto idx = std::stoul(num);
    if (idx < 1 || idx > sentence_count || seen[idx - 1]) fail();
    if (label == "supported") seen[idx - 1] = true;
    else if (label == "unsupported") seen[idx - 1] = false;
    else fail();
  }
  std::vector<bool> out;
  for (std::size_t i = 0; i < sentence_count; ++i) {
    if (!seen[i]) {
      throw Error(Errc::verification_format, "no verdict for sentence " + std::to_string(i + 1));
    }
    out.push_back(*seen[i]);
  }
  return out;
}

struct LlmCheckResult {
  std::vector<SentenceVerdict> verdicts;
  std::string prompt_text;  // system + user, for token accounting
  ChatReply reply;
  std::optional<std::string> format_error;  // set when the reply did not parse

  [[nodiscard]] std::string kept_text() const {
    std::string out;
    for (const auto& v : verdicts) {
      if (v.kept) out += (out.empty() ? "" : " ") + v.sentence;
    }
    return out;
  }
};

/// Runs the check and keeps the reply even when it fails to parse, so the
/// caller can still account for the call. `verdicts` is empty in that case.
inline LlmCheckResult run_llm_hallucination_check(std::string_view response, std::span<const Chunk> chunks,
                                                  LlmClient& llm, const std::string& model,
                                                  const VerificationPrompt& prompt = {}) {
  LlmCheckResult result;
  const auto sentences = segment_sentences(response);
  if (sentences.empty()) return result;
  ChatRequest req;
  req.model = model;
  req.temperature = 0.0;
  const auto user = render_verification_prompt(prompt, chunks, sentences);
  req.messages = {{"system", prompt.system}, {"user", user}};
  result.prompt_text = prompt.system + "\n" + user;
  result.reply = llm.chat(req);
  std::vector<bool> labels;
  try {
    labels = parse_verification_reply(result.reply.text, sentences.size());
  } catch (const Error& e) {
    result.format_error = e.what();
    return result;
  }
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    SentenceVerdict v;
    v.sentence = sentences[i];
    v.supported = labels[i];
    v.kept = labels[i];
    result.verdicts.push_back(std::move(v));
  }
  return result;
}

/// One verdict per sentence; an unparseable reply is a verification-format
/// error rather than a silent pass.
inline std::vector<SentenceVerdict> llm_hallucination_check(std::string_view response, std::span<const Chunk> chunks,
                                                            LlmClient& llm, const std::string& model,
                                                            const VerificationPrompt& prompt = {}) {
  auto result = run_llm_hallucination_check(response, chunks, llm, model, prompt);
  if (result.format_error) throw Error(Errc::verification_format, *result.format_error);
  return std::move(result.verdicts);
}

}  // namespace ragenergy
