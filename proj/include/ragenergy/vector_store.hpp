#pragma once

#include <algorithm>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ragenergy/error.hpp"
#include "ragenergy/grounding.hpp"

namespace ragenergy {

/// In-memory brute-force cosine index over a corpus of chunks.
class VectorStore {
 public:
  explicit VectorStore(std::shared_ptr<EmbeddingProvider> embedder = nullptr) : embedder_(std::move(embedder)) {}

  /// One chunk per line: {"doc_id", "page"?, "text", "embedding"?, "collection"?}.
  /// Chunks without an embedding are embedded with the store's provider.
  static VectorStore load_jsonl(const std::string& path, std::shared_ptr<EmbeddingProvider> embedder) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io, "cannot read corpus '" + path + "'");
    VectorStore store(std::move(embedder));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      auto bad = [&](const std::string& why) {
        throw Error(Errc::schema, path + ":" + std::to_string(lineno) + ": " + why);
      };
      if (j.is_discarded() || !j.is_object()) bad("not a JSON object");
      if (!j.contains("doc_id") || !j["doc_id"].is_string()) bad("doc_id must be a string");
      if (!j.contains("text") || !j["text"].is_string()) bad("text must be a string");
      Chunk c;
      c.doc_id = j["doc_id"].get<std::string>();
      c.text = j["text"].get<std::string>();
      if (auto p = j.find("page"); p != j.end() && !p->is_null()) {
        if (!p->is_number_integer()) bad("page must be an integer");
        c.page = p->get<int>();
      }
      if (auto e = j.find("embedding"); e != j.end() && !e->is_null()) {
        if (!e->is_array()) bad("embedding must be an array of numbers");
        c.embedding = e->get<std::vector<float>>();
      }
      if (auto col = j.find("collection"); col != j.end() && col->is_string()) c.collection = col->get<std::string>();
      try {
        store.add(std::move(c));
      } catch (const Error& e) {
        bad(e.what());
      }
    }
    return store;
  }

  void add(Chunk chunk) {
    if (chunk.text.empty()) throw Error(Errc::schema, "chunk text must be non-empty");
    if (chunk.embedding.empty()) {
      if (!embedder_) throw Error(Errc::configuration, "chunk has no embedding and the store has no embedder");
      chunk.embedding = embedder_->embed(chunk.text);
    }
    if (!chunks_.empty() && chunk.embedding.size() != chunks_.front().embedding.size()) {
      throw Error(Errc::schema, "chunk embedding dimension " + std::to_string(chunk.embedding.size()) +
                                    " differs from corpus dimension " +
                                    std::to_string(chunks_.front().embedding.size()));
    }
    chunk.index = chunks_.size();
    chunks_.push_back(std::move(chunk));
  }

  [[nodiscard]] std::size_t size() const noexcept { return chunks_.size(); }
  [[nodiscard]] bool empty() const noexcept { return chunks_.empty(); }
  [[nodiscard]] const std::vector<Chunk>& chunks() const noexcept { return chunks_; }
  [[nodiscard]] std::size_t dimension() const { return chunks_.empty() ? 0 : chunks_.front().embedding.size(); }
  [[nodiscard]] EmbeddingProvider* embedder() const noexcept { return embedder_.get(); }

  [[nodiscard]] bool has_collection(std::string_view name) const {
    return std::any_of(chunks_.begin(), chunks_.end(), [&](const Chunk& c) { return c.collection == name; });
  }

 private:
  std::shared_ptr<EmbeddingProvider> embedder_;
  std::vector<Chunk> chunks_;
};

struct ScoredChunk {
  double score = 0;
  const Chunk* chunk = nullptr;
};

/// All chunks (optionally restricted to one collection) ranked by cosine
/// similarity to `query`: score descending, then (doc_id, index) ascending.
inline std::vector<ScoredChunk> rank_chunks(const std::vector<float>& query, const VectorStore& store,
                                            const std::optional<std::string>& collection = std::nullopt) {
  std::vector<ScoredChunk> scored;
  for (const auto& c : store.chunks()) {
    if (collection && c.collection != *collection) continue;
    scored.push_back({cosine_similarity(query, c.embedding), &c});
  }
  std::sort(scored.begin(), scored.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.chunk->doc_id, a.chunk->index) < std::tie(b.chunk->doc_id, b.chunk->index);
  });
  return scored;
}

inline std::vector<Chunk> retrieve(const std::vector<float>& query, const VectorStore& store, std::size_t top_k,
                                   const std::optional<std::string>& collection = std::nullopt) {
  if (store.empty()) throw Error(Errc::retrieval, "vector store is empty");
  if (top_k < 1) throw Error(Errc::invalid_parameter, "top_k must be >= 1");
  auto scored = rank_chunks(query, store, collection);
  std::vector<Chunk> out;
  for (std::size_t i = 0; i < scored.size() && i < top_k; ++i) out.push_back(*scored[i].chunk);
  return out;
}

inline std::vector<Chunk> retrieve(std::string_view query, const VectorStore& store, std::size_t top_k,
                                   const std::optional<std::string>& collection = std::nullopt) {
  if (store.empty()) throw Error(Errc::retrieval, "vector store is empty");
  if (!store.embedder()) throw Error(Errc::configuration, "vector store has no embedder for queries");
  return retrieve(store.embedder()->embed(query), store, top_k, collection);
}

}  // namespace ragenergy
