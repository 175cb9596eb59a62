#pragma once

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ragenergy/csv.hpp"
#include "ragenergy/error.hpp"

namespace ragenergy {

enum class BloomClass { knowledge, comprehension, application, analysis, evaluation, creation };

inline constexpr std::array<std::string_view, 6> kBloomNames = {"Knowledge", "Comprehension", "Application",
                                                                "Analysis",  "Evaluation",    "Creation"};

constexpr std::string_view to_string(BloomClass c) noexcept { return kBloomNames[static_cast<std::size_t>(c)]; }

inline std::optional<BloomClass> parse_bloom_class(std::string_view text) {
  for (std::size_t i = 0; i < kBloomNames.size(); ++i) {
    if (kBloomNames[i].size() != text.size()) continue;
    if (std::equal(text.begin(), text.end(), kBloomNames[i].begin(),
                   [](char a, char b) { return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b)); })) {
      return static_cast<BloomClass>(i);
    }
  }
  return std::nullopt;
}

struct QuestionItem {
  std::string id;
  std::string text;
  BloomClass bloom_class = BloomClass::knowledge;
  std::vector<std::string> tags;
};

namespace detail {

inline std::vector<std::string> split_tags(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto end = s.find(';', pos);
    if (end == std::string_view::npos) end = s.size();
    auto tag = s.substr(pos, end - pos);
    while (!tag.empty() && tag.front() == ' ') tag.remove_prefix(1);
    while (!tag.empty() && tag.back() == ' ') tag.remove_suffix(1);
    if (!tag.empty()) out.emplace_back(tag);
    pos = end + 1;
  }
  return out;
}

inline QuestionItem make_question(std::string id, std::string text, std::string_view bloom, std::vector<std::string> tags,
                                  const std::string& where) {
  if (id.empty()) throw Error(Errc::validation, where + ": empty question id");
  if (text.empty()) throw Error(Errc::validation, where + ": question '" + id + "' has empty text");
  auto cls = parse_bloom_class(bloom);
  if (!cls) {
    throw Error(Errc::validation, where + ": question '" + id + "' has unknown bloom_class '" + std::string(bloom) +
                                      "' (expected Knowledge, Comprehension, Application, Analysis, Evaluation, Creation)");
  }
  return {std::move(id), std::move(text), *cls, std::move(tags)};
}

}  // namespace detail

/// Reads a question dataset: CSV with header (id, text, bloom_class, tags)
/// where tags are ';'-separated, or a JSON array of objects with the same
/// keys. Order is preserved; duplicate ids are rejected.
inline std::vector<QuestionItem> load_questions(const std::string& path) {
  const auto content = csv::read_file(path);
  std::vector<QuestionItem> items;
  const bool is_json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
  if (is_json) {
    const auto j = nlohmann::json::parse(content, nullptr, false);
    if (j.is_discarded() || !j.is_array()) throw Error(Errc::validation, path + ": expected a JSON array of questions");
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto& q = j[i];
      const auto where = path + " item " + std::to_string(i);
      if (!q.is_object()) throw Error(Errc::validation, where + ": not an object");
      std::vector<std::string> tags;
      if (auto t = q.find("tags"); t != q.end()) {
        if (t->is_array()) tags = t->get<std::vector<std::string>>();
        else if (t->is_string()) tags = detail::split_tags(t->get<std::string>());
      }
      items.push_back(detail::make_question(q.value("id", std::string()), q.value("text", std::string()),
                                            q.value("bloom_class", std::string()), std::move(tags), where));
    }
  } else {
    csv::Table table(csv::parse(content));
    for (const char* col : {"id", "text", "bloom_class"}) {
      if (table.size() > 0 && !table.has(col)) throw Error(Errc::validation, path + ": missing column '" + col + "'");
    }
    for (std::size_t r = 0; r < table.size(); ++r) {
      const auto where = path + " row " + std::to_string(r + 2);
      items.push_back(detail::make_question(table.get(r, "id"), table.get(r, "text"), table.get(r, "bloom_class"),
                                            table.has("tags") ? detail::split_tags(table.get(r, "tags"))
                                                              : std::vector<std::string>{},
                                            where));
    }
  }
  if (items.empty()) throw Error(Errc::validation, path + ": dataset is empty");
  std::set<std::string> ids;
  for (const auto& q : items) {
    if (!ids.insert(q.id).second) throw Error(Errc::validation, path + ": duplicate question id '" + q.id + "'");
  }
  return items;
}

}  // namespace ragenergy
