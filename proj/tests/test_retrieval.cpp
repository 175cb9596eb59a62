#include <gtest/gtest.h>

#include <algorithm>

#include "ragenergy/dataset.hpp"
#include "ragenergy/vector_store.hpp"
#include "test_support.hpp"

using namespace ragenergy;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

Chunk make(std::string id, std::vector<float> e, std::optional<std::string> collection = std::nullopt) {
  Chunk c;
  c.doc_id = std::move(id);
  c.text = "text of " + c.doc_id;
  c.embedding = std::move(e);
  c.collection = std::move(collection);
  return c;
}

}  // namespace

TEST(VectorStore, TopKByCosine) {
  VectorStore store;
  store.add(make("far", {0, 1}));
  store.add(make("near", {1, 0.1f}));
  store.add(make("mid", {1, 1}));
  const auto top = retrieve(std::vector<float>{1, 0}, store, 2);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0].doc_id, "near");
  EXPECT_EQ(top[1].doc_id, "mid");
  EXPECT_EQ(retrieve(std::vector<float>{1, 0}, store, 10).size(), 3u);
}

TEST(VectorStore, TiesBreakByDocIdThenIndex) {
  VectorStore store;
  store.add(make("b", {1, 0}));
  store.add(make("a", {2, 0}));
  store.add(make("a", {3, 0}));
  const auto top = retrieve(std::vector<float>{1, 0}, store, 3);
  EXPECT_EQ(top[0].doc_id, "a");
  EXPECT_EQ(top[0].index, 1u);
  EXPECT_EQ(top[1].index, 2u);
  EXPECT_EQ(top[2].doc_id, "b");
}

TEST(VectorStore, CollectionFilter) {
  VectorStore store;
  store.add(make("x", {1, 0}, "ndc_targets"));
  store.add(make("y", {0.9f, 0.1f}, "general"));
  const auto top = retrieve(std::vector<float>{1, 0}, store, 5, std::string("general"));
  ASSERT_EQ(top.size(), 1u);
  EXPECT_EQ(top[0].doc_id, "y");
  EXPECT_TRUE(store.has_collection("ndc_targets"));
  EXPECT_FALSE(store.has_collection("ndc_finance"));
}

TEST(VectorStore, Errors) {
  VectorStore empty;
  try {
    (void)retrieve(std::vector<float>{1, 0}, empty, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::retrieval);
  }
  VectorStore store;
  store.add(make("a", {1, 0}));
  EXPECT_THROW((void)retrieve(std::vector<float>{1, 0}, store, 0), Error);
  EXPECT_THROW(store.add(make("b", {1, 0, 0})), Error);
  EXPECT_THROW((void)retrieve(std::vector<float>{1, 0, 0}, store, 1), Error);
  Chunk blank = make("c", {1, 0});
  blank.text.clear();
  EXPECT_THROW(store.add(blank), Error);
}

TEST(VectorStore, LoadsJsonlAndEmbedsMissingVectors) {
  TempDir dir;
  const auto path = dir.file("corpus.jsonl");
  write_file(path,
             "{\"doc_id\":\"d1\",\"page\":3,\"text\":\"coal phase out by 2040\",\"collection\":\"ndc_mitigation\"}\n"
             "\n"
             "{\"doc_id\":\"d2\",\"text\":\"drought resilience and water harvesting\"}\n");
  auto store = VectorStore::load_jsonl(path, std::make_shared<HashEmbedder>(32));
  ASSERT_EQ(store.size(), 2u);
  EXPECT_EQ(store.dimension(), 32u);
  EXPECT_EQ(*store.chunks()[0].page, 3);
  EXPECT_FALSE(store.chunks()[1].page.has_value());
  const auto top = retrieve("when will coal be phased out", store, 1);
  EXPECT_EQ(top[0].doc_id, "d1");
}

TEST(VectorStore, MalformedLineNamesLine) {
  TempDir dir;
  const auto path = dir.file("corpus.jsonl");
  write_file(path, "{\"doc_id\":\"d1\",\"text\":\"ok\"}\n{\"doc_id\":7,\"text\":\"bad\"}\n");
  try {
    (void)VectorStore::load_jsonl(path, std::make_shared<HashEmbedder>(8));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::schema);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
}

TEST(VectorStore, BundledCorpusLoads) {
  auto store = VectorStore::load_jsonl(testing_support::sample("corpus.jsonl"), std::make_shared<HashEmbedder>());
  EXPECT_GT(store.size(), 10u);
  EXPECT_TRUE(store.has_collection("general"));
}

TEST(Csv, QuotedFieldsAndLineEndings) {
  const auto rows = csv::parse("a,b,c\r\n\"x, y\",\"he said \"\"hi\"\"\",\n\"multi\nline\",2,3");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][0], "x, y");
  EXPECT_EQ(rows[1][1], "he said \"hi\"");
  EXPECT_EQ(rows[1][2], "");
  EXPECT_EQ(rows[2][0], "multi\nline");
  EXPECT_EQ(csv::quote("plain"), "plain");
  EXPECT_EQ(csv::quote("a,b"), "\"a,b\"");
}

TEST(Dataset, BundledSampleHasExpectedComposition) {
  const auto qs = load_questions(testing_support::sample("questions.csv"));
  EXPECT_EQ(qs.size(), 102u);
  EXPECT_EQ(std::count_if(qs.begin(), qs.end(), [](const QuestionItem& q) { return q.bloom_class == BloomClass::knowledge; }),
            48);
  for (auto c : {BloomClass::comprehension, BloomClass::application, BloomClass::analysis, BloomClass::evaluation,
                 BloomClass::creation}) {
    EXPECT_GT(std::count_if(qs.begin(), qs.end(), [c](const QuestionItem& q) { return q.bloom_class == c; }), 0);
  }
  EXPECT_EQ(qs[2].text, "What is the total emissions reduction target of Malaysia?");
  EXPECT_EQ(qs[0].tags, (std::vector<std::string>{"targets", "entities"}));
}

TEST(Dataset, Errors) {
  TempDir dir;
  auto expect_validation = [&](const std::string& name, const std::string& content, const std::string& needle) {
    write_file(dir.file(name), content);
    try {
      (void)load_questions(dir.file(name));
      FAIL() << name;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::validation) << e.what();
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_validation("empty.csv", "", "empty");
  expect_validation("recall.csv", "id,text,bloom_class,tags\nq1,What?,Knowledge,\nq2,Why?,Recall,\n", "row 3");
  expect_validation("blank.csv", "id,text,bloom_class\nq1,,Knowledge\n", "empty text");
  expect_validation("dup.csv", "id,text,bloom_class\nq1,A?,Knowledge\nq1,B?,Analysis\n", "duplicate");
  expect_validation("nocol.csv", "id,question\nq1,A?\n", "missing column");
}

TEST(Dataset, JsonFormat) {
  TempDir dir;
  write_file(dir.file("q.json"),
             R"([{"id":"a","text":"What?","bloom_class":"analysis","tags":["x","y"]},{"id":"b","text":"Why?","bloom_class":"Creation","tags":"p;q"}])");
  const auto qs = load_questions(dir.file("q.json"));
  ASSERT_EQ(qs.size(), 2u);
  EXPECT_EQ(qs[0].bloom_class, BloomClass::analysis);
  EXPECT_EQ(qs[1].tags, (std::vector<std::string>{"p", "q"}));
}
