#include <doctest.h>

#include <fstream>

#include "prism/vocab.hpp"
#include "support.hpp"

using namespace prism;
using namespace prism::vocab;
using prism::timeline::TokenDocument;

TEST_CASE("count_frequencies are exact multiset counts") {
  std::vector<TokenDocument> docs = {{"a", {"A", "A", "B"}}};
  auto counts = count_frequencies(docs);
  CHECK(counts.size() == 2);
  CHECK(counts.at("A") == 2);
  CHECK(counts.at("B") == 1);

  std::vector<TokenDocument> empty;
  CHECK(count_frequencies(empty).empty());
}

TEST_CASE("count_frequencies matches a naive one-pass counter on 1000 documents") {
  Rng rng(12);
  const std::vector<std::string> alphabet = {"DX_1", "DX_2", "LAB_A_NORMAL", "LAB_B_HIGH",
                                             "ADMIT_EMERGENCY", "DISCHARGE_HOME"};
  std::vector<TokenDocument> docs;
  std::map<std::string, std::uint64_t> naive;
  for (int d = 0; d < 1000; ++d) {
    TokenDocument doc;
    doc.subject_id = std::to_string(d);
    std::size_t n = rng.below(20);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& token = alphabet[rng.below(alphabet.size())];
      doc.tokens.push_back(token);
      naive[token] += 1;
    }
    docs.push_back(std::move(doc));
  }
  CHECK(count_frequencies(docs) == naive);
}

TEST_CASE("build keeps the most frequent tokens with specials pinned") {
  std::map<std::string, std::uint64_t> counts = {{"A", 5}, {"B", 3}, {"C", 1}};
  auto v = Vocabulary::build(counts, 4);
  CHECK(v.size() == 4);
  CHECK(v.lookup("[PAD]") == 0);
  CHECK(v.lookup("[UNK]") == 1);
  CHECK(v.lookup("A") == 2);
  CHECK(v.lookup("B") == 3);
  CHECK_FALSE(v.lookup("C").has_value());
}

TEST_CASE("build keeps everything under capacity") {
  std::map<std::string, std::uint64_t> counts;
  for (int i = 0; i < 50; ++i) counts["TOK_" + std::to_string(i)] = static_cast<std::uint64_t>(i + 1);
  auto v = Vocabulary::build(counts, 10000);
  CHECK(v.size() == 52);
}

TEST_CASE("count ties break lexicographically") {
  std::map<std::string, std::uint64_t> counts = {{"B", 2}, {"A", 2}};
  auto v = Vocabulary::build(counts, 3);
  CHECK(v.size() == 3);
  CHECK(v.lookup("A") == 2);
  CHECK_FALSE(v.lookup("B").has_value());
}

TEST_CASE("max_size below 2 is a configuration error") {
  CHECK_THROWS_AS(Vocabulary::build({}, 1), ConfigError);
}

TEST_CASE("coverage ordering: every kept token outranks every dropped token") {
  Rng rng(77);
  std::map<std::string, std::uint64_t> counts;
  for (int i = 0; i < 200; ++i) counts["T" + std::to_string(i)] = rng.below(40);
  auto v = Vocabulary::build(counts, 64);
  for (const auto& [kept, count_kept] : counts) {
    if (!v.lookup(kept)) continue;
    for (const auto& [dropped, count_dropped] : counts) {
      if (v.lookup(dropped)) continue;
      bool ok = count_kept > count_dropped || (count_kept == count_dropped && kept < dropped);
      CHECK(ok);
    }
  }
}

TEST_CASE("json round trip preserves the mapping and the bytes") {
  std::map<std::string, std::uint64_t> counts = {{"DX_786.50", 9}, {"ADMIT_EMERGENCY", 7}, {"X", 1}};
  auto v = Vocabulary::build(counts, 10);
  auto dir = testsupport::fresh_dir("vocab_roundtrip");
  v.save(dir / "vocab.json");
  auto loaded = Vocabulary::load(dir / "vocab.json");
  CHECK(loaded.size() == v.size());
  for (std::int32_t id = 0; id < static_cast<std::int32_t>(v.size()); ++id) {
    CHECK(loaded.token_of(id) == v.token_of(id));
  }
  loaded.save(dir / "vocab2.json");
  CHECK(prism::manifest::hash_tree(dir / "vocab.json") == prism::manifest::hash_tree(dir / "vocab2.json"));
  CHECK(v.to_json_string().find("{\"[PAD]\":0,\"[UNK]\":1,") == 0);
}

TEST_CASE("load rejects files missing the specials") {
  auto dir = testsupport::fresh_dir("vocab_bad");
  {
    std::ofstream out(dir / "no_pad.json");
    out << R"({"[UNK]":0,"X":1})";
  }
  CHECK_THROWS_AS(Vocabulary::load(dir / "no_pad.json"), ValidationError);
  {
    std::ofstream out(dir / "dup.json");
    out << R"({"[PAD]":0,"[UNK]":1,"X":1})";
  }
  CHECK_THROWS_AS(Vocabulary::load(dir / "dup.json"), ValidationError);
  {
    std::ofstream out(dir / "gap.json");
    out << R"({"[PAD]":0,"[UNK]":1,"X":5})";
  }
  CHECK_THROWS_AS(Vocabulary::load(dir / "gap.json"), ValidationError);
  {
    std::ofstream out(dir / "garbage.json");
    out << "not json";
  }
  CHECK_THROWS_AS(Vocabulary::load(dir / "garbage.json"), ValidationError);
}

TEST_CASE("a hand-written three-entry file loads") {
  auto dir = testsupport::fresh_dir("vocab_hand");
  {
    std::ofstream out(dir / "vocab.json");
    out << R"({"[PAD]":0,"[UNK]":1,"X":2})";
  }
  auto v = Vocabulary::load(dir / "vocab.json");
  CHECK(v.size() == 3);
  CHECK(v.lookup("X") == 2);
}

TEST_CASE("encode maps out-of-vocabulary tokens to [UNK]") {
  auto v = Vocabulary::build({{"A", 3}}, 3);
  std::vector<std::string> doc = {"A", "Z"};
  CHECK(v.encode(doc) == std::vector<std::int32_t>{2, 1});
  CHECK(v.encode(std::vector<std::string>{}).empty());
}

TEST_CASE("decode inverts the mapping and rejects bad ids") {
  auto v = Vocabulary::build({{"A", 3}}, 3);
  std::vector<std::int32_t> pad = {0}, unk = {1}, bad = {9};
  CHECK(v.decode(pad) == std::vector<std::string>{"[PAD]"});
  CHECK(v.decode(unk) == std::vector<std::string>{"[UNK]"});
  CHECK_THROWS_AS(v.decode(bad), ValidationError);
}

TEST_CASE("encode and decode are inverse on in-vocabulary data") {
  std::map<std::string, std::uint64_t> counts;
  for (int i = 0; i < 30; ++i) counts["TOK_" + std::to_string(i)] = static_cast<std::uint64_t>(100 - i);
  auto v = Vocabulary::build(counts, 40);
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> doc;
    for (std::size_t i = rng.below(25); i > 0; --i) {
      doc.push_back("TOK_" + std::to_string(rng.below(30)));
    }
    CHECK(v.decode(v.encode(doc)) == doc);

    std::vector<std::int32_t> ids;
    for (std::size_t i = rng.below(25); i > 0; --i) {
      ids.push_back(static_cast<std::int32_t>(2 + rng.below(v.size() - 2)));
    }
    CHECK(v.encode(v.decode(ids)) == ids);
  }
}

TEST_CASE("build is a pure function of counts and max_size") {
  std::map<std::string, std::uint64_t> counts = {{"A", 2}, {"B", 2}, {"C", 7}};
  CHECK(Vocabulary::build(counts, 4).to_json_string() == Vocabulary::build(counts, 4).to_json_string());
}
