#include <cstring>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "evads/corpus.hpp"
#include "support/expect.hpp"
#include "support/synth.hpp"

using namespace evads;
using evads::testing::TempDir;
using evads::testing::write_file;
using json = nlohmann::json;

namespace {

Manifest parse(const std::string& text) {
  std::istringstream in(text);
  return parse_manifest(in, "m.jsonl");
}

const char* kTwoRecords =
    R"({"video_id":"v1","duration_s":12.5,"category":"beauty","metadata":{"brand":"x"}})"
    "\n"
    R"({"video_id":"v2","duration_s":3,"category":"home","asr_ref":"asr/v2.jsonl"})"
    "\n";

}  // namespace

TEST(Manifest, LoadsValidRecords) {
  const Manifest m = parse(kTwoRecords);
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_EQ(m.records[0].video_id, "v1");
  EXPECT_EQ(m.records[0].metadata.at("brand"), "x");
  EXPECT_EQ(m.records[0].duration_ms(), 12500);
  EXPECT_EQ(m.records[0].duration_seconds_ceil(), 13);
  EXPECT_EQ(*m.records[1].asr_ref, "asr/v2.jsonl");
  EXPECT_FALSE(m.records[1].ocr_ref.has_value());
}

TEST(Manifest, DuplicateIdNamesTheId) {
  try {
    parse(R"({"video_id":"v1","duration_s":1})"
          "\n"
          R"({"video_id":"v1","duration_s":2})"
          "\n");
    FAIL() << "expected duplicate-id error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDuplicateId);
    EXPECT_EQ(e.details(), std::vector<std::string>{"v1"});
    EXPECT_NE(std::string(e.what()).find("v1"), std::string::npos);
  }
}

TEST(Manifest, ZeroDurationRejected) {
  EXPECT_ERROR_KIND(parse(R"({"video_id":"v1","duration_s":0})"), ErrorKind::kValidation);
  EXPECT_ERROR_KIND(parse(R"({"video_id":"v1","duration_s":-2})"), ErrorKind::kValidation);
}

TEST(Manifest, ParseErrorCarriesLine) {
  try {
    parse(std::string(R"({"video_id":"v1","duration_s":1})") + "\n{not json\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
  }
  try {
    parse(R"({"video_id":"v1","duration_s":"long"})");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST(Manifest, UnknownFieldIsParseError) {
  EXPECT_ERROR_KIND(parse(R"({"video_id":"v1","duration_s":1,"colour":"red"})"), ErrorKind::kParse);
}

TEST(Manifest, SchemaVersionHeader) {
  const Manifest m = parse(std::string(R"({"schema_version":1})") + "\n" + kTwoRecords);
  EXPECT_EQ(m.records.size(), 2u);
  EXPECT_ERROR_KIND(parse(R"({"schema_version":9})"), ErrorKind::kVersion);
}

TEST(Manifest, RoundTripIsByteStable) {
  const Manifest m = parse(kTwoRecords);
  std::ostringstream a;
  write_manifest(a, m);
  const Manifest again = parse(a.str());
  std::ostringstream b;
  write_manifest(b, again);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(m.records, again.records);
}

TEST(Manifest, MissingFileIsArtifactMissing) {
  EXPECT_ERROR_KIND(load_manifest("/nonexistent/manifest.jsonl"), ErrorKind::kArtifactMissing);
}

TEST(Artifacts, OnlyReferencedOnesLoad) {
  TempDir dir;
  write_file(dir / "asr/v2.jsonl", R"({"start_s":0,"end_s":1.5,"text":"hello"})"
                                   "\n");
  write_file(dir / "manifest.jsonl", kTwoRecords);
  const Manifest m = load_manifest(dir / "manifest.jsonl");
  const Artifacts a = load_artifacts(m.records[1], m.base_dir);
  EXPECT_FALSE(a.embeddings);
  ASSERT_TRUE(a.asr);
  EXPECT_EQ(a.asr->at(0).text, "hello");
  EXPECT_FALSE(a.ocr);
}

TEST(Artifacts, MissingReferencedFile) {
  const Manifest m = parse(kTwoRecords);
  EXPECT_ERROR_KIND(load_artifacts(m.records[1], "/nonexistent"), ErrorKind::kArtifactMissing);
}

TEST(Artifacts, OcrSecondOutOfRange) {
  TempDir dir;
  write_file(dir / "ocr.jsonl", R"({"second_index":3,"texts":["x"]})"
                                "\n");
  VideoRecord r{"v", 3.0, "c", {}, std::nullopt, std::nullopt, std::string((dir / "ocr.jsonl").string())};
  EXPECT_ERROR_KIND(load_artifacts(r), ErrorKind::kValidation);
  r.duration_s = 3.2;
  EXPECT_NO_THROW(load_artifacts(r));
}

TEST(Artifacts, AsrOrderingAndOvershoot) {
  VideoRecord r{"v", 4.0, "c", {}, {}, {}, {}};
  EXPECT_NO_THROW(validate_asr({{0, 1, "a"}, {1, 4.9, "b"}}, r));
  EXPECT_ERROR_KIND(validate_asr({{0, 1, "a"}, {1, 5.1, "b"}}, r), ErrorKind::kValidation);
  EXPECT_ERROR_KIND(validate_asr({{2, 3, "a"}, {1, 2, "b"}}, r), ErrorKind::kValidation);
  EXPECT_ERROR_KIND(validate_asr({{2, 2, "a"}}, r), ErrorKind::kValidation);
}

TEST(Embeddings, BinaryRoundTrip) {
  TempDir dir;
  FrameEmbeddingSequence seq{"v", 3, {{1, 0, 0}, {0.5f, -2, 3}}};
  write_embeddings(dir / "e.evem", seq);
  const auto back = read_embeddings(dir / "e.evem", "v");
  EXPECT_EQ(back.dim, 3u);
  EXPECT_EQ(back.vectors, seq.vectors);

  std::ifstream in(dir / "e.evem", std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "EVEM");
}

TEST(Embeddings, RaggedDimensionsAreShapeErrors) {
  FrameEmbeddingSequence seq{"v", 4, {{1, 0, 0, 0}, {1, 0, 0, 0, 0, 0, 0, 1}}};
  EXPECT_ERROR_KIND(validate_embeddings(seq), ErrorKind::kShape);

  TempDir dir;
  write_embeddings(dir / "e.evem", FrameEmbeddingSequence{"v", 4, {{1, 0, 0, 0}}});
  write_file(dir / "e.evem.json", json{{"video_id", "v"}, {"fps", 1}, {"frames", 1}, {"dim", 8}}.dump());
  EXPECT_ERROR_KIND(read_embeddings(dir / "e.evem"), ErrorKind::kShape);
}

TEST(Embeddings, ZeroVectorIsIngestError) {
  EXPECT_ERROR_KIND(validate_embeddings(FrameEmbeddingSequence{"v", 2, {{1, 1}, {0, 0}}}), ErrorKind::kIngest);
  EXPECT_ERROR_KIND(validate_embeddings(FrameEmbeddingSequence{"v", 2, {}}), ErrorKind::kIngest);
}

TEST(Embeddings, TruncatedOrBadMagic) {
  TempDir dir;
  write_file(dir / "bad.evem", "NOPE");
  EXPECT_ERROR_KIND(read_embeddings(dir / "bad.evem"), ErrorKind::kParse);
  std::string body = "EVEM";
  const std::uint32_t hdr[2] = {2, 2};
  body.append(reinterpret_cast<const char*>(hdr), sizeof hdr);
  body.append(4, '\0');
  write_file(dir / "short.evem", body);
  EXPECT_ERROR_KIND(read_embeddings(dir / "short.evem"), ErrorKind::kParse);
}

TEST(Corpus, SyntheticWriterRoundTrips) {
  TempDir dir;
  const auto v = evads::testing::make_video("s1", 6.5, "food", 11);
  const Manifest m = evads::testing::write_corpus(dir.path(), {v});
  const Artifacts a = load_artifacts(m.records[0], m.base_dir);
  ASSERT_TRUE(a.embeddings && a.asr && a.ocr);
  EXPECT_EQ(a.embeddings->vectors, v.embeddings.vectors);
  EXPECT_EQ(*a.asr, v.asr);
  EXPECT_EQ(*a.ocr, v.ocr);
}
