#include <random>

#include <gtest/gtest.h>

#include "evads/text.hpp"
#include "support/synth.hpp"

using namespace evads::text;

TEST(Utf8, DecodeEncodeRoundTrip) {
  const std::string s = "a猫😀é한";
  const auto cps = decode_utf8(s);
  ASSERT_EQ(cps.size(), 5u);
  EXPECT_EQ(cps[1], U'猫');
  EXPECT_EQ(cps[2], U'😀');
  EXPECT_EQ(encode_utf8(cps), s);
  EXPECT_EQ(codepoint_count(s), 5u);
}

TEST(Utf8, InvalidBytesDecodeOneAtATime) {
  const std::string bad = "a\xff\xfe" "b";
  const auto cps = decode_utf8(bad);
  ASSERT_EQ(cps.size(), 4u);
  EXPECT_EQ(cps[1], 0xFFFDu);
  EXPECT_EQ(cps[2], 0xFFFDu);
  EXPECT_EQ(codepoint_offsets(bad).back(), bad.size());
}

TEST(Utf8, RandomMixedTextRoundTrips) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const std::string s = evads::testing::random_mixed_text(rng, static_cast<std::size_t>(i % 40));
    EXPECT_EQ(encode_utf8(decode_utf8(s)), s);
    EXPECT_EQ(codepoint_count(s), static_cast<std::size_t>(i % 40));
  }
}

TEST(WordCount, LatinTokens) {
  EXPECT_EQ(word_count("the quick brown fox jumps over a lazy dog sir"), 10u);
  EXPECT_EQ(word_count(""), 0u);
  EXPECT_EQ(word_count("   "), 0u);
  EXPECT_EQ(word_count("hello , world !"), 2u);
  EXPECT_EQ(word_count("No.1 deal"), 2u);
}

TEST(WordCount, CjkCountsPerCharacter) {
  EXPECT_EQ(word_count("限时特价全新防水"), 8u);
  EXPECT_EQ(word_count("买two件"), 3u);
  EXPECT_EQ(word_count("ありがとう"), 5u);
  EXPECT_EQ(word_count("감사합니다"), 5u);
  EXPECT_EQ(word_count("限时，特价"), 4u);
}

TEST(WordCount, FullWidthSpaceSeparates) { EXPECT_EQ(word_count("buy　now"), 2u); }

TEST(Strings, TrimAndCollapse) {
  EXPECT_EQ(trim("  a b \n"), "a b");
  EXPECT_EQ(trim("　猫　"), "猫");
  EXPECT_EQ(collapse_whitespace(" a \t\n b  c "), "a b c");
  EXPECT_EQ(to_lower_ascii("AbC猫"), "abc猫");
}

TEST(Hash, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}
