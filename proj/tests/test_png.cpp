#include <gtest/gtest.h>

#include "orthorep/png.hpp"
#include "orthorep/rng.hpp"
#include "support/temp_dir.hpp"

using namespace orthorep;
using orthorep::testing::TempDir;

namespace {

PngImage random_image(std::uint32_t w, std::uint32_t h, int bit_depth, std::uint64_t seed) {
  SplitMix64 g(seed);
  PngImage img;
  img.width = w;
  img.height = h;
  img.bit_depth = bit_depth;
  const std::uint64_t maxv = bit_depth == 16 ? 65535 : 255;
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h * 3; ++i)
    img.rgb.push_back(static_cast<std::uint16_t>(g.next() % (maxv + 1)));
  return img;
}

}  // namespace

TEST(Png, EightBitRoundTrip) {
  PngImage img = random_image(37, 19, 8, 1);
  img.text = {{"orthorep:layout", "{\"a\":1}"}, {"comment", "hello"}};
  const PngImage back = decode_png(encode_png(img));
  EXPECT_EQ(back.width, 37u);
  EXPECT_EQ(back.height, 19u);
  EXPECT_EQ(back.bit_depth, 8);
  EXPECT_EQ(back.rgb, img.rgb);
  ASSERT_NE(back.find_text("orthorep:layout"), nullptr);
  EXPECT_EQ(*back.find_text("orthorep:layout"), "{\"a\":1}");
  EXPECT_EQ(*back.find_text("comment"), "hello");
  EXPECT_EQ(back.find_text("missing"), nullptr);
}

TEST(Png, SixteenBitRoundTrip) {
  const PngImage img = random_image(8, 64, 16, 2);
  const PngImage back = decode_png(encode_png(img));
  EXPECT_EQ(back.bit_depth, 16);
  EXPECT_EQ(back.rgb, img.rgb);
}

TEST(Png, SignatureAndFileRoundTrip) {
  TempDir dir;
  const PngImage img = random_image(5, 4, 8, 3);
  write_png(dir / "a.png", img);
  const std::string bytes = orthorep::testing::slurp(dir / "a.png");
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(0, 8), std::string("\x89PNG\r\n\x1a\n", 8));
  EXPECT_EQ(read_png(dir / "a.png").rgb, img.rgb);
}

TEST(Png, RejectsBadInput) {
  EXPECT_THROW(decode_png("definitely not a png"), ParseError);
  const std::string good = encode_png(random_image(16, 16, 8, 4));
  EXPECT_THROW(decode_png(good.substr(0, good.size() / 2)), ParseError);
  std::string corrupt = good;
  corrupt[40] ^= 0x5a;  // inside the first data chunk; its CRC no longer matches
  EXPECT_THROW(decode_png(corrupt), ParseError);
}

TEST(Png, RejectsBadImages) {
  PngImage img = random_image(4, 4, 8, 5);
  img.bit_depth = 12;
  EXPECT_THROW(encode_png(img), ConfigError);
  img = random_image(4, 4, 8, 5);
  img.rgb.pop_back();
  EXPECT_THROW(encode_png(img), ConfigError);
}

TEST(Png, MissingFileNamesPath) {
  try {
    read_png("/no/such/image.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/no/such/image.png"), std::string::npos);
  }
}
