#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mgd/io.hpp"

using namespace mgd;

TEST(Gray, ConstantZeroIsMidGray) {
  const std::vector<double> v(6, 0.0);
  const auto img = normalize_to_gray(v, 3, 2);
  for (auto p : img.pixels) EXPECT_EQ(p, 128);
  EXPECT_EQ(img.min, 0.0);
  EXPECT_EQ(img.max, 0.0);
}

TEST(Gray, HandNormalization) {
  // [[0, 1], [-1, 0]]: min -1 maps to 0, max 1 to 255, zero to 127.5 -> 128
  const std::vector<double> v{0, 1, -1, 0};
  const auto img = normalize_to_gray(v, 2, 2);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{128, 255, 0, 128}));
  EXPECT_EQ(img.min, -1.0);
  EXPECT_EQ(img.max, 1.0);
  EXPECT_THROW(normalize_to_gray(v, 3, 2), DimensionError);
}

TEST(Pgm, PlainTextRoundTrip) {
  const std::vector<double> v{0, 1, -1, 0, 0.5, 0.25};
  const auto img = normalize_to_gray(v, 3, 2);
  std::stringstream ss;
  write_pgm(ss, img);
  EXPECT_EQ(ss.str().substr(0, 11), "P2\n3 2\n255\n");
  const auto back = read_pgm(ss);
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.pixels, img.pixels);
  std::stringstream bad("P5\n1 1\n255\n0\n");
  EXPECT_THROW(read_pgm(bad), ValueError);
}

TEST(Pgm, SidecarRecordsOriginalRange) {
  const auto dir = std::filesystem::temp_directory_path() / "mgd_test_pgm";
  std::filesystem::create_directories(dir);
  save_pgm(dir / "f.pgm", normalize_to_gray(std::vector<double>{-2.5, 4.0}, 2, 1));
  std::ifstream meta(dir / "f.txt");
  std::string key;
  double lo = 0, hi = 0;
  meta >> key >> lo;
  EXPECT_EQ(key, "min");
  meta >> key >> hi;
  EXPECT_EQ(key, "max");
  EXPECT_EQ(lo, -2.5);
  EXPECT_EQ(hi, 4.0);
  std::filesystem::remove_all(dir);
}

TEST(Montage, PanelsSideBySide) {
  const auto a = normalize_to_gray(std::vector<double>{0, 1, 2, 3}, 2, 2);
  const auto b = normalize_to_gray(std::vector<double>{5, 5}, 1, 2);
  const auto m = montage({a, b});
  EXPECT_EQ(m.width, 4u);
  EXPECT_EQ(m.height, 2u);
  EXPECT_EQ(m.pixels[0], a.pixels[0]);
  EXPECT_EQ(m.pixels[2], 0);  // gutter
  EXPECT_EQ(m.pixels[3], 128);
  EXPECT_THROW(montage({a, normalize_to_gray(std::vector<double>{1}, 1, 1)}), DimensionError);
}

TEST(Export, WritesImagesAndLabels) {
  SynthSpec spec;
  spec.samples_per_class = 1;
  spec.n_classes = 3;
  spec.image_size = 4;
  const auto dir = std::filesystem::temp_directory_path() / "mgd_test_export";
  std::filesystem::remove_all(dir);
  export_dataset(generate(spec), dir);
  std::ifstream labels(dir / "labels.csv");
  std::string line;
  std::getline(labels, line);
  EXPECT_EQ(line, "file,label");
  std::getline(labels, line);
  EXPECT_EQ(line, "sample_00000.pgm,0");
  EXPECT_TRUE(std::filesystem::exists(dir / "sample_00002.pgm"));
  std::filesystem::remove_all(dir);
}
