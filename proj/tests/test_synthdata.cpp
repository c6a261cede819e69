#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "imaboost/synthdata.hpp"

using namespace imaboost;

namespace {

// Small layout so that thousands of images stay cheap.
SceneConfig tiny_config(std::size_t images) {
  SceneConfig c;
  c.image_count = images;
  c.num_classes = 1;
  c.feature_dim = 7;
  c.min_size = 0.15;
  c.max_size = 0.25;
  c.layers = {ssd_layer(2, 0.2, 0.3)};
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("imaboost_test_" + name);
}

}  // namespace

TEST(Generate, ZeroImagesGivesEmptyDataset) {
  SceneConfig c;
  c.image_count = 0;
  const auto ds = generate(c);
  EXPECT_EQ(ds.image_count(), 0u);
  EXPECT_EQ(ds.object_count(), 0u);
}

TEST(Generate, DeterministicAndOrderIndependent) {
  SceneConfig c;
  c.image_count = 12;
  c.seed = 99;
  const auto a = generate(c);
  const auto b = generate(c);
  EXPECT_EQ(a, b);
  EXPECT_EQ(serialize(a), serialize(b));
  // Image i depends only on (seed, i): a longer run shares its prefix.
  c.image_count = 20;
  const auto longer = generate(c);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(longer.images()[i], a.images()[i]);
  c.seed = 100;
  EXPECT_NE(serialize(generate(c)), serialize(longer));
}

TEST(Generate, ObjectsRespectConfigAndHavePositives) {
  SceneConfig c;
  c.image_count = 40;
  const auto ds = generate(c);
  for (std::size_t i = 0; i < ds.image_count(); ++i) {
    const auto& img = ds.images()[i];
    EXPECT_GE(static_cast<int>(img.objects.size()), c.min_objects);
    EXPECT_LE(static_cast<int>(img.objects.size()), c.max_objects);
    std::set<std::size_t> covered;
    for (auto [a, o] : ds.matches()[i].pos) covered.insert(o);
    EXPECT_EQ(covered.size(), img.objects.size());
    for (const auto& o : img.objects) {
      EXPECT_TRUE(o.box.is_valid());
      EXPECT_GE(o.box.xmin(), 0.0);
      EXPECT_LE(o.box.xmax(), 1.0);
      EXPECT_GE(o.cls, 1);
      EXPECT_LE(o.cls, c.num_classes);
    }
  }
}

TEST(Generate, HardFractionFollowsPNoise) {
  SceneConfig c = tiny_config(400);
  c.min_objects = c.max_objects = 3;
  c.p_noise = 0.3;
  const auto ds = generate(c);
  ASSERT_GE(ds.object_count(), 1000u);
  std::size_t hard = 0;
  for (const auto& o : ds.all_objects()) hard += o.hard;
  EXPECT_NEAR(static_cast<double>(hard) / ds.object_count(), 0.3, 0.03);
}

TEST(Generate, RejectsBadConfig) {
  SceneConfig c;
  c.p_noise = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SceneConfig{};
  c.max_size = 0.6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SceneConfig{};
  c.feature_dim = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Split, HalfOfTen) {
  const auto ds = generate(tiny_config(10));
  const auto [train, test] = split(ds, 0.5, 4);
  EXPECT_EQ(train.image_count(), 5u);
  EXPECT_EQ(test.image_count(), 5u);
}

TEST(Split, PartitionOfPaperSize) {
  const auto ds = generate(tiny_config(2897));
  const auto [train, test] = split(ds, 1999.0 / 2897.0, 8);
  EXPECT_EQ(train.image_count(), 1999u);
  EXPECT_EQ(test.image_count(), 898u);
  std::set<std::uint64_t> ids;
  for (const auto& img : train.images()) ids.insert(img.image_id);
  for (const auto& img : test.images()) EXPECT_TRUE(ids.insert(img.image_id).second);
  EXPECT_EQ(ids.size(), 2897u);
  const auto again = split(ds, 1999.0 / 2897.0, 8);
  EXPECT_EQ(again.first, train);
  EXPECT_THROW(split(ds, 1.0, 8), std::invalid_argument);
}

TEST(DatasetFile, RoundTrip) {
  SceneConfig c;
  c.image_count = 6;
  c.p_noise = 0.4;
  const auto ds = generate(c);
  const auto path = temp_file("roundtrip.imbd");
  save(ds, path);
  const auto back = load(path);
  EXPECT_EQ(back, ds);
  EXPECT_EQ(back.fingerprint(), ds.fingerprint());
  EXPECT_EQ(serialize(back), serialize(ds));
  std::filesystem::remove(path);
}

TEST(DatasetFile, TruncatedFileIsAParseError) {
  SceneConfig c;
  c.image_count = 3;
  const std::string bytes = serialize(generate(c));
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    try {
      deserialize(std::string_view(bytes).substr(0, cut));
      ADD_FAILURE() << "no error for cut " << cut;
    } catch (const DatasetParseError& e) {
      EXPECT_LE(e.offset(), cut);
    }
  }
}

TEST(DatasetFile, VersionMismatchNamesBothVersions) {
  SceneConfig c;
  c.image_count = 1;
  std::string bytes = serialize(generate(c));
  const std::uint32_t bumped = kDatasetFormatVersion + 1;
  std::memcpy(bytes.data() + 8, &bumped, sizeof bumped);
  try {
    deserialize(bytes);
    FAIL() << "no version error";
  } catch (const DatasetVersionError& e) {
    EXPECT_EQ(e.found(), bumped);
    EXPECT_EQ(e.expected(), kDatasetFormatVersion);
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(bumped)), std::string::npos);
    EXPECT_NE(msg.find(std::to_string(kDatasetFormatVersion)), std::string::npos);
  }
}

TEST(DatasetFile, GroundTruthText) {
  SceneConfig c;
  c.image_count = 2;
  const auto ds = generate(c);
  const std::string text = ground_truth_text(ds);
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  EXPECT_EQ(lines, ds.object_count() + 1);
  EXPECT_EQ(text.rfind("# image_id class cx cy w h hard", 0), 0u);
}
