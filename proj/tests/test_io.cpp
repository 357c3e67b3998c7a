#include <gtest/gtest.h>

#include <png.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "icl/io.hpp"
#include "icl/rng.hpp"

using namespace icl;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("icl_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ColorField random_field(int w, int h, std::uint64_t seed, double lo = 0.0, double hi = 255.0) {
  Rng rng(seed);
  ColorField f(w, h);
  for (auto& v : f.values()) v = rng.uniform(lo, hi);
  return f;
}

// Minimal 8-bit palette writer so the reader can be exercised on indexed input.
std::vector<std::uint8_t> palette_png(int w, int h, const std::vector<std::uint8_t>& indices, int entries) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    ADD_FAILURE() << "palette encode failed";
    return {};
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        auto* o = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        o->insert(o->end(), data, data + len);
      },
      [](png_structp) {});
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> pal(entries);
  for (int k = 0; k < entries; ++k) pal[k] = {static_cast<png_byte>(k * 10), 0, 0};
  png_set_PLTE(png, info, pal.data(), entries);
  png_write_info(png, info);
  std::vector<std::uint8_t> raw = indices;
  for (int y = 0; y < h; ++y) png_write_row(png, raw.data() + static_cast<std::size_t>(y) * w);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint32_t> ids_of(const LabelMap& l) { return {l.ids().begin(), l.ids().end()}; }

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Quantize, HalfToEvenAndClamp) {
  EXPECT_EQ(quantize_channel(0.5), 0);
  EXPECT_EQ(quantize_channel(1.5), 2);
  EXPECT_EQ(quantize_channel(2.5), 2);
  EXPECT_EQ(quantize_channel(3.49), 3);
  EXPECT_EQ(quantize_channel(254.5), 254);
  EXPECT_EQ(quantize_channel(-7.0), 0);
  EXPECT_EQ(quantize_channel(300.0), 255);
}

TEST(FieldPng, QuantizesOnceThenRoundTripsExactly) {
  const auto f = random_field(13, 7, 1, -20.0, 280.0);
  const auto once = field_from_png_bytes(field_to_png_bytes(f), "mem");
  ASSERT_EQ(once.width(), 13);
  ASSERT_EQ(once.height(), 7);
  for (std::size_t k = 0; k < f.size(); ++k) EXPECT_EQ(once.values()[k], quantize_channel(f.values()[k]));
  const auto twice = field_from_png_bytes(field_to_png_bytes(once), "mem");
  EXPECT_EQ(twice, once);
}

TEST(FieldPng, GrayInputExpandsToRgb) {
  PngImage g{3, 2, 1, 8, {0, 50, 100, 150, 200, 250}};
  const auto f = field_from_png_bytes(encode_png(g), "gray");
  for (int c = 0; c < 3; ++c) EXPECT_EQ(f.at(1, 1, c), 200.0);
}

TEST(FieldPng, SixteenBitInputIsRescaled) {
  PngImage g{2, 1, 1, 16, {65535, 0}};
  const auto f = field_from_png_bytes(encode_png(g), "deep");
  EXPECT_DOUBLE_EQ(f.at(0, 0, 0), 255.0);
  EXPECT_EQ(f.at(1, 0, 2), 0.0);
}

TEST(FieldPng, TruncatedFileNamesByteOffset) {
  auto bytes = field_to_png_bytes(random_field(16, 16, 2));
  bytes.resize(bytes.size() / 2);
  const auto msg = error_of([&] { field_from_png_bytes(bytes, "half.png"); });
  EXPECT_NE(msg.find("half.png"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte offset " + std::to_string(bytes.size())), std::string::npos) << msg;
  EXPECT_THROW(field_from_png_bytes({1, 2, 3}, "x"), FormatError);
}

TEST(Sidecar, BitIdenticalRoundTrip) {
  auto f = random_field(5, 4, 3, -1e6, 1e6);
  f.values()[0] = -0.0;
  f.values()[1] = std::numeric_limits<double>::denorm_min();
  const auto bytes = field_to_sidecar_bytes(f);
  EXPECT_EQ(bytes.size(), 16u + 5 * 4 * 3 * 8);
  const auto back = field_from_sidecar_bytes(bytes, "mem");
  EXPECT_EQ(std::memcmp(back.values().data(), f.values().data(), f.size() * 8), 0);
}

TEST(Sidecar, CorruptionReported) {
  const auto good = field_to_sidecar_bytes(random_field(3, 3, 4));
  auto truncated = good;
  truncated.resize(100);
  const auto msg = error_of([&] { field_from_sidecar_bytes(truncated, "f.icf"); });
  EXPECT_NE(msg.find("byte offset 100"), std::string::npos) << msg;
  EXPECT_NE(msg.find("expected " + std::to_string(good.size())), std::string::npos) << msg;

  EXPECT_NE(error_of([&] { field_from_sidecar_bytes({'I', 'C'}, "h"); }).find("byte offset 2"), std::string::npos);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(field_from_sidecar_bytes(magic, "m"), FormatError);
  auto channels = good;
  channels[12] = 4;
  EXPECT_THROW(field_from_sidecar_bytes(channels, "c"), FormatError);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(field_from_sidecar_bytes(trailing, "t"), FormatError);
  auto nan = good;
  const double q = std::numeric_limits<double>::quiet_NaN();
  std::memcpy(nan.data() + 16, &q, 8);
  EXPECT_THROW(field_from_sidecar_bytes(nan, "n"), FormatError);
}

TEST(FieldFiles, SaveLoadByExtension) {
  const auto dir = scratch("fields");
  const auto f = random_field(6, 5, 5);
  save_field(f, dir / "a.png", true);
  EXPECT_TRUE(fs::exists(dir / "a.icf"));
  EXPECT_EQ(load_field(dir / "a.icf"), f);
  EXPECT_EQ(load_field_prefer_exact(dir / "a.png"), f);
  save_field(f, dir / "b.png");
  EXPECT_FALSE(fs::exists(dir / "b.icf"));
  EXPECT_EQ(load_field_prefer_exact(dir / "b.png"), field_from_png_bytes(field_to_png_bytes(f), "m"));
  EXPECT_THROW(load_field(dir / "missing.png"), std::runtime_error);
  fs::remove_all(dir);
}

TEST(Labels, RoundTripIsIdentical) {
  const auto scene = generate_scene({.seed = 3});
  const auto back = labels_from_png_bytes(labels_to_png_bytes(scene.labels), "mem");
  EXPECT_EQ(back.labels, scene.labels);
  for (const auto& [from, to] : back.remap) EXPECT_EQ(from, to);
}

TEST(Labels, SparseIdsAreCompacted) {
  PngImage g{3, 1, 1, 16, {0, 5, 2}};
  const auto l = labels_from_png_bytes(encode_png(g), "sparse");
  EXPECT_EQ(ids_of(l.labels), (std::vector<std::uint32_t>{0, 2, 1}));
  EXPECT_EQ(l.remap, (std::map<std::uint32_t, std::uint32_t>{{2, 1}, {5, 2}}));
}

TEST(Labels, EightBitAndPaletteAccepted) {
  PngImage g{2, 2, 1, 8, {0, 7, 7, 9}};
  const auto eight = labels_from_png_bytes(encode_png(g), "eight");
  EXPECT_EQ(ids_of(eight.labels), (std::vector<std::uint32_t>{0, 1, 1, 2}));

  const auto pal = labels_from_png_bytes(palette_png(3, 2, {0, 4, 4, 0, 1, 1}, 5), "pal");
  EXPECT_EQ(ids_of(pal.labels), (std::vector<std::uint32_t>{0, 2, 2, 0, 1, 1}));
}

TEST(Labels, RgbAndOversizedRejected) {
  EXPECT_THROW(labels_from_png_bytes(field_to_png_bytes(random_field(2, 2, 1)), "rgb"), FormatError);
  std::vector<std::uint32_t> ids(70000);
  for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = static_cast<std::uint32_t>(k + 1);
  const LabelMap big(700, 100, ids);
  const auto msg = error_of([&] { labels_to_png_bytes(big); });
  EXPECT_NE(msg.find("65535"), std::string::npos) << msg;
}

TEST(Polygon, AxisAlignedSquareCoversPixelCenters) {
  const auto l = rasterize_polygons({{{{1, 1}, {4, 1}, {4, 4}, {1, 4}}, 1}}, 6, 6);
  std::size_t n = 0;
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      const bool in = x >= 1 && x <= 3 && y >= 1 && y <= 3;
      EXPECT_EQ(l.at(x, y), in ? 1u : 0u) << x << "," << y;
      n += l.at(x, y) != 0;
    }
  }
  EXPECT_EQ(n, 9u);
}

TEST(Polygon, SeparateTrianglesAndOverwrite) {
  const Polygon a{{{0, 0}, {6, 0}, {0, 6}}, 7};
  const Polygon b{{{10, 10}, {10, 4}, {4, 10}}, 3};
  const auto l = rasterize_polygons({a, b}, 10, 10);
  EXPECT_EQ(l.max_id(), 2u);
  EXPECT_EQ(l.at(1, 1), 2u);  // id 7 compacts to 2
  EXPECT_EQ(l.at(8, 8), 1u);
  const Polygon cover{{{-1, -1}, {11, -1}, {11, 11}, {-1, 11}}, 9};
  const auto all = rasterize_polygons({a, cover}, 10, 10);
  for (auto id : all.ids()) EXPECT_EQ(id, 1u);
}

TEST(Polygon, DegenerateRejected) {
  EXPECT_THROW(rasterize_polygons({{{{0, 0}, {3, 3}}, 1}}, 4, 4), std::invalid_argument);
  EXPECT_THROW(rasterize_polygons({{{{0, 0}, {3, 3}, {3, 3}, {0, 0}}, 1}}, 4, 4), std::invalid_argument);
  EXPECT_THROW(rasterize_polygons({{{{0, 0}, {3, 0}, {0, 3}}, 0}}, 4, 4), std::invalid_argument);
}

TEST(Dataset, GenerateWritesFilesAndManifest) {
  const auto dir = scratch("dataset");
  const auto m = generate_dataset(3, {.width = 24, .height = 20}, 40, dir);
  ASSERT_EQ(m.entries.size(), 3u);
  std::size_t images = 0, labels = 0;
  for (const auto& e : fs::directory_iterator(dir / "images")) images += e.path().extension() == ".png";
  for (const auto& e : fs::directory_iterator(dir / "labels")) labels += e.path().extension() == ".png";
  EXPECT_EQ(images, 3u);
  EXPECT_EQ(labels, 3u);
  EXPECT_FALSE(fs::exists(dir / "fields"));

  const auto loaded = load_manifest(dir / "manifest.json");
  ASSERT_EQ(loaded.entries.size(), 3u);
  for (int k = 0; k < 3; ++k) {
    const auto scene = generate_scene({.seed = 40u + k, .width = 24, .height = 20});
    EXPECT_EQ(load_labels(loaded.entries[k].labels_path).labels, scene.labels);
    EXPECT_EQ(load_field(loaded.entries[k].image_path), scene.image);
  }
  EXPECT_THROW(generate_dataset(0, {}, 0, dir), std::invalid_argument);
  fs::remove_all(dir);
}

TEST(Dataset, RegenerationIsByteIdentical) {
  const auto a = scratch("regen_a");
  const auto b = scratch("regen_b");
  const auto ma = generate_dataset(2, {.width = 16, .height = 16}, 9, a, true);
  generate_dataset(2, {.width = 16, .height = 16}, 9, b, true);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(read_file_bytes(e.path()), read_file_bytes(b / rel)) << rel;
  }
  const auto entry = load_manifest(a / "manifest.json").entries[1];
  ASSERT_TRUE(entry.field_path.has_value());
  const auto scene = generate_scene({.seed = 10, .width = 16, .height = 16});
  EXPECT_EQ(load_entry_field(entry, std::nullopt), encode_labels_as_colors(scene.labels, 10));
  EXPECT_EQ(load_entry_field(entry, a / "fields"), encode_labels_as_colors(scene.labels, 10));
  EXPECT_THROW(load_entry_field(entry, a / "images_missing"), std::runtime_error);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Manifest, ValidationErrors) {
  const auto dir = scratch("manifest");
  generate_dataset(2, {.width = 12, .height = 12}, 1, dir);
  auto write = [&](const std::string& text) {
    write_file_bytes(dir / "m.json", std::vector<std::uint8_t>(text.begin(), text.end()));
  };
  write(R"({"version":1,"entries":[{"id":"a","image_path":"images/scene_0000.png","labels_path":"labels/nope.png"}]})");
  EXPECT_NE(error_of([&] { load_manifest(dir / "m.json"); }).find("nope.png"), std::string::npos);
  write(R"({"version":1,"entries":[
    {"id":"a","image_path":"images/scene_0000.png","labels_path":"labels/scene_0000.png"},
    {"id":"a","image_path":"images/scene_0001.png","labels_path":"labels/scene_0001.png"}]})");
  EXPECT_NE(error_of([&] { load_manifest(dir / "m.json"); }).find("duplicate id 'a'"), std::string::npos);
  write(R"({"version":2,"entries":[]})");
  EXPECT_THROW(load_manifest(dir / "m.json"), FormatError);
  write("{not json");
  EXPECT_THROW(load_manifest(dir / "m.json"), FormatError);
  EXPECT_THROW(load_manifest(dir / "absent.json"), std::runtime_error);
  fs::remove_all(dir);
}
