#pragma once

// File formats:
//
//  * Color fields: 8-bit RGB PNG (values clamped to [0,255] and rounded half
//    to even). Optional lossless sidecar `<stem>.icf`:
//        bytes 0..3   magic "ICF1"
//        bytes 4..7   u32 width   (little-endian)
//        bytes 8..11  u32 height  (little-endian)
//        bytes 12..15 u32 channels (always 3)
//        then width*height*3 IEEE-754 float64, little-endian, row-major,
//        channel-interleaved.
//  * Label maps: 16-bit single-channel PNG, value = instance id, 0 =
//    background. 8-bit grayscale and palette-index PNGs are accepted and
//    widened. Loading compacts ids to 1..n.
//  * Dataset manifest: JSON
//        {"version": 1,
//         "entries": [{"id": "...", "image_path": "...", "labels_path": "...",
//                      "field_path": "..."  (optional)}]}
//    Relative paths resolve against the manifest's directory.

#include <png.h>

#include <algorithm>
#include <bit>
#include <cfenv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "icl/field.hpp"
#include "icl/scene.hpp"

namespace icl {

namespace fs = std::filesystem;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kMaxPixels = std::uint64_t{1} << 28;

inline void require_reasonable_dims(std::uint64_t w, std::uint64_t h, const std::string& what) {
  if (w == 0 || h == 0 || w > 0x7fffffffULL || h > 0x7fffffffULL || w * h > kMaxPixels) {
    throw FormatError(what + ": dimensions " + std::to_string(w) + "x" + std::to_string(h) + " out of range");
  }
}

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// PNG codec (libpng, in-memory)

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;             // 1 (gray or palette index) or 3 (RGB)
  int bit_depth = 8;            // 8 or 16
  std::vector<std::uint16_t> samples;  // row-major, channel-interleaved
};

namespace detail {

struct PngReadCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t offset;
};

inline void png_throwing_error(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}

inline void png_silent_warning(png_structp, png_const_charp) {}

inline void png_memory_read(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + len > cur->size) {
    const std::string msg = "unexpected end of data at byte offset " + std::to_string(cur->size) + " (needed " +
                            std::to_string(len) + " bytes at offset " + std::to_string(cur->offset) + ")";
    png_error(png, msg.c_str());
  }
  std::memcpy(out, cur->data + cur->offset, len);
  cur->offset += len;
}

inline void png_memory_write(png_structp png, png_bytep in, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + len);
}

inline void png_memory_flush(png_structp) {}

}  // namespace detail

/// Decodes a PNG. `keep_indices` returns palette images as raw indices
/// (one channel); otherwise everything is expanded to RGB, alpha dropped.
inline PngImage decode_png(const std::vector<std::uint8_t>& bytes, bool keep_indices, const std::string& what) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw FormatError(what + ": not a PNG file (bad signature at byte offset 0)");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_throwing_error,
                                           detail::png_silent_warning);
  if (!png) throw std::runtime_error("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  detail::PngReadCursor cursor{bytes.data(), bytes.size(), 0};
  PngImage img;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(what + ": corrupt PNG: " + err);
  }
  png_set_read_fn(png, &cursor, detail::png_memory_read);
  png_read_info(png, info);
  png_uint_32 w = 0, h = 0;
  int depth = 0, color = 0;
  png_get_IHDR(png, info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);
  if (w == 0 || h == 0 || static_cast<std::uint64_t>(w) * h > kMaxPixels) {
    err = "dimensions " + std::to_string(w) + "x" + std::to_string(h) + " out of range";
    png_longjmp(png, 1);
  }
  if (color == PNG_COLOR_TYPE_PALETTE && keep_indices) {
    if (depth < 8) png_set_packing(png);
    img.channels = 1;
  } else if ((color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) && keep_indices) {
    if (depth < 8) png_set_packing(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    img.channels = 1;
  } else {
    png_set_expand(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    img.channels = 3;
  }
  png_read_update_info(png, info);
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.bit_depth = png_get_bit_depth(png, info) == 16 ? 16 : 8;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  raw.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(w) * h * img.channels;
  img.samples.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    img.samples[k] = img.bit_depth == 16 ? static_cast<std::uint16_t>((raw[2 * k] << 8) | raw[2 * k + 1]) : raw[k];
  }
  return img;
}

/// Encodes 8-bit RGB (channels = 3) or 16-bit gray (channels = 1) PNGs.
inline std::vector<std::uint8_t> encode_png(const PngImage& img) {
  require_reasonable_dims(static_cast<std::uint64_t>(img.width), static_cast<std::uint64_t>(img.height), "encode_png");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_throwing_error,
                                            detail::png_silent_warning);
  if (!png) throw std::runtime_error("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encode failed: " + err);
  }
  png_set_write_fn(png, &out, detail::png_memory_write, detail::png_memory_flush);
  const int color = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
               color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t bytes_per = img.bit_depth == 16 ? 2 : 1;
  const std::size_t rowbytes = static_cast<std::size_t>(img.width) * img.channels * bytes_per;
  raw.resize(rowbytes * img.height);
  for (std::size_t k = 0; k < img.samples.size(); ++k) {
    if (bytes_per == 2) {
      raw[2 * k] = static_cast<std::uint8_t>(img.samples[k] >> 8);
      raw[2 * k + 1] = static_cast<std::uint8_t>(img.samples[k] & 0xff);
    } else {
      raw[k] = static_cast<std::uint8_t>(img.samples[k]);
    }
  }
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * rowbytes;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

// ---------------------------------------------------------------------------
// Color fields

/// Clamp to [0,255] and round half to even.
inline std::uint8_t quantize_channel(double v) {
  const double c = std::clamp(v, 0.0, 255.0);
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(c);
  std::fesetround(saved);
  return static_cast<std::uint8_t>(r);
}

inline std::vector<std::uint8_t> field_to_png_bytes(const ColorField& field) {
  PngImage img;
  img.width = field.width();
  img.height = field.height();
  img.channels = 3;
  img.bit_depth = 8;
  img.samples.reserve(field.size());
  for (double v : field.values()) img.samples.push_back(quantize_channel(v));
  return encode_png(img);
}

inline ColorField field_from_png_bytes(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  const PngImage img = decode_png(bytes, false, what);
  ColorField f(img.width, img.height);
  const double scale = img.bit_depth == 16 ? 255.0 / 65535.0 : 1.0;
  for (std::size_t k = 0; k < img.samples.size(); ++k) f.values()[k] = img.samples[k] * scale;
  return f;
}

inline fs::path sidecar_path(const fs::path& png_path) {
  fs::path p = png_path;
  p.replace_extension(".icf");
  return p;
}

inline std::vector<std::uint8_t> field_to_sidecar_bytes(const ColorField& field) {
  static_assert(std::endian::native == std::endian::little, "sidecar writer assumes a little-endian host");
  std::vector<std::uint8_t> out(16 + field.size() * 8);
  std::memcpy(out.data(), "ICF1", 4);
  const std::uint32_t hdr[3] = {static_cast<std::uint32_t>(field.width()), static_cast<std::uint32_t>(field.height()),
                                3u};
  std::memcpy(out.data() + 4, hdr, sizeof hdr);
  std::memcpy(out.data() + 16, field.values().data(), field.size() * 8);
  return out;
}

inline ColorField field_from_sidecar_bytes(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  if (bytes.size() < 16) {
    throw FormatError(what + ": truncated header at byte offset " + std::to_string(bytes.size()) +
                      " (header is 16 bytes)");
  }
  if (std::memcmp(bytes.data(), "ICF1", 4) != 0) throw FormatError(what + ": bad magic at byte offset 0");
  std::uint32_t hdr[3];
  std::memcpy(hdr, bytes.data() + 4, sizeof hdr);
  if (hdr[2] != 3) throw FormatError(what + ": unsupported channel count " + std::to_string(hdr[2]) + " at byte offset 12");
  require_reasonable_dims(hdr[0], hdr[1], what);
  const std::uint64_t expected = 16 + std::uint64_t{hdr[0]} * hdr[1] * 3 * 8;
  if (bytes.size() < expected) {
    throw FormatError(what + ": truncated at byte offset " + std::to_string(bytes.size()) + " (expected " +
                      std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) {
    throw FormatError(what + ": trailing data at byte offset " + std::to_string(expected));
  }
  ColorField f(static_cast<int>(hdr[0]), static_cast<int>(hdr[1]));
  std::memcpy(f.values().data(), bytes.data() + 16, f.size() * 8);
  if (!f.all_finite()) throw FormatError(what + ": non-finite value in payload");
  return f;
}

/// Writes `path` as PNG; with `exact`, also the lossless sidecar next to it.
inline void save_field(const ColorField& field, const fs::path& path, bool exact = false) {
  write_file_bytes(path, field_to_png_bytes(field));
  if (exact) write_file_bytes(sidecar_path(path), field_to_sidecar_bytes(field));
}

/// Loads a `.icf` sidecar or a PNG, chosen by extension.
inline ColorField load_field(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  if (path.extension() == ".icf") return field_from_sidecar_bytes(bytes, path.string());
  return field_from_png_bytes(bytes, path.string());
}

/// Prefers the lossless sidecar of `png_path` when present.
inline ColorField load_field_prefer_exact(const fs::path& png_path) {
  const fs::path side = sidecar_path(png_path);
  if (fs::exists(side)) return load_field(side);
  return load_field(png_path);
}

// ---------------------------------------------------------------------------
// Label maps

struct LoadedLabels {
  LabelMap labels;
  std::map<std::uint32_t, std::uint32_t> remap;  // original id -> compact id
};

/// Renumbers the non-zero ids present to 1..n in ascending order.
inline LoadedLabels compact_labels(int width, int height, std::vector<std::uint32_t> ids) {
  std::set<std::uint32_t> present(ids.begin(), ids.end());
  present.erase(0);
  LoadedLabels out;
  std::uint32_t next = 1;
  for (auto id : present) out.remap[id] = next++;
  for (auto& id : ids) {
    if (id != 0) id = out.remap[id];
  }
  out.labels = LabelMap(width, height, std::move(ids));
  return out;
}

inline std::vector<std::uint8_t> labels_to_png_bytes(const LabelMap& labels) {
  if (labels.max_id() > 65535) {
    throw std::invalid_argument("label map has " + std::to_string(labels.max_id()) +
                                " instances; 16-bit PNG holds at most 65535");
  }
  PngImage img;
  img.width = labels.width();
  img.height = labels.height();
  img.channels = 1;
  img.bit_depth = 16;
  img.samples.assign(labels.ids().begin(), labels.ids().end());
  return encode_png(img);
}

inline LoadedLabels labels_from_png_bytes(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  const PngImage img = decode_png(bytes, true, what);
  if (img.channels != 1) throw FormatError(what + ": label PNG must be single-channel (gray or palette)");
  return compact_labels(img.width, img.height, std::vector<std::uint32_t>(img.samples.begin(), img.samples.end()));
}

inline void save_labels(const LabelMap& labels, const fs::path& path) {
  write_file_bytes(path, labels_to_png_bytes(labels));
}

inline LoadedLabels load_labels(const fs::path& path) {
  return labels_from_png_bytes(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// Polygon rasterization

struct Polygon {
  std::vector<std::pair<double, double>> vertices;  // (x, y) in pixel units
  std::uint32_t id = 1;
};

/// Even-odd fill sampled at pixel centers (x + 0.5, y + 0.5); a pixel is
/// labeled only when its center lies strictly inside. Later polygons
/// overwrite earlier ones; surviving ids are compacted.
inline LabelMap rasterize_polygons(const std::vector<Polygon>& polygons, int width, int height) {
  require_dims(width, height);
  std::vector<std::uint32_t> ids(static_cast<std::size_t>(width) * height, 0);
  for (std::size_t p = 0; p < polygons.size(); ++p) {
    const auto& poly = polygons[p];
    std::set<std::pair<double, double>> distinct(poly.vertices.begin(), poly.vertices.end());
    if (distinct.size() < 3) {
      throw std::invalid_argument("rasterize_polygons: polygon " + std::to_string(p) + " has fewer than 3 distinct vertices");
    }
    if (poly.id == 0) throw std::invalid_argument("rasterize_polygons: polygon id 0 is reserved for background");
    const std::size_t nv = poly.vertices.size();
    std::vector<double> xs;
    for (int y = 0; y < height; ++y) {
      const double yc = y + 0.5;
      xs.clear();
      for (std::size_t k = 0; k < nv; ++k) {
        const auto [x0, y0] = poly.vertices[k];
        const auto [x1, y1] = poly.vertices[(k + 1) % nv];
        if ((y0 <= yc) != (y1 <= yc)) xs.push_back(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
      }
      std::sort(xs.begin(), xs.end());
      for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        for (int x = std::max(0, static_cast<int>(std::floor(xs[k]))); x < width; ++x) {
          const double xc = x + 0.5;
          if (xc >= xs[k + 1]) break;
          if (xc > xs[k]) ids[static_cast<std::size_t>(y) * width + x] = poly.id;
        }
      }
    }
  }
  return compact_labels(width, height, std::move(ids)).labels;
}

// ---------------------------------------------------------------------------
// Dataset manifest

struct ManifestEntry {
  std::string id;
  fs::path image_path;
  fs::path labels_path;
  std::optional<fs::path> field_path;
};

struct DatasetManifest {
  int version = 1;
  std::vector<ManifestEntry> entries;
};

/// Loads and validates: unique ids, every referenced file present.
inline DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  DatasetManifest m;
  try {
    m.version = doc.at("version").get<int>();
    if (m.version != 1) throw FormatError("manifest " + path.string() + ": unsupported version " + std::to_string(m.version));
    std::set<std::string> seen;
    for (const auto& e : doc.at("entries")) {
      ManifestEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.image_path = resolve(e.at("image_path").get<std::string>());
      entry.labels_path = resolve(e.at("labels_path").get<std::string>());
      if (e.contains("field_path") && !e["field_path"].is_null()) entry.field_path = resolve(e["field_path"].get<std::string>());
      if (!seen.insert(entry.id).second) throw FormatError("manifest " + path.string() + ": duplicate id '" + entry.id + "'");
      for (const auto* p : {&entry.image_path, &entry.labels_path}) {
        if (!fs::exists(*p)) throw std::runtime_error("manifest entry '" + entry.id + "': missing file " + p->string());
      }
      if (entry.field_path && !fs::exists(*entry.field_path)) {
        throw std::runtime_error("manifest entry '" + entry.id + "': missing file " + entry.field_path->string());
      }
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

/// The color field for `entry`: `fields_dir/<id>.icf` or `fields_dir/<id>.png`
/// when a directory is given, otherwise the entry's own `field_path`.
inline ColorField load_entry_field(const ManifestEntry& entry, const std::optional<fs::path>& fields_dir) {
  if (fields_dir) {
    const fs::path png = *fields_dir / (entry.id + ".png");
    if (fs::exists(sidecar_path(png))) return load_field(sidecar_path(png));
    if (fs::exists(png)) return load_field(png);
    throw std::runtime_error("no color field for '" + entry.id + "' in " + fields_dir->string());
  }
  if (entry.field_path) return load_field_prefer_exact(*entry.field_path);
  throw std::runtime_error("no color field for '" + entry.id + "': pass a fields directory");
}

/// Writes the manifest with paths relative to its own directory.
inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) { return p.lexically_relative(base.empty() ? fs::path(".") : base).generic_string(); };
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json j{{"id", e.id}, {"image_path", rel(e.image_path)}, {"labels_path", rel(e.labels_path)}};
    if (e.field_path) j["field_path"] = rel(*e.field_path);
    entries.push_back(std::move(j));
  }
  const nlohmann::json doc{{"version", m.version}, {"entries", entries}};
  const std::string text = doc.dump(2) + "\n";
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

/// Generates `count` scenes with seeds `seed + index` under `out_dir`:
/// images/<id>.png, labels/<id>.png, manifest.json, and with
/// `ideal_fields` also fields/<id>.png + .icf holding the encoded labels.
inline DatasetManifest generate_dataset(int count, SceneSpec spec, std::uint64_t seed, const fs::path& out_dir,
                                        bool ideal_fields = false) {
  if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  DatasetManifest m;
  for (int k = 0; k < count; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d", k);
    spec.seed = seed + static_cast<std::uint64_t>(k);
    const Scene scene = generate_scene(spec);
    ManifestEntry e{name, out_dir / "images" / (std::string(name) + ".png"),
                    out_dir / "labels" / (std::string(name) + ".png"), std::nullopt};
    save_field(scene.image, e.image_path);
    save_labels(scene.labels, e.labels_path);
    if (ideal_fields) {
      e.field_path = out_dir / "fields" / (std::string(name) + ".png");
      save_field(encode_labels_as_colors(scene.labels, spec.seed), *e.field_path, true);
    }
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace icl
