#pragma once

// HTTP prompting service.
//
//   GET  /api/health              {"status":"ok"}
//   GET  /api/images              [{"id","width","height","instances"}]
//   GET  /api/images/{id}         source image, PNG
//   GET  /api/images/{id}/field   color field, PNG (8-bit quantized)
//   POST /api/prompt              body per PromptRequest, reply per PromptService::prompt
//
// Masks travel as uncompressed run-length counts over the row-major pixel
// order, starting with the length of the leading run of zeros (possibly 0).

#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "icl/eval.hpp"
#include "icl/field.hpp"
#include "icl/io.hpp"
#include "icl/prompt.hpp"

namespace icl {

/// Malformed request (HTTP 422).
class RequestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unknown resource (HTTP 404).
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<std::uint32_t> rle_encode(const BinaryMask& mask) {
  std::vector<std::uint32_t> counts;
  bool current = false;
  std::uint32_t run = 0;
  for (std::size_t j = 0; j < mask.pixel_count(); ++j) {
    if (mask[j] != current) {
      counts.push_back(run);
      run = 0;
      current = !current;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

inline BinaryMask rle_decode(const std::vector<std::uint32_t>& counts, int width, int height) {
  BinaryMask mask(width, height);
  std::uint64_t pos = 0;
  bool value = false;
  for (auto c : counts) {
    if (pos + c > mask.pixel_count()) throw std::invalid_argument("rle_decode: counts exceed width*height");
    if (value) {
      for (std::uint64_t k = 0; k < c; ++k) mask.set(static_cast<std::size_t>(pos + k));
    }
    pos += c;
    value = !value;
  }
  if (pos != mask.pixel_count()) throw std::invalid_argument("rle_decode: counts do not cover width*height");
  return mask;
}

inline nlohmann::json mask_json(const BinaryMask& mask) {
  return {{"height", mask.height()}, {"width", mask.width()}, {"counts", rle_encode(mask)}};
}

struct PromptRequest {
  std::string image_id;
  std::vector<PromptPoint> points;
  double threshold = kDefaultPromptThreshold;
  std::optional<std::uint32_t> gt_instance_id;
};

/// Shape checks only; bounds are checked against the image later.
inline PromptRequest parse_prompt_request(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    throw RequestError("request body is not valid JSON");
  }
  if (!j.is_object()) throw RequestError("request body must be a JSON object");
  PromptRequest req;
  if (!j.contains("image_id") || !j["image_id"].is_string()) throw RequestError("'image_id' must be a string");
  req.image_id = j["image_id"].get<std::string>();
  if (!j.contains("points") || !j["points"].is_array() || j["points"].empty()) {
    throw RequestError("'points' must be a non-empty array");
  }
  for (const auto& p : j["points"]) {
    // Accept [x, y] pairs or {"x":..,"y":..} objects.
    const nlohmann::json* x = nullptr;
    const nlohmann::json* y = nullptr;
    if (p.is_array() && p.size() == 2) {
      x = &p[0];
      y = &p[1];
    } else if (p.is_object() && p.contains("x") && p.contains("y")) {
      x = &p["x"];
      y = &p["y"];
    }
    if (!x || !x->is_number_integer() || !y->is_number_integer()) {
      throw RequestError("each point must be [x, y] or {\"x\": int, \"y\": int}");
    }
    req.points.push_back({x->get<int>(), y->get<int>()});
  }
  if (j.contains("threshold")) {
    if (!j["threshold"].is_number()) throw RequestError("'threshold' must be a number");
    req.threshold = j["threshold"].get<double>();
    if (!(req.threshold >= 0.0 && req.threshold < 1.0)) throw RequestError("'threshold' must lie in [0, 1)");
  }
  if (j.contains("gt_instance_id") && !j["gt_instance_id"].is_null()) {
    if (!j["gt_instance_id"].is_number_unsigned()) throw RequestError("'gt_instance_id' must be a positive integer");
    req.gt_instance_id = j["gt_instance_id"].get<std::uint32_t>();
  }
  return req;
}

struct ServiceImage {
  std::string id;
  ColorField image;
  LabelMap labels;
  ColorField field;
  std::string image_png;
  std::string field_png;
};

class PromptService {
 public:
  explicit PromptService(std::vector<ServiceImage> images) : images_(std::move(images)) {
    for (std::size_t k = 0; k < images_.size(); ++k) {
      auto& im = images_[k];
      require_same_dims(im.field, im.labels);
      require_same_dims(im.image, im.labels);
      if (!index_.emplace(im.id, k).second) throw std::invalid_argument("duplicate image id '" + im.id + "'");
      const auto img = field_to_png_bytes(im.image);
      const auto fld = field_to_png_bytes(im.field);
      im.image_png.assign(img.begin(), img.end());
      im.field_png.assign(fld.begin(), fld.end());
    }
  }

  /// Fields come from `fields_dir/<id>.icf` or `.png` when a directory is
  /// given, otherwise from each entry's `field_path`.
  static PromptService from_manifest(const fs::path& manifest, const std::optional<fs::path>& fields_dir) {
    const DatasetManifest m = load_manifest(manifest);
    std::vector<ServiceImage> images;
    for (const auto& e : m.entries) {
      images.push_back({e.id, load_field(e.image_path), load_labels(e.labels_path).labels,
                        load_entry_field(e, fields_dir), {}, {}});
    }
    return PromptService(std::move(images));
  }

  const std::vector<ServiceImage>& images() const { return images_; }

  const ServiceImage& find(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw NotFoundError("unknown image id '" + id + "'");
    return images_[it->second];
  }

  nlohmann::json list_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& im : images_) {
      out.push_back({{"id", im.id},
                     {"width", im.labels.width()},
                     {"height", im.labels.height()},
                     {"instances", im.labels.max_id()}});
    }
    return out;
  }

  nlohmann::json prompt(const PromptRequest& req) const {
    const auto t0 = std::chrono::steady_clock::now();
    const ServiceImage& im = find(req.image_id);
    for (const auto& p : req.points) {
      if (p.x < 0 || p.y < 0 || p.x >= im.field.width() || p.y >= im.field.height()) {
        throw RequestError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside " +
                           std::to_string(im.field.width()) + "x" + std::to_string(im.field.height()) + " image");
      }
    }
    if (req.gt_instance_id && (*req.gt_instance_id == 0 || *req.gt_instance_id > im.labels.max_id())) {
      throw RequestError("gt_instance_id " + std::to_string(*req.gt_instance_id) + " not in 1.." +
                         std::to_string(im.labels.max_id()));
    }
    const BinaryMask mask = prompt_mask(im.field, req.points, req.threshold);
    nlohmann::json out{{"image_id", im.id}, {"mask", mask_json(mask)}};
    if (req.gt_instance_id) out["iou_vs_gt"] = mask_iou(mask, instance_mask(im.labels, *req.gt_instance_id));
    out["timing_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

 private:
  std::vector<ServiceImage> images_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Applies ICL_LOG (trace, debug, info, warn, error, critical, off).
inline void configure_logging_from_env() {
  if (const char* lvl = std::getenv("ICL_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
}

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

}  // namespace detail

/// Registers every route on `server`. The service must outlive the server.
inline void install_routes(httplib::Server& server, const PromptService& service) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
    detail::send_json(res, 200, {{"status", "ok"}});
  });
  server.Get("/api/images", [&service](const httplib::Request&, httplib::Response& res) {
    detail::send_json(res, 200, service.list_json());
  });
  server.Get(R"(/api/images/([^/]+)/field)", [&service](const httplib::Request& req, httplib::Response& res) {
    try {
      res.set_content(service.find(req.matches[1]).field_png, "image/png");
    } catch (const NotFoundError& e) {
      detail::send_error(res, 404, e.what());
    }
  });
  server.Get(R"(/api/images/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    try {
      res.set_content(service.find(req.matches[1]).image_png, "image/png");
    } catch (const NotFoundError& e) {
      detail::send_error(res, 404, e.what());
    }
  });
  server.Post("/api/prompt", [&service](const httplib::Request& req, httplib::Response& res) {
    try {
      const PromptRequest pr = parse_prompt_request(req.body);
      const auto body = service.prompt(pr);
      spdlog::debug("prompt image={} points={} ms={:.2f}", pr.image_id, pr.points.size(), body["timing_ms"].get<double>());
      detail::send_json(res, 200, body);
    } catch (const NotFoundError& e) {
      detail::send_error(res, 404, e.what());
    } catch (const RequestError& e) {
      detail::send_error(res, 422, e.what());
    }
  });
  server.set_exception_handler([](const httplib::Request& req, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      spdlog::error("{} {} failed: {}", req.method, req.path, e.what());
    } catch (...) {
      spdlog::error("{} {} failed", req.method, req.path);
    }
    detail::send_error(res, 500, "internal error");
  });
  server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::info("{} {} -> {}", req.method, req.path, res.status);
  });
}

/// Configures a fixed-size worker pool for request handling.
inline void set_worker_count(httplib::Server& server, std::size_t workers) {
  if (workers == 0) workers = 1;
  server.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
}

}  // namespace icl
