// icl: command-line front end for scene generation, optimization, training,
// evaluation and the prompting server.

#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "icl/eval.hpp"
#include "icl/io.hpp"
#include "icl/loss.hpp"
#include "icl/optim.hpp"
#include "icl/scene.hpp"
#include "icl/service.hpp"
#include "icl/tinynet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct LossFlags {
  bool no_var = false;
  bool no_sep = false;
  bool no_mean = false;
  double lambda_sep = 300.0;
  double lambda_mean = 300.0;

  void attach(CLI::App* cmd) {
    cmd->add_flag("--no-var", no_var, "Drop the variance term from the total");
    cmd->add_flag("--no-sep", no_sep, "Drop the separation term from the total");
    cmd->add_flag("--no-mean", no_mean, "Drop the mean-separation term from the total");
    cmd->add_option("--lambda-sep", lambda_sep, "Separation weight")->capture_default_str();
    cmd->add_option("--lambda-mean", lambda_mean, "Mean-separation weight")->capture_default_str();
  }

  icl::LossWeights weights() const {
    icl::LossWeights w;
    w.enable_var = !no_var;
    w.enable_sep = !no_sep;
    w.enable_mean = !no_mean;
    w.lambda_sep = lambda_sep;
    w.lambda_mean = lambda_mean;
    return w;
  }
};

struct OptimFlags {
  int iterations = 500;
  double lr = 2.0;
  std::string kind = "adam";
  std::uint64_t seed = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--iters", iterations, "Number of update steps")->capture_default_str();
    cmd->add_option("--lr", lr, "Learning rate")->capture_default_str();
    cmd->add_option("--optimizer", kind, "adam or gd")->check(CLI::IsMember({"adam", "gd"}))->capture_default_str();
    cmd->add_option("--seed", seed, "Initialization seed")->capture_default_str();
  }

  icl::OptimConfig config() const {
    icl::OptimConfig c;
    c.iterations = iterations;
    c.learning_rate = lr;
    c.kind = kind == "gd" ? icl::OptimizerKind::gradient_descent : icl::OptimizerKind::adam;
    c.seed = seed;
    return c;
  }
};

std::optional<fs::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

void write_json(const fs::path& path, const json& doc) {
  const std::string text = doc.dump(2) + "\n";
  icl::write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

int run_gen_scenes(int count, std::uint64_t seed, const std::string& out, const icl::SceneSpec& spec, bool ideal) {
  const auto m = icl::generate_dataset(count, spec, seed, out, ideal);
  std::cout << "wrote " << m.entries.size() << " scenes to " << out << "\n";
  return 0;
}

int run_optimize(const std::string& labels_path, const std::string& manifest, const std::string& out,
                 const OptimFlags& of, const LossFlags& lf, bool png_only) {
  icl::validate_config(of.config());
  const auto weights = lf.weights();
  auto one = [&](const icl::LabelMap& labels, std::uint64_t seed, const fs::path& dst, const std::string& name) {
    auto cfg = of.config();
    cfg.seed = seed;
    const auto r = icl::optimize_direct_field(labels, weights, cfg);
    icl::save_field(r.field, dst, !png_only);
    std::printf("%s: loss %.6f (var %.6f sep %.6f mean %.6f)\n", name.c_str(), r.final_loss.total, r.final_loss.l_var,
                r.final_loss.l_sep, r.final_loss.l_mean);
  };
  if (!labels_path.empty() == !manifest.empty()) throw std::invalid_argument("give exactly one of --labels or --manifest");
  if (!labels_path.empty()) {
    one(icl::load_labels(labels_path).labels, of.seed, out, labels_path);
    return 0;
  }
  const auto m = icl::load_manifest(manifest);
  for (std::size_t k = 0; k < m.entries.size(); ++k) {
    const auto& e = m.entries[k];
    one(icl::load_labels(e.labels_path).labels, of.seed + k, fs::path(out) / (e.id + ".png"), e.id);
  }
  return 0;
}

std::vector<icl::TrainingSample> load_samples(const icl::DatasetManifest& m) {
  std::vector<icl::TrainingSample> out;
  for (const auto& e : m.entries) out.push_back({icl::load_field(e.image_path), icl::load_labels(e.labels_path).labels});
  return out;
}

int run_train(const std::string& manifest, const std::string& out, const OptimFlags& of, const LossFlags& lf) {
  const auto samples = load_samples(icl::load_manifest(manifest));
  const auto r = icl::train_tiny_net(samples, lf.weights(), of.config());
  icl::save_checkpoint(r.net, out);
  const auto& losses = r.trace.losses;
  const std::size_t tail = std::min<std::size_t>(losses.size(), 50);
  double avg = 0.0;
  for (std::size_t k = losses.size() - tail; k < losses.size(); ++k) avg += losses[k].total;
  std::printf("trained %d iterations on %zu images; mean loss over last %zu: %.6f\n", of.iterations, samples.size(),
              tail, avg / static_cast<double>(tail));
  return 0;
}

int run_predict(const std::string& manifest, const std::string& ckpt, const std::string& out, bool png_only) {
  const auto net = icl::load_checkpoint(ckpt);
  const auto m = icl::load_manifest(manifest);
  for (const auto& e : m.entries) {
    icl::save_field(icl::predict(net, icl::load_field(e.image_path)), fs::path(out) / (e.id + ".png"), !png_only);
  }
  std::cout << "wrote " << m.entries.size() << " fields to " << out << "\n";
  return 0;
}

int run_gradcheck(int width, int height, int instances, std::uint64_t seed, double epsilon, const LossFlags& lf) {
  constexpr double kTolerance = 1e-4;
  const auto c = icl::random_gradcheck_case(width, height, instances, seed);
  const double err = icl::finite_difference_check(c.field, c.labels, lf.weights(), epsilon);
  std::printf("max relative error: %.3e (tolerance %.0e)\n", err, kTolerance);
  return err < kTolerance ? 0 : 1;
}

int run_eval_prompt(const std::string& manifest, const std::string& fields, int clicks, double threshold,
                    const std::string& report) {
  if (clicks < 1) throw std::invalid_argument("--clicks must be >= 1");
  const auto m = icl::load_manifest(manifest);
  json images = json::array();
  std::vector<double> sums(static_cast<std::size_t>(clicks), 0.0);
  std::size_t total = 0;
  for (const auto& e : m.entries) {
    const auto labels = icl::load_labels(e.labels_path).labels;
    const auto field = icl::load_entry_field(e, optional_path(fields));
    const auto ev = icl::iterative_prompt_eval(field, labels, clicks, threshold);
    json inst = json::array();
    for (std::size_t i = 0; i < ev.instance_ids.size(); ++i) {
      inst.push_back({{"id", ev.instance_ids[i]}, {"iou", ev.iou[i]}});
      for (int c = 0; c < clicks; ++c) sums[static_cast<std::size_t>(c)] += ev.iou[i][static_cast<std::size_t>(c)];
    }
    total += ev.instance_ids.size();
    images.push_back({{"id", e.id}, {"instances", inst}, {"mean_iou", ev.mean_iou}});
  }
  std::vector<double> pooled(sums.size(), 0.0);
  for (std::size_t c = 0; c < sums.size(); ++c) pooled[c] = total ? sums[c] / static_cast<double>(total) : 0.0;
  const json doc{{"protocol", "golden-click"},
                 {"clicks", clicks},
                 {"threshold", threshold},
                 {"images", images},
                 {"aggregate", {{"instances", total}, {"mean_iou_per_click", pooled}}}};
  if (!report.empty()) write_json(report, doc);
  for (int c = 0; c < clicks; ++c) std::printf("click %d: mIoU %.4f\n", c + 1, pooled[static_cast<std::size_t>(c)]);
  return 0;
}

int run_eval_edges(const std::string& manifest, const std::string& fields, double rmax, double tolerance,
                   const std::string& report, const std::string& curve_csv) {
  const auto m = icl::load_manifest(manifest);
  std::vector<icl::EdgeMap> preds;
  std::vector<icl::BinaryMask> gts;
  std::vector<double> tols;
  json images = json::array();
  double ap_sum = 0.0;
  for (const auto& e : m.entries) {
    const auto labels = icl::load_labels(e.labels_path).labels;
    const auto field = icl::load_entry_field(e, optional_path(fields));
    preds.push_back(icl::edges_from_field(field));
    gts.push_back(icl::label_boundaries(labels));
    tols.push_back(tolerance > 0 ? tolerance : icl::default_edge_tolerance(labels.width(), labels.height()));
    const double ap = icl::edge_ap_at_recall(icl::edge_pr_curve(preds.back(), gts.back(), tols.back()), rmax);
    ap_sum += ap;
    images.push_back({{"id", e.id},
                      {"ap", ap},
                      {"gt_edge_pixels", gts.back().count()},
                      {"pred_edge_pixels", preds.back().thinned.count()}});
  }
  std::vector<icl::EdgeEvalItem> items;
  for (std::size_t k = 0; k < preds.size(); ++k) items.push_back({&preds[k], &gts[k], tols[k]});
  const auto curve = icl::edge_pr_curve_pooled(items);
  const double pooled_ap = icl::edge_ap_at_recall(curve, rmax);
  const double mean_ap = ap_sum / static_cast<double>(m.entries.size());
  const json doc{{"protocol", "edge-ap"},
                 {"rmax", rmax},
                 {"images", images},
                 {"aggregate", {{"mean_ap", mean_ap}, {"pooled_ap", pooled_ap}}}};
  if (!report.empty()) write_json(report, doc);
  if (!curve_csv.empty()) {
    std::ofstream f(curve_csv);
    if (!f) throw std::runtime_error("cannot write " + curve_csv);
    f << "threshold,recall,precision\n";
    f.precision(17);
    for (const auto& s : curve) f << s.threshold << ',' << s.recall << ',' << s.precision << '\n';
  }
  std::printf("AP@[0,%.2f]: mean %.4f pooled %.4f\n", rmax, mean_ap, pooled_ap);
  return 0;
}

std::optional<std::pair<int, int>> parse_size(const std::string& text) {
  int w = 0, h = 0;
  char sep = 0;
  std::istringstream in(text);
  if (!(in >> w >> sep >> h) || (sep != 'x' && sep != 'X') || !in.eof() || w < 1 || h < 1) return std::nullopt;
  return std::pair{w, h};
}

int run_serve(const std::string& manifest, const std::string& fields, const std::string& host, int port, int workers) {
  const auto service = icl::PromptService::from_manifest(manifest, optional_path(fields));
  httplib::Server server;
  icl::install_routes(server, service);
  icl::set_worker_count(server, static_cast<std::size_t>(workers));
  spdlog::info("serving {} images on {}:{}", service.images().size(), host, port);
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  icl::configure_logging_from_env();
  CLI::App app{"Instance coloring toolkit"};
  app.require_subcommand(1);

  // gen-scenes
  int count = 10;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  icl::SceneSpec spec;
  std::string fill = "flat";
  bool ideal = false;
  auto* gen = app.add_subcommand("gen-scenes", "Generate a synthetic dataset with a manifest");
  gen->add_option("--count", count, "Number of scenes")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Base seed; scene k uses seed + k")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--width", spec.width)->capture_default_str();
  gen->add_option("--height", spec.height)->capture_default_str();
  gen->add_option("--min-shapes", spec.min_shapes)->capture_default_str();
  gen->add_option("--max-shapes", spec.max_shapes)->capture_default_str();
  gen->add_option("--fill", fill, "flat or two_tone")->check(CLI::IsMember({"flat", "two_tone"}))->capture_default_str();
  gen->add_flag("--ideal-fields", ideal, "Also write label-encoding color fields");

  // optimize
  std::string opt_labels, opt_manifest, opt_out;
  bool png_only = false;
  OptimFlags opt_flags;
  LossFlags opt_loss;
  auto* opt = app.add_subcommand("optimize", "Optimize a color field directly against a label map");
  opt->add_option("--labels", opt_labels, "Label PNG (single image mode)");
  opt->add_option("--manifest", opt_manifest, "Dataset manifest (one field per entry)");
  opt->add_option("--out", opt_out, "Output PNG, or directory with --manifest")->required();
  opt->add_flag("--png-only", png_only, "Skip the lossless .icf sidecar");
  opt_flags.attach(opt);
  opt_loss.attach(opt);

  // train
  std::string train_manifest, train_out;
  OptimFlags train_flags;
  train_flags.lr = 1e-3;
  train_flags.iterations = 2000;
  LossFlags train_loss;
  auto* train = app.add_subcommand("train", "Train the tiny convolutional net");
  train->add_option("--manifest", train_manifest, "Training manifest")->required();
  train->add_option("--out", train_out, "Checkpoint path (JSON)")->required();
  train_flags.attach(train);
  train_loss.attach(train);

  // predict
  std::string pred_manifest, pred_ckpt, pred_out;
  bool pred_png_only = false;
  auto* pred = app.add_subcommand("predict", "Run a trained net over a dataset");
  pred->add_option("--manifest", pred_manifest)->required();
  pred->add_option("--ckpt", pred_ckpt)->required();
  pred->add_option("--out", pred_out, "Output directory for fields")->required();
  pred->add_flag("--png-only", pred_png_only, "Skip the lossless .icf sidecar");

  // gradcheck
  std::string gc_size = "4x4";
  int gc_n = 2;
  std::uint64_t gc_seed = 0;
  double gc_eps = 1e-3;
  LossFlags gc_loss;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the loss gradient");
  gc->add_option("--size", gc_size, "WxH")
      ->capture_default_str()
      ->check(CLI::Validator(
          [](std::string& v) { return parse_size(v) ? std::string() : "must look like 8x8, got '" + v + "'"; }, "WxH"));
  gc->add_option("--instances", gc_n)->capture_default_str();
  gc->add_option("--seed", gc_seed)->capture_default_str();
  gc->add_option("--epsilon", gc_eps)->capture_default_str();
  gc_loss.attach(gc);

  // eval-prompt
  std::string ep_manifest, ep_fields, ep_report;
  int ep_clicks = 1;
  double ep_threshold = icl::kDefaultPromptThreshold;
  auto* ep = app.add_subcommand("eval-prompt", "Golden-click prompting evaluation");
  ep->add_option("--manifest", ep_manifest)->required();
  ep->add_option("--fields", ep_fields, "Directory of <id>.png / <id>.icf fields");
  ep->add_option("--clicks", ep_clicks)->capture_default_str();
  ep->add_option("--threshold", ep_threshold)->capture_default_str();
  ep->add_option("--report", ep_report, "JSON report path");

  // eval-edges
  std::string ee_manifest, ee_fields, ee_report, ee_curve;
  double ee_rmax = 0.2, ee_tol = 0.0;
  auto* ee = app.add_subcommand("eval-edges", "Edge precision/recall and AP over a recall range");
  ee->add_option("--manifest", ee_manifest)->required();
  ee->add_option("--fields", ee_fields, "Directory of <id>.png / <id>.icf fields");
  ee->add_option("--rmax", ee_rmax)->capture_default_str();
  ee->add_option("--tolerance", ee_tol, "Match radius in pixels (default 0.75% of the diagonal)");
  ee->add_option("--report", ee_report, "JSON report path");
  ee->add_option("--curve", ee_curve, "CSV of the pooled curve");

  // serve
  std::string sv_manifest, sv_fields, sv_host = "127.0.0.1";
  int sv_port = 8080, sv_workers = 4;
  auto* sv = app.add_subcommand("serve", "HTTP prompting service");
  sv->add_option("--manifest", sv_manifest)->required();
  sv->add_option("--fields", sv_fields, "Directory of <id>.png / <id>.icf fields");
  sv->add_option("--host", sv_host)->capture_default_str();
  sv->add_option("--port", sv_port)->capture_default_str();
  sv->add_option("--workers", sv_workers)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (*gen) {
      spec.fill = fill == "two_tone" ? icl::FillMode::two_tone : icl::FillMode::flat;
      return run_gen_scenes(count, gen_seed, gen_out, spec, ideal);
    }
    if (*opt) return run_optimize(opt_labels, opt_manifest, opt_out, opt_flags, opt_loss, png_only);
    if (*train) return run_train(train_manifest, train_out, train_flags, train_loss);
    if (*pred) return run_predict(pred_manifest, pred_ckpt, pred_out, pred_png_only);
    if (*gc) {
      const auto [w, h] = *parse_size(gc_size);
      return run_gradcheck(w, h, gc_n, gc_seed, gc_eps, gc_loss);
    }
    if (*ep) return run_eval_prompt(ep_manifest, ep_fields, ep_clicks, ep_threshold, ep_report);
    if (*ee) return run_eval_edges(ee_manifest, ee_fields, ee_rmax, ee_tol, ee_report, ee_curve);
    if (*sv) return run_serve(sv_manifest, sv_fields, sv_host, sv_port, sv_workers);
  } catch (const icl::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
