// agyolo command-line front end.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 bad input data or
// files, 3 runtime failure. With --json only JSON goes to stdout.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "agyolo/builders.hpp"
#include "agyolo/dataio.hpp"
#include "agyolo/evaluator.hpp"
#include "agyolo/fp16.hpp"
#include "agyolo/kmeans.hpp"
#include "agyolo/slimmer.hpp"
#include "agyolo/trainer.hpp"
#include "agyolo/weights_io.hpp"

using namespace agyolo;
using nlohmann::json;

namespace {

struct Common {
  std::uint64_t seed = 1;
  bool json = false;
};

struct ArchOptions {
  std::string arch = "ag-yolo";
  std::string arch_config;
  std::string anchors;  // empty: "def" for yolov3-tiny*, "8" otherwise
  double width = 1.0;
  int classes = 1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Random seed");
  app->add_flag("--json", c.json, "Write a JSON report to stdout");
}

void add_arch(CLI::App* app, ArchOptions& a) {
  app->add_option("--arch", a.arch, "Architecture name or alias");
  app->add_option("--arch-config", a.arch_config, "Architecture table (JSON) replacing the built-in one");
  app->add_option("--anchors", a.anchors, "def | cust | 8 | w,h,w,h,...");
  app->add_option("--width", a.width, "Channel width multiplier")->check(CLI::PositiveNumber);
  app->add_option("--classes", a.classes, "Number of classes")->check(CLI::PositiveNumber);
}

AnchorSet anchors_for(const ArchOptions& a) {
  if (!a.anchors.empty()) return AnchorSet::parse(a.anchors);
  return AnchorSet::parse(a.arch.rfind("yolov3-tiny", 0) == 0 ? "def" : "8");
}

Network build(const ArchOptions& a) {
  const ArchRegistry reg = a.arch_config.empty() ? ArchRegistry::builtin() : ArchRegistry::from_file(a.arch_config);
  return build_network(reg.get(a.arch), a.classes, anchors_for(a), a.width);
}

// A weights file carries its own architecture. When --arch is also given the
// file must match it.
Network load_model(const std::string& weights, const ArchOptions& a, bool arch_given) {
  if (!arch_given) return load_network(weights);
  Network net = build(a);
  load_weights(net, weights);
  return net;
}

void emit(const Common& c, const json& j, const std::string& text) {
  if (c.json)
    std::cout << j.dump(2) << "\n";
  else
    std::cout << text;
}

json report_json(const EvalReport& r) { return json::parse(r.to_json()); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ag-YOLO detector toolkit"};
  app.require_subcommand(1);

  // ---- gen-synth ----
  Common gs_c;
  gs_c.seed = 7;
  std::string gs_out = "synth";
  int gs_count = 400;
  SynthOptions gs_opts;
  CLI::App* gen = app.add_subcommand("gen-synth", "Generate the synthetic disc corpus");
  add_common(gen, gs_c);
  gen->add_option("--out", gs_out, "Output directory");
  gen->add_option("--count", gs_count, "Number of images")->check(CLI::PositiveNumber);
  gen->add_option("--size", gs_opts.size, "Image side in pixels")->check(CLI::PositiveNumber);

  // ---- anchors ----
  Common an_c;
  std::string an_list;
  int an_k = 6;
  CLI::App* anc = app.add_subcommand("anchors", "Cluster label boxes into anchors (1 - IoU k-means)");
  add_common(anc, an_c);
  anc->add_option("--list", an_list, "Image list file")->required();
  anc->add_option("--k", an_k, "Number of anchors")->check(CLI::PositiveNumber);

  // ---- train ----
  Common tr_c;
  ArchOptions tr_a;
  TrainConfig tr_cfg;
  std::string tr_list, tr_out = "model.agyl", tr_init, tr_resume, tr_dims, tr_eval_list;
  double tr_bn_l1 = 0;
  bool tr_no_aug = false;
  int tr_log_every = 100;
  double tr_max_seconds = 0;
  CLI::App* tr = app.add_subcommand("train", "Train a detector");
  add_common(tr, tr_c);
  add_arch(tr, tr_a);
  tr->add_option("--list", tr_list, "Training list file")->required();
  tr->add_option("--weights", tr_out, "Output weights file");
  tr->add_option("--init", tr_init, "Start from these weights (architecture taken from the file)");
  tr->add_option("--resume", tr_resume, "Resume from a checkpoint");
  tr->add_option("--checkpoint", tr_cfg.checkpoint_path, "Checkpoint path (default <weights>.ckpt)");
  tr->add_option("--checkpoint-every", tr_cfg.checkpoint_every, "Iterations between checkpoints");
  tr->add_option("--metrics", tr_cfg.metrics_path, "Metrics log (iter loss lobj lbox dim lr lambda)");
  tr->add_option("--iterations", tr_cfg.max_iterations, "Iterations to run")->check(CLI::PositiveNumber);
  tr->add_option("--batch", tr_cfg.batch_size, "Images per iteration")->check(CLI::PositiveNumber);
  tr->add_option("--lr", tr_cfg.learning_rate, "Adam learning rate");
  tr->add_option("--lr-steps", tr_cfg.lr_steps, "Iterations where the learning rate is scaled")->delimiter(',');
  tr->add_option("--lr-scale", tr_cfg.lr_scale, "Factor applied at each --lr-steps iteration");
  tr->add_option("--dims", tr_dims, "Comma-separated input sizes, one drawn per epoch");
  tr->add_option("--decay", tr_cfg.decay.early, "Weight decay before --decay-switch");
  tr->add_option("--decay-late", tr_cfg.decay.late, "Weight decay after --decay-switch");
  tr->add_option("--decay-switch", tr_cfg.decay.switch_at, "Iteration where decay changes");
  tr->add_option("--bn-l1", tr_bn_l1, "BN gamma L1 coefficient (sparsity training)");
  tr->add_option("--loss", tr_cfg.loss.mode, "focal-ciou | legacy")
      ->transform(CLI::CheckedTransformer(std::map<std::string, LossMode>{{"focal-ciou", LossMode::FocalCiou},
                                                                           {"legacy", LossMode::Legacy}}));
  tr->add_option("--ignore-refine", tr_cfg.loss.ignore_refine_iou,
                 "Ignore slots whose prediction overlaps no object above this IoU count as background");
  tr->add_option("--lambda-box", tr_cfg.loss.lambda_box, "Box loss weight");
  tr->add_option("--lambda-obj", tr_cfg.loss.lambda_obj, "Objectness weight on positives");
  tr->add_option("--lambda-noobj", tr_cfg.loss.lambda_noobj, "Objectness weight on background");
  tr->add_flag("--no-augment", tr_no_aug, "Disable data augmentation");
  tr->add_option("--eval-list", tr_eval_list, "Evaluate on this list every --eval-every iterations");
  tr->add_option("--eval-every", tr_cfg.eval_every, "Evaluation period");
  tr->add_option("--eval-dim", tr_cfg.eval.dim, "Input size for periodic evaluation");
  tr->add_option("--log-every", tr_log_every, "Progress line period on stderr (0: silent)");
  tr->add_option("--max-seconds", tr_max_seconds, "Stop after this much wall time (0: no limit)");

  // ---- eval ----
  Common ev_c;
  ArchOptions ev_a;
  EvalOptions ev_o;
  std::string ev_weights, ev_list;
  CLI::App* ev = app.add_subcommand("eval", "Precision, recall and F1 on a labelled list");
  add_common(ev, ev_c);
  add_arch(ev, ev_a);
  ev->add_option("--weights", ev_weights, "Weights file")->required();
  ev->add_option("--list", ev_list, "Image list file")->required();
  ev->add_option("--conf", ev_o.conf_thresh, "Confidence threshold");
  ev->add_option("--nms", ev_o.nms_thresh, "NMS IoU threshold");
  ev->add_option("--dim", ev_o.dim, "Input size");
  ev->add_option("--iou", ev_o.iou_thresholds, "Matching IoU thresholds");

  // ---- detect ----
  Common de_c;
  ArchOptions de_a;
  std::string de_weights, de_image, de_out;
  int de_dim = 416;
  double de_conf = 0.4, de_nms = 0.5;
  CLI::App* de = app.add_subcommand("detect", "Detect objects in one image");
  add_common(de, de_c);
  add_arch(de, de_a);
  de->add_option("--weights", de_weights, "Weights file")->required();
  de->add_option("--image", de_image, "PPM image")->required();
  de->add_option("--out", de_out, "Write an annotated PPM here");
  de->add_option("--dim", de_dim, "Input size");
  de->add_option("--conf", de_conf, "Confidence threshold");
  de->add_option("--nms", de_nms, "NMS IoU threshold");

  // ---- prune ----
  Common pr_c;
  std::string pr_weights, pr_out;
  double pr_threshold = 0.5;
  int pr_dim = 416;
  CLI::App* pr = app.add_subcommand("prune", "Remove channels with small BN gamma");
  add_common(pr, pr_c);
  pr->add_option("--weights", pr_weights, "Input weights")->required();
  pr->add_option("--out", pr_out, "Pruned weights file (omit for a preview)");
  pr->add_option("--threshold", pr_threshold, "Gamma threshold");
  pr->add_option("--dim", pr_dim, "Input size for the FLOP report");

  // ---- quantize ----
  Common qu_c;
  std::string qu_weights, qu_out, qu_list;
  EvalOptions qu_o;
  CLI::App* qu = app.add_subcommand("quantize", "Round weights to binary16");
  add_common(qu, qu_c);
  qu->add_option("--weights", qu_weights, "Input weights")->required();
  qu->add_option("--out", qu_out, "FP16 weights file");
  qu->add_option("--list", qu_list, "Report F1 before and after on this list");
  qu->add_option("--conf", qu_o.conf_thresh, "Confidence threshold");
  qu->add_option("--nms", qu_o.nms_thresh, "NMS IoU threshold");
  qu->add_option("--dim", qu_o.dim, "Input size");

  // ---- stats ----
  Common st_c;
  ArchOptions st_a;
  std::string st_weights;
  int st_dim = 416;
  bool st_layers = false;
  CLI::App* st = app.add_subcommand("stats", "Parameter and FLOP counts");
  add_common(st, st_c);
  add_arch(st, st_a);
  st->add_option("--weights", st_weights, "Describe this weights file instead of --arch");
  st->add_option("--dim", st_dim, "Input size");
  st->add_flag("--layers", st_layers, "Print the layer list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const SynthLists lists = gen_synthetic(gs_count, gs_c.seed, gs_out, gs_opts);
      json j{{"train", lists.train},
             {"test", lists.test},
             {"train_count", lists.train_count},
             {"test_count", lists.test_count},
             {"seed", gs_c.seed}};
      emit(gs_c, j,
           "wrote " + std::to_string(lists.train_count) + " training and " + std::to_string(lists.test_count) +
               " test images to " + gs_out + "\n");
    } else if (*anc) {
      std::vector<Anchor> boxes;
      for (const DatasetItem& it : load_dataset(an_list))
        for (const GroundTruth& g : it.objects) boxes.push_back({g.box.w * kReferenceDim, g.box.h * kReferenceDim});
      const KMeansResult r = kmeans_anchors(boxes, an_k, an_c.seed);
      std::ostringstream pairs;
      json centers = json::array();
      for (std::size_t i = 0; i < r.centers.size(); ++i) {
        pairs << (i ? "," : "") << fmt("%.2f", r.centers[i].w) << "," << fmt("%.2f", r.centers[i].h);
        centers.push_back({r.centers[i].w, r.centers[i].h});
      }
      json j{{"anchors", centers},
             {"anchors_text", pairs.str()},
             {"mean_iou", 1 - r.objective},
             {"iterations", r.iterations},
             {"boxes", boxes.size()}};
      emit(an_c, j, pairs.str() + "\nmean IoU " + fmt("%.4f", 1 - r.objective) + "\n");
    } else if (*tr) {
      if (!tr_dims.empty()) {
        tr_cfg.dims.clear();
        std::stringstream ss(tr_dims);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
          std::size_t used = 0;
          int d = 0;
          try {
            d = std::stoi(tok, &used);
          } catch (const std::logic_error&) {
            used = 0;
          }
          if (used == 0 || used != tok.size()) throw ConfigError("--dims: bad size '" + tok + "'");
          tr_cfg.dims.push_back(d);
        }
      }
      tr_cfg.seed = tr_c.seed;
      tr_cfg.use_augment = !tr_no_aug;
      tr_cfg.bn_l1 = {tr_bn_l1, tr_bn_l1, tr_cfg.decay.switch_at};
      if (tr_cfg.checkpoint_path.empty()) tr_cfg.checkpoint_path = tr_out + ".ckpt";
      try {
        tr_cfg.validate();
      } catch (const InputError& e) {
        throw ConfigError(e.what());
      }

      Network net;
      Adam opt;
      std::int64_t start = 0;
      if (!tr_resume.empty()) {
        net = load_network(tr_resume);
        start = load_checkpoint(net, opt, tr_resume);
      } else if (!tr_init.empty()) {
        net = load_network(tr_init);
      } else {
        net = build(tr_a);
        init_weights(net, tr_c.seed);
      }
      ImageStore data(load_dataset(tr_list));
      ImageStore eval_set;
      TrainHooks hooks;
      if (!tr_eval_list.empty()) {
        eval_set = ImageStore(load_dataset(tr_eval_list));
        hooks.eval_set = &eval_set;
      }
      const auto t0 = std::chrono::steady_clock::now();
      hooks.on_iteration = [&](const IterationLog& it) {
        if (tr_log_every > 0 && it.iteration % tr_log_every == 0) std::cerr << format_log_line(it) << "\n";
        const double spent = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return tr_max_seconds <= 0 || spent < tr_max_seconds;
      };
      const TrainResult r = train_loop(net, data, tr_cfg, opt, start, hooks);
      save_weights(net, tr_out);
      json j{{"weights", tr_out},
             {"checkpoint", tr_cfg.checkpoint_path},
             {"iterations", r.iterations},
             {"final_loss", r.log.empty() ? 0.0 : r.log.back().loss},
             {"seconds", r.seconds}};
      for (const auto& [iter, rep] : r.evals) j["evals"].push_back({{"iteration", iter}, {"report", report_json(rep)}});
      emit(tr_c, j,
           "trained to iteration " + std::to_string(r.iterations) + ", final loss " +
               fmt("%.5f", r.log.empty() ? 0.0 : r.log.back().loss) + ", weights " + tr_out + "\n");
    } else if (*ev) {
      Network net = load_model(ev_weights, ev_a, ev->count("--arch") > 0);
      ImageStore data(load_dataset(ev_list));
      const EvalReport r = evaluate(net, data, ev_o);
      emit(ev_c, report_json(r), r.to_table());
    } else if (*de) {
      Network net = load_model(de_weights, de_a, de->count("--arch") > 0);
      const TensorF img = load_ppm(de_image);
      const std::vector<Detection> dets = detect(net, img, de_dim, de_conf, de_nms);
      if (!de_out.empty()) save_ppm(annotate(img, dets), de_out);
      json j = json::array();
      std::string text;
      for (const Detection& d : dets) {
        j.push_back({{"class", d.cls},
                     {"confidence", d.confidence},
                     {"cx", d.box.cx},
                     {"cy", d.box.cy},
                     {"w", d.box.w},
                     {"h", d.box.h}});
        text += std::to_string(d.cls) + " " + fmt("%.4f", d.confidence) + "  " + fmt("%.4f", d.box.cx) + " " +
                fmt("%.4f", d.box.cy) + " " + fmt("%.4f", d.box.w) + " " + fmt("%.4f", d.box.h) + "\n";
      }
      emit(de_c, json{{"detections", j}}, text);
    } else if (*pr) {
      std::string meta;
      const Network net = load_network(pr_weights, &meta);
      auto [pruned, report] = prune(net, pr_threshold, pr_dim);
      if (!pr_out.empty()) save_weights(pruned, pr_out, Precision::FP32, meta);
      emit(pr_c, json::parse(report.to_json()), report.to_table());
    } else if (*qu) {
      std::string meta;
      Network net = load_network(qu_weights, &meta);
      json j;
      std::string text;
      std::unique_ptr<ImageStore> data;
      if (!qu_list.empty()) {
        data = std::make_unique<ImageStore>(load_dataset(qu_list));
        const EvalReport before = evaluate(net, *data, qu_o);
        j["before"] = report_json(before);
        text += "before:\n" + before.to_table();
      }
      const QuantizeReport q = quantize_net(net);
      j["values"] = q.values;
      j["max_abs_error"] = q.max_abs_error;
      j["mean_abs_error"] = q.mean_abs_error;
      text += "rounded " + std::to_string(q.values) + " values, max |error| " + fmt("%.3g", q.max_abs_error) +
              ", mean |error| " + fmt("%.3g", q.mean_abs_error) + "\n";
      if (data) {
        const EvalReport after = evaluate(net, *data, qu_o);
        j["after"] = report_json(after);
        j["f1_drop"] = j["before"]["thresholds"][0]["f1"].get<double>() - after.thresholds[0].scores.f1;
        text += "after:\n" + after.to_table();
      }
      if (!qu_out.empty()) save_weights(net, qu_out, Precision::FP16, meta);
      emit(qu_c, j, text);
    } else if (*st) {
      Network net = st_weights.empty() ? build(st_a) : load_network(st_weights);
      const ParamCount p = net.count_params();
      const double bf = net.count_flops(st_dim);
      json j{{"arch", st_weights.empty() ? st_a.arch : st_weights},
             {"classes", net.num_classes()},
             {"anchors", net.anchors().str()},
             {"dim", st_dim},
             {"params", p.learnable},
             {"serialized_params", p.serialized},
             {"bflops", bf},
             {"layers", net.size()}};
      std::string text = "params " + fmt("%.4f", p.learnable / 1e6) + "M (" + std::to_string(p.learnable) +
                         ")  BFLOPs@" + std::to_string(st_dim) + " " + fmt("%.4f", bf) + "  layers " +
                         std::to_string(net.size()) + "\n";
      if (st_layers) {
        const std::vector<Shape> shapes = net.infer_shapes(st_dim, st_dim);
        json layers = json::array();
        for (int id = 0; id < net.size(); ++id) {
          const LayerSpec& s = net.layer(id);
          const Shape& sh = shapes[id];
          layers.push_back({{"id", id}, {"kind", std::string(to_string(s.kind))}, {"name", s.name},
                            {"shape", {sh.c, sh.h, sh.w}}});
          char line[160];
          std::snprintf(line, sizeof line, "%4d %-10s %-28s %5d x %4d x %4d\n", id,
                        std::string(to_string(s.kind)).c_str(), s.name.c_str(), sh.c, sh.h, sh.w);
          text += line;
        }
        j["layer_list"] = layers;
      }
      emit(st_c, j, text);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
