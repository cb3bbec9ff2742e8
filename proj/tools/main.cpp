#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>

#include "meaf/config.hpp"
#include "meaf/dataset.hpp"
#include "meaf/detector.hpp"
#include "meaf/fusion.hpp"
#include "meaf/metrics.hpp"
#include "meaf/trainer.hpp"

namespace fs = std::filesystem;
using namespace meaf;

namespace {

int thread_budget() {
  const char* env = std::getenv("MEAF_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 0) throw ArgumentError("MEAF_THREADS must be a non-negative integer");
  return static_cast<int>(n);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  int count = 16;
  std::string out;
  std::int64_t seed = -1;
};

int cmd_synth(const SynthArgs& a) {
  SynthSpec spec = a.spec.empty() ? SynthSpec{} : load_synth_spec(a.spec);
  if (a.seed >= 0) spec.seed = static_cast<std::uint64_t>(a.seed);
  spec.validate();
  if (a.count <= 0) throw DataError("empty dataset requested");
  const auto samples = generate_synthetic(spec, a.count, a.out);

  std::map<int, int> hist;
  int targets = 0;
  for (const auto& s : samples) {
    for (const auto& b : s.pair.pixel_boxes()) {
      hist[static_cast<int>(std::lround(std::max(b.box.width(), b.box.height())))]++;
      ++targets;
    }
  }
  std::printf("wrote %d images, %d targets to %s\n", a.count, targets, a.out.c_str());
  std::printf("target size (px, longest side) histogram:\n");
  const int peak = hist.empty() ? 1 : std::max_element(hist.begin(), hist.end(), [](auto& x, auto& y) {
                                        return x.second < y.second;
                                      })->second;
  for (const auto& [size, n] : hist) {
    const double ratio = static_cast<double>(size) / spec.image_size;
    std::printf("  %3d (%.3f) %5d %s\n", size, ratio, n, std::string(static_cast<std::size_t>(40 * n / peak), '#').c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string log;
  bool no_sr = false;
  std::string modality;
  int steps = -1;
  std::int64_t seed = -1;
  bool resume = false;
};

int cmd_train(const TrainArgs& a) {
  if (a.resume) throw ArgumentError("resuming an interrupted run is not supported; start a fresh run instead");
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  TrainConfig& cfg = rc.train;
  if (!a.data.empty()) cfg.data_dir = a.data;
  if (a.no_sr) cfg.model.sr.enabled = false;
  if (!a.modality.empty()) cfg.model.modality = parse_modality(a.modality);
  if (a.steps >= 0) cfg.max_steps = a.steps;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (cfg.data_dir.empty()) throw ArgumentError("no dataset given (--data or train.data)");
  cfg.validate();

  const auto dataset = load_dataset(cfg.data_dir);
  const fs::path out(a.out);
  const fs::path log = a.log.empty() ? fs::path(out).replace_extension(".loss.csv") : fs::path(a.log);

  std::fprintf(stderr, "training %s model on %zu images (sr %s)\n", std::string(to_string(cfg.model.modality)).c_str(),
               dataset.size(), cfg.model.sr.enabled ? "on" : "off");
  TrainResult result = train(cfg, dataset, [&](const StepLog& s) {
    if (s.step == 1 || s.step % static_cast<std::uint64_t>(cfg.log_interval) == 0) {
      std::fprintf(stderr, "step %5llu  total %.5f  det %.5f  sr %.5f\n", static_cast<unsigned long long>(s.step),
                   s.report.total, s.report.detection, s.report.sr);
    }
  });

  Checkpoint ckpt{std::move(result.model), std::move(result.optimizer), result.steps, cfg.seed};
  save_checkpoint(ckpt, out);
  write_loss_csv(log, result.history);
  std::printf("wrote %s (%llu steps) and %s\n", out.string().c_str(), static_cast<unsigned long long>(result.steps),
              log.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  double conf = 0.25;
  double iou = 0.5;
  double nms_iou = 0.45;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const auto dataset = load_dataset(a.data);
  const DetectorModel<float> model = strip_sr(ckpt.model);
  const EvalReport report = evaluate_model(model, dataset, {a.conf, a.iou, a.nms_iou}, thread_budget());

  const fs::path out(a.out);
  fs::create_directories(out);
  const std::string table = format_report(report);
  std::ofstream f(out / "report.txt", std::ios::binary);
  f << table;
  if (!f) throw DataError("cannot write " + (out / "report.txt").string());
  export_curves(report, out);
  std::cout << table;
  return 0;
}

// ---------------------------------------------------------------------------

struct FuseArgs {
  std::string ckpt;
  std::string rgb;
  std::string ir;
  std::string out;
};

void write_normalized(const fs::path& path, const Tensor<float>& t, int channel) {
  const int h = t.dim(2), w = t.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const auto src = t.data().subspan(static_cast<std::size_t>(channel) * plane, plane);
  const auto [lo, hi] = std::minmax_element(src.begin(), src.end());
  const float range = *hi - *lo;
  Raster r{w, h, 1, std::vector<std::uint8_t>(plane)};
  for (std::size_t i = 0; i < plane; ++i) {
    const float v = range > 0 ? (src[i] - *lo) / range : 0.0f;
    r.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  write_pnm(path, r);
}

void write_channels(const fs::path& dir, const std::string& stem, const Tensor<float>& t) {
  for (int c = 0; c < t.dim(1); ++c) write_normalized(dir / (stem + "_c" + std::to_string(c) + ".pgm"), t, c);
}

int cmd_fuse(const FuseArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  if (!ckpt.model.fusion) throw DataError("checkpoint was trained without MEAF fusion (modality " +
                                          std::string(to_string(ckpt.model.config.modality)) + ")");
  const Tensor<float> rgb = raster_to_tensor(read_pnm(a.rgb));
  const Tensor<float> ir = raster_to_tensor(read_pnm(a.ir));
  if (rgb.dim(0) != 3) throw DataError(a.rgb + " is not an RGB image");
  if (ir.dim(0) != 1) throw DataError(a.ir + " is not a grayscale image");
  if (rgb.dim(1) != ir.dim(1) || rgb.dim(2) != ir.dim(2)) {
    throw DataError("unaligned pair: rgb is " + std::to_string(rgb.dim(2)) + "x" + std::to_string(rgb.dim(1)) +
                    ", ir is " + std::to_string(ir.dim(2)) + "x" + std::to_string(ir.dim(1)));
  }
  const int h = rgb.dim(1), w = rgb.dim(2);
  FusionTrace<float> trace;
  meaf_forward(rgb.reshaped({1, 3, h, w}), ir.reshaped({1, 1, h, w}), *ckpt.model.fusion, static_cast<Tape<float>*>(nullptr), &trace);

  const fs::path out(a.out);
  fs::create_directories(out);
  for (const auto& [name, branch] : {std::pair{"rgb", &trace.rgb}, std::pair{"ir", &trace.ir}}) {
    write_channels(out, std::string("mask_") + name, branch->mask);
    write_normalized(out / (std::string("attention_") + name + ".pgm"), branch->attention, 0);
  }
  write_channels(out, "fused", trace.fused);
  std::printf("wrote %d mask, 2 attention and %d fused channel images to %s\n",
              trace.rgb.mask.dim(1) + trace.ir.mask.dim(1), trace.fused.dim(1), a.out.c_str());
  return 0;
}

struct ConfigArgs {
  std::string out;
};

int cmd_config(const ConfigArgs& a) {
  const std::string text = serialize_run_config(RunConfig{});
  if (a.out.empty()) {
    std::cout << text;
    return 0;
  }
  std::ofstream f(a.out, std::ios::binary);
  f << text;
  if (!f) throw DataError("cannot write " + a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meaf: RGB+IR small-target detector with mask-enhanced attention fusion"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic RGB+IR dataset");
  s->add_option("--spec", synth.spec, "Config file with synth.* keys (defaults when omitted)");
  s->add_option("--count", synth.count, "Number of images")->required();
  s->add_option("--out", synth.out, "Output dataset directory")->required();
  s->add_option("--seed", synth.seed, "Override synth.seed (-1: keep)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a detector and write a checkpoint plus loss CSV");
  t->add_option("--config", tr.config, "Run config file (defaults when omitted)");
  t->add_option("--data", tr.data, "Dataset directory (overrides train.data)");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--log", tr.log, "Loss CSV path (default: checkpoint path with .loss.csv)");
  t->add_flag("--no-sr", tr.no_sr, "Disable the reconstruction branch");
  t->add_option("--modality", tr.modality, "rgb, ir or fused (overrides model.modality)")
      ->check(CLI::IsMember({"", "rgb", "ir", "fused"}));
  t->add_option("--steps", tr.steps, "Override train.max_steps (-1: keep)");
  t->add_option("--seed", tr.seed, "Override train.seed (-1: keep)");
  t->add_flag("--resume", tr.resume, "Not supported; reports an error");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint (SR stripped) on a dataset");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--conf", ev.conf, "Score threshold")->check(CLI::Range(0.0, 1.0));
  e->add_option("--iou", ev.iou, "IoU threshold for a true positive")->check(CLI::Range(0.0, 1.0));
  e->add_option("--nms-iou", ev.nms_iou, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));

  FuseArgs fu;
  auto* f = app.add_subcommand("fuse", "Export fusion masks, attention maps and fused channels as PGM");
  f->add_option("--ckpt", fu.ckpt, "Checkpoint path (fused modality)")->required();
  f->add_option("--rgb", fu.rgb, "RGB image (PPM)")->required();
  f->add_option("--ir", fu.ir, "IR image (PGM)")->required();
  f->add_option("--out", fu.out, "Output directory")->required();

  ConfigArgs cf;
  auto* c = app.add_subcommand("config", "Print the default run config");
  c->add_option("--out", cf.out, "Write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    std::cerr << "ERROR: " << err.what() << "\n";
    return 1;
  }

  try {
    thread_budget();
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*f) return cmd_fuse(fu);
    if (*c) return cmd_config(cf);
  } catch (const NumericError& err) {
    std::cerr << "ERROR: numeric: " << err.what() << "\n";
    return 3;
  } catch (const DataError& err) {
    std::cerr << "ERROR: data: " << err.what() << "\n";
    return 2;
  } catch (const IncompatibleCheckpointError& err) {
    std::cerr << "ERROR: data: " << err.what() << "\n";
    return 2;
  } catch (const CorruptCheckpointError& err) {
    std::cerr << "ERROR: data: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "ERROR: usage: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
