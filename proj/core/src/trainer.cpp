#include "meaf/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

namespace meaf {

void SgdOptions::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ArgumentError("sgd: learning_rate must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ArgumentError("sgd: momentum must lie in [0,1)");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) throw ArgumentError("sgd: weight_decay must be >= 0");
}

template <typename T>
void sgd_step(const ParameterList<T>& params, OptimizerState<T>& state) {
  const SgdOptions& o = state.options;
  if (state.velocity.empty()) {
    for (const auto& p : params) {
      state.names.push_back(p.name);
      state.velocity.push_back(Tensor<T>(p.tensor.shape()));
    }
  }
  if (state.velocity.size() != params.size()) {
    throw ArgumentError("sgd: optimizer holds " + std::to_string(state.velocity.size()) + " buffers for " +
                        std::to_string(params.size()) + " parameters");
  }
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw ArgumentError("sgd: parameter '" + p.name + "' has no gradient");
  }
  const T lr = static_cast<T>(o.learning_rate);
  const T mu = static_cast<T>(o.momentum);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> w = params[i].tensor;
    if (state.names[i] != params[i].name || state.velocity[i].shape() != w.shape()) {
      throw ArgumentError("sgd: optimizer state does not match parameter '" + params[i].name + "'");
    }
    const T wd = params[i].decay ? static_cast<T>(o.weight_decay) : T(0);
    auto wd_ = w.mutable_data();
    auto g = w.grad_buffer();
    auto v = state.velocity[i].mutable_data();
    for (std::size_t k = 0; k < wd_.size(); ++k) {
      const T gk = g[k] + wd * wd_[k];
      v[k] = mu * v[k] + gk;
      const T update = o.nesterov ? mu * v[k] + gk : v[k];
      wd_[k] -= lr * update;
    }
    w.zero_grad();
  }
}

template void sgd_step(const ParameterList<float>&, OptimizerState<float>&);
template void sgd_step(const ParameterList<double>&, OptimizerState<double>&);

void TrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("train: epochs must be >= 1");
  if (batch_size < 1) throw ArgumentError("train: batch_size must be >= 1");
  if (max_steps < 0) throw ArgumentError("train: max_steps must be >= 0");
  if (image_size <= 0 || image_size % 32 != 0) throw ArgumentError("train: image_size must be a multiple of 32");
  if (log_interval < 1) throw ArgumentError("train: log_interval must be >= 1");
  loss.validate();
  sgd.validate();
  model.validate();
}

namespace {

struct Objective {
  Tensor<float> total;
  LossReport report;
};

Objective forward_objective(const DetectorModel<float>& model, const Batch& batch, const LossWeights& weights,
                            Tape<float>* tape) {
  const auto& bb = model.config.backbone;
  ModelOutput<float> out = model_forward(model, batch.rgb, batch.ir, tape);
  const int h = batch.rgb.dim(2), w = batch.rgb.dim(3);
  TargetAssignment targets = assign_targets(batch.boxes, bb, h, w);
  DetectionLoss<float> det = detection_loss(out.raw, targets, bb, weights, tape);
  Tensor<float> sr;
  if (out.sr.defined()) {
    sr = sr_loss(out.sr, concat_channels(batch.rgb, batch.ir), model.config.sr.target_stride, tape);
  }
  Objective obj{total_loss(det.value, sr, weights, tape), det.report};
  obj.report.sr = sr.defined() ? static_cast<double>(sr.item()) : 0.0;
  obj.report.total = obj.total.item();
  return obj;
}

ParameterList<float> trainable(const DetectorModel<float>& model) {
  return model.sr ? model.parameters() : model.detection_parameters();
}

}  // namespace

LossReport train_step(DetectorModel<float>& model, OptimizerState<float>& optimizer, const Batch& batch,
                      const LossWeights& weights) {
  Tape<float> tape;
  Objective obj = forward_objective(model, batch, weights, &tape);
  if (!std::isfinite(obj.report.total)) {
    const auto where = tape.first_non_finite();
    throw NumericError("non-finite loss; first non-finite tensor: " + where.value_or("loss terms"));
  }
  tape.backward(obj.total);
  sgd_step(trainable(model), optimizer);
  return obj.report;
}

LossReport evaluate_loss(const DetectorModel<float>& model, const Batch& batch, const LossWeights& weights) {
  return forward_objective(model, batch, weights, nullptr).report;
}

TrainResult train(const TrainConfig& config, const std::vector<ImagePair>& dataset,
                  const std::function<void(const StepLog&)>& on_step) {
  config.validate();
  if (dataset.empty()) throw DataError("train: dataset is empty");
  for (const auto& s : dataset) {
    if (s.height() != config.image_size || s.width() != config.image_size) {
      throw DataError("train: sample " + s.id + " is " + std::to_string(s.width()) + "x" +
                      std::to_string(s.height()) + ", config expects " + std::to_string(config.image_size));
    }
    for (const auto& b : s.boxes) {
      if (b.class_id >= config.model.backbone.num_classes) {
        throw DataError("train: sample " + s.id + " has class " + std::to_string(b.class_id) +
                        " but the model has " + std::to_string(config.model.backbone.num_classes) + " classes");
      }
    }
  }
  TrainResult result;
  result.model = DetectorModel<float>::init(config.model, config.seed);
  result.optimizer.options = config.sgd;
  DatasetIterator it(dataset, config.batch_size, config.seed + 1);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    it.start_epoch(epoch);
    while (auto batch = it.next()) {
      if (config.max_steps > 0 && result.steps >= static_cast<std::uint64_t>(config.max_steps)) return result;
      StepLog log;
      log.report = train_step(result.model, result.optimizer, *batch, config.loss);
      log.step = ++result.steps;
      result.history.push_back(log);
      if (on_step) on_step(log);
    }
  }
  return result;
}

std::string loss_csv_header() { return "step,total,det,sr,obj0,loc0,cls0,obj1,loc1,cls1,obj2,loc2,cls2"; }

std::string loss_csv_row(const StepLog& log) {
  const LossReport& r = log.report;
  std::string row = std::to_string(log.step);
  auto add = [&row](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), ",%.9g", v);
    row += buf;
  };
  add(r.total);
  add(r.detection);
  add(r.sr);
  for (int s = 0; s < 3; ++s) {
    add(r.obj[static_cast<std::size_t>(s)]);
    add(r.loc[static_cast<std::size_t>(s)]);
    add(r.cls[static_cast<std::size_t>(s)]);
  }
  return row;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<StepLog>& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << loss_csv_header() << '\n';
  for (const auto& log : history) f << loss_csv_row(log) << '\n';
  if (!f) throw DataError("write failed for " + path.string());
}

void EvalOptions::validate() const {
  if (!(conf >= 0 && conf <= 1)) throw ArgumentError("eval: conf must be in [0,1]");
  if (!(iou > 0 && iou <= 1)) throw ArgumentError("eval: iou must be in (0,1]");
  if (!(nms_iou > 0 && nms_iou <= 1)) throw ArgumentError("eval: nms_iou must be in (0,1]");
}

std::vector<std::vector<Detection>> infer_dataset(const DetectorModel<float>& model,
                                                  const std::vector<ImagePair>& dataset, double conf, double nms_iou,
                                                  int threads) {
  std::vector<std::vector<Detection>> out(dataset.size());
  auto run = [&](std::size_t i) {
    const ImagePair& s = dataset[i];
    const Tensor<float> rgb = s.rgb.reshaped({1, 3, s.height(), s.width()});
    const Tensor<float> ir = s.ir.reshaped({1, 1, s.height(), s.width()});
    out[i] = detect(model, rgb, ir, conf, nms_iou).front();
  };
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), dataset.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < dataset.size(); ++i) run(i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < dataset.size(); i += workers) run(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

EvalReport evaluate_model(const DetectorModel<float>& model, const std::vector<ImagePair>& dataset,
                          const EvalOptions& options, int threads) {
  options.validate();
  const int k = model.config.backbone.num_classes;
  std::vector<std::vector<LabeledBox>> gts;
  for (const auto& s : dataset) {
    gts.push_back(s.pixel_boxes());
    for (const auto& b : gts.back()) {
      if (b.class_id < 0 || b.class_id >= k) {
        throw DataError("sample " + s.id + " has class " + std::to_string(b.class_id) + " but the model has " +
                        std::to_string(k) + " classes");
      }
    }
  }
  const auto dets = infer_dataset(model, dataset, options.conf, options.nms_iou, threads);
  return evaluate(dets, gts, k, options.conf, options.iou);
}

}  // namespace meaf
