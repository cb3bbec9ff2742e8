#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "meaf/dataset.hpp"
#include "meaf/detector.hpp"
#include "meaf/losses.hpp"
#include "meaf/metrics.hpp"

namespace meaf {

struct SgdOptions {
  double learning_rate = 0.01;
  double momentum = 0.937;
  double weight_decay = 0.0005;
  bool nesterov = true;

  void validate() const;

  friend bool operator==(const SgdOptions&, const SgdOptions&) = default;
};

/// Velocity buffers are keyed by parameter name and created zero-filled on
/// the first step.
template <typename T>
struct OptimizerState {
  SgdOptions options;
  std::vector<std::string> names;
  std::vector<Tensor<T>> velocity;
};

/// One SGD step over `params`, then zeroes their gradients:
///   g' = g + wd·w (decayed tensors only);  v = μ·v + g'
///   w -= lr · (nesterov ? μ·v + g' : v)
/// Throws ArgumentError if a trainable parameter has no gradient.
template <typename T>
void sgd_step(const ParameterList<T>& params, OptimizerState<T>& state);

struct TrainConfig {
  int epochs = 300;
  int max_steps = 0;  // 0: run all epochs
  int batch_size = 2;
  LossWeights loss;
  SgdOptions sgd;
  std::uint64_t seed = 0;
  int image_size = 96;
  int log_interval = 10;
  std::string data_dir;
  ModelConfig model;  // model.sr.enabled toggles the reconstruction branch

  void validate() const;
};

struct StepLog {
  std::uint64_t step = 0;
  LossReport report;
};

struct TrainResult {
  DetectorModel<float> model;
  OptimizerState<float> optimizer;
  std::vector<StepLog> history;
  std::uint64_t steps = 0;
};

/// Forward, total loss, backward and SGD step for one batch.
LossReport train_step(DetectorModel<float>& model, OptimizerState<float>& optimizer, const Batch& batch,
                      const LossWeights& weights);

/// Loss of one batch without updating anything.
LossReport evaluate_loss(const DetectorModel<float>& model, const Batch& batch, const LossWeights& weights);

/// Deterministic given config.seed: seeded init and per-epoch shuffle.
TrainResult train(const TrainConfig& config, const std::vector<ImagePair>& dataset,
                  const std::function<void(const StepLog&)>& on_step = {});

/// Header: step,total,det,sr,obj0,loc0,cls0,obj1,loc1,cls1,obj2,loc2,cls2
std::string loss_csv_header();
std::string loss_csv_row(const StepLog& log);
void write_loss_csv(const std::filesystem::path& path, const std::vector<StepLog>& history);

struct EvalOptions {
  double conf = 0.25;
  double iou = 0.5;
  double nms_iou = 0.45;

  void validate() const;

  friend bool operator==(const EvalOptions&, const EvalOptions&) = default;
};

/// Detections for every sample, in dataset order. Images are split across
/// `threads` workers (0: hardware concurrency); results do not depend on it.
std::vector<std::vector<Detection>> infer_dataset(const DetectorModel<float>& model,
                                                  const std::vector<ImagePair>& dataset, double conf, double nms_iou,
                                                  int threads = 1);

/// Inference plus evaluate() against the dataset labels.
EvalReport evaluate_model(const DetectorModel<float>& model, const std::vector<ImagePair>& dataset,
                          const EvalOptions& options, int threads = 1);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DetectorModel<float> model;  // model.config is echoed into the file
  OptimizerState<float> optimizer;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace meaf
