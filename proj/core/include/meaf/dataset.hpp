#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "meaf/box.hpp"
#include "meaf/tensor.hpp"

namespace meaf {

/// Aligned RGB [3,H,W] and IR [1,H,W] images with values in [0,1].
struct ImagePair {
  Tensor<float> rgb;
  Tensor<float> ir;
  std::vector<GroundTruthBox> boxes;
  std::string id;

  int height() const { return rgb.dim(1); }
  int width() const { return rgb.dim(2); }
  std::vector<LabeledBox> pixel_boxes() const;
};

/// 8-bit grayscale or RGB raster as read from / written to PNM.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (P5) or 3 (P6)
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

Raster read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Raster& raster);

/// Planar float tensor [C,H,W] in [0,1] <-> interleaved 8-bit raster.
Tensor<float> raster_to_tensor(const Raster& raster);
Raster tensor_to_raster(const Tensor<float>& chw);

/// Parses `class cx cy w h` lines; blank lines are ignored.
std::vector<GroundTruthBox> parse_labels(const std::string& text, const std::string& source = "<labels>");
std::string format_labels(const std::vector<GroundTruthBox>& boxes);

ImagePair load_pair(const std::filesystem::path& rgb_path, const std::filesystem::path& ir_path,
                    const std::filesystem::path& label_path);

/// Writes rgb/<id>.ppm, ir/<id>.pgm and labels/<id>.txt under `root`.
void write_pair(const ImagePair& pair, const std::filesystem::path& root);
void write_manifest(const std::vector<std::string>& ids, const std::filesystem::path& root);

/// Loads every sample listed in <root>/manifest.txt.
std::vector<ImagePair> load_dataset(const std::filesystem::path& root);

enum class Visibility { RgbOnly, IrOnly, Both };

struct SynthSpec {
  int image_size = 96;
  int min_targets = 1;
  int max_targets = 3;
  int min_target_size = 7;  // pixels
  int max_target_size = 9;
  // Per-target visibility probabilities (normalized internally).
  double p_rgb_only = 0.0;
  double p_ir_only = 0.0;
  double p_both = 1.0;
  double clutter = 0.1;   // amplitude of the low-frequency background pattern
  double noise = 0.02;    // Gaussian noise sigma
  double contrast = 0.6;  // target brightness above the local background
  int num_classes = 1;
  std::uint64_t seed = 1;

  void validate() const;

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

struct SyntheticSample {
  ImagePair pair;
  std::vector<Visibility> visibility;  // parallel to pair.boxes
};

/// Deterministic given spec.seed. Pixel values are 8-bit quantized so the
/// in-memory samples equal what load_dataset reads back.
std::vector<SyntheticSample> generate_synthetic(const SynthSpec& spec, int count);

/// Generates and writes the dataset (including manifest) under `out_dir`.
std::vector<SyntheticSample> generate_synthetic(const SynthSpec& spec, int count,
                                                const std::filesystem::path& out_dir);

struct Batch {
  Tensor<float> rgb;  // [B,3,H,W]
  Tensor<float> ir;   // [B,1,H,W]
  std::vector<std::vector<GroundTruthBox>> boxes;
  std::vector<std::string> ids;
  std::vector<std::size_t> indices;

  int size() const { return static_cast<int>(ids.size()); }
};

Batch make_batch(const std::vector<ImagePair>& samples, const std::vector<std::size_t>& indices);

/// Epoch-wise mini-batch stream; shuffling is a function of (seed, epoch).
class DatasetIterator {
 public:
  DatasetIterator(const std::vector<ImagePair>& samples, int batch_size, std::optional<std::uint64_t> shuffle_seed);

  /// Resets to the start of `epoch`.
  void start_epoch(int epoch);
  std::optional<Batch> next();
  int batches_per_epoch() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const std::vector<ImagePair>* samples_;
  int batch_size_;
  std::optional<std::uint64_t> seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace meaf
