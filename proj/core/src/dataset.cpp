#include "meaf/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "meaf/random.hpp"

namespace fs = std::filesystem;

namespace meaf {

std::vector<LabeledBox> ImagePair::pixel_boxes() const {
  std::vector<LabeledBox> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) out.push_back(LabeledBox{b.to_pixels(width(), height()), b.class_id});
  return out;
}

// ---------------------------------------------------------------------------
// PNM

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

// Reads the next header integer, skipping whitespace and '#' comments.
int header_int(const std::string& s, std::size_t& pos, const fs::path& path) {
  while (pos < s.size()) {
    if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + s.size(), v);
  if (ec != std::errc() || v <= 0) throw DataError(path.string() + ": malformed PNM header");
  pos = static_cast<std::size_t>(ptr - s.data());
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Raster read_pnm(const fs::path& path) {
  const std::string s = read_file(path);
  if (s.size() < 2 || s[0] != 'P' || (s[1] != '5' && s[1] != '6')) {
    throw DataError(path.string() + ": bad magic (expected binary P5 or P6)");
  }
  Raster r;
  r.channels = s[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  r.width = header_int(s, pos, path);
  r.height = header_int(s, pos, path);
  const int maxval = header_int(s, pos, path);
  if (maxval > 255) throw DataError(path.string() + ": only 8-bit PNM is supported");
  if (pos >= s.size() || !std::isspace(static_cast<unsigned char>(s[pos]))) {
    throw DataError(path.string() + ": malformed PNM header");
  }
  ++pos;
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height * r.channels;
  if (s.size() - pos < n) throw DataError(path.string() + ": truncated pixel data");
  r.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int v = static_cast<unsigned char>(s[pos + i]);
    r.pixels[i] = static_cast<std::uint8_t>(maxval == 255 ? v : std::lround(v * 255.0 / maxval));
  }
  return r;
}

void write_pnm(const fs::path& path, const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3) throw ArgumentError("write_pnm: channels must be 1 or 3");
  std::string out = (raster.channels == 3 ? "P6\n" : "P5\n") + std::to_string(raster.width) + " " +
                    std::to_string(raster.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(raster.pixels.data()), raster.pixels.size());
  write_file(path, out);
}

Tensor<float> raster_to_tensor(const Raster& r) {
  Tensor<float> t(Shape{r.channels, r.height, r.width});
  auto d = t.mutable_data();
  const std::size_t hw = static_cast<std::size_t>(r.width) * r.height;
  for (std::size_t p = 0; p < hw; ++p) {
    for (int c = 0; c < r.channels; ++c) d[c * hw + p] = r.pixels[p * r.channels + c] / 255.0f;
  }
  return t;
}

Raster tensor_to_raster(const Tensor<float>& chw) {
  if (chw.rank() != 3) throw DimensionError("tensor_to_raster: expected [C,H,W]");
  Raster r{chw.dim(2), chw.dim(1), chw.dim(0), {}};
  const std::size_t hw = static_cast<std::size_t>(r.width) * r.height;
  r.pixels.resize(hw * r.channels);
  auto d = chw.data();
  for (std::size_t p = 0; p < hw; ++p) {
    for (int c = 0; c < r.channels; ++c) {
      const float v = std::clamp(d[c * hw + p], 0.0f, 1.0f);
      r.pixels[p * r.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Labels

std::vector<GroundTruthBox> parse_labels(const std::string& text, const std::string& source) {
  std::vector<GroundTruthBox> boxes;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    const auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
    std::istringstream tok(line);
    std::vector<std::string> fields{std::istream_iterator<std::string>(tok), std::istream_iterator<std::string>()};
    if (fields.empty()) continue;
    if (fields.size() != 5) throw DataError(where() + "expected 'class cx cy w h'");
    GroundTruthBox b;
    double* targets[4] = {&b.cx, &b.cy, &b.w, &b.h};
    {
      const auto& f = fields[0];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), b.class_id);
      if (ec != std::errc() || ptr != f.data() + f.size() || b.class_id < 0) {
        throw DataError(where() + "invalid class id '" + f + "'");
      }
    }
    for (int i = 0; i < 4; ++i) {
      const auto& f = fields[static_cast<std::size_t>(i + 1)];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), *targets[i]);
      if (ec != std::errc() || ptr != f.data() + f.size()) throw DataError(where() + "invalid number '" + f + "'");
    }
    if (!(b.cx >= 0 && b.cx <= 1 && b.cy >= 0 && b.cy <= 1)) throw DataError(where() + "center outside [0,1]");
    if (!(b.w > 0 && b.w <= 1 && b.h > 0 && b.h <= 1)) throw DataError(where() + "size outside (0,1]");
    boxes.push_back(b);
  }
  return boxes;
}

std::string format_labels(const std::vector<GroundTruthBox>& boxes) {
  std::string out;
  for (const auto& b : boxes) {
    out += std::to_string(b.class_id) + " " + format_double(b.cx) + " " + format_double(b.cy) + " " +
           format_double(b.w) + " " + format_double(b.h) + "\n";
  }
  return out;
}

ImagePair load_pair(const fs::path& rgb_path, const fs::path& ir_path, const fs::path& label_path) {
  const Raster rgb = read_pnm(rgb_path);
  const Raster ir = read_pnm(ir_path);
  if (rgb.channels != 3) throw DataError(rgb_path.string() + ": RGB image must be P6");
  if (ir.channels != 1) throw DataError(ir_path.string() + ": IR image must be P5");
  if (rgb.width != ir.width || rgb.height != ir.height) {
    throw DataError("RGB " + rgb_path.string() + " and IR " + ir_path.string() + " differ in size");
  }
  ImagePair p;
  p.rgb = raster_to_tensor(rgb);
  p.ir = raster_to_tensor(ir);
  p.boxes = parse_labels(read_file(label_path), label_path.string());
  p.id = rgb_path.stem().string();
  return p;
}

void write_pair(const ImagePair& pair, const fs::path& root) {
  write_pnm(root / "rgb" / (pair.id + ".ppm"), tensor_to_raster(pair.rgb));
  write_pnm(root / "ir" / (pair.id + ".pgm"), tensor_to_raster(pair.ir));
  write_file(root / "labels" / (pair.id + ".txt"), format_labels(pair.boxes));
}

void write_manifest(const std::vector<std::string>& ids, const fs::path& root) {
  std::string out;
  for (const auto& id : ids) out += id + "\n";
  write_file(root / "manifest.txt", out);
}

std::vector<ImagePair> load_dataset(const fs::path& root) {
  const fs::path manifest = root / "manifest.txt";
  if (!fs::exists(manifest)) throw DataError("dataset " + root.string() + " has no manifest.txt");
  std::istringstream ids(read_file(manifest));
  std::vector<ImagePair> out;
  std::string id;
  while (ids >> id) {
    out.push_back(load_pair(root / "rgb" / (id + ".ppm"), root / "ir" / (id + ".pgm"), root / "labels" / (id + ".txt")));
    out.back().id = id;
  }
  if (out.empty()) throw DataError("dataset " + root.string() + " is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic pairs

namespace {

constexpr double kBackgroundBase = 0.25;
constexpr int kCellSize = 8;  // finest head stride; targets occupy distinct cells

struct Wave {
  double fx, fy, phase;
};

std::vector<Wave> random_waves(Rng& rng) {
  std::vector<Wave> w(3);
  for (auto& v : w) v = Wave{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0, 2 * std::numbers::pi)};
  return w;
}

double pattern(const std::vector<Wave>& waves, double u, double v) {
  double s = 0.0;
  for (const auto& w : waves) s += std::sin(2 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
  return s / static_cast<double>(waves.size());
}

int to_level(double v) { return std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255); }

}  // namespace

void SynthSpec::validate() const {
  if (image_size <= 0 || image_size % 32 != 0) throw ArgumentError("synth: image_size must be a positive multiple of 32");
  if (min_targets < 0 || max_targets < min_targets) throw ArgumentError("synth: invalid target count range");
  if (min_target_size < 3 || max_target_size < min_target_size) {
    throw ArgumentError("synth: target sizes must be >= 3 px with min <= max");
  }
  if (static_cast<double>(max_target_size) / image_size >= 0.1) {
    throw ArgumentError("synth: max target size must stay below 0.1 of the image size");
  }
  if (p_rgb_only < 0 || p_ir_only < 0 || p_both < 0 || p_rgb_only + p_ir_only + p_both <= 0) {
    throw ArgumentError("synth: visibility probabilities must be non-negative with a positive sum");
  }
  if (clutter < 0 || clutter > kBackgroundBase) throw ArgumentError("synth: clutter must lie in [0, 0.25]");
  if (noise < 0) throw ArgumentError("synth: noise must be non-negative");
  if (contrast <= 0 || kBackgroundBase + clutter + contrast > 1.0) {
    throw ArgumentError("synth: contrast must be positive and background + clutter + contrast <= 1");
  }
  if (num_classes < 1 || num_classes > 3) throw ArgumentError("synth: num_classes must be 1..3");
}

std::vector<SyntheticSample> generate_synthetic(const SynthSpec& spec, int count) {
  spec.validate();
  if (count <= 0) throw ArgumentError("empty dataset requested");
  Rng rng(spec.seed);
  const int size = spec.image_size;
  const std::size_t hw = static_cast<std::size_t>(size) * size;
  const int delta = static_cast<int>(std::ceil(spec.contrast * 255.0 - 1e-9));
  const double vis_total = spec.p_rgb_only + spec.p_ir_only + spec.p_both;

  std::vector<SyntheticSample> out;
  for (int i = 0; i < count; ++i) {
    SyntheticSample sample;
    char id[16];
    std::snprintf(id, sizeof(id), "%06d", i);
    sample.pair.id = id;

    // Background: low-frequency pattern per modality, RGB channels tinted.
    const auto rgb_waves = random_waves(rng);
    const auto ir_waves = random_waves(rng);
    double tint[3];
    for (double& t : tint) t = rng.uniform(0.7, 1.0);
    std::vector<int> rgb_level(3 * hw), ir_level(hw);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double u = (x + 0.5) / size, v = (y + 0.5) / size;
        const std::size_t p = static_cast<std::size_t>(y) * size + x;
        const double base_rgb = pattern(rgb_waves, u, v);
        for (int c = 0; c < 3; ++c) {
          const double bg = kBackgroundBase + spec.clutter * tint[c] * base_rgb + spec.noise * rng.normal();
          rgb_level[c * hw + p] = to_level(bg);
        }
        ir_level[p] = to_level(kBackgroundBase + spec.clutter * pattern(ir_waves, u, v) + spec.noise * rng.normal());
      }
    }

    // Targets: axis-aligned bright rectangles in distinct finest-stride cells.
    struct Placed {
      int x0, y0, w, h;
    };
    std::vector<Placed> placed;
    const int n_targets = rng.uniform_int(spec.min_targets, spec.max_targets);
    for (int t = 0; t < n_targets; ++t) {
      const int cls = rng.uniform_int(0, spec.num_classes - 1);
      const int s = rng.uniform_int(spec.min_target_size, spec.max_target_size);
      const int half = std::max(3, s / 2);
      const int w = cls == 2 ? half : s;
      const int h = cls == 1 ? half : s;
      const double vu = rng.uniform() * vis_total;
      const Visibility vis = vu < spec.p_rgb_only               ? Visibility::RgbOnly
                             : vu < spec.p_rgb_only + spec.p_ir_only ? Visibility::IrOnly
                                                                     : Visibility::Both;
      for (int attempt = 0; attempt < 200; ++attempt) {
        const int x0 = rng.uniform_int(0, size - w);
        const int y0 = rng.uniform_int(0, size - h);
        const int cell_x = (2 * x0 + w) / (2 * kCellSize), cell_y = (2 * y0 + h) / (2 * kCellSize);
        const bool clash = std::any_of(placed.begin(), placed.end(), [&](const Placed& o) {
          const bool same_cell =
              (2 * o.x0 + o.w) / (2 * kCellSize) == cell_x && (2 * o.y0 + o.h) / (2 * kCellSize) == cell_y;
          const bool near = x0 < o.x0 + o.w + 2 && o.x0 < x0 + w + 2 && y0 < o.y0 + o.h + 2 && o.y0 < y0 + h + 2;
          return same_cell || near;
        });
        if (clash) continue;
        placed.push_back(Placed{x0, y0, w, h});
        for (int y = y0; y < y0 + h; ++y) {
          for (int x = x0; x < x0 + w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * size + x;
            if (vis != Visibility::IrOnly) {
              for (int c = 0; c < 3; ++c) rgb_level[c * hw + p] = std::min(255, rgb_level[c * hw + p] + delta);
            }
            if (vis != Visibility::RgbOnly) ir_level[p] = std::min(255, ir_level[p] + delta);
          }
        }
        sample.pair.boxes.push_back(GroundTruthBox{cls, (x0 + w / 2.0) / size, (y0 + h / 2.0) / size,
                                                   static_cast<double>(w) / size, static_cast<double>(h) / size});
        sample.visibility.push_back(vis);
        break;
      }
    }

    sample.pair.rgb = Tensor<float>(Shape{3, size, size});
    sample.pair.ir = Tensor<float>(Shape{1, size, size});
    auto rd = sample.pair.rgb.mutable_data();
    auto id_ = sample.pair.ir.mutable_data();
    for (std::size_t k = 0; k < rd.size(); ++k) rd[k] = static_cast<float>(rgb_level[k]) / 255.0f;
    for (std::size_t k = 0; k < id_.size(); ++k) id_[k] = static_cast<float>(ir_level[k]) / 255.0f;
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<SyntheticSample> generate_synthetic(const SynthSpec& spec, int count, const fs::path& out_dir) {
  auto samples = generate_synthetic(spec, count);
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    write_pair(s.pair, out_dir);
    ids.push_back(s.pair.id);
  }
  write_manifest(ids, out_dir);
  return samples;
}

// ---------------------------------------------------------------------------
// Batching

Batch make_batch(const std::vector<ImagePair>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ArgumentError("make_batch: empty batch");
  const ImagePair& first = samples.at(indices[0]);
  const int h = first.height(), w = first.width();
  const int b = static_cast<int>(indices.size());
  Batch batch;
  batch.rgb = Tensor<float>(Shape{b, 3, h, w});
  batch.ir = Tensor<float>(Shape{b, 1, h, w});
  const std::size_t rgb_n = static_cast<std::size_t>(3) * h * w, ir_n = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < b; ++i) {
    const ImagePair& p = samples.at(indices[static_cast<std::size_t>(i)]);
    if (p.height() != h || p.width() != w) throw DimensionError("make_batch: samples differ in size");
    std::copy_n(p.rgb.data().data(), rgb_n, batch.rgb.mutable_data().data() + i * rgb_n);
    std::copy_n(p.ir.data().data(), ir_n, batch.ir.mutable_data().data() + i * ir_n);
    batch.boxes.push_back(p.boxes);
    batch.ids.push_back(p.id);
    batch.indices.push_back(indices[static_cast<std::size_t>(i)]);
  }
  return batch;
}

DatasetIterator::DatasetIterator(const std::vector<ImagePair>& samples, int batch_size,
                                 std::optional<std::uint64_t> shuffle_seed)
    : samples_(&samples), batch_size_(batch_size), seed_(shuffle_seed) {
  if (samples.empty()) throw DataError("dataset is empty");
  if (batch_size <= 0) throw ArgumentError("batch size must be positive");
  start_epoch(0);
}

void DatasetIterator::start_epoch(int epoch) {
  order_.resize(samples_->size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (seed_) {
    Rng rng(*seed_ + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1));
    rng.shuffle(order_.begin(), order_.end());
  }
  cursor_ = 0;
}

std::optional<Batch> DatasetIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
  std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return make_batch(*samples_, idx);
}

int DatasetIterator::batches_per_epoch() const {
  return static_cast<int>((samples_->size() + static_cast<std::size_t>(batch_size_) - 1) / batch_size_);
}

}  // namespace meaf
