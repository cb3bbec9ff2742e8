// Binary checkpoint layout (little-endian):
//   "MEAFCKPT" u32 version u32 count
//   count × record      (model parameters, then "config.*" records)
//   u32 count × record  (optimizer: "optim.*" scalars, then "velocity.*")
//   u64 step u64 seed
// record := u16 name_len, name, u8 rank, u32 dims[rank], f32 data[prod(dims)]

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "meaf/trainer.hpp"

namespace meaf {

namespace {

constexpr char kMagic[8] = {'M', 'E', 'A', 'F', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void record(const std::string& name, const Shape& shape, std::span<const float> data) {
    if (name.size() > 0xFFFF) throw ArgumentError("checkpoint: name too long");
    le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    bytes(name.data(), name.size());
    le<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
    for (int d : shape) le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float f : data) le<std::uint32_t>(std::bit_cast<std::uint32_t>(f));
  }
  void record(const std::string& name, const std::vector<float>& values) {
    record(name, Shape{static_cast<int>(values.size())}, values);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw CorruptCheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(s_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  struct Record {
    std::string name;
    Shape shape;
    std::vector<float> data;
  };
  Record record() {
    Record r;
    r.name = str(le<std::uint16_t>());
    const int rank = le<std::uint8_t>();
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) {
      const std::uint32_t d = le<std::uint32_t>();
      if (d > (1u << 28)) throw CorruptCheckpointError("checkpoint: implausible dimension in '" + r.name + "'");
      r.shape.push_back(static_cast<int>(d));
      n *= d;
    }
    need(n * 4);
    r.data.resize(n);
    for (float& f : r.data) f = std::bit_cast<float>(le<std::uint32_t>());
    return r;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

std::vector<float> ints(const std::vector<int>& v) { return {v.begin(), v.end()}; }

std::vector<int> to_ints(const std::vector<float>& v) {
  std::vector<int> out;
  for (float f : v) out.push_back(static_cast<int>(f));
  return out;
}

void write_config(Writer& w, const ModelConfig& c) {
  const auto& bb = c.backbone;
  w.record("config.modality", {static_cast<float>(static_cast<int>(c.modality))});
  w.record("config.fusion", {static_cast<float>(c.fusion.mid_channels), static_cast<float>(c.fusion.reduction)});
  w.record("config.backbone.widths", ints(bb.widths));
  w.record("config.backbone.strides", ints(bb.strides));
  w.record("config.backbone.taps", ints({bb.taps.begin(), bb.taps.end()}));
  w.record("config.backbone.head", {static_cast<float>(static_cast<int>(bb.activation)),
                                    static_cast<float>(bb.head_channels), static_cast<float>(bb.num_classes),
                                    static_cast<float>(bb.boxes_per_cell)});
  w.record("config.backbone.anchors", std::vector<float>(bb.anchors.begin(), bb.anchors.end()));
  w.record("config.sr", {c.sr.enabled ? 1.0f : 0.0f, static_cast<float>(c.sr.tap_stage),
                         static_cast<float>(c.sr.out_channels), static_cast<float>(c.sr.target_stride)});
  w.record("config.sr.widths", ints(c.sr.widths));
}

ModelConfig read_config(const std::map<std::string, std::vector<float>>& rec) {
  auto get = [&](const std::string& name, std::size_t min_size) -> const std::vector<float>& {
    auto it = rec.find(name);
    if (it == rec.end()) throw CorruptCheckpointError("checkpoint: missing record '" + name + "'");
    if (it->second.size() < min_size) throw CorruptCheckpointError("checkpoint: short record '" + name + "'");
    return it->second;
  };
  ModelConfig c;
  const int modality = static_cast<int>(get("config.modality", 1)[0]);
  if (modality < 0 || modality > 2) throw CorruptCheckpointError("checkpoint: bad modality");
  c.modality = static_cast<Modality>(modality);
  const auto& f = get("config.fusion", 2);
  c.fusion.mid_channels = static_cast<int>(f[0]);
  c.fusion.reduction = static_cast<int>(f[1]);
  c.backbone.widths = to_ints(get("config.backbone.widths", 1));
  c.backbone.strides = to_ints(get("config.backbone.strides", 1));
  const auto taps = to_ints(get("config.backbone.taps", 3));
  for (std::size_t i = 0; i < 3; ++i) c.backbone.taps[i] = taps[i];
  const auto& head = get("config.backbone.head", 4);
  const int act = static_cast<int>(head[0]);
  if (act < 0 || act > 3) throw CorruptCheckpointError("checkpoint: bad activation");
  c.backbone.activation = static_cast<ActivationKind>(act);
  c.backbone.head_channels = static_cast<int>(head[1]);
  c.backbone.num_classes = static_cast<int>(head[2]);
  c.backbone.boxes_per_cell = static_cast<int>(head[3]);
  const auto& anchors = get("config.backbone.anchors", 1);
  c.backbone.anchors.assign(anchors.begin(), anchors.end());
  const auto& sr = get("config.sr", 4);
  c.sr.enabled = sr[0] != 0.0f;
  c.sr.tap_stage = static_cast<int>(sr[1]);
  c.sr.out_channels = static_cast<int>(sr[2]);
  c.sr.target_stride = static_cast<int>(sr[3]);
  c.sr.widths = to_ints(get("config.sr.widths", 0));
  try {
    c.validate();
  } catch (const ArgumentError& e) {
    throw CorruptCheckpointError(std::string("checkpoint: invalid model config: ") + e.what());
  }
  return c;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.le<std::uint32_t>(kCheckpointVersion);
  const ParameterList<float> params = ckpt.model.parameters();
  constexpr std::uint32_t kConfigRecords = 9;
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size()) + kConfigRecords);
  for (const auto& p : params) w.record(p.name, p.tensor.shape(), p.tensor.data());
  write_config(w, ckpt.model.config);

  const auto& opt = ckpt.optimizer;
  w.le<std::uint32_t>(static_cast<std::uint32_t>(4 + opt.velocity.size()));
  w.record("optim.lr", Shape{}, std::vector<float>{static_cast<float>(opt.options.learning_rate)});
  w.record("optim.momentum", Shape{}, std::vector<float>{static_cast<float>(opt.options.momentum)});
  w.record("optim.weight_decay", Shape{}, std::vector<float>{static_cast<float>(opt.options.weight_decay)});
  w.record("optim.nesterov", Shape{}, std::vector<float>{opt.options.nesterov ? 1.0f : 0.0f});
  for (std::size_t i = 0; i < opt.velocity.size(); ++i) {
    w.record("velocity." + opt.names[i], opt.velocity[i].shape(), opt.velocity[i].data());
  }
  w.le<std::uint64_t>(ckpt.step);
  w.le<std::uint64_t>(ckpt.seed);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.empty()) throw CorruptCheckpointError("checkpoint is empty");
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IncompatibleCheckpointError("not a checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.str(sizeof(kMagic));
  const std::uint32_t version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IncompatibleCheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.le<std::uint32_t>();
  std::map<std::string, Reader::Record> params;
  std::map<std::string, std::vector<float>> config;
  for (std::uint32_t i = 0; i < count; ++i) {
    Reader::Record rec = r.record();
    if (rec.name.rfind("config.", 0) == 0) {
      config[rec.name] = std::move(rec.data);
    } else if (!params.emplace(rec.name, std::move(rec)).second) {
      throw CorruptCheckpointError("checkpoint: duplicate parameter '" + rec.name + "'");
    }
  }

  Checkpoint ckpt;
  ckpt.model = DetectorModel<float>::init(read_config(config), 0);
  std::set<std::string> used;
  for (auto& p : ckpt.model.parameters()) {
    auto it = params.find(p.name);
    if (it == params.end()) throw CorruptCheckpointError("checkpoint: missing parameter '" + p.name + "'");
    if (it->second.shape != p.tensor.shape()) {
      throw CorruptCheckpointError("checkpoint: parameter '" + p.name + "' has shape " +
                                   shape_str(it->second.shape) + ", model expects " + shape_str(p.tensor.shape()));
    }
    std::copy(it->second.data.begin(), it->second.data.end(), p.tensor.mutable_data().begin());
    used.insert(p.name);
  }
  if (used.size() != params.size()) {
    for (const auto& [name, _] : params) {
      if (!used.count(name)) throw CorruptCheckpointError("checkpoint: unexpected parameter '" + name + "'");
    }
  }

  const std::uint32_t opt_count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < opt_count; ++i) {
    Reader::Record rec = r.record();
    auto scalar = [&] {
      if (rec.data.size() != 1) throw CorruptCheckpointError("checkpoint: '" + rec.name + "' must be a scalar");
      return static_cast<double>(rec.data[0]);
    };
    if (rec.name == "optim.lr") {
      ckpt.optimizer.options.learning_rate = scalar();
    } else if (rec.name == "optim.momentum") {
      ckpt.optimizer.options.momentum = scalar();
    } else if (rec.name == "optim.weight_decay") {
      ckpt.optimizer.options.weight_decay = scalar();
    } else if (rec.name == "optim.nesterov") {
      ckpt.optimizer.options.nesterov = scalar() != 0.0;
    } else if (rec.name.rfind("velocity.", 0) == 0) {
      ckpt.optimizer.names.push_back(rec.name.substr(9));
      ckpt.optimizer.velocity.push_back(Tensor<float>(rec.shape, std::move(rec.data)));
    } else {
      throw CorruptCheckpointError("checkpoint: unknown optimizer record '" + rec.name + "'");
    }
  }
  ckpt.step = r.le<std::uint64_t>();
  ckpt.seed = r.le<std::uint64_t>();
  if (!r.done()) throw CorruptCheckpointError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace meaf
