#include "meaf/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace meaf {

void RunConfig::validate() const {
  train.validate();
  synth.validate();
  eval.validate();
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  const TrainConfig &x = a.train, &y = b.train;
  return x.epochs == y.epochs && x.max_steps == y.max_steps && x.batch_size == y.batch_size && x.loss == y.loss &&
         x.sgd == y.sgd && x.seed == y.seed && x.image_size == y.image_size && x.log_interval == y.log_interval &&
         x.data_dir == y.data_dir && x.model == y.model && a.synth == b.synth && a.eval == b.eval;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename U>
U parse_number(const std::string& s) {
  U v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ArgumentError("'" + s + "' is not a valid number");
  return v;
}

template <typename U>
std::string format_number(U v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ArgumentError("'" + s + "' is not a boolean");
}

template <typename U>
std::vector<U> parse_list(const std::string& s) {
  std::vector<U> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<U>(trim(item)));
  return out;
}

template <typename Range>
std::string format_list(const Range& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ",";
    out += format_number(v);
  }
  return out;
}

template <typename U, std::size_t N>
std::array<U, N> parse_array(const std::string& s) {
  const auto v = parse_list<U>(s);
  if (v.size() != N) throw ArgumentError("expected " + std::to_string(N) + " comma-separated values");
  std::array<U, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename U, typename Access>
Key number(std::string name, Access access) {
  return {std::move(name), [access](const RunConfig& c) { return format_number(access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, const std::string& v) { access(c) = parse_number<U>(v); }};
}

template <typename Access>
Key boolean(std::string name, Access access) {
  return {std::move(name),
          [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [access](RunConfig& c, const std::string& v) { access(c) = parse_bool(v); }};
}

template <typename U, typename Access>
Key list(std::string name, Access access) {
  return {std::move(name), [access](const RunConfig& c) { return format_list(access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, const std::string& v) { access(c) = parse_list<U>(v); }};
}

template <typename U, std::size_t N, typename Access>
Key array(std::string name, Access access) {
  return {std::move(name), [access](const RunConfig& c) { return format_list(access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, const std::string& v) { access(c) = parse_array<U, N>(v); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(number<int>("train.epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
    k.push_back(number<int>("train.max_steps", [](RunConfig& c) -> auto& { return c.train.max_steps; }));
    k.push_back(number<int>("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    k.push_back(number<std::uint64_t>("train.seed", [](RunConfig& c) -> auto& { return c.train.seed; }));
    k.push_back(number<int>("train.image_size", [](RunConfig& c) -> auto& { return c.train.image_size; }));
    k.push_back(number<int>("train.log_interval", [](RunConfig& c) -> auto& { return c.train.log_interval; }));
    k.push_back({"train.data", [](const RunConfig& c) { return c.train.data_dir; },
                 [](RunConfig& c, const std::string& v) { c.train.data_dir = v; }});

    k.push_back(number<double>("optim.lr", [](RunConfig& c) -> auto& { return c.train.sgd.learning_rate; }));
    k.push_back(number<double>("optim.momentum", [](RunConfig& c) -> auto& { return c.train.sgd.momentum; }));
    k.push_back(number<double>("optim.weight_decay", [](RunConfig& c) -> auto& { return c.train.sgd.weight_decay; }));
    k.push_back(boolean("optim.nesterov", [](RunConfig& c) -> auto& { return c.train.sgd.nesterov; }));

    k.push_back(array<double, 3>("loss.alpha_o", [](RunConfig& c) -> auto& { return c.train.loss.alpha_o; }));
    k.push_back(array<double, 3>("loss.alpha_l", [](RunConfig& c) -> auto& { return c.train.loss.alpha_l; }));
    k.push_back(array<double, 3>("loss.alpha_c", [](RunConfig& c) -> auto& { return c.train.loss.alpha_c; }));
    k.push_back(number<double>("loss.lambda_o", [](RunConfig& c) -> auto& { return c.train.loss.lambda_o; }));
    k.push_back(number<double>("loss.lambda_l", [](RunConfig& c) -> auto& { return c.train.loss.lambda_l; }));
    k.push_back(number<double>("loss.lambda_c", [](RunConfig& c) -> auto& { return c.train.loss.lambda_c; }));
    k.push_back(number<double>("loss.c1", [](RunConfig& c) -> auto& { return c.train.loss.c1; }));
    k.push_back(number<double>("loss.c2", [](RunConfig& c) -> auto& { return c.train.loss.c2; }));

    k.push_back({"model.modality", [](const RunConfig& c) { return std::string(to_string(c.train.model.modality)); },
                 [](RunConfig& c, const std::string& v) { c.train.model.modality = parse_modality(v); }});
    k.push_back(number<int>("fusion.mid_channels", [](RunConfig& c) -> auto& { return c.train.model.fusion.mid_channels; }));
    k.push_back(number<int>("fusion.reduction", [](RunConfig& c) -> auto& { return c.train.model.fusion.reduction; }));

    k.push_back(list<int>("backbone.widths", [](RunConfig& c) -> auto& { return c.train.model.backbone.widths; }));
    k.push_back(list<int>("backbone.strides", [](RunConfig& c) -> auto& { return c.train.model.backbone.strides; }));
    k.push_back({"backbone.activation",
                 [](const RunConfig& c) { return std::string(to_string(c.train.model.backbone.activation)); },
                 [](RunConfig& c, const std::string& v) { c.train.model.backbone.activation = parse_activation(v); }});
    k.push_back(array<int, 3>("backbone.taps", [](RunConfig& c) -> auto& { return c.train.model.backbone.taps; }));
    k.push_back(number<int>("backbone.head_channels",
                            [](RunConfig& c) -> auto& { return c.train.model.backbone.head_channels; }));
    k.push_back(number<int>("backbone.num_classes", [](RunConfig& c) -> auto& { return c.train.model.backbone.num_classes; }));
    k.push_back(number<int>("backbone.boxes_per_cell",
                            [](RunConfig& c) -> auto& { return c.train.model.backbone.boxes_per_cell; }));
    k.push_back(list<double>("backbone.anchors", [](RunConfig& c) -> auto& { return c.train.model.backbone.anchors; }));

    k.push_back(boolean("sr.enabled", [](RunConfig& c) -> auto& { return c.train.model.sr.enabled; }));
    k.push_back(number<int>("sr.tap_stage", [](RunConfig& c) -> auto& { return c.train.model.sr.tap_stage; }));
    k.push_back(list<int>("sr.widths", [](RunConfig& c) -> auto& { return c.train.model.sr.widths; }));
    k.push_back(number<int>("sr.out_channels", [](RunConfig& c) -> auto& { return c.train.model.sr.out_channels; }));
    k.push_back(number<int>("sr.target_stride", [](RunConfig& c) -> auto& { return c.train.model.sr.target_stride; }));

    k.push_back(number<int>("synth.image_size", [](RunConfig& c) -> auto& { return c.synth.image_size; }));
    k.push_back(number<int>("synth.min_targets", [](RunConfig& c) -> auto& { return c.synth.min_targets; }));
    k.push_back(number<int>("synth.max_targets", [](RunConfig& c) -> auto& { return c.synth.max_targets; }));
    k.push_back(number<int>("synth.min_target_size", [](RunConfig& c) -> auto& { return c.synth.min_target_size; }));
    k.push_back(number<int>("synth.max_target_size", [](RunConfig& c) -> auto& { return c.synth.max_target_size; }));
    k.push_back(number<double>("synth.p_rgb_only", [](RunConfig& c) -> auto& { return c.synth.p_rgb_only; }));
    k.push_back(number<double>("synth.p_ir_only", [](RunConfig& c) -> auto& { return c.synth.p_ir_only; }));
    k.push_back(number<double>("synth.p_both", [](RunConfig& c) -> auto& { return c.synth.p_both; }));
    k.push_back(number<double>("synth.clutter", [](RunConfig& c) -> auto& { return c.synth.clutter; }));
    k.push_back(number<double>("synth.noise", [](RunConfig& c) -> auto& { return c.synth.noise; }));
    k.push_back(number<double>("synth.contrast", [](RunConfig& c) -> auto& { return c.synth.contrast; }));
    k.push_back(number<int>("synth.num_classes", [](RunConfig& c) -> auto& { return c.synth.num_classes; }));
    k.push_back(number<std::uint64_t>("synth.seed", [](RunConfig& c) -> auto& { return c.synth.seed; }));

    k.push_back(number<double>("eval.conf", [](RunConfig& c) -> auto& { return c.eval.conf; }));
    k.push_back(number<double>("eval.iou", [](RunConfig& c) -> auto& { return c.eval.iou; }));
    k.push_back(number<double>("eval.nms_iou", [](RunConfig& c) -> auto& { return c.eval.nms_iou; }));
    return k;
  }();
  return table;
}

RunConfig parse_entries(const std::string& text, const std::string& source, bool validate) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    std::string line = raw.substr(0, raw.find('#'));
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ArgumentError(where + "expected key = value");
    const std::string name = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = keys();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return k.name == name; });
    if (it == table.end()) throw ArgumentError(where + "unknown key '" + name + "'");
    if (!seen.insert(name).second) throw ArgumentError(where + "duplicate key '" + name + "'");
    try {
      it->set(config, value);
    } catch (const Error& e) {
      throw ArgumentError(where + name + ": " + e.what());
    }
  }
  if (validate) config.validate();
  return config;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  return parse_entries(text, source, true);
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_text(path), path.string()); }

std::string serialize_run_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& k : keys()) {
    const std::string prefix = k.name.substr(0, k.name.find('.'));
    if (prefix != section) {
      if (!section.empty()) out += "\n";
      section = prefix;
    }
    out += k.name + " = " + k.get(config) + "\n";
  }
  return out;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  RunConfig config = parse_entries(read_text(path), path.string(), false);
  config.synth.validate();
  return config.synth;
}

}  // namespace meaf
