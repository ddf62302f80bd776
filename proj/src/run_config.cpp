#include "carunet/run_config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "carunet/error.hpp"

namespace carunet {

std::string_view to_string(MecaPlacement placement) {
  return placement == MecaPlacement::post_block ? "post_block" : "pre_sum";
}

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::drive: return "drive";
    case DatasetKind::chase: return "chase";
    case DatasetKind::stare: return "stare";
    case DatasetKind::synthetic: return "synthetic";
  }
  return "synthetic";
}

std::string_view to_string(DropBlockSchedule schedule) {
  return schedule == DropBlockSchedule::constant ? "constant" : "linear";
}

std::optional<MecaPlacement> parse_meca_placement(std::string_view text) {
  if (text == "post_block") return MecaPlacement::post_block;
  if (text == "pre_sum") return MecaPlacement::pre_sum;
  return std::nullopt;
}

std::optional<DatasetKind> parse_dataset_kind(std::string_view text) {
  if (text == "drive") return DatasetKind::drive;
  if (text == "chase") return DatasetKind::chase;
  if (text == "stare") return DatasetKind::stare;
  if (text == "synthetic") return DatasetKind::synthetic;
  return std::nullopt;
}

std::optional<DropBlockSchedule> parse_dropblock_schedule(std::string_view text) {
  if (text == "constant") return DropBlockSchedule::constant;
  if (text == "linear") return DropBlockSchedule::linear;
  return std::nullopt;
}

std::size_t padded_size(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::drive: return 592;
    case DatasetKind::chase: return 1008;
    case DatasetKind::stare: return 704;
    case DatasetKind::synthetic: return 0;
  }
  return 0;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view section, std::string_view key, std::string_view value,
                            std::string_view expected) {
  fail(ErrorKind::usage, std::string(section) + "." + std::string(key) + ": invalid value '" + std::string(value) +
                             "' (expected " + std::string(expected) + ")");
}

std::uint64_t to_u64(std::string_view section, std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(section, key, v, "a non-negative integer");
  return out;
}

double to_double(std::string_view section, std::string_view key, std::string_view v) {
  std::istringstream is{std::string(v)};
  is.imbue(std::locale::classic());
  double out = 0;
  if (!(is >> out) || !is.eof()) bad_value(section, key, v, "a number");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void set_value(RunConfig& c, std::string_view section, std::string_view key, std::string_view v) {
  auto u = [&] { return to_u64(section, key, v); };
  auto d = [&] { return to_double(section, key, v); };
  auto unknown = [&] {
    fail(ErrorKind::usage, "unknown config key '" + std::string(section) + "." + std::string(key) + "'");
  };

  if (section == "model") {
    auto& m = c.model;
    if (key == "in_channels") m.in_channels = u();
    else if (key == "base_channels") m.base_channels = u();
    else if (key == "depth") m.depth = u();
    else if (key == "dropblock_size") m.dropblock.block_size = u();
    else if (key == "dropblock_rate") m.dropblock.drop_rate = d();
    else if (key == "meca_placement") {
      const auto p = parse_meca_placement(v);
      if (!p) bad_value(section, key, v, "post_block or pre_sum");
      m.meca_placement = *p;
    } else if (key == "seed") m.seed = u();
    else unknown();
  } else if (section == "train") {
    auto& t = c.train;
    if (key == "batch_size") t.batch_size = u();
    else if (key == "epochs") t.epochs = u();
    else if (key == "learning_rate") t.learning_rate = d();
    else if (key == "beta1") t.beta1 = d();
    else if (key == "beta2") t.beta2 = d();
    else if (key == "adam_epsilon") t.adam_epsilon = d();
    else if (key == "bce_epsilon") t.bce_epsilon = d();
    else if (key == "validation_fraction") t.validation_fraction = d();
    else if (key == "augment_copies") t.augment_copies = u();
    else if (key == "max_steps") t.max_steps = u();
    else if (key == "dropblock_schedule") {
      const auto s = parse_dropblock_schedule(v);
      if (!s) bad_value(section, key, v, "constant or linear");
      t.dropblock_schedule = *s;
    } else if (key == "seed") t.seed = u();
    else unknown();
  } else if (section == "data") {
    auto& dc = c.data;
    if (key == "dataset") {
      const auto k = parse_dataset_kind(v);
      if (!k) bad_value(section, key, v, "drive, chase, stare or synthetic");
      dc.kind = *k;
      c.train.dataset = *k;
    } else if (key == "root") dc.root = std::string(v);
    else if (key == "synthetic_count") dc.synthetic_count = u();
    else if (key == "synthetic_size") dc.synthetic_size = u();
    else if (key == "fold") dc.fold = u();
    else if (key == "seed") dc.seed = u();
    else unknown();
  } else if (section == "output") {
    if (key == "dir") c.output_dir = std::string(v);
    else unknown();
  } else {
    fail(ErrorKind::usage, "unknown config section '" + std::string(section) + "'");
  }
}

RunConfig parse_config(std::string_view text, RunConfig base, std::string_view origin) {
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    std::string_view line = raw;
    if (const auto c = line.find_first_of("#;"); c != std::string_view::npos) line = line.substr(0, c);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorKind::usage, where + "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(ErrorKind::usage, where + "expected key = value");
    if (section.empty()) fail(ErrorKind::usage, where + "key outside of any [section]");
    try {
      set_value(base, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      fail(e.kind(), where + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::usage, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base), path.string());
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    fail(ErrorKind::usage, "override '" + std::string(assignment) + "' must look like section.key=value");
  }
  set_value(config, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
            trim(assignment.substr(eq + 1)));
}

void apply_section_text(RunConfig& config, std::string_view section, std::string_view text) {
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    std::string_view line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(ErrorKind::usage, "expected key=value, got '" + std::string(line) + "'");
    set_value(config, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string section_text(const CarUnetConfig& m) {
  std::ostringstream os;
  os << "in_channels=" << m.in_channels << '\n'
     << "base_channels=" << m.base_channels << '\n'
     << "depth=" << m.depth << '\n'
     << "dropblock_size=" << m.dropblock.block_size << '\n'
     << "dropblock_rate=" << fmt(m.dropblock.drop_rate) << '\n'
     << "meca_placement=" << to_string(m.meca_placement) << '\n'
     << "seed=" << m.seed << '\n';
  return os.str();
}

std::string serialize(const RunConfig& c) {
  std::ostringstream os;
  os << "[model]\n" << section_text(c.model);
  const TrainConfig& t = c.train;
  os << "\n[train]\n"
     << "batch_size=" << t.batch_size << '\n'
     << "epochs=" << t.epochs << '\n'
     << "learning_rate=" << fmt(t.learning_rate) << '\n'
     << "beta1=" << fmt(t.beta1) << '\n'
     << "beta2=" << fmt(t.beta2) << '\n'
     << "adam_epsilon=" << fmt(t.adam_epsilon) << '\n'
     << "bce_epsilon=" << fmt(t.bce_epsilon) << '\n'
     << "validation_fraction=" << fmt(t.validation_fraction) << '\n'
     << "augment_copies=" << t.augment_copies << '\n'
     << "max_steps=" << t.max_steps << '\n'
     << "dropblock_schedule=" << to_string(t.dropblock_schedule) << '\n'
     << "seed=" << t.seed << '\n';
  const DataConfig& d = c.data;
  os << "\n[data]\n"
     << "dataset=" << to_string(d.kind) << '\n'
     << "root=" << d.root << '\n'
     << "synthetic_count=" << d.synthetic_count << '\n'
     << "synthetic_size=" << d.synthetic_size << '\n'
     << "fold=" << d.fold << '\n'
     << "seed=" << d.seed << '\n';
  os << "\n[output]\n"
     << "dir=" << c.output_dir << '\n';
  return os.str();
}

std::vector<std::string> architecture_diff(const CarUnetConfig& a, const CarUnetConfig& b) {
  std::vector<std::string> out;
  auto cmp = [&](const char* name, auto x, auto y) {
    if (x != y) {
      std::ostringstream os;
      os << name << ": " << x << " vs " << y;
      out.push_back(os.str());
    }
  };
  cmp("in_channels", a.in_channels, b.in_channels);
  cmp("base_channels", a.base_channels, b.base_channels);
  cmp("depth", a.depth, b.depth);
  cmp("meca_placement", to_string(a.meca_placement), to_string(b.meca_placement));
  return out;
}

RunConfig preset(std::string_view name) {
  RunConfig c;
  c.model = CarUnetConfig{};
  if (name == "drive" || name == "chase" || name == "stare") {
    c.data.kind = *parse_dataset_kind(name);
    c.train.dataset = c.data.kind;
    c.train.learning_rate = 1e-3;
    c.train.validation_fraction = 0.10;
    c.train.augment_copies = 4;
    if (name == "drive") {
      c.train.batch_size = 2;
      c.train.epochs = 100;
    } else if (name == "chase") {
      c.train.batch_size = 1;
      c.train.epochs = 50;
    } else {
      c.train.batch_size = 3;
      c.train.epochs = 80;
    }
    c.output_dir = "runs/" + std::string(name);
    return c;
  }
  if (name == "smoke") {
    c.data.kind = DatasetKind::synthetic;
    c.train.dataset = DatasetKind::synthetic;
    c.data.synthetic_count = 4;
    c.data.synthetic_size = 64;
    c.model.depth = 2;
    c.model.base_channels = 8;
    c.train.batch_size = 4;
    c.train.epochs = 200;
    c.train.max_steps = 200;
    c.train.augment_copies = 0;
    c.train.validation_fraction = 0.0;
    c.train.learning_rate = 3e-3;
    c.model.dropblock.drop_rate = 0.0;
    c.output_dir = "runs/smoke";
    return c;
  }
  fail(ErrorKind::usage, "unknown preset '" + std::string(name) + "' (expected drive, chase, stare or smoke)");
}

std::vector<std::string> preset_names() { return {"drive", "chase", "stare", "smoke"}; }

}  // namespace carunet
