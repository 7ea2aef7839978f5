#include "lfss/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace lfss {

namespace {

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
  bool consumed = false;
};

struct Ini {
  std::string origin;
  std::map<std::string, std::vector<Entry>> sections;

  [[noreturn]] void fail(const std::string& msg) const { throw std::runtime_error(origin + ": " + msg); }
};

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

Ini parse_ini(const std::string& text, const std::string& origin) {
  Ini ini;
  ini.origin = origin;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') ini.fail("line " + std::to_string(line_no) + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) ini.fail("line " + std::to_string(line_no) + ": empty section name");
      ini.sections[section];  // a section may be empty
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) ini.fail("line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty()) ini.fail("line " + std::to_string(line_no) + ": key before any [section]");
    Entry e{trim(t.substr(0, eq)), trim(t.substr(eq + 1)), line_no, false};
    if (e.key.empty()) ini.fail("line " + std::to_string(line_no) + ": empty key");
    for (const Entry& prev : ini.sections[section]) {
      if (prev.key == e.key) {
        ini.fail("duplicate key " + section + "." + e.key + " (lines " + std::to_string(prev.line) + " and " +
                 std::to_string(line_no) + ")");
      }
    }
    ini.sections[section].push_back(std::move(e));
  }
  return ini;
}

class SectionReader {
 public:
  SectionReader(Ini& ini, std::string section) : ini_(ini), section_(std::move(section)) {}

  bool present() const { return ini_.sections.count(section_) > 0; }

  Entry* find(const std::string& key) {
    auto it = ini_.sections.find(section_);
    if (it == ini_.sections.end()) return nullptr;
    for (Entry& e : it->second) {
      if (e.key == key) {
        e.consumed = true;
        return &e;
      }
    }
    return nullptr;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    ini_.fail(section_ + "." + key + ": " + msg);
  }

  std::string require_string(const std::string& key) {
    Entry* e = find(key);
    if (!e) fail(key, "missing required key");
    return e->value;
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    Entry* e = find(key);
    return e ? e->value : fallback;
  }

  long long parse_int(const std::string& key, const std::string& value) const {
    long long out = 0;
    const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || p != value.data() + value.size()) fail(key, "expected an integer, got '" + value + "'");
    return out;
  }

  long long get_int(const std::string& key, long long fallback) {
    Entry* e = find(key);
    return e ? parse_int(key, e->value) : fallback;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
    Entry* e = find(key);
    if (!e) return fallback;
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), out);
    if (ec != std::errc() || p != e->value.data() + e->value.size()) {
      fail(key, "expected a non-negative integer, got '" + e->value + "'");
    }
    return out;
  }

  double parse_double(const std::string& key, const std::string& value) const {
    try {
      std::size_t pos = 0;
      const double out = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("");
      return out;
    } catch (const std::exception&) {
      fail(key, "expected a number, got '" + value + "'");
    }
  }

  double get_double(const std::string& key, double fallback) {
    Entry* e = find(key);
    return e ? parse_double(key, e->value) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) {
    Entry* e = find(key);
    if (!e) return fallback;
    if (e->value == "true") return true;
    if (e->value == "false") return false;
    fail(key, "expected true or false, got '" + e->value + "'");
  }

  std::vector<ClassId> get_id_list(const std::string& key, std::vector<ClassId> fallback = {}) {
    Entry* e = find(key);
    if (!e) return fallback;
    return parse_id_list(key, e->value);
  }

  std::vector<ClassId> parse_id_list(const std::string& key, const std::string& value) const {
    std::vector<ClassId> out;
    std::istringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string v = trim(item);
      if (v.empty()) fail(key, "empty entry in id list");
      out.push_back(static_cast<ClassId>(parse_int(key, v)));
    }
    return out;
  }

  std::vector<double> get_double_list(const std::string& key, std::size_t expected,
                                      std::vector<double> fallback) {
    Entry* e = find(key);
    if (!e) return fallback;
    std::vector<double> out;
    std::istringstream ss(e->value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
    if (out.size() != expected) {
      fail(key, "expected " + std::to_string(expected) + " comma-separated values, got " +
                    std::to_string(out.size()));
    }
    return out;
  }

  /// Consumes and returns every entry whose key starts with the prefix.
  std::vector<Entry*> entries_with_prefix(const std::string& prefix) {
    std::vector<Entry*> out;
    auto it = ini_.sections.find(section_);
    if (it == ini_.sections.end()) return out;
    for (Entry& e : it->second) {
      if (e.key.rfind(prefix, 0) == 0) {
        e.consumed = true;
        out.push_back(&e);
      }
    }
    return out;
  }

 private:
  Ini& ini_;
  std::string section_;
};

const std::vector<std::string> kKnownSections = {"projection", "taxonomy", "model",      "optimizer",
                                                 "train_base", "finetune", "losses",     "evaluation",
                                                 "synth"};

void reject_unknown(const Ini& ini) {
  for (const auto& [section, entries] : ini.sections) {
    if (std::find(kKnownSections.begin(), kKnownSections.end(), section) == kKnownSections.end()) {
      ini.fail("unknown section [" + section + "]");
    }
    for (const Entry& e : entries) {
      if (!e.consumed) {
        ini.fail("unknown key " + section + "." + e.key + " (line " + std::to_string(e.line) + ")");
      }
    }
  }
}

Taxonomy read_taxonomy(Ini& ini) {
  SectionReader sec(ini, "taxonomy");
  if (!sec.present()) ini.fail("missing required section [taxonomy]");
  Taxonomy tax;
  tax.background = static_cast<ClassId>(sec.parse_int("background", sec.require_string("background")));
  tax.base = sec.parse_id_list("base", sec.require_string("base"));
  tax.novel = sec.parse_id_list("novel", sec.require_string("novel"));
  for (Entry* e : sec.entries_with_prefix("name.")) {
    const ClassId id = static_cast<ClassId>(sec.parse_int(e->key, e->key.substr(5)));
    tax.names[id] = e->value;
  }
  for (Entry* e : sec.entries_with_prefix("raw.")) {
    const long long raw = sec.parse_int(e->key, e->key.substr(4));
    if (raw < 0 || raw > 0xffff) sec.fail(e->key, "raw id must fit in 16 bits");
    const ClassId cls =
        e->value == "ignore" ? kIgnore : static_cast<ClassId>(sec.parse_int(e->key, e->value));
    tax.raw_to_class[static_cast<std::uint16_t>(raw)] = cls;
  }
  try {
    tax.validate();
  } catch (const std::exception& e) {
    ini.fail(std::string("[taxonomy] ") + e.what());
  }
  return tax;
}

ProjectionConfig read_projection(Ini& ini) {
  SectionReader sec(ini, "projection");
  if (!sec.present()) ini.fail("missing required section [projection]");
  ProjectionConfig cfg;
  // the sensor geometry is a property of the data, never defaulted
  cfg.width = static_cast<int>(sec.parse_int("width", sec.require_string("width")));
  cfg.height = static_cast<int>(sec.parse_int("height", sec.require_string("height")));
  cfg.fov_up = sec.parse_double("fov_up_deg", sec.require_string("fov_up_deg")) * ProjectionConfig::kDegree;
  cfg.fov_down =
      sec.parse_double("fov_down_deg", sec.require_string("fov_down_deg")) * ProjectionConfig::kDegree;
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    ini.fail(std::string("[projection] ") + e.what());
  }
  return cfg;
}

ModelArch read_model(Ini& ini) {
  SectionReader sec(ini, "model");
  ModelArch arch;
  arch.hidden_width = static_cast<int>(sec.get_int("hidden_width", arch.hidden_width));
  arch.neighborhood_features = sec.get_bool("neighborhood_features", arch.neighborhood_features);
  const auto mean = sec.get_double_list("channel_mean", 5, {0, 0, 0, 0, 0});
  const auto stddev = sec.get_double_list("channel_std", 5, {1, 1, 1, 1, 1});
  for (int i = 0; i < 5; ++i) {
    arch.channel_mean[i] = mean[static_cast<std::size_t>(i)];
    arch.channel_std[i] = stddev[static_cast<std::size_t>(i)];
  }
  try {
    arch.validate();
  } catch (const std::exception& e) {
    ini.fail(std::string("[model] ") + e.what());
  }
  return arch;
}

OptimizerConfig read_optimizer(Ini& ini) {
  SectionReader sec(ini, "optimizer");
  OptimizerConfig opt;
  opt.learning_rate = sec.get_double("learning_rate", opt.learning_rate);
  opt.momentum = sec.get_double("momentum", opt.momentum);
  opt.lr_decay = sec.get_double("lr_decay", opt.lr_decay);
  const std::string mode = sec.get_string("lr_decay_mode", "multiplicative");
  if (mode == "multiplicative") {
    opt.decay_mode = DecayMode::kMultiplicative;
  } else if (mode == "additive") {
    opt.decay_mode = DecayMode::kAdditive;
  } else {
    sec.fail("lr_decay_mode", "expected multiplicative or additive, got '" + mode + "'");
  }
  opt.batch_frames = static_cast<int>(sec.get_int("batch_frames", opt.batch_frames));
  if (opt.learning_rate < 0) sec.fail("learning_rate", "must be >= 0");
  if (opt.momentum < 0 || opt.momentum >= 1) sec.fail("momentum", "must be in [0, 1)");
  if (opt.lr_decay < 0 || opt.lr_decay >= 1) sec.fail("lr_decay", "must be in [0, 1)");
  if (opt.batch_frames < 1) sec.fail("batch_frames", "must be >= 1");
  return opt;
}

}  // namespace

CeMode parse_ce_mode(const std::string& s) {
  if (s == "off") return CeMode::kOff;
  if (s == "original") return CeMode::kOriginal;
  if (s == "unbiased") return CeMode::kUnbiased;
  throw std::runtime_error("invalid cross-entropy mode '" + s + "' (expected off, original or unbiased)");
}

KdMode parse_kd_mode(const std::string& s) {
  if (s == "off") return KdMode::kOff;
  if (s == "original") return KdMode::kOriginal;
  if (s == "unbiased") return KdMode::kUnbiased;
  throw std::runtime_error("invalid kd mode '" + s + "' (expected off, original or unbiased)");
}

FreezeMode parse_freeze_mode(const std::string& s) {
  if (s == "none") return FreezeMode::kNone;
  if (s == "backbone") return FreezeMode::kBackbone;
  if (s == "backbone+base_heads") return FreezeMode::kBackboneAndBaseHeads;
  throw std::runtime_error("invalid freeze mode '" + s + "' (expected none, backbone or backbone+base_heads)");
}

BackgroundTerm parse_background_term(const std::string& s) {
  if (s == "frozen") return BackgroundTerm::kFrozenBase;
  if (s == "current") return BackgroundTerm::kCurrentModel;
  throw std::runtime_error("invalid background term '" + s + "' (expected frozen or current)");
}

const char* to_string(CeMode m) {
  switch (m) {
    case CeMode::kOff: return "off";
    case CeMode::kOriginal: return "original";
    default: return "unbiased";
  }
}

const char* to_string(KdMode m) {
  switch (m) {
    case KdMode::kOff: return "off";
    case KdMode::kOriginal: return "original";
    default: return "unbiased";
  }
}

const char* to_string(FreezeMode m) {
  switch (m) {
    case FreezeMode::kNone: return "none";
    case FreezeMode::kBackbone: return "backbone";
    default: return "backbone+base_heads";
  }
}

const char* to_string(BackgroundTerm m) {
  return m == BackgroundTerm::kFrozenBase ? "frozen" : "current";
}

const char* to_string(DecayMode m) {
  return m == DecayMode::kMultiplicative ? "multiplicative" : "additive";
}

ToolConfig parse_config(const std::string& text, const std::string& origin) {
  Ini ini = parse_ini(text, origin);
  ToolConfig cfg;
  cfg.projection = read_projection(ini);
  cfg.taxonomy = read_taxonomy(ini);
  cfg.model = read_model(ini);
  cfg.optimizer = read_optimizer(ini);

  {
    SectionReader sec(ini, "train_base");
    cfg.train_base.epochs = static_cast<int>(sec.get_int("epochs", cfg.train_base.epochs));
    cfg.train_base.seed = sec.get_u64("seed", cfg.train_base.seed);
    if (cfg.train_base.epochs < 0) sec.fail("epochs", "must be >= 0");
  }
  {
    SectionReader sec(ini, "finetune");
    cfg.finetune.epochs = static_cast<int>(sec.get_int("epochs", cfg.finetune.epochs));
    cfg.finetune.shots = static_cast<int>(sec.get_int("shots", cfg.finetune.shots));
    cfg.finetune.seed = sec.get_u64("seed", cfg.finetune.seed);
    cfg.finetune.shot_seed = sec.get_u64("shot_seed", cfg.finetune.shot_seed);
    if (cfg.finetune.epochs < 0) sec.fail("epochs", "must be >= 0");
    if (cfg.finetune.shots < 0) sec.fail("shots", "must be >= 0");
    try {
      cfg.finetune.freeze = parse_freeze_mode(sec.get_string("freeze", "none"));
      cfg.finetune.loss.ce = parse_ce_mode(sec.get_string("ce", "unbiased"));
      if (Entry* e = sec.find("unbiased_ce")) {
        // boolean shorthand for the ce mode
        if (e->value == "true") {
          cfg.finetune.loss.ce = CeMode::kUnbiased;
        } else if (e->value == "false") {
          cfg.finetune.loss.ce = CeMode::kOriginal;
        } else {
          sec.fail("unbiased_ce", "expected true or false");
        }
      }
      cfg.finetune.loss.kd = parse_kd_mode(sec.get_string("kd", "unbiased"));
      cfg.finetune.loss.lovasz = sec.get_bool("lovasz", true);
      cfg.finetune.loss.background_term = parse_background_term(sec.get_string("background_term", "frozen"));
    } catch (const std::runtime_error& e) {
      ini.fail(std::string("[finetune] ") + e.what());
    }
  }
  {
    SectionReader sec(ini, "losses");
    cfg.frequency_floor = sec.get_double("frequency_floor", cfg.frequency_floor);
    if (cfg.frequency_floor <= 0 || cfg.frequency_floor >= 1) sec.fail("frequency_floor", "must be in (0, 1)");
  }
  {
    SectionReader sec(ini, "evaluation");
    cfg.evaluation.include_background_in_miou =
        sec.get_bool("include_background_in_miou", cfg.evaluation.include_background_in_miou);
    cfg.evaluation.absent_classes_as_zero =
        sec.get_bool("absent_classes_as_zero", cfg.evaluation.absent_classes_as_zero);
  }
  {
    SectionReader sec(ini, "synth");
    cfg.has_synth = sec.present();
    if (cfg.has_synth) {
      SynthConfig& sy = cfg.synth;
      sy.sensor.beams = static_cast<int>(sec.get_int("sensor_beams", sy.sensor.beams));
      sy.sensor.azimuth_bins = static_cast<int>(sec.get_int("azimuth_bins", sy.sensor.azimuth_bins));
      sy.sensor.fov_up = cfg.projection.fov_up;
      sy.sensor.fov_down = cfg.projection.fov_down;
      sy.sensor.height = sec.get_double("sensor_height", sy.sensor.height);
      sy.sensor.range_noise_sigma = sec.get_double("range_noise_sigma", sy.sensor.range_noise_sigma);
      sy.extent = sec.get_double("extent", sy.extent);
      sy.ground_class = static_cast<ClassId>(sec.parse_int("ground_class", sec.require_string("ground_class")));
      sy.wall_class = static_cast<ClassId>(sec.parse_int("wall_class", sec.require_string("wall_class")));
      sy.pole_class = static_cast<ClassId>(sec.parse_int("pole_class", sec.require_string("pole_class")));
      sy.box_classes = sec.parse_id_list("box_classes", sec.require_string("box_classes"));
      sy.base_train_frames = static_cast<int>(sec.get_int("base_train_frames", sy.base_train_frames));
      sy.shot_pool_frames = static_cast<int>(sec.get_int("shot_pool_frames", sy.shot_pool_frames));
      sy.eval_frames = static_cast<int>(sec.get_int("eval_frames", sy.eval_frames));
      sy.seed_base_train = sec.get_u64("seed_base_train", sy.seed_base_train);
      sy.seed_shot_pool = sec.get_u64("seed_shot_pool", sy.seed_shot_pool);
      sy.seed_eval = sec.get_u64("seed_eval", sy.seed_eval);
      if (sy.sensor.beams < 2) sec.fail("sensor_beams", "must be >= 2");
      if (sy.sensor.azimuth_bins < 1) sec.fail("azimuth_bins", "must be >= 1");
      if (sy.sensor.range_noise_sigma < 0) sec.fail("range_noise_sigma", "must be >= 0");
      if (sy.extent < 8) sec.fail("extent", "must be >= 8");
      for (ClassId id : {sy.ground_class, sy.wall_class, sy.pole_class}) {
        if (!cfg.taxonomy.contains(id)) {
          sec.fail("ground_class", "scene class " + std::to_string(id) + " is not in the taxonomy");
        }
      }
      for (ClassId id : sy.box_classes) {
        if (!cfg.taxonomy.contains(id)) {
          sec.fail("box_classes", "scene class " + std::to_string(id) + " is not in the taxonomy");
        }
      }
    }
  }

  reject_unknown(ini);
  return cfg;
}

ToolConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

nlohmann::json config_to_json(const ToolConfig& cfg) {
  nlohmann::json j;
  j["projection"] = {{"width", cfg.projection.width},
                     {"height", cfg.projection.height},
                     {"fov_up_deg", cfg.projection.fov_up / ProjectionConfig::kDegree},
                     {"fov_down_deg", cfg.projection.fov_down / ProjectionConfig::kDegree}};
  nlohmann::json tax;
  tax["background"] = cfg.taxonomy.background;
  tax["base"] = cfg.taxonomy.base;
  tax["novel"] = cfg.taxonomy.novel;
  nlohmann::json raw;
  for (const auto& [r, c] : cfg.taxonomy.raw_to_class) raw[std::to_string(r)] = c;
  tax["raw_to_class"] = raw;
  nlohmann::json names;
  for (const auto& [c, n] : cfg.taxonomy.names) names[std::to_string(c)] = n;
  tax["names"] = names;
  j["taxonomy"] = tax;
  j["model"] = {{"hidden_width", cfg.model.hidden_width},
                {"neighborhood_features", cfg.model.neighborhood_features},
                {"channel_mean", std::vector<Scalar>(cfg.model.channel_mean.data(), cfg.model.channel_mean.data() + 5)},
                {"channel_std", std::vector<Scalar>(cfg.model.channel_std.data(), cfg.model.channel_std.data() + 5)}};
  j["optimizer"] = {{"learning_rate", cfg.optimizer.learning_rate},
                    {"momentum", cfg.optimizer.momentum},
                    {"lr_decay", cfg.optimizer.lr_decay},
                    {"lr_decay_mode", to_string(cfg.optimizer.decay_mode)},
                    {"batch_frames", cfg.optimizer.batch_frames}};
  j["train_base"] = {{"epochs", cfg.train_base.epochs}, {"seed", cfg.train_base.seed}};
  j["finetune"] = {{"epochs", cfg.finetune.epochs},
                   {"shots", cfg.finetune.shots},
                   {"seed", cfg.finetune.seed},
                   {"shot_seed", cfg.finetune.shot_seed},
                   {"freeze", to_string(cfg.finetune.freeze)},
                   {"ce", to_string(cfg.finetune.loss.ce)},
                   {"kd", to_string(cfg.finetune.loss.kd)},
                   {"lovasz", cfg.finetune.loss.lovasz},
                   {"background_term", to_string(cfg.finetune.loss.background_term)}};
  j["losses"] = {{"frequency_floor", cfg.frequency_floor}};
  j["evaluation"] = {{"include_background_in_miou", cfg.evaluation.include_background_in_miou},
                     {"absent_classes_as_zero", cfg.evaluation.absent_classes_as_zero}};
  if (cfg.has_synth) {
    j["synth"] = {{"sensor_beams", cfg.synth.sensor.beams},
                  {"azimuth_bins", cfg.synth.sensor.azimuth_bins},
                  {"sensor_height", cfg.synth.sensor.height},
                  {"range_noise_sigma", cfg.synth.sensor.range_noise_sigma},
                  {"extent", cfg.synth.extent},
                  {"ground_class", cfg.synth.ground_class},
                  {"wall_class", cfg.synth.wall_class},
                  {"pole_class", cfg.synth.pole_class},
                  {"box_classes", cfg.synth.box_classes},
                  {"base_train_frames", cfg.synth.base_train_frames},
                  {"shot_pool_frames", cfg.synth.shot_pool_frames},
                  {"eval_frames", cfg.synth.eval_frames},
                  {"seed_base_train", cfg.synth.seed_base_train},
                  {"seed_shot_pool", cfg.synth.seed_shot_pool},
                  {"seed_eval", cfg.synth.seed_eval}};
  }
  return j;
}

}  // namespace lfss
