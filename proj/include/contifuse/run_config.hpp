#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "contifuse/augment.hpp"
#include "contifuse/model_config.hpp"
#include "contifuse/trainer.hpp"

namespace contifuse {

/// Everything a run needs, merged from defaults, a config file, and
/// command-line overrides (in that order; later wins).  The serialized form
/// uses flat dotted keys, one `key = value` per line, `#` comments.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentationPolicy aug;
  std::string precision = "f32";  // f32 | f64
  std::string data_root;          // dataset directory (ir/ + vi/) or manifest file
  std::string out_dir;

  void validate() const {
    model.validate();
    train.validate();
    aug.validate();
    require(precision == "f32" || precision == "f64",
            "run: precision must be f32 or f64, got '" + precision + "'");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw ContractError("config: " + key + " wants an integer, got '" + v + "'");
  }
  if (used != v.size()) throw ContractError("config: " + key + " wants an integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ContractError("config: " + key + " wants a number, got '" + v + "'");
  }
  if (used != v.size()) throw ContractError("config: " + key + " wants a number, got '" + v + "'");
  return out;
}

inline std::vector<Dim> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<Dim> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(Dim(parse_int(key, trim(item))));
  require(!out.empty(), "config: " + key + " wants a comma-separated integer list");
  return out;
}

}  // namespace detail

/// Applies one `key = value` entry.  Unknown keys are hard errors: a typo
/// must never silently train with defaults.
inline void apply_run_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_int;
  using detail::parse_int_list;
  using detail::parse_real;
  if (key == "model.layers")
    c.model.num_layers = Dim(parse_int(key, value));
  else if (key == "model.k")
    c.model.num_states = Dim(parse_int(key, value));
  else if (key == "model.base_width")
    c.model.base_width = Dim(parse_int(key, value));
  else if (key == "model.channels")
    c.model.channel_schedule = parse_int_list(key, value);
  else if (key == "model.heads")
    c.model.attention_heads = Dim(parse_int(key, value));
  else if (key == "model.gdfn_expansion")
    c.model.gdfn_expansion = parse_real(key, value);
  else if (key == "train.batch_size")
    c.train.batch_size = Dim(parse_int(key, value));
  else if (key == "train.epochs")
    c.train.epochs = Dim(parse_int(key, value));
  else if (key == "train.lr_start")
    c.train.lr_start = parse_real(key, value);
  else if (key == "train.lr_peak")
    c.train.lr_peak = parse_real(key, value);
  else if (key == "train.lr_final")
    c.train.lr_final = parse_real(key, value);
  else if (key == "train.warmup_epochs")
    c.train.warmup_epochs = Dim(parse_int(key, value));
  else if (key == "train.clip_max_norm")
    c.train.clip_max_norm = parse_real(key, value);
  else if (key == "train.weight_decay")
    c.train.weight_decay = parse_real(key, value);
  else if (key == "train.seed")
    c.train.seed = std::uint64_t(parse_int(key, value));
  else if (key == "train.loss_mode")
    c.train.loss_mode = parse_loss_mode(value);
  else if (key == "train.decay")
    c.train.decomposition.decay = parse_decay(value);
  else if (key == "train.span")
    c.train.decomposition.span = parse_span(value);
  else if (key == "train.alpha_intensity")
    c.train.weights.alpha_intensity = parse_real(key, value);
  else if (key == "train.alpha_gradient")
    c.train.weights.alpha_gradient = parse_real(key, value);
  else if (key == "train.checkpoint_every")
    c.train.checkpoint_every = Dim(parse_int(key, value));
  else if (key == "train.precision")
    c.precision = value;
  else if (key == "aug.crop_size")
    c.aug.crop_size = Dim(parse_int(key, value));
  else if (key == "aug.hflip_prob")
    c.aug.hflip_prob = parse_real(key, value);
  else if (key == "aug.vflip_prob")
    c.aug.vflip_prob = parse_real(key, value);
  else if (key == "data.root")
    c.data_root = value;
  else if (key == "out.dir")
    c.out_dir = value;
  else
    throw ContractError("config: unknown key '" + key + "'");
}

/// Parses a config file onto `c`.  Lines are `key = value`; blank lines and
/// `#` comments are ignored.  Errors carry the line number.
inline void apply_run_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ContractError("config: " + path + ":" + std::to_string(lineno) +
                          " is not a 'key = value' line");
    try {
      apply_run_config_entry(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    } catch (const ContractError& e) {
      throw ContractError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

/// Serialized form: reparseable and sufficient to rerun the command.
inline std::string render_run_config(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "model.layers = " << c.model.num_layers << "\n";
  out << "model.k = " << c.model.num_states << "\n";
  out << "model.base_width = " << c.model.base_width << "\n";
  out << "model.channels = ";
  for (std::size_t i = 0; i < c.model.channel_schedule.size(); ++i)
    out << (i ? "," : "") << c.model.channel_schedule[i];
  out << "\n";
  out << "model.heads = " << c.model.attention_heads << "\n";
  out << "model.gdfn_expansion = " << c.model.gdfn_expansion << "\n";
  out << "train.batch_size = " << c.train.batch_size << "\n";
  out << "train.epochs = " << c.train.epochs << "\n";
  out << "train.lr_start = " << c.train.lr_start << "\n";
  out << "train.lr_peak = " << c.train.lr_peak << "\n";
  out << "train.lr_final = " << c.train.lr_final << "\n";
  out << "train.warmup_epochs = " << c.train.warmup_epochs << "\n";
  out << "train.clip_max_norm = " << c.train.clip_max_norm << "\n";
  out << "train.weight_decay = " << c.train.weight_decay << "\n";
  out << "train.seed = " << c.train.seed << "\n";
  out << "train.loss_mode = " << loss_mode_name(c.train.loss_mode) << "\n";
  out << "train.decay = " << decay_name(c.train.decomposition.decay) << "\n";
  out << "train.span = " << span_name(c.train.decomposition.span) << "\n";
  out << "train.alpha_intensity = " << c.train.weights.alpha_intensity << "\n";
  out << "train.alpha_gradient = " << c.train.weights.alpha_gradient << "\n";
  out << "train.checkpoint_every = " << c.train.checkpoint_every << "\n";
  out << "train.precision = " << c.precision << "\n";
  out << "aug.crop_size = " << c.aug.crop_size << "\n";
  out << "aug.hflip_prob = " << c.aug.hflip_prob << "\n";
  out << "aug.vflip_prob = " << c.aug.vflip_prob << "\n";
  if (!c.data_root.empty()) out << "data.root = " << c.data_root << "\n";
  if (!c.out_dir.empty()) out << "out.dir = " << c.out_dir << "\n";
  return out.str();
}

/// Every violated invariant, one message per field; empty means valid.
inline std::vector<std::string> run_config_violations(const RunConfig& c) {
  std::vector<std::string> v;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) v.push_back(msg);
  };
  check(c.model.num_layers >= 1, "model.layers must be >= 1");
  check(c.model.num_states >= 1, "model.k must be >= 1");
  check(c.model.base_width >= 1, "model.base_width must be >= 1");
  check(c.model.attention_heads >= 1, "model.heads must be >= 1");
  check(c.model.gdfn_expansion > 0, "model.gdfn_expansion must be positive");
  check(Dim(c.model.channel_schedule.size()) == c.model.num_layers + 1,
        "model.channels must list model.layers+1 widths");
  if (!c.model.channel_schedule.empty()) {
    check(c.model.channel_schedule[0] == c.model.base_width,
          "model.channels must start at model.base_width");
    bool positive = true, divisible = true;
    for (std::size_t l = 0; l < c.model.channel_schedule.size(); ++l) {
      positive = positive && c.model.channel_schedule[l] >= 1;
      if (l >= 1 && c.model.attention_heads >= 1)
        divisible = divisible && c.model.channel_schedule[l] % c.model.attention_heads == 0;
    }
    check(positive, "model.channels entries must be >= 1");
    check(divisible, "model.heads must divide every encoder width in model.channels");
  }
  check(c.train.batch_size >= 1, "train.batch_size must be >= 1");
  check(c.train.epochs >= 0, "train.epochs must be >= 0");
  check(c.train.lr_start <= c.train.lr_peak, "train.lr_start must not exceed train.lr_peak");
  check(c.train.warmup_epochs >= 0, "train.warmup_epochs must be >= 0");
  check(c.train.epochs == 0 || c.train.warmup_epochs < c.train.epochs,
        "train.warmup_epochs must be below train.epochs");
  check(c.train.clip_max_norm > 0, "train.clip_max_norm must be positive");
  check(c.train.weight_decay >= 0, "train.weight_decay must be >= 0");
  check(c.train.checkpoint_every >= 1, "train.checkpoint_every must be >= 1");
  check(c.aug.crop_size >= 1, "aug.crop_size must be >= 1");
  check(c.aug.hflip_prob >= 0 && c.aug.hflip_prob <= 1, "aug.hflip_prob must be in [0,1]");
  check(c.aug.vflip_prob >= 0 && c.aug.vflip_prob <= 1, "aug.vflip_prob must be in [0,1]");
  check(c.precision == "f32" || c.precision == "f64", "train.precision must be f32 or f64");
  return v;
}

}  // namespace contifuse
