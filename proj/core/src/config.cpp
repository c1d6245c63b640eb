#include "tra/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "tra/errors.hpp"

namespace tra {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

struct KeyValue {
  std::string value;
  bool used = false;
};

class IniFile {
 public:
  explicit IniFile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string stripped = trim(line);
      if (stripped.empty() || stripped[0] == '#' || stripped[0] == ';') continue;
      if (stripped.front() == '[') {
        if (stripped.back() != ']') {
          throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
        }
        section = trim(stripped.substr(1, stripped.size() - 2));
        continue;
      }
      const std::size_t eq = stripped.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key = section + "." + trim(stripped.substr(0, eq));
      const std::string value = trim(stripped.substr(eq + 1));
      if (!entries_.emplace(key, KeyValue{value, false}).second) {
        throw ConfigError("duplicate config key '" + key + "'");
      }
    }
  }

  const std::string* find(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    it->second.used = true;
    return &it->second.value;
  }

  void reject_unknown() const {
    for (const auto& [key, kv] : entries_) {
      if (!kv.used) throw ConfigError("unknown config key '" + key + "'");
    }
  }

 private:
  std::map<std::string, KeyValue> entries_;
};

double parse_real(const std::string& value, const std::string& key) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("key '" + key + "': cannot parse real value '" + value + "'");
  }
  return out;
}

std::int64_t parse_int(const std::string& value, const std::string& key) {
  std::int64_t out = 0;
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("key '" + key + "': cannot parse integer value '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

DateRange parse_range(const std::string& value, const std::string& key) {
  const std::size_t sep = value.find("..");
  if (sep == std::string::npos) {
    throw ConfigError("key '" + key + "': expected 'YYYY-MM-DD..YYYY-MM-DD'");
  }
  DateRange r;
  try {
    r.first = parse_date(trim(value.substr(0, sep)));
    r.last = parse_date(trim(value.substr(sep + 2)));
  } catch (const ParseError& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
  if (r.last < r.first) {
    throw ConfigError("key '" + key + "': range end precedes start");
  }
  return r;
}

}  // namespace

RunConfig default_config() {
  RunConfig cfg;
  cfg.synth.horizon = cfg.horizon;
  cfg.train.backbone.window_len = cfg.window_len;
  cfg.train.backbone.feature_dim = cfg.synth.n_features;
  return cfg;
}

RunConfig load_config(const std::string& path) {
  IniFile ini(path);
  RunConfig cfg = default_config();

  auto str = [&](const char* key, std::string& dst) {
    if (const auto* v = ini.find(key)) dst = *v;
  };
  auto real = [&](const char* key, double& dst) {
    if (const auto* v = ini.find(key)) dst = parse_real(*v, key);
  };
  auto count = [&](const char* key, std::size_t& dst) {
    if (const auto* v = ini.find(key)) {
      const std::int64_t raw = parse_int(*v, key);
      if (raw < 0) throw ConfigError(std::string("key '") + key + "': must be >= 0");
      dst = static_cast<std::size_t>(raw);
    }
  };
  auto integer = [&](const char* key, int& dst) {
    if (const auto* v = ini.find(key)) dst = static_cast<int>(parse_int(*v, key));
  };
  auto boolean = [&](const char* key, bool& dst) {
    if (const auto* v = ini.find(key)) dst = parse_bool(*v, key);
  };

  // [data]
  str("data.csv", cfg.csv);
  str("data.sidecar", cfg.sidecar);
  integer("data.horizon", cfg.horizon);
  count("data.window_len", cfg.window_len);

  // [synthetic]
  count("synthetic.stocks", cfg.synth.n_stocks);
  count("synthetic.days", cfg.synth.n_days);
  count("synthetic.features", cfg.synth.n_features);
  count("synthetic.regimes", cfg.synth.n_regimes);
  count("synthetic.regime_block", cfg.synth.regime_block);
  real("synthetic.noise_std", cfg.synth.noise_std);
  if (const auto* v = ini.find("synthetic.start_date")) {
    try {
      cfg.synth.start_date = parse_date(*v);
    } catch (const ParseError& e) {
      throw ConfigError(std::string("key 'synthetic.start_date': ") + e.what());
    }
  }
  if (const auto* v = ini.find("synthetic.seed")) {
    cfg.synth.seed = static_cast<std::uint64_t>(parse_int(*v, "synthetic.seed"));
  }

  // [split]
  const auto* train_range = ini.find("split.train");
  const auto* valid_range = ini.find("split.valid");
  const auto* test_range = ini.find("split.test");
  if (train_range || valid_range || test_range) {
    if (!(train_range && valid_range && test_range)) {
      throw ConfigError("explicit split ranges need all of split.train/valid/test");
    }
    cfg.explicit_ranges = true;
    cfg.train_range = parse_range(*train_range, "split.train");
    cfg.valid_range = parse_range(*valid_range, "split.valid");
    cfg.test_range = parse_range(*test_range, "split.test");
  }
  real("split.train_frac", cfg.train_frac);
  real("split.valid_frac", cfg.valid_frac);
  integer("split.gap_days", cfg.gap_days);

  // [backbone]
  if (const auto* v = ini.find("backbone.kind")) {
    cfg.train.backbone.kind = backbone_kind_from_string(*v);
  }
  if (const auto* v = ini.find("backbone.hidden_dims")) {
    cfg.train.backbone.hidden_dims.clear();
    for (const auto& item : split_list(*v)) {
      const std::int64_t h = parse_int(item, "backbone.hidden_dims");
      if (h <= 0) throw ConfigError("key 'backbone.hidden_dims': dims must be positive");
      cfg.train.backbone.hidden_dims.push_back(static_cast<std::size_t>(h));
    }
  }
  count("backbone.latent_dim", cfg.train.backbone.latent_dim);
  if (const auto* v = ini.find("backbone.activation")) {
    cfg.train.backbone.activation = activation_from_string(*v);
  }

  // [router]
  if (const auto* v = ini.find("router.input_mode")) {
    cfg.train.input_mode = router_input_mode_from_string(*v);
  }
  if (const auto* v = ini.find("router.summarizer")) {
    cfg.train.summarizer = summarizer_kind_from_string(*v);
  }
  count("router.state_dim", cfg.train.state_dim);
  real("router.ema_decay", cfg.train.ema_decay);
  real("router.tau", cfg.train.tau);
  boolean("router.soft_inference", cfg.train.soft_inference);

  // [memory]
  integer("memory.lookback", cfg.train.lookback);
  integer("memory.gap", cfg.train.gap);

  // [train]
  count("train.predictors", cfg.train.k);
  real("train.lambda", cfg.train.lambda);
  real("train.rho", cfg.train.rho);
  count("train.epochs", cfg.train.epochs);
  count("train.batch_size", cfg.train.batch_size);
  real("train.learning_rate", cfg.train.learning_rate);
  if (const auto* v = ini.find("train.optimizer")) {
    cfg.train.optimizer = optimizer_kind_from_string(*v);
  }
  count("train.early_stop_patience", cfg.train.early_stop_patience);
  count("train.warmup_epochs", cfg.train.warmup_epochs);
  if (const auto* v = ini.find("train.seed")) {
    cfg.train.seed = static_cast<std::uint64_t>(parse_int(*v, "train.seed"));
  }
  count("train.period_ensemble", cfg.period_ensemble);

  // [sinkhorn]
  real("sinkhorn.epsilon_scale", cfg.train.sinkhorn_epsilon_scale);
  count("sinkhorn.max_iters", cfg.train.sinkhorn_max_iters);
  real("sinkhorn.tol", cfg.train.sinkhorn_tol);

  // [eval]
  real("eval.decile", cfg.decile);
  integer("eval.period_len", cfg.period_len);

  // [ablate]
  count("ablate.seeds", cfg.ablate_seeds);
  if (const auto* v = ini.find("ablate.k_sweep")) {
    cfg.k_sweep.clear();
    for (const auto& item : split_list(*v)) {
      const std::int64_t k = parse_int(item, "ablate.k_sweep");
      if (k <= 0) throw ConfigError("key 'ablate.k_sweep': K values must be positive");
      cfg.k_sweep.push_back(static_cast<std::size_t>(k));
    }
  }
  if (const auto* v = ini.find("ablate.studies")) {
    cfg.studies = split_list(*v);
  }
  count("ablate.ts_periods", cfg.ts_periods);

  // [output]
  str("output.dir", cfg.out_dir);

  ini.reject_unknown();

  // cross-field resolution and validation
  cfg.synth.horizon = cfg.horizon;
  cfg.train.backbone.window_len = cfg.window_len;

  if (cfg.horizon < 1) throw ConfigError("key 'data.horizon': must be >= 1");
  if (cfg.window_len == 0) throw ConfigError("key 'data.window_len': must be >= 1");
  cfg.train.validate(cfg.horizon);
  if (!cfg.explicit_ranges) {
    if (!(cfg.train_frac > 0.0 && cfg.valid_frac > 0.0 &&
          cfg.train_frac + cfg.valid_frac < 1.0)) {
      throw ConfigError("key 'split.train_frac': fractions must be positive and sum below 1");
    }
  }
  if (cfg.gap_days < 0) throw ConfigError("key 'split.gap_days': must be >= 0");
  if (!(cfg.decile > 0.0 && cfg.decile <= 0.5)) {
    throw ConfigError("key 'eval.decile': must be in (0, 0.5]");
  }
  if (cfg.period_len < 1) throw ConfigError("key 'eval.period_len': must be >= 1");
  if (cfg.ablate_seeds == 0) throw ConfigError("key 'ablate.seeds': must be >= 1");
  for (const auto& s : cfg.studies) {
    if (s != "rq2" && s != "rq3" && s != "rq4" && s != "ts") {
      throw ConfigError("key 'ablate.studies': unknown study '" + s + "'");
    }
  }
  if (cfg.ts_periods == 1) {
    throw ConfigError("key 'ablate.ts_periods': needs >= 2 periods (or 0 to disable)");
  }
  if (cfg.period_ensemble == 1) {
    throw ConfigError("key 'train.period_ensemble': needs >= 2 periods (or 0 to disable)");
  }
  return cfg;
}

namespace {

std::string format_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string join_list(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += items[i];
    } else {
      out += std::to_string(items[i]);
    }
  }
  return out;
}

}  // namespace

std::string render_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "[data]\n";
  out << "csv = " << cfg.csv << "\n";
  out << "sidecar = " << cfg.sidecar << "\n";
  out << "horizon = " << cfg.horizon << "\n";
  out << "window_len = " << cfg.window_len << "\n";
  out << "\n[synthetic]\n";
  out << "stocks = " << cfg.synth.n_stocks << "\n";
  out << "days = " << cfg.synth.n_days << "\n";
  out << "features = " << cfg.synth.n_features << "\n";
  out << "regimes = " << cfg.synth.n_regimes << "\n";
  out << "regime_block = " << cfg.synth.regime_block << "\n";
  out << "noise_std = " << format_real(cfg.synth.noise_std) << "\n";
  out << "start_date = " << format_date(cfg.synth.start_date) << "\n";
  out << "seed = " << cfg.synth.seed << "\n";
  out << "\n[split]\n";
  if (cfg.explicit_ranges) {
    out << "train = " << format_date(cfg.train_range.first) << ".."
        << format_date(cfg.train_range.last) << "\n";
    out << "valid = " << format_date(cfg.valid_range.first) << ".."
        << format_date(cfg.valid_range.last) << "\n";
    out << "test = " << format_date(cfg.test_range.first) << ".."
        << format_date(cfg.test_range.last) << "\n";
  } else {
    out << "train_frac = " << format_real(cfg.train_frac) << "\n";
    out << "valid_frac = " << format_real(cfg.valid_frac) << "\n";
  }
  out << "gap_days = " << cfg.gap_days << "\n";
  out << "\n[backbone]\n";
  out << "kind = " << to_string(cfg.train.backbone.kind) << "\n";
  out << "hidden_dims = " << join_list(cfg.train.backbone.hidden_dims) << "\n";
  out << "latent_dim = " << cfg.train.backbone.latent_dim << "\n";
  out << "activation = " << to_string(cfg.train.backbone.activation) << "\n";
  out << "\n[router]\n";
  out << "input_mode = " << to_string(cfg.train.input_mode) << "\n";
  out << "summarizer = " << to_string(cfg.train.summarizer) << "\n";
  out << "state_dim = " << cfg.train.state_dim << "\n";
  out << "ema_decay = " << format_real(cfg.train.ema_decay) << "\n";
  out << "tau = " << format_real(cfg.train.tau) << "\n";
  out << "soft_inference = " << (cfg.train.soft_inference ? "true" : "false") << "\n";
  out << "\n[memory]\n";
  out << "lookback = " << cfg.train.lookback << "\n";
  out << "gap = " << cfg.train.gap << "\n";
  out << "\n[train]\n";
  out << "predictors = " << cfg.train.k << "\n";
  out << "lambda = " << format_real(cfg.train.lambda) << "\n";
  out << "rho = " << format_real(cfg.train.rho) << "\n";
  out << "epochs = " << cfg.train.epochs << "\n";
  out << "batch_size = " << cfg.train.batch_size << "\n";
  out << "learning_rate = " << format_real(cfg.train.learning_rate) << "\n";
  out << "optimizer = " << to_string(cfg.train.optimizer) << "\n";
  out << "early_stop_patience = " << cfg.train.early_stop_patience << "\n";
  out << "warmup_epochs = " << cfg.train.warmup_epochs << "\n";
  out << "seed = " << cfg.train.seed << "\n";
  out << "period_ensemble = " << cfg.period_ensemble << "\n";
  out << "\n[sinkhorn]\n";
  out << "epsilon_scale = " << format_real(cfg.train.sinkhorn_epsilon_scale) << "\n";
  out << "max_iters = " << cfg.train.sinkhorn_max_iters << "\n";
  out << "tol = " << format_real(cfg.train.sinkhorn_tol) << "\n";
  out << "\n[eval]\n";
  out << "decile = " << format_real(cfg.decile) << "\n";
  out << "period_len = " << cfg.period_len << "\n";
  out << "\n[ablate]\n";
  out << "seeds = " << cfg.ablate_seeds << "\n";
  out << "k_sweep = " << join_list(cfg.k_sweep) << "\n";
  out << "studies = " << join_list(cfg.studies) << "\n";
  out << "ts_periods = " << cfg.ts_periods << "\n";
  out << "\n[output]\n";
  out << "dir = " << cfg.out_dir << "\n";
  return out.str();
}

void write_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config echo '" + path + "'");
  out << render_config(cfg);
}

}  // namespace tra
