#include "bvton/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string_view>
#include <vector>

namespace bvton::config {

namespace {

struct Field {
  std::string section, key;
  std::function<void(const std::string&)> read;
  std::function<std::string()> write;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& name, const std::string& v) {
  try {
    std::size_t used = 0;
    T out;
    if constexpr (std::is_same_v<T, int>) out = std::stoi(v, &used);
    else if constexpr (std::is_same_v<T, std::uint64_t>) out = std::stoull(v, &used);
    else out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(name + ": cannot parse '" + v + "' as a number");
  }
}

// One table drives parsing, printing and overrides, so they cannot drift apart.
std::vector<Field> fields(PipelineConfig& c) {
  std::vector<Field> f;
  auto num = [&](const std::string& sec, const std::string& key, auto* ptr) {
    using T = std::remove_pointer_t<decltype(ptr)>;
    const std::string name = sec + "." + key;
    f.push_back({sec, key, [ptr, name](const std::string& v) { *ptr = parse_number<T>(name, v); },
                 [ptr]() {
                   if constexpr (std::is_same_v<T, double>) return fmt(*ptr);
                   else return std::to_string(*ptr);
                 }});
  };
  auto str = [&](const std::string& sec, const std::string& key, std::string* ptr) {
    f.push_back({sec, key, [ptr](const std::string& v) { *ptr = v; }, [ptr]() { return *ptr; }});
  };
  auto stage = [&](const std::string& sec, Stage* s, bool disc) {
    num(sec, "steps", &s->steps);
    num(sec, "epochs", &s->epochs);
    num(sec, "batch", &s->batch);
    num(sec, "lr", &s->lr);
    if (disc) num(sec, "lr_disc", &s->lr_disc);
  };
  str("run", "profile", &c.profile);
  num("run", "seed", &c.seed);
  num("run", "height", &c.height);
  num("run", "width", &c.width);
  str("run", "workspace", &c.workspace);
  num("data", "n_paired", &c.n_paired);
  num("data", "n_unpaired", &c.n_unpaired);
  num("data", "n_test", &c.n_test);
  num("adam", "beta1", &c.beta1);
  num("adam", "beta2", &c.beta2);
  for (int i = 0; i < 8; ++i) num("loss", "lambda" + std::to_string(i + 1), &c.lambda[static_cast<std::size_t>(i)]);
  stage("ccm", &c.ccm, false);
  num("ccm", "tv_weight", &c.ccm_tv);
  stage("lmgm", &c.lmgm, true);
  num("lmgm", "p", &c.p);
  num("lmgm", "tau", &c.tau);
  num("lmgm", "alpha", &c.alpha);
  str("lmgm", "clothes", &c.lmgm_clothes);
  stage("mcdm", &c.mcdm, false);
  num("mcdm", "tv_weight", &c.mcdm_tv);
  stage("utom", &c.utom, true);
  num("utom", "alpha_aug", &c.alpha_aug);
  num("utom", "beta_aug", &c.beta_aug);
  num("utom", "h_alpha", &c.h_alpha);
  num("utom", "w_alpha", &c.w_alpha);
  return f;
}

void assign(PipelineConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
  for (auto& fld : fields(cfg))
    if (fld.section == section && fld.key == key) {
      fld.read(value);
      return;
    }
  throw ConfigError("unknown config key '" + section + "." + key + "'");
}

}  // namespace

PipelineConfig desk_profile() { return {}; }

PipelineConfig paper_profile() {
  PipelineConfig c;
  c.profile = "paper";
  for (Stage* s : {&c.ccm, &c.lmgm, &c.mcdm, &c.utom}) {
    s->steps = 0;
    s->epochs = 20;
  }
  c.ccm.lr = 1e-6;
  c.mcdm.lr = 5e-5;
  c.lmgm.lr = 1e-4;
  c.lmgm.lr_disc = 1e-4;
  c.utom.lr = 1e-4;
  c.utom.lr_disc = 4e-4;
  c.h_alpha = 100;
  c.w_alpha = 75;
  return c;
}

PipelineConfig parse(const std::string& text, PipelineConfig base) {
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    if (section.empty()) throw ConfigError(where + "key outside of any [section]");
    try {
      assign(base, section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

std::string print(const PipelineConfig& cfg) {
  PipelineConfig copy = cfg;
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields(copy)) {
    if (f.section != section) {
      os << (section.empty() ? "" : "\n") << "[" << f.section << "]\n";
      section = f.section;
    }
    os << f.key << " = " << f.write() << "\n";
  }
  return os.str();
}

PipelineConfig load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  // keys a file leaves out come from the profile it names
  PipelineConfig cfg = parse(ss.str());
  if (cfg.profile == "paper") cfg = parse(ss.str(), paper_profile());
  return cfg;
}

void set(PipelineConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value: " + assignment);
  assign(cfg, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
         trim(assignment.substr(eq + 1)));
}

void validate(const PipelineConfig& cfg) {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  check(cfg.profile == "desk" || cfg.profile == "paper", "run.profile must be 'desk' or 'paper'");
  check(cfg.height > 0 && cfg.width > 0 && cfg.height % 8 == 0 && cfg.width % 8 == 0,
        "run.height/width must be positive multiples of 8");
  check(cfg.n_paired > 0 && cfg.n_unpaired > 0 && cfg.n_test >= 0, "data counts must be positive");
  check(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1, "adam betas must lie in [0, 1)");
  for (const auto& [name, s] : {std::pair{"ccm", cfg.ccm}, {"lmgm", cfg.lmgm}, {"mcdm", cfg.mcdm}, {"utom", cfg.utom}}) {
    const std::string n = name;
    check(s.batch > 0, n + ".batch must be positive");
    check(s.steps > 0 || s.epochs > 0, n + ": need steps or epochs");
    check(s.lr > 0, n + ".lr must be positive");
  }
  check(cfg.lmgm.lr_disc > 0 && cfg.utom.lr_disc > 0, "discriminator learning rates must be positive");
  check(cfg.p >= 0 && cfg.p <= 1, "lmgm.p must lie in [0, 1]");
  check(cfg.tau > 0, "lmgm.tau must be positive");
  check(cfg.alpha > 0, "lmgm.alpha must be positive");
  check(cfg.lmgm_clothes == "proxy" || cfg.lmgm_clothes == "inshop", "lmgm.clothes must be 'proxy' or 'inshop'");
  check(cfg.beta_aug > cfg.alpha_aug && cfg.alpha_aug >= 0, "utom: need beta_aug > alpha_aug >= 0");
  check(cfg.h_alpha > 0 && cfg.w_alpha > 0 && cfg.h_alpha <= cfg.height && cfg.w_alpha <= cfg.width,
        "utom.h_alpha/w_alpha must be positive and no larger than the resolution");
}

}  // namespace bvton::config
