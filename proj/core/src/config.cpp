#include "bhpeft/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "bhpeft/errors.hpp"

namespace bhpeft {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long long x = std::stoll(v, &used);
    if (used != v.size() || x < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    std::uint64_t x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw config_error("key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void apply_config_pairs(RunConfig& cfg, const std::map<std::string, std::string>& pairs) {
  for (const auto& [key, value] : pairs) {
    if (key == "d") cfg.model.d = to_size(key, value);
    else if (key == "h") cfg.model.h = to_size(key, value);
    else if (key == "layers") cfg.model.layers = to_size(key, value);
    else if (key == "n_max") cfg.model.n_max = to_size(key, value);
    else if (key == "vocab") cfg.model.vocab = to_size(key, value);
    else if (key == "prefix_len") cfg.model.prefix_len = to_size(key, value);
    else if (key == "r_prefix") cfg.model.r_prefix = to_size(key, value);
    else if (key == "r_adapter") cfg.model.r_adapter = to_size(key, value);
    else if (key == "adapter_scale") cfg.model.adapter_scale = to_double(key, value);
    else if (key == "d_ff") cfg.model.d_ff = to_size(key, value);
    else if (key == "ln_eps") cfg.model.ln_eps = to_double(key, value);
    else if (key == "delta") cfg.model.delta = to_double(key, value);
    else if (key == "sigma0") cfg.model.sigma0 = to_double(key, value);
    else if (key == "task") cfg.model.task = parse_task(value);
    else if (key == "classes") cfg.model.classes = to_size(key, value);
    else if (key == "mc_samples") cfg.train.mc_samples = to_size(key, value);
    else if (key == "epochs") cfg.train.epochs = to_size(key, value);
    else if (key == "batch_size") cfg.train.batch_size = to_size(key, value);
    else if (key == "learning_rate") cfg.train.learning_rate = to_double(key, value);
    else if (key == "kl_weight") cfg.train.kl_weight = to_double(key, value);
    else if (key == "sigma_n") cfg.train.sigma_n = to_double(key, value);
    else if (key == "per_example_eps") cfg.train.per_example_eps = to_bool(key, value);
    else if (key == "eval_samples") cfg.train.eval_samples = to_size(key, value);
    else if (key == "seed") cfg.seed = to_u64(key, value);
    else throw config_error("unknown config key '" + key + "'");
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file '" + path + "'");
  RunConfig cfg;
  std::map<std::string, std::string> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw config_error(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw config_error(path + ":" + std::to_string(line_no) + ": empty key or value");
    }
    if (!pairs.emplace(key, value).second) {
      throw config_error(path + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  try {
    apply_config_pairs(cfg, pairs);
  } catch (const config_error& e) {
    throw config_error(path + ": " + e.what());
  }
  return cfg;
}

std::string config_text(const RunConfig& cfg) {
  std::ostringstream os;
  os << "d = " << cfg.model.d << "\n";
  os << "h = " << cfg.model.h << "\n";
  os << "layers = " << cfg.model.layers << "\n";
  os << "n_max = " << cfg.model.n_max << "\n";
  os << "vocab = " << cfg.model.vocab << "\n";
  os << "prefix_len = " << cfg.model.prefix_len << "\n";
  os << "r_prefix = " << cfg.model.r_prefix << "\n";
  os << "r_adapter = " << cfg.model.r_adapter << "\n";
  os << "adapter_scale = " << fmt_double(cfg.model.adapter_scale) << "\n";
  os << "d_ff = " << cfg.model.d_ff << "\n";
  os << "ln_eps = " << fmt_double(cfg.model.ln_eps) << "\n";
  os << "delta = " << fmt_double(cfg.model.delta) << "\n";
  os << "sigma0 = " << fmt_double(cfg.model.sigma0) << "\n";
  os << "task = " << task_name(cfg.model.task) << "\n";
  os << "classes = " << cfg.model.classes << "\n";
  os << "mc_samples = " << cfg.train.mc_samples << "\n";
  os << "epochs = " << cfg.train.epochs << "\n";
  os << "batch_size = " << cfg.train.batch_size << "\n";
  os << "learning_rate = " << fmt_double(cfg.train.learning_rate) << "\n";
  os << "kl_weight = " << fmt_double(cfg.train.kl_weight) << "\n";
  os << "sigma_n = " << fmt_double(cfg.train.sigma_n) << "\n";
  os << "per_example_eps = " << (cfg.train.per_example_eps ? "true" : "false") << "\n";
  os << "eval_samples = " << cfg.train.eval_samples << "\n";
  os << "seed = " << cfg.seed << "\n";
  return os.str();
}

std::string config_digest(const RunConfig& cfg) {
  std::uint64_t h = fnv1a64(config_text(cfg));
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace bhpeft
