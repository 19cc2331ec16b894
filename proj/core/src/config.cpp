#include "mrdd/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mrdd/checkpoint.hpp"
#include "mrdd/masking.hpp"

namespace mrdd::config {

namespace {

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  if (out.empty()) throw std::invalid_argument("expected a comma-separated int list");
  return out;
}

std::string join_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("expected a boolean, got '" + s + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (d_c < 1 || d_s < 1) throw std::invalid_argument("config: dims must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("config: base_channels must be >= 1");
  if (mask_ratio < 0.0 || mask_ratio > 1.0) {
    throw std::invalid_argument("config: mask.ratio must be in [0,1]");
  }
  if (stage1_epochs < 1 || stage2_epochs < 1) {
    throw std::invalid_argument("config: epochs must be >= 1");
  }
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (eval_runs < 1) throw std::invalid_argument("config: eval.runs must be >= 1");
  if (train_split != "all" && train_split != "train") {
    throw std::invalid_argument("config: train.split must be all or train");
  }
  masking::strategy_from_string(mask_strategy);
  if (qnet_hidden.empty() || audit_hidden.empty()) {
    throw std::invalid_argument("config: hidden layer lists cannot be empty");
  }
}

std::string ExperimentConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["dataset.dir"] = dataset_dir;
  kv["output.dir"] = output_dir;
  kv["run.seed"] = std::to_string(seed);
  kv["model.d_c"] = std::to_string(d_c);
  kv["model.d_s"] = std::to_string(d_s);
  kv["model.base_channels"] = std::to_string(base_channels);
  kv["model.dropout"] = fmt(dropout);
  kv["model.fusion"] = poe_fusion ? "poe" : "concat";
  kv["model.qnet_hidden"] = join_int_list(qnet_hidden);
  kv["model.sample_c"] = sample_c ? "true" : "false";
  kv["mask.strategy"] = mask_strategy;
  kv["mask.ratio"] = fmt(mask_ratio);
  kv["mask.patch_size"] = std::to_string(mask_patch);
  kv["mask.fill"] = fmt(mask_fill);
  kv["stage1.epochs"] = std::to_string(stage1_epochs);
  kv["stage2.epochs"] = std::to_string(stage2_epochs);
  kv["optim.batch_size"] = std::to_string(batch_size);
  kv["optim.lr"] = fmt(lr);
  kv["optim.schedule"] = cosine ? "cosine" : "constant";
  kv["loss.beta_c"] = fmt(beta_c);
  kv["loss.beta_s"] = fmt(beta_s);
  kv["loss.lambda_d"] = fmt(lambda_d);
  kv["loss.lambda_r"] = fmt(lambda_r);
  kv["train.split"] = train_split;
  kv["train.checkpoint_every"] = std::to_string(checkpoint_every);
  kv["eval.runs"] = std::to_string(eval_runs);
  kv["eval.svc_c"] = fmt(svc_c);
  kv["audit.enabled"] = audit_enabled ? "true" : "false";
  kv["audit.epochs"] = std::to_string(audit_epochs);
  kv["audit.batch_size"] = std::to_string(audit_batch);
  kv["audit.lr"] = fmt(audit_lr);
  kv["audit.repeats"] = std::to_string(audit_repeats);
  kv["audit.ema"] = audit_ema ? "true" : "false";
  kv["audit.hidden"] = join_int_list(audit_hidden);
  kv["compute.threads"] = std::to_string(threads);

  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

std::string ExperimentConfig::hash() const {
  std::string c = canonical();
  std::uint64_t h = ckpt::fnv1a(c.data(), c.size());
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << canonical();
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::map<std::string, std::function<void(const std::string&)>> setters;
  setters["dataset.dir"] = [&](const std::string& v) { cfg.dataset_dir = v; };
  setters["output.dir"] = [&](const std::string& v) { cfg.output_dir = v; };
  setters["run.seed"] = [&](const std::string& v) { cfg.seed = std::stoull(v); };
  setters["model.d_c"] = [&](const std::string& v) { cfg.d_c = std::stoi(v); };
  setters["model.d_s"] = [&](const std::string& v) { cfg.d_s = std::stoi(v); };
  setters["model.base_channels"] = [&](const std::string& v) { cfg.base_channels = std::stoi(v); };
  setters["model.dropout"] = [&](const std::string& v) { cfg.dropout = std::stod(v); };
  setters["model.fusion"] = [&](const std::string& v) {
    if (v == "concat") cfg.poe_fusion = false;
    else if (v == "poe") cfg.poe_fusion = true;
    else throw std::invalid_argument("model.fusion must be concat or poe");
  };
  setters["model.qnet_hidden"] = [&](const std::string& v) { cfg.qnet_hidden = parse_int_list(v); };
  setters["model.sample_c"] = [&](const std::string& v) { cfg.sample_c = parse_bool(v); };
  setters["mask.strategy"] = [&](const std::string& v) { cfg.mask_strategy = v; };
  setters["mask.ratio"] = [&](const std::string& v) { cfg.mask_ratio = std::stod(v); };
  setters["mask.patch_size"] = [&](const std::string& v) { cfg.mask_patch = std::stoi(v); };
  setters["mask.fill"] = [&](const std::string& v) { cfg.mask_fill = std::stod(v); };
  setters["stage1.epochs"] = [&](const std::string& v) { cfg.stage1_epochs = std::stoi(v); };
  setters["stage2.epochs"] = [&](const std::string& v) { cfg.stage2_epochs = std::stoi(v); };
  setters["optim.batch_size"] = [&](const std::string& v) { cfg.batch_size = std::stoi(v); };
  setters["optim.lr"] = [&](const std::string& v) { cfg.lr = std::stod(v); };
  setters["optim.schedule"] = [&](const std::string& v) {
    if (v == "cosine") cfg.cosine = true;
    else if (v == "constant") cfg.cosine = false;
    else throw std::invalid_argument("optim.schedule must be cosine or constant");
  };
  setters["loss.beta_c"] = [&](const std::string& v) { cfg.beta_c = std::stod(v); };
  setters["loss.beta_s"] = [&](const std::string& v) { cfg.beta_s = std::stod(v); };
  setters["loss.lambda_d"] = [&](const std::string& v) { cfg.lambda_d = std::stod(v); };
  setters["loss.lambda_r"] = [&](const std::string& v) { cfg.lambda_r = std::stod(v); };
  setters["train.split"] = [&](const std::string& v) { cfg.train_split = v; };
  setters["train.checkpoint_every"] = [&](const std::string& v) { cfg.checkpoint_every = std::stoi(v); };
  setters["eval.runs"] = [&](const std::string& v) { cfg.eval_runs = std::stoi(v); };
  setters["eval.svc_c"] = [&](const std::string& v) { cfg.svc_c = std::stod(v); };
  setters["audit.enabled"] = [&](const std::string& v) { cfg.audit_enabled = parse_bool(v); };
  setters["audit.epochs"] = [&](const std::string& v) { cfg.audit_epochs = std::stoi(v); };
  setters["audit.batch_size"] = [&](const std::string& v) { cfg.audit_batch = std::stoi(v); };
  setters["audit.lr"] = [&](const std::string& v) { cfg.audit_lr = std::stod(v); };
  setters["audit.repeats"] = [&](const std::string& v) { cfg.audit_repeats = std::stoi(v); };
  setters["audit.ema"] = [&](const std::string& v) { cfg.audit_ema = parse_bool(v); };
  setters["audit.hidden"] = [&](const std::string& v) { cfg.audit_hidden = parse_int_list(v); };
  setters["compute.threads"] = [&](const std::string& v) { cfg.threads = std::stoi(v); };

  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  std::map<std::string, bool> seen;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": unknown key '" + key + "'");
    }
    if (seen[key]) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": duplicate key '" + key + "'");
    }
    seen[key] = true;
    try {
      it->second(val);
    } catch (const std::exception& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + " (" + key +
                                  "): " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace mrdd::config
