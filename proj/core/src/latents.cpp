#include "mrdd/latents.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "mrdd/data.hpp"

namespace mrdd::latents {

void LatentSet::validate() const {
  if (c.ndim() != 2) throw std::invalid_argument("latents: c must be (n, d_c)");
  for (const auto& si : s) {
    if (si.ndim() != 2 || si.dim(0) != c.dim(0)) {
      throw std::invalid_argument("latents: specific codes must align with c");
    }
  }
  if (!labels.empty() && static_cast<int>(labels.size()) != c.dim(0)) {
    throw std::invalid_argument("latents: label count mismatch");
  }
  if (!all_finite(c)) throw std::invalid_argument("latents: non-finite c");
  for (const auto& si : s) {
    if (!all_finite(si)) throw std::invalid_argument("latents: non-finite s");
  }
}

void save_latents(const std::string& dir, const LatentSet& set) {
  set.validate();
  std::filesystem::create_directories(dir);
  std::ofstream os(dir + "/header.txt");
  if (!os) throw std::runtime_error("cannot write " + dir + "/header.txt");
  os << "n_samples = " << set.n_samples() << "\n";
  os << "d_c = " << set.c.dim(1) << "\n";
  os << "n_views = " << set.n_views() << "\n";
  for (int v = 0; v < set.n_views(); ++v) {
    os << "d_s." << (v + 1) << " = " << set.s[v].dim(1) << "\n";
  }
  os << "stage1_hash = " << set.stage1_hash << "\n";
  os << "stage2_hash = " << set.stage2_hash << "\n";
  data::save_array(dir + "/c.bin", set.c);
  for (int v = 0; v < set.n_views(); ++v) {
    data::save_array(dir + "/s" + std::to_string(v + 1) + ".bin", set.s[v]);
  }
  if (!set.labels.empty()) data::save_labels(dir + "/labels.bin", set.labels);
  if (!set.sample_ids.empty()) data::save_labels(dir + "/sample_ids.bin", set.sample_ids);
}

LatentSet load_latents(const std::string& dir) {
  std::ifstream is(dir + "/header.txt");
  if (!is) throw std::runtime_error("cannot read " + dir + "/header.txt");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t"));
      auto last = s.find_last_not_of(" \t\r");
      s.erase(last == std::string::npos ? 0 : last + 1);
    };
    strip(key);
    strip(val);
    kv[key] = val;
  }
  LatentSet set;
  set.c = data::load_array(dir + "/c.bin");
  int n_views = std::stoi(kv.at("n_views"));
  for (int v = 1; v <= n_views; ++v) {
    set.s.push_back(data::load_array(dir + "/s" + std::to_string(v) + ".bin"));
  }
  if (std::filesystem::exists(dir + "/labels.bin")) {
    set.labels = data::load_labels(dir + "/labels.bin");
  }
  if (std::filesystem::exists(dir + "/sample_ids.bin")) {
    set.sample_ids = data::load_labels(dir + "/sample_ids.bin");
  }
  if (kv.count("stage1_hash")) set.stage1_hash = kv["stage1_hash"];
  if (kv.count("stage2_hash")) set.stage2_hash = kv["stage2_hash"];
  set.validate();
  return set;
}

}  // namespace mrdd::latents
