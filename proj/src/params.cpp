#include "pisr/params.hpp"

#include <filesystem>
#include <fstream>

#include "pisr/tensor_io.hpp"

namespace pisr {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(value));
  return items_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return items_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return items_[it->second].second;
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

VarStore::VarStore(Tape& tape, const ParamStore& params) {
  for (const auto& [name, t] : params.items()) vars_[name] = tape.leaf(t);
}

VarStore::VarStore(const std::vector<std::string>& names, const std::vector<Var>& vars) {
  if (names.size() != vars.size()) {
    throw ConfigError("VarStore: " + std::to_string(names.size()) + " names vs " +
                      std::to_string(vars.size()) + " vars");
  }
  for (std::size_t i = 0; i < names.size(); ++i) vars_[names[i]] = vars[i];
}

Var VarStore::get(const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("unknown parameter var: " + name);
  return it->second;
}

void save_checkpoint(const std::string& dir, const ParamStore& params,
                     const std::map<std::string, std::string>& meta) {
  std::filesystem::create_directories(dir);
  // Write to a temp manifest first so a torn write cannot look complete.
  const std::string tmp = dir + "/manifest.txt.tmp";
  std::ofstream f(tmp, std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint manifest in " + dir);
  for (const auto& [k, v] : meta) f << k << "=" << v << "\n";
  for (const auto& [name, t] : params.items()) {
    const std::string file = name + ".t";
    save_tensor(dir + "/" + file, t);
    f << "param." << name << "=" << file << "\n";
  }
  f.close();
  std::filesystem::rename(tmp, dir + "/manifest.txt");
}

std::pair<ParamStore, std::map<std::string, std::string>> load_checkpoint(
    const std::string& dir) {
  std::ifstream f(dir + "/manifest.txt");
  if (!f) throw IoError("no checkpoint manifest in " + dir);
  ParamStore params;
  std::map<std::string, std::string> meta;
  std::string line;
  while (std::getline(f, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.empty()) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key.rfind("param.", 0) == 0) {
      params.add(key.substr(6), load_tensor(dir + "/" + val));
    } else {
      meta[key] = val;
    }
  }
  return {std::move(params), std::move(meta)};
}

}  // namespace pisr
