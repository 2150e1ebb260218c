#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pisr/autodiff.hpp"
#include "pisr/tensor.hpp"

namespace pisr {

// Named parameter tensors in a stable insertion order. The order defines the
// optimizer's update sequence and the checkpoint layout.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::int64_t total_elements() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t> index_;
};

// The same parameters lifted onto a tape as leaves for one training step.
class VarStore {
 public:
  VarStore(Tape& tape, const ParamStore& params);
  // Wraps existing vars (e.g. grad-check leaves) under parameter names.
  VarStore(const std::vector<std::string>& names, const std::vector<Var>& vars);
  Var get(const std::string& name) const;

 private:
  std::map<std::string, Var> vars_;
};

// Checkpoint directory: manifest.txt (key=value metadata plus one
// `param.<name>=<file>` line per tensor) and one PISRTEN1 file per parameter.
void save_checkpoint(const std::string& dir, const ParamStore& params,
                     const std::map<std::string, std::string>& meta);
std::pair<ParamStore, std::map<std::string, std::string>> load_checkpoint(
    const std::string& dir);

}  // namespace pisr
