#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pisr/encodings.hpp"
#include "pisr/pra.hpp"
#include "pisr/segmenter.hpp"

namespace pisr {

// Head arrangements compared in the ablation:
//   baseline    base segmenter alone
//   concat      [S; I; F] -> 1x1 conv to C -> final heads
//   eprod       [S; I] -> 1x1 conv to C, elementwise product with F -> final heads
//   sem_only    relational pipeline with K = 0 (semantic encodings only)
//   pisr_no_rw  relational pipeline without the reweighting gate
//   pisr        full pipeline
enum class Variant { baseline, concat, eprod, sem_only, pisr_no_rw, pisr };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
std::vector<Variant> all_variants();

struct ModelConfig {
  Variant variant = Variant::pisr;
  std::int64_t channels = 32;
  std::int64_t k = 8;  // candidate budget; also the fusion candidate count
  std::int64_t n_sem = 4;
  std::vector<std::int64_t> thing_ids;
  std::int64_t height = 64;
  std::int64_t width = 64;

  // sem_only keeps the candidate budget for fusion but feeds none of the
  // instance encodings into the relational stage.
  std::int64_t encoding_k() const { return variant == Variant::sem_only ? 0 : k; }
  std::int64_t p_categories() const { return n_sem + encoding_k(); }
  bool has_final_heads() const { return variant != Variant::baseline; }
  bool has_pra() const {
    return variant == Variant::pisr || variant == Variant::pisr_no_rw ||
           variant == Variant::sem_only;
  }
  bool has_reweighter() const {
    return variant == Variant::pisr || variant == Variant::sem_only;
  }
  bool has_mix() const { return variant == Variant::concat || variant == Variant::eprod; }
  PraConfig pra_config() const {
    return PraConfig{channels, channels, channels, p_categories()};
  }
};

struct Model {
  ModelConfig config;
  ParamStore params;
};

Model build_variant(const ModelConfig& config, std::uint64_t seed);

struct ModelOutputs {
  BaseOutputs base;                  // intermediate generators
  std::optional<BaseOutputs> final;  // absent for the baseline
  std::optional<Var> omega;          // reweighter gate, when present
  InstanceCandidates candidates;     // centers selected from the base M

  const BaseOutputs& prediction() const { return final ? *final : base; }
};

ModelOutputs model_forward(const VarStore& vars, const ModelConfig& config, Var image);

// Analytic multiply-accumulate count of one forward pass, times two.
std::int64_t forward_flops(const ModelConfig& config);

// Checkpoint wrappers that persist the model configuration alongside the
// parameter tensors.
void save_model(const std::string& dir, const Model& model);
Model load_model(const std::string& dir);

}  // namespace pisr
