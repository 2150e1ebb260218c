#pragma once

#include <string>
#include <vector>

#include "pisr/metrics.hpp"
#include "pisr/scene.hpp"
#include "pisr/variants.hpp"

namespace pisr {

class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
  Variant variant = Variant::pisr;
  std::int64_t k = 8;
  double gamma = 0.5;
  double lr = 0.05;
  double momentum = 0.9;
  std::int64_t epochs = 30;
  std::uint64_t seed = 0;
  double lambda_center = 10.0;
  double lambda_offset = 0.1;
  std::int64_t channels = 32;
  std::int64_t jobs = 1;  // per-sample evaluation parallelism only
};

struct LossBreakdown {
  double l_sem = 0.0, l_ins = 0.0;
  double l_sem_prime = 0.0, l_ins_prime = 0.0;
  double total = 0.0;
};

// total = gamma * (l_sem' + l_ins') + l_sem + l_ins, built on the tape so the
// breakdown recomposes bitwise. Primed terms are zero for variants without a
// second stage.
std::pair<Var, LossBreakdown> compute_loss(const ModelOutputs& outputs,
                                           const SceneSample& sample, double gamma,
                                           double lambda_center, double lambda_offset);

struct EpochStats {
  std::int64_t epoch = 0;
  double pq = 0.0, pq_th = 0.0, pq_st = 0.0, miou = 0.0;
  double loss_total = 0.0;  // mean over the epoch's steps
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
  std::vector<LossBreakdown> step_losses;
};

// Hold out the last fifth of the samples for validation.
struct Split {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> val;
};
Split split_dataset(std::int64_t n_samples);

// SGD with momentum, batch size 1, seeded shuffle per epoch, PQ/mIoU on the
// held-out split after every epoch. Aborts with the step index if the loss
// goes non-finite.
TrainResult train(const TrainConfig& config, const Dataset& data);

PqReport evaluate(const Model& model, const Dataset& data,
                  const std::vector<std::int64_t>& indices, std::int64_t jobs);

std::string history_csv(const TrainConfig& config, const std::vector<EpochStats>& history);

struct SweepRow {
  std::int64_t k = 0;
  std::string variant;
  double pq = 0.0;
};
// Trains pisr and pisr_no_rw at each K; pq is the final-epoch validation PQ.
std::vector<SweepRow> sweep_k(const TrainConfig& base, const std::vector<std::int64_t>& ks,
                              const Dataset& data);
std::string sweep_csv(const std::vector<SweepRow>& rows);

ModelConfig model_config_for(const TrainConfig& config, const SceneConfig& scene);

}  // namespace pisr
