#include "pisr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

namespace pisr {

namespace {
using i64 = std::int64_t;

Tensor gt_thing_mask(const SceneSample& sample) {
  Tensor mask(sample.gt_instance.shape());
  for (i64 i = 0; i < mask.size(); ++i) {
    mask[i] = sample.gt_instance[i] > 0.0 ? 1.0 : 0.0;
  }
  return mask;
}

std::pair<Var, Var> head_losses(const BaseOutputs& out, const SceneSample& sample,
                                const Tensor& thing_mask, double lambda_center,
                                double lambda_offset) {
  Var l_sem = cross_entropy(out.s_logits, sample.gt_semantic);
  Var l_center = mse(out.m, sample.gt_center);
  Var l_offset = l1_masked(out.o, sample.gt_offset, thing_mask);
  Var l_ins = add(scale(l_center, lambda_center), scale(l_offset, lambda_offset));
  return {l_sem, l_ins};
}

}  // namespace

std::pair<Var, LossBreakdown> compute_loss(const ModelOutputs& outputs,
                                           const SceneSample& sample, double gamma,
                                           double lambda_center, double lambda_offset) {
  const Tensor thing_mask = gt_thing_mask(sample);
  LossBreakdown parts;
  Var total;
  if (outputs.final) {
    auto [ls, li] = head_losses(*outputs.final, sample, thing_mask, lambda_center,
                                lambda_offset);
    auto [lsp, lip] = head_losses(outputs.base, sample, thing_mask, lambda_center,
                                  lambda_offset);
    total = add(add(scale(add(lsp, lip), gamma), ls), li);
    parts.l_sem = ls.value()[0];
    parts.l_ins = li.value()[0];
    parts.l_sem_prime = lsp.value()[0];
    parts.l_ins_prime = lip.value()[0];
  } else {
    auto [ls, li] = head_losses(outputs.base, sample, thing_mask, lambda_center,
                                lambda_offset);
    total = add(ls, li);
    parts.l_sem = ls.value()[0];
    parts.l_ins = li.value()[0];
  }
  parts.total = total.value()[0];
  return {total, parts};
}

Split split_dataset(i64 n_samples) {
  const i64 n_val = n_samples / 5;
  Split s;
  for (i64 i = 0; i < n_samples - n_val; ++i) s.train.push_back(i);
  for (i64 i = n_samples - n_val; i < n_samples; ++i) s.val.push_back(i);
  return s;
}

ModelConfig model_config_for(const TrainConfig& config, const SceneConfig& scene) {
  ModelConfig mc;
  mc.variant = config.variant;
  mc.channels = config.channels;
  mc.k = config.k;
  mc.n_sem = scene.n_sem();
  mc.thing_ids = scene.thing_ids();
  mc.height = scene.height;
  mc.width = scene.width;
  return mc;
}

PqReport evaluate(const Model& model, const Dataset& data,
                  const std::vector<i64>& indices, i64 jobs) {
  const auto eval_one = [&](i64 idx) {
    const SceneSample& sample = data.samples[static_cast<std::size_t>(idx)];
    Tape tape;
    VarStore vars(tape, model.params);
    ModelOutputs out = model_forward(vars, model.config, tape.constant(sample.image));
    const BaseOutputs& pred = out.prediction();
    PanopticLabelMap pred_map = fuse(pred.s_logits.value(), pred.m.value(),
                                     pred.o.value(), model.config.k,
                                     model.config.thing_ids);
    PqAccumulator acc(model.config.n_sem, model.config.thing_ids);
    acc.add(pred_map, label_map_from_gt(sample.gt_semantic, sample.gt_instance));
    return acc;
  };

  PqAccumulator total(model.config.n_sem, model.config.thing_ids);
  if (jobs <= 1) {
    for (i64 idx : indices) total.merge(eval_one(idx));
    return total.finalize();
  }

  std::vector<PqAccumulator> parts(indices.size(),
                                   PqAccumulator(model.config.n_sem, model.config.thing_ids));
  std::vector<std::thread> workers;
  std::atomic<std::size_t> cursor{0};
  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(jobs), indices.size());
  for (std::size_t t = 0; t < n_workers; ++t) {
    workers.emplace_back([&]() {
      while (true) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= indices.size()) break;
        parts[i] = eval_one(indices[i]);
      }
    });
  }
  for (auto& th : workers) th.join();
  for (const auto& p : parts) total.merge(p);  // fixed order merge
  return total.finalize();
}

TrainResult train(const TrainConfig& config, const Dataset& data) {
  if (data.samples.empty()) throw TrainError("empty dataset");
  const Split split = split_dataset(static_cast<i64>(data.samples.size()));
  if (split.train.empty()) throw TrainError("no training samples after split");

  TrainResult result;
  result.model = build_variant(model_config_for(config, data.config), config.seed);
  ParamStore& params = result.model.params;

  std::vector<Tensor> velocity;
  velocity.reserve(params.size());
  for (const auto& [name, t] : params.items()) velocity.emplace_back(t.shape());

  i64 step = 0;
  for (i64 epoch = 0; epoch < config.epochs; ++epoch) {
    // Seeded permutation of the training order.
    std::vector<i64> order = split.train;
    Rng shuffle_rng(Rng::mix(config.seed, 0xe70c + static_cast<std::uint64_t>(epoch)));
    for (i64 i = static_cast<i64>(order.size()) - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, i))]);
    }

    double loss_sum = 0.0;
    for (i64 idx : order) {
      const SceneSample& sample = data.samples[static_cast<std::size_t>(idx)];
      Tape tape;
      VarStore vars(tape, params);
      ModelOutputs out = model_forward(vars, result.model.config,
                                       tape.constant(sample.image));
      auto [loss, parts] = compute_loss(out, sample, config.gamma, config.lambda_center,
                                        config.lambda_offset);
      if (!std::isfinite(parts.total)) {
        throw TrainError("loss diverged at step " + std::to_string(step) + " (epoch " +
                         std::to_string(epoch) + ")");
      }
      tape.backward(loss);

      std::size_t pi = 0;
      for (auto& [name, tensor] : params.items()) {
        const Tensor g = tape.grad_or_zero(vars.get(name));
        Tensor& v = velocity[pi++];
        for (i64 j = 0; j < tensor.size(); ++j) {
          v[j] = config.momentum * v[j] + g[j];
          tensor[j] -= config.lr * v[j];
        }
      }
      result.step_losses.push_back(parts);
      loss_sum += parts.total;
      ++step;
    }

    const PqReport rep = evaluate(result.model, data, split.val, config.jobs);
    EpochStats st;
    st.epoch = epoch;
    st.pq = rep.pq;
    st.pq_th = rep.pq_things;
    st.pq_st = rep.pq_stuff;
    st.miou = rep.miou;
    st.loss_total = loss_sum / static_cast<double>(order.size());
    result.history.push_back(st);
  }
  return result;
}

std::string history_csv(const TrainConfig& config, const std::vector<EpochStats>& history) {
  std::string out = "epoch,variant,k,pq,pq_th,pq_st,miou,loss_total\n";
  char buf[256];
  for (const auto& st : history) {
    std::snprintf(buf, sizeof(buf), "%lld,%s,%lld,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(st.epoch), variant_name(config.variant).c_str(),
                  static_cast<long long>(config.k), st.pq, st.pq_th, st.pq_st, st.miou,
                  st.loss_total);
    out += buf;
  }
  return out;
}

std::vector<SweepRow> sweep_k(const TrainConfig& base, const std::vector<i64>& ks,
                              const Dataset& data) {
  std::vector<SweepRow> rows;
  for (i64 k : ks) {
    for (Variant v : {Variant::pisr, Variant::pisr_no_rw}) {
      TrainConfig cfg = base;
      cfg.variant = v;
      cfg.k = k;
      const TrainResult res = train(cfg, data);
      rows.push_back({k, variant_name(v), res.history.back().pq});
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "k,variant,pq\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%s,%.6f\n", static_cast<long long>(r.k),
                  r.variant.c_str(), r.pq);
    out += buf;
  }
  return out;
}

}  // namespace pisr
