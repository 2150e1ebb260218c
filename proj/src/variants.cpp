#include "pisr/variants.hpp"

#include <sstream>

namespace pisr {

namespace {
using i64 = std::int64_t;
}

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "concat") return Variant::concat;
  if (name == "eprod") return Variant::eprod;
  if (name == "sem_only") return Variant::sem_only;
  if (name == "pisr_no_rw") return Variant::pisr_no_rw;
  if (name == "pisr") return Variant::pisr;
  throw ConfigError("unknown variant '" + name +
                    "' (expected baseline|concat|eprod|sem_only|pisr_no_rw|pisr)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::concat: return "concat";
    case Variant::eprod: return "eprod";
    case Variant::sem_only: return "sem_only";
    case Variant::pisr_no_rw: return "pisr_no_rw";
    case Variant::pisr: return "pisr";
  }
  throw ConfigError("bad variant enum");
}

std::vector<Variant> all_variants() {
  return {Variant::baseline, Variant::concat, Variant::eprod,
          Variant::sem_only, Variant::pisr_no_rw, Variant::pisr};
}

Model build_variant(const ModelConfig& config, std::uint64_t seed) {
  Model m;
  m.config = config;
  Rng rng(Rng::mix(seed, 0x6d0de));
  init_segmenter(m.params, config.channels, config.n_sem, rng);
  if (config.has_mix()) {
    const i64 in = config.variant == Variant::concat
                       ? config.n_sem + config.k + config.channels
                       : config.n_sem + config.k;
    m.params.add("mix.kernel", init_conv_kernel(config.channels, in, 1, rng));
    m.params.add("mix.bias", init_bias(config.channels, in, rng));
  }
  if (config.has_reweighter()) init_reweighter(m.params, "reweight", config.channels, rng);
  if (config.has_pra()) init_pra(m.params, "pra", config.pra_config(), rng);
  if (config.has_final_heads()) {
    init_heads(m.params, "final_head", config.channels, config.n_sem, rng);
  }
  return m;
}

ModelOutputs model_forward(const VarStore& vars, const ModelConfig& config, Var image) {
  ModelOutputs out;
  out.base = segmenter_forward(vars, image);
  if (config.variant == Variant::baseline) return out;

  const i64 h = config.height, w = config.width, hw = h * w;
  const i64 c = config.channels, n_sem = config.n_sem;
  Var f_flat = reshape(out.base.features, {c, hw});
  Var s_flat = reshape(out.base.s, {n_sem, hw});

  // Hard selections read values only; gradients flow through O, S, and F.
  const i64 k = config.has_mix() ? config.k : config.encoding_k();
  Var heatmaps;
  if (k > 0) {
    out.candidates = select_centers(out.base.m.value(), k);
    const Tensor mask = things_mask(out.base.s.value(), config.thing_ids);
    heatmaps = instance_heatmaps(out.candidates, out.base.o, mask, k, h, w);
  }

  Var features_for_heads;
  switch (config.variant) {
    case Variant::concat: {
      std::vector<Var> rows{s_flat};
      if (k > 0) rows.push_back(heatmaps);
      rows.push_back(f_flat);
      Var grid = reshape(concat_rows(rows), {n_sem + k + c, h, w});
      features_for_heads = conv2d(grid, vars.get("mix.kernel"), vars.get("mix.bias"));
      break;
    }
    case Variant::eprod: {
      std::vector<Var> rows{s_flat};
      if (k > 0) rows.push_back(heatmaps);
      Var grid = reshape(concat_rows(rows), {n_sem + k, h, w});
      Var mixed = conv2d(grid, vars.get("mix.kernel"), vars.get("mix.bias"));
      features_for_heads = mul(mixed, out.base.features);
      break;
    }
    default: {  // relational family
      Var e_pan = encode(s_flat, f_flat);
      if (k > 0) {
        Var e_ins = encode(heatmaps, f_flat);
        e_pan = concat_panoptic(e_pan, e_ins);
      }
      Var e_tilde = e_pan;
      if (config.has_reweighter()) {
        auto [omega, reweighted] = reweight(vars, "reweight", e_pan);
        out.omega = omega;
        e_tilde = reweighted;
      }
      features_for_heads =
          pra_forward(vars, "pra", config.pra_config(), e_tilde, out.base.features);
      break;
    }
  }
  out.final = heads_forward(vars, "final_head", features_for_heads);
  return out;
}

i64 forward_flops(const ModelConfig& config) {
  const i64 hw = config.height * config.width;
  const i64 c = config.channels, n_sem = config.n_sem;
  i64 macs = 0;
  // backbone 3 -> 16 -> 32 -> C, 3x3
  macs += hw * 16 * 3 * 9;
  macs += hw * 32 * 16 * 9;
  macs += hw * c * 32 * 9;
  const i64 head_macs = hw * (n_sem + 1 + 2) * c;
  macs += head_macs;  // intermediate heads
  const i64 k = config.encoding_k();
  const i64 p = config.p_categories();
  switch (config.variant) {
    case Variant::baseline:
      break;
    case Variant::concat:
      macs += hw * c * (n_sem + config.k + c) + head_macs;
      break;
    case Variant::eprod:
      macs += hw * c * (n_sem + config.k) + hw * c + head_macs;
      break;
    default: {
      macs += (n_sem + k) * c * hw;           // encodings
      macs += hw * c * c * 9;                 // h conv
      macs += p * c * c;                      // g_s
      macs += p * c * hw;                     // stage 1
      macs += p * c * c;                      // g_q
      macs += p * p * hw;                     // g_p
      macs += p * c * hw;                     // stage 2
      if (config.has_reweighter()) {
        macs += p * (c * reweighter_hidden(c) + reweighter_hidden(c));
      }
      macs += head_macs;  // final heads
      break;
    }
  }
  return 2 * macs;
}

void save_model(const std::string& dir, const Model& model) {
  std::map<std::string, std::string> meta;
  meta["variant"] = variant_name(model.config.variant);
  meta["channels"] = std::to_string(model.config.channels);
  meta["k"] = std::to_string(model.config.k);
  meta["n_sem"] = std::to_string(model.config.n_sem);
  meta["height"] = std::to_string(model.config.height);
  meta["width"] = std::to_string(model.config.width);
  std::ostringstream ids;
  for (std::size_t i = 0; i < model.config.thing_ids.size(); ++i) {
    if (i) ids << ";";
    ids << model.config.thing_ids[i];
  }
  meta["thing_ids"] = ids.str();
  save_checkpoint(dir, model.params, meta);
}

Model load_model(const std::string& dir) {
  auto [params, meta] = load_checkpoint(dir);
  Model m;
  m.params = std::move(params);
  const auto need = [&meta, &dir](const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) throw IoError("checkpoint in " + dir + " is missing " + key);
    return it->second;
  };
  m.config.variant = parse_variant(need("variant"));
  m.config.channels = std::stoll(need("channels"));
  m.config.k = std::stoll(need("k"));
  m.config.n_sem = std::stoll(need("n_sem"));
  m.config.height = std::stoll(need("height"));
  m.config.width = std::stoll(need("width"));
  std::stringstream ids(need("thing_ids"));
  std::string tok;
  while (std::getline(ids, tok, ';')) {
    if (!tok.empty()) m.config.thing_ids.push_back(std::stoll(tok));
  }
  return m;
}

}  // namespace pisr
