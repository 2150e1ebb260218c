#include "pisr/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "pisr/rng.hpp"
#include "pisr/tensor_io.hpp"

namespace pisr {

namespace {

using i64 = std::int64_t;

constexpr double kRegionJitter = 0.1;
constexpr double kPixelNoise = 0.05;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

struct Shape {
  i64 cls = 0;
  bool circle = false;
  i64 cy = 0, cx = 0;
  i64 half_h = 0, half_w = 0;  // radius for circles
  std::array<double, 3> jitter{};
};

}  // namespace

void SceneConfig::validate() const {
  if (height < 4 || width < 4) {
    throw ConfigError("scene size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is too small");
  }
  if (n_stuff_classes < 1) throw ConfigError("need at least one stuff class");
  if (min_instances < 0 || max_instances < min_instances) {
    throw ConfigError("bad instance range [" + std::to_string(min_instances) + ", " +
                      std::to_string(max_instances) + "]");
  }
  if (max_instances > 0 && n_thing_classes < 1) {
    throw ConfigError("instances requested but there are no thing classes");
  }
  if (gaussian_sigma < 0.0) throw ConfigError("negative gaussian_sigma");
}

std::array<double, 3> class_base_color(i64 class_id, i64 n_stuff) {
  // Stuff classes are far apart; thing classes deliberately share similar
  // colors (shape, not color, is their separating cue).
  static const std::array<double, 3> kStuff[] = {
      {0.20, 0.25, 0.70}, {0.25, 0.60, 0.25}, {0.55, 0.45, 0.60}, {0.40, 0.35, 0.20}};
  static const std::array<double, 3> kThing[] = {
      {0.75, 0.35, 0.30}, {0.75, 0.45, 0.30}, {0.85, 0.55, 0.35}, {0.65, 0.30, 0.40}};
  if (class_id < n_stuff) {
    if (class_id < 4) return kStuff[class_id];
  } else {
    const i64 t = class_id - n_stuff;
    if (t < 4) return kThing[t];
  }
  // Hash fallback for configs with many classes.
  const std::uint64_t h = Rng::mix(0x9e1uLL, static_cast<std::uint64_t>(class_id));
  return {0.2 + 0.6 * ((h & 0xff) / 255.0), 0.2 + 0.6 * (((h >> 8) & 0xff) / 255.0),
          0.2 + 0.6 * (((h >> 16) & 0xff) / 255.0)};
}

std::pair<Tensor, Tensor> render_center_targets(const Tensor& instance_map, double sigma) {
  const i64 h = instance_map.dim(0), w = instance_map.dim(1);
  Tensor center({1, h, w});
  Tensor offset({2, h, w});

  // Mass centers, rounded to the nearest pixel so each peak is exactly 1.
  std::map<i64, std::array<double, 3>> acc;  // id -> (sum_r, sum_c, count)
  for (i64 r = 0; r < h; ++r) {
    for (i64 c = 0; c < w; ++c) {
      const i64 id = static_cast<i64>(std::llround(instance_map.at(r, c)));
      if (id <= 0) continue;
      auto& a = acc[id];
      a[0] += static_cast<double>(r);
      a[1] += static_cast<double>(c);
      a[2] += 1.0;
    }
  }
  std::map<i64, std::array<i64, 2>> centers;
  for (const auto& [id, a] : acc) {
    centers[id] = {std::llround(a[0] / a[2]), std::llround(a[1] / a[2])};
  }

  for (const auto& [id, ctr] : centers) {
    for (i64 r = 0; r < h; ++r) {
      for (i64 c = 0; c < w; ++c) {
        const double d2 = static_cast<double>((r - ctr[0]) * (r - ctr[0]) +
                                              (c - ctr[1]) * (c - ctr[1]));
        double v;
        if (d2 == 0.0) {
          v = 1.0;
        } else if (sigma > 0.0) {
          v = std::exp(-d2 / (2.0 * sigma * sigma));
        } else {
          v = 0.0;
        }
        center.at(0, r, c) = std::max(center.at(0, r, c), v);
      }
    }
  }

  for (i64 r = 0; r < h; ++r) {
    for (i64 c = 0; c < w; ++c) {
      const i64 id = static_cast<i64>(std::llround(instance_map.at(r, c)));
      if (id <= 0) continue;
      const auto& ctr = centers.at(id);
      offset.at(0, r, c) = static_cast<double>(ctr[0] - r);
      offset.at(1, r, c) = static_cast<double>(ctr[1] - c);
    }
  }
  return {std::move(center), std::move(offset)};
}

SceneSample generate(const SceneConfig& config, std::uint64_t index) {
  config.validate();
  const i64 h = config.height, w = config.width;
  Rng rng(Rng::mix(config.seed, index));

  // Stuff layout: horizontal bands, one per stuff class, in shuffled order.
  std::vector<i64> band_class(static_cast<std::size_t>(config.n_stuff_classes));
  for (i64 i = 0; i < config.n_stuff_classes; ++i) band_class[static_cast<std::size_t>(i)] = i;
  for (i64 i = config.n_stuff_classes - 1; i > 0; --i) {
    std::swap(band_class[static_cast<std::size_t>(i)],
              band_class[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  }
  std::vector<i64> band_end;  // exclusive row bound per band
  for (i64 b = 0; b + 1 < config.n_stuff_classes; ++b) {
    const i64 lo = (h * (b + 1)) / (config.n_stuff_classes + 1);
    const i64 hi = (h * (b + 2)) / (config.n_stuff_classes + 1) + h / 4;
    band_end.push_back(std::clamp<i64>(rng.uniform_int(lo, hi), 1, h - 1));
  }
  std::sort(band_end.begin(), band_end.end());
  band_end.push_back(h);
  std::vector<std::array<double, 3>> band_jitter;
  for (i64 b = 0; b < config.n_stuff_classes; ++b) {
    band_jitter.push_back({rng.uniform(-kRegionJitter, kRegionJitter),
                           rng.uniform(-kRegionJitter, kRegionJitter),
                           rng.uniform(-kRegionJitter, kRegionJitter)});
  }

  SceneSample s;
  s.gt_semantic = Tensor({h, w});
  s.gt_instance = Tensor({h, w});
  Tensor owner({h, w});  // draw-order id (1-based) before relabeling
  std::vector<i64> band_of_row(static_cast<std::size_t>(h));
  {
    i64 b = 0;
    for (i64 r = 0; r < h; ++r) {
      while (r >= band_end[static_cast<std::size_t>(b)]) ++b;
      band_of_row[static_cast<std::size_t>(r)] = b;
      for (i64 c = 0; c < w; ++c) {
        s.gt_semantic.at(r, c) = static_cast<double>(band_class[static_cast<std::size_t>(b)]);
      }
    }
  }

  // Things. The shape kind is tied to the class so that appearance carries
  // class information beyond color.
  const i64 n_inst = config.max_instances > 0
                         ? rng.uniform_int(config.min_instances, config.max_instances)
                         : 0;
  std::vector<Shape> shapes;
  for (i64 i = 0; i < n_inst; ++i) {
    Shape sh;
    sh.cls = config.n_stuff_classes + rng.uniform_int(0, config.n_thing_classes - 1);
    sh.circle = ((sh.cls - config.n_stuff_classes) % 2) == 1;
    const i64 max_half = std::max<i64>(3, std::min(h, w) / 7);
    sh.half_h = rng.uniform_int(3, max_half);
    sh.half_w = sh.circle ? sh.half_h : rng.uniform_int(3, max_half);
    sh.cy = rng.uniform_int(2, h - 3);
    sh.cx = rng.uniform_int(2, w - 3);
    sh.jitter = {rng.uniform(-kRegionJitter, kRegionJitter),
                 rng.uniform(-kRegionJitter, kRegionJitter),
                 rng.uniform(-kRegionJitter, kRegionJitter)};
    shapes.push_back(sh);
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const Shape& sh = shapes[i];
    for (i64 r = std::max<i64>(0, sh.cy - sh.half_h);
         r <= std::min<i64>(h - 1, sh.cy + sh.half_h); ++r) {
      for (i64 c = std::max<i64>(0, sh.cx - sh.half_w);
           c <= std::min<i64>(w - 1, sh.cx + sh.half_w); ++c) {
        if (sh.circle) {
          const i64 dr = r - sh.cy, dc = c - sh.cx;
          if (dr * dr + dc * dc > sh.half_h * sh.half_h) continue;
        }
        owner.at(r, c) = static_cast<double>(i + 1);
        s.gt_semantic.at(r, c) = static_cast<double>(sh.cls);
      }
    }
  }

  // Drop fully occluded shapes; relabel survivors contiguously in draw order.
  std::vector<i64> relabel(shapes.size() + 1, 0);
  {
    std::vector<bool> seen(shapes.size() + 1, false);
    for (i64 i = 0; i < owner.size(); ++i) {
      seen[static_cast<std::size_t>(std::llround(owner[i]))] = true;
    }
    i64 next = 1;
    for (std::size_t i = 1; i < seen.size(); ++i) {
      if (seen[i]) relabel[i] = next++;
    }
  }
  for (i64 i = 0; i < owner.size(); ++i) {
    s.gt_instance[i] = static_cast<double>(relabel[static_cast<std::size_t>(std::llround(owner[i]))]);
  }

  auto targets = render_center_targets(s.gt_instance, config.gaussian_sigma);
  s.gt_center = std::move(targets.first);
  s.gt_offset = std::move(targets.second);

  // Color pass: base + region jitter + per-pixel noise, in row-major order.
  s.image = Tensor({3, h, w});
  for (i64 r = 0; r < h; ++r) {
    for (i64 c = 0; c < w; ++c) {
      const i64 own = static_cast<i64>(std::llround(owner.at(r, c)));
      const i64 cls = static_cast<i64>(std::llround(s.gt_semantic.at(r, c)));
      const auto base = class_base_color(cls, config.n_stuff_classes);
      const auto& jit = own > 0 ? shapes[static_cast<std::size_t>(own - 1)].jitter
                                : band_jitter[static_cast<std::size_t>(
                                      band_of_row[static_cast<std::size_t>(r)])];
      for (i64 ch = 0; ch < 3; ++ch) {
        const double noise = rng.uniform(-kPixelNoise, kPixelNoise);
        s.image.at(ch, r, c) = clamp01(base[static_cast<std::size_t>(ch)] +
                                       jit[static_cast<std::size_t>(ch)] + noise);
      }
    }
  }
  return s;
}

// ---- dataset io -------------------------------------------------------------

namespace {

std::string sample_path(const std::string& dir, i64 index, const char* field) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04lld.%s.t", static_cast<long long>(index), field);
  return dir + "/" + buf;
}

Tensor as_f32(Tensor t) { return t.set_dtype(DType::f32); }

}  // namespace

void write_dataset(const std::string& dir, const SceneConfig& config, i64 n) {
  config.validate();
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.txt", std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + dir);
  manifest << "format_version=1\n"
           << "n=" << n << "\n"
           << "height=" << config.height << "\n"
           << "width=" << config.width << "\n"
           << "n_stuff_classes=" << config.n_stuff_classes << "\n"
           << "n_thing_classes=" << config.n_thing_classes << "\n"
           << "min_instances=" << config.min_instances << "\n"
           << "max_instances=" << config.max_instances << "\n"
           << "gaussian_sigma=" << config.gaussian_sigma << "\n"
           << "seed=" << config.seed << "\n";
  manifest.close();

  for (i64 i = 0; i < n; ++i) {
    SceneSample s = generate(config, static_cast<std::uint64_t>(i));
    save_tensor(sample_path(dir, i, "image"), as_f32(std::move(s.image)));
    save_tensor(sample_path(dir, i, "sem"), as_f32(std::move(s.gt_semantic)));
    save_tensor(sample_path(dir, i, "inst"), as_f32(std::move(s.gt_instance)));
    save_tensor(sample_path(dir, i, "center"), as_f32(std::move(s.gt_center)));
    save_tensor(sample_path(dir, i, "offset"), as_f32(std::move(s.gt_offset)));
  }
}

namespace {

std::map<std::string, std::string> read_manifest(const std::string& dir) {
  std::ifstream f(dir + "/manifest.txt");
  if (!f) throw IoError("no manifest.txt in " + dir);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(f, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.empty() || line[0] == '#') continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

SceneSample load_sample(const std::string& dir, i64 index) {
  SceneSample s;
  s.image = load_tensor(sample_path(dir, index, "image"));
  s.gt_semantic = load_tensor(sample_path(dir, index, "sem"));
  s.gt_instance = load_tensor(sample_path(dir, index, "inst"));
  s.gt_center = load_tensor(sample_path(dir, index, "center"));
  s.gt_offset = load_tensor(sample_path(dir, index, "offset"));
  return s;
}

Dataset load_dataset(const std::string& dir) {
  const auto kv = read_manifest(dir);
  Dataset d;
  const auto need = [&kv, &dir](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw IoError("manifest in " + dir + " is missing " + key);
    return it->second;
  };
  d.config.height = std::stoll(need("height"));
  d.config.width = std::stoll(need("width"));
  d.config.n_stuff_classes = std::stoll(need("n_stuff_classes"));
  d.config.n_thing_classes = std::stoll(need("n_thing_classes"));
  d.config.min_instances = std::stoll(need("min_instances"));
  d.config.max_instances = std::stoll(need("max_instances"));
  d.config.gaussian_sigma = std::stod(need("gaussian_sigma"));
  d.config.seed = std::stoull(need("seed"));
  const i64 n = std::stoll(need("n"));
  d.samples.reserve(static_cast<std::size_t>(n));
  for (i64 i = 0; i < n; ++i) d.samples.push_back(load_sample(dir, i));
  return d;
}

}  // namespace pisr
