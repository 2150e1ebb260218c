#include "pisr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace pisr {

namespace {
using i64 = std::int64_t;

i64 label_at(const Tensor& t, i64 p) { return static_cast<i64>(std::llround(t[p])); }

}  // namespace

PqAccumulator::PqAccumulator(i64 n_sem, std::vector<i64> thing_ids)
    : n_sem_(n_sem),
      thing_ids_(std::move(thing_ids)),
      stats_(static_cast<std::size_t>(n_sem)),
      confusion_(static_cast<std::size_t>(n_sem * n_sem), 0) {}

void PqAccumulator::add(const PanopticLabelMap& pred, const PanopticLabelMap& gt) {
  if (!pred.semantic.same_shape(gt.semantic)) {
    throw ShapeError("pq: prediction " + pred.semantic.shape_str() + " vs ground truth " +
                     gt.semantic.shape_str());
  }
  const i64 hw = pred.semantic.size();

  // Segment areas and intersections on (class, instance) keys. Stuff uses
  // instance key 0, which folds every pixel of a stuff class into one segment.
  std::map<std::pair<i64, i64>, i64> area_p, area_g;
  std::map<std::pair<std::pair<i64, i64>, std::pair<i64, i64>>, i64> inter;
  for (i64 p = 0; p < hw; ++p) {
    const std::pair<i64, i64> kp{label_at(pred.semantic, p), label_at(pred.instance, p)};
    const std::pair<i64, i64> kg{label_at(gt.semantic, p), label_at(gt.instance, p)};
    if (kp.first < 0 || kp.first >= n_sem_ || kg.first < 0 || kg.first >= n_sem_) {
      throw ConfigError("pq: class id outside [0, " + std::to_string(n_sem_) + ")");
    }
    ++area_p[kp];
    ++area_g[kg];
    ++inter[{kp, kg}];
    ++confusion_[static_cast<std::size_t>(kg.first * n_sem_ + kp.first)];
  }

  std::map<std::pair<i64, i64>, bool> matched_p, matched_g;
  for (const auto& [keys, overlap] : inter) {
    const auto& [kp, kg] = keys;
    if (kp.first != kg.first) continue;  // classes must agree
    const double u = static_cast<double>(area_p.at(kp) + area_g.at(kg) - overlap);
    const double iou = static_cast<double>(overlap) / u;
    if (iou > 0.5) {  // strict: exactly 0.5 stays unmatched
      auto& st = stats_[static_cast<std::size_t>(kp.first)];
      ++st.tp;
      st.iou_sum += iou;
      matched_p[kp] = true;
      matched_g[kg] = true;
    }
  }
  for (const auto& [kp, area] : area_p) {
    if (!matched_p.count(kp)) ++stats_[static_cast<std::size_t>(kp.first)].fp;
  }
  for (const auto& [kg, area] : area_g) {
    if (!matched_g.count(kg)) ++stats_[static_cast<std::size_t>(kg.first)].fn;
  }
}

void PqAccumulator::merge(const PqAccumulator& other) {
  for (std::size_t c = 0; c < stats_.size(); ++c) {
    stats_[c].tp += other.stats_[c].tp;
    stats_[c].fp += other.stats_[c].fp;
    stats_[c].fn += other.stats_[c].fn;
    stats_[c].iou_sum += other.stats_[c].iou_sum;
  }
  for (std::size_t i = 0; i < confusion_.size(); ++i) confusion_[i] += other.confusion_[i];
}

PqReport PqAccumulator::finalize() const {
  PqReport r;
  r.classes = stats_;
  r.thing_ids = thing_ids_;
  std::vector<bool> is_thing(static_cast<std::size_t>(n_sem_), false);
  for (i64 id : thing_ids_) is_thing[static_cast<std::size_t>(id)] = true;

  double pq_sum = 0, sq_sum = 0, rq_sum = 0;
  i64 n_present = 0;
  double pq_th = 0, pq_st = 0;
  i64 n_th = 0, n_st = 0;
  for (i64 c = 0; c < n_sem_; ++c) {
    const auto& st = stats_[static_cast<std::size_t>(c)];
    if (!st.present()) continue;
    ++n_present;
    pq_sum += st.pq();
    sq_sum += st.sq();
    rq_sum += st.rq();
    if (is_thing[static_cast<std::size_t>(c)]) {
      pq_th += st.pq();
      ++n_th;
    } else {
      pq_st += st.pq();
      ++n_st;
    }
  }
  if (n_present > 0) {
    r.pq = pq_sum / static_cast<double>(n_present);
    r.sq = sq_sum / static_cast<double>(n_present);
    r.rq = rq_sum / static_cast<double>(n_present);
  }
  if (n_th > 0) r.pq_things = pq_th / static_cast<double>(n_th);
  if (n_st > 0) r.pq_stuff = pq_st / static_cast<double>(n_st);

  r.class_iou.assign(static_cast<std::size_t>(n_sem_), -1.0);
  double iou_sum = 0;
  i64 iou_n = 0;
  for (i64 c = 0; c < n_sem_; ++c) {
    i64 tp = confusion_[static_cast<std::size_t>(c * n_sem_ + c)];
    i64 row = 0, col = 0;
    for (i64 j = 0; j < n_sem_; ++j) {
      row += confusion_[static_cast<std::size_t>(c * n_sem_ + j)];
      col += confusion_[static_cast<std::size_t>(j * n_sem_ + c)];
    }
    const i64 uni = row + col - tp;
    if (uni == 0) continue;  // absent from both sides
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.class_iou[static_cast<std::size_t>(c)] = iou;
    iou_sum += iou;
    ++iou_n;
  }
  if (iou_n > 0) r.miou = iou_sum / static_cast<double>(iou_n);
  return r;
}

PqReport panoptic_quality(const PanopticLabelMap& pred, const PanopticLabelMap& gt,
                          i64 n_sem, const std::vector<i64>& thing_ids) {
  PqAccumulator acc(n_sem, thing_ids);
  acc.add(pred, gt);
  return acc.finalize();
}

std::pair<std::vector<double>, double> mean_iou(const Tensor& pred_semantic,
                                                const Tensor& gt_semantic, i64 n_sem) {
  require_same_shape(pred_semantic, gt_semantic, "mean_iou");
  std::vector<i64> confusion(static_cast<std::size_t>(n_sem * n_sem), 0);
  for (i64 p = 0; p < pred_semantic.size(); ++p) {
    ++confusion[static_cast<std::size_t>(label_at(gt_semantic, p) * n_sem +
                                         label_at(pred_semantic, p))];
  }
  std::vector<double> per_class(static_cast<std::size_t>(n_sem), -1.0);
  double total = 0;
  i64 n = 0;
  for (i64 c = 0; c < n_sem; ++c) {
    i64 tp = confusion[static_cast<std::size_t>(c * n_sem + c)];
    i64 row = 0, col = 0;
    for (i64 j = 0; j < n_sem; ++j) {
      row += confusion[static_cast<std::size_t>(c * n_sem + j)];
      col += confusion[static_cast<std::size_t>(j * n_sem + c)];
    }
    const i64 uni = row + col - tp;
    if (uni == 0) continue;
    per_class[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
    total += per_class[static_cast<std::size_t>(c)];
    ++n;
  }
  return {per_class, n > 0 ? total / static_cast<double>(n) : 0.0};
}

std::vector<Segment> extract_segments(const PanopticLabelMap& map, i64 n_sem,
                                      const std::vector<i64>& thing_ids) {
  std::vector<bool> is_thing(static_cast<std::size_t>(n_sem), false);
  for (i64 id : thing_ids) is_thing[static_cast<std::size_t>(id)] = true;
  std::map<std::pair<i64, i64>, Segment> segs;
  for (i64 p = 0; p < map.semantic.size(); ++p) {
    const i64 cls = label_at(map.semantic, p);
    const i64 inst = is_thing[static_cast<std::size_t>(cls)] ? label_at(map.instance, p) : 0;
    auto& s = segs[{cls, inst}];
    s.cls = cls;
    s.pixels.push_back(p);
  }
  std::vector<Segment> out;
  out.reserve(segs.size());
  for (auto& [key, s] : segs) out.push_back(std::move(s));
  return out;
}

double segment_iou(const Segment& a, const Segment& b) {
  i64 inter = 0;
  std::size_t i = 0, j = 0;
  while (i < a.pixels.size() && j < b.pixels.size()) {
    if (a.pixels[i] == b.pixels[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a.pixels[i] < b.pixels[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const i64 uni = static_cast<i64>(a.pixels.size() + b.pixels.size()) - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

std::vector<std::pair<i64, i64>> match_greedy(const std::vector<Segment>& pred,
                                              const std::vector<Segment>& gt) {
  std::vector<std::pair<i64, i64>> out;
  std::vector<bool> used(pred.size(), false);
  for (std::size_t g = 0; g < gt.size(); ++g) {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (used[p] || pred[p].cls != gt[g].cls) continue;
      if (segment_iou(pred[p], gt[g]) > 0.5) {
        out.emplace_back(static_cast<i64>(p), static_cast<i64>(g));
        used[p] = true;
        break;  // IoU > 0.5 partners are unique
      }
    }
  }
  return out;
}

namespace {

void match_recurse(const std::vector<Segment>& pred, const std::vector<Segment>& gt,
                   std::size_t g, std::vector<bool>& used, double score,
                   std::vector<std::pair<i64, i64>>& current, double& best_score,
                   std::vector<std::pair<i64, i64>>& best) {
  if (g == gt.size()) {
    if (score > best_score) {
      best_score = score;
      best = current;
    }
    return;
  }
  match_recurse(pred, gt, g + 1, used, score, current, best_score, best);  // leave unmatched
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (used[p] || pred[p].cls != gt[g].cls) continue;
    const double iou = segment_iou(pred[p], gt[g]);
    if (iou <= 0.5) continue;
    used[p] = true;
    current.emplace_back(static_cast<i64>(p), static_cast<i64>(g));
    match_recurse(pred, gt, g + 1, used, score + iou, current, best_score, best);
    current.pop_back();
    used[p] = false;
  }
}

}  // namespace

std::vector<std::pair<i64, i64>> match_oracle(const std::vector<Segment>& pred,
                                              const std::vector<Segment>& gt) {
  if (pred.size() > 8 || gt.size() > 8) {
    throw ConfigError("match_oracle: capped at 8 segments per side, got " +
                      std::to_string(pred.size()) + " and " + std::to_string(gt.size()));
  }
  std::vector<bool> used(pred.size(), false);
  std::vector<std::pair<i64, i64>> current, best;
  double best_score = -1.0;
  match_recurse(pred, gt, 0, used, 0.0, current, best_score, best);
  std::sort(best.begin(), best.end());
  return best;
}

std::string pq_report_csv(const PqReport& report) {
  std::string out = "class,tp,fp,fn,iou_sum,pq,sq,rq\n";
  char buf[256];
  std::vector<bool> is_thing(report.classes.size(), false);
  for (i64 id : report.thing_ids) is_thing[static_cast<std::size_t>(id)] = true;

  i64 tp = 0, fp = 0, fn = 0;
  double iou = 0;
  struct Agg {
    i64 tp = 0, fp = 0, fn = 0;
    double iou = 0;
  } th, st;
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    const auto& s = report.classes[c];
    std::snprintf(buf, sizeof(buf), "%zu,%lld,%lld,%lld,%.6f,%.6f,%.6f,%.6f\n", c,
                  static_cast<long long>(s.tp), static_cast<long long>(s.fp),
                  static_cast<long long>(s.fn), s.iou_sum, s.pq(), s.sq(), s.rq());
    out += buf;
    tp += s.tp;
    fp += s.fp;
    fn += s.fn;
    iou += s.iou_sum;
    Agg& a = is_thing[c] ? th : st;
    a.tp += s.tp;
    a.fp += s.fp;
    a.fn += s.fn;
    a.iou += s.iou_sum;
  }
  const auto agg_row = [&buf, &out](const char* name, i64 tp, i64 fp, i64 fn, double iou,
                                    double pq) {
    std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%lld,%.6f,%.6f,,\n", name,
                  static_cast<long long>(tp), static_cast<long long>(fp),
                  static_cast<long long>(fn), iou, pq);
    out += buf;
  };
  agg_row("things", th.tp, th.fp, th.fn, th.iou, report.pq_things);
  agg_row("stuff", st.tp, st.fp, st.fn, st.iou, report.pq_stuff);
  std::snprintf(buf, sizeof(buf), "all,%lld,%lld,%lld,%.6f,%.6f,%.6f,%.6f\n",
                static_cast<long long>(tp), static_cast<long long>(fp),
                static_cast<long long>(fn), iou, report.pq, report.sq, report.rq);
  out += buf;
  std::snprintf(buf, sizeof(buf), "miou,0,0,0,0.000000,%.6f,,\n", report.miou);
  out += buf;
  return out;
}

}  // namespace pisr
