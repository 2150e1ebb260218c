#pragma once

#include <string>
#include <vector>

#include "pisr/fusion.hpp"

namespace pisr {

// Panoptic quality with the standard IoU > 0.5 matching rule (strict).
// Stuff classes form one segment per class; thing segments are maximal
// (class, instance) regions. No void handling: the synthetic scenes label
// every pixel.

struct PqClassStat {
  std::int64_t tp = 0, fp = 0, fn = 0;
  double iou_sum = 0.0;
  bool present() const { return tp + fp + fn > 0; }
  double denom() const { return static_cast<double>(tp) + 0.5 * static_cast<double>(fp) +
                                0.5 * static_cast<double>(fn); }
  double pq() const { return present() ? iou_sum / denom() : 0.0; }
  double sq() const { return tp > 0 ? iou_sum / static_cast<double>(tp) : 0.0; }
  double rq() const { return present() ? static_cast<double>(tp) / denom() : 0.0; }
};

struct PqReport {
  std::vector<PqClassStat> classes;     // indexed by class id
  std::vector<double> class_iou;        // semantic IoU; -1 when absent both sides
  std::vector<std::int64_t> thing_ids;
  double pq = 0.0, sq = 0.0, rq = 0.0;
  double pq_things = 0.0, pq_stuff = 0.0;
  double miou = 0.0;
};

// Streams (pred, gt) pairs and aggregates counts over a dataset; finalize
// computes the per-class ratios and unweighted means over present classes.
class PqAccumulator {
 public:
  PqAccumulator(std::int64_t n_sem, std::vector<std::int64_t> thing_ids);
  void add(const PanopticLabelMap& pred, const PanopticLabelMap& gt);
  void merge(const PqAccumulator& other);
  PqReport finalize() const;

 private:
  std::int64_t n_sem_;
  std::vector<std::int64_t> thing_ids_;
  std::vector<PqClassStat> stats_;
  std::vector<std::int64_t> confusion_;  // n_sem x n_sem, [gt * n_sem + pred]
};

PqReport panoptic_quality(const PanopticLabelMap& pred, const PanopticLabelMap& gt,
                          std::int64_t n_sem, const std::vector<std::int64_t>& thing_ids);

// Per-class semantic IoU plus mean over classes present on either side.
std::pair<std::vector<double>, double> mean_iou(const Tensor& pred_semantic,
                                                const Tensor& gt_semantic,
                                                std::int64_t n_sem);

// ---- matching oracle (test support) ----------------------------------------

struct Segment {
  std::int64_t cls = 0;
  std::vector<std::int64_t> pixels;  // sorted
};

std::vector<Segment> extract_segments(const PanopticLabelMap& map, std::int64_t n_sem,
                                      const std::vector<std::int64_t>& thing_ids);

// Exhaustive search over one-to-one matchings maximizing total IoU subject to
// IoU > 0.5 per pair. Caps at 8 segments per side.
std::vector<std::pair<std::int64_t, std::int64_t>> match_oracle(
    const std::vector<Segment>& pred, const std::vector<Segment>& gt);

// Greedy same-class IoU > 0.5 matching (the production rule), exposed so the
// oracle equivalence can be asserted on arbitrary segment sets.
std::vector<std::pair<std::int64_t, std::int64_t>> match_greedy(
    const std::vector<Segment>& pred, const std::vector<Segment>& gt);

double segment_iou(const Segment& a, const Segment& b);

// CSV: one row per class, then `things`, `stuff`, `all` aggregate rows and a
// final `miou` row (value in the pq column). Fixed 6-decimal formatting.
std::string pq_report_csv(const PqReport& report);

}  // namespace pisr
