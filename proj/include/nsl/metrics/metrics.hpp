#pragma once

// Depth metrics (AbsRel, SqRel, RMSE, LogRMSE, delta thresholds) with the
// plain per-pixel mean ("unweighted") and the depth-binned mean of per-bin
// means ("weighted").
//
// Bins split (0, max_depth] into M equal intervals (lo, hi]. Empty bins are
// left out of the weighted mean. RMSE and LogRMSE keep squared errors until
// after the final mean, then take the root.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "nsl/diffmath/tensor.hpp"

namespace nsl::metrics {

enum class Metric { kAbsRel = 0, kSqRel, kRmse, kLogRmse, kDelta1, kDelta2, kDelta3 };
inline constexpr std::size_t kMetricCount = 7;
using Values = std::array<double, kMetricCount>;

const char* metric_name(Metric m);
// RMSE and LogRMSE are rooted after aggregation.
bool is_rooted(Metric m);

inline constexpr double kDefaultMaxDepth = 50.0;
inline constexpr std::size_t kDefaultBins = 10;
// Predicted depth is clamped to [kMinPredDepth, max_depth] before scoring.
inline constexpr double kMinPredDepth = 1e-3;

// Per-pixel terms for every valid gt pixel with 0 < gt <= max_depth.
// RMSE-family entries hold squared errors; delta entries hold 0/1.
struct PixelTerms {
  std::vector<Values> terms;
  std::vector<double> gt;
  std::size_t size() const { return gt.size(); }
};

// pred and gt share a shape; gt_valid marks usable gt (1) or not (0).
// Predictions that are not positive count as max_depth.
PixelTerms per_pixel_metrics(const Tensor& pred, const Tensor& gt, const Tensor& gt_valid,
                             double max_depth = kDefaultMaxDepth);

struct Aggregate {
  bool empty = true;
  Values value{};     // final (rooted where applicable)
  Values pre_root{};  // before any root
};

Aggregate aggregate_unweighted(const PixelTerms& terms);

// ceil(g / width) - 1, clamped to [0, M - 1].
std::size_t bin_index(double gt, double max_depth, std::size_t bins);

struct BinTable {
  std::size_t bins = 0;
  double max_depth = 0.0;
  double width = 0.0;
  std::vector<std::size_t> counts;
  std::vector<Values> means;  // pre-root per-bin means; zero for empty bins
};

struct WeightedAggregate {
  Aggregate overall;
  BinTable table;
  std::size_t non_empty = 0;
};

WeightedAggregate aggregate_weighted(const PixelTerms& terms, std::size_t bins = kDefaultBins,
                                     double max_depth = kDefaultMaxDepth);

std::vector<std::size_t> depth_histogram(const Tensor& gt, const Tensor& gt_valid,
                                         std::size_t bins = kDefaultBins,
                                         double max_depth = kDefaultMaxDepth);

// Bilinear resampling of a [h x w] map onto [H x W] (align-corners).
Tensor resample_bilinear(const Tensor& src, std::size_t height, std::size_t width);

struct ImageScore {
  std::string name;
  std::size_t valid = 0;
  Aggregate unweighted;
  WeightedAggregate weighted;
  // max |unweighted - sum_i N_i/Z * binmean_i| over pre-root metrics.
  double consistency_gap = 0.0;
};

ImageScore score_image(const std::string& name, const Tensor& pred_depth, const Tensor& gt,
                       const Tensor& gt_valid, std::size_t bins = kDefaultBins,
                       double max_depth = kDefaultMaxDepth);

// Per-image scores averaged over images with at least one valid pixel, in
// input order. Per-bin tables pool pixels across images.
struct MetricReport {
  bool empty = true;
  std::size_t images = 0;
  std::size_t total_valid = 0;  // Z summed over images
  std::size_t bins = 0;
  double bin_width = 0.0;
  double max_depth = 0.0;
  Values unweighted{};
  Values weighted{};
  BinTable pooled;
  std::vector<ImageScore> per_image;
};

MetricReport build_report(const std::vector<ImageScore>& scores, std::size_t bins = kDefaultBins,
                          double max_depth = kDefaultMaxDepth);

// Tab-separated table: a "# ..." header comment, then metric rows with U and
// W columns, then per-bin rows.
std::string format_report(const MetricReport& report);
// One row per bin: lo, hi, count, then the per-bin value of each metric.
std::string report_csv(const MetricReport& report);

}  // namespace nsl::metrics
