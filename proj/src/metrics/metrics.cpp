#include "nsl/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "nsl/diffmath/errors.hpp"

namespace nsl::metrics {

namespace {

constexpr std::array<Metric, kMetricCount> kAll = {Metric::kAbsRel, Metric::kSqRel,  Metric::kRmse,
                                                   Metric::kLogRmse, Metric::kDelta1, Metric::kDelta2,
                                                   Metric::kDelta3};

Values finalize(const Values& pre) {
  Values out = pre;
  for (Metric m : kAll) {
    const auto i = static_cast<std::size_t>(m);
    if (is_rooted(m)) out[i] = std::sqrt(pre[i]);
  }
  return out;
}

void check_bins(std::size_t bins, double max_depth) {
  if (bins == 0) throw ConfigError("bin count must be >= 1");
  if (!(max_depth > 0.0)) throw ConfigError("max depth must be > 0");
}

}  // namespace

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::kAbsRel: return "abs_rel";
    case Metric::kSqRel: return "sq_rel";
    case Metric::kRmse: return "rmse";
    case Metric::kLogRmse: return "log_rmse";
    case Metric::kDelta1: return "delta_1.25";
    case Metric::kDelta2: return "delta_1.25^2";
    case Metric::kDelta3: return "delta_1.25^3";
  }
  return "?";
}

bool is_rooted(Metric m) { return m == Metric::kRmse || m == Metric::kLogRmse; }

PixelTerms per_pixel_metrics(const Tensor& pred, const Tensor& gt, const Tensor& gt_valid,
                             double max_depth) {
  if (pred.shape() != gt.shape() || gt_valid.shape() != gt.shape()) {
    throw DimensionError("per_pixel_metrics: pred " + shape_str(pred.shape()) + ", gt " +
                         shape_str(gt.shape()) + ", valid " + shape_str(gt_valid.shape()));
  }
  if (!(max_depth > 0.0)) throw ConfigError("max depth must be > 0");
  PixelTerms out;
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    const double g = gt[i];
    if (gt_valid[i] == 0.0 || !(g > 0.0) || g > max_depth) continue;
    double p = pred[i];
    p = (p > 0.0 && std::isfinite(p)) ? std::clamp(p, kMinPredDepth, max_depth) : max_depth;
    const double diff = p - g;
    const double log_diff = std::log(p) - std::log(g);
    const double ratio = std::max(p / g, g / p);
    Values v{};
    v[0] = std::abs(diff) / g;
    v[1] = diff * diff / g;
    v[2] = diff * diff;
    v[3] = log_diff * log_diff;
    v[4] = ratio < 1.25 ? 1.0 : 0.0;
    v[5] = ratio < 1.25 * 1.25 ? 1.0 : 0.0;
    v[6] = ratio < 1.25 * 1.25 * 1.25 ? 1.0 : 0.0;
    out.terms.push_back(v);
    out.gt.push_back(g);
  }
  return out;
}

Aggregate aggregate_unweighted(const PixelTerms& terms) {
  Aggregate a;
  if (terms.size() == 0) return a;
  Values sum{};
  for (const Values& v : terms.terms)
    for (std::size_t k = 0; k < kMetricCount; ++k) sum[k] += v[k];
  for (std::size_t k = 0; k < kMetricCount; ++k) a.pre_root[k] = sum[k] / static_cast<double>(terms.size());
  a.value = finalize(a.pre_root);
  a.empty = false;
  return a;
}

std::size_t bin_index(double gt, double max_depth, std::size_t bins) {
  const double width = max_depth / static_cast<double>(bins);
  const double idx = std::ceil(gt / width) - 1.0;
  if (idx <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(idx), bins - 1);
}

WeightedAggregate aggregate_weighted(const PixelTerms& terms, std::size_t bins, double max_depth) {
  check_bins(bins, max_depth);
  WeightedAggregate w;
  w.table.bins = bins;
  w.table.max_depth = max_depth;
  w.table.width = max_depth / static_cast<double>(bins);
  w.table.counts.assign(bins, 0);
  w.table.means.assign(bins, Values{});
  std::vector<Values> sums(bins, Values{});
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const std::size_t b = bin_index(terms.gt[i], max_depth, bins);
    ++w.table.counts[b];
    for (std::size_t k = 0; k < kMetricCount; ++k) sums[b][k] += terms.terms[i][k];
  }
  Values outer{};
  for (std::size_t b = 0; b < bins; ++b) {
    if (w.table.counts[b] == 0) continue;
    ++w.non_empty;
    for (std::size_t k = 0; k < kMetricCount; ++k) {
      w.table.means[b][k] = sums[b][k] / static_cast<double>(w.table.counts[b]);
      outer[k] += w.table.means[b][k];
    }
  }
  if (w.non_empty == 0) return w;
  for (std::size_t k = 0; k < kMetricCount; ++k) w.overall.pre_root[k] = outer[k] / static_cast<double>(w.non_empty);
  w.overall.value = finalize(w.overall.pre_root);
  w.overall.empty = false;
  return w;
}

std::vector<std::size_t> depth_histogram(const Tensor& gt, const Tensor& gt_valid, std::size_t bins,
                                         double max_depth) {
  check_bins(bins, max_depth);
  if (gt_valid.shape() != gt.shape()) throw DimensionError("depth_histogram: validity shape differs");
  std::vector<std::size_t> counts(bins, 0);
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    const double g = gt[i];
    if (gt_valid[i] == 0.0 || !(g > 0.0) || g > max_depth) continue;
    ++counts[bin_index(g, max_depth, bins)];
  }
  return counts;
}

Tensor resample_bilinear(const Tensor& src, std::size_t height, std::size_t width) {
  if (src.rank() != 2) throw DimensionError("resample_bilinear expects [h x w]");
  const std::size_t h = src.dim(0), w = src.dim(1);
  if (h == height && w == width) return src;
  Tensor out({height, width});
  auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    return n_out > 1 ? static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1)
                     : 0.0;
  };
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = coord(y, height, h);
    const std::size_t y0 = std::min(static_cast<std::size_t>(sy), h - 1), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = coord(x, width, w);
      const std::size_t x0 = std::min(static_cast<std::size_t>(sx), w - 1), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = src.at(y0, x0) * (1 - fx) + src.at(y0, x1) * fx;
      const double bot = src.at(y1, x0) * (1 - fx) + src.at(y1, x1) * fx;
      out.at(y, x) = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

ImageScore score_image(const std::string& name, const Tensor& pred_depth, const Tensor& gt,
                       const Tensor& gt_valid, std::size_t bins, double max_depth) {
  const Tensor pred = pred_depth.shape() == gt.shape()
                          ? pred_depth
                          : resample_bilinear(pred_depth, gt.dim(0), gt.dim(1));
  const PixelTerms terms = per_pixel_metrics(pred, gt, gt_valid, max_depth);
  ImageScore s;
  s.name = name;
  s.valid = terms.size();
  s.unweighted = aggregate_unweighted(terms);
  s.weighted = aggregate_weighted(terms, bins, max_depth);
  if (!s.unweighted.empty) {
    for (std::size_t k = 0; k < kMetricCount; ++k) {
      double pooled = 0;
      for (std::size_t b = 0; b < bins; ++b) {
        pooled += static_cast<double>(s.weighted.table.counts[b]) / static_cast<double>(s.valid) *
                  s.weighted.table.means[b][k];
      }
      s.consistency_gap = std::max(s.consistency_gap, std::abs(pooled - s.unweighted.pre_root[k]));
    }
  }
  return s;
}

MetricReport build_report(const std::vector<ImageScore>& scores, std::size_t bins, double max_depth) {
  check_bins(bins, max_depth);
  MetricReport r;
  r.bins = bins;
  r.max_depth = max_depth;
  r.bin_width = max_depth / static_cast<double>(bins);
  r.per_image = scores;
  r.pooled.bins = bins;
  r.pooled.max_depth = max_depth;
  r.pooled.width = r.bin_width;
  r.pooled.counts.assign(bins, 0);
  r.pooled.means.assign(bins, Values{});
  std::vector<Values> sums(bins, Values{});
  for (const ImageScore& s : scores) {
    if (s.unweighted.empty) continue;
    if (s.weighted.table.bins != bins) throw ContractError("image scored with a different bin count");
    ++r.images;
    r.total_valid += s.valid;
    for (std::size_t k = 0; k < kMetricCount; ++k) {
      r.unweighted[k] += s.unweighted.value[k];
      r.weighted[k] += s.weighted.overall.value[k];
    }
    for (std::size_t b = 0; b < bins; ++b) {
      const double n = static_cast<double>(s.weighted.table.counts[b]);
      r.pooled.counts[b] += s.weighted.table.counts[b];
      for (std::size_t k = 0; k < kMetricCount; ++k) sums[b][k] += n * s.weighted.table.means[b][k];
    }
  }
  if (r.images == 0) return r;
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    r.unweighted[k] /= static_cast<double>(r.images);
    r.weighted[k] /= static_cast<double>(r.images);
  }
  for (std::size_t b = 0; b < bins; ++b) {
    if (r.pooled.counts[b] == 0) continue;
    for (std::size_t k = 0; k < kMetricCount; ++k) r.pooled.means[b][k] = sums[b][k] / static_cast<double>(r.pooled.counts[b]);
  }
  r.empty = false;
  return r;
}

std::string format_report(const MetricReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "# aggregation: per-image mean over " << r.images << " images; Z=" << r.total_valid
     << "; bins=" << r.bins << "; bin_width=" << r.bin_width << "; max_depth=" << r.max_depth
     << (r.empty ? "; EMPTY" : "") << "\n";
  os << "metric\tunweighted\tweighted\n";
  for (Metric m : kAll) {
    const auto k = static_cast<std::size_t>(m);
    os << metric_name(m) << '\t' << r.unweighted[k] << '\t' << r.weighted[k] << '\n';
  }
  os << "bin\tlo\thi\tcount";
  for (Metric m : kAll) os << '\t' << metric_name(m);
  os << '\n';
  for (std::size_t b = 0; b < r.pooled.counts.size(); ++b) {
    os << b + 1 << '\t' << r.bin_width * static_cast<double>(b) << '\t' << r.bin_width * static_cast<double>(b + 1)
       << '\t' << r.pooled.counts[b];
    const Values v = finalize(r.pooled.means[b]);
    for (std::size_t k = 0; k < kMetricCount; ++k) os << '\t' << v[k];
    os << '\n';
  }
  return os.str();
}

std::string report_csv(const MetricReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "bin_lo,bin_hi,count";
  for (Metric m : kAll) os << ',' << metric_name(m);
  os << '\n';
  for (std::size_t b = 0; b < r.pooled.counts.size(); ++b) {
    os << r.bin_width * static_cast<double>(b) << ',' << r.bin_width * static_cast<double>(b + 1) << ','
       << r.pooled.counts[b];
    const Values v = finalize(r.pooled.means[b]);
    for (std::size_t k = 0; k < kMetricCount; ++k) os << ',' << v[k];
    os << '\n';
  }
  return os.str();
}

}  // namespace nsl::metrics
