#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmask/error.hpp"
#include "tmask/rng.hpp"

namespace tmask {

/// Position of `label` when classes are ordered by descending logit, ties by
/// ascending class index (0 = best).
inline std::size_t label_rank(std::span<const double> logits, std::size_t label) {
  require(label < logits.size(), ErrorCode::kInput, "label outside the logit range");
  std::size_t rank = 0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    if (c == label) continue;
    if (logits[c] > logits[label] || (logits[c] == logits[label] && c < label)) ++rank;
  }
  return rank;
}

inline std::size_t argmax(std::span<const double> logits) {
  require(!logits.empty(), ErrorCode::kInput, "argmax of empty logits");
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

/// Percentage of samples whose label is among the k highest logits.
inline double top_k_accuracy(std::span<const std::vector<double>> logits, std::span<const std::size_t> labels,
                             std::size_t k) {
  require(logits.size() == labels.size(), ErrorCode::kInput, "one label per sample required");
  require(!logits.empty(), ErrorCode::kInput, "accuracy of an empty sample set");
  std::size_t hits = 0;
  for (std::size_t s = 0; s < logits.size(); ++s) {
    require(k >= 1 && k <= logits[s].size(), ErrorCode::kInput, "k must be in [1, class count]");
    if (label_rank(logits[s], labels[s]) < k) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(logits.size());
}

inline std::vector<std::size_t> predictions_of(std::span<const std::vector<double>> logits) {
  std::vector<std::size_t> out;
  out.reserve(logits.size());
  for (const auto& l : logits) out.push_back(argmax(l));
  return out;
}

/// Unweighted mean of per-class recall over classes present in `labels`.
inline double balanced_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  require(predictions.size() == labels.size(), ErrorCode::kInput, "one prediction per label required");
  require(!labels.empty(), ErrorCode::kInput, "balanced accuracy of an empty sample set");
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> per_class;  // label -> (correct, total)
  for (std::size_t s = 0; s < labels.size(); ++s) {
    auto& [correct, total] = per_class[labels[s]];
    ++total;
    if (predictions[s] == labels[s]) ++correct;
  }
  double sum = 0.0;
  for (const auto& [_, ct] : per_class) sum += static_cast<double>(ct.first) / static_cast<double>(ct.second);
  return 100.0 * sum / static_cast<double>(per_class.size());
}

/// Classes split into the most frequent half (common) and the rest (rare) by
/// training-set frequency; ties go to the lower class index.
struct ClassSplit {
  std::vector<std::size_t> common;
  std::vector<std::size_t> rare;

  bool is_common(std::size_t c) const { return std::find(common.begin(), common.end(), c) != common.end(); }
};

inline ClassSplit make_class_split(std::span<const std::size_t> class_frequencies) {
  require(class_frequencies.size() >= 2, ErrorCode::kInput, "class split needs at least two classes");
  std::vector<std::size_t> order(class_frequencies.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return class_frequencies[a] > class_frequencies[b]; });
  const std::size_t half = (order.size() + 1) / 2;
  ClassSplit split;
  split.common.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
  split.rare.assign(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
  std::sort(split.common.begin(), split.common.end());
  std::sort(split.rare.begin(), split.rare.end());
  return split;
}

inline ClassSplit class_split_from_labels(std::span<const std::size_t> train_labels, std::size_t class_count) {
  std::vector<std::size_t> freq(class_count, 0);
  for (auto l : train_labels) {
    require(l < class_count, ErrorCode::kInput, "training label out of range");
    ++freq[l];
  }
  return make_class_split(freq);
}

struct CommonRareAccuracy {
  std::optional<double> common;  // absent when no sample has a common class
  std::optional<double> rare;
};

inline CommonRareAccuracy common_rare_accuracy(std::span<const std::size_t> predictions,
                                               std::span<const std::size_t> labels, const ClassSplit& split) {
  require(predictions.size() == labels.size(), ErrorCode::kInput, "one prediction per label required");
  std::size_t ch = 0, cn = 0, rh = 0, rn = 0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    const bool common = split.is_common(labels[s]);
    require(common || std::find(split.rare.begin(), split.rare.end(), labels[s]) != split.rare.end(),
            ErrorCode::kInput, "class split does not cover label " + std::to_string(labels[s]));
    (common ? cn : rn) += 1;
    if (predictions[s] == labels[s]) (common ? ch : rh) += 1;
  }
  CommonRareAccuracy out;
  if (cn) out.common = 100.0 * static_cast<double>(ch) / static_cast<double>(cn);
  if (rn) out.rare = 100.0 * static_cast<double>(rh) / static_cast<double>(rn);
  return out;
}

struct ViewMetrics {
  std::string view;
  std::size_t samples = 0;
  double balanced = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double drop = 0.0;  // trained-view top-1 minus this view's top-1
  CommonRareAccuracy common_rare;
};

struct AggregateMetrics {
  double balanced = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
};

struct MetricsReport {
  std::string trained_view;
  std::vector<ViewMetrics> views;  // trained view first, then novel views in order
  std::optional<AggregateMetrics> cross_view;
  std::vector<std::string> missing_views;

  const ViewMetrics* find(const std::string& v) const {
    for (const auto& m : views)
      if (m.view == v) return &m;
    return nullptr;
  }
};

struct LabeledLogits {
  std::vector<std::vector<double>> logits;
  std::vector<std::size_t> labels;
};

inline ViewMetrics view_metrics(const std::string& view, const LabeledLogits& data,
                                const ClassSplit* split = nullptr) {
  ViewMetrics m;
  m.view = view;
  m.samples = data.labels.size();
  const auto preds = predictions_of(data.logits);
  m.balanced = balanced_accuracy(preds, data.labels);
  m.top1 = top_k_accuracy(data.logits, data.labels, 1);
  const std::size_t classes = data.logits.front().size();
  m.top5 = top_k_accuracy(data.logits, data.labels, std::min<std::size_t>(5, classes));
  if (split) m.common_rare = common_rare_accuracy(preds, data.labels, *split);
  return m;
}

/// Fills drops and the cross-view aggregate (mean over novel views present).
inline MetricsReport assemble_report(std::vector<ViewMetrics> views, const std::string& trained_view,
                                     std::span<const std::string> novel_views) {
  MetricsReport r;
  r.trained_view = trained_view;
  auto trained = std::find_if(views.begin(), views.end(), [&](const auto& v) { return v.view == trained_view; });
  require(trained != views.end(), ErrorCode::kInput, "trained view '" + trained_view + "' missing from report");
  const double base = trained->top1;
  r.views.push_back(*trained);
  r.views.back().drop = 0.0;
  AggregateMetrics agg;
  std::size_t present = 0;
  for (const auto& nv : novel_views) {
    auto it = std::find_if(views.begin(), views.end(), [&](const auto& v) { return v.view == nv; });
    if (it == views.end()) {
      r.missing_views.push_back(nv);
      continue;
    }
    ViewMetrics m = *it;
    m.drop = base - m.top1;
    agg.balanced += m.balanced;
    agg.top1 += m.top1;
    agg.top5 += m.top5;
    ++present;
    r.views.push_back(std::move(m));
  }
  if (present) {
    const double n = static_cast<double>(present);
    r.cross_view = AggregateMetrics{agg.balanced / n, agg.top1 / n, agg.top5 / n};
  }
  return r;
}

/// Per-view metrics table from logits; views without samples are reported
/// as missing rather than failing.
inline MetricsReport per_view_report(const std::map<std::string, LabeledLogits>& by_view,
                                     const std::string& trained_view, std::span<const std::string> novel_views,
                                     const ClassSplit* split = nullptr) {
  std::vector<ViewMetrics> views;
  for (const auto& [view, data] : by_view)
    if (!data.labels.empty()) views.push_back(view_metrics(view, data, split));
  return assemble_report(std::move(views), trained_view, novel_views);
}

/// Mean silhouette over points, clustering by `groups`; capped to
/// `sample_cap` points via a seeded subsample.
inline double silhouette_score(std::span<const std::vector<double>> points, std::span<const std::size_t> groups,
                               std::size_t sample_cap = 2000, std::uint64_t seed = 0) {
  require(points.size() == groups.size(), ErrorCode::kInput, "one group label per point required");
  std::vector<std::size_t> chosen(points.size());
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  if (sample_cap > 0 && chosen.size() > sample_cap) {
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(chosen));
    chosen.resize(sample_cap);
    std::sort(chosen.begin(), chosen.end());
  }
  std::map<std::size_t, std::size_t> sizes;
  for (auto i : chosen) ++sizes[groups[i]];
  require(sizes.size() >= 2, ErrorCode::kDegenerateCluster, "silhouette needs at least two groups");
  for (const auto& [g, n] : sizes)
    require(n >= 2, ErrorCode::kDegenerateCluster,
            "silhouette group " + std::to_string(g) + " has fewer than two points");

  const std::size_t n = chosen.size();
  std::vector<std::size_t> group_index(n);
  std::map<std::size_t, std::size_t> slot;
  for (const auto& [g, _] : sizes) slot.emplace(g, slot.size());
  std::vector<double> group_size(slot.size());
  for (std::size_t a = 0; a < n; ++a) {
    group_index[a] = slot.at(groups[chosen[a]]);
    group_size[group_index[a]] += 1.0;
  }
  const std::size_t dim = points[chosen[0]].size();
  double total = 0.0;
  std::vector<double> dist_sum(slot.size());
  for (std::size_t a = 0; a < n; ++a) {
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    const auto& pa = points[chosen[a]];
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      const auto& pb = points[chosen[b]];
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += (pa[j] - pb[j]) * (pa[j] - pb[j]);
      dist_sum[group_index[b]] += std::sqrt(s);
    }
    const std::size_t own = group_index[a];
    const double intra = dist_sum[own] / (group_size[own] - 1.0);
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < slot.size(); ++g)
      if (g != own) nearest = std::min(nearest, dist_sum[g] / group_size[g]);
    const double denom = std::max(intra, nearest);
    total += denom > 0.0 ? (nearest - intra) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

}  // namespace tmask
