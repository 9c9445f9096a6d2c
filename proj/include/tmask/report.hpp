#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tmask/experiment.hpp"
#include "tmask/geometry.hpp"
#include "tmask/metrics.hpp"
#include "tmask/temporal_mask.hpp"

namespace tmask {

inline std::string fmt_number(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string fmt_optional(const std::optional<double>& v, int digits = 4, const char* absent = "") {
  return v ? fmt_number(*v, digits) : std::string(absent);
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json metrics_report_to_json(const MetricsReport& r) {
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : r.views) {
    views.push_back({{"view", v.view},
                     {"trained", v.view == r.trained_view},
                     {"samples", v.samples},
                     {"balanced_accuracy", v.balanced},
                     {"top1", v.top1},
                     {"top5", v.top5},
                     {"drop", v.drop},
                     {"common_accuracy", optional_json(v.common_rare.common)},
                     {"rare_accuracy", optional_json(v.common_rare.rare)}});
  }
  nlohmann::json out = {{"trained_view", r.trained_view}, {"views", std::move(views)}, {"missing_views", r.missing_views}};
  if (r.cross_view)
    out["cross_view"] = {{"balanced_accuracy", r.cross_view->balanced},
                         {"top1", r.cross_view->top1},
                         {"top5", r.cross_view->top5}};
  else
    out["cross_view"] = nullptr;
  return out;
}

inline std::string metrics_report_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "view,samples,balanced_accuracy,top1,top5,drop,common_accuracy,rare_accuracy\n";
  for (const auto& v : r.views)
    os << v.view << ',' << v.samples << ',' << fmt_number(v.balanced, 2) << ',' << fmt_number(v.top1, 2) << ','
       << fmt_number(v.top5, 2) << ',' << fmt_number(v.drop, 2) << ',' << fmt_optional(v.common_rare.common, 2)
       << ',' << fmt_optional(v.common_rare.rare, 2) << '\n';
  if (r.cross_view)
    os << "cross_view_mean,," << fmt_number(r.cross_view->balanced, 2) << ',' << fmt_number(r.cross_view->top1, 2)
       << ',' << fmt_number(r.cross_view->top5, 2) << ",,,\n";
  for (const auto& m : r.missing_views) os << m << ",0,,,,,,\n";
  return os.str();
}

inline nlohmann::json difficulty_table_to_json(const std::vector<DifficultyRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"view", r.view},
                   {"trained", r.trained},
                   {"se3_distance", optional_json(r.distance)},
                   {"top1", optional_json(r.top1)},
                   {"drop", optional_json(r.drop)},
                   {"missing_pose", r.missing_pose}});
  return out;
}

/// Trained view shows "—" for distance; views without poses show "n/a".
inline std::string difficulty_table_csv(const std::vector<DifficultyRow>& rows) {
  std::ostringstream os;
  os << "view,se3_distance,top1,drop\n";
  for (const auto& r : rows)
    os << r.view << ',' << (r.trained ? std::string("—") : fmt_optional(r.distance, 3, "n/a")) << ','
       << fmt_optional(r.top1, 2) << ',' << fmt_optional(r.drop, 2) << '\n';
  return os.str();
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "label,mode,tau,mask_fraction,trained_balanced,trained_top1,cross_balanced,cross_top1,silhouette\n";
  for (const auto& r : rows)
    os << r.label << ',' << to_string(r.mode) << ',' << fmt_optional(r.tau, 4) << ',' << fmt_number(r.mask_fraction, 4)
       << ',' << fmt_number(r.trained_balanced, 2) << ',' << fmt_number(r.trained_top1, 2) << ','
       << fmt_number(r.cross_balanced, 2) << ',' << fmt_number(r.cross_top1, 2) << ','
       << fmt_number(r.silhouette, 4) << '\n';
  return os.str();
}

inline nlohmann::json histogram_to_json(const DiffHistogram& h) {
  return {{"upper", h.upper}, {"bin_count", h.counts.size()}, {"total", h.total}, {"counts", h.counts}};
}

inline std::string histogram_csv(const DiffHistogram& h) {
  std::ostringstream os;
  const auto density = h.density();
  os << "bin,lower,center,count,density\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    os << b << ',' << fmt_number(h.bin_lower(b), 6) << ',' << fmt_number(h.bin_center(b), 6) << ',' << h.counts[b]
       << ',' << fmt_number(density[b], 6) << '\n';
  return os.str();
}

}  // namespace tmask
