#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ulm/localization.hpp"

namespace ulm {

struct MatchReport {
  double tolerance_um = 0;
  long true_positives = 0;
  long false_positives = 0;
  long false_negatives = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double rmse_um = 0;  // over matched pairs
};

namespace detail {

// denominator 0: 1 when the other side is empty too, else 0
inline double safe_rate(long num, long denom, bool both_empty) {
  if (denom > 0) return static_cast<double>(num) / static_cast<double>(denom);
  return both_empty ? 1.0 : 0.0;
}

}  // namespace detail

// Per-frame greedy nearest-neighbor matching in ascending distance order; each
// prediction/truth is used at most once, matches only within tolerance.
inline MatchReport match_localizations(const LocalizationSet& pred, const LocalizationSet& truth,
                                       double tolerance_um) {
  if (tolerance_um < 0) throw InvalidParameter("match_localizations: negative tolerance");
  MatchReport rep;
  rep.tolerance_um = tolerance_um;

  const auto pred_by_frame = group_by_frame(pred);
  const auto truth_by_frame = group_by_frame(truth);

  double sq_err_sum = 0;
  std::vector<int> frames;
  for (const auto& [f, _] : pred_by_frame) frames.push_back(f);
  for (const auto& [f, _] : truth_by_frame)
    if (!pred_by_frame.count(f)) frames.push_back(f);
  std::sort(frames.begin(), frames.end());

  for (int f : frames) {
    static const std::vector<const Localization*> kEmpty;
    const auto& ps = pred_by_frame.count(f) ? pred_by_frame.at(f) : kEmpty;
    const auto& ts = truth_by_frame.count(f) ? truth_by_frame.at(f) : kEmpty;

    struct Cand {
      double d;
      int pi, ti;
    };
    std::vector<Cand> cands;
    for (int pi = 0; pi < static_cast<int>(ps.size()); ++pi)
      for (int ti = 0; ti < static_cast<int>(ts.size()); ++ti) {
        const double d = std::hypot(ps[pi]->x_um - ts[ti]->x_um, ps[pi]->y_um - ts[ti]->y_um);
        if (d <= tolerance_um) cands.push_back({d, pi, ti});
      }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.d != b.d) return a.d < b.d;
      if (a.pi != b.pi) return a.pi < b.pi;
      return a.ti < b.ti;
    });
    std::vector<char> used_p(ps.size(), 0), used_t(ts.size(), 0);
    long tp = 0;
    for (const Cand& c : cands) {
      if (used_p[c.pi] || used_t[c.ti]) continue;
      used_p[c.pi] = used_t[c.ti] = 1;
      ++tp;
      sq_err_sum += c.d * c.d;
    }
    rep.true_positives += tp;
    rep.false_positives += static_cast<long>(ps.size()) - tp;
    rep.false_negatives += static_cast<long>(ts.size()) - tp;
  }

  const bool both_empty = pred.empty() && truth.empty();
  rep.precision = detail::safe_rate(rep.true_positives, rep.true_positives + rep.false_positives,
                                    both_empty);
  rep.recall = detail::safe_rate(rep.true_positives, rep.true_positives + rep.false_negatives,
                                 both_empty);
  rep.f1 = (rep.precision + rep.recall) > 0
               ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
               : 0.0;
  rep.rmse_um = rep.true_positives > 0 ? std::sqrt(sq_err_sum / rep.true_positives) : 0.0;
  return rep;
}

}  // namespace ulm
