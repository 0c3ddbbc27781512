#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lhcalib/core.hpp"
#include "lhcalib/order1.hpp"

namespace lhcalib {

/// Symmetric binary statistic over n distinct labels of one instance.
/// The evaluator receives class indices (equivalent to one-hot labels).
struct SymmetricStatistic {
  int arity = 2;
  std::string name;
  std::function<int(std::span<const int>)> evaluator;
  // exact per-histogram mean, when one exists; bypasses enumeration
  std::function<double(const LabelHistogram&)> closed_form;
};

/// Pairwise disagreement phi^D = I[Y1 != Y2]; its per-instance mean is
/// the Gini-Simpson index.
inline SymmetricStatistic disagreement_statistic() {
  SymmetricStatistic s;
  s.arity = 2;
  s.name = "disagreement";
  s.evaluator = [](std::span<const int> labels) {
    return labels[0] != labels[1] ? 1 : 0;
  };
  s.closed_form = [](const LabelHistogram& h) {
    double n = static_cast<double>(h.total());
    double same = 0.0;
    for (auto c : h.counts) same += static_cast<double>(c) * static_cast<double>(c - 1);
    return 1.0 - same / (n * (n - 1.0));
  };
  return s;
}

namespace detail {

inline double binomial(std::int64_t n, int r) {
  double out = 1.0;
  for (int i = 0; i < r; ++i)
    out *= static_cast<double>(n - i) / static_cast<double>(i + 1);
  return out;
}

// Expands a histogram into a label-index sequence, then folds fn over
// every size-r subset. Guarded by the combination-count limit.
template <typename Fn>
void for_each_subset(const LabelHistogram& hist, int r, Fn&& fn) {
  std::vector<int> labels;
  for (int k = 0; k < hist.k(); ++k)
    for (std::int64_t c = 0; c < hist.counts[k]; ++c) labels.push_back(k);
  int n = static_cast<int>(labels.size());
  std::vector<int> idx(r);
  std::vector<int> picked(r);
  // iterative combination walk
  for (int i = 0; i < r; ++i) idx[i] = i;
  while (true) {
    for (int i = 0; i < r; ++i) picked[i] = labels[idx[i]];
    fn(std::span<const int>(picked));
    int pos = r - 1;
    while (pos >= 0 && idx[pos] == n - r + pos) --pos;
    if (pos < 0) break;
    ++idx[pos];
    for (int i = pos + 1; i < r; ++i) idx[i] = idx[i - 1] + 1;
  }
}

constexpr double kMaxEnumeratedSubsets = 1e6;

}  // namespace detail

/// U-statistic mean of `stat` over all C(n_i, arity) label subsets.
inline double u_statistic_mean(const LabelHistogram& hist, const SymmetricStatistic& stat) {
  auto n = hist.total();
  if (n < stat.arity)
    throw std::invalid_argument("u_statistic_mean: histogram has " + std::to_string(n) +
                                " labels, statistic needs " + std::to_string(stat.arity));
  if (stat.closed_form) return stat.closed_form(hist);
  double combos = detail::binomial(n, stat.arity);
  if (combos > detail::kMaxEnumeratedSubsets)
    throw std::invalid_argument("u_statistic_mean: C(n, arity) exceeds enumeration limit");
  detail::KahanSum acc;
  detail::for_each_subset(hist, stat.arity,
                          [&](std::span<const int> labels) { acc.add(stat.evaluator(labels)); });
  return acc.value() / combos;
}

/// Unbiased estimator of the expected squared loss of phi-predictions.
/// For binary statistics this reduces to mu*(1-pred)^2 + (1-mu)*pred^2.
inline double l_phi_unbiased(const EvalDataset& data, const SymmetricStatistic& stat,
                             const std::vector<double>& preds) {
  if (preds.size() != data.records.size())
    throw std::invalid_argument("l_phi_unbiased: prediction length mismatch");
  detail::KahanSum acc;
  for (size_t i = 0; i < data.records.size(); ++i) {
    double mu = u_statistic_mean(data.records[i].histogram, stat);
    double p = preds[i];
    acc.add(mu * (1.0 - p) * (1.0 - p) + (1.0 - mu) * p * p);
  }
  return acc.value() / data.size();
}

struct PhiCalibration {
  double total = 0.0;
  std::vector<BinCell> bins;
  double ce_phi = 0.0;
  bool ce_clamped = false;
};

/// Binned calibration loss of phi-predictions; same structure as the
/// first-order CL with the U-statistic means as targets.
inline PhiCalibration cl_phi(const EvalDataset& data, const SymmetricStatistic& stat,
                             const std::vector<double>& preds, const BinningScheme& scheme,
                             EstimatorMode mode) {
  if (preds.size() != data.records.size())
    throw std::invalid_argument("cl_phi: prediction length mismatch");
  std::vector<double> mus(data.records.size());
  for (size_t i = 0; i < data.records.size(); ++i)
    mus[i] = u_statistic_mean(data.records[i].histogram, stat);

  auto sets = assign_bins(preds, scheme);
  PhiCalibration out;
  out.bins.resize(sets.size());
  double N = data.size();
  detail::KahanSum total;
  for (size_t b = 0; b < sets.size(); ++b) {
    BinCell& cell = out.bins[b];
    cell.count = static_cast<int>(sets[b].size());
    cell.undersized = cell.count <= 1;
    if (cell.count == 0) continue;
    detail::KahanSum mu_sum, p_sum, mu2_sum;
    for (int i : sets[b]) {
      mu_sum.add(mus[i]);
      mu2_sum.add(mus[i] * mus[i]);
      p_sum.add(preds[i]);
    }
    double m = cell.count;
    cell.mean_mu = mu_sum.value() / m;
    cell.mean_z = p_sum.value() / m;
    cell.sigma2 = std::max(0.0, mu2_sum.value() / m - cell.mean_mu * cell.mean_mu);
    double dev = cell.mean_mu - cell.mean_z;
    double contrib = (m / N) * dev * dev;
    if (mode == EstimatorMode::Debiased) {
      if (cell.undersized)
        contrib = 0.0;
      else
        contrib -= (m / N) * cell.sigma2 / (m - 1.0);
    }
    cell.contribution = contrib;
    total.add(contrib);
  }
  out.total = total.value();
  out.ce_clamped = out.total < 0.0;
  out.ce_phi = std::sqrt(std::max(0.0, out.total));
  return out;
}

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  int count = 0;
  std::optional<double> mean_pred;
  std::optional<double> mean_freq;
};

/// Per-bin averages for reliability diagrams; empty bins keep null means.
inline std::vector<ReliabilityBin> reliability_curve(const std::vector<double>& values,
                                                     const std::vector<double>& targets,
                                                     const BinningScheme& scheme) {
  if (values.size() != targets.size())
    throw std::invalid_argument("reliability_curve: length mismatch");
  auto sets = assign_bins(values, scheme);
  std::vector<ReliabilityBin> out(sets.size());
  for (size_t b = 0; b < sets.size(); ++b) {
    out[b].lo = scheme.edges[b];
    out[b].hi = scheme.edges[b + 1];
    out[b].count = static_cast<int>(sets[b].size());
    if (sets[b].empty()) continue;
    detail::KahanSum v, t;
    for (int i : sets[b]) {
      v.add(values[i]);
      t.add(targets[i]);
    }
    out[b].mean_pred = v.value() / out[b].count;
    out[b].mean_freq = t.value() / out[b].count;
  }
  return out;
}

/// Default phi-prediction when no calibrated DPE is attached: the
/// point-estimate Gini-Simpson value 1 - sum_k z_k^2.
inline double point_estimate_dpe(const ProbVector& z) {
  double s = 0.0;
  for (double x : z.p) s += x * x;
  return std::max(0.0, 1.0 - s);
}

}  // namespace lhcalib
