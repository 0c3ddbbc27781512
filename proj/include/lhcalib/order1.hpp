#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lhcalib/core.hpp"

namespace lhcalib {

enum class EstimatorMode { Plugin, Debiased };

enum class WeightPolicy { Uniform, LabelCount };

struct BinCell {
  int count = 0;
  double mean_mu = 0.0;   // mean empirical frequency in the bin
  double mean_z = 0.0;    // mean prediction in the bin
  double sigma2 = 0.0;    // within-bin variance of empirical frequencies
  double contribution = 0.0;
  bool undersized = false;  // |I| <= 1: debiased correction skipped
};

struct ClassCalibration {
  double total = 0.0;
  std::vector<BinCell> bins;
};

struct Order1Result {
  double l_sq_unbiased = 0.0;
  double el_plugin = 0.0;
  double el_unbiased = std::numeric_limits<double>::quiet_NaN();
  double cl_plugin = 0.0;
  double cl_debiased = std::numeric_limits<double>::quiet_NaN();
  double dl_plugin = 0.0;
  double dl_debiased = std::numeric_limits<double>::quiet_NaN();
  double ce_debiased = std::numeric_limits<double>::quiet_NaN();
  bool ce_clamped = false;
  double accuracy = 0.0;
  std::vector<ClassCalibration> cl_per_class;  // per mode actually requested
  std::vector<ClassCalibration> dl_per_class;
};

/// Unbiased estimator of the expected squared loss from label histograms.
/// With single labels and uniform weights this equals the probability score.
inline double expected_squared_loss_unbiased(const EvalDataset& data,
                                             const std::vector<double>& weights) {
  if (weights.size() != data.records.size())
    throw std::invalid_argument("expected_squared_loss_unbiased: weight length mismatch");
  detail::KahanSum acc;
  detail::KahanSum wsum;
  for (size_t i = 0; i < data.records.size(); ++i) {
    const auto& r = data.records[i];
    double w = weights[i];
    if (w < 0.0)
      throw std::invalid_argument("expected_squared_loss_unbiased: negative weight");
    wsum.add(w);
    double term = 0.0;
    for (int k = 0; k < data.k; ++k) {
      double mu = r.histogram.mean(k);
      double d = mu - r.prediction[k];
      term += d * d + mu * (1.0 - mu);
    }
    acc.add(w * term);
  }
  double W = wsum.value();
  if (W <= 0.0)
    throw std::invalid_argument("expected_squared_loss_unbiased: all weights are zero");
  return acc.value() / W;
}

inline std::vector<double> make_weights(const EvalDataset& data, WeightPolicy policy) {
  std::vector<double> w(data.records.size(), 1.0);
  if (policy == WeightPolicy::LabelCount)
    for (size_t i = 0; i < data.records.size(); ++i)
      w[i] = static_cast<double>(data.records[i].histogram.total());
  return w;
}

inline double epistemic_loss_plugin(const EvalDataset& data) {
  detail::KahanSum acc;
  for (const auto& r : data.records) {
    for (int k = 0; k < data.k; ++k) {
      double d = r.histogram.mean(k) - r.prediction[k];
      acc.add(d * d);
    }
  }
  return acc.value() / data.size();
}

/// Plugin minus the per-instance sampling-variance correction; requires
/// n_i >= 2 everywhere. May be negative on finite samples.
inline double epistemic_loss_unbiased(const EvalDataset& data) {
  detail::KahanSum acc;
  for (const auto& r : data.records) {
    auto n = r.histogram.total();
    if (n < 2)
      throw std::invalid_argument("epistemic_loss_unbiased: record '" + r.id +
                                  "' has fewer than 2 labels");
    for (int k = 0; k < data.k; ++k) {
      double mu = r.histogram.mean(k);
      double d = mu - r.prediction[k];
      acc.add(d * d - mu * (1.0 - mu) / static_cast<double>(n - 1));
    }
  }
  return acc.value() / data.size();
}

namespace detail {

struct BinStats {
  std::vector<int> members;
  double mean_mu = 0.0;
  double mean_z = 0.0;
  double sigma2 = 0.0;
};

inline std::vector<BinStats> bin_stats_for_class(const EvalDataset& data, int klass,
                                                 const BinningScheme& scheme) {
  std::vector<double> z(data.size());
  for (int i = 0; i < data.size(); ++i) z[i] = data.records[i].prediction[klass];
  auto sets = assign_bins(z, scheme);
  std::vector<BinStats> out(sets.size());
  for (size_t b = 0; b < sets.size(); ++b) {
    out[b].members = std::move(sets[b]);
    if (out[b].members.empty()) continue;
    KahanSum mu_sum, z_sum, mu2_sum;
    for (int i : out[b].members) {
      double mu = data.records[i].histogram.mean(klass);
      mu_sum.add(mu);
      mu2_sum.add(mu * mu);
      z_sum.add(data.records[i].prediction[klass]);
    }
    double m = static_cast<double>(out[b].members.size());
    out[b].mean_mu = mu_sum.value() / m;
    out[b].mean_z = z_sum.value() / m;
    out[b].sigma2 = std::max(0.0, mu2_sum.value() / m - out[b].mean_mu * out[b].mean_mu);
  }
  return out;
}

}  // namespace detail

/// Binned calibration loss per class. Debiased mode subtracts the
/// within-bin variance correction; bins with <= 1 member contribute 0.
inline std::vector<ClassCalibration> calibration_loss(const EvalDataset& data,
                                                      const BinningScheme& scheme,
                                                      EstimatorMode mode) {
  std::vector<ClassCalibration> out(data.k);
  double N = data.size();
  for (int k = 0; k < data.k; ++k) {
    auto stats = detail::bin_stats_for_class(data, k, scheme);
    detail::KahanSum total;
    out[k].bins.resize(stats.size());
    for (size_t b = 0; b < stats.size(); ++b) {
      BinCell& cell = out[k].bins[b];
      cell.count = static_cast<int>(stats[b].members.size());
      cell.mean_mu = stats[b].mean_mu;
      cell.mean_z = stats[b].mean_z;
      cell.sigma2 = stats[b].sigma2;
      cell.undersized = cell.count <= 1;
      if (cell.count == 0) continue;
      double m = cell.count;
      double dev = cell.mean_mu - cell.mean_z;
      double contrib = (m / N) * dev * dev;
      if (mode == EstimatorMode::Debiased) {
        if (cell.undersized) {
          contrib = 0.0;
        } else {
          contrib -= (m / N) * cell.sigma2 / (m - 1.0);
        }
      }
      cell.contribution = contrib;
      total.add(contrib);
    }
    out[k].total = total.value();
  }
  return out;
}

/// Binned dispersion loss per class (within-bin overdispersion of the
/// empirical frequencies not accounted for by the predictions).
inline std::vector<ClassCalibration> dispersion_loss(const EvalDataset& data,
                                                     const BinningScheme& scheme,
                                                     EstimatorMode mode) {
  if (mode == EstimatorMode::Debiased) {
    for (const auto& r : data.records)
      if (r.histogram.total() < 2)
        throw std::invalid_argument("dispersion_loss: record '" + r.id +
                                    "' has fewer than 2 labels");
  }
  std::vector<ClassCalibration> out(data.k);
  double N = data.size();
  for (int k = 0; k < data.k; ++k) {
    auto stats = detail::bin_stats_for_class(data, k, scheme);
    detail::KahanSum total;
    out[k].bins.resize(stats.size());
    for (size_t b = 0; b < stats.size(); ++b) {
      BinCell& cell = out[k].bins[b];
      cell.count = static_cast<int>(stats[b].members.size());
      cell.mean_mu = stats[b].mean_mu;
      cell.mean_z = stats[b].mean_z;
      cell.sigma2 = stats[b].sigma2;
      cell.undersized = cell.count <= 1;
      if (cell.count == 0) continue;
      double m = cell.count;
      detail::KahanSum contrib;
      for (int i : stats[b].members) {
        const auto& r = data.records[i];
        double mu = r.histogram.mean(k);
        double d = (mu - cell.mean_mu) - (r.prediction[k] - cell.mean_z);
        contrib.add(d * d / N);
        if (mode == EstimatorMode::Debiased) {
          auto n = r.histogram.total();
          contrib.add(-mu * (1.0 - mu) / static_cast<double>(n - 1) / N);
          if (!cell.undersized) contrib.add(cell.sigma2 / (m - 1.0) / N);
        }
      }
      cell.contribution = contrib.value();
      total.add(cell.contribution);
    }
    out[k].total = total.value();
  }
  return out;
}

/// Fraction of records whose predicted argmax matches the histogram's
/// majority class; ties broken by lowest class index on both sides.
inline double accuracy(const EvalDataset& data) {
  int hits = 0;
  for (const auto& r : data.records)
    if (r.prediction.argmax() == r.histogram.argmax()) ++hits;
  return static_cast<double>(hits) / data.size();
}

inline double class_total(const std::vector<ClassCalibration>& per_class) {
  detail::KahanSum s;
  for (const auto& c : per_class) s.add(c.total);
  return s.value();
}

/// Full first-order report. Debiased / unbiased entries stay NaN when
/// any record has fewer than 2 labels.
inline Order1Result evaluate_order1(const EvalDataset& data, const BinningScheme& scheme,
                                    WeightPolicy policy = WeightPolicy::Uniform) {
  Order1Result r;
  r.l_sq_unbiased = expected_squared_loss_unbiased(data, make_weights(data, policy));
  r.el_plugin = epistemic_loss_plugin(data);
  auto cl_p = calibration_loss(data, scheme, EstimatorMode::Plugin);
  auto dl_p = dispersion_loss(data, scheme, EstimatorMode::Plugin);
  r.cl_plugin = class_total(cl_p);
  r.dl_plugin = class_total(dl_p);
  r.accuracy = accuracy(data);
  r.cl_per_class = cl_p;
  r.dl_per_class = dl_p;
  if (data.min_labels() >= 2) {
    r.el_unbiased = epistemic_loss_unbiased(data);
    auto cl_d = calibration_loss(data, scheme, EstimatorMode::Debiased);
    auto dl_d = dispersion_loss(data, scheme, EstimatorMode::Debiased);
    r.cl_debiased = class_total(cl_d);
    r.dl_debiased = class_total(dl_d);
    r.ce_clamped = r.cl_debiased < 0.0;
    r.ce_debiased = std::sqrt(std::max(0.0, r.cl_debiased));
  }
  return r;
}

}  // namespace lhcalib
