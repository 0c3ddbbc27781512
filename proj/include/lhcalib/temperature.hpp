#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "lhcalib/core.hpp"
#include "lhcalib/optimize.hpp"

namespace lhcalib {

struct TemperatureModel {
  double t = 1.0;
  bool boundary = false;   // search hit the log-t interval edge
  double held_out_nll = std::numeric_limits<double>::quiet_NaN();
};

inline ProbVector softmax(const std::vector<double>& logits) {
  double m = *std::max_element(logits.begin(), logits.end());
  ProbVector out;
  out.p.resize(logits.size());
  double s = 0.0;
  for (size_t k = 0; k < logits.size(); ++k) {
    out.p[k] = std::exp(logits[k] - m);
    s += out.p[k];
  }
  for (double& x : out.p) x /= s;
  return out;
}

/// softmax(u / t); never changes the argmax class.
inline ProbVector apply_temperature(const std::vector<double>& logits,
                                    const TemperatureModel& model) {
  std::vector<double> scaled(logits.size());
  for (size_t k = 0; k < logits.size(); ++k) scaled[k] = logits[k] / model.t;
  return softmax(scaled);
}

/// Multinomial NLL of label histograms under tempered logits,
/// normalized by the total annotation count.
inline double temperature_nll(const EvalDataset& data, double t,
                              const std::vector<int>* subset = nullptr) {
  detail::KahanSum acc;
  double n_labels = 0.0;
  auto add_record = [&](const InstanceRecord& r) {
    if (!r.logits)
      throw std::invalid_argument("temperature_nll: record '" + r.id + "' has no logits");
    // log softmax(u/t)_k = u_k/t - logsumexp(u/t)
    double m = *std::max_element(r.logits->begin(), r.logits->end()) / t;
    double lse = 0.0;
    for (double u : *r.logits) lse += std::exp(u / t - m);
    lse = m + std::log(lse);
    for (int k = 0; k < r.histogram.k(); ++k)
      if (r.histogram.counts[k] > 0)
        acc.add(-static_cast<double>(r.histogram.counts[k]) * ((*r.logits)[k] / t - lse));
    n_labels += static_cast<double>(r.histogram.total());
  };
  if (subset) {
    for (int i : *subset) add_record(data.records[i]);
  } else {
    for (const auto& r : data.records) add_record(r);
  }
  return acc.value() / n_labels;
}

/// Scalar temperature fit against label histograms by golden-section
/// search on log t in [-6, 6]. The fit uses the full data; the held-out
/// NLL over a seeded split is reported for inspection.
inline TemperatureModel temperature_fit(const EvalDataset& data,
                                        double split_fraction = 0.8,
                                        std::uint64_t seed = 0) {
  for (const auto& r : data.records)
    if (!r.logits)
      throw std::invalid_argument("temperature_fit: record '" + r.id + "' has no logits");
  auto obj = [&](double log_t) { return temperature_nll(data, std::exp(log_t)); };
  ScalarResult res = golden_section_minimize(obj, -6.0, 6.0, 1e-10);

  TemperatureModel model;
  model.t = std::exp(res.x);
  model.boundary = res.boundary;

  if (split_fraction > 0.0 && split_fraction < 1.0 && data.size() >= 2) {
    std::vector<int> order(data.records.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return data.records[a].id < data.records[b].id; });
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    size_t n_train = static_cast<size_t>(std::floor(split_fraction * order.size()));
    n_train = std::clamp<size_t>(n_train, 1, order.size() - 1);
    std::vector<int> held(order.begin() + n_train, order.end());
    model.held_out_nll = temperature_nll(data, model.t, &held);
  }
  return model;
}

}  // namespace lhcalib
