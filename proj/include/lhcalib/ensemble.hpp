#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "lhcalib/core.hpp"
#include "lhcalib/order2.hpp"

namespace lhcalib {

inline ProbVector ensemble_mean_cpe(const std::vector<ProbVector>& members) {
  if (members.empty()) throw std::invalid_argument("ensemble_mean_cpe: empty ensemble");
  ProbVector out;
  out.p.assign(members.front().k(), 0.0);
  for (const auto& m : members) {
    if (m.k() != out.k())
      throw std::invalid_argument("ensemble_mean_cpe: class count mismatch");
    for (int k = 0; k < out.k(); ++k) out.p[k] += m[k];
  }
  for (double& x : out.p) x /= static_cast<double>(members.size());
  return out;
}

/// Mean per-member Gini-Simpson index: (1/S) sum_s (1 - sum_k f_k^(s)^2).
inline double ensemble_dpe(const std::vector<ProbVector>& members) {
  if (members.empty()) throw std::invalid_argument("ensemble_dpe: empty ensemble");
  detail::KahanSum acc;
  for (const auto& m : members) acc.add(point_estimate_dpe(m));
  return acc.value() / static_cast<double>(members.size());
}

/// Posterior over the mixture-of-deltas CPE distribution: members
/// reweighted by their likelihood of the observed one-hot label.
inline ProbVector ensemble_posterior_cpe(const std::vector<ProbVector>& members,
                                         int label_class) {
  if (members.empty()) throw std::invalid_argument("ensemble_posterior_cpe: empty ensemble");
  ProbVector out;
  out.p.assign(members.front().k(), 0.0);
  if (label_class < 0 || label_class >= out.k())
    throw std::invalid_argument("ensemble_posterior_cpe: label class out of range");
  double total_w = 0.0;
  for (const auto& m : members) {
    double w = m[label_class];
    total_w += w;
    for (int k = 0; k < out.k(); ++k) out.p[k] += w * m[k];
  }
  if (total_w <= 0.0)
    throw std::invalid_argument(
        "ensemble_posterior_cpe: observed class has zero probability in every member");
  for (double& x : out.p) x /= total_w;
  return out;
}

/// Ensemble combined with alpha-calibration: mean of the per-member
/// closed-form DPEs a0/(a0+1) (1 - sum f^2).
inline double ensemble_alpha_dpe(const std::vector<ProbVector>& members,
                                 const std::vector<double>& alpha0s) {
  if (members.empty()) throw std::invalid_argument("ensemble_alpha_dpe: empty ensemble");
  if (members.size() != alpha0s.size())
    throw std::invalid_argument("ensemble_alpha_dpe: alpha0 length mismatch");
  detail::KahanSum acc;
  for (size_t s = 0; s < members.size(); ++s) {
    if (!(alpha0s[s] > 0.0))
      throw std::invalid_argument("ensemble_alpha_dpe: alpha0 must be positive");
    acc.add(alpha0s[s] / (alpha0s[s] + 1.0) * point_estimate_dpe(members[s]));
  }
  return acc.value() / static_cast<double>(members.size());
}

}  // namespace lhcalib
