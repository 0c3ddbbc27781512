#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lhcalib/core.hpp"
#include "lhcalib/optimize.hpp"

namespace lhcalib {

constexpr double kLogAlphaLo = -12.0;
constexpr double kLogAlphaHi = 12.0;
constexpr double kDefaultLambdaAlpha = 0.005;

enum class AlphaMode { Pointwise, Featurized };

struct AlphaModel {
  AlphaMode mode = AlphaMode::Pointwise;
  double lambda_alpha = kDefaultLambdaAlpha;
  double log_alpha_lo = kLogAlphaLo;
  double log_alpha_hi = kLogAlphaHi;

  // featurized: log alpha0(x) = theta . g(x) + bias
  std::vector<double> theta;
  double bias = 0.0;

  struct PointEntry {
    std::string id;
    double log_alpha0 = 0.0;
    bool boundary = false;
  };
  std::vector<PointEntry> per_instance;

 private:
  mutable std::unordered_map<std::string, size_t> index_;

 public:

  double log_alpha0_for(const InstanceRecord& r) const {
    if (mode == AlphaMode::Featurized) {
      if (!r.features)
        throw std::invalid_argument("AlphaModel: record '" + r.id + "' has no features");
      if (r.features->size() != theta.size())
        throw std::invalid_argument("AlphaModel: feature dimension mismatch for '" + r.id + "'");
      double t = bias;
      for (size_t d = 0; d < theta.size(); ++d) t += theta[d] * (*r.features)[d];
      return std::clamp(t, log_alpha_lo, log_alpha_hi);
    }
    if (index_.size() != per_instance.size()) {
      index_.clear();
      for (size_t i = 0; i < per_instance.size(); ++i) index_[per_instance[i].id] = i;
    }
    auto it = index_.find(r.id);
    if (it == index_.end())
      throw std::invalid_argument("AlphaModel: no pointwise entry for record '" + r.id + "'");
    return per_instance[it->second].log_alpha0;
  }

  double alpha0_for(const InstanceRecord& r) const { return std::exp(log_alpha0_for(r)); }
};

/// Floors near-zero entries and renormalizes.
inline ProbVector floor_probs(const ProbVector& f, double floor = kProbFloor) {
  ProbVector out = f;
  double s = 0.0;
  for (double& x : out.p) {
    x = std::max(x, floor);
    s += x;
  }
  for (double& x : out.p) x /= s;
  return out;
}

namespace detail {

inline double log_factorial(std::int64_t n) {
  return std::lgamma(static_cast<double>(n) + 1.0);
}

// log DirMult(y | alpha * f) via the rational product recurrence; exact
// for integer counts, no digamma/gamma evaluation of non-integer args.
inline double dirmult_log_prob(const LabelHistogram& y, const ProbVector& f, double alpha) {
  auto n = y.total();
  double lp = log_factorial(n);
  for (int k = 0; k < y.k(); ++k) {
    lp -= log_factorial(y.counts[k]);
    for (std::int64_t l = 1; l <= y.counts[k]; ++l)
      lp += std::log(alpha * f[k] + static_cast<double>(l - 1));
  }
  for (std::int64_t l = 1; l <= n; ++l)
    lp -= std::log(alpha + static_cast<double>(l - 1));
  return lp;
}

// S_y = sum_k sum_{l=1..y_k} f_k/(alpha f_k + l - 1),
// S_n = sum_{l=1..n} 1/(alpha + l - 1); building blocks of the
// derivative of log DirMult with respect to alpha.
struct RationalSums {
  double s_y = 0.0;
  double s_n = 0.0;
  double s_y_prime = 0.0;  // d S_y / d alpha
  double s_n_prime = 0.0;
};

inline RationalSums dirmult_rational_sums(const LabelHistogram& y, const ProbVector& f,
                                          double alpha) {
  RationalSums s;
  for (int k = 0; k < y.k(); ++k) {
    for (std::int64_t l = 1; l <= y.counts[k]; ++l) {
      double denom = alpha * f[k] + static_cast<double>(l - 1);
      s.s_y += f[k] / denom;
      s.s_y_prime -= f[k] * f[k] / (denom * denom);
    }
  }
  auto n = y.total();
  for (std::int64_t l = 1; l <= n; ++l) {
    double denom = alpha + static_cast<double>(l - 1);
    s.s_n += 1.0 / denom;
    s.s_n_prime -= 1.0 / (denom * denom);
  }
  return s;
}

}  // namespace detail

/// Per-instance regularized NLL: -(1/n_i) log DirMult + lambda (log a0)^2.
inline double alpha_nll_instance(const InstanceRecord& r, double log_alpha0,
                                 double lambda_alpha) {
  ProbVector f = floor_probs(r.prediction);
  double alpha = std::exp(log_alpha0);
  double n = static_cast<double>(r.histogram.total());
  double nll = -detail::dirmult_log_prob(r.histogram, f, alpha) / n +
               lambda_alpha * log_alpha0 * log_alpha0;
  if (!std::isfinite(nll))
    throw NumericError("alpha_nll_instance: non-finite NLL at record '" + r.id + "'");
  return nll;
}

/// Dataset objective: -(1/sum n_i) sum_i log DirMult(y_i | a0(x_i) f(x_i))
/// + (lambda/N) sum_i (log a0(x_i))^2.
inline double dirmult_nll(const EvalDataset& data, const AlphaModel& model) {
  detail::KahanSum loglik;
  detail::KahanSum penalty;
  for (const auto& r : data.records) {
    double t = model.log_alpha0_for(r);
    ProbVector f = floor_probs(r.prediction);
    double lp = detail::dirmult_log_prob(r.histogram, f, std::exp(t));
    if (!std::isfinite(lp))
      throw NumericError("dirmult_nll: non-finite log-likelihood at record '" + r.id + "'");
    loglik.add(lp);
    penalty.add(t * t);
  }
  double n_total = static_cast<double>(data.total_labels());
  return -loglik.value() / n_total +
         model.lambda_alpha * penalty.value() / static_cast<double>(data.size());
}

/// Derivative of the per-instance regularized NLL with respect to
/// log alpha0: -(a0/n_i)(S_y - S_n) + 2 lambda log a0.
inline double nll_gradient_pointwise(const InstanceRecord& r, double log_alpha0,
                                     double lambda_alpha) {
  ProbVector f = floor_probs(r.prediction);
  double alpha = std::exp(log_alpha0);
  double n = static_cast<double>(r.histogram.total());
  auto s = detail::dirmult_rational_sums(r.histogram, f, alpha);
  return -(alpha / n) * (s.s_y - s.s_n) + 2.0 * lambda_alpha * log_alpha0;
}

/// Second derivative of the per-instance NLL with respect to log alpha0.
inline double nll_hessian_pointwise(const InstanceRecord& r, double log_alpha0,
                                    double lambda_alpha) {
  ProbVector f = floor_probs(r.prediction);
  double alpha = std::exp(log_alpha0);
  double n = static_cast<double>(r.histogram.total());
  auto s = detail::dirmult_rational_sums(r.histogram, f, alpha);
  double dh_dalpha =
      -(s.s_y - s.s_n) / n - (alpha / n) * (s.s_y_prime - s.s_n_prime);
  return alpha * dh_dalpha + 2.0 * lambda_alpha;
}

/// Minimizes the regularized per-instance NLL independently for every
/// record. Monotone-gradient cases (typical at lambda = 0) land on the
/// clamp bound and are flagged as boundary solutions.
inline AlphaModel fit_alpha_pointwise(const EvalDataset& data, double lambda_alpha) {
  AlphaModel model;
  model.mode = AlphaMode::Pointwise;
  model.lambda_alpha = lambda_alpha;
  model.per_instance.reserve(data.records.size());
  for (const auto& r : data.records) {
    AlphaModel::PointEntry e;
    e.id = r.id;
    double glo = nll_gradient_pointwise(r, kLogAlphaLo, lambda_alpha);
    double ghi = nll_gradient_pointwise(r, kLogAlphaHi, lambda_alpha);
    if (glo < 0.0 && ghi > 0.0) {
      e.log_alpha0 = safeguarded_newton_root(
          [&](double t) { return nll_gradient_pointwise(r, t, lambda_alpha); },
          [&](double t) { return nll_hessian_pointwise(r, t, lambda_alpha); },
          kLogAlphaLo, kLogAlphaHi, 1e-13);
      e.boundary = false;
    } else if (glo >= 0.0 && ghi >= 0.0) {
      e.log_alpha0 = kLogAlphaLo;
      e.boundary = true;
    } else if (glo <= 0.0 && ghi <= 0.0) {
      e.log_alpha0 = kLogAlphaHi;
      e.boundary = true;
    } else {
      // interior maximum: take the better endpoint
      double nlo = alpha_nll_instance(r, kLogAlphaLo, lambda_alpha);
      double nhi = alpha_nll_instance(r, kLogAlphaHi, lambda_alpha);
      e.log_alpha0 = nlo <= nhi ? kLogAlphaLo : kLogAlphaHi;
      e.boundary = true;
    }
    model.per_instance.push_back(std::move(e));
  }
  return model;
}

/// Fits log alpha0(x) = theta . g(x) + b by full-batch gradient descent
/// on the regularized DirMult NLL over a seeded calibration split, with
/// early stopping on the held-out data NLL.
inline AlphaModel fit_alpha_featurized(const EvalDataset& data, double lambda_alpha,
                                       double split_fraction = 0.8,
                                       std::uint64_t seed = 0) {
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw std::invalid_argument("fit_alpha_featurized: split_fraction must be in (0,1)");
  size_t dim = 0;
  for (const auto& r : data.records) {
    if (!r.features)
      throw std::invalid_argument("fit_alpha_featurized: record '" + r.id + "' has no features");
    if (dim == 0)
      dim = r.features->size();
    else if (r.features->size() != dim)
      throw std::invalid_argument("fit_alpha_featurized: feature dimension mismatch at '" +
                                  r.id + "'");
  }

  // record-order-independent split: shuffle ids, not positions
  std::vector<int> order(data.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return data.records[a].id < data.records[b].id; });
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  size_t n_train = std::max<size_t>(
      1, static_cast<size_t>(std::floor(split_fraction * order.size())));
  if (n_train >= order.size()) n_train = order.size() - 1;
  std::vector<int> train(order.begin(), order.begin() + n_train);
  std::vector<int> held(order.begin() + n_train, order.end());
  if (held.empty()) held = train;

  AlphaModel model;
  model.mode = AlphaMode::Featurized;
  model.lambda_alpha = lambda_alpha;
  model.theta.assign(dim, 0.0);
  model.bias = 0.0;

  std::vector<ProbVector> floored(data.records.size());
  for (size_t i = 0; i < data.records.size(); ++i)
    floored[i] = floor_probs(data.records[i].prediction);

  double n_labels_train = 0.0;
  for (int i : train) n_labels_train += static_cast<double>(data.records[i].histogram.total());

  auto held_nll = [&](const std::vector<double>& theta, double bias) {
    detail::KahanSum s;
    double n_labels = 0.0;
    for (int i : held) {
      const auto& r = data.records[i];
      double t = bias;
      for (size_t d = 0; d < dim; ++d) t += theta[d] * (*r.features)[d];
      t = std::clamp(t, kLogAlphaLo, kLogAlphaHi);
      s.add(-detail::dirmult_log_prob(r.histogram, floored[i], std::exp(t)));
      n_labels += static_cast<double>(r.histogram.total());
    }
    return s.value() / n_labels;
  };

  auto train_objective = [&](const std::vector<double>& theta, double bias) {
    detail::KahanSum loglik;
    detail::KahanSum penalty;
    for (int i : train) {
      const auto& r = data.records[i];
      double t = bias;
      for (size_t d = 0; d < dim; ++d) t += theta[d] * (*r.features)[d];
      t = std::clamp(t, kLogAlphaLo, kLogAlphaHi);
      loglik.add(detail::dirmult_log_prob(r.histogram, floored[i], std::exp(t)));
      penalty.add(t * t);
    }
    return -loglik.value() / n_labels_train +
           lambda_alpha * penalty.value() / static_cast<double>(train.size());
  };

  auto train_gradient = [&](const std::vector<double>& theta, double bias,
                            std::vector<double>& grad_theta, double& grad_bias) {
    std::fill(grad_theta.begin(), grad_theta.end(), 0.0);
    grad_bias = 0.0;
    for (int i : train) {
      const auto& r = data.records[i];
      double t_raw = bias;
      for (size_t d = 0; d < dim; ++d) t_raw += theta[d] * (*r.features)[d];
      double t = std::clamp(t_raw, kLogAlphaLo, kLogAlphaHi);
      double alpha = std::exp(t);
      auto s = detail::dirmult_rational_sums(r.histogram, floored[i], alpha);
      double gi = -alpha * (s.s_y - s.s_n) / n_labels_train +
                  2.0 * lambda_alpha * t / static_cast<double>(train.size());
      // subgradient of the clamp: no pull past a saturated bound
      if ((t_raw <= kLogAlphaLo && gi > 0.0) || (t_raw >= kLogAlphaHi && gi < 0.0)) gi = 0.0;
      for (size_t d = 0; d < dim; ++d) grad_theta[d] += gi * (*r.features)[d];
      grad_bias += gi;
    }
  };

  // full-batch descent with Armijo backtracking; a fixed small step was
  // too slow to reach the pooled-fit optimum within the epoch budget
  const int max_epochs = 500;
  const int patience = 10;

  std::vector<double> best_theta = model.theta;
  double best_bias = model.bias;
  double best_val = held_nll(model.theta, model.bias);
  int stall = 0;

  std::vector<double> grad_theta(dim);
  std::vector<double> trial_theta(dim);
  double obj = train_objective(model.theta, model.bias);
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    double grad_bias = 0.0;
    train_gradient(model.theta, model.bias, grad_theta, grad_bias);
    double g2 = grad_bias * grad_bias;
    for (double g : grad_theta) g2 += g * g;
    if (g2 < 1e-20) break;

    double step = 1.0;
    double trial_obj = obj;
    double trial_bias = model.bias;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      for (size_t d = 0; d < dim; ++d) trial_theta[d] = model.theta[d] - step * grad_theta[d];
      trial_bias = model.bias - step * grad_bias;
      trial_obj = train_objective(trial_theta, trial_bias);
      if (trial_obj <= obj - 1e-4 * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    model.theta = trial_theta;
    model.bias = trial_bias;
    obj = trial_obj;

    double val = held_nll(model.theta, model.bias);
    if (val < best_val - 1e-12) {
      best_val = val;
      best_theta = model.theta;
      best_bias = model.bias;
      stall = 0;
    } else if (++stall >= patience) {
      break;
    }
  }
  model.theta = best_theta;
  model.bias = best_bias;
  return model;
}

/// Closed-form DPE under Dir(a0 f): a0/(a0+1) * (1 - sum_k f_k^2).
inline double dpe_from_alpha(const ProbVector& f, double alpha0) {
  if (!(alpha0 > 0.0)) throw std::invalid_argument("dpe_from_alpha: alpha0 must be positive");
  double s = 0.0;
  for (double x : f.p) s += x * x;
  return alpha0 / (alpha0 + 1.0) * (1.0 - s);
}

/// Posterior CPE after one observed label: (a0 f + Y) / (a0 + 1).
inline ProbVector posterior_cpe(const ProbVector& f, double alpha0, int label_class) {
  if (!(alpha0 > 0.0)) throw std::invalid_argument("posterior_cpe: alpha0 must be positive");
  if (label_class < 0 || label_class >= f.k())
    throw std::invalid_argument("posterior_cpe: label class out of range");
  ProbVector out = f;
  for (double& x : out.p) x = alpha0 * x / (alpha0 + 1.0);
  out.p[label_class] += 1.0 / (alpha0 + 1.0);
  return out;
}

struct AlphaInterval {
  bool feasible = false;
  double threshold = 0.0;  // improvement over the a0 -> inf baseline from here up
  double optimum = 0.0;
};

/// Optimal concentration for disagreement prediction within a group:
/// feasible iff u_Q > s_Z.
inline AlphaInterval optimal_alpha_dpe(double s_z, double u_q) {
  AlphaInterval out;
  if (u_q <= s_z) return out;
  out.feasible = true;
  out.threshold = (1.0 - 2.0 * u_q + s_z) / (2.0 * (u_q - s_z));
  out.optimum = (1.0 - u_q) / (u_q - s_z);
  return out;
}

/// Optimal concentration for posterior CPEs within a group: feasible
/// iff EL_G > 0. When predictions are group-calibrated (EL_G = v_Q)
/// this coincides with the DPE optimum at (1 - u_Q) / v_Q.
inline AlphaInterval optimal_alpha_posterior(double u_q, double el_g) {
  AlphaInterval out;
  if (el_g <= 0.0) return out;
  out.feasible = true;
  out.threshold = (1.0 - u_q - el_g) / (2.0 * el_g);
  out.optimum = (1.0 - u_q) / el_g;
  return out;
}

}  // namespace lhcalib
