#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lhcalib/core.hpp"
#include "lhcalib/order2.hpp"

namespace lhcalib {

namespace rng {

// All synthetic draws go through these helpers on top of mt19937_64 so
// the streams do not depend on the standard library's distribution
// implementations. Generator identity: mt19937_64, 53-bit uniforms,
// polar-method normals, Marsaglia-Tsang gammas.
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double normal(std::mt19937_64& g) {
  while (true) {
    double u = 2.0 * uniform01(g) - 1.0;
    double v = 2.0 * uniform01(g) - 1.0;
    double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

inline double gamma(std::mt19937_64& g, double shape) {
  if (shape < 1.0) {
    double u = uniform01(g);
    while (u <= 0.0) u = uniform01(g);
    return gamma(g, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x = normal(g);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = uniform01(g);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

inline int categorical(std::mt19937_64& g, const ProbVector& q) {
  double u = uniform01(g);
  double acc = 0.0;
  for (int k = 0; k < q.k(); ++k) {
    acc += q[k];
    if (u < acc) return k;
  }
  return q.k() - 1;
}

inline ProbVector dirichlet(std::mt19937_64& g, int k, double concentration) {
  ProbVector q;
  q.p.resize(k);
  double s = 0.0;
  for (int i = 0; i < k; ++i) {
    q.p[i] = gamma(g, concentration);
    s += q.p[i];
  }
  for (double& x : q.p) x /= s;
  return q;
}

}  // namespace rng

struct GroundTruthRecord {
  std::string id;
  ProbVector q;
  std::optional<int> group;
};

struct SyntheticData {
  EvalDataset data;
  std::vector<GroundTruthRecord> truth;
};

namespace detail {

inline LabelHistogram draw_histogram(std::mt19937_64& g, const ProbVector& q, int n_labels) {
  LabelHistogram h(std::vector<std::int64_t>(q.k(), 0));
  for (int j = 0; j < n_labels; ++j) ++h.counts[rng::categorical(g, q)];
  return h;
}

}  // namespace detail

/// Binary instances with Q1 ~ U(0,1), i.i.d. labels, and the perfect
/// predictor z = Q, so EL and CL are zero in expectation.
inline SyntheticData gen_uniform_binary(int n_instances, int n_labels, std::uint64_t seed) {
  if (n_instances < 1 || n_labels < 1)
    throw std::invalid_argument("gen_uniform_binary: sizes must be positive");
  std::mt19937_64 g(seed);
  SyntheticData out;
  out.data.k = 2;
  out.data.records.reserve(n_instances);
  out.truth.reserve(n_instances);
  for (int i = 0; i < n_instances; ++i) {
    double q1 = rng::uniform01(g);
    ProbVector q({q1, 1.0 - q1});
    InstanceRecord r;
    r.id = "u" + std::to_string(i);
    r.prediction = q;
    r.histogram = detail::draw_histogram(g, q, n_labels);
    out.data.records.push_back(std::move(r));
    out.truth.push_back({out.data.records.back().id, q, std::nullopt});
  }
  return out;
}

/// Multiclass instances with Q ~ Dir(concentration * 1), i.i.d. labels,
/// perfect predictor, and per-instance features (centered log Q plus
/// Gaussian noise, sigma 0.1) for featurized-alpha experiments.
inline SyntheticData gen_dirichlet_multiclass(int n_instances, int k, int n_labels,
                                              double concentration, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("gen_dirichlet_multiclass: k must be >= 2");
  if (n_instances < 1 || n_labels < 1)
    throw std::invalid_argument("gen_dirichlet_multiclass: sizes must be positive");
  if (!(concentration > 0.0))
    throw std::invalid_argument("gen_dirichlet_multiclass: concentration must be positive");
  std::mt19937_64 g(seed);
  SyntheticData out;
  out.data.k = k;
  out.data.records.reserve(n_instances);
  out.truth.reserve(n_instances);
  for (int i = 0; i < n_instances; ++i) {
    ProbVector q = rng::dirichlet(g, k, concentration);
    InstanceRecord r;
    r.id = "d" + std::to_string(i);
    r.prediction = q;
    r.histogram = detail::draw_histogram(g, q, n_labels);
    std::vector<double> feat(k);
    double mean_log = 0.0;
    for (int c = 0; c < k; ++c) {
      feat[c] = std::log(std::max(q[c], kProbFloor));
      mean_log += feat[c];
    }
    mean_log /= k;
    for (int c = 0; c < k; ++c) feat[c] = feat[c] - mean_log + 0.1 * rng::normal(g);
    r.features = std::move(feat);
    out.data.records.push_back(std::move(r));
    out.truth.push_back({out.data.records.back().id, q, std::nullopt});
  }
  return out;
}

/// Replaces predictions with softmax(log(z) / temperature) and stores
/// the scaled log-probabilities as logits. Temperatures above 1 soften,
/// below 1 sharpen; the argmax never changes.
inline EvalDataset distort_predictor(const EvalDataset& data, double temperature) {
  if (!(temperature > 0.0))
    throw std::invalid_argument("distort_predictor: temperature must be positive");
  EvalDataset out = data;
  for (auto& r : out.records) {
    std::vector<double> logits(data.k);
    double m = 0.0;
    for (int k = 0; k < data.k; ++k) {
      logits[k] = std::log(std::max(r.prediction[k], kProbFloor)) / temperature;
      m = k == 0 ? logits[0] : std::max(m, logits[k]);
    }
    double s = 0.0;
    ProbVector z;
    z.p.resize(data.k);
    for (int k = 0; k < data.k; ++k) {
      z.p[k] = std::exp(logits[k] - m);
      s += z.p[k];
    }
    for (double& x : z.p) x /= s;
    r.prediction = std::move(z);
    r.logits = std::move(logits);
  }
  return out;
}

struct GroupStats {
  int count = 0;
  double u_q = 0.0;  // E[sum Q_k^2 | G]
  double v_q = 0.0;  // sum_k Var[Q_k | G]
  double s_q = 0.0;  // sum_k E[Q_k | G]^2
  double s_z = 0.0;  // sum_k mean(Z_k)^2
  double el_g = 0.0; // E[sum_k (Z_k - Q_k)^2 | G]
};

struct TruthReport {
  double true_el = 0.0;
  double true_l_sq = 0.0;
  double true_cl = 0.0;
  std::vector<double> true_dpe;  // per instance, 1 - sum Q^2
  std::map<int, GroupStats> groups;
  double mc_disagreement = std::numeric_limits<double>::quiet_NaN();
  double mc_disagreement_se = std::numeric_limits<double>::quiet_NaN();
};

/// Population quantities from the known Q: exact where closed forms
/// exist, Monte Carlo (with standard errors) for label-draw checks.
inline TruthReport true_metrics_oracle(const EvalDataset& data,
                                       const std::vector<GroundTruthRecord>& truth,
                                       const BinningScheme& scheme, int mc_labels = 0,
                                       std::uint64_t seed = 0) {
  if (truth.size() != data.records.size())
    throw std::invalid_argument("true_metrics_oracle: truth size mismatch");
  for (size_t i = 0; i < truth.size(); ++i)
    if (truth[i].id != data.records[i].id)
      throw std::invalid_argument("true_metrics_oracle: id mismatch at '" + truth[i].id + "'");

  TruthReport out;
  double N = data.size();
  detail::KahanSum el, il;
  out.true_dpe.resize(truth.size());
  for (size_t i = 0; i < truth.size(); ++i) {
    const auto& q = truth[i].q;
    const auto& z = data.records[i].prediction;
    double dpe = 1.0;
    for (int k = 0; k < data.k; ++k) {
      double d = z[k] - q[k];
      el.add(d * d);
      il.add(q[k] * (1.0 - q[k]));
      dpe -= q[k] * q[k];
    }
    out.true_dpe[i] = dpe;
  }
  out.true_el = el.value() / N;
  out.true_l_sq = out.true_el + il.value() / N;

  // binned true CL: plugin formula with Q in place of the empirical mean
  detail::KahanSum cl;
  for (int k = 0; k < data.k; ++k) {
    std::vector<double> z(data.size());
    for (int i = 0; i < data.size(); ++i) z[i] = data.records[i].prediction[k];
    auto sets = assign_bins(z, scheme);
    for (const auto& members : sets) {
      if (members.empty()) continue;
      detail::KahanSum qs, zs;
      for (int i : members) {
        qs.add(truth[i].q[k]);
        zs.add(z[i]);
      }
      double m = static_cast<double>(members.size());
      double dev = qs.value() / m - zs.value() / m;
      cl.add((m / N) * dev * dev);
    }
  }
  out.true_cl = cl.value();

  // per-group moments for the concentration-optimum analysis
  std::map<int, std::vector<int>> by_group;
  for (size_t i = 0; i < truth.size(); ++i)
    if (truth[i].group) by_group[*truth[i].group].push_back(static_cast<int>(i));
  for (const auto& [gid, members] : by_group) {
    GroupStats gs;
    gs.count = static_cast<int>(members.size());
    std::vector<double> mean_q(data.k, 0.0), mean_q2(data.k, 0.0), mean_z(data.k, 0.0);
    for (int i : members) {
      const auto& q = truth[i].q;
      const auto& z = data.records[i].prediction;
      double sq2 = 0.0, elg = 0.0;
      for (int k = 0; k < data.k; ++k) {
        mean_q[k] += q[k];
        mean_q2[k] += q[k] * q[k];
        mean_z[k] += z[k];
        sq2 += q[k] * q[k];
        double d = z[k] - q[k];
        elg += d * d;
      }
      gs.u_q += sq2;
      gs.el_g += elg;
    }
    gs.u_q /= gs.count;
    gs.el_g /= gs.count;
    for (int k = 0; k < data.k; ++k) {
      mean_q[k] /= gs.count;
      mean_q2[k] /= gs.count;
      mean_z[k] /= gs.count;
      gs.s_q += mean_q[k] * mean_q[k];
      gs.s_z += mean_z[k] * mean_z[k];
      gs.v_q += std::max(0.0, mean_q2[k] - mean_q[k] * mean_q[k]);
    }
    out.groups[gid] = gs;
  }

  if (mc_labels > 0) {
    std::mt19937_64 g(seed);
    std::int64_t disagreements = 0;
    std::int64_t draws = 0;
    for (int rep = 0; rep < mc_labels; ++rep) {
      for (const auto& t : truth) {
        int a = rng::categorical(g, t.q);
        int b = rng::categorical(g, t.q);
        disagreements += (a != b) ? 1 : 0;
        ++draws;
      }
    }
    double p = static_cast<double>(disagreements) / static_cast<double>(draws);
    out.mc_disagreement = p;
    out.mc_disagreement_se = std::sqrt(p * (1.0 - p) / static_cast<double>(draws));
  }
  return out;
}

}  // namespace lhcalib
