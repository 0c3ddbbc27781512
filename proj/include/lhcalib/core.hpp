#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lhcalib {

/// Raised when an evaluation turns non-finite; maps to exit code 2 in
/// the CLI, as distinct from validation failures (exit code 1).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kSimplexTol = 1e-9;
// deviations up to this are silently renormalized on ingest
constexpr double kRenormTol = 1e-6;
// predicted mass floor before likelihood evaluation; an observed count on
// a zero-probability class would otherwise make the NLL infinite
constexpr double kProbFloor = 1e-8;

namespace detail {

// Kahan-Babuska compensated accumulator; keeps reductions stable
// regardless of summation order.
class KahanSum {
public:
  void add(double x) {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      c_ += (sum_ - t) + x;
    else
      c_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + c_; }

private:
  double sum_ = 0.0;
  double c_ = 0.0;
};

inline double sum(const std::vector<double>& v) {
  KahanSum s;
  for (double x : v) s.add(x);
  return s.value();
}

}  // namespace detail

/// Point on the (K-1)-simplex.
struct ProbVector {
  std::vector<double> p;

  ProbVector() = default;
  explicit ProbVector(std::vector<double> values) : p(std::move(values)) {}

  int k() const { return static_cast<int>(p.size()); }
  double operator[](int i) const { return p[i]; }

  bool on_simplex(double tol = kSimplexTol) const {
    double s = detail::sum(p);
    if (std::abs(s - 1.0) > tol) return false;
    for (double x : p)
      if (x < -tol || x > 1.0 + tol) return false;
    return true;
  }

  // Renormalizes small deviations; throws beyond kRenormTol.
  void normalize_or_throw(const std::string& context) {
    double s = detail::sum(p);
    if (std::abs(s - 1.0) > kRenormTol)
      throw std::invalid_argument(context + ": probability vector sums to " +
                                  std::to_string(s));
    for (double& x : p) {
      if (x < -kRenormTol || x > 1.0 + kRenormTol)
        throw std::invalid_argument(context + ": probability entry out of [0,1]");
      x = std::clamp(x, 0.0, 1.0);
    }
    s = detail::sum(p);
    if (s <= 0.0) throw std::invalid_argument(context + ": zero-mass vector");
    for (double& x : p) x /= s;
  }

  int argmax() const {
    // ties broken by lowest index
    int best = 0;
    for (int i = 1; i < k(); ++i)
      if (p[i] > p[best]) best = i;
    return best;
  }
};

/// Per-instance annotation counts over K classes.
struct LabelHistogram {
  std::vector<std::int64_t> counts;

  LabelHistogram() = default;
  explicit LabelHistogram(std::vector<std::int64_t> c) : counts(std::move(c)) {}

  int k() const { return static_cast<int>(counts.size()); }

  std::int64_t total() const {
    std::int64_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }

  /// Empirical class frequency y_k / n.
  double mean(int klass) const {
    return static_cast<double>(counts[klass]) / static_cast<double>(total());
  }

  int argmax() const {
    int best = 0;
    for (int i = 1; i < k(); ++i)
      if (counts[i] > counts[best]) best = i;
    return best;
  }
};

struct InstanceRecord {
  std::string id;
  ProbVector prediction;
  LabelHistogram histogram;
  std::optional<std::vector<double>> logits;
  std::optional<std::vector<double>> features;
  std::optional<std::vector<ProbVector>> ensemble;
  std::optional<std::vector<double>> ensemble_alpha0;
  // attached after alpha-calibration
  std::optional<double> alpha0;
  std::optional<double> dpe;
};

struct EvalDataset {
  std::vector<InstanceRecord> records;
  int k = 0;

  int size() const { return static_cast<int>(records.size()); }

  std::int64_t min_labels() const {
    std::int64_t m = std::numeric_limits<std::int64_t>::max();
    for (const auto& r : records) m = std::min(m, r.histogram.total());
    return records.empty() ? 0 : m;
  }

  std::int64_t total_labels() const {
    std::int64_t n = 0;
    for (const auto& r : records) n += r.histogram.total();
    return n;
  }
};

/// Partition of [0,1]: right-open bins except the last, which is closed.
struct BinningScheme {
  std::vector<double> edges;  // zeta_0 = 0 < ... < zeta_B = 1

  static BinningScheme equal_width(int bins) {
    if (bins < 1) throw std::invalid_argument("BinningScheme: bins must be >= 1");
    BinningScheme s;
    s.edges.resize(bins + 1);
    for (int b = 0; b <= bins; ++b)
      s.edges[b] = static_cast<double>(b) / static_cast<double>(bins);
    s.edges.front() = 0.0;
    s.edges.back() = 1.0;
    return s;
  }

  int bins() const { return static_cast<int>(edges.size()) - 1; }

  int bin_of(double v) const {
    if (v >= edges.back()) return bins() - 1;
    // first edge strictly greater than v
    auto it = std::upper_bound(edges.begin(), edges.end(), v);
    int b = static_cast<int>(it - edges.begin()) - 1;
    return std::clamp(b, 0, bins() - 1);
  }
};

struct Violation {
  std::string record_id;
  std::string message;
};

/// Diagnostic check of every record against the type invariants.
inline std::vector<Violation> validate_dataset(const EvalDataset& data) {
  std::vector<Violation> out;
  if (data.records.empty()) {
    out.push_back({"", "dataset is empty"});
    return out;
  }
  for (const auto& r : data.records) {
    if (r.prediction.k() != data.k)
      out.push_back({r.id, "prediction has wrong class count"});
    if (r.histogram.k() != data.k)
      out.push_back({r.id, "histogram has wrong class count"});
    for (auto c : r.histogram.counts)
      if (c < 0) out.push_back({r.id, "negative annotation count"});
    if (r.histogram.total() < 1)
      out.push_back({r.id, "histogram is empty (n >= 1 required)"});
    if (!r.prediction.on_simplex(kRenormTol))
      out.push_back({r.id, "prediction is not on the simplex"});
    if (r.logits && static_cast<int>(r.logits->size()) != data.k)
      out.push_back({r.id, "logits have wrong class count"});
    if (r.ensemble)
      for (const auto& m : *r.ensemble)
        if (m.k() != data.k)
          out.push_back({r.id, "ensemble member has wrong class count"});
    if (r.ensemble_alpha0 && r.ensemble &&
        r.ensemble_alpha0->size() != r.ensemble->size())
      out.push_back({r.id, "ensemble_alpha0 length mismatch"});
    if (r.alpha0 && *r.alpha0 <= 0.0)
      out.push_back({r.id, "alpha0 must be positive"});
  }
  return out;
}

/// Assigns each value to exactly one bin; returns per-bin index sets
/// (order-preserving within bins).
inline std::vector<std::vector<int>> assign_bins(const std::vector<double>& values,
                                                 const BinningScheme& scheme) {
  std::vector<std::vector<int>> out(scheme.bins());
  for (int i = 0; i < static_cast<int>(values.size()); ++i) {
    double v = values[i];
    if (v < 0.0 || v > 1.0)
      throw std::invalid_argument("assign_bins: value outside [0,1]");
    out[scheme.bin_of(v)].push_back(i);
  }
  return out;
}

}  // namespace lhcalib
