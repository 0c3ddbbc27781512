#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lhcalib/alpha.hpp"
#include "lhcalib/core.hpp"
#include "lhcalib/order2.hpp"
#include "lhcalib/synthetic.hpp"
#include "lhcalib/temperature.hpp"

namespace lhcalib {
namespace io {

using nlohmann::json;

inline std::vector<double> to_doubles(const json& arr, const std::string& context) {
  if (!arr.is_array()) throw std::runtime_error(context + ": expected an array");
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw std::runtime_error(context + ": expected a number");
    out.push_back(v.get<double>());
  }
  return out;
}

/// Parses one JSONL dataset line. Line numbers are 1-based and reported
/// in every error.
inline InstanceRecord parse_record(const std::string& line, int line_no, int expected_k) {
  std::string where = "line " + std::to_string(line_no);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(where + ": invalid JSON (" + e.what() + ")");
  }
  InstanceRecord r;
  if (!j.contains("id") || !j["id"].is_string())
    throw std::runtime_error(where + ": missing string field 'id'");
  r.id = j["id"].get<std::string>();
  if (!j.contains("probs")) throw std::runtime_error(where + ": missing field 'probs'");
  r.prediction = ProbVector(to_doubles(j["probs"], where + " 'probs'"));
  r.prediction.normalize_or_throw(where);
  if (!j.contains("labels")) throw std::runtime_error(where + ": missing field 'labels'");
  {
    std::vector<std::int64_t> counts;
    for (const auto& v : j["labels"]) {
      if (!v.is_number_integer())
        throw std::runtime_error(where + ": 'labels' must hold integers");
      counts.push_back(v.get<std::int64_t>());
    }
    r.histogram = LabelHistogram(std::move(counts));
  }
  int k = r.prediction.k();
  if (expected_k > 0 && k != expected_k)
    throw std::runtime_error(where + ": class count " + std::to_string(k) +
                             " differs from dataset-wide " + std::to_string(expected_k));
  if (r.histogram.k() != k)
    throw std::runtime_error(where + ": 'labels' length differs from 'probs'");
  if (j.contains("logits")) r.logits = to_doubles(j["logits"], where + " 'logits'");
  if (j.contains("features")) r.features = to_doubles(j["features"], where + " 'features'");
  if (j.contains("ensemble")) {
    std::vector<ProbVector> members;
    for (const auto& m : j["ensemble"]) {
      ProbVector p(to_doubles(m, where + " 'ensemble'"));
      p.normalize_or_throw(where + " 'ensemble'");
      members.push_back(std::move(p));
    }
    r.ensemble = std::move(members);
  }
  if (j.contains("ensemble_alpha0"))
    r.ensemble_alpha0 = to_doubles(j["ensemble_alpha0"], where + " 'ensemble_alpha0'");
  if (j.contains("alpha0")) r.alpha0 = j["alpha0"].get<double>();
  if (j.contains("dpe")) r.dpe = j["dpe"].get<double>();
  return r;
}

inline EvalDataset read_dataset(std::istream& in) {
  EvalDataset data;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    data.records.push_back(parse_record(line, line_no, data.k));
    if (data.k == 0) data.k = data.records.back().prediction.k();
  }
  if (data.records.empty()) throw std::runtime_error("dataset is empty");
  return data;
}

inline EvalDataset read_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  return read_dataset(in);
}

inline json record_to_json(const InstanceRecord& r) {
  json j;
  j["id"] = r.id;
  j["probs"] = r.prediction.p;
  j["labels"] = r.histogram.counts;
  if (r.logits) j["logits"] = *r.logits;
  if (r.features) j["features"] = *r.features;
  if (r.ensemble) {
    json members = json::array();
    for (const auto& m : *r.ensemble) members.push_back(m.p);
    j["ensemble"] = std::move(members);
  }
  if (r.ensemble_alpha0) j["ensemble_alpha0"] = *r.ensemble_alpha0;
  if (r.alpha0) j["alpha0"] = *r.alpha0;
  if (r.dpe) j["dpe"] = *r.dpe;
  return j;
}

inline void write_dataset(std::ostream& out, const EvalDataset& data) {
  for (const auto& r : data.records) out << record_to_json(r).dump() << "\n";
}

inline void write_dataset_file(const std::string& path, const EvalDataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  write_dataset(out, data);
}

inline void write_truth_file(const std::string& path,
                             const std::vector<GroundTruthRecord>& truth) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  for (const auto& t : truth) {
    json j;
    j["id"] = t.id;
    j["q"] = t.q.p;
    if (t.group) j["group"] = *t.group;
    out << j.dump() << "\n";
  }
}

inline std::vector<GroundTruthRecord> read_truth_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open truth file: " + path);
  std::vector<GroundTruthRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("truth line " + std::to_string(line_no) + ": invalid JSON (" +
                               e.what() + ")");
    }
    GroundTruthRecord t;
    t.id = j.at("id").get<std::string>();
    t.q = ProbVector(to_doubles(j.at("q"), "truth 'q'"));
    t.q.normalize_or_throw("truth line " + std::to_string(line_no));
    if (j.contains("group")) t.group = j["group"].get<int>();
    out.push_back(std::move(t));
  }
  return out;
}

inline json alpha_model_to_json(const AlphaModel& m) {
  json j;
  j["mode"] = m.mode == AlphaMode::Pointwise ? "pointwise" : "featurized";
  j["lambda_alpha"] = m.lambda_alpha;
  j["bounds"] = {m.log_alpha_lo, m.log_alpha_hi};
  if (m.mode == AlphaMode::Featurized) {
    j["theta"] = m.theta;
    j["bias"] = m.bias;
  } else {
    json entries = json::array();
    for (const auto& e : m.per_instance) {
      entries.push_back(
          {{"id", e.id}, {"log_alpha0", e.log_alpha0}, {"boundary_flag", e.boundary}});
    }
    j["per_instance"] = std::move(entries);
  }
  return j;
}

inline AlphaModel alpha_model_from_json(const json& j) {
  AlphaModel m;
  std::string mode = j.at("mode").get<std::string>();
  if (mode == "pointwise")
    m.mode = AlphaMode::Pointwise;
  else if (mode == "featurized")
    m.mode = AlphaMode::Featurized;
  else
    throw std::runtime_error("alpha model: unknown mode '" + mode + "'");
  m.lambda_alpha = j.at("lambda_alpha").get<double>();
  if (j.contains("bounds")) {
    m.log_alpha_lo = j["bounds"][0].get<double>();
    m.log_alpha_hi = j["bounds"][1].get<double>();
  }
  if (m.mode == AlphaMode::Featurized) {
    m.theta = to_doubles(j.at("theta"), "alpha model 'theta'");
    m.bias = j.at("bias").get<double>();
  } else {
    for (const auto& e : j.at("per_instance")) {
      AlphaModel::PointEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.log_alpha0 = e.at("log_alpha0").get<double>();
      entry.boundary = e.value("boundary_flag", false);
      m.per_instance.push_back(std::move(entry));
    }
  }
  return m;
}

inline json temperature_model_to_json(const TemperatureModel& m) {
  json j;
  j["t"] = m.t;
  if (m.boundary) j["boundary_flag"] = true;
  return j;
}

inline TemperatureModel temperature_model_from_json(const json& j) {
  TemperatureModel m;
  m.t = j.at("t").get<double>();
  m.boundary = j.value("boundary_flag", false);
  if (!(m.t > 0.0)) throw std::runtime_error("temperature model: t must be positive");
  return m;
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << j.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  json j;
  in >> j;
  return j;
}

inline void write_reliability_csv(const std::string& path,
                                  const std::vector<ReliabilityBin>& bins) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << "bin_lo,bin_hi,mean_pred,mean_freq,count\n";
  out.precision(17);
  for (const auto& b : bins) {
    out << b.lo << "," << b.hi << ",";
    if (b.mean_pred)
      out << *b.mean_pred;
    out << ",";
    if (b.mean_freq)
      out << *b.mean_freq;
    out << "," << b.count << "\n";
  }
}

}  // namespace io
}  // namespace lhcalib
