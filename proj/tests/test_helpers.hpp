#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lhcalib/core.hpp"

namespace lhtest {

// one record from a counts/prediction pair
inline lhcalib::InstanceRecord record(std::string id, std::vector<std::int64_t> counts,
                                      std::vector<double> probs) {
  lhcalib::InstanceRecord r;
  r.id = std::move(id);
  r.histogram = lhcalib::LabelHistogram(std::move(counts));
  r.prediction = lhcalib::ProbVector(std::move(probs));
  return r;
}

inline lhcalib::EvalDataset dataset(std::vector<lhcalib::InstanceRecord> records) {
  lhcalib::EvalDataset d;
  d.k = records.front().prediction.k();
  d.records = std::move(records);
  return d;
}

}  // namespace lhtest
