// lhcalib command line: synthetic data generation, metric evaluation,
// temperature scaling and alpha-calibration over JSONL datasets.

#include <cmath>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lhcalib/io.hpp"
#include "lhcalib/lhcalib.hpp"

namespace {

using lhcalib::io::json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;

struct SimulateArgs {
  std::string kind = "uniform-binary";
  int n_instances = 1000;
  int n_labels = 2;
  int k = 2;
  double concentration = 1.0;
  double distort_temperature = 1.0;
  std::uint64_t seed = 0;
  std::string out_data;
  std::string out_truth;
};

struct EvaluateArgs {
  std::string data;
  int bins = 15;
  std::string weight_policy = "uniform";
  std::string truth;
  std::string out;
};

struct AlphaFitArgs {
  std::string data;
  std::string mode = "pointwise";
  double lambda = lhcalib::kDefaultLambdaAlpha;
  double split = 0.8;
  std::uint64_t seed = 0;
  std::string out_model;
};

struct AlphaApplyArgs {
  std::string data;
  std::string model;
  std::string out_data;
  bool posterior_label = false;
  std::uint64_t seed = 0;
};

struct TsFitArgs {
  std::string data;
  double split = 0.8;
  std::uint64_t seed = 0;
  std::string out_model;
};

struct TsApplyArgs {
  std::string data;
  std::string model;
  std::string out_data;
};

struct ReliabilityArgs {
  std::string data;
  std::string target = "cpe";
  int klass = 0;
  int bins = 15;
  std::string out_csv;
};

void require_valid(const lhcalib::EvalDataset& data) {
  auto violations = lhcalib::validate_dataset(data);
  if (!violations.empty()) {
    for (const auto& v : violations)
      std::cerr << "validation: record '" << v.record_id << "': " << v.message << "\n";
    throw std::invalid_argument("dataset failed validation (" +
                                std::to_string(violations.size()) + " violations)");
  }
}

int run_simulate(const SimulateArgs& a) {
  lhcalib::SyntheticData syn;
  json config;
  config["command"] = "simulate";
  config["kind"] = a.kind;
  config["n_instances"] = a.n_instances;
  config["n_labels"] = a.n_labels;
  config["seed"] = a.seed;
  config["rng"] = "mt19937_64";
  if (a.kind == "uniform-binary") {
    syn = lhcalib::gen_uniform_binary(a.n_instances, a.n_labels, a.seed);
  } else if (a.kind == "dirichlet") {
    syn = lhcalib::gen_dirichlet_multiclass(a.n_instances, a.k, a.n_labels, a.concentration,
                                            a.seed);
    config["k"] = a.k;
    config["concentration"] = a.concentration;
  } else {
    throw std::invalid_argument("unknown kind '" + a.kind +
                                "' (expected uniform-binary or dirichlet)");
  }
  if (a.distort_temperature != 1.0) {
    syn.data = lhcalib::distort_predictor(syn.data, a.distort_temperature);
    config["distort_temperature"] = a.distort_temperature;
  }
  lhcalib::io::write_dataset_file(a.out_data, syn.data);
  if (!a.out_truth.empty()) lhcalib::io::write_truth_file(a.out_truth, syn.truth);
  lhcalib::io::write_json_file(a.out_data + ".config.json", config);
  return kExitOk;
}

json bins_to_json(const std::vector<lhcalib::BinCell>& bins) {
  json out = json::array();
  for (const auto& b : bins) {
    json cell;
    cell["count"] = b.count;
    cell["undersized"] = b.undersized;
    if (b.count > 0) {
      cell["mean_freq"] = b.mean_mu;
      cell["mean_pred"] = b.mean_z;
      cell["contribution"] = b.contribution;
    } else {
      cell["mean_freq"] = nullptr;
      cell["mean_pred"] = nullptr;
      cell["contribution"] = 0.0;
    }
    out.push_back(std::move(cell));
  }
  return out;
}

int run_evaluate(const EvaluateArgs& a) {
  auto data = lhcalib::io::read_dataset_file(a.data);
  require_valid(data);
  auto scheme = lhcalib::BinningScheme::equal_width(a.bins);
  lhcalib::WeightPolicy policy;
  if (a.weight_policy == "uniform")
    policy = lhcalib::WeightPolicy::Uniform;
  else if (a.weight_policy == "labels")
    policy = lhcalib::WeightPolicy::LabelCount;
  else
    throw std::invalid_argument("unknown weight policy '" + a.weight_policy + "'");

  json report;
  std::vector<std::string> flags;
  report["meta"] = {{"n", data.size()},
                    {"k", data.k},
                    {"bins", a.bins},
                    {"weight_policy", a.weight_policy},
                    {"min_labels", data.min_labels()}};

  auto r1 = lhcalib::evaluate_order1(data, scheme, policy);
  json order1;
  order1["l_sq_unbiased"] = r1.l_sq_unbiased;
  order1["el_plugin"] = r1.el_plugin;
  order1["cl_plugin"] = r1.cl_plugin;
  order1["dl_plugin"] = r1.dl_plugin;
  order1["accuracy"] = r1.accuracy;
  bool multi = data.min_labels() >= 2;
  if (multi) {
    order1["el_unbiased"] = r1.el_unbiased;
    order1["cl_debiased"] = r1.cl_debiased;
    order1["dl_debiased"] = r1.dl_debiased;
    order1["ce_debiased"] = r1.ce_debiased;
    if (r1.ce_clamped) flags.push_back("ce_debiased clamped at 0 (negative CL estimate)");
  } else {
    order1["el_unbiased"] = nullptr;
    order1["cl_debiased"] = nullptr;
    order1["dl_debiased"] = nullptr;
    order1["ce_debiased"] = nullptr;
    flags.push_back("debiased order-1 metrics need >= 2 labels per instance");
  }
  json per_class = json::array();
  for (int k = 0; k < data.k; ++k) {
    json c;
    c["class"] = k;
    c["cl_plugin"] = r1.cl_per_class[k].total;
    c["dl_plugin"] = r1.dl_per_class[k].total;
    c["bins"] = bins_to_json(r1.cl_per_class[k].bins);
    per_class.push_back(std::move(c));
  }
  order1["per_class"] = std::move(per_class);
  for (int k = 0; k < data.k; ++k)
    for (const auto& b : r1.cl_per_class[k].bins)
      if (b.undersized && b.count > 0) {
        flags.push_back("undersized bins present (debiased corrections skipped)");
        k = data.k;
        break;
      }
  report["order1"] = std::move(order1);

  json order2;
  if (multi) {
    auto stat = lhcalib::disagreement_statistic();
    std::vector<double> preds(data.records.size());
    for (size_t i = 0; i < data.records.size(); ++i) {
      const auto& r = data.records[i];
      preds[i] = r.dpe ? *r.dpe : lhcalib::point_estimate_dpe(r.prediction);
    }
    order2["l_phi"] = lhcalib::l_phi_unbiased(data, stat, preds);
    auto plugin = lhcalib::cl_phi(data, stat, preds, scheme, lhcalib::EstimatorMode::Plugin);
    auto debiased =
        lhcalib::cl_phi(data, stat, preds, scheme, lhcalib::EstimatorMode::Debiased);
    order2["cl_phi_plugin"] = plugin.total;
    order2["cl_phi_debiased"] = debiased.total;
    order2["ce_phi"] = debiased.ce_phi;
    if (debiased.ce_clamped) flags.push_back("ce_phi clamped at 0 (negative CL estimate)");
  } else {
    order2["l_phi"] = nullptr;
    order2["cl_phi_plugin"] = nullptr;
    order2["cl_phi_debiased"] = nullptr;
    order2["ce_phi"] = nullptr;
    flags.push_back("order-2 metrics need >= 2 labels per instance");
  }
  report["order2"] = std::move(order2);

  if (!a.truth.empty()) {
    auto truth = lhcalib::io::read_truth_file(a.truth);
    auto oracle = lhcalib::true_metrics_oracle(data, truth, scheme);
    json t;
    t["true_el"] = oracle.true_el;
    t["true_l_sq"] = oracle.true_l_sq;
    t["true_cl"] = oracle.true_cl;
    t["delta_el_plugin"] = r1.el_plugin - oracle.true_el;
    t["delta_l_sq_unbiased"] = r1.l_sq_unbiased - oracle.true_l_sq;
    if (multi) {
      t["delta_el_unbiased"] = r1.el_unbiased - oracle.true_el;
      t["delta_cl_debiased"] = r1.cl_debiased - oracle.true_cl;
    }
    report["oracle"] = std::move(t);
  }

  report["flags"] = flags;
  if (a.out.empty())
    std::cout << report.dump(2) << "\n";
  else
    lhcalib::io::write_json_file(a.out, report);
  return kExitOk;
}

int run_alpha_fit(const AlphaFitArgs& a) {
  auto data = lhcalib::io::read_dataset_file(a.data);
  require_valid(data);
  lhcalib::AlphaModel model;
  if (a.mode == "pointwise")
    model = lhcalib::fit_alpha_pointwise(data, a.lambda);
  else if (a.mode == "featurized")
    model = lhcalib::fit_alpha_featurized(data, a.lambda, a.split, a.seed);
  else
    throw std::invalid_argument("unknown mode '" + a.mode + "'");
  json j = lhcalib::io::alpha_model_to_json(model);
  j["config"] = {{"lambda_alpha", a.lambda}, {"split_fraction", a.split}, {"seed", a.seed}};
  lhcalib::io::write_json_file(a.out_model, j);
  std::cerr << "alpha-fit: final objective " << lhcalib::dirmult_nll(data, model) << "\n";
  return kExitOk;
}

void write_config_sidecar(const std::string& out_path, json config) {
  lhcalib::io::write_json_file(out_path + ".config.json", std::move(config));
}

int run_alpha_apply(const AlphaApplyArgs& a) {
  auto data = lhcalib::io::read_dataset_file(a.data);
  require_valid(data);
  auto model = lhcalib::io::alpha_model_from_json(lhcalib::io::read_json_file(a.model));
  std::mt19937_64 rng(a.seed);
  for (auto& r : data.records) {
    double alpha0 = model.alpha0_for(r);
    r.alpha0 = alpha0;
    r.dpe = lhcalib::dpe_from_alpha(r.prediction, alpha0);
    if (a.posterior_label) {
      auto n = r.histogram.total();
      if (n < 2)
        throw std::invalid_argument("posterior-label: record '" + r.id +
                                    "' needs >= 2 labels (one is consumed)");
      // histograms store counts, not ordered labels: sample the consumed
      // annotation uniformly from the counts
      std::uint64_t pick = rng() % static_cast<std::uint64_t>(n);
      int consumed = 0;
      std::int64_t acc = 0;
      for (int k = 0; k < r.histogram.k(); ++k) {
        acc += r.histogram.counts[k];
        if (static_cast<std::int64_t>(pick) < acc) {
          consumed = k;
          break;
        }
      }
      r.prediction = lhcalib::posterior_cpe(r.prediction, alpha0, consumed);
      --r.histogram.counts[consumed];
      r.dpe = lhcalib::dpe_from_alpha(r.prediction, alpha0);
    }
  }
  lhcalib::io::write_dataset_file(a.out_data, data);
  write_config_sidecar(a.out_data, {{"command", "alpha-apply"},
                                    {"model", a.model},
                                    {"posterior_label", a.posterior_label},
                                    {"seed", a.seed}});
  return kExitOk;
}

int run_ts_fit(const TsFitArgs& a) {
  auto data = lhcalib::io::read_dataset_file(a.data);
  require_valid(data);
  auto model = lhcalib::temperature_fit(data, a.split, a.seed);
  json j = lhcalib::io::temperature_model_to_json(model);
  if (std::isfinite(model.held_out_nll)) j["held_out_nll"] = model.held_out_nll;
  j["config"] = {{"split_fraction", a.split}, {"seed", a.seed}};
  lhcalib::io::write_json_file(a.out_model, j);
  return kExitOk;
}

int run_ts_apply(const TsApplyArgs& a) {
  auto data = lhcalib::io::read_dataset_file(a.data);
  require_valid(data);
  auto model = lhcalib::io::temperature_model_from_json(lhcalib::io::read_json_file(a.model));
  for (auto& r : data.records) {
    if (!r.logits)
      throw std::invalid_argument("ts-apply: record '" + r.id + "' has no logits");
    r.prediction = lhcalib::apply_temperature(*r.logits, model);
  }
  lhcalib::io::write_dataset_file(a.out_data, data);
  write_config_sidecar(a.out_data, {{"command", "ts-apply"}, {"model", a.model}, {"t", model.t}});
  return kExitOk;
}

int run_reliability(const ReliabilityArgs& a) {
  auto data = lhcalib::io::read_dataset_file(a.data);
  require_valid(data);
  auto scheme = lhcalib::BinningScheme::equal_width(a.bins);
  std::vector<double> values(data.records.size());
  std::vector<double> targets(data.records.size());
  if (a.target == "cpe") {
    if (a.klass < 0 || a.klass >= data.k)
      throw std::invalid_argument("class index out of range");
    for (size_t i = 0; i < data.records.size(); ++i) {
      values[i] = data.records[i].prediction[a.klass];
      targets[i] = data.records[i].histogram.mean(a.klass);
    }
  } else if (a.target == "disagreement") {
    if (data.min_labels() < 2)
      throw std::invalid_argument(
          "disagreement reliability needs >= 2 labels per instance; "
          "regenerate or filter the dataset first");
    auto stat = lhcalib::disagreement_statistic();
    for (size_t i = 0; i < data.records.size(); ++i) {
      const auto& r = data.records[i];
      values[i] = r.dpe ? *r.dpe : lhcalib::point_estimate_dpe(r.prediction);
      targets[i] = lhcalib::u_statistic_mean(r.histogram, stat);
    }
  } else {
    throw std::invalid_argument("unknown target '" + a.target +
                                "' (expected cpe or disagreement)");
  }
  auto bins = lhcalib::reliability_curve(values, targets, scheme);
  lhcalib::io::write_reliability_csv(a.out_csv, bins);
  json config = {{"command", "reliability"}, {"target", a.target}, {"bins", a.bins}};
  if (a.target == "cpe") config["class"] = a.klass;
  write_config_sidecar(a.out_csv, std::move(config));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evaluation and post-hoc calibration of probabilistic classifiers "
               "under label histograms"};
  app.require_subcommand(1);

  // evaluation kernels are deterministic sequential reductions; the cap
  // exists so callers can pin resource usage, and results never depend on it
  int threads = 1;
  app.add_option("--threads", threads, "upper bound on worker threads (default 1)")
      ->check(CLI::PositiveNumber);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Generate a synthetic dataset with known Q");
  c_sim->add_option("--kind", sim.kind, "uniform-binary | dirichlet");
  c_sim->add_option("--n", sim.n_instances, "number of instances");
  c_sim->add_option("--labels", sim.n_labels, "annotations per instance");
  c_sim->add_option("--k", sim.k, "class count (dirichlet)");
  c_sim->add_option("--concentration", sim.concentration, "Dirichlet concentration");
  c_sim->add_option("--distort-temperature", sim.distort_temperature,
                    "soften (>1) or sharpen (<1) the perfect predictor");
  c_sim->add_option("--seed", sim.seed, "RNG seed");
  c_sim->add_option("--out-data", sim.out_data, "output dataset JSONL")->required();
  c_sim->add_option("--out-truth", sim.out_truth, "output truth JSONL");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Compute order-1 and order-2 metrics");
  c_ev->add_option("--data", ev.data, "dataset JSONL")->required();
  c_ev->add_option("--bins", ev.bins, "equal-width bin count (default 15)");
  c_ev->add_option("--weight-policy", ev.weight_policy, "uniform | labels");
  c_ev->add_option("--truth", ev.truth, "truth JSONL for oracle deltas");
  c_ev->add_option("--out", ev.out, "report JSON path (stdout if omitted)");

  AlphaFitArgs af;
  auto* c_af = app.add_subcommand("alpha-fit", "Fit a Dirichlet concentration model");
  c_af->add_option("--data", af.data, "dataset JSONL")->required();
  c_af->add_option("--mode", af.mode, "pointwise | featurized");
  c_af->add_option("--lambda", af.lambda, "regularization coefficient (default 0.005)");
  c_af->add_option("--split", af.split, "calibration split fraction (featurized)");
  c_af->add_option("--seed", af.seed, "split shuffle seed");
  c_af->add_option("--out-model", af.out_model, "model JSON path")->required();

  AlphaApplyArgs aa;
  auto* c_aa = app.add_subcommand("alpha-apply", "Attach alpha0/DPE (and posteriors)");
  c_aa->add_option("--data", aa.data, "dataset JSONL")->required();
  c_aa->add_option("--model", aa.model, "alpha model JSON")->required();
  c_aa->add_option("--out-data", aa.out_data, "augmented dataset JSONL")->required();
  c_aa->add_flag("--posterior-label", aa.posterior_label,
                 "consume one annotation per instance and write posterior CPEs");
  c_aa->add_option("--seed", aa.seed, "seed for the consumed-label choice");

  TsFitArgs tf;
  auto* c_tf = app.add_subcommand("ts-fit", "Fit temperature scaling on logits");
  c_tf->add_option("--data", tf.data, "dataset JSONL with logits")->required();
  c_tf->add_option("--split", tf.split, "held-out fraction for reporting");
  c_tf->add_option("--seed", tf.seed, "split shuffle seed");
  c_tf->add_option("--out-model", tf.out_model, "model JSON path")->required();

  TsApplyArgs ta;
  auto* c_ta = app.add_subcommand("ts-apply", "Rewrite probs with tempered softmax");
  c_ta->add_option("--data", ta.data, "dataset JSONL with logits")->required();
  c_ta->add_option("--model", ta.model, "temperature model JSON")->required();
  c_ta->add_option("--out-data", ta.out_data, "output dataset JSONL")->required();

  ReliabilityArgs rel;
  auto* c_rel = app.add_subcommand("reliability", "Export a reliability curve CSV");
  c_rel->add_option("--data", rel.data, "dataset JSONL")->required();
  c_rel->add_option("--target", rel.target, "cpe | disagreement");
  c_rel->add_option("--class", rel.klass, "class index (cpe target)");
  c_rel->add_option("--bins", rel.bins, "equal-width bin count (default 15)");
  c_rel->add_option("--out-csv", rel.out_csv, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_sim) return run_simulate(sim);
    if (*c_ev) return run_evaluate(ev);
    if (*c_af) return run_alpha_fit(af);
    if (*c_aa) return run_alpha_apply(aa);
    if (*c_tf) return run_ts_fit(tf);
    if (*c_ta) return run_ts_apply(ta);
    if (*c_rel) return run_reliability(rel);
  } catch (const lhcalib::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
