#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairlens/model_client.hpp"
#include "fairlens/tabular.hpp"
#include "fairlens/types.hpp"

namespace fairlens {

struct OversampleSpec {
  std::size_t target_rows = 0;
  std::uint64_t seed = 0;
};

// Row multiset drawn uniformly with replacement; seed-deterministic.
TabularDataset oversample(const TabularDataset& source, const OversampleSpec& spec);

// Synthetic stand-in for the German credit study: 1000-scale credit dataset
// with columns Class1Good2Bad (1 = good), ForeignWorker (1 = foreign, the
// disadvantaged facet), A151 (renting), A61 (little savings), LoanAmount,
// CreditDuration, Age, InstallmentRate, NumExistingCredits. Group marginals
// match the published study (class imbalance about -0.93, label rates nearly
// equal across groups); foreign workers carry systematically higher amounts
// and durations at matched labels, so trained models under-predict them.
TabularDataset make_credit_fixture(std::size_t rows, std::uint64_t seed);

// Uses data/german_credit.csv if the fetch script has cached it, otherwise
// the synthetic fixture (offline fallback).
TabularDataset load_or_make_german_credit(std::size_t fallback_rows = 1000,
                                          std::uint64_t seed = 7);

// Plain gradient-descent logistic regression on standardized features,
// returned as weights on the raw features. Fixture tooling, not a product
// training path.
LinearModel fit_logistic(const Eigen::MatrixXd& x, const BinaryVector& y,
                         int epochs = 400, double learning_rate = 0.5);

struct TimingRecord {
  std::string phase;  // pre_bias | post_bias | shap
  std::size_t rows = 0;
  int workers = 0;
  double wall_seconds = 0.0;
};

struct ScalingResult {
  std::vector<TimingRecord> records;
  std::vector<std::string> digests;  // analysis.json digest per worker count
};

// Runs the phase-restricted job once per worker count, timing each run and
// collecting the report digests (identical digests = parallel determinism).
ScalingResult scaling_run(const TabularDataset& ds, const std::string& config_json,
                          const std::vector<int>& workers,
                          const std::string& phase, std::uint64_t seed);

std::string timings_to_csv(const std::vector<TimingRecord>& records);

}  // namespace fairlens
