#include "fairlens/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fairlens/engine.hpp"
#include "fairlens/util.hpp"

namespace fairlens {

TabularDataset oversample(const TabularDataset& source,
                          const OversampleSpec& spec) {
  if (source.row_count == 0) throw EmptyDataset("oversample source is empty");
  if (spec.target_rows == 0) {
    throw ConfigError("oversample target_rows must be positive");
  }
  TabularDataset out;
  out.header_present = source.header_present;
  out.row_count = spec.target_rows;
  out.columns.reserve(source.columns.size());
  for (const auto& col : source.columns) {
    Column c;
    c.name = col.name;
    c.kind = col.kind;
    c.values.reserve(spec.target_rows);
    out.columns.push_back(std::move(c));
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> pick(0, source.row_count - 1);
  for (std::size_t i = 0; i < spec.target_rows; ++i) {
    const std::size_t src = pick(rng);
    for (std::size_t j = 0; j < source.columns.size(); ++j) {
      out.columns[j].values.push_back(source.columns[j].values[src]);
    }
  }
  return out;
}

namespace {

std::string int_cell(long long v) { return std::to_string(v); }

std::string real_cell(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

TabularDataset make_credit_fixture(std::size_t rows, std::uint64_t seed) {
  if (rows < 20) throw ConfigError("credit fixture needs at least 20 rows");

  // Group and label marginals mirror the published study: ~96.3% foreign
  // workers, ~70% good credit overall, nearly equal good rates per group.
  const std::size_t n_foreign = static_cast<std::size_t>(
      std::llround(static_cast<double>(rows) * 0.963));
  const std::size_t n_domestic = rows - n_foreign;
  const std::size_t good_foreign = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_foreign) * 0.6999));
  const std::size_t good_domestic = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_domestic) * 0.7027));

  struct Person {
    int good;
    int foreign;
  };
  std::vector<Person> people;
  people.reserve(rows);
  for (std::size_t i = 0; i < n_foreign; ++i) {
    people.push_back({i < good_foreign ? 1 : 0, 1});
  }
  for (std::size_t i = 0; i < n_domestic; ++i) {
    people.push_back({i < good_domestic ? 1 : 0, 0});
  }
  std::mt19937_64 rng(seed);
  std::shuffle(people.begin(), people.end(), rng);

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  TabularDataset ds;
  ds.header_present = true;
  ds.row_count = rows;
  const std::vector<std::string> names = {
      "Class1Good2Bad", "ForeignWorker",   "A151",
      "A61",            "LoanAmount",      "CreditDuration",
      "Age",            "InstallmentRate", "NumExistingCredits"};
  for (const auto& name : names) {
    Column c;
    c.name = name;
    c.kind = ColumnKind::numeric;
    c.values.reserve(rows);
    ds.columns.push_back(std::move(c));
  }

  for (const Person& p : people) {
    const int bad = 1 - p.good;
    const int renting = unit(rng) < 0.5 - 0.12 * p.good ? 1 : 0;
    const int little_savings = unit(rng) < 0.30 + 0.30 * bad ? 1 : 0;
    // Foreign workers carry higher amounts and durations at matched labels,
    // which is what trained models pick up on.
    const double amount = std::max(
        250.0, 2700.0 + 1900.0 * bad + 1900.0 * p.foreign + 1200.0 * normal(rng));
    const double duration = std::clamp(
        15.0 + 9.0 * bad + 9.0 * p.foreign + 6.0 * normal(rng), 4.0, 72.0);
    const double age =
        std::clamp(34.0 + 3.0 * p.good + 9.0 * normal(rng), 19.0, 75.0);
    const int installment = 1 + static_cast<int>(unit(rng) * 4.0);
    const int credits = 1 + static_cast<int>(unit(rng) * 3.0);

    ds.columns[0].values.emplace_back(std::in_place_type<std::string>,
                                      int_cell(p.good ? 1 : 2));
    ds.columns[1].values.emplace_back(std::in_place_type<std::string>,
                                      int_cell(p.foreign));
    ds.columns[2].values.emplace_back(std::in_place_type<std::string>,
                                      int_cell(renting));
    ds.columns[3].values.emplace_back(std::in_place_type<std::string>,
                                      int_cell(little_savings));
    ds.columns[4].values.emplace_back(std::in_place_type<std::string>,
                                      real_cell(std::round(amount)));
    ds.columns[5].values.emplace_back(std::in_place_type<std::string>,
                                      real_cell(std::round(duration)));
    ds.columns[6].values.emplace_back(std::in_place_type<std::string>,
                                      real_cell(std::round(age)));
    ds.columns[7].values.emplace_back(std::in_place_type<std::string>,
                                      int_cell(installment));
    ds.columns[8].values.emplace_back(std::in_place_type<std::string>,
                                      int_cell(credits));
  }
  return ds;
}

TabularDataset load_or_make_german_credit(std::size_t fallback_rows,
                                          std::uint64_t seed) {
  std::vector<std::string> candidates;
  if (const char* env = std::getenv("FAIRLENS_GERMAN_CREDIT")) {
    candidates.push_back(env);
  }
  candidates.push_back("data/german_credit.csv");
  candidates.push_back("../data/german_credit.csv");
  candidates.push_back("../../data/german_credit.csv");
  for (const auto& path : candidates) {
    if (std::filesystem::exists(path)) {
      std::ifstream in(path, std::ios::binary);
      std::stringstream buffer;
      buffer << in.rdbuf();
      return parse_dataset(buffer.str(), DatasetFormat::csv, true);
    }
  }
  return make_credit_fixture(fallback_rows, seed);
}

LinearModel fit_logistic(const Eigen::MatrixXd& x, const BinaryVector& y,
                         int epochs, double learning_rate) {
  const Eigen::Index n = x.rows();
  const Eigen::Index m = x.cols();
  if (n != y.size()) throw LengthMismatch("feature rows and labels differ");

  // Standardize features for stable full-batch gradient descent.
  Eigen::VectorXd mean = x.colwise().mean();
  Eigen::VectorXd stddev(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double var =
        (x.col(j).array() - mean[j]).square().sum() / static_cast<double>(n);
    stddev[j] = std::sqrt(std::max(var, 1e-12));
  }
  Eigen::MatrixXd xs = (x.rowwise() - mean.transpose()).array().rowwise() /
                       stddev.transpose().array();

  Eigen::VectorXd yd(n);
  for (Eigen::Index i = 0; i < n; ++i) yd[i] = y[i] != 0 ? 1.0 : 0.0;

  Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
  double b = 0.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const Eigen::VectorXd z = (xs * w).array() + b;
    const Eigen::VectorXd p = 1.0 / (1.0 + (-z.array()).exp());
    const Eigen::VectorXd residual = p - yd;
    w -= learning_rate * (xs.transpose() * residual) / static_cast<double>(n);
    b -= learning_rate * residual.mean();
  }

  // Fold standardization back into raw-feature weights.
  LinearModel model;
  model.logistic = true;
  model.weights = w.array() / stddev.array();
  model.bias = b - (w.array() * mean.array() / stddev.array()).sum();
  return model;
}

ScalingResult scaling_run(const TabularDataset& ds, const std::string& config_json,
                          const std::vector<int>& workers,
                          const std::string& phase, std::uint64_t seed) {
  if (workers.empty()) throw ConfigError("workers list must not be empty");
  for (int w : workers) {
    if (w < 1) throw ConfigError("worker counts must be >= 1");
  }
  if (phase != "pre_bias" && phase != "post_bias" && phase != "shap") {
    throw ConfigError("phase must be pre_bias, post_bias or shap");
  }

  ScalingResult result;
  for (int w : workers) {
    TabularDataset copy = ds;
    const AnalysisConfig cfg = validate(config_json, copy);
    JobOptions opts;
    opts.workers = w;
    opts.seed = seed;
    opts.config_digest = digest_hex(config_json);
    opts.dataset_digest = digest_hex(write_csv(copy));

    const auto start = std::chrono::steady_clock::now();
    const AnalysisReport report = run_job(cfg, copy, opts);
    const auto stop = std::chrono::steady_clock::now();

    TimingRecord record;
    record.phase = phase;
    record.rows = ds.row_count;
    record.workers = w;
    record.wall_seconds =
        std::chrono::duration<double>(stop - start).count();
    result.records.push_back(record);
    result.digests.push_back(digest_hex(analysis_json(report)));
  }
  return result;
}

std::string timings_to_csv(const std::vector<TimingRecord>& records) {
  std::string csv = "phase,rows,workers,wall_seconds\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.wall_seconds);
    csv += r.phase + "," + std::to_string(r.rows) + "," +
           std::to_string(r.workers) + "," + buf + "\n";
  }
  return csv;
}

}  // namespace fairlens
