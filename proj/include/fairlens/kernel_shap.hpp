#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairlens/model_client.hpp"
#include "fairlens/tabular.hpp"

namespace fairlens {

// Scores a batch of rows with the black-box model; one real per row.
using ScoreFn = std::function<Eigen::VectorXd(const std::vector<Row>&)>;

// Background rows that define feature absence. v(S) averages the model output
// over these rows with the coalition's features substituted in.
struct Baseline {
  enum class Source { user_file, auto_generated };
  std::vector<Row> rows;
  Source source = Source::auto_generated;
};

// Single-row baseline from column means (numeric) / modes (categorical).
Baseline auto_baseline(const TabularDataset& ds,
                       const std::vector<std::size_t>& feature_cols);

// Baseline from a CSV file; columns matched to feature names when the file
// carries a header naming them all, positional otherwise.
Baseline load_baseline_csv(const std::string& path,
                           const std::vector<std::string>& feature_names);

enum class ShapMode { automatic, exact, sampled };
enum class AggMethod { mean_abs, median, mean };

struct ShapConfig {
  int num_samples = 3000;  // coalition masks drawn per example (sampled mode)
  ShapMode mode = ShapMode::automatic;
  std::uint64_t seed = 0;
  AggMethod agg = AggMethod::mean_abs;
};

// Shapley kernel weight for a coalition of size s out of m features.
double shapley_kernel_weight(int m, int s);

struct ShapSolveInfo {
  bool ridge_fallback = false;  // singular system solved with ridge 1e-10
  std::size_t model_calls = 0;  // rows sent through the model
};

// Exact Shapley values by coalition enumeration; m <= 20.
Eigen::VectorXd exact_shapley(const Row& row, const ScoreFn& model,
                              const Baseline& baseline,
                              ShapSolveInfo* info = nullptr);

// Kernel-weighted regression approximation. Draws paired coalition masks with
// probability proportional to the Shapley kernel, enumerating whole coalition
// sizes while the budget allows (all 2^M-2 masks when num_samples covers
// them), and solves the weighted least-squares system under the efficiency
// constraint sum(phi) = f(x) - base. Deterministic for a fixed seed.
Eigen::VectorXd kernel_shap(const Row& row, const ScoreFn& model,
                            const Baseline& baseline, const ShapConfig& cfg,
                            ShapSolveInfo* info = nullptr,
                            std::optional<double> cached_base = std::nullopt);

struct AttributionResult {
  Eigen::MatrixXd local;  // examples x M
  double base_value = 0.0;
  Eigen::VectorXd global;  // length M, agg over columns
  AggMethod agg = AggMethod::mean_abs;
  std::vector<std::string> feature_names;
  int ridge_fallbacks = 0;
};

// Per-example explanation as a parallel map (per-example RNG streams derived
// from the seed, so worker count never changes results), then a column-wise
// aggregation into global importance.
AttributionResult explain_dataset(const TabularDataset& ds,
                                  const std::vector<std::size_t>& feature_cols,
                                  const ScoreFn& model, const Baseline& baseline,
                                  const ShapConfig& cfg, int workers = 1);

Eigen::VectorXd aggregate_importance(const Eigen::MatrixXd& local, AggMethod agg);

}  // namespace fairlens
