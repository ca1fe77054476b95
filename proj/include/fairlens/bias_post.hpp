#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairlens/bias_core.hpp"
#include "fairlens/tabular.hpp"
#include "fairlens/types.hpp"

namespace fairlens {

struct GroupConfusion {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::int64_t predicted_positive() const { return tp + fp; }  // n-hat_g1
  std::int64_t predicted_negative() const { return tn + fn; }  // n-hat_g0
  std::int64_t size() const { return tp + fp + tn + fn; }
};

struct ConfusionByGroup {
  GroupConfusion a, d;
  GroupLabelCounts counts;  // label counts of the same rows
};

// Parallel confusion reduction; all count identities hold exactly.
ConfusionByGroup confusion(const BinaryVector& labels, const BinaryVector& preds,
                           const GroupAssignment& groups, int workers = 1);

// Undefined (zero-denominator) metrics are nullopt; the report marks them
// instead of aborting the job.
using MetricValue = std::optional<double>;

// DPPL, DI, DCA, DCR, AD, RD, DAR, DRR, TE keyed by name. TE keeps the
// d-minus-a orientation, unlike the other difference metrics.
std::map<std::string, MetricValue> post_training_suite(const ConfusionByGroup& c);

// cddl with predictions substituted for labels.
ConditionalDisparity cddpl(const BinaryVector& preds,
                           const GroupAssignment& groups, const Column& strata);

// Dataset features encoded for nearest-neighbor distance: min-max normalized
// numerics (Euclidean part) and category codes (Hamming part). Missing cells
// are imputed with the column mean / mode.
struct EncodedFeatures {
  Eigen::MatrixXd numeric;       // rows x #numeric
  Eigen::MatrixXi categorical;   // rows x #categorical
  std::size_t rows() const { return static_cast<std::size_t>(numeric.rows()); }
};

EncodedFeatures encode_features(const TabularDataset& ds,
                                const std::vector<std::size_t>& feature_columns);

struct FlipTestConfig {
  int k = 5;  // neighbor count; must not exceed |group a|
};

// Counterfactual flip test: for every d row, the majority prediction of its k
// nearest a-neighbors (ties keep the row's own prediction); returns
// (F+ - F-) / n_d where F+ counts d rows predicted 0 with consensus 1 and F-
// the reverse. Distance = Euclidean over normalized numerics + Hamming over
// categoricals.
double flip_test(const EncodedFeatures& features, const BinaryVector& preds,
                 const GroupAssignment& groups, const FlipTestConfig& cfg,
                 int workers = 1);

}  // namespace fairlens
