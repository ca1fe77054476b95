#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "fairlens/tabular.hpp"
#include "fairlens/types.hpp"

namespace fairlens {

// One dataset/synthetic row as raw cells, in feature-column order.
using Row = std::vector<Cell>;

// A selector addresses a response field by position (CSV) or name (JSONLines).
using FieldSelector = std::variant<std::size_t, std::string>;

struct PredictorConfig {
  std::optional<std::string> endpoint_url;      // http://host:port/path
  std::optional<std::string> local_model_path;  // JSON model spec file

  std::string content_type = "text/csv";  // or application/jsonlines

  std::optional<FieldSelector> label_selector;
  std::optional<FieldSelector> probability_selector;
  // Class names aligned with score-vector positions; required when the model
  // returns only a score vector and predicted labels are wanted (argmax).
  std::vector<std::string> label_headers;

  std::size_t max_payload_bytes = 6 * 1024 * 1024;
  int max_retries = 4;
  int max_concurrent_requests = 4;
  // Back-off: base doubling per attempt with full jitter, capped at 10 s.
  int retry_base_ms = 100;

  bool include_facet = false;

  // Feature names, needed to serialize JSONLines request records.
  std::vector<std::string> feature_names;
};

struct PredictionSet {
  // Row-major [rows x L]; L = 1 for single-score models.
  std::optional<Eigen::MatrixXd> scores;
  std::optional<std::vector<std::string>> labels;
  std::size_t row_count = 0;
};

// Binarization of predictions: a set of positive class names (needs labels)
// or a strict score threshold (needs single-score rows; score > threshold => 1).
struct BinaryPredictionRule {
  std::vector<std::string> positive_classes;
  std::optional<double> score_threshold;
};

BinaryVector binarize_predictions(const PredictionSet& p,
                                  const BinaryPredictionRule& rule);

// Local model specs; the JSON file schema is documented in the README.
struct LinearModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  bool logistic = false;
};
struct StumpModel {
  struct Stump {
    int feature = 0;
    double threshold = 0.0;
    double left = 0.0;   // value when x[feature] <= threshold
    double right = 0.0;
  };
  std::vector<Stump> stumps;
  double bias = 0.0;
  bool logistic = false;
};
struct ConstantModel {
  double value = 0.0;
};
using LocalModelSpec = std::variant<LinearModel, StumpModel, ConstantModel>;

LocalModelSpec load_local_model(const std::string& path);
LocalModelSpec parse_local_model_json(const std::string& json_text);
std::string local_model_to_json(const LocalModelSpec& model);

// Deterministic scores for a feature matrix; ArityMismatch when the feature
// count disagrees with the model.
Eigen::VectorXd local_predict(const LocalModelSpec& model,
                              const Eigen::MatrixXd& rows);

// Parses one response body (batch) according to the predictor config.
PredictionSet parse_response_body(const std::string& body,
                                  const PredictorConfig& cfg);

// Serializes rows as the request body (CSV lines or JSONLines records).
std::string serialize_rows(const std::vector<Row>& rows,
                           const PredictorConfig& cfg);

// Black-box prediction client. Batches rows by payload size, keeps at most
// max_concurrent_requests batches in flight, retries transient failures with
// exponential back-off, and reassembles responses in row order.
class ModelClient {
 public:
  explicit ModelClient(PredictorConfig cfg);

  PredictionSet predict_rows(const std::vector<Row>& rows) const;

  // Rows taken from the dataset restricted to `feature_cols`, dataset order.
  PredictionSet predict_batchwise(const TabularDataset& ds,
                                  const std::vector<std::size_t>& feature_cols) const;

  const PredictorConfig& config() const { return cfg_; }

 private:
  PredictionSet predict_http(const std::vector<Row>& rows) const;
  PredictionSet predict_local(const std::vector<Row>& rows) const;
  std::string post_with_retry(const std::string& body, std::size_t batch_index) const;

  PredictorConfig cfg_;
  std::optional<LocalModelSpec> local_model_;
};

// Feature columns for prediction: every column except label, facets and,
// unless include_facet is set, nothing else is dropped.
std::vector<std::size_t> feature_columns(const TabularDataset& ds,
                                         std::size_t label_col,
                                         const std::vector<std::size_t>& facet_cols,
                                         bool include_facet);

}  // namespace fairlens
