#include "fairlens/model_client.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "fairlens/logging.hpp"
#include "fairlens/util.hpp"

namespace fairlens {

namespace {

using nlohmann::json;

constexpr int kBackoffCapMs = 10000;

struct ParsedUrl {
  std::string host_port;  // scheme://host:port
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  const std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint url '" + url + "' lacks a scheme");
  }
  const std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string selector_text(const FieldSelector& s) {
  if (const auto* idx = std::get_if<std::size_t>(&s)) return std::to_string(*idx);
  return std::get<std::string>(s);
}

// A response field is either a scalar score, a JSON-style score array, or a
// raw label token.
std::optional<std::vector<double>> parse_score_field(const std::string& field) {
  const std::string t = trim(field);
  if (!t.empty() && t.front() == '[') {
    json arr = json::parse(t, nullptr, false);
    if (arr.is_discarded() || !arr.is_array()) return std::nullopt;
    std::vector<double> scores;
    scores.reserve(arr.size());
    for (const auto& e : arr) {
      if (!e.is_number()) return std::nullopt;
      scores.push_back(e.get<double>());
    }
    return scores;
  }
  if (const auto v = parse_finite_real(t)) return std::vector<double>{*v};
  return std::nullopt;
}

std::string json_scalar_to_label(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::string cell_request_text(const Cell& cell) {
  if (cell_missing(cell)) return "";
  if (const std::string* s = cell_scalar(cell)) return *s;
  const auto& list = *cell_list(cell);
  std::string body = "[";
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (i > 0) body += ",";
    body += json(list[i]).dump();
  }
  return body + "]";
}

}  // namespace

BinaryVector binarize_predictions(const PredictionSet& p,
                                  const BinaryPredictionRule& rule) {
  const bool class_mode = !rule.positive_classes.empty();
  const bool threshold_mode = rule.score_threshold.has_value();
  if (class_mode == threshold_mode) {
    throw IncompatibleRule(
        "exactly one of positive_classes / score_threshold must be set");
  }

  BinaryVector out(static_cast<Eigen::Index>(p.row_count));
  if (threshold_mode) {
    if (!p.scores.has_value()) {
      throw IncompatibleRule("score threshold requires scores");
    }
    if (p.scores->cols() != 1) {
      throw IncompatibleRule(
          "score threshold requires single-score rows; got vectors of length " +
          std::to_string(p.scores->cols()));
    }
    for (std::size_t i = 0; i < p.row_count; ++i) {
      out[static_cast<Eigen::Index>(i)] =
          (*p.scores)(static_cast<Eigen::Index>(i), 0) > *rule.score_threshold
              ? 1
              : 0;
    }
    return out;
  }

  if (!p.labels.has_value()) {
    throw IncompatibleRule("positive_classes requires predicted labels");
  }
  for (std::size_t i = 0; i < p.row_count; ++i) {
    const std::string& label = (*p.labels)[i];
    int y = 0;
    for (const auto& cls : rule.positive_classes) {
      if (raw_value_matches(label, cls)) {
        y = 1;
        break;
      }
    }
    out[static_cast<Eigen::Index>(i)] = y;
  }
  return out;
}

LocalModelSpec parse_local_model_json(const std::string& json_text) {
  json spec = json::parse(json_text, nullptr, false);
  if (spec.is_discarded() || !spec.is_object() || !spec.contains("type")) {
    throw ConfigError("local model spec must be a JSON object with a 'type'");
  }
  const std::string type = spec.at("type").get<std::string>();
  if (type == "constant") {
    return ConstantModel{spec.at("value").get<double>()};
  }
  if (type == "linear") {
    LinearModel m;
    const auto& w = spec.at("weights");
    m.weights.resize(static_cast<Eigen::Index>(w.size()));
    for (std::size_t i = 0; i < w.size(); ++i) {
      m.weights[static_cast<Eigen::Index>(i)] = w.at(i).get<double>();
    }
    m.bias = spec.value("bias", 0.0);
    m.logistic = spec.value("logistic", false);
    return m;
  }
  if (type == "stumps") {
    StumpModel m;
    for (const auto& s : spec.at("stumps")) {
      StumpModel::Stump stump;
      stump.feature = s.at("feature").get<int>();
      stump.threshold = s.at("threshold").get<double>();
      stump.left = s.at("left").get<double>();
      stump.right = s.at("right").get<double>();
      m.stumps.push_back(stump);
    }
    m.bias = spec.value("bias", 0.0);
    m.logistic = spec.value("logistic", false);
    return m;
  }
  throw ConfigError("unknown local model type '" + type + "'");
}

LocalModelSpec load_local_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open local model file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_local_model_json(buffer.str());
}

std::string local_model_to_json(const LocalModelSpec& model) {
  json out;
  if (const auto* c = std::get_if<ConstantModel>(&model)) {
    out["type"] = "constant";
    out["value"] = c->value;
  } else if (const auto* l = std::get_if<LinearModel>(&model)) {
    out["type"] = "linear";
    out["weights"] = std::vector<double>(l->weights.data(),
                                         l->weights.data() + l->weights.size());
    out["bias"] = l->bias;
    out["logistic"] = l->logistic;
  } else {
    const auto& s = std::get<StumpModel>(model);
    out["type"] = "stumps";
    out["stumps"] = json::array();
    for (const auto& st : s.stumps) {
      out["stumps"].push_back({{"feature", st.feature},
                               {"threshold", st.threshold},
                               {"left", st.left},
                               {"right", st.right}});
    }
    out["bias"] = s.bias;
    out["logistic"] = s.logistic;
  }
  return out.dump(2);
}

Eigen::VectorXd local_predict(const LocalModelSpec& model,
                              const Eigen::MatrixXd& rows) {
  const Eigen::Index n = rows.rows();
  if (const auto* c = std::get_if<ConstantModel>(&model)) {
    return Eigen::VectorXd::Constant(n, c->value);
  }
  if (const auto* l = std::get_if<LinearModel>(&model)) {
    if (rows.cols() != l->weights.size()) {
      throw ArityMismatch("linear model expects " +
                          std::to_string(l->weights.size()) + " features, got " +
                          std::to_string(rows.cols()));
    }
    Eigen::VectorXd scores = (rows * l->weights).array() + l->bias;
    if (l->logistic) {
      scores = 1.0 / (1.0 + (-scores.array()).exp());
    }
    return scores;
  }
  const auto& s = std::get<StumpModel>(model);
  for (const auto& st : s.stumps) {
    if (st.feature < 0 || st.feature >= rows.cols()) {
      throw ArityMismatch("stump feature index " + std::to_string(st.feature) +
                          " out of range for " + std::to_string(rows.cols()) +
                          " features");
    }
  }
  Eigen::VectorXd scores = Eigen::VectorXd::Constant(n, s.bias);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (const auto& st : s.stumps) {
      scores[i] += rows(i, st.feature) <= st.threshold ? st.left : st.right;
    }
  }
  if (s.logistic) {
    scores = 1.0 / (1.0 + (-scores.array()).exp());
  }
  return scores;
}

std::string serialize_rows(const std::vector<Row>& rows,
                           const PredictorConfig& cfg) {
  std::string body;
  if (cfg.content_type == "application/jsonlines") {
    for (const auto& row : rows) {
      nlohmann::ordered_json rec;
      for (std::size_t j = 0; j < row.size(); ++j) {
        const std::string name = j < cfg.feature_names.size()
                                     ? cfg.feature_names[j]
                                     : "col" + std::to_string(j);
        if (cell_missing(row[j])) {
          rec[name] = nullptr;
        } else if (const std::string* s = cell_scalar(row[j])) {
          if (const auto v = parse_finite_real(*s)) rec[name] = *v;
          else rec[name] = *s;
        } else {
          rec[name] = *cell_list(row[j]);
        }
      }
      body += rec.dump();
      body += "\n";
    }
    return body;
  }
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j > 0) body += ",";
      body += csv_quote(cell_request_text(row[j]));
    }
    body += "\n";
  }
  return body;
}

PredictionSet parse_response_body(const std::string& body,
                                  const PredictorConfig& cfg) {
  if (!cfg.label_selector && !cfg.probability_selector) {
    throw ConfigError(
        "predictor config needs at least one of label / probability selectors");
  }
  const bool jsonl = cfg.content_type == "application/jsonlines";

  std::vector<std::string> labels;
  std::vector<std::vector<double>> scores;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < body.size()) {
    const std::size_t nl = body.find('\n', pos);
    std::string line = body.substr(
        pos, nl == std::string::npos ? body.size() - pos : nl - pos);
    pos = (nl == std::string::npos) ? body.size() : nl + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++line_no;

    std::string label_field;
    bool have_label = false;
    std::string prob_field;
    bool have_prob = false;

    if (jsonl) {
      json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.is_object()) {
        throw ResponseShapeMismatch("response line " + std::to_string(line_no) +
                                    " is not a JSON object");
      }
      if (cfg.label_selector) {
        const std::string key = selector_text(*cfg.label_selector);
        if (!rec.contains(key)) {
          throw ResponseShapeMismatch("response line " + std::to_string(line_no) +
                                      " lacks label field '" + key + "'");
        }
        label_field = json_scalar_to_label(rec.at(key));
        have_label = true;
      }
      if (cfg.probability_selector) {
        const std::string key = selector_text(*cfg.probability_selector);
        if (!rec.contains(key)) {
          throw ResponseShapeMismatch("response line " + std::to_string(line_no) +
                                      " lacks probability field '" + key + "'");
        }
        prob_field = rec.at(key).dump();
        have_prob = true;
      }
    } else {
      const std::vector<std::string> fields = split_csv_fields(line);
      auto field_at = [&](const FieldSelector& sel) -> const std::string& {
        const auto* idx = std::get_if<std::size_t>(&sel);
        if (idx == nullptr) {
          throw ConfigError("CSV responses require positional selectors");
        }
        if (*idx >= fields.size()) {
          throw ResponseShapeMismatch(
              "response line " + std::to_string(line_no) + " has " +
              std::to_string(fields.size()) + " fields, selector wants index " +
              std::to_string(*idx));
        }
        return fields[*idx];
      };
      if (cfg.label_selector) {
        label_field = field_at(*cfg.label_selector);
        have_label = true;
      }
      if (cfg.probability_selector) {
        prob_field = field_at(*cfg.probability_selector);
        have_prob = true;
      }
    }

    if (have_label) labels.push_back(label_field);
    if (have_prob) {
      auto s = parse_score_field(prob_field);
      if (!s) {
        throw ResponseShapeMismatch("response line " + std::to_string(line_no) +
                                    ": probability field '" + prob_field +
                                    "' is not a score or score array");
      }
      scores.push_back(std::move(*s));
    }
  }

  PredictionSet out;
  out.row_count = std::max(labels.size(), scores.size());
  if (!scores.empty()) {
    const std::size_t width = scores[0].size();
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != width) {
        throw ResponseShapeMismatch("score vector length varies across rows (" +
                                    std::to_string(width) + " vs " +
                                    std::to_string(scores[i].size()) + ")");
      }
    }
    if (!cfg.label_headers.empty() && cfg.label_headers.size() != width) {
      throw ResponseShapeMismatch(
          "label_headers has " + std::to_string(cfg.label_headers.size()) +
          " classes but score vectors have " + std::to_string(width));
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(scores.size()),
                      static_cast<Eigen::Index>(width));
    for (std::size_t i = 0; i < scores.size(); ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            scores[i][j];
      }
    }
    out.scores = std::move(m);

    // Argmax labels when the model returns only scores; lowest index wins ties.
    if (labels.empty() && !cfg.label_headers.empty()) {
      labels.reserve(scores.size());
      for (Eigen::Index i = 0; i < out.scores->rows(); ++i) {
        Eigen::Index best = 0;
        out.scores->row(i).maxCoeff(&best);
        labels.push_back(cfg.label_headers[static_cast<std::size_t>(best)]);
      }
    }
  }
  if (!labels.empty()) {
    if (!scores.empty() && labels.size() != scores.size()) {
      throw ResponseShapeMismatch("label and score row counts differ");
    }
    out.labels = std::move(labels);
  }
  return out;
}

ModelClient::ModelClient(PredictorConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.local_model_path.has_value()) {
    local_model_ = load_local_model(*cfg_.local_model_path);
  } else if (!cfg_.endpoint_url.has_value()) {
    throw ConfigError("predictor needs an endpoint url or a local model path");
  }
  if (cfg_.max_concurrent_requests < 1) {
    throw ConfigError("max_concurrent_requests must be >= 1");
  }
}

PredictionSet ModelClient::predict_rows(const std::vector<Row>& rows) const {
  if (local_model_.has_value()) return predict_local(rows);
  return predict_http(rows);
}

PredictionSet ModelClient::predict_local(const std::vector<Row>& rows) const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != m.cols()) {
      throw ArityMismatch("row " + std::to_string(i) + " has " +
                          std::to_string(rows[i].size()) + " features, expected " +
                          std::to_string(m.cols()));
    }
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      const std::string* s = cell_scalar(rows[i][j]);
      const auto v = (s != nullptr) ? parse_finite_real(*s) : std::nullopt;
      if (!v) {
        throw ArityMismatch("local models require numeric features; cell (" +
                            std::to_string(i) + "," + std::to_string(j) +
                            ") is not numeric");
      }
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *v;
    }
  }
  PredictionSet out;
  out.row_count = rows.size();
  out.scores = local_predict(*local_model_, m);
  return out;
}

std::string ModelClient::post_with_retry(const std::string& body,
                                         std::size_t batch_index) const {
  const ParsedUrl url = parse_url(*cfg_.endpoint_url);
  httplib::Client client(url.host_port);
  client.set_connection_timeout(10, 0);
  client.set_read_timeout(60, 0);

  thread_local std::mt19937_64 jitter_rng(
      std::random_device{}() ^
      static_cast<std::uint64_t>(
          std::hash<std::thread::id>{}(std::this_thread::get_id())));

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double cap = std::min<double>(
          kBackoffCapMs,
          static_cast<double>(cfg_.retry_base_ms) * std::pow(2.0, attempt - 1));
      std::uniform_real_distribution<double> jitter(0.0, cap);
      std::this_thread::sleep_for(
          std::chrono::duration<double, std::milli>(jitter(jitter_rng)));
    }
    auto res = client.Post(url.path, body, cfg_.content_type);
    if (!res) {
      last_error = "transport error (" + httplib::to_string(res.error()) + ")";
      log::debug("batch " + std::to_string(batch_index) + " attempt " +
                 std::to_string(attempt) + ": " + last_error);
      continue;
    }
    if (res->status >= 200 && res->status < 300) {
      return res->body;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "status " + std::to_string(res->status);
      log::debug("batch " + std::to_string(batch_index) + " attempt " +
                 std::to_string(attempt) + ": retriable " + last_error);
      continue;
    }
    throw NonRetriableModelError("endpoint returned status " +
                                 std::to_string(res->status) + " for batch " +
                                 std::to_string(batch_index));
  }
  throw EndpointUnreachable("batch " + std::to_string(batch_index) +
                            " failed after " + std::to_string(cfg_.max_retries) +
                            " retries: " + last_error);
}

PredictionSet ModelClient::predict_http(const std::vector<Row>& rows) const {
  // Greedy payload-bounded batching in row order.
  std::vector<std::pair<std::size_t, std::size_t>> batches;  // [begin, end)
  std::size_t begin = 0;
  std::size_t batch_bytes = 0;
  PredictorConfig one_row_cfg = cfg_;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t row_bytes = serialize_rows({rows[i]}, one_row_cfg).size();
    if (i > begin && batch_bytes + row_bytes > cfg_.max_payload_bytes) {
      batches.emplace_back(begin, i);
      begin = i;
      batch_bytes = 0;
    }
    batch_bytes += row_bytes;
  }
  if (begin < rows.size()) batches.emplace_back(begin, rows.size());

  std::vector<PredictionSet> results(batches.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  const std::size_t n_workers = std::min<std::size_t>(
      static_cast<std::size_t>(cfg_.max_concurrent_requests), batches.size());
  std::vector<std::thread> threads;
  threads.reserve(n_workers);
  for (std::size_t w = 0; w < std::max<std::size_t>(n_workers, 1); ++w) {
    threads.emplace_back([&] {
      while (!abort.load(std::memory_order_relaxed)) {
        const std::size_t b = next.fetch_add(1, std::memory_order_relaxed);
        if (b >= batches.size()) break;
        try {
          const auto [lo, hi] = batches[b];
          const std::vector<Row> slice(rows.begin() + static_cast<std::ptrdiff_t>(lo),
                                       rows.begin() + static_cast<std::ptrdiff_t>(hi));
          const std::string body = serialize_rows(slice, cfg_);
          const std::string response = post_with_retry(body, b);
          PredictionSet parsed = parse_response_body(response, cfg_);
          if (parsed.row_count != hi - lo) {
            throw ResponseShapeMismatch(
                "batch " + std::to_string(b) + " returned " +
                std::to_string(parsed.row_count) + " rows, expected " +
                std::to_string(hi - lo));
          }
          results[b] = std::move(parsed);
        } catch (...) {
          {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
          }
          abort.store(true, std::memory_order_relaxed);
          break;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);

  // Reassemble in batch order.
  PredictionSet out;
  out.row_count = rows.size();
  const bool any_scores =
      !results.empty() && results[0].scores.has_value();
  const bool any_labels =
      !results.empty() && results[0].labels.has_value();
  if (any_scores) {
    const Eigen::Index width = results[0].scores->cols();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), width);
    Eigen::Index at = 0;
    for (const auto& r : results) {
      if (!r.scores.has_value() || r.scores->cols() != width) {
        throw ResponseShapeMismatch("score shape varies across batches");
      }
      m.middleRows(at, r.scores->rows()) = *r.scores;
      at += r.scores->rows();
    }
    out.scores = std::move(m);
  }
  if (any_labels) {
    std::vector<std::string> labels;
    labels.reserve(rows.size());
    for (const auto& r : results) {
      if (!r.labels.has_value()) {
        throw ResponseShapeMismatch("labels present in some batches only");
      }
      labels.insert(labels.end(), r.labels->begin(), r.labels->end());
    }
    out.labels = std::move(labels);
  }
  return out;
}

PredictionSet ModelClient::predict_batchwise(
    const TabularDataset& ds, const std::vector<std::size_t>& feature_cols) const {
  std::vector<Row> rows;
  rows.reserve(ds.row_count);
  for (std::size_t i = 0; i < ds.row_count; ++i) {
    Row row;
    row.reserve(feature_cols.size());
    for (std::size_t j : feature_cols) row.push_back(ds.column(j).values[i]);
    rows.push_back(std::move(row));
  }
  return predict_rows(rows);
}

std::vector<std::size_t> feature_columns(const TabularDataset& ds,
                                         std::size_t label_col,
                                         const std::vector<std::size_t>& facet_cols,
                                         bool include_facet) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < ds.columns.size(); ++j) {
    if (j == label_col) continue;
    if (!include_facet &&
        std::find(facet_cols.begin(), facet_cols.end(), j) != facet_cols.end()) {
      continue;
    }
    out.push_back(j);
  }
  return out;
}

}  // namespace fairlens
