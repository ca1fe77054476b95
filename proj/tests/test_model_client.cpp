#include <doctest.h>

#include <random>

#include "fairlens/model_client.hpp"
#include "support/fake_endpoint.hpp"

using namespace fairlens;

namespace {

Row make_row(std::initializer_list<const char*> cells) {
  Row row;
  for (const char* c : cells) row.emplace_back(std::in_place_type<std::string>, c);
  return row;
}

PredictorConfig csv_config() {
  PredictorConfig cfg;
  cfg.content_type = "text/csv";
  return cfg;
}

}  // namespace

TEST_CASE("the three multi-class response shapes parse identically") {
  // Shape 1: CSV line with label field and score-array field.
  PredictorConfig c1 = csv_config();
  c1.label_selector = FieldSelector{std::size_t{0}};
  c1.probability_selector = FieldSelector{std::size_t{1}};
  const PredictionSet p1 =
      parse_response_body("C3,\"[0.1,0.3,0.6]\"\n", c1);

  // Shape 2: bare score array plus label headers (argmax label).
  PredictorConfig c2 = csv_config();
  c2.probability_selector = FieldSelector{std::size_t{0}};
  c2.label_headers = {"C1", "C2", "C3"};
  const PredictionSet p2 = parse_response_body("\"[0.1,0.3,0.6]\"\n", c2);

  // Shape 3: JSONLines record with named fields.
  PredictorConfig c3;
  c3.content_type = "application/jsonlines";
  c3.label_selector = FieldSelector{std::string("pred")};
  c3.probability_selector = FieldSelector{std::string("sc")};
  const PredictionSet p3 =
      parse_response_body("{\"pred\":\"C3\",\"sc\":[0.1,0.3,0.6]}\n", c3);

  for (const PredictionSet* p : {&p1, &p2, &p3}) {
    REQUIRE(p->row_count == 1);
    REQUIRE(p->labels.has_value());
    CHECK((*p->labels)[0] == "C3");
    REQUIRE(p->scores.has_value());
    REQUIRE(p->scores->cols() == 3);
    CHECK((*p->scores)(0, 0) == doctest::Approx(0.1));
    CHECK((*p->scores)(0, 1) == doctest::Approx(0.3));
    CHECK((*p->scores)(0, 2) == doctest::Approx(0.6));
  }
  CHECK(*p1.scores == *p2.scores);
  CHECK(*p1.scores == *p3.scores);
  CHECK(*p1.labels == *p2.labels);
  CHECK(*p1.labels == *p3.labels);
}

TEST_CASE("argmax label ties take the lowest index") {
  PredictorConfig cfg = csv_config();
  cfg.probability_selector = FieldSelector{std::size_t{0}};
  cfg.label_headers = {"C1", "C2", "C3"};
  const PredictionSet p = parse_response_body("\"[0.4,0.4,0.2]\"\n", cfg);
  CHECK((*p.labels)[0] == "C1");
}

TEST_CASE("response shape errors") {
  PredictorConfig cfg = csv_config();
  cfg.probability_selector = FieldSelector{std::size_t{0}};
  cfg.label_headers = {"C1", "C2"};
  CHECK_THROWS_AS(parse_response_body("\"[0.1,0.3,0.6]\"\n", cfg),
                  ResponseShapeMismatch);  // headers vs vector length

  PredictorConfig ragged = csv_config();
  ragged.probability_selector = FieldSelector{std::size_t{0}};
  CHECK_THROWS_AS(
      parse_response_body("\"[0.1,0.3]\"\n\"[0.1,0.3,0.6]\"\n", ragged),
      ResponseShapeMismatch);  // score width varies

  PredictorConfig missing_field = csv_config();
  missing_field.probability_selector = FieldSelector{std::size_t{4}};
  CHECK_THROWS_AS(parse_response_body("0.5\n", missing_field),
                  ResponseShapeMismatch);
}

TEST_CASE("binarize_predictions threshold and class modes") {
  PredictionSet scores;
  scores.row_count = 2;
  Eigen::MatrixXd m(2, 1);
  m << 0.3, 0.7;
  scores.scores = m;
  BinaryPredictionRule thr;
  thr.score_threshold = 0.5;
  const BinaryVector yt = binarize_predictions(scores, thr);
  CHECK(yt[0] == 0);
  CHECK(yt[1] == 1);

  // Boundary score equals the threshold: strict inequality, so negative.
  PredictionSet boundary;
  boundary.row_count = 1;
  Eigen::MatrixXd b(1, 1);
  b << 0.5;
  boundary.scores = b;
  CHECK(binarize_predictions(boundary, thr)[0] == 0);

  PredictionSet labels;
  labels.row_count = 2;
  labels.labels = std::vector<std::string>{"C3", "C1"};
  BinaryPredictionRule cls;
  cls.positive_classes = {"C3"};
  const BinaryVector yc = binarize_predictions(labels, cls);
  CHECK(yc[0] == 1);
  CHECK(yc[1] == 0);
}

TEST_CASE("binarize_predictions incompatible rules") {
  PredictionSet labels_only;
  labels_only.row_count = 1;
  labels_only.labels = std::vector<std::string>{"C3"};
  BinaryPredictionRule thr;
  thr.score_threshold = 0.5;
  CHECK_THROWS_AS(binarize_predictions(labels_only, thr), IncompatibleRule);

  PredictionSet scores_only;
  scores_only.row_count = 1;
  Eigen::MatrixXd m(1, 1);
  m << 0.9;
  scores_only.scores = m;
  BinaryPredictionRule cls;
  cls.positive_classes = {"C3"};
  CHECK_THROWS_AS(binarize_predictions(scores_only, cls), IncompatibleRule);

  BinaryPredictionRule both;
  both.positive_classes = {"C3"};
  both.score_threshold = 0.5;
  CHECK_THROWS_AS(binarize_predictions(scores_only, both), IncompatibleRule);

  // Vector scores cannot be thresholded directly.
  PredictionSet multi;
  multi.row_count = 1;
  Eigen::MatrixXd mm(1, 3);
  mm << 0.1, 0.3, 0.6;
  multi.scores = mm;
  CHECK_THROWS_AS(binarize_predictions(multi, thr), IncompatibleRule);
}

TEST_CASE("local models: linear, constant, logistic, stumps") {
  Eigen::MatrixXd rows(1, 2);
  rows << 1.0, 1.0;
  LinearModel linear;
  linear.weights = Eigen::Vector2d(2.0, 3.0);
  CHECK(local_predict(linear, rows)[0] == doctest::Approx(5.0));

  ConstantModel constant{0.25};
  Eigen::MatrixXd three(3, 2);
  three.setZero();
  const Eigen::VectorXd c = local_predict(constant, three);
  CHECK(c.size() == 3);
  CHECK(c[0] == 0.25);
  CHECK(c[2] == 0.25);

  LinearModel logistic;
  logistic.weights = Eigen::Vector2d(1.0, -1.0);
  logistic.logistic = true;
  Eigen::MatrixXd sym(1, 2);
  sym << 0.5, 0.5;
  CHECK(local_predict(logistic, sym)[0] == doctest::Approx(0.5));

  StumpModel stumps;
  stumps.stumps.push_back({0, 1.0, 0.2, 0.8});
  stumps.stumps.push_back({1, 0.0, -0.1, 0.1});
  Eigen::MatrixXd x(2, 2);
  x << 0.5, 1.0,   // <=1 and >0: 0.2 + 0.1
       2.0, -1.0;  // >1 and <=0: 0.8 - 0.1
  const Eigen::VectorXd s = local_predict(stumps, x);
  CHECK(s[0] == doctest::Approx(0.3));
  CHECK(s[1] == doctest::Approx(0.7));

  Eigen::MatrixXd wrong(1, 3);
  wrong.setZero();
  CHECK_THROWS_AS(local_predict(linear, wrong), ArityMismatch);
}

TEST_CASE("local model JSON round-trips through the documented schema") {
  LinearModel linear;
  linear.weights = Eigen::Vector3d(0.5, -2.0, 1.0);
  linear.bias = 0.25;
  linear.logistic = true;
  const LocalModelSpec parsed =
      parse_local_model_json(local_model_to_json(linear));
  const auto* back = std::get_if<LinearModel>(&parsed);
  REQUIRE(back != nullptr);
  CHECK(back->weights == linear.weights);
  CHECK(back->bias == linear.bias);
  CHECK(back->logistic);
}

namespace {

// Scores each row as 100 * first-field + 0.5; distinct per row id, so any
// reordering or misassembly shows up in the scores.
std::string identity_scorer_line(const std::vector<std::string>& fields) {
  const double id = std::stod(fields.at(0));
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", 100.0 * id + 0.5);
  return buf;
}

std::vector<Row> indexed_rows(int n) {
  std::vector<Row> rows;
  for (int i = 0; i < n; ++i) {
    Row row;
    row.emplace_back(std::in_place_type<std::string>, std::to_string(i));
    row.emplace_back(std::in_place_type<std::string>, "pad_" + std::to_string(i));
    rows.push_back(std::move(row));
  }
  return rows;
}

PredictorConfig endpoint_config(const testsupport::FakeEndpoint& endpoint) {
  PredictorConfig cfg;
  cfg.endpoint_url = endpoint.url();
  cfg.probability_selector = FieldSelector{std::size_t{0}};
  cfg.retry_base_ms = 1;
  cfg.max_retries = 4;
  cfg.max_concurrent_requests = 3;
  return cfg;
}

}  // namespace

TEST_CASE("order preservation across batch splits and payload sizes") {
  testsupport::FakeEndpoint endpoint(identity_scorer_line);
  const std::vector<Row> rows = indexed_rows(37);

  Eigen::MatrixXd reference;
  bool first = true;
  for (std::size_t payload : {std::size_t{1}, std::size_t{40}, std::size_t{200},
                              std::size_t{1 << 20}}) {
    PredictorConfig cfg = endpoint_config(endpoint);
    cfg.max_payload_bytes = payload;
    const ModelClient client(cfg);
    const PredictionSet p = client.predict_rows(rows);
    REQUIRE(p.row_count == rows.size());
    REQUIRE(p.scores.has_value());
    for (int i = 0; i < 37; ++i) {
      CHECK((*p.scores)(i, 0) == doctest::Approx(100.0 * i + 0.5));
    }
    if (first) {
      reference = *p.scores;
      first = false;
    } else {
      CHECK(*p.scores == reference);  // batch-size invariance
    }
  }
}

TEST_CASE("retries recover from transient failures within the budget") {
  testsupport::FakeEndpoint endpoint(identity_scorer_line);
  endpoint.fail_each_body_times(2);

  PredictorConfig cfg = endpoint_config(endpoint);
  cfg.max_payload_bytes = 40;  // force several batches
  cfg.max_retries = 4;
  const ModelClient client(cfg);
  const PredictionSet p = client.predict_rows(indexed_rows(20));
  REQUIRE(p.row_count == 20);
  for (int i = 0; i < 20; ++i) {
    CHECK((*p.scores)(i, 0) == doctest::Approx(100.0 * i + 0.5));
  }
}

TEST_CASE("exhausted retries raise EndpointUnreachable") {
  testsupport::FakeEndpoint endpoint(identity_scorer_line);
  endpoint.fail_each_body_times(10);
  PredictorConfig cfg = endpoint_config(endpoint);
  cfg.max_retries = 2;
  const ModelClient client(cfg);
  CHECK_THROWS_AS(client.predict_rows(indexed_rows(4)), EndpointUnreachable);
}

TEST_CASE("an unreachable host raises EndpointUnreachable") {
  PredictorConfig cfg;
  cfg.endpoint_url = "http://127.0.0.1:1/invocations";
  cfg.probability_selector = FieldSelector{std::size_t{0}};
  cfg.retry_base_ms = 1;
  cfg.max_retries = 1;
  const ModelClient client(cfg);
  CHECK_THROWS_AS(client.predict_rows(indexed_rows(2)), EndpointUnreachable);
}

TEST_CASE("client errors are not retried") {
  testsupport::FakeEndpoint endpoint(identity_scorer_line);
  endpoint.respond_with_status(400);
  PredictorConfig cfg = endpoint_config(endpoint);
  const ModelClient client(cfg);
  CHECK_THROWS_AS(client.predict_rows(indexed_rows(3)), NonRetriableModelError);
  CHECK(endpoint.total_requests() == 1);
}

TEST_CASE("in-flight requests stay within max_concurrent_requests") {
  testsupport::FakeEndpoint endpoint(identity_scorer_line);
  endpoint.set_latency_ms(15);
  PredictorConfig cfg = endpoint_config(endpoint);
  cfg.max_payload_bytes = 20;  // two rows per batch
  cfg.max_concurrent_requests = 3;
  const ModelClient client(cfg);
  const PredictionSet p = client.predict_rows(indexed_rows(12));
  REQUIRE(p.row_count == 12);
  CHECK(endpoint.max_in_flight() <= 3);
  CHECK(endpoint.total_requests() >= 6);
}

TEST_CASE("jsonlines request serialization uses feature names") {
  PredictorConfig cfg;
  cfg.content_type = "application/jsonlines";
  cfg.feature_names = {"age", "name"};
  const std::string body =
      serialize_rows({make_row({"30", "bob"})}, cfg);
  CHECK(body == "{\"age\":30.0,\"name\":\"bob\"}\n");
}

TEST_CASE("csv request serialization quotes awkward cells") {
  PredictorConfig cfg = csv_config();
  const std::string body = serialize_rows({make_row({"a,b", "2"})}, cfg);
  CHECK(body == "\"a,b\",2\n");
}
