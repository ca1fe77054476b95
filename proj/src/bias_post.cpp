#include "fairlens/bias_post.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <unordered_map>

#include "fairlens/parallel.hpp"

namespace fairlens {

ConfusionByGroup confusion(const BinaryVector& labels, const BinaryVector& preds,
                           const GroupAssignment& groups, int workers) {
  if (labels.size() != preds.size() ||
      static_cast<std::size_t>(labels.size()) != groups.size()) {
    throw LengthMismatch("labels, preds and groups must have equal length");
  }
  const std::size_t n = groups.size();

  ConfusionByGroup total;
  std::mutex merge_mutex;
  parallel_chunks(n, workers, [&](std::size_t begin, std::size_t end) {
    GroupConfusion la, ld;
    for (std::size_t i = begin; i < end; ++i) {
      const Eigen::Index e = static_cast<Eigen::Index>(i);
      GroupConfusion& g = (groups[i] == Group::a) ? la : ld;
      const bool y = labels[e] != 0;
      const bool yhat = preds[e] != 0;
      if (y && yhat) ++g.tp;
      else if (!y && yhat) ++g.fp;
      else if (!y && !yhat) ++g.tn;
      else ++g.fn;
    }
    std::lock_guard<std::mutex> lock(merge_mutex);
    total.a.tp += la.tp; total.a.fp += la.fp; total.a.tn += la.tn; total.a.fn += la.fn;
    total.d.tp += ld.tp; total.d.fp += ld.fp; total.d.tn += ld.tn; total.d.fn += ld.fn;
  });

  if (total.a.size() == 0 || total.d.size() == 0) {
    throw DegenerateFacet("confusion requires both groups nonempty");
  }
  total.counts.n_a1 = total.a.tp + total.a.fn;
  total.counts.n_a0 = total.a.tn + total.a.fp;
  total.counts.n_d1 = total.d.tp + total.d.fn;
  total.counts.n_d0 = total.d.tn + total.d.fp;
  total.counts.n_a = total.counts.n_a0 + total.counts.n_a1;
  total.counts.n_d = total.counts.n_d0 + total.counts.n_d1;
  total.counts.n0 = total.counts.n_a0 + total.counts.n_d0;
  total.counts.n1 = total.counts.n_a1 + total.counts.n_d1;
  total.counts.n = total.counts.n_a + total.counts.n_d;
  return total;
}

namespace {

MetricValue ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

MetricValue diff(MetricValue x, MetricValue y) {
  if (!x || !y) return std::nullopt;
  return *x - *y;
}

}  // namespace

std::map<std::string, MetricValue> post_training_suite(const ConfusionByGroup& c) {
  const auto& a = c.a;
  const auto& d = c.d;
  const auto& n = c.counts;

  std::map<std::string, MetricValue> m;

  const MetricValue qhat_a = ratio(a.predicted_positive(), n.n_a);
  const MetricValue qhat_d = ratio(d.predicted_positive(), n.n_d);
  m["DPPL"] = diff(qhat_a, qhat_d);
  if (qhat_a && qhat_d && *qhat_a != 0.0) {
    m["DI"] = *qhat_d / *qhat_a;
  } else {
    m["DI"] = std::nullopt;
  }
  m["DCA"] = diff(ratio(n.n_a1, a.predicted_positive()),
                  ratio(n.n_d1, d.predicted_positive()));
  m["DCR"] = diff(ratio(n.n_a0, a.predicted_negative()),
                  ratio(n.n_d0, d.predicted_negative()));
  m["AD"] = diff(ratio(a.tp + a.tn, n.n_a), ratio(d.tp + d.tn, n.n_d));
  m["RD"] = diff(ratio(a.tp, n.n_a1), ratio(d.tp, n.n_d1));
  m["DAR"] = diff(ratio(a.tp, a.predicted_positive()),
                  ratio(d.tp, d.predicted_positive()));
  m["DRR"] = diff(ratio(a.tn, a.predicted_negative()),
                  ratio(d.tn, d.predicted_negative()));
  // d-term minus a-term, per the metric's definition.
  m["TE"] = diff(ratio(d.fn, d.fp), ratio(a.fn, a.fp));
  return m;
}

ConditionalDisparity cddpl(const BinaryVector& preds,
                           const GroupAssignment& groups, const Column& strata) {
  return cddl(preds, groups, strata);
}

EncodedFeatures encode_features(const TabularDataset& ds,
                                const std::vector<std::size_t>& feature_columns) {
  const std::size_t rows = ds.row_count;
  std::vector<std::size_t> numeric_cols, categorical_cols;
  for (std::size_t j : feature_columns) {
    if (ds.column(j).kind == ColumnKind::numeric) numeric_cols.push_back(j);
    else categorical_cols.push_back(j);
  }

  EncodedFeatures out;
  out.numeric.resize(static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(numeric_cols.size()));
  out.categorical.resize(static_cast<Eigen::Index>(rows),
                         static_cast<Eigen::Index>(categorical_cols.size()));

  for (std::size_t jj = 0; jj < numeric_cols.size(); ++jj) {
    Eigen::ArrayXd v = ds.column(numeric_cols[jj]).numeric_values();
    double sum = 0.0, lo = 0.0, hi = 0.0;
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (std::isnan(v[i])) continue;
      if (count == 0) { lo = hi = v[i]; }
      lo = std::min(lo, v[i]);
      hi = std::max(hi, v[i]);
      sum += v[i];
      ++count;
    }
    const double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
    const double span = hi - lo;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double raw = std::isnan(v[i]) ? mean : v[i];
      out.numeric(i, static_cast<Eigen::Index>(jj)) =
          span > 0.0 ? (raw - lo) / span : 0.0;
    }
  }

  for (std::size_t jj = 0; jj < categorical_cols.size(); ++jj) {
    const Column& col = ds.column(categorical_cols[jj]);
    std::unordered_map<std::string, int> codes;
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& cell : col.values) {
      if (const std::string* s = cell_scalar(cell)) ++freq[*s];
    }
    std::string mode;
    std::size_t best = 0;
    for (const auto& [value, count] : freq) {
      if (count > best || (count == best && value < mode)) {
        best = count;
        mode = value;
      }
    }
    for (std::size_t i = 0; i < rows; ++i) {
      const std::string* s = cell_scalar(col.values[i]);
      const std::string& token = (s != nullptr) ? *s : mode;
      auto [it, _] = codes.try_emplace(token, static_cast<int>(codes.size()));
      out.categorical(static_cast<Eigen::Index>(i),
                      static_cast<Eigen::Index>(jj)) = it->second;
    }
  }
  return out;
}

double flip_test(const EncodedFeatures& features, const BinaryVector& preds,
                 const GroupAssignment& groups, const FlipTestConfig& cfg,
                 int workers) {
  const std::size_t n = groups.size();
  if (features.rows() != n || static_cast<std::size_t>(preds.size()) != n) {
    throw LengthMismatch("features, preds and groups must have equal length");
  }
  if (cfg.k <= 0) throw ConfigError("flip test requires k >= 1");

  std::vector<std::size_t> a_rows, d_rows;
  for (std::size_t i = 0; i < n; ++i) {
    (groups[i] == Group::a ? a_rows : d_rows).push_back(i);
  }
  if (a_rows.empty() || d_rows.empty()) {
    throw DegenerateFacet("flip test requires both groups nonempty");
  }
  if (static_cast<std::size_t>(cfg.k) > a_rows.size()) {
    throw InsufficientNeighbors("k=" + std::to_string(cfg.k) +
                                " exceeds group a size " +
                                std::to_string(a_rows.size()));
  }

  const std::size_t k = static_cast<std::size_t>(cfg.k);
  std::vector<int> consensus(d_rows.size(), 0);
  parallel_items(d_rows.size(), workers, [&](std::size_t di) {
    const Eigen::Index row = static_cast<Eigen::Index>(d_rows[di]);
    // (distance, a-row index); index tie-break keeps the result deterministic.
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(a_rows.size());
    for (std::size_t ai : a_rows) {
      const Eigen::Index other = static_cast<Eigen::Index>(ai);
      const double euclid =
          (features.numeric.row(row) - features.numeric.row(other)).norm();
      double hamming = 0.0;
      for (Eigen::Index j = 0; j < features.categorical.cols(); ++j) {
        if (features.categorical(row, j) != features.categorical(other, j)) {
          hamming += 1.0;
        }
      }
      dist.emplace_back(euclid + hamming, ai);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                      dist.end());
    int votes = 0;
    for (std::size_t j = 0; j < k; ++j) {
      votes += preds[static_cast<Eigen::Index>(dist[j].second)] != 0 ? 1 : -1;
    }
    const int own = preds[row] != 0 ? 1 : 0;
    consensus[di] = votes > 0 ? 1 : (votes < 0 ? 0 : own);  // tie: no flip
  });

  std::int64_t flips_to_positive = 0, flips_to_negative = 0;
  for (std::size_t di = 0; di < d_rows.size(); ++di) {
    const int own = preds[static_cast<Eigen::Index>(d_rows[di])] != 0 ? 1 : 0;
    if (own == 0 && consensus[di] == 1) ++flips_to_positive;
    if (own == 1 && consensus[di] == 0) ++flips_to_negative;
  }
  return static_cast<double>(flips_to_positive - flips_to_negative) /
         static_cast<double>(d_rows.size());
}

}  // namespace fairlens
