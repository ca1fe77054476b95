#include "fairlens/kernel_shap.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "fairlens/parallel.hpp"
#include "fairlens/util.hpp"

namespace fairlens {

namespace {

using Mask = std::vector<std::uint8_t>;

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double result = 1.0;
  for (int i = 1; i <= k; ++i) {
    result *= static_cast<double>(n - i + 1) / static_cast<double>(i);
  }
  return result;
}

Row composite_row(const Row& x, const Row& background, const Mask& mask) {
  Row out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    out[j] = mask[j] ? x[j] : background[j];
  }
  return out;
}

// Mean model output over the baseline rows for each mask, evaluated in
// bounded chunks so enumeration of large coalition spaces stays in memory.
Eigen::VectorXd evaluate_masks(const std::vector<Mask>& masks, const Row& x,
                               const Baseline& baseline, const ScoreFn& model,
                               ShapSolveInfo* info) {
  const std::size_t n_background = baseline.rows.size();
  Eigen::VectorXd v(static_cast<Eigen::Index>(masks.size()));
  constexpr std::size_t kChunkMasks = 4096;
  for (std::size_t begin = 0; begin < masks.size(); begin += kChunkMasks) {
    const std::size_t end = std::min(begin + kChunkMasks, masks.size());
    std::vector<Row> batch;
    batch.reserve((end - begin) * n_background);
    for (std::size_t m = begin; m < end; ++m) {
      for (const Row& b : baseline.rows) {
        batch.push_back(composite_row(x, b, masks[m]));
      }
    }
    const Eigen::VectorXd scores = model(batch);
    if (static_cast<std::size_t>(scores.size()) != batch.size()) {
      throw ModelFailure("model returned " + std::to_string(scores.size()) +
                         " scores for " + std::to_string(batch.size()) + " rows");
    }
    if (info != nullptr) info->model_calls += batch.size();
    for (std::size_t m = begin; m < end; ++m) {
      const Eigen::Index offset =
          static_cast<Eigen::Index>((m - begin) * n_background);
      v[static_cast<Eigen::Index>(m)] =
          scores.segment(offset, static_cast<Eigen::Index>(n_background)).mean();
    }
  }
  return v;
}

void check_arity(const Row& row, const Baseline& baseline) {
  if (baseline.rows.empty()) {
    throw ConfigError("baseline must contain at least one row");
  }
  for (const Row& b : baseline.rows) {
    if (b.size() != row.size()) {
      throw ArityMismatch("baseline arity " + std::to_string(b.size()) +
                          " differs from row arity " + std::to_string(row.size()));
    }
  }
}

// Next s-combination of indices in lexicographic order; false when exhausted.
bool next_combination(std::vector<int>& idx, int m) {
  const int s = static_cast<int>(idx.size());
  int i = s - 1;
  while (i >= 0 && idx[i] == m - s + i) --i;
  if (i < 0) return false;
  ++idx[i];
  for (int j = i + 1; j < s; ++j) idx[j] = idx[j - 1] + 1;
  return true;
}

struct WeightedMasks {
  std::vector<Mask> masks;
  std::vector<double> weights;
};

// Paired kernel-proportional coalition sampling. Whole sizes are enumerated
// with exact kernel weights while the budget allows (covering all 2^M-2 masks
// when num_samples is large enough); leftover budget is spent on uniform
// draws within the remaining sizes, sized so the expected weight per mask
// equals its kernel value.
WeightedMasks draw_coalitions(int m, int num_samples, std::uint64_t seed) {
  WeightedMasks out;
  auto push_mask = [&](const std::vector<int>& on, double weight) {
    Mask mask(static_cast<std::size_t>(m), 0);
    for (int j : on) mask[static_cast<std::size_t>(j)] = 1;
    out.masks.push_back(std::move(mask));
    out.weights.push_back(weight);
  };

  std::vector<bool> enumerated(static_cast<std::size_t>(m), false);
  long long budget = num_samples;

  for (int s = 1; s <= m / 2; ++s) {
    const int complement = m - s;
    const double count_s = binomial(m, s);
    const double pair_count = (s == complement) ? count_s : 2.0 * count_s;
    if (pair_count > static_cast<double>(budget)) break;

    for (int size : {s, complement}) {
      if (enumerated[static_cast<std::size_t>(size)]) continue;
      enumerated[static_cast<std::size_t>(size)] = true;
      const double w = shapley_kernel_weight(m, size);
      std::vector<int> idx(static_cast<std::size_t>(size));
      std::iota(idx.begin(), idx.end(), 0);
      do {
        push_mask(idx, w);
      } while (next_combination(idx, m));
    }
    budget -= static_cast<long long>(pair_count);
  }

  std::vector<int> remaining_sizes;
  std::vector<double> remaining_mass;
  double leftover = 0.0;
  for (int s = 1; s <= m - 1; ++s) {
    if (enumerated[static_cast<std::size_t>(s)]) continue;
    const double mass = static_cast<double>(m - 1) /
                        (static_cast<double>(s) * static_cast<double>(m - s));
    remaining_sizes.push_back(s);
    remaining_mass.push_back(mass);
    leftover += mass;
  }
  if (budget <= 0 || remaining_sizes.empty()) return out;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t tail_start = out.masks.size();
  const long long draws = budget;
  long long drawn = 0;
  std::vector<int> pool(static_cast<std::size_t>(m));
  while (drawn < draws) {
    double pick = unit(rng) * leftover;
    std::size_t si = 0;
    while (si + 1 < remaining_sizes.size() && pick > remaining_mass[si]) {
      pick -= remaining_mass[si];
      ++si;
    }
    const int s = remaining_sizes[si];

    std::iota(pool.begin(), pool.end(), 0);
    for (int t = 0; t < s; ++t) {
      std::uniform_int_distribution<int> d(t, m - 1);
      std::swap(pool[static_cast<std::size_t>(t)],
                pool[static_cast<std::size_t>(d(rng))]);
    }
    std::vector<int> on(pool.begin(), pool.begin() + s);
    push_mask(on, 1.0);
    ++drawn;
    if (drawn < draws) {
      // Complement (size m-s is never an enumerated size; pairs are
      // enumerated together).
      std::vector<int> off;
      off.reserve(static_cast<std::size_t>(m - s));
      std::vector<bool> in(static_cast<std::size_t>(m), false);
      for (int j : on) in[static_cast<std::size_t>(j)] = true;
      for (int j = 0; j < m; ++j) {
        if (!in[static_cast<std::size_t>(j)]) off.push_back(j);
      }
      push_mask(off, 1.0);
      ++drawn;
    }
  }
  const double tail_weight = leftover / static_cast<double>(drawn);
  for (std::size_t i = tail_start; i < out.weights.size(); ++i) {
    out.weights[i] = tail_weight;
  }
  return out;
}

// Constrained weighted least squares: minimize sum w_k (u_k - z_k . phi)^2
// subject to sum(phi) = delta, via the KKT system with a Lagrange multiplier.
Eigen::VectorXd solve_constrained_wls(const Eigen::MatrixXd& z,
                                      const Eigen::VectorXd& w,
                                      const Eigen::VectorXd& u, double delta,
                                      ShapSolveInfo* info) {
  const Eigen::Index m = z.cols();
  const Eigen::MatrixXd zw = z.transpose() * w.asDiagonal();
  Eigen::MatrixXd a = zw * z;
  const Eigen::VectorXd b = zw * u;

  auto build_kkt = [&](const Eigen::MatrixXd& quad) {
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + 1, m + 1);
    kkt.topLeftCorner(m, m) = quad;
    kkt.topRightCorner(m, 1).setOnes();
    kkt.bottomLeftCorner(1, m).setOnes();
    return kkt;
  };
  Eigen::VectorXd rhs(m + 1);
  rhs.head(m) = b;
  rhs[m] = delta;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(build_kkt(a));
  if (!lu.isInvertible()) {
    a.diagonal().array() += 1e-10;
    lu.compute(build_kkt(a));
    if (info != nullptr) info->ridge_fallback = true;
  }
  const Eigen::VectorXd solution = lu.solve(rhs);
  return solution.head(m);
}

Row imputation_row(const Baseline& baseline) {
  const std::size_t arity = baseline.rows[0].size();
  Row out(arity);
  for (std::size_t j = 0; j < arity; ++j) {
    std::vector<double> numeric;
    std::map<std::string, std::size_t> freq;
    bool all_numeric = true;
    for (const Row& r : baseline.rows) {
      const std::string* s = cell_scalar(r[j]);
      if (s == nullptr) continue;
      ++freq[*s];
      if (const auto v = parse_finite_real(*s)) numeric.push_back(*v);
      else all_numeric = false;
    }
    if (freq.empty()) {
      out[j] = std::string();
    } else if (all_numeric) {
      const double mean =
          std::accumulate(numeric.begin(), numeric.end(), 0.0) /
          static_cast<double>(numeric.size());
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.12g", mean);
      out[j] = std::string(buf);
    } else {
      std::size_t best = 0;
      std::string mode;
      for (const auto& [value, count] : freq) {
        if (count > best) {
          best = count;
          mode = value;
        }
      }
      out[j] = mode;
    }
  }
  return out;
}

}  // namespace

double shapley_kernel_weight(int m, int s) {
  return static_cast<double>(m - 1) /
         (binomial(m, s) * static_cast<double>(s) * static_cast<double>(m - s));
}

Baseline auto_baseline(const TabularDataset& ds,
                       const std::vector<std::size_t>& feature_cols) {
  Row row;
  row.reserve(feature_cols.size());
  for (std::size_t j : feature_cols) {
    const Column& col = ds.column(j);
    if (col.kind == ColumnKind::numeric) {
      const Eigen::ArrayXd v = col.numeric_values();
      double sum = 0.0;
      std::size_t count = 0;
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (!std::isnan(v[i])) {
          sum += v[i];
          ++count;
        }
      }
      const double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.12g", mean);
      row.emplace_back(std::in_place_type<std::string>, buf);
    } else {
      std::map<std::string, std::size_t> freq;
      for (const auto& cell : col.values) {
        if (const std::string* s = cell_scalar(cell)) ++freq[*s];
      }
      std::string mode;
      std::size_t best = 0;
      for (const auto& [value, count] : freq) {
        if (count > best) {
          best = count;
          mode = value;
        }
      }
      row.emplace_back(std::in_place_type<std::string>, mode);
    }
  }
  Baseline out;
  out.rows.push_back(std::move(row));
  out.source = Baseline::Source::auto_generated;
  return out;
}

Baseline load_baseline_csv(const std::string& path,
                           const std::vector<std::string>& feature_names) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open baseline file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const TabularDataset ds = parse_dataset(buffer.str(), DatasetFormat::csv);

  std::vector<std::size_t> order;
  bool by_name = ds.header_present;
  if (by_name) {
    for (const auto& name : feature_names) {
      if (ds.find_column(name) == nullptr) {
        by_name = false;
        break;
      }
    }
  }
  if (by_name) {
    for (const auto& name : feature_names) order.push_back(ds.column_index(name));
  } else {
    if (ds.columns.size() != feature_names.size()) {
      throw ArityMismatch("baseline file has " +
                          std::to_string(ds.columns.size()) +
                          " columns, model expects " +
                          std::to_string(feature_names.size()));
    }
    order.resize(feature_names.size());
    std::iota(order.begin(), order.end(), 0);
  }

  Baseline out;
  out.source = Baseline::Source::user_file;
  for (std::size_t i = 0; i < ds.row_count; ++i) {
    Row row;
    row.reserve(order.size());
    for (std::size_t j : order) row.push_back(ds.column(j).values[i]);
    out.rows.push_back(std::move(row));
  }
  return out;
}

Eigen::VectorXd exact_shapley(const Row& row, const ScoreFn& model,
                              const Baseline& baseline, ShapSolveInfo* info) {
  check_arity(row, baseline);
  const int m = static_cast<int>(row.size());
  if (m > 20) {
    throw BudgetExceeded("exact enumeration limited to 20 features, got " +
                         std::to_string(m));
  }
  const std::uint32_t n_masks = 1u << m;

  std::vector<Mask> masks(n_masks, Mask(static_cast<std::size_t>(m), 0));
  for (std::uint32_t bits = 0; bits < n_masks; ++bits) {
    for (int j = 0; j < m; ++j) {
      masks[bits][static_cast<std::size_t>(j)] = (bits >> j) & 1u;
    }
  }
  const Eigen::VectorXd v = evaluate_masks(masks, row, baseline, model, info);

  // Coalition weight |S|! (M-|S|-1)! / M! = 1 / (M * C(M-1, |S|)).
  std::vector<double> weight_by_size(static_cast<std::size_t>(m));
  for (int s = 0; s < m; ++s) {
    weight_by_size[static_cast<std::size_t>(s)] =
        1.0 / (static_cast<double>(m) * binomial(m - 1, s));
  }

  Eigen::VectorXd phi = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < m; ++i) {
    const std::uint32_t bit = 1u << i;
    for (std::uint32_t bits = 0; bits < n_masks; ++bits) {
      if (bits & bit) continue;
      const int s = __builtin_popcount(bits);
      phi[i] += weight_by_size[static_cast<std::size_t>(s)] *
                (v[static_cast<Eigen::Index>(bits | bit)] -
                 v[static_cast<Eigen::Index>(bits)]);
    }
  }
  return phi;
}

Eigen::VectorXd kernel_shap(const Row& row, const ScoreFn& model,
                            const Baseline& baseline, const ShapConfig& cfg,
                            ShapSolveInfo* info,
                            std::optional<double> cached_base) {
  check_arity(row, baseline);
  const int m = static_cast<int>(row.size());

  ShapMode mode = cfg.mode;
  if (mode == ShapMode::automatic) {
    mode = (m <= 13) ? ShapMode::exact : ShapMode::sampled;
  }
  if (mode == ShapMode::exact) return exact_shapley(row, model, baseline, info);

  if (cfg.num_samples < 2 * m + 4) {
    throw InsufficientSamples("sampled mode needs num_samples >= 2M+4 = " +
                              std::to_string(2 * m + 4) + ", got " +
                              std::to_string(cfg.num_samples));
  }

  double base;
  if (cached_base.has_value()) {
    base = *cached_base;
  } else {
    const Eigen::VectorXd bg = model(baseline.rows);
    if (static_cast<std::size_t>(bg.size()) != baseline.rows.size()) {
      throw ModelFailure("model returned wrong score count for baseline rows");
    }
    if (info != nullptr) info->model_calls += baseline.rows.size();
    base = bg.mean();
  }
  const Eigen::VectorXd fx_vec = model({row});
  if (fx_vec.size() != 1) {
    throw ModelFailure("model returned wrong score count for explained row");
  }
  if (info != nullptr) info->model_calls += 1;
  const double fx = fx_vec[0];
  const double delta = fx - base;

  if (m == 1) {
    Eigen::VectorXd phi(1);
    phi[0] = delta;
    return phi;
  }

  const WeightedMasks drawn = draw_coalitions(m, cfg.num_samples, cfg.seed);
  const Eigen::VectorXd v =
      evaluate_masks(drawn.masks, row, baseline, model, info);

  Eigen::MatrixXd z(static_cast<Eigen::Index>(drawn.masks.size()), m);
  for (std::size_t k = 0; k < drawn.masks.size(); ++k) {
    for (int j = 0; j < m; ++j) {
      z(static_cast<Eigen::Index>(k), j) =
          static_cast<double>(drawn.masks[k][static_cast<std::size_t>(j)]);
    }
  }
  const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(
      drawn.weights.data(), static_cast<Eigen::Index>(drawn.weights.size()));
  const Eigen::VectorXd u = v.array() - base;

  return solve_constrained_wls(z, w, u, delta, info);
}

Eigen::VectorXd aggregate_importance(const Eigen::MatrixXd& local,
                                     AggMethod agg) {
  switch (agg) {
    case AggMethod::mean_abs:
      return local.array().abs().colwise().mean();
    case AggMethod::mean:
      return local.colwise().mean();
    case AggMethod::median: {
      Eigen::VectorXd out(local.cols());
      for (Eigen::Index j = 0; j < local.cols(); ++j) {
        std::vector<double> column(static_cast<std::size_t>(local.rows()));
        for (Eigen::Index i = 0; i < local.rows(); ++i) {
          column[static_cast<std::size_t>(i)] = std::abs(local(i, j));
        }
        std::sort(column.begin(), column.end());
        const std::size_t n = column.size();
        out[j] = (n % 2 == 1) ? column[n / 2]
                              : 0.5 * (column[n / 2 - 1] + column[n / 2]);
      }
      return out;
    }
  }
  throw Error("InternalError", "unknown aggregation method");
}

AttributionResult explain_dataset(const TabularDataset& ds,
                                  const std::vector<std::size_t>& feature_cols,
                                  const ScoreFn& model, const Baseline& baseline,
                                  const ShapConfig& cfg, int workers) {
  if (ds.row_count == 0) throw EmptyDataset("cannot explain an empty dataset");
  const int m = static_cast<int>(feature_cols.size());

  AttributionResult result;
  result.agg = cfg.agg;
  for (std::size_t j : feature_cols) {
    result.feature_names.push_back(ds.column(j).name);
  }

  const Eigen::VectorXd bg = model(baseline.rows);
  if (static_cast<std::size_t>(bg.size()) != baseline.rows.size()) {
    throw ModelFailure("model returned wrong score count for baseline rows");
  }
  result.base_value = bg.mean();

  const Row impute = imputation_row(baseline);
  std::vector<Row> rows(ds.row_count);
  for (std::size_t i = 0; i < ds.row_count; ++i) {
    Row row;
    row.reserve(feature_cols.size());
    for (std::size_t jj = 0; jj < feature_cols.size(); ++jj) {
      const Cell& cell = ds.column(feature_cols[jj]).values[i];
      row.push_back(cell_missing(cell) ? impute[jj] : cell);
    }
    rows[i] = std::move(row);
  }

  result.local.resize(static_cast<Eigen::Index>(ds.row_count), m);
  std::atomic<int> ridge_count{0};
  parallel_items(ds.row_count, workers, [&](std::size_t i) {
    ShapConfig per_example = cfg;
    per_example.seed = mix_seed(cfg.seed, i);
    ShapSolveInfo solve_info;
    const Eigen::VectorXd phi = kernel_shap(rows[i], model, baseline,
                                            per_example, &solve_info,
                                            result.base_value);
    result.local.row(static_cast<Eigen::Index>(i)) = phi.transpose();
    if (solve_info.ridge_fallback) ridge_count.fetch_add(1);
  });
  result.ridge_fallbacks = ridge_count.load();
  result.global = aggregate_importance(result.local, cfg.agg);
  return result;
}

}  // namespace fairlens
