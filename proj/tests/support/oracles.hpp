// Independent brute-force oracles for the worked examples and property tests.
// These deliberately re-derive everything from first principles and never call
// into the library code paths they are checking.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairlens/types.hpp"
#include "fairlens/util.hpp"

namespace oracle {

struct HandCounts {
  long long n = 0, n_a = 0, n_d = 0;
  long long n0 = 0, n1 = 0;
  long long n_a0 = 0, n_a1 = 0, n_d0 = 0, n_d1 = 0;
  double q_a() const { return double(n_a1) / double(n_a); }
  double q_d() const { return double(n_d1) / double(n_d); }
};

inline HandCounts hand_tally(const std::vector<int>& labels,
                             const std::vector<char>& groups /* 'a' or 'd' */) {
  HandCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    c.n += 1;
    if (groups[i] == 'a') {
      c.n_a += 1;
      if (labels[i] == 1) c.n_a1 += 1; else c.n_a0 += 1;
    } else {
      c.n_d += 1;
      if (labels[i] == 1) c.n_d1 += 1; else c.n_d0 += 1;
    }
    if (labels[i] == 1) c.n1 += 1; else c.n0 += 1;
  }
  return c;
}

inline double kl_term(double p, double q) {
  if (p == 0.0) return 0.0;
  if (q == 0.0) return std::numeric_limits<double>::infinity();
  return p * std::log(p / q);
}

inline double kl(double qa, double qd) {
  return kl_term(qa, qd) + kl_term(1 - qa, 1 - qd);
}

inline double js(double qa, double qd) {
  const double m = 0.5 * (qa + qd);
  return 0.5 * (kl(qa, m) + kl(qd, m));
}

inline double lp(double qa, double qd, double p) {
  return std::pow(std::pow(std::abs(qa - qd), p) +
                      std::pow(std::abs((1 - qa) - (1 - qd)), p),
                  1.0 / p);
}

inline double tvd(double qa, double qd) {
  return 0.5 * (std::abs(qa - qd) + std::abs((1 - qa) - (1 - qd)));
}

inline double ks(double qa, double qd) {
  return std::max(std::abs(qa - qd), std::abs((1 - qa) - (1 - qd)));
}

// Stratified demographic disparity computed with its own bookkeeping.
inline double cddl_stratified(const std::vector<int>& outcomes,
                              const std::vector<char>& groups,
                              const std::vector<std::string>& strata) {
  std::map<std::string, std::vector<std::size_t>> rows_by_stratum;
  for (std::size_t i = 0; i < strata.size(); ++i) {
    rows_by_stratum[strata[i]].push_back(i);
  }
  double acc = 0.0;
  for (const auto& [key, rows] : rows_by_stratum) {
    long long n0 = 0, n1 = 0, d0 = 0, d1 = 0;
    for (std::size_t i : rows) {
      if (outcomes[i] == 1) {
        ++n1;
        if (groups[i] == 'd') ++d1;
      } else {
        ++n0;
        if (groups[i] == 'd') ++d0;
      }
    }
    const double neg = n0 > 0 ? double(d0) / double(n0) : 0.0;
    const double pos = n1 > 0 ? double(d1) / double(n1) : 0.0;
    acc += double(rows.size()) * (neg - pos);
  }
  return acc / double(outcomes.size());
}

struct HandConfusion {
  long long tp_a = 0, fp_a = 0, tn_a = 0, fn_a = 0;
  long long tp_d = 0, fp_d = 0, tn_d = 0, fn_d = 0;
};

inline HandConfusion hand_confusion(const std::vector<int>& labels,
                                    const std::vector<int>& preds,
                                    const std::vector<char>& groups) {
  HandConfusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool a = groups[i] == 'a';
    if (labels[i] == 1 && preds[i] == 1) (a ? c.tp_a : c.tp_d)++;
    if (labels[i] == 0 && preds[i] == 1) (a ? c.fp_a : c.fp_d)++;
    if (labels[i] == 0 && preds[i] == 0) (a ? c.tn_a : c.tn_d)++;
    if (labels[i] == 1 && preds[i] == 0) (a ? c.fn_a : c.fn_d)++;
  }
  return c;
}

// Post-training metric formulas evaluated directly on hand counts.
inline std::map<std::string, std::optional<double>> hand_post_suite(
    const HandConfusion& c) {
  auto ratio = [](long long num, long long den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return double(num) / double(den);
  };
  auto diff = [](std::optional<double> x,
                 std::optional<double> y) -> std::optional<double> {
    if (!x || !y) return std::nullopt;
    return *x - *y;
  };
  const long long n_a = c.tp_a + c.fp_a + c.tn_a + c.fn_a;
  const long long n_d = c.tp_d + c.fp_d + c.tn_d + c.fn_d;
  const long long na1 = c.tp_a + c.fn_a, nd1 = c.tp_d + c.fn_d;
  const long long na0 = c.tn_a + c.fp_a, nd0 = c.tn_d + c.fp_d;
  const long long pa1 = c.tp_a + c.fp_a, pd1 = c.tp_d + c.fp_d;
  const long long pa0 = c.tn_a + c.fn_a, pd0 = c.tn_d + c.fn_d;

  std::map<std::string, std::optional<double>> m;
  m["DPPL"] = diff(ratio(pa1, n_a), ratio(pd1, n_d));
  const auto qa = ratio(pa1, n_a);
  const auto qd = ratio(pd1, n_d);
  m["DI"] = (qa && qd && *qa != 0.0) ? std::optional<double>(*qd / *qa)
                                     : std::nullopt;
  m["DCA"] = diff(ratio(na1, pa1), ratio(nd1, pd1));
  m["DCR"] = diff(ratio(na0, pa0), ratio(nd0, pd0));
  m["AD"] = diff(ratio(c.tp_a + c.tn_a, n_a), ratio(c.tp_d + c.tn_d, n_d));
  m["RD"] = diff(ratio(c.tp_a, na1), ratio(c.tp_d, nd1));
  m["DAR"] = diff(ratio(c.tp_a, pa1), ratio(c.tp_d, pd1));
  m["DRR"] = diff(ratio(c.tn_a, pa0), ratio(c.tn_d, pd0));
  m["TE"] = diff(ratio(c.fn_d, c.fp_d), ratio(c.fn_a, c.fp_a));
  return m;
}

// Exhaustive k-nearest-neighbor flip test over explicit distance lists.
inline double flip_test_exhaustive(
    const std::vector<std::vector<double>>& numeric_normalized,
    const std::vector<std::vector<int>>& categorical_codes,
    const std::vector<int>& preds, const std::vector<char>& groups, int k) {
  const std::size_t n = preds.size();
  std::vector<std::size_t> a_rows, d_rows;
  for (std::size_t i = 0; i < n; ++i) {
    (groups[i] == 'a' ? a_rows : d_rows).push_back(i);
  }
  long long f_plus = 0, f_minus = 0;
  for (std::size_t d : d_rows) {
    std::vector<std::pair<double, std::size_t>> dist;
    for (std::size_t a : a_rows) {
      double sq = 0.0;
      for (std::size_t j = 0; j < numeric_normalized[d].size(); ++j) {
        const double delta = numeric_normalized[d][j] - numeric_normalized[a][j];
        sq += delta * delta;
      }
      double ham = 0.0;
      for (std::size_t j = 0; j < categorical_codes[d].size(); ++j) {
        if (categorical_codes[d][j] != categorical_codes[a][j]) ham += 1.0;
      }
      dist.emplace_back(std::sqrt(sq) + ham, a);
    }
    std::sort(dist.begin(), dist.end());
    int votes = 0;
    for (int j = 0; j < k; ++j) votes += preds[dist[j].second] == 1 ? 1 : -1;
    const int consensus = votes > 0 ? 1 : (votes < 0 ? 0 : preds[d]);
    if (preds[d] == 0 && consensus == 1) ++f_plus;
    if (preds[d] == 1 && consensus == 0) ++f_minus;
  }
  return double(f_plus - f_minus) / double(d_rows.size());
}

// Shapley values by full permutation enumeration (the textbook definition);
// value function v(S) = mean over baseline rows of the model on the mixed row.
inline Eigen::VectorXd shapley_by_permutations(
    const Eigen::VectorXd& x, const std::vector<Eigen::VectorXd>& baseline,
    const std::function<double(const Eigen::VectorXd&)>& f) {
  const int m = static_cast<int>(x.size());
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);

  auto value = [&](std::uint32_t bits) {
    double acc = 0.0;
    for (const auto& b : baseline) {
      Eigen::VectorXd mixed = b;
      for (int j = 0; j < m; ++j) {
        if (bits & (1u << j)) mixed[j] = x[j];
      }
      acc += f(mixed);
    }
    return acc / double(baseline.size());
  };
  std::vector<double> cache(1u << m, std::numeric_limits<double>::quiet_NaN());
  auto v = [&](std::uint32_t bits) {
    if (std::isnan(cache[bits])) cache[bits] = value(bits);
    return cache[bits];
  };

  Eigen::VectorXd phi = Eigen::VectorXd::Zero(m);
  long long count = 0;
  do {
    std::uint32_t bits = 0;
    for (int pos = 0; pos < m; ++pos) {
      const int i = perm[pos];
      const double before = v(bits);
      bits |= 1u << i;
      phi[i] += v(bits) - before;
    }
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return phi / double(count);
}

// Percentile bootstrap re-derived with the pinned scheme: resample r uses
// mt19937_64(mix_seed(seed, r)), indices via uniform_int_distribution, and
// linear-interpolated percentiles over the sorted values.
struct BootstrapOracle {
  double lo = 0.0, hi = 0.0;
};

inline BootstrapOracle percentile_bootstrap(
    std::size_t n_rows,
    const std::function<std::optional<double>(const std::vector<std::size_t>&)>&
        metric,
    int resamples, std::uint64_t seed, double confidence = 0.95) {
  std::vector<double> values;
  for (int r = 0; r < resamples; ++r) {
    std::mt19937_64 rng(fairlens::mix_seed(seed, static_cast<std::uint64_t>(r)));
    std::uniform_int_distribution<std::size_t> pick(0, n_rows - 1);
    std::vector<std::size_t> idx(n_rows);
    for (std::size_t i = 0; i < n_rows; ++i) idx[i] = pick(rng);
    const auto v = metric(idx);
    if (v) values.push_back(*v);
  }
  std::sort(values.begin(), values.end());
  auto pct = [&](double q) {
    if (values.size() == 1) return values[0];
    const double pos = q * double(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
  };
  const double alpha = 1.0 - confidence;
  return {pct(alpha / 2.0), pct(1.0 - alpha / 2.0)};
}

inline double ndcg(const std::vector<double>& ref_scores_in_ref_order,
                   const std::vector<std::size_t>& live_order_as_ref_indices) {
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t i = 0; i < ref_scores_in_ref_order.size(); ++i) {
    const double discount = std::log2(double(i) + 2.0);
    dcg += ref_scores_in_ref_order[live_order_as_ref_indices[i]] / discount;
    idcg += ref_scores_in_ref_order[i] / discount;
  }
  return dcg / idcg;
}

}  // namespace oracle
