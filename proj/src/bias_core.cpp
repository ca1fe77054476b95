#include "fairlens/bias_core.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <mutex>

#include "fairlens/parallel.hpp"

namespace fairlens {

GroupLabelCounts tally(const BinaryVector& labels, const GroupAssignment& groups,
                       int workers) {
  if (static_cast<std::size_t>(labels.size()) != groups.size()) {
    throw LengthMismatch("labels (" + std::to_string(labels.size()) +
                         ") and groups (" + std::to_string(groups.size()) +
                         ") differ in length");
  }
  const std::size_t n = groups.size();

  GroupLabelCounts total;
  std::mutex merge_mutex;
  parallel_chunks(n, workers, [&](std::size_t begin, std::size_t end) {
    GroupLabelCounts local;
    for (std::size_t i = begin; i < end; ++i) {
      const bool positive = labels[static_cast<Eigen::Index>(i)] != 0;
      if (groups[i] == Group::a) {
        ++(positive ? local.n_a1 : local.n_a0);
      } else {
        ++(positive ? local.n_d1 : local.n_d0);
      }
    }
    std::lock_guard<std::mutex> lock(merge_mutex);
    total.n_a0 += local.n_a0;
    total.n_a1 += local.n_a1;
    total.n_d0 += local.n_d0;
    total.n_d1 += local.n_d1;
  });

  total.n_a = total.n_a0 + total.n_a1;
  total.n_d = total.n_d0 + total.n_d1;
  total.n0 = total.n_a0 + total.n_d0;
  total.n1 = total.n_a1 + total.n_d1;
  total.n = total.n_a + total.n_d;
  if (total.n_a == 0 || total.n_d == 0) {
    throw DegenerateFacet("tally requires both groups nonempty");
  }
  return total;
}

double class_imbalance(const GroupLabelCounts& c) {
  return static_cast<double>(c.n_a - c.n_d) / static_cast<double>(c.n);
}

double dpl(const GroupLabelCounts& c) { return c.q_a() - c.q_d(); }

ConditionalDisparity cddl(const BinaryVector& labels,
                          const GroupAssignment& groups, const Column& strata) {
  if (static_cast<std::size_t>(labels.size()) != groups.size() ||
      groups.size() != strata.values.size()) {
    throw LengthMismatch("labels, groups and strata must have equal length");
  }
  const std::size_t n = groups.size();

  struct StratumCounts {
    std::int64_t n = 0;
    std::int64_t n0 = 0, n1 = 0;    // label counts within the stratum
    std::int64_t n_d0 = 0, n_d1 = 0;  // of which in group d
  };
  std::map<std::string, StratumCounts> by_key;
  for (std::size_t i = 0; i < n; ++i) {
    const Cell& cell = strata.values[i];
    if (cell_missing(cell)) {
      throw MissingCell("strata cell missing in column '" + strata.name +
                        "' at row " + std::to_string(i + 1));
    }
    const std::string* s = cell_scalar(cell);
    if (s == nullptr) {
      throw MissingCell("strata cell in column '" + strata.name + "' at row " +
                        std::to_string(i + 1) + " is a list");
    }
    StratumCounts& sc = by_key[*s];
    ++sc.n;
    const bool positive = labels[static_cast<Eigen::Index>(i)] != 0;
    ++(positive ? sc.n1 : sc.n0);
    if (groups[i] == Group::d) ++(positive ? sc.n_d1 : sc.n_d0);
  }

  ConditionalDisparity out;
  double weighted = 0.0;
  for (const auto& [key, sc] : by_key) {
    StratumDisparity sd;
    sd.key = key;
    sd.n = sc.n;
    double neg_ratio = 0.0, pos_ratio = 0.0;
    if (sc.n0 > 0) {
      neg_ratio = static_cast<double>(sc.n_d0) / static_cast<double>(sc.n0);
    } else {
      sd.degenerate = true;
    }
    if (sc.n1 > 0) {
      pos_ratio = static_cast<double>(sc.n_d1) / static_cast<double>(sc.n1);
    } else {
      sd.degenerate = true;
    }
    sd.dd = neg_ratio - pos_ratio;
    weighted += static_cast<double>(sc.n) * sd.dd;
    out.any_degenerate = out.any_degenerate || sd.degenerate;
    out.strata.push_back(std::move(sd));
  }
  out.value = weighted / static_cast<double>(n);
  return out;
}

double kl_binary(double p1, double q1) {
  auto term = [](double p, double q) {
    if (p == 0.0) return 0.0;
    if (q == 0.0) return std::numeric_limits<double>::infinity();
    return p * std::log(p / q);
  };
  return term(p1, q1) + term(1.0 - p1, 1.0 - q1);
}

DivergenceSuite divergence_suite(const GroupLabelCounts& c, double p) {
  const double qa = c.q_a();
  const double qd = c.q_d();

  DivergenceSuite out;
  out.p = p;
  out.kl = kl_binary(qa, qd);

  const double m1 = 0.5 * (qa + qd);  // mean distribution over the two labels
  out.js = 0.5 * (kl_binary(qa, m1) + kl_binary(qd, m1));

  const double diff1 = std::abs(qa - qd);
  const double diff0 = std::abs((1.0 - qa) - (1.0 - qd));
  out.lp = (p == 1.0)
               ? diff1 + diff0
               : std::pow(std::pow(diff1, p) + std::pow(diff0, p), 1.0 / p);
  out.tvd = 0.5 * (diff1 + diff0);
  out.ks = std::max(diff1, diff0);
  return out;
}

}  // namespace fairlens
