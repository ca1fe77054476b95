#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairlens/tabular.hpp"
#include "fairlens/types.hpp"

namespace fairlens {

// The count family over labels and groups. All identities (n = n_a + n_d,
// n_a = n_a0 + n_a1, ...) hold exactly by construction in tally().
struct GroupLabelCounts {
  std::int64_t n = 0;
  std::int64_t n_a = 0, n_d = 0;
  std::int64_t n0 = 0, n1 = 0;
  std::int64_t n_a0 = 0, n_a1 = 0;
  std::int64_t n_d0 = 0, n_d1 = 0;

  // Positive-label rates per group.
  double q_a() const { return static_cast<double>(n_a1) / static_cast<double>(n_a); }
  double q_d() const { return static_cast<double>(n_d1) / static_cast<double>(n_d); }
};

// Parallel count reduction over row chunks. Both groups must be nonempty.
GroupLabelCounts tally(const BinaryVector& labels, const GroupAssignment& groups,
                       int workers = 1);

// (n_a - n_d) / n
double class_imbalance(const GroupLabelCounts& c);

// q_a - q_d
double dpl(const GroupLabelCounts& c);

// Demographic disparity of one stratum of the control attribute.
struct StratumDisparity {
  std::string key;
  std::int64_t n = 0;
  double dd = 0.0;
  // A label value absent inside the stratum leaves one ratio undefined; that
  // term counts as 0 and the stratum is flagged.
  bool degenerate = false;
};

struct ConditionalDisparity {
  double value = 0.0;
  std::vector<StratumDisparity> strata;
  bool any_degenerate = false;
};

// Conditional demographic disparity in labels controlled for `strata`:
// per-stratum DD_i on stratum-local counts, combined as (1/n) * sum n_i * DD_i.
ConditionalDisparity cddl(const BinaryVector& labels,
                          const GroupAssignment& groups, const Column& strata);

// Divergences between the per-group label distributions P_a = (q_a, 1-q_a)
// and P_d = (q_d, 1-q_d). KL/JS use natural log (values in nats); kl is +inf
// when P_d lacks mass somewhere P_a has it; js is always finite.
struct DivergenceSuite {
  double kl = 0.0;
  double js = 0.0;
  double lp = 0.0;
  double tvd = 0.0;
  double ks = 0.0;
  double p = 2.0;  // the order lp was computed with
};

DivergenceSuite divergence_suite(const GroupLabelCounts& c, double p = 2.0);

// kl divergence between two-point distributions (p1, 1-p1) and (q1, 1-q1).
double kl_binary(double p1, double q1);

}  // namespace fairlens
