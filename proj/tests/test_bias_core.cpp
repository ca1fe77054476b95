#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fairlens/bias_core.hpp"
#include "support/oracles.hpp"

using namespace fairlens;

namespace {

// Running example: 6 rows in a (4 positive), 4 rows in d (1 positive).
const std::vector<int> kLabels = {1, 1, 1, 1, 0, 0, 1, 0, 0, 0};
const std::vector<char> kGroupChars = {'a', 'a', 'a', 'a', 'a',
                                       'a', 'd', 'd', 'd', 'd'};

BinaryVector to_binary(const std::vector<int>& v) {
  BinaryVector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = v[i];
  }
  return out;
}

GroupAssignment to_groups(const std::vector<char>& v) {
  GroupAssignment out;
  for (char c : v) out.push_back(c == 'a' ? Group::a : Group::d);
  return out;
}

GroupLabelCounts running_counts(int workers = 1) {
  return tally(to_binary(kLabels), to_groups(kGroupChars), workers);
}

}  // namespace

TEST_CASE("tally matches the hand-count oracle on the running example") {
  const auto expected = oracle::hand_tally(kLabels, kGroupChars);
  const GroupLabelCounts c = running_counts();
  CHECK(c.n == expected.n);
  CHECK(c.n == 10);
  CHECK(c.n_a == expected.n_a);
  CHECK(c.n_d == expected.n_d);
  CHECK(c.n0 == expected.n0);
  CHECK(c.n1 == expected.n1);
  CHECK(c.n_a1 == expected.n_a1);
  CHECK(c.n_d1 == expected.n_d1);
  CHECK(c.q_a() == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(c.q_d() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("tally identities hold and parallel runs agree") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 40; ++trial) {
    std::uniform_int_distribution<int> n_rows(2, 200);
    const int rows = n_rows(rng);
    std::vector<int> labels;
    std::vector<char> groups;
    bool has_a = false, has_d = false;
    for (int i = 0; i < rows; ++i) {
      labels.push_back(coin(rng));
      const char g = coin(rng) ? 'a' : 'd';
      groups.push_back(g);
      has_a = has_a || g == 'a';
      has_d = has_d || g == 'd';
    }
    if (!has_a || !has_d) continue;
    const GroupLabelCounts c1 = tally(to_binary(labels), to_groups(groups), 1);
    const GroupLabelCounts c4 = tally(to_binary(labels), to_groups(groups), 4);
    CHECK(c1.n == c4.n);
    CHECK(c1.n_a1 == c4.n_a1);
    CHECK(c1.n_d0 == c4.n_d0);
    CHECK(c1.n == c1.n_a + c1.n_d);
    CHECK(c1.n1 == c1.n_a1 + c1.n_d1);
    CHECK(c1.n0 == c1.n_a0 + c1.n_d0);
    CHECK(c1.n_a == c1.n_a0 + c1.n_a1);
    CHECK(c1.n_d == c1.n_d0 + c1.n_d1);
  }
}

TEST_CASE("tally edge cases") {
  CHECK(tally(to_binary({1, 1, 1}), to_groups({'a', 'a', 'd'})).q_a() == 1.0);
  CHECK(tally(to_binary({1, 1, 1}), to_groups({'a', 'a', 'd'})).q_d() == 1.0);
  const GroupLabelCounts single_d =
      tally(to_binary({1, 0}), to_groups({'a', 'd'}));
  CHECK(single_d.n_d == 1);
  CHECK(single_d.q_d() == 0.0);
  CHECK_THROWS_AS(tally(to_binary({1, 1}), to_groups({'a', 'a'})),
                  DegenerateFacet);
  CHECK_THROWS_AS(tally(to_binary({1}), to_groups({'a', 'd'})), LengthMismatch);
}

TEST_CASE("class imbalance") {
  CHECK(class_imbalance(running_counts()) == doctest::Approx(0.2).epsilon(1e-12));
  const GroupLabelCounts even = tally(to_binary({1, 0}), to_groups({'a', 'd'}));
  CHECK(class_imbalance(even) == 0.0);
}

TEST_CASE("dpl") {
  CHECK(dpl(running_counts()) ==
        doctest::Approx(2.0 / 3.0 - 0.25).epsilon(1e-12));
  const GroupLabelCounts identical =
      tally(to_binary({1, 0, 1, 0}), to_groups({'a', 'a', 'd', 'd'}));
  CHECK(dpl(identical) == 0.0);
}

TEST_CASE("cddl matches the hand-stratified oracle") {
  // S1: 6 rows, 3 negatives (2 in d), 3 positives (1 in d) => DD = 1/3.
  // S2: 4 rows, 2 negatives (1 in d), 2 positives (1 in d) => DD = 0.
  std::vector<int> labels = {0, 0, 0, 1, 1, 1, 0, 0, 1, 1};
  std::vector<char> groups = {'d', 'd', 'a', 'd', 'a', 'a', 'd', 'a', 'd', 'a'};
  std::vector<std::string> strata = {"s1", "s1", "s1", "s1", "s1",
                                     "s1", "s2", "s2", "s2", "s2"};
  Column strata_col;
  strata_col.name = "ctrl";
  for (const auto& s : strata) strata_col.values.emplace_back(s);

  const ConditionalDisparity cd =
      cddl(to_binary(labels), to_groups(groups), strata_col);
  CHECK(cd.value == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(cd.value ==
        doctest::Approx(oracle::cddl_stratified(labels, groups, strata))
            .epsilon(1e-12));
  REQUIRE(cd.strata.size() == 2);
  CHECK(cd.strata[0].dd == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(cd.strata[0].n == 6);
  CHECK(cd.strata[1].dd == 0.0);
  CHECK_FALSE(cd.any_degenerate);
}

TEST_CASE("cddl with a single stratum equals global DD") {
  Column constant;
  constant.name = "ctrl";
  for (int i = 0; i < 10; ++i) constant.values.emplace_back(std::string("x"));
  const ConditionalDisparity cd =
      cddl(to_binary(kLabels), to_groups(kGroupChars), constant);
  const auto c = oracle::hand_tally(kLabels, kGroupChars);
  const double global_dd =
      double(c.n_d0) / double(c.n0) - double(c.n_d1) / double(c.n1);
  CHECK(cd.value == doctest::Approx(global_dd).epsilon(1e-12));
}

TEST_CASE("cddl is zero when d is identically distributed in every stratum") {
  std::vector<int> labels = {1, 0, 1, 0, 1, 0, 1, 0};
  std::vector<char> groups = {'a', 'a', 'd', 'd', 'a', 'a', 'd', 'd'};
  Column strata_col;
  strata_col.name = "ctrl";
  for (int i = 0; i < 8; ++i) {
    strata_col.values.emplace_back(std::string(i < 4 ? "s1" : "s2"));
  }
  const ConditionalDisparity cd =
      cddl(to_binary(labels), to_groups(groups), strata_col);
  CHECK(cd.value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cddl flags strata lacking a label value") {
  std::vector<int> labels = {1, 1, 0, 1};
  std::vector<char> groups = {'a', 'd', 'a', 'd'};
  Column strata_col;
  strata_col.name = "ctrl";
  strata_col.values.emplace_back(std::string("only_pos"));
  strata_col.values.emplace_back(std::string("only_pos"));
  strata_col.values.emplace_back(std::string("mixed"));
  strata_col.values.emplace_back(std::string("mixed"));
  const ConditionalDisparity cd =
      cddl(to_binary(labels), to_groups(groups), strata_col);
  CHECK(cd.any_degenerate);
  bool found = false;
  for (const auto& s : cd.strata) {
    if (s.key == "only_pos") {
      CHECK(s.degenerate);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("divergence suite matches the scalar oracle on the worked example") {
  const DivergenceSuite suite = divergence_suite(running_counts());
  const double qa = 2.0 / 3.0;
  const double qd = 0.25;
  CHECK(suite.kl == doctest::Approx(oracle::kl(qa, qd)).epsilon(1e-9));
  CHECK(suite.kl == doctest::Approx(0.3836).epsilon(1e-3));
  CHECK(suite.js == doctest::Approx(oracle::js(qa, qd)).epsilon(1e-9));
  CHECK(suite.lp == doctest::Approx(oracle::lp(qa, qd, 2.0)).epsilon(1e-9));
  CHECK(suite.tvd == doctest::Approx(5.0 / 12.0).epsilon(1e-9));
  CHECK(suite.ks == doctest::Approx(5.0 / 12.0).epsilon(1e-9));
  const DivergenceSuite l1 = divergence_suite(running_counts(), 1.0);
  CHECK(l1.lp == doctest::Approx(5.0 / 6.0).epsilon(1e-9));
}

TEST_CASE("identical distributions give all-zero divergences") {
  const GroupLabelCounts c =
      tally(to_binary({1, 0, 1, 0}), to_groups({'a', 'a', 'd', 'd'}));
  const DivergenceSuite suite = divergence_suite(c);
  CHECK(suite.kl == 0.0);
  CHECK(suite.js == 0.0);
  CHECK(suite.lp == 0.0);
  CHECK(suite.tvd == 0.0);
  CHECK(suite.ks == 0.0);
}

TEST_CASE("disjoint supports: infinite KL, finite JS = ln 2, KS = 1") {
  const GroupLabelCounts c =
      tally(to_binary({1, 1, 0, 0}), to_groups({'a', 'a', 'd', 'd'}));
  const DivergenceSuite suite = divergence_suite(c);
  CHECK(std::isinf(suite.kl));
  CHECK(suite.js == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(suite.ks == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("exchange symmetry and bounds over random count tables") {
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<int> count(0, 30);
  for (int trial = 0; trial < 300; ++trial) {
    GroupLabelCounts c;
    c.n_a1 = count(rng);
    c.n_a0 = count(rng);
    c.n_d1 = count(rng);
    c.n_d0 = count(rng);
    c.n_a = c.n_a0 + c.n_a1;
    c.n_d = c.n_d0 + c.n_d1;
    if (c.n_a == 0 || c.n_d == 0) continue;
    c.n = c.n_a + c.n_d;
    c.n1 = c.n_a1 + c.n_d1;
    c.n0 = c.n_a0 + c.n_d0;

    GroupLabelCounts swapped;
    swapped.n_a1 = c.n_d1;
    swapped.n_a0 = c.n_d0;
    swapped.n_d1 = c.n_a1;
    swapped.n_d0 = c.n_a0;
    swapped.n_a = c.n_d;
    swapped.n_d = c.n_a;
    swapped.n = c.n;
    swapped.n1 = c.n1;
    swapped.n0 = c.n0;

    CHECK(class_imbalance(swapped) ==
          doctest::Approx(-class_imbalance(c)).epsilon(1e-12));
    CHECK(dpl(swapped) == doctest::Approx(-dpl(c)).epsilon(1e-12));

    const DivergenceSuite s1 = divergence_suite(c);
    const DivergenceSuite s2 = divergence_suite(swapped);
    CHECK(class_imbalance(c) >= -1.0);
    CHECK(class_imbalance(c) <= 1.0);
    CHECK(dpl(c) >= -1.0);
    CHECK(dpl(c) <= 1.0);
    CHECK(s1.ks >= 0.0);
    CHECK(s1.ks <= 1.0);
    CHECK(s1.tvd >= 0.0);
    CHECK(s1.tvd <= 1.0);
    CHECK(s1.js >= 0.0);
    CHECK(s1.js <= std::log(2.0) + 1e-12);
    CHECK(s1.kl >= 0.0);

    if (std::isfinite(s1.kl) && std::isfinite(s2.kl)) {
      CHECK(s1.kl ==
            doctest::Approx(oracle::kl(c.q_a(), c.q_d())).epsilon(1e-9));
      CHECK(s2.kl ==
            doctest::Approx(oracle::kl(c.q_d(), c.q_a())).epsilon(1e-9));
    }
    CHECK(s1.js == doctest::Approx(s2.js).epsilon(1e-12));
    CHECK(s1.tvd == doctest::Approx(s2.tvd).epsilon(1e-12));
    CHECK(s1.ks == doctest::Approx(s2.ks).epsilon(1e-12));
    CHECK(s1.lp == doctest::Approx(s2.lp).epsilon(1e-12));

    // TVD is exactly half the L1 norm.
    const DivergenceSuite l1 = divergence_suite(c, 1.0);
    CHECK(s1.tvd == 0.5 * l1.lp);
  }
}

TEST_CASE("metrics are invariant under row permutation") {
  std::mt19937_64 rng(555);
  const GroupLabelCounts before = running_counts();
  std::vector<std::size_t> perm(kLabels.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> pl(kLabels.size());
    std::vector<char> pg(kLabels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      pl[i] = kLabels[perm[i]];
      pg[i] = kGroupChars[perm[i]];
    }
    const GroupLabelCounts after = tally(to_binary(pl), to_groups(pg));
    CHECK(class_imbalance(after) == class_imbalance(before));
    CHECK(dpl(after) == dpl(before));
    CHECK(divergence_suite(after).kl == divergence_suite(before).kl);
  }
}
