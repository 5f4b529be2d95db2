#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cner/crf.hpp"
#include "oracles.hpp"

using namespace cner;
using oracle::Matrix;

TEST(CrfExamples, ZeroScoresGiveUniformPartition) {
  const Matrix em({4, 3}), tr({5, 5});
  EXPECT_NEAR(crf_log_partition(em, tr), 4 * std::log(3.0), 1e-12);
  const auto vit = viterbi_decode(em, tr);
  EXPECT_EQ(vit.path, (std::vector<int>{0, 0, 0, 0}));
  EXPECT_EQ(vit.score, 0.0);
  for (const auto& row : crf_marginals(em, tr)) {
    for (double p : row) EXPECT_NEAR(p, 1.0 / 3, 1e-12);
  }
}

TEST(CrfExamples, ZeroTransitionsFactorise) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(8), k = 1 + rng.index(5);
    const Matrix em = oracle::random_matrix(n, k, rng, 3.0);
    const Matrix tr({k + 2, k + 2});
    double expected = 0.0;
    std::vector<int> argmax;
    for (std::size_t t = 0; t < n; ++t) {
      double z = 0.0;
      int best = 0;
      for (std::size_t j = 0; j < k; ++j) {
        z += std::exp(em(t, j));
        if (em(t, j) > em(t, static_cast<std::size_t>(best))) best = static_cast<int>(j);
      }
      expected += std::log(z);
      argmax.push_back(best);
    }
    EXPECT_NEAR(crf_log_partition(em, tr), expected, 1e-10);
    EXPECT_EQ(viterbi_decode(em, tr).path, argmax);
  }
}

TEST(CrfExamples, ShapeAndValueErrors) {
  EXPECT_THROW(crf_log_partition(Matrix({0, 3}), Matrix({5, 5})), nn::DimensionError);
  EXPECT_THROW(crf_log_partition(Matrix({2, 3}), Matrix({4, 4})), nn::DimensionError);
  Matrix em({2, 3});
  em(1, 1) = std::nan("");
  EXPECT_THROW(crf_log_partition(em, Matrix({5, 5})), std::invalid_argument);
  const std::vector<int> short_path = {0};
  EXPECT_THROW(crf_path_score(Matrix({2, 3}), Matrix({5, 5}), short_path), nn::DimensionError);
  const std::vector<int> bad_tag = {0, 3};
  EXPECT_THROW(crf_path_score(Matrix({2, 3}), Matrix({5, 5}), bad_tag), std::out_of_range);
}

TEST(CrfOracle, MatchesBruteForceEnumeration) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(5), k = 1 + rng.index(4);
    const Matrix em = oracle::random_matrix(n, k, rng, 2.0);
    const Matrix tr = oracle::random_matrix(k + 2, k + 2, rng, 2.0);
    const auto brute = oracle::enumerate(em, tr);
    ASSERT_NEAR(crf_log_partition(em, tr), brute.log_z, 1e-9);
    const auto vit = viterbi_decode(em, tr);
    ASSERT_EQ(vit.path, brute.best);
    ASSERT_NEAR(vit.score, brute.best_score, 1e-9);
    ASSERT_NEAR(crf_path_score(em, tr, vit.path), vit.score, 1e-9);
    const auto marg = crf_marginals(em, tr);
    for (std::size_t t = 0; t < n; ++t) {
      double total = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        ASSERT_NEAR(marg[t][j], brute.marginals[t][j], 1e-9);
        total += marg[t][j];
      }
      ASSERT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(CrfOracle, ViterbiOptimalUnderTies) {
  // Integer scores make ties common; any tied path is acceptable but it must score the maximum.
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.index(4), k = 2 + rng.index(3);
    Matrix em({n, k}), tr({k + 2, k + 2});
    for (auto& v : em.values()) v = static_cast<double>(rng.index(2));
    for (auto& v : tr.values()) v = static_cast<double>(rng.index(2));
    const auto vit = viterbi_decode(em, tr);
    ASSERT_EQ(crf_path_score(em, tr, vit.path), oracle::enumerate(em, tr).best_score);
    ASSERT_EQ(vit.path, viterbi_decode(em, tr).path);
  }
}

TEST(CrfNll, NonNegativeAndZeroOnlyForCertainty) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.index(5), k = 1 + rng.index(4);
    const Matrix em = oracle::random_matrix(n, k, rng, 2.0);
    const Matrix tr = oracle::random_matrix(k + 2, k + 2, rng, 2.0);
    std::vector<int> gold(n);
    for (auto& y : gold) y = static_cast<int>(rng.index(k));
    ASSERT_GE(crf_nll(em, tr, gold), -1e-12);
  }
  Matrix em({3, 2}, -50.0);
  for (std::size_t t = 0; t < 3; ++t) em(t, 1) = 50.0;
  EXPECT_NEAR(crf_nll(em, Matrix({4, 4}), std::vector<int>{1, 1, 1}), 0.0, 1e-12);
}

TEST(CrfNll, GradientIsMarginalsMinusGold) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(4), k = 1 + rng.index(3);
    const Matrix em = oracle::random_matrix(n, k, rng, 1.5);
    const Matrix tr = oracle::random_matrix(k + 2, k + 2, rng, 1.5);
    std::vector<int> gold(n);
    for (auto& y : gold) y = static_cast<int>(rng.index(k));
    Matrix d_em({n, k}), d_tr({k + 2, k + 2});
    crf_nll(em, tr, gold, &d_em, &d_tr, 1.0);

    // Expected transition counts under the model, from enumeration.
    const auto brute = oracle::enumerate(em, tr);
    Matrix expect_tr({k + 2, k + 2});
    const auto paths = oracle::all_paths(n, k);
    for (const auto& p : paths) {
      const double pr = std::exp(oracle::path_score(em, tr, p) - brute.log_z);
      expect_tr(k, static_cast<std::size_t>(p[0])) += pr;
      for (std::size_t t = 1; t < n; ++t) expect_tr(static_cast<std::size_t>(p[t - 1]), static_cast<std::size_t>(p[t])) += pr;
      expect_tr(static_cast<std::size_t>(p.back()), k + 1) += pr;
    }
    expect_tr(k, static_cast<std::size_t>(gold[0])) -= 1;
    for (std::size_t t = 1; t < n; ++t) expect_tr(static_cast<std::size_t>(gold[t - 1]), static_cast<std::size_t>(gold[t])) -= 1;
    expect_tr(static_cast<std::size_t>(gold.back()), k + 1) -= 1;
    for (std::size_t i = 0; i < expect_tr.size(); ++i) ASSERT_NEAR(d_tr[i], expect_tr[i], 1e-9);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < k; ++j) {
        ASSERT_NEAR(d_em(t, j), brute.marginals[t][j] - (gold[t] == static_cast<int>(j)), 1e-9);
      }
    }
  }
}

TEST(CrfNll, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  const std::size_t n = 5, k = 4;
  Matrix em = oracle::random_matrix(n, k, rng, 1.0);
  Matrix tr = oracle::random_matrix(k + 2, k + 2, rng, 1.0);
  const std::vector<int> gold = {0, 1, 3, 2, 2};
  Matrix d_em({n, k}), d_tr({k + 2, k + 2});
  const double scale = 0.25;
  crf_nll(em, tr, gold, &d_em, &d_tr, scale);
  auto check = [&](Matrix& target, const Matrix& grad) {
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double keep = target[i];
      target[i] = keep + 1e-6;
      const double up = crf_nll(em, tr, gold);
      target[i] = keep - 1e-6;
      const double down = crf_nll(em, tr, gold);
      target[i] = keep;
      ASSERT_NEAR(grad[i], scale * (up - down) / 2e-6, 1e-8) << i;
    }
  };
  check(em, d_em);
  check(tr, d_tr);
}

TEST(BioStructure, ForbiddenTransitions) {
  const TagSet tags({"X", "Y"});  // B-X I-X B-Y I-Y O, START 5, STOP 6
  const std::size_t start = 5, stop = 6;
  auto allowed = [&](std::size_t a, std::size_t b) { return bio_transition_allowed(tags, a, b); };
  EXPECT_TRUE(allowed(0, 1));      // B-X -> I-X
  EXPECT_TRUE(allowed(1, 1));      // I-X -> I-X
  EXPECT_FALSE(allowed(0, 3));     // B-X -> I-Y
  EXPECT_FALSE(allowed(4, 1));     // O -> I-X
  EXPECT_FALSE(allowed(start, 3)); // START -> I-Y
  EXPECT_TRUE(allowed(start, 2));
  EXPECT_TRUE(allowed(3, stop));
  EXPECT_FALSE(allowed(stop, 0));
  EXPECT_FALSE(allowed(0, start));
  EXPECT_TRUE(allowed(4, 0));
  const auto mask = bio_forbidden_mask(tags);
  ASSERT_EQ(mask.size(), 49u);
  std::size_t forbidden = 0;
  for (bool b : mask) forbidden += b;
  // into START: 7, out of STOP: 6 more (STOP->START counted), START->I: 2,
  // O->I: 2, X->I-Y and Y->I-X from B and I: 4.
  EXPECT_EQ(forbidden, 7u + 6u + 2u + 2u + 4u);
}

TEST(BioStructure, ClampedDecodesAreAlwaysValidBio) {
  const TagSet tags({"A", "B", "C"});
  const std::size_t k = static_cast<std::size_t>(tags.size());
  const auto mask = bio_forbidden_mask(tags);
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.index(10);
    const Matrix em = oracle::random_matrix(n, k, rng, 5.0);
    Matrix tr = oracle::random_matrix(k + 2, k + 2, rng, 5.0);
    clamp_transitions(tr, mask);
    std::vector<std::string> decoded;
    for (int y : viterbi_decode(em, tr).path) decoded.push_back(tags.tag(y));
    ASSERT_TRUE(is_valid_bio(decoded));
  }
  Matrix wrong({3, 3});
  EXPECT_THROW(clamp_transitions(wrong, mask), nn::DimensionError);
}
