#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "pencil_guard/detector.hpp"

using namespace pencil_guard;

namespace {

RealMatrix random_positive(std::size_t n, std::mt19937_64& rng, double lo = 0.1, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  RealMatrix m(n, n);
  for (auto& v : m.data()) v = u(rng);
  return m;
}

Spectrogram wrap(RealMatrix m, int label) {
  Spectrogram s;
  s.data = std::move(m);
  s.class_label = label;
  return s;
}

EigenFeature toy_feature(Vec v, FeatureLabel label, int cls = 0) {
  EigenFeature f;
  f.config = {v.size(), 30.0};
  f.values = std::move(v);
  f.label = label;
  f.class_label = cls;
  return f;
}

std::vector<EigenFeature> gaussian_features(std::size_t count, std::size_t dim, double shift, FeatureLabel label,
                                            std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<EigenFeature> out;
  for (std::size_t k = 0; k < count; ++k) {
    Vec v(dim);
    for (auto& x : v) x = g(rng) + shift;
    out.push_back(toy_feature(v, label, static_cast<int>(k % 3)));
  }
  return out;
}

}  // namespace

TEST(Features, IdenticalPairGivesZeroFeature) {
  std::mt19937_64 rng(1);
  const auto m = random_positive(8, rng);
  const auto f = pair_feature(m, m);
  ASSERT_EQ(f.values.size(), 8u);
  for (double v : f.values) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Features, IdentityAndDiagonalSchurFeatures) {
  const auto id = extract_test_feature(RealMatrix::identity(6));
  for (double v : id.values) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_EQ(id.source, FeatureSource::SingleSchur);

  RealMatrix d(5, 5);
  d(0, 0) = std::exp(2.0);
  d(1, 1) = std::exp(-2.0);
  const auto f = extract_test_feature(d);
  EXPECT_NEAR(f.values[0], 2.0, 1e-12);
  EXPECT_NEAR(f.values[1], -2.0, 1e-12);
  for (std::size_t k = 2; k < 5; ++k) EXPECT_EQ(f.values[k], -30.0);
}

TEST(Features, SchurFeatureEqualsPairAgainstIdentity) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 5; ++t) {
    const auto m = random_positive(10, rng);
    EXPECT_EQ(extract_test_feature(m).values, pair_feature(m, RealMatrix::identity(10)).values);
  }
}

TEST(Features, InfiniteEigenvaluesClipToCap) {
  RealMatrix a = RealMatrix::identity(3), b = RealMatrix::identity(3);
  b(2, 2) = 0.0;
  const auto f = pair_feature(a, b, 12.0);
  EXPECT_EQ(f.values[0], 12.0);
  for (double v : f.values) {
    EXPECT_LE(v, 12.0);
    EXPECT_GE(v, -12.0);
  }
}

TEST(Features, PairBuilderIsBalancedIntraClassAndSeeded) {
  std::mt19937_64 rng(3);
  std::vector<std::vector<Spectrogram>> leg(2), adv(2);
  for (int c = 0; c < 2; ++c) {
    for (int k = 0; k < 4; ++k) leg[c].push_back(wrap(random_positive(6, rng), c));
    for (int k = 0; k < 3; ++k) adv[c].push_back(wrap(random_positive(6, rng, 0.0, 1.5), c));
  }
  const auto a = build_pair_features(leg, adv, 10, 7);
  const auto b = build_pair_features(leg, adv, 10, 7, 30.0, 3);
  EXPECT_EQ(a.legitimate.size(), a.adversarial.size());
  EXPECT_EQ(a.legitimate.size(), 12u);
  ASSERT_EQ(a.legitimate.size(), b.legitimate.size());
  for (std::size_t k = 0; k < a.legitimate.size(); ++k) {
    EXPECT_EQ(a.legitimate[k].values, b.legitimate[k].values);
    EXPECT_EQ(a.adversarial[k].values, b.adversarial[k].values);
    EXPECT_NE(a.legitimate[k].i, a.legitimate[k].j);
    EXPECT_EQ(a.adversarial[k].label, FeatureLabel::Adversarial);
  }
  const auto few = build_pair_features(leg, adv, 2, 7);
  EXPECT_EQ(few.legitimate.size(), 4u);
  const auto none = build_pair_features(leg, adv, 0, 7);
  EXPECT_TRUE(none.legitimate.empty() && none.adversarial.empty());
  EXPECT_THROW(train_detector(none.legitimate, none.adversarial, {}, 1), Error);

  adv[1].resize(1);
  try {
    build_pair_features(leg, adv, 4, 7);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientBatch);
  }
}

TEST(Detector, SeparableToyReachesFullTrainingAuc) {
  std::vector<EigenFeature> leg, adv;
  for (int k = 0; k < 20; ++k) {
    leg.push_back(toy_feature({-1.0 - 0.1 * k, 0.3 * (k % 5)}, FeatureLabel::Legitimate));
    adv.push_back(toy_feature({1.0 + 0.1 * k, 0.3 * (k % 4)}, FeatureLabel::Adversarial));
  }
  const auto model = train_detector(leg, adv, {}, 1);
  EXPECT_LE(model.final_grad_norm, 1e-6);
  auto all = leg;
  all.insert(all.end(), adv.begin(), adv.end());
  EXPECT_EQ(evaluate_auc(model, all).auc, 1.0);
  EXPECT_GT(score(model, toy_feature({1e6, 0.0}, FeatureLabel::Adversarial)), 1.0 - 1e-12);
}

TEST(Detector, SameDistributionGivesChanceAuc) {
  std::mt19937_64 rng(4);
  const auto leg = gaussian_features(400, 8, 0.0, FeatureLabel::Legitimate, rng);
  const auto adv = gaussian_features(400, 8, 0.0, FeatureLabel::Adversarial, rng);
  const auto model = train_detector(leg, adv, {}, 2);
  auto held = gaussian_features(500, 8, 0.0, FeatureLabel::Legitimate, rng);
  const auto held_adv = gaussian_features(500, 8, 0.0, FeatureLabel::Adversarial, rng);
  held.insert(held.end(), held_adv.begin(), held_adv.end());
  EXPECT_NEAR(evaluate_auc(model, held).auc, 0.5, 0.05);
}

TEST(Detector, RestartsReachTheSameOptimum) {
  std::mt19937_64 rng(5);
  const auto leg = gaussian_features(150, 6, 0.0, FeatureLabel::Legitimate, rng);
  const auto adv = gaussian_features(150, 6, 0.4, FeatureLabel::Adversarial, rng);
  const auto a = train_detector(leg, adv, {}, 10);
  const auto b = train_detector(leg, adv, {}, 11);
  EXPECT_NEAR(a.final_loss, b.final_loss, 1e-8);
  EXPECT_LE(a.final_grad_norm, 1e-6);
}

TEST(Detector, DropsConstantColumns) {
  std::mt19937_64 rng(6);
  auto leg = gaussian_features(50, 4, 0.0, FeatureLabel::Legitimate, rng);
  auto adv = gaussian_features(50, 4, 1.0, FeatureLabel::Adversarial, rng);
  for (auto* set : {&leg, &adv})
    for (auto& f : *set) f.values[2] = 3.0;
  const auto model = train_detector(leg, adv, {}, 1);
  EXPECT_EQ(model.dropped_columns, std::vector<std::size_t>{2});
  EXPECT_EQ(model.weights[2], 0.0);
  EXPECT_TRUE(std::isfinite(model.margin(leg[0])));
}

TEST(Detector, ScoringContract) {
  std::mt19937_64 rng(7);
  const auto leg = gaussian_features(60, 5, 0.0, FeatureLabel::Legitimate, rng);
  const auto adv = gaussian_features(60, 5, 0.8, FeatureLabel::Adversarial, rng);
  auto model = train_detector(leg, adv, {}, 1);

  auto wrong = leg[0];
  wrong.config.clip_cap = 10.0;
  try {
    score(model, wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigMismatch);
  }
  EXPECT_THROW(score(model, toy_feature(Vec(4, 0.0), FeatureLabel::Legitimate)), Error);

  std::vector<std::pair<double, double>> mp;
  for (const auto& f : adv) mp.emplace_back(model.margin(f), score(model, f));
  std::sort(mp.begin(), mp.end());
  for (std::size_t k = 1; k < mp.size(); ++k) EXPECT_LE(mp[k - 1].second, mp[k].second);

  const auto back = DetectorModel::from_json(nlohmann::json::parse(model.to_json().dump()));
  for (const auto& f : leg) EXPECT_EQ(score(back, f), score(model, f));

  std::fill(model.weights.begin(), model.weights.end(), 0.0);
  model.bias = 0.0;
  for (const auto& f : adv) EXPECT_EQ(score(model, f), 0.5);
}

TEST(Auc, PerfectAndTiedScores) {
  EXPECT_EQ(evaluate_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}).auc, 1.0);
  EXPECT_EQ(evaluate_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}).auc, 0.5);
  const auto r = evaluate_auc({0.3, 0.7, 0.7, 0.2, 0.9}, {0, 1, 0, 0, 1});
  EXPECT_NEAR(r.auc, (3.0 + 2.5) / 6.0, 1e-15);
  EXPECT_EQ(r.roc.front().fpr, 0.0);
  EXPECT_EQ(r.roc.back().tpr, 1.0);
  try {
    evaluate_auc({0.1, 0.2}, {1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingleClassTestSet);
  }
}

TEST(Auc, RankStatisticMatchesTrapezoid) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> coarse(0, 9);
  std::bernoulli_distribution coin(0.4);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s(60);
    std::vector<int> y(60);
    for (std::size_t k = 0; k < s.size(); ++k) {
      y[k] = coin(rng);
      s[k] = coarse(rng) + 2.0 * y[k];
    }
    y[0] = 0;
    y[1] = 1;
    const auto r = evaluate_auc(s, y);
    EXPECT_NEAR(r.auc, trapezoid_auc(r.roc), 1e-12);
    std::vector<double> warped(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) warped[k] = std::exp(3.0 * s[k]) - 7.0;
    EXPECT_EQ(evaluate_auc(warped, y).auc, r.auc);
  }
}

TEST(Auc, ShuffledLabelsAverageToChance) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  double sum = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    std::vector<double> s(200);
    std::vector<int> y(200);
    for (std::size_t k = 0; k < s.size(); ++k) {
      s[k] = g(rng);
      y[k] = k % 2;
    }
    std::shuffle(y.begin(), y.end(), rng);
    sum += evaluate_auc(s, y).auc;
  }
  EXPECT_NEAR(sum / 100.0, 0.5, 0.05);
}

TEST(Auc, ClassWiseBreakdown) {
  const auto r = evaluate_auc({0.1, 0.9, 0.6, 0.4, 0.5}, {0, 1, 0, 1, 1}, {0, 0, 1, 1, 2});
  ASSERT_EQ(r.class_wise.size(), 2u);
  EXPECT_EQ(r.class_wise.at(0), 1.0);
  EXPECT_EQ(r.class_wise.at(1), 0.0);
  EXPECT_EQ(*r.class_wise_mean, 0.5);
}
