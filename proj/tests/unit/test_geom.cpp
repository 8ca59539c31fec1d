#include "amos/geom/features.hpp"
#include "amos/geom/ransac.hpp"
#include "amos/geom/registration.hpp"
#include "amos/geom/views.hpp"
#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

namespace amos::geom {
namespace {

GrayImage square_image() {
  GrayImage img(100, 100, 0.0F);
  for (int y = 30; y < 70; ++y)
    for (int x = 30; x < 70; ++x) img(x, y) = 255.0F;
  return img;
}

TEST(Harris, ConstantImageHasNoKeypoints) {
  EXPECT_TRUE(detect_keypoints(GrayImage(64, 64, 90.0F)).empty());
}

TEST(Harris, SquareCornersFound) {
  const auto kps = detect_keypoints(square_image());
  ASSERT_GE(kps.size(), 4U);
  // The step sits between pixels 29 and 30 (and 69 and 70).
  for (auto [cx, cy] : std::vector<std::pair<double, double>>{{29.5, 29.5}, {69.5, 29.5}, {29.5, 69.5}, {69.5, 69.5}}) {
    double best = 1e9;
    for (const auto& k : kps) best = std::min(best, std::max(std::abs(k.x - cx), std::abs(k.y - cy)));
    EXPECT_LE(best, 1.0) << cx << "," << cy;
  }
}

TEST(Harris, RespectsBudgetAndBorder) {
  const GrayImage img = testing::textured_scene(160, 120, 3);
  const auto kps = detect_keypoints(img, 25);
  EXPECT_LE(kps.size(), 25U);
  for (std::size_t i = 1; i < kps.size(); ++i) EXPECT_GE(kps[i - 1].response, kps[i].response);
  for (const auto& k : kps) {
    EXPECT_GE(k.x, 7.5);
    EXPECT_LE(k.x, 160 - 7.5);
  }
  EXPECT_THROW(detect_keypoints(GrayImage(31, 64)), std::invalid_argument);
}

TEST(Descriptor, UnitNormAndAffineInvariant) {
  auto rng = make_rng(1);
  std::uniform_real_distribution<double> u(0, 255);
  for (int t = 0; t < 50; ++t) {
    std::vector<float> v(kDescriptorDim), w(kDescriptorDim);
    const double a = 0.2 + 3 * u(rng) / 255, b = u(rng) - 128;
    for (int i = 0; i < kDescriptorDim; ++i) {
      v[static_cast<std::size_t>(i)] = static_cast<float>(u(rng));
      w[static_cast<std::size_t>(i)] = static_cast<float>(a * v[static_cast<std::size_t>(i)] + b);
    }
    normalize_patch(v);
    normalize_patch(w);
    double norm = 0, diff = 0;
    for (int i = 0; i < kDescriptorDim; ++i) {
      norm += v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
      diff = std::max(diff, std::abs(static_cast<double>(v[static_cast<std::size_t>(i)] - w[static_cast<std::size_t>(i)])));
    }
    EXPECT_NEAR(norm, 1.0, 1e-5);
    EXPECT_LT(diff, 1e-4);
  }
}

TEST(Descriptor, ConstantPatchGetsFixedUnitVector) {
  std::vector<float> v(kDescriptorDim, 33.0F);
  normalize_patch(v);
  for (float x : v) EXPECT_NEAR(x, 1.0 / 16.0, 1e-7);
}

// Independent patches of white noise are nearly orthogonal unit vectors.
TEST(Descriptor, NoisePatchesSitNearSqrtTwo) {
  auto rng = make_rng(2);
  std::normal_distribution<double> n(128, 30);
  double total = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    std::vector<float> a(kDescriptorDim), b(kDescriptorDim);
    for (auto& x : a) x = static_cast<float>(n(rng));
    for (auto& x : b) x = static_cast<float>(n(rng));
    normalize_patch(a);
    normalize_patch(b);
    double d = 0;
    for (int i = 0; i < kDescriptorDim; ++i)
      d += (a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)]) * (a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)]);
    total += std::sqrt(d);
  }
  EXPECT_NEAR(total / trials, std::sqrt(2.0), 0.02);
}

TEST(Descriptor, DropsKeypointsNearBorder) {
  const GrayImage img = testing::textured_scene(64, 64, 1);
  std::vector<Keypoint> kps{{32, 32, 1}, {2, 32, 1}, {40, 20, 1}, {63, 63, 1}};
  const auto d = describe_keypoints(img, kps);
  EXPECT_EQ(d.keypoint_index, (std::vector<int>{0, 2}));
  EXPECT_EQ(d.vectors.rows(), 2);
  EXPECT_EQ(d.vectors.cols(), kDescriptorDim);
}

DescriptorMatrix random_unit_rows(int n, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<float> g;
  DescriptorMatrix m(n, kDescriptorDim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < kDescriptorDim; ++j) m(i, j) = g(rng);
    m.row(i).normalize();
  }
  return m;
}

TEST(RatioMatching, IdenticalSetsMatchOneToOne) {
  const auto d = random_unit_rows(40, 3);
  const auto m = match_ratio(d, d);
  ASSERT_EQ(m.size(), 40U);
  for (const auto& x : m) {
    EXPECT_EQ(x.a, x.b);
    EXPECT_NEAR(x.distance, 0.0F, 5e-3);
  }
}

TEST(RatioMatching, EquidistantNeighboursRejected) {
  DescriptorMatrix a = DescriptorMatrix::Zero(1, 4), b = DescriptorMatrix::Zero(2, 4);
  a(0, 0) = 1;
  b(0, 1) = 1;
  b(1, 2) = 1;
  EXPECT_TRUE(match_ratio(a, b).empty());
}

TEST(RatioMatching, PlantedCorrespondencesRecovered) {
  const auto b = random_unit_rows(300, 4);
  auto rng = make_rng(5);
  std::normal_distribution<float> g(0, 0.05F / std::sqrt(static_cast<float>(kDescriptorDim)));
  DescriptorMatrix a = b;
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < kDescriptorDim; ++j) a(i, j) += g(rng);
    a.row(i).normalize();
  }
  int correct = 0;
  for (const auto& m : match_ratio(a, b)) correct += m.a == m.b;
  EXPECT_GE(correct, 270);
}

TEST(RatioMatching, Preconditions) {
  const auto d = random_unit_rows(3, 6);
  EXPECT_THROW(match_ratio(DescriptorMatrix(0, kDescriptorDim), d), std::invalid_argument);
  EXPECT_THROW(match_ratio(d, d.topRows(1)), std::invalid_argument);
  EXPECT_THROW(match_ratio(d, DescriptorMatrix::Zero(3, 8)), std::invalid_argument);
}

Homography random_homography(Rng& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::Matrix3d m;
  m << 1 + 0.1 * u(rng), 0.1 * u(rng), 40 * u(rng), 0.1 * u(rng), 1 + 0.1 * u(rng), 40 * u(rng), 1e-4 * u(rng),
      1e-4 * u(rng), 1;
  return Homography(m);
}

std::vector<Correspondence> synthetic_pairs(const Homography& h, int n_in, int n_out, double noise, Rng& rng) {
  std::uniform_real_distribution<double> pos(0, 720);
  std::normal_distribution<double> g(0, noise);
  std::vector<Correspondence> pairs;
  for (int i = 0; i < n_in; ++i) {
    const Eigen::Vector2d a(pos(rng), pos(rng));
    pairs.push_back({a, h.apply(a) + Eigen::Vector2d(g(rng), g(rng))});
  }
  for (int i = 0; i < n_out; ++i) pairs.push_back({{pos(rng), pos(rng)}, {pos(rng), pos(rng)}});
  std::shuffle(pairs.begin(), pairs.end(), rng);
  return pairs;
}

TEST(Ransac, FourExactIdentityPairs) {
  const std::vector<Correspondence> pairs{{{0, 0}, {0, 0}}, {{100, 0}, {100, 0}}, {{0, 100}, {0, 100}}, {{100, 100}, {100, 100}}};
  const auto r = estimate_homography_ransac(pairs, {}, 1);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->inlier_count, 4);
  EXPECT_LT(sad_to_identity(r->h), 1e-9);
}

TEST(Ransac, RecoversHomographyUnderOutliers) {
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = make_rng(seed + 77);
    const Homography truth = seed % 2 ? random_homography(rng) : Homography::from_row_major({1.02, 0.01, 3, -0.01, 0.98, -2, 1e-5, 0, 1});
    const auto pairs = synthetic_pairs(truth, 70, 30, 0.25, rng);
    const auto r = estimate_homography_ransac(pairs, {}, seed);
    ASSERT_TRUE(r);
    ok += max_corner_distance(r->h, truth, 720, 720) < 0.5;
    // The refit never reports less support than the best minimal-sample model.
    EXPECT_GE(r->inlier_count, r->best_hypothesis_inliers);
  }
  EXPECT_GE(ok, 19);
}

TEST(Ransac, CollinearPointsFail) {
  std::vector<Correspondence> pairs;
  for (int i = 0; i < 30; ++i) pairs.push_back({{10.0 * i, 5.0 * i}, {10.0 * i + 3, 5.0 * i}});
  EXPECT_FALSE(estimate_homography_ransac(pairs, {}, 3));
}

TEST(Ransac, TooFewPairsThrow) {
  const std::vector<Correspondence> pairs(3);
  EXPECT_THROW(estimate_homography_ransac(pairs, {}, 0), std::invalid_argument);
}

TEST(Ransac, SymmetricTransferErrorOfExactPairIsZero) {
  auto rng = make_rng(9);
  const Homography h = random_homography(rng);
  const Eigen::Vector2d a(100, 200);
  EXPECT_NEAR(symmetric_transfer_error(h, h.inverse(), {a, h.apply(a)}), 0.0, 1e-9);
  // Offsetting b by (3, 4) costs 5 px forward plus the backward residual.
  const double e = symmetric_transfer_error(Homography::identity(), Homography::identity(), {a, a + Eigen::Vector2d(3, 4)});
  EXPECT_NEAR(e, std::sqrt(50.0), 1e-12);
}

TEST(MatchPair, IdenticalImagesGiveIdentity) {
  const GrayImage img = testing::textured_scene(200, 200, 5);
  const MatcherConfig cfg;
  const auto f = compute_features(img, cfg);
  const auto o = match_pair(f, f, cfg, 1);
  ASSERT_TRUE(o.matched);
  EXPECT_EQ(o.inliers, static_cast<int>(f.descriptors.vectors.rows()));
  EXPECT_LT(sad_to_identity(o.h), 1e-6);
}

TEST(ClusterViews, IdenticalImagesFormOneView) {
  const GrayImage img = testing::textured_scene(200, 200, 6);
  std::vector<GrayImage> imgs(50, img);
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back("f" + std::to_string(100 + i));
  const auto views = cluster_views(ids, std::span<const GrayImage>(imgs), {}, {}, 1);
  ASSERT_EQ(views.size(), 1U);
  EXPECT_EQ(views[0].size(), 50U);
  EXPECT_EQ(views[0].reference_image_id, "f100");
}

TEST(ClusterViews, ViewpointSwitchSplitsIntoTwoViews) {
  GrayImage base = testing::textured_scene(460, 240, 7);
  std::vector<GrayImage> imgs;
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) {
    const double tx = (i % 2 == 0) ? 0.0 : 220.0;
    GrayImage f = testing::render(base, Homography::translation(tx, 0), 240, 240);
    testing::add_noise(f, 2.0, static_cast<std::uint64_t>(i));
    imgs.push_back(std::move(f));
    ids.push_back("f" + std::to_string(100 + i));
  }
  const auto views = cluster_views(ids, std::span<const GrayImage>(imgs), {}, {}, 2);
  ASSERT_EQ(views.size(), 2U);
  EXPECT_EQ(views[0].size(), 25U);
  EXPECT_EQ(views[1].size(), 25U);
  for (const auto& m : views[1].members) EXPECT_EQ((m.image_id.back() - '0') % 2, 1);
}

PairOutcome fake(int inliers, double shift) { return {true, inliers, Homography::translation(shift, 0)}; }

TEST(ClusterViews, JoinThresholdsAreStrict) {
  const std::vector<std::string> ids{"r", "a", "b", "c", "d"};
  const std::vector<PairOutcome> outcome{{}, fake(50, 0), fake(51, 49.9), fake(51, 50.0), fake(200, 0)};
  PairMatcher m = [&](std::size_t r, std::size_t c) { return r == 0 ? outcome[c] : PairOutcome{}; };
  const auto views = cluster_views(ids, m, {});
  ASSERT_EQ(views.size(), 3U);
  std::vector<std::string> first;
  for (const auto& x : views[0].members) first.push_back(x.image_id);
  EXPECT_EQ(first, (std::vector<std::string>{"r", "b", "d"}));
  EXPECT_EQ(views[1].reference_image_id, "a");
  EXPECT_EQ(views[2].reference_image_id, "c");
}

TEST(ClusterViews, PartitionAndOrderProperty) {
  auto rng = make_rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 30);
    std::vector<int> group(static_cast<std::size_t>(n));
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
      group[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 4);
      ids.push_back("i" + std::to_string(i));
    }
    PairMatcher m = [&](std::size_t r, std::size_t c) {
      return group[r] == group[c] ? fake(100, 0) : PairOutcome{};
    };
    const auto views = cluster_views(ids, m, {}, 1 + trial % 3);
    std::multiset<std::string> seen;
    for (const auto& v : views) {
      for (std::size_t k = 1; k < v.members.size(); ++k) {
        EXPECT_LT(v.members[k - 1].image_id.size() * 1000 + std::stoi(v.members[k - 1].image_id.substr(1)),
                  v.members[k].image_id.size() * 1000 + std::stoi(v.members[k].image_id.substr(1)));
      }
      for (const auto& x : v.members) seen.insert(x.image_id);
    }
    EXPECT_EQ(seen, std::multiset<std::string>(ids.begin(), ids.end()));
    std::set<int> groups(group.begin(), group.end());
    EXPECT_EQ(views.size(), groups.size());
  }
}

View view_of_size(const std::string& id, int n) {
  View v{id, id + "_0", {}, ViewStatus::raw, {}};
  for (int i = 0; i < n; ++i) v.members.push_back({id + "_" + std::to_string(i), Homography::identity()});
  return v;
}

TEST(DominantView, KeepsLargestAndSubsamples) {
  const auto out = keep_dominant_view({view_of_size("a", 60), view_of_size("b", 10)}, 50, 50, 1);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->view_id, "a");
  EXPECT_EQ(out->size(), 50U);
  EXPECT_EQ(out->members[0].image_id, "a_0");
  std::set<std::string> ids;
  for (const auto& m : out->members) ids.insert(m.image_id);
  EXPECT_EQ(ids.size(), 50U);
  EXPECT_EQ(keep_dominant_view({view_of_size("a", 60), view_of_size("b", 10)}, 50, 50, 1)->members.size(), 50U);
}

TEST(DominantView, ExactlyFiftyIsNotEnough) {
  EXPECT_FALSE(keep_dominant_view({view_of_size("a", 50), view_of_size("b", 30)}, 50, 50, 1));
  const auto out = keep_dominant_view({view_of_size("a", 51)}, 50, 50, 1);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->size(), 50U);
  EXPECT_EQ(out->members[0].image_id, "a_0");
}

TEST(DominantView, TieGoesToEarliest) {
  const auto out = keep_dominant_view({view_of_size("a", 55), view_of_size("b", 55)}, 50, 100, 1);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->view_id, "a");
  EXPECT_EQ(out->size(), 55U);
}

// Reference and moving crops from a common scene; `moving` is offset by (dx, dy).
struct CropPair {
  GrayImage ref, moving;
};

CropPair crops(double dx, double dy, std::uint64_t seed = 11, double rot = 0.0) {
  const GrayImage base = testing::textured_scene(220, 220, seed);
  const GrayImage ref = testing::render(base, Homography::translation(30, 30), 160, 160);
  Eigen::Matrix3d m = Homography::translation(30 + dx, 30 + dy).matrix();
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  r(0, 0) = std::cos(rot);
  r(0, 1) = -std::sin(rot);
  r(1, 0) = std::sin(rot);
  r(1, 1) = std::cos(rot);
  const GrayImage moving = testing::render(base, Homography(m * r), 160, 160);
  return {ref, moving};
}

TEST(Registration, IdentityStaysPut) {
  const auto c = crops(0, 0);
  const auto r = refine_registration(c.ref, c.ref, Homography::identity());
  ASSERT_TRUE(r.success) << r.failure_reason;
  EXPECT_LT(max_corner_distance(r.h, Homography::identity(), 160, 160), 0.01);
  EXPECT_GT(r.ncc, 0.999);
}

TEST(Registration, RecoversThreePixelShift) {
  const auto c = crops(3, 0);
  const auto r = refine_registration(c.ref, c.moving, Homography::identity());
  ASSERT_TRUE(r.success) << r.failure_reason;
  EXPECT_LT(max_corner_distance(r.h, Homography::translation(3, 0), 160, 160), 0.2);
}

TEST(Registration, PhotometricChangeTolerated) {
  auto c = crops(1.5, -2);
  for (auto& v : c.moving.pixels()) v = 0.7F * v + 20.0F;
  const auto r = refine_registration(c.ref, c.moving, Homography::identity());
  ASSERT_TRUE(r.success) << r.failure_reason;
  EXPECT_LT(max_corner_distance(r.h, Homography::translation(1.5, -2), 160, 160), 0.2);
}

TEST(Registration, UnrelatedImageFails) {
  const auto a = crops(0, 0, 11);
  const auto b = crops(0, 0, 12);
  const auto r = refine_registration(a.ref, b.ref, Homography::identity());
  EXPECT_FALSE(r.success);
  EXPECT_FALSE(r.failure_reason.empty());
}

TEST(Registration, LevelErrorNeverIncreases) {
  for (int t = 0; t < 10; ++t) {
    const auto c = crops(0.5 * t - 2, 0.3 * t - 1, 20 + static_cast<std::uint64_t>(t), 0.002 * t);
    const auto r = refine_registration(c.ref, c.moving, Homography::identity());
    ASSERT_FALSE(r.levels.empty());
    for (const auto& lv : r.levels) EXPECT_LE(lv.final_mse, lv.initial_mse) << "level " << lv.level;
  }
}

View identity_view(int n) {
  View v{"v0", "m0", {}, ViewStatus::raw, {}};
  for (int i = 0; i < n; ++i) v.members.push_back({"m" + std::to_string(i), Homography::identity()});
  return v;
}

TEST(VerifyView, OneBadMemberRemovesView) {
  const auto c = crops(0, 0);
  std::vector<GrayImage> imgs;
  for (int i = 0; i < 49; ++i) {
    GrayImage f = c.ref;
    testing::add_noise(f, 2.0, static_cast<std::uint64_t>(i));
    imgs.push_back(std::move(f));
  }
  imgs.push_back(crops(0, 0, 99).ref);
  const auto out = verify_view_registration(identity_view(50), imgs);
  EXPECT_FALSE(out.kept);
  EXPECT_EQ(out.view.status, ViewStatus::rejected);
  EXPECT_NE(out.reason.find("m49"), std::string::npos);
}

TEST(VerifyView, JitteredMembersKeptAndCorrected) {
  auto rng = make_rng(13);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<GrayImage> imgs;
  std::vector<Homography> truth;
  for (int i = 0; i < 12; ++i) {
    const double dx = i == 0 ? 0 : u(rng), dy = i == 0 ? 0 : u(rng);
    auto c = crops(dx, dy);
    testing::add_noise(c.moving, 1.0, static_cast<std::uint64_t>(i));
    imgs.push_back(i == 0 ? c.ref : c.moving);
    truth.push_back(Homography::translation(dx, dy));
  }
  const auto out = verify_view_registration(identity_view(12), imgs, {}, 2);
  ASSERT_TRUE(out.kept) << out.reason;
  EXPECT_EQ(out.view.status, ViewStatus::registered);
  for (std::size_t i = 1; i < truth.size(); ++i)
    EXPECT_LT(max_corner_distance(out.view.members[i].to_reference, truth[i], 160, 160), 0.5) << i;
}

}  // namespace
}  // namespace amos::geom
