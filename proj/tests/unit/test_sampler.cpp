#include "amos/sampler/batch.hpp"
#include "amos/sampler/dataset.hpp"
#include "amos/sampler/patches.hpp"
#include "amos/sampler/response.hpp"
#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace amos::sampler {
namespace {

GrayImage blob(int w, int h, double cx, double cy, double s, float amp = 200.0F) {
  GrayImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img(x, y) = 20.0F + amp * static_cast<float>(std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * s * s)));
  return img;
}

std::pair<int, int> argmax(const ScalarField& f) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < f.values.size(); ++i)
    if (f.values[i] > f.values[best]) best = i;
  return {static_cast<int>(best % static_cast<std::size_t>(f.width)), static_cast<int>(best / static_cast<std::size_t>(f.width))};
}

geom::View identity_view(std::size_t n) {
  geom::View v{"v0", "m0", {}, geom::ViewStatus::registered, {}};
  for (std::size_t i = 0; i < n; ++i) v.members.push_back({"m" + std::to_string(i), Homography::identity()});
  return v;
}

std::vector<WarpResult> unwarped(const std::vector<GrayImage>& imgs) {
  const auto v = identity_view(imgs.size());
  return warp_to_reference(v, imgs);
}

double mask_sum(const ResponseMask& m) {
  double s = 0;
  for (double w : m.weights) s += w;
  return s;
}

TEST(Hessian, ConstantAndRampGiveZero) {
  for (double v : hessian_response(GrayImage(20, 20, 9.0F), 1.0).values) EXPECT_EQ(v, 0.0);
  GrayImage ramp(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) ramp(x, y) = static_cast<float>(2 * x + 3 * y);
  for (double v : hessian_response(ramp, 0.0).values) EXPECT_NEAR(v, 0.0, 1e-6);
  EXPECT_THROW(hessian_response(GrayImage(6, 20), 1.0), std::invalid_argument);
}

TEST(Hessian, BlobPeaksAtCentre) {
  for (auto [cx, cy] : std::vector<std::pair<double, double>>{{32, 32}, {20.4, 41.7}, {45, 18}}) {
    const auto r = hessian_response(blob(64, 64, cx, cy, 4.0), 1.0);
    const auto [x, y] = argmax(r);
    EXPECT_LE(std::abs(x - cx), 1.0);
    EXPECT_LE(std::abs(y - cy), 1.0);
  }
}

TEST(Mask, SingleMemberModesAgree) {
  const std::vector<GrayImage> imgs{testing::textured_scene(60, 50, 1)};
  const auto w = unwarped(imgs);
  const auto a = build_probability_mask(w, MaskMode::average_then_response);
  const auto b = build_probability_mask(w, MaskMode::response_then_average);
  const auto c = build_probability_mask(w, MaskMode::reference_only);
  EXPECT_EQ(a.weights, c.weights);
  for (std::size_t i = 0; i < a.weights.size(); ++i) EXPECT_DOUBLE_EQ(a.weights[i], b.weights[i]);
}

TEST(Mask, IdenticalMembersAveragingOrderIrrelevant) {
  const GrayImage img = testing::textured_scene(60, 50, 2);
  const auto w = unwarped({img, img, img});
  const auto a = build_probability_mask(w, MaskMode::average_then_response);
  const auto b = build_probability_mask(w, MaskMode::response_then_average);
  for (std::size_t i = 0; i < a.weights.size(); ++i) EXPECT_DOUBLE_EQ(a.weights[i], b.weights[i]);
}

TEST(Mask, DisjointBlobsSeparateTheModes) {
  // Far-apart blobs give proportional responses either way; near ones make
  // the cross terms of the averaged image visible.
  const auto w = unwarped({blob(80, 60, 30, 30, 4.0), blob(80, 60, 44, 30, 4.0)});
  const auto a = build_probability_mask(w, MaskMode::average_then_response);
  const auto b = build_probability_mask(w, MaskMode::response_then_average);
  EXPECT_NEAR(mask_sum(a), 1.0, 1e-6);
  EXPECT_NEAR(mask_sum(b), 1.0, 1e-6);
  EXPECT_NEAR(b(30, 30), b(44, 30), 1e-9);
  EXPECT_GT(b(30, 30), b(29, 30));
  EXPECT_GT(b(30, 30), b(31, 30));
  EXPECT_GT(b(30, 30), b(37, 30));
  double diff = 0;
  for (std::size_t i = 0; i < a.weights.size(); ++i) diff += std::abs(a.weights[i] - b.weights[i]);
  EXPECT_GT(diff, 0.1);
}

TEST(Mask, InvalidPixelsZeroedAndNormalized) {
  const GrayImage base = testing::textured_scene(100, 80, 3);
  std::vector<GrayImage> imgs{testing::render(base, Homography::translation(10, 0), 80, 80),
                              testing::render(base, Homography::translation(15, 0), 80, 80)};
  geom::View v = identity_view(2);
  v.members[1].to_reference = Homography::translation(5, 0);  // member pixel x maps to reference x + 5
  const auto w = warp_to_reference(v, imgs);
  for (auto mode : {MaskMode::average_then_response, MaskMode::response_then_average, MaskMode::reference_only}) {
    const auto m = build_probability_mask(w, mode);
    EXPECT_NEAR(mask_sum(m), 1.0, 1e-6);
    for (int y = 0; y < 80; ++y)
      for (int x = 0; x < 5; ++x) EXPECT_EQ(m(x, y), 0.0);
    for (double x : m.weights) EXPECT_GE(x, 0.0);
  }
}

TEST(Mask, ConstantViewFallsBackToUniform) {
  const auto w = unwarped({GrayImage(30, 20, 50.0F), GrayImage(30, 20, 50.0F)});
  const auto m = build_probability_mask(w, MaskMode::response_then_average);
  EXPECT_TRUE(m.uniform_fallback);
  for (double x : m.weights) EXPECT_DOUBLE_EQ(x, 1.0 / 600);
}

TEST(SampleSpecs, PointMass) {
  ResponseMask m{200, 200, std::vector<double>(40000, 0.0), false};
  m.weights[100 * 200 + 100] = 1.0;
  const auto specs = sample_patch_specs(m, 500, {}, {}, 3);
  ASSERT_EQ(specs.size(), 500U);
  for (const auto& s : specs) {
    EXPECT_EQ(s.x, 100.0);
    EXPECT_EQ(s.y, 100.0);
    EXPECT_GE(s.scale, 67.0);
    EXPECT_LE(s.scale, 138.0);
    EXPECT_LE(std::abs(s.angle), 15.0 * std::numbers::pi / 180 + 1e-12);
  }
}

double l1_to_mask(const ResponseMask& m, const std::vector<PatchSpec>& specs) {
  std::vector<double> hist(m.weights.size(), 0.0);
  for (const auto& s : specs) hist[static_cast<std::size_t>(s.y) * static_cast<std::size_t>(m.width) + static_cast<std::size_t>(s.x)] += 1.0;
  double l1 = 0;
  for (std::size_t i = 0; i < hist.size(); ++i) l1 += std::abs(hist[i] / static_cast<double>(specs.size()) - m.weights[i]);
  return l1;
}

TEST(SampleSpecs, EmpiricalHistogramMatchesMask) {
  ResponseMask uniform{20, 10, std::vector<double>(200, 1.0 / 200), false};
  EXPECT_LT(l1_to_mask(uniform, sample_patch_specs(uniform, 100000, {}, {}, 1)), 0.05);
  ResponseMask skewed{20, 10, std::vector<double>(200, 0.0), false};
  double total = 0;
  for (std::size_t i = 0; i < 200; ++i) total += (skewed.weights[i] = static_cast<double>((i * 7) % 13));
  for (auto& w : skewed.weights) w /= total;
  EXPECT_LT(l1_to_mask(skewed, sample_patch_specs(skewed, 100000, {}, {}, 2)), 0.05);
}

TEST(SampleSpecs, ScaleIsLogUniform) {
  ResponseMask m{1, 1, {1.0}, false};
  const auto specs = sample_patch_specs(m, 20000, {}, {}, 5);
  int below = 0;
  const double geo_mid = std::sqrt(67.0 * 138.0);
  for (const auto& s : specs) below += s.scale < geo_mid;
  EXPECT_NEAR(below / 20000.0, 0.5, 0.02);
}

TEST(SampleSpecs, RejectionBudgetExhausted) {
  ResponseMask m{200, 200, std::vector<double>(40000, 0.0), false};
  m.weights[0] = 1.0;
  const std::vector<MemberGeometry> members{{Homography::identity(), 200, 200}};
  EXPECT_THROW(sample_patch_specs(m, 10, {}, members, 1), std::runtime_error);
}

TEST(SampleSpecs, EverySpecFitsEveryMember) {
  auto rng = make_rng(6);
  std::uniform_real_distribution<double> u(-8, 8);
  ResponseMask m{300, 240, std::vector<double>(300 * 240, 1.0 / (300 * 240)), false};
  for (int t = 0; t < 10; ++t) {
    std::vector<MemberGeometry> members{{Homography::identity(), 300, 240}};
    for (int k = 0; k < 4; ++k) {
      Eigen::Matrix3d h = Homography::translation(u(rng), u(rng)).matrix();
      h(0, 1) = u(rng) * 1e-3;
      h(2, 0) = u(rng) * 1e-6;
      members.push_back({Homography(h), 300, 240});
    }
    const auto specs = sample_patch_specs(m, 200, {}, members, static_cast<std::uint64_t>(t));
    for (const auto& s : specs) {
      for (const auto& mem : members) {
        for (double i : {0.0, 95.0}) {
          for (double j : {0.0, 95.0}) {
            const Eigen::Vector2d p = mem.from_reference.apply(patch_grid_point(s, 96, i, j));
            EXPECT_TRUE(p.x() >= 0 && p.y() >= 0 && p.x() <= 299 && p.y() <= 239);
          }
        }
      }
    }
  }
}

TEST(Extract, IdentityViewMatchesDirectCrop) {
  const GrayImage img = testing::textured_scene(200, 150, 4);
  const std::vector<GrayImage> imgs{img};
  const PatchSpec s{60 + 47.5, 30 + 47.5, 96.0, 0.0};
  const auto ps = extract_patch_set(identity_view(1), imgs, s);
  ASSERT_EQ(ps.patches.size(), 1U);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) EXPECT_NEAR(ps.patches[0](x, y), img(60 + x, 30 + y), 1e-9);
}

TEST(Extract, IdenticalImagesGiveIdenticalPatches) {
  const GrayImage img = testing::textured_scene(200, 150, 5);
  const std::vector<GrayImage> imgs{img, img, img};
  const auto ps = extract_patch_set(identity_view(3), imgs, {100, 75, 110, 0.2});
  EXPECT_EQ(ps.patches[0], ps.patches[1]);
  EXPECT_EQ(ps.patches[0], ps.patches[2]);
}

TEST(Extract, TranslatedMemberMatchesReference) {
  const GrayImage base = testing::smooth_image(260, 200);
  const GrayImage ref = testing::render(base, Homography::translation(20, 20), 200, 160);
  const GrayImage mov = testing::render(base, Homography::translation(27.3, 15.6), 200, 160);
  geom::View v = identity_view(2);
  v.members[1].to_reference = Homography::translation(7.3, -4.4);
  const std::vector<GrayImage> imgs{ref, mov};
  const auto ps = extract_patch_set(v, imgs, {100, 80, 90, 0.3});
  double mae = 0;
  for (std::size_t i = 0; i < ps.patches[0].size(); ++i) mae += std::abs(ps.patches[0].pixels()[i] - ps.patches[1].pixels()[i]);
  EXPECT_LT(mae / static_cast<double>(ps.patches[0].size()), 2.0);
}

TEST(Extract, OutOfBoundsSpecThrows) {
  const std::vector<GrayImage> imgs{GrayImage(100, 100)};
  EXPECT_THROW(extract_patch_set(identity_view(1), imgs, {10, 10, 96, 0}), std::runtime_error);
}

TEST(Augment, FrozenParametersGiveCentralCrop) {
  const GrayImage p = testing::noise_image(96, 96, 7);
  const GrayImage out = apply_augment(p, AugmentParams{});
  ASSERT_EQ(out.width(), 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) EXPECT_EQ(out(x, y), p(32 + x, 32 + y));
}

TEST(Augment, AnySeedGivesFinite32x32) {
  const GrayImage p = testing::noise_image(96, 96, 8);
  for (std::uint64_t s = 0; s < 300; ++s) {
    const GrayImage out = augment_patch(p, s);
    ASSERT_EQ(out.width(), 32);
    ASSERT_EQ(out.height(), 32);
    for (float v : out.pixels()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Augment, RotationIsUniform) {
  const int n = 10000;
  std::vector<double> rot;
  for (int s = 0; s < n; ++s) {
    auto rng = make_rng(static_cast<std::uint64_t>(s));
    rot.push_back(draw_augment(rng).rotation * 180 / std::numbers::pi);
  }
  std::sort(rot.begin(), rot.end());
  double ks = 0;
  for (int i = 0; i < n; ++i) {
    const double cdf = (rot[static_cast<std::size_t>(i)] + 25.0) / 50.0;
    ks = std::max({ks, std::abs(cdf - static_cast<double>(i) / n), std::abs(cdf - static_cast<double>(i + 1) / n)});
  }
  EXPECT_LT(ks, 0.02);
  EXPECT_GE(rot.front(), -25.0);
  EXPECT_LE(rot.back(), 25.0);
}

std::vector<PatchSet> fake_sets(int views, int per_view, int members = 3) {
  std::vector<PatchSet> out;
  std::uint64_t id = 0;
  for (int v = 0; v < views; ++v) {
    for (int k = 0; k < per_view; ++k) {
      PatchSet ps{id, "view" + std::to_string(v), {}, {}};
      for (int m = 0; m < members; ++m) ps.patches.push_back(testing::noise_image(96, 96, id * 100 + static_cast<std::uint64_t>(m)));
      out.push_back(std::move(ps));
      ++id;
    }
  }
  return out;
}

TEST(Batch, CompositionProperties) {
  const auto sets = fake_sets(4, 20);
  const auto b = assemble_batch(sets, 30, 3, 11);
  ASSERT_EQ(b.size(), 30U);
  EXPECT_EQ(std::set<std::uint64_t>(b.set_ids.begin(), b.set_ids.end()).size(), 30U);
  EXPECT_EQ(std::set<std::string>(b.view_ids.begin(), b.view_ids.end()).size(), 3U);
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_EQ(sets[b.set_ids[i]].view_id, b.view_ids[i]);
    EXPECT_EQ(b.anchors[i].width(), 32);
  }
  const auto again = assemble_batch(sets, 30, 3, 11);
  EXPECT_EQ(again.set_ids, b.set_ids);
  EXPECT_EQ(again.anchors[5], b.anchors[5]);
}

TEST(Batch, SingleViewBatch) {
  const auto sets = fake_sets(3, 12);
  const auto b = assemble_batch(sets, 12, 1, 2);
  EXPECT_EQ(std::set<std::string>(b.view_ids.begin(), b.view_ids.end()).size(), 1U);
}

TEST(Batch, InsufficientSetsThrow) {
  const auto sets = fake_sets(2, 5);
  EXPECT_THROW(assemble_batch(sets, 12, 2, 1), std::runtime_error);
  EXPECT_THROW(assemble_batch(sets, 4, 3, 1), std::runtime_error);
}

// Independent oracle: explicit differences, no matrix products.
double brute_force_loss(const DescMatrix& a, const DescMatrix& p, double margin) {
  const auto n = a.rows();
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pos = (a.row(i) - p.row(i)).norm();
    double neg = 1e300;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      neg = std::min({neg, (a.row(i) - p.row(j)).norm(), (a.row(j) - p.row(i)).norm()});
    }
    total += std::max(0.0, margin + pos - neg);
  }
  return total / static_cast<double>(n);
}

DescMatrix unit_rows(const std::vector<std::vector<double>>& rows) {
  DescMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

TEST(TripletLoss, WorkedExamples) {
  const auto e = unit_rows({{1, 0}, {0, 1}});
  auto r = hard_in_batch_triplet_loss(e, e);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  EXPECT_NEAR(r.negative_distance[0], std::sqrt(2.0), 1e-12);

  const auto same = unit_rows({{0.6, 0.8}, {0.6, 0.8}, {0.6, 0.8}});
  EXPECT_NEAR(hard_in_batch_triplet_loss(same, same).loss, 1.0, 1e-12);

  const double c = std::cos(std::numbers::pi / 6), s = std::sin(std::numbers::pi / 6);
  const auto t = unit_rows({{1, 0}, {c, s}});
  r = hard_in_batch_triplet_loss(t, t);
  EXPECT_NEAR(r.negative_distance[0], 0.5176, 1e-4);
  EXPECT_NEAR(r.loss, 0.4824, 1e-4);
}

DescMatrix random_unit(int n, int d, Rng& rng) {
  std::normal_distribution<double> g;
  DescMatrix m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
    m.row(i).normalize();
  }
  return m;
}

TEST(TripletLoss, MatchesBruteForceOracle) {
  auto rng = make_rng(12);
  for (int t = 0; t < 100; ++t) {
    const int n = 2 + static_cast<int>(rng() % 63), d = 1 + static_cast<int>(rng() % 16);
    const auto a = random_unit(n, d, rng);
    auto p = a;
    std::normal_distribution<double> g(0, 0.3);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) p(i, j) += g(rng);
      p.row(i).normalize();
    }
    EXPECT_NEAR(hard_in_batch_triplet_loss(a, p).loss, brute_force_loss(a, p, 1.0), 1e-6);
  }
}

TEST(TripletLoss, InvariantToJointRowPermutation) {
  auto rng = make_rng(13);
  const auto a = random_unit(20, 8, rng), p = random_unit(20, 8, rng);
  std::vector<int> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  DescMatrix ap(20, 8), pp(20, 8);
  for (int i = 0; i < 20; ++i) {
    ap.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
    pp.row(i) = p.row(perm[static_cast<std::size_t>(i)]);
  }
  EXPECT_NEAR(hard_in_batch_triplet_loss(a, p).loss, hard_in_batch_triplet_loss(ap, pp).loss, 1e-12);
}

TEST(TripletLoss, Preconditions) {
  auto rng = make_rng(14);
  const auto one = random_unit(1, 4, rng);
  EXPECT_THROW(hard_in_batch_triplet_loss(one, one), std::invalid_argument);
  auto bad = random_unit(3, 4, rng);
  bad(1, 1) = std::nan("");
  EXPECT_THROW(hard_in_batch_triplet_loss(bad, bad), std::invalid_argument);
  DescMatrix not_unit = DescMatrix::Constant(3, 4, 1.0);
  EXPECT_THROW(hard_in_batch_triplet_loss(not_unit, not_unit), std::invalid_argument);
}

PatchFile random_file(std::uint64_t seed, int n_sets, int set_size) {
  auto rng = make_rng(seed);
  PatchFile f{static_cast<std::uint32_t>(set_size), 96, 96, {}};
  for (int k = 0; k < n_sets; ++k) {
    PatchRecord r{static_cast<std::uint64_t>(1000 + k), static_cast<std::uint32_t>(k % 3),
                  {uniform(rng, 0, 700), uniform(rng, 0, 700), uniform(rng, 67, 138), uniform(rng, -0.3, 0.3)}, {}};
    r.pixels.resize(static_cast<std::size_t>(set_size) * 96 * 96);
    for (auto& px : r.pixels) px = static_cast<std::uint8_t>(rng() & 0xff);
    f.records.push_back(std::move(r));
  }
  return f;
}

TEST(PatchFileFormat, RoundTripIsBitExact) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto f = random_file(s, 1 + static_cast<int>(s) * 3, 2 + static_cast<int>(s));
    std::stringstream buf;
    write_patch_file(buf, f);
    const std::string bytes = buf.str();
    EXPECT_EQ(bytes.size(), 24 + f.records.size() * (8 + 4 + 32 + f.set_size * 96 * 96));
    const auto back = read_patch_file(buf);
    EXPECT_EQ(back, f);
  }
}

TEST(PatchFileFormat, HeaderLayout) {
  const auto f = random_file(9, 2, 3);
  std::stringstream buf;
  write_patch_file(buf, f);
  const std::string b = buf.str();
  EXPECT_EQ(b.substr(0, 4), "AMPS");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 2);
  EXPECT_EQ(static_cast<unsigned char>(b[12]), 3);
  EXPECT_EQ(static_cast<unsigned char>(b[16]), 96);
  EXPECT_EQ(static_cast<unsigned char>(b[20]), 96);
  std::stringstream cut(b.substr(0, b.size() - 1));
  EXPECT_THROW(read_patch_file(cut), std::runtime_error);
}

TEST(Export, ViewsNeverSplitAcrossSides) {
  const auto f = random_file(3, 30, 2);
  const std::vector<ViewProvenance> views{{"va", "cam1", {"a1", "a2"}}, {"vb", "cam2", {"b1", "b2"}}, {"vc", "cam3", {"c1", "c2"}}};
  const auto splits = assign_splits({"va", "vb", "vc"}, 0.34, 5);
  const auto dir = std::filesystem::temp_directory_path() / "amos_export_test";
  std::filesystem::remove_all(dir);
  const auto res = export_dataset(f, views, splits, {{"scale_range", "67 138"}}, dir);
  EXPECT_EQ(res.train_sets + res.test_sets, 30U);
  const auto train = load_patch_file(res.train_path), test = load_patch_file(res.test_path);
  std::set<std::uint32_t> tr, te;
  for (const auto& r : train.records) tr.insert(r.view_ordinal);
  for (const auto& r : test.records) te.insert(r.view_ordinal);
  for (auto o : tr) EXPECT_FALSE(te.count(o));
  EXPECT_EQ(te.size(), 1U);
  std::ifstream in(res.manifest_path);
  const auto m = parse_export_manifest(in);
  ASSERT_EQ(m.views.size(), 3U);
  EXPECT_EQ(m.views[1].member_ids, (std::vector<std::string>{"b1", "b2"}));
  EXPECT_EQ(m.params.at(0).second, "67 138");
  std::filesystem::remove_all(dir);
}

TEST(Export, ErrorsAndSplitRules) {
  EXPECT_THROW(export_dataset(PatchFile{}, {}, {}, {}, "unused"), std::invalid_argument);
  EXPECT_THROW(assign_splits({}, 0.2, 1), std::invalid_argument);
  EXPECT_THROW(assign_splits({"a", "a"}, 0.2, 1), std::invalid_argument);
  EXPECT_EQ(assign_splits({"only"}, 0.2, 1).at("only"), Split::test);
  int tests = 0;
  for (const auto& [_, s] : assign_splits({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"}, 0.2, 1)) tests += s == Split::test;
  EXPECT_EQ(tests, 2);
}

}  // namespace
}  // namespace amos::sampler
