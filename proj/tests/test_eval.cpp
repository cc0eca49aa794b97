#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "fixtures.hpp"
#include "protoscale/eval.hpp"
#include "protoscale/ops.hpp"
#include "test_util.hpp"

using namespace protoscale;
namespace fs = std::filesystem;
using testutil::random_tensor;

namespace {

LabelGrid grid(std::size_t h, std::size_t w, std::vector<int> labels) {
  LabelGrid g(h, w);
  g.labels = std::move(labels);
  return g;
}

std::size_t below(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(n) - 1)); }

std::vector<std::uint8_t> ones(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

// Rand index by explicit pair enumeration, adjusted with the permutation model.
double brute_ari(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  double agree_both = 0, same_a = 0, same_b = 0, pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      agree_both += sa && sb;
      same_a += sa;
      same_b += sb;
      pairs += 1;
    }
  const double expected = same_a * same_b / pairs, maximum = 0.5 * (same_a + same_b);
  if (maximum == expected) return 0.0;
  return (agree_both - expected) / (maximum - expected);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Argmax, OneHotAndTies) {
  // rows: 3 prototypes, 4 pixels
  Tensor a({3, 4}, std::vector<double>{1, 0, 0, 0.2,  //
                                        0, 1, 0, 0.2,  //
                                        0, 0, 1, 0.6});
  EXPECT_EQ(argmax_segmentation(a, 2, 2, 2).labels, (std::vector<int>{0, 1, 2, 2}));
  Tensor tie({2, 1}, std::vector<double>{0.5, 0.5});
  EXPECT_EQ(argmax_segmentation(tie, 1, 1, 1).labels[0], 0);
}

TEST(Argmax, ScaleInvariantAndUpsampled) {
  Rng rng(1);
  Tensor a = random_tensor({5, 6}, rng, 0, 1);
  const LabelGrid base = argmax_segmentation(a, 2, 3, 6);
  EXPECT_EQ(argmax_segmentation(mul_scalar(a, 7.5), 2, 3, 6), base);
  const LabelGrid coarse = argmax_segmentation(a, 2, 3, 6);
  // nearest upsampling: each 3x2 block carries its cell's label
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) {
      const std::size_t p = (y / 3) * 3 + x / 2;
      int best = 0;
      for (int i = 1; i < 5; ++i)
        if (a.at({static_cast<std::size_t>(i), p}) > a.at({static_cast<std::size_t>(best), p})) best = i;
      ASSERT_EQ(coarse.labels[y * 6 + x], best);
    }
  EXPECT_THROW(argmax_segmentation(a, 2, 3, 7), DimensionError);
  EXPECT_THROW(argmax_segmentation(a, 3, 3, 6), DimensionError);
}

TEST(Ari, IdentityAndRelabelling) {
  const auto truth = grid(2, 3, {0, 0, 1, 1, 2, 2});
  EXPECT_DOUBLE_EQ(adjusted_rand_index(truth, truth, ones(6)), 1.0);
  EXPECT_DOUBLE_EQ(adjusted_rand_index(grid(2, 3, {7, 7, 3, 3, 5, 5}), truth, ones(6)), 1.0);
}

TEST(Ari, CrossedPairsIsMinusHalf) {
  EXPECT_NEAR(adjusted_rand_index(grid(1, 4, {0, 0, 1, 1}), grid(1, 4, {0, 1, 0, 1}), ones(4)), -0.5, 1e-12);
}

TEST(Ari, SingleClusterBothSidesIsZero) {
  EXPECT_EQ(adjusted_rand_index(grid(1, 3, {1, 1, 1}), grid(1, 3, {4, 4, 4}), ones(3)), 0.0);
}

TEST(Ari, MaskRestrictsPixels) {
  const auto pred = grid(1, 6, {0, 0, 1, 1, 9, 8});
  const auto truth = grid(1, 6, {0, 0, 1, 1, 2, 2});
  EXPECT_DOUBLE_EQ(adjusted_rand_index(pred, truth, {1, 1, 1, 1, 0, 0}), 1.0);
  EXPECT_THROW(adjusted_rand_index(pred, truth, std::vector<std::uint8_t>(6, 0)), ParameterError);
  EXPECT_THROW(adjusted_rand_index(pred, grid(1, 5, {0, 0, 0, 0, 0}), ones(6)), DimensionError);
}

TEST(Ari, MatchesPairEnumerationOnRandomPartitions) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + below(rng, 40);
    const std::size_t ka = 1 + below(rng, 5), kb = 1 + below(rng, 5);
    std::vector<int> a(n), b(n);
    for (auto& v : a) v = static_cast<int>(below(rng, ka));
    for (auto& v : b) v = static_cast<int>(below(rng, kb));
    const double got = adjusted_rand_index(grid(1, n, a), grid(1, n, b), ones(n));
    ASSERT_NEAR(got, brute_ari(a, b), 1e-12);
    ASSERT_LE(got, 1.0 + 1e-12);
    // symmetric in its arguments
    ASSERT_NEAR(got, adjusted_rand_index(grid(1, n, b), grid(1, n, a), ones(n)), 1e-12);
  }
}

TEST(Purity, Examples) {
  const auto truth = grid(1, 6, {0, 0, 0, 1, 1, 2});
  EXPECT_DOUBLE_EQ(purity(truth, truth, ones(6)), 1.0);
  EXPECT_DOUBLE_EQ(purity(grid(1, 6, {0, 0, 0, 0, 0, 0}), truth, ones(6)), 0.5);
  EXPECT_DOUBLE_EQ(purity(grid(1, 6, {0, 1, 2, 3, 4, 5}), truth, ones(6)), 1.0);
  EXPECT_DOUBLE_EQ(purity(grid(1, 6, {0, 0, 1, 1, 1, 1}), truth, ones(6)), 4.0 / 6.0);
  EXPECT_THROW(purity(truth, truth, std::vector<std::uint8_t>(6, 0)), ParameterError);
}

TEST(Purity, BoundedBelowByLargestClassShare) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + below(rng, 50);
    std::vector<int> a(n), b(n);
    for (auto& v : a) v = static_cast<int>(below(rng, 4));
    for (auto& v : b) v = static_cast<int>(below(rng, 3));
    std::vector<std::size_t> count(3, 0);
    for (int v : b) ++count[v];
    const double share = static_cast<double>(*std::max_element(count.begin(), count.end())) / static_cast<double>(n);
    const double p = purity(grid(1, n, a), grid(1, n, b), ones(n));
    ASSERT_GE(p, share - 1e-12);
    ASSERT_GE(p, 1.0 / 3.0 - 1e-12);
    ASSERT_LE(p, 1.0);
  }
}

TEST(Collapse, UniformUsesEveryPrototype) {
  Tensor uniform({2, 16, 10}, 1.0 / 16.0);
  const CollapseMetrics c = collapse_metrics({uniform});
  EXPECT_NEAR(c.entropy, std::log(16.0), 1e-12);
  EXPECT_EQ(c.active, 16u);
}

TEST(Collapse, SingleWinnerHasZeroEntropy) {
  Tensor onehot({16, 9}, 0.0);
  for (std::size_t p = 0; p < 9; ++p) onehot.mutable_data()[3 * 9 + p] = 1.0;
  const CollapseMetrics c = collapse_metrics({onehot});
  EXPECT_EQ(c.entropy, 0.0);
  EXPECT_EQ(c.active, 1u);
  EXPECT_EQ(c.usage[3], 1.0);
}

TEST(Collapse, MatchesDirectMassCount) {
  Rng rng(4);
  std::vector<Tensor> maps{softmax(random_tensor({3, 6, 8}, rng, -4, 4), 1),
                           softmax(random_tensor({3, 6, 2}, rng, -4, 4), 1)};
  std::vector<double> mass(6, 0.0);
  double total = 0.0;
  for (const auto& m : maps)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t p = 0; p < m.dim(2); ++p) {
          mass[i] += m.at({b, i, p});
          total += m.at({b, i, p});
        }
  double entropy = 0.0;
  std::size_t active = 0;
  for (double& v : mass) {
    v /= total;
    entropy -= v * std::log(v);
    active += v > 1.0 / 60.0;
  }
  const CollapseMetrics c = collapse_metrics(maps);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(c.usage[i], mass[i], 1e-12);
  EXPECT_NEAR(c.entropy, entropy, 1e-12);
  EXPECT_EQ(c.active, active);
  EXPECT_THROW(collapse_metrics({maps[0], Tensor({3, 5, 2}, 0.1)}), DimensionError);
  EXPECT_THROW(collapse_metrics({}), ParameterError);
}

TEST(NormalizedMap, ConstantIsMidGreyAndRangeIsStretched) {
  const std::vector<double> flat(6, 0.3);
  for (auto v : normalized_map(flat, 2, 3).ids) EXPECT_EQ(v, 128);
  const std::vector<double> ramp{0.0, 0.5, 1.0, 2.0};
  const LabelMap m = normalized_map(ramp, 2, 2);
  EXPECT_EQ(m.ids[0], 0);
  EXPECT_EQ(m.ids[3], 255);
  EXPECT_LT(m.ids[1], m.ids[2]);
  EXPECT_THROW(normalized_map(ramp, 3, 3), DimensionError);
}

TEST(Palette, SixteenDistinctColours) {
  std::set<std::array<double, 3>> seen;
  for (std::size_t i = 0; i < 16; ++i) seen.insert(palette_color(i));
  EXPECT_EQ(seen.size(), 16u);
  EXPECT_EQ(palette_color(16), palette_color(0));
}

class EvalNetwork : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg = testutil::tiny_run_config();
    Rng rng(cfg.train.seed);
    net = Network(cfg.model, rng);
    SceneConfig sc;
    sc.size = 32;
    for (std::uint64_t i = 0; i < 5; ++i) scenes.push_back(generate_scene(sc, scene_seed(2, i)));
  }
  RunConfig cfg;
  Network net;
  std::vector<Scene> scenes;
};

TEST_F(EvalNetwork, MetricsAreFiniteAndInRange) {
  const MetricsReport r = evaluate(net, scenes, 2);
  EXPECT_EQ(r.n_scenes, 5u);
  for (double v : {r.semantic_purity, r.instance_ari, r.hierarchy_ari, r.composite_instance_ari,
                   r.prototype_usage_entropy})
    EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(r.semantic_purity, 0.0);
  EXPECT_LE(r.semantic_purity, 1.0);
  EXPECT_LE(r.instance_ari, 1.0);
  EXPECT_GE(r.prototype_usage_entropy, 0.0);
  EXPECT_LE(r.prototype_usage_entropy, std::log(4.0) + 1e-12);
  EXPECT_EQ(r.per_scale[0].semantic_purity, r.semantic_purity);
  EXPECT_EQ(r.per_scale[0].instance_ari, r.instance_ari);
}

TEST_F(EvalNetwork, BatchSizeDoesNotChangeScores) {
  EXPECT_EQ(evaluate(net, scenes, 1).to_json(), evaluate(net, scenes, 5).to_json());
}

TEST_F(EvalNetwork, ReportSerialisation) {
  const MetricsReport r = evaluate(net, scenes, 4);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["n_scenes"], 5);
  EXPECT_DOUBLE_EQ(j["instance_ari"].get<double>(), r.instance_ari);
  const std::string header = MetricsReport::csv_header();
  const std::string row = r.csv_row();
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
}

TEST_F(EvalNetwork, ExportWritesOneFilePerMapPlusOverlays) {
  Tensor batch = stack_images({scenes[0].image});
  NetworkOutput out;
  {
    NoGradGuard g;
    out = net.forward(batch);
  }
  const fs::path a = fs::temp_directory_path() / "protoscale_test_export_a";
  const fs::path b = fs::temp_directory_path() / "protoscale_test_export_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const std::size_t n = export_attention_images(out.scales, scenes[0].image, a);
  std::size_t want = 0;
  for (const auto& s : out.scales)
    want += s.semantic.dim(s.semantic.rank() - 2) + s.instance.dim(s.instance.rank() - 2) +
            s.hierarchical.dim(s.hierarchical.rank() - 2) + 1;
  EXPECT_EQ(n, want);
  EXPECT_EQ(n, 3u * (4 + 3 + 3 + 1));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) files += e.is_regular_file();
  EXPECT_EQ(files, n);
  export_attention_images(out.scales, scenes[0].image, b);
  EXPECT_EQ(slurp(a / "scale0_overlay.ppm"), slurp(b / "scale0_overlay.ppm"));
  EXPECT_EQ(slurp(a / "scale2_instance_01.pgm"), slurp(b / "scale2_instance_01.pgm"));
  fs::remove_all(a);
  fs::remove_all(b);
}
