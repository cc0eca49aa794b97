#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protoscale/grouping.hpp"
#include "protoscale/ops.hpp"
#include "test_util.hpp"

using namespace protoscale;
using testutil::gradcheck;
using testutil::random_parameter;
using testutil::random_tensor;

namespace {

const GaussianPrior kFlat{0.5, 0.7, false};

Tensor empty_aux(std::size_t d) { return Tensor({0, d}); }

RelationMlp random_mlp(std::size_t d, std::size_t rel, Rng& rng) {
  return {random_parameter({d, d}, rng), random_parameter({d}, rng), random_parameter({d, rel}, rng),
          random_parameter({rel}, rng)};
}

double column_sum(const Tensor& maps, std::size_t col) {
  const std::size_t n = maps.dim(0), hw = maps.dim(1);
  double s = 0.0;
  for (std::size_t r = 0; r < n; ++r) s += maps.data()[r * hw + col];
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

// ---- semantic attention ---------------------------------------------------

TEST(SemanticAttention, ZeroLogitsAreUniform) {
  Tensor s({4, 3}, 0.0);
  Rng rng(1);
  Tensor f = random_tensor({3, 6}, rng);
  Tensor as = semantic_attention(f, s, empty_aux(3), kFlat, 2, 3, 0.1).semantic;
  for (double v : as.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(SemanticAttention, HandComputedColumn) {
  Tensor s({2, 1}, std::vector<double>{std::log(3.0), 0.0});
  Tensor f({1, 1}, 1.0);
  Tensor as = semantic_attention(f, s, empty_aux(1), kFlat, 1, 1, 1.0).semantic;
  EXPECT_NEAR(as.data()[0], 0.75, 1e-12);
  EXPECT_NEAR(as.data()[1], 0.25, 1e-12);
}

TEST(SemanticAttention, DominantAuxiliaryAbsorbsMass) {
  Tensor s({3, 2}, std::vector<double>{0.1, 0.0, 0.0, 0.1, -0.1, 0.0});
  Tensor r({2, 2}, std::vector<double>{5.0, 5.0, 0.0, 0.0});
  Tensor f({2, 2}, std::vector<double>{1.0, 0.0, 1.0, 0.0});  // pixel 0 aligns with R_0
  SemanticAttention out = semantic_attention(f, s, r, kFlat, 1, 2, 1.0);
  EXPECT_LT(column_sum(out.semantic, 0), 0.5);
  // all Np + Nr rows still form a distribution
  EXPECT_NEAR(column_sum(out.full, 0), 1.0, 1e-12);
  EXPECT_NEAR(column_sum(out.full, 1), 1.0, 1e-12);
}

TEST(SemanticAttention, NonPositiveTemperatureRejected) {
  Tensor s({2, 1}, 1.0), f({1, 1}, 1.0);
  EXPECT_THROW(semantic_attention(f, s, empty_aux(1), kFlat, 1, 1, 0.0), ParameterError);
  EXPECT_THROW(semantic_attention(f, s, empty_aux(1), kFlat, 1, 1, -0.5), ParameterError);
}

TEST(SemanticAttention, ColumnsSumToOneWithoutAuxiliary) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t np = 2 + trial % 5, d = 1 + trial % 4;
    Tensor s = random_tensor({np, d}, rng, -3, 3), f = random_tensor({d, 6}, rng, -3, 3);
    const GaussianPrior prior{0.5, 0.7, trial % 2 == 0};
    Tensor as = semantic_attention(f, s, empty_aux(d), prior, 2, 3, 0.1).semantic;
    for (std::size_t c = 0; c < 6; ++c) ASSERT_NEAR(column_sum(as, c), 1.0, 1e-9);
  }
}

TEST(SemanticAttention, SemanticMassBoundedWithAuxiliary) {
  Rng rng(3);
  Tensor s = random_tensor({4, 3}, rng), r = random_tensor({2, 3}, rng), f = random_tensor({3, 9}, rng);
  SemanticAttention out = semantic_attention(f, s, r, GaussianPrior{}, 3, 3, 0.1);
  for (std::size_t c = 0; c < 9; ++c) {
    EXPECT_LE(column_sum(out.semantic, c), 1.0 + 1e-12);
    EXPECT_NEAR(column_sum(out.full, c), 1.0, 1e-12);
  }
}

TEST(SemanticAttention, PermutingPrototypesPermutesRows) {
  Rng rng(4);
  Tensor s = random_tensor({4, 3}, rng), f = random_tensor({3, 5}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor sp({4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) sp.mutable_data()[i * 3 + c] = s.data()[perm[i] * 3 + c];
  Tensor a = semantic_attention(f, s, empty_aux(3), kFlat, 1, 5, 0.2).semantic;
  Tensor b = semantic_attention(f, sp, empty_aux(3), kFlat, 1, 5, 0.2).semantic;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t p = 0; p < 5; ++p) EXPECT_NEAR(b.data()[i * 5 + p], a.data()[perm[i] * 5 + p], 1e-15);
}

TEST(SemanticAttention, BatchedMatchesPerImage) {
  Rng rng(5);
  Tensor s = random_tensor({4, 3}, rng), r = random_tensor({2, 3}, rng), f = random_tensor({2, 3, 6}, rng);
  Tensor batched = semantic_attention(f, s, r, GaussianPrior{}, 2, 3, 0.1).semantic;
  for (std::size_t b = 0; b < 2; ++b) {
    Tensor one = semantic_attention(reshape(slice(f, 0, b, 1), {3, 6}), s, r, GaussianPrior{}, 2, 3, 0.1).semantic;
    for (std::size_t i = 0; i < 24; ++i) EXPECT_NEAR(batched.data()[b * 24 + i], one.data()[i], 1e-15);
  }
}

TEST(SemanticAttention, PriorPushesCornerMassToAuxiliary) {
  Rng rng(6);
  Tensor s = random_tensor({3, 2}, rng), r = random_tensor({2, 2}, rng), f = random_tensor({2, 25}, rng);
  Tensor with = semantic_attention(f, s, r, GaussianPrior{}, 5, 5, 0.5).semantic;
  Tensor without = semantic_attention(f, s, r, kFlat, 5, 5, 0.5).semantic;
  EXPECT_LT(column_sum(with, 0), column_sum(without, 0));    // corner
  EXPECT_NEAR(column_sum(with, 12), column_sum(without, 12), 1e-15);  // centre, g = 1
}

TEST(SemanticAttention, CosineLogitsIgnoreFeatureScale) {
  Rng rng(7);
  Tensor s = random_tensor({4, 3}, rng), f = random_tensor({3, 5}, rng);
  Tensor a = semantic_attention(f, s, empty_aux(3), kFlat, 1, 5, 0.1, true).semantic;
  Tensor b = semantic_attention(mul_scalar(f, 7.0), s, empty_aux(3), kFlat, 1, 5, 0.1, true).semantic;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

// ---- Gaussian prior -------------------------------------------------------

TEST(GaussianPrior, CenterOfOddGridIsUnchanged) {
  Tensor logits({2, 9}, 0.25);
  Tensor out = apply_gaussian_prior(logits, GaussianPrior{}, 3, 3);
  EXPECT_EQ(out.at({0, 4}), 0.25);
  EXPECT_EQ(out.at({1, 4}), 0.25);
  EXPECT_LT(out.at({0, 0}), 0.25);
}

TEST(GaussianPrior, CornerOfLargeGrid) {
  // x = y -> 0 with mu 0.5, sigma 0.7: log g -> -(0.25 + 0.25) / (2 * 0.49)
  const double limit = -0.5 / 0.98;
  EXPECT_NEAR(limit, -0.5102, 1e-4);
  EXPECT_NEAR(std::exp(limit), 0.600, 1e-3);
  const std::size_t n = 2001;
  auto w = GaussianPrior{}.log_weights(n, n);
  EXPECT_NEAR(w[0], limit, 1e-3);
  const double x = 0.5 / static_cast<double>(n);
  EXPECT_NEAR(w[0], -2.0 * (x - 0.5) * (x - 0.5) / 0.98, 1e-12);
}

TEST(GaussianPrior, WeightsInUnitIntervalPeakAtCenter) {
  auto w = GaussianPrior{}.log_weights(7, 5);
  for (double v : w) EXPECT_LE(v, 0.0);
  EXPECT_EQ(*std::max_element(w.begin(), w.end()), w[3 * 5 + 2]);
}

TEST(GaussianPrior, WideSigmaIsFlat) {
  Rng rng(8);
  Tensor logits = random_tensor({3, 12}, rng);
  Tensor out = apply_gaussian_prior(logits, GaussianPrior{0.5, 1e9, true}, 3, 4);
  for (std::size_t i = 0; i < logits.numel(); ++i) EXPECT_NEAR(out.data()[i], logits.data()[i], 1e-9);
}

TEST(GaussianPrior, DisabledIsZeroAndGridMismatchRejected) {
  for (double v : kFlat.log_weights(4, 4)) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(apply_gaussian_prior(Tensor({2, 10}), GaussianPrior{}, 3, 3), DimensionError);
  EXPECT_THROW((GaussianPrior{0.5, 0.0, true}.log_weights(2, 2)), ParameterError);
}

// ---- instance assignment and attention ------------------------------------

TEST(InstanceAssignment, EqualSimilaritiesSplitEvenly) {
  Tensor s({2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor i({1, 2}, std::vector<double>{1, 1});
  Tensor w = instance_assignment(s, i, 0.1);
  EXPECT_NEAR(w.data()[0], 0.5, 1e-15);
  EXPECT_NEAR(w.data()[1], 0.5, 1e-15);
}

TEST(InstanceAssignment, HandComputedRow) {
  Tensor s({2, 2}, std::vector<double>{2, 0, 0, 3});
  Tensor i({1, 2}, std::vector<double>{0.5, 0});
  Tensor w = instance_assignment(s, i, 1.0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(w.data()[0], e / (e + 1), 1e-12);
  EXPECT_NEAR(w.data()[1], 1 / (e + 1), 1e-12);
  EXPECT_NEAR(w.data()[0], 0.731, 1e-3);
}

TEST(InstanceAssignment, RowsAreStochastic) {
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor w = instance_assignment(random_tensor({6, 4}, rng), random_tensor({3, 4}, rng), 0.05 + 0.01 * (trial % 10));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        ASSERT_GE(w.data()[r * 6 + c], 0.0);
        s += w.data()[r * 6 + c];
      }
      ASSERT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(InstanceAssignment, ErrorsOnDegenerateInputs) {
  Tensor s({2, 2}, std::vector<double>{1, 0, 0, 0});
  EXPECT_THROW(instance_assignment(s, Tensor({1, 2}, 1.0), 0.1), DegeneratePrototypeError);
  EXPECT_THROW(instance_assignment(Tensor({2, 2}, 1.0), Tensor({1, 2}, 0.0), 0.1), DegeneratePrototypeError);
  EXPECT_THROW(instance_assignment(Tensor({2, 2}, 1.0), Tensor({1, 2}, 1.0), 0.0), ParameterError);
  EXPECT_THROW(instance_assignment(Tensor({2, 2}, 1.0), Tensor({1, 3}, 1.0), 0.1), DimensionError);
}

TEST(InstanceAttention, IdentityMixingKeepsMaps) {
  Rng rng(10);
  Tensor as = random_tensor({3, 5}, rng, 0, 1);
  Tensor eye({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor ai = instance_attention(eye, as);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(ai.data()[i], as.data()[i]);
}

TEST(InstanceAttention, HalfHalfIsAverage) {
  Tensor as({2, 3}, std::vector<double>{0.2, 0.4, 0.6, 0.8, 0.0, 1.0});
  Tensor ai = instance_attention(Tensor({1, 2}, 0.5), as);
  for (std::size_t p = 0; p < 3; ++p) EXPECT_NEAR(ai.data()[p], 0.5 * as.data()[p] + 0.5 * as.data()[3 + p], 1e-15);
}

TEST(InstanceAttention, DoublyStochasticMixingKeepsColumnSums) {
  Rng rng(11);
  Tensor as = random_tensor({3, 7}, rng, 0, 1);
  Tensor w({3, 3}, std::vector<double>{0.2, 0.5, 0.3, 0.3, 0.2, 0.5, 0.5, 0.3, 0.2});
  Tensor ai = instance_attention(w, as);
  for (std::size_t c = 0; c < 7; ++c) EXPECT_NEAR(column_sum(ai, c), column_sum(as, c), 1e-12);
}

TEST(InstanceAttention, MatchesScalarLoopOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor w = instance_assignment(random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), 0.1);  // 5 x 3
    Tensor as = softmax(random_tensor({3, 8}, rng, -2, 2), 0);
    Tensor ai = instance_attention(w, as);
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t p = 0; p < 8; ++p) {
        double want = 0.0;
        for (std::size_t i = 0; i < 3; ++i) want += w.data()[j * 3 + i] * as.data()[i * 8 + p];
        ASSERT_NEAR(ai.data()[j * 8 + p], want, 1e-12);
      }
  }
}

TEST(InstanceAttention, ValuesBoundedByMaxColumnSum) {
  Rng rng(13);
  Tensor s = random_tensor({5, 3}, rng), r = random_tensor({2, 3}, rng), f = random_tensor({3, 10}, rng);
  Tensor as = semantic_attention(f, s, r, kFlat, 2, 5, 0.1).semantic;
  Tensor ai = instance_attention(instance_assignment(s, random_tensor({4, 3}, rng), 0.1), as);
  double cap = 0.0;
  for (std::size_t c = 0; c < 10; ++c) cap = std::max(cap, column_sum(as, c));
  for (double v : ai.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, cap + 1e-12);
  }
}

TEST(InstanceAttention, ShapeMismatchRejected) {
  EXPECT_THROW(instance_attention(Tensor({2, 3}), Tensor({4, 5})), DimensionError);
}

// ---- relation matrix and hierarchical attention ---------------------------

TEST(RelationMatrix, SymmetricUnitDiagonalInRange) {
  Rng rng(14);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t ni = 2 + trial % 5;
    Tensor h = relation_matrix(random_tensor({ni, 4}, rng, -2, 2), random_mlp(4, 3, rng));
    for (std::size_t j = 0; j < ni; ++j) {
      ASSERT_EQ(h.at({j, j}), 1.0);
      for (std::size_t l = 0; l < ni; ++l) {
        ASSERT_NEAR(h.at({j, l}), h.at({l, j}), 1e-12);
        ASSERT_GE(h.at({j, l}), 0.0);
        ASSERT_LE(h.at({j, l}), 1.0);
      }
    }
  }
}

TEST(RelationMatrix, OrthogonalEmbeddingsGiveHalf) {
  RelationMlp zero{Tensor::parameter({3, 3}, std::vector<double>(9, 0.0)), Tensor::parameter({3}, {0, 0, 0}),
                   Tensor::parameter({3, 2}, std::vector<double>(6, 0.0)), Tensor::parameter({2}, {0, 0})};
  Rng rng(15);
  Tensor h = relation_matrix(random_tensor({4, 3}, rng), zero);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(h.at({j, l}), j == l ? 1.0 : 0.5);
}

TEST(RelationMatrix, CenteredIgnoresSharedOffset) {
  Rng rng(16);
  Tensor inst = random_tensor({5, 4}, rng, -2, 2);
  RelationMlp mlp = random_mlp(4, 3, rng);
  RelationMlp shifted = mlp;
  shifted.b2 = add(mlp.b2, Tensor({3}, {3.0, -1.5, 2.0}));
  Tensor a = relation_matrix(inst, mlp, true), b = relation_matrix(inst, shifted, true);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
  EXPECT_GT(max_abs_diff(relation_matrix(inst, mlp), relation_matrix(inst, shifted)), 1e-3);
}

TEST(RelationMatrix, CenteredOffDiagonalLogitsSumToMinusTrace) {
  // centered embeddings sum to zero, so the off-diagonal Gram entries cancel the diagonal
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t ni = 2 + trial % 6, rel = 3;
    Tensor inst = random_tensor({ni, 4}, rng, -2, 2);
    RelationMlp mlp = random_mlp(4, rel, rng);
    Tensor h = relation_matrix(inst, mlp, true);
    // rebuild the embeddings with plain loops
    std::vector<double> e(ni * rel, 0.0), mu(rel, 0.0);
    for (std::size_t j = 0; j < ni; ++j) {
      std::vector<double> hid(4);
      for (std::size_t o = 0; o < 4; ++o) {
        double z = mlp.b1.data()[o];
        for (std::size_t k = 0; k < 4; ++k) z += inst.data()[j * 4 + k] * mlp.w1.data()[k * 4 + o];
        hid[o] = std::max(z, 0.0);
      }
      for (std::size_t o = 0; o < rel; ++o) {
        double z = mlp.b2.data()[o];
        for (std::size_t k = 0; k < 4; ++k) z += hid[k] * mlp.w2.data()[k * rel + o];
        e[j * rel + o] = z;
        mu[o] += z / static_cast<double>(ni);
      }
    }
    double trace = 0.0, off = 0.0;
    for (std::size_t j = 0; j < ni; ++j)
      for (std::size_t l = 0; l < ni; ++l) {
        double g = 0.0;
        for (std::size_t o = 0; o < rel; ++o) g += (e[j * rel + o] - mu[o]) * (e[l * rel + o] - mu[o]);
        g /= std::sqrt(static_cast<double>(rel));
        if (j == l) {
          trace += g;
        } else {
          ASSERT_NEAR(h.at({j, l}), 1.0 / (1.0 + std::exp(-g)), 1e-12);
          off += g;
        }
      }
    ASSERT_NEAR(off, -trace, 1e-9);
  }
}

TEST(HierarchicalAttention, LowAffinitiesLeaveInstanceMaps) {
  Rng rng(16);
  Tensor ai = random_tensor({3, 6}, rng, 0, 1);
  Tensor h({3, 3}, std::vector<double>{1, 0.2, 0.49, 0.2, 1, 0.1, 0.49, 0.1, 1});
  Tensor ah = hierarchical_attention(h, ai, 0.5);
  for (std::size_t i = 0; i < ai.numel(); ++i) EXPECT_EQ(ah.data()[i], ai.data()[i]);
}

TEST(HierarchicalAttention, FullAffinityMergesMaps) {
  Tensor ai({2, 3}, std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  Tensor ah = hierarchical_attention(Tensor({2, 2}, 1.0), ai, 0.5);
  for (std::size_t p = 0; p < 3; ++p) {
    EXPECT_NEAR(ah.data()[p], ai.data()[p] + ai.data()[3 + p], 1e-15);
    EXPECT_EQ(ah.data()[p], ah.data()[3 + p]);
  }
}

TEST(HierarchicalAttention, ZeroThresholdIsPlainProduct) {
  Rng rng(17);
  Tensor h = relation_matrix(random_tensor({4, 3}, rng), random_mlp(3, 3, rng));
  Tensor ai = random_tensor({4, 5}, rng, 0, 1);
  Tensor ah = hierarchical_attention(h, ai, 0.0), plain = matmul(h, ai);
  for (std::size_t i = 0; i < ah.numel(); ++i) EXPECT_EQ(ah.data()[i], plain.data()[i]);
}

TEST(HierarchicalAttention, MatchesMaskedLoopOracle) {
  Rng rng(18);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor h = relation_matrix(random_tensor({5, 3}, rng, -2, 2), random_mlp(3, 3, rng));
    Tensor ai = random_tensor({5, 8}, rng, 0, 1);
    Tensor ah = hierarchical_attention(h, ai, 0.5);
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t p = 0; p < 8; ++p) {
        double want = 0.0;
        for (std::size_t l = 0; l < 5; ++l) {
          const double a = h.at({j, l});
          if (a >= 0.5) want += a * ai.at({l, p});
        }
        ASSERT_NEAR(ah.at({j, p}), want, 1e-12);
      }
  }
}

TEST(HierarchicalAttention, ThresholdOutOfRangeRejected) {
  EXPECT_THROW(hierarchical_attention(Tensor({2, 2}, 1.0), Tensor({2, 3}, 1.0), 1.5), ParameterError);
  EXPECT_THROW(hierarchical_attention(Tensor({2, 2}, 1.0), Tensor({2, 3}, 1.0), -0.1), ParameterError);
}

TEST(HierarchicalAttention, StraightThroughGradientIgnoresMask) {
  // d(sum(Ah * w)) / dH equals w Ai^T whether or not the entry was masked.
  Rng rng(19);
  Tensor h = Tensor::parameter({2, 2}, {1.0, 0.3, 0.3, 1.0});
  Tensor ai = random_tensor({2, 4}, rng, 0, 1);
  Tensor w = random_tensor({2, 4}, rng);
  backward(sum(mul(hierarchical_attention(h, ai, 0.5), w)));
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t l = 0; l < 2; ++l) {
      double want = 0.0;
      for (std::size_t p = 0; p < 4; ++p) want += w.at({j, p}) * ai.at({l, p});
      EXPECT_NEAR(h.grad()[j * 2 + l], want, 1e-12);
    }
}

// ---- gradients and bank ---------------------------------------------------

TEST(GroupingGradients, FullPathMatchesFiniteDifferences) {
  // Np = 4, Ni = 2, HW = 16; threshold 0 keeps the forward map smooth
  Rng rng(20);
  const std::size_t d = 3;
  Tensor f = random_parameter({d, 16}, rng);
  Tensor s = random_parameter({4, d}, rng), r = random_parameter({2, d}, rng), inst = random_parameter({2, d}, rng);
  RelationMlp mlp = random_mlp(d, 3, rng);
  Tensor w = random_tensor({2, 16}, rng);
  for (bool cosine : {false, true}) {
    auto loss = [&] {
      Tensor as = semantic_attention(f, s, r, GaussianPrior{}, 4, 4, 0.5, cosine).semantic;
      Tensor ai = instance_attention(instance_assignment(s, inst, 0.5), as);
      Tensor ah = hierarchical_attention(relation_matrix(inst, mlp, cosine), ai, 0.0);
      return add(sum(mul(ah, w)), sum(square(ai)));
    };
    // the cosine pass also exercises the centered relation
    EXPECT_LT(gradcheck(loss, {f, s, r, inst, mlp.w1, mlp.b1, mlp.w2, mlp.b2}), 1e-4) << "cosine " << cosine;
  }
}

TEST(PrototypeBank, ForwardShapesAndParameters) {
  Rng rng(21);
  GroupingConfig cfg;
  cfg.dim = 6;
  cfg.relation_dim = 5;
  PrototypeBank bank(cfg, rng);
  ScaleAttention out = bank.forward(random_tensor({2, 6, 4, 3}, rng), GaussianPrior{});
  EXPECT_EQ(out.height, 4u);
  EXPECT_EQ(out.width, 3u);
  EXPECT_EQ(out.semantic.shape(), (Shape{2, 16, 12}));
  EXPECT_EQ(out.semantic_full.shape(), (Shape{2, 20, 12}));
  EXPECT_EQ(out.assignment.shape(), (Shape{8, 16}));
  EXPECT_EQ(out.instance.shape(), (Shape{2, 8, 12}));
  EXPECT_EQ(out.relation.shape(), (Shape{8, 8}));
  EXPECT_EQ(out.hierarchical.shape(), (Shape{2, 8, 12}));
  EXPECT_EQ(bank.parameters().size(), 7u);
  EXPECT_THROW(bank.forward(random_tensor({1, 5, 2, 2}, rng), GaussianPrior{}), DimensionError);
}

TEST(PrototypeBank, NoAuxiliaryPrototypes) {
  Rng rng(22);
  GroupingConfig cfg;
  cfg.dim = 4;
  cfg.auxiliary_prototypes = 0;
  PrototypeBank bank(cfg, rng);
  EXPECT_EQ(bank.parameters().size(), 6u);
  ScaleAttention out = bank.forward(random_tensor({1, 4, 3, 3}, rng), GaussianPrior{});
  Tensor cols = sum(out.semantic, 1, false);
  for (double v : cols.data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(PrototypeBank, CenteredFeaturesIgnoreSharedOffset) {
  Rng rng(24);
  GroupingConfig cfg;
  cfg.dim = 4;
  cfg.center_features = true;
  for (bool cosine : {false, true}) {
    cfg.cosine_logits = cosine;
    Rng init(25);
    PrototypeBank bank(cfg, init);
    Tensor f = random_tensor({2, 4, 3, 3}, rng);
    std::vector<double> shifted(f.data().begin(), f.data().end());
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.7 * static_cast<double>((i / 9) % 4) - 1.0;
    const ScaleAttention a = bank.forward(f, GaussianPrior{});
    const ScaleAttention b = bank.forward(Tensor(f.shape(), shifted), GaussianPrior{});
    EXPECT_LT(max_abs_diff(a.semantic_full, b.semantic_full), 1e-12) << "cosine " << cosine;
  }
}

TEST(PrototypeBank, InitStdAndValidation) {
  Rng rng(23);
  GroupingConfig cfg;
  cfg.semantic_prototypes = 256;
  cfg.dim = 64;
  PrototypeBank bank(cfg, rng);
  auto d = bank.semantic().data();
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / d.size();
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  EXPECT_NEAR(std::sqrt(var / d.size()), 1.0 / 8.0, 0.005);
  cfg.semantic_prototypes = 1;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = GroupingConfig{};
  cfg.affinity_threshold = 2.0;
  EXPECT_THROW(cfg.validate(), ParameterError);
}
