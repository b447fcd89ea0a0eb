#include <gtest/gtest.h>

#include <cmath>

#include "ipr/io.hpp"
#include "ipr/model.hpp"
#include "ipr/train.hpp"

using namespace ipr;

namespace {

ModelSpec tiny_spec(std::size_t classes = 3) {
  // two conv layers + linear on a 6x6 input, small enough for FD checks
  ModelSpec s;
  s.input_channels = 1;
  s.input_h = 6;
  s.input_w = 6;
  s.classes = classes;
  s.layers.push_back(conv_spec(2, 1, 3));
  s.layers.push_back({.kind = LayerKind::Relu});
  s.layers.push_back(conv_spec(2, 2, 3));
  s.layers.push_back({.kind = LayerKind::Relu});
  s.layers.push_back({.kind = LayerKind::MaxPool});
  s.layers.push_back({.kind = LayerKind::Flatten});
  LayerSpec lin;
  lin.kind = LayerKind::Linear;
  lin.in_features = 2 * 3 * 3;
  lin.out_features = classes;
  s.layers.push_back(lin);
  return s;
}

Dataset tiny_data(Rng& rng, std::size_t n, std::size_t classes = 3) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img({1, 6, 6});
    for (std::size_t j = 0; j < img.size(); ++j) img[j] = rng.normal();
    d.images.push_back(std::move(img));
    d.labels.push_back(static_cast<int>(rng.uniform_index(classes)));
  }
  return d;
}

}  // namespace

TEST(Build, FineSharingOneBasisPerConvLayer) {
  ModelState m = build(tiny_spec(), Mode::IP, Sharing::Fine, Rng(1));
  EXPECT_EQ(m.bases.size(), 2u);
  EXPECT_NE(m.layers[0].basis_id, m.layers[2].basis_id);
}

TEST(Build, CoarseSharingSingleBasis) {
  ModelState m = build(tiny_spec(), Mode::IP, Sharing::Coarse, Rng(1));
  EXPECT_EQ(m.bases.size(), 1u);
  EXPECT_EQ(m.layers[0].basis_id, m.layers[2].basis_id);
}

TEST(Build, MediumSharingNeedsGroups) {
  EXPECT_THROW(build(tiny_spec(), Mode::IP, Sharing::Medium, Rng(1)),
               std::invalid_argument);
  ModelSpec s = tiny_spec();
  s.layers[0].basis_group = 0;
  s.layers[2].basis_group = 0;
  ModelState m = build(s, Mode::IP, Sharing::Medium, Rng(1));
  EXPECT_EQ(m.bases.size(), 1u);
}

TEST(Build, SpModeHasNoBases) {
  ModelState m = build(tiny_spec(), Mode::SP, Sharing::Fine, Rng(1));
  EXPECT_TRUE(m.bases.empty());
  EXPECT_FALSE(m.layers[0].interspace);
}

TEST(Build, FbParameterBudget) {
  // #bases * N * K^2 <= L_c * K^4 at N = K^2
  ModelState m = build(minivgg_spec(), Mode::IP, Sharing::Fine, Rng(1));
  std::size_t fb_params = 0;
  for (const auto& [id, basis] : m.bases)
    fb_params += basis.count() * basis.elements.front().size();
  EXPECT_LE(fb_params, 2u * 81u);
}

TEST(Forward, UniformLogitsGiveLnClasses) {
  ModelState m = build(tiny_spec(), Mode::SP, Sharing::Fine, Rng(1));
  Tensor logits({3});
  EXPECT_NEAR(cross_entropy(logits, 0), std::log(3.0), 1e-12);
  EXPECT_NEAR(cross_entropy(logits, 2), std::log(3.0), 1e-12);
}

TEST(Forward, SpIpIdenticalAtStandardBasis) {
  // same seed: the coefficient draw equals the spatial weight draw, so at
  // basis B the first forward pass must agree to machine precision
  ModelState sp = build(tiny_spec(), Mode::SP, Sharing::Fine, Rng(7));
  ModelState ip = build(tiny_spec(), Mode::IP, Sharing::Fine, Rng(7));
  Rng drng(8);
  Dataset d = tiny_data(drng, 3);
  for (std::size_t s = 0; s < d.size(); ++s) {
    const SampleCache a = forward_sample(sp, d.images[s]);
    const SampleCache b = forward_sample(ip, d.images[s]);
    for (std::size_t i = 0; i < a.logits.size(); ++i)
      EXPECT_NEAR(a.logits[i], b.logits[i], 1e-12);
  }
}

TEST(Backward, FullNetworkFiniteDifference) {
  for (const Mode mode : {Mode::SP, Mode::IP}) {
    ModelState m = build(tiny_spec(), mode, Sharing::Coarse, Rng(13));
    Rng drng(14);
    Dataset d = tiny_data(drng, 2);
    const std::vector<std::size_t> idx{0, 1};
    // mask one coefficient to verify the masked-gradient contract
    if (m.layers[0].mask.bits.size() > 1) {
      m.layers[0].mask.bits[1] = 0.0;
      apply_masks(m);
    }
    const Gradients g = compute_gradients(m, d, idx);
    const double eps = 1e-5;

    auto loss_at = [&](ModelState& mm) {
      double s = 0.0;
      for (std::size_t i : idx)
        s += cross_entropy(forward_sample(mm, d.images[i]).logits, d.labels[i]);
      return s / idx.size();
    };

    for (std::size_t li = 0; li < m.layers.size(); ++li) {
      if (!m.layers[li].has_params()) continue;
      Tensor& theta = m.layers[li].param();
      for (std::size_t i = 0; i < theta.size(); i += 3) {
        if (m.layers[li].mask.bits.size() && m.layers[li].mask.bits[i] == 0.0) {
          EXPECT_EQ(g.layers[li].dparam[i], 0.0);
          continue;
        }
        const double save = theta[i];
        theta[i] = save + eps;
        const double lp = loss_at(m);
        theta[i] = save - eps;
        const double lm = loss_at(m);
        theta[i] = save;
        const double fd = (lp - lm) / (2 * eps);
        EXPECT_NEAR(g.layers[li].dparam[i], fd, 1e-5 * (1.0 + std::abs(fd)));
      }
      for (std::size_t i = 0; i < m.layers[li].bias.size(); ++i) {
        const double save = m.layers[li].bias[i];
        m.layers[li].bias[i] = save + eps;
        const double lp = loss_at(m);
        m.layers[li].bias[i] = save - eps;
        const double lm = loss_at(m);
        m.layers[li].bias[i] = save;
        const double fd = (lp - lm) / (2 * eps);
        EXPECT_NEAR(g.layers[li].dbias[i], fd, 1e-5 * (1.0 + std::abs(fd)));
      }
    }
    for (auto& [id, basis] : m.bases)
      for (std::size_t n = 0; n < basis.count(); ++n)
        for (std::size_t i = 0; i < basis.elements[n].size(); i += 2) {
          const double save = basis.elements[n][i];
          basis.elements[n][i] = save + eps;
          const double lp = loss_at(m);
          basis.elements[n][i] = save - eps;
          const double lm = loss_at(m);
          basis.elements[n][i] = save;
          const double fd = (lp - lm) / (2 * eps);
          EXPECT_NEAR(g.dbases.at(id)[n][i], fd, 1e-5 * (1.0 + std::abs(fd)));
        }
  }
}

TEST(Sgd, ScalarArithmetic) {
  ModelState m = build(tiny_spec(), Mode::SP, Sharing::Fine, Rng(1));
  Gradients g = make_gradients(m);
  m.layers[0].weights[0] = 1.0;
  g.layers[0].dparam[0] = 2.0;
  SgdOptions opt;
  opt.lr = 0.1;
  opt.momentum = 0.0;
  opt.weight_decay = 0.0;
  sgd_step(m, g, opt);
  EXPECT_NEAR(m.layers[0].weights[0], 0.8, 1e-15);
}

TEST(Sgd, ZeroLrKeepsModel) {
  ModelState m = build(tiny_spec(), Mode::IP, Sharing::Fine, Rng(2));
  const ModelState before = m;
  Rng drng(3);
  Dataset d = tiny_data(drng, 2);
  const Gradients g = compute_gradients(m, d, {0, 1});
  SgdOptions opt;
  opt.lr = 0.0;
  sgd_step(m, g, opt);
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    if (!m.layers[li].has_params()) continue;
    for (std::size_t i = 0; i < m.layers[li].param().size(); ++i)
      EXPECT_EQ(m.layers[li].param()[i], before.layers[li].param()[i]);
  }
}

TEST(Sgd, MaskedEntriesStayZero) {
  ModelState m = build(tiny_spec(), Mode::IP, Sharing::Fine, Rng(4));
  m.layers[0].mask.bits[0] = 0.0;
  apply_masks(m);
  Rng drng(5);
  Dataset d = tiny_data(drng, 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  train(m, d, {}, cfg);
  EXPECT_EQ(m.layers[0].param()[0], 0.0);
  EXPECT_EQ(m.layers[0].v_weights[0], 0.0);
}

TEST(Sgd, BasisUpdateIndependentOfWdWhenExcluded) {
  Rng drng(6);
  Dataset d = tiny_data(drng, 4);
  auto run = [&](double wd) {
    ModelState m = build(tiny_spec(), Mode::IP, Sharing::Fine, Rng(9));
    const Gradients g = compute_gradients(m, d, {0, 1, 2, 3});
    SgdOptions opt;
    opt.weight_decay = wd;
    opt.wd_on_fb = false;
    sgd_step(m, g, opt);
    return m;
  };
  const ModelState a = run(0.0);
  const ModelState b = run(0.5);
  for (const auto& [id, basis] : a.bases)
    for (std::size_t n = 0; n < basis.count(); ++n)
      for (std::size_t i = 0; i < basis.elements[n].size(); ++i)
        EXPECT_EQ(basis.elements[n][i], b.bases.at(id).elements[n][i]);
  // coefficients do feel the decay
  bool coeff_differs = false;
  for (std::size_t i = 0; i < a.layers[0].param().size(); ++i)
    coeff_differs |= a.layers[0].param()[i] != b.layers[0].param()[i];
  EXPECT_TRUE(coeff_differs);
}

TEST(Train, ZeroEpochsLeavesModelUntouched) {
  ModelState m = build(tiny_spec(), Mode::SP, Sharing::Fine, Rng(1));
  const ModelState before = m;
  Rng drng(2);
  Dataset d = tiny_data(drng, 4);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto hist = train(m, d, {}, cfg);
  EXPECT_TRUE(hist.empty());
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    if (!m.layers[li].has_params()) continue;
    for (std::size_t i = 0; i < m.layers[li].param().size(); ++i)
      EXPECT_EQ(m.layers[li].param()[i], before.layers[li].param()[i]);
  }
}

TEST(Train, DeterministicUnderFixedSeed) {
  Rng drng(20);
  Dataset d = tiny_data(drng, 16);
  auto run = [&] {
    ModelState m = build(tiny_spec(), Mode::IP, Sharing::Fine, Rng(21));
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    return train(m, d, d, cfg);
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].loss, b[i].loss);
    EXPECT_EQ(a[i].accuracy, b[i].accuracy);
  }
}

TEST(Train, OverfitsSmallDenseProblem) {
  SynthSpec spec;
  spec.samples = 64;
  spec.noise = 0.05;
  Rng drng(30);
  Dataset d = synth_dataset(spec, drng);
  ModelState m = build(minivgg_spec(), Mode::SP, Sharing::Fine, Rng(31));
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 16;
  cfg.sgd.lr = 0.05;
  const auto hist = train(m, d, {}, cfg);
  EXPECT_DOUBLE_EQ(hist.back().accuracy, 1.0);
}

TEST(CosineSimilarity, StandardBasisIsZero) {
  ModelState m = build(tiny_spec(), Mode::IP, Sharing::Coarse, Rng(1),
                       {InitScheme::Standard, 0});
  EXPECT_DOUBLE_EQ(mean_fb_cosine_similarity(m), 0.0);
}

TEST(CosineSimilarity, IdenticalElementsGiveOne) {
  FilterBasis b;
  for (int i = 0; i < 3; ++i) b.elements.push_back(Tensor({2, 2}, 1.0));
  EXPECT_NEAR(fb_cosine_similarity(b), 1.0, 1e-12);
}

TEST(CosineSimilarity, MatchesBruteForce) {
  Rng rng(40);
  FilterBasis b;
  for (int e = 0; e < 3; ++e) {
    Tensor g({2, 2});
    for (std::size_t i = 0; i < 4; ++i) g[i] = rng.normal();
    b.elements.push_back(std::move(g));
  }
  double total = 0.0;
  int pairs = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i >= j) continue;
      double dot = 0.0, ni = 0.0, nj = 0.0;
      for (std::size_t q = 0; q < 4; ++q) {
        dot += b.elements[i][q] * b.elements[j][q];
        ni += b.elements[i][q] * b.elements[i][q];
        nj += b.elements[j][q] * b.elements[j][q];
      }
      total += std::abs(dot) / std::sqrt(ni * nj);
      ++pairs;
    }
  EXPECT_NEAR(fb_cosine_similarity(b), total / pairs, 1e-12);
}

TEST(SnapshotRestore, BitExactRoundTrip) {
  ModelState m = build(tiny_spec(), Mode::IP, Sharing::Fine, Rng(50));
  Rng drng(51);
  Dataset d = tiny_data(drng, 8);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  train(m, d, {}, cfg);

  const Snapshot snap = snapshot(m);
  ModelState copy = m;
  train(copy, d, {}, cfg);
  restore(copy, snap);
  train(copy, d, {}, cfg);
  train(m, d, {}, cfg);
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    if (!m.layers[li].has_params()) continue;
    for (std::size_t i = 0; i < m.layers[li].param().size(); ++i)
      EXPECT_EQ(m.layers[li].param()[i], copy.layers[li].param()[i]);
  }
  for (const auto& [id, basis] : m.bases)
    for (std::size_t n = 0; n < basis.count(); ++n)
      for (std::size_t i = 0; i < basis.elements[n].size(); ++i)
        EXPECT_EQ(basis.elements[n][i], copy.bases.at(id).elements[n][i]);
}
