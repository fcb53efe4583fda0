#include <gtest/gtest.h>

#include <cmath>

#include "gen.hpp"
#include "uoro/config.hpp"
#include "uoro/harness.hpp"
#include "uoro/optim.hpp"
#include "uoro/tasks.hpp"

using namespace uoro;

namespace {

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 8),
          static_cast<unsigned char>(v)};
}

std::vector<unsigned char> idx_images(std::uint32_t count, std::uint32_t magic = 0x00000803) {
  std::vector<unsigned char> b;
  for (std::uint32_t v : {magic, count, 28u, 28u}) {
    const auto w = be32(v);
    b.insert(b.end(), w.begin(), w.end());
  }
  for (std::uint32_t i = 0; i < count * 784; ++i) b.push_back(static_cast<unsigned char>(i % 256));
  return b;
}

ExperimentConfig small_config(EstimatorKind e) {
  ExperimentConfig c;
  c.task = TaskKind::Queue;
  c.estimator = e;
  c.hidden = 4;
  c.length = 8;
  c.delay = 2;
  c.minibatch = 6;
  c.episodes = 20;
  c.lr = 0.01;
  c.audit_every = 5;
  return c;
}

}  // namespace

TEST(Config, RoundTripsLosslessly) {
  ExperimentConfig c;
  c.estimator = EstimatorKind::PreUoro;
  c.cut = CutVertex::State;
  c.alpha = AlphaMode::Greedy;
  c.q0 = Q0Mode::Ours;
  c.lr = 0.1 + 0.2;  // not exactly representable in short decimal
  c.damping = 1.0 / 3.0;
  c.seed = 18446744073709551615ULL;
  c.digits_images = "/data/train-images";
  c.lagged_split = true;
  const ExperimentConfig back = parse_config_text(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.damping, c.damping);
  EXPECT_EQ(back.seed, c.seed);
}

TEST(Config, ErrorsAreSpecific) {
  EXPECT_THROW(parse_config_text("nonsense = 1"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("lr = fast"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("estimator = sgd"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("just a line"), std::invalid_argument);
  EXPECT_NO_THROW(parse_config_text("# comment\n\nlr = 0.5 # trailing\n"));
}

TEST(Config, DigitsPresetTable) {
  const ExperimentConfig c = parse_config_text("task = digits\nq0 = ours\nalpha = ours\npreset = true\n");
  EXPECT_DOUBLE_EQ(c.lr, 0.003);
  EXPECT_DOUBLE_EQ(c.momentum, 0.8);
  EXPECT_DOUBLE_EQ(c.bbar_decay, 0.9);
  EXPECT_DOUBLE_EQ(c.damping, 0.005);
  const ExperimentConfig d = parse_config_text("task = digits\nq0 = ours\nalpha = gir\npreset = true\n");
  EXPECT_DOUBLE_EQ(d.lr, 0.005);
  EXPECT_DOUBLE_EQ(d.momentum, 0.5);
  EXPECT_DOUBLE_EQ(d.damping, 0.008);
  const ExperimentConfig e = parse_config_text("task = digits\nq0 = identity\nalpha = gir\npreset = true\n");
  EXPECT_DOUBLE_EQ(e.momentum, 0.8);
}

TEST(Config, QueuePresetsAndOverrides) {
  EXPECT_DOUBLE_EQ(parse_config_text("task = queue\nestimator = both\npreset = true").lr, 0.002);
  EXPECT_DOUBLE_EQ(parse_config_text("task = queue\nestimator = temporal\npreset = true").lr, 0.0008);
  EXPECT_DOUBLE_EQ(parse_config_text("task = queue\nestimator = neither\npreset = true").lr, 0.008);
  EXPECT_DOUBLE_EQ(parse_config_text("task = queue\nestimator = spatial\npreset = true").lr, 0.008);
  EXPECT_DOUBLE_EQ(parse_config_text("lr = 0.5\ntask = queue\nestimator = both\npreset = true").lr, 0.5);
  EXPECT_EQ(parse_config_text("task = queue\npreset = true").minibatch, 100u);
}

TEST(Queue, TargetsAreDelayedInputs) {
  const auto batch = make_queue_batch({4, 12}, 3, 100);
  ASSERT_EQ(batch.size(), 100u);
  for (const Episode& ep : batch) {
    for (std::size_t t = 0; t < 12; ++t) {
      const double x = ep.inputs[t][0];
      EXPECT_TRUE(x == 0.0 || x == 1.0);
      if (t < 4) {
        EXPECT_TRUE(ep.targets[t].masked);
      } else {
        EXPECT_FALSE(ep.targets[t].masked);
        EXPECT_EQ(ep.targets[t].values[0], ep.inputs[t - 4][0]);
      }
    }
  }
  EXPECT_THROW(make_queue_batch({4, 4}, 1, 1), std::invalid_argument);
  EXPECT_THROW(make_queue_batch({0, 4}, 1, 1), std::invalid_argument);
}

TEST(Queue, MaskedStepsHaveZeroLossGradient) {
  const Instance inst = make_instance(CellKind::VanillaTanh, 3, 1, 6, 1, HeadKind::Bernoulli);
  const auto ep = make_queue_batch({4, 6}, 2, 1).front();
  const EpisodeTape tape = run_episode(inst.params, inst.head, ep);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(tape.losses[t], 0.0);
    for (double g : tape.loss_grads[t]) EXPECT_EQ(g, 0.0);
  }
}

TEST(Idx, ParsesValidFiles) {
  const auto imgs = parse_idx_images(idx_images(2));
  ASSERT_EQ(imgs.size(), 2u);
  EXPECT_FLOAT_EQ(imgs[0][255], 1.0f);
  EXPECT_FLOAT_EQ(imgs[0][0], 0.0f);
  std::vector<unsigned char> labels = be32(0x00000801);
  const auto n = be32(2);
  labels.insert(labels.end(), n.begin(), n.end());
  labels.push_back(7);
  labels.push_back(3);
  EXPECT_EQ(parse_idx_labels(labels), (std::vector<int>{7, 3}));
}

TEST(Idx, MalformedHeadersReportOffsets) {
  try {
    parse_idx_images({});
    FAIL();
  } catch (const IdxFormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  try {
    parse_idx_images(idx_images(1, 0x00000801));
    FAIL();
  } catch (const IdxFormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  auto bad_rows = idx_images(1);
  bad_rows[11] = 27;
  try {
    parse_idx_images(bad_rows);
    FAIL();
  } catch (const IdxFormatError& e) {
    EXPECT_EQ(e.offset(), 8u);
  }
  auto truncated = idx_images(2);
  truncated.resize(truncated.size() - 1);
  EXPECT_THROW(parse_idx_images(truncated), IdxFormatError);
  std::vector<unsigned char> labels = be32(0x00000801);
  const auto n = be32(1);
  labels.insert(labels.end(), n.begin(), n.end());
  labels.push_back(12);
  try {
    parse_idx_labels(labels);
    FAIL();
  } catch (const IdxFormatError& e) {
    EXPECT_EQ(e.offset(), 8u);
  }
}

// Logistic-regression probe on flattened synthetic images.
TEST(Digits, SyntheticStripesAreSeparable) {
  const DigitsDataset train = synthetic_stripes(600, 1), test = synthetic_stripes(300, 2);
  const std::size_t F = 785;
  DenseMatrix W(kDigitClasses, F);
  for (int epoch = 0; epoch < 30; ++epoch) {
    for (std::size_t n = 0; n < train.size(); ++n) {
      Vector f(train.images[n].begin(), train.images[n].end());
      f.push_back(1.0);
      Vector y = matvec(W, f);
      const double mx = *std::max_element(y.begin(), y.end());
      double z = 0;
      for (double& v : y) z += (v = std::exp(v - mx));
      for (std::size_t k = 0; k < kDigitClasses; ++k) {
        const double g = y[k] / z - (static_cast<int>(k) == train.labels[n] ? 1.0 : 0.0);
        axpy(-0.05 * g, f, W.row(k));
      }
    }
  }
  std::size_t correct = 0;
  for (std::size_t n = 0; n < test.size(); ++n) {
    Vector f(test.images[n].begin(), test.images[n].end());
    f.push_back(1.0);
    const Vector y = matvec(W, f);
    correct += static_cast<int>(std::max_element(y.begin(), y.end()) - y.begin()) == test.labels[n];
  }
  EXPECT_GT(static_cast<double>(correct) / test.size(), 0.6);
  const Episode ep = digits_episode(test, 0);
  EXPECT_EQ(ep.length(), 28u);
  EXPECT_EQ(ep.targets[27].label, test.labels[0]);
}

TEST(Adam, ZeroGradLeavesParams) {
  Vector p{1.0, -2.0};
  AdamState s(2);
  adam_update(p, Vector{0.0, 0.0}, s, {0.1, 0.9});
  EXPECT_EQ(p, (Vector{1.0, -2.0}));
}

TEST(Adam, FirstStepIsSignLike) {
  Vector p{0.0, 0.0, 0.0};
  AdamState s(3);
  adam_update(p, Vector{3.0, -0.01, 1e-3}, s, {0.1, 0.5});
  EXPECT_NEAR(p[0], -0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], 0.1 * 0.01 / (0.01 + 1e-8), 1e-15);
  EXPECT_NEAR(p[2], -0.1 * 1e-3 / (1e-3 + 1e-8), 1e-15);
}

TEST(Adam, MatchesClosedFormMomentSums) {
  const double lr = 0.01, b1 = 0.8, b2 = 0.999, eps = 1e-8;
  const double g[10] = {0.5, -1.0, 0.25, 2.0, 0.0, -0.3, 0.7, 1.1, -0.9, 0.05};
  Vector p{1.0};
  AdamState s(1);
  double expect = 1.0;
  for (int t = 1; t <= 10; ++t) {
    adam_update(p, Vector{g[t - 1]}, s, {lr, b1, b2, eps});
    double m = 0, v = 0;
    for (int i = 1; i <= t; ++i) {
      m += (1 - b1) * std::pow(b1, t - i) * g[i - 1];
      v += (1 - b2) * std::pow(b2, t - i) * g[i - 1] * g[i - 1];
    }
    expect -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    EXPECT_NEAR(p[0], expect, 1e-14);
  }
}

TEST(Training, SmokeRunsFinite) {
  for (EstimatorKind e : {EstimatorKind::Bptt, EstimatorKind::Rtrl, EstimatorKind::Uoro, EstimatorKind::PreUoro,
                          EstimatorKind::Spatial, EstimatorKind::Reinforce}) {
    const TrainingResult r = run_training(small_config(e));
    ASSERT_EQ(r.loss_curve.size(), 20u);
    for (double l : r.loss_curve) EXPECT_TRUE(std::isfinite(l)) << to_string(e);
  }
}

TEST(Training, ByteIdenticalOnRepeat) {
  ExperimentConfig c = small_config(EstimatorKind::Uoro);
  c.alpha = AlphaMode::Ours;
  c.q0 = Q0Mode::Ours;
  EXPECT_EQ(metrics_csv(run_training(c).rows), metrics_csv(run_training(c).rows));
}

TEST(Training, AuditHookHoldsForEveryAlphaMode) {
  for (AlphaMode a : {AlphaMode::Gir, AlphaMode::Ours, AlphaMode::Unit, AlphaMode::Greedy}) {
    ExperimentConfig c = small_config(EstimatorKind::Uoro);
    c.alpha = a;
    const TrainingResult r = run_training(c);
    EXPECT_EQ(r.audits, 4u);
    EXPECT_LT(r.worst_audit, 1e-9) << to_string(a);
  }
}

TEST(Training, OracleModeIsPlainAdamOnBpttGradient) {
  ExperimentConfig c = small_config(EstimatorKind::Bptt);
  c.episodes = 3;
  const TrainingResult r = run_training(c);
  ExperimentConfig c2 = c;
  c2.noise = NoiseMode::Gaussian;
  c2.sigma = 0.5;
  EXPECT_EQ(metrics_csv(r.rows), metrics_csv(run_training(c2).rows));
}

TEST(Training, DigitsSmoke) {
  ExperimentConfig c;
  c.task = TaskKind::Digits;
  c.cell = CellKind::Lstm;
  c.hidden = 4;
  c.length = 28;
  c.minibatch = 4;
  c.episodes = 3;
  c.synthetic_count = 40;
  c.alpha = AlphaMode::Ours;
  c.q0 = Q0Mode::Ours;
  const TrainingResult r = run_training(c);
  for (double l : r.loss_curve) EXPECT_TRUE(std::isfinite(l));
}

TEST(Training, InvalidConfigsAreRejected) {
  ExperimentConfig c = small_config(EstimatorKind::PreUoro);
  c.cut = CutVertex::State;
  EXPECT_THROW(run_training(c), std::invalid_argument);
  c = small_config(EstimatorKind::Uoro);
  c.length = 2;
  EXPECT_THROW(run_training(c), std::invalid_argument);
}

TEST(VarianceReport, GridsAndPredictionsAgree) {
  ExperimentConfig c;
  c.task = TaskKind::Random;
  c.hidden = 3;
  c.length = 5;
  c.input_dim = 2;
  c.mc_samples = 20000;
  const VarianceReport rep = run_variance_report(c);
  ASSERT_EQ(rep.cells.size(), 8u);
  for (const VarianceCell& cell : rep.cells) {
    if (!std::isfinite(cell.predicted_vq) || cell.measured.runs < 2) continue;
    EXPECT_LT(std::abs(cell.measured.actual_vq - cell.predicted_vq), 4.5 * cell.measured.mse_se + 1e-12) << cell.cell;
  }
  const std::string csv = variance_report_csv(rep);
  EXPECT_NE(csv.find("q0=ours/alpha=ours"), std::string::npos);
  EXPECT_NE(variance_report_json(rep, c).find("\"ablation\""), std::string::npos);
}
