// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Critic and state-predictor checks: feature-length traces against the
// floor-division oracle, scoring invariants (determinism, batch
// independence, global-pool time invariance), full finite-difference
// gradient verification, freeze semantics, a small discriminator-favorable
// training run, and state prediction with gradient isolation.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tvfx/discriminator.hpp"
#include "tvfx/generator.hpp"
#include "tvfx/nn.hpp"
#include "tvfx/rng.hpp"

namespace {

using Mat = tvfx::nn::Mat<double>;
using Batch = tvfx::nn::Batch<double>;
using tvfx::disc::Component;
using tvfx::disc::Discriminator;
using tvfx::disc::DiscriminatorConfig;
using tvfx::disc::StatePredictor;
using tvfx::disc::StatePredictorConfig;

DiscriminatorConfig tiny_config() {
  DiscriminatorConfig c;
  c.n_featblocks = 3;
  c.channels = 4;
  c.kernel_sizes = {4, 3, 3};
  c.pooling = 2;
  c.head_hidden = 5;
  c.head_layers = 2;
  return c;
}

Batch random_audio(tvfx::Rng& rng, int batch, std::size_t len) {
  Batch b;
  for (int i = 0; i < batch; ++i) {
    Mat m(static_cast<Eigen::Index>(len), 1);
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, 0) = rng.normal();
    b.push_back(std::move(m));
  }
  return b;
}

}  // namespace

TEST_CASE("feature length trace follows the floor-division rule") {
  SECTION("reference configuration on a full window") {
    DiscriminatorConfig c;  // defaults: 6 blocks, kernels 8,8,8,12,16,16
    const std::vector<std::size_t> want = {8190, 2045, 509, 124, 27, 3};
    REQUIRE(c.feature_lengths(32768) == want);
  }
  SECTION("desk configuration on a short window") {
    DiscriminatorConfig c;
    c.n_featblocks = 5;
    c.channels = 16;
    c.kernel_sizes = {8, 8, 8, 12, 16};
    const std::vector<std::size_t> want = {2046, 509, 125, 28, 3};
    REQUIRE(c.feature_lengths(8192) == want);
  }
  SECTION("starved cascade throws") {
    DiscriminatorConfig c;
    REQUIRE_THROWS_AS(c.feature_lengths(64), tvfx::Error);
  }
  SECTION("kernel list length must match the block count") {
    DiscriminatorConfig c;
    c.kernel_sizes = {8, 8};
    REQUIRE_THROWS_AS((Discriminator<double>(c, 1)), tvfx::ConfigError);
  }
}

TEST_CASE("extracted features have the promised shapes") {
  const DiscriminatorConfig c = tiny_config();
  Discriminator<double> d(c, 5);
  tvfx::Rng rng(1);
  const std::size_t len = 200;
  const std::vector<std::size_t> trace = c.feature_lengths(len);
  Batch x = random_audio(rng, 3, len);
  Batch y = random_audio(rng, 3, len);
  const auto features = d.extract_features(x, y, Mat());
  REQUIRE(features.size() == trace.size());
  for (std::size_t j = 0; j < trace.size(); ++j) {
    REQUIRE(features[j].size() == 3);
    for (const Mat& item : features[j]) {
      REQUIRE(static_cast<std::size_t>(item.rows()) == trace[j]);
      REQUIRE(item.cols() == c.channels);
    }
    if (j > 0) REQUIRE(trace[j] < trace[j - 1]);  // strictly decreasing
  }

  SECTION("length mismatch between x and y is rejected") {
    Batch y_bad = random_audio(rng, 3, len + 1);
    REQUIRE_THROWS_AS(d.extract_features(x, y_bad, Mat()), tvfx::Error);
  }
}

TEST_CASE("all-zero input produces batch-constant, time-constant features") {
  const DiscriminatorConfig c = tiny_config();
  Discriminator<double> d(c, 9);
  Batch x(3), y(3);
  for (int i = 0; i < 3; ++i) {
    x[i] = Mat::Zero(150, 1);
    y[i] = Mat::Zero(150, 1);
  }
  const auto features = d.extract_features(x, y, Mat());
  for (const auto& block : features) {
    for (const Mat& item : block) {
      // Constant over time: every row equals the first row.
      for (Eigen::Index r = 1; r < item.rows(); ++r) {
        REQUIRE((item.row(r) - item.row(0)).cwiseAbs().maxCoeff() == 0.0);
      }
      // Identical across the batch.
      REQUIRE((item - block[0]).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("scores are deterministic and batch-independent") {
  const DiscriminatorConfig c = tiny_config();
  Discriminator<double> d(c, 21);
  tvfx::Rng rng(3);
  const std::size_t len = 180;
  Batch x = random_audio(rng, 2, len);
  Batch y = random_audio(rng, 2, len);

  const Mat s1 = d.discriminate(x, y, Mat());
  const Mat s2 = d.discriminate(x, y, Mat());
  REQUIRE(s1.rows() == 2);
  REQUIRE(s1.cols() == 1);
  REQUIRE((s1 - s2).cwiseAbs().maxCoeff() == 0.0);

  SECTION("appending a duplicate window leaves existing scores unchanged") {
    Batch x3 = x, y3 = y;
    x3.push_back(x[0]);
    y3.push_back(y[0]);
    const Mat s3 = d.discriminate(x3, y3, Mat());
    REQUIRE(s3.rows() == 3);
    REQUIRE((s3.topRows(2) - s1).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(s3(2, 0) == s1(0, 0));
  }
  SECTION("batch permutation permutes scores identically") {
    Batch xp = {x[1], x[0]};
    Batch yp = {y[1], y[0]};
    const Mat sp = d.discriminate(xp, yp, Mat());
    REQUIRE(sp(0, 0) == s1(1, 0));
    REQUIRE(sp(1, 0) == s1(0, 0));
  }
}

TEST_CASE("head sees features only through their time average") {
  const DiscriminatorConfig c = tiny_config();
  Discriminator<double> d(c, 33);
  tvfx::Rng rng(7);
  const std::size_t len = 210;
  Batch x = random_audio(rng, 2, len);
  Batch y = random_audio(rng, 2, len);
  auto features = d.extract_features(x, y, Mat());
  const Mat score = d.score_from_features(features);

  // Replace every feature map by its broadcast time average.
  for (auto& block : features) {
    for (Mat& item : block) {
      const Mat mean = item.colwise().mean();
      item = mean.replicate(item.rows(), 1);
    }
  }
  const Mat averaged = d.score_from_features(features);
  REQUIRE((score - averaged).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("critic gradients match finite differences") {
  const DiscriminatorConfig c = tiny_config();
  Discriminator<double> d(c, 77);
  tvfx::Rng rng(11);
  const std::size_t len = 64;
  Batch x = random_audio(rng, 2, len);
  Batch y = random_audio(rng, 2, len);
  Mat probe(2, 1);
  probe << rng.normal(), rng.normal();

  auto loss_fn = [&]() {
    return (d.discriminate(x, y, Mat()).array() * probe.array()).sum();
  };

  d.zero_grad();
  d.discriminate(x, y, Mat());
  const auto [dx, dy] = d.backward(probe);

  const double kEps = 1e-5;
  int checked = 0;
  auto fd_slot = [&](double& slot) {
    const double saved = slot;
    slot = saved + kEps;
    const double up = loss_fn();
    slot = saved - kEps;
    const double down = loss_fn();
    slot = saved;
    return (up - down) / (2.0 * kEps);
  };
  auto require_close = [&](double analytic, double numeric) {
    const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    INFO("analytic " << analytic << " numeric " << numeric);
    REQUIRE(std::abs(analytic - numeric) <= 1e-4 * scale);
    ++checked;
  };

  SECTION("input gradients") {
    tvfx::Rng pick(99);
    for (int t = 0; t < 12; ++t) {
      const std::size_t i = pick.uniform_int(2);
      const Eigen::Index r =
          static_cast<Eigen::Index>(pick.uniform_int(len));
      require_close(dx[i](r, 0), fd_slot(x[i](r, 0)));
      require_close(dy[i](r, 0), fd_slot(y[i](r, 0)));
    }
    REQUIRE(checked == 24);
  }
  SECTION("parameter gradients, sampled from every tensor") {
    d.visit([&](const std::string& name, Mat& value, Mat& grad) {
      tvfx::Rng pick(tvfx::fnv1a64(name));
      const Eigen::Index n = value.size();
      const int tries = static_cast<int>(std::min<Eigen::Index>(n, 6));
      for (int t = 0; t < tries; ++t) {
        const Eigen::Index idx = static_cast<Eigen::Index>(
            pick.uniform_int(static_cast<std::uint64_t>(n)));
        INFO(name << " entry " << idx);
        require_close(grad.data()[idx], fd_slot(value.data()[idx]));
      }
    });
    REQUIRE(checked > 60);
  }
}

TEST_CASE("freezing controls the trainable parameter view") {
  const DiscriminatorConfig c = tiny_config();
  Discriminator<double> d(c, 14);

  auto names_of = [](Discriminator<double>& dd, bool trainable) {
    std::set<std::string> names;
    const auto fn = [&names](const std::string& n, Mat&, Mat&) {
      names.insert(n);
    };
    if (trainable) {
      dd.visit_trainable(fn);
    } else {
      dd.visit(fn);
    }
    return names;
  };

  const auto all = names_of(d, false);
  REQUIRE(all == names_of(d, true));  // nothing frozen yet

  d.set_frozen(Component::FeatBlocks, true);
  d.set_frozen(Component::FeatBlocks, true);  // idempotent
  const auto head_only = names_of(d, true);
  REQUIRE(head_only.size() < all.size());
  for (const auto& n : head_only) {
    REQUIRE(n.rfind("feat", 0) != 0);  // no feature-block parameters
  }
  REQUIRE(names_of(d, false) == all);  // serialization view unaffected

  d.set_frozen(Component::Head, true);
  REQUIRE(names_of(d, true).empty());
  d.set_frozen(Component::All, false);
  REQUIRE(names_of(d, true) == all);

  SECTION("a gradient step on the trainable view leaves frozen groups") {
    tvfx::Rng rng(4);
    Batch x = random_audio(rng, 2, 100);
    Batch y = random_audio(rng, 2, 100);
    d.set_frozen(Component::FeatBlocks, true);
    std::map<std::string, Mat> before;
    d.visit([&](const std::string& n, Mat& v, Mat&) { before[n] = v; });

    d.zero_grad();
    d.discriminate(x, y, Mat());
    d.backward(Mat::Ones(2, 1));
    d.visit_trainable([](const std::string&, Mat& v, Mat& g) {
      v -= 0.05 * g;
    });

    d.visit([&](const std::string& n, Mat& v, Mat&) {
      if (n.rfind("feat", 0) == 0) {
        REQUIRE((v - before[n]).cwiseAbs().maxCoeff() == 0.0);
      }
    });
    // The head moved (the score depends on it, so gradients are nonzero).
    bool head_moved = false;
    d.visit([&](const std::string& n, Mat& v, Mat&) {
      if (n.rfind("head", 0) == 0 &&
          (v - before[n]).cwiseAbs().maxCoeff() > 0.0) {
        head_moved = true;
      }
    });
    REQUIRE(head_moved);
  }
}

TEST_CASE("a few favorable steps separate real from fake") {
  // Hinge-loss training of the critic against a frozen bad "generator"
  // (a crude static approximation of the target mapping).  After a short
  // run the real pair must outscore the fake pair on held-out windows.
  const DiscriminatorConfig c = tiny_config();
  Discriminator<double> d(c, 50);
  tvfx::Rng rng(15);
  const std::size_t len = 128;
  const int batch = 4;

  auto make_real = [&](Batch& x, Batch& y) {
    x = random_audio(rng, batch, len);
    y.clear();
    for (const Mat& item : x) {
      Mat out = item;
      for (Eigen::Index r = 1; r < out.rows(); ++r) {
        out(r, 0) = 0.6 * item(r, 0) + 0.4 * item(r - 1, 0);  // lowpassed
      }
      y.push_back(std::move(out));
    }
  };
  auto make_fake = [&](const Batch& x) {
    Batch yh;
    for (const Mat& item : x) yh.push_back(0.5 * item);  // wrong: just gain
    return yh;
  };

  for (int step = 0; step < 150; ++step) {
    Batch x, y;
    make_real(x, y);
    const Batch yh = make_fake(x);

    d.zero_grad();
    const Mat sr = d.discriminate(x, y, Mat());
    Mat dr(batch, 1);  // d/ds of mean(max(0, 1 - s))
    for (int i = 0; i < batch; ++i) {
      dr(i, 0) = (sr(i, 0) < 1.0) ? -1.0 / batch : 0.0;
    }
    d.backward(dr);
    const Mat sf = d.discriminate(x, yh, Mat());
    Mat df(batch, 1);  // d/ds of mean(max(0, 1 + s))
    for (int i = 0; i < batch; ++i) {
      df(i, 0) = (sf(i, 0) > -1.0) ? 1.0 / batch : 0.0;
    }
    d.backward(df);
    d.visit_trainable([](const std::string&, Mat& v, Mat& g) {
      v -= 0.02 * g;
    });
  }

  double separated = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    Batch x, y;
    make_real(x, y);
    const Mat sr = d.discriminate(x, y, Mat());
    const Mat sf = d.discriminate(x, make_fake(x), Mat());
    for (int i = 0; i < batch; ++i) {
      if (sr(i, 0) > sf(i, 0)) separated += 1.0;
    }
  }
  REQUIRE(separated / (trials * batch) > 0.9);
}

TEST_CASE("state prediction") {
  const DiscriminatorConfig c = tiny_config();
  const StatePredictorConfig sc;
  const int n_blocks = 2;
  const int lstm_hidden = 3;
  Discriminator<double> d(c, 60);
  StatePredictor<double> spn(c, sc, n_blocks, lstm_hidden, 61);
  tvfx::Rng rng(16);
  const std::size_t len = 150;
  Batch x = random_audio(rng, 3, len);
  Batch y = random_audio(rng, 3, len);

  SECTION("requires frozen feature blocks") {
    REQUIRE_THROWS_AS(spn.predict_states(d, x, y, Mat()), tvfx::Error);
    d.set_frozen(Component::FeatBlocks, true);
    REQUIRE_NOTHROW(spn.predict_states(d, x, y, Mat()));
  }

  d.set_frozen(Component::FeatBlocks, true);

  SECTION("bundle shapes, bounded h, determinism, permutation") {
    const auto st = spn.predict_states(d, x, y, Mat());
    REQUIRE(st.h.size() == static_cast<std::size_t>(n_blocks));
    REQUIRE(st.c.size() == static_cast<std::size_t>(n_blocks));
    for (int j = 0; j < n_blocks; ++j) {
      REQUIRE(st.h[j].rows() == 3);
      REQUIRE(st.h[j].cols() == lstm_hidden);
      REQUIRE(st.h[j].cwiseAbs().maxCoeff() < 1.0);
    }
    const auto again = spn.predict_states(d, x, y, Mat());
    for (int j = 0; j < n_blocks; ++j) {
      REQUIRE((st.h[j] - again.h[j]).cwiseAbs().maxCoeff() == 0.0);
      REQUIRE((st.c[j] - again.c[j]).cwiseAbs().maxCoeff() == 0.0);
    }
    // Permutation equivariance up to matrix-product kernel noise: the
    // trunk's GEMM may pick a different micro-kernel for a row depending on
    // its position in the batch, which perturbs the last ulp.
    Batch xp = {x[2], x[0], x[1]};
    Batch yp = {y[2], y[0], y[1]};
    const auto stp = spn.predict_states(d, xp, yp, Mat());
    REQUIRE((stp.h[0].row(0) - st.h[0].row(2)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((stp.c[1].row(1) - st.c[1].row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("feature stability and gradient isolation across training steps") {
    const auto features_before = d.extract_features(x, y, Mat());
    // A few predictor training steps (descending a probe loss).
    for (int step = 0; step < 5; ++step) {
      d.zero_grad();
      spn.zero_grad();
      auto st = spn.predict_states(d, x, y, Mat());
      tvfx::gen::StateGrads<double> sg;
      for (int j = 0; j < n_blocks; ++j) {
        sg.h.push_back(Mat::Ones(3, lstm_hidden));
        sg.c.push_back(Mat::Ones(3, lstm_hidden));
      }
      spn.backward(sg);
      // Frozen feature blocks accumulated no gradient at all.
      d.visit([&](const std::string& n, Mat&, Mat& g) {
        if (n.rfind("feat", 0) == 0) {
          REQUIRE(g.cwiseAbs().maxCoeff() == 0.0);
        }
      });
      spn.visit([](const std::string&, Mat& v, Mat& g) { v -= 0.01 * g; });
    }
    const auto features_after = d.extract_features(x, y, Mat());
    for (std::size_t j = 0; j < features_before.size(); ++j) {
      for (std::size_t i = 0; i < features_before[j].size(); ++i) {
        REQUIRE((features_before[j][i] - features_after[j][i])
                    .cwiseAbs()
                    .maxCoeff() == 0.0);
      }
    }
  }

  SECTION("predictor gradients match finite differences") {
    const auto features = d.extract_features(x, y, Mat());
    tvfx::gen::StateGrads<double> probe;
    for (int j = 0; j < n_blocks; ++j) {
      Mat ph(3, lstm_hidden), pc(3, lstm_hidden);
      for (Eigen::Index r = 0; r < 3; ++r) {
        for (Eigen::Index k = 0; k < lstm_hidden; ++k) {
          ph(r, k) = rng.normal();
          pc(r, k) = rng.normal();
        }
      }
      probe.h.push_back(ph);
      probe.c.push_back(pc);
    }
    auto loss_fn = [&]() {
      const auto st = spn.predict_from_features(features);
      double loss = 0.0;
      for (int j = 0; j < n_blocks; ++j) {
        loss += (st.h[j].array() * probe.h[j].array()).sum();
        loss += (st.c[j].array() * probe.c[j].array()).sum();
      }
      return loss;
    };

    spn.zero_grad();
    spn.predict_from_features(features);
    spn.backward(probe);

    const double kEps = 1e-5;
    int checked = 0;
    spn.visit([&](const std::string& name, Mat& value, Mat& grad) {
      tvfx::Rng pick(tvfx::fnv1a64(name));
      const Eigen::Index n = value.size();
      const int tries = static_cast<int>(std::min<Eigen::Index>(n, 6));
      for (int t = 0; t < tries; ++t) {
        const Eigen::Index idx = static_cast<Eigen::Index>(
            pick.uniform_int(static_cast<std::uint64_t>(n)));
        double& slot = value.data()[idx];
        const double saved = slot;
        slot = saved + kEps;
        const double up = loss_fn();
        slot = saved - kEps;
        const double down = loss_fn();
        slot = saved;
        const double numeric = (up - down) / (2.0 * kEps);
        const double analytic = grad.data()[idx];
        const double scale =
            std::max({1.0, std::abs(analytic), std::abs(numeric)});
        INFO(name << " entry " << idx << ": analytic " << analytic
                  << " numeric " << numeric);
        REQUIRE(std::abs(analytic - numeric) <= 1e-4 * scale);
        ++checked;
      }
    });
    REQUIRE(checked > 30);
  }

  SECTION("predicted states drive the generator") {
    tvfx::gen::GeneratorConfig gc;
    gc.n_blocks = n_blocks;
    gc.audio_channels = 3;
    gc.audio_kernel = 3;
    gc.convs_per_fxblock = 2;
    gc.dilation_base = 2;
    gc.mod_channels = 3;
    gc.mod_kernel = 3;
    gc.mod_pooling = 4;
    gc.lstm_hidden = lstm_hidden;
    gc.fir_taps = 0;
    tvfx::gen::Generator<double> g(gc, 70);
    const auto st = spn.predict_states(d, x, y, Mat());
    Batch input = random_audio(rng, 3, g.required_input_length(16));
    const Batch out = g.forward(input, Mat(), st);
    REQUIRE(out.size() == 3);
    REQUIRE(out[0].rows() == 16);
  }
}
