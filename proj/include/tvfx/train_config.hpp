// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Knobs for the two-phase training recipe: windowing, optimizer rates,
// loss weights, evaluation cadence, and per-phase iteration budgets.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tvfx/common.hpp"

namespace tvfx::train {

struct TrainConfig {
  // Window batching.
  int window_size = 32768;  // target samples per training window
  int hop = 4096;
  int batch_size = 16;

  // Adam.
  double g_lr = 5e-4;
  double d_lr = 1e-3;
  double adam_beta1 = 0.8;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;

  // Loss weights (through the gradient balancer).
  double lambda_adv = 1.0;
  double lambda_spectral = 0.005;
  bool ms_enabled = false;
  double ms_weight = 0.01;
  double ms_epsilon = 0.01;

  // Spectral loss resolutions and band limit.
  std::vector<int> stft_windows = {512, 1024, 2048};
  double band_limit_hz = 17800.0;

  // Cadence and budgets.
  int eval_interval_epochs = 5;
  std::int64_t phase1_max_iters = 20000;
  std::int64_t spn_pretrain_iters = 50000;
  std::int64_t finetune_max_iters = 10000;

  // Stochastic state initialization: "angle" (unit circle) or "normal".
  std::string state_init = "angle";
  std::uint64_t seed = 1;

  void validate() const {
    check_config(window_size > 0 && hop > 0 && hop <= window_size,
                 "train: need 0 < hop <= window_size");
    check_config(batch_size >= 1, "train: batch_size must be >= 1");
    check_config(!ms_enabled || batch_size >= 2,
                 "train: mode seeking pairs batch items; batch_size >= 2");
    check_config(g_lr > 0.0 && d_lr > 0.0, "train: learning rates must be > 0");
    check_config(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 &&
                     adam_beta2 < 1.0 && adam_eps > 0.0,
                 "train: bad Adam parameters");
    check_config(lambda_adv >= 0.0 && lambda_spectral >= 0.0 &&
                     (!ms_enabled || ms_weight > 0.0),
                 "train: loss weights must be non-negative");
    check_config(!ms_enabled || ms_epsilon > 0.0,
                 "train: mode-seeking epsilon must be positive");
    check_config(!stft_windows.empty(), "train: no spectral resolutions");
    check_config(eval_interval_epochs >= 1, "train: eval interval must be >= 1");
    check_config(phase1_max_iters >= 1 && spn_pretrain_iters >= 1 &&
                     finetune_max_iters >= 1,
                 "train: iteration budgets must be >= 1");
    check_config(state_init == "angle" || state_init == "normal",
                 "train: state_init must be 'angle' or 'normal'");
  }
};

}  // namespace tvfx::train
