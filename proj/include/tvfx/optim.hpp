// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Adam over name-addressed parameter tensors. Models expose their
// parameters through visit callbacks (name, value, gradient); the optimizer
// keeps first/second moment estimates keyed by name, so freezing (which
// changes the set of visited tensors) and checkpoint round-trips stay
// aligned without positional bookkeeping.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>

#include "tvfx/common.hpp"
#include "tvfx/nn.hpp"

namespace tvfx::opt {

using Mat = nn::Mat<double>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-8;

  void validate() const {
    check_config(lr > 0.0, "adam: learning rate must be positive");
    check_config(beta1 >= 0.0 && beta1 < 1.0, "adam: beta1 outside [0, 1)");
    check_config(beta2 >= 0.0 && beta2 < 1.0, "adam: beta2 outside [0, 1)");
    check_config(eps > 0.0, "adam: eps must be positive");
  }
};

struct AdamState {
  std::int64_t step_count = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments;  // name -> (m, v)
};

class Adam {
 public:
  // A visitor invokes the parameter callback once per trainable tensor,
  // e.g. [&](const auto& f) { model.visit_trainable(f); }.
  using Visitor = std::function<void(const nn::ParamFn<double>&)>;

  explicit Adam(AdamConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  void step(const Visitor& visit) {
    ++state_.step_count;
    const double bc1 =
        1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.step_count));
    const double bc2 =
        1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.step_count));
    visit([&](const std::string& name, Mat& value, Mat& grad) {
      check(value.rows() == grad.rows() && value.cols() == grad.cols(),
            "adam: value/gradient shape mismatch for " + name);
      auto [it, fresh] = state_.moments.try_emplace(
          name, std::make_pair(Mat::Zero(value.rows(), value.cols()),
                               Mat::Zero(value.rows(), value.cols())));
      Mat& m = it->second.first;
      Mat& v = it->second.second;
      static_cast<void>(fresh);
      check(m.rows() == value.rows() && m.cols() == value.cols(),
            "adam: stored moment shape mismatch for " + name +
                " (model changed under the optimizer)");
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
      v.array() =
          cfg_.beta2 * v.array() + (1.0 - cfg_.beta2) * grad.array().square();
      value.array() -= cfg_.lr * (m.array() / bc1) /
                       ((v.array() / bc2).sqrt() + cfg_.eps);
    });
  }

  [[nodiscard]] const AdamConfig& config() const { return cfg_; }
  [[nodiscard]] const AdamState& state() const { return state_; }
  void restore(AdamState st) {
    check(st.step_count >= 0, "adam: negative step count");
    state_ = std::move(st);
  }

 private:
  AdamConfig cfg_;
  AdamState state_;
};

}  // namespace tvfx::opt
