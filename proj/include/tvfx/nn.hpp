// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal neural-network layer library with hand-written backward passes.
//
// Layout conventions:
//  * A sequence is an Eigen matrix with rows = time steps and cols =
//    channels, so each channel is contiguous in memory (column-major).
//  * A batch is a std::vector of such matrices; items may have different
//    lengths unless a layer documents otherwise.
//  * Vector-valued data (control vectors, recurrent states, pooled features)
//    uses one row per batch item.
//
// Every layer caches what its backward pass needs during forward; backward
// must be called after the matching forward and consumes the cache.
// Parameter gradients accumulate across backward calls until zero_grad().
// Layers expose parameters through visit(), which walks (name, value, grad)
// triples; optimizers and checkpoints are built on that traversal.
//
// Convolutions are "valid" (no implicit padding): output rows are
// T - (kernel - 1) * dilation.  Gradient checks in the test suite verify
// every backward pass against central finite differences in double
// precision.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tvfx/common.hpp"
#include "tvfx/rng.hpp"

namespace tvfx::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
using Batch = std::vector<Mat<S>>;

// Parameter traversal callback: (name, value, gradient).
template <typename S>
using ParamFn =
    std::function<void(const std::string&, Mat<S>&, Mat<S>&)>;

namespace detail {

// Uniform init in [-bound, bound] with bound = 1/sqrt(fan_in), matching the
// usual fan-in-scaled default for both weights and biases.
template <typename S>
void fan_in_uniform(Mat<S>& m, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      m(r, c) = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
    }
  }
}

template <typename S>
Eigen::Index conv_out_rows(const Mat<S>& x, int kernel, int dilation) {
  const Eigen::Index span = static_cast<Eigen::Index>(kernel - 1) * dilation;
  check(x.rows() > span, "conv: input shorter than the kernel span");
  return x.rows() - span;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense 1-D convolution (cross-correlation), valid padding.
// Weight layout: (kernel * in_ch) x out_ch; tap k occupies the row block
// [k * in_ch, (k + 1) * in_ch).  Set trainable = false for fixed filters
// (they are skipped by visit() and rebuilt from configuration on load).
// ---------------------------------------------------------------------------
template <typename S>
class Conv1d {
 public:
  Conv1d(int in_ch, int out_ch, int kernel, int dilation = 1,
         bool trainable = true)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), dilation_(dilation),
        trainable_(trainable) {
    check(in_ch > 0 && out_ch > 0 && kernel > 0 && dilation > 0,
          "Conv1d: sizes must be positive");
    weight_.setZero(static_cast<Eigen::Index>(kernel) * in_ch, out_ch);
    bias_.setZero(1, out_ch);
    grad_weight_.setZero(weight_.rows(), weight_.cols());
    grad_bias_.setZero(1, out_ch);
  }

  void init(Rng& rng) {
    const auto fan_in = static_cast<std::size_t>(in_ch_) *
                        static_cast<std::size_t>(kernel_);
    detail::fan_in_uniform(weight_, fan_in, rng);
    detail::fan_in_uniform(bias_, fan_in, rng);
  }

  // Install fixed filter taps (single-channel use, e.g. a measurement FIR).
  void set_fixed_taps(const std::vector<double>& taps) {
    check(in_ch_ == 1 && out_ch_ == 1 && !trainable_,
          "Conv1d: fixed taps require an untrainable 1->1 filter");
    check(static_cast<int>(taps.size()) == kernel_,
          "Conv1d: tap count does not match kernel size");
    for (int k = 0; k < kernel_; ++k) weight_(k, 0) = static_cast<S>(taps[k]);
    bias_.setZero();
  }

  Batch<S> forward(const Batch<S>& x) {
    cache_ = x;
    Batch<S> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      check(x[i].cols() == in_ch_, "Conv1d: channel mismatch");
      const Eigen::Index rows = detail::conv_out_rows(x[i], kernel_, dilation_);
      Mat<S>& y = out[i];
      y = bias_.replicate(rows, 1);
      for (int k = 0; k < kernel_; ++k) {
        y.noalias() += x[i].middleRows(static_cast<Eigen::Index>(k) * dilation_,
                                       rows) *
                       weight_.middleRows(static_cast<Eigen::Index>(k) * in_ch_,
                                          in_ch_);
      }
    }
    return out;
  }

  Batch<S> backward(const Batch<S>& grad_out) {
    check(grad_out.size() == cache_.size(), "Conv1d: no matching forward");
    Batch<S> grad_in(cache_.size());
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      const Mat<S>& x = cache_[i];
      const Mat<S>& dy = grad_out[i];
      const Eigen::Index rows = dy.rows();
      grad_in[i].setZero(x.rows(), x.cols());
      for (int k = 0; k < kernel_; ++k) {
        const Eigen::Index off = static_cast<Eigen::Index>(k) * dilation_;
        const auto wk =
            weight_.middleRows(static_cast<Eigen::Index>(k) * in_ch_, in_ch_);
        grad_in[i].middleRows(off, rows).noalias() += dy * wk.transpose();
        grad_weight_.middleRows(static_cast<Eigen::Index>(k) * in_ch_, in_ch_)
            .noalias() += x.middleRows(off, rows).transpose() * dy;
      }
      grad_bias_.noalias() += dy.colwise().sum();
    }
    return grad_in;
  }

  void visit(const std::string& prefix, const ParamFn<S>& fn) {
    if (!trainable_) return;
    fn(prefix + ".weight", weight_, grad_weight_);
    fn(prefix + ".bias", bias_, grad_bias_);
  }

  void zero_grad() {
    grad_weight_.setZero();
    grad_bias_.setZero();
  }

  [[nodiscard]] int kernel() const { return kernel_; }
  [[nodiscard]] int dilation() const { return dilation_; }
  [[nodiscard]] Eigen::Index trim() const {
    return static_cast<Eigen::Index>(kernel_ - 1) * dilation_;
  }
  [[nodiscard]] std::size_t param_count() const {
    return trainable_ ? static_cast<std::size_t>(weight_.size() + bias_.size())
                      : 0;
  }

 private:
  int in_ch_, out_ch_, kernel_, dilation_;
  bool trainable_;
  Mat<S> weight_, bias_, grad_weight_, grad_bias_;
  Batch<S> cache_;
};

// ---------------------------------------------------------------------------
// Depthwise 1-D convolution: each channel is filtered independently.
// Weight layout: kernel x channels.
// ---------------------------------------------------------------------------
template <typename S>
class DepthwiseConv1d {
 public:
  DepthwiseConv1d(int channels, int kernel, int dilation = 1)
      : channels_(channels), kernel_(kernel), dilation_(dilation) {
    check(channels > 0 && kernel > 0 && dilation > 0,
          "DepthwiseConv1d: sizes must be positive");
    weight_.setZero(kernel, channels);
    bias_.setZero(1, channels);
    grad_weight_.setZero(kernel, channels);
    grad_bias_.setZero(1, channels);
  }

  void init(Rng& rng) {
    detail::fan_in_uniform(weight_, static_cast<std::size_t>(kernel_), rng);
    detail::fan_in_uniform(bias_, static_cast<std::size_t>(kernel_), rng);
  }

  Batch<S> forward(const Batch<S>& x) {
    cache_ = x;
    Batch<S> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      check(x[i].cols() == channels_, "DepthwiseConv1d: channel mismatch");
      const Eigen::Index rows = detail::conv_out_rows(x[i], kernel_, dilation_);
      Mat<S>& y = out[i];
      y = bias_.replicate(rows, 1);
      for (int k = 0; k < kernel_; ++k) {
        const Eigen::Index off = static_cast<Eigen::Index>(k) * dilation_;
        y.array() += x[i].middleRows(off, rows).array().rowwise() *
                     weight_.row(k).array();
      }
    }
    return out;
  }

  Batch<S> backward(const Batch<S>& grad_out) {
    check(grad_out.size() == cache_.size(),
          "DepthwiseConv1d: no matching forward");
    Batch<S> grad_in(cache_.size());
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      const Mat<S>& x = cache_[i];
      const Mat<S>& dy = grad_out[i];
      const Eigen::Index rows = dy.rows();
      grad_in[i].setZero(x.rows(), x.cols());
      for (int k = 0; k < kernel_; ++k) {
        const Eigen::Index off = static_cast<Eigen::Index>(k) * dilation_;
        grad_in[i].middleRows(off, rows).array() +=
            dy.array().rowwise() * weight_.row(k).array();
        grad_weight_.row(k).array() +=
            (x.middleRows(off, rows).array() * dy.array()).colwise().sum();
      }
      grad_bias_.noalias() += dy.colwise().sum();
    }
    return grad_in;
  }

  void visit(const std::string& prefix, const ParamFn<S>& fn) {
    fn(prefix + ".weight", weight_, grad_weight_);
    fn(prefix + ".bias", bias_, grad_bias_);
  }

  void zero_grad() {
    grad_weight_.setZero();
    grad_bias_.setZero();
  }

  [[nodiscard]] Eigen::Index trim() const {
    return static_cast<Eigen::Index>(kernel_ - 1) * dilation_;
  }
  [[nodiscard]] std::size_t param_count() const {
    return static_cast<std::size_t>(weight_.size() + bias_.size());
  }

 private:
  int channels_, kernel_, dilation_;
  Mat<S> weight_, bias_, grad_weight_, grad_bias_;
  Batch<S> cache_;
};

// ---------------------------------------------------------------------------
// PReLU with one trainable slope per channel, initialized at 0.25.
// ---------------------------------------------------------------------------
template <typename S>
class PRelu {
 public:
  explicit PRelu(int channels) : channels_(channels) {
    check(channels > 0, "PRelu: channels must be positive");
    slope_.setConstant(1, channels, static_cast<S>(0.25));
    grad_slope_.setZero(1, channels);
  }

  Batch<S> forward(const Batch<S>& x) {
    cache_ = x;
    Batch<S> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      check(x[i].cols() == channels_, "PRelu: channel mismatch");
      out[i] = x[i].array().max(S(0)).matrix();
      out[i].array() +=
          x[i].array().min(S(0)).rowwise() * slope_.row(0).array();
    }
    return out;
  }

  Batch<S> backward(const Batch<S>& grad_out) {
    check(grad_out.size() == cache_.size(), "PRelu: no matching forward");
    Batch<S> grad_in(cache_.size());
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      const auto neg = (cache_[i].array() < S(0));
      grad_in[i] =
          neg.select(grad_out[i].array().rowwise() * slope_.row(0).array(),
                     grad_out[i].array())
              .matrix();
      grad_slope_.row(0).array() +=
          neg.select(cache_[i].array() * grad_out[i].array(),
                     Mat<S>::Zero(cache_[i].rows(), cache_[i].cols()).array())
              .colwise()
              .sum();
    }
    return grad_in;
  }

  void visit(const std::string& prefix, const ParamFn<S>& fn) {
    fn(prefix + ".slope", slope_, grad_slope_);
  }

  void zero_grad() { grad_slope_.setZero(); }

  [[nodiscard]] std::size_t param_count() const {
    return static_cast<std::size_t>(slope_.size());
  }

 private:
  int channels_;
  Mat<S> slope_, grad_slope_;
  Batch<S> cache_;
};

// ---------------------------------------------------------------------------
// Non-overlapping average pooling along time.  A trailing remainder shorter
// than the pooling factor is dropped (and receives zero gradient); windows
// are anchored at the start of the buffer so longer inputs extend, rather
// than alter, earlier outputs.
// ---------------------------------------------------------------------------
template <typename S>
class AvgPool1d {
 public:
  explicit AvgPool1d(int factor) : factor_(factor) {
    check(factor > 0, "AvgPool1d: factor must be positive");
  }

  Batch<S> forward(const Batch<S>& x) {
    in_rows_.resize(x.size());
    in_cols_.resize(x.size());
    Batch<S> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      in_rows_[i] = x[i].rows();
      in_cols_[i] = x[i].cols();
      const Eigen::Index windows = x[i].rows() / factor_;
      check(windows >= 1, "AvgPool1d: input shorter than one window");
      out[i].resize(windows, x[i].cols());
      for (Eigen::Index w = 0; w < windows; ++w) {
        out[i].row(w) =
            x[i].middleRows(w * factor_, factor_).colwise().mean();
      }
    }
    return out;
  }

  Batch<S> backward(const Batch<S>& grad_out) {
    check(grad_out.size() == in_rows_.size(), "AvgPool1d: no matching forward");
    Batch<S> grad_in(grad_out.size());
    const S inv = S(1) / static_cast<S>(factor_);
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
      grad_in[i].setZero(in_rows_[i], in_cols_[i]);
      for (Eigen::Index w = 0; w < grad_out[i].rows(); ++w) {
        grad_in[i].middleRows(w * factor_, factor_) =
            (grad_out[i].row(w) * inv).replicate(factor_, 1);
      }
    }
    return grad_in;
  }

  void visit(const std::string&, const ParamFn<S>&) {}  // no parameters
  void zero_grad() {}

  [[nodiscard]] int factor() const { return factor_; }

 private:
  int factor_;
  std::vector<Eigen::Index> in_rows_, in_cols_;
};

// ---------------------------------------------------------------------------
// Linear-interpolation upsampling by an integer factor P. An input of K rows
// produces K*P rows: sample k*P + p interpolates between rows k and k+1 with
// weight p/P; the final window holds the last row (there is no row K to
// interpolate toward).  Downsample-then-upsample of a constant signal is the
// identity.
// ---------------------------------------------------------------------------
template <typename S>
class LerpUpsample {
 public:
  explicit LerpUpsample(int factor) : factor_(factor) {
    check(factor > 0, "LerpUpsample: factor must be positive");
  }

  Batch<S> forward(const Batch<S>& x) {
    in_rows_.resize(x.size());
    in_cols_.resize(x.size());
    Batch<S> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Eigen::Index k_rows = x[i].rows();
      check(k_rows >= 1, "LerpUpsample: empty input");
      in_rows_[i] = k_rows;
      in_cols_[i] = x[i].cols();
      out[i].resize(k_rows * factor_, x[i].cols());
      for (Eigen::Index k = 0; k < k_rows; ++k) {
        const Eigen::Index next = std::min(k + 1, k_rows - 1);
        for (int p = 0; p < factor_; ++p) {
          const S w = static_cast<S>(p) / static_cast<S>(factor_);
          out[i].row(k * factor_ + p) =
              (S(1) - w) * x[i].row(k) + w * x[i].row(next);
        }
      }
    }
    return out;
  }

  Batch<S> backward(const Batch<S>& grad_out) {
    check(grad_out.size() == in_rows_.size(),
          "LerpUpsample: no matching forward");
    Batch<S> grad_in(grad_out.size());
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
      const Eigen::Index k_rows = in_rows_[i];
      grad_in[i].setZero(k_rows, in_cols_[i]);
      for (Eigen::Index k = 0; k < k_rows; ++k) {
        const Eigen::Index next = std::min(k + 1, k_rows - 1);
        for (int p = 0; p < factor_; ++p) {
          const S w = static_cast<S>(p) / static_cast<S>(factor_);
          grad_in[i].row(k) += (S(1) - w) * grad_out[i].row(k * factor_ + p);
          grad_in[i].row(next) += w * grad_out[i].row(k * factor_ + p);
        }
      }
    }
    return grad_in;
  }

  void visit(const std::string&, const ParamFn<S>&) {}  // no parameters
  void zero_grad() {}

  [[nodiscard]] int factor() const { return factor_; }

 private:
  int factor_;
  std::vector<Eigen::Index> in_rows_, in_cols_;
};

// ---------------------------------------------------------------------------
// Fully connected layer on row-per-item matrices: (B x in) -> (B x out).
// ---------------------------------------------------------------------------
template <typename S>
class Linear {
 public:
  Linear(int in, int out) : in_(in), out_(out) {
    check(in > 0 && out > 0, "Linear: sizes must be positive");
    weight_.setZero(in, out);
    bias_.setZero(1, out);
    grad_weight_.setZero(in, out);
    grad_bias_.setZero(1, out);
  }

  void init(Rng& rng) {
    detail::fan_in_uniform(weight_, static_cast<std::size_t>(in_), rng);
    detail::fan_in_uniform(bias_, static_cast<std::size_t>(in_), rng);
  }

  Mat<S> forward(const Mat<S>& x) {
    check(x.cols() == in_, "Linear: input width mismatch");
    cache_ = x;
    Mat<S> y = x * weight_;
    y.rowwise() += bias_.row(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& grad_out) {
    check(grad_out.rows() == cache_.rows(), "Linear: no matching forward");
    grad_weight_.noalias() += cache_.transpose() * grad_out;
    grad_bias_.noalias() += grad_out.colwise().sum();
    return grad_out * weight_.transpose();
  }

  void visit(const std::string& prefix, const ParamFn<S>& fn) {
    fn(prefix + ".weight", weight_, grad_weight_);
    fn(prefix + ".bias", bias_, grad_bias_);
  }

  void zero_grad() {
    grad_weight_.setZero();
    grad_bias_.setZero();
  }

  [[nodiscard]] std::size_t param_count() const {
    return static_cast<std::size_t>(weight_.size() + bias_.size());
  }

 private:
  int in_, out_;
  Mat<S> weight_, bias_, grad_weight_, grad_bias_;
  Mat<S> cache_;
};

// ---------------------------------------------------------------------------
// Single-layer LSTM over per-item sequences, with injectable initial states
// and gradients with respect to them (the initial states are trained
// elsewhere).  Gate order in the packed weights: input, forget, cell,
// output.  Weights: x -> gates (in x 4H), h -> gates (H x 4H), one bias.
// ---------------------------------------------------------------------------
template <typename S>
struct LstmStateGrad {
  Batch<S> input;  // gradient w.r.t. the input sequences
  Mat<S> h0;       // gradient w.r.t. the initial hidden state (B x H)
  Mat<S> c0;       // gradient w.r.t. the initial cell state (B x H)
};

template <typename S>
class Lstm {
 public:
  Lstm(int input_size, int hidden) : in_(input_size), hidden_(hidden) {
    check(input_size > 0 && hidden > 0, "Lstm: sizes must be positive");
    wx_.setZero(input_size, 4 * hidden);
    wh_.setZero(hidden, 4 * hidden);
    bias_.setZero(1, 4 * hidden);
    grad_wx_.setZero(wx_.rows(), wx_.cols());
    grad_wh_.setZero(wh_.rows(), wh_.cols());
    grad_bias_.setZero(1, 4 * hidden);
  }

  void init(Rng& rng) {
    detail::fan_in_uniform(wx_, static_cast<std::size_t>(hidden_), rng);
    detail::fan_in_uniform(wh_, static_cast<std::size_t>(hidden_), rng);
    detail::fan_in_uniform(bias_, static_cast<std::size_t>(hidden_), rng);
  }

  // h0, c0: one row per batch item (B x H).
  Batch<S> forward(const Batch<S>& x, const Mat<S>& h0, const Mat<S>& c0) {
    const auto batch = x.size();
    check(static_cast<std::size_t>(h0.rows()) == batch &&
              static_cast<std::size_t>(c0.rows()) == batch,
          "Lstm: state batch mismatch");
    check(h0.cols() == hidden_ && c0.cols() == hidden_,
          "Lstm: state width mismatch");
    cache_.assign(batch, {});
    h0_ = h0;
    c0_ = c0;
    Batch<S> out(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      check(x[i].cols() == in_, "Lstm: input width mismatch");
      const Eigen::Index steps = x[i].rows();
      ItemCache& cc = cache_[i];
      cc.x = x[i];
      cc.gates.resize(steps, 4 * hidden_);
      cc.c.resize(steps, hidden_);
      cc.tanh_c.resize(steps, hidden_);
      cc.h.resize(steps, hidden_);
      Eigen::Matrix<S, 1, Eigen::Dynamic> h_prev = h0.row(i);
      Eigen::Matrix<S, 1, Eigen::Dynamic> c_prev = c0.row(i);
      for (Eigen::Index t = 0; t < steps; ++t) {
        Eigen::Matrix<S, 1, Eigen::Dynamic> z =
            x[i].row(t) * wx_ + h_prev * wh_ + bias_.row(0);
        auto sig = [](S v) { return S(1) / (S(1) + std::exp(-v)); };
        for (int u = 0; u < hidden_; ++u) {
          z(u) = sig(z(u));                              // input gate
          z(hidden_ + u) = sig(z(hidden_ + u));          // forget gate
          z(2 * hidden_ + u) = std::tanh(z(2 * hidden_ + u));  // cell cand.
          z(3 * hidden_ + u) = sig(z(3 * hidden_ + u));  // output gate
        }
        cc.gates.row(t) = z;
        const auto i_g = z.segment(0, hidden_).array();
        const auto f_g = z.segment(hidden_, hidden_).array();
        const auto g_g = z.segment(2 * hidden_, hidden_).array();
        const auto o_g = z.segment(3 * hidden_, hidden_).array();
        c_prev = (f_g * c_prev.array() + i_g * g_g).matrix();
        cc.c.row(t) = c_prev;
        cc.tanh_c.row(t) = c_prev.array().tanh().matrix();
        h_prev = (o_g * cc.tanh_c.row(t).array()).matrix();
        cc.h.row(t) = h_prev;
      }
      out[i] = cc.h;
    }
    return out;
  }

  LstmStateGrad<S> backward(const Batch<S>& grad_out) {
    check(grad_out.size() == cache_.size(), "Lstm: no matching forward");
    LstmStateGrad<S> result;
    result.input.resize(cache_.size());
    result.h0.setZero(static_cast<Eigen::Index>(cache_.size()), hidden_);
    result.c0.setZero(static_cast<Eigen::Index>(cache_.size()), hidden_);
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      const ItemCache& cc = cache_[i];
      const Eigen::Index steps = cc.x.rows();
      result.input[i].setZero(steps, in_);
      Eigen::Matrix<S, 1, Eigen::Dynamic> dh_next =
          Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(hidden_);
      Eigen::Matrix<S, 1, Eigen::Dynamic> dc_next = dh_next;
      Eigen::Matrix<S, 1, Eigen::Dynamic> dz(4 * hidden_);
      for (Eigen::Index t = steps - 1; t >= 0; --t) {
        const auto i_g = cc.gates.row(t).segment(0, hidden_).array();
        const auto f_g = cc.gates.row(t).segment(hidden_, hidden_).array();
        const auto g_g = cc.gates.row(t).segment(2 * hidden_, hidden_).array();
        const auto o_g = cc.gates.row(t).segment(3 * hidden_, hidden_).array();
        const auto tc = cc.tanh_c.row(t).array();
        const Eigen::Matrix<S, 1, Eigen::Dynamic> c_prev_row =
            (t == 0) ? Eigen::Matrix<S, 1, Eigen::Dynamic>(
                           c0_.row(static_cast<Eigen::Index>(i)))
                     : Eigen::Matrix<S, 1, Eigen::Dynamic>(cc.c.row(t - 1));
        const auto c_prev = c_prev_row.array();
        const Eigen::Array<S, 1, Eigen::Dynamic> dh =
            grad_out[i].row(t).array() + dh_next.array();
        const Eigen::Array<S, 1, Eigen::Dynamic> dc =
            dh * o_g * (S(1) - tc * tc) + dc_next.array();
        dz.segment(0, hidden_) =
            (dc * g_g * i_g * (S(1) - i_g)).matrix();  // d input gate
        dz.segment(hidden_, hidden_) =
            (dc * c_prev * f_g * (S(1) - f_g)).matrix();  // d forget gate
        dz.segment(2 * hidden_, hidden_) =
            (dc * i_g * (S(1) - g_g * g_g)).matrix();  // d cell candidate
        dz.segment(3 * hidden_, hidden_) =
            (dh * tc * o_g * (S(1) - o_g)).matrix();  // d output gate
        const Eigen::Matrix<S, 1, Eigen::Dynamic> h_prev =
            (t == 0) ? Eigen::Matrix<S, 1, Eigen::Dynamic>(
                           h0_.row(static_cast<Eigen::Index>(i)))
                     : Eigen::Matrix<S, 1, Eigen::Dynamic>(cc.h.row(t - 1));
        grad_wx_.noalias() += cc.x.row(t).transpose() * dz;
        grad_wh_.noalias() += h_prev.transpose() * dz;
        grad_bias_.row(0).noalias() += dz;
        result.input[i].row(t).noalias() = dz * wx_.transpose();
        dh_next.noalias() = dz * wh_.transpose();
        dc_next = (dc * f_g).matrix();
      }
      result.h0.row(static_cast<Eigen::Index>(i)) = dh_next;
      result.c0.row(static_cast<Eigen::Index>(i)) = dc_next;
    }
    return result;
  }

  void visit(const std::string& prefix, const ParamFn<S>& fn) {
    fn(prefix + ".wx", wx_, grad_wx_);
    fn(prefix + ".wh", wh_, grad_wh_);
    fn(prefix + ".bias", bias_, grad_bias_);
  }

  void zero_grad() {
    grad_wx_.setZero();
    grad_wh_.setZero();
    grad_bias_.setZero();
  }

  [[nodiscard]] int hidden() const { return hidden_; }
  [[nodiscard]] std::size_t param_count() const {
    return static_cast<std::size_t>(wx_.size() + wh_.size() + bias_.size());
  }

 private:
  struct ItemCache {
    Mat<S> x, gates, c, tanh_c, h;
  };
  int in_, hidden_;
  Mat<S> wx_, wh_, bias_, grad_wx_, grad_wh_, grad_bias_;
  Mat<S> h0_, c0_;
  std::vector<ItemCache> cache_;
};

// ---------------------------------------------------------------------------
// Feature-wise affine modulation by a time-varying tensor: the modulation
// carries 2C channels, split into per-sample gains (first half) and biases
// (second half) for a C-channel signal:
//   y[t, c] = gain[t, c] * x[t, c] + bias[t, c].
// Stateless; gradients are returned for both inputs.
// ---------------------------------------------------------------------------
template <typename S>
Mat<S> film_forward(const Mat<S>& x, const Mat<S>& modulation) {
  const Eigen::Index ch = x.cols();
  check(modulation.cols() == 2 * ch, "film: modulation must have 2C channels");
  check(modulation.rows() == x.rows(), "film: length mismatch");
  Mat<S> y(x.rows(), ch);
  y.array() = modulation.leftCols(ch).array() * x.array() +
              modulation.rightCols(ch).array();
  return y;
}

template <typename S>
void film_backward(const Mat<S>& x, const Mat<S>& modulation,
                   const Mat<S>& grad_out, Mat<S>& grad_x,
                   Mat<S>& grad_modulation) {
  const Eigen::Index ch = x.cols();
  grad_x.resize(x.rows(), ch);
  grad_x.array() = modulation.leftCols(ch).array() * grad_out.array();
  grad_modulation.resize(x.rows(), 2 * ch);
  grad_modulation.leftCols(ch).array() = x.array() * grad_out.array();
  grad_modulation.rightCols(ch) = grad_out;
}

// ---------------------------------------------------------------------------
// Control-conditioned feature modulation: a trainable linear map takes the
// static control vector to per-channel (gain delta, bias) pairs applied
// uniformly over time:
//   y[t, c] = (1 + delta[c]) * x[t, c] + bias[c].
// When disabled the layer is a bit-exact identity with no parameters.
// ---------------------------------------------------------------------------
template <typename S>
class ControlFilm {
 public:
  // control_dim <= 0 disables the layer.
  ControlFilm(int control_dim, int channels)
      : enabled_(control_dim > 0), channels_(channels) {
    if (enabled_) {
      map_ = std::make_unique<Linear<S>>(control_dim, 2 * channels);
    }
  }

  void init(Rng& rng) {
    if (enabled_) map_->init(rng);
  }

  // controls: one row per batch item.
  Batch<S> forward(const Batch<S>& x, const Mat<S>& controls) {
    if (!enabled_) return x;
    check(static_cast<std::size_t>(controls.rows()) == x.size(),
          "ControlFilm: control batch mismatch");
    gains_ = map_->forward(controls);
    cache_ = x;
    Batch<S> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      check(x[i].cols() == channels_, "ControlFilm: channel mismatch");
      const auto row = static_cast<Eigen::Index>(i);
      out[i].resizeLike(x[i]);
      out[i].array() = x[i].array().rowwise() *
                       (gains_.row(row).segment(0, channels_).array() + S(1));
      out[i].array().rowwise() +=
          gains_.row(row).segment(channels_, channels_).array();
    }
    return out;
  }

  // Returns the gradient w.r.t. x; the gradient w.r.t. the controls is
  // discarded (controls are inputs, not trained parameters).
  Batch<S> backward(const Batch<S>& grad_out) {
    if (!enabled_) return grad_out;
    check(grad_out.size() == cache_.size(), "ControlFilm: no matching forward");
    Mat<S> grad_gains;
    grad_gains.setZero(gains_.rows(), gains_.cols());
    Batch<S> grad_in(grad_out.size());
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      grad_in[i].resizeLike(grad_out[i]);
      grad_in[i].array() =
          grad_out[i].array().rowwise() *
          (gains_.row(row).segment(0, channels_).array() + S(1));
      grad_gains.row(row).segment(0, channels_).array() +=
          (cache_[i].array() * grad_out[i].array()).colwise().sum();
      grad_gains.row(row).segment(channels_, channels_).array() +=
          grad_out[i].array().colwise().sum();
    }
    map_->backward(grad_gains);
    return grad_in;
  }

  void visit(const std::string& prefix, const ParamFn<S>& fn) {
    if (enabled_) map_->visit(prefix + ".map", fn);
  }

  void zero_grad() {
    if (enabled_) map_->zero_grad();
  }

  [[nodiscard]] bool enabled() const { return enabled_; }
  [[nodiscard]] std::size_t param_count() const {
    return enabled_ ? map_->param_count() : 0;
  }

 private:
  bool enabled_;
  int channels_;
  std::unique_ptr<Linear<S>> map_;
  Mat<S> gains_;
  Batch<S> cache_;
};

}  // namespace tvfx::nn
