#pragma once

// Convolutional dueling Q-network with hand-written backprop and Adam.
// Parameters live in one flat vector so optimizer state, target copies and
// checkpoints are plain array operations.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mzi::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Over-aligned so vectorized kernels peel the same way on every allocation;
// with plain heap alignment results drift in the last bits between runs.
template <typename Scalar>
using ParamVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

struct ConvSpec {
  int out_channels;
  int kernel;
  int stride;
};

struct NetworkSpec {
  int in_channels = 16;
  int in_size = 64;
  std::vector<ConvSpec> convs{{32, 8, 4}, {64, 4, 2}, {64, 3, 1}};
  int dense_units = 512;
  int n_actions = 25;

  // Canonical text form; feeds the checkpoint compatibility hash.
  std::string describe() const {
    std::ostringstream os;
    os << "in=" << in_channels << "x" << in_size << "x" << in_size;
    for (const auto& c : convs) os << ";conv" << c.out_channels << "k" << c.kernel << "s" << c.stride << "relu";
    os << ";dense" << dense_units << "relu;dueling" << n_actions;
    return os.str();
  }
  bool operator==(const NetworkSpec& o) const { return describe() == o.describe(); }
};

struct ParamBlock {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Dueling aggregation: Q_a = V + A_a - mean(A). Columns are samples.
template <typename Scalar>
Matrix<Scalar> dueling_combine(const Matrix<Scalar>& value, const Matrix<Scalar>& advantage) {
  if (value.rows() != 1 || value.cols() != advantage.cols())
    throw std::invalid_argument("dueling_combine: value must be 1 x batch");
  Matrix<Scalar> q = advantage;
  for (Eigen::Index n = 0; n < q.cols(); ++n) {
    const Scalar shift = value(0, n) - advantage.col(n).mean();
    q.col(n).array() += shift;
  }
  return q;
}

template <typename Scalar>
class QNetwork {
 public:
  struct ConvGeom {
    int in_c, in_h, out_c, out_h, k, s;
    std::size_t w, b;  // parameter offsets
  };

  // Intermediate values kept for backprop. Reusing one tape across calls of
  // the same batch size avoids reallocating the large im2col buffers.
  struct Tape {
    int batch = 0;
    std::vector<Matrix<Scalar>> cols;  // im2col per conv layer
    std::vector<Matrix<Scalar>> acts;  // post-ReLU conv outputs, C x (N*H*W)
    Matrix<Scalar> flat;               // (C*H*W) x N
    Matrix<Scalar> hidden;             // U x N post-ReLU
    Matrix<Scalar> value, adv;
    Matrix<Scalar> dcols, dact, dprev;  // backward scratch
  };

  explicit QNetwork(NetworkSpec spec = {}, std::uint64_t seed = 0) : spec_(std::move(spec)) {
    build();
    init(seed);
  }

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::size_t input_size() const { return std::size_t(spec_.in_channels) * spec_.in_size * spec_.in_size; }
  int n_actions() const { return spec_.n_actions; }

  ParamVector<Scalar>& parameters() { return params_; }
  const ParamVector<Scalar>& parameters() const { return params_; }

  // PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (const auto& b : blocks_) {
      const int fan_in = fan_in_of(b);
      const double bound = 1.0 / std::sqrt(double(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (std::size_t i = 0; i < b.size; ++i) params_[b.offset + i] = Scalar(u(rng));
    }
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& inputs) const {
    Tape tape;
    return forward(inputs, tape);
  }

  // inputs: input_size() x N, one sample per column (channel-major CHW).
  // Returns Q as n_actions x N.
  Matrix<Scalar> forward(const Matrix<Scalar>& inputs, Tape& tape) const {
    if (std::size_t(inputs.rows()) != input_size()) throw std::invalid_argument("QNetwork::forward: bad input size");
    const int n = int(inputs.cols());
    tape.batch = n;
    tape.cols.resize(conv_.size());
    tape.acts.resize(conv_.size());

    for (std::size_t l = 0; l < conv_.size(); ++l) {
      const ConvGeom& g = conv_[l];
      if (l == 0)
        im2col(inputs.data(), g, n, Layout::sample_major, tape.cols[l]);
      else
        im2col(tape.acts[l - 1].data(), g, n, Layout::channel_major, tape.cols[l]);
      Matrix<Scalar>& act = tape.acts[l];
      act.resize(g.out_c, tape.cols[l].cols());
      act.noalias() = weight(g) * tape.cols[l];
      act.colwise() += bias(g.b, g.out_c);
      act = act.cwiseMax(Scalar(0));
    }

    if (conv_.empty())
      tape.flat = inputs;
    else
      flatten(tape.acts.back(), n, tape.flat);
    tape.hidden.resize(spec_.dense_units, n);
    tape.hidden.noalias() = dense_w() * tape.flat;
    tape.hidden.colwise() += bias(dense_b_, spec_.dense_units);
    tape.hidden = tape.hidden.cwiseMax(Scalar(0));

    tape.value.resize(1, n);
    tape.value.noalias() = value_w() * tape.hidden;
    tape.value.array() += params_[value_b_];
    tape.adv.resize(spec_.n_actions, n);
    tape.adv.noalias() = adv_w() * tape.hidden;
    tape.adv.colwise() += bias(adv_b_, spec_.n_actions);
    return dueling_combine<Scalar>(tape.value, tape.adv);
  }

  // Accumulates dLoss/dParams into grad (same length as parameters()) given
  // dLoss/dQ (n_actions x N) and the tape of the matching forward call.
  void backward(Tape& tape, const Matrix<Scalar>& dq, ParamVector<Scalar>& grad) const {
    if (grad.size() != params_.size()) grad.assign(params_.size(), Scalar(0));
    const int n = tape.batch;
    const int na = spec_.n_actions;

    const Matrix<Scalar> dvalue = dq.colwise().sum();
    Matrix<Scalar> dadv = dq;
    dadv.rowwise() -= (dvalue / Scalar(na)).row(0);

    map_rowmat(grad, adv_w_, na, spec_.dense_units).noalias() += dadv * tape.hidden.transpose();
    map_vec(grad, adv_b_, na) += dadv.rowwise().sum();
    map_rowmat(grad, value_w_, 1, spec_.dense_units).noalias() += dvalue * tape.hidden.transpose();
    grad[value_b_] += dvalue.sum();

    Matrix<Scalar> dhidden = adv_w().transpose() * dadv + value_w().transpose() * dvalue;
    relu_mask(dhidden, tape.hidden);

    const int flat_rows = int(tape.flat.rows());
    map_rowmat(grad, dense_w_, spec_.dense_units, flat_rows).noalias() += dhidden * tape.flat.transpose();
    map_vec(grad, dense_b_, spec_.dense_units) += dhidden.rowwise().sum();
    if (conv_.empty()) return;
    const Matrix<Scalar> dflat = dense_w().transpose() * dhidden;

    unflatten(dflat, n, tape.dact);
    for (std::size_t l = conv_.size(); l-- > 0;) {
      const ConvGeom& g = conv_[l];
      relu_mask(tape.dact, tape.acts[l]);
      map_rowmat(grad, g.w, g.out_c, g.in_c * g.k * g.k).noalias() += tape.dact * tape.cols[l].transpose();
      map_vec(grad, g.b, g.out_c) += tape.dact.rowwise().sum();
      if (l == 0) break;
      tape.dcols.resize(Eigen::Index(g.in_c) * g.k * g.k, tape.dact.cols());
      tape.dcols.noalias() = weight(g).transpose() * tape.dact;
      tape.dprev.setZero(g.in_c, Eigen::Index(n) * g.in_h * g.in_h);
      col2im(tape.dcols, g, n, tape.dprev.data());
      tape.dact.swap(tape.dprev);
    }
  }

 private:
  enum class Layout { sample_major, channel_major };

  void build() {
    if (spec_.in_channels < 1 || spec_.in_size < 1 || spec_.dense_units < 1 || spec_.n_actions < 1)
      throw std::invalid_argument("QNetwork: bad spec");
    std::size_t offset = 0;
    auto add = [&](std::string name, std::vector<int> shape) {
      std::size_t size = 1;
      for (int d : shape) size *= std::size_t(d);
      blocks_.push_back({std::move(name), std::move(shape), offset, size});
      offset += size;
      return blocks_.back().offset;
    };
    int c = spec_.in_channels, h = spec_.in_size;
    for (std::size_t l = 0; l < spec_.convs.size(); ++l) {
      const ConvSpec& cs = spec_.convs[l];
      if (cs.kernel < 1 || cs.stride < 1 || cs.kernel > h) throw std::invalid_argument("QNetwork: conv does not fit input");
      const int oh = (h - cs.kernel) / cs.stride + 1;
      ConvGeom g{c, h, cs.out_channels, oh, cs.kernel, cs.stride, 0, 0};
      g.w = add("conv" + std::to_string(l + 1) + ".weight", {cs.out_channels, c, cs.kernel, cs.kernel});
      g.b = add("conv" + std::to_string(l + 1) + ".bias", {cs.out_channels});
      conv_.push_back(g);
      c = cs.out_channels;
      h = oh;
    }
    flat_size_ = c * h * h;
    dense_w_ = add("dense.weight", {spec_.dense_units, flat_size_});
    dense_b_ = add("dense.bias", {spec_.dense_units});
    value_w_ = add("value.weight", {1, spec_.dense_units});
    value_b_ = add("value.bias", {1});
    adv_w_ = add("advantage.weight", {spec_.n_actions, spec_.dense_units});
    adv_b_ = add("advantage.bias", {spec_.n_actions});
    params_.assign(offset, Scalar(0));
  }

  int fan_in_of(const ParamBlock& b) const {
    // Biases share the fan-in of their layer's weight, which precedes them.
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      if (&blocks_[i] != &b) continue;
      const ParamBlock& w = b.shape.size() == 1 && i > 0 ? blocks_[i - 1] : b;
      int fan = 1;
      for (std::size_t d = 1; d < w.shape.size(); ++d) fan *= w.shape[d];
      return fan;
    }
    return 1;
  }

  Eigen::Map<const RowMatrix<Scalar>> weight(const ConvGeom& g) const {
    return {params_.data() + g.w, g.out_c, Eigen::Index(g.in_c) * g.k * g.k};
  }
  Eigen::Map<const Vector<Scalar>> bias(std::size_t offset, int n) const { return {params_.data() + offset, n}; }
  Eigen::Map<const RowMatrix<Scalar>> dense_w() const { return {params_.data() + dense_w_, spec_.dense_units, flat_size_}; }
  Eigen::Map<const RowMatrix<Scalar>> value_w() const { return {params_.data() + value_w_, 1, spec_.dense_units}; }
  Eigen::Map<const RowMatrix<Scalar>> adv_w() const { return {params_.data() + adv_w_, spec_.n_actions, spec_.dense_units}; }

  static Eigen::Map<RowMatrix<Scalar>> map_rowmat(ParamVector<Scalar>& v, std::size_t off, int r, int c) {
    return {v.data() + off, r, c};
  }
  static void relu_mask(Matrix<Scalar>& grad, const Matrix<Scalar>& post_relu) {
    grad = (post_relu.array() > Scalar(0)).select(grad, Scalar(0));
  }
  static Eigen::Map<Vector<Scalar>> map_vec(ParamVector<Scalar>& v, std::size_t off, int n) { return {v.data() + off, n}; }

  // Strides of an activation buffer: element (sample, channel, pixel) sits
  // at sample * sample_stride + channel * channel_stride + pixel * pixel_stride.
  struct Strides {
    std::size_t sample, channel, pixel;
  };
  static Strides strides(Layout layout, const ConvGeom& g) {
    const std::size_t hw = std::size_t(g.in_h) * g.in_h;
    if (layout == Layout::sample_major) return {std::size_t(g.in_c) * hw, hw, 1};
    return {std::size_t(g.in_c) * hw, 1, std::size_t(g.in_c)};
  }

  // cols((c,ky,kx), (n,oy,ox)) = in(n, c, oy*s+ky, ox*s+kx)
  static void im2col(const Scalar* in, const ConvGeom& g, int n, Layout layout, Matrix<Scalar>& cols) {
    const int op = g.out_h * g.out_h;
    cols.resize(Eigen::Index(g.in_c) * g.k * g.k, Eigen::Index(n) * op);
    const Strides st = strides(layout, g);
    Scalar* col = cols.data();
    for (int s = 0; s < n; ++s)
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_h; ++ox) {
          const Scalar* origin = in + s * st.sample + std::size_t((oy * g.in_h + ox) * g.s) * st.pixel;
          for (int c = 0; c < g.in_c; ++c) {
            const Scalar* chan = origin + c * st.channel;
            for (int ky = 0; ky < g.k; ++ky) {
              const Scalar* src = chan + std::size_t(ky * g.in_h) * st.pixel;
              if (st.pixel == 1) {
                std::memcpy(col, src, std::size_t(g.k) * sizeof(Scalar));
                col += g.k;
              } else {
                for (int kx = 0; kx < g.k; ++kx) *col++ = src[kx * st.pixel];
              }
            }
          }
        }
  }

  // Adjoint of im2col into a channel-major buffer.
  static void col2im(const Matrix<Scalar>& cols, const ConvGeom& g, int n, Scalar* out) {
    const Strides st = strides(Layout::channel_major, g);
    const Scalar* col = cols.data();
    for (int s = 0; s < n; ++s)
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_h; ++ox) {
          Scalar* origin = out + s * st.sample + std::size_t((oy * g.in_h + ox) * g.s) * st.pixel;
          for (int c = 0; c < g.in_c; ++c) {
            Scalar* chan = origin + c * st.channel;
            for (int ky = 0; ky < g.k; ++ky) {
              Scalar* dst = chan + std::size_t(ky * g.in_h) * st.pixel;
              for (int kx = 0; kx < g.k; ++kx) dst[kx * st.pixel] += *col++;
            }
          }
        }
  }

  // C x (N*P) -> (C*P) x N
  void flatten(const Matrix<Scalar>& act, int n, Matrix<Scalar>& flat) const {
    const int c = int(act.rows());
    const int p = flat_size_ / c;
    flat.resize(flat_size_, n);
    for (int s = 0; s < n; ++s)
      for (int q = 0; q < p; ++q)
        for (int ch = 0; ch < c; ++ch) flat(ch * p + q, s) = act(ch, Eigen::Index(s) * p + q);
  }

  void unflatten(const Matrix<Scalar>& flat, int n, Matrix<Scalar>& act) const {
    const int c = conv_.back().out_c;
    const int p = flat_size_ / c;
    act.resize(c, Eigen::Index(n) * p);
    for (int s = 0; s < n; ++s)
      for (int q = 0; q < p; ++q)
        for (int ch = 0; ch < c; ++ch) act(ch, Eigen::Index(s) * p + q) = flat(ch * p + q, s);
  }

  NetworkSpec spec_;
  std::vector<ParamBlock> blocks_;
  std::vector<ConvGeom> conv_;
  int flat_size_ = 0;
  std::size_t dense_w_ = 0, dense_b_ = 0, value_w_ = 0, value_b_ = 0, adv_w_ = 0, adv_b_ = 0;
  ParamVector<Scalar> params_;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
class Adam {
 public:
  explicit Adam(std::size_t n, AdamConfig cfg = {}) : cfg_(cfg), m_(n, Scalar(0)), v_(n, Scalar(0)) {}

  std::int64_t steps() const { return t_; }

  void step(std::span<Scalar> params, std::span<const Scalar> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("Adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const auto b1 = Scalar(cfg_.beta1), b2 = Scalar(cfg_.beta2);
    const auto step_size = Scalar(cfg_.learning_rate / c1);
    const auto inv_c2 = Scalar(1.0 / c2);
    const auto eps = Scalar(cfg_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * grad[i];
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * grad[i] * grad[i];
      params[i] -= step_size * m_[i] / (std::sqrt(v_[i] * inv_c2) + eps);
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Scalar> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace mzi::nn
