#include "layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kernels.hpp"

namespace fxq::nn {

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double limit, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
void store(Tensor<T>& dst, const std::vector<double>& acc) {
  for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<T>(acc[i]);
}

// ---------------------------------------------------------------------------

template <typename T>
class FullyConnected final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FullyConnected>(*this); }

  Shape configure(const Shape& input) override {
    if (this->spec_.units == 0) this->shape_error("fully connected layer needs units > 0");
    if (input.size() < 2) this->shape_error("expected rank >= 2 input, got " + shape_string(input));
    in_ = input.back();
    return output_shape(input);
  }

  Shape output_shape(const Shape& input) const override {
    if (input.size() < 2 || input.back() != in_) {
      this->shape_error("expected [..., " + std::to_string(in_) + "] input, got " + shape_string(input));
    }
    Shape out = input;
    out.back() = this->spec_.units;
    return out;
  }

  void init(ParamSet<T>& params, ParamSet<T>&, std::mt19937_64& rng) const override {
    const std::size_t out = this->spec_.units;
    const double limit = std::sqrt(6.0 / static_cast<double>(in_ + out));
    params.add(this->param("weight"), uniform_tensor<T>({out, in_}, limit, rng), true);
    params.add(this->param("bias"), Tensor<T>({out}));
  }

  Tensor<T> forward(const ParamSet<T>& params, const ParamSet<T>&, ParamSet<T>*, const Tensor<T>& x, Mode,
                    LayerCache<T>& cache) const override {
    Tensor<T> y(output_shape(x.shape()));
    const auto& w = params.at(this->param("weight"));
    const auto& b = params.at(this->param("bias"));
    const std::size_t rows = x.size() / in_;
    kernels::matmul_nt(x.data(), w.data(), y.data(), rows, this->spec_.units, in_, b.data());
    cache.saved = {x};
    return y;
  }

  Tensor<T> backward(const ParamSet<T>& params, const LayerCache<T>& cache, const Tensor<T>& dy,
                     ParamSet<T>& grads) const override {
    const auto& x = cache.saved.at(0);
    const auto& w = params.at(this->param("weight"));
    const std::size_t out = this->spec_.units;
    const std::size_t rows = x.size() / in_;

    std::vector<double> dw(out * in_, 0.0);
    kernels::matmul_tn_acc(dy.data(), x.data(), dw.data(), out, in_, rows);
    store(grads.at(this->param("weight")), dw);

    std::vector<double> db(out, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < out; ++o) db[o] += dy[r * out + o];
    }
    store(grads.at(this->param("bias")), db);

    Tensor<T> dx(x.shape());
    kernels::matmul_nn(dy.data(), w.data(), dx.data(), rows, in_, out);
    return dx;
  }

 private:
  std::size_t in_ = 0;
};

// ---------------------------------------------------------------------------

template <typename T>
class Conv2D final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2D>(*this); }

  Shape configure(const Shape& input) override {
    const auto& s = this->spec_;
    if (s.units == 0 || s.kernel == 0 || s.stride == 0) {
      this->shape_error("conv2d needs out_channels, kernel and stride > 0");
    }
    if (input.size() != 4) this->shape_error("expected [N, C, H, W] input, got " + shape_string(input));
    channels_ = input[1];
    return output_shape(input);
  }

  Shape output_shape(const Shape& input) const override {
    const auto& s = this->spec_;
    if (input.size() != 4 || input[1] != channels_) {
      this->shape_error("expected [N, " + std::to_string(channels_) + ", H, W] input, got " +
                        shape_string(input));
    }
    if (input[2] + 2 * s.padding < s.kernel || input[3] + 2 * s.padding < s.kernel) {
      this->shape_error("kernel larger than padded input " + shape_string(input));
    }
    return {input[0], s.units, (input[2] + 2 * s.padding - s.kernel) / s.stride + 1,
            (input[3] + 2 * s.padding - s.kernel) / s.stride + 1};
  }

  void init(ParamSet<T>& params, ParamSet<T>&, std::mt19937_64& rng) const override {
    const auto& s = this->spec_;
    const std::size_t area = s.kernel * s.kernel;
    const double limit = std::sqrt(6.0 / static_cast<double>((channels_ + s.units) * area));
    params.add(this->param("weight"), uniform_tensor<T>({s.units, channels_, s.kernel, s.kernel}, limit, rng),
               true);
    params.add(this->param("bias"), Tensor<T>({s.units}));
  }

  Tensor<T> forward(const ParamSet<T>& params, const ParamSet<T>&, ParamSet<T>*, const Tensor<T>& x, Mode,
                    LayerCache<T>& cache) const override {
    const Shape out_shape = output_shape(x.shape());
    Tensor<T> y(out_shape);
    const auto& w = params.at(this->param("weight"));
    const auto& b = params.at(this->param("bias"));
    const Geometry g = geometry(x.shape(), out_shape);
    std::vector<T> cols(g.patch * g.positions);
    for (std::size_t n = 0; n < g.batch; ++n) {
      im2col(x.data() + n * g.in_stride, g, cols.data());
      T* yn = y.data() + n * g.out_stride;
      kernels::matmul_nn(w.data(), cols.data(), yn, this->spec_.units, g.positions, g.patch);
      for (std::size_t o = 0; o < this->spec_.units; ++o) {
        for (std::size_t p = 0; p < g.positions; ++p) {
          yn[o * g.positions + p] = static_cast<T>(static_cast<double>(yn[o * g.positions + p]) + b[o]);
        }
      }
    }
    cache.saved = {x};
    return y;
  }

  Tensor<T> backward(const ParamSet<T>& params, const LayerCache<T>& cache, const Tensor<T>& dy,
                     ParamSet<T>& grads) const override {
    const auto& x = cache.saved.at(0);
    const auto& w = params.at(this->param("weight"));
    const std::size_t out = this->spec_.units;
    const Geometry g = geometry(x.shape(), dy.shape());

    std::vector<T> cols(g.patch * g.positions);
    std::vector<double> dw(out * g.patch, 0.0);
    std::vector<double> db(out, 0.0);
    std::vector<double> dcols(g.patch * g.positions);
    Tensor<T> dx(x.shape());
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* dyn = dy.data() + n * g.out_stride;
      im2col(x.data() + n * g.in_stride, g, cols.data());
      kernels::matmul_nt_acc(dyn, cols.data(), dw.data(), out, g.patch, g.positions);
      for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t p = 0; p < g.positions; ++p) db[o] += dyn[o * g.positions + p];
      }
      std::fill(dcols.begin(), dcols.end(), 0.0);
      kernels::matmul_tn_acc(w.data(), dyn, dcols.data(), g.patch, g.positions, out);
      col2im(dcols.data(), g, dx.data() + n * g.in_stride);
    }
    store(grads.at(this->param("weight")), dw);
    store(grads.at(this->param("bias")), db);
    return dx;
  }

 private:
  struct Geometry {
    std::size_t batch, height, width, out_h, out_w, patch, positions, in_stride, out_stride;
  };

  Geometry geometry(const Shape& in, const Shape& out) const {
    const std::size_t k = this->spec_.kernel;
    return {in[0], in[2], in[3], out[2], out[3], channels_ * k * k, out[2] * out[3],
            channels_ * in[2] * in[3], out[1] * out[2] * out[3]};
  }

  // cols[(c*k + ki)*k + kj][oh*out_w + ow] = x[c][oh*s + ki - p][ow*s + kj - p] (zero outside)
  void im2col(const T* x, const Geometry& g, T* cols) const {
    const auto& s = this->spec_;
    const long pad = static_cast<long>(s.padding);
    for (std::size_t c = 0; c < channels_; ++c) {
      for (std::size_t ki = 0; ki < s.kernel; ++ki) {
        for (std::size_t kj = 0; kj < s.kernel; ++kj) {
          T* row = cols + ((c * s.kernel + ki) * s.kernel + kj) * g.positions;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const long ih = static_cast<long>(oh * s.stride + ki) - pad;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const long iw = static_cast<long>(ow * s.stride + kj) - pad;
              const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<long>(g.height) &&
                                  iw < static_cast<long>(g.width);
              row[oh * g.out_w + ow] = inside ? x[(c * g.height + ih) * g.width + iw] : T{0};
            }
          }
        }
      }
    }
  }

  void col2im(const double* dcols, const Geometry& g, T* dx) const {
    const auto& s = this->spec_;
    const long pad = static_cast<long>(s.padding);
    std::vector<double> acc(channels_ * g.height * g.width, 0.0);
    for (std::size_t c = 0; c < channels_; ++c) {
      for (std::size_t ki = 0; ki < s.kernel; ++ki) {
        for (std::size_t kj = 0; kj < s.kernel; ++kj) {
          const double* row = dcols + ((c * s.kernel + ki) * s.kernel + kj) * g.positions;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const long ih = static_cast<long>(oh * s.stride + ki) - pad;
            if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const long iw = static_cast<long>(ow * s.stride + kj) - pad;
              if (iw < 0 || iw >= static_cast<long>(g.width)) continue;
              acc[(c * g.height + ih) * g.width + iw] += row[oh * g.out_w + ow];
            }
          }
        }
      }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) dx[i] = static_cast<T>(acc[i]);
  }

  std::size_t channels_ = 0;
};

// ---------------------------------------------------------------------------

template <typename T>
class MaxPool2D final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2D>(*this); }

  Shape configure(const Shape& input) override {
    if (this->spec_.kernel == 0) this->shape_error("max pool needs kernel > 0");
    if (this->spec_.stride == 0) this->spec_.stride = this->spec_.kernel;
    return output_shape(input);
  }

  Shape output_shape(const Shape& input) const override {
    const auto& s = this->spec_;
    if (input.size() != 4) this->shape_error("expected [N, C, H, W] input, got " + shape_string(input));
    if (input[2] < s.kernel || input[3] < s.kernel) {
      this->shape_error("pool window larger than input " + shape_string(input));
    }
    return {input[0], input[1], (input[2] - s.kernel) / s.stride + 1, (input[3] - s.kernel) / s.stride + 1};
  }

  Tensor<T> forward(const ParamSet<T>&, const ParamSet<T>&, ParamSet<T>*, const Tensor<T>& x, Mode,
                    LayerCache<T>& cache) const override {
    const auto& s = this->spec_;
    const Shape out_shape = output_shape(x.shape());
    Tensor<T> y(out_shape);
    const std::size_t h = x.dim(2), w = x.dim(3), oh_n = out_shape[2], ow_n = out_shape[3];
    cache.indices.assign(y.size(), 0);
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < x.dim(0) * x.dim(1); ++plane) {
      const std::size_t base = plane * h * w;
      for (std::size_t oh = 0; oh < oh_n; ++oh) {
        for (std::size_t ow = 0; ow < ow_n; ++ow, ++o) {
          std::size_t best = base + (oh * s.stride) * w + ow * s.stride;
          for (std::size_t ki = 0; ki < s.kernel; ++ki) {
            for (std::size_t kj = 0; kj < s.kernel; ++kj) {
              const std::size_t idx = base + (oh * s.stride + ki) * w + ow * s.stride + kj;
              if (x[idx] > x[best]) best = idx;
            }
          }
          y[o] = x[best];
          cache.indices[o] = best;
        }
      }
    }
    cache.input_shape = x.shape();
    return y;
  }

  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>& cache, const Tensor<T>& dy,
                     ParamSet<T>&) const override {
    std::vector<double> acc(shape_size(cache.input_shape), 0.0);
    for (std::size_t o = 0; o < dy.size(); ++o) acc[cache.indices[o]] += dy[o];
    Tensor<T> dx(cache.input_shape);
    store(dx, acc);
    return dx;
  }
};

// ---------------------------------------------------------------------------

template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }

  Shape configure(const Shape& input) override {
    if (input.size() < 2 || input.size() > 4) {
      this->shape_error("batch norm expects rank 2, 3 or 4 input, got " + shape_string(input));
    }
    features_ = input.size() == 4 ? input[1] : input.back();
    rank_ = input.size();
    return output_shape(input);
  }

  Shape output_shape(const Shape& input) const override {
    const std::size_t f = input.size() == 4 ? input[1] : (input.empty() ? 0 : input.back());
    if (input.size() != rank_ || f != features_) {
      this->shape_error("expected rank " + std::to_string(rank_) + " input with " + std::to_string(features_) +
                        " features, got " + shape_string(input));
    }
    return input;
  }

  void init(ParamSet<T>& params, ParamSet<T>& buffers, std::mt19937_64&) const override {
    params.add(this->param("gain"), Tensor<T>({features_}, T{1}));
    params.add(this->param("shift"), Tensor<T>({features_}));
    buffers.add(this->param("running_mean"), Tensor<T>({features_}));
    buffers.add(this->param("running_var"), Tensor<T>({features_}, T{1}));
  }

  Tensor<T> forward(const ParamSet<T>& params, const ParamSet<T>& buffers, ParamSet<T>* updates,
                    const Tensor<T>& x, Mode mode, LayerCache<T>& cache) const override {
    output_shape(x.shape());
    const auto& gain = params.at(this->param("gain"));
    const auto& shift = params.at(this->param("shift"));
    const Layout l = layout(x.shape());
    Tensor<T> y(x.shape());

    if (mode == Mode::Eval) {
      const auto& rm = buffers.at(this->param("running_mean"));
      const auto& rv = buffers.at(this->param("running_var"));
      for_each(l, [&](std::size_t i, std::size_t f) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(rv[f]) + this->spec_.bn_epsilon);
        y[i] = static_cast<T>(gain[f] * ((x[i] - static_cast<double>(rm[f])) * inv) + shift[f]);
      });
      cache.saved.clear();
      return y;
    }

    const double count = static_cast<double>(x.size() / features_);
    std::vector<double> mean(features_, 0.0), var(features_, 0.0);
    for_each(l, [&](std::size_t i, std::size_t f) { mean[f] += x[i]; });
    for (auto& m : mean) m /= count;
    for_each(l, [&](std::size_t i, std::size_t f) {
      const double d = x[i] - mean[f];
      var[f] += d * d;
    });
    Tensor<T> inv_std({features_});
    for (std::size_t f = 0; f < features_; ++f) {
      var[f] /= count;
      inv_std[f] = static_cast<T>(1.0 / std::sqrt(var[f] + this->spec_.bn_epsilon));
    }
    Tensor<T> xhat(x.shape());
    for_each(l, [&](std::size_t i, std::size_t f) {
      const double h = (x[i] - mean[f]) / std::sqrt(var[f] + this->spec_.bn_epsilon);
      xhat[i] = static_cast<T>(h);
      y[i] = static_cast<T>(gain[f] * h + shift[f]);
    });
    if (updates) {
      auto& rm = updates->at(this->param("running_mean"));
      auto& rv = updates->at(this->param("running_var"));
      const double m = this->spec_.bn_momentum;
      for (std::size_t f = 0; f < features_; ++f) {
        rm[f] = static_cast<T>(m * rm[f] + (1.0 - m) * mean[f]);
        rv[f] = static_cast<T>(m * rv[f] + (1.0 - m) * var[f]);
      }
    }
    cache.saved = {std::move(xhat), std::move(inv_std)};
    return y;
  }

  Tensor<T> backward(const ParamSet<T>& params, const LayerCache<T>& cache, const Tensor<T>& dy,
                     ParamSet<T>& grads) const override {
    const auto& xhat = cache.saved.at(0);
    const auto& inv_std = cache.saved.at(1);
    const auto& gain = params.at(this->param("gain"));
    const Layout l = layout(xhat.shape());
    const double count = static_cast<double>(xhat.size() / features_);

    std::vector<double> sum_dy(features_, 0.0), sum_dy_xhat(features_, 0.0);
    for_each(l, [&](std::size_t i, std::size_t f) {
      sum_dy[f] += dy[i];
      sum_dy_xhat[f] += static_cast<double>(dy[i]) * xhat[i];
    });
    store(grads.at(this->param("gain")), sum_dy_xhat);
    store(grads.at(this->param("shift")), sum_dy);

    Tensor<T> dx(xhat.shape());
    for_each(l, [&](std::size_t i, std::size_t f) {
      const double scale = static_cast<double>(gain[f]) * inv_std[f] / count;
      dx[i] = static_cast<T>(scale * (count * dy[i] - sum_dy[f] - xhat[i] * sum_dy_xhat[f]));
    });
    return dx;
  }

 private:
  struct Layout {
    std::size_t outer, inner;  // element i belongs to feature (i / inner) % features
  };

  Layout layout(const Shape& s) const {
    if (s.size() == 4) return {s[0], s[2] * s[3]};
    return {shape_size(s) / features_, 1};
  }

  template <typename F>
  void for_each(const Layout& l, F&& fn) const {
    std::size_t i = 0;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t f = 0; f < features_; ++f) {
        for (std::size_t k = 0; k < l.inner; ++k, ++i) fn(i, f);
      }
    }
  }

  std::size_t features_ = 0;
  std::size_t rank_ = 0;
};

// ---------------------------------------------------------------------------

template <typename T>
class Lstm final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Lstm>(*this); }

  Shape configure(const Shape& input) override {
    if (this->spec_.units == 0) this->shape_error("lstm needs cells > 0");
    if (input.size() != 3) this->shape_error("expected [T, B, F] input, got " + shape_string(input));
    in_ = input[2];
    return output_shape(input);
  }

  Shape output_shape(const Shape& input) const override {
    if (input.size() != 3 || input[2] != in_) {
      this->shape_error("expected [T, B, " + std::to_string(in_) + "] input, got " + shape_string(input));
    }
    return {input[0], input[1], this->spec_.units};
  }

  // Weight rows are the gate blocks [input, forget, cell, output]; columns are
  // [x_t, h_{t-1}], so one matrix holds both input and recurrent weights.
  void init(ParamSet<T>& params, ParamSet<T>&, std::mt19937_64& rng) const override {
    const std::size_t h = this->spec_.units;
    const double limit = std::sqrt(6.0 / static_cast<double>(in_ + h + 4 * h));
    params.add(this->param("weight"), uniform_tensor<T>({4 * h, in_ + h}, limit, rng), true);
    params.add(this->param("bias"), Tensor<T>({4 * h}));
  }

  Tensor<T> forward(const ParamSet<T>& params, const ParamSet<T>&, ParamSet<T>*, const Tensor<T>& x, Mode,
                    LayerCache<T>& cache) const override {
    const Shape out_shape = output_shape(x.shape());
    const std::size_t steps = x.dim(0), batch = x.dim(1), h = this->spec_.units, width = in_ + h;
    const auto& w = params.at(this->param("weight"));
    const auto& b = params.at(this->param("bias"));

    Tensor<T> z({steps, batch, width});
    Tensor<T> gates({steps, batch, 4 * h});
    Tensor<T> cell({steps, batch, h});
    Tensor<T> tanh_cell({steps, batch, h});
    Tensor<T> y(out_shape);
    std::vector<T> pre(batch * 4 * h);

    for (std::size_t t = 0; t < steps; ++t) {
      T* zt = z.data() + t * batch * width;
      for (std::size_t r = 0; r < batch; ++r) {
        std::copy_n(x.data() + (t * batch + r) * in_, in_, zt + r * width);
        if (t == 0) {
          std::fill_n(zt + r * width + in_, h, T{0});
        } else {
          std::copy_n(y.data() + ((t - 1) * batch + r) * h, h, zt + r * width + in_);
        }
      }
      kernels::matmul_nt(zt, w.data(), pre.data(), batch, 4 * h, width, b.data());
      for (std::size_t r = 0; r < batch; ++r) {
        const T* p = pre.data() + r * 4 * h;
        T* g = gates.data() + (t * batch + r) * 4 * h;
        const std::size_t at = (t * batch + r) * h;
        for (std::size_t j = 0; j < h; ++j) {
          const double in_gate = kernels::sigmoid(p[j]);
          const double forget = kernels::sigmoid(p[h + j]);
          const double cand = std::tanh(static_cast<double>(p[2 * h + j]));
          const double out_gate = kernels::sigmoid(p[3 * h + j]);
          const double prev = t == 0 ? 0.0 : static_cast<double>(cell[at - batch * h + j]);
          const double c = forget * prev + in_gate * cand;
          const double tc = std::tanh(c);
          g[j] = static_cast<T>(in_gate);
          g[h + j] = static_cast<T>(forget);
          g[2 * h + j] = static_cast<T>(cand);
          g[3 * h + j] = static_cast<T>(out_gate);
          cell[at + j] = static_cast<T>(c);
          tanh_cell[at + j] = static_cast<T>(tc);
          y[at + j] = static_cast<T>(out_gate * tc);
        }
      }
    }
    cache.saved = {std::move(z), std::move(gates), std::move(cell), std::move(tanh_cell)};
    return y;
  }

  Tensor<T> backward(const ParamSet<T>& params, const LayerCache<T>& cache, const Tensor<T>& dy,
                     ParamSet<T>& grads) const override {
    const auto& z = cache.saved.at(0);
    const auto& gates = cache.saved.at(1);
    const auto& cell = cache.saved.at(2);
    const auto& tanh_cell = cache.saved.at(3);
    const auto& w = params.at(this->param("weight"));
    const std::size_t steps = z.dim(0), batch = z.dim(1), h = this->spec_.units, width = in_ + h;
    const std::size_t trunc = this->spec_.bptt_truncation;

    std::vector<double> dw(4 * h * width, 0.0), db(4 * h, 0.0);
    std::vector<double> dh_next(batch * h, 0.0), dc_next(batch * h, 0.0);
    std::vector<T> dpre(batch * 4 * h);
    std::vector<T> dz(batch * width);
    Tensor<T> dx({steps, batch, in_});

    for (std::size_t t = steps; t-- > 0;) {
      for (std::size_t r = 0; r < batch; ++r) {
        const T* g = gates.data() + (t * batch + r) * 4 * h;
        const std::size_t at = (t * batch + r) * h;
        T* dp = dpre.data() + r * 4 * h;
        for (std::size_t j = 0; j < h; ++j) {
          const double in_gate = g[j], forget = g[h + j], cand = g[2 * h + j], out_gate = g[3 * h + j];
          const double tc = tanh_cell[at + j];
          const double prev = t == 0 ? 0.0 : static_cast<double>(cell[at - batch * h + j]);
          const double dh = static_cast<double>(dy[at + j]) + dh_next[r * h + j];
          const double dc = dh * out_gate * (1.0 - tc * tc) + dc_next[r * h + j];
          dc_next[r * h + j] = dc * forget;
          dp[j] = static_cast<T>(dc * cand * in_gate * (1.0 - in_gate));
          dp[h + j] = static_cast<T>(dc * prev * forget * (1.0 - forget));
          dp[2 * h + j] = static_cast<T>(dc * in_gate * (1.0 - cand * cand));
          dp[3 * h + j] = static_cast<T>(dh * tc * out_gate * (1.0 - out_gate));
        }
        for (std::size_t j = 0; j < 4 * h; ++j) db[j] += dp[j];
      }
      const T* zt = z.data() + t * batch * width;
      kernels::matmul_tn_acc(dpre.data(), zt, dw.data(), 4 * h, width, batch);
      kernels::matmul_nn(dpre.data(), w.data(), dz.data(), batch, width, 4 * h);
      const bool cut = trunc > 0 && t % trunc == 0;
      for (std::size_t r = 0; r < batch; ++r) {
        std::copy_n(dz.data() + r * width, in_, dx.data() + (t * batch + r) * in_);
        for (std::size_t j = 0; j < h; ++j) {
          dh_next[r * h + j] = cut ? 0.0 : static_cast<double>(dz[r * width + in_ + j]);
          if (cut) dc_next[r * h + j] = 0.0;
        }
      }
    }
    store(grads.at(this->param("weight")), dw);
    store(grads.at(this->param("bias")), db);
    return dx;
  }

 private:
  std::size_t in_ = 0;
};

// ---------------------------------------------------------------------------

template <typename T>
class ActivationLayer final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ActivationLayer>(*this); }

  Shape configure(const Shape& input) override { return input; }
  Shape output_shape(const Shape& input) const override { return input; }

  Tensor<T> forward(const ParamSet<T>&, const ParamSet<T>&, ParamSet<T>*, const Tensor<T>& x, Mode,
                    LayerCache<T>& cache) const override {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      double out = v;
      switch (this->spec_.activation) {
        case ActivationFn::Linear: break;
        case ActivationFn::Sigmoid: out = kernels::sigmoid(v); break;
        case ActivationFn::Tanh: out = std::tanh(v); break;
        case ActivationFn::Relu: out = v > 0.0 ? v : 0.0; break;
      }
      y[i] = static_cast<T>(out);
    }
    cache.saved = {y};
    return y;
  }

  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>& cache, const Tensor<T>& dy,
                     ParamSet<T>&) const override {
    const auto& y = cache.saved.at(0);
    Tensor<T> dx(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double out = y[i];
      double d = 1.0;
      switch (this->spec_.activation) {
        case ActivationFn::Linear: break;
        case ActivationFn::Sigmoid: d = out * (1.0 - out); break;
        case ActivationFn::Tanh: d = 1.0 - out * out; break;
        case ActivationFn::Relu: d = out > 0.0 ? 1.0 : 0.0; break;
      }
      dx[i] = static_cast<T>(d * dy[i]);
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------

template <typename T>
class SoftmaxLayer final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<SoftmaxLayer>(*this); }

  Shape configure(const Shape& input) override {
    if (input.empty()) this->shape_error("softmax needs rank >= 1 input");
    classes_ = input.back();
    return input;
  }

  Shape output_shape(const Shape& input) const override {
    if (input.empty() || input.back() != classes_) {
      this->shape_error("expected [..., " + std::to_string(classes_) + "] input, got " + shape_string(input));
    }
    return input;
  }

  Tensor<T> forward(const ParamSet<T>&, const ParamSet<T>&, ParamSet<T>*, const Tensor<T>& x, Mode,
                    LayerCache<T>& cache) const override {
    output_shape(x.shape());
    Tensor<T> y(x.shape());
    std::vector<double> e(classes_);
    for (std::size_t r = 0; r < x.size() / classes_; ++r) {
      const T* row = x.data() + r * classes_;
      const double top = *std::max_element(row, row + classes_);
      double sum = 0.0;
      for (std::size_t c = 0; c < classes_; ++c) sum += (e[c] = std::exp(row[c] - top));
      for (std::size_t c = 0; c < classes_; ++c) y[r * classes_ + c] = static_cast<T>(e[c] / sum);
    }
    cache.saved = {y};
    return y;
  }

  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>& cache, const Tensor<T>& dy,
                     ParamSet<T>&) const override {
    const auto& y = cache.saved.at(0);
    Tensor<T> dx(y.shape());
    for (std::size_t r = 0; r < y.size() / classes_; ++r) {
      const std::size_t base = r * classes_;
      double inner = 0.0;
      for (std::size_t c = 0; c < classes_; ++c) inner += static_cast<double>(dy[base + c]) * y[base + c];
      for (std::size_t c = 0; c < classes_; ++c) {
        dx[base + c] = static_cast<T>(y[base + c] * (dy[base + c] - inner));
      }
    }
    return dx;
  }

 private:
  std::size_t classes_ = 0;
};

// ---------------------------------------------------------------------------

template <typename T>
class FlattenLayer final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FlattenLayer>(*this); }

  Shape configure(const Shape& input) override {
    if (input.size() < 2) this->shape_error("flatten needs rank >= 2 input");
    features_ = shape_size(input) / input[0];
    return output_shape(input);
  }

  Shape output_shape(const Shape& input) const override {
    if (input.size() < 2 || shape_size(input) / input[0] != features_) {
      this->shape_error("expected " + std::to_string(features_) + " features per sample, got " +
                        shape_string(input));
    }
    return {input[0], features_};
  }

  Tensor<T> forward(const ParamSet<T>&, const ParamSet<T>&, ParamSet<T>*, const Tensor<T>& x, Mode,
                    LayerCache<T>& cache) const override {
    Tensor<T> y = x;
    y.reshape(output_shape(x.shape()));
    cache.input_shape = x.shape();
    return y;
  }

  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>& cache, const Tensor<T>& dy,
                     ParamSet<T>&) const override {
    Tensor<T> dx = dy;
    dx.reshape(cache.input_shape);
    return dx;
  }

 private:
  std::size_t features_ = 0;
};

}  // namespace

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::FullyConnected: return std::make_unique<FullyConnected<T>>(spec);
    case LayerKind::Conv2D: return std::make_unique<Conv2D<T>>(spec);
    case LayerKind::MaxPool2D: return std::make_unique<MaxPool2D<T>>(spec);
    case LayerKind::BatchNorm: return std::make_unique<BatchNorm<T>>(spec);
    case LayerKind::LSTM: return std::make_unique<Lstm<T>>(spec);
    case LayerKind::Activation: return std::make_unique<ActivationLayer<T>>(spec);
    case LayerKind::Softmax: return std::make_unique<SoftmaxLayer<T>>(spec);
    case LayerKind::Flatten: return std::make_unique<FlattenLayer<T>>(spec);
  }
  throw InvalidArgument("unknown layer kind");
}

template std::unique_ptr<Layer<float>> make_layer<float>(const LayerSpec&);
template std::unique_ptr<Layer<double>> make_layer<double>(const LayerSpec&);

}  // namespace fxq::nn
