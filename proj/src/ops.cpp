#include "secnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "secnn/errors.hpp"
#include "secnn/kernels.hpp"

namespace secnn::ops {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    fail(ErrorCode::InvalidShape, std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                                      shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    fail(ErrorCode::InvalidShape, std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;

  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return out_h * out_w; }
  bool direct() const { return kernel == 1 && stride == 1 && padding == 0; }
};

void im2col(const float* x, const ConvGeometry& geo, float* col) {
  const std::size_t k = geo.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(geo.padding);
  for (std::size_t c = 0; c < geo.channels; ++c) {
    const float* plane = x + c * geo.height * geo.width;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        float* row = col + ((c * k + kh) * k + kw) * geo.cols();
        for (std::size_t oh = 0; oh < geo.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * geo.stride + kh) - pad;
          float* dst = row + oh * geo.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(geo.height)) {
            std::fill(dst, dst + geo.out_w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(ih) * geo.width;
          for (std::size_t ow = 0; ow < geo.out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * geo.stride + kw) - pad;
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(geo.width)) ? 0.0f : src[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvGeometry& geo, float* dx) {
  const std::size_t k = geo.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(geo.padding);
  for (std::size_t c = 0; c < geo.channels; ++c) {
    float* plane = dx + c * geo.height * geo.width;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        const float* row = col + ((c * k + kh) * k + kw) * geo.cols();
        for (std::size_t oh = 0; oh < geo.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * geo.stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(geo.height)) continue;
          float* dst = plane + static_cast<std::size_t>(ih) * geo.width;
          const float* src = row + oh * geo.out_w;
          for (std::size_t ow = 0; ow < geo.out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * geo.stride + kw) - pad;
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(geo.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Graph& g, Var input, Var weight, Var bias, std::size_t stride, std::size_t padding) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weight);
  const Tensor& b = g.value(bias);
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (w.dim(1) != x.dim(1))
    fail(ErrorCode::InvalidShape, "conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                                      shape_str(w.shape()));
  if (w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
    fail(ErrorCode::InvalidShape, "conv2d needs a square odd kernel, got " + shape_str(w.shape()));
  if (b.shape() != Shape{w.dim(0)}) fail(ErrorCode::InvalidShape, "conv2d bias shape " + shape_str(b.shape()));
  if (stride == 0) fail(ErrorCode::InvalidArgument, "conv2d stride must be positive");
  const std::size_t k = w.dim(2);
  if (x.dim(2) + 2 * padding < k || x.dim(3) + 2 * padding < k)
    fail(ErrorCode::InvalidShape, "conv2d kernel larger than padded input " + shape_str(x.shape()));

  ConvGeometry geo{x.dim(1), x.dim(2), x.dim(3), k, stride, padding, 0, 0};
  geo.out_h = (geo.height + 2 * padding - k) / stride + 1;
  geo.out_w = (geo.width + 2 * padding - k) / stride + 1;
  const std::size_t batch = x.dim(0), cout = w.dim(0), rows = geo.rows(), cols = geo.cols();

  const auto& kern = kernels::active();
  Tensor out(Shape{batch, cout, geo.out_h, geo.out_w});
  std::vector<float> col(geo.direct() ? 0 : rows * cols);
  for (std::size_t n = 0; n < batch; ++n) {
    const float* xn = x.ptr() + n * geo.channels * geo.height * geo.width;
    const float* src = xn;
    if (!geo.direct()) {
      im2col(xn, geo, col.data());
      src = col.data();
    }
    float* on = out.ptr() + n * cout * cols;
    kern.gemm(false, false, cout, cols, rows, w.ptr(), rows, src, cols, 0.0f, on, cols);
    for (std::size_t c = 0; c < cout; ++c) {
      float* row = on + c * cols;
      const float bc = b[c];
      for (std::size_t j = 0; j < cols; ++j) row[j] += bc;
    }
  }

  return g.record(std::move(out), {input, weight, bias}, [=](Graph& gr, const Tensor& dout) {
    const Tensor& xv = gr.value(input);
    const Tensor& wv = gr.value(weight);
    const auto& kk = kernels::active();
    const bool need_x = gr.requires_grad(input);
    const bool need_w = gr.requires_grad(weight);
    const bool need_b = gr.requires_grad(bias);
    Tensor* dx = need_x ? &gr.grad_accumulator(input) : nullptr;
    Tensor* dw = need_w ? &gr.grad_accumulator(weight) : nullptr;
    Tensor* db = need_b ? &gr.grad_accumulator(bias) : nullptr;
    std::vector<float> colbuf(geo.direct() ? 0 : rows * cols);
    std::vector<float> dcol(need_x && !geo.direct() ? rows * cols : 0);
    for (std::size_t n = 0; n < batch; ++n) {
      const float* dn = dout.ptr() + n * cout * cols;
      const float* xn = xv.ptr() + n * geo.channels * geo.height * geo.width;
      if (need_w) {
        const float* src = xn;
        if (!geo.direct()) {
          im2col(xn, geo, colbuf.data());
          src = colbuf.data();
        }
        kk.gemm(false, true, cout, rows, cols, dn, cols, src, cols, 1.0f, dw->ptr(), rows);
      }
      if (need_b) {
        for (std::size_t c = 0; c < cout; ++c) {
          const float* row = dn + c * cols;
          float s = 0.0f;
          for (std::size_t j = 0; j < cols; ++j) s += row[j];
          (*db)[c] += s;
        }
      }
      if (need_x) {
        float* dxn = dx->ptr() + n * geo.channels * geo.height * geo.width;
        if (geo.direct()) {
          kk.gemm(true, false, rows, cols, cout, wv.ptr(), rows, dn, cols, 1.0f, dxn, cols);
        } else {
          kk.gemm(true, false, rows, cols, cout, wv.ptr(), rows, dn, cols, 0.0f, dcol.data(), cols);
          col2im_add(dcol.data(), geo, dxn);
        }
      }
    }
  });
}

Var batchnorm2d(Graph& g, Var input, Var gamma, Var beta, BatchNormStats& stats, Mode mode, float momentum,
                float eps) {
  const Tensor& x = g.value(input);
  require_rank(x, 4, "batchnorm2d input");
  const std::size_t batch = x.dim(0), channels = x.dim(1), spatial = x.dim(2) * x.dim(3);
  const Shape channel_shape{channels};
  if (g.value(gamma).shape() != channel_shape || g.value(beta).shape() != channel_shape ||
      stats.running_mean.shape() != channel_shape || stats.running_var.shape() != channel_shape)
    fail(ErrorCode::InvalidShape, "batchnorm2d parameter shapes do not match " + shape_str(x.shape()));
  const std::size_t count = batch * spatial;
  if (mode == Mode::Train && count < 2)
    fail(ErrorCode::InvalidShape, "batchnorm2d train mode needs at least 2 values per channel");

  const Tensor& gv = g.value(gamma);
  const Tensor& bv = g.value(beta);
  Tensor xhat(x.shape());
  Tensor out(x.shape());
  std::vector<float> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == Mode::Train) {
      double s = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const float* p = x.ptr() + (n * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s += p[i];
      }
      mean = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const float* p = x.ptr() + (n * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const double d = p[i] - mean;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(count);
      const double unbiased = ss / static_cast<double>(count - 1);
      stats.running_mean[c] = static_cast<float>((1.0 - momentum) * stats.running_mean[c] + momentum * mean);
      stats.running_var[c] = static_cast<float>((1.0 - momentum) * stats.running_var[c] + momentum * unbiased);
    } else {
      mean = stats.running_mean[c];
      var = stats.running_var[c];
    }
    const float m = static_cast<float>(mean);
    const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[c] = is;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const float h = (x[off + i] - m) * is;
        xhat[off + i] = h;
        out[off + i] = gv[c] * h + bv[c];
      }
    }
  }

  return g.record(std::move(out), {input, gamma, beta},
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, const Tensor& dout) {
                    const Tensor& gam = gr.value(gamma);
                    const bool need_x = gr.requires_grad(input);
                    Tensor* dx = need_x ? &gr.grad_accumulator(input) : nullptr;
                    Tensor* dg = gr.requires_grad(gamma) ? &gr.grad_accumulator(gamma) : nullptr;
                    Tensor* db = gr.requires_grad(beta) ? &gr.grad_accumulator(beta) : nullptr;
                    for (std::size_t c = 0; c < channels; ++c) {
                      double sum_dy = 0.0, sum_dy_xhat = 0.0;
                      for (std::size_t n = 0; n < batch; ++n) {
                        const std::size_t off = (n * channels + c) * spatial;
                        for (std::size_t i = 0; i < spatial; ++i) {
                          sum_dy += dout[off + i];
                          sum_dy_xhat += static_cast<double>(dout[off + i]) * xhat[off + i];
                        }
                      }
                      if (dg) (*dg)[c] += static_cast<float>(sum_dy_xhat);
                      if (db) (*db)[c] += static_cast<float>(sum_dy);
                      if (!need_x) continue;
                      const float scale = gam[c] * inv_std[c];
                      if (mode == Mode::Eval) {
                        for (std::size_t n = 0; n < batch; ++n) {
                          const std::size_t off = (n * channels + c) * spatial;
                          for (std::size_t i = 0; i < spatial; ++i) (*dx)[off + i] += scale * dout[off + i];
                        }
                      } else {
                        const float mean_dy = static_cast<float>(sum_dy / static_cast<double>(count));
                        const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / static_cast<double>(count));
                        for (std::size_t n = 0; n < batch; ++n) {
                          const std::size_t off = (n * channels + c) * spatial;
                          for (std::size_t i = 0; i < spatial; ++i)
                            (*dx)[off + i] += scale * (dout[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat);
                        }
                      }
                    }
                  });
}

Var leaky_relu(Graph& g, Var input, float slope) {
  const Tensor& x = g.value(input);
  Tensor out(x.shape());
  kernels::active().leaky_relu_forward(x.ptr(), out.ptr(), x.numel(), slope);
  return g.record(std::move(out), {input}, [=](Graph& gr, const Tensor& dout) {
    const Tensor& xv = gr.value(input);
    kernels::active().leaky_relu_backward(xv.ptr(), dout.ptr(), gr.grad_accumulator(input).ptr(), xv.numel(), slope);
  });
}

Var dropout(Graph& g, Var input, float rate, Mode mode, Rng& rng) {
  if (rate < 0.0f || rate >= 1.0f) fail(ErrorCode::InvalidArgument, "dropout rate must be in [0, 1)");
  if (mode == Mode::Eval || rate == 0.0f) return input;
  const Tensor& x = g.value(input);
  const float keep_scale = 1.0f / (1.0f - rate);
  Tensor mask(x.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    mask[i] = uniform01(rng) < rate ? 0.0f : keep_scale;
    out[i] = x[i] * mask[i];
  }
  return g.record(std::move(out), {input}, [=, mask = std::move(mask)](Graph& gr, const Tensor& dout) {
    Tensor& dx = gr.grad_accumulator(input);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dout[i] * mask[i];
  });
}

Var maxpool2d(Graph& g, Var input, std::size_t kernel, std::size_t stride) {
  const Tensor& x = g.value(input);
  require_rank(x, 4, "maxpool2d input");
  if (kernel == 0 || stride == 0) fail(ErrorCode::InvalidArgument, "maxpool2d kernel and stride must be positive");
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel > h || kernel > w)
    fail(ErrorCode::InvalidShape, "maxpool2d window " + std::to_string(kernel) + " larger than " + shape_str(x.shape()));
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor out(Shape{batch, channels, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t plane = 0; plane < batch * channels; ++plane) {
    const float* src = x.ptr() + plane * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (i * stride) * w + j * stride;
        for (std::size_t a = 0; a < kernel; ++a) {
          for (std::size_t b = 0; b < kernel; ++b) {
            const std::size_t idx = (i * stride + a) * w + j * stride + b;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + i) * ow + j;
        out[o] = src[best];
        argmax[o] = plane * h * w + best;
      }
    }
  }
  return g.record(std::move(out), {input}, [=, argmax = std::move(argmax)](Graph& gr, const Tensor& dout) {
    Tensor& dx = gr.grad_accumulator(input);
    for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dout[o];
  });
}

Var avgpool2d(Graph& g, Var input, std::size_t kernel) {
  const Tensor& x = g.value(input);
  require_rank(x, 4, "avgpool2d input");
  if (kernel == 0) fail(ErrorCode::InvalidArgument, "avgpool2d kernel must be positive");
  if (kernel == 1) return input;
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % kernel != 0 || w % kernel != 0)
    fail(ErrorCode::InvalidShape, "avgpool2d kernel " + std::to_string(kernel) + " does not tile " + shape_str(x.shape()));
  const std::size_t oh = h / kernel, ow = w / kernel;
  const float inv = 1.0f / static_cast<float>(kernel * kernel);
  Tensor out(Shape{batch, channels, oh, ow});
  for (std::size_t plane = 0; plane < batch * channels; ++plane) {
    const float* src = x.ptr() + plane * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        float s = 0.0f;
        for (std::size_t a = 0; a < kernel; ++a)
          for (std::size_t b = 0; b < kernel; ++b) s += src[(i * kernel + a) * w + j * kernel + b];
        out[(plane * oh + i) * ow + j] = s * inv;
      }
    }
  }
  return g.record(std::move(out), {input}, [=](Graph& gr, const Tensor& dout) {
    Tensor& dx = gr.grad_accumulator(input);
    for (std::size_t plane = 0; plane < batch * channels; ++plane) {
      float* dst = dx.ptr() + plane * h * w;
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const float d = dout[(plane * oh + i) * ow + j] * inv;
          for (std::size_t a = 0; a < kernel; ++a)
            for (std::size_t b = 0; b < kernel; ++b) dst[(i * kernel + a) * w + j * kernel + b] += d;
        }
    }
  });
}

Var add(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same_shape(av, bv, "add");
  Tensor out = av;
  kernels::active().axpy(1.0f, bv.ptr(), out.ptr(), out.numel());
  return g.record(std::move(out), {a, b}, [=](Graph& gr, const Tensor& dout) {
    const auto& k = kernels::active();
    if (gr.requires_grad(a)) k.axpy(1.0f, dout.ptr(), gr.grad_accumulator(a).ptr(), dout.numel());
    if (gr.requires_grad(b)) k.axpy(1.0f, dout.ptr(), gr.grad_accumulator(b).ptr(), dout.numel());
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return g.record(std::move(out), {a, b}, [=](Graph& gr, const Tensor& dout) {
    const Tensor& x = gr.value(a);
    const Tensor& y = gr.value(b);
    if (gr.requires_grad(a)) {
      Tensor& da = gr.grad_accumulator(a);
      for (std::size_t i = 0; i < da.numel(); ++i) da[i] += dout[i] * y[i];
    }
    if (gr.requires_grad(b)) {
      Tensor& db = gr.grad_accumulator(b);
      for (std::size_t i = 0; i < db.numel(); ++i) db[i] += dout[i] * x[i];
    }
  });
}

Var scale(Graph& g, Var a, float factor) {
  Tensor out = g.value(a);
  for (auto& v : out.data()) v *= factor;
  return g.record(std::move(out), {a}, [=](Graph& gr, const Tensor& dout) {
    kernels::active().axpy(factor, dout.ptr(), gr.grad_accumulator(a).ptr(), dout.numel());
  });
}

Var sum(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  double s = 0.0;
  for (float v : av.data()) s += v;
  return g.record(Tensor::scalar(static_cast<float>(s)), {a}, [=](Graph& gr, const Tensor& dout) {
    Tensor& da = gr.grad_accumulator(a);
    const float d = dout[0];
    for (auto& v : da.data()) v += d;
  });
}

Var flatten(Graph& g, Var input) {
  const Tensor& x = g.value(input);
  const std::size_t batch = x.dim(0);
  const std::size_t rest = x.numel() / batch;
  return g.record(x.reshaped(Shape{batch, rest}), {input}, [=](Graph& gr, const Tensor& dout) {
    kernels::active().axpy(1.0f, dout.ptr(), gr.grad_accumulator(input).ptr(), dout.numel());
  });
}

Var linear(Graph& g, Var input, Var weight, Var bias) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weight);
  const Tensor& b = g.value(bias);
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  if (w.dim(1) != x.dim(1))
    fail(ErrorCode::InvalidShape, "linear inner dimension mismatch: " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  if (b.shape() != Shape{w.dim(0)}) fail(ErrorCode::InvalidShape, "linear bias shape " + shape_str(b.shape()));
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  Tensor out(Shape{batch, out_dim});
  for (std::size_t n = 0; n < batch; ++n) std::copy_n(b.ptr(), out_dim, out.ptr() + n * out_dim);
  kernels::active().gemm(false, true, batch, out_dim, in, x.ptr(), in, w.ptr(), in, 1.0f, out.ptr(), out_dim);
  return g.record(std::move(out), {input, weight, bias}, [=](Graph& gr, const Tensor& dout) {
    const auto& k = kernels::active();
    if (gr.requires_grad(input)) {
      k.gemm(false, false, batch, in, out_dim, dout.ptr(), out_dim, gr.value(weight).ptr(), in, 1.0f,
             gr.grad_accumulator(input).ptr(), in);
    }
    if (gr.requires_grad(weight)) {
      k.gemm(true, false, out_dim, in, batch, dout.ptr(), out_dim, gr.value(input).ptr(), in, 1.0f,
             gr.grad_accumulator(weight).ptr(), in);
    }
    if (gr.requires_grad(bias)) {
      Tensor& db = gr.grad_accumulator(bias);
      for (std::size_t n = 0; n < batch; ++n) k.axpy(1.0f, dout.ptr() + n * out_dim, db.ptr(), out_dim);
    }
  });
}

Var cross_entropy(Graph& g, Var logits, std::span<const int> labels) {
  const Tensor& z = g.value(logits);
  require_rank(z, 2, "cross_entropy logits");
  const std::size_t batch = z.dim(0), classes = z.dim(1);
  if (labels.size() != batch)
    fail(ErrorCode::InvalidShape, "cross_entropy got " + std::to_string(labels.size()) + " labels for batch " +
                                      std::to_string(batch));
  Tensor probs(z.shape());
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      fail(ErrorCode::InvalidLabel, "label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    const float* row = z.ptr() + n * classes;
    const float peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c] - peak));
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < classes; ++c)
      probs[n * classes + c] = static_cast<float>(std::exp(static_cast<double>(row[c] - peak) - log_denom));
    total += log_denom - static_cast<double>(row[label] - peak);
  }
  std::vector<int> saved(labels.begin(), labels.end());
  const float loss = static_cast<float>(total / static_cast<double>(batch));
  return g.record(Tensor::scalar(loss), {logits},
                  [=, probs = std::move(probs), saved = std::move(saved)](Graph& gr, const Tensor& dout) {
                    Tensor& dz = gr.grad_accumulator(logits);
                    const float s = dout[0] / static_cast<float>(batch);
                    for (std::size_t n = 0; n < batch; ++n) {
                      for (std::size_t c = 0; c < classes; ++c) {
                        const float onehot = static_cast<int>(c) == saved[n] ? 1.0f : 0.0f;
                        dz[n * classes + c] += s * (probs[n * classes + c] - onehot);
                      }
                    }
                  });
}

Var l1_penalty(Graph& g, std::span<const Var> params, float coefficient) {
  if (coefficient < 0.0f) fail(ErrorCode::InvalidArgument, "l1 coefficient must be non-negative");
  double total = 0.0;
  for (Var p : params)
    for (float v : g.value(p).data()) total += std::fabs(v);
  std::vector<Var> saved(params.begin(), params.end());
  Tensor value = Tensor::scalar(static_cast<float>(coefficient * total));
  return g.record(std::move(value), std::span<const Var>(saved),
                  [=](Graph& gr, const Tensor& dout) {
                    const float s = dout[0] * coefficient;
                    for (Var p : saved) {
                      if (!gr.requires_grad(p)) continue;
                      const Tensor& v = gr.value(p);
                      Tensor& dp = gr.grad_accumulator(p);
                      for (std::size_t i = 0; i < v.numel(); ++i)
                        dp[i] += v[i] > 0.0f ? s : (v[i] < 0.0f ? -s : 0.0f);
                    }
                  });
}

}  // namespace secnn::ops
