#include "glyphclass/ops.hpp"

// Small products otherwise take a coefficient-wise path whose vectorized
// reductions start at an address-dependent offset, which makes results vary
// with allocation alignment. The blocked GEMM kernel is address independent.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "glyphclass/error.hpp"

namespace glyphclass::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return ConstMatMap(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MatMap(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

std::string axis_msg(const char* op, const char* axis, std::size_t got, std::size_t want) {
  return std::string(op) + ": axis '" + axis + "' is " + std::to_string(got) + ", expected " + std::to_string(want);
}

// Views x as [N, C, spatial...], adding a unit batch axis when absent.
struct Batched {
  std::size_t n;
  bool had_batch;
};

Batched batch_view(const Tensor& x, std::size_t unbatched_rank, const char* op) {
  if (x.rank() == unbatched_rank) return {1, false};
  if (x.rank() == unbatched_rank + 1) return {x.dim(0), true};
  fail(ErrorKind::Dimension, std::string(op) + ": input rank " + std::to_string(x.rank()) + " (shape " +
                                 shape_string(x.shape()) + ") is neither " + std::to_string(unbatched_rank) + " nor " +
                                 std::to_string(unbatched_rank + 1));
}

Shape with_batch(const Batched& b, Shape inner) {
  if (b.had_batch) inner.insert(inner.begin(), b.n);
  return inner;
}

float sigmoid(float v) { return 1.0f / (1.0f + std::exp(-v)); }

}  // namespace

// ---------------------------------------------------------------- conv2d

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto batch = batch_view(x, 3, "conv2d");
  const std::size_t off = batch.had_batch ? 1 : 0;
  const std::size_t channels = x.dim(off), height = x.dim(off + 1), width = x.dim(off + 2);
  require_rank(w, 4, "conv2d weight");
  if (w.dim(1) != channels) fail(ErrorKind::Dimension, axis_msg("conv2d", "input channels", channels, w.dim(1)));
  if (w.dim(2) != 3 || w.dim(3) != 3) fail(ErrorKind::Dimension, "conv2d: kernel must be 3x3, got " + shape_string(w.shape()));
  if (height < 3) fail(ErrorKind::Dimension, axis_msg("conv2d", "height", height, 3));
  if (width < 3) fail(ErrorKind::Dimension, axis_msg("conv2d", "width", width, 3));
  const std::size_t filters = w.dim(0);
  require_shape(b, {filters}, "conv2d bias");

  const std::size_t out_h = height - 2, out_w = width - 2, plane = out_h * out_w;
  const std::size_t k = channels * 9, cols_n = batch.n * plane;
  Tensor cols({k, cols_n});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t u = 0; u < 3; ++u)
      for (std::size_t v = 0; v < 3; ++v) {
        float* row = cols.data() + (c * 9 + u * 3 + v) * cols_n;
        for (std::size_t n = 0; n < batch.n; ++n) {
          const float* src = x.data() + ((n * channels + c) * height) * width;
          for (std::size_t i = 0; i < out_h; ++i)
            std::memcpy(row + n * plane + i * out_w, src + (i + u) * width + v, out_w * sizeof(float));
        }
      }

  Tensor product({filters, cols_n});
  as_matrix(product, filters, cols_n).noalias() = as_matrix(w, filters, k) * as_matrix(cols, k, cols_n);

  Tensor out(with_batch(batch, {filters, out_h, out_w}));
  for (std::size_t n = 0; n < batch.n; ++n)
    for (std::size_t f = 0; f < filters; ++f) {
      const float* src = product.data() + f * cols_n + n * plane;
      float* dst = out.data() + (n * filters + f) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b[f];
    }
  return out;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dout) {
  const auto batch = batch_view(x, 3, "conv2d_backward");
  const std::size_t off = batch.had_batch ? 1 : 0;
  const std::size_t channels = x.dim(off), height = x.dim(off + 1), width = x.dim(off + 2);
  const std::size_t filters = w.dim(0);
  const std::size_t out_h = height - 2, out_w = width - 2, plane = out_h * out_w;
  require_shape(dout, with_batch(batch, {filters, out_h, out_w}), "conv2d upstream gradient");
  const std::size_t k = channels * 9, cols_n = batch.n * plane;

  Tensor cols({k, cols_n});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t u = 0; u < 3; ++u)
      for (std::size_t v = 0; v < 3; ++v) {
        float* row = cols.data() + (c * 9 + u * 3 + v) * cols_n;
        for (std::size_t n = 0; n < batch.n; ++n) {
          const float* src = x.data() + ((n * channels + c) * height) * width;
          for (std::size_t i = 0; i < out_h; ++i)
            std::memcpy(row + n * plane + i * out_w, src + (i + u) * width + v, out_w * sizeof(float));
        }
      }

  Tensor grad({filters, cols_n});
  ConvGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({filters})};
  for (std::size_t n = 0; n < batch.n; ++n)
    for (std::size_t f = 0; f < filters; ++f) {
      const float* src = dout.data() + (n * filters + f) * plane;
      std::memcpy(grad.data() + f * cols_n + n * plane, src, plane * sizeof(float));
      double sum = 0.0;
      for (std::size_t p = 0; p < plane; ++p) sum += src[p];
      g.db[f] += static_cast<float>(sum);
    }

  as_matrix(g.dw, filters, k).noalias() = as_matrix(grad, filters, cols_n) * as_matrix(cols, k, cols_n).transpose();
  Tensor dcols({k, cols_n});
  as_matrix(dcols, k, cols_n).noalias() = as_matrix(w, filters, k).transpose() * as_matrix(grad, filters, cols_n);

  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t u = 0; u < 3; ++u)
      for (std::size_t v = 0; v < 3; ++v) {
        const float* row = dcols.data() + (c * 9 + u * 3 + v) * cols_n;
        for (std::size_t n = 0; n < batch.n; ++n) {
          float* dst = g.dx.data() + ((n * channels + c) * height) * width;
          for (std::size_t i = 0; i < out_h; ++i) {
            float* d = dst + (i + u) * width + v;
            const float* s = row + n * plane + i * out_w;
            for (std::size_t j = 0; j < out_w; ++j) d[j] += s[j];
          }
        }
      }
  return g;
}

// ---------------------------------------------------------------- conv1d

namespace {

struct Conv1dGeometry {
  Batched batch;
  std::size_t channels, length, filters, out_len, pad;
};

Conv1dGeometry conv1d_geometry(const Tensor& x, const Tensor& w, Padding padding, const char* op) {
  Conv1dGeometry g{batch_view(x, 2, op), 0, 0, 0, 0, 0};
  const std::size_t off = g.batch.had_batch ? 1 : 0;
  g.channels = x.dim(off);
  g.length = x.dim(off + 1);
  require_rank(w, 3, std::string(op) + " weight");
  if (w.dim(1) != g.channels) fail(ErrorKind::Dimension, axis_msg(op, "input channels", g.channels, w.dim(1)));
  if (w.dim(2) != 3) fail(ErrorKind::Dimension, axis_msg(op, "kernel width", w.dim(2), 3));
  g.filters = w.dim(0);
  if (padding == Padding::Valid) {
    if (g.length < 3) fail(ErrorKind::Dimension, axis_msg(op, "length", g.length, 3));
    g.out_len = g.length - 2;
    g.pad = 0;
  } else {
    g.out_len = g.length;
    g.pad = 1;
  }
  return g;
}

Tensor conv1d_columns(const Tensor& x, const Conv1dGeometry& g) {
  const std::size_t cols_n = g.batch.n * g.out_len;
  Tensor cols({g.channels * 3, cols_n});
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t u = 0; u < 3; ++u) {
      float* row = cols.data() + (c * 3 + u) * cols_n;
      for (std::size_t n = 0; n < g.batch.n; ++n) {
        const float* src = x.data() + (n * g.channels + c) * g.length;
        float* dst = row + n * g.out_len;
        for (std::size_t t = 0; t < g.out_len; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t + u) - static_cast<std::ptrdiff_t>(g.pad);
          dst[t] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(g.length)) ? src[pos] : 0.0f;
        }
      }
    }
  return cols;
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, Padding padding) {
  const auto g = conv1d_geometry(x, w, padding, "conv1d");
  require_shape(b, {g.filters}, "conv1d bias");
  const std::size_t k = g.channels * 3, cols_n = g.batch.n * g.out_len;
  const Tensor cols = conv1d_columns(x, g);
  Tensor product({g.filters, cols_n});
  as_matrix(product, g.filters, cols_n).noalias() = as_matrix(w, g.filters, k) * as_matrix(cols, k, cols_n);

  Tensor out(with_batch(g.batch, {g.filters, g.out_len}));
  for (std::size_t n = 0; n < g.batch.n; ++n)
    for (std::size_t f = 0; f < g.filters; ++f) {
      const float* src = product.data() + f * cols_n + n * g.out_len;
      float* dst = out.data() + (n * g.filters + f) * g.out_len;
      for (std::size_t t = 0; t < g.out_len; ++t) dst[t] = src[t] + b[f];
    }
  return out;
}

ConvGrads conv1d_backward(const Tensor& x, const Tensor& w, const Tensor& dout, Padding padding) {
  const auto g = conv1d_geometry(x, w, padding, "conv1d_backward");
  require_shape(dout, with_batch(g.batch, {g.filters, g.out_len}), "conv1d upstream gradient");
  const std::size_t k = g.channels * 3, cols_n = g.batch.n * g.out_len;
  const Tensor cols = conv1d_columns(x, g);

  ConvGrads grads{Tensor(x.shape()), Tensor(w.shape()), Tensor({g.filters})};
  Tensor grad({g.filters, cols_n});
  for (std::size_t n = 0; n < g.batch.n; ++n)
    for (std::size_t f = 0; f < g.filters; ++f) {
      const float* src = dout.data() + (n * g.filters + f) * g.out_len;
      std::memcpy(grad.data() + f * cols_n + n * g.out_len, src, g.out_len * sizeof(float));
      double sum = 0.0;
      for (std::size_t t = 0; t < g.out_len; ++t) sum += src[t];
      grads.db[f] += static_cast<float>(sum);
    }
  as_matrix(grads.dw, g.filters, k).noalias() =
      as_matrix(grad, g.filters, cols_n) * as_matrix(cols, k, cols_n).transpose();
  Tensor dcols({k, cols_n});
  as_matrix(dcols, k, cols_n).noalias() = as_matrix(w, g.filters, k).transpose() * as_matrix(grad, g.filters, cols_n);

  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t u = 0; u < 3; ++u) {
      const float* row = dcols.data() + (c * 3 + u) * cols_n;
      for (std::size_t n = 0; n < g.batch.n; ++n) {
        float* dst = grads.dx.data() + (n * g.channels + c) * g.length;
        const float* src = row + n * g.out_len;
        for (std::size_t t = 0; t < g.out_len; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t + u) - static_cast<std::ptrdiff_t>(g.pad);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(g.length)) dst[pos] += src[t];
        }
      }
    }
  return grads;
}

// ---------------------------------------------------------------- pooling

Pooled maxpool(const Tensor& x, std::size_t k, int dims) {
  if (dims != 1 && dims != 2) fail(ErrorKind::Parameter, "maxpool: dims must be 1 or 2");
  if (k == 0) fail(ErrorKind::Parameter, "maxpool: window must be positive");
  if (x.rank() < static_cast<std::size_t>(dims))
    fail(ErrorKind::Dimension, "maxpool: input rank too small for " + std::to_string(dims) + "-d pooling");

  Pooled p;
  p.input_shape = x.shape();
  Shape out_shape = x.shape();
  const std::size_t rank = x.rank();
  for (int d = 0; d < dims; ++d) {
    const std::size_t axis = rank - 1 - d;
    if (x.dim(axis) < k)
      fail(ErrorKind::Dimension, "maxpool: axis " + std::to_string(axis) + " has extent " + std::to_string(x.dim(axis)) +
                                     " < window " + std::to_string(k));
    out_shape[axis] = x.dim(axis) / k;
  }
  p.out = Tensor(out_shape);
  p.argmax.resize(p.out.size());

  const std::size_t in_w = x.dim(rank - 1), out_w = out_shape[rank - 1];
  const std::size_t in_h = dims == 2 ? x.dim(rank - 2) : 1, out_h = dims == 2 ? out_shape[rank - 2] : 1;
  const std::size_t win_h = dims == 2 ? k : 1;
  const std::size_t lead = x.size() / (in_h * in_w);

  std::size_t o = 0;
  for (std::size_t l = 0; l < lead; ++l) {
    const std::size_t base = l * in_h * in_w;
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j, ++o) {
        std::size_t best = base + (i * win_h) * in_w + j * k;
        for (std::size_t u = 0; u < win_h; ++u)
          for (std::size_t v = 0; v < k; ++v) {
            const std::size_t idx = base + (i * win_h + u) * in_w + j * k + v;
            if (x[idx] > x[best]) best = idx;
          }
        p.out[o] = x[best];
        p.argmax[o] = static_cast<std::uint32_t>(best);
      }
  }
  return p;
}

Pooled adaptive_maxpool1d(const Tensor& x, std::size_t out_len) {
  if (x.rank() < 1) fail(ErrorKind::Dimension, "adaptive_maxpool1d: scalar input");
  const std::size_t length = x.dim(x.rank() - 1);
  if (out_len == 0) fail(ErrorKind::Parameter, "adaptive_maxpool1d: output length must be positive");
  if (length < out_len)
    fail(ErrorKind::Dimension, "adaptive_maxpool1d: axis " + std::to_string(x.rank() - 1) + " has length " +
                                   std::to_string(length) + " < output length " + std::to_string(out_len));
  Pooled p;
  p.input_shape = x.shape();
  Shape out_shape = x.shape();
  out_shape.back() = out_len;
  p.out = Tensor(out_shape);
  p.argmax.resize(p.out.size());
  const std::size_t lead = x.size() / length;
  for (std::size_t l = 0; l < lead; ++l)
    for (std::size_t j = 0; j < out_len; ++j) {
      const std::size_t begin = j * length / out_len, end = (j + 1) * length / out_len;
      std::size_t best = l * length + begin;
      for (std::size_t t = begin; t < end; ++t)
        if (x[l * length + t] > x[best]) best = l * length + t;
      p.out[l * out_len + j] = x[best];
      p.argmax[l * out_len + j] = static_cast<std::uint32_t>(best);
    }
  return p;
}

Tensor pool_backward(const Pooled& pooled, const Tensor& dout) {
  require_shape(dout, pooled.out.shape(), "pool upstream gradient");
  Tensor dx(pooled.input_shape);
  for (std::size_t o = 0; o < dout.size(); ++o) dx[pooled.argmax[o]] += dout[o];
  return dx;
}

// ---------------------------------------------------------------- relu / linear

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& out, const Tensor& dout) {
  require_shape(dout, out.shape(), "relu upstream gradient");
  Tensor dx(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) dx[i] = out[i] > 0.0f ? dout[i] : 0.0f;
  return dx;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto batch = batch_view(x, 1, "linear");
  require_rank(w, 2, "linear weight");
  const std::size_t in = x.dim(x.rank() - 1), out_dim = w.dim(0);
  if (w.dim(1) != in) fail(ErrorKind::Dimension, axis_msg("linear", "input features", in, w.dim(1)));
  require_shape(b, {out_dim}, "linear bias");
  Tensor out(with_batch(batch, {out_dim}));
  auto o = as_matrix(out, batch.n, out_dim);
  o.noalias() = as_matrix(x, batch.n, in) * as_matrix(w, out_dim, in).transpose();
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b.data(), static_cast<Eigen::Index>(out_dim));
  return out;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dout) {
  const auto batch = batch_view(x, 1, "linear_backward");
  const std::size_t in = x.dim(x.rank() - 1), out_dim = w.dim(0);
  require_shape(dout, with_batch(batch, {out_dim}), "linear upstream gradient");
  LinearGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({out_dim})};
  const auto d = as_matrix(dout, batch.n, out_dim);
  as_matrix(g.dx, batch.n, in).noalias() = d * as_matrix(w, out_dim, in);
  as_matrix(g.dw, out_dim, in).noalias() = d.transpose() * as_matrix(x, batch.n, in);
  for (std::size_t r = 0; r < batch.n; ++r)
    for (std::size_t j = 0; j < out_dim; ++j) g.db[j] += dout[r * out_dim + j];
  return g;
}

// ---------------------------------------------------------------- batch norm

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  BatchNormCache* cache, const BatchNormOptions& options) {
  require_rank(x, 2, "batch_norm input");
  const std::size_t rows = x.dim(0), channels = x.dim(1);
  require_shape(gamma, {channels}, "batch_norm gamma");
  require_shape(beta, {channels}, "batch_norm beta");
  require_shape(state.running_mean, {channels}, "batch_norm running mean");
  require_shape(state.running_var, {channels}, "batch_norm running variance");
  if (mode == Mode::Train && rows < 2)
    fail(ErrorKind::BatchSize, "batch_norm: train mode needs at least 2 rows, got " + std::to_string(rows));

  std::vector<float> mean(channels), inv_std(channels);
  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < channels; ++c) {
      double sum = 0.0;
      for (std::size_t r = 0; r < rows; ++r) sum += x[r * channels + c];
      const double mu = sum / static_cast<double>(rows);
      double sq = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = x[r * channels + c] - mu;
        sq += d * d;
      }
      const double var = sq / static_cast<double>(rows);
      mean[c] = static_cast<float>(mu);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + options.eps));
      state.running_mean[c] = (1.0f - options.momentum) * state.running_mean[c] + options.momentum * mean[c];
      state.running_var[c] =
          (1.0f - options.momentum) * state.running_var[c] + options.momentum * static_cast<float>(var);
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + options.eps));
    }
  }

  Tensor normalized(x.shape()), out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      normalized[i] = (x[i] - mean[c]) * inv_std[c];
      out[i] = gamma[c] * normalized[i] + beta[c];
    }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

BatchNormGrads batch_norm_backward(const BatchNormCache& cache, const Tensor& gamma, const Tensor& dout) {
  require_shape(dout, cache.normalized.shape(), "batch_norm upstream gradient");
  const std::size_t rows = dout.dim(0), channels = dout.dim(1);
  BatchNormGrads g{Tensor(dout.shape()), Tensor({channels}), Tensor({channels})};
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_d = 0.0, sum_dx = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = r * channels + c;
      sum_d += dout[i];
      sum_dx += static_cast<double>(dout[i]) * cache.normalized[i];
    }
    g.dbeta[c] = static_cast<float>(sum_d);
    g.dgamma[c] = static_cast<float>(sum_dx);
    const double scale = static_cast<double>(gamma[c]) * cache.inv_std[c];
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = r * channels + c;
      if (cache.mode == Mode::Train) {
        g.dx[i] = static_cast<float>(scale / static_cast<double>(rows) *
                                     (static_cast<double>(rows) * dout[i] - sum_d - cache.normalized[i] * sum_dx));
      } else {
        g.dx[i] = static_cast<float>(scale * dout[i]);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------- GRU

Tensor gru_step(const Tensor& gx, const Tensor& h_prev, const Tensor& w_hh, const std::vector<std::uint8_t>* active,
                GruStepCache* cache) {
  require_rank(h_prev, 2, "gru_step hidden state");
  const std::size_t rows = h_prev.dim(0), hidden = h_prev.dim(1);
  require_shape(gx, {rows, 3 * hidden}, "gru_step input projection");
  require_shape(w_hh, {3 * hidden, hidden}, "gru_step recurrent weight");

  Tensor hzr({rows, 2 * hidden});
  as_matrix(hzr, rows, 2 * hidden).noalias() =
      as_matrix(h_prev, rows, hidden) * as_matrix(w_hh, 2 * hidden, hidden).transpose();

  Tensor z({rows, hidden}), r({rows, hidden}), rh({rows, hidden});
  for (std::size_t b = 0; b < rows; ++b) {
    const bool on = !active || (*active)[b];
    for (std::size_t j = 0; j < hidden; ++j) {
      const std::size_t i = b * hidden + j;
      z[i] = on ? sigmoid(gx[b * 3 * hidden + j] + hzr[b * 2 * hidden + j]) : 0.0f;
      r[i] = sigmoid(gx[b * 3 * hidden + hidden + j] + hzr[b * 2 * hidden + hidden + j]);
      rh[i] = r[i] * h_prev[i];
    }
  }
  Tensor n({rows, hidden});
  as_matrix(n, rows, hidden).noalias() =
      as_matrix(rh, rows, hidden) * as_matrix(w_hh, hidden, hidden, 2 * hidden * hidden).transpose();
  Tensor h(h_prev.shape());
  for (std::size_t b = 0; b < rows; ++b)
    for (std::size_t j = 0; j < hidden; ++j) {
      const std::size_t i = b * hidden + j;
      n[i] = std::tanh(n[i] + gx[b * 3 * hidden + 2 * hidden + j]);
      h[i] = (1.0f - z[i]) * h_prev[i] + z[i] * n[i];
    }
  if (cache) {
    cache->h_prev = h_prev;
    cache->z = std::move(z);
    cache->r = std::move(r);
    cache->n = std::move(n);
  }
  return h;
}

GruStepGrads gru_step_backward(const GruStepCache& cache, const Tensor& w_hh, const Tensor& dh, Tensor& dw_hh) {
  const std::size_t rows = cache.h_prev.dim(0), hidden = cache.h_prev.dim(1);
  require_shape(dh, {rows, hidden}, "gru_step upstream gradient");
  require_shape(dw_hh, w_hh.shape(), "gru_step recurrent gradient");

  GruStepGrads g{Tensor({rows, 3 * hidden}), Tensor({rows, hidden})};
  Tensor dn_a({rows, hidden}), rh({rows, hidden});
  for (std::size_t b = 0; b < rows; ++b)
    for (std::size_t j = 0; j < hidden; ++j) {
      const std::size_t i = b * hidden + j;
      const float z = cache.z[i], n = cache.n[i], h = cache.h_prev[i];
      const float dz_a = dh[i] * (n - h) * z * (1.0f - z);
      dn_a[i] = dh[i] * z * (1.0f - n * n);
      rh[i] = cache.r[i] * h;
      g.dgx[b * 3 * hidden + j] = dz_a;
      g.dgx[b * 3 * hidden + 2 * hidden + j] = dn_a[i];
      g.dh_prev[i] = dh[i] * (1.0f - z);
    }

  const auto dn = as_matrix(dn_a, rows, hidden);
  Tensor d_rh({rows, hidden});
  as_matrix(d_rh, rows, hidden).noalias() = dn * as_matrix(w_hh, hidden, hidden, 2 * hidden * hidden);
  as_matrix(dw_hh, hidden, hidden, 2 * hidden * hidden).noalias() += dn.transpose() * as_matrix(rh, rows, hidden);

  Tensor dzr({rows, 2 * hidden});
  for (std::size_t b = 0; b < rows; ++b)
    for (std::size_t j = 0; j < hidden; ++j) {
      const std::size_t i = b * hidden + j;
      const float r = cache.r[i];
      const float dr_a = d_rh[i] * cache.h_prev[i] * r * (1.0f - r);
      g.dgx[b * 3 * hidden + hidden + j] = dr_a;
      dzr[b * 2 * hidden + j] = g.dgx[b * 3 * hidden + j];
      dzr[b * 2 * hidden + hidden + j] = dr_a;
      g.dh_prev[i] += d_rh[i] * r;
    }
  const auto dzr_m = as_matrix(dzr, rows, 2 * hidden);
  as_matrix(g.dh_prev, rows, hidden).noalias() += dzr_m * as_matrix(w_hh, 2 * hidden, hidden);
  as_matrix(dw_hh, 2 * hidden, hidden).noalias() += dzr_m.transpose() * as_matrix(cache.h_prev, rows, hidden);
  return g;
}

Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruWeights& weights, GruStepCache* cache) {
  const bool single = x.rank() == 1;
  const Tensor xb = single ? x.reshaped({1, x.dim(0)}) : x;
  require_rank(h_prev, single ? 1 : 2, "gru_cell hidden state");
  const Tensor hb = single ? h_prev.reshaped({1, h_prev.dim(0)}) : h_prev;
  if (hb.dim(0) != xb.dim(0)) fail(ErrorKind::Dimension, axis_msg("gru_cell", "batch", hb.dim(0), xb.dim(0)));
  require_shape(weights.w_ih, {3 * hb.dim(1), xb.dim(1)}, "gru_cell input weight");
  const Tensor gx = linear(xb, weights.w_ih, weights.bias);
  Tensor h = gru_step(gx, hb, weights.w_hh, nullptr, cache);
  return single ? std::move(h).reshaped({h_prev.dim(0)}) : h;
}

GruCellGrads gru_cell_backward(const Tensor& x, const GruStepCache& cache, const GruWeights& weights,
                               const Tensor& dh) {
  const bool single = x.rank() == 1;
  const Tensor xb = single ? x.reshaped({1, x.dim(0)}) : x;
  const Tensor dhb = single ? dh.reshaped({1, dh.dim(0)}) : dh;
  GruCellGrads g;
  g.params.dw_hh = Tensor(weights.w_hh.shape());
  auto step = gru_step_backward(cache, weights.w_hh, dhb, g.params.dw_hh);
  auto lin = linear_backward(xb, weights.w_ih, step.dgx);
  g.params.dw_ih = std::move(lin.dw);
  g.params.dbias = std::move(lin.db);
  g.dx = single ? std::move(lin.dx).reshaped(x.shape()) : std::move(lin.dx);
  g.dh_prev = single ? std::move(step.dh_prev).reshaped(dh.shape()) : std::move(step.dh_prev);
  return g;
}

// ---------------------------------------------------------------- dropout

DropoutResult dropout(const Tensor& x, double p, std::mt19937_64& rng, Mode mode) {
  if (!(p >= 0.0 && p < 1.0)) fail(ErrorKind::Parameter, "dropout ratio must lie in [0,1), got " + std::to_string(p));
  DropoutResult result{x, {}};
  if (mode == Mode::Eval || p == 0.0) return result;
  const float keep_scale = static_cast<float>(1.0 / (1.0 - p));
  result.scale.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    result.scale[i] = u < p ? 0.0f : keep_scale;
    result.out[i] = x[i] * result.scale[i];
  }
  return result;
}

Tensor dropout_backward(const DropoutResult& result, const Tensor& dout) {
  require_shape(dout, result.out.shape(), "dropout upstream gradient");
  if (result.scale.empty()) return dout;
  Tensor dx(dout.shape());
  for (std::size_t i = 0; i < dout.size(); ++i) dx[i] = dout[i] * result.scale[i];
  return dx;
}

// ---------------------------------------------------------------- loss

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax logits");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t b = 0; b < rows; ++b) {
    const float* z = logits.data() + b * classes;
    const double shift = *std::max_element(z, z + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(z[c] - shift);
    for (std::size_t c = 0; c < classes; ++c) out[b * classes + c] = static_cast<float>(std::exp(z[c] - shift) / total);
  }
  return out;
}

LossResult weighted_softmax_ce(const Tensor& logits, const std::vector<int>& labels, const Tensor& class_weights) {
  require_rank(logits, 2, "softmax_ce logits");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  require_shape(class_weights, {classes}, "softmax_ce class weights");
  if (labels.size() != rows)
    fail(ErrorKind::Dimension, axis_msg("softmax_ce", "batch", labels.size(), rows));
  for (std::size_t c = 0; c < classes; ++c)
    if (!(class_weights[c] > 0.0f) || !std::isfinite(class_weights[c]))
      fail(ErrorKind::Parameter, "softmax_ce: class weight " + std::to_string(c) + " must be finite and positive");

  LossResult result{0.0, Tensor(logits.shape())};
  const double inv_rows = 1.0 / static_cast<double>(rows);
  std::vector<double> probs(classes);
  for (std::size_t b = 0; b < rows; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      fail(ErrorKind::Label, "label " + std::to_string(y) + " at row " + std::to_string(b) + " outside [0," +
                                 std::to_string(classes) + ")");
    const float* z = logits.data() + b * classes;
    const double shift = *std::max_element(z, z + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += probs[c] = std::exp(static_cast<double>(z[c]) - shift);
    const double log_norm = shift + std::log(total);
    const double w = class_weights[static_cast<std::size_t>(y)];
    result.loss += w * (log_norm - z[y]) * inv_rows;
    for (std::size_t c = 0; c < classes; ++c) {
      const double target = static_cast<std::size_t>(y) == c ? 1.0 : 0.0;
      result.grad[b * classes + c] = static_cast<float>(w * (probs[c] / total - target) * inv_rows);
    }
  }
  return result;
}

}  // namespace glyphclass::nn
