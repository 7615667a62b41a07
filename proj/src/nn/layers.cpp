#include "fedua/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedua/error.hpp"

namespace fedua::nn {
namespace {

void require_rank3(const Tensor& x, const char* layer) {
  if (x.rank() != 3) {
    throw DimensionError(std::string(layer) + " expects [B, C, L] input, got " + shape_string(x.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

Tensor conv1d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank3(x, "conv1d");
  const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
  if (weight.rank() != 3 || weight.dim(1) != cin || bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw DimensionError("conv1d: weight " + shape_string(weight.shape()) + " / bias " + shape_string(bias.shape()) +
                         " incompatible with input " + shape_string(x.shape()));
  }
  const std::size_t cout = weight.dim(0), kernel = weight.dim(2);
  if (kernel % 2 == 0) throw DimensionError("conv1d: kernel size must be odd");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel / 2);
  const std::ptrdiff_t slen = static_cast<std::ptrdiff_t>(len);

  Tensor y({batch, cout, len});
  const auto xs = x.data();
  const auto ws = weight.data();
  auto ys = y.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* yrow = &ys[(b * cout + o) * len];
      std::fill(yrow, yrow + len, bias[o]);
      for (std::size_t i = 0; i < cin; ++i) {
        const double* xrow = &xs[(b * cin + i) * len];
        const double* wrow = &ws[(o * cin + i) * kernel];
        for (std::size_t k = 0; k < kernel; ++k) {
          const double w = wrow[k];
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - half;
          const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
          const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(slen, slen - shift);
          for (std::ptrdiff_t t = t0; t < t1; ++t) yrow[t] += w * xrow[t + shift];
        }
      }
    }
  }
  return y;
}

Tensor conv1d_backward(const Tensor& x, Tensor& weight, Tensor& bias, const Tensor& dy) {
  const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
  const std::size_t cout = weight.dim(0), kernel = weight.dim(2);
  if (dy.shape() != Shape{batch, cout, len}) throw DimensionError("conv1d backward: gradient shape mismatch");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel / 2);
  const std::ptrdiff_t slen = static_cast<std::ptrdiff_t>(len);

  weight.ensure_grad();
  bias.ensure_grad();
  weight.zero_grad();
  bias.zero_grad();
  auto dw = weight.grad();
  auto db = bias.grad();
  Tensor dx(x.shape());
  const auto xs = x.data();
  const auto ws = weight.data();
  const auto dys = dy.data();
  auto dxs = dx.data();

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      const double* dyrow = &dys[(b * cout + o) * len];
      double acc = 0.0;
      for (std::size_t t = 0; t < len; ++t) acc += dyrow[t];
      db[o] += acc;
      for (std::size_t i = 0; i < cin; ++i) {
        const double* xrow = &xs[(b * cin + i) * len];
        double* dxrow = &dxs[(b * cin + i) * len];
        const double* wrow = &ws[(o * cin + i) * kernel];
        double* dwrow = &dw[(o * cin + i) * kernel];
        for (std::size_t k = 0; k < kernel; ++k) {
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - half;
          const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
          const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(slen, slen - shift);
          const double w = wrow[k];
          double gw = 0.0;
          for (std::ptrdiff_t t = t0; t < t1; ++t) {
            gw += dyrow[t] * xrow[t + shift];
            dxrow[t + shift] += w * dyrow[t];
          }
          dwrow[k] += gw;
        }
      }
    }
  }
  return dx;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "relu backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

Tensor avg_pool1d_forward(const Tensor& x, std::size_t rate) {
  require_rank3(x, "avg_pool1d");
  const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
  if (rate == 0 || len % rate != 0) {
    throw DimensionError("avg_pool1d: rate " + std::to_string(rate) + " does not divide length " +
                         std::to_string(len));
  }
  const std::size_t out_len = len / rate;
  Tensor y({batch, ch, out_len});
  const double inv = 1.0 / static_cast<double>(rate);
  for (std::size_t row = 0; row < batch * ch; ++row) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double acc = 0.0;
      for (std::size_t k = 0; k < rate; ++k) acc += x[row * len + t * rate + k];
      y[row * out_len + t] = acc * inv;
    }
  }
  return y;
}

Tensor avg_pool1d_backward(const Tensor& x, std::size_t rate, const Tensor& dy) {
  const std::size_t len = x.dim(2), out_len = len / rate;
  if (dy.shape() != Shape{x.dim(0), x.dim(1), out_len}) {
    throw DimensionError("avg_pool1d backward: gradient shape mismatch");
  }
  Tensor dx(x.shape());
  const double inv = 1.0 / static_cast<double>(rate);
  for (std::size_t row = 0; row < x.dim(0) * x.dim(1); ++row) {
    for (std::size_t t = 0; t < len; ++t) dx[row * len + t] = dy[row * out_len + t / rate] * inv;
  }
  return dx;
}

Tensor upsample1d(const Tensor& x, std::size_t rate) {
  require_rank3(x, "upsample1d");
  const std::size_t len = x.dim(2);
  Tensor y({x.dim(0), x.dim(1), len * rate});
  for (std::size_t row = 0; row < x.dim(0) * x.dim(1); ++row) {
    for (std::size_t t = 0; t < len * rate; ++t) y[row * len * rate + t] = x[row * len + t / rate];
  }
  return y;
}

namespace {

struct GroupLayout {
  std::size_t batch, channels, len, groups, per_group;
};

GroupLayout group_layout(const Tensor& x, std::size_t groups, const Tensor& scale, const Tensor& shift) {
  require_rank3(x, "group_norm");
  const std::size_t ch = x.dim(1);
  if (groups == 0 || ch % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(ch) +
                      " channels");
  }
  if (scale.shape() != Shape{ch} || shift.shape() != Shape{ch}) {
    throw DimensionError("group_norm: scale/shift must have shape [" + std::to_string(ch) + "]");
  }
  return {x.dim(0), ch, x.dim(2), groups, ch / groups};
}

}  // namespace

Tensor group_norm_forward(const Tensor& x, std::size_t groups, const Tensor& scale, const Tensor& shift,
                          double eps) {
  if (!(eps > 0.0)) throw ArgumentError("group_norm: eps must be positive");
  const GroupLayout g = group_layout(x, groups, scale, shift);
  const std::size_t span = g.per_group * g.len;
  const double inv_n = 1.0 / static_cast<double>(span);
  Tensor y(x.shape());
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const std::size_t base = (b * g.channels + grp * g.per_group) * g.len;
      double mean = 0.0;
      for (std::size_t i = 0; i < span; ++i) mean += x[base + i];
      mean *= inv_n;
      double var = 0.0;
      for (std::size_t i = 0; i < span; ++i) {
        const double d = x[base + i] - mean;
        var += d * d;
      }
      var *= inv_n;
      const double inv_std = 1.0 / std::sqrt(var + eps);
      for (std::size_t i = 0; i < span; ++i) {
        const std::size_t c = grp * g.per_group + i / g.len;
        y[base + i] = scale[c] * (x[base + i] - mean) * inv_std + shift[c];
      }
    }
  }
  return y;
}

Tensor group_norm_backward(const Tensor& x, std::size_t groups, Tensor& scale, Tensor& shift, const Tensor& dy,
                           double eps) {
  const GroupLayout g = group_layout(x, groups, scale, shift);
  require_same_shape(x, dy, "group_norm backward");
  scale.ensure_grad();
  shift.ensure_grad();
  scale.zero_grad();
  shift.zero_grad();
  auto dscale = scale.grad();
  auto dshift = shift.grad();

  const std::size_t span = g.per_group * g.len;
  const double n = static_cast<double>(span);
  Tensor dx(x.shape());
  std::vector<double> xhat(span), dxhat(span);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const std::size_t base = (b * g.channels + grp * g.per_group) * g.len;
      double mean = 0.0;
      for (std::size_t i = 0; i < span; ++i) mean += x[base + i];
      mean /= n;
      double var = 0.0;
      for (std::size_t i = 0; i < span; ++i) {
        const double d = x[base + i] - mean;
        var += d * d;
      }
      var /= n;
      const double inv_std = 1.0 / std::sqrt(var + eps);
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t i = 0; i < span; ++i) {
        const std::size_t c = grp * g.per_group + i / g.len;
        xhat[i] = (x[base + i] - mean) * inv_std;
        dscale[c] += dy[base + i] * xhat[i];
        dshift[c] += dy[base + i];
        dxhat[i] = dy[base + i] * scale[c];
        sum_dxhat += dxhat[i];
        sum_dxhat_xhat += dxhat[i] * xhat[i];
      }
      for (std::size_t i = 0; i < span; ++i) {
        dx[base + i] = inv_std / n * (n * dxhat[i] - sum_dxhat - xhat[i] * sum_dxhat_xhat);
      }
    }
  }
  return dx;
}

Tensor fc_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() < 2 || weight.rank() != 2 || bias.rank() != 1) {
    throw DimensionError("fc: unexpected ranks, input " + shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), n1 = weight.dim(0), n2 = weight.dim(1);
  if (x.size() != batch * n1 || bias.dim(0) != n2) {
    throw DimensionError("fc: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  }
  Tensor y({batch, n2});
  for (std::size_t b = 0; b < batch; ++b) {
    double* yrow = &y[b * n2];
    for (std::size_t j = 0; j < n2; ++j) yrow[j] = bias[j];
    for (std::size_t i = 0; i < n1; ++i) {
      const double xv = x[b * n1 + i];
      const double* wrow = weight.data().data() + i * n2;
      for (std::size_t j = 0; j < n2; ++j) yrow[j] += xv * wrow[j];
    }
  }
  return y;
}

Tensor fc_backward(const Tensor& x, Tensor& weight, Tensor& bias, const Tensor& dy) {
  const std::size_t batch = x.dim(0), n1 = weight.dim(0), n2 = weight.dim(1);
  if (dy.shape() != Shape{batch, n2}) throw DimensionError("fc backward: gradient shape mismatch");
  weight.ensure_grad();
  bias.ensure_grad();
  weight.zero_grad();
  bias.zero_grad();
  auto dw = weight.grad();
  auto db = bias.grad();
  Tensor dx(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const double* dyrow = dy.data().data() + b * n2;
    for (std::size_t j = 0; j < n2; ++j) db[j] += dyrow[j];
    for (std::size_t i = 0; i < n1; ++i) {
      const double xv = x[b * n1 + i];
      const double* wrow = weight.data().data() + i * n2;
      double* dwrow = &dw[i * n2];
      double acc = 0.0;
      for (std::size_t j = 0; j < n2; ++j) {
        dwrow[j] += xv * dyrow[j];
        acc += wrow[j] * dyrow[j];
      }
      dx[b * n1 + i] = acc;
    }
  }
  return dx;
}

double sigmoid(double z) noexcept {
  // Largest double below 1 and a tiny positive floor keep outputs in (0, 1).
  constexpr double kHi = 1.0 - 0x1.0p-53;
  constexpr double kLo = std::numeric_limits<double>::min();
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::clamp(s, kLo, kHi);
}

Tensor sigmoid_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = sigmoid(v);
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  if (y.size() != dy.size()) throw DimensionError("sigmoid backward: gradient shape mismatch");
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
  return dx;
}

}  // namespace fedua::nn
