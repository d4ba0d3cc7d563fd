#include "lsmtcr/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

#include "lsmtcr/util/random.hpp"

namespace lsmtcr::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using MutVec = Eigen::Map<Eigen::VectorXd>;

ConstMap view(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap view(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

/// Gradient buffer of parent i, or nullptr when that parent takes no gradient.
std::vector<double>* grad_of(detail::Node& self, std::size_t i) {
  detail::Node* p = self.parents[i].get();
  if (p == nullptr || !p->requires_grad) return nullptr;
  return &p->grad_buffer();
}

const std::vector<double>& value_of(detail::Node& self, std::size_t i) { return self.parents[i]->value; }

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

void require_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

std::size_t last_dim(const Tensor& x) {
  if (x.rank() == 0) shape_error("tensor", "rank-0 tensor");
  return x.shape().back();
}

/// Leading-dimension product of x with the last `tail` dimensions removed.
std::size_t batch_size(const Shape& s, std::size_t tail) {
  std::size_t b = 1;
  for (std::size_t i = 0; i + tail < s.size(); ++i) b *= s[i];
  return b;
}

struct Rows {
  std::size_t rows;
  std::size_t cols;
};

/// Treats x as a matrix [numel / last, last]; rank-1 inputs are a single row.
Rows as_rows(const Tensor& x) {
  const std::size_t cols = last_dim(x);
  return {cols == 0 ? 0 : x.numel() / cols, cols};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * self.grad[i];
    }
  });
}

Tensor add_row(const Tensor& x, const Tensor& v) {
  const auto [rows, cols] = as_rows(x);
  if (v.numel() != cols) {
    shape_error("add_row", "row vector of " + std::to_string(v.numel()) + " values for width " + std::to_string(cols));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto vv = v.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += vv[c];
  return Tensor::make_result(x.shape(), std::move(out), {x, v}, [rows, cols](detail::Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*g)[c] += self.grad[r * cols + c];
    }
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) shape_error("scale_by", "scale must hold one value, got " + shape_string(s.shape()));
  const double factor = s.values()[0];
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  return Tensor::make_result(x.shape(), std::move(out), {x, s}, [](detail::Node& self) {
    const double factor = value_of(self, 1)[0];
    const auto& xv = value_of(self, 0);
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * self.grad[i];
    }
    if (auto* g = grad_of(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * self.grad[i];
      (*g)[0] += acc;
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return Tensor::make_result({1}, {total}, {x}, [](detail::Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (double& v : *g) v += self.grad[0];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 2 || b.rank() != 2) shape_error("matmul", "operands must be rank 2");
  const std::size_t m = a.dim(0), k = a.dim(1);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
  if (k != kb) shape_error("matmul", "inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  std::vector<double> out(m * n);
  const auto& av = a.node().value;
  const auto& bv = b.node().value;
  if (transpose_b) {
    view(out, m, n).noalias() = view(av, m, k) * view(bv, n, k).transpose();
  } else {
    view(out, m, n).noalias() = view(av, m, k) * view(bv, k, n);
  }
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, n, k, transpose_b](detail::Node& self) {
    const auto g = view(std::as_const(self.grad), m, n);
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    if (auto* ga = grad_of(self, 0)) {
      if (transpose_b) {
        view(*ga, m, k).noalias() += g * view(bv, n, k);
      } else {
        view(*ga, m, k).noalias() += g * view(bv, k, n).transpose();
      }
    }
    if (auto* gb = grad_of(self, 1)) {
      if (transpose_b) {
        view(*gb, n, k).noalias() += g.transpose() * view(av, m, k);
      } else {
        view(*gb, k, n).noalias() += view(av, m, k).transpose() * g;
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto [rows, in] = as_rows(x);
  if (w.rank() != 2 || w.dim(0) != in) {
    shape_error("linear", "input width " + std::to_string(in) + " does not match weight " + shape_string(w.shape()));
  }
  const std::size_t out_dim = w.dim(1);
  if (b.defined() && b.numel() != out_dim) {
    shape_error("linear", "bias " + shape_string(b.shape()) + " does not match output width " + std::to_string(out_dim));
  }
  std::vector<double> out(rows * out_dim);
  auto o = view(out, rows, out_dim);
  o.noalias() = view(x.node().value, rows, in) * view(w.node().value, in, out_dim);
  if (b.defined()) o.rowwise() += ConstVec(b.node().value.data(), static_cast<Eigen::Index>(out_dim)).transpose();
  Shape shape = x.shape();
  shape.back() = out_dim;
  const bool has_bias = b.defined();
  return Tensor::make_result(std::move(shape), std::move(out), {x, w, b}, [rows, in, out_dim, has_bias](detail::Node& self) {
    const auto g = view(std::as_const(self.grad), rows, out_dim);
    if (auto* gx = grad_of(self, 0)) {
      view(*gx, rows, in).noalias() += g * view(value_of(self, 1), in, out_dim).transpose();
    }
    if (auto* gw = grad_of(self, 1)) {
      view(*gw, in, out_dim).noalias() += view(value_of(self, 0), rows, in).transpose() * g;
    }
    if (has_bias) {
      if (auto* gb = grad_of(self, 2)) {
        MutVec(gb->data(), static_cast<Eigen::Index>(out_dim)) += g.colwise().sum().transpose();
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto [rows, cols] = as_rows(x);
  if (gain.numel() != cols || bias.numel() != cols) {
    shape_error("layer_norm", "gain/bias width must equal " + std::to_string(cols));
  }
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(cols);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (row[c] - mean) * rstd[r];
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
        const auto& gv = value_of(self, 1);
        auto* gx = grad_of(self, 0);
        auto* gg = grad_of(self, 1);
        auto* gb = grad_of(self, 2);
        std::vector<double> dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * cols;
          const double* h = xhat.data() + r * cols;
          if (gg) for (std::size_t c = 0; c < cols; ++c) (*gg)[c] += dy[c] * h[c];
          if (gb) for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += dy[c];
          if (!gx) continue;
          double mean_d = 0.0, mean_dh = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            dxhat[c] = dy[c] * gv[c];
            mean_d += dxhat[c];
            mean_dh += dxhat[c] * h[c];
          }
          mean_d /= static_cast<double>(cols);
          mean_dh /= static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            (*gx)[r * cols + c] += rstd[r] * (dxhat[c] - mean_d - h[c] * mean_dh);
          }
        }
      });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xv[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    const auto& xv = value_of(self, 0);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      (*g)[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor dropout(const Tensor& x, const DropoutSpec& spec) {
  if (!spec.training || spec.rate <= 0.0) return x;
  if (spec.rate >= 1.0) throw std::invalid_argument("dropout rate must be below 1");
  const double keep_scale = 1.0 / (1.0 - spec.rate);
  std::vector<double> factor(x.numel());
  for (std::size_t i = 0; i < factor.size(); ++i) {
    factor[i] = hashed_uniform(spec.seed, i) < spec.rate ? 0.0 : keep_scale;
  }
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor[i];
  return Tensor::make_result(x.shape(), std::move(out), {x}, [factor = std::move(factor)](detail::Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor[i];
    }
  });
}

Tensor embed(std::span<const int> ids, const Tensor& table, bool zero_pad) {
  if (table.rank() != 2) shape_error("embed", "table must be rank 2");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<double> out(idv.size() * width, 0.0);
  const auto tv = table.values();
  for (std::size_t s = 0; s < idv.size(); ++s) {
    const int id = idv[s];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      shape_error("embed", "token id " + std::to_string(id) + " outside table of " + std::to_string(vocab) + " rows");
    }
    if (zero_pad && id == 0) continue;
    std::copy_n(tv.data() + static_cast<std::size_t>(id) * width, width, out.data() + s * width);
  }
  const std::size_t n = idv.size();
  return Tensor::make_result({n, width}, std::move(out), {table},
                             [idv = std::move(idv), width, zero_pad](detail::Node& self) {
                               auto* g = grad_of(self, 0);
                               if (!g) return;
                               for (std::size_t s = 0; s < idv.size(); ++s) {
                                 if (zero_pad && idv[s] == 0) continue;
                                 double* dst = g->data() + static_cast<std::size_t>(idv[s]) * width;
                                 for (std::size_t c = 0; c < width; ++c) dst[c] += self.grad[s * width + c];
                               }
                             });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const auto [n_rows, cols] = as_rows(x);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * cols);
  const auto xv = x.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n_rows) shape_error("gather_rows", "row " + std::to_string(idx[i]) + " out of range");
    std::copy_n(xv.data() + idx[i] * cols, cols, out.data() + i * cols);
  }
  const std::size_t n = idx.size();
  return Tensor::make_result({n, cols}, std::move(out), {x}, [idx = std::move(idx), cols](detail::Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) (*g)[idx[i] * cols + c] += self.grad[i * cols + c];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) shape_error("concat_rows", "no inputs");
  const std::size_t cols = last_dim(parts[0]);
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  std::vector<Tensor> parents;
  for (const auto& p : parts) {
    if (last_dim(p) != cols) shape_error("concat_rows", "width mismatch");
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
    parents.push_back(p);
  }
  const std::size_t rows = out.size() / cols;
  return Tensor::make_result({rows, cols}, std::move(out), parents, [offsets = std::move(offsets)](detail::Node& self) {
    for (std::size_t p = 0; p < offsets.size(); ++p) {
      if (auto* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[offsets[p] + i];
      }
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const auto ra = as_rows(a);
  const auto rb = as_rows(b);
  if (ra.rows != rb.rows) shape_error("concat_cols", "row count mismatch");
  const std::size_t rows = ra.rows, ca = ra.cols, cb = rb.cols, w = ca + cb;
  std::vector<double> out(rows * w);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ca, ca, out.data() + r * w);
    std::copy_n(bv.data() + r * cb, cb, out.data() + r * w + ca);
  }
  Shape shape = a.rank() == 1 ? Shape{w} : Shape{rows, w};
  return Tensor::make_result(std::move(shape), std::move(out), {a, b}, [rows, ca, cb, w](detail::Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) (*g)[r * ca + c] += self.grad[r * w + c];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) (*g)[r * cb + c] += self.grad[r * w + ca + c];
    }
  });
}

Tensor mask_rows(const Tensor& x, std::span<const bool> keep) {
  const auto [rows, cols] = as_rows(x);
  if (keep.size() != rows) shape_error("mask_rows", "mask length differs from row count");
  std::vector<double> factor(rows);
  for (std::size_t r = 0; r < rows; ++r) factor[r] = keep[r] ? 1.0 : 0.0;
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t r = 0; r < rows; ++r)
    if (factor[r] == 0.0) std::fill_n(out.data() + r * cols, cols, 0.0);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [factor = std::move(factor), cols](detail::Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < factor.size(); ++r)
      if (factor[r] != 0.0)
        for (std::size_t c = 0; c < cols; ++c) (*g)[r * cols + c] += self.grad[r * cols + c];
  });
}

Tensor mean_rows(const Tensor& x, std::span<const bool> include) {
  const auto [rows, cols] = as_rows(x);
  if (include.size() != rows) shape_error("mean_rows", "mask length differs from row count");
  std::vector<std::size_t> chosen;
  for (std::size_t r = 0; r < rows; ++r)
    if (include[r]) chosen.push_back(r);
  if (chosen.empty()) throw std::invalid_argument("mean_rows: no rows included");
  const double inv = 1.0 / static_cast<double>(chosen.size());
  std::vector<double> out(cols, 0.0);
  const auto xv = x.values();
  for (std::size_t r : chosen)
    for (std::size_t c = 0; c < cols; ++c) out[c] += xv[r * cols + c];
  for (double& v : out) v *= inv;
  return Tensor::make_result({cols}, std::move(out), {x}, [chosen = std::move(chosen), cols, inv](detail::Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r : chosen)
      for (std::size_t c = 0; c < cols; ++c) (*g)[r * cols + c] += inv * self.grad[c];
  });
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 2 || heads == 0 || x.dim(1) % heads != 0) {
    shape_error("split_heads", "cannot split " + shape_string(x.shape()) + " into " + std::to_string(heads) + " heads");
  }
  const std::size_t s = x.dim(0), d = x.dim(1) / heads;
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t t = 0; t < s; ++t)
      std::copy_n(xv.data() + t * heads * d + h * d, d, out.data() + (h * s + t) * d);
  return Tensor::make_result({heads, s, d}, std::move(out), {x}, [heads, s, d](detail::Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < s; ++t)
        for (std::size_t j = 0; j < d; ++j) (*g)[t * heads * d + h * d + j] += self.grad[(h * s + t) * d + j];
  });
}

Tensor merge_heads(const Tensor& x) {
  if (x.rank() != 3) shape_error("merge_heads", "expected [H, S, d], got " + shape_string(x.shape()));
  const std::size_t heads = x.dim(0), s = x.dim(1), d = x.dim(2);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t t = 0; t < s; ++t)
      std::copy_n(xv.data() + (h * s + t) * d, d, out.data() + t * heads * d + h * d);
  return Tensor::make_result({s, heads * d}, std::move(out), {x}, [heads, s, d](detail::Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < s; ++t)
        for (std::size_t j = 0; j < d; ++j) (*g)[(h * s + t) * d + j] += self.grad[t * heads * d + h * d + j];
  });
}

Tensor rope(const Tensor& x, std::span<const std::size_t> positions) {
  if (x.rank() < 2) shape_error("rope", "expected [..., S, d]");
  const std::size_t d = x.shape().back();
  const std::size_t s = x.shape()[x.rank() - 2];
  if (d % 2 != 0) shape_error("rope", "head dimension must be even, got " + std::to_string(d));
  if (positions.size() != s) shape_error("rope", "one position per row required");
  const std::size_t half = d / 2;
  std::vector<double> cosv(s * half), sinv(s * half);
  for (std::size_t t = 0; t < s; ++t) {
    for (std::size_t i = 0; i < half; ++i) {
      const double theta = static_cast<double>(positions[t]) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      cosv[t * half + i] = std::cos(theta);
      sinv[t * half + i] = std::sin(theta);
    }
  }
  const std::size_t batch = batch_size(x.shape(), 2);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < s; ++t) {
      const std::size_t base = (b * s + t) * d;
      for (std::size_t i = 0; i < half; ++i) {
        const double e = xv[base + 2 * i], o = xv[base + 2 * i + 1];
        const double c = cosv[t * half + i], sn = sinv[t * half + i];
        out[base + 2 * i] = e * c - o * sn;
        out[base + 2 * i + 1] = e * sn + o * c;
      }
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [batch, s, d, half, cosv = std::move(cosv), sinv = std::move(sinv)](detail::Node& self) {
                               auto* g = grad_of(self, 0);
                               if (!g) return;
                               for (std::size_t b = 0; b < batch; ++b) {
                                 for (std::size_t t = 0; t < s; ++t) {
                                   const std::size_t base = (b * s + t) * d;
                                   for (std::size_t i = 0; i < half; ++i) {
                                     const double ge = self.grad[base + 2 * i], go = self.grad[base + 2 * i + 1];
                                     const double c = cosv[t * half + i], sn = sinv[t * half + i];
                                     (*g)[base + 2 * i] += ge * c + go * sn;
                                     (*g)[base + 2 * i + 1] += -ge * sn + go * c;
                                   }
                                 }
                               }
                             });
}

namespace {

struct AttentionDims {
  std::size_t batch, sq, sk, d, dv;
};

AttentionDims check_attention(const Tensor& q, const Tensor& k, const Tensor* v, const AttentionMask& mask) {
  if (q.rank() < 2 || k.rank() != q.rank() || (v && v->rank() != q.rank())) {
    shape_error("masked_attention", "Q, K, V must share rank >= 2");
  }
  AttentionDims dims{};
  dims.batch = batch_size(q.shape(), 2);
  dims.sq = q.shape()[q.rank() - 2];
  dims.d = q.shape().back();
  dims.sk = k.shape()[k.rank() - 2];
  if (k.shape().back() != dims.d) shape_error("masked_attention", "Q and K widths differ");
  if (batch_size(k.shape(), 2) != dims.batch) shape_error("masked_attention", "Q and K batch dims differ");
  if (v) {
    if (v->shape()[v->rank() - 2] != dims.sk || batch_size(v->shape(), 2) != dims.batch) {
      shape_error("masked_attention", "V must match K in batch and sequence length");
    }
    dims.dv = v->shape().back();
  }
  if (mask.rows() != dims.sq || mask.cols() != dims.sk) {
    shape_error("masked_attention", "mask is " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                                        ", expected " + std::to_string(dims.sq) + "x" + std::to_string(dims.sk));
  }
  return dims;
}

std::vector<double> compute_weights(const std::vector<double>& qv, const std::vector<double>& kv,
                                    const AttentionDims& dims, const AttentionMask& mask) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dims.d));
  std::vector<double> w(dims.batch * dims.sq * dims.sk, 0.0);
  for (std::size_t b = 0; b < dims.batch; ++b) {
    MutMap scores(w.data() + b * dims.sq * dims.sk, static_cast<Eigen::Index>(dims.sq),
                  static_cast<Eigen::Index>(dims.sk));
    const auto qb = ConstMap(qv.data() + b * dims.sq * dims.d, static_cast<Eigen::Index>(dims.sq),
                             static_cast<Eigen::Index>(dims.d));
    const auto kb = ConstMap(kv.data() + b * dims.sk * dims.d, static_cast<Eigen::Index>(dims.sk),
                             static_cast<Eigen::Index>(dims.d));
    scores.noalias() = (qb * kb.transpose()) * inv_sqrt_d;
    for (std::size_t i = 0; i < dims.sq; ++i) {
      double row_max = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < dims.sk; ++j) {
        if (!mask.forbidden(i, j)) row_max = std::max(row_max, scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
      if (row_max == -std::numeric_limits<double>::infinity()) {
        scores.row(static_cast<Eigen::Index>(i)).setZero();
        continue;
      }
      double total = 0.0;
      for (std::size_t j = 0; j < dims.sk; ++j) {
        double& s = scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        s = mask.forbidden(i, j) ? 0.0 : std::exp(s - row_max);
        total += s;
      }
      scores.row(static_cast<Eigen::Index>(i)) /= total;
    }
  }
  return w;
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k, const AttentionMask& mask) {
  const auto dims = check_attention(q, k, nullptr, mask);
  Shape shape(q.shape().begin(), q.shape().end() - 1);
  shape.push_back(dims.sk);
  return Tensor(std::move(shape), compute_weights(q.node().value, k.node().value, dims, mask));
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask) {
  const auto dims = check_attention(q, k, &v, mask);
  auto w = compute_weights(q.node().value, k.node().value, dims, mask);
  std::vector<double> out(dims.batch * dims.sq * dims.dv);
  const auto& vv = v.node().value;
  for (std::size_t b = 0; b < dims.batch; ++b) {
    MutMap(out.data() + b * dims.sq * dims.dv, static_cast<Eigen::Index>(dims.sq), static_cast<Eigen::Index>(dims.dv))
        .noalias() = ConstMap(w.data() + b * dims.sq * dims.sk, static_cast<Eigen::Index>(dims.sq),
                              static_cast<Eigen::Index>(dims.sk)) *
                     ConstMap(vv.data() + b * dims.sk * dims.dv, static_cast<Eigen::Index>(dims.sk),
                              static_cast<Eigen::Index>(dims.dv));
  }
  Shape shape(q.shape().begin(), q.shape().end() - 1);
  shape.push_back(dims.dv);
  return Tensor::make_result(std::move(shape), std::move(out), {q, k, v}, [dims, w = std::move(w)](detail::Node& self) {
    const auto& qv = value_of(self, 0);
    const auto& kv = value_of(self, 1);
    const auto& vv = value_of(self, 2);
    auto* gq = grad_of(self, 0);
    auto* gk = grad_of(self, 1);
    auto* gv = grad_of(self, 2);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dims.d));
    const auto sq = static_cast<Eigen::Index>(dims.sq), sk = static_cast<Eigen::Index>(dims.sk);
    const auto d = static_cast<Eigen::Index>(dims.d), dv = static_cast<Eigen::Index>(dims.dv);
    RowMat dw(sq, sk), ds(sq, sk);
    for (std::size_t b = 0; b < dims.batch; ++b) {
      const auto wb = ConstMap(w.data() + b * dims.sq * dims.sk, sq, sk);
      const auto gout = ConstMap(self.grad.data() + b * dims.sq * dims.dv, sq, dv);
      const auto vb = ConstMap(vv.data() + b * dims.sk * dims.dv, sk, dv);
      if (gv) MutMap(gv->data() + b * dims.sk * dims.dv, sk, dv).noalias() += wb.transpose() * gout;
      if (!gq && !gk) continue;
      dw.noalias() = gout * vb.transpose();
      // Softmax Jacobian row by row; forbidden entries have w = 0 and drop out.
      for (Eigen::Index i = 0; i < sq; ++i) {
        const double dot = wb.row(i).dot(dw.row(i));
        ds.row(i) = wb.row(i).cwiseProduct((dw.row(i).array() - dot).matrix()) * inv_sqrt_d;
      }
      if (gq) {
        MutMap(gq->data() + b * dims.sq * dims.d, sq, d).noalias() +=
            ds * ConstMap(kv.data() + b * dims.sk * dims.d, sk, d);
      }
      if (gk) {
        MutMap(gk->data() + b * dims.sk * dims.d, sk, d).noalias() +=
            ds.transpose() * ConstMap(qv.data() + b * dims.sq * dims.d, sq, d);
      }
    }
  });
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  double total = 0.0;
  for (double v : logits) total += std::exp(v - m);
  const double lse = m + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets, std::span<const bool> include) {
  const auto [rows, vocab] = as_rows(logits);
  if (targets.size() != rows) shape_error("cross_entropy", "one target per row required");
  if (!include.empty() && include.size() != rows) shape_error("cross_entropy", "mask length differs from row count");
  std::vector<std::size_t> used;
  std::vector<int> tgt;
  std::vector<double> probs;
  double total = 0.0;
  const auto lv = logits.values();
  for (std::size_t r = 0; r < rows; ++r) {
    if (!include.empty() && !include[r]) continue;
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      shape_error("cross_entropy", "target " + std::to_string(t) + " outside " + std::to_string(vocab) + " classes");
    }
    auto lp = log_softmax(lv.subspan(r * vocab, vocab));
    total -= lp[static_cast<std::size_t>(t)];
    used.push_back(r);
    tgt.push_back(t);
    for (double v : lp) probs.push_back(std::exp(v));
  }
  return Tensor::make_result({1}, {total}, {logits},
                             [used = std::move(used), tgt = std::move(tgt), probs = std::move(probs), vocab](detail::Node& self) {
                               auto* g = grad_of(self, 0);
                               if (!g) return;
                               const double up = self.grad[0];
                               for (std::size_t i = 0; i < used.size(); ++i) {
                                 double* row = g->data() + used[i] * vocab;
                                 const double* p = probs.data() + i * vocab;
                                 for (std::size_t c = 0; c < vocab; ++c) row[c] += up * p[c];
                                 row[tgt[i]] -= up;
                               }
                             });
}

}  // namespace lsmtcr::nn
