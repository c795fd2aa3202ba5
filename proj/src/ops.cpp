#include "latentscale/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace latentscale::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat as_mat(const Tensor& t) { return CMapMat(t.data(), t.rows(), t.cols()); }
MapMat as_mat(Tensor& t) { return MapMat(t.data(), t.rows(), t.cols()); }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                              b.shape_string());
}

Tensor like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  return a.tape->record("matmul", std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) as_mat(t.grad(a.index)).noalias() += as_mat(g) * as_mat(b.value()).transpose();
    if (t.requires_grad(b)) as_mat(t.grad(b.index)).noalias() += as_mat(a.value()).transpose() * as_mat(g);
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = !av.same_shape(bv);
  if (broadcast && !(bv.rows() == 1 && bv.cols() == av.cols())) shape_error("add", av, bv);
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[broadcast ? i % cols : i];
  return a.tape->record("add", std::move(out), {a, b}, [a, b, broadcast, cols](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a.index);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b.index);
      for (std::size_t i = 0; i < g.size(); ++i) gb[broadcast ? i % cols : i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) shape_error("sub", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record("sub", std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a.index);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b.index);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) shape_error("mul", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record("mul", std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a.index);
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b.index);
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= c;
  return a.tape->record("scale", std::move(out), {a}, [a, c](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a.index);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var gelu(Var x) {
  const Tensor& xv = x.value();
  Tensor out = like(xv);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return x.tape->record("gelu", std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = x.value();
    Tensor& gx = t.grad(x.index);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      gx[i] += g[i] * d;
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return x.tape->record("relu", std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = x.value();
    Tensor& gx = t.grad(x.index);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  Tape* tape = x.tape;
  return tape->record("sigmoid", std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(x.index);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  if (gamma.value().size() != cols || beta.value().size() != cols) {
    shape_error("layer_norm", xv, gamma.value());
  }
  Tensor xhat = like(xv);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = xv.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto out_row = xhat.row(r);
    for (std::size_t c = 0; c < cols; ++c) out_row[c] = (row[c] - mu) * inv_std[r];
  }
  Tensor out = xhat;
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * gv[i % cols] + bv[i % cols];
  return x.tape->record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, cols](Tape& t,
                                                                                       std::uint32_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(gamma)) {
          Tensor& gg = t.grad(gamma.index);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % cols] += g[i] * xhat[i];
        }
        if (t.requires_grad(beta)) {
          Tensor& gb = t.grad(beta.index);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
        }
        if (t.requires_grad(x)) {
          const Tensor& gv = gamma.value();
          Tensor& gx = t.grad(x.index);
          std::vector<double> dxhat(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              dxhat[c] = g(r, c) * gv[c];
              mean_d += dxhat[c];
              mean_dx += dxhat[c] * xhat(r, c);
            }
            mean_d /= static_cast<double>(cols);
            mean_dx /= static_cast<double>(cols);
            for (std::size_t c = 0; c < cols; ++c) {
              gx(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
            }
          }
        }
      });
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
  Tensor out = x;
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  const std::size_t lines = axis == 1 ? rows : cols;
  const std::size_t len = axis == 1 ? cols : rows;
  const std::size_t stride = axis == 1 ? 1 : cols;
  for (std::size_t l = 0; l < lines; ++l) {
    double* base = out.data() + (axis == 1 ? l * cols : l);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, base[k * stride]);
    double total = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      base[k * stride] = std::exp(base[k * stride] - mx);
      total += base[k * stride];
    }
    for (std::size_t k = 0; k < len; ++k) base[k * stride] /= total;
  }
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double total = 0.0;
  for (double v : logits) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& v : out) v -= lse;
  return out;
}

Var softmax(Var x, int axis) {
  Tensor out = softmax(x.value(), axis);
  return x.tape->record("softmax", std::move(out), {x}, [x, axis](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(x.index);
    const std::size_t rows = y.rows();
    const std::size_t cols = y.cols();
    const std::size_t lines = axis == 1 ? rows : cols;
    const std::size_t len = axis == 1 ? cols : rows;
    const std::size_t stride = axis == 1 ? 1 : cols;
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t base = axis == 1 ? l * cols : l;
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += g[base + k * stride] * y[base + k * stride];
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t i = base + k * stride;
        gx[i] += y[i] * (g[i] - dot);
      }
    }
  });
}

Var dropout(Var x, double rate, RngStream& rng, bool enabled) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!enabled || rate == 0.0) return x;
  const Tensor& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask = like(xv);
  for (double& m : mask.values()) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape->record("dropout", std::move(out), {x}, [x, mask = std::move(mask)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.index);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  const std::size_t cols = tv.cols();
  if (ids.empty()) throw std::invalid_argument("embedding: empty id list");
  Tensor out = Tensor::matrix(ids.size(), cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * cols, cols, out.data() + r * cols);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape->record("embedding", std::move(out), {table},
                            [table, idv = std::move(idv), cols](Tape& t, std::uint32_t self) {
                              const Tensor& g = t.grad(self);
                              Tensor& gt = t.grad(table.index);
                              for (std::size_t r = 0; r < idv.size(); ++r) {
                                double* dst = gt.data() + static_cast<std::size_t>(idv[r]) * cols;
                                const double* src = g.data() + r * cols;
                                for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                              }
                            });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  if (parts.size() == 1) return parts[0];
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
    rows += p.rows();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    std::copy_n(pv.data(), pv.size(), out.data() + offset);
    offset += pv.size();
  }
  std::vector<Var> pv(parts.begin(), parts.end());
  return parts[0].tape->record("concat_rows", std::move(out), parts, [pv](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    std::size_t offset = 0;
    for (const Var& p : pv) {
      const std::size_t n = p.value().size();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad(p.index);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var concat_rows(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_rows(parts);
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin >= end || end > xv.rows()) {
    throw std::out_of_range("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                            xv.shape_string());
  }
  const std::size_t cols = xv.cols();
  Tensor out = Tensor::matrix(end - begin, cols);
  std::copy_n(xv.data() + begin * cols, out.size(), out.data());
  return x.tape->record("slice_rows", std::move(out), {x}, [x, begin, cols](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.index);
    double* dst = gx.data() + begin * cols;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin >= end || end > xv.cols()) {
    throw std::out_of_range("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                            xv.shape_string());
  }
  const std::size_t rows = xv.rows();
  const std::size_t width = end - begin;
  Tensor out = Tensor::matrix(rows, width);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * xv.cols() + begin, width, out.data() + r * width);
  return x.tape->record("slice_cols", std::move(out), {x}, [x, begin, width](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.index);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < width; ++c) gx(r, begin + c) += g(r, c);
    }
  });
}

Var causal_attention(Var q, Var k, Var v, std::size_t heads, AttentionDropout drop) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t n = qv.rows();
  const std::size_t m = kv.rows();
  const std::size_t d = qv.cols();
  if (kv.cols() != d || vv.cols() != d || vv.rows() != m || m < n) shape_error("causal_attention", qv, kv);
  if (heads == 0 || d % heads != 0) throw std::invalid_argument("causal_attention: d not divisible by heads");
  const std::size_t hd = d / heads;
  const std::size_t offset = m - n;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool use_drop = drop.enabled && drop.rate > 0.0;
  if (use_drop && drop.rng == nullptr) throw std::invalid_argument("causal_attention: dropout needs an rng");
  const double keep_scale = use_drop ? 1.0 / (1.0 - drop.rate) : 1.0;

  // probs[h] holds the post-softmax, pre-dropout matrix [n x m]; dropped[h]
  // the matrix actually applied to V.
  std::vector<RowMat> probs(heads);
  std::vector<RowMat> dropped;
  if (use_drop) dropped.resize(heads);
  Tensor out = Tensor::matrix(n, d);
  CMapMat Q = as_mat(qv);
  CMapMat K = as_mat(kv);
  CMapMat V = as_mat(vv);
  MapMat O = as_mat(out);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h * hd);
    const auto w = static_cast<Eigen::Index>(hd);
    RowMat s = (Q.middleCols(c0, w) * K.middleCols(c0, w).transpose()) * inv_sqrt;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t last = offset + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= last; ++j) mx = std::max(mx, s(i, j));
      double total = 0.0;
      for (std::size_t j = 0; j <= last; ++j) {
        s(i, j) = std::exp(s(i, j) - mx);
        total += s(i, j);
      }
      for (std::size_t j = 0; j <= last; ++j) s(i, j) /= total;
      for (std::size_t j = last + 1; j < m; ++j) s(i, j) = 0.0;
    }
    probs[h] = std::move(s);
    if (use_drop) {
      dropped[h] = probs[h];
      for (Eigen::Index i = 0; i < dropped[h].size(); ++i) {
        const double keep = drop.rng->uniform() < drop.rate ? 0.0 : keep_scale;
        dropped[h].data()[i] *= keep;
      }
      O.middleCols(c0, w).noalias() = dropped[h] * V.middleCols(c0, w);
    } else {
      O.middleCols(c0, w).noalias() = probs[h] * V.middleCols(c0, w);
    }
  }
  return q.tape->record(
      "causal_attention", std::move(out), {q, k, v},
      [q, k, v, heads, hd, inv_sqrt, use_drop, probs = std::move(probs), dropped = std::move(dropped)](
          Tape& t, std::uint32_t self) {
        const Tensor& grad_out = t.grad(self);
        CMapMat G = as_mat(grad_out);
        CMapMat Q = as_mat(q.value());
        CMapMat K = as_mat(k.value());
        CMapMat V = as_mat(v.value());
        const bool gq = t.requires_grad(q);
        const bool gk = t.requires_grad(k);
        const bool gv = t.requires_grad(v);
        for (std::size_t h = 0; h < heads; ++h) {
          const auto c0 = static_cast<Eigen::Index>(h * hd);
          const auto w = static_cast<Eigen::Index>(hd);
          const RowMat& p = probs[h];
          const RowMat& applied = use_drop ? dropped[h] : p;
          if (gv) as_mat(t.grad(v.index)).middleCols(c0, w).noalias() += applied.transpose() * G.middleCols(c0, w);
          if (!gq && !gk) continue;
          RowMat dp = G.middleCols(c0, w) * V.middleCols(c0, w).transpose();
          if (use_drop) {
            // d(applied)/d(p) is the keep mask, recoverable as applied / p.
            for (Eigen::Index i = 0; i < dp.size(); ++i) {
              const double pi = p.data()[i];
              dp.data()[i] = pi > 0.0 ? dp.data()[i] * (applied.data()[i] / pi) : 0.0;
            }
          }
          RowMat ds(p.rows(), p.cols());
          for (Eigen::Index i = 0; i < p.rows(); ++i) {
            const double dot = p.row(i).dot(dp.row(i));
            ds.row(i) = p.row(i).cwiseProduct(dp.row(i)) - dot * p.row(i);
          }
          ds *= inv_sqrt;
          if (gq) as_mat(t.grad(q.index)).middleCols(c0, w).noalias() += ds * K.middleCols(c0, w);
          if (gk) as_mat(t.grad(k.index)).middleCols(c0, w).noalias() += ds.transpose() * Q.middleCols(c0, w);
        }
      });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.tape->record("sum", Tensor::scalar(total), {x}, [x](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(x.index).values()) v += g;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.tape->record("mean", Tensor::scalar(total / n), {x}, [x, n](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0] / n;
    for (double& v : t.grad(x.index).values()) v += g;
  });
}

double cross_entropy(double pred, double label) {
  const double p = std::clamp(pred, kProbEps, 1.0 - kProbEps);
  return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

double mse(double pred, double target) { return (pred - target) * (pred - target); }

Var binary_cross_entropy(Var pred, std::span<const double> labels) {
  const Tensor& pv = pred.value();
  if (pv.size() != labels.size()) throw std::invalid_argument("binary_cross_entropy: label count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) total += cross_entropy(pv[i], labels[i]);
  const double n = static_cast<double>(pv.size());
  std::vector<double> lab(labels.begin(), labels.end());
  return pred.tape->record("binary_cross_entropy", Tensor::scalar(total / n), {pred},
                           [pred, lab = std::move(lab), n](Tape& t, std::uint32_t self) {
                             const double g = t.grad(self)[0] / n;
                             const Tensor& pv = pred.value();
                             Tensor& gp = t.grad(pred.index);
                             for (std::size_t i = 0; i < pv.size(); ++i) {
                               const double p = pv[i];
                               if (p <= kProbEps || p >= 1.0 - kProbEps) continue;
                               gp[i] += g * (-lab[i] / p + (1.0 - lab[i]) / (1.0 - p));
                             }
                           });
}

Var mse_loss(Var pred, std::span<const double> targets) {
  const Tensor& pv = pred.value();
  if (pv.size() != targets.size()) throw std::invalid_argument("mse_loss: target count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) total += mse(pv[i], targets[i]);
  const double n = static_cast<double>(pv.size());
  std::vector<double> tg(targets.begin(), targets.end());
  return pred.tape->record("mse_loss", Tensor::scalar(total / n), {pred},
                           [pred, tg = std::move(tg), n](Tape& t, std::uint32_t self) {
                             const double g = t.grad(self)[0] / n;
                             const Tensor& pv = pred.value();
                             Tensor& gp = t.grad(pred.index);
                             for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g * 2.0 * (pv[i] - tg[i]);
                           });
}

Var token_cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& lv = logits.value();
  if (lv.rows() != targets.size()) throw std::invalid_argument("token_cross_entropy: target count mismatch");
  const std::size_t vocab = lv.cols();
  Tensor probs = softmax(lv, 1);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= vocab) throw std::out_of_range("token_cross_entropy: target id");
    total -= log_softmax(lv.row(r))[static_cast<std::size_t>(targets[r])];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("token_cross_entropy: every target is masked");
  const double n = static_cast<double>(count);
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.tape->record(
      "token_cross_entropy", Tensor::scalar(total / n), {logits},
      [logits, tg = std::move(tg), probs = std::move(probs), n, vocab](Tape& t, std::uint32_t self) {
        const double g = t.grad(self)[0] / n;
        Tensor& gl = t.grad(logits.index);
        for (std::size_t r = 0; r < tg.size(); ++r) {
          if (tg[r] < 0) continue;
          for (std::size_t c = 0; c < vocab; ++c) gl(r, c) += g * probs(r, c);
          gl(r, static_cast<std::size_t>(tg[r])) -= g;
        }
      });
}

}  // namespace latentscale::num
