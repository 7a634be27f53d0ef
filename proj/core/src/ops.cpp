#include "reinlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "reinlab/errors.hpp"

REINLAB_NAMESPACE_BEGIN

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

bool should_record(std::span<const Tensor> inputs) {
  if (Tape::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

Tensor new_result(Shape shape, bool record) {
  Tensor t(std::move(shape));
  if (record) {
    t.node()->requires_grad = true;
    t.node()->leaf = false;
  }
  return t;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_row_vector(const Tensor& x, const Tensor& v, const char* op) {
  require_matrix(x, op);
  if (v.ndim() != 1 || v.dim(0) != x.cols()) {
    throw ShapeError(std::string(op) + ": vector " + shape_string(v.shape()) +
                     " does not match columns of " + shape_string(x.shape()));
  }
}

// dst[cols x rows] = src[rows x cols]^T
void transpose_into(std::size_t rows, std::size_t cols, const Scalar* src, Scalar* dst) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
}

std::vector<Scalar> transposed(std::size_t rows, std::size_t cols, const std::vector<Scalar>& src) {
  std::vector<Scalar> out(src.size());
  transpose_into(rows, cols, src.data(), out.data());
  return out;
}

}  // namespace

void gemm_accumulate(std::size_t p, std::size_t q, std::size_t s, const Scalar* a,
                     const Scalar* b, Scalar* c) {
  // Each output element sums over k in ascending order, independent of the
  // row blocking below.
  std::size_t i = 0;
  for (; i + 4 <= p; i += 4) {
    Scalar* c0 = c + i * s;
    Scalar* c1 = c0 + s;
    Scalar* c2 = c1 + s;
    Scalar* c3 = c2 + s;
    const Scalar* a0 = a + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const Scalar v0 = a0[k], v1 = a0[q + k], v2 = a0[2 * q + k], v3 = a0[3 * q + k];
      const Scalar* brow = b + k * s;
      for (std::size_t j = 0; j < s; ++j) {
        const Scalar bj = brow[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < p; ++i) {
    Scalar* crow = c + i * s;
    const Scalar* arow = a + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const Scalar v = arow[k];
      const Scalar* brow = b + k * s;
      for (std::size_t j = 0; j < s; ++j) crow[j] += v * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t p = a.rows(), q = a.cols(), s = b.cols();
  if (b.rows() != q) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const bool record = should_record({&a, &b});
  Tensor out = new_result({p, s}, record);
  gemm_accumulate(p, q, s, a.data().data(), b.data().data(), out.data().data());
  if (record) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    Tape::current()->record({&a, &b}, out, [an, bn, on, p, q, s] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        const auto bt = transposed(q, s, bn->data);
        gemm_accumulate(p, s, q, g.data(), bt.data(), an->grad_buffer().data());
      }
      if (bn->requires_grad) {
        const auto at = transposed(p, q, an->data);
        gemm_accumulate(q, p, s, at.data(), g.data(), bn->grad_buffer().data());
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t p = a.rows(), q = a.cols(), s = b.rows();
  if (b.cols() != q) {
    throw ShapeError("matmul_nt: inner extents differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  }
  const bool record = should_record({&a, &b});
  Tensor out = new_result({p, s}, record);
  {
    std::vector<Scalar> bt(q * s);
    transpose_into(s, q, b.data().data(), bt.data());
    gemm_accumulate(p, q, s, a.data().data(), bt.data(), out.data().data());
  }
  if (record) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    Tape::current()->record({&a, &b}, out, [an, bn, on, p, q, s] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        gemm_accumulate(p, s, q, g.data(), bn->data.data(), an->grad_buffer().data());
      }
      if (bn->requires_grad) {
        const auto gt = transposed(p, s, g);
        gemm_accumulate(s, p, q, gt.data(), an->data.data(), bn->grad_buffer().data());
      }
    });
  }
  return out;
}

namespace {

template <typename Forward, typename GradA, typename GradB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Forward fwd,
                          GradA grad_a, GradB grad_b) {
  require_same_shape(a, b, name);
  const bool record = should_record({&a, &b});
  Tensor out = new_result(a.shape(), record);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(x[i], y[i]);
  if (record) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    Tape::current()->record({&a, &b}, out, [an, bn, on, grad_a, grad_b] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += grad_a(g[i], an->data[i], bn->data[i]);
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += grad_b(g[i], an->data[i], bn->data[i]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](Scalar x, Scalar y) { return x + y; },
      [](Scalar g, Scalar, Scalar) { return g; }, [](Scalar g, Scalar, Scalar) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](Scalar x, Scalar y) { return x - y; },
      [](Scalar g, Scalar, Scalar) { return g; }, [](Scalar g, Scalar, Scalar) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](Scalar x, Scalar y) { return x * y; },
      [](Scalar g, Scalar, Scalar y) { return g * y; },
      [](Scalar g, Scalar x, Scalar) { return g * x; });
}

Tensor scale(const Tensor& x, Scalar factor) {
  const bool record = should_record({&x});
  Tensor out = new_result(x.shape(), record);
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * factor;
  if (record) {
    NodePtr xn = x.node(), on = out.node();
    Tape::current()->record({&x}, out, [xn, on, factor] {
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * factor;
    });
  }
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_row_vector(x, bias, "add_row_bias");
  const std::size_t p = x.rows(), q = x.cols();
  const bool record = should_record({&x, &bias});
  Tensor out = new_result(x.shape(), record);
  auto o = out.data();
  auto in = x.data();
  auto bv = bias.data();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) o[i * q + j] = in[i * q + j] + bv[j];
  }
  if (record) {
    NodePtr xn = x.node(), bn = bias.node(), on = out.node();
    Tape::current()->record({&x, &bias}, out, [xn, bn, on, p, q] {
      const auto& g = on->grad;
      if (xn->requires_grad) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (std::size_t i = 0; i < p; ++i) {
          for (std::size_t j = 0; j < q; ++j) gb[j] += g[i * q + j];
        }
      }
    });
  }
  return out;
}

Tensor mul_row(const Tensor& x, const Tensor& v) {
  require_row_vector(x, v, "mul_row");
  const std::size_t p = x.rows(), q = x.cols();
  const bool record = should_record({&x, &v});
  Tensor out = new_result(x.shape(), record);
  auto o = out.data();
  auto in = x.data();
  auto vv = v.data();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) o[i * q + j] = in[i * q + j] * vv[j];
  }
  if (record) {
    NodePtr xn = x.node(), vn = v.node(), on = out.node();
    Tape::current()->record({&x, &v}, out, [xn, vn, on, p, q] {
      const auto& g = on->grad;
      if (xn->requires_grad) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < p; ++i) {
          for (std::size_t j = 0; j < q; ++j) gx[i * q + j] += g[i * q + j] * vn->data[j];
        }
      }
      if (vn->requires_grad) {
        auto& gv = vn->grad_buffer();
        for (std::size_t i = 0; i < p; ++i) {
          for (std::size_t j = 0; j < q; ++j) gv[j] += g[i * q + j] * xn->data[i * q + j];
        }
      }
    });
  }
  return out;
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_row_bias(matmul(x, weight), bias);
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t p = x.rows(), q = x.cols();
  const bool record = should_record({&x});
  Tensor out = new_result(x.shape(), record);
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < p; ++i) {
    const Scalar* row = in.data() + i * q;
    Scalar* orow = o.data() + i * q;
    Scalar mx = row[0];
    for (std::size_t j = 0; j < q; ++j) {
      if (std::isnan(row[j])) {
        throw NumericError("softmax_rows: NaN at row " + std::to_string(i) + ", column " +
                           std::to_string(j));
      }
      mx = std::max(mx, row[j]);
    }
    Scalar total = 0;
    for (std::size_t j = 0; j < q; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    const Scalar inv = Scalar(1) / total;
    for (std::size_t j = 0; j < q; ++j) orow[j] *= inv;
  }
  if (record) {
    NodePtr xn = x.node(), on = out.node();
    Tape::current()->record({&x}, out, [xn, on, p, q] {
      const auto& g = on->grad;
      const auto& y = on->data;
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < p; ++i) {
        Scalar dot = 0;
        for (std::size_t j = 0; j < q; ++j) dot += g[i * q + j] * y[i * q + j];
        for (std::size_t j = 0; j < q; ++j) gx[i * q + j] += y[i * q + j] * (g[i * q + j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  require_row_vector(x, gamma, "layer_norm_rows");
  require_row_vector(x, beta, "layer_norm_rows");
  const std::size_t p = x.rows(), q = x.cols();
  const bool record = should_record({&x, &gamma, &beta});
  Tensor out = new_result(x.shape(), record);
  std::vector<Scalar> xhat(p * q);
  std::vector<Scalar> rstd(p);
  auto in = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  auto o = out.data();
  for (std::size_t i = 0; i < p; ++i) {
    const Scalar* row = in.data() + i * q;
    Scalar mu = 0;
    for (std::size_t j = 0; j < q; ++j) mu += row[j];
    mu /= static_cast<Scalar>(q);
    Scalar var = 0;
    for (std::size_t j = 0; j < q; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Scalar>(q);
    rstd[i] = Scalar(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < q; ++j) {
      xhat[i * q + j] = (row[j] - mu) * rstd[i];
      o[i * q + j] = xhat[i * q + j] * gm[j] + bt[j];
    }
  }
  if (record) {
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    Tape::current()->record(
        {&x, &gamma, &beta}, out,
        [xn, gn, bn, on, p, q, xhat = std::move(xhat), rstd = std::move(rstd)] {
          const auto& g = on->grad;
          if (gn->requires_grad) {
            auto& gg = gn->grad_buffer();
            for (std::size_t i = 0; i < p; ++i) {
              for (std::size_t j = 0; j < q; ++j) gg[j] += g[i * q + j] * xhat[i * q + j];
            }
          }
          if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < p; ++i) {
              for (std::size_t j = 0; j < q; ++j) gb[j] += g[i * q + j];
            }
          }
          if (xn->requires_grad) {
            auto& gx = xn->grad_buffer();
            const auto& gm = gn->data;
            const Scalar inv_q = Scalar(1) / static_cast<Scalar>(q);
            for (std::size_t i = 0; i < p; ++i) {
              Scalar mean_d = 0, mean_dx = 0;
              for (std::size_t j = 0; j < q; ++j) {
                const Scalar d = g[i * q + j] * gm[j];
                mean_d += d;
                mean_dx += d * xhat[i * q + j];
              }
              mean_d *= inv_q;
              mean_dx *= inv_q;
              for (std::size_t j = 0; j < q; ++j) {
                const Scalar d = g[i * q + j] * gm[j];
                gx[i * q + j] += rstd[i] * (d - mean_d - xhat[i * q + j] * mean_dx);
              }
            }
          }
        });
  }
  return out;
}

namespace {

template <typename Forward, typename Derivative>
Tensor unary_elementwise(const Tensor& x, Forward fwd, Derivative deriv) {
  const bool record = should_record({&x});
  Tensor out = new_result(x.shape(), record);
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(in[i]);
  if (record) {
    NodePtr xn = x.node(), on = out.node();
    Tape::current()->record({&x}, out, [xn, on, deriv] {
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += on->grad[i] * deriv(xn->data[i], on->data[i]);
      }
    });
  }
  return out;
}

constexpr Scalar kGeluK = Scalar(0.7978845608028654);  // sqrt(2 / pi)
constexpr Scalar kGeluC = Scalar(0.044715);

}  // namespace

Tensor gelu(const Tensor& x) {
  return unary_elementwise(
      x,
      [](Scalar v) {
        return Scalar(0.5) * v * (Scalar(1) + std::tanh(kGeluK * (v + kGeluC * v * v * v)));
      },
      [](Scalar v, Scalar) {
        const Scalar t = std::tanh(kGeluK * (v + kGeluC * v * v * v));
        return Scalar(0.5) * (Scalar(1) + t) +
               Scalar(0.5) * v * (Scalar(1) - t * t) * kGeluK *
                   (Scalar(1) + Scalar(3) * kGeluC * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x,
      [](Scalar v) {
        if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  const std::size_t q = x.cols();
  if (count == 0 || begin + count > x.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + shape_string(x.shape()));
  }
  const bool record = should_record({&x});
  Tensor out = new_result({count, q}, record);
  std::copy_n(x.data().data() + begin * q, count * q, out.data().data());
  if (record) {
    NodePtr xn = x.node(), on = out.node();
    Tape::current()->record({&x}, out, [xn, on, begin, q] {
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < on->grad.size(); ++i) gx[begin * q + i] += on->grad[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t p = x.rows(), q = x.cols();
  if (count == 0 || begin + count > q) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + shape_string(x.shape()));
  }
  const bool record = should_record({&x});
  Tensor out = new_result({p, count}, record);
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < p; ++i) {
    std::copy_n(in.data() + i * q + begin, count, o.data() + i * count);
  }
  if (record) {
    NodePtr xn = x.node(), on = out.node();
    Tape::current()->record({&x}, out, [xn, on, p, q, begin, count] {
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < count; ++j) gx[i * q + begin + j] += on->grad[i * count + j];
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t p = parts[0].rows();
  std::size_t total = 0;
  for (const auto& t : parts) {
    if (t.rows() != p) {
      throw ShapeError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(t.shape()));
    }
    total += t.cols();
  }
  const bool record = should_record(parts);
  Tensor out = new_result({p, total}, record);
  auto o = out.data();
  std::size_t offset = 0;
  for (const auto& t : parts) {
    const std::size_t w = t.cols();
    auto in = t.data();
    for (std::size_t i = 0; i < p; ++i) std::copy_n(in.data() + i * w, w, o.data() + i * total + offset);
    offset += w;
  }
  if (record) {
    std::vector<NodePtr> nodes;
    std::vector<const Tensor*> inputs;
    for (const auto& t : parts) {
      nodes.push_back(t.node());
      inputs.push_back(&t);
    }
    NodePtr on = out.node();
    Tape::current()->record(inputs, out, [nodes, on, p, total] {
      std::size_t offset = 0;
      for (const auto& n : nodes) {
        const std::size_t w = n->shape[1];
        if (n->requires_grad) {
          auto& gn = n->grad_buffer();
          for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = 0; j < w; ++j) gn[i * w + j] += on->grad[i * total + offset + j];
          }
        }
        offset += w;
      }
    });
  }
  return out;
}

namespace {

void require_uniform_list(std::span<const Tensor> xs, const char* op) {
  if (xs.empty()) throw ContractError(std::string(op) + ": empty tensor list");
  for (const auto& t : xs) require_same_shape(xs[0], t, op);
}

std::vector<const Tensor*> pointers(std::span<const Tensor> xs) {
  std::vector<const Tensor*> out;
  for (const auto& t : xs) out.push_back(&t);
  return out;
}

std::vector<NodePtr> node_list(std::span<const Tensor> xs) {
  std::vector<NodePtr> out;
  for (const auto& t : xs) out.push_back(t.node());
  return out;
}

}  // namespace

Tensor max_over(std::span<const Tensor> xs) {
  require_uniform_list(xs, "max_over");
  const bool record = should_record(xs);
  Tensor out = new_result(xs[0].shape(), record);
  auto o = out.data();
  std::vector<std::uint32_t> argmax(o.size(), 0);
  std::copy(xs[0].data().begin(), xs[0].data().end(), o.begin());
  for (std::size_t l = 1; l < xs.size(); ++l) {
    auto in = xs[l].data();
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (in[i] > o[i]) {
        o[i] = in[i];
        argmax[i] = static_cast<std::uint32_t>(l);
      }
    }
  }
  if (record) {
    NodePtr on = out.node();
    Tape::current()->record(pointers(xs), out, [nodes = node_list(xs), on, argmax = std::move(argmax)] {
      for (std::size_t i = 0; i < argmax.size(); ++i) {
        const auto& n = nodes[argmax[i]];
        if (n->requires_grad) n->grad_buffer()[i] += on->grad[i];
      }
    });
  }
  return out;
}

Tensor mean_over(std::span<const Tensor> xs) {
  require_uniform_list(xs, "mean_over");
  const bool record = should_record(xs);
  Tensor out = new_result(xs[0].shape(), record);
  auto o = out.data();
  for (const auto& t : xs) {
    auto in = t.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += in[i];
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(xs.size());
  for (auto& v : o) v *= inv;
  if (record) {
    NodePtr on = out.node();
    Tape::current()->record(pointers(xs), out, [nodes = node_list(xs), on, inv] {
      for (const auto& n : nodes) {
        if (!n->requires_grad) continue;
        auto& gn = n->grad_buffer();
        for (std::size_t i = 0; i < gn.size(); ++i) gn[i] += on->grad[i] * inv;
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                     shape_string(shape));
  }
  const bool record = should_record({&x});
  Tensor out = new_result(std::move(shape), record);
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  if (record) {
    NodePtr xn = x.node(), on = out.node();
    Tape::current()->record({&x}, out, [xn, on] {
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const std::size_t p = x.rows(), q = x.cols();
  const bool record = should_record({&x});
  Tensor out = new_result({q, p}, record);
  transpose_into(p, q, x.data().data(), out.data().data());
  if (record) {
    NodePtr xn = x.node(), on = out.node();
    Tape::current()->record({&x}, out, [xn, on, p, q] {
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) gx[i * q + j] += on->grad[j * p + i];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool record = should_record({&x});
  Tensor out = new_result({1}, record);
  Scalar total = 0;
  for (Scalar v : x.data()) total += v;
  out.data()[0] = total;
  if (record) {
    NodePtr xn = x.node(), on = out.node();
    Tape::current()->record({&x}, out, [xn, on] {
      auto& gx = xn->grad_buffer();
      for (auto& g : gx) g += on->grad[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size())); }

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::uint8_t> labels,
                          std::uint8_t ignore_label) {
  require_matrix(logits, "cross_entropy_rows");
  const std::size_t p = logits.rows(), k = logits.cols();
  if (labels.size() != p) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(labels.size()) + " labels for " +
                     shape_string(logits.shape()) + " logits");
  }
  std::size_t count = 0;
  for (auto label : labels) {
    if (label == ignore_label) continue;
    if (label >= k) {
      throw ContractError("cross_entropy_rows: label " + std::to_string(label) +
                          " outside [0, " + std::to_string(k) + ")");
    }
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy_rows: every label is ignored");

  const bool record = should_record({&logits});
  Tensor out = new_result({1}, record);
  auto in = logits.data();
  std::vector<Scalar> probs(record ? p * k : 0);
  Scalar total = 0;
  for (std::size_t i = 0; i < p; ++i) {
    if (labels[i] == ignore_label) continue;
    const Scalar* row = in.data() + i * k;
    Scalar mx = *std::max_element(row, row + k);
    Scalar z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const Scalar log_z = std::log(z) + mx;
    total += log_z - row[labels[i]];
    if (record) {
      for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - log_z);
    }
  }
  const Scalar inv_count = Scalar(1) / static_cast<Scalar>(count);
  out.data()[0] = total * inv_count;
  if (!std::isfinite(out.data()[0])) throw NumericError("cross_entropy_rows: non-finite loss");
  if (record) {
    NodePtr ln = logits.node(), on = out.node();
    std::vector<std::uint8_t> label_copy(labels.begin(), labels.end());
    Tape::current()->record(
        {&logits}, out,
        [ln, on, p, k, inv_count, ignore_label, probs = std::move(probs),
         label_copy = std::move(label_copy)] {
          auto& gl = ln->grad_buffer();
          const Scalar g = on->grad[0] * inv_count;
          for (std::size_t i = 0; i < p; ++i) {
            if (label_copy[i] == ignore_label) continue;
            for (std::size_t j = 0; j < k; ++j) {
              const Scalar target = j == label_copy[i] ? Scalar(1) : Scalar(0);
              gl[i * k + j] += g * (probs[i * k + j] - target);
            }
          }
        });
  }
  return out;
}

REINLAB_NAMESPACE_END
