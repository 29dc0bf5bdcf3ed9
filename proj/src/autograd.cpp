#include "settp/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "settp/error.hpp"
#include "settp/kernels.hpp"

namespace settp::ad {

Var Tape::push(Matrix value, bool requires_grad) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = grad_enabled_ && requires_grad;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false); }

Var Tape::leaf(const Matrix& value, bool requires_grad) {
  Node node;
  node.external = &value;
  node.requires_grad = grad_enabled_ && requires_grad;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.external != nullptr ? *n.external : n.owned;
}

bool Tape::any_grad(std::initializer_list<Var> vs) const {
  return std::any_of(vs.begin(), vs.end(), [this](Var v) { return nodes_[v.id].requires_grad; });
}

Matrix& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) {
    const Matrix& val = value(v);
    n.grad = Matrix(val.rows(), val.cols());
  }
  return n.grad;
}

Var Tape::matmul(Var a, Var b) {
  Matrix out;
  kernels::gemm_nn(value(a), value(b), out);
  const Var r = push(std::move(out), any_grad({a, b}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, b, r] {
      const Matrix& g = nodes_[r.id].grad;
      if (requires_grad(a)) kernels::gemm_nt(g, value(b), grad_buffer(a), true);
      if (requires_grad(b)) kernels::gemm_tn(value(a), g, grad_buffer(b), true);
    };
  }
  return r;
}

Var Tape::matmul_nt(Var a, Var b) {
  Matrix out;
  kernels::gemm_nt(value(a), value(b), out);
  const Var r = push(std::move(out), any_grad({a, b}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, b, r] {
      const Matrix& g = nodes_[r.id].grad;
      if (requires_grad(a)) kernels::gemm_nn(g, value(b), grad_buffer(a), true);
      if (requires_grad(b)) kernels::gemm_tn(g, value(a), grad_buffer(b), true);
    };
  }
  return r;
}

Var Tape::add(Var a, Var b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (!va.same_shape(vb)) throw Error(ErrorKind::dimension_mismatch, "add: shape mismatch");
  Matrix out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += vb.data()[i];
  const Var r = push(std::move(out), any_grad({a, b}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, b, r] {
      const Matrix& g = nodes_[r.id].grad;
      for (Var x : {a, b}) {
        if (!requires_grad(x)) continue;
        Matrix& gx = grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += g.data()[i];
      }
    };
  }
  return r;
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& va = value(a);
  const Matrix& vr = value(row);
  if (vr.rows() != 1 || vr.cols() != va.cols()) {
    throw Error(ErrorKind::dimension_mismatch, "add_row: bias shape");
  }
  Matrix out = va;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t j = 0; j < out.cols(); ++j) dst[j] += vr(0, j);
  }
  const Var r = push(std::move(out), any_grad({a, row}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, row, r] {
      const Matrix& g = nodes_[r.id].grad;
      if (requires_grad(a)) {
        Matrix& ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i];
      }
      if (requires_grad(row)) {
        Matrix& gr = grad_buffer(row);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
        }
      }
    };
  }
  return r;
}

Var Tape::relu(Var a) {
  Matrix out = value(a);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const Var r = push(std::move(out), any_grad({a}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, r] {
      const Matrix& g = nodes_[r.id].grad;
      const Matrix& x = value(a);
      Matrix& ga = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x.data()[i] > 0.0) ga.data()[i] += g.data()[i];
      }
    };
  }
  return r;
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& vx = value(x);
  const Matrix& vg = value(gain);
  const Matrix& vb = value(bias);
  const std::size_t n = vx.rows(), d = vx.cols();
  if (vg.rows() != 1 || vg.cols() != d || !vg.same_shape(vb)) {
    throw Error(ErrorKind::dimension_mismatch, "layer_norm: parameter shape");
  }
  Matrix xhat(n, d);
  std::vector<double> inv_std(n);
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = vx.row(i);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (row[j] - mean) * inv_std[i];
      out(i, j) = xhat(i, j) * vg(0, j) + vb(0, j);
    }
  }
  const Var r = push(std::move(out), any_grad({x, gain, bias}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, x, gain, bias, r, xhat = std::move(xhat),
                             inv_std = std::move(inv_std)] {
      const Matrix& g = nodes_[r.id].grad;
      const Matrix& vg = value(gain);
      const std::size_t n = g.rows(), d = g.cols();
      if (requires_grad(gain) || requires_grad(bias)) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            if (requires_grad(gain)) grad_buffer(gain)(0, j) += g(i, j) * xhat(i, j);
            if (requires_grad(bias)) grad_buffer(bias)(0, j) += g(i, j);
          }
        }
      }
      if (!requires_grad(x)) return;
      Matrix& gx = grad_buffer(x);
      std::vector<double> dxhat(d);
      for (std::size_t i = 0; i < n; ++i) {
        double sum_d = 0.0, sum_dx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dxhat[j] = g(i, j) * vg(0, j);
          sum_d += dxhat[j];
          sum_dx += dxhat[j] * xhat(i, j);
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          gx(i, j) += inv_std[i] * (dxhat[j] - inv_d * sum_d - xhat(i, j) * inv_d * sum_dx);
        }
      }
    };
  }
  return r;
}

Var Tape::concat_rows(Var top, Var bottom) {
  const Matrix& a = value(top);
  const Matrix& b = value(bottom);
  if (a.cols() != b.cols()) throw Error(ErrorKind::dimension_mismatch, "concat_rows: width");
  Matrix out(a.rows() + b.rows(), a.cols());
  std::copy(a.values().begin(), a.values().end(), out.data());
  std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
  const Var r = push(std::move(out), any_grad({top, bottom}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, top, bottom, r] {
      const Matrix& g = nodes_[r.id].grad;
      const std::size_t split = value(top).size();
      if (requires_grad(top)) {
        Matrix& gt = grad_buffer(top);
        for (std::size_t i = 0; i < split; ++i) gt.data()[i] += g.data()[i];
      }
      if (requires_grad(bottom)) {
        Matrix& gb = grad_buffer(bottom);
        for (std::size_t i = split; i < g.size(); ++i) gb.data()[i - split] += g.data()[i];
      }
    };
  }
  return r;
}

Var Tape::gather_rows(Var table, std::span<const int> ids) {
  const Matrix& t = value(table);
  Matrix out(ids.size(), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= t.rows()) {
      throw Error(ErrorKind::invalid_argument, "gather_rows: id out of range");
    }
    const auto src = t.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const Var r = push(std::move(out), any_grad({table}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, table, r, ids = std::vector<int>(ids.begin(), ids.end())] {
      const Matrix& g = nodes_[r.id].grad;
      Matrix& gt = grad_buffer(table);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        auto dst = gt.row(static_cast<std::size_t>(ids[i]));
        const auto src = g.row(i);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
      }
    };
  }
  return r;
}

Var Tape::take_rows(Var a, std::size_t count) {
  const Matrix& va = value(a);
  if (count > va.rows()) throw Error(ErrorKind::invalid_argument, "take_rows: count");
  Matrix out(count, va.cols());
  std::copy(va.data(), va.data() + out.size(), out.data());
  const Var r = push(std::move(out), any_grad({a}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, r] {
      const Matrix& g = nodes_[r.id].grad;
      Matrix& ga = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i];
    };
  }
  return r;
}

Var Tape::attention(Var q, Var k, Var v, std::size_t heads, bool causal) {
  const Matrix& vq = value(q);
  const Matrix& vk = value(k);
  const Matrix& vv = value(v);
  const std::size_t n = vq.rows(), t = vk.rows(), d = vq.cols();
  if (vk.cols() != d || vv.cols() != d || vv.rows() != t || heads == 0 || d % heads != 0) {
    throw Error(ErrorKind::dimension_mismatch, "attention: shapes");
  }
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs[h] is n x t
  std::vector<Matrix> probs(heads, Matrix(n, t));
  Matrix out(n, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Matrix& p = probs[h];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t visible = causal ? std::min(i + 1, t) : t;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < visible; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += vq(i, off + c) * vk(j, off + c);
        p(i, j) = s * scale;
        mx = std::max(mx, p(i, j));
      }
      double z = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        p(i, j) = std::exp(p(i, j) - mx);
        z += p(i, j);
      }
      for (std::size_t j = 0; j < visible; ++j) p(i, j) /= z;
      for (std::size_t j = visible; j < t; ++j) p(i, j) = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        const double pij = p(i, j);
        for (std::size_t c = 0; c < dh; ++c) out(i, off + c) += pij * vv(j, off + c);
      }
    }
  }
  const Var r = push(std::move(out), any_grad({q, k, v}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, q, k, v, r, heads, scale, probs = std::move(probs)] {
      const Matrix& g = nodes_[r.id].grad;
      const Matrix& vq = value(q);
      const Matrix& vk = value(k);
      const Matrix& vv = value(v);
      const std::size_t n = vq.rows(), t = vk.rows(), d = vq.cols(), dh = d / heads;
      Matrix* gq = requires_grad(q) ? &grad_buffer(q) : nullptr;
      Matrix* gk = requires_grad(k) ? &grad_buffer(k) : nullptr;
      Matrix* gv = requires_grad(v) ? &grad_buffer(v) : nullptr;
      std::vector<double> dp(t);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        const Matrix& p = probs[h];
        for (std::size_t i = 0; i < n; ++i) {
          // dP_ij = dO_i . V_j ; dS_ij = P_ij (dP_ij - sum_l P_il dP_il)
          double weighted = 0.0;
          for (std::size_t j = 0; j < t; ++j) {
            double s = 0.0;
            if (p(i, j) != 0.0) {
              for (std::size_t c = 0; c < dh; ++c) s += g(i, off + c) * vv(j, off + c);
            }
            dp[j] = s;
            weighted += p(i, j) * s;
          }
          for (std::size_t j = 0; j < t; ++j) {
            const double pij = p(i, j);
            if (pij == 0.0) continue;
            if (gv != nullptr) {
              for (std::size_t c = 0; c < dh; ++c) (*gv)(j, off + c) += pij * g(i, off + c);
            }
            const double ds = pij * (dp[j] - weighted) * scale;
            if (gq != nullptr) {
              for (std::size_t c = 0; c < dh; ++c) (*gq)(i, off + c) += ds * vk(j, off + c);
            }
            if (gk != nullptr) {
              for (std::size_t c = 0; c < dh; ++c) (*gk)(j, off + c) += ds * vq(i, off + c);
            }
          }
        }
      }
    };
  }
  return r;
}

Var Tape::cross_entropy(Var logits, std::span<const int> targets) {
  const Matrix& z = value(logits);
  if (targets.size() != z.rows()) {
    throw Error(ErrorKind::dimension_mismatch, "cross_entropy: target count");
  }
  Matrix probs(z.rows(), z.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto row = z.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      probs(i, j) = std::exp(row[j] - mx);
      sum += probs(i, j);
    }
    for (std::size_t j = 0; j < row.size(); ++j) probs(i, j) /= sum;
    const auto tgt = static_cast<std::size_t>(targets[i]);
    if (tgt >= row.size()) throw Error(ErrorKind::invalid_argument, "cross_entropy: target id");
    loss -= row[tgt] - mx - std::log(sum);
  }
  Matrix out(1, 1, loss);
  const Var r = push(std::move(out), any_grad({logits}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, logits, r, probs = std::move(probs),
                             targets = std::vector<int>(targets.begin(), targets.end())] {
      const double g = nodes_[r.id].grad(0, 0);
      Matrix& gz = grad_buffer(logits);
      for (std::size_t i = 0; i < probs.rows(); ++i) {
        for (std::size_t j = 0; j < probs.cols(); ++j) {
          gz(i, j) += g * (probs(i, j) - (static_cast<int>(j) == targets[i] ? 1.0 : 0.0));
        }
      }
    };
  }
  return r;
}

void Tape::backward(Var root) {
  const Matrix& v = value(root);
  if (v.rows() != 1 || v.cols() != 1) throw Error(ErrorKind::invalid_argument, "backward: non-scalar root");
  if (!nodes_[root.id].requires_grad) return;
  grad_buffer(root)(0, 0) = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward();
  }
}

}  // namespace settp::ad
