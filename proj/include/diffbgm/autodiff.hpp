#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
// Graphs are built by free functions returning shared nodes; backward() does
// a depth-first topological sort from the loss and runs the stored pullbacks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "diffbgm/core.hpp"

namespace diffbgm::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;
  std::vector<Var> inputs;
  std::function<void(Node&)> pullback;  // adds into inputs' grads

  explicit Node(Tensor v) : val(std::move(v)), grad(val.dims) {}
};

inline Var leaf(Tensor v) { return std::make_shared<Node>(std::move(v)); }

inline Var make_node(Tensor v, std::vector<Var> in,
                     std::function<void(Node&)> pb) {
  auto n = std::make_shared<Node>(std::move(v));
  n->inputs = std::move(in);
  n->pullback = std::move(pb);
  return n;
}

inline void backward(const Var& loss) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->inputs.size()) {
      Node* c = n->inputs[i++].get();
      if (seen.insert(c).second) stack.push_back({c, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) std::fill(n->grad.v.begin(), n->grad.v.end(), 0.0);
  std::fill(loss->grad.v.begin(), loss->grad.v.end(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->pullback) (*it)->pullback(**it);
}

// ---- elementwise ----

inline Var add(const Var& a, const Var& b) {
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += b->val.v[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      n.inputs[0]->grad.v[i] += n.grad.v[i];
      n.inputs[1]->grad.v[i] += n.grad.v[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= b->val.v[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      n.inputs[0]->grad.v[i] += n.grad.v[i];
      n.inputs[1]->grad.v[i] -= n.grad.v[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a->val;
  for (double& x : out.v) x *= s;
  return make_node(std::move(out), {a}, [s](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      n.inputs[0]->grad.v[i] += s * n.grad.v[i];
  });
}

inline Var silu(const Var& a) {
  Tensor out = a->val;
  for (double& x : out.v) x = x / (1.0 + std::exp(-x));
  return make_node(std::move(out), {a}, [](Node& n) {
    const Tensor& x = n.inputs[0]->val;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-x.v[i]));
      n.inputs[0]->grad.v[i] += n.grad.v[i] * (s + x.v[i] * s * (1.0 - s));
    }
  });
}

// ---- linear algebra ----

// A: m x k, B: k x n
inline Var matmul(const Var& a, const Var& b) {
  std::size_t m = a->val.dims[0], k = a->val.dims[1], n = b->val.dims[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      double av = a->val.v[i * k + l];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j)
        out.v[i * n + j] += av * b->val.v[l * n + j];
    }
  return make_node(std::move(out), {a, b}, [m, k, n](Node& nd) {
    const auto& A = nd.inputs[0]->val.v;
    const auto& B = nd.inputs[1]->val.v;
    auto& dA = nd.inputs[0]->grad.v;
    auto& dB = nd.inputs[1]->grad.v;
    const auto& g = nd.grad.v;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double gv = g[i * n + j];
        if (gv == 0.0) continue;
        for (std::size_t l = 0; l < k; ++l) {
          dA[i * k + l] += gv * B[l * n + j];
          dB[l * n + j] += gv * A[i * k + l];
        }
      }
  });
}

// A: m x k, B: n x k  ->  A B^T : m x n
inline Var matmul_nt(const Var& a, const Var& b) {
  std::size_t m = a->val.dims[0], k = a->val.dims[1], n = b->val.dims[0];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l)
        acc += a->val.v[i * k + l] * b->val.v[j * k + l];
      out.v[i * n + j] = acc;
    }
  return make_node(std::move(out), {a, b}, [m, k, n](Node& nd) {
    const auto& A = nd.inputs[0]->val.v;
    const auto& B = nd.inputs[1]->val.v;
    auto& dA = nd.inputs[0]->grad.v;
    auto& dB = nd.inputs[1]->grad.v;
    const auto& g = nd.grad.v;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double gv = g[i * n + j];
        if (gv == 0.0) continue;
        for (std::size_t l = 0; l < k; ++l) {
          dA[i * k + l] += gv * B[j * k + l];
          dB[j * k + l] += gv * A[i * k + l];
        }
      }
  });
}

// x: L x C, bias: C (broadcast over rows)
inline Var add_row_bias(const Var& x, const Var& bias) {
  std::size_t L = x->val.dims[0], C = x->val.dims[1];
  Tensor out = x->val;
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < C; ++j) out.v[i * C + j] += bias->val.v[j];
  return make_node(std::move(out), {x, bias}, [L, C](Node& n) {
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < C; ++j) {
        n.inputs[0]->grad.v[i * C + j] += n.grad.v[i * C + j];
        n.inputs[1]->grad.v[j] += n.grad.v[i * C + j];
      }
  });
}

// x: L x C, g: C (broadcast multiply over rows)
inline Var mul_row_bias(const Var& x, const Var& g) {
  std::size_t L = x->val.dims[0], C = x->val.dims[1];
  Tensor out = x->val;
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < C; ++j) out.v[i * C + j] *= g->val.v[j];
  return make_node(std::move(out), {x, g}, [L, C](Node& n) {
    const auto& xv = n.inputs[0]->val.v;
    const auto& gv = n.inputs[1]->val.v;
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < C; ++j) {
        n.inputs[0]->grad.v[i * C + j] += n.grad.v[i * C + j] * gv[j];
        n.inputs[1]->grad.v[j] += n.grad.v[i * C + j] * xv[i * C + j];
      }
  });
}

inline Var add_const(const Var& a, double c) {
  Tensor out = a->val;
  for (double& x : out.v) x += c;
  return make_node(std::move(out), {a}, [](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      n.inputs[0]->grad.v[i] += n.grad.v[i];
  });
}

inline Var linear(const Var& x, const Var& w, const Var& bias) {
  return add_row_bias(matmul(x, w), bias);
}

// Same-padded kernel-3 convolution along rows. x: L x C, w: 3 x C x O, b: O.
inline Var conv3(const Var& x, const Var& w, const Var& bias) {
  std::size_t L = x->val.dims[0], C = x->val.dims[1], O = w->val.dims[2];
  Tensor out({L, O});
  for (std::size_t l = 0; l < L; ++l)
    for (int dl = -1; dl <= 1; ++dl) {
      long sl = static_cast<long>(l) + dl;
      if (sl < 0 || sl >= static_cast<long>(L)) continue;
      const double* xr = &x->val.v[sl * C];
      const double* wr = &w->val.v[(dl + 1) * C * O];
      double* orow = &out.v[l * O];
      for (std::size_t c = 0; c < C; ++c) {
        double xv = xr[c];
        if (xv == 0.0) continue;
        const double* wc = wr + c * O;
        for (std::size_t o = 0; o < O; ++o) orow[o] += xv * wc[o];
      }
    }
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t o = 0; o < O; ++o) out.v[l * O + o] += bias->val.v[o];
  return make_node(std::move(out), {x, w, bias}, [L, C, O](Node& n) {
    const auto& X = n.inputs[0]->val.v;
    const auto& W = n.inputs[1]->val.v;
    auto& dX = n.inputs[0]->grad.v;
    auto& dW = n.inputs[1]->grad.v;
    auto& dB = n.inputs[2]->grad.v;
    const auto& g = n.grad.v;
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t o = 0; o < O; ++o) dB[o] += g[l * O + o];
      for (int dl = -1; dl <= 1; ++dl) {
        long sl = static_cast<long>(l) + dl;
        if (sl < 0 || sl >= static_cast<long>(L)) continue;
        for (std::size_t c = 0; c < C; ++c) {
          double xv = X[sl * C + c];
          double acc = 0.0;
          const double* wc = &W[((dl + 1) * C + c) * O];
          const double* gr = &g[l * O];
          for (std::size_t o = 0; o < O; ++o) {
            acc += gr[o] * wc[o];
            dW[((dl + 1) * C + c) * O + o] += gr[o] * xv;
          }
          dX[sl * C + c] += acc;
        }
      }
    }
  });
}

// Fixed linear resampling of rows (the interpolation weights carry no
// parameters). x: T x d -> L x d.
inline Var resample_rows(const Var& x, std::size_t L) {
  std::size_t T = x->val.dims[0], d = x->val.dims[1];
  // precompute (lo, hi, w) per output row
  struct RowMap {
    std::size_t lo, hi;
    double w;
  };
  std::vector<RowMap> map(L);
  for (std::size_t i = 0; i < L; ++i) {
    double src = (L == 1 || T == 1)
                     ? 0.0
                     : static_cast<double>(i) * (T - 1) / (L - 1);
    std::size_t lo = static_cast<std::size_t>(src);
    map[i] = {lo, std::min(lo + 1, T - 1), src - static_cast<double>(lo)};
  }
  Tensor out({L, d});
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.v[i * d + j] = (1.0 - map[i].w) * x->val.v[map[i].lo * d + j] +
                         map[i].w * x->val.v[map[i].hi * d + j];
  return make_node(std::move(out), {x}, [map, L, d](Node& n) {
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        n.inputs[0]->grad.v[map[i].lo * d + j] += (1.0 - map[i].w) * n.grad.v[i * d + j];
        n.inputs[0]->grad.v[map[i].hi * d + j] += map[i].w * n.grad.v[i * d + j];
      }
  });
}

// Mean over adjacent row pairs. x: L x d -> L/2 x d (L even).
inline Var avgpool2_rows(const Var& x) {
  std::size_t L = x->val.dims[0], d = x->val.dims[1];
  std::size_t H = L / 2;
  Tensor out({H, d});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.v[i * d + j] =
          0.5 * (x->val.v[2 * i * d + j] + x->val.v[(2 * i + 1) * d + j]);
  return make_node(std::move(out), {x}, [H, d](Node& n) {
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        n.inputs[0]->grad.v[2 * i * d + j] += 0.5 * n.grad.v[i * d + j];
        n.inputs[0]->grad.v[(2 * i + 1) * d + j] += 0.5 * n.grad.v[i * d + j];
      }
  });
}

// Row softmax with masked positions excluded (weight exactly 0). logits and
// mask: L x L.
inline Var masked_softmax_rows(const Var& logits,
                               const std::vector<std::uint8_t>& mask) {
  std::size_t L = logits->val.dims[0], W = logits->val.dims[1];
  Tensor out({L, W});
  for (std::size_t i = 0; i < L; ++i) {
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < W; ++j)
      if (mask[i * W + j] && logits->val.v[i * W + j] > mx)
        mx = logits->val.v[i * W + j];
    double sum = 0.0;
    for (std::size_t j = 0; j < W; ++j)
      if (mask[i * W + j]) {
        out.v[i * W + j] = std::exp(logits->val.v[i * W + j] - mx);
        sum += out.v[i * W + j];
      }
    for (std::size_t j = 0; j < W; ++j)
      if (mask[i * W + j]) out.v[i * W + j] /= sum;
  }
  Tensor saved = out;
  return make_node(std::move(out), {logits}, [saved, mask, L, W](Node& n) {
    for (std::size_t i = 0; i < L; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < W; ++j)
        if (mask[i * W + j]) dot += n.grad.v[i * W + j] * saved.v[i * W + j];
      for (std::size_t j = 0; j < W; ++j)
        if (mask[i * W + j])
          n.inputs[0]->grad.v[i * W + j] +=
              saved.v[i * W + j] * (n.grad.v[i * W + j] - dot);
    }
  });
}

// Mean of squared entries -> scalar (shape {1}).
inline Var mean_sq(const Var& a) {
  double acc = 0.0;
  for (double x : a->val.v) acc += x * x;
  std::size_t n_entries = a->val.size();
  Tensor out({1});
  out.v[0] = acc / static_cast<double>(n_entries);
  return make_node(std::move(out), {a}, [n_entries](Node& n) {
    double g = n.grad.v[0] * 2.0 / static_cast<double>(n_entries);
    for (std::size_t i = 0; i < n.inputs[0]->val.size(); ++i)
      n.inputs[0]->grad.v[i] += g * n.inputs[0]->val.v[i];
  });
}

}  // namespace diffbgm::ad
