#pragma once

// Segment-aware cross-attention: block-diagonal mask over condition frames
// and the masked single-head attention layer. Masked keys are excluded from
// the row softmax entirely, so their weight is exactly zero.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "diffbgm/core.hpp"

namespace diffbgm {

struct SegmentMask {
  std::size_t size = 0;   // L
  std::size_t block = 0;  // k
  std::vector<std::uint8_t> m;  // L x L, row-major

  bool at(std::size_t i, std::size_t j) const { return m[i * size + j] != 0; }
};

// m[i][j] = 1 iff floor(i/k) == floor(j/k); the last block may be smaller.
inline SegmentMask build_mask(std::size_t L, std::size_t k) {
  SegmentMask mask;
  mask.size = L;
  mask.block = k;
  mask.m.assign(L * L, 0);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j)
      if (i / k == j / k) mask.m[i * L + j] = 1;
  return mask;
}

struct AttentionParams {
  Tensor w_q;  // d_model x d_key
  Tensor w_k;  // d_cond x d_key
  Tensor w_v;  // d_cond x d_val
  Tensor w_o;  // d_val x d_model
};

// Pure-function layer: out = x + softmax_rows(mask((x Wq)(Fc Wk)^T / sqrt(dk)))
// (Fc Wv) Wo. x: L x d_model, fc: L x d_cond.
inline Tensor segment_cross_attention(const Tensor& x, const Tensor& fc,
                                      const AttentionParams& p,
                                      const SegmentMask& mask) {
  std::size_t L = x.dims[0], dm = x.dims[1];
  std::size_t dc = fc.dims[1];
  std::size_t dk = p.w_q.dims[1], dv = p.w_v.dims[1];
  if (p.w_q.dims[0] != dm || p.w_k.dims[0] != dc || p.w_v.dims[0] != dc ||
      p.w_o.dims[0] != dv || p.w_o.dims[1] != dm || fc.dims[0] != L ||
      p.w_k.dims[1] != dk)
    throw std::invalid_argument("segment_cross_attention: dimension mismatch");

  auto matmul2 = [](const Tensor& a, const Tensor& b) {
    Tensor out({a.dims[0], b.dims[1]});
    for (std::size_t i = 0; i < a.dims[0]; ++i)
      for (std::size_t l = 0; l < a.dims[1]; ++l) {
        double av = a.at(i, l);
        for (std::size_t j = 0; j < b.dims[1]; ++j)
          out.at(i, j) += av * b.at(l, j);
      }
    return out;
  };

  Tensor q = matmul2(x, p.w_q);
  Tensor key = matmul2(fc, p.w_k);
  Tensor val = matmul2(fc, p.w_v);
  double inv = 1.0 / std::sqrt(static_cast<double>(dk));

  Tensor mixed({L, dv});
  for (std::size_t i = 0; i < L; ++i) {
    double mx = -HUGE_VAL;
    std::vector<double> logit(L, 0.0);
    for (std::size_t j = 0; j < L; ++j) {
      if (!mask.at(i, j)) continue;
      double acc = 0.0;
      for (std::size_t l = 0; l < dk; ++l) acc += q.at(i, l) * key.at(j, l);
      logit[j] = acc * inv;
      if (logit[j] > mx) mx = logit[j];
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < L; ++j)
      if (mask.at(i, j)) {
        logit[j] = std::exp(logit[j] - mx);
        sum += logit[j];
      }
    for (std::size_t j = 0; j < L; ++j) {
      if (!mask.at(i, j)) continue;
      double w = logit[j] / sum;
      for (std::size_t l = 0; l < dv; ++l) mixed.at(i, l) += w * val.at(j, l);
    }
  }

  Tensor proj = matmul2(mixed, p.w_o);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += proj.v[i];
  return out;
}

}  // namespace diffbgm
