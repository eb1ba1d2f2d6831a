#pragma once

// The trainable noise-prediction network: a two-level encoder-decoder over
// the piano roll viewed as a time sequence (feature dim = 2 * pitches), with
// residual convolution blocks carrying FiLM-style timestep modulation, a
// learned positional embedding, a timestep-gated input skip, and
// segment-aware cross-attention at every level. Conditioning swaps between
// the dynamic (Fv) and semantic (Fl) feature streams at timestep t0.

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "diffbgm/attention.hpp"
#include "diffbgm/autodiff.hpp"
#include "diffbgm/conditioning.hpp"
#include "diffbgm/diffusion.hpp"

namespace diffbgm {

enum class Modality { dynamic, semantic };

// Eq.-6 style timestep gate: semantic features early in denoising (large t),
// dynamic features at and below the key timestep.
inline std::pair<const Tensor*, Modality> select_condition(const Tensor& fv,
                                                           const Tensor& fl,
                                                           int timestep,
                                                           int t0) {
  if (timestep > t0) return {&fl, Modality::semantic};
  return {&fv, Modality::dynamic};
}

struct NetDescriptor {
  int levels = 2;
  int channels = 32;   // level-1 width; level 2 uses 2x
  int d_model = 32;    // attention query width, equals channels
  int d_cond = 16;
  int d_key = 16;
  int k = 8;
  int t0 = 200;
  int d1 = 512;  // raw Fv width
  int d2 = 768;  // raw Fl width
  int temb = 32;
  int roll_steps = 128;
  int roll_pitches = 128;

  void validate() const {
    if (levels != 2) throw ConfigError("descriptor: only levels=2 supported");
    if (d_model != channels)
      throw ConfigError("descriptor: d_model must equal channels");
    if (channels < 1 || d_cond < 1 || d_key < 1 || k < 1 || temb < 2 ||
        temb % 2 != 0)
      throw ConfigError("descriptor: invalid width");
    if (roll_steps < 4 || roll_steps % 4 != 0)
      throw ConfigError("descriptor: roll_steps must be a multiple of 4");
  }
};

struct Param {
  std::string name;
  Tensor value;
  Tensor adam_m, adam_v;
};

namespace net_detail {

inline Tensor sinusoidal_embedding(int t, int dim) {
  Tensor e({1, static_cast<std::size_t>(dim)});
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * i / half);
    e.v[2 * i] = std::sin(t * freq);
    e.v[2 * i + 1] = std::cos(t * freq);
  }
  return e;
}

}  // namespace net_detail

class DenoiserNet : public NoisePredictor {
 public:
  DenoiserNet(const NetDescriptor& d, std::uint64_t init_seed) : desc_(d) {
    desc_.validate();
    Rng rng(derive_seed(init_seed, 0x1217));
    std::size_t C = desc_.channels, C2 = 2 * C;
    std::size_t in = 2 * static_cast<std::size_t>(desc_.roll_pitches);
    std::size_t E = desc_.temb, dc = desc_.d_cond, dk = desc_.d_key;

    add_weight("proj_in.w", {in, C}, rng);
    add_zero("proj_in.b", {C});
    add_weight("pos.e", {static_cast<std::size_t>(desc_.roll_steps), C}, rng);
    add_weight("temb.w", {E, E}, rng);
    add_zero("temb.b", {E});
    add_weight("cond.proj_v.w", {static_cast<std::size_t>(desc_.d1), dc}, rng);
    add_zero("cond.proj_v.b", {dc});
    add_weight("cond.proj_l.w", {static_cast<std::size_t>(desc_.d2), dc}, rng);
    add_zero("cond.proj_l.b", {dc});

    add_res_block("enc", C, E, rng);
    add_attn("enc.attn", C, dc, dk, rng);
    add_weight("down.w", {C, C2}, rng);
    add_zero("down.b", {C2});
    add_res_block("mid", C2, E, rng);
    add_attn("mid.attn", C2, dc, dk, rng);
    add_weight("up.w", {C2, C}, rng);
    add_zero("up.b", {C});
    add_res_block("dec", C, E, rng);
    add_attn("dec.attn", C, dc, dk, rng);
    add_zero("proj_out.w", {C, in});  // zero init: initial prediction is 0
    add_zero("proj_out.b", {in});
    // timestep-gated input skip, also zero so initial prediction stays 0
    add_zero("skip.w", {E, in});
    add_zero("skip.b", {in});
  }

  const NetDescriptor& descriptor() const { return desc_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::vector<double> flat_params() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const auto& p : params_)
      out.insert(out.end(), p.value.v.begin(), p.value.v.end());
    return out;
  }

  void set_flat_params(const std::vector<double>& flat) {
    if (flat.size() != param_count())
      throw ConfigError("parameter vector length mismatch: expected " +
                        std::to_string(param_count()) + ", got " +
                        std::to_string(flat.size()));
    std::size_t off = 0;
    for (auto& p : params_) {
      std::copy(flat.begin() + off, flat.begin() + off + p.value.size(),
                p.value.v.begin());
      off += p.value.size();
    }
  }

  // Builds the forward graph. Returns the output node; param_leaves (when
  // requested) is aligned with params().
  ad::Var forward_graph(const Tensor& x_t, int timestep,
                        const ConditionFeatures* cond,
                        std::vector<ad::Var>* param_leaves_out) const {
    if (!all_finite(x_t))
      throw std::invalid_argument("denoiser forward: non-finite input");
    std::size_t T = desc_.roll_steps, P = desc_.roll_pitches;
    if (x_t.dims != std::vector<std::size_t>{2, T, P})
      throw std::invalid_argument("denoiser forward: bad input shape");

    std::vector<ad::Var> pl;
    pl.reserve(params_.size());
    for (const auto& p : params_) pl.push_back(ad::leaf(p.value));
    auto P_ = [&](const char* name) { return pl[index_of(name)]; };

    // 2 x T x P -> T x 2P
    Tensor seq({T, 2 * P});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p < P; ++p) {
        seq.at(t, p) = x_t.at(0, t, p);
        seq.at(t, P + p) = x_t.at(1, t, p);
      }
    ad::Var x = ad::leaf(seq);

    ad::Var te = ad::silu(ad::linear(
        ad::leaf(net_detail::sinusoidal_embedding(timestep, desc_.temb)),
        P_("temb.w"), P_("temb.b")));

    // condition prep: gate, then project the chosen modality to d_cond
    ad::Var fc;
    std::size_t cond_frames = 0;
    if (cond) {
      auto [raw, tag] = select_condition(cond->fv, cond->fl, timestep, desc_.t0);
      cond_frames = raw->dims[0];
      const char* w = tag == Modality::dynamic ? "cond.proj_v.w" : "cond.proj_l.w";
      const char* b = tag == Modality::dynamic ? "cond.proj_v.b" : "cond.proj_l.b";
      fc = ad::linear(ad::leaf(*raw), P_(w), P_(b));
    }

    // residual block with FiLM timestep modulation: a*(1+scale(te)) + shift(te)
    auto res_block = [&](ad::Var h, const std::string& prefix) {
      ad::Var a = ad::conv3(ad::silu(h), P_((prefix + ".conv1.w").c_str()),
                            P_((prefix + ".conv1.b").c_str()));
      ad::Var sc = ad::linear(te, P_((prefix + ".scale.w").c_str()),
                              P_((prefix + ".scale.b").c_str()));
      ad::Var sh = ad::linear(te, P_((prefix + ".shift.w").c_str()),
                              P_((prefix + ".shift.b").c_str()));
      a = ad::add_row_bias(ad::mul_row_bias(a, ad::add_const(sc, 1.0)), sh);
      a = ad::conv3(ad::silu(a), P_((prefix + ".conv2.w").c_str()),
                    P_((prefix + ".conv2.b").c_str()));
      return ad::add(h, a);
    };

    auto attn = [&](ad::Var h, const std::string& prefix) {
      if (!cond) return h;
      std::size_t L = h->val.dims[0];
      ad::Var fc_l = ad::resample_rows(fc, L);
      std::size_t k_l = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(
                 static_cast<double>(desc_.k) * L / cond_frames)));
      SegmentMask mask = build_mask(L, k_l);
      ad::Var q = ad::matmul(h, P_((prefix + ".wq").c_str()));
      ad::Var key = ad::matmul(fc_l, P_((prefix + ".wk").c_str()));
      ad::Var val = ad::matmul(fc_l, P_((prefix + ".wv").c_str()));
      ad::Var logits =
          ad::scale(ad::matmul_nt(q, key),
                    1.0 / std::sqrt(static_cast<double>(desc_.d_key)));
      ad::Var w = ad::masked_softmax_rows(logits, mask.m);
      ad::Var out = ad::matmul(ad::matmul(w, val), P_((prefix + ".wo").c_str()));
      return ad::add(h, out);
    };

    ad::Var h = ad::add(ad::linear(x, P_("proj_in.w"), P_("proj_in.b")),
                        P_("pos.e"));
    ad::Var enc = attn(res_block(h, "enc"), "enc.attn");
    ad::Var mid = ad::linear(ad::avgpool2_rows(enc), P_("down.w"), P_("down.b"));
    mid = attn(res_block(mid, "mid"), "mid.attn");
    ad::Var up = ad::linear(ad::resample_rows(mid, T), P_("up.w"), P_("up.b"));
    ad::Var dec = attn(res_block(ad::add(up, enc), "dec"), "dec.attn");
    ad::Var out = ad::linear(dec, P_("proj_out.w"), P_("proj_out.b"));
    // timestep-gated passthrough of the noisy input
    ad::Var gate = ad::linear(te, P_("skip.w"), P_("skip.b"));
    out = ad::add(out, ad::mul_row_bias(x, gate));

    if (param_leaves_out) *param_leaves_out = std::move(pl);
    return out;
  }

  Tensor predict(const Tensor& x_t, int timestep,
                 const ConditionFeatures* cond) const override {
    ad::Var out = forward_graph(x_t, timestep, cond, nullptr);
    std::size_t T = desc_.roll_steps, P = desc_.roll_pitches;
    Tensor r({2, T, P});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p < P; ++p) {
        r.at(0, t, p) = out->val.at(t, p);
        r.at(1, t, p) = out->val.at(t, P + p);
      }
    return r;
  }

  // Noise-prediction MSE as a differentiable graph:
  // || eps - net(sqrt(abar) x0 + sqrt(1-abar) eps, t, Fc) ||^2 / n
  ad::Var loss_graph(const Tensor& x0, int t, const Tensor& eps,
                     const ConditionFeatures* cond, const NoiseSchedule& sched,
                     std::vector<ad::Var>* param_leaves_out) const {
    Tensor x_t = q_sample(x0, t, eps, sched);
    ad::Var pred = forward_graph(x_t, t, cond, param_leaves_out);
    std::size_t T = desc_.roll_steps, P = desc_.roll_pitches;
    Tensor eps_seq({T, 2 * P});
    for (std::size_t ts = 0; ts < T; ++ts)
      for (std::size_t p = 0; p < P; ++p) {
        eps_seq.at(ts, p) = eps.at(0, ts, p);
        eps_seq.at(ts, P + p) = eps.at(1, ts, p);
      }
    return ad::mean_sq(ad::sub(ad::leaf(eps_seq), pred));
  }

 private:
  void add_weight(const std::string& name, std::vector<std::size_t> dims,
                  Rng& rng) {
    Param p;
    p.name = name;
    p.value = Tensor(dims);
    // fan-in = everything but the output axis (e.g. 3*C for a conv kernel)
    double fan_in = static_cast<double>(p.value.size()) /
                    static_cast<double>(dims.back());
    double s = 1.0 / std::sqrt(fan_in);
    for (double& x : p.value.v) x = s * rng.normal();
    push(std::move(p));
  }

  void add_zero(const std::string& name, std::vector<std::size_t> dims) {
    Param p;
    p.name = name;
    p.value = Tensor(dims);
    push(std::move(p));
  }

  void add_res_block(const std::string& prefix, std::size_t C, std::size_t E,
                     Rng& rng) {
    add_weight(prefix + ".conv1.w", {3, C, C}, rng);
    add_zero(prefix + ".conv1.b", {C});
    add_weight(prefix + ".scale.w", {E, C}, rng);
    add_zero(prefix + ".scale.b", {C});
    add_weight(prefix + ".shift.w", {E, C}, rng);
    add_zero(prefix + ".shift.b", {C});
    add_weight(prefix + ".conv2.w", {3, C, C}, rng);
    add_zero(prefix + ".conv2.b", {C});
  }

  void add_attn(const std::string& prefix, std::size_t C, std::size_t dc,
                std::size_t dk, Rng& rng) {
    add_weight(prefix + ".wq", {C, dk}, rng);
    add_weight(prefix + ".wk", {dc, dk}, rng);
    add_weight(prefix + ".wv", {dc, dk}, rng);
    add_weight(prefix + ".wo", {dk, C}, rng);
  }

  void push(Param p) {
    p.adam_m = Tensor(p.value.dims);
    p.adam_v = Tensor(p.value.dims);
    index_[p.name] = params_.size();
    params_.push_back(std::move(p));
  }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }

  NetDescriptor desc_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

struct TrainConfig {
  int steps = 2000;
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool conditional = true;
};

struct TrainItem {
  Segment segment;
  ConditionFeatures cond;
};

struct TrainResult {
  std::vector<double> loss_trace;
  bool diverged = false;
};

// Single-sample SGD loop: sample item, timestep, noise; Adam step at a
// constant rate. Deterministic given (net init, corpus order, config).
inline TrainResult train(DenoiserNet& net, const std::vector<TrainItem>& corpus,
                         const NoiseSchedule& sched, const TrainConfig& cfg) {
  if (corpus.empty()) throw ConfigError("train: empty corpus");
  TrainResult res;
  Rng rng(derive_seed(cfg.seed, 0x7a41));
  std::vector<Tensor> scaled;
  scaled.reserve(corpus.size());
  for (const auto& item : corpus) scaled.push_back(scale_roll(item.segment.roll));

  int adam_t = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::size_t idx = corpus.size() == 1 ? 0 : rng.below(corpus.size());
    int t = 1 + static_cast<int>(rng.below(sched.N));
    Tensor eps(scaled[idx].dims);
    for (double& x : eps.v) x = rng.normal();
    const ConditionFeatures* cond = cfg.conditional ? &corpus[idx].cond : nullptr;

    std::vector<ad::Var> leaves;
    ad::Var loss = net.loss_graph(scaled[idx], t, eps, cond, sched, &leaves);
    double loss_val = loss->val.v[0];
    res.loss_trace.push_back(loss_val);
    if (!std::isfinite(loss_val)) {
      res.diverged = true;
      return res;
    }
    ad::backward(loss);

    ++adam_t;
    double bc1 = 1.0 - std::pow(cfg.beta1, adam_t);
    double bc2 = 1.0 - std::pow(cfg.beta2, adam_t);
    auto& params = net.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor& g = leaves[i]->grad;
      Param& p = params[i];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        double gj = g.v[j];
        p.adam_m.v[j] = cfg.beta1 * p.adam_m.v[j] + (1.0 - cfg.beta1) * gj;
        p.adam_v.v[j] = cfg.beta2 * p.adam_v.v[j] + (1.0 - cfg.beta2) * gj * gj;
        p.value.v[j] -= cfg.lr * (p.adam_m.v[j] / bc1) /
                        (std::sqrt(p.adam_v.v[j] / bc2) + cfg.adam_eps);
      }
    }
  }
  return res;
}

}  // namespace diffbgm
