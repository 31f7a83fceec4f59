#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "contifuse/model_config.hpp"
#include "contifuse/ops.hpp"
#include "contifuse/params.hpp"

namespace contifuse {

namespace detail {

/// Convolution bound to registered parameters.  Geometry other than
/// batch/height/width is fixed at registration.
template <typename T>
struct Conv {
  Param<T>* w = nullptr;
  Param<T>* b = nullptr;
  Dim in_ch = 0, out_ch = 0, k = 1, groups = 1;

  void init(ParamStore<T>& ps, Rng& rng, const std::string& name, Dim in, Dim out, Dim ksize,
            Dim g = 1) {
    in_ch = in;
    out_ch = out;
    k = ksize;
    groups = g;
    w = &ps.add(name + ".w", {out, in / g, ksize, ksize});
    init_conv_weight(w->value, rng);
    b = &ps.add(name + ".b", {out});
  }

  nn::Conv2dDims dims(Dim batch, Dim H, Dim W) const {
    return {batch, in_ch, out_ch, H, W, k, groups};
  }

  Tensor<T> forward(const Tensor<T>& x, Dim batch, Dim H, Dim W) const {
    Tensor<T> y({batch, out_ch, H, W});
    nn::conv2d_forward(x.data(), w->value.data(), b->value.data(), y.data(), dims(batch, H, W));
    return y;
  }

  /// Accumulates weight/bias grads; returns dx.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, Dim batch, Dim H, Dim W) {
    const auto d = dims(batch, H, W);
    nn::conv2d_backward_params(x.data(), dy.data(), w->grad.data(), b->grad.data(), d);
    Tensor<T> dx({batch, in_ch, H, W});
    nn::conv2d_backward_input(dy.data(), w->value.data(), dx.data(), d);
    return dx;
  }
};

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  require(dst.numel() == src.numel(), "add_into: size mismatch");
  for (Dim i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace detail

/// The fusion network.  Single-sample forward/backward; the input and output
/// projections and every encoder block are shared between the infrared and
/// visible branches.  All activations needed by backward are cached on the
/// instance, so forward must precede backward and instances are not
/// re-entrant.
template <typename T>
class FusionNet {
 public:
  struct Output {
    Tensor<T> fused;                  // (H, W), unclamped
    std::vector<Tensor<T>> stacks;    // per layer: (K+2, C_l, H_l, W_l)
  };

  FusionNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed({seed, seed_tag("init")}));
    const Dim N = cfg_.num_layers, K = cfg_.num_states;
    in_proj_.init(ps_, rng, "in_proj", 1, cfg_.base_width, 1);
    enc1_.resize(std::size_t(N + 1));
    enc2_.resize(std::size_t(N + 1));
    cdm_.resize(std::size_t(N + 1));
    dec_.resize(std::size_t(N + 1));
    for (Dim l = 1; l <= N; ++l) {
      const Dim cin = width(l - 1), c = width(l);
      const std::string el = "enc" + std::to_string(l);
      enc1_[std::size_t(l)].init(ps_, rng, el + ".conv1", cin, c, 3);
      enc2_[std::size_t(l)].init(ps_, rng, el + ".conv2", c, c, 3);

      auto& m = cdm_[std::size_t(l)];
      const std::string cl = "cdm" + std::to_string(l);
      m.p_lin.init(ps_, rng, cl + ".p.lin", 2 * c, K * c, 1);
      m.p_conv1.init(ps_, rng, cl + ".p.conv1", K * c, K * c, 3, K);
      m.p_conv2.init(ps_, rng, cl + ".p.conv2", K * c, K * c, 3, K);
      m.q.init(ps_, rng, cl + ".attn.q", c, c, 3);
      m.k.init(ps_, rng, cl + ".attn.k", c, c, 3);
      m.v.init(ps_, rng, cl + ".attn.v", c, c, 3);
      m.phi.init(ps_, rng, cl + ".attn.merge", c, c, 1);
      m.ln_gamma = &ps_.add(cl + ".ffn.norm.gamma", {c});
      m.ln_gamma->value.fill(T(1));
      m.ln_beta = &ps_.add(cl + ".ffn.norm.beta", {c});
      const Dim g = cfg_.gdfn_hidden(l);
      m.expand.init(ps_, rng, cl + ".ffn.expand", c, 2 * g, 1);
      m.dw_w = &ps_.add(cl + ".ffn.dw.w", {2 * g, 3, 3});
      {
        // Depthwise taps: fan-in is one 3x3 patch.
        const double sd = std::sqrt(2.0 / 9.0);
        for (Dim i = 0; i < m.dw_w->value.numel(); ++i) m.dw_w->value[i] = T(sd * rng.normal());
      }
      m.dw_b = &ps_.add(cl + ".ffn.dw.b", {2 * g});
      m.project.init(ps_, rng, cl + ".ffn.project", g, c, 1);

      auto& dc = dec_[std::size_t(l)];
      const std::string dl = "dec" + std::to_string(l);
      dc.fuse.init(ps_, rng, dl + ".fuse", (K + 2) * c, c, 3);
      dc.conv1.init(ps_, rng, dl + ".conv1", 2 * c, width(l - 1), 3);
      dc.conv2.init(ps_, rng, dl + ".conv2", width(l - 1), width(l - 1), 3);
    }
    out_proj_.init(ps_, rng, "out_proj", cfg_.base_width, 1, 1);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }

  /// Softmax attention maps of the last forward at layer l (1-based):
  /// (heads, K, K), rows summing to 1.
  const Tensor<T>& attention(Dim l) const { return cdm_cache_[std::size_t(l)].attn; }

  /// Shared-weight encoder features of the last forward at scale l (0..N).
  const Tensor<T>& vis_feature(Dim l) const { return V_[std::size_t(l)]; }
  const Tensor<T>& ir_feature(Dim l) const { return I_[std::size_t(l)]; }

  const Output& forward(const Tensor<T>& ir, const Tensor<T>& vis) {
    require(ir.rank() == 2 && vis.rank() == 2 && ir.same_dims(vis),
            "forward: inputs must be two equal H x W images");
    const Dim H = ir.dim(0), W = ir.dim(1);
    require(H % cfg_.stride() == 0 && W % cfg_.stride() == 0,
            "forward: input extents must be multiples of 2^num_layers (pad first)");
    const Dim N = cfg_.num_layers;

    ir_in_ = ir;
    ir_in_.reshape({1, 1, H, W});
    vis_in_ = vis;
    vis_in_.reshape({1, 1, H, W});

    V_.assign(std::size_t(N + 1), {});
    I_.assign(std::size_t(N + 1), {});
    encV_.assign(std::size_t(N + 1), {});
    encI_.assign(std::size_t(N + 1), {});
    cdm_cache_.assign(std::size_t(N + 1), {});
    dec_cache_.assign(std::size_t(N + 1), {});
    fchain_.assign(std::size_t(N + 1), {});

    V_[0] = in_proj_.forward(vis_in_, 1, H, W);
    I_[0] = in_proj_.forward(ir_in_, 1, H, W);
    for (Dim l = 1; l <= N; ++l) {
      V_[std::size_t(l)] = encoder_forward(l, V_[std::size_t(l - 1)], encV_[std::size_t(l)]);
      I_[std::size_t(l)] = encoder_forward(l, I_[std::size_t(l - 1)], encI_[std::size_t(l)]);
    }

    out_.stacks.assign(std::size_t(N), {});
    for (Dim l = 1; l <= N; ++l)
      out_.stacks[std::size_t(l - 1)] =
          cdm_forward(l, V_[std::size_t(l)], I_[std::size_t(l)], cdm_cache_[std::size_t(l)]);

    // Bottleneck: elementwise sum of the deepest branch features.
    fchain_[std::size_t(N)] = V_[std::size_t(N)];
    detail::add_into(fchain_[std::size_t(N)], I_[std::size_t(N)]);
    for (Dim l = N; l >= 1; --l)
      fchain_[std::size_t(l - 1)] =
          decoder_forward(l, fchain_[std::size_t(l)], out_.stacks[std::size_t(l - 1)],
                          dec_cache_[std::size_t(l)]);

    Tensor<T> fused4 = out_proj_.forward(fchain_[0], 1, H, W);
    fused4.reshape({H, W});
    out_.fused = std::move(fused4);
    return out_;
  }

  /// Propagates loss gradients back through the whole network, accumulating
  /// parameter gradients.  dfused is dL/dF (H, W); dstacks is dL/dZ per layer
  /// (empty tensors allowed for layers without stack loss).
  void backward(const Tensor<T>& dfused, const std::vector<Tensor<T>>& dstacks) {
    const Dim N = cfg_.num_layers;
    const Dim H = ir_in_.dim(2), W = ir_in_.dim(3);
    require(dfused.numel() == H * W, "backward: dfused shape mismatch");
    require(dstacks.empty() || Dim(dstacks.size()) == N,
            "backward: need one stack gradient per layer");

    // Stack-gradient accumulators (loss contribution + decoder contribution).
    std::vector<Tensor<T>> dZ(std::size_t(N + 1));
    for (Dim l = 1; l <= N; ++l) {
      const auto& z = out_.stacks[std::size_t(l - 1)];
      dZ[std::size_t(l)] = Tensor<T>(z.dims());
      if (!dstacks.empty() && !dstacks[std::size_t(l - 1)].empty()) {
        require(dstacks[std::size_t(l - 1)].same_dims(z), "backward: stack gradient shape");
        detail::add_into(dZ[std::size_t(l)], dstacks[std::size_t(l - 1)]);
      }
    }

    Tensor<T> df = dfused;
    df.reshape({1, 1, H, W});
    df = out_proj_.backward(fchain_[0], df, 1, H, W);
    for (Dim l = 1; l <= N; ++l)
      df = decoder_backward(l, df, dec_cache_[std::size_t(l)], dZ[std::size_t(l)]);

    std::vector<Tensor<T>> dV(std::size_t(N + 1)), dI(std::size_t(N + 1));
    dV[std::size_t(N)] = df;
    dI[std::size_t(N)] = std::move(df);
    for (Dim l = N; l >= 1; --l) {
      cdm_backward(l, dZ[std::size_t(l)], cdm_cache_[std::size_t(l)], dV[std::size_t(l)],
                   dI[std::size_t(l)]);
      dV[std::size_t(l - 1)] = encoder_backward(l, encV_[std::size_t(l)], dV[std::size_t(l)]);
      dI[std::size_t(l - 1)] = encoder_backward(l, encI_[std::size_t(l)], dI[std::size_t(l)]);
    }
    in_proj_.backward(vis_in_, dV[0], 1, H, W);
    in_proj_.backward(ir_in_, dI[0], 1, H, W);
  }

 private:
  Dim width(Dim l) const { return cfg_.channel_schedule[std::size_t(l)]; }

  struct EncCache {
    Tensor<T> x, a1, r1, a2, r2;
  };

  struct CdmParams {
    detail::Conv<T> p_lin, p_conv1, p_conv2;
    detail::Conv<T> q, k, v, phi;
    Param<T>* ln_gamma = nullptr;
    Param<T>* ln_beta = nullptr;
    detail::Conv<T> expand, project;
    Param<T>* dw_w = nullptr;
    Param<T>* dw_b = nullptr;
  };

  struct CdmCache {
    Dim H = 0, W = 0;
    Tensor<T> cat, p_lin_out, p_a1, p_r1, p_a2, S;
    Tensor<T> q, k, v;
    Tensor<T> attn;    // (heads, K, K)
    Tensor<T> merged;  // attention output, head-merged
    Tensor<T> U;       // attention residual sum
    Tensor<T> ln_xhat, ln_inv, ln_out;
    Tensor<T> expanded, dw, gelu1, gated;
  };

  struct DecParams {
    detail::Conv<T> fuse, conv1, conv2;
  };

  struct DecCache {
    Dim H = 0, W = 0;  // input scale
    Tensor<T> zf, zf_up, f_up, cat, a1, r1, a2;
  };

  Tensor<T> encoder_forward(Dim l, const Tensor<T>& x, EncCache& c) {
    const Dim H = x.dim(2), W = x.dim(3);
    c.x = x;
    c.a1 = enc1_[std::size_t(l)].forward(x, 1, H, W);
    c.r1 = Tensor<T>(c.a1.dims());
    nn::relu_forward(c.a1.data(), c.r1.data(), c.a1.numel());
    c.a2 = enc2_[std::size_t(l)].forward(c.r1, 1, H, W);
    c.r2 = Tensor<T>(c.a2.dims());
    nn::relu_forward(c.a2.data(), c.r2.data(), c.a2.numel());
    Tensor<T> out({1, width(l), H / 2, W / 2});
    nn::avgpool2_forward(c.r2.data(), out.data(), width(l), H, W);
    return out;
  }

  Tensor<T> encoder_backward(Dim l, EncCache& c, const Tensor<T>& dout) {
    const Dim H = c.x.dim(2), W = c.x.dim(3);
    Tensor<T> dr2(c.r2.dims());
    nn::avgpool2_backward(dout.data(), dr2.data(), width(l), H, W);
    nn::relu_backward(c.a2.data(), dr2.data(), dr2.data(), dr2.numel());
    Tensor<T> dr1 = enc2_[std::size_t(l)].backward(c.r1, dr2, 1, H, W);
    nn::relu_backward(c.a1.data(), dr1.data(), dr1.data(), dr1.numel());
    return enc1_[std::size_t(l)].backward(c.x, dr1, 1, H, W);
  }

  Tensor<T> cdm_forward(Dim l, const Tensor<T>& V, const Tensor<T>& I, CdmCache& c) {
    auto& m = cdm_[std::size_t(l)];
    const Dim C = width(l), K = cfg_.num_states, h = cfg_.attention_heads;
    const Dim H = V.dim(2), W = V.dim(3), P = H * W;
    c.H = H;
    c.W = W;

    c.cat = Tensor<T>({1, 2 * C, H, W});
    std::memcpy(c.cat.data(), V.data(), sizeof(T) * std::size_t(C * P));
    std::memcpy(c.cat.data() + C * P, I.data(), sizeof(T) * std::size_t(C * P));

    c.p_lin_out = m.p_lin.forward(c.cat, 1, H, W);
    c.p_a1 = m.p_conv1.forward(c.p_lin_out, 1, H, W);
    c.p_r1 = Tensor<T>(c.p_a1.dims());
    nn::relu_forward(c.p_a1.data(), c.p_r1.data(), c.p_a1.numel());
    c.p_a2 = m.p_conv2.forward(c.p_r1, 1, H, W);
    c.S = Tensor<T>(c.p_a2.dims());
    nn::relu_forward(c.p_a2.data(), c.S.data(), c.p_a2.numel());
    c.S.reshape({K, C, H, W});

    // State-wise projections: every state runs through the same 3x3 filters.
    c.q = m.q.forward(c.S, K, H, W);
    c.k = m.k.forward(c.S, K, H, W);
    c.v = m.v.forward(c.S, K, H, W);

    // Heads split the flattened C*H*W embedding of each state token.
    const Dim M = C * P;
    const Dim E = M / h;
    require(M % h == 0, "state embedding not divisible by heads");
    const T scale = T(1.0 / std::sqrt(double(E)));
    c.attn = Tensor<T>({h, K, K});
    c.merged = Tensor<T>({K, C, H, W});
    for (Dim hd = 0; hd < h; ++hd) {
      T* A = c.attn.data() + hd * K * K;
      gemm_nt_strided(c.q.data() + hd * E, M, c.k.data() + hd * E, M, A, K, K, E, K, scale);
      nn::softmax_rows_forward(A, A, K, K);
      gemm_strided(A, K, c.v.data() + hd * E, M, c.merged.data() + hd * E, M, K, K, E);
    }

    Tensor<T> phi_out = m.phi.forward(c.merged, K, H, W);
    c.U = std::move(phi_out);
    detail::add_into(c.U, c.S);

    // Feed-forward with channel norm, 1x1 expansion, depthwise 3x3, gate.
    const Dim G = cfg_.gdfn_hidden(l);
    c.ln_xhat = Tensor<T>({K, C, P});
    c.ln_inv = Tensor<T>({K, P});
    c.ln_out = Tensor<T>({K, C, H, W});
    for (Dim s = 0; s < K; ++s)
      nn::layernorm_forward(c.U.data() + s * M, m.ln_gamma->value.data(), m.ln_beta->value.data(),
                            c.ln_out.data() + s * M, c.ln_xhat.data() + s * M,
                            c.ln_inv.data() + s * P, C, P);
    c.expanded = m.expand.forward(c.ln_out, K, H, W);  // (K, 2G, H, W)
    c.dw = Tensor<T>(c.expanded.dims());
    for (Dim s = 0; s < K; ++s)
      nn::depthwise3x3_forward(c.expanded.data() + s * 2 * G * P, m.dw_w->value.data(),
                               m.dw_b->value.data(), c.dw.data() + s * 2 * G * P, 2 * G, H, W);
    c.gelu1 = Tensor<T>({K, G, H, W});
    c.gated = Tensor<T>({K, G, H, W});
    for (Dim s = 0; s < K; ++s) {
      const T* h1 = c.dw.data() + s * 2 * G * P;
      const T* h2 = h1 + G * P;
      T* ge = c.gelu1.data() + s * G * P;
      T* out = c.gated.data() + s * G * P;
      nn::gelu_forward(h1, ge, G * P);
      for (Dim i = 0; i < G * P; ++i) out[i] = ge[i] * h2[i];
    }
    Tensor<T> proj = m.project.forward(c.gated, K, H, W);  // (K, C, H, W)
    Tensor<T> Tstates = std::move(proj);
    detail::add_into(Tstates, c.U);

    Tensor<T> stack({K + 2, C, H, W});
    std::memcpy(stack.data(), V.data(), sizeof(T) * std::size_t(M));
    std::memcpy(stack.data() + M, Tstates.data(), sizeof(T) * std::size_t(K * M));
    std::memcpy(stack.data() + (K + 1) * M, I.data(), sizeof(T) * std::size_t(M));
    return stack;
  }

  /// dZ is dL/d(stack); adds this layer's contributions into dV and dI.
  void cdm_backward(Dim l, const Tensor<T>& dZ, CdmCache& c, Tensor<T>& dV, Tensor<T>& dI) {
    auto& m = cdm_[std::size_t(l)];
    const Dim C = width(l), K = cfg_.num_states, h = cfg_.attention_heads;
    const Dim H = c.H, W = c.W, P = H * W, M = C * P;
    const Dim G = cfg_.gdfn_hidden(l);

    // Stack endpoints pass straight through to the encoder features.
    for (Dim i = 0; i < M; ++i) {
      dV[i] += dZ[i];
      dI[i] += dZ[(K + 1) * M + i];
    }

    // dT: gradient w.r.t. the transition states (stack rows 1..K).
    Tensor<T> dT({K, C, H, W});
    std::memcpy(dT.data(), dZ.data() + M, sizeof(T) * std::size_t(K * M));

    // T = project(gated) + U.
    Tensor<T> dU = dT;
    Tensor<T> dgated = m.project.backward(c.gated, dT, K, H, W);

    // gated = gelu(h1) .* h2, with (h1 | h2) the depthwise output halves.
    Tensor<T> ddw(c.dw.dims());
    Tensor<T> dgelu({G * P});
    for (Dim s = 0; s < K; ++s) {
      const T* h1 = c.dw.data() + s * 2 * G * P;
      const T* h2 = h1 + G * P;
      const T* ge = c.gelu1.data() + s * G * P;
      const T* dg = dgated.data() + s * G * P;
      T* dh1 = ddw.data() + s * 2 * G * P;
      T* dh2 = dh1 + G * P;
      for (Dim i = 0; i < G * P; ++i) {
        dgelu[i] = dg[i] * h2[i];
        dh2[i] = dg[i] * ge[i];
      }
      nn::gelu_backward(h1, dgelu.data(), dh1, G * P);
    }

    Tensor<T> dexpanded(c.expanded.dims());
    for (Dim s = 0; s < K; ++s)
      nn::depthwise3x3_backward(c.expanded.data() + s * 2 * G * P, ddw.data() + s * 2 * G * P,
                                m.dw_w->value.data(), dexpanded.data() + s * 2 * G * P,
                                m.dw_w->grad.data(), m.dw_b->grad.data(), 2 * G, H, W);
    Tensor<T> dln_out = m.expand.backward(c.ln_out, dexpanded, K, H, W);
    {
      Tensor<T> dx({C, P});
      for (Dim s = 0; s < K; ++s) {
        nn::layernorm_backward(dln_out.data() + s * M, c.ln_xhat.data() + s * M,
                               c.ln_inv.data() + s * P, m.ln_gamma->value.data(), dx.data(),
                               m.ln_gamma->grad.data(), m.ln_beta->grad.data(), C, P);
        T* du = dU.data() + s * M;
        for (Dim i = 0; i < M; ++i) du[i] += dx[i];
      }
    }

    // U = phi(merged) + S.
    Tensor<T> dS = dU;
    Tensor<T> dmerged = m.phi.backward(c.merged, dU, K, H, W);

    // Attention backward per head.
    const Dim E = M / h;
    const T scale = T(1.0 / std::sqrt(double(E)));
    Tensor<T> dq({K, C, H, W}), dk({K, C, H, W}), dv({K, C, H, W});
    Tensor<T> dA({K, K}), dlog({K, K});
    for (Dim hd = 0; hd < h; ++hd) {
      const T* A = c.attn.data() + hd * K * K;
      const T* dOh = dmerged.data() + hd * E;
      // dA = dO . V^T ; dV = A^T . dO
      gemm_nt_strided(dOh, M, c.v.data() + hd * E, M, dA.data(), K, K, E, K, T(1));
      gemm_tn_strided(A, K, dOh, M, dv.data() + hd * E, M, K, K, E);
      nn::softmax_rows_backward(A, dA.data(), dlog.data(), K, K);
      for (Dim i = 0; i < K * K; ++i) dlog[i] *= scale;
      // logits = scale * Q K^T: dQ = dlog . K ; dK = dlog^T . Q
      gemm_strided(dlog.data(), K, c.k.data() + hd * E, M, dq.data() + hd * E, M, K, K, E);
      gemm_tn_strided(dlog.data(), K, c.q.data() + hd * E, M, dk.data() + hd * E, M, K, K, E);
    }
    detail::add_into(dS, m.q.backward(c.S, dq, K, H, W));
    detail::add_into(dS, m.k.backward(c.S, dk, K, H, W));
    detail::add_into(dS, m.v.backward(c.S, dv, K, H, W));

    // S = relu(p_a2); two grouped convs; 1x1 over the concatenated pair.
    dS.reshape({1, K * C, H, W});
    nn::relu_backward(c.p_a2.data(), dS.data(), dS.data(), dS.numel());
    Tensor<T> dp_r1 = m.p_conv2.backward(c.p_r1, dS, 1, H, W);
    nn::relu_backward(c.p_a1.data(), dp_r1.data(), dp_r1.data(), dp_r1.numel());
    Tensor<T> dp_lin = m.p_conv1.backward(c.p_lin_out, dp_r1, 1, H, W);
    Tensor<T> dcat = m.p_lin.backward(c.cat, dp_lin, 1, H, W);
    for (Dim i = 0; i < M; ++i) {
      dV[i] += dcat[i];
      dI[i] += dcat[M + i];
    }
  }

  Tensor<T> decoder_forward(Dim l, const Tensor<T>& f_in, const Tensor<T>& Z, DecCache& c) {
    auto& d = dec_[std::size_t(l)];
    const Dim C = width(l), K = cfg_.num_states;
    const Dim H = Z.dim(2), W = Z.dim(3);
    require(f_in.dim(2) == H && f_in.dim(3) == W,
            "decoder: feature/stack scale mismatch (padding bug)");
    c.H = H;
    c.W = W;

    Tensor<T> zflat = Z;
    zflat.reshape({1, (K + 2) * C, H, W});
    c.zf = d.fuse.forward(zflat, 1, H, W);

    c.zf_up = Tensor<T>({1, C, 2 * H, 2 * W});
    nn::upsample2_forward(c.zf.data(), c.zf_up.data(), C, H, W);
    c.f_up = Tensor<T>({1, C, 2 * H, 2 * W});
    nn::upsample2_forward(f_in.data(), c.f_up.data(), C, H, W);

    const Dim Pu = 4 * H * W;
    c.cat = Tensor<T>({1, 2 * C, 2 * H, 2 * W});
    std::memcpy(c.cat.data(), c.zf_up.data(), sizeof(T) * std::size_t(C * Pu));
    std::memcpy(c.cat.data() + C * Pu, c.f_up.data(), sizeof(T) * std::size_t(C * Pu));

    c.a1 = d.conv1.forward(c.cat, 1, 2 * H, 2 * W);
    c.r1 = Tensor<T>(c.a1.dims());
    nn::relu_forward(c.a1.data(), c.r1.data(), c.a1.numel());
    c.a2 = d.conv2.forward(c.r1, 1, 2 * H, 2 * W);
    Tensor<T> out(c.a2.dims());
    nn::relu_forward(c.a2.data(), out.data(), c.a2.numel());
    return out;
  }

  /// dout is dL/d f^{(l-1)}; accumulates into dZ and returns dL/d f^{(l)}.
  Tensor<T> decoder_backward(Dim l, const Tensor<T>& dout, DecCache& c, Tensor<T>& dZ) {
    auto& d = dec_[std::size_t(l)];
    const Dim C = width(l), K = cfg_.num_states;
    const Dim H = c.H, W = c.W;
    const Dim Pu = 4 * H * W;

    Tensor<T> da2 = dout;
    nn::relu_backward(c.a2.data(), da2.data(), da2.data(), da2.numel());
    Tensor<T> dr1 = d.conv2.backward(c.r1, da2, 1, 2 * H, 2 * W);
    nn::relu_backward(c.a1.data(), dr1.data(), dr1.data(), dr1.numel());
    Tensor<T> dcat = d.conv1.backward(c.cat, dr1, 1, 2 * H, 2 * W);

    Tensor<T> dzf({1, C, H, W});
    nn::upsample2_backward(dcat.data(), dzf.data(), C, H, W);
    Tensor<T> df_in({1, C, H, W});
    nn::upsample2_backward(dcat.data() + C * Pu, df_in.data(), C, H, W);

    Tensor<T> zflat = out_.stacks[std::size_t(l - 1)];
    zflat.reshape({1, (K + 2) * C, H, W});
    Tensor<T> dzflat = d.fuse.backward(zflat, dzf, 1, H, W);
    for (Dim i = 0; i < dZ.numel(); ++i) dZ[i] += dzflat[i];
    return df_in;
  }

  ModelConfig cfg_;
  ParamStore<T> ps_;
  detail::Conv<T> in_proj_, out_proj_;
  std::vector<detail::Conv<T>> enc1_, enc2_;
  std::vector<CdmParams> cdm_;
  std::vector<DecParams> dec_;

  // Forward caches (indexable by layer, slot 0 unused where noted).
  Tensor<T> ir_in_, vis_in_;
  std::vector<Tensor<T>> V_, I_;      // encoder outputs per scale
  std::vector<EncCache> encV_, encI_;
  std::vector<CdmCache> cdm_cache_;
  std::vector<DecCache> dec_cache_;
  std::vector<Tensor<T>> fchain_;     // decoder feature chain f^(l)
  Output out_;
};

}  // namespace contifuse
