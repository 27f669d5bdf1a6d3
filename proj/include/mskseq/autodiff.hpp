// mskseq/autodiff.hpp
//
// Minimal reverse-mode automatic differentiation over dense matrices.
// A Tape records matrix-level operations during the forward pass; calling
// backward() walks the recorded nodes in reverse and accumulates exact
// gradients. Parameter leaves are registered by name so a caller can
// collect per-tensor gradients after backward.
//
// The operation set is exactly what the Transformer needs: affine maps,
// residual adds, layer norm, ReLU, fused multi-head attention, embedding
// gather, log-softmax, and the two training losses.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mskseq/matrix.hpp"
#include "mskseq/rng.hpp"
#include "mskseq/vocab.hpp"

namespace mskseq {

inline constexpr double kAttnMaskValue = -1e30;
inline constexpr double kLayerNormEps = 1e-5;

struct AttnMask {
  bool causal = false;
  const std::vector<char>* key_pad = nullptr;  // nonzero entry = padded key

  static AttnMask none() { return {}; }
  static AttnMask causal_mask() { return {true, nullptr}; }
  static AttnMask key_padding(const std::vector<char>* pad) { return {false, pad}; }
};

template <typename Real>
class Tape {
 public:
  using Index = std::size_t;

  std::size_t size() const { return nodes_.size(); }
  const Matrix<Real>& value(Index i) const { return nodes_[i].value; }
  const Matrix<Real>& grad(Index i) const { return nodes_[i].grad; }

  // ------------------------------------------------------------- leaves

  Index constant(Matrix<Real> value) { return push(std::move(value), {}); }

  // Parameter leaf; one node per distinct name per tape. `trainable`
  // controls whether the gradient is exported by param_grads().
  Index param(const std::string& name, const Matrix<Real>& value,
              bool trainable = true) {
    auto it = param_index_.find(name);
    if (it != param_index_.end()) return it->second;
    Index idx = push(value, {});
    param_index_.emplace(name, idx);
    if (trainable) trainable_params_.emplace_back(name, idx);
    return idx;
  }

  // --------------------------------------------------------- elementwise

  Index add(Index a, Index b) {
    check_same_shape(a, b, "add");
    Matrix<Real> out = nodes_[a].value;
    const auto& bv = nodes_[b].value.raw();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += bv[i];
    return push(std::move(out), [this, a, b](Index y) {
      accumulate(a, nodes_[y].grad);
      accumulate(b, nodes_[y].grad);
    });
  }

  // a + row-vector bias (1 x d), broadcast over rows.
  Index add_row(Index a, Index bias) {
    const auto& av = nodes_[a].value;
    const auto& bv = nodes_[bias].value;
    if (bv.rows() != 1 || bv.cols() != av.cols())
      throw std::invalid_argument("add_row: bias must be 1 x cols");
    Matrix<Real> out = av;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      Real* r = out.row(i).data();
      for (std::size_t j = 0; j < out.cols(); ++j) r[j] += bv(0, j);
    }
    return push(std::move(out), [this, a, bias](Index y) {
      const auto& g = nodes_[y].grad;
      accumulate(a, g);
      auto& bg = nodes_[bias].grad;
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) bg(0, j) += g(i, j);
    });
  }

  Index add_constant(Index a, const Matrix<Real>& c) {
    const auto& av = nodes_[a].value;
    if (!av.same_shape(c)) throw std::invalid_argument("add_constant: shape mismatch");
    Matrix<Real> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += c.data()[i];
    return push(std::move(out),
                [this, a](Index y) { accumulate(a, nodes_[y].grad); });
  }

  Index scale(Index a, Real s) {
    Matrix<Real> out = nodes_[a].value;
    for (auto& v : out.raw()) v *= s;
    return push(std::move(out), [this, a, s](Index y) {
      const auto& g = nodes_[y].grad;
      auto& ag = nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ag.data()[i] += s * g.data()[i];
    });
  }

  Index relu(Index a) {
    Matrix<Real> out = nodes_[a].value;
    for (auto& v : out.raw())
      if (v < Real(0)) v = Real(0);
    return push(std::move(out), [this, a](Index y) {
      const auto& g = nodes_[y].grad;
      const auto& x = nodes_[a].value;
      auto& ag = nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x.data()[i] > Real(0)) ag.data()[i] += g.data()[i];
    });
  }

  // Inverted dropout; the mask is drawn once at forward time.
  Index dropout(Index a, Real p, Rng& rng) {
    if (p <= Real(0)) return a;
    if (p >= Real(1)) throw std::invalid_argument("dropout: p must be < 1");
    auto mask = std::make_shared<std::vector<char>>(nodes_[a].value.size());
    const Real keep_scale = Real(1) / (Real(1) - p);
    Matrix<Real> out = nodes_[a].value;
    for (std::size_t i = 0; i < out.size(); ++i) {
      bool keep = rng.next_unit() >= static_cast<double>(p);
      (*mask)[i] = keep;
      out.data()[i] = keep ? out.data()[i] * keep_scale : Real(0);
    }
    return push(std::move(out), [this, a, mask, keep_scale](Index y) {
      const auto& g = nodes_[y].grad;
      auto& ag = nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        if ((*mask)[i]) ag.data()[i] += keep_scale * g.data()[i];
    });
  }

  // ------------------------------------------------------------- matmuls

  Index matmul(Index a, Index b) {
    Matrix<Real> out = mskseq::matmul(nodes_[a].value, nodes_[b].value);
    return push(std::move(out), [this, a, b](Index y) {
      const auto& g = nodes_[y].grad;
      matmul_bt_acc(g, nodes_[b].value, nodes_[a].grad);   // dA += G B^T
      matmul_at_acc(nodes_[a].value, g, nodes_[b].grad);   // dB += A^T G
    });
  }

  // y = a * b^T; used for the softmax projection tied to the embedding.
  Index matmul_bt(Index a, Index b) {
    const auto& av = nodes_[a].value;
    const auto& bv = nodes_[b].value;
    Matrix<Real> out(av.rows(), bv.rows());
    matmul_bt_acc(av, bv, out);
    return push(std::move(out), [this, a, b](Index y) {
      const auto& g = nodes_[y].grad;
      matmul_acc(g, nodes_[b].value, nodes_[a].grad);      // dA += G B
      matmul_at_acc(g, nodes_[a].value, nodes_[b].grad);   // dB += G^T A
    });
  }

  // Gathers table rows by token id: out(i, :) = table(ids[i], :).
  Index embed(Index table, std::vector<TokenId> ids) {
    const auto& tv = nodes_[table].value;
    for (TokenId id : ids)
      if (id < 0 || static_cast<std::size_t>(id) >= tv.rows())
        throw std::invalid_argument("embed: token id " + std::to_string(id) +
                                    " out of range for vocab of " +
                                    std::to_string(tv.rows()));
    Matrix<Real> out(ids.size(), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto src = tv.row(static_cast<std::size_t>(ids[i]));
      auto dst = out.row(i);
      for (std::size_t j = 0; j < tv.cols(); ++j) dst[j] = src[j];
    }
    auto ids_ptr = std::make_shared<std::vector<TokenId>>(std::move(ids));
    return push(std::move(out), [this, table, ids_ptr](Index y) {
      const auto& g = nodes_[y].grad;
      auto& tg = nodes_[table].grad;
      for (std::size_t i = 0; i < ids_ptr->size(); ++i) {
        auto dst = tg.row(static_cast<std::size_t>((*ids_ptr)[i]));
        auto src = g.row(i);
        for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
      }
    });
  }

  // --------------------------------------------------------- layer norm

  // Per-row layer normalization with learned gain/bias (1 x d each).
  Index layernorm(Index a, Index gamma, Index beta) {
    const auto& x = nodes_[a].value;
    const auto& gv = nodes_[gamma].value;
    const auto& bv = nodes_[beta].value;
    if (gv.rows() != 1 || gv.cols() != x.cols() || bv.rows() != 1 ||
        bv.cols() != x.cols())
      throw std::invalid_argument("layernorm: gamma/beta must be 1 x cols");
    const std::size_t n = x.rows(), d = x.cols();
    auto xhat = std::make_shared<Matrix<Real>>(n, d);
    auto inv_std = std::make_shared<std::vector<Real>>(n);
    Matrix<Real> out(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const Real* xr = x.row(i).data();
      Real mean = 0;
      for (std::size_t j = 0; j < d; ++j) mean += xr[j];
      mean /= static_cast<Real>(d);
      Real var = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const Real c = xr[j] - mean;
        var += c * c;
      }
      var /= static_cast<Real>(d);
      const Real is = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEps));
      (*inv_std)[i] = is;
      for (std::size_t j = 0; j < d; ++j) {
        const Real xh = (xr[j] - mean) * is;
        (*xhat)(i, j) = xh;
        out(i, j) = gv(0, j) * xh + bv(0, j);
      }
    }
    return push(std::move(out), [this, a, gamma, beta, xhat, inv_std](Index y) {
      const auto& g = nodes_[y].grad;
      const auto& gv = nodes_[gamma].value;
      auto& ag = nodes_[a].grad;
      auto& gg = nodes_[gamma].grad;
      auto& bg = nodes_[beta].grad;
      const std::size_t n = g.rows(), d = g.cols();
      for (std::size_t i = 0; i < n; ++i) {
        const Real* gr = g.row(i).data();
        const Real* xh = xhat->row(i).data();
        Real sum_gy = 0, sum_gyxh = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const Real gy = gv(0, j) * gr[j];
          sum_gy += gy;
          sum_gyxh += gy * xh[j];
          gg(0, j) += gr[j] * xh[j];
          bg(0, j) += gr[j];
        }
        const Real inv_d = Real(1) / static_cast<Real>(d);
        const Real is = (*inv_std)[i];
        Real* ar = ag.row(i).data();
        for (std::size_t j = 0; j < d; ++j) {
          const Real gy = gv(0, j) * gr[j];
          ar[j] += (gy - sum_gy * inv_d - xh[j] * sum_gyxh * inv_d) * is;
        }
      }
    });
  }

  // --------------------------------------------------- multi-head attention

  // Fused scaled-dot-product attention over already-projected Q, K, V
  // (each rows x d_model, d_model split into `heads` equal slices).
  Index attention(Index q, Index k, Index v, int heads, AttnMask mask) {
    const auto& qv = nodes_[q].value;
    const auto& kv = nodes_[k].value;
    const auto& vv = nodes_[v].value;
    const std::size_t d = qv.cols();
    if (kv.cols() != d || vv.cols() != d)
      throw std::invalid_argument("attention: Q/K/V width mismatch");
    if (kv.rows() != vv.rows())
      throw std::invalid_argument("attention: K/V length mismatch");
    if (heads < 1 || d % static_cast<std::size_t>(heads) != 0)
      throw std::invalid_argument("attention: d_model not divisible by heads");
    if (mask.key_pad && mask.key_pad->size() != kv.rows())
      throw std::invalid_argument("attention: key pad mask length mismatch");
    const std::size_t tq = qv.rows(), tk = kv.rows();
    const std::size_t dh = d / static_cast<std::size_t>(heads);
    const Real inv_sqrt_dh = Real(1) / std::sqrt(static_cast<Real>(dh));

    auto attn = std::make_shared<std::vector<Matrix<Real>>>();
    attn->reserve(static_cast<std::size_t>(heads));
    Matrix<Real> out(tq, d);
    for (int h = 0; h < heads; ++h) {
      const std::size_t off = static_cast<std::size_t>(h) * dh;
      Matrix<Real> scores(tq, tk);
      for (std::size_t i = 0; i < tq; ++i) {
        const Real* qr = qv.row(i).data() + off;
        Real* sr = scores.row(i).data();
        for (std::size_t j = 0; j < tk; ++j) {
          const Real* kr = kv.row(j).data() + off;
          Real dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qr[c] * kr[c];
          Real s = dot * inv_sqrt_dh;
          if ((mask.causal && j > i) || (mask.key_pad && (*mask.key_pad)[j]))
            s = static_cast<Real>(kAttnMaskValue);
          sr[j] = s;
        }
        // softmax over the row
        Real mx = sr[0];
        for (std::size_t j = 1; j < tk; ++j) mx = sr[j] > mx ? sr[j] : mx;
        Real sum = 0;
        for (std::size_t j = 0; j < tk; ++j) {
          sr[j] = std::exp(sr[j] - mx);
          sum += sr[j];
        }
        const Real inv = Real(1) / sum;
        for (std::size_t j = 0; j < tk; ++j) sr[j] *= inv;
        // output row for this head
        Real* orow = out.row(i).data() + off;
        for (std::size_t c = 0; c < dh; ++c) orow[c] = 0;
        for (std::size_t j = 0; j < tk; ++j) {
          const Real a = sr[j];
          const Real* vr = vv.row(j).data() + off;
          for (std::size_t c = 0; c < dh; ++c) orow[c] += a * vr[c];
        }
      }
      attn->push_back(std::move(scores));
    }

    return push(std::move(out), [this, q, k, v, heads, attn, inv_sqrt_dh](Index y) {
      const auto& g = nodes_[y].grad;
      const auto& qv = nodes_[q].value;
      const auto& kv = nodes_[k].value;
      const auto& vv = nodes_[v].value;
      auto& qg = nodes_[q].grad;
      auto& kg = nodes_[k].grad;
      auto& vg = nodes_[v].grad;
      const std::size_t tq = qv.rows(), tk = kv.rows();
      const std::size_t dh = qv.cols() / static_cast<std::size_t>(heads);
      for (int h = 0; h < heads; ++h) {
        const std::size_t off = static_cast<std::size_t>(h) * dh;
        const Matrix<Real>& a = (*attn)[static_cast<std::size_t>(h)];
        for (std::size_t i = 0; i < tq; ++i) {
          const Real* grow = g.row(i).data() + off;
          const Real* arow = a.row(i).data();
          // dA = dO V^T (per row), dV += A^T dO
          std::vector<Real> da(tk);
          for (std::size_t j = 0; j < tk; ++j) {
            const Real* vr = vv.row(j).data() + off;
            Real dot = 0;
            for (std::size_t c = 0; c < dh; ++c) dot += grow[c] * vr[c];
            da[j] = dot;
            Real* vgr = vg.row(j).data() + off;
            const Real aij = arow[j];
            for (std::size_t c = 0; c < dh; ++c) vgr[c] += aij * grow[c];
          }
          // softmax backward: dS = A o (dA - sum(dA o A))
          Real dot_da_a = 0;
          for (std::size_t j = 0; j < tk; ++j) dot_da_a += da[j] * arow[j];
          Real* qgr = qg.row(i).data() + off;
          const Real* qrow = qv.row(i).data() + off;
          for (std::size_t j = 0; j < tk; ++j) {
            const Real ds = arow[j] * (da[j] - dot_da_a) * inv_sqrt_dh;
            const Real* kr = kv.row(j).data() + off;
            Real* kgr = kg.row(j).data() + off;
            for (std::size_t c = 0; c < dh; ++c) {
              qgr[c] += ds * kr[c];
              kgr[c] += ds * qrow[c];
            }
          }
        }
      }
    });
  }

  // ----------------------------------------------------------- softmax/losses

  Index log_softmax_rows(Index a) {
    Matrix<Real> out = nodes_[a].value;
    const std::size_t n = out.rows(), d = out.cols();
    for (std::size_t i = 0; i < n; ++i) {
      Real* r = out.row(i).data();
      Real mx = r[0];
      for (std::size_t j = 1; j < d; ++j) mx = r[j] > mx ? r[j] : mx;
      Real sum = 0;
      for (std::size_t j = 0; j < d; ++j) sum += std::exp(r[j] - mx);
      const Real lse = mx + std::log(sum);
      for (std::size_t j = 0; j < d; ++j) r[j] -= lse;
    }
    return push(std::move(out), [this, a](Index y) {
      const auto& g = nodes_[y].grad;
      const auto& logp = nodes_[y].value;
      auto& ag = nodes_[a].grad;
      const std::size_t n = g.rows(), d = g.cols();
      for (std::size_t i = 0; i < n; ++i) {
        const Real* gr = g.row(i).data();
        const Real* lr = logp.row(i).data();
        Real gsum = 0;
        for (std::size_t j = 0; j < d; ++j) gsum += gr[j];
        Real* ar = ag.row(i).data();
        for (std::size_t j = 0; j < d; ++j)
          ar[j] += gr[j] - std::exp(lr[j]) * gsum;
      }
    });
  }

  // Weighted squared-error sum against a constant target:
  //   sum_t weight[t] * || pred_t - target_t ||^2        (1x1 output)
  // Rows with zero weight contribute nothing, in value or gradient.
  Index weighted_sq_error(Index pred, Matrix<Real> target, std::vector<Real> weights) {
    const auto& pv = nodes_[pred].value;
    if (!pv.same_shape(target))
      throw std::invalid_argument("weighted_sq_error: target shape mismatch");
    if (weights.size() != pv.rows())
      throw std::invalid_argument("weighted_sq_error: weights length mismatch");
    auto tgt = std::make_shared<Matrix<Real>>(std::move(target));
    auto wts = std::make_shared<std::vector<Real>>(std::move(weights));
    Real loss = 0;
    for (std::size_t i = 0; i < pv.rows(); ++i) {
      const Real w = (*wts)[i];
      if (w == Real(0)) continue;
      const Real* pr = pv.row(i).data();
      const Real* tr = tgt->row(i).data();
      Real acc = 0;
      for (std::size_t j = 0; j < pv.cols(); ++j) {
        const Real diff = pr[j] - tr[j];
        acc += diff * diff;
      }
      loss += w * acc;
    }
    Matrix<Real> out(1, 1);
    out(0, 0) = loss;
    return push(std::move(out), [this, pred, tgt, wts](Index y) {
      const Real gy = nodes_[y].grad(0, 0);
      const auto& pv = nodes_[pred].value;
      auto& pg = nodes_[pred].grad;
      for (std::size_t i = 0; i < pv.rows(); ++i) {
        const Real w = (*wts)[i];
        if (w == Real(0)) continue;
        const Real* pr = pv.row(i).data();
        const Real* tr = tgt->row(i).data();
        Real* gr = pg.row(i).data();
        for (std::size_t j = 0; j < pv.cols(); ++j)
          gr[j] += gy * w * Real(2) * (pr[j] - tr[j]);
      }
    });
  }

  // Label-smoothed cross entropy, summed over positions (1x1 output):
  //   sum_pos -sum_v q_v log p_v,  q = (1-eps) onehot + eps/V.
  // Positions whose target equals pad_id are skipped entirely.
  Index smoothed_ce_sum(Index logprobs, std::vector<TokenId> targets, Real eps_ls,
                        TokenId pad_id = kPadId) {
    const auto& lp = nodes_[logprobs].value;
    if (targets.size() != lp.rows())
      throw std::invalid_argument("smoothed_ce_sum: target length mismatch");
    if (eps_ls < Real(0) || eps_ls >= Real(1))
      throw std::invalid_argument("smoothed_ce_sum: eps_ls must be in [0, 1)");
    const std::size_t vsize = lp.cols();
    for (TokenId t : targets)
      if (t != pad_id && (t < 0 || static_cast<std::size_t>(t) >= vsize))
        throw std::invalid_argument("smoothed_ce_sum: target id out of range");
    auto tg = std::make_shared<std::vector<TokenId>>(std::move(targets));
    const Real uniform = eps_ls / static_cast<Real>(vsize);
    const Real hot = Real(1) - eps_ls;
    Real loss = 0;
    for (std::size_t i = 0; i < lp.rows(); ++i) {
      if ((*tg)[i] == pad_id) continue;
      const Real* r = lp.row(i).data();
      Real acc = 0;
      for (std::size_t j = 0; j < vsize; ++j) acc -= uniform * r[j];
      acc -= hot * r[static_cast<std::size_t>((*tg)[i])];
      loss += acc;
    }
    Matrix<Real> out(1, 1);
    out(0, 0) = loss;
    return push(std::move(out), [this, logprobs, tg, uniform, hot, pad_id](Index y) {
      const Real gy = nodes_[y].grad(0, 0);
      const auto& lp = nodes_[logprobs].value;
      auto& lg = nodes_[logprobs].grad;
      for (std::size_t i = 0; i < lp.rows(); ++i) {
        if ((*tg)[i] == pad_id) continue;
        Real* gr = lg.row(i).data();
        for (std::size_t j = 0; j < lp.cols(); ++j) gr[j] -= gy * uniform;
        gr[static_cast<std::size_t>((*tg)[i])] -= gy * hot;
      }
    });
  }

  // Sum of all elements (1x1 output).
  Index sum_elements(Index a) {
    Real total = 0;
    for (Real v : nodes_[a].value.raw()) total += v;
    Matrix<Real> out(1, 1);
    out(0, 0) = total;
    return push(std::move(out), [this, a](Index y) {
      const Real gy = nodes_[y].grad(0, 0);
      for (auto& v : nodes_[a].grad.raw()) v += gy;
    });
  }

  // Sum of 1x1 scalar nodes.
  Index sum_scalars(const std::vector<Index>& terms) {
    if (terms.empty()) throw std::invalid_argument("sum_scalars: no terms");
    Real total = 0;
    for (Index t : terms) {
      if (nodes_[t].value.size() != 1)
        throw std::invalid_argument("sum_scalars: non-scalar term");
      total += nodes_[t].value(0, 0);
    }
    Matrix<Real> out(1, 1);
    out(0, 0) = total;
    auto list = std::make_shared<std::vector<Index>>(terms);
    return push(std::move(out), [this, list](Index y) {
      const Real gy = nodes_[y].grad(0, 0);
      for (Index t : *list) nodes_[t].grad(0, 0) += gy;
    });
  }

  // ------------------------------------------------------------ backward

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node.
  // Requires a recorded forward pass ending in a scalar node.
  void backward(Index loss) {
    if (nodes_.empty()) throw std::logic_error("backward: no recorded forward pass");
    if (loss >= nodes_.size())
      throw std::logic_error("backward: loss node out of range");
    if (nodes_[loss].value.size() != 1)
      throw std::logic_error("backward: loss node is not scalar");
    if (backward_done_)
      throw std::logic_error("backward: tape already differentiated");
    backward_done_ = true;
    nodes_[loss].grad(0, 0) = Real(1);
    for (std::size_t i = nodes_.size(); i-- > 0;)
      if (nodes_[i].backward) nodes_[i].backward(i);
  }

  bool backward_done() const { return backward_done_; }

  // Gradients of trainable parameter leaves, keyed by registration name.
  std::map<std::string, Matrix<Real>> param_grads() const {
    if (!backward_done_)
      throw std::logic_error("param_grads: backward has not run");
    std::map<std::string, Matrix<Real>> out;
    for (const auto& [name, idx] : trainable_params_) out.emplace(name, nodes_[idx].grad);
    return out;
  }

  // Adds this tape's trainable gradients into an accumulator.
  void accumulate_param_grads(std::map<std::string, Matrix<Real>>& acc) const {
    if (!backward_done_)
      throw std::logic_error("accumulate_param_grads: backward has not run");
    for (const auto& [name, idx] : trainable_params_) {
      const auto& g = nodes_[idx].grad;
      auto it = acc.find(name);
      if (it == acc.end()) {
        acc.emplace(name, g);
      } else {
        if (!it->second.same_shape(g))
          throw std::invalid_argument("gradient accumulation shape mismatch: " + name);
        for (std::size_t i = 0; i < g.size(); ++i)
          it->second.data()[i] += g.data()[i];
      }
    }
  }

 private:
  struct Node {
    Matrix<Real> value;
    Matrix<Real> grad;
    std::function<void(Index)> backward;
  };

  Index push(Matrix<Real> value, std::function<void(Index)> backward) {
    Node n;
    n.grad = Matrix<Real>(value.rows(), value.cols());
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  void accumulate(Index target, const Matrix<Real>& g) {
    auto& tg = nodes_[target].grad;
    for (std::size_t i = 0; i < g.size(); ++i) tg.data()[i] += g.data()[i];
  }

  void check_same_shape(Index a, Index b, const char* op) const {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }

  std::vector<Node> nodes_;
  std::map<std::string, Index> param_index_;
  std::vector<std::pair<std::string, Index>> trainable_params_;
  bool backward_done_ = false;
};

}  // namespace mskseq
