#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "torml/baselines.hpp"
#include "torml/dataset.hpp"
#include "torml/labels.hpp"
#include "torml/predictor.hpp"
#include "torml/random.hpp"
#include "torml/serialize.hpp"

namespace torml {

/// Maps distinct raw feature values to dense token ids. Distinctness is
/// global across features; id 0 is padding and size()+1 the unknown-value
/// token.
class ValueVocab {
 public:
  ValueVocab() = default;
  explicit ValueVocab(std::vector<double> sorted_values)
      : values_(std::move(sorted_values)) {}

  int size() const { return int(values_.size()); }
  int unknown_id() const { return size() + 1; }
  int table_rows() const { return size() + 2; }
  const std::vector<double>& values() const { return values_; }

  int token_of(double v) const {
    auto it = std::lower_bound(values_.begin(), values_.end(), v);
    if (it != values_.end() && *it == v)
      return int(it - values_.begin()) + 1;
    return unknown_id();
  }

 private:
  std::vector<double> values_;  // ascending, unique
};

inline ValueVocab build_vocab(const Dataset& train) {
  if (train.samples.empty())
    throw std::invalid_argument("cannot build vocabulary from empty dataset");
  std::set<double> distinct;
  for (const auto& s : train.samples)
    for (double v : s.features) distinct.insert(v);
  return ValueVocab(std::vector<double>(distinct.begin(), distinct.end()));
}

inline std::vector<int> encode(const TraceSample& sample,
                               const ValueVocab& vocab, int expect_width) {
  if (int(sample.features.size()) != expect_width)
    throw std::invalid_argument("sample width does not match the vocabulary");
  std::vector<int> tokens(sample.features.size());
  for (std::size_t i = 0; i < sample.features.size(); ++i)
    tokens[i] = vocab.token_of(sample.features[i]);
  return tokens;
}

namespace lamp {

struct NetConfig {
  int d_model = 512;
  int d_hidden = 1024;
  int heads = 4;
  int rounds = 2;
  double dropout = 0.1;
  int n_labels = kNumLabels;
  int n_features = 0;
  int vocab_rows = 0;  // embedding table rows = vocab size + 2

  void validate() const {
    if (d_model <= 0 || d_hidden <= 0 || heads <= 0 || rounds <= 0 ||
        n_labels <= 0 || n_features <= 0 || vocab_rows < 2)
      throw std::invalid_argument("network dimensions must be positive");
    if (d_model % heads != 0)
      throw std::invalid_argument("d_model must be divisible by heads");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw std::invalid_argument("dropout must be in [0,1)");
  }
};

// Row-major matrix as a flat buffer.
struct Mat {
  std::vector<double> v;
  int rows = 0, cols = 0;

  void resize(int r, int c) {
    rows = r;
    cols = c;
    v.assign(std::size_t(r) * c, 0.0);
  }
  double* row(int r) { return v.data() + std::size_t(r) * cols; }
  const double* row(int r) const { return v.data() + std::size_t(r) * cols; }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

namespace math {

// C (n x m) = A (n x k) * B (k x m), accumulating into C.
inline void gemm_acc(const Mat& a, const Mat& b, Mat& c) {
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (int p = 0; p < a.cols; ++p) {
      const double x = ar[p];
      if (x == 0.0) continue;
      const double* br = b.row(p);
      for (int j = 0; j < b.cols; ++j) cr[j] += x * br[j];
    }
  }
}

inline void gemm(const Mat& a, const Mat& b, Mat& c) {
  c.resize(a.rows, b.cols);
  gemm_acc(a, b, c);
}

// C (k x m) += A^T (k x n as n x k) * B (n x m): weight gradients.
inline void gemm_tn_acc(const Mat& a, const Mat& b, Mat& c) {
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    const double* br = b.row(i);
    for (int p = 0; p < a.cols; ++p) {
      const double x = ar[p];
      if (x == 0.0) continue;
      double* cr = c.row(p);
      for (int j = 0; j < b.cols; ++j) cr[j] += x * br[j];
    }
  }
}

// C (n x k) += A (n x m) * B^T (m x k as k x m): input gradients.
inline void gemm_nt_acc(const Mat& a, const Mat& b, Mat& c) {
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* br = b.row(j);
      double s = 0;
      for (int p = 0; p < a.cols; ++p) s += ar[p] * br[p];
      cr[j] += s;
    }
  }
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

inline double gelu_grad(double x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
         x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace math

/// Parameters of one message-passing round: a feature-to-label attention
/// block and a label-to-label attention block, each followed by a residual
/// feedforward update.
struct RoundParams {
  Mat f_wq, f_wk, f_wv, f_wo, f_w1, f_w2;
  Mat f_b1, f_b2;  // 1 x dim rows
  Mat l_wq, l_wk, l_wv, l_wo, l_w1, l_w2;
  Mat l_b1, l_b2;
};

struct Params {
  Mat tok_emb;  // vocab_rows x d
  Mat pos_emb;  // F x d
  Mat lab_emb;  // L x d
  std::vector<RoundParams> rounds;
  Mat readout_w;  // L x d
  Mat readout_b;  // 1 x L
};

struct ParamRef {
  const char* name;
  Mat* value;
};

/// The message-passing network. Pure double math, deterministic given the
/// seed streams handed to it.
class Network {
 public:
  Network() = default;
  Network(const NetConfig& config, std::uint64_t init_seed) {
    config.validate();
    config_ = config;
    allocate();
    init(init_seed);
  }

  const NetConfig& config() const { return config_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  /// Label-to-label adjacency with self-edges; attention logits are only
  /// formed where the mask is true.
  void set_label_mask(const std::vector<std::vector<bool>>& mask) {
    if (int(mask.size()) != config_.n_labels)
      throw std::invalid_argument("mask size mismatch");
    mask_ = mask;
    for (int i = 0; i < config_.n_labels; ++i) {
      if (int(mask_[i].size()) != config_.n_labels)
        throw std::invalid_argument("mask size mismatch");
      mask_[i][i] = true;
    }
  }
  const std::vector<std::vector<bool>>& label_mask() const { return mask_; }

  std::vector<ParamRef> param_refs() {
    std::vector<ParamRef> refs = {{"tok_emb", &params_.tok_emb},
                                  {"pos_emb", &params_.pos_emb},
                                  {"lab_emb", &params_.lab_emb}};
    for (auto& r : params_.rounds) {
      refs.push_back({"f_wq", &r.f_wq});
      refs.push_back({"f_wk", &r.f_wk});
      refs.push_back({"f_wv", &r.f_wv});
      refs.push_back({"f_wo", &r.f_wo});
      refs.push_back({"f_w1", &r.f_w1});
      refs.push_back({"f_b1", &r.f_b1});
      refs.push_back({"f_w2", &r.f_w2});
      refs.push_back({"f_b2", &r.f_b2});
      refs.push_back({"l_wq", &r.l_wq});
      refs.push_back({"l_wk", &r.l_wk});
      refs.push_back({"l_wv", &r.l_wv});
      refs.push_back({"l_wo", &r.l_wo});
      refs.push_back({"l_w1", &r.l_w1});
      refs.push_back({"l_b1", &r.l_b1});
      refs.push_back({"l_w2", &r.l_w2});
      refs.push_back({"l_b2", &r.l_b2});
    }
    refs.push_back({"readout_w", &params_.readout_w});
    refs.push_back({"readout_b", &params_.readout_b});
    return refs;
  }

  // One attention + feedforward block's intermediates, kept for backward.
  struct BlockTrace {
    Mat q, k, v;       // projections
    Mat attn;          // heads stacked: (heads*Lq) x Lk
    Mat ctx, proj;     // attention output before/after Wo
    Mat drop1, drop2;  // dropout masks (empty in eval mode)
    Mat res1;          // after attention residual
    Mat ffn_pre, ffn_act, ffn_out;
    Mat out;  // block output
  };

  struct Trace {
    std::vector<int> tokens;
    Mat z;  // F x d input node states
    std::vector<BlockTrace> f2l, l2l;
    Mat h0;  // initial label states
    std::vector<double> logits, probs;
  };

  /// Forward pass. `drop_rng` enables training-mode dropout; pass nullptr
  /// for the deterministic evaluation path.
  std::vector<double> forward(const std::vector<int>& tokens, Trace& trace,
                              Rng* drop_rng = nullptr) const {
    if (int(tokens.size()) != config_.n_features)
      throw std::invalid_argument("token sequence length mismatch");
    const int F = config_.n_features, L = config_.n_labels,
              d = config_.d_model;
    trace.tokens = tokens;
    trace.z.resize(F, d);
    for (int j = 0; j < F; ++j) {
      const int tok = tokens[j];
      if (tok < 0 || tok >= config_.vocab_rows)
        throw std::invalid_argument("token id out of range");
      const double* te = params_.tok_emb.row(tok);
      const double* pe = params_.pos_emb.row(j);
      double* zr = trace.z.row(j);
      for (int m = 0; m < d; ++m) zr[m] = te[m] + pe[m];
    }

    trace.h0 = params_.lab_emb;
    trace.f2l.assign(config_.rounds, {});
    trace.l2l.assign(config_.rounds, {});

    const Mat* h = &trace.h0;
    for (int r = 0; r < config_.rounds; ++r) {
      run_block(*h, trace.z, params_.rounds[r], /*masked=*/false,
                trace.f2l[r], drop_rng);
      run_block(trace.f2l[r].out, trace.f2l[r].out, params_.rounds[r],
                /*masked=*/true, trace.l2l[r], drop_rng);
      h = &trace.l2l[r].out;
    }

    trace.logits.resize(L);
    trace.probs.resize(L);
    for (int i = 0; i < L; ++i) {
      const double* hw = h->row(i);
      const double* rw = params_.readout_w.row(i);
      double s = params_.readout_b.v[i];
      for (int m = 0; m < d; ++m) s += hw[m] * rw[m];
      trace.logits[i] = s;
      trace.probs[i] = math::sigmoid(s);
    }
    return trace.probs;
  }

  std::vector<double> forward_probs(const std::vector<int>& tokens) const {
    Trace t;
    return forward(tokens, t);
  }

  /// Summed binary cross-entropy over labels.
  static double bce_loss(const std::vector<double>& probs,
                         const LabelSet& y) {
    double loss = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const double p = std::clamp(probs[i], 1e-12, 1.0 - 1e-12);
      loss += y.test(int(i)) ? -std::log(p) : -std::log(1.0 - p);
    }
    return loss;
  }

  /// Accumulates gradients of the summed BCE into `grads` (same shapes as
  /// params, pre-allocated via like_params()).
  void backward(const Trace& trace, const LabelSet& y, Params& grads) const {
    const int F = config_.n_features, L = config_.n_labels,
              d = config_.d_model;
    Mat dh;
    dh.resize(L, d);
    const Mat& h_final = trace.l2l.back().out;
    for (int i = 0; i < L; ++i) {
      const double dlogit = trace.probs[i] - (y.test(i) ? 1.0 : 0.0);
      grads.readout_b.v[i] += dlogit;
      const double* hr = h_final.row(i);
      const double* rw = params_.readout_w.row(i);
      double* gw = grads.readout_w.row(i);
      double* dhr = dh.row(i);
      for (int m = 0; m < d; ++m) {
        gw[m] += dlogit * hr[m];
        dhr[m] += dlogit * rw[m];
      }
    }

    Mat dz;
    dz.resize(F, d);
    for (int r = config_.rounds - 1; r >= 0; --r) {
      // Label-to-label block: queries, keys and values all came from the
      // feature round's output.
      Mat dh_f2l;
      dh_f2l.resize(L, d);
      backward_block(trace.f2l[r].out, trace.f2l[r].out, params_.rounds[r],
                     /*masked=*/true, trace.l2l[r], dh, dh_f2l, dh_f2l,
                     grads.rounds[r]);
      // Feature-to-label block: queries from label states, keys/values from
      // the input nodes.
      Mat dh_prev, dz_round;
      dh_prev.resize(L, d);
      dz_round.resize(F, d);
      backward_block(r == 0 ? trace.h0 : trace.l2l[r - 1].out, trace.z,
                     params_.rounds[r], /*masked=*/false, trace.f2l[r],
                     dh_f2l, dh_prev, dz_round, grads.rounds[r]);
      for (std::size_t i = 0; i < dz.v.size(); ++i) dz.v[i] += dz_round.v[i];
      dh = std::move(dh_prev);
    }

    // dh now sits on the initial label states.
    for (std::size_t i = 0; i < dh.v.size(); ++i)
      grads.lab_emb.v[i] += dh.v[i];
    for (int j = 0; j < F; ++j) {
      const double* dzr = dz.row(j);
      double* gt = grads.tok_emb.row(trace.tokens[j]);
      double* gp = grads.pos_emb.row(j);
      for (int m = 0; m < d; ++m) {
        gt[m] += dzr[m];
        gp[m] += dzr[m];
      }
    }
  }

  Params like_params() const {
    Params g;
    shape_params(g);
    return g;
  }

  /// Runs one label-to-label block on explicit states; lets tests probe the
  /// mask semantics directly.
  Mat label_round_states(int round, const Mat& states) const {
    BlockTrace bt;
    run_block(states, states, params_.rounds[round], /*masked=*/true, bt,
              nullptr);
    return bt.out;
  }

  void serialize(io::ByteWriter& w) const {
    w.u32(std::uint32_t(config_.d_model));
    w.u32(std::uint32_t(config_.d_hidden));
    w.u32(std::uint32_t(config_.heads));
    w.u32(std::uint32_t(config_.rounds));
    w.f64(config_.dropout);
    w.u32(std::uint32_t(config_.n_labels));
    w.u32(std::uint32_t(config_.n_features));
    w.u32(std::uint32_t(config_.vocab_rows));
    for (int i = 0; i < config_.n_labels; ++i) {
      std::uint32_t bits = 0;
      for (int j = 0; j < config_.n_labels; ++j)
        if (mask_[i][j]) bits |= (1u << j);
      w.u32(bits);
    }
    Network* self = const_cast<Network*>(this);
    for (auto ref : self->param_refs()) {
      w.u32(std::uint32_t(ref.value->rows));
      w.u32(std::uint32_t(ref.value->cols));
      w.f32_vec(ref.value->v);
    }
  }

  static Network deserialize(io::ByteReader& r) {
    NetConfig c;
    c.d_model = int(r.u32());
    c.d_hidden = int(r.u32());
    c.heads = int(r.u32());
    c.rounds = int(r.u32());
    c.dropout = r.f64();
    c.n_labels = int(r.u32());
    c.n_features = int(r.u32());
    c.vocab_rows = int(r.u32());
    Network net(c, /*init_seed=*/0);
    std::vector<std::vector<bool>> mask(c.n_labels,
                                        std::vector<bool>(c.n_labels));
    for (int i = 0; i < c.n_labels; ++i) {
      const std::uint32_t bits = r.u32();
      for (int j = 0; j < c.n_labels; ++j) mask[i][j] = (bits >> j) & 1;
    }
    net.set_label_mask(mask);
    for (auto ref : net.param_refs()) {
      const int rows = int(r.u32()), cols = int(r.u32());
      if (rows != ref.value->rows || cols != ref.value->cols)
        throw std::runtime_error("model tensor shape mismatch");
      ref.value->v = r.f32_vec();
      if (int(ref.value->v.size()) != rows * cols)
        throw std::runtime_error("model tensor size mismatch");
    }
    return net;
  }

 private:
  void shape_params(Params& p) const {
    const int d = config_.d_model, h = config_.d_hidden, L = config_.n_labels,
              F = config_.n_features;
    p.tok_emb.resize(config_.vocab_rows, d);
    p.pos_emb.resize(F, d);
    p.lab_emb.resize(L, d);
    p.rounds.resize(config_.rounds);
    for (auto& r : p.rounds) {
      for (Mat* m : {&r.f_wq, &r.f_wk, &r.f_wv, &r.f_wo, &r.l_wq, &r.l_wk,
                     &r.l_wv, &r.l_wo})
        m->resize(d, d);
      r.f_w1.resize(d, h);
      r.l_w1.resize(d, h);
      r.f_w2.resize(h, d);
      r.l_w2.resize(h, d);
      r.f_b1.resize(1, h);
      r.l_b1.resize(1, h);
      r.f_b2.resize(1, d);
      r.l_b2.resize(1, d);
    }
    p.readout_w.resize(L, d);
    p.readout_b.resize(1, L);
  }

  void allocate() {
    shape_params(params_);
    mask_.assign(config_.n_labels,
                 std::vector<bool>(config_.n_labels, true));
  }

  void init(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x1A));
    auto fill = [&](Mat& m, double scale) {
      for (double& v : m.v) v = rng.gaussian() * scale;
    };
    const double emb_scale = 1.0 / std::sqrt(double(config_.d_model));
    fill(params_.tok_emb, emb_scale);
    fill(params_.pos_emb, emb_scale);
    fill(params_.lab_emb, emb_scale);
    for (auto& r : params_.rounds) {
      const double proj_scale = 1.0 / std::sqrt(double(config_.d_model));
      for (Mat* m : {&r.f_wq, &r.f_wk, &r.f_wv, &r.f_wo, &r.l_wq, &r.l_wk,
                     &r.l_wv, &r.l_wo})
        fill(*m, proj_scale);
      fill(r.f_w1, proj_scale);
      fill(r.l_w1, proj_scale);
      const double hid_scale = 1.0 / std::sqrt(double(config_.d_hidden));
      fill(r.f_w2, hid_scale);
      fill(r.l_w2, hid_scale);
      // Biases start at zero.
    }
    fill(params_.readout_w, emb_scale);
  }

  void apply_dropout(Mat& x, Mat& mask, Rng* rng) const {
    if (rng == nullptr || config_.dropout == 0.0) return;
    mask.resize(x.rows, x.cols);
    const double keep = 1.0 - config_.dropout;
    for (std::size_t i = 0; i < x.v.size(); ++i) {
      mask.v[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
      x.v[i] *= mask.v[i];
    }
  }

  // queries from `hq`, keys/values from `hk`; label mask applied when
  // `masked`.
  void run_block(const Mat& hq, const Mat& hk, const RoundParams& rp,
                 bool masked, BlockTrace& bt, Rng* drop_rng) const {
    const Mat& wq = masked ? rp.l_wq : rp.f_wq;
    const Mat& wk = masked ? rp.l_wk : rp.f_wk;
    const Mat& wv = masked ? rp.l_wv : rp.f_wv;
    const Mat& wo = masked ? rp.l_wo : rp.f_wo;
    const Mat& w1 = masked ? rp.l_w1 : rp.f_w1;
    const Mat& b1 = masked ? rp.l_b1 : rp.f_b1;
    const Mat& w2 = masked ? rp.l_w2 : rp.f_w2;
    const Mat& b2 = masked ? rp.l_b2 : rp.f_b2;

    const int Lq = hq.rows, Lk = hk.rows, d = config_.d_model,
              heads = config_.heads, dk = d / heads;
    const double scale = 1.0 / std::sqrt(double(dk));

    math::gemm(hq, wq, bt.q);
    math::gemm(hk, wk, bt.k);
    math::gemm(hk, wv, bt.v);

    bt.attn.resize(heads * Lq, Lk);
    bt.ctx.resize(Lq, d);
    std::vector<double> scores(Lk);
    for (int hd = 0; hd < heads; ++hd) {
      const int off = hd * dk;
      for (int i = 0; i < Lq; ++i) {
        const double* qr = bt.q.row(i) + off;
        double max_score = -1e300;
        for (int j = 0; j < Lk; ++j) {
          if (masked && !mask_[i][j]) continue;
          const double* kr = bt.k.row(j) + off;
          double s = 0;
          for (int m = 0; m < dk; ++m) s += qr[m] * kr[m];
          scores[j] = s * scale;
          max_score = std::max(max_score, scores[j]);
        }
        double* ar = bt.attn.row(hd * Lq + i);
        double denom = 0;
        for (int j = 0; j < Lk; ++j) {
          if (masked && !mask_[i][j]) {
            ar[j] = 0.0;
            continue;
          }
          ar[j] = std::exp(scores[j] - max_score);
          denom += ar[j];
        }
        double* cr = bt.ctx.row(i) + off;
        for (int j = 0; j < Lk; ++j) {
          if (ar[j] == 0.0) continue;
          ar[j] /= denom;
          const double* vr = bt.v.row(j) + off;
          for (int m = 0; m < dk; ++m) cr[m] += ar[j] * vr[m];
        }
      }
    }

    math::gemm(bt.ctx, wo, bt.proj);
    apply_dropout(bt.proj, bt.drop1, drop_rng);
    bt.res1 = hq;
    for (std::size_t i = 0; i < bt.res1.v.size(); ++i)
      bt.res1.v[i] += bt.proj.v[i];

    math::gemm(bt.res1, w1, bt.ffn_pre);
    for (int i = 0; i < Lq; ++i) {
      double* r = bt.ffn_pre.row(i);
      for (int m = 0; m < config_.d_hidden; ++m) r[m] += b1.v[m];
    }
    bt.ffn_act.resize(Lq, config_.d_hidden);
    for (std::size_t i = 0; i < bt.ffn_pre.v.size(); ++i)
      bt.ffn_act.v[i] = math::gelu(bt.ffn_pre.v[i]);
    math::gemm(bt.ffn_act, w2, bt.ffn_out);
    for (int i = 0; i < Lq; ++i) {
      double* r = bt.ffn_out.row(i);
      for (int m = 0; m < d; ++m) r[m] += b2.v[m];
    }
    apply_dropout(bt.ffn_out, bt.drop2, drop_rng);
    bt.out = bt.res1;
    for (std::size_t i = 0; i < bt.out.v.size(); ++i)
      bt.out.v[i] += bt.ffn_out.v[i];
  }

  // Mirrors run_block. `dout` is the gradient on the block output; `dhq` and
  // `dhk` receive gradients on the block inputs (they may alias for
  // self-attention).
  void backward_block(const Mat& hq, const Mat& hk, const RoundParams& rp,
                      bool masked, const BlockTrace& bt, const Mat& dout,
                      Mat& dhq, Mat& dhk, RoundParams& g) const {
    const Mat& wq = masked ? rp.l_wq : rp.f_wq;
    const Mat& wk = masked ? rp.l_wk : rp.f_wk;
    const Mat& wv = masked ? rp.l_wv : rp.f_wv;
    const Mat& wo = masked ? rp.l_wo : rp.f_wo;
    const Mat& w1 = masked ? rp.l_w1 : rp.f_w1;
    const Mat& w2 = masked ? rp.l_w2 : rp.f_w2;
    Mat& gwq = masked ? g.l_wq : g.f_wq;
    Mat& gwk = masked ? g.l_wk : g.f_wk;
    Mat& gwv = masked ? g.l_wv : g.f_wv;
    Mat& gwo = masked ? g.l_wo : g.f_wo;
    Mat& gw1 = masked ? g.l_w1 : g.f_w1;
    Mat& gb1 = masked ? g.l_b1 : g.f_b1;
    Mat& gw2 = masked ? g.l_w2 : g.f_w2;
    Mat& gb2 = masked ? g.l_b2 : g.f_b2;

    const int Lq = hq.rows, Lk = hk.rows, d = config_.d_model,
              heads = config_.heads, dk = d / heads,
              dh_hidden = config_.d_hidden;
    const double scale = 1.0 / std::sqrt(double(dk));

    // out = res1 + drop2 .* ffn_out
    Mat dffn_out = dout;
    if (bt.drop2.rows > 0)
      for (std::size_t i = 0; i < dffn_out.v.size(); ++i)
        dffn_out.v[i] *= bt.drop2.v[i];
    Mat dres1 = dout;

    for (int i = 0; i < Lq; ++i) {
      const double* r = dffn_out.row(i);
      for (int m = 0; m < d; ++m) gb2.v[m] += r[m];
    }
    Mat dact;
    dact.resize(Lq, dh_hidden);
    math::gemm_nt_acc(dffn_out, w2, dact);
    math::gemm_tn_acc(bt.ffn_act, dffn_out, gw2);
    Mat dpre = dact;
    for (std::size_t i = 0; i < dpre.v.size(); ++i)
      dpre.v[i] *= math::gelu_grad(bt.ffn_pre.v[i]);
    for (int i = 0; i < Lq; ++i) {
      const double* r = dpre.row(i);
      for (int m = 0; m < dh_hidden; ++m) gb1.v[m] += r[m];
    }
    math::gemm_nt_acc(dpre, w1, dres1);
    math::gemm_tn_acc(bt.res1, dpre, gw1);

    // res1 = hq + drop1 .* proj
    Mat dproj = dres1;
    if (bt.drop1.rows > 0)
      for (std::size_t i = 0; i < dproj.v.size(); ++i)
        dproj.v[i] *= bt.drop1.v[i];
    for (std::size_t i = 0; i < dres1.v.size(); ++i)
      dhq.v[i] += dres1.v[i];

    Mat dctx;
    dctx.resize(Lq, d);
    math::gemm_nt_acc(dproj, wo, dctx);
    math::gemm_tn_acc(bt.ctx, dproj, gwo);

    Mat dq, dk_mat, dv;
    dq.resize(Lq, d);
    dk_mat.resize(Lk, d);
    dv.resize(Lk, d);
    std::vector<double> dattn(Lk), dscore(Lk);
    for (int hd = 0; hd < heads; ++hd) {
      const int off = hd * dk;
      for (int i = 0; i < Lq; ++i) {
        const double* ar = bt.attn.row(hd * Lq + i);
        const double* dcr = dctx.row(i) + off;
        double inner = 0;
        for (int j = 0; j < Lk; ++j) {
          if (ar[j] == 0.0 && masked && !mask_[i][j]) {
            dattn[j] = 0;
            continue;
          }
          const double* vr = bt.v.row(j) + off;
          double s = 0;
          for (int m = 0; m < dk; ++m) s += dcr[m] * vr[m];
          dattn[j] = s;
          inner += s * ar[j];
          double* dvr = dv.row(j) + off;
          for (int m = 0; m < dk; ++m) dvr[m] += ar[j] * dcr[m];
        }
        const double* qr = bt.q.row(i) + off;
        double* dqr = dq.row(i) + off;
        for (int j = 0; j < Lk; ++j) {
          if (masked && !mask_[i][j]) continue;
          dscore[j] = ar[j] * (dattn[j] - inner) * scale;
          const double* kr = bt.k.row(j) + off;
          double* dkr = dk_mat.row(j) + off;
          for (int m = 0; m < dk; ++m) {
            dqr[m] += dscore[j] * kr[m];
            dkr[m] += dscore[j] * qr[m];
          }
        }
      }
    }

    math::gemm_nt_acc(dq, wq, dhq);
    math::gemm_tn_acc(hq, dq, gwq);
    math::gemm_nt_acc(dk_mat, wk, dhk);
    math::gemm_tn_acc(hk, dk_mat, gwk);
    math::gemm_nt_acc(dv, wv, dhk);
    math::gemm_tn_acc(hk, dv, gwv);
  }

  NetConfig config_;
  Params params_;
  std::vector<std::vector<bool>> mask_;
};

/// Adam over the network's parameter list.
class Adam {
 public:
  Adam(Network& net, double lr) : net_(net), lr_(lr) {
    for (auto ref : net.param_refs()) {
      m_.emplace_back(ref.value->v.size(), 0.0);
      v_.emplace_back(ref.value->v.size(), 0.0);
    }
  }

  void step(Params& grads) {
    ++t_;
    auto refs = net_.param_refs();
    auto grefs = grad_refs(grads);
    const double bc1 = 1.0 - std::pow(kBeta1, double(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, double(t_));
    for (std::size_t p = 0; p < refs.size(); ++p) {
      auto& value = refs[p].value->v;
      auto& grad = grefs[p]->v;
      for (std::size_t i = 0; i < value.size(); ++i) {
        m_[p][i] = kBeta1 * m_[p][i] + (1.0 - kBeta1) * grad[i];
        v_[p][i] = kBeta2 * v_[p][i] + (1.0 - kBeta2) * grad[i] * grad[i];
        const double mhat = m_[p][i] / bc1;
        const double vhat = v_[p][i] / bc2;
        value[i] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
      }
    }
  }

  static std::vector<Mat*> grad_refs(Params& g) {
    std::vector<Mat*> refs = {&g.tok_emb, &g.pos_emb, &g.lab_emb};
    for (auto& r : g.rounds) {
      for (Mat* m : {&r.f_wq, &r.f_wk, &r.f_wv, &r.f_wo, &r.f_w1, &r.f_b1,
                     &r.f_w2, &r.f_b2, &r.l_wq, &r.l_wk, &r.l_wv, &r.l_wo,
                     &r.l_w1, &r.l_b1, &r.l_w2, &r.l_b2})
        refs.push_back(m);
    }
    refs.push_back(&g.readout_w);
    refs.push_back(&g.readout_b);
    return refs;
  }

  static void zero(Params& g) {
    for (Mat* m : grad_refs(g)) m->zero();
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  Network& net_;
  double lr_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace lamp

enum class LabelMaskKind { Prior, Full };

/// Training-time configuration, defaults per the final model's
/// hyperparameters.
struct LampConfig {
  int d_model = 512;
  int d_hidden = 1024;
  double dropout = 0.1;
  double learning_rate = 0.0002;
  int batch_size = 64;
  int epochs = 100;
  std::string optimizer = "adam";
  std::string loss = "bce";
  LabelMaskKind label_mask = LabelMaskKind::Prior;
  std::string encoder = "graph";
  std::string decoder = "graph";
  int message_rounds = 2;
  int attention_heads = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (optimizer != "adam")
      throw std::invalid_argument("only the adam optimizer is implemented");
    if (loss != "bce")
      throw std::invalid_argument(
          "only per-label binary cross-entropy is implemented");
    if (batch_size < 1 || epochs < 0)
      throw std::invalid_argument("bad batch size or epoch count");
    if (learning_rate <= 0)
      throw std::invalid_argument("learning rate must be positive");
  }
};

/// A trained LaMP classifier: vocabulary, label mask, the network, and the
/// feature reduction applied at fit time. Accepts raw vectors in the
/// original training layout and projects them internally.
class LampModel : public MultiLabelModel {
 public:
  std::string kind() const override { return "lamp"; }
  std::uint64_t schema_hash() const override { return input_schema_hash_; }
  std::uint64_t reduced_schema_hash() const { return reduced_schema_hash_; }
  const std::vector<int>& kept_indices() const { return kept_indices_; }
  const ValueVocab& vocab() const { return vocab_; }
  const lamp::Network& network() const { return net_; }
  lamp::Network& network() { return net_; }
  const LampConfig& train_config() const { return config_; }
  const std::vector<double>& loss_history() const { return loss_history_; }

  std::vector<double> predict_proba(
      std::span<const double> features) const override {
    return net_.forward_probs(tokens_for(features));
  }

  std::vector<int> tokens_for(std::span<const double> features) const {
    std::vector<int> tokens(kept_positions_.size());
    for (std::size_t i = 0; i < kept_positions_.size(); ++i) {
      const int pos = kept_positions_[i];
      if (pos >= int(features.size()))
        throw std::invalid_argument("feature vector too short for model");
      tokens[i] = vocab_.token_of(features[pos]);
    }
    return tokens;
  }

  void save(const std::string& path) const {
    io::ByteWriter w;
    io_detail::write_model_header(w, 3, input_schema_hash_);
    w.u64(reduced_schema_hash_);
    w.i32_vec(kept_indices_);
    w.i32_vec(kept_positions_);
    w.f64_vec(vocab_.values());
    w.f64(config_.learning_rate);
    w.f64(config_.dropout);
    w.u32(std::uint32_t(config_.batch_size));
    w.u32(std::uint32_t(config_.epochs));
    w.u8(config_.label_mask == LabelMaskKind::Prior ? 0 : 1);
    w.u64(config_.seed);
    w.f64_vec(loss_history_);
    net_.serialize(w);
    w.save(path);
  }

  friend LampModel fit_lamp(const Dataset&, const LampConfig&);
  friend LampModel load_lamp(io::ByteReader&, std::uint64_t);

 private:
  lamp::Network net_;
  ValueVocab vocab_;
  LampConfig config_;
  std::vector<int> kept_indices_;    // original feature indices kept
  std::vector<int> kept_positions_;  // positions in the input layout
  std::uint64_t input_schema_hash_ = 0;
  std::uint64_t reduced_schema_hash_ = 0;
  std::vector<double> loss_history_;
};

namespace lamp {

struct EpochCallback {
  virtual ~EpochCallback() = default;
  virtual void on_epoch(int epoch, double mean_loss) = 0;
};

/// Mini-batch adam on summed BCE. Shuffle and dropout streams are fixed by
/// the seed, so two runs produce identical parameters.
inline std::vector<double> train_network(
    Network& net, const std::vector<std::vector<int>>& token_rows,
    const std::vector<LabelSet>& labels, const LampConfig& config,
    EpochCallback* callback = nullptr) {
  if (token_rows.empty()) throw std::invalid_argument("empty training set");
  Rng shuffle_rng(derive_seed(config.seed, 0x5F));
  Rng drop_rng(derive_seed(config.seed, 0xD2));
  Adam adam(net, config.learning_rate);
  Params grads = net.like_params();
  Network::Trace trace;
  std::vector<double> history;

  std::vector<int> order(token_rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const std::size_t batch_end =
          std::min(order.size(), cursor + std::size_t(config.batch_size));
      Adam::zero(grads);
      const double inv = 1.0 / double(batch_end - cursor);
      for (std::size_t b = cursor; b < batch_end; ++b) {
        const int idx = order[b];
        auto probs = net.forward(token_rows[idx], trace, &drop_rng);
        epoch_loss += Network::bce_loss(probs, labels[idx]);
        net.backward(trace, labels[idx], grads);
      }
      for (Mat* g : Adam::grad_refs(grads))
        for (double& v : g->v) v *= inv;
      adam.step(grads);
      cursor = batch_end;
    }
    history.push_back(epoch_loss / double(token_rows.size()));
    if (callback) callback->on_epoch(epoch, history.back());
  }
  return history;
}

}  // namespace lamp

/// Fits a LaMP model: drops all-zero features, builds the global value
/// vocabulary and the prior co-occurrence mask from the training data, then
/// trains the network.
inline LampModel fit_lamp(const Dataset& train, const LampConfig& config) {
  config.validate();
  if (train.samples.empty()) throw std::invalid_argument("empty train set");

  LampModel model;
  model.config_ = config;
  model.input_schema_hash_ = train.schema.hash();

  auto [reduced, removed] = drop_zero_variance(train);
  model.reduced_schema_hash_ = reduced.schema.hash();
  for (const auto& e : reduced.schema.entries()) {
    model.kept_indices_.push_back(e.index);
    model.kept_positions_.push_back(train.schema.position_of(e.index));
  }

  model.vocab_ = build_vocab(reduced);

  lamp::NetConfig nc;
  nc.d_model = config.d_model;
  nc.d_hidden = config.d_hidden;
  nc.heads = config.attention_heads;
  nc.rounds = config.message_rounds;
  nc.dropout = config.dropout;
  nc.n_labels = kNumLabels;
  nc.n_features = reduced.feature_count();
  nc.vocab_rows = model.vocab_.table_rows();
  model.net_ = lamp::Network(nc, derive_seed(config.seed, 0x11));

  std::vector<std::vector<bool>> mask(
      kNumLabels, std::vector<bool>(kNumLabels,
                                    config.label_mask == LabelMaskKind::Full));
  if (config.label_mask == LabelMaskKind::Prior) {
    LabelGraph g = cooccurrence_graph(train);
    for (int i = 0; i < kNumLabels; ++i)
      for (int j = 0; j < kNumLabels; ++j) mask[i][j] = g.edge(i, j);
  }
  model.net_.set_label_mask(mask);

  std::vector<std::vector<int>> token_rows;
  std::vector<LabelSet> labels;
  token_rows.reserve(reduced.samples.size());
  for (const auto& s : reduced.samples) {
    token_rows.push_back(encode(s, model.vocab_, reduced.feature_count()));
    labels.push_back(s.labels);
  }
  if (config.epochs > 0)
    model.loss_history_ =
        lamp::train_network(model.net_, token_rows, labels, config);
  return model;
}

inline LampModel load_lamp(io::ByteReader& r, std::uint64_t schema_hash) {
  LampModel m;
  m.input_schema_hash_ = schema_hash;
  m.reduced_schema_hash_ = r.u64();
  m.kept_indices_ = r.i32_vec();
  m.kept_positions_ = r.i32_vec();
  m.vocab_ = ValueVocab(r.f64_vec());
  m.config_.learning_rate = r.f64();
  m.config_.dropout = r.f64();
  m.config_.batch_size = int(r.u32());
  m.config_.epochs = int(r.u32());
  m.config_.label_mask = r.u8() == 0 ? LabelMaskKind::Prior : LabelMaskKind::Full;
  m.config_.seed = r.u64();
  m.loss_history_ = r.f64_vec();
  m.net_ = lamp::Network::deserialize(r);
  m.config_.d_model = m.net_.config().d_model;
  m.config_.d_hidden = m.net_.config().d_hidden;
  m.config_.attention_heads = m.net_.config().heads;
  m.config_.message_rounds = m.net_.config().rounds;
  return m;
}

}  // namespace torml
