#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prism/linalg.hpp"

namespace prism::model {

struct ModelConfig {
  int vocab_size = 10000;
  int max_seq_len = 512;
  int embed_dim = 256;
  int n_layers = 6;
  int n_heads = 8;
  int mlp_ratio = 4;
  float dropout_p = 0.1f;

  int head_dim() const { return embed_dim / n_heads; }
  int mlp_dim() const { return mlp_ratio * embed_dim; }

  void validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
    if (embed_dim < 1 || n_layers < 1 || n_heads < 1 || mlp_ratio < 1) {
      throw ConfigError("embed_dim, n_layers, n_heads, mlp_ratio must be positive");
    }
    if (embed_dim % n_heads != 0) throw ConfigError("embed_dim must be divisible by n_heads");
    if (dropout_p < 0.0f || dropout_p >= 1.0f) throw ConfigError("dropout_p must be in [0, 1)");
  }

  nlohmann::ordered_json to_json() const {
    return {{"vocab_size", vocab_size}, {"max_seq_len", max_seq_len}, {"embed_dim", embed_dim},
            {"n_layers", n_layers},     {"n_heads", n_heads},         {"mlp_ratio", mlp_ratio},
            {"dropout_p", dropout_p}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.mlp_ratio = j.value("mlp_ratio", 4);
    c.dropout_p = j.value("dropout_p", 0.1f);
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename Scalar>
struct LayerParams {
  RowVec<Scalar> ln1_gain, ln1_bias;        // [D]
  Mat<Scalar> attn_in_w;                    // [D, 3D]
  RowVec<Scalar> attn_in_b;                 // [3D]
  Mat<Scalar> attn_out_w;                   // [D, D]
  RowVec<Scalar> attn_out_b;                // [D]
  RowVec<Scalar> ln2_gain, ln2_bias;        // [D]
  Mat<Scalar> mlp_up_w;                     // [D, R*D]
  RowVec<Scalar> mlp_up_b;                  // [R*D]
  Mat<Scalar> mlp_down_w;                   // [R*D, D]
  RowVec<Scalar> mlp_down_b;                // [D]
};

template <typename Scalar>
struct ModelParams {
  Mat<Scalar> token_embedding;     // [V, D]
  Mat<Scalar> position_embedding;  // [Tmax, D]
  std::vector<LayerParams<Scalar>> layers;
  RowVec<Scalar> final_gain, final_bias;  // [D]
  Mat<Scalar> head_w;                     // [D, V]
  RowVec<Scalar> head_b;                  // [V]
};

// Visits every learnable array in the canonical (checkpoint) order.
template <typename Scalar, typename Fn>
void for_each_param(ModelParams<Scalar>& p, Fn&& fn) {
  fn("token_embedding", p.token_embedding);
  fn("position_embedding", p.position_embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    std::string prefix = "layer" + std::to_string(l) + ".";
    fn(prefix + "ln1_gain", layer.ln1_gain);
    fn(prefix + "ln1_bias", layer.ln1_bias);
    fn(prefix + "attn_in_w", layer.attn_in_w);
    fn(prefix + "attn_in_b", layer.attn_in_b);
    fn(prefix + "attn_out_w", layer.attn_out_w);
    fn(prefix + "attn_out_b", layer.attn_out_b);
    fn(prefix + "ln2_gain", layer.ln2_gain);
    fn(prefix + "ln2_bias", layer.ln2_bias);
    fn(prefix + "mlp_up_w", layer.mlp_up_w);
    fn(prefix + "mlp_up_b", layer.mlp_up_b);
    fn(prefix + "mlp_down_w", layer.mlp_down_w);
    fn(prefix + "mlp_down_b", layer.mlp_down_b);
  }
  fn("final_gain", p.final_gain);
  fn("final_bias", p.final_bias);
  fn("head_w", p.head_w);
  fn("head_b", p.head_b);
}

template <typename Scalar, typename Fn>
void for_each_param_pair(ModelParams<Scalar>& a, ModelParams<Scalar>& b, Fn&& fn) {
  std::vector<std::pair<std::string, void*>> bs;
  for_each_param(b, [&](const std::string& name, auto& arr) { bs.emplace_back(name, &arr); });
  std::size_t i = 0;
  for_each_param(a, [&](const std::string& name, auto& arr) {
    using ArrT = std::remove_reference_t<decltype(arr)>;
    fn(name, arr, *static_cast<ArrT*>(bs[i++].second));
  });
}

// All arrays allocated to config shapes, zero-filled.
template <typename Scalar>
ModelParams<Scalar> make_params(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.embed_dim, r = cfg.mlp_dim();
  ModelParams<Scalar> p;
  p.token_embedding = Mat<Scalar>::Zero(cfg.vocab_size, d);
  p.position_embedding = Mat<Scalar>::Zero(cfg.max_seq_len, d);
  p.layers.resize(cfg.n_layers);
  for (auto& layer : p.layers) {
    layer.ln1_gain = RowVec<Scalar>::Zero(d);
    layer.ln1_bias = RowVec<Scalar>::Zero(d);
    layer.attn_in_w = Mat<Scalar>::Zero(d, 3 * d);
    layer.attn_in_b = RowVec<Scalar>::Zero(3 * d);
    layer.attn_out_w = Mat<Scalar>::Zero(d, d);
    layer.attn_out_b = RowVec<Scalar>::Zero(d);
    layer.ln2_gain = RowVec<Scalar>::Zero(d);
    layer.ln2_bias = RowVec<Scalar>::Zero(d);
    layer.mlp_up_w = Mat<Scalar>::Zero(d, r);
    layer.mlp_up_b = RowVec<Scalar>::Zero(r);
    layer.mlp_down_w = Mat<Scalar>::Zero(r, d);
    layer.mlp_down_b = RowVec<Scalar>::Zero(d);
  }
  p.final_gain = RowVec<Scalar>::Zero(d);
  p.final_bias = RowVec<Scalar>::Zero(d);
  p.head_w = Mat<Scalar>::Zero(d, cfg.vocab_size);
  p.head_b = RowVec<Scalar>::Zero(cfg.vocab_size);
  return p;
}

// Weights ~ N(0, 0.02^2), biases zero, layer-norm gains one. The draw order is
// the canonical parameter order, so the result is a pure function of the seed.
template <typename Scalar>
ModelParams<Scalar> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<Scalar> p = make_params<Scalar>(cfg);
  Rng rng(mix_seed(seed, 0x696e6974));
  for_each_param(p, [&](const std::string& name, auto& arr) {
    bool is_gain = name.ends_with("_gain");
    bool is_bias = name.ends_with("_b") || name.ends_with("_bias");
    if (is_gain) {
      arr.setConstant(Scalar(1));
    } else if (is_bias) {
      arr.setConstant(Scalar(0));
    } else {
      Scalar* data = arr.data();
      for (Eigen::Index i = 0; i < arr.size(); ++i) {
        data[i] = static_cast<Scalar>(0.02 * rng.normal());
      }
    }
  });
  return p;
}

// Closed-form learnable-parameter total for a config.
inline std::int64_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t v = cfg.vocab_size, t = cfg.max_seq_len, d = cfg.embed_dim,
                     r = cfg.mlp_dim();
  std::int64_t per_layer = (d * 3 * d + 3 * d)   // attention in-projection
                           + (d * d + d)         // attention out-projection
                           + 4 * d               // two layer norms
                           + (d * r + r)         // MLP up
                           + (r * d + d);        // MLP down
  return v * d + t * d + cfg.n_layers * per_layer + 2 * d + (d * v + v);
}

template <typename Scalar>
std::int64_t allocated_param_count(const ModelParams<Scalar>& params) {
  std::int64_t total = 0;
  for_each_param(const_cast<ModelParams<Scalar>&>(params),
                 [&](const std::string&, auto& arr) { total += arr.size(); });
  return total;
}

template <typename Scalar>
struct LayerCache {
  Mat<Scalar> x_in;  // block input [BT, D]
  LayerNormCache<Scalar> ln1_stats;
  Mat<Scalar> ln1_out;
  Mat<Scalar> qkv;                     // [BT, 3D]
  std::vector<Mat<Scalar>> att;       // per (b*H + h): [T, T] post-softmax
  std::vector<Mat<Scalar>> att_mask;  // dropout multipliers, empty in eval mode
  Mat<Scalar> ctx;                     // [BT, D]
  Mat<Scalar> attn_drop_mask;          // [BT, D] or empty
  Mat<Scalar> x_mid;                   // after attention residual
  LayerNormCache<Scalar> ln2_stats;
  Mat<Scalar> ln2_out;
  Mat<Scalar> mlp_pre;   // [BT, RD] pre-GELU
  Mat<Scalar> mlp_act;   // [BT, RD]
  Mat<Scalar> mlp_drop_mask;  // [BT, D] or empty
};

template <typename Scalar>
struct ForwardCache {
  int batch = 0;
  int seq_len = 0;
  std::vector<std::int32_t> ids;
  std::vector<LayerCache<Scalar>> layers;
  Mat<Scalar> x_final;  // input to the final layer norm
  LayerNormCache<Scalar> lnf_stats;
  Mat<Scalar> lnf_out;
};

namespace detail {

template <typename Scalar>
Mat<Scalar> dropout_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, Scalar p) {
  Mat<Scalar> mask(rows, cols);
  const Scalar keep = Scalar(1) / (Scalar(1) - p);
  Scalar* data = mask.data();
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    data[i] = rng.uniform() < static_cast<double>(p) ? Scalar(0) : keep;
  }
  return mask;
}

}  // namespace detail

// Causal forward pass. ids is a row-major [batch, seq_len] index array; the
// returned logits are [batch*seq_len, vocab_size]. Position t's logits depend
// only on ids at positions <= t. Dropout is active only in train mode and is
// a pure function of dropout_seed.
template <typename Scalar>
Mat<Scalar> forward(const ModelConfig& cfg, const ModelParams<Scalar>& params,
                    std::span<const std::int32_t> ids, int batch, int seq_len,
                    bool train_mode = false, std::uint64_t dropout_seed = 0,
                    ForwardCache<Scalar>* cache = nullptr) {
  const int d = cfg.embed_dim, heads = cfg.n_heads, hs = cfg.head_dim();
  if (seq_len < 1 || batch < 1) throw ValidationError("forward: empty input");
  if (seq_len > cfg.max_seq_len) {
    throw ValidationError("forward: seq_len " + std::to_string(seq_len) + " exceeds max_seq_len " +
                          std::to_string(cfg.max_seq_len));
  }
  if (ids.size() != static_cast<std::size_t>(batch) * seq_len) {
    throw ValidationError("forward: ids size mismatch");
  }
  for (auto id : ids) {
    if (id < 0 || id >= cfg.vocab_size) throw ValidationError("forward: token id out of range");
  }
  const bool use_dropout = train_mode && cfg.dropout_p > 0.0f;
  const Scalar p = static_cast<Scalar>(cfg.dropout_p);
  Rng drop_rng(mix_seed(dropout_seed, 0x64726f70));

  const Eigen::Index bt = static_cast<Eigen::Index>(batch) * seq_len;
  Mat<Scalar> x(bt, d);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < seq_len; ++t) {
      Eigen::Index row = static_cast<Eigen::Index>(b) * seq_len + t;
      x.row(row) = params.token_embedding.row(ids[row]) + params.position_embedding.row(t);
    }
  }

  if (cache) {
    cache->batch = batch;
    cache->seq_len = seq_len;
    cache->ids.assign(ids.begin(), ids.end());
    cache->layers.assign(cfg.n_layers, {});
  }

  const Scalar inv_sqrt_hs = Scalar(1) / std::sqrt(static_cast<Scalar>(hs));

  Mat<Scalar> ctx(bt, d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& layer = params.layers[l];
    LayerCache<Scalar>* lc = cache ? &cache->layers[l] : nullptr;
    if (lc) lc->x_in = x;

    LayerNormCache<Scalar> ln1_stats;
    Mat<Scalar> ln1_out = layer_norm(x, layer.ln1_gain, layer.ln1_bias, Scalar(1e-5), &ln1_stats);
    Mat<Scalar> qkv = (ln1_out * layer.attn_in_w).rowwise() + layer.attn_in_b;

    if (lc) {
      lc->att.resize(static_cast<std::size_t>(batch) * heads);
      if (use_dropout) lc->att_mask.resize(static_cast<std::size_t>(batch) * heads);
    }
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto q = qkv.block(static_cast<Eigen::Index>(b) * seq_len, h * hs, seq_len, hs);
        auto k = qkv.block(static_cast<Eigen::Index>(b) * seq_len, d + h * hs, seq_len, hs);
        auto v = qkv.block(static_cast<Eigen::Index>(b) * seq_len, 2 * d + h * hs, seq_len, hs);
        Mat<Scalar> scores = (q * k.transpose()) * inv_sqrt_hs;
        // Causal mask: softmax over positions <= i; future mass is exactly 0.
        for (int i = 0; i < seq_len; ++i) {
          auto valid = scores.row(i).head(i + 1);
          Scalar m = valid.maxCoeff();
          valid = (valid.array() - m).exp();
          valid /= valid.sum();
          if (i + 1 < seq_len) scores.row(i).tail(seq_len - 1 - i).setZero();
        }
        Mat<Scalar>* att = &scores;
        Mat<Scalar> att_dropped;
        if (use_dropout) {
          Mat<Scalar> mask = detail::dropout_mask<Scalar>(drop_rng, seq_len, seq_len, p);
          att_dropped = (scores.array() * mask.array()).matrix();
          if (lc) {
            lc->att[static_cast<std::size_t>(b) * heads + h] = scores;
            lc->att_mask[static_cast<std::size_t>(b) * heads + h] = std::move(mask);
          }
          att = &att_dropped;
        } else if (lc) {
          lc->att[static_cast<std::size_t>(b) * heads + h] = scores;
        }
        ctx.block(static_cast<Eigen::Index>(b) * seq_len, h * hs, seq_len, hs) = (*att) * v;
      }
    }
    Mat<Scalar> attn_out = (ctx * layer.attn_out_w).rowwise() + layer.attn_out_b;
    if (use_dropout) {
      Mat<Scalar> mask = detail::dropout_mask<Scalar>(drop_rng, bt, d, p);
      attn_out = (attn_out.array() * mask.array()).matrix();
      if (lc) lc->attn_drop_mask = std::move(mask);
    }
    if (lc) {
      lc->ln1_stats = std::move(ln1_stats);
      lc->ln1_out = std::move(ln1_out);
      lc->qkv = std::move(qkv);
      lc->ctx = ctx;
    }

    x += attn_out;
    if (lc) lc->x_mid = x;

    LayerNormCache<Scalar> ln2_stats;
    Mat<Scalar> ln2_out = layer_norm(x, layer.ln2_gain, layer.ln2_bias, Scalar(1e-5), &ln2_stats);
    Mat<Scalar> mlp_pre = (ln2_out * layer.mlp_up_w).rowwise() + layer.mlp_up_b;
    Mat<Scalar> mlp_act = gelu(mlp_pre);
    Mat<Scalar> mlp_out = (mlp_act * layer.mlp_down_w).rowwise() + layer.mlp_down_b;
    if (use_dropout) {
      Mat<Scalar> mask = detail::dropout_mask<Scalar>(drop_rng, bt, d, p);
      mlp_out = (mlp_out.array() * mask.array()).matrix();
      if (lc) lc->mlp_drop_mask = std::move(mask);
    }
    if (lc) {
      lc->ln2_stats = std::move(ln2_stats);
      lc->ln2_out = std::move(ln2_out);
      lc->mlp_pre = std::move(mlp_pre);
      lc->mlp_act = std::move(mlp_act);
    }
    x += mlp_out;
  }

  if (cache) cache->x_final = x;
  LayerNormCache<Scalar> lnf_stats;
  Mat<Scalar> lnf_out = layer_norm(x, params.final_gain, params.final_bias, Scalar(1e-5), &lnf_stats);
  Mat<Scalar> logits = (lnf_out * params.head_w).rowwise() + params.head_b;
  if (cache) {
    cache->lnf_stats = std::move(lnf_stats);
    cache->lnf_out = std::move(lnf_out);
  }
  return logits;
}

// Reverse pass; accumulates into `grads` (caller zeroes them).
template <typename Scalar>
void backward(const ModelConfig& cfg, const ModelParams<Scalar>& params,
              const ForwardCache<Scalar>& cache, const Mat<Scalar>& dlogits,
              ModelParams<Scalar>& grads) {
  const int d = cfg.embed_dim, heads = cfg.n_heads, hs = cfg.head_dim();
  const int batch = cache.batch, seq_len = cache.seq_len;
  const Scalar inv_sqrt_hs = Scalar(1) / std::sqrt(static_cast<Scalar>(hs));
  const bool used_dropout = !cache.layers.empty() && cache.layers[0].attn_drop_mask.size() > 0;

  grads.head_w += cache.lnf_out.transpose() * dlogits;
  grads.head_b += dlogits.colwise().sum();
  Mat<Scalar> dlnf_out = dlogits * params.head_w.transpose();

  Mat<Scalar> dx;
  layer_norm_backward(cache.x_final, cache.lnf_stats, params.final_gain, dlnf_out, dx,
                      grads.final_gain, grads.final_bias);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& layer = params.layers[l];
    auto& g = grads.layers[l];
    const auto& lc = cache.layers[l];

    // MLP branch
    Mat<Scalar> dmlp_out = used_dropout ? (dx.array() * lc.mlp_drop_mask.array()).matrix() : dx;
    g.mlp_down_w += lc.mlp_act.transpose() * dmlp_out;
    g.mlp_down_b += dmlp_out.colwise().sum();
    Mat<Scalar> dact = dmlp_out * layer.mlp_down_w.transpose();
    Mat<Scalar> dpre = gelu_backward(lc.mlp_pre, dact);
    g.mlp_up_w += lc.ln2_out.transpose() * dpre;
    g.mlp_up_b += dpre.colwise().sum();
    Mat<Scalar> dln2_out = dpre * layer.mlp_up_w.transpose();
    Mat<Scalar> dx_mid;
    layer_norm_backward(lc.x_mid, lc.ln2_stats, layer.ln2_gain, dln2_out, dx_mid, g.ln2_gain,
                        g.ln2_bias);
    dx_mid += dx;  // residual

    // Attention branch
    Mat<Scalar> dattn_out = used_dropout ? (dx_mid.array() * lc.attn_drop_mask.array()).matrix() : dx_mid;
    g.attn_out_w += lc.ctx.transpose() * dattn_out;
    g.attn_out_b += dattn_out.colwise().sum();
    Mat<Scalar> dctx = dattn_out * layer.attn_out_w.transpose();

    Mat<Scalar> dqkv = Mat<Scalar>::Zero(static_cast<Eigen::Index>(batch) * seq_len, 3 * d);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto q = lc.qkv.block(static_cast<Eigen::Index>(b) * seq_len, h * hs, seq_len, hs);
        auto k = lc.qkv.block(static_cast<Eigen::Index>(b) * seq_len, d + h * hs, seq_len, hs);
        auto v = lc.qkv.block(static_cast<Eigen::Index>(b) * seq_len, 2 * d + h * hs, seq_len, hs);
        auto dctx_blk = dctx.block(static_cast<Eigen::Index>(b) * seq_len, h * hs, seq_len, hs);
        const Mat<Scalar>& att = lc.att[static_cast<std::size_t>(b) * heads + h];

        Mat<Scalar> datt = dctx_blk * v.transpose();  // [T, T]
        Mat<Scalar> att_eff = att;
        if (used_dropout) {
          const Mat<Scalar>& mask = lc.att_mask[static_cast<std::size_t>(b) * heads + h];
          att_eff = (att.array() * mask.array()).matrix();
          datt = (datt.array() * mask.array()).matrix();
        }
        dqkv.block(static_cast<Eigen::Index>(b) * seq_len, 2 * d + h * hs, seq_len, hs) +=
            att_eff.transpose() * dctx_blk;

        Mat<Scalar> dscores(seq_len, seq_len);
        for (int i = 0; i < seq_len; ++i) {
          Scalar dot = att.row(i).dot(datt.row(i));
          dscores.row(i) = (att.row(i).array() * (datt.row(i).array() - dot)).matrix();
        }
        dscores *= inv_sqrt_hs;
        dqkv.block(static_cast<Eigen::Index>(b) * seq_len, h * hs, seq_len, hs) += dscores * k;
        dqkv.block(static_cast<Eigen::Index>(b) * seq_len, d + h * hs, seq_len, hs) +=
            dscores.transpose() * q;
      }
    }

    g.attn_in_w += lc.ln1_out.transpose() * dqkv;
    g.attn_in_b += dqkv.colwise().sum();
    Mat<Scalar> dln1_out = dqkv * layer.attn_in_w.transpose();
    Mat<Scalar> dx_in;
    layer_norm_backward(lc.x_in, lc.ln1_stats, layer.ln1_gain, dln1_out, dx_in, g.ln1_gain,
                        g.ln1_bias);
    dx = dx_mid + dx_in;
  }

  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < seq_len; ++t) {
      Eigen::Index row = static_cast<Eigen::Index>(b) * seq_len + t;
      grads.token_embedding.row(cache.ids[row]) += dx.row(row);
      grads.position_embedding.row(t) += dx.row(row);
    }
  }
}

// Checkpoint container: magic, version, config JSON, then named float32
// arrays in canonical order.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelParams<float>& params);
std::pair<ModelConfig, ModelParams<float>> load_checkpoint(const std::filesystem::path& path);
std::pair<ModelConfig, ModelParams<float>> load_checkpoint(const std::filesystem::path& path,
                                                           const ModelConfig& expected);

}  // namespace prism::model
