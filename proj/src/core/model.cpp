#include "core/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dgpic {

void ModelConfig::validate() const {
  if (feature_dim < 1 || patch_count < 1 || patch_size < 1)
    throw_invalid_input("model dims must be positive");
  if (n_blocks < 0) throw_invalid_input("n_blocks must be >= 0");
  if (n_heads < 1 || feature_dim % n_heads != 0)
    throw_invalid_input("feature_dim must be divisible by n_heads");
  if (mlp_ratio < 1) throw_invalid_input("mlp_ratio must be >= 1");
  if (mask_ratio < 0.0 || mask_ratio > 1.0)
    throw_invalid_input("mask_ratio must lie in [0, 1]");
  if (batch_size < 1 || epochs < 0) throw_invalid_input("bad batch_size/epochs");
}

ParamLayout ParamLayout::make(const ModelConfig& config) {
  config.validate();
  const int c = config.feature_dim;
  const int h = config.embed_hidden();
  const int f = config.mlp_ratio * c;
  const int out = 3 * config.patch_size;

  ParamLayout layout;
  size_t at = 0;
  auto add = [&at](ParamSlice& s, int rows, int cols) {
    s = {at, rows, cols};
    at += s.size();
  };
  add(layout.embed_w1, h, 3);
  add(layout.embed_b1, h, 1);
  add(layout.embed_w2, c, h);
  add(layout.embed_b2, c, 1);
  add(layout.pos_w1, h, 3);
  add(layout.pos_b1, h, 1);
  add(layout.pos_w2, c, h);
  add(layout.pos_b2, c, 1);
  add(layout.mask_token, c, 1);
  layout.blocks.resize(config.n_blocks);
  for (auto& b : layout.blocks) {
    add(b.ln1_gamma, c, 1);
    add(b.wq, c, c);
    add(b.bq, c, 1);
    add(b.wk, c, c);
    add(b.bk, c, 1);
    add(b.wv, c, c);
    add(b.bv, c, 1);
    add(b.wo, c, c);
    add(b.bo, c, 1);
    add(b.ln2_gamma, c, 1);
    add(b.ffn_w1, f, c);
    add(b.ffn_b1, f, 1);
    add(b.ffn_w2, c, f);
    add(b.ffn_b2, c, 1);
  }
  add(layout.recon_w, out, c);
  add(layout.recon_b, out, 1);
  layout.total = at;
  return layout;
}

namespace {

// layout is a pure function of the config; cache per distinct config
const ParamLayout& layout_for(const ModelConfig& config) {
  thread_local ModelConfig cached_config;
  thread_local ParamLayout cached_layout;
  thread_local bool valid = false;
  if (!valid || cached_config.feature_dim != config.feature_dim ||
      cached_config.patch_count != config.patch_count ||
      cached_config.patch_size != config.patch_size ||
      cached_config.n_blocks != config.n_blocks ||
      cached_config.n_heads != config.n_heads ||
      cached_config.mlp_ratio != config.mlp_ratio) {
    cached_layout = ParamLayout::make(config);
    cached_config = config;
    valid = true;
  }
  return cached_layout;
}

void fill_normal(Eigen::Map<Eigen::MatrixXd> m, Rng& rng, double std) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = std * rng.normal();
}

constexpr double kLnEps = 1e-5;

}  // namespace

const ParamLayout& ModelParams::layout() const { return layout_for(config); }

ModelParams ModelParams::init(const ModelConfig& config) {
  const ParamLayout& layout = ParamLayout::make(config);
  ModelParams params;
  params.config = config;
  params.values.assign(layout.total, 0.0);

  Rng rng(derive_seed(config.seed, {hash_string("init")}));
  const double c = config.feature_dim;
  const double h = config.embed_hidden();
  fill_normal(params.view(layout.embed_w1), rng, std::sqrt(2.0 / 3.0));
  fill_normal(params.view(layout.embed_w2), rng, std::sqrt(2.0 / h));
  fill_normal(params.view(layout.pos_w1), rng, std::sqrt(2.0 / 3.0));
  fill_normal(params.view(layout.pos_w2), rng, std::sqrt(2.0 / h));
  fill_normal(params.view(layout.mask_token), rng, 0.02);
  for (const auto& b : layout.blocks) {
    params.view(b.ln1_gamma).setOnes();
    fill_normal(params.view(b.wq), rng, std::sqrt(1.0 / c));
    fill_normal(params.view(b.wk), rng, std::sqrt(1.0 / c));
    fill_normal(params.view(b.wv), rng, std::sqrt(1.0 / c));
    fill_normal(params.view(b.wo), rng, std::sqrt(1.0 / c));
    params.view(b.ln2_gamma).setOnes();
    fill_normal(params.view(b.ffn_w1), rng, std::sqrt(2.0 / c));
    fill_normal(params.view(b.ffn_w2), rng, std::sqrt(1.0 / (config.mlp_ratio * c)));
  }
  fill_normal(params.view(layout.recon_w), rng, 0.02);
  return params;
}

TokenizerInput tokenize_cloud(const PointCloud& cloud, int patch_count,
                              int patch_size, uint64_t fps_seed) {
  std::vector<int> centers = farthest_point_sample(cloud, patch_count, fps_seed);
  PatchSet patches = knn_group(cloud, centers, patch_size);
  TokenizerInput input;
  input.patch_count = patch_count;
  input.patch_size = patch_size;
  input.centers = patches.centers;
  input.patch_points.resize(3, static_cast<Eigen::Index>(patch_count) * patch_size);
  for (int m = 0; m < patch_count; ++m) {
    Eigen::Vector3d c = patches.centers.col(m);
    for (int j = 0; j < patch_size; ++j)
      input.patch_points.col(m * patch_size + j) =
          cloud.points.col(patches.groups[m][j]) - c;
  }
  return input;
}

namespace detail {

// Shared MLP helpers. "trace" captures intermediates for the backward pass.
struct MlpTrace {
  Eigen::MatrixXd pre;  // first-layer pre-activation
  Eigen::MatrixXd act;  // relu output
};

Eigen::MatrixXd point_mlp(const Eigen::Matrix3Xd& x, const ModelParams& params,
                          const ParamSlice& w1, const ParamSlice& b1,
                          const ParamSlice& w2, const ParamSlice& b2,
                          MlpTrace* trace) {
  Eigen::MatrixXd pre = (params.view(w1) * x).colwise() +
                        Eigen::VectorXd(params.view(b1).col(0));
  Eigen::MatrixXd act = pre.cwiseMax(0.0);
  Eigen::MatrixXd out = (params.view(w2) * act).colwise() +
                        Eigen::VectorXd(params.view(b2).col(0));
  if (trace) {
    trace->pre = std::move(pre);
    trace->act = std::move(act);
  }
  return out;
}

struct EmbedTrace {
  MlpTrace point;             // over 3 x (M*k)
  Eigen::MatrixXd per_point;  // C x (M*k) second-layer output
  Eigen::MatrixXi argmax;     // C x M winning column-in-patch per feature
  MlpTrace pos;
  Eigen::MatrixXd pos_out;  // C x M
};

Eigen::MatrixXd embed_forward(const TokenizerInput& input, const ModelParams& params,
                              EmbedTrace* trace) {
  const ParamLayout& layout = params.layout();
  const int m_count = input.patch_count;
  const int k = input.patch_size;
  const int c = params.config.feature_dim;

  EmbedTrace local;
  EmbedTrace* tr = trace ? trace : &local;
  tr->per_point = point_mlp(input.patch_points, params, layout.embed_w1,
                            layout.embed_b1, layout.embed_w2, layout.embed_b2,
                            trace ? &tr->point : nullptr);

  Eigen::MatrixXd tokens(c, m_count);
  tr->argmax.resize(c, m_count);
  for (int m = 0; m < m_count; ++m) {
    for (int r = 0; r < c; ++r) {
      double best = tr->per_point(r, m * k);
      int best_j = 0;
      for (int j = 1; j < k; ++j) {
        double v = tr->per_point(r, m * k + j);
        if (v > best) {  // strict: ties go to the first maximizer
          best = v;
          best_j = j;
        }
      }
      tokens(r, m) = best;
      tr->argmax(r, m) = best_j;
    }
  }

  tr->pos_out = point_mlp(input.centers, params, layout.pos_w1, layout.pos_b1,
                          layout.pos_w2, layout.pos_b2, trace ? &tr->pos : nullptr);
  tokens += tr->pos_out;
  return tokens;
}

struct LnTrace {
  Eigen::RowVectorXd rstd;
  Eigen::MatrixXd xhat;
};

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& gamma,
                           LnTrace* trace) {
  Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mean;
  Eigen::RowVectorXd var = centered.array().square().colwise().mean();
  Eigen::RowVectorXd rstd = (var.array() + kLnEps).rsqrt();
  Eigen::MatrixXd xhat = centered.array().rowwise() * rstd.array();
  Eigen::MatrixXd y = xhat.array().colwise() * gamma.array();
  if (trace) {
    trace->rstd = std::move(rstd);
    trace->xhat = std::move(xhat);
  }
  return y;
}

// dy -> dx; accumulates dgamma
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy,
                                    const Eigen::VectorXd& gamma,
                                    const LnTrace& tr,
                                    Eigen::Ref<Eigen::MatrixXd> dgamma) {
  dgamma.col(0) += (dy.array() * tr.xhat.array()).rowwise().sum().matrix();
  Eigen::MatrixXd dxhat = dy.array().colwise() * gamma.array();
  Eigen::RowVectorXd mean_dxhat = dxhat.colwise().mean();
  Eigen::RowVectorXd mean_dxhat_xhat =
      (dxhat.array() * tr.xhat.array()).colwise().mean();
  Eigen::MatrixXd dx =
      ((dxhat.rowwise() - mean_dxhat).array() -
       tr.xhat.array().rowwise() * mean_dxhat_xhat.array())
          .array()
          .rowwise() *
      tr.rstd.array();
  return dx;
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
double gelu_grad_scalar(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
         x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

struct BlockTrace {
  Eigen::MatrixXd x_in;
  LnTrace ln1;
  Eigen::MatrixXd normed1;
  Eigen::MatrixXd q, k, v;
  std::vector<Eigen::MatrixXd> attn;  // per head, S x S (rows = queries)
  Eigen::MatrixXd heads_out;          // C x S pre-projection
  Eigen::MatrixXd x_mid;
  LnTrace ln2;
  Eigen::MatrixXd normed2;
  Eigen::MatrixXd ffn_pre;  // (r*C) x S
  Eigen::MatrixXd ffn_act;
};

Eigen::MatrixXd block_forward(const Eigen::MatrixXd& x, const ModelParams& params,
                              const BlockSlices& b, BlockTrace* trace) {
  const int c = params.config.feature_dim;
  const int heads = params.config.n_heads;
  const int dh = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index s = x.cols();

  BlockTrace local;
  BlockTrace* tr = trace ? trace : &local;
  if (trace) tr->x_in = x;

  Eigen::MatrixXd normed1 =
      layer_norm(x, params.view(b.ln1_gamma).col(0), trace ? &tr->ln1 : nullptr);
  Eigen::MatrixXd q = (params.view(b.wq) * normed1).colwise() +
                      Eigen::VectorXd(params.view(b.bq).col(0));
  Eigen::MatrixXd k = (params.view(b.wk) * normed1).colwise() +
                      Eigen::VectorXd(params.view(b.bk).col(0));
  Eigen::MatrixXd v = (params.view(b.wv) * normed1).colwise() +
                      Eigen::VectorXd(params.view(b.bv).col(0));

  Eigen::MatrixXd heads_out(c, s);
  if (trace) tr->attn.resize(heads);
  for (int hh = 0; hh < heads; ++hh) {
    auto qh = q.middleRows(hh * dh, dh);
    auto kh = k.middleRows(hh * dh, dh);
    auto vh = v.middleRows(hh * dh, dh);
    Eigen::MatrixXd scores = (qh.transpose() * kh) * scale;  // S x S
    for (Eigen::Index i = 0; i < s; ++i) {
      double mx = scores.row(i).maxCoeff();
      scores.row(i) = (scores.row(i).array() - mx).exp();
      scores.row(i) /= scores.row(i).sum();
    }
    heads_out.middleRows(hh * dh, dh).noalias() = vh * scores.transpose();
    if (trace) tr->attn[hh] = std::move(scores);
  }
  Eigen::MatrixXd x_mid = x + ((params.view(b.wo) * heads_out).colwise() +
                               Eigen::VectorXd(params.view(b.bo).col(0)));

  Eigen::MatrixXd normed2 = layer_norm(x_mid, params.view(b.ln2_gamma).col(0),
                                       trace ? &tr->ln2 : nullptr);
  Eigen::MatrixXd pre = (params.view(b.ffn_w1) * normed2).colwise() +
                        Eigen::VectorXd(params.view(b.ffn_b1).col(0));
  Eigen::MatrixXd act = pre.unaryExpr([](double v) { return gelu_scalar(v); });
  Eigen::MatrixXd out = x_mid + ((params.view(b.ffn_w2) * act).colwise() +
                                 Eigen::VectorXd(params.view(b.ffn_b2).col(0)));
  if (trace) {
    tr->normed1 = std::move(normed1);
    tr->q = std::move(q);
    tr->k = std::move(k);
    tr->v = std::move(v);
    tr->heads_out = std::move(heads_out);
    tr->x_mid = std::move(x_mid);
    tr->normed2 = std::move(normed2);
    tr->ffn_pre = std::move(pre);
    tr->ffn_act = std::move(act);
  }
  return out;
}

Eigen::MatrixXd transformer_apply(const Eigen::MatrixXd& seq, const ModelParams& params,
                                  std::vector<BlockTrace>* traces) {
  const ParamLayout& layout = params.layout();
  Eigen::MatrixXd x = seq;
  if (traces) traces->resize(layout.blocks.size());
  for (size_t b = 0; b < layout.blocks.size(); ++b) {
    x = block_forward(x, params, layout.blocks[b], traces ? &(*traces)[b] : nullptr);
    if (!x.allFinite())
      throw_numeric("non-finite activation in transformer block " + std::to_string(b));
  }
  return x;
}

}  // namespace detail

TokenMatrix embed_patches(const TokenizerInput& input, const ModelParams& params,
                          SegmentRole role) {
  if (input.patch_count != params.config.patch_count ||
      input.patch_size != params.config.patch_size)
    throw_contract("embed_patches: patch shape does not match model config");
  TokenMatrix out;
  out.tokens = detail::embed_forward(input, params, nullptr);
  out.centers = input.centers;
  out.segment.assign(input.patch_count, role);
  return out;
}

TokenMatrix embed_patches(const PointCloud& cloud, const PatchSet& patches,
                          const ModelParams& params, SegmentRole role) {
  if (patches.patch_count() != params.config.patch_count ||
      patches.patch_size() != params.config.patch_size)
    throw_contract("embed_patches: patch shape does not match model config");
  TokenizerInput input;
  input.patch_count = patches.patch_count();
  input.patch_size = patches.patch_size();
  input.centers = patches.centers;
  input.patch_points.resize(3, static_cast<Eigen::Index>(input.patch_count) *
                                   input.patch_size);
  for (int m = 0; m < input.patch_count; ++m) {
    Eigen::Vector3d c = patches.centers.col(m);
    for (int j = 0; j < input.patch_size; ++j)
      input.patch_points.col(m * input.patch_size + j) =
          cloud.points.col(patches.groups[m][j]) - c;
  }
  return embed_patches(input, params, role);
}

Eigen::MatrixXd positional_embeddings(const Eigen::Matrix3Xd& centers,
                                      const ModelParams& params) {
  const ParamLayout& layout = params.layout();
  return detail::point_mlp(centers, params, layout.pos_w1, layout.pos_b1,
                           layout.pos_w2, layout.pos_b2, nullptr);
}

Eigen::VectorXd global_feature(const TokenMatrix& tokens) {
  if (tokens.n() < 1) throw_contract("global_feature: no tokens");
  return tokens.tokens.rowwise().maxCoeff();
}

TokenMatrix assemble_icl_sequence(const TokenMatrix& query_input,
                                  const TokenMatrix& query_target,
                                  const TokenMatrix& prompt_input,
                                  const TokenMatrix& prompt_target) {
  const TokenMatrix* parts[4] = {&query_input, &query_target, &prompt_input,
                                 &prompt_target};
  const SegmentRole roles[4] = {SegmentRole::query_input, SegmentRole::query_target,
                                SegmentRole::prompt_input, SegmentRole::prompt_target};
  const int m = query_input.n();
  const int c = static_cast<int>(query_input.tokens.rows());
  for (const TokenMatrix* p : parts)
    if (p->n() != m || p->tokens.rows() != c)
      throw_contract("assemble_icl_sequence: segment shape mismatch");

  TokenMatrix seq;
  seq.tokens.resize(c, 4 * m);
  seq.centers.resize(3, 4 * m);
  seq.segment.resize(4 * m);
  for (int p = 0; p < 4; ++p) {
    seq.tokens.middleCols(p * m, m) = parts[p]->tokens;
    seq.centers.middleCols(p * m, m) = parts[p]->centers;
    std::fill(seq.segment.begin() + p * m, seq.segment.begin() + (p + 1) * m,
              roles[p]);
  }
  return seq;
}

std::vector<int> mask_tokens(TokenMatrix& seq, double ratio,
                             const ModelParams& params, uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0) throw_contract("mask_tokens: ratio out of [0,1]");
  std::vector<int> candidates;
  for (int i = 0; i < seq.n(); ++i)
    if (seq.segment[i] == SegmentRole::query_target) candidates.push_back(i);
  if (candidates.empty()) throw_contract("mask_tokens: sequence has no query-target tokens");

  int n_mask = static_cast<int>(std::ceil(ratio * candidates.size()));
  n_mask = std::min<int>(n_mask, static_cast<int>(candidates.size()));
  if (n_mask == 0) return {};

  Rng rng(seed);
  for (size_t i = 0; i + 1 < candidates.size(); ++i) {
    size_t j = i + rng.uniform_below(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
  }
  std::vector<int> chosen(candidates.begin(), candidates.begin() + n_mask);
  std::sort(chosen.begin(), chosen.end());

  Eigen::Matrix3Xd centers(3, n_mask);
  for (int i = 0; i < n_mask; ++i) centers.col(i) = seq.centers.col(chosen[i]);
  Eigen::MatrixXd pos = positional_embeddings(centers, params);
  Eigen::VectorXd mask = params.view(params.layout().mask_token).col(0);
  for (int i = 0; i < n_mask; ++i) seq.tokens.col(chosen[i]) = mask + pos.col(i);
  return chosen;
}

TokenMatrix mask_segment(const Eigen::Matrix3Xd& centers, const ModelParams& params) {
  TokenMatrix out;
  const int m = static_cast<int>(centers.cols());
  Eigen::VectorXd mask = params.view(params.layout().mask_token).col(0);
  out.tokens = positional_embeddings(centers, params);
  out.tokens.colwise() += mask;
  out.centers = centers;
  out.segment.assign(m, SegmentRole::query_target);
  return out;
}

TokenMatrix transformer_forward(const TokenMatrix& seq, const ModelParams& params) {
  TokenMatrix out = seq;
  out.tokens = detail::transformer_apply(seq.tokens, params, nullptr);
  return out;
}

std::vector<Eigen::Matrix3Xd> reconstruct_patches(const TokenMatrix& seq_out,
                                                  const std::vector<int>& indices,
                                                  const ModelParams& params) {
  const ParamLayout& layout = params.layout();
  const int k = params.config.patch_size;
  std::vector<Eigen::Matrix3Xd> out;
  out.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= seq_out.n() ||
        seq_out.segment[idx] != SegmentRole::query_target)
      throw_contract("reconstruct_patches: index outside the query-target segment");
    Eigen::VectorXd y = params.view(layout.recon_w) * seq_out.tokens.col(idx) +
                        params.view(layout.recon_b).col(0);
    Eigen::Matrix3Xd pts(3, k);
    for (int j = 0; j < k; ++j)
      pts.col(j) = y.segment(3 * j, 3) + seq_out.centers.col(idx);
    out.push_back(std::move(pts));
  }
  return out;
}

double icl_loss(const std::vector<Eigen::Matrix3Xd>& pred,
                const std::vector<Eigen::Matrix3Xd>& gt) {
  if (pred.size() != gt.size())
    throw_contract("icl_loss: prediction/ground-truth count mismatch");
  if (pred.empty()) throw_contract("icl_loss: no patches");
  double sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    sum += chamfer_distance(pred[i], gt[i]);
  return sum / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Traced forward + reverse accumulation for one ICL example.

double train_step(const ModelParams& params, const TrainExample& example,
                  ParamVec* grad) {
  const ParamLayout& layout = params.layout();
  const ModelConfig& config = params.config;
  const int m = config.patch_count;
  const int k = config.patch_size;
  const int c = config.feature_dim;
  const int s = 4 * m;
  const bool want_grad = grad != nullptr;

  const TokenizerInput* inputs[4] = {example.query_input, example.query_target,
                                     example.prompt_input, example.prompt_target};
  for (const TokenizerInput* in : inputs) {
    if (!in) throw_contract("train_step: missing segment");
    if (in->patch_count != m || in->patch_size != k)
      throw_contract("train_step: segment patch shape mismatch");
  }

  // embed all four segments
  std::vector<detail::EmbedTrace> embeds(4);
  Eigen::MatrixXd x0(c, s);
  for (int p = 0; p < 4; ++p)
    x0.middleCols(p * m, m) =
        detail::embed_forward(*inputs[p], params, want_grad ? &embeds[p] : nullptr);

  // mask query-target tokens (positions m .. 2m)
  std::vector<int> local_mask;  // indices within the query-target segment
  {
    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(example.mask_seed);
    for (int i = 0; i + 1 < m; ++i) {
      int j = i + static_cast<int>(rng.uniform_below(m - i));
      std::swap(order[i], order[j]);
    }
    int n_mask = std::min(
        m, static_cast<int>(std::ceil(config.mask_ratio * m)));
    local_mask.assign(order.begin(), order.begin() + n_mask);
    std::sort(local_mask.begin(), local_mask.end());
  }
  if (local_mask.empty()) throw_contract("train_step: mask ratio selected no tokens");

  // masked tokens keep their positional embedding
  Eigen::VectorXd mask_token = params.view(layout.mask_token).col(0);
  Eigen::MatrixXd qt_pos = want_grad
                               ? embeds[1].pos_out
                               : positional_embeddings(inputs[1]->centers, params);
  for (int lm : local_mask) x0.col(m + lm) = mask_token + qt_pos.col(lm);

  std::vector<detail::BlockTrace> blocks;
  Eigen::MatrixXd xb =
      detail::transformer_apply(x0, params, want_grad ? &blocks : nullptr);

  // reconstruction head on masked positions, loss in patch-centered coords
  const int n_masked = static_cast<int>(local_mask.size());
  auto recon_w = params.view(layout.recon_w);
  Eigen::VectorXd recon_b = params.view(layout.recon_b).col(0);

  double loss = 0.0;
  Eigen::MatrixXd d_xb;
  ParamVec* g = grad;
  if (want_grad) {
    if (g->size() != layout.total) g->assign(layout.total, 0.0);
    else std::fill(g->begin(), g->end(), 0.0);
    d_xb = Eigen::MatrixXd::Zero(c, s);
  }
  auto gview = [&](const ParamSlice& slice) {
    return Eigen::Map<Eigen::MatrixXd>(g->data() + slice.offset, slice.rows,
                                       slice.cols);
  };

  for (int lm : local_mask) {
    Eigen::VectorXd token = xb.col(m + lm);
    Eigen::VectorXd y = recon_w * token + recon_b;
    Eigen::Matrix3Xd pred(3, k);
    for (int j = 0; j < k; ++j) pred.col(j) = y.segment(3 * j, 3);
    Eigen::Matrix3Xd gt = inputs[1]->patch_block(lm);

    std::vector<int> nn_p, nn_g;
    loss += chamfer_distance(pred, gt, &nn_p, &nn_g);

    if (want_grad) {
      const double w = 1.0 / n_masked;
      Eigen::Matrix3Xd d_pred = Eigen::Matrix3Xd::Zero(3, k);
      const int kg = static_cast<int>(gt.cols());
      for (int i = 0; i < k; ++i)
        d_pred.col(i) += (2.0 / k) * (pred.col(i) - gt.col(nn_p[i]));
      for (int j = 0; j < kg; ++j)
        d_pred.col(nn_g[j]) += (2.0 / kg) * (pred.col(nn_g[j]) - gt.col(j));
      d_pred *= w;

      Eigen::VectorXd dy(3 * k);
      for (int j = 0; j < k; ++j) dy.segment(3 * j, 3) = d_pred.col(j);
      gview(layout.recon_w) += dy * token.transpose();
      gview(layout.recon_b).col(0) += dy;
      d_xb.col(m + lm) += recon_w.transpose() * dy;
    }
  }
  loss /= n_masked;

  if (!want_grad) return loss;

  // transformer blocks, reversed
  const int heads = config.n_heads;
  const int dh = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Eigen::MatrixXd dx = d_xb;
  for (int bi = static_cast<int>(layout.blocks.size()) - 1; bi >= 0; --bi) {
    const BlockSlices& b = layout.blocks[bi];
    detail::BlockTrace& tr = blocks[bi];

    // x_out = x_mid + ffn_w2 * gelu(ffn_w1 * ln2(x_mid) + b1) + b2
    Eigen::MatrixXd d_f2 = dx;
    gview(b.ffn_w2) += d_f2 * tr.ffn_act.transpose();
    gview(b.ffn_b2).col(0) += d_f2.rowwise().sum();
    Eigen::MatrixXd d_act = params.view(b.ffn_w2).transpose() * d_f2;
    Eigen::MatrixXd d_pre =
        d_act.array() *
        tr.ffn_pre.unaryExpr([](double v) { return detail::gelu_grad_scalar(v); })
            .array();
    gview(b.ffn_w1) += d_pre * tr.normed2.transpose();
    gview(b.ffn_b1).col(0) += d_pre.rowwise().sum();
    Eigen::MatrixXd d_normed2 = params.view(b.ffn_w1).transpose() * d_pre;
    Eigen::MatrixXd d_xmid =
        dx + detail::layer_norm_backward(d_normed2, params.view(b.ln2_gamma).col(0),
                                         tr.ln2, gview(b.ln2_gamma));

    // x_mid = x_in + wo * heads_out + bo
    gview(b.wo) += d_xmid * tr.heads_out.transpose();
    gview(b.bo).col(0) += d_xmid.rowwise().sum();
    Eigen::MatrixXd d_heads = params.view(b.wo).transpose() * d_xmid;

    Eigen::MatrixXd d_q(c, s), d_k(c, s), d_v(c, s);
    for (int hh = 0; hh < heads; ++hh) {
      auto qh = tr.q.middleRows(hh * dh, dh);
      auto kh = tr.k.middleRows(hh * dh, dh);
      auto vh = tr.v.middleRows(hh * dh, dh);
      const Eigen::MatrixXd& attn = tr.attn[hh];
      auto d_oh = d_heads.middleRows(hh * dh, dh);

      Eigen::MatrixXd d_attn = d_oh.transpose() * vh;  // S x S
      d_v.middleRows(hh * dh, dh).noalias() = d_oh * attn;
      // softmax backward, rows are queries
      Eigen::VectorXd row_dot = (d_attn.array() * attn.array()).rowwise().sum();
      Eigen::MatrixXd d_scores =
          attn.array() * (d_attn.array().colwise() - row_dot.array());
      d_q.middleRows(hh * dh, dh).noalias() = kh * d_scores.transpose() * scale;
      d_k.middleRows(hh * dh, dh).noalias() = qh * d_scores * scale;
    }

    gview(b.wq) += d_q * tr.normed1.transpose();
    gview(b.bq).col(0) += d_q.rowwise().sum();
    gview(b.wk) += d_k * tr.normed1.transpose();
    gview(b.bk).col(0) += d_k.rowwise().sum();
    gview(b.wv) += d_v * tr.normed1.transpose();
    gview(b.bv).col(0) += d_v.rowwise().sum();

    Eigen::MatrixXd d_normed1 = params.view(b.wq).transpose() * d_q +
                                params.view(b.wk).transpose() * d_k +
                                params.view(b.wv).transpose() * d_v;
    dx = d_xmid + detail::layer_norm_backward(
                      d_normed1, params.view(b.ln1_gamma).col(0), tr.ln1,
                      gview(b.ln1_gamma));
  }

  // split sequence gradient back into the four segments
  for (int p = 0; p < 4; ++p) {
    detail::EmbedTrace& tr = embeds[p];
    const TokenizerInput& input = *inputs[p];
    Eigen::MatrixXd d_tokens = dx.middleCols(p * m, m);

    // positional path receives gradient for every column (masked columns
    // kept their positional embedding); the max-pool path only for unmasked
    Eigen::MatrixXd d_pos = d_tokens;
    Eigen::MatrixXd d_embed = d_tokens;
    if (p == 1) {
      for (int lm : local_mask) {
        gview(layout.mask_token).col(0) += d_tokens.col(lm);
        d_embed.col(lm).setZero();
      }
    }

    // max-pool scatter
    Eigen::MatrixXd d_per_point = Eigen::MatrixXd::Zero(c, m * k);
    for (int mm = 0; mm < m; ++mm)
      for (int r = 0; r < c; ++r) {
        double dv = d_embed(r, mm);
        if (dv != 0.0) d_per_point(r, mm * k + tr.argmax(r, mm)) += dv;
      }
    gview(layout.embed_w2) += d_per_point * tr.point.act.transpose();
    gview(layout.embed_b2).col(0) += d_per_point.rowwise().sum();
    Eigen::MatrixXd d_act = params.view(layout.embed_w2).transpose() * d_per_point;
    Eigen::MatrixXd d_pre =
        (tr.point.pre.array() > 0.0).select(d_act, Eigen::MatrixXd::Zero(d_act.rows(), d_act.cols()));
    gview(layout.embed_w1) += d_pre * input.patch_points.transpose();
    gview(layout.embed_b1).col(0) += d_pre.rowwise().sum();

    // positional MLP
    gview(layout.pos_w2) += d_pos * tr.pos.act.transpose();
    gview(layout.pos_b2).col(0) += d_pos.rowwise().sum();
    Eigen::MatrixXd d_pact = params.view(layout.pos_w2).transpose() * d_pos;
    Eigen::MatrixXd d_ppre =
        (tr.pos.pre.array() > 0.0).select(d_pact, Eigen::MatrixXd::Zero(d_pact.rows(), d_pact.cols()));
    gview(layout.pos_w1) += d_ppre * input.centers.transpose();
    gview(layout.pos_b1).col(0) += d_ppre.rowwise().sum();
  }

  return loss;
}

}  // namespace dgpic
