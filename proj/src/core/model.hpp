#pragma once

#include <array>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "core/dataset.hpp"
#include "core/geometry.hpp"

namespace dgpic {

struct ModelConfig {
  int feature_dim = 128;  // C
  int patch_count = 64;   // M
  int patch_size = 32;    // k
  int n_blocks = 4;
  int n_heads = 4;
  int mlp_ratio = 4;
  double mask_ratio = 0.7;
  double learning_rate = 0.001;
  double weight_decay = 0.05;
  int batch_size = 128;
  int epochs = 300;
  uint64_t seed = 1;

  int embed_hidden() const { return std::max(8, feature_dim / 4); }
  void validate() const;
};

// Column-major slice of the flat parameter vector.
struct ParamSlice {
  size_t offset = 0;
  int rows = 0;
  int cols = 1;
  size_t size() const { return static_cast<size_t>(rows) * cols; }
};

struct BlockSlices {
  ParamSlice ln1_gamma, wq, bq, wk, bk, wv, bv, wo, bo;
  ParamSlice ln2_gamma, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Fixed parameter order; the checkpoint stores values in exactly this order.
struct ParamLayout {
  ParamSlice embed_w1, embed_b1, embed_w2, embed_b2;
  ParamSlice pos_w1, pos_b1, pos_w2, pos_b2;
  ParamSlice mask_token;
  std::vector<BlockSlices> blocks;
  ParamSlice recon_w, recon_b;
  size_t total = 0;

  static ParamLayout make(const ModelConfig& config);
};

// Parameter/gradient buffers are mapped by Eigen kernels whose instruction
// selection depends on pointer alignment; a fixed 64-byte alignment keeps
// results bit-identical across runs.
using ParamVec = std::vector<double, Eigen::aligned_allocator<double>>;

struct ModelParams {
  ModelConfig config;
  ParamVec values;

  static ModelParams init(const ModelConfig& config);  // seeded from config.seed
  const ParamLayout& layout() const;

  Eigen::Map<const Eigen::MatrixXd> view(const ParamSlice& s) const {
    return {values.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<Eigen::MatrixXd> view(const ParamSlice& s) {
    return {values.data() + s.offset, s.rows, s.cols};
  }
};

enum class SegmentRole { query_input, query_target, prompt_input, prompt_target };

struct TokenMatrix {
  Eigen::MatrixXd tokens;            // C x n
  Eigen::Matrix3Xd centers;          // 3 x n patch centers
  std::vector<SegmentRole> segment;  // per column

  int n() const { return static_cast<int>(tokens.cols()); }
};

// FPS + kNN patching with per-patch centered point blocks; the cacheable
// per-cloud tokenizer input.
struct TokenizerInput {
  Eigen::Matrix3Xd patch_points;  // 3 x (M*k), column-major by patch, centered
  Eigen::Matrix3Xd centers;       // 3 x M
  int patch_count = 0;
  int patch_size = 0;

  Eigen::Matrix3Xd patch_block(int m) const {
    return patch_points.block(0, m * patch_size, 3, patch_size);
  }
};

TokenizerInput tokenize_cloud(const PointCloud& cloud, int patch_count,
                              int patch_size, uint64_t fps_seed = 0);

// Shared per-point MLP + max pool per patch, plus positional embedding of
// the patch center.
TokenMatrix embed_patches(const PointCloud& cloud, const PatchSet& patches,
                          const ModelParams& params, SegmentRole role);
TokenMatrix embed_patches(const TokenizerInput& input, const ModelParams& params,
                          SegmentRole role);

Eigen::MatrixXd positional_embeddings(const Eigen::Matrix3Xd& centers,
                                      const ModelParams& params);

// Element-wise max across token columns.
Eigen::VectorXd global_feature(const TokenMatrix& tokens);

// Fixed order: query-input | query-target | prompt-input | prompt-target.
TokenMatrix assemble_icl_sequence(const TokenMatrix& query_input,
                                  const TokenMatrix& query_target,
                                  const TokenMatrix& prompt_input,
                                  const TokenMatrix& prompt_target);

// Replaces ceil(ratio * M) query-target tokens with mask_token + positional
// embedding. Returns the masked absolute positions, ascending.
std::vector<int> mask_tokens(TokenMatrix& seq, double ratio,
                             const ModelParams& params, uint64_t seed);

// A query-target segment that is masked entirely (the test-time form),
// anchored at the given centers.
TokenMatrix mask_segment(const Eigen::Matrix3Xd& centers, const ModelParams& params);

// Pre-norm multi-head self-attention + feed-forward blocks with residuals,
// full attention over all positions. n_blocks == 0 is the identity.
TokenMatrix transformer_forward(const TokenMatrix& seq, const ModelParams& params);

// Maps selected output tokens to k offsets about their patch centers.
std::vector<Eigen::Matrix3Xd> reconstruct_patches(const TokenMatrix& seq_out,
                                                  const std::vector<int>& indices,
                                                  const ModelParams& params);

// Mean Chamfer distance over masked patches.
double icl_loss(const std::vector<Eigen::Matrix3Xd>& pred,
                const std::vector<Eigen::Matrix3Xd>& gt);

// One training example: a query pair and a prompt pair on the same task.
struct TrainExample {
  const TokenizerInput* query_input = nullptr;
  const TokenizerInput* query_target = nullptr;
  const TokenizerInput* prompt_input = nullptr;
  const TokenizerInput* prompt_target = nullptr;
  uint64_t mask_seed = 0;
};

// Forward (and, when grad != nullptr, reverse accumulation over every
// parameter) of the masked-patch Chamfer loss for one example.
double train_step(const ModelParams& params, const TrainExample& example,
                  ParamVec* grad);

struct TrainOptions {
  std::function<void(const std::string&)> warn;  // defaults to stderr
};

// Multi-domain paired training: each query is paired with a prompt from a
// different source domain on the same task; AdamW with cosine decay.
// Returns per-epoch mean loss.
std::vector<double> train(ModelParams& params,
                          const std::vector<DomainDataset>& sources,
                          const TrainOptions& options = {});

// Central finite differences on n_probe randomly chosen parameters against
// the analytic gradient; returns the max relative error.
double gradient_check(const ModelParams& params, const TrainExample& example,
                      double epsilon, int n_probe, uint64_t seed);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dgpic
