#ifndef SURVFUSE_FUSIONNET_HPP
#define SURVFUSE_FUSIONNET_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "survfuse/numerics.hpp"

namespace survfuse {

class Rng;

class EmptyBagError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Scaled dot-product attention weights. W_Q and W_K map to d_attn; W_V maps
/// to the model width so attended outputs stay in token space.
struct AttentionBlock {
  Matrix w_q;
  Matrix w_k;
  Matrix w_v;

  double scale() const;
};

enum class ImageTokens {
  pooled,   // one token: the aggregated patient vector
  patches,  // per-patch self-attention outputs
};

struct ModelConfig {
  std::size_t d_img = 32;
  std::size_t d_model = 16;
  std::size_t d_attn = 16;
  std::size_t d_gene = 50;
  std::size_t d_clin = 4;
  bool use_genes = true;
  bool use_clinical = true;
  ImageTokens image_tokens = ImageTokens::pooled;

  std::size_t head_inputs() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ModelParams {
  ModelConfig config;
  Matrix img_proj;   // d_img × d
  Matrix img_bias;   // 1 × d
  Matrix gene_proj;  // d_gene × d, one embedding row per gene
  Matrix gene_bias;  // 1 × d
  AttentionBlock self_attn;
  AttentionBlock cross_ig;  // image queries, gene keys/values
  AttentionBlock cross_gi;  // gene queries, image keys/values
  Matrix head_w;            // head_inputs × 1
  Matrix head_b;            // 1 × 1
  std::uint64_t version = 0;

  /// Visits every tensor in a fixed order: fn(name, matrix, decays).
  /// Bias tensors report decays = false.
  template <class Fn>
  void for_each(Fn&& fn) {
    for_each_impl(*this, fn);
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    for_each_impl(*this, fn);
  }

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

 private:
  template <class Self, class Fn>
  static void for_each_impl(Self& p, Fn& fn) {
    fn(std::string_view("img_proj"), p.img_proj, true);
    fn(std::string_view("img_bias"), p.img_bias, false);
    fn(std::string_view("gene_proj"), p.gene_proj, true);
    fn(std::string_view("gene_bias"), p.gene_bias, false);
    fn(std::string_view("self_attn.w_q"), p.self_attn.w_q, true);
    fn(std::string_view("self_attn.w_k"), p.self_attn.w_k, true);
    fn(std::string_view("self_attn.w_v"), p.self_attn.w_v, true);
    fn(std::string_view("cross_ig.w_q"), p.cross_ig.w_q, true);
    fn(std::string_view("cross_ig.w_k"), p.cross_ig.w_k, true);
    fn(std::string_view("cross_ig.w_v"), p.cross_ig.w_v, true);
    fn(std::string_view("cross_gi.w_q"), p.cross_gi.w_q, true);
    fn(std::string_view("cross_gi.w_k"), p.cross_gi.w_k, true);
    fn(std::string_view("cross_gi.w_v"), p.cross_gi.w_v, true);
    fn(std::string_view("head_w"), p.head_w, true);
    fn(std::string_view("head_b"), p.head_b, false);
  }
};

using ModelGrads = ModelParams;

/// Correctly shaped all-zero parameters (tensors unused by the config are 0×0).
ModelParams zero_params(const ModelConfig& cfg);
/// Xavier-uniform weights, zero biases.
ModelParams init_params(const ModelConfig& cfg, Rng& rng);
/// dst += alpha · src, tensor by tensor.
void accumulate(ModelGrads& dst, const ModelGrads& src, double alpha = 1.0);

/// Model inputs for one patient, already standardised.
struct PatientFeatures {
  Matrix patches;              // n × d_img
  std::vector<double> genes;   // d_gene
  std::vector<double> clinical;  // d_clin
};

/// Intermediates of one attention site.
struct AttentionTape {
  Matrix x_q;   // query tokens
  Matrix x_kv;  // key/value tokens
  Matrix q, k, v;
  Matrix attn;  // softmax weights, rows sum to 1
  Matrix out;   // attn · v, one row per query
};

struct AttentionResult {
  Matrix pooled;  // mean over query rows, 1 × d
  AttentionTape tape;
};

/// General attention from query tokens onto key/value tokens.
AttentionResult attend(const Matrix& x_q, const Matrix& x_kv, const AttentionBlock& block);

struct AttentionGrads {
  Matrix d_xq;
  Matrix d_xkv;
  AttentionBlock d_block;
};

/// Backward of `attend` given dLoss/d out (rows per query).
AttentionGrads attend_backward(const AttentionBlock& block, const AttentionTape& tape,
                               const Matrix& d_out);

/// Patch-level self-attention followed by mean pooling.
AttentionResult self_attend_aggregate(const Matrix& patches, const AttentionBlock& block);

struct CrossAttentionResult {
  Matrix fused;  // 1 × 2d: [pooled image-query branch, pooled gene-query branch]
  AttentionTape image_to_gene;
  AttentionTape gene_to_image;
};

CrossAttentionResult dual_cross_attend(const Matrix& img_tokens, const Matrix& gene_tokens,
                                       const AttentionBlock& block_ig, const AttentionBlock& block_gi);

/// Gene tokens: row j = genes[j] · gene_proj row j + gene_bias.
Matrix gene_tokens(const ModelParams& params, std::span<const double> genes);

struct ForwardTape {
  std::uint64_t params_version = 0;
  ModelConfig config;
  bool valid = false;
  Matrix patches;
  std::vector<double> genes;
  Matrix head_input;  // 1 × head_inputs
  AttentionTape self;
  Matrix gene_tok;
  Matrix img_tok;
  bool has_cross = false;
  AttentionTape image_to_gene;
  AttentionTape gene_to_image;
};

struct ForwardResult {
  double log_hazard = 0.0;
  ForwardTape tape;
};

ForwardResult forward(const ModelParams& params, const PatientFeatures& patient);
/// Forward without keeping a tape.
double predict(const ModelParams& params, const PatientFeatures& patient);

/// Exact gradient of upstream · log_hazard with respect to every parameter.
ModelGrads backward(const ModelParams& params, const ForwardTape& tape, double upstream);

/// Visits every softmax weight matrix recorded on a tape.
void for_each_attention(const ForwardTape& tape, const std::function<void(const Matrix&)>& fn);

}  // namespace survfuse

#endif
