#include "survfuse/fusionnet.hpp"

#include <cmath>
#include <string>

#include "survfuse/rng.hpp"

namespace survfuse {

namespace {

void add_row_bias(Matrix& m, const Matrix& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) += bias(0, c);
}

Matrix column_sums(const Matrix& m) {
  Matrix s(1, m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) s(0, c) += m(r, c);
  return s;
}

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

void require(bool ok, const std::string& stage, const std::string& detail) {
  if (!ok) throw ShapeError("forward[" + stage + "]: " + detail);
}

Matrix xavier(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

double AttentionBlock::scale() const { return 1.0 / std::sqrt(static_cast<double>(w_q.cols())); }

std::size_t ModelConfig::head_inputs() const {
  return (use_genes ? 2 * d_model : d_model) + (use_clinical ? d_clin : 0);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](std::string_view, const Matrix& m, bool) { n += m.size(); });
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for_each([&](std::string_view, const Matrix& m, bool) {
    flat.insert(flat.end(), m.data().begin(), m.data().end());
  });
  return flat;
}

void ModelParams::assign_flat(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ShapeError("assign_flat: parameter count mismatch");
  std::size_t off = 0;
  for_each([&](std::string_view, Matrix& m, bool) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + m.size()), m.data().begin());
    off += m.size();
  });
  ++version;
}

ModelParams zero_params(const ModelConfig& cfg) {
  if (cfg.d_img == 0 || cfg.d_model == 0 || cfg.d_attn == 0)
    throw ShapeError("model dimensions must be positive");
  const std::size_t d = cfg.d_model;
  ModelParams p;
  p.config = cfg;
  p.img_proj = Matrix(cfg.d_img, d);
  p.img_bias = Matrix(1, d);
  p.self_attn = {Matrix(d, cfg.d_attn), Matrix(d, cfg.d_attn), Matrix(d, d)};
  if (cfg.use_genes) {
    p.gene_proj = Matrix(cfg.d_gene, d);
    p.gene_bias = Matrix(1, d);
    p.cross_ig = {Matrix(d, cfg.d_attn), Matrix(d, cfg.d_attn), Matrix(d, d)};
    p.cross_gi = {Matrix(d, cfg.d_attn), Matrix(d, cfg.d_attn), Matrix(d, d)};
  }
  p.head_w = Matrix(cfg.head_inputs(), 1);
  p.head_b = Matrix(1, 1);
  return p;
}

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  ModelParams p = zero_params(cfg);
  p.for_each([&](std::string_view, Matrix& m, bool decays) {
    if (decays && !m.empty()) m = xavier(m.rows(), m.cols(), rng);
  });
  return p;
}

void accumulate(ModelGrads& dst, const ModelGrads& src, double alpha) {
  std::vector<const Matrix*> from;
  src.for_each([&](std::string_view, const Matrix& m, bool) { from.push_back(&m); });
  std::size_t k = 0;
  dst.for_each([&](std::string_view name, Matrix& m, bool) {
    const Matrix& s = *from[k++];
    if (!m.same_shape(s)) throw ShapeError("accumulate: tensor " + std::string(name) + " shape differs");
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] += alpha * s.data()[i];
  });
}

AttentionResult attend(const Matrix& x_q, const Matrix& x_kv, const AttentionBlock& block) {
  if (x_q.rows() == 0) throw EmptyBagError("attention: no query tokens");
  if (x_kv.rows() == 0) throw EmptyBagError("attention: no key/value tokens");
  AttentionResult r;
  AttentionTape& t = r.tape;
  t.x_q = x_q;
  t.x_kv = x_kv;
  t.q = matmul(x_q, block.w_q);
  t.k = matmul(x_kv, block.w_k);
  t.v = matmul(x_kv, block.w_v);
  Matrix scores = matmul_nt(t.q, t.k);
  const double s = block.scale();
  for (double& x : scores.data()) x *= s;
  t.attn = softmax_rows(scores);
  t.out = matmul(t.attn, t.v);
  r.pooled = mean_rows(t.out);
  return r;
}

AttentionGrads attend_backward(const AttentionBlock& block, const AttentionTape& t, const Matrix& d_out) {
  if (!d_out.same_shape(t.out)) throw TapeError("attend_backward: upstream shape does not match tape");
  AttentionGrads g;
  const Matrix d_attn = matmul_nt(d_out, t.v);
  const Matrix d_v = matmul_tn(t.attn, d_out);
  Matrix d_scores(t.attn.rows(), t.attn.cols());
  const double s = block.scale();
  for (std::size_t r = 0; r < t.attn.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < t.attn.cols(); ++c) dot += d_attn(r, c) * t.attn(r, c);
    for (std::size_t c = 0; c < t.attn.cols(); ++c) d_scores(r, c) = t.attn(r, c) * (d_attn(r, c) - dot) * s;
  }
  const Matrix d_q = matmul(d_scores, t.k);
  const Matrix d_k = matmul_tn(d_scores, t.q);
  g.d_block.w_q = matmul_tn(t.x_q, d_q);
  g.d_block.w_k = matmul_tn(t.x_kv, d_k);
  g.d_block.w_v = matmul_tn(t.x_kv, d_v);
  g.d_xq = matmul_nt(d_q, block.w_q);
  g.d_xkv = matmul_nt(d_k, block.w_k);
  add_into(g.d_xkv, matmul_nt(d_v, block.w_v));
  return g;
}

AttentionResult self_attend_aggregate(const Matrix& patches, const AttentionBlock& block) {
  if (patches.rows() == 0) throw EmptyBagError("self_attend_aggregate: empty patch bag");
  return attend(patches, patches, block);
}

CrossAttentionResult dual_cross_attend(const Matrix& img_tokens, const Matrix& gene_tokens,
                                       const AttentionBlock& block_ig, const AttentionBlock& block_gi) {
  if (img_tokens.rows() == 0) throw EmptyBagError("dual_cross_attend: no image tokens");
  if (gene_tokens.rows() == 0) throw EmptyBagError("dual_cross_attend: no gene tokens");
  AttentionResult ig = attend(img_tokens, gene_tokens, block_ig);
  AttentionResult gi = attend(gene_tokens, img_tokens, block_gi);
  const std::size_t d = ig.pooled.cols();
  CrossAttentionResult r;
  r.fused = Matrix(1, d + gi.pooled.cols());
  for (std::size_t c = 0; c < d; ++c) r.fused(0, c) = ig.pooled(0, c);
  for (std::size_t c = 0; c < gi.pooled.cols(); ++c) r.fused(0, d + c) = gi.pooled(0, c);
  r.image_to_gene = std::move(ig.tape);
  r.gene_to_image = std::move(gi.tape);
  return r;
}

Matrix gene_tokens(const ModelParams& params, std::span<const double> genes) {
  const Matrix& e = params.gene_proj;
  if (genes.size() != e.rows()) {
    throw ShapeError("forward[gene_tokens]: " + std::to_string(genes.size()) + " genes for a " +
                     e.shape_str() + " embedding");
  }
  Matrix tok(e.rows(), e.cols());
  for (std::size_t j = 0; j < e.rows(); ++j)
    for (std::size_t c = 0; c < e.cols(); ++c) tok(j, c) = genes[j] * e(j, c) + params.gene_bias(0, c);
  return tok;
}

ForwardResult forward(const ModelParams& params, const PatientFeatures& patient) {
  const ModelConfig& cfg = params.config;
  if (patient.patches.rows() == 0) throw EmptyBagError("forward[patches]: patient has no patches");
  require(patient.patches.cols() == cfg.d_img, "img_proj",
          "patch embeddings are " + patient.patches.shape_str() + ", model expects d_img = " +
              std::to_string(cfg.d_img));
  if (cfg.use_clinical) {
    require(patient.clinical.size() == cfg.d_clin, "clinical",
            std::to_string(patient.clinical.size()) + " clinical values, expected " + std::to_string(cfg.d_clin));
  }
  if (cfg.use_genes) {
    require(patient.genes.size() == cfg.d_gene, "gene_tokens",
            std::to_string(patient.genes.size()) + " genes, expected " + std::to_string(cfg.d_gene));
  }

  ForwardResult res;
  ForwardTape& t = res.tape;
  t.params_version = params.version;
  t.config = cfg;
  t.patches = patient.patches;

  Matrix x = matmul(patient.patches, params.img_proj);
  add_row_bias(x, params.img_bias);
  AttentionResult self = self_attend_aggregate(x, params.self_attn);

  Matrix features;
  if (cfg.use_genes) {
    t.genes = patient.genes;
    t.gene_tok = gene_tokens(params, patient.genes);
    t.img_tok = cfg.image_tokens == ImageTokens::pooled ? self.pooled : self.tape.out;
    CrossAttentionResult cross = dual_cross_attend(t.img_tok, t.gene_tok, params.cross_ig, params.cross_gi);
    features = std::move(cross.fused);
    t.image_to_gene = std::move(cross.image_to_gene);
    t.gene_to_image = std::move(cross.gene_to_image);
    t.has_cross = true;
  } else {
    features = self.pooled;
  }
  t.self = std::move(self.tape);

  t.head_input = Matrix(1, cfg.head_inputs());
  std::size_t c = 0;
  for (double v : features.data()) t.head_input(0, c++) = v;
  if (cfg.use_clinical)
    for (double v : patient.clinical) t.head_input(0, c++) = v;

  double out = params.head_b(0, 0);
  for (std::size_t i = 0; i < t.head_input.cols(); ++i) out += t.head_input(0, i) * params.head_w(i, 0);
  res.log_hazard = out;
  t.valid = true;
  return res;
}

double predict(const ModelParams& params, const PatientFeatures& patient) {
  return forward(params, patient).log_hazard;
}

ModelGrads backward(const ModelParams& params, const ForwardTape& t, double upstream) {
  if (!t.valid) throw TapeError("backward: tape was never filled by forward");
  if (t.params_version != params.version || !(t.config == params.config)) {
    throw TapeError("backward: tape was recorded with different parameters (version " +
                    std::to_string(t.params_version) + " vs " + std::to_string(params.version) + ")");
  }
  const ModelConfig& cfg = params.config;
  const std::size_t d = cfg.d_model;
  ModelGrads g = zero_params(cfg);

  g.head_b(0, 0) = upstream;
  for (std::size_t i = 0; i < t.head_input.cols(); ++i) g.head_w(i, 0) = t.head_input(0, i) * upstream;

  // gradient reaching the self-attention outputs, one row per patch
  const std::size_t n = t.self.out.rows();
  Matrix d_self_out(n, d);
  auto spread_pooled = [&](std::span<const double> d_pooled) {
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) d_self_out(r, c) += d_pooled[c] * inv;
  };

  if (t.has_cross) {
    Matrix d_ig(t.image_to_gene.out.rows(), d);
    Matrix d_gi(t.gene_to_image.out.rows(), d);
    const double inv_ig = 1.0 / static_cast<double>(d_ig.rows());
    const double inv_gi = 1.0 / static_cast<double>(d_gi.rows());
    for (std::size_t c = 0; c < d; ++c) {
      const double a = upstream * params.head_w(c, 0);
      const double b = upstream * params.head_w(d + c, 0);
      for (std::size_t r = 0; r < d_ig.rows(); ++r) d_ig(r, c) = a * inv_ig;
      for (std::size_t r = 0; r < d_gi.rows(); ++r) d_gi(r, c) = b * inv_gi;
    }
    AttentionGrads ig = attend_backward(params.cross_ig, t.image_to_gene, d_ig);
    AttentionGrads gi = attend_backward(params.cross_gi, t.gene_to_image, d_gi);
    g.cross_ig = std::move(ig.d_block);
    g.cross_gi = std::move(gi.d_block);

    Matrix d_img_tok = std::move(ig.d_xq);
    add_into(d_img_tok, gi.d_xkv);
    Matrix d_gene_tok = std::move(ig.d_xkv);
    add_into(d_gene_tok, gi.d_xq);

    for (std::size_t j = 0; j < d_gene_tok.rows(); ++j)
      for (std::size_t c = 0; c < d; ++c) {
        g.gene_proj(j, c) = t.genes[j] * d_gene_tok(j, c);
        g.gene_bias(0, c) += d_gene_tok(j, c);
      }

    if (cfg.image_tokens == ImageTokens::pooled) {
      spread_pooled(d_img_tok.row(0));
    } else {
      add_into(d_self_out, d_img_tok);
    }
  } else {
    std::vector<double> d_pooled(d);
    for (std::size_t c = 0; c < d; ++c) d_pooled[c] = upstream * params.head_w(c, 0);
    spread_pooled(d_pooled);
  }

  AttentionGrads self = attend_backward(params.self_attn, t.self, d_self_out);
  g.self_attn = std::move(self.d_block);
  Matrix d_x = std::move(self.d_xq);
  add_into(d_x, self.d_xkv);
  g.img_proj = matmul_tn(t.patches, d_x);
  g.img_bias = column_sums(d_x);
  return g;
}

void for_each_attention(const ForwardTape& tape, const std::function<void(const Matrix&)>& fn) {
  fn(tape.self.attn);
  if (tape.has_cross) {
    fn(tape.image_to_gene.attn);
    fn(tape.gene_to_image.attn);
  }
}

}  // namespace survfuse
