#include "owcl/nn.hpp"

#include <cmath>

namespace owcl {

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, double sigma, bool zero_weight) {
  Linear l;
  l.weight = zero_weight ? Tensor::zeros({in, out}) : Tensor::randn({in, out}, rng, sigma);
  l.bias = Tensor::zeros({out});
  return l;
}

Tensor linear(const Tensor& x, const Linear& l) { return add_rowvec(matmul(x, l.weight), l.bias); }

MiniViT make_vit(const VitGeometry& geo, Rng& rng) {
  if (geo.image_side % geo.patch != 0)
    throw std::invalid_argument("make_vit: image side " + std::to_string(geo.image_side) +
                                " not divisible by patch " + std::to_string(geo.patch));
  if (geo.width % geo.heads != 0)
    throw std::invalid_argument("make_vit: width " + std::to_string(geo.width) +
                                " not divisible by heads " + std::to_string(geo.heads));
  MiniViT vit;
  vit.geo = geo;
  const std::size_t C = geo.width, d = C / geo.heads, T = geo.patch_tokens();
  vit.patch_embed = make_linear(geo.patch * geo.patch, C, rng);
  vit.cls_token = Tensor::randn({1, C}, rng, 0.02);
  vit.pos_embed = Tensor::randn({1 + T, C}, rng, 0.02);
  for (std::size_t b = 0; b < geo.depth; ++b) {
    TransformerBlock blk;
    blk.ln1_gamma = Tensor::full({C}, 1.0);
    blk.ln1_beta = Tensor::zeros({C});
    blk.attn.width = C;
    blk.attn.heads = geo.heads;
    for (std::size_t h = 0; h < geo.heads; ++h) {
      blk.attn.wq.push_back(Tensor::randn({C, d}, rng, 0.02));
      blk.attn.wk.push_back(Tensor::randn({C, d}, rng, 0.02));
      blk.attn.wv.push_back(Tensor::randn({C, d}, rng, 0.02));
    }
    blk.attn.out = make_linear(C, C, rng);
    blk.ln2_gamma = Tensor::full({C}, 1.0);
    blk.ln2_beta = Tensor::zeros({C});
    blk.fc1 = make_linear(C, C * geo.mlp_ratio, rng);
    blk.fc2 = make_linear(C * geo.mlp_ratio, C, rng);
    vit.blocks.push_back(std::move(blk));
  }
  vit.lnf_gamma = Tensor::full({C}, 1.0);
  vit.lnf_beta = Tensor::zeros({C});
  return vit;
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.ndim() != 2 || image.rows() != image.cols())
    throw std::invalid_argument("patchify: image must be square 2-d, got " +
                                shape_str(image.shape()));
  const std::size_t side = image.rows();
  if (side % patch != 0)
    throw std::invalid_argument("patchify: side " + std::to_string(side) +
                                " not divisible by patch " + std::to_string(patch));
  const std::size_t g = side / patch;
  Tensor out = Tensor::zeros({g * g, patch * patch});
  for (std::size_t pr = 0; pr < g; ++pr)
    for (std::size_t pc = 0; pc < g; ++pc) {
      double* row = out.raw_mut() + (pr * g + pc) * patch * patch;
      for (std::size_t r = 0; r < patch; ++r)
        for (std::size_t c = 0; c < patch; ++c)
          row[r * patch + c] = image.raw()[(pr * patch + r) * side + pc * patch + c];
    }
  return out;
}

Tensor attention_with_prefix(const Tensor& x, const MultiHeadAttention& mha,
                             const LayerPrefix* prefix) {
  const std::size_t C = mha.width, H = mha.heads, d = C / H;
  if (x.cols() != C)
    throw std::invalid_argument("attention_with_prefix: tokens " + shape_str(x.shape()) +
                                " do not match width " + std::to_string(C));
  Tensor ktok = x, vtok = x;
  if (prefix) {
    if (prefix->keys.rows() != prefix->values.rows())
      throw std::invalid_argument("attention_with_prefix: key/value prefix row mismatch");
    if (prefix->keys.rows() > 0) {
      ktok = concat_rows(prefix->keys, x);
      vtok = concat_rows(prefix->values, x);
    }
  }
  // Shared low-rank down-projections, one per adapted target per layer.
  Tensor xd_q, vd;
  const bool lq = mha.lora_q != nullptr, lv = mha.lora_v != nullptr;
  if (lq) xd_q = matmul(x, mha.lora_q->down);
  if (lv) vd = matmul(vtok, mha.lora_v->down);
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Tensor> heads;
  heads.reserve(H);
  for (std::size_t h = 0; h < H; ++h) {
    Tensor q = matmul(x, mha.wq[h]);
    if (lq) q = add(q, scale(matmul(xd_q, mha.lora_q->up[h]), mha.lora_q->alpha / static_cast<double>(mha.lora_q->rank)));
    Tensor k = matmul(ktok, mha.wk[h]);
    Tensor v = matmul(vtok, mha.wv[h]);
    if (lv) v = add(v, scale(matmul(vd, mha.lora_v->up[h]), mha.lora_v->alpha / static_cast<double>(mha.lora_v->rank)));
    Tensor att = softmax_rows(scale(matmul_nt(q, k), att_scale));
    heads.push_back(matmul(att, v));
  }
  return linear(concat_cols(heads), mha.out);
}

Tensor block_forward(const Tensor& x, const TransformerBlock& blk, const LayerPrefix* prefix) {
  Tensor h = add(x, attention_with_prefix(layernorm_rows(x, blk.ln1_gamma, blk.ln1_beta), blk.attn,
                                          prefix));
  Tensor n2 = layernorm_rows(h, blk.ln2_gamma, blk.ln2_beta);
  Tensor m = linear(gelu(linear(n2, blk.fc1)), blk.fc2);
  if (blk.adapter) m = add(m, linear(gelu(linear(n2, blk.adapter->down)), blk.adapter->up));
  return add(h, m);
}

VitOutput vit_forward(const MiniViT& vit, const Tensor& image, const PrefixMap* prefixes,
                      const Tensor* extra_tokens, std::vector<bool>* applied_layers) {
  Tensor patches = patchify(image, vit.geo.patch);
  Tensor tok = concat_rows(vit.cls_token, linear(patches, vit.patch_embed));
  tok = add(tok, vit.pos_embed);
  if (extra_tokens && extra_tokens->rows() > 0) {
    if (extra_tokens->cols() != vit.geo.width)
      throw std::invalid_argument("vit_forward: extra tokens " + shape_str(extra_tokens->shape()) +
                                  " do not match width " + std::to_string(vit.geo.width));
    tok = concat_rows(tok, *extra_tokens);
  }
  if (applied_layers) applied_layers->assign(vit.blocks.size(), false);
  for (std::size_t b = 0; b < vit.blocks.size(); ++b) {
    const LayerPrefix* pfx = nullptr;
    if (prefixes) {
      auto it = prefixes->find(b);
      if (it != prefixes->end()) {
        pfx = &it->second;
        if (applied_layers) (*applied_layers)[b] = true;
      }
    }
    tok = block_forward(tok, vit.blocks[b], pfx);
  }
  tok = layernorm_rows(tok, vit.lnf_gamma, vit.lnf_beta);
  return VitOutput{slice_rows(tok, 0, 1), tok};
}

void visit_params(Linear& l, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "/weight", l.weight);
  fn(prefix + "/bias", l.bias);
}

void visit_params(MultiHeadAttention& mha, const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t h = 0; h < mha.heads; ++h) {
    fn(prefix + "/wq" + std::to_string(h), mha.wq[h]);
    fn(prefix + "/wk" + std::to_string(h), mha.wk[h]);
    fn(prefix + "/wv" + std::to_string(h), mha.wv[h]);
  }
  visit_params(mha.out, prefix + "/out", fn);
  if (mha.lora_q) {
    fn(prefix + "/lora_q/down", mha.lora_q->down);
    for (std::size_t h = 0; h < mha.lora_q->up.size(); ++h)
      fn(prefix + "/lora_q/up" + std::to_string(h), mha.lora_q->up[h]);
  }
  if (mha.lora_v) {
    fn(prefix + "/lora_v/down", mha.lora_v->down);
    for (std::size_t h = 0; h < mha.lora_v->up.size(); ++h)
      fn(prefix + "/lora_v/up" + std::to_string(h), mha.lora_v->up[h]);
  }
}

void visit_params(TransformerBlock& blk, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "/ln1/gamma", blk.ln1_gamma);
  fn(prefix + "/ln1/beta", blk.ln1_beta);
  visit_params(blk.attn, prefix + "/attn", fn);
  fn(prefix + "/ln2/gamma", blk.ln2_gamma);
  fn(prefix + "/ln2/beta", blk.ln2_beta);
  visit_params(blk.fc1, prefix + "/mlp/fc1", fn);
  visit_params(blk.fc2, prefix + "/mlp/fc2", fn);
  if (blk.adapter) {
    visit_params(blk.adapter->down, prefix + "/adapter/down", fn);
    visit_params(blk.adapter->up, prefix + "/adapter/up", fn);
  }
}

void visit_params(MiniViT& vit, const std::string& prefix, const ParamVisitor& fn) {
  visit_params(vit.patch_embed, prefix + "/patch_embed", fn);
  fn(prefix + "/cls_token", vit.cls_token);
  fn(prefix + "/pos_embed", vit.pos_embed);
  for (std::size_t b = 0; b < vit.blocks.size(); ++b)
    visit_params(vit.blocks[b], prefix + "/block" + std::to_string(b), fn);
  fn(prefix + "/lnf/gamma", vit.lnf_gamma);
  fn(prefix + "/lnf/beta", vit.lnf_beta);
}

std::size_t param_count(MiniViT& vit) {
  std::size_t n = 0;
  visit_params(vit, "", [&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

}  // namespace owcl
