#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "crossview/config.hpp"
#include "crossview/core/nn.hpp"
#include "crossview/data/synth.hpp"

namespace crossview {

constexpr int kPadId = 0;
constexpr int kUnkId = 1;

/// One token per line; line number = id. Ids 0 and 1 are reserved for
/// padding and unknown words.
struct Vocab {
  std::vector<std::string> words;
  std::unordered_map<std::string, int> index;

  int id(const std::string& w) const {
    auto it = index.find(w);
    return it == index.end() ? kUnkId : it->second;
  }
  int size() const { return static_cast<int>(words.size()); }

  static Vocab from_words(std::vector<std::string> ws) {
    Vocab v;
    v.words = std::move(ws);
    for (size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = static_cast<int>(i);
    return v;
  }

  /// Vocabulary covering the synthetic expression templates.
  static Vocab builtin() {
    std::vector<std::string> ws = {"<pad>", "<unk>", "the", "in"};
    for (auto* w : synth::size_names()) ws.push_back(w);
    for (auto* w : synth::color_names()) ws.push_back(w);
    for (auto* w : synth::shape_names()) ws.push_back(w);
    for (auto* w : {"top", "bottom", "left", "right", "center"}) ws.push_back(w);
    return from_words(std::move(ws));
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open vocabulary file: ", path);
    std::vector<std::string> ws;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
      ws.push_back(line);
    }
    require(ws.size() >= 2, "vocabulary file needs at least PAD and UNK lines");
    return from_words(std::move(ws));
  }
};

struct TokenSeq {
  std::vector<int> ids;        // length L, 0 = padding
  std::vector<uint8_t> mask;   // true where a real token sits
};

/// Lowercase whitespace tokenization, clipped at L and right-padded.
inline TokenSeq tokenize(const std::string& expression, const Vocab& vocab, int L) {
  std::string lowered;
  lowered.reserve(expression.size());
  for (char c : expression) lowered.push_back(static_cast<char>(std::tolower(c)));
  std::vector<std::string> words;
  std::string cur;
  for (char c : lowered) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  if (words.empty()) fail("tokenize: empty expression");

  TokenSeq seq;
  seq.ids.assign(static_cast<size_t>(L), kPadId);
  seq.mask.assign(static_cast<size_t>(L), 0);
  int n = std::min<int>(L, static_cast<int>(words.size()));
  for (int i = 0; i < n; ++i) {
    seq.ids[i] = vocab.id(words[i]);
    seq.mask[i] = 1;
  }
  return seq;
}

namespace detail {

/// [N,T,C] -> [N*h, T, C/h] and back.
inline Var split_heads(const Var& x, int heads) {
  int n = x->value.dim(0), t = x->value.dim(1), c = x->value.dim(2);
  if (heads == 1) return x;
  int hd = c / heads;
  // regroup [N,T,h,hd] as [N,h,T,hd] with one gather per item
  auto m = geom::swap01(t, heads, hd);
  Var swapped = element_gather_batched(reshape(x, {n, t, heads, hd}), m,
                                       static_cast<int64_t>(t) * c, {heads, t, hd});
  return reshape(swapped, {n * heads, t, hd});
}

inline Var merge_heads(const Var& x, int heads, int n_items) {
  if (heads == 1) return x;
  int t = x->value.dim(1), hd = x->value.dim(2);
  auto m = geom::swap01(heads, t, hd);
  Var swapped = element_gather_batched(reshape(x, {n_items, heads, t, hd}), m,
                                       static_cast<int64_t>(heads) * t * hd, {t, heads, hd});
  return reshape(swapped, {n_items, t, heads * hd});
}

}  // namespace detail

/// Masked multi-head self-attention over [N, T, C]; the key mask (length T)
/// gives padded keys exactly zero weight.
struct SelfAttention {
  Linear wq, wk, wv, proj;
  int dim = 0, heads = 1;

  SelfAttention() = default;
  SelfAttention(ParamRegistry& reg, const std::string& name, int d, int h, Rng& rng)
      : wq(reg, name + ".wq", d, d, rng),
        wk(reg, name + ".wk", d, d, rng),
        wv(reg, name + ".wv", d, d, rng),
        proj(reg, name + ".proj", d, d, rng),
        dim(d),
        heads(h) {}

  Var operator()(const Var& x, const std::vector<uint8_t>* key_mask = nullptr) const {
    int n = x->value.dim(0);
    int hd = dim / heads;
    Var q = detail::split_heads(wq(x), heads);
    Var k = detail::split_heads(wk(x), heads);
    Var v = detail::split_heads(wv(x), heads);
    Var scores = scale(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(hd)));
    Var attn = softmax_lastdim(scores, key_mask);
    Var out = detail::merge_heads(bmm(attn, v), heads, n);
    return proj(out);
  }
};

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  SelfAttention attn;
  Mlp mlp;

  TransformerBlock() = default;
  TransformerBlock(ParamRegistry& reg, const std::string& name, int dim, int heads, Rng& rng)
      : ln1(reg, name + ".ln1", dim),
        ln2(reg, name + ".ln2", dim),
        attn(reg, name + ".attn", dim, heads, rng),
        mlp(reg, name + ".mlp", dim, 2 * dim, rng) {}

  Var operator()(const Var& x, const std::vector<uint8_t>* key_mask = nullptr) const {
    Var y = add(x, attn(ln1(x), key_mask));
    return add(y, mlp(ln2(y)));
  }
};

/// Language feature: learned embeddings + position embedding + two
/// transformer blocks, producing [L, lang_dim] with padded rows zeroed.
struct TextEncoder {
  Var embed;  // [V, C]
  Var pos;    // [L, C]
  TransformerBlock block1, block2;
  LayerNorm final_ln;
  int len = 0, dim = 0;
  bool use_pos = true;

  TextEncoder() = default;
  TextEncoder(ParamRegistry& reg, const std::string& name, const Vocab& vocab,
              const ModelConfig& cfg, Rng& rng)
      : embed(reg.param(name + ".embed",
                        rng.normal_tensor({vocab.size(), cfg.lang_dim}, 0.0, 0.5))),
        pos(reg.param(name + ".pos", rng.normal_tensor({cfg.lang_len, cfg.lang_dim}, 0.0, 0.1))),
        block1(reg, name + ".block1", cfg.lang_dim, cfg.heads, rng),
        block2(reg, name + ".block2", cfg.lang_dim, cfg.heads, rng),
        final_ln(reg, name + ".final_ln", cfg.lang_dim),
        len(cfg.lang_len),
        dim(cfg.lang_dim),
        use_pos(cfg.use_pos_embed) {}

  Var operator()(const TokenSeq& tokens) const {
    require(static_cast<int>(tokens.ids.size()) == len, "token sequence length mismatch");
    bool any = false;
    for (uint8_t m : tokens.mask) any = any || m;
    require(any, "token sequence has no real tokens");
    Var x = gather_rows(embed, tokens.ids);
    if (use_pos) x = add(x, pos);
    Var batched = reshape(x, {1, len, dim});
    batched = block1(batched, &tokens.mask);
    batched = block2(batched, &tokens.mask);
    Var out = final_ln(reshape(batched, {len, dim}));
    std::vector<double> keep(tokens.mask.begin(), tokens.mask.end());
    return row_scale(out, keep);
  }
};

}  // namespace crossview
