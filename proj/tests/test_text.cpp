#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "crossview/core/gradcheck.hpp"
#include "crossview/text.hpp"

using namespace crossview;

namespace {
ModelConfig text_cfg() {
  ModelConfig cfg;
  cfg.lang_dim = 8;
  cfg.lang_len = 10;
  cfg.seed = 3;
  return cfg;
}
}  // namespace

TEST_CASE("tokenize pads, clips, and repeats deterministically") {
  Vocab vocab = Vocab::builtin();
  TokenSeq t = tokenize("the red circle", vocab, 20);
  REQUIRE(t.ids.size() == 20);
  for (int i = 0; i < 3; ++i) {
    CHECK(t.ids[static_cast<size_t>(i)] != kPadId);
    CHECK(t.mask[static_cast<size_t>(i)] == 1);
  }
  for (int i = 3; i < 20; ++i) {
    CHECK(t.ids[static_cast<size_t>(i)] == kPadId);
    CHECK(t.mask[static_cast<size_t>(i)] == 0);
  }

  std::string long_expr;
  for (int i = 0; i < 25; ++i) long_expr += "circle ";
  TokenSeq clipped = tokenize(long_expr, vocab, 20);
  for (uint8_t m : clipped.mask) CHECK(m == 1);

  TokenSeq again = tokenize("the red circle", vocab, 20);
  CHECK(again.ids == t.ids);
  CHECK(again.mask == t.mask);
}

TEST_CASE("tokenize handles case, unknown words, and rejects empty input") {
  Vocab vocab = Vocab::builtin();
  TokenSeq t = tokenize("THE Red CIRCLE", vocab, 5);
  CHECK(t.ids == tokenize("the red circle", vocab, 5).ids);
  TokenSeq unk = tokenize("the zeppelin", vocab, 5);
  CHECK(unk.ids[1] == kUnkId);
  CHECK_THROWS_AS(tokenize("   ", vocab, 5), Error);
}

TEST_CASE("vocabulary file round trip with reserved lines") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "xview_vocab";
  fs::create_directories(dir);
  std::string path = (dir / "vocab.txt").string();
  {
    std::ofstream out(path);
    out << "<pad>\n<unk>\nthe\ncircle\nred\n";
  }
  Vocab v = Vocab::load(path);
  CHECK(v.size() == 5);
  CHECK(v.id("circle") == 3);
  CHECK(v.id("spaceship") == kUnkId);
  fs::remove_all(dir);
}

TEST_CASE("encoder output shape and padded-row zeroing") {
  ModelConfig cfg = text_cfg();
  ParamRegistry reg;
  Rng rng(cfg.seed);
  Vocab vocab = Vocab::builtin();
  TextEncoder enc(reg, "text", vocab, cfg, rng);

  TokenSeq t = tokenize("the red circle", vocab, cfg.lang_len);
  Var out = enc(t);
  CHECK(out->value.shape() == std::vector<int>{cfg.lang_len, cfg.lang_dim});
  for (int i = 3; i < cfg.lang_len; ++i)
    for (int c = 0; c < cfg.lang_dim; ++c) CHECK(out->value[i * cfg.lang_dim + c] == 0.0);

  // all-pad-except-one: exactly one nonzero row
  TokenSeq one;
  one.ids.assign(static_cast<size_t>(cfg.lang_len), kPadId);
  one.mask.assign(static_cast<size_t>(cfg.lang_len), 0);
  one.ids[4] = vocab.id("circle");
  one.mask[4] = 1;
  Var single = enc(one);
  int nonzero_rows = 0;
  for (int i = 0; i < cfg.lang_len; ++i) {
    double mx = 0;
    for (int c = 0; c < cfg.lang_dim; ++c)
      mx = std::max(mx, std::abs(single->value[i * cfg.lang_dim + c]));
    nonzero_rows += mx > 0 ? 1 : 0;
  }
  CHECK(nonzero_rows == 1);
}

TEST_CASE("pad placement does not affect real-token rows without position embedding") {
  ModelConfig cfg = text_cfg();
  cfg.use_pos_embed = false;
  ParamRegistry reg;
  Rng rng(11);
  Vocab vocab = Vocab::builtin();
  TextEncoder enc(reg, "text", vocab, cfg, rng);

  int a = vocab.id("red"), b = vocab.id("circle");
  TokenSeq packed;
  packed.ids = {a, b, 0, 0, 0, 0, 0, 0, 0, 0};
  packed.mask = {1, 1, 0, 0, 0, 0, 0, 0, 0, 0};
  TokenSeq spread;
  spread.ids = {a, 0, 0, b, 0, 0, 0, 0, 0, 0};
  spread.mask = {1, 0, 0, 1, 0, 0, 0, 0, 0, 0};

  Var p = enc(packed), s = enc(spread);
  for (int c = 0; c < cfg.lang_dim; ++c) {
    CHECK(p->value[0 * cfg.lang_dim + c] == doctest::Approx(s->value[0 * cfg.lang_dim + c]).epsilon(1e-12));
    CHECK(p->value[1 * cfg.lang_dim + c] == doctest::Approx(s->value[3 * cfg.lang_dim + c]).epsilon(1e-12));
  }
}

TEST_CASE("padded embeddings cannot leak into real rows") {
  ModelConfig cfg = text_cfg();
  ParamRegistry reg;
  Rng rng(13);
  Vocab vocab = Vocab::builtin();
  TextEncoder enc(reg, "text", vocab, cfg, rng);
  TokenSeq t = tokenize("the red circle", vocab, cfg.lang_len);
  Tensor before = enc(t)->value.clone();
  // perturb the PAD embedding row
  Var embed = reg.find("text.embed");
  for (int c = 0; c < cfg.lang_dim; ++c) embed->value[kPadId * cfg.lang_dim + c] += 10.0;
  Tensor after = enc(t)->value;
  CHECK(max_abs_diff(before, after) == 0.0);
}

TEST_CASE("encoder gradient matches finite differences") {
  ModelConfig cfg = text_cfg();
  cfg.lang_len = 6;
  ParamRegistry reg;
  Rng rng(17);
  Vocab vocab = Vocab::builtin();
  TextEncoder enc(reg, "text", vocab, cfg, rng);
  TokenSeq t = tokenize("the tiny red circle", vocab, cfg.lang_len);
  Tensor w = rng.uniform_tensor({cfg.lang_len, cfg.lang_dim}, -1, 1);
  auto rep = gradcheck_registry(
      reg, [&] { return dot_const(reshape(enc(t), {cfg.lang_len, cfg.lang_dim}), w); }, 1e-5,
      /*sample_stride=*/1, /*max_entries_per_param=*/40);
  INFO("worst param: ", rep.worst_param);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("default-length output shape is (20, lang_dim)") {
  ModelConfig cfg;  // lang_len defaults to 20
  cfg.lang_dim = 16;
  ParamRegistry reg;
  Rng rng(23);
  Vocab vocab = Vocab::builtin();
  TextEncoder enc(reg, "text", vocab, cfg, rng);
  Var out = enc(tokenize("the blue square", vocab, cfg.lang_len));
  CHECK(out->value.shape() == std::vector<int>{20, 16});
}

TEST_CASE("multi-head encoder stays consistent") {
  ModelConfig cfg = text_cfg();
  cfg.heads = 2;
  ParamRegistry reg;
  Rng rng(19);
  Vocab vocab = Vocab::builtin();
  TextEncoder enc(reg, "text", vocab, cfg, rng);
  TokenSeq t = tokenize("the large cyan ring", vocab, cfg.lang_len);
  Var out = enc(t);
  CHECK(out->value.shape() == std::vector<int>{cfg.lang_len, cfg.lang_dim});
  Tensor w = rng.uniform_tensor({cfg.lang_len, cfg.lang_dim}, -1, 1);
  auto rep = gradcheck_registry(reg, [&] { return dot_const(enc(t), w); }, 1e-5, 1, 20);
  CHECK(rep.max_rel_err < 1e-5);
}
