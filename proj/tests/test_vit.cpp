#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "calattn/errors.hpp"
#include "calattn/model.hpp"
#include "calattn/vit.hpp"
#include "test_util.hpp"

using namespace calattn;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_h = c.image_w = 8;
  c.channels = 1;
  c.patch = 4;
  c.dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.mlp_ratio = 4;
  c.classes = 3;
  c.calattn_hidden = 16;
  return c;
}

Tensor random_images(std::size_t n, const ModelConfig& c, std::mt19937_64& rng) {
  return testing::random_tensor({n, c.channels, c.image_h, c.image_w}, rng);
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.patch = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.classes = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("patch embedding") {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(1);
  ViTParams p = init_vit(c, rng);

  ad::Tape tape;
  Tensor zeros({1, 1, 8, 8});
  auto tokens = patch_embed(tape, zeros, c, p, Binding::frozen).value();
  CHECK(tokens.shape == Shape{4, 8});
  for (double v : tokens.data) CHECK(v == 0.0);

  // Pixel (row 5, col 2) lives in patch 2 (second patch row, first column)
  // at in-patch offset 1*4 + 2 = 6.
  Tensor one_hot({1, 1, 8, 8});
  one_hot.data[5 * 8 + 2] = 1.0;
  auto hot = patch_embed(tape, one_hot, c, p, Binding::frozen).value();
  for (std::size_t j = 0; j < c.dim; ++j) {
    CHECK(hot.at(2, j) == p.patch_weight.at(j, 6));
    CHECK(hot.at(0, j) == 0.0);
  }

  Tensor wrong({1, 1, 8, 6});
  CHECK_THROWS_AS(patchify(wrong, c), ShapeMismatch);
}

TEST_CASE("sequence assembly") {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(2);
  ViTParams p = init_vit(c, rng);
  Tensor tokens = testing::random_tensor({4, 8}, rng);

  ViTParams no_pos = p;
  std::fill(no_pos.pos_embed.data.begin(), no_pos.pos_embed.data.end(), 0.0);
  ad::Tape tape;
  auto seq = assemble_sequence(tape.constant(tokens), no_pos, 1, Binding::frozen).value();
  for (std::size_t j = 0; j < c.dim; ++j) CHECK(seq.at(0, j) == p.cls_token[j]);

  ViTParams blank = p;
  std::fill(blank.cls_token.data.begin(), blank.cls_token.data.end(), 0.0);
  auto only_pos = assemble_sequence(tape.constant(Tensor({4, 8})), blank, 1, Binding::frozen).value();
  CHECK(only_pos.data == p.pos_embed.data);

  auto full = assemble_sequence(tape.constant(tokens), p, 1, Binding::frozen).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < c.dim; ++j)
      CHECK(full.at(i + 1, j) - p.pos_embed.at(i + 1, j) == doctest::Approx(tokens.at(i, j)).epsilon(1e-15));

  CHECK_THROWS_AS(assemble_sequence(tape.constant(Tensor({3, 8})), p, 1, Binding::frozen), ShapeMismatch);
}

TEST_CASE("encoder block residual identity and attention rows") {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(3);
  ViTParams p = init_vit(c, rng);
  BlockParams& b = p.blocks[0];
  Tensor seq = testing::random_tensor({2 * 5, 8}, rng);

  Tensor weights = block_attention_weights(seq, b, 2, c.heads);
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    const auto row = weights.row(r);
    CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-12);
  }
  Tensor single = testing::random_tensor({1, 8}, rng);
  CHECK(block_attention_weights(single, b, 1, c.heads).data == Buffer{1.0, 1.0});

  std::fill(b.out_weight.data.begin(), b.out_weight.data.end(), 0.0);
  std::fill(b.fc2_weight.data.begin(), b.fc2_weight.data.end(), 0.0);
  ad::Tape tape;
  auto out = encoder_block(tape.constant(seq), b, 2, c.heads, Binding::frozen).value();
  CHECK(out.data == seq.data);
}

TEST_CASE("zeroed residual branches leave only cls + position through the final norm") {
  ModelConfig c = tiny_config();
  c.depth = 2;
  std::mt19937_64 rng(4);
  ViTParams p = init_vit(c, rng);
  for (auto& b : p.blocks) {
    std::fill(b.out_weight.data.begin(), b.out_weight.data.end(), 0.0);
    std::fill(b.fc2_weight.data.begin(), b.fc2_weight.data.end(), 0.0);
  }
  ad::Tape tape;
  auto out = forward(tape, random_images(3, c, rng), c, p);
  Tensor expected_row({1, c.dim});
  for (std::size_t j = 0; j < c.dim; ++j) expected_row[j] = p.cls_token[j] + p.pos_embed[j];
  auto expected = ad::layer_norm_rows(tape.constant(expected_row), tape.view(p.final_ln_gain),
                                      tape.view(p.final_ln_bias))
                      .value();
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t j = 0; j < c.dim; ++j) CHECK(out.z_cls.value().at(b, j) == expected[j]);
}

TEST_CASE("forward outputs") {
  ModelConfig c = tiny_config();
  std::mt19937_64 rng(5);
  ViTParams p = init_vit(c, rng);
  std::fill(p.classifier_weight.data.begin(), p.classifier_weight.data.end(), 0.0);
  p.classifier_bias.data = {0.5, -1.0, 2.0};
  Tensor images = random_images(2, c, rng);

  ad::Tape tape;
  auto out = forward(tape, images, c, p);
  CHECK(out.logits.value().shape == Shape{2, 3});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 3; ++k) CHECK(out.logits.value().at(b, k) == p.classifier_bias[k]);
  CHECK(out.head_feature.value().data == out.z_cls.value().data);

  c.calattn_input = HeadInput::concat;
  auto cat = forward(tape, images, c, p);
  CHECK(cat.head_feature.value().cols() == 2 * c.dim);
  for (std::size_t j = 0; j < c.dim; ++j) CHECK(cat.head_feature.value().at(1, j) == cat.z_cls.value().at(1, j));

  c.calattn_input = HeadInput::patch_mean;
  auto pm = forward(tape, images, c, p);
  CHECK(pm.head_feature.value().cols() == c.dim);
  for (std::size_t j = 0; j < c.dim; ++j) CHECK(pm.head_feature.value().at(0, j) == cat.head_feature.value().at(0, c.dim + j));
}

TEST_CASE("patch order is carried only by position embeddings") {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(6);
  ViTParams p = init_vit(c, rng);
  Tensor images = random_images(1, c, rng);
  const std::size_t perm[4] = {2, 0, 3, 1};  // new patch i holds old patch perm[i]

  Tensor moved = images;
  ViTParams permuted = p;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t src = perm[i];
    for (std::size_t dy = 0; dy < 4; ++dy)
      for (std::size_t dx = 0; dx < 4; ++dx)
        moved.data[((i / 2) * 4 + dy) * 8 + (i % 2) * 4 + dx] = images.data[((src / 2) * 4 + dy) * 8 + (src % 2) * 4 + dx];
    for (std::size_t j = 0; j < c.dim; ++j) permuted.pos_embed.at(i + 1, j) = p.pos_embed.at(src + 1, j);
  }
  ad::Tape tape;
  auto a = forward(tape, images, c, p).z_cls.value();
  auto b = forward(tape, moved, c, permuted).z_cls.value();
  for (std::size_t j = 0; j < c.dim; ++j) CHECK(std::abs(a[j] - b[j]) < 1e-9);
}

TEST_CASE("cls norm") {
  CHECK(cls_norm(std::vector<double>{0, 0, 0}) == 0.0);
  CHECK(cls_norm(std::vector<double>{3, 4}) == 5.0);
  std::mt19937_64 rng(7);
  Tensor z = testing::random_tensor({16}, rng);
  const double dot = std::inner_product(z.data.begin(), z.data.end(), z.data.begin(), 0.0);
  CHECK(std::abs(cls_norm(z.data) * cls_norm(z.data) - dot) < 1e-12);
}

TEST_CASE("parameter counts") {
  ModelConfig c = tiny_config();
  c.calattn_enabled = false;
  // Shape-by-shape listing for d=8, L=1, P=4, 8x8x1, C=3, ratio 4.
  const std::size_t patch = 8 * 16 + 8;
  const std::size_t cls = 8;
  const std::size_t pos = 5 * 8;
  const std::size_t block = (8 + 8) + 4 * 8 * 8 + (8 + 8) + (32 * 8 + 32) + (8 * 32 + 8);
  const std::size_t final_ln = 8 + 8;
  const std::size_t classifier = 3 * 8 + 3;
  CHECK(param_count(c) == patch + cls + pos + block + final_ln + classifier);
  CHECK(param_count(c) == 1067);

  ModelConfig deeper = c;
  deeper.depth = 2;
  CHECK(param_count(deeper) - param_count(c) == block);

  ModelConfig with_head = c;
  with_head.calattn_enabled = true;
  CHECK(param_count(with_head) - param_count(c) == head_param_count(8, 16));

  for (ModelConfig cfg : {c, with_head, deeper}) {
    Model m = init_model(cfg, 1);
    CHECK(m.value_count() == param_count(cfg));
  }
  ModelConfig concat = with_head;
  concat.calattn_input = HeadInput::concat;
  Model mc = init_model(concat, 1);
  CHECK(mc.value_count() == param_count(concat));
  CHECK(mc.head->fc1_weight.shape == Shape{16, 16});
}

TEST_CASE("desk config is valid and sized as documented") {
  ModelConfig desk;
  CHECK_NOTHROW(desk.validate());
  CHECK(desk.num_patches() == 16);
  CHECK(desk.calattn_hidden == 128);
}
