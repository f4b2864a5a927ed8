#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "calattn/errors.hpp"
#include "calattn/pipeline.hpp"

using namespace calattn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("calattn_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// 3-class synthetic images, 8x8, one block.
RunConfig small_config(const fs::path& out) {
  RunConfig c;
  c.model.image_h = c.model.image_w = 8;
  c.model.patch = 4;
  c.model.dim = 16;
  c.model.depth = 1;
  c.model.heads = 2;
  c.model.classes = 3;
  c.model.calattn_hidden = 16;
  c.data.kind = DataKind::synthetic;
  c.data.per_class = 300;
  c.data.separation = 6.0;
  c.data.train_size = 600;
  c.data.test_size = 300;
  c.data.val_fraction = 0.1;
  c.batch_size = 32;
  c.epochs = 30;
  c.optimizer.lr_stages = {{30, 0.02}};
  c.seed = 1;
  c.output_dir = out.string();
  return c;
}

std::string slurp_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("checkpoint round trip is byte stable") {
  const auto dir = scratch_dir("ckpt");
  RunConfig c = small_config(dir);
  Checkpoint ckpt{c, 4, ChannelStats{{0.25}, {1.5}}, init_model(c.model, 9)};
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (auto& [name, t] : ckpt.model.named_parameters())
    for (double& v : t->data) v = nd(rng);
  save_checkpoint(ckpt, dir / "a");
  Checkpoint back = load_checkpoint(dir / "a.manifest");
  CHECK(back.epoch == 4);
  CHECK(back.stats.mean == std::vector<double>{0.25});
  CHECK(to_key_values(back.config) == to_key_values(c));
  auto pa = ckpt.model.named_parameters();
  auto pb = back.model.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second->data == pb[i].second->data);
  }
  save_checkpoint(back, dir / "b");
  CHECK(slurp_bytes(dir / "a.blob") == slurp_bytes(dir / "b.blob"));
  CHECK(slurp_bytes(dir / "a.manifest") == slurp_bytes(dir / "b.manifest"));
  CHECK_NOTHROW(load_checkpoint(dir / "a"));
  CHECK_NOTHROW(load_checkpoint(dir / "a.blob"));
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto dir = scratch_dir("ckpt_bad");
  RunConfig c = small_config(dir);
  save_checkpoint(Checkpoint{c, 1, ChannelStats{{0.0}, {1.0}}, init_model(c.model, 1)}, dir / "m");

  fs::copy_file(dir / "m.manifest", dir / "t.manifest");
  const auto blob = slurp_bytes(dir / "m.blob");
  std::ofstream(dir / "t.blob", std::ios::binary) << blob.substr(0, blob.size() - 8);
  CHECK_THROWS_AS(load_checkpoint(dir / "t"), BlobSizeMismatch);

  fs::copy_file(dir / "m.blob", dir / "s.blob");
  std::string manifest = slurp_bytes(dir / "m.manifest");
  const auto at = manifest.find("patch_embed.weight 16x16 ");
  REQUIRE(at != std::string::npos);
  std::ofstream(dir / "s.manifest", std::ios::binary) << manifest.replace(at, 25, "patch_embed.weight 16x15 ");
  CHECK_THROWS_AS(load_checkpoint(dir / "s"), ManifestMismatch);

  fs::copy_file(dir / "m.blob", dir / "k.blob");
  std::ofstream(dir / "k.manifest", std::ios::binary) << slurp_bytes(dir / "m.manifest") << "colour: blue\n";
  CHECK_THROWS_AS(load_checkpoint(dir / "k"), ManifestMismatch);

  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), IoError);
}

TEST_CASE("reliability csv and svg") {
  PredictionBatch b;
  for (int i = 0; i < 40; ++i) b.samples.push_back(Prediction::from_probs(std::vector<double>{0.3 + 0.015 * i, 0.7 - 0.015 * i}, i % 2));
  const auto bins = reliability_table(b, 10).bins;
  const auto parsed = parse_reliability_csv(reliability_csv(bins));
  REQUIRE(parsed.size() == bins.size());
  for (std::size_t i = 0; i < bins.size(); ++i) {
    CHECK(parsed[i].count == bins[i].count);
    CHECK(parsed[i].acc == bins[i].acc);
    CHECK(parsed[i].conf == bins[i].conf);
    CHECK(parsed[i].gap == bins[i].gap);
  }
  CHECK_THROWS_AS(parse_reliability_csv("bin_lo,bin_hi\n1,2\n"), IoError);

  const std::string svg = reliability_svg(bins, "a < b & c");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("a &lt; b &amp; c") != std::string::npos);
  std::size_t bars = 0;
  for (auto p = svg.find("class=\"bar\""); p != std::string::npos; p = svg.find("class=\"bar\"", p + 1)) ++bars;
  CHECK(bars == bins.size());
}

TEST_CASE("perfectly calibrated bins have zero gap") {
  // Four samples at confidence 0.75, three right: acc equals conf in its bin.
  PredictionBatch b;
  for (int i = 0; i < 4; ++i) b.samples.push_back(Prediction::from_probs(std::vector<double>{0.75, 0.25}, i == 3 ? 1 : 0));
  for (const auto& bin : parse_reliability_csv(reliability_csv(reliability_table(b, 15).bins))) CHECK(bin.gap == 0.0);
}

TEST_CASE("diagnostics on an untrained model") {
  RunConfig c = small_config(scratch_dir("diag"));
  const PreparedData data = prepare_data(c);
  const Diagnostics d = diagnose(init_model(c.model, 2), data.test);
  CHECK(d.rows.size() == data.test.size());
  CHECK(std::abs(d.scale.mean - 1.0) < 1e-5);
  CHECK(d.scale.cv < 1e-4);
  std::size_t counted = 0;
  for (const auto& p : d.curve) counted += p.count;
  CHECK(counted == d.rows.size());
}

TEST_CASE("confidence rising with the norm gives spearman 1") {
  std::vector<DiagnosticRow> rows;
  for (std::size_t i = 0; i < 30; ++i)
    rows.push_back({i, 0, 0, 0.4 + 0.02 * static_cast<double>(i), std::exp(0.1 * static_cast<double>(i)), 1.0});
  const Diagnostics d = diagnose_rows(rows, 5);
  CHECK(d.spearman == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.pearson > 0.9);
  CHECK(d.curve.size() == 5);
}

TEST_CASE("sgd decay applies to weights only") {
  CHECK(Sgd::decays("block0.attn.qkv.weight"));
  CHECK(Sgd::decays("calattn.fc1.weight"));
  CHECK_FALSE(Sgd::decays("block0.ln1.gain"));
  CHECK_FALSE(Sgd::decays("head.bias"));
  CHECK_FALSE(Sgd::decays("weight"));

  Tensor w({2}, Buffer{1.0, -2.0}), b({1}, Buffer{0.5});
  w.ensure_grad()[0] = 0.5;
  b.ensure_grad()[0] = 1.0;
  std::vector<NamedTensor> params{{"x.weight", &w}, {"x.bias", &b}};
  Sgd sgd(0.9, 0.1);
  sgd.step(params, 0.1);
  CHECK(w.data[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.1 * 1.0)));
  CHECK(w.data[1] == doctest::Approx(-2.0 - 0.1 * (0.1 * -2.0)));
  CHECK(b.data[0] == doctest::Approx(0.5 - 0.1));
  CHECK_FALSE(w.has_grad());
  b.ensure_grad()[0] = 1.0;
  sgd.step(params, 0.1);
  // v = 0.9 * 1 + 1
  CHECK(b.data[0] == doctest::Approx(0.4 - 0.1 * 1.9));
}

TEST_CASE("decay alone moves weights, never biases") {
  RunConfig c = small_config(scratch_dir("decay"));
  Model m = init_model(c.model, 4);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  auto params = m.named_parameters();
  for (auto& [name, t] : params)
    for (double& v : t->data) v = nd(rng);
  Model before = m;
  for (auto& [name, t] : params) t->ensure_grad();
  Sgd(0.9, 5e-4).step(params, 0.1);
  auto after = m.named_parameters();
  auto orig = before.named_parameters();
  for (std::size_t i = 0; i < after.size(); ++i) {
    const bool unchanged = after[i].second->data == orig[i].second->data;
    CHECK_MESSAGE(unchanged != Sgd::decays(after[i].first), after[i].first);
  }
  CHECK_FALSE(Sgd::decays("calattn.fc2.bias"));
  CHECK_FALSE(Sgd::decays("classifier.bias"));
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  RunConfig c = small_config(scratch_dir("lr0"));
  c.epochs = 2;
  c.optimizer.lr_stages = {{2, 0.0}};
  const PreparedData data = prepare_data(c);
  Model before = init_model(c.model, c.seed);
  TrainResult r = train(c, data);
  auto pa = before.named_parameters();
  auto pb = r.model.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second->data == pb[i].second->data);
}

TEST_CASE("training loss falls and runs repeat exactly") {
  const RunConfig c = small_config(scratch_dir("train_a"));
  const RunArtifacts a = run_training(c);
  REQUIRE(a.history.size() == 30);
  // Fixed-seed property: on this config seeds 1-3 decrease strictly, 0 and 4 stall at epoch 2.
  for (std::size_t e = 1; e < 5; ++e) CHECK(a.history[e].train_loss < a.history[e - 1].train_loss);
  for (const char* f : {"report.csv", "diagnostics.csv", "cls_norm_curve.csv", "history.csv", "summary.txt",
                        "reliability_preT.csv", "reliability_preT.svg", "reliability_postT.csv",
                        "reliability_postT.svg", "checkpoint.manifest", "checkpoint.blob"})
    CHECK(fs::exists(a.output_dir / f));

  RunConfig again = c;
  again.output_dir = scratch_dir("train_b").string();
  const RunArtifacts b = run_training(again);
  CHECK(read_text(a.output_dir / "report.csv") == read_text(b.output_dir / "report.csv"));
  CHECK(slurp_bytes(a.output_dir / "checkpoint.blob") == slurp_bytes(b.output_dir / "checkpoint.blob"));

  // Evaluating the saved checkpoint reproduces the report.
  const Checkpoint ckpt = load_checkpoint(a.output_dir / "checkpoint");
  RunConfig eval_config = ckpt.config;
  eval_config.output_dir = scratch_dir("train_eval").string();
  run_evaluation(ckpt, eval_config);
  CHECK(read_text(a.output_dir / "report.csv") == read_text(fs::path(eval_config.output_dir) / "report.csv"));
}
