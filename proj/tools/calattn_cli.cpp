// Command-line front end: train, eval, diagnose, fit-temp, diagram, selftest.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <random>

#include "calattn/calib_head.hpp"
#include "calattn/errors.hpp"
#include "calattn/losses.hpp"
#include "calattn/pipeline.hpp"
#include "metric_oracles.hpp"

using namespace calattn;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return kExitConfig;
    case ErrorCategory::Numeric: return kExitNumeric;
    default: return kExitData;
  }
}

// Config file plus one --<key> flag per RunConfig key.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", file, "YAML run config");
    for (const auto& [key, value] : to_key_values(RunConfig{})) {
      values[key];
      cmd->add_option("--" + key, values[key], "default " + value);
    }
  }

  RunConfig resolve(RunConfig base) const {
    if (!file.empty()) base = apply_key_values(base, read_config_file(file));
    KeyValues set;
    for (const auto& [key, value] : values)
      if (!value.empty()) set[key] = value;
    return apply_key_values(base, set);
  }
};

void print_epoch(const EpochDiagnostics& d, std::size_t total) {
  std::printf("epoch %zu/%zu lr %g loss %.5f val_acc %.4f val_ece %.4f mean_s %.4f cv_s %.4f\n", d.epoch, total, d.lr,
              d.train_loss, d.val_accuracy, d.val_ece, d.mean_s, d.cv_s);
  std::fflush(stdout);
}

void print_report(const MetricReport& r) {
  std::printf("accuracy %.4f | ECE pre %.4f post %.4f | T* %g\n", r.pre.accuracy, r.pre.ece, r.post.ece, r.fit.T);
}

bool report_check(const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  return ok;
}

int selftest() {
  bool ok = true;
  std::mt19937_64 rng(2024);

  {
    std::normal_distribution<double> nd(0.0, 2.0);
    std::uniform_real_distribution<double> us(0.2, 5.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      std::vector<double> l(10);
      for (double& v : l) v = nd(rng);
      const double s = us(rng);
      const int y = static_cast<int>(rng() % 10);
      const double lambda = std::array{0.0, 0.1, 1.0}[i % 3];
      auto loss = [&](double t) {
        std::vector<double> z(l);
        for (double& v : z) v /= t;
        return combined_loss_from_logits(z, y, lambda);
      };
      const double h = 1e-5 * s;
      const double fd = (loss(s + h) - loss(s - h)) / (2 * h);
      worst = std::max(worst, std::abs(combined_scale_grad(l, Scale{s}, y, lambda) - fd) / std::max(1.0, std::abs(fd)));
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "max rel err %.2e", worst);
    ok &= report_check("scale gradient", worst < 1e-5, buf);
  }
  {
    ModelConfig c;
    c.image_h = c.image_w = 8;
    c.patch = 4;
    c.dim = 8;
    c.depth = 1;
    c.heads = 2;
    c.classes = 3;
    c.calattn_hidden = 8;
    Model m = init_model(c, 5);
    // Perturb the head so the scale path is exercised away from init.
    for (double& w : m.head->fc2_weight.data) w = std::normal_distribution<double>(0.0, 0.5)(rng);
    Tensor images({2, 1, 8, 8});
    for (double& v : images.data) v = std::normal_distribution<double>(0.0, 1.0)(rng);
    const std::vector<int> labels{0, 2};
    auto named = m.named_parameters();
    std::vector<Tensor*> params;
    for (auto& [name, t] : named) params.push_back(t);
    const double err = ad::grad_check(
        [&](ad::Tape& tape) {
          return batch_loss(forward_model(tape, m, images, Binding::trainable).calibrated_logits, labels, LossConfig{});
        },
        params);
    char buf[64];
    std::snprintf(buf, sizeof buf, "rel err %.2e", err);
    ok &= report_check("end-to-end gradient", err < 1e-3, buf);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
      auto b = oracle::random_batch(rng);
      auto s = oracle::top_label(b);
      worst = std::max({worst, std::abs(ece(b) - oracle::ece(s, 15)), std::abs(mce(b) - oracle::mce(s, 15)),
                        std::abs(ada_ece(b) - oracle::ada_ece(s, 15)),
                        std::abs(classwise_ece(b) - oracle::classwise_ece(b, 15)),
                        std::abs(smece(b) - oracle::smece(s, 0.05))});
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "max abs diff %.2e", worst);
    ok &= report_check("metric oracles", worst < 1e-12, buf);
  }
  return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration-attention ViT harness"};
  app.require_subcommand(1);

  ConfigFlags train_flags, eval_flags, diag_flags, fit_flags, diagram_flags;
  std::string eval_ckpt, diag_ckpt, fit_ckpt, diagram_ckpt, diagram_stage = "both";

  auto* train_cmd = app.add_subcommand("train", "train a model and write the run directory");
  train_flags.attach(train_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint before and after temperature scaling");
  eval_flags.attach(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint stem or file")->required();
  auto* diag_cmd = app.add_subcommand("diagnose", "CLS-norm and scale diagnostics of a checkpoint");
  diag_flags.attach(diag_cmd);
  diag_cmd->add_option("--checkpoint", diag_ckpt, "checkpoint stem or file")->required();
  auto* fit_cmd = app.add_subcommand("fit-temp", "fit the global temperature on the validation split");
  fit_flags.attach(fit_cmd);
  fit_cmd->add_option("--checkpoint", fit_ckpt, "checkpoint stem or file")->required();
  auto* diagram_cmd = app.add_subcommand("diagram", "write reliability diagrams (CSV and SVG)");
  diagram_flags.attach(diagram_cmd);
  diagram_cmd->add_option("--checkpoint", diagram_ckpt, "checkpoint stem or file")->required();
  diagram_cmd->add_option("--stage", diagram_stage, "pre, post or both")->check(CLI::IsMember({"pre", "post", "both"}));
  auto* self_cmd = app.add_subcommand("selftest", "run the gradient and metric oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) {
      const RunConfig config = train_flags.resolve(RunConfig{});
      config.validate();
      std::printf("training into %s (%zu parameters)\n", config.output_dir.c_str(), param_count(config.model));
      auto a = run_training(config, ".", [&](const EpochDiagnostics& d) { print_epoch(d, config.epochs); });
      print_report(a.report);
      return 0;
    }
    auto load = [](const std::string& path, const ConfigFlags& flags) {
      Checkpoint ckpt = load_checkpoint(path);
      RunConfig config = flags.resolve(ckpt.config);
      config.validate();
      return std::pair{ckpt, config};
    };
    if (*eval_cmd) {
      auto [ckpt, config] = load(eval_ckpt, eval_flags);
      print_report(run_evaluation(ckpt, config).report);
      return 0;
    }
    if (*diag_cmd) {
      auto [ckpt, config] = load(diag_ckpt, diag_flags);
      const auto data = prepare_for_checkpoint(ckpt, config, ".");
      const auto d = diagnose(ckpt.model, data.test, config.eval.bins);
      write_text(std::filesystem::path(config.output_dir) / "diagnostics.csv", diagnostics_csv(d));
      write_text(std::filesystem::path(config.output_dir) / "cls_norm_curve.csv", curve_csv(d));
      std::printf("pearson %.4f spearman %.4f | s mean %.4f cv %.4f min %.4f max %.4f\n", d.pearson, d.spearman,
                  d.scale.mean, d.scale.cv, d.scale.min, d.scale.max);
      return 0;
    }
    if (*fit_cmd) {
      auto [ckpt, config] = load(fit_ckpt, fit_flags);
      const auto data = prepare_for_checkpoint(ckpt, config, ".");
      const Inference v = infer(ckpt.model, data.val.images);
      const auto fit = fit_temperature(v.calibrated_logits, v.classes, data.val.labels, TemperatureGrid::standard(),
                                       config.eval.bins, config.eval.fit_nll ? FitCriterion::nll : FitCriterion::ece);
      std::printf("T* %g (%s %.6f at T*, %.6f at T=1)\n", fit.T, config.eval.fit_nll ? "nll" : "ece", fit.value,
                  config.eval.fit_nll ? nll_at_temperature(v.calibrated_logits, v.classes, data.val.labels, 1.0)
                                      : ece_at_temperature(v.calibrated_logits, v.classes, data.val.labels, 1.0));
      return 0;
    }
    if (*diagram_cmd) {
      auto [ckpt, config] = load(diagram_ckpt, diagram_flags);
      const auto data = prepare_for_checkpoint(ckpt, config, ".");
      const std::filesystem::path dir = config.output_dir;
      if (diagram_stage != "post")
        emit_reliability(reliability_bins(ckpt.model, data.test, 1.0, config.eval.bins),
                         "Reliability before temperature scaling", dir / "reliability_preT");
      if (diagram_stage != "pre") {
        const Inference v = infer(ckpt.model, data.val.images);
        const double T = fit_temperature(v.calibrated_logits, v.classes, data.val.labels).T;
        emit_reliability(reliability_bins(ckpt.model, data.test, T, config.eval.bins),
                         "Reliability after temperature scaling (T=" + format_double(T) + ")", dir / "reliability_postT");
      }
      std::printf("wrote reliability diagrams to %s\n", dir.c_str());
      return 0;
    }
    if (*self_cmd) return selftest();
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return 0;
}
