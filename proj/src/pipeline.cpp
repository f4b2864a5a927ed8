#include "calattn/pipeline.hpp"

#include "calattn/errors.hpp"

namespace calattn {

namespace {

void write_evaluation(RunArtifacts& a, const RunConfig& config, const PreparedData& data) {
  const Model& model = a.checkpoint.model;
  a.report = evaluate(model, data.val, data.test, config.eval);
  a.diagnostics = diagnose(model, data.test, config.eval.bins);
  const auto& dir = a.output_dir;
  write_text(dir / "report.csv", report_csv(a.report));
  write_text(dir / "diagnostics.csv", diagnostics_csv(a.diagnostics));
  write_text(dir / "cls_norm_curve.csv", curve_csv(a.diagnostics));
  emit_reliability(reliability_bins(model, data.test, 1.0, config.eval.bins), "Reliability before temperature scaling",
                   dir / "reliability_preT");
  emit_reliability(reliability_bins(model, data.test, a.report.fit.T, config.eval.bins),
                   "Reliability after temperature scaling (T=" + format_double(a.report.fit.T) + ")",
                   dir / "reliability_postT");
  const std::size_t head = a.checkpoint.model.head ? head_param_count(config.model.head_input_dim(), config.model.calattn_hidden) : 0;
  write_text(dir / "summary.txt", summary_text(config, a.report, a.diagnostics, a.history, param_count(config.model), head));
}

}  // namespace

std::vector<BinStats> reliability_bins(const Model& model, const Dataset& test, double T, std::size_t bins) {
  const Inference inf = infer(model, test.images);
  return reliability_table(predictions(inf.calibrated_logits, inf.classes, test.labels, T), bins).bins;
}

RunArtifacts run_training(const RunConfig& config, const std::filesystem::path& base_dir, const EpochCallback& on_epoch) {
  config.validate();
  const PreparedData data = prepare_data(config, base_dir);
  TrainResult trained = train(config, data, on_epoch);

  RunArtifacts a;
  a.output_dir = config.output_dir;
  a.checkpoint = Checkpoint{config, config.epochs, data.stats, std::move(trained.model)};
  a.history = std::move(trained.history);
  std::filesystem::create_directories(a.output_dir);
  save_checkpoint(a.checkpoint, a.output_dir / "checkpoint");
  write_text(a.output_dir / "history.csv", history_csv(a.history));
  write_evaluation(a, config, data);
  return a;
}

PreparedData prepare_for_checkpoint(const Checkpoint& ckpt, const RunConfig& config,
                                    const std::filesystem::path& base_dir) {
  RunConfig raw = config;
  raw.data.normalize = false;
  PreparedData data = prepare_data(raw, base_dir);
  if (config.data.normalize) {
    data.train = normalize(data.train, ckpt.stats);
    data.val = normalize(data.val, ckpt.stats);
    data.test = normalize(data.test, ckpt.stats);
  }
  data.stats = ckpt.stats;
  return data;
}

RunArtifacts run_evaluation(const Checkpoint& ckpt, const RunConfig& config, const std::filesystem::path& base_dir) {
  config.validate();
  const PreparedData data = prepare_for_checkpoint(ckpt, config, base_dir);
  RunArtifacts a;
  a.output_dir = config.output_dir;
  a.checkpoint = ckpt;
  write_evaluation(a, config, data);
  return a;
}

}  // namespace calattn
