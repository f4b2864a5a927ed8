#include "calattn/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "calattn/autodiff.hpp"
#include "calattn/errors.hpp"
#include "calattn/vit.hpp"

namespace calattn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double parse_cell(const std::string& cell) {
  std::size_t used = 0;
  const double v = std::stod(cell, &used);
  if (used != cell.size()) throw std::invalid_argument(cell);
  return v;
}

}  // namespace

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PredictionBatch predictions(std::span<const double> logits, std::size_t classes, std::span<const int> labels,
                            double T) {
  if (classes == 0 || logits.size() != classes * labels.size()) throw ShapeMismatch("logits do not match labels");
  PredictionBatch batch;
  batch.samples.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    batch.samples.push_back(Prediction::from_probs(apply_temperature(logits.subspan(i * classes, classes), T), labels[i]));
  return batch;
}

StageMetrics stage_metrics(std::span<const double> logits, std::size_t classes, std::span<const int> labels, double T,
                           const EvalConfig& eval) {
  const PredictionBatch batch = predictions(logits, classes, labels, T);
  StageMetrics m;
  m.accuracy = batch.accuracy();
  m.nll = nll_at_temperature(logits, classes, labels, T);
  const auto table = reliability_table(batch, eval.bins);
  m.ece = table.ece;
  m.mce = table.mce;
  m.ada_ece = ada_ece(batch, eval.bins);
  m.classwise_ece = classwise_ece(batch, eval.bins);
  m.smece = smece(batch, eval.smece_bandwidth);
  try {
    m.auroc = auroc(batch);
  } catch (const DegenerateLabels&) {
    m.auroc = kNaN;
  }
  const Hcfp h = hcfp(batch, eval.hcfp_tau);
  m.hcfp_count = static_cast<double>(h.count);
  m.hcfp_per_1000 = h.per_thousand;
  return m;
}

MetricReport evaluate(const Model& model, const Dataset& val, const Dataset& test, const EvalConfig& eval) {
  if (test.images.rank() != 4 || test.images.shape[1] != model.config.channels ||
      test.images.shape[2] != model.config.image_h || test.images.shape[3] != model.config.image_w)
    throw ShapeMismatch("evaluation images " + shape_to_string(test.images.shape) + " do not fit the model");
  if (test.classes != model.config.classes) throw ShapeMismatch("dataset and model class counts differ");
  const std::size_t C = model.config.classes;
  const Inference v = infer(model, val.images);
  const Inference t = infer(model, test.images);
  MetricReport r;
  r.samples = test.size();
  r.fit = fit_temperature(v.calibrated_logits, C, val.labels, TemperatureGrid::standard(), eval.bins,
                          eval.fit_nll ? FitCriterion::nll : FitCriterion::ece);
  r.pre = stage_metrics(t.calibrated_logits, C, test.labels, 1.0, eval);
  r.post = stage_metrics(t.calibrated_logits, C, test.labels, r.fit.T, eval);
  return r;
}

std::string report_csv(const MetricReport& report) {
  std::string out = "metric,stage,value\n";
  auto stage = [&](const char* name, const StageMetrics& m) {
    const std::pair<const char*, double> rows[] = {
        {"accuracy", m.accuracy}, {"nll", m.nll},     {"ece", m.ece},   {"mce", m.mce},
        {"ada_ece", m.ada_ece},   {"classwise_ece", m.classwise_ece}, {"smece", m.smece},
        {"auroc", m.auroc},       {"hcfp_count", m.hcfp_count},       {"hcfp_per_1000", m.hcfp_per_1000}};
    for (const auto& [metric, value] : rows) out += std::string(metric) + "," + name + "," + exact(value) + "\n";
  };
  stage("pre_T", report.pre);
  stage("post_T", report.post);
  out += "temperature,fit," + exact(report.fit.T) + "\n";
  out += std::string(report.fit.criterion == FitCriterion::ece ? "val_ece" : "val_nll") + ",fit," +
         exact(report.fit.value) + "\n";
  out += "samples,test," + std::to_string(report.samples) + "\n";
  return out;
}

Diagnostics diagnose_rows(std::vector<DiagnosticRow> rows, std::size_t bins) {
  if (rows.empty()) throw EmptyBatch("diagnostics over zero samples");
  if (bins == 0) throw ConfigError("curve needs at least one bin");
  Diagnostics d;
  d.rows = std::move(rows);
  std::vector<double> norm, conf, scale;
  for (const auto& r : d.rows) {
    norm.push_back(r.cls_norm);
    conf.push_back(r.confidence);
    scale.push_back(r.scale);
  }
  try {
    d.pearson = pearson(norm, conf);
    d.spearman = spearman(norm, conf);
  } catch (const ZeroVariance&) {
    d.pearson = d.spearman = kNaN;
  }
  d.scale = summarize_scale(scale);

  const double lo = *std::min_element(norm.begin(), norm.end());
  const double hi = *std::max_element(norm.begin(), norm.end());
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<double> sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < norm.size(); ++i) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((norm[i] - lo) / width) : 0;
    b = std::min(b, bins - 1);
    sum[b] += conf[i];
    ++count[b];
  }
  for (std::size_t b = 0; b < bins; ++b)
    d.curve.push_back({lo + width * static_cast<double>(b), b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1),
                       count[b], count[b] ? sum[b] / static_cast<double>(count[b]) : 0.0});
  return d;
}

Diagnostics diagnose(const Model& model, const Dataset& data, std::size_t bins) {
  const Inference inf = infer(model, data.images);
  std::vector<DiagnosticRow> rows;
  rows.reserve(inf.samples);
  for (std::size_t i = 0; i < inf.samples; ++i) {
    const auto p = ad::softmax(inf.calibrated_row(i));
    const auto pred = Prediction::from_probs(p, data.labels[i]);
    rows.push_back({i, data.labels[i], pred.predicted, pred.confidence, cls_norm(inf.z_row(i)), inf.scale[i]});
  }
  return diagnose_rows(std::move(rows), bins);
}

std::string diagnostics_csv(const Diagnostics& d) {
  std::string out = "index,label,predicted,confidence,cls_norm,scale\n";
  for (const auto& r : d.rows)
    out += std::to_string(r.index) + "," + std::to_string(r.label) + "," + std::to_string(r.predicted) + "," +
           exact(r.confidence) + "," + exact(r.cls_norm) + "," + exact(r.scale) + "\n";
  return out;
}

std::string curve_csv(const Diagnostics& d) {
  std::string out = "norm_lo,norm_hi,count,mean_confidence\n";
  for (const auto& c : d.curve)
    out += exact(c.lo) + "," + exact(c.hi) + "," + std::to_string(c.count) + "," + exact(c.mean_confidence) + "\n";
  return out;
}

std::string history_csv(const std::vector<EpochDiagnostics>& history) {
  std::string out = "epoch,lr,train_loss,mean_s,cv_s,mean_cls_norm,pearson_norm_conf,spearman_norm_conf,val_ece,val_accuracy\n";
  for (const auto& h : history)
    out += std::to_string(h.epoch) + "," + exact(h.lr) + "," + exact(h.train_loss) + "," + exact(h.mean_s) + "," +
           exact(h.cv_s) + "," + exact(h.mean_cls_norm) + "," + exact(h.pearson_norm_conf) + "," +
           exact(h.spearman_norm_conf) + "," + exact(h.val_ece) + "," + exact(h.val_accuracy) + "\n";
  return out;
}

std::string reliability_csv(const std::vector<BinStats>& bins) {
  std::string out = "bin_lo,bin_hi,count,acc,conf,gap\n";
  for (const auto& b : bins)
    out += exact(b.lower) + "," + exact(b.upper) + "," + std::to_string(b.count) + "," + exact(b.acc) + "," +
           exact(b.conf) + "," + exact(b.gap) + "\n";
  return out;
}

std::vector<BinStats> parse_reliability_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "bin_lo,bin_hi,count,acc,conf,gap") throw IoError("not a reliability table");
  std::vector<BinStats> bins;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw IoError("reliability row has " + std::to_string(cells.size()) + " cells");
    try {
      bins.push_back({parse_cell(cells[0]), parse_cell(cells[1]), std::stoul(cells[2]), parse_cell(cells[3]),
                      parse_cell(cells[4]), parse_cell(cells[5])});
    } catch (const std::logic_error&) {
      throw IoError("bad reliability row '" + line + "'");
    }
  }
  return bins;
}

std::string reliability_svg(const std::vector<BinStats>& bins, const std::string& title) {
  // Plot area 60..600 x 40..420 in a 640x480 canvas.
  const double x0 = 60, x1 = 600, y0 = 420, y1 = 40;
  auto px = [&](double v) { return x0 + v * (x1 - x0); };
  auto py = [&](double v) { return y0 - v * (y0 - y1); };
  std::string escaped;
  for (char c : title) {
    if (c == '<') escaped += "&lt;";
    else if (c == '>') escaped += "&gt;";
    else if (c == '&') escaped += "&amp;";
    else escaped += c;
  }
  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n";
  s += "<title>" + escaped + "</title>\n";
  s += "<path d=\"M60 40 L60 420 L600 420\" fill=\"none\" stroke=\"#000\" stroke-width=\"1\"/>\n";
  for (const auto& b : bins) {
    const double left = px(b.lower) + 1, right = px(b.upper) - 1;
    const double top = py(b.acc);
    s += "<rect class=\"bar\" x=\"" + fixed(left, 2) + "\" y=\"" + fixed(top, 2) + "\" width=\"" +
         fixed(std::max(0.0, right - left), 2) + "\" height=\"" + fixed(y0 - top, 2) +
         "\" fill=\"#3b6fb6\" stroke=\"#1d3f73\"/>\n";
    if (b.count > 0) {
      const double yc = py(b.conf);
      s += "<line class=\"conf\" x1=\"" + fixed(left, 2) + "\" y1=\"" + fixed(yc, 2) + "\" x2=\"" + fixed(right, 2) +
           "\" y2=\"" + fixed(yc, 2) + "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    }
  }
  s += "<line class=\"identity\" x1=\"" + fixed(px(0), 2) + "\" y1=\"" + fixed(py(0), 2) + "\" x2=\"" + fixed(px(1), 2) +
       "\" y2=\"" + fixed(py(1), 2) + "\" stroke=\"#555\" stroke-dasharray=\"6 4\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0;
    s += "<text x=\"" + fixed(px(v), 2) + "\" y=\"440\" font-size=\"12\" text-anchor=\"middle\">" + fixed(v, 2) +
         "</text>\n";
    s += "<text x=\"50\" y=\"" + fixed(py(v) + 4, 2) + "\" font-size=\"12\" text-anchor=\"end\">" + fixed(v, 2) +
         "</text>\n";
  }
  s += "<text x=\"330\" y=\"468\" font-size=\"13\" text-anchor=\"middle\">confidence</text>\n";
  s += "<text x=\"16\" y=\"230\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 230)\">accuracy</text>\n";
  s += "<text x=\"330\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">" + escaped + "</text>\n";
  s += "</svg>\n";
  return s;
}

void emit_reliability(const std::vector<BinStats>& bins, const std::string& title, const std::filesystem::path& stem) {
  auto csv = stem, svg = stem;
  csv += ".csv";
  svg += ".svg";
  write_text(csv, reliability_csv(bins));
  write_text(svg, reliability_svg(bins, title));
}

std::string summary_text(const RunConfig& config, const MetricReport& report, const Diagnostics& diag,
                         const std::vector<EpochDiagnostics>& history, std::size_t param_total, std::size_t head_params) {
  std::ostringstream s;
  auto pct = [](double v) { return fixed(100.0 * v, 2) + "%"; };
  s << "model: ViT d=" << config.model.dim << " depth=" << config.model.depth << " heads=" << config.model.heads
    << " patch=" << config.model.patch << ", calattn " << (config.model.calattn_enabled ? "on" : "off") << "\n";
  s << "loss: " << to_string(config.loss.kind) << " lambda=" << format_double(config.loss.lambda) << "\n";
  s << "parameters: " << param_total << " (head " << head_params << ", "
    << fixed(100.0 * static_cast<double>(head_params) / static_cast<double>(param_total), 3) << "%)\n";
  s << "test samples: " << report.samples << "\n\n";
  s << "metric            pre-T     post-T\n";
  auto row = [&](const char* name, double a, double b, bool percent) {
    char buf[128];
    if (percent)
      std::snprintf(buf, sizeof buf, "%-16s %8s  %8s\n", name, pct(a).c_str(), pct(b).c_str());
    else
      std::snprintf(buf, sizeof buf, "%-16s %8.4f  %8.4f\n", name, a, b);
    s << buf;
  };
  row("accuracy", report.pre.accuracy, report.post.accuracy, true);
  row("ece", report.pre.ece, report.post.ece, true);
  row("mce", report.pre.mce, report.post.mce, true);
  row("ada_ece", report.pre.ada_ece, report.post.ada_ece, true);
  row("classwise_ece", report.pre.classwise_ece, report.post.classwise_ece, true);
  row("smece", report.pre.smece, report.post.smece, true);
  row("nll", report.pre.nll, report.post.nll, false);
  row("auroc", report.pre.auroc, report.post.auroc, false);
  row("hcfp@tau count", report.pre.hcfp_count, report.post.hcfp_count, false);
  s << "T* = " << format_double(report.fit.T) << " (validation "
    << (report.fit.criterion == FitCriterion::ece ? "ECE " : "NLL ") << fixed(report.fit.value, 6) << ")\n\n";
  s << "cls-norm vs confidence: pearson " << fixed(diag.pearson, 4) << ", spearman " << fixed(diag.spearman, 4) << "\n";
  s << "scale s: mean " << fixed(diag.scale.mean, 4) << ", cv " << fixed(diag.scale.cv, 4) << ", min "
    << fixed(diag.scale.min, 4) << ", max " << fixed(diag.scale.max, 4) << "\n";
  if (!history.empty()) {
    s << "epochs: " << history.size() << ", cv_s first " << fixed(history.front().cv_s, 4) << " last "
      << fixed(history.back().cv_s, 4) << "\n";
    s << "final train loss: " << fixed(history.back().train_loss, 6) << "\n";
  }
  return s.str();
}

}  // namespace calattn
