#include "calattn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "calattn/errors.hpp"

namespace calattn {

namespace {

void require_samples(const PredictionBatch& batch) {
  if (batch.empty()) throw EmptyBatch("metric over zero samples");
}

void require_bins(std::size_t M) {
  if (M == 0) throw ConfigError("bin count must be at least 1");
}

BinStats finish_bin(double lower, double upper, std::size_t count, double correct, double conf_sum) {
  BinStats b{lower, upper, count, 0.0, 0.0, 0.0};
  if (count > 0) {
    b.acc = correct / static_cast<double>(count);
    b.conf = conf_sum / static_cast<double>(count);
    b.gap = std::abs(b.acc - b.conf);
  }
  return b;
}

double edge(std::size_t m, std::size_t M) { return static_cast<double>(m) / static_cast<double>(M); }

// Equal-width ECE over an arbitrary (confidence, hit) column, used per class.
double column_ece(std::span<const double> conf, std::span<const char> hit, std::size_t M) {
  std::vector<std::size_t> count(M, 0);
  std::vector<double> correct(M, 0.0), sum(M, 0.0);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    const std::size_t m = equal_width_bin(conf[i], M) - 1;
    ++count[m];
    correct[m] += hit[i] ? 1.0 : 0.0;
    sum[m] += conf[i];
  }
  std::vector<BinStats> bins;
  for (std::size_t m = 0; m < M; ++m) bins.push_back(finish_bin(edge(m, M), edge(m + 1, M), count[m], correct[m], sum[m]));
  return weighted_gap(bins, conf.size());
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

Prediction Prediction::from_probs(std::span<const double> probs, int label) {
  if (probs.empty()) throw ShapeMismatch("prediction over zero classes");
  Prediction p;
  const auto top = std::max_element(probs.begin(), probs.end());
  p.confidence = *top;
  p.predicted = static_cast<int>(top - probs.begin());
  p.label = label;
  p.correct = p.predicted == label;
  p.probs.assign(probs.begin(), probs.end());
  return p;
}

bool PredictionBatch::has_probs() const {
  return !samples.empty() && std::all_of(samples.begin(), samples.end(), [](const Prediction& p) { return !p.probs.empty(); });
}

double PredictionBatch::accuracy() const {
  if (samples.empty()) throw EmptyBatch("accuracy over zero samples");
  double hits = 0.0;
  for (const auto& p : samples) hits += p.correct ? 1.0 : 0.0;
  return hits / static_cast<double>(samples.size());
}

PredictionBatch make_batch(std::span<const double> probs, std::size_t classes, std::span<const int> labels) {
  if (classes == 0 || probs.size() != classes * labels.size()) throw ShapeMismatch("probabilities do not match labels");
  PredictionBatch batch;
  batch.samples.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    batch.samples.push_back(Prediction::from_probs(probs.subspan(i * classes, classes), labels[i]));
  return batch;
}

std::size_t equal_width_bin(double confidence, std::size_t M) {
  require_bins(M);
  if (!(confidence > 0.0)) return 1;
  if (confidence >= 1.0) return M;
  auto m = static_cast<std::size_t>(std::ceil(confidence * static_cast<double>(M)));
  m = std::clamp<std::size_t>(m, 1, M);
  // Settle against the stored edges so bins are exactly (edge(m-1), edge(m)].
  while (m > 1 && confidence <= edge(m - 1, M)) --m;
  while (m < M && confidence > edge(m, M)) ++m;
  return m;
}

std::vector<BinStats> bin_stats(const PredictionBatch& batch, std::size_t M, Binning scheme) {
  require_samples(batch);
  require_bins(M);
  const auto& s = batch.samples;
  std::vector<BinStats> bins;
  if (scheme == Binning::equal_width) {
    std::vector<std::size_t> count(M, 0);
    std::vector<double> correct(M, 0.0), sum(M, 0.0);
    for (const auto& p : s) {
      const std::size_t m = equal_width_bin(p.confidence, M) - 1;
      ++count[m];
      correct[m] += p.correct ? 1.0 : 0.0;
      sum[m] += p.confidence;
    }
    for (std::size_t m = 0; m < M; ++m) bins.push_back(finish_bin(edge(m, M), edge(m + 1, M), count[m], correct[m], sum[m]));
    return bins;
  }

  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s[a].confidence < s[b].confidence; });
  const std::size_t N = s.size(), base = N / M, extra = N % M;
  std::size_t at = 0;
  for (std::size_t m = 0; m < M; ++m) {
    const std::size_t size = base + (m < extra ? 1 : 0);
    if (size == 0) continue;
    double correct = 0.0, sum = 0.0;
    for (std::size_t k = at; k < at + size; ++k) {
      correct += s[order[k]].correct ? 1.0 : 0.0;
      sum += s[order[k]].confidence;
    }
    bins.push_back(finish_bin(s[order[at]].confidence, s[order[at + size - 1]].confidence, size, correct, sum));
    at += size;
  }
  return bins;
}

double weighted_gap(std::span<const BinStats> bins, std::size_t total) {
  double out = 0.0;
  for (const auto& b : bins)
    if (b.count > 0) out += static_cast<double>(b.count) / static_cast<double>(total) * b.gap;
  return out;
}

ReliabilityTable reliability_table(const PredictionBatch& batch, std::size_t M) {
  ReliabilityTable t;
  t.bins = bin_stats(batch, M, Binning::equal_width);
  t.total = batch.size();
  t.ece = weighted_gap(t.bins, t.total);
  for (const auto& b : t.bins)
    if (b.count > 0) t.mce = std::max(t.mce, b.gap);
  return t;
}

double ece(const PredictionBatch& batch, std::size_t M) { return reliability_table(batch, M).ece; }

double mce(const PredictionBatch& batch, std::size_t M) { return reliability_table(batch, M).mce; }

double ada_ece(const PredictionBatch& batch, std::size_t M) {
  return weighted_gap(bin_stats(batch, M, Binning::equal_mass), batch.size());
}

double classwise_ece(const PredictionBatch& batch, std::size_t M) {
  require_samples(batch);
  require_bins(M);
  if (!batch.has_probs()) throw MissingProbs("classwise ECE needs full probability vectors");
  const std::size_t K = batch.samples.front().probs.size();
  for (const auto& p : batch.samples)
    if (p.probs.size() != K) throw ShapeMismatch("probability vectors differ in length");
  std::vector<double> conf(batch.size());
  std::vector<char> hit(batch.size());
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      conf[i] = batch.samples[i].probs[k];
      hit[i] = batch.samples[i].label == static_cast<int>(k);
    }
    total += column_ece(conf, hit, M);
  }
  return total / static_cast<double>(K);
}

double smece(const PredictionBatch& batch, double bandwidth) {
  require_samples(batch);
  if (!(bandwidth > 0.0)) throw ConfigError("smECE bandwidth must be positive");
  const auto& s = batch.samples;
  const double denom = 2.0 * bandwidth * bandwidth;
  double total = 0.0;
  for (const auto& pi : s) {
    double num = 0.0, den = 0.0;
    for (const auto& pj : s) {
      const double t = pi.confidence - pj.confidence;
      const double k = std::exp(-t * t / denom);
      num += pj.correct ? k : 0.0;
      den += k;
    }
    total += std::abs(num / den - pi.confidence);
  }
  return total / static_cast<double>(s.size());
}

double auroc(const PredictionBatch& batch) {
  std::vector<double> conf;
  conf.reserve(batch.size());
  std::size_t n_pos = 0;
  for (const auto& p : batch.samples) {
    conf.push_back(p.confidence);
    n_pos += p.correct ? 1 : 0;
  }
  const std::size_t n_neg = batch.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DegenerateLabels("AUROC needs correct and incorrect samples");
  const auto ranks = average_ranks(conf);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (batch.samples[i].correct) rank_sum += ranks[i];
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

Hcfp hcfp(const PredictionBatch& batch, double tau) {
  Hcfp out;
  for (const auto& p : batch.samples)
    if (!p.correct && p.confidence >= tau) ++out.count;
  if (!batch.empty()) out.per_thousand = 1000.0 * static_cast<double>(out.count) / static_cast<double>(batch.size());
  return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeMismatch("correlation inputs differ in length");
  if (x.size() < 2) throw ZeroVariance("correlation needs at least two points");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ZeroVariance("constant input");
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeMismatch("correlation inputs differ in length");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

}  // namespace calattn
