#include "calattn/train.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "calattn/errors.hpp"
#include "calattn/losses.hpp"
#include "calattn/metrics.hpp"

namespace calattn {

namespace {

constexpr std::uint64_t kSubsetTag = 1;
constexpr std::uint64_t kSplitTag = 2;
constexpr std::uint64_t kSynthTag = 3;
constexpr std::uint64_t kShuffleTag = 100;

double correlation_or_nan(double (*f)(std::span<const double>, std::span<const double>), std::span<const double> x,
                          std::span<const double> y) {
  try {
    return f(x, y);
  } catch (const ZeroVariance&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + tag + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

PreparedData prepare_data(const RunConfig& config, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  Dataset full;
  if (config.data.kind == DataKind::mnist) {
    full = load_idx(resolve(config.data.images), resolve(config.data.labels), config.model.classes);
  } else {
    const Shape image{config.model.channels, config.model.image_h, config.model.image_w};
    full = synth_gaussians(config.model.classes, config.data.per_class, image, config.data.separation,
                           derive_seed(config.seed, kSynthTag));
  }
  if (full.images.shape[1] != config.model.channels || full.images.shape[2] != config.model.image_h ||
      full.images.shape[3] != config.model.image_w)
    throw ShapeMismatch("dataset images are " + shape_to_string(full.images.shape) + ", model expects " +
                        std::to_string(config.model.channels) + "x" + std::to_string(config.model.image_h) + "x" +
                        std::to_string(config.model.image_w));
  auto [pool, test] = disjoint_subsets(full, config.data.train_size, config.data.test_size,
                                       derive_seed(config.seed, kSubsetTag));
  auto [train, val] = split(pool, SplitSpec{config.data.val_fraction, derive_seed(config.seed, kSplitTag)});
  PreparedData out;
  out.stats = channel_stats(train);
  if (config.data.normalize) {
    out.train = normalize(train, out.stats);
    out.val = normalize(val, out.stats);
    out.test = normalize(test, out.stats);
  } else {
    out.stats = ChannelStats{std::vector<double>(config.model.channels, 0.0), std::vector<double>(config.model.channels, 1.0)};
    out.train = std::move(train);
    out.val = std::move(val);
    out.test = std::move(test);
  }
  out.train.name = full.name + "/train";
  out.val.name = full.name + "/val";
  out.test.name = full.name + "/test";
  return out;
}

bool Sgd::decays(const std::string& name) {
  const std::string suffix = ".weight";
  return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void Sgd::step(std::vector<NamedTensor>& params, double lr) {
  for (auto& [name, t] : params) {
    if (!t->has_grad()) continue;
    auto& v = velocity_[name];
    if (v.empty()) v.assign(t->size(), 0.0);
    const double wd = decays(name) ? weight_decay_ : 0.0;
    for (std::size_t k = 0; k < t->size(); ++k) {
      const double g = t->grad[k] + wd * t->data[k];
      v[k] = momentum_ * v[k] + g;
      t->data[k] -= lr * v[k];
    }
    t->zero_grad();
  }
}

ScaleSummary summarize_scale(std::span<const double> s) {
  if (s.empty()) throw EmptyBatch("scale summary of zero samples");
  ScaleSummary out;
  out.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  double sq = 0.0;
  for (double v : s) sq += (v - out.mean) * (v - out.mean);
  out.cv = std::sqrt(sq / static_cast<double>(s.size())) / out.mean;
  out.min = *std::min_element(s.begin(), s.end());
  out.max = *std::max_element(s.begin(), s.end());
  return out;
}

EpochDiagnostics evaluate_epoch(const Model& model, const Dataset& data, std::size_t bins) {
  const Inference inf = infer(model, data.images);
  PredictionBatch batch;
  std::vector<double> norms, conf;
  for (std::size_t i = 0; i < inf.samples; ++i) {
    auto p = ad::softmax(inf.calibrated_row(i));
    Prediction pred = Prediction::from_probs(p, data.labels[i]);
    pred.probs.clear();
    norms.push_back(cls_norm(inf.z_row(i)));
    conf.push_back(pred.confidence);
    batch.samples.push_back(std::move(pred));
  }
  EpochDiagnostics d;
  const auto s = summarize_scale(inf.scale);
  d.mean_s = s.mean;
  d.cv_s = s.cv;
  d.mean_cls_norm = std::accumulate(norms.begin(), norms.end(), 0.0) / static_cast<double>(norms.size());
  d.pearson_norm_conf = correlation_or_nan(&pearson, norms, conf);
  d.spearman_norm_conf = correlation_or_nan(&spearman, norms, conf);
  d.val_ece = ece(batch, bins);
  d.val_accuracy = batch.accuracy();
  return d;
}

double train_step(Model& model, const Dataset& data, std::span<const std::size_t> indices, const LossConfig& loss,
                  Sgd& sgd, double lr) {
  const Dataset batch = subset(data, indices, data.name);
  ad::Tape tape;
  ModelOutput out = forward_model(tape, model, batch.images, Binding::trainable);
  ad::Var l = batch_loss(out.calibrated_logits, batch.labels, loss);
  const double value = l.value()[0];
  if (!std::isfinite(value)) throw NonFiniteValue("training loss is " + std::to_string(value));
  tape.backward(l);
  auto params = model.named_parameters();
  sgd.step(params, lr);
  return value;
}

TrainResult train(const RunConfig& config, const PreparedData& data, const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result{init_model(config.model, config.seed), {}};
  Sgd sgd(config.optimizer.momentum, config.optimizer.weight_decay);
  const std::size_t N = data.train.size();
  if (N == 0) throw EmptyBatch("empty training set");
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at_epoch(config.optimizer, epoch);
    const auto order = permutation(N, derive_seed(config.seed, kShuffleTag + epoch));
    double loss_sum = 0.0;
    for (std::size_t first = 0; first < N; first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, N - first);
      const std::span<const std::size_t> idx(order.data() + first, count);
      loss_sum += train_step(result.model, data.train, idx, config.loss, sgd, lr) * static_cast<double>(count);
    }
    EpochDiagnostics d = evaluate_epoch(result.model, data.val, config.eval.bins);
    d.epoch = epoch + 1;
    d.lr = lr;
    d.train_loss = loss_sum / static_cast<double>(N);
    result.history.push_back(d);
    if (on_epoch) on_epoch(d);
  }
  return result;
}

}  // namespace calattn
