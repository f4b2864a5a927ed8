#include "calattn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "calattn/errors.hpp"

namespace calattn {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& bytes, std::size_t at, const std::filesystem::path& path) {
  if (bytes.size() < at + 4) throw TruncatedFile(path.string() + ": header");
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) | (std::uint32_t{bytes[at + 2]} << 8) |
         std::uint32_t{bytes[at + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

std::size_t per_sample(const Dataset& d) { return d.size() == 0 ? 0 : d.images.size() / d.size(); }

Dataset apply_channelwise(const Dataset& data, const ChannelStats& stats, bool forward) {
  data.validate();
  const std::size_t C = data.images.shape[1];
  if (stats.mean.size() != C || stats.std.size() != C) throw ShapeMismatch("channel statistics do not match images");
  for (double s : stats.std)
    if (!(s > 0.0)) throw ZeroStd("channel std must be positive");
  Dataset out = data;
  const std::size_t plane = data.images.shape[2] * data.images.shape[3];
  for (std::size_t n = 0; n < data.size(); ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double* p = out.images.data.data() + (n * C + c) * plane;
      for (std::size_t k = 0; k < plane; ++k)
        p[k] = forward ? (p[k] - stats.mean[c]) / stats.std[c] : p[k] * stats.std[c] + stats.mean[c];
    }
  return out;
}

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 4) throw ShapeMismatch("dataset images must be [N, C, H, W]");
  if (images.shape[0] != labels.size()) throw CountMismatch("image and label counts differ");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw CountMismatch("label " + std::to_string(y) + " out of range");
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes) {
  const auto ib = read_file(images);
  const auto lb = read_file(labels);
  if (be32(ib, 0, images) != kImageMagic) throw BadMagic(images.string());
  if (be32(lb, 0, labels) != kLabelMagic) throw BadMagic(labels.string());
  const std::size_t n = be32(ib, 4, images), rows = be32(ib, 8, images), cols = be32(ib, 12, images);
  const std::size_t n_labels = be32(lb, 4, labels);
  if (n != n_labels) throw CountMismatch(std::to_string(n) + " images vs " + std::to_string(n_labels) + " labels");
  if (ib.size() < 16 + n * rows * cols) throw TruncatedFile(images.string());
  if (lb.size() < 8 + n) throw TruncatedFile(labels.string());

  Dataset d;
  d.name = images.stem().string();
  d.classes = classes;
  d.images = Tensor({n, 1, rows, cols});
  for (std::size_t k = 0; k < n * rows * cols; ++k) d.images.data[k] = ib[16 + k] / 255.0;
  d.labels.resize(n);
  for (std::size_t k = 0; k < n; ++k) d.labels[k] = lb[8 + k];
  d.validate();
  return d;
}

void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
  data.validate();
  if (data.images.shape[1] != 1) throw ShapeMismatch("IDX images are single-channel");
  std::ofstream im(images, std::ios::binary), lb(labels, std::ios::binary);
  if (!im || !lb) throw IoError("cannot write IDX files");
  put_be32(im, kImageMagic);
  put_be32(im, static_cast<std::uint32_t>(data.size()));
  put_be32(im, static_cast<std::uint32_t>(data.images.shape[2]));
  put_be32(im, static_cast<std::uint32_t>(data.images.shape[3]));
  for (double v : data.images.data) im.put(static_cast<char>(std::clamp(std::lround(v * 255.0), 0L, 255L)));
  put_be32(lb, kLabelMagic);
  put_be32(lb, static_cast<std::uint32_t>(data.size()));
  for (int y : data.labels) lb.put(static_cast<char>(y));
  if (!im || !lb) throw IoError("short write to IDX files");
}

Dataset synth_gaussians(std::size_t classes, std::size_t per_class, const Shape& image, double separation,
                        std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synthetic data needs at least two classes");
  if (image.size() != 3) throw ShapeMismatch("synthetic image shape must be [C, H, W]");
  const std::size_t D = shape_size(image);
  if (D < classes) throw ConfigError("image too small to hold one mean direction per class");
  const std::size_t N = classes * per_class;
  Dataset d;
  d.name = "synthetic";
  d.classes = classes;
  d.images = Tensor({N, image[0], image[1], image[2]});
  d.labels.resize(N);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double offset = separation / std::sqrt(2.0);
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t y = i % classes;
    d.labels[i] = static_cast<int>(y);
    double* x = d.images.data.data() + i * D;
    for (std::size_t k = 0; k < D; ++k) x[k] = noise(rng);
    x[y] += offset;
  }
  return d;
}

std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t draw;
  do draw = rng();
  while (draw >= limit);
  return draw % n;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, i)]);
  return p;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices, const std::string& name) {
  const std::size_t stride = per_sample(data);
  Dataset out;
  out.name = name;
  out.classes = data.classes;
  Shape shape = data.images.shape;
  shape[0] = indices.size();
  out.images = Tensor(shape);
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= data.size()) throw ShapeMismatch("subset index out of range");
    std::copy_n(data.images.data.begin() + static_cast<std::ptrdiff_t>(indices[k] * stride), stride,
                out.images.data.begin() + static_cast<std::ptrdiff_t>(k * stride));
    out.labels.push_back(data.labels[indices[k]]);
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec) {
  if (!(spec.val_fraction > 0.0 && spec.val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  const std::size_t N = data.size();
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(N) * spec.val_fraction + 1e-9));
  if (n_val < 1 || n_val >= N) throw TooSmall(std::to_string(N) + " samples cannot give a validation split");
  const auto p = permutation(N, spec.seed);
  const std::span<const std::size_t> all(p);
  return {subset(data, all.subspan(n_val), data.name + "/train"), subset(data, all.first(n_val), data.name + "/val")};
}

std::pair<Dataset, Dataset> disjoint_subsets(const Dataset& data, std::size_t first, std::size_t second,
                                             std::uint64_t seed) {
  if (first + second > data.size()) throw TooSmall("requested subsets exceed dataset size");
  const auto p = permutation(data.size(), seed);
  const std::span<const std::size_t> all(p);
  return {subset(data, all.first(first), data.name + "/a"), subset(data, all.subspan(first, second), data.name + "/b")};
}

ChannelStats channel_stats(const Dataset& data) {
  data.validate();
  if (data.size() == 0) throw EmptyBatch("statistics of an empty dataset");
  const std::size_t C = data.images.shape[1], plane = data.images.shape[2] * data.images.shape[3];
  ChannelStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const double count = static_cast<double>(data.size() * plane);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < data.size(); ++n)
      for (std::size_t k = 0; k < plane; ++k) sum += data.images.data[(n * C + c) * plane + k];
    s.mean[c] = sum / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < data.size(); ++n)
      for (std::size_t k = 0; k < plane; ++k) {
        const double d = data.images.data[(n * C + c) * plane + k] - s.mean[c];
        sq += d * d;
      }
    s.std[c] = std::sqrt(sq / count);
  }
  return s;
}

Dataset normalize(const Dataset& data, const ChannelStats& stats) { return apply_channelwise(data, stats, true); }

Dataset denormalize(const Dataset& data, const ChannelStats& stats) { return apply_channelwise(data, stats, false); }

}  // namespace calattn
