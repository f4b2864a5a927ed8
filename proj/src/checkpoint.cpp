#include "calattn/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "calattn/errors.hpp"

namespace calattn {

namespace {

constexpr const char* kFormat = "calattn-checkpoint 1";

std::filesystem::path stem_of(const std::filesystem::path& path) {
  const auto ext = path.extension();
  if (ext == ".manifest" || ext == ".blob") {
    auto stem = path;
    return stem.replace_extension();
  }
  return path;
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t d : s) out += (out.empty() ? "" : "x") + std::to_string(d);
  return out.empty() ? "scalar" : out;
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : ",") + format_double(x);
  return out;
}

std::vector<double> split_reals(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || end != item.data() + item.size()) throw ManifestMismatch("bad number '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  else return __builtin_bswap64(v);
}

}  // namespace

std::filesystem::path manifest_path(const std::filesystem::path& stem) {
  auto p = stem_of(stem);
  p += ".manifest";
  return p;
}

std::filesystem::path blob_path(const std::filesystem::path& stem) {
  auto p = stem_of(stem);
  p += ".blob";
  return p;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& stem) {
  Model model = ckpt.model;
  auto params = model.named_parameters();

  std::ostringstream m;
  m << "format: " << kFormat << "\n";
  m << "epoch: " << ckpt.epoch << "\n";
  for (const auto& [key, value] : to_key_values(ckpt.config)) m << "config." << key << ": " << value << "\n";
  m << "norm.mean: " << join(ckpt.stats.mean) << "\n";
  m << "norm.std: " << join(ckpt.stats.std) << "\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    m << "tensor: " << name << " " << shape_text(t->shape) << " " << offset << "\n";
    offset += t->size();
  }
  m << "values: " << offset << "\n";

  std::vector<std::uint64_t> words;
  words.reserve(offset);
  for (const auto& [name, t] : params)
    for (double v : t->data) words.push_back(to_little(std::bit_cast<std::uint64_t>(v)));

  std::ofstream mf(manifest_path(stem), std::ios::binary), bf(blob_path(stem), std::ios::binary);
  if (!mf || !bf) throw IoError("cannot write checkpoint " + stem.string());
  const std::string text = m.str();
  mf.write(text.data(), static_cast<std::streamsize>(text.size()));
  bf.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 8));
  if (!mf || !bf) throw IoError("short write to checkpoint " + stem.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream mf(manifest_path(path));
  if (!mf) throw IoError("cannot read " + manifest_path(path).string());

  KeyValues config_keys;
  struct Entry {
    std::string name, shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  Checkpoint ckpt;
  std::size_t declared = 0;
  bool format_seen = false;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    const auto colon = line.find(": ");
    if (colon == std::string::npos) throw ManifestMismatch("malformed line '" + line + "'");
    const std::string key = line.substr(0, colon), value = line.substr(colon + 2);
    if (key == "format") {
      if (value != kFormat) throw ManifestMismatch("unsupported format '" + value + "'");
      format_seen = true;
    } else if (key == "epoch") {
      ckpt.epoch = std::stoul(value);
    } else if (key.rfind("config.", 0) == 0) {
      config_keys[key.substr(7)] = value;
    } else if (key == "norm.mean") {
      ckpt.stats.mean = split_reals(value);
    } else if (key == "norm.std") {
      ckpt.stats.std = split_reals(value);
    } else if (key == "tensor") {
      std::istringstream ss(value);
      Entry e;
      if (!(ss >> e.name >> e.shape >> e.offset)) throw ManifestMismatch("malformed tensor line '" + value + "'");
      entries.push_back(e);
    } else if (key == "values") {
      declared = std::stoul(value);
    } else {
      throw ManifestMismatch("unknown manifest key '" + key + "'");
    }
  }
  if (!format_seen) throw ManifestMismatch("missing format line");
  try {
    ckpt.config = apply_key_values(RunConfig{}, config_keys);
  } catch (const ConfigError& e) {
    throw ManifestMismatch(e.what());
  }
  ckpt.model = init_model(ckpt.config.model, ckpt.config.seed);
  auto params = ckpt.model.named_parameters();
  if (params.size() != entries.size())
    throw ManifestMismatch("manifest lists " + std::to_string(entries.size()) + " tensors, model has " +
                           std::to_string(params.size()));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    if (entries[i].name != name) throw ManifestMismatch("expected tensor " + name + ", found " + entries[i].name);
    if (entries[i].shape != shape_text(t->shape))
      throw ManifestMismatch(name + " has shape " + entries[i].shape + ", model expects " + shape_text(t->shape));
    if (entries[i].offset != offset) throw ManifestMismatch(name + " offset " + std::to_string(entries[i].offset));
    offset += t->size();
  }
  if (declared != offset) throw ManifestMismatch("value count " + std::to_string(declared) + " != " + std::to_string(offset));

  std::ifstream bf(blob_path(path), std::ios::binary | std::ios::ate);
  if (!bf) throw IoError("cannot read " + blob_path(path).string());
  const auto bytes = static_cast<std::size_t>(bf.tellg());
  if (bytes != offset * 8)
    throw BlobSizeMismatch("blob has " + std::to_string(bytes) + " bytes, manifest needs " + std::to_string(offset * 8));
  bf.seekg(0);
  std::vector<std::uint64_t> words(offset);
  bf.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!bf) throw IoError("short read from " + blob_path(path).string());
  std::size_t at = 0;
  for (auto& [name, t] : params)
    for (double& v : t->data) v = std::bit_cast<double>(to_little(words[at++]));
  return ckpt;
}

}  // namespace calattn
