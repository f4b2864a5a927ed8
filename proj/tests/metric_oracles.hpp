#pragma once

// Direct-from-definition metric implementations. They share no code with
// src/metrics.cpp and trade speed for obviousness.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <tuple>
#include <vector>

#include "calattn/metrics.hpp"

namespace oracle {

struct Sample {
  double conf;
  bool hit;
};

inline std::vector<Sample> top_label(const calattn::PredictionBatch& b) {
  std::vector<Sample> out;
  for (const auto& p : b.samples) out.push_back({p.confidence, p.predicted == p.label});
  return out;
}

// Members of equal-width bin m (0-based): lo < conf <= hi, plus conf == 0 in bin 0.
inline bool in_bin(double conf, std::size_t m, std::size_t M) {
  const double lo = static_cast<double>(m) / static_cast<double>(M);
  const double hi = static_cast<double>(m + 1) / static_cast<double>(M);
  if (m == 0 && conf <= 0.0) return true;
  if (m + 1 == M && conf > 1.0) return true;
  return conf > lo && conf <= hi;
}

inline std::vector<std::tuple<double, std::size_t, double>> width_bins(const std::vector<Sample>& s, std::size_t M) {
  // (count, acc - conf) per bin, empty bins skipped
  std::vector<std::tuple<double, std::size_t, double>> bins;
  for (std::size_t m = 0; m < M; ++m) {
    std::size_t n = 0;
    double acc = 0.0, conf = 0.0;
    for (const auto& x : s) {
      if (!in_bin(x.conf, m, M)) continue;
      ++n;
      acc += x.hit;
      conf += x.conf;
    }
    if (n > 0) bins.emplace_back(static_cast<double>(m), n, std::abs(acc / n - conf / n));
  }
  return bins;
}

inline double ece(const std::vector<Sample>& s, std::size_t M) {
  double out = 0.0;
  for (auto& [m, n, gap] : width_bins(s, M)) out += static_cast<double>(n) / static_cast<double>(s.size()) * gap;
  return out;
}

inline double mce(const std::vector<Sample>& s, std::size_t M) {
  double out = 0.0;
  for (auto& [m, n, gap] : width_bins(s, M)) out = std::max(out, gap);
  return out;
}

inline double ada_ece(const std::vector<Sample>& s, std::size_t M) {
  std::vector<std::pair<double, std::size_t>> keyed;
  for (std::size_t i = 0; i < s.size(); ++i) keyed.emplace_back(s[i].conf, i);
  std::sort(keyed.begin(), keyed.end());  // index breaks ties, i.e. stable order
  const std::size_t N = s.size();
  double out = 0.0;
  std::size_t at = 0;
  for (std::size_t m = 0; m < M; ++m) {
    const std::size_t size = N / M + (m < N % M ? 1 : 0);
    if (size == 0) continue;
    double acc = 0.0, conf = 0.0;
    for (std::size_t k = at; k < at + size; ++k) {
      acc += s[keyed[k].second].hit;
      conf += keyed[k].first;
    }
    out += static_cast<double>(size) / static_cast<double>(N) * std::abs(acc / size - conf / size);
    at += size;
  }
  return out;
}

inline double classwise_ece(const calattn::PredictionBatch& b, std::size_t M) {
  const std::size_t K = b.samples.front().probs.size();
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<Sample> col;
    for (const auto& p : b.samples) col.push_back({p.probs[k], p.label == static_cast<int>(k)});
    total += ece(col, M);
  }
  return total / static_cast<double>(K);
}

inline double smece(const std::vector<Sample>& s, double h) {
  const std::size_t N = s.size();
  std::vector<double> w(N * N);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t i = 0; i < N; ++i) {
      const double t = (s[i].conf - s[j].conf) / h;
      w[i * N + j] = std::exp(-0.5 * t * t);
    }
  double out = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      num += w[i * N + j] * (s[j].hit ? 1.0 : 0.0);
      den += w[i * N + j];
    }
    out += std::abs(num / den - s[i].conf);
  }
  return out / static_cast<double>(N);
}

inline double auroc(const std::vector<Sample>& s) {
  double wins = 0.0, pairs = 0.0;
  for (const auto& a : s)
    for (const auto& b : s) {
      if (!a.hit || b.hit) continue;
      pairs += 1.0;
      wins += a.conf > b.conf ? 1.0 : (a.conf == b.conf ? 0.5 : 0.0);
    }
  return wins / pairs;
}

// Random batch with N <= 50, C in [2, 5]. Probabilities are snapped to a
// coarse grid half the time to exercise ties and bin edges.
inline calattn::PredictionBatch random_batch(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_dist(2, 50), c_dist(2, 5);
  std::normal_distribution<double> nd(0.0, 2.0);
  const int N = n_dist(rng), C = c_dist(rng);
  const bool snap = rng() % 2 == 0;
  calattn::PredictionBatch b;
  for (int i = 0; i < N; ++i) {
    std::vector<double> p(static_cast<std::size_t>(C));
    double total = 0.0;
    for (double& v : p) {
      v = std::exp(nd(rng));
      total += v;
    }
    for (double& v : p) {
      v /= total;
      if (snap) v = std::round(v * 20.0) / 20.0;
    }
    b.samples.push_back(calattn::Prediction::from_probs(p, static_cast<int>(rng() % static_cast<unsigned>(C))));
  }
  return b;
}

}  // namespace oracle
