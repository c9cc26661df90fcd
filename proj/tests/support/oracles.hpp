// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// Scalar reference implementations used as test oracles. They deliberately
// share no code with the library: plain loops over std::vector, no Eigen.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

// softmax(q k^T / sqrt(d)) v over the keys with keep[j] != 0, one query row at a time.
inline Rows attention(const Rows& q, const Rows& k, const Rows& v, const std::vector<int>& keep) {
  const std::size_t d = q.empty() ? 0 : q[0].size();
  Rows out(q.size(), std::vector<double>(v.empty() ? 0 : v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> logits(k.size(), 0.0);
    for (std::size_t j = 0; j < k.size(); ++j) {
      if (!keep[j]) continue;
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += q[i][c] * k[j][c];
      logits[j] = s / std::sqrt(static_cast<double>(d));
      if (logits[j] > best) best = logits[j];
    }
    double z = 0;
    for (std::size_t j = 0; j < k.size(); ++j)
      if (keep[j]) z += std::exp(logits[j] - best);
    for (std::size_t j = 0; j < k.size(); ++j) {
      if (!keep[j]) continue;
      const double w = std::exp(logits[j] - best) / z;
      for (std::size_t c = 0; c < v[j].size(); ++c) out[i][c] += w * v[j][c];
    }
  }
  return out;
}

inline Rows attention(const Rows& q, const Rows& k, const Rows& v) {
  return attention(q, k, v, std::vector<int>(k.size(), 1));
}

// One deterministic DDIM update, element by element.
inline std::vector<double> ddim(const std::vector<double>& z, const std::vector<double>& eps, double a_from,
                                double a_to) {
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double x0 = (z[i] - std::sqrt(1.0 - a_from) * eps[i]) / std::sqrt(a_from);
    out[i] = std::sqrt(a_to) * x0 + std::sqrt(1.0 - a_to) * eps[i];
  }
  return out;
}

// alphas_cumprod of the scaled-linear schedule: betas linear in sqrt space.
inline std::vector<double> scaled_linear_alphas(int n, double b0, double b1) {
  std::vector<double> out;
  double prod = 1.0;
  for (int i = 0; i < n; ++i) {
    const double s = std::sqrt(b0) + (std::sqrt(b1) - std::sqrt(b0)) * i / (n - 1);
    prod *= 1.0 - s * s;
    out.push_back(prod);
  }
  return out;
}

using Pt = std::pair<long long, long long>;

inline long long orient(const Pt& a, const Pt& b, const Pt& c) {
  return (b.first - a.first) * (c.second - a.second) - (b.second - a.second) * (c.first - a.first);
}

inline bool on_segment(const Pt& a, const Pt& b, const Pt& p) {
  return orient(a, b, p) == 0 && std::min(a.first, b.first) <= p.first && p.first <= std::max(a.first, b.first) &&
         std::min(a.second, b.second) <= p.second && p.second <= std::max(a.second, b.second);
}

inline bool in_triangle(const Pt& a, const Pt& b, const Pt& c, const Pt& p) {
  const long long d1 = orient(a, b, p), d2 = orient(b, c, p), d3 = orient(c, a, p);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

// p lies in the convex hull of pts iff it lies in a triangle (or segment,
// or point) spanned by them.
inline bool in_hull_brute(const std::vector<Pt>& pts, const Pt& p) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i] == p) return true;
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      if (on_segment(pts[i], pts[j], p)) return true;
      for (std::size_t k = j + 1; k < pts.size(); ++k) {
        if (orient(pts[i], pts[j], pts[k]) != 0 && in_triangle(pts[i], pts[j], pts[k], p)) return true;
      }
    }
  }
  return false;
}

// Min-max normalise, then threshold at mean + f * std (population std).
inline std::vector<int> threshold_mean_std(const std::vector<double>& m, double f) {
  double lo = m[0], hi = m[0];
  for (double v : m) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> n(m.size());
  double mean = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    n[i] = (m[i] - lo) / (hi - lo);
    mean += n[i];
  }
  mean /= static_cast<double>(m.size());
  double var = 0;
  for (double v : n) var += (v - mean) * (v - mean);
  var /= static_cast<double>(m.size());
  const double t = mean + f * std::sqrt(var);
  std::vector<int> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = n[i] >= t;
  return out;
}

inline Rows random_rows(std::mt19937_64& rng, std::size_t n, std::size_t d, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Rows r(n, std::vector<double>(d));
  for (auto& row : r)
    for (auto& x : row) x = g(rng);
  return r;
}

}  // namespace oracle
