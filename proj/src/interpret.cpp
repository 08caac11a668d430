#include "simil/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "simil/errors.hpp"
#include "simil/si_branch.hpp"
#include "simil/stats.hpp"

namespace simil::interp {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::size_t kReportBins = 8;

Histogram histogram(const std::vector<double>& xs, std::size_t bins) {
  Histogram h;
  h.counts.assign(bins, 0);
  if (xs.empty()) return h;
  auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  h.lo = *lo;
  h.hi = *hi;
  for (double x : xs) {
    std::size_t b = 0;
    if (h.hi > h.lo) {
      b = static_cast<std::size_t>((x - h.lo) / (h.hi - h.lo) * static_cast<double>(bins));
      b = std::min(b, bins - 1);
    }
    ++h.counts[b];
  }
  return h;
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

double kl_term(double p, double m) { return p > 0.0 ? p * std::log(p / m) : 0.0; }

// Cyclic Jacobi for a symmetric matrix; returns eigenvalues and column eigenvectors.
void jacobi_eigen(std::vector<double> a, std::size_t n, std::vector<double>& values, std::vector<double>& vectors) {
  vectors.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) vectors[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    }
    if (off < 1e-22) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vectors[k * n + p], vkq = vectors[k * n + q];
          vectors[k * n + p] = c * vkp - s * vkq;
          vectors[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i * n + i];
}

double log_gauss(const Gaussian2& g, const std::array<double, 2>& x) {
  const double det = g.cov[0] * g.cov[3] - g.cov[1] * g.cov[2];
  const double dx = x[0] - g.mean[0], dy = x[1] - g.mean[1];
  const double q = (g.cov[3] * dx * dx - (g.cov[1] + g.cov[2]) * dx * dy + g.cov[0] * dy * dy) / det;
  return -0.5 * q - 0.5 * std::log(det) - std::log(2.0 * kPi);
}

double log_density(const Mixture& m, const std::array<double, 2>& x) {
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  for (const auto& g : m) {
    terms.push_back(std::log(g.weight) + log_gauss(g, x));
    mx = std::max(mx, terms.back());
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

std::optional<Mixture> em_attempt(const std::vector<std::array<double, 2>>& pts, std::size_t k, std::uint64_t seed) {
  constexpr double kFloor = 1e-6;
  const std::size_t n = pts.size();
  std::mt19937_64 rng(seed);
  auto dist2 = [](const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]);
  };
  std::vector<std::array<double, 2>> centers;
  centers.push_back(pts[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, dist2(pts[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) return std::nullopt;
    std::discrete_distribution<std::size_t> pick(d2.begin(), d2.end());
    centers.push_back(pts[pick(rng)]);
  }

  std::vector<double> resp(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (dist2(pts[i], centers[j]) < dist2(pts[i], centers[best])) best = j;
    }
    resp[i * k + best] = 1.0;
  }

  Mixture mix(k);
  auto m_step = [&]() -> bool {
    for (std::size_t j = 0; j < k; ++j) {
      double nk = 0.0, mx = 0.0, my = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * k + j];
        mx += resp[i * k + j] * pts[i][0];
        my += resp[i * k + j] * pts[i][1];
      }
      if (!(nk > 1e-10)) return false;
      mx /= nk;
      my /= nk;
      double sxx = 0.0, sxy = 0.0, syy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double dx = pts[i][0] - mx, dy = pts[i][1] - my, r = resp[i * k + j];
        sxx += r * dx * dx;
        sxy += r * dx * dy;
        syy += r * dy * dy;
      }
      mix[j] = {nk / static_cast<double>(n), {mx, my}, {sxx / nk + kFloor, sxy / nk, sxy / nk, syy / nk + kFloor}};
      const double det = mix[j].cov[0] * mix[j].cov[3] - mix[j].cov[1] * mix[j].cov[2];
      if (!(det > 0.0) || !std::isfinite(det)) return false;
    }
    return true;
  };

  if (!m_step()) return std::nullopt;
  std::vector<double> lg(k);
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        lg[j] = std::log(mix[j].weight) + log_gauss(mix[j], pts[i]);
        mx = std::max(mx, lg[j]);
      }
      if (!std::isfinite(mx)) return std::nullopt;
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += std::exp(lg[j] - mx);
      for (std::size_t j = 0; j < k; ++j) resp[i * k + j] = std::exp(lg[j] - mx) / s;
    }
    if (!m_step()) return std::nullopt;
  }
  return mix;
}

std::uint64_t mix_seed(std::uint64_t s, std::uint64_t a) {
  s ^= a + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
  s = (s ^ (s >> 30)) * 0xbf58476d1ce4e5b9ULL;
  return s ^ (s >> 31);
}

}  // namespace

Report patch_feature_report(const net::Model& model, const Bag& bag, std::vector<std::string> columns) {
  const std::size_t d = model.config.path_dim;
  if (columns.empty()) {
    for (std::size_t j = 0; j < d; ++j) columns.push_back("f" + std::to_string(j));
  }
  if (columns.size() != d) throw ShapeError("report column count differs from the model's d");
  ad::Graph g;
  model::Bound p(g, model.params, [](const std::string&) { return false; });
  const net::Forward f = net::forward(p, model, bag, net::Selection::Hard, 0);

  Report r;
  r.slide_id = bag.slide_id;
  r.prob = f.si.prediction.prob.item();
  r.logit = f.si.prediction.logit.item();
  r.padded = f.hard.padded;
  for (std::size_t idx : f.hard.indices) {
    r.patch_ids.push_back(bag.patch_ids.at(idx));
    r.alpha.push_back(f.mil.alpha.value()[idx]);
  }
  r.columns = std::move(columns);
  const Tensor& m = f.selected.value();
  const Tensor& beta = f.si.beta.value();
  const Tensor& w = model.params.at("si.predictor.weight");
  const double b = model.params.at("si.predictor.bias").item();
  const std::size_t k = m.rows();
  r.beta = beta.values();
  r.contribution = si::contributions(m, beta, w);
  r.bias_offset = static_cast<double>(k) * b;
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> per_patch(k), values(k);
    for (std::size_t i = 0; i < k; ++i) {
      per_patch[i] = w[j] * beta[j] * m.at(i, j);
      values[i] = m.at(i, j);
    }
    const double mu = stats::mean(per_patch);
    double sd = 0.0;
    if (k > 1) {
      for (double v : per_patch) sd += (v - mu) * (v - mu);
      sd = std::sqrt(sd / static_cast<double>(k - 1));
    }
    const double half = 1.96 * sd / std::sqrt(static_cast<double>(k));
    r.mean_contribution.push_back(mu);
    r.ci_low.push_back(mu - half);
    r.ci_high.push_back(mu + half);
    r.histograms.push_back(histogram(values, kReportBins));
  }
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
    return std::abs(r.contribution[a]) > std::abs(r.contribution[c]);
  });
  order.resize(std::min<std::size_t>(10, d));
  r.top_features = order;
  return r;
}

nlohmann::json to_json(const Report& r) {
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t j = 0; j < r.columns.size(); ++j) {
    features.push_back({{"name", r.columns[j]},
                        {"beta", r.beta[j]},
                        {"contribution", r.contribution[j]},
                        {"mean_contribution", r.mean_contribution[j]},
                        {"ci95", {r.ci_low[j], r.ci_high[j]}},
                        {"histogram",
                         {{"lo", r.histograms[j].lo}, {"hi", r.histograms[j].hi}, {"counts", r.histograms[j].counts}}}});
  }
  nlohmann::json top = nlohmann::json::array();
  for (std::size_t j : r.top_features) top.push_back({{"name", r.columns[j]}, {"contribution", r.contribution[j]}});
  nlohmann::json patches = nlohmann::json::array();
  for (std::size_t i = 0; i < r.patch_ids.size(); ++i) {
    patches.push_back({{"rank", i}, {"patch_id", r.patch_ids[i]}, {"alpha", r.alpha[i]}});
  }
  return {{"kind", "simil.report"},
          {"schema_version", kReportSchemaVersion},
          {"slide_id", r.slide_id},
          {"prediction", r.prob},
          {"logit", r.logit},
          {"bias_offset", r.bias_offset},
          {"padded", r.padded},
          {"top_patches", patches},
          {"top_features", top},
          {"features", features}};
}

std::string report_svg(const Report& r) {
  const std::size_t rows = r.top_features.size();
  const double width = 760, row_h = 28, left = 260, bar_w = 300, strip_x = left + bar_w + 30, strip_w = 150;
  const double height = 60 + row_h * static_cast<double>(rows);
  double scale = 1e-12;
  for (std::size_t j : r.top_features) {
    scale = std::max({scale, std::abs(r.contribution[j]), std::abs(r.ci_low[j] * r.patch_ids.size()),
                      std::abs(r.ci_high[j] * r.patch_ids.size())});
  }
  const double mid = left + bar_w / 2;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<text x=\"10\" y=\"20\" font-size=\"14\">" << svg_escape(r.slide_id) << "  p=" << r.prob
     << "  offset=" << r.bias_offset << "</text>\n";
  os << "<line x1=\"" << mid << "\" y1=\"30\" x2=\"" << mid << "\" y2=\"" << height - 10
     << "\" stroke=\"#888\"/>\n";
  for (std::size_t row = 0; row < rows; ++row) {
    const std::size_t j = r.top_features[row];
    const double y = 40 + row_h * static_cast<double>(row);
    const double v = r.contribution[j];
    const double len = v / scale * (bar_w / 2);
    const double k = static_cast<double>(r.patch_ids.size());
    os << "<text x=\"10\" y=\"" << y + 14 << "\">" << svg_escape(r.columns[j]) << "</text>\n";
    os << "<rect x=\"" << std::min(mid, mid + len) << "\" y=\"" << y + 4 << "\" width=\"" << std::abs(len)
       << "\" height=\"14\" fill=\"" << (v >= 0 ? "#c0392b" : "#2471a3") << "\"/>\n";
    const double lo = mid + r.ci_low[j] * k / scale * (bar_w / 2), hi = mid + r.ci_high[j] * k / scale * (bar_w / 2);
    os << "<line x1=\"" << lo << "\" y1=\"" << y + 11 << "\" x2=\"" << hi << "\" y2=\"" << y + 11
       << "\" stroke=\"#222\"/>\n";
    const Histogram& h = r.histograms[j];
    std::size_t peak = 1;
    for (std::size_t c : h.counts) peak = std::max(peak, c);
    const double cell = strip_w / static_cast<double>(h.counts.size());
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      const double shade = static_cast<double>(h.counts[b]) / static_cast<double>(peak);
      os << "<rect x=\"" << strip_x + cell * static_cast<double>(b) << "\" y=\"" << y + 4 << "\" width=\"" << cell
         << "\" height=\"14\" fill=\"#555\" fill-opacity=\"" << shade << "\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

double js_divergence(std::span<const double> a, std::span<const double> b, std::size_t bins) {
  if (a.empty() || b.empty()) throw DataError("JS divergence of an empty sample");
  if (bins < 1) throw ContractError("JS divergence needs at least one bin");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : a) lo = std::min(lo, x), hi = std::max(hi, x);
  for (double x : b) lo = std::min(lo, x), hi = std::max(hi, x);
  if (!(hi > lo)) return 0.0;
  auto hist = [&](std::span<const double> xs) {
    std::vector<double> h(bins, 0.0);
    for (double x : xs) {
      std::size_t k = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
      h[std::min(k, bins - 1)] += 1.0;
    }
    for (double& v : h) v /= static_cast<double>(xs.size());
    return h;
  };
  const std::vector<double> p = hist(a), q = hist(b);
  double js = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    const double m = 0.5 * (p[k] + q[k]);
    js += 0.5 * kl_term(p[k], m) + 0.5 * kl_term(q[k], m);
  }
  return std::clamp(js, 0.0, std::log(2.0));
}

Univariate univariate_separability(const std::vector<std::vector<double>>& f1,
                                   const std::vector<std::vector<double>>& f2) {
  if (f1.size() < 20 || f2.size() < 20) throw DataError("univariate separability needs at least 20 rows per class");
  const std::size_t d = f1.front().size();
  for (const auto* f : {&f1, &f2}) {
    for (const auto& row : *f) {
      if (row.size() != d) throw ShapeError("ragged feature rows");
    }
  }
  Univariate u;
  std::vector<double> a(f1.size()), b(f2.size());
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < f1.size(); ++i) a[i] = f1[i][j];
    for (std::size_t i = 0; i < f2.size(); ++i) b[i] = f2[i][j];
    u.ranked.push_back({j, js_divergence(a, b)});
  }
  std::stable_sort(u.ranked.begin(), u.ranked.end(), [](const FeatureJs& x, const FeatureJs& y) { return x.js > y.js; });
  std::vector<double> top;
  for (const FeatureJs& f : u.ranked) {
    top.push_back(f.js);
    u.median_curve.push_back(stats::percentile(top, 0.5));
  }
  return u;
}

Projection pca_2d(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DataError("projection of an empty set");
  const std::size_t n = rows.size(), d = rows.front().size();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw ShapeError("ragged feature rows");
    for (std::size_t j = 0; j < d; ++j) mu[j] += r[j];
  }
  for (double& m : mu) m /= static_cast<double>(n);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) sd[j] += (r[j] - mu[j]) * (r[j] - mu[j]);
  }
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(n));
  std::vector<std::vector<double>> z(n, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) z[i][j] = sd[j] > 0.0 ? (rows[i][j] - mu[j]) / sd[j] : 0.0;
  }
  std::vector<double> cov(d * d, 0.0);
  for (const auto& r : z) {
    for (std::size_t a = 0; a < d; ++a) {
      if (r[a] == 0.0) continue;
      for (std::size_t b = a; b < d; ++b) cov[a * d + b] += r[a] * r[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov[a * d + b] /= static_cast<double>(n);
      cov[b * d + a] = cov[a * d + b];
    }
  }
  std::vector<double> values, vectors;
  jacobi_eigen(cov, d, values, vectors);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });

  Projection p;
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> load(d, 0.0);
    if (c < d) {
      for (std::size_t j = 0; j < d; ++j) load[j] = vectors[j * d + order[c]];
      std::size_t arg = 0;
      for (std::size_t j = 1; j < d; ++j) {
        if (std::abs(load[j]) > std::abs(load[arg]) + 1e-12) arg = j;
      }
      if (load[arg] < 0.0) {
        for (double& v : load) v = -v;
      }
    }
    p.loadings[c] = std::move(load);
  }
  for (const auto& r : z) {
    std::array<double, 2> xy{0.0, 0.0};
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t j = 0; j < d; ++j) xy[c] += r[j] * p.loadings[c][j];
    }
    p.coords.push_back(xy);
  }
  return p;
}

double silhouette(const std::vector<std::array<double, 2>>& pts, const std::vector<int>& labels) {
  if (pts.size() != labels.size()) throw ShapeError("silhouette: points and labels differ in length");
  std::vector<int> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) return 0.0;
  std::map<int, std::size_t> size;
  for (int l : labels) ++size[l];
  double total = 0.0;
  std::map<int, double> sums;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (int c : classes) sums[c] = 0.0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      sums[labels[j]] += std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
    }
    if (size[labels[i]] < 2) continue;
    const double a = sums[labels[i]] / static_cast<double>(size[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c : classes) {
      if (c != labels[i]) b = std::min(b, sums[c] / static_cast<double>(size[c]));
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(pts.size());
}

std::optional<Mixture> fit_gmm(const std::vector<std::array<double, 2>>& pts, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw ContractError("mixture needs at least one component");
  if (pts.size() < k) return std::nullopt;
  for (std::uint64_t attempt = 0; attempt <= 3; ++attempt) {
    if (auto m = em_attempt(pts, k, attempt == 0 ? seed : mix_seed(seed, attempt))) return m;
  }
  return std::nullopt;
}

double gmm_density(const Mixture& m, const std::array<double, 2>& x) { return std::exp(log_density(m, x)); }

std::vector<std::array<double, 2>> gmm_sample(const Mixture& m, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> w;
  for (const auto& g : m) w.push_back(g.weight);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::array<double, 2>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Gaussian2& g = m[pick(rng)];
    const double l00 = std::sqrt(g.cov[0]);
    const double l10 = g.cov[2] / l00;
    const double l11 = std::sqrt(std::max(0.0, g.cov[3] - l10 * l10));
    const double z0 = normal(rng), z1 = normal(rng);
    out.push_back({g.mean[0] + l00 * z0, g.mean[1] + l10 * z0 + l11 * z1});
  }
  return out;
}

double gmm_js(const Mixture& p, const Mixture& q, std::size_t draws, std::uint64_t seed) {
  if (draws == 0) throw ContractError("Monte-Carlo JS needs at least one draw");
  auto side = [&](const Mixture& from, const Mixture& other, std::uint64_t s) {
    double acc = 0.0;
    for (const auto& x : gmm_sample(from, draws, s)) {
      const double lp = log_density(from, x), lo = log_density(other, x);
      const double mx = std::max(lp, lo);
      const double lm = mx + std::log(0.5 * (std::exp(lp - mx) + std::exp(lo - mx)));
      acc += lp - lm;
    }
    return acc / static_cast<double>(draws);
  };
  const double js = 0.5 * side(p, q, mix_seed(seed, 1)) + 0.5 * side(q, p, mix_seed(seed, 2));
  return std::clamp(js, 0.0, std::log(2.0));
}

Multivariate multivariate_separability(const std::vector<std::vector<double>>& f1,
                                       const std::vector<std::vector<double>>& f2, std::uint64_t seed) {
  if (f1.size() < 50 || f2.size() < 50) throw DataError("multivariate separability needs at least 50 rows per class");
  std::vector<std::vector<double>> pooled = f1;
  pooled.insert(pooled.end(), f2.begin(), f2.end());
  Multivariate out;
  out.projection = pca_2d(pooled);
  std::vector<int> labels(f1.size(), 0);
  labels.resize(pooled.size(), 1);
  out.silhouette = silhouette(out.projection.coords, labels);
  const std::vector<std::array<double, 2>> a(out.projection.coords.begin(),
                                             out.projection.coords.begin() + static_cast<std::ptrdiff_t>(f1.size()));
  const std::vector<std::array<double, 2>> b(out.projection.coords.begin() + static_cast<std::ptrdiff_t>(f1.size()),
                                             out.projection.coords.end());
  for (std::size_t i = 1; i <= 4; ++i) {
    auto ga = fit_gmm(a, i, mix_seed(seed, 10 + i));
    auto gb = fit_gmm(b, i, mix_seed(seed, 20 + i));
    if (ga && gb) out.js_at[i - 1] = gmm_js(*ga, *gb, 10000, mix_seed(seed, 30 + i));
  }
  return out;
}

nlohmann::json to_json(const CohortStats& s) {
  nlohmann::json ranked = nlohmann::json::array();
  for (const FeatureJs& f : s.univariate.ranked) {
    const std::string name = f.feature < s.columns.size() ? s.columns[f.feature] : "f" + std::to_string(f.feature);
    ranked.push_back({{"feature", name}, {"index", f.feature}, {"js", f.js}});
  }
  nlohmann::json out = {{"kind", "simil.cohort"},
                        {"schema_version", kReportSchemaVersion},
                        {"rows", {s.rows[0], s.rows[1]}},
                        {"ranked_js", ranked},
                        {"median_js_curve", s.univariate.median_curve}};
  if (!s.multivariate) {
    out["silhouette"] = nullptr;
    out["js_div_at"] = nullptr;
    out["projection"] = nullptr;
    return out;
  }
  const Multivariate& mv = *s.multivariate;
  nlohmann::json js_at = nlohmann::json::object();
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& v = mv.js_at[i];
    js_at[std::to_string(i + 1)] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  }
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& c : mv.projection.coords) coords.push_back({c[0], c[1]});
  out["silhouette"] = mv.silhouette;
  out["js_div_at"] = js_at;
  out["projection"] = coords;
  return out;
}

std::vector<std::vector<double>> selected_rows(const net::Model& model, const Bag& bag) {
  ad::Graph g;
  model::Bound p(g, model.params, [](const std::string&) { return false; });
  const net::Forward f = net::forward(p, model, bag, net::Selection::Hard, 0);
  std::vector<std::vector<double>> out;
  const std::size_t take = std::min(f.hard.indices.size(), bag.size());
  const std::size_t d = bag.path.cols();
  for (std::size_t r = 0; r < take; ++r) {
    const std::size_t i = f.hard.indices[r];
    out.emplace_back(bag.path.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                     bag.path.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return out;
}

void CohortRows::add(const net::Model& model, const Bag& bag) {
  if (bag.label != 0 && bag.label != 1) throw DataError("cohort rows need binary labels");
  auto rows = selected_rows(model, bag);
  auto& dst = by_class[bag.label];
  dst.insert(dst.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
}

CohortStats cohort_stats(const CohortRows& rows, std::vector<std::string> columns, std::uint64_t seed) {
  CohortStats s;
  s.columns = std::move(columns);
  s.rows[0] = rows.by_class[0].size();
  s.rows[1] = rows.by_class[1].size();
  s.univariate = univariate_separability(rows.by_class[0], rows.by_class[1]);
  if (s.rows[0] >= 50 && s.rows[1] >= 50) {
    s.multivariate = multivariate_separability(rows.by_class[0], rows.by_class[1], seed);
  }
  return s;
}

}  // namespace simil::interp
