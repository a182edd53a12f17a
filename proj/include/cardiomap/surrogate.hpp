#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "cardiomap/dtcwt.hpp"
#include "cardiomap/error.hpp"
#include "cardiomap/grid.hpp"
#include "cardiomap/random.hpp"
#include "cardiomap/substrate.hpp"

namespace cardiomap {

inline constexpr double kDefaultJaccardThreshold = 0.5 * (kHealthyDiffusivity + kScarDiffusivity);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double rmse(const Field& a, const Field& b) {
  if (!a.same_shape(b)) throw ShapeError("rmse: shapes differ");
  if (a.empty()) throw ShapeError("rmse: empty fields");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.size()));
}

/// RMSE over all three tensor components.
inline double rmse(const DiffusionTensorField& a, const DiffusionTensorField& b) {
  a.check_shape();
  b.check_shape();
  const double x = rmse(a.d_xx, b.d_xx), y = rmse(a.d_yy, b.d_yy), z = rmse(a.d_xy, b.d_xy);
  return std::sqrt((x * x + y * y + z * z) / 3.0);
}

inline Mask scar_mask(const Field& d_xx, double threshold = kDefaultJaccardThreshold) {
  Mask m(d_xx.rows(), d_xx.cols());
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = d_xx.data()[i] < threshold;
  return m;
}

/// |a & b| / |a | b|, with 1 when both masks are empty.
inline double jaccard(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw ShapeError("jaccard: shapes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data()[i] != 0, y = b.data()[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double jaccard(const DiffusionTensorField& truth, const DiffusionTensorField& pred,
                      double threshold = kDefaultJaccardThreshold) {
  if (!truth.d_xx.same_shape(pred.d_xx)) throw ShapeError("jaccard: shapes differ");
  return jaccard(scar_mask(truth.d_xx, threshold), scar_mask(pred.d_xx, threshold));
}

// ---------------------------------------------------------------------------
// Surrogates
// ---------------------------------------------------------------------------

enum class SurrogateMethod { Phase, Permute };

inline SurrogateMethod parse_surrogate_method(std::string_view s) {
  if (s == "phase") return SurrogateMethod::Phase;
  if (s == "permute") return SurrogateMethod::Permute;
  throw ValidationError("unknown surrogate method '" + std::string(s) + "' (expected phase or permute)");
}

inline std::string_view to_string(SurrogateMethod m) { return m == SurrogateMethod::Phase ? "phase" : "permute"; }

struct MeanSd {
  double mean = 0.0, sd = 0.0;
};

inline MeanSd mean_sd(const Field& f) {
  double m = 0.0;
  for (double v : f) m += v;
  m /= static_cast<double>(f.size());
  double s = 0.0;
  for (double v : f) s += (v - m) * (v - m);
  return {m, std::sqrt(s / static_cast<double>(f.size()))};
}

/// Field with the same wavelet magnitude spectrum per subband: detail
/// coefficients get independent uniform phases (or are shuffled inside their
/// subband), the lowpass is kept, and the result is rescaled to the input
/// mean and standard deviation.
///
/// The transform is redundant, so randomized coefficients are not those of
/// any field and the inverse loses part of the detail energy. `refinements`
/// extra passes re-analyse the field and reset each coefficient magnitude to
/// its original value while keeping the new phase.
inline Field make_surrogate(const Field& field, std::uint64_t seed, SurrogateMethod method = SurrogateMethod::Phase,
                            std::size_t levels = 4, std::size_t refinements = 8) {
  for (double v : field)
    if (!std::isfinite(v)) throw ValidationError("make_surrogate: non-finite input");
  if (std::all_of(field.begin(), field.end(), [&](double v) { return v == *field.begin(); })) return field;
  const MeanSd ref = mean_sd(field);

  const WaveletPyramid orig = dtcwt_forward(field, levels);
  WaveletPyramid p = orig;
  Rng rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (auto& level : p.levels)
    for (auto& band : level) {
      if (method == SurrogateMethod::Phase) {
        for (auto& z : band) z *= std::polar(1.0, angle(rng));
      } else {
        std::shuffle(band.begin(), band.end(), rng);
      }
    }
  Field out = dtcwt_inverse(p);
  for (std::size_t it = 0; it < refinements; ++it) {
    WaveletPyramid q = dtcwt_forward(out, levels);
    q.lowpass = orig.lowpass;
    for (std::size_t l = 0; l < q.levels.size(); ++l)
      for (std::size_t b = 0; b < 6; ++b) {
        auto& band = q.levels[l][b];
        const auto& target = p.levels[l][b];
        for (std::size_t i = 0; i < band.size(); ++i) {
          const double mag = std::abs(target.data()[i]);
          const double cur = std::abs(band.data()[i]);
          band.data()[i] = cur > 0.0 ? band.data()[i] * (mag / cur) : target.data()[i];
        }
      }
    out = dtcwt_inverse(q);
  }
  const MeanSd got = mean_sd(out);
  for (auto& v : out) v = got.sd > 0.0 ? (v - got.mean) / got.sd * ref.sd + ref.mean : ref.mean;
  return out;
}

struct SurrogateTestResult {
  double rmse_prediction = 0.0;
  std::vector<double> rmse_surrogates;
  double percentile = 0.0;  // fraction of surrogates with RMSE <= rmse_prediction
  double p_value = 1.0;     // (1 + #{surrogate RMSE <= prediction RMSE}) / (count + 1)
  std::string warning;
};

enum class SurrogateSource { Prediction, Truth };

inline SurrogateSource parse_surrogate_source(std::string_view s) {
  if (s == "prediction") return SurrogateSource::Prediction;
  if (s == "truth") return SurrogateSource::Truth;
  throw ValidationError("unknown surrogate source '" + std::string(s) + "' (expected prediction or truth)");
}

inline double percentile_of(double value, const std::vector<double>& population) {
  if (population.empty()) return 0.0;
  const auto le = std::count_if(population.begin(), population.end(), [&](double s) { return s <= value; });
  return static_cast<double>(le) / static_cast<double>(population.size());
}

/// Compares RMSE(pred, truth) with RMSE(surrogate_k, truth) for `count`
/// surrogates of the chosen source field.
inline SurrogateTestResult surrogate_test(const Field& pred, const Field& truth, std::size_t count = 100,
                                          std::uint64_t seed = 0, SurrogateMethod method = SurrogateMethod::Phase,
                                          SurrogateSource source = SurrogateSource::Prediction) {
  if (!pred.same_shape(truth)) throw ShapeError("surrogate_test: shapes differ");
  if (count == 0) throw ValidationError("surrogate_test: count must be positive");
  SurrogateTestResult r;
  if (count < 20) r.warning = "fewer than 20 surrogates; percentile is coarse";
  r.rmse_prediction = rmse(pred, truth);
  r.rmse_surrogates.resize(count);
  const Field& base = source == SurrogateSource::Prediction ? pred : truth;
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < n; ++k)
    r.rmse_surrogates[static_cast<std::size_t>(k)] =
        rmse(make_surrogate(base, derive_seed(seed, {0x5ABB, static_cast<std::uint64_t>(k)}), method), truth);
  const auto le = std::count_if(r.rmse_surrogates.begin(), r.rmse_surrogates.end(),
                                [&](double s) { return s <= r.rmse_prediction; });
  r.percentile = static_cast<double>(le) / static_cast<double>(count);
  r.p_value = (1.0 + static_cast<double>(le)) / (static_cast<double>(count) + 1.0);
  return r;
}

struct WelchResult {
  double t = std::numeric_limits<double>::quiet_NaN();
  double df = std::numeric_limits<double>::quiet_NaN();
  double p_value = std::numeric_limits<double>::quiet_NaN();  // one-sided, H1: mean(a) < mean(b)
};

inline WelchResult welch_less(const std::vector<double>& a, const std::vector<double>& b) {
  WelchResult w;
  if (a.size() < 2 || b.size() < 2) return w;
  auto stats = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, s / static_cast<double>(v.size() - 1)};
  };
  const auto [ma, va] = stats(a);
  const auto [mb, vb] = stats(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double qa = va / na, qb = vb / nb;
  const double se2 = qa + qb;
  if (se2 == 0.0) {
    w.t = ma < mb ? -std::numeric_limits<double>::infinity()
                  : (ma > mb ? std::numeric_limits<double>::infinity() : 0.0);
    w.p_value = ma < mb ? 0.0 : (ma > mb ? 1.0 : 0.5);
    return w;
  }
  w.t = (ma - mb) / std::sqrt(se2);
  w.df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  boost::math::students_t dist(w.df);
  w.p_value = boost::math::cdf(dist, w.t);
  return w;
}

struct SurrogateAggregate {
  std::size_t simulations = 0;
  double mean_rmse_prediction = 0.0;
  double mean_rmse_surrogates = 0.0;
  double median_percentile = 0.0;
  WelchResult welch;
  double permutation_p = 1.0;  // pooled (1 + sum of ranks) / (1 + total surrogates)
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline SurrogateAggregate aggregate(const std::vector<SurrogateTestResult>& results) {
  SurrogateAggregate a;
  a.simulations = results.size();
  if (results.empty()) return a;
  std::vector<double> pred, pooled, pct;
  std::size_t ranks = 0;
  for (const auto& r : results) {
    pred.push_back(r.rmse_prediction);
    pooled.insert(pooled.end(), r.rmse_surrogates.begin(), r.rmse_surrogates.end());
    pct.push_back(r.percentile);
    ranks += static_cast<std::size_t>(std::count_if(r.rmse_surrogates.begin(), r.rmse_surrogates.end(),
                                                    [&](double s) { return s <= r.rmse_prediction; }));
  }
  for (double v : pred) a.mean_rmse_prediction += v / static_cast<double>(pred.size());
  for (double v : pooled) a.mean_rmse_surrogates += v / static_cast<double>(pooled.size());
  a.median_percentile = median(pct);
  a.welch = welch_less(pred, pooled);
  a.permutation_p = (1.0 + static_cast<double>(ranks)) / (1.0 + static_cast<double>(pooled.size()));
  return a;
}

}  // namespace cardiomap
