#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "cardiomap/error.hpp"

namespace cardiomap {

/// Three-variable Fenton-Karma ionic model parameters. Defaults are the
/// Beeler-Reuter fit (set 3) of Fenton et al. 2002; data/fk_params.json holds
/// the same values as versioned data.
struct FkParams {
  double tau_v_plus = 3.33;     // ms
  double tau_v1_minus = 19.6;   // ms, used for u >= u_v
  double tau_v2_minus = 1250.0; // ms, used for u < u_v
  double tau_w_plus = 870.0;    // ms
  double tau_w_minus = 41.0;    // ms
  double tau_d = 0.25;          // ms
  double tau_0 = 12.5;          // ms
  double tau_r = 33.33;         // ms
  double tau_si = 29.0;         // ms
  double u_c = 0.13;
  double u_v = 0.04;
  double u_c_si = 0.85;
  double k = 10.0;
  double V_0 = -85.0;  // mV
  double V_fi = 15.0;  // mV
  double C_m = 1.0;    // uF/cm^2

  double min_time_constant() const {
    return std::min({tau_v_plus, tau_v1_minus, tau_v2_minus, tau_w_plus, tau_w_minus, tau_d, tau_0, tau_r,
                     tau_si});
  }

  void validate() const {
    if (!(min_time_constant() > 0.0)) throw ValidationError("FK params: time constants must be positive");
    if (!(u_c > 0.0 && u_c < 1.0)) throw ValidationError("FK params: need 0 < u_c < 1");
    if (!(C_m > 0.0)) throw ValidationError("FK params: C_m must be positive");
    if (!(V_fi > V_0)) throw ValidationError("FK params: need V_fi > V_0");
  }

  double to_millivolts(double u) const noexcept { return u * (V_fi - V_0) + V_0; }
};

inline void to_json(nlohmann::json& j, const FkParams& p) {
  j = nlohmann::json{{"tau_v_plus", p.tau_v_plus}, {"tau_v1_minus", p.tau_v1_minus},
                     {"tau_v2_minus", p.tau_v2_minus}, {"tau_w_plus", p.tau_w_plus},
                     {"tau_w_minus", p.tau_w_minus}, {"tau_d", p.tau_d},
                     {"tau_0", p.tau_0}, {"tau_r", p.tau_r},
                     {"tau_si", p.tau_si}, {"u_c", p.u_c},
                     {"u_v", p.u_v}, {"u_c_si", p.u_c_si},
                     {"k", p.k}, {"V_0", p.V_0},
                     {"V_fi", p.V_fi}, {"C_m", p.C_m}};
}

inline void from_json(const nlohmann::json& j, FkParams& p) {
  auto get = [&](const char* key, double& dst) {
    if (j.contains(key)) dst = j.at(key).get<double>();
  };
  get("tau_v_plus", p.tau_v_plus);
  get("tau_v1_minus", p.tau_v1_minus);
  get("tau_v2_minus", p.tau_v2_minus);
  get("tau_w_plus", p.tau_w_plus);
  get("tau_w_minus", p.tau_w_minus);
  get("tau_d", p.tau_d);
  get("tau_0", p.tau_0);
  get("tau_r", p.tau_r);
  get("tau_si", p.tau_si);
  get("u_c", p.u_c);
  get("u_v", p.u_v);
  get("u_c_si", p.u_c_si);
  get("k", p.k);
  get("V_0", p.V_0);
  get("V_fi", p.V_fi);
  get("C_m", p.C_m);
}

inline FkParams load_fk_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open FK parameter file " + path);
  FkParams p = nlohmann::json::parse(in).get<FkParams>();
  p.validate();
  return p;
}

struct ReactionRates {
  double du_ion = 0.0;  // 1/ms
  double dv = 0.0;
  double dw = 0.0;
};

/// Heaviside step with H(0) = 1.
constexpr double heaviside(double x) noexcept { return x >= 0.0 ? 1.0 : 0.0; }

/// Ionic right-hand sides: du_ion = -(J_fi + J_so + J_si) and the v, w gate
/// equations. The slow inward current uses the identity
/// 1 + tanh(x) = 2 / (1 + exp(-2x)), which is exact and better conditioned
/// for the strongly negative arguments seen near rest.
inline ReactionRates reaction_rates(double u, double v, double w, const FkParams& p) noexcept {
  const double above = heaviside(u - p.u_c);
  const double below = heaviside(p.u_c - u);
  const double j_fi = -above * (1.0 - u) * (u - p.u_c) * v / p.tau_d;
  const double j_so = below * u / p.tau_0 + above / p.tau_r;
  const double j_si = -w / (p.tau_si * (1.0 + std::exp(-2.0 * p.k * (u - p.u_c_si))));
  const double tau_v_minus = u >= p.u_v ? p.tau_v1_minus : p.tau_v2_minus;
  return {-(j_fi + j_so + j_si), below * (1.0 - v) / tau_v_minus - above * v / p.tau_v_plus,
          below * (1.0 - w) / p.tau_w_minus - above * w / p.tau_w_plus};
}

}  // namespace cardiomap
