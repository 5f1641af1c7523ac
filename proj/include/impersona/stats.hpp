// Copyright 2026 The Impersona Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Analysis mathematics: conjugate-normal belief tracking, the probit
// exploration model, OLS, t-intervals and Pearson chi-square tests.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "impersona/errors.hpp"
#include "impersona/game.hpp"

namespace impersona::stats {

// ---------------------------------------------------------------------------
// Standard normal helpers

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace detail {
// Asymptotic factor S(x) with Phi(x) = phi(x) * S(x) / -x for x << 0.
inline double mills_series(double x) {
  const double r = 1.0 / (x * x);
  return 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r * (1.0 - 9.0 * r))));
}
inline constexpr double kTailCut = -20.0;
}  // namespace detail

inline double log_normal_cdf(double x) {
  if (x > 0) return std::log1p(-0.5 * std::erfc(x / std::numbers::sqrt2));
  if (x > detail::kTailCut) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(-x) +
         std::log(detail::mills_series(x));
}

// phi(x) / Phi(x)
inline double inverse_mills(double x) {
  if (x > detail::kTailCut) return normal_pdf(x) / normal_cdf(x);
  return -x / detail::mills_series(x);
}

// ---------------------------------------------------------------------------
// Belief tracking

struct PosteriorState {
  std::array<double, 2> mean{};
  std::array<double, 2> variance{};

  static PosteriorState prior(const BanditConfig& cfg) {
    return {{cfg.prior_mean, cfg.prior_mean}, {cfg.prior_variance, cfg.prior_variance}};
  }
  double sd(int arm) const { return std::sqrt(variance[arm - 1]); }
  bool operator==(const PosteriorState&) const = default;
};

// Conjugate normal update of the observed arm (1-based); the other arm is
// untouched.
inline PosteriorState kalman_update(const PosteriorState& state, int arm, double reward,
                                    double reward_variance) {
  if (arm != 1 && arm != 2) throw InputError("arm must be 1 or 2");
  if (!(state.variance[0] > 0) || !(state.variance[1] > 0) || !(reward_variance > 0))
    throw NumericError("kalman_update requires positive variances");
  if (!std::isfinite(reward)) throw NumericError("non-finite reward");
  PosteriorState next = state;
  const std::size_t i = static_cast<std::size_t>(arm - 1);
  const double gain = state.variance[i] / (state.variance[i] + reward_variance);
  next.mean[i] = state.mean[i] + gain * (reward - state.mean[i]);
  next.variance[i] = (1.0 - gain) * state.variance[i];
  return next;
}

// ---------------------------------------------------------------------------
// Probit exploration model: P(choose arm 1) = Phi(b1 * V + b2 * RU)

struct ProbitFeatures {
  double V = 0.0;   // mu1 - mu2
  double RU = 0.0;  // sigma1 - sigma2 (standard deviations)
  bool choice = false;  // true iff arm 1 was chosen
  bool operator==(const ProbitFeatures&) const = default;
};

// Features use the posterior before each trial's own reward is observed.
inline std::vector<ProbitFeatures> probit_features(const GameRecord& game,
                                                   const BanditConfig& cfg) {
  std::vector<ProbitFeatures> out;
  out.reserve(game.trials.size());
  auto state = PosteriorState::prior(cfg);
  for (const auto& trial : game.trials) {
    out.push_back({state.mean[0] - state.mean[1], state.sd(1) - state.sd(2),
                   trial.action == 1});
    state = kalman_update(state, trial.action, trial.reward, cfg.reward_variance);
  }
  return out;
}

struct ProbitOptions {
  bool intercept = false;  // the exploration model has none; sensitivity only
  double ridge = 1e-6;
  double tolerance = 1e-8;  // on the gradient norm of the penalised objective
  int max_iterations = 100;
};

struct ProbitFit {
  std::vector<double> beta;  // (b1, b2[, intercept])
  std::vector<double> std_errors;
  double log_likelihood = 0.0;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::size_t n = 0;
  std::vector<double> objective_trace;  // penalised log-likelihood per iterate

  double b1() const { return beta.at(0); }
  double b2() const { return beta.at(1); }
  double se1() const { return std_errors.at(0); }
  double se2() const { return std_errors.at(1); }
};

namespace detail {
inline Eigen::VectorXd row(const ProbitFeatures& f, bool intercept) {
  Eigen::VectorXd x(intercept ? 3 : 2);
  x(0) = f.V;
  x(1) = f.RU;
  if (intercept) x(2) = 1.0;
  return x;
}
}  // namespace detail

inline double probit_log_likelihood(std::span<const ProbitFeatures> data,
                                    const Eigen::VectorXd& beta, bool intercept = false) {
  double ll = 0.0;
  for (const auto& f : data) {
    const double z = detail::row(f, intercept).dot(beta);
    ll += log_normal_cdf(f.choice ? z : -z);
  }
  return ll;
}

inline Eigen::VectorXd probit_gradient(std::span<const ProbitFeatures> data,
                                       const Eigen::VectorXd& beta, bool intercept = false) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(beta.size());
  for (const auto& f : data) {
    const Eigen::VectorXd x = detail::row(f, intercept);
    const double q = f.choice ? 1.0 : -1.0;
    g += q * inverse_mills(q * x.dot(beta)) * x;
  }
  return g;
}

// Hessian of the log-likelihood (negative semi-definite).
inline Eigen::MatrixXd probit_hessian(std::span<const ProbitFeatures> data,
                                      const Eigen::VectorXd& beta, bool intercept = false) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(beta.size(), beta.size());
  for (const auto& f : data) {
    const Eigen::VectorXd x = detail::row(f, intercept);
    const double u = (f.choice ? 1.0 : -1.0) * x.dot(beta);
    const double lam = inverse_mills(u);
    h -= lam * (u + lam) * (x * x.transpose());
  }
  return h;
}

// Maximum likelihood by Newton-Raphson with step halving on a ridge-penalised
// objective. Deterministic for a given input order.
inline ProbitFit fit_probit(std::span<const ProbitFeatures> data, const ProbitOptions& opt = {}) {
  if (data.size() < 2) throw FitError("probit fit needs at least two observations");
  const int p = opt.intercept ? 3 : 2;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  for (const auto& f : data) {
    const auto x = detail::row(f, opt.intercept);
    gram += x * x.transpose();
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
  lu.setThreshold(1e-12);
  if (lu.rank() < p) throw FitError("probit design is rank deficient");

  auto objective = [&](const Eigen::VectorXd& b) {
    return probit_log_likelihood(data, b, opt.intercept) - 0.5 * opt.ridge * b.squaredNorm();
  };

  ProbitFit fit;
  fit.n = data.size();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double obj = objective(beta);
  fit.objective_trace.push_back(obj);
  Eigen::VectorXd grad;
  Eigen::MatrixXd info;
  for (int it = 0;; ++it) {
    grad = probit_gradient(data, beta, opt.intercept) - opt.ridge * beta;
    info = -probit_hessian(data, beta, opt.intercept);
    info.diagonal().array() += opt.ridge;
    fit.gradient_norm = grad.norm();
    fit.iterations = it;
    if (fit.gradient_norm <= opt.tolerance) {
      fit.converged = true;
      break;
    }
    if (it >= opt.max_iterations) break;
    const Eigen::VectorXd direction = info.ldlt().solve(grad);
    double step = 1.0;
    Eigen::VectorXd candidate = beta + direction;
    double cand_obj = objective(candidate);
    // Near the optimum the predicted gain drops below the rounding noise of
    // the objective; the full Newton step is taken there unchecked.
    const double predicted_gain = 0.5 * grad.dot(direction);
    const bool below_noise = predicted_gain <= 1e-13 * (1.0 + std::abs(obj));
    for (int halvings = 0; !below_noise && !(cand_obj >= obj) && halvings < 40; ++halvings) {
      step *= 0.5;
      candidate = beta + step * direction;
      cand_obj = objective(candidate);
    }
    if (!below_noise && !(cand_obj >= obj)) break;
    beta = candidate;
    obj = cand_obj;
    fit.objective_trace.push_back(obj);
  }

  const Eigen::MatrixXd cov = info.inverse();
  fit.beta.assign(beta.data(), beta.data() + p);
  for (int i = 0; i < p; ++i) fit.std_errors.push_back(std::sqrt(cov(i, i)));
  fit.log_likelihood = probit_log_likelihood(data, beta, opt.intercept);
  return fit;
}

inline double probit_predict(const ProbitFit& fit, double V, double RU) {
  double z = fit.b1() * V + fit.b2() * RU;
  if (fit.beta.size() > 2) z += fit.beta[2];
  return normal_cdf(z);
}

// ---------------------------------------------------------------------------
// Ordinary least squares

struct RegressionResult {
  std::vector<std::string> names;  // "intercept" first
  std::vector<double> coefficients;
  std::vector<double> std_errors;
  std::vector<double> t_stats;
  std::vector<double> p_values;
  double r_squared = 0.0;
  std::size_t n = 0;
  int dof = 0;

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw LookupError("no regression term '" + name + "'");
  }
};

inline double two_sided_t_pvalue(double t, int dof) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(dof);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

namespace detail {
inline void zscore(Eigen::Ref<Eigen::VectorXd> v, const char* what) {
  const double mean = v.mean();
  v.array() -= mean;
  const double sd = std::sqrt(v.squaredNorm() / static_cast<double>(v.size() - 1));
  if (!(sd > 0)) throw FitError(std::string("cannot standardize constant ") + what);
  v /= sd;
}
}  // namespace detail

// OLS with an intercept. X holds predictors only. With `standardize`, every
// predictor and the response are z-scored first so slopes are standardized
// betas.
inline RegressionResult fit_ols(Eigen::MatrixXd X, Eigen::VectorXd y, bool standardize,
                                std::vector<std::string> names = {}) {
  const auto n = X.rows();
  const auto p = X.cols();
  if (y.size() != n) throw InputError("fit_ols: X and y row counts differ");
  if (n <= p + 1) throw FitError("fit_ols: not enough observations");
  if (names.empty())
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  if (static_cast<Eigen::Index>(names.size()) != p) throw InputError("fit_ols: name count");

  if (standardize) {
    for (Eigen::Index j = 0; j < p; ++j) detail::zscore(X.col(j), "predictor");
    detail::zscore(y, "response");
  }
  const Eigen::RowVectorXd xbar = X.colwise().mean();
  const double ybar = y.mean();
  const Eigen::MatrixXd Xc = X.rowwise() - xbar;
  const Eigen::VectorXd yc = y.array() - ybar;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xc);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) throw FitError("fit_ols: design matrix is rank deficient");
  const Eigen::VectorXd b = qr.solve(yc);
  const Eigen::VectorXd resid = yc - Xc * b;
  const double sse = resid.squaredNorm();
  const double sst = yc.squaredNorm();
  const int dof = static_cast<int>(n - p - 1);
  const double sigma2 = sse / dof;
  const Eigen::MatrixXd xtx_inv = (Xc.transpose() * Xc).inverse();

  RegressionResult r;
  r.n = static_cast<std::size_t>(n);
  r.dof = dof;
  r.names.push_back("intercept");
  for (auto& nm : names) r.names.push_back(std::move(nm));
  r.coefficients.push_back(ybar - xbar.dot(b));
  r.std_errors.push_back(
      std::sqrt(sigma2 * (1.0 / static_cast<double>(n) + xbar * xtx_inv * xbar.transpose())));
  for (Eigen::Index j = 0; j < p; ++j) {
    r.coefficients.push_back(b(j));
    r.std_errors.push_back(std::sqrt(sigma2 * xtx_inv(j, j)));
  }
  for (std::size_t i = 0; i < r.coefficients.size(); ++i) {
    const double c = r.coefficients[i], se = r.std_errors[i];
    double t;
    if (se > 0) t = c / se;
    else t = (c == 0) ? 0.0 : std::copysign(INFINITY, c);
    r.t_stats.push_back(t);
    r.p_values.push_back(two_sided_t_pvalue(t, dof));
  }
  // A constant response has nothing to explain.
  r.r_squared = sst > 0 ? std::clamp(1.0 - sse / sst, 0.0, 1.0) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Intervals and tests

struct MeanCI {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double half_width() const { return 0.5 * (hi - lo); }
};

// Student-t 95% interval for the mean.
inline MeanCI mean_ci95(std::span<const double> samples) {
  const auto n = samples.size();
  if (n < 2) throw InputError("mean_ci95 needs at least two samples");
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  boost::math::students_t dist(static_cast<double>(n - 1));
  const double tq = boost::math::quantile(boost::math::complement(dist, 0.025));
  const double hw = tq * sd / std::sqrt(static_cast<double>(n));
  return {mean, mean - hw, mean + hw};
}

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 1;
  double p_value = 1.0;
};

inline double chi_square_sf(double x, int dof) {
  if (x <= 0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

using Table2x2 = std::array<std::array<double, 2>, 2>;

// Pearson chi-square test of independence on a 2x2 table (no continuity
// correction).
inline ChiSquareResult chi_square_test(const Table2x2& observed) {
  std::array<double, 2> rows{}, cols{};
  double total = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double o = observed[i][j];
      if (!(o >= 0) || !std::isfinite(o)) throw InputError("chi-square counts must be >= 0");
      rows[i] += o;
      cols[j] += o;
      total += o;
    }
  for (int k = 0; k < 2; ++k)
    if (rows[k] == 0 || cols[k] == 0) throw InputError("chi-square table has a zero margin");
  ChiSquareResult r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double e = rows[i] * cols[j] / total;
      const double d = observed[i][j] - e;
      r.statistic += d * d / e;
    }
  r.p_value = chi_square_sf(r.statistic, r.dof);
  return r;
}

// ---------------------------------------------------------------------------
// Second-level analysis: probit coefficients regressed on persona age.

struct AgeRange {
  int lo = 2;
  int hi = 20;
  bool contains(int age) const { return age >= lo && age <= hi; }
};

struct AgeEffects {
  RegressionResult exploitation;  // b1 ~ age
  RegressionResult exploration;   // b2 ~ age
  std::size_t n_fits = 0;
  std::size_t n_ages = 0;
};

// One point per fit (e.g. per age and template), each weighted equally.
inline AgeEffects age_effect_analysis(std::span<const std::pair<int, ProbitFit>> fits,
                                      AgeRange range, bool standardize = false) {
  std::vector<std::pair<int, const ProbitFit*>> used;
  std::vector<int> ages;
  for (const auto& [age, fit] : fits) {
    if (!range.contains(age)) continue;
    if (!fit.converged)
      throw FitError("probit fit for age " + std::to_string(age) + " did not converge");
    used.emplace_back(age, &fit);
    if (std::find(ages.begin(), ages.end(), age) == ages.end()) ages.push_back(age);
  }
  if (ages.size() < 3)
    throw InputError("age analysis needs at least three ages in [" + std::to_string(range.lo) +
                     ", " + std::to_string(range.hi) + "]");
  const auto m = static_cast<Eigen::Index>(used.size());
  Eigen::MatrixXd X(m, 1);
  Eigen::VectorXd b1(m), b2(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    X(i, 0) = used[i].first;
    b1(i) = used[i].second->b1();
    b2(i) = used[i].second->b2();
  }
  AgeEffects out;
  out.exploitation = fit_ols(X, b1, standardize, {"age"});
  out.exploration = fit_ols(X, b2, standardize, {"age"});
  out.n_fits = used.size();
  out.n_ages = ages.size();
  return out;
}

}  // namespace impersona::stats
