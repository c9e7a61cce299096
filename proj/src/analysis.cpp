#include "dtdlab/analysis.hpp"

#include "dtdlab/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace dtdlab {
namespace {

constexpr double kLog2 = 0.69314718055994530942;
constexpr double kFitFloor = 1e-10;
constexpr std::size_t kFitCap = 100000;
constexpr std::size_t kMixingCap = 1000000;

double tv_from(const Matrix& Pk, const Vector& pi) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < Pk.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < Pk.cols(); ++j) s += std::abs(Pk(i, j) - pi[j]);
    worst = std::max(worst, 0.5 * s);
  }
  return worst;
}

double one_minus_gl(double gamma, double lambda) {
  const double v = 1.0 - gamma * lambda;
  if (!(v > 0.0)) throw Error("gamma * lambda must be below 1");
  return v;
}

// (50R^2 + 32(R+1)^3 + 100(R + ||theta*||)^2)
double psi_bracket(const BoundInputs& in) {
  const double R = in.R;
  const double t = in.theta_star_norm;
  return 50.0 * R * R + 32.0 * std::pow(R + 1.0, 3) + 100.0 * (R + t) * (R + t);
}

}  // namespace

ErrorMetrics error_metrics(const Matrix& Theta, const Vector& theta_star) {
  if (Theta.cols() != theta_star.size() || Theta.rows() == 0) throw Error("error_metrics: dimension mismatch");
  const double n = static_cast<double>(Theta.rows());
  const Vector mean = Theta.colwise().sum().transpose() / n;
  ErrorMetrics m;
  for (Eigen::Index v = 0; v < Theta.rows(); ++v) {
    m.mse += (Theta.row(v).transpose() - theta_star).squaredNorm();
    m.consensus_error += (Theta.row(v).transpose() - mean).squaredNorm();
  }
  m.mse /= n;
  m.consensus_error = std::sqrt(m.consensus_error);
  return m;
}

std::vector<double> tv_diagnostic(const MarkovChain& chain, const Vector& pi, std::size_t max_k) {
  const auto n = chain.P.rows();
  std::vector<double> d;
  d.reserve(max_k + 1);
  Matrix Pk = Matrix::Identity(n, n);
  d.push_back(tv_from(Pk, pi));
  for (std::size_t k = 1; k <= max_k; ++k) {
    Pk = Pk * chain.P;
    d.push_back(tv_from(Pk, pi));
  }
  return d;
}

double fit_mixing_constant(const MarkovChain& chain, const Vector& pi) {
  const auto n = chain.P.rows();
  Matrix Pk = Matrix::Identity(n, n);
  double skk = 0.0;
  double skl = 0.0;
  for (std::size_t k = 1;; ++k) {
    if (k > kFitCap) throw Error("mixing diagnostic does not decay within " + std::to_string(kFitCap) + " steps");
    Pk = Pk * chain.P;
    const double d = tv_from(Pk, pi);
    if (d <= kFitFloor) break;
    const double kk = static_cast<double>(k);
    skk += kk * kk;
    skl += kk * std::log(d);
  }
  if (skk == 0.0) return 0.0;
  // log d = -k / C  =>  slope = skl / skk = -1 / C.
  return -skk / skl;
}

std::size_t tv_mixing_steps(const MarkovChain& chain, const Vector& pi, double alpha) {
  if (!(alpha > 0.0)) throw Error("mixing time needs alpha > 0");
  const auto n = chain.P.rows();
  Matrix Pk = Matrix::Identity(n, n);
  std::size_t k = 0;
  while (tv_from(Pk, pi) > alpha) {
    if (++k > kMixingCap) throw Error("mixing time exceeds " + std::to_string(kMixingCap) + " steps");
    Pk = Pk * chain.P;
  }
  return k;
}

MixingEstimate tv_mixing_time(const MarkovChain& chain, const Vector& pi, double alpha) {
  MixingEstimate est;
  est.alpha = alpha;
  est.method = MixingMethod::tv_state_chain;
  est.tau = tv_mixing_steps(chain, pi, alpha);
  est.C = fit_mixing_constant(chain, pi);
  return est;
}

std::size_t MixingModel::tau(double alpha) const {
  if (!(alpha > 0.0)) throw Error("mixing model needs alpha > 0");
  const double t = C * std::log(1.0 / alpha);
  if (!(t > 0.0)) return 0;
  // Guard against log rounding pushing an exact integer over the edge.
  return static_cast<std::size_t>(std::ceil(t - 1e-12));
}

MixingCheck mc_mixing_check(const MultiAgentMdp& mdp, const FeatureMap& fm, const FixedPointOracle& oracle,
                            double alpha, std::size_t tau, std::size_t num_mc, std::uint64_t seed) {
  if (num_mc < 2) throw Error("mc_mixing_check needs at least two samples");
  const std::size_t S = mdp.num_states();
  const auto L = static_cast<Eigen::Index>(fm.num_features());
  const double decay = oracle.gamma * oracle.lambda;
  const Matrix rbar = mdp.mean_reward();
  // Warm-up long enough that the trace forgets its start to double precision.
  std::size_t warm = 0;
  if (decay > 0.0) warm = static_cast<std::size_t>(std::min(1e5, std::ceil(std::log(1e-17) / std::log(decay))));

  Rng rng(seed);
  MixingCheck out;
  out.worst_margin = std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(num_mc);
  Vector z(L), diff(L);
  Matrix sumA(L, L), sqA(L, L), Ak(L, L);
  Vector sumb(L), sqb(L), bk(L);

  for (std::size_t s0 = 0; s0 < S; ++s0) {
    for (std::size_t s1 = 0; s1 < S; ++s1) {
      if (!(mdp.chain.P(static_cast<Eigen::Index>(s0), static_cast<Eigen::Index>(s1)) > 0.0)) continue;
      ++out.pairs;
      sumA.setZero();
      sqA.setZero();
      sumb.setZero();
      sqb.setZero();
      for (std::size_t m = 0; m < num_mc; ++m) {
        z.setZero();
        if (warm > 0) {
          std::size_t w = sample_from(oracle.dist.pi, rng);
          for (std::size_t t = 0; t < warm; ++t) {
            z = decay * z + fm.row(w).transpose();
            w = sample_next_state(mdp.chain, w, rng);
          }
          z *= decay;
        }
        z += fm.row(s0).transpose();
        std::size_t s = s0;
        std::size_t next = s1;
        for (std::size_t t = 0; t < tau; ++t) {
          s = next;
          next = sample_next_state(mdp.chain, s, rng);
          z = decay * z + fm.row(s).transpose();
        }
        diff = oracle.gamma * fm.row(next).transpose() - fm.row(s).transpose();
        Ak.noalias() = z * diff.transpose();
        bk = rbar(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(next)) * z;
        sumA += Ak;
        sqA += Ak.cwiseProduct(Ak);
        sumb += bk;
        sqb += bk.cwiseProduct(bk);
      }
      const Matrix meanA = sumA / n;
      const Vector meanb = sumb / n;
      const Matrix varA = ((sqA / n - meanA.cwiseProduct(meanA)) * (n / (n - 1.0))).cwiseMax(0.0);
      const Vector varb = ((sqb / n - meanb.cwiseProduct(meanb)) * (n / (n - 1.0))).cwiseMax(0.0);
      const double seA = std::sqrt(varA.sum() / n);
      const double seb = std::sqrt(varb.sum() / n);
      Eigen::JacobiSVD<Matrix> svd(meanA - oracle.A);
      const double devA = svd.singularValues()(0);
      const double devb = (meanb - oracle.b).norm();
      out.max_dev_A = std::max(out.max_dev_A, devA);
      out.max_dev_b = std::max(out.max_dev_b, devb);
      const double margin = std::min(alpha + 3.0 * seA - devA, alpha + 3.0 * seb - devb);
      if (margin < out.worst_margin) {
        out.worst_margin = margin;
        out.worst_from = s0;
        out.worst_to = s1;
      }
      if (margin < 0.0) out.passed = false;
    }
  }
  return out;
}

double delta(double sigma2, double alpha, double gamma, double lambda) {
  const double d = sigma2 + (1.0 + gamma) / one_minus_gl(gamma, lambda) * alpha;
  if (!(d < 1.0)) throw Error("step size too large for consensus contraction (delta = " + format_double(d) + ")");
  return d;
}

PsiConstants psi_constant_step(const BoundInputs& in) {
  const double g = in.gamma;
  const double q = (1.0 + g) * (1.0 + g) / std::pow(one_minus_gl(g, in.lambda), 2);
  const double tau = static_cast<double>(in.tau);
  const double t2 = in.theta_star_norm * in.theta_star_norm;
  PsiConstants p;
  p.first = 4.0 * (36.0 + (229.0 + 42.0 * in.R) * q * tau);
  const double lead = in.psi2_form == Psi2Form::derivation ? 2.0 : 1.0;
  p.second = t2 * p.first + 2.0 * (32.0 * in.R * in.R + 2.0 * t2 + 1.0) + lead * psi_bracket(in) * q * tau;
  return p;
}

PsiConstants psi_diminishing_step(const BoundInputs& in) {
  const double g = in.gamma;
  const double q = (1.0 + g) * (1.0 + g) / std::pow(one_minus_gl(g, in.lambda), 2);
  const double t2 = in.theta_star_norm * in.theta_star_norm;
  PsiConstants p;
  p.first = 4.0 * (36.0 + (229.0 + 42.0 * in.R) * q);
  p.second = t2 * p.first + 2.0 * (32.0 * in.R * in.R + 2.0 * t2 + 1.0 + psi_bracket(in) * q);
  return p;
}

int StepsizeVerdict::failed_clause() const {
  for (int i = 0; i < 3; ++i)
    if (!pass[i]) return i + 1;
  return 0;
}

std::string StepsizeVerdict::describe() const {
  std::string s = "alpha = " + format_double(alpha) + ", tau = " + std::to_string(tau);
  static const char* names[3] = {"consensus", "mixing", "curvature"};
  for (int i = 0; i < 3; ++i)
    s += std::string("; ") + names[i] + " bound " + format_double(bounds[i]) + (pass[i] ? " ok" : " FAILED");
  return s;
}

StepsizeVerdict constant_stepsize_conditions(const BoundInputs& in) {
  const double c = one_minus_gl(in.gamma, in.lambda);
  StepsizeVerdict v;
  v.alpha = in.alpha;
  v.tau = in.tau;
  v.bounds[0] = c * (1.0 - in.sigma2) / (1.0 + in.gamma);
  v.bounds[1] = in.tau == 0 ? std::numeric_limits<double>::infinity()
                            : c * kLog2 / ((1.0 + in.gamma) * static_cast<double>(in.tau));
  v.bounds[2] = in.sigma_min / psi_constant_step(in).first;
  for (int i = 0; i < 3; ++i) v.pass[i] = in.alpha > 0.0 && in.alpha < v.bounds[i];
  return v;
}

StepsizeVerdict auto_constant_step(BoundInputs in, const TauFunction& tau_of, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("grid ratio must lie in (0, 1)");
  const double top = one_minus_gl(in.gamma, in.lambda) * (1.0 - in.sigma2) / (1.0 + in.gamma);
  for (double a = top * ratio; a > 1e-15; a *= ratio) {
    in.alpha = a;
    in.tau = tau_of(a);
    const auto v = constant_stepsize_conditions(in);
    if (v.ok()) return v;
  }
  throw Error("conditions unsatisfiable at this scale: no constant step above 1e-15 passes");
}

KStarResult find_kstar(const BoundInputs& in, const TauFunction& tau_of, std::size_t cap) {
  if (!(in.alpha0 > 0.0)) throw Error("find_kstar: alpha0 must be positive");
  KStarResult r;
  r.delta = delta(in.sigma2, in.alpha, in.gamma, in.lambda);
  const double c = one_minus_gl(in.gamma, in.lambda);
  r.clause2_bound = std::min(c * kLog2 / (1.0 + in.gamma), in.sigma_min / psi_diminishing_step(in).first);
  auto step = [&](std::size_t k) { return in.alpha0 / (static_cast<double>(k) + 1.0); };
  // The second clause behaves like log(k)/k, which decreases once
  // (k + 1)/alpha0 exceeds e; scan well past that point and the last violation.
  const double turn = in.alpha0 * std::exp(2.0);
  bool any = false;
  std::size_t last = 0;
  for (std::size_t k = 0;; ++k) {
    if (k >= cap) throw Error("conditions unsatisfiable at this scale: K* exceeds " + std::to_string(cap));
    const double ak = step(k);
    bool bad = ak > in.alpha;
    if (!bad) {
      const std::size_t t = tau_of(ak);
      const std::size_t back = t > k ? 0 : k - t;
      bad = static_cast<double>(t) * step(back) > r.clause2_bound;
    }
    if (bad) {
      any = true;
      last = k;
    }
    const std::size_t horizon = any ? 4 * (last + 1) : 0;
    if (k >= horizon && k >= 100000 && static_cast<double>(k) + 1.0 > turn) break;
  }
  r.kstar = any ? last + 1 : 0;
  return r;
}

double variance_floor(double R, double alpha, double gamma, double lambda, double delta) {
  const double c = one_minus_gl(gamma, lambda);
  return 4.0 * R * R * alpha * alpha / (c * c * (1.0 - delta) * (1.0 - delta));
}

double theorem1_limit(const BoundInputs& in) {
  const double d = delta(in.sigma2, in.alpha, in.gamma, in.lambda);
  return variance_floor(in.R, in.alpha, in.gamma, in.lambda, d) +
         2.0 * psi_constant_step(in).second * in.alpha / in.sigma_min;
}

double theorem1_rhs(const BoundInputs& in, std::size_t k) {
  if (k < in.tau) throw Error("theorem1_rhs: requires k >= tau");
  const auto v = constant_stepsize_conditions(in);
  if (!v.ok()) throw Error("theorem1_rhs: step-size conditions fail (" + v.describe() + ")");
  const double d = delta(in.sigma2, in.alpha, in.gamma, in.lambda);
  const double kk = static_cast<double>(k);
  const double N = static_cast<double>(in.num_agents);
  const double consensus = 4.0 * in.init_Theta_sq / N * std::pow(d, 2.0 * kk);
  const double tr = in.theta_star_norm + in.R;
  const double bias = (20.0 * in.init_mean_err_sq + 16.0 * tr * tr) *
                      std::pow(1.0 - in.sigma_min * in.alpha, kk - static_cast<double>(in.tau));
  return consensus + bias + theorem1_limit(in);
}

double theorem2_rhs(const BoundInputs& in, std::size_t k) {
  if (k < in.kstar) throw Error("theorem2_rhs: requires k >= K*");
  if (!(in.alpha0 * in.sigma_min >= 1.0 - 1e-12)) throw Error("theorem2_rhs: requires alpha0 >= 1/sigma_min");
  const double d = delta(in.sigma2, in.alpha, in.gamma, in.lambda);
  const double c = one_minus_gl(in.gamma, in.lambda);
  const double kk = static_cast<double>(k);
  const double K = static_cast<double>(in.kstar);
  const double N = static_cast<double>(in.num_agents);
  const double noise = in.R * in.R / (c * c * (1.0 - d) * (1.0 - d));
  const double lg = std::log((kk + 1.0) / in.alpha0);
  return 6.0 * in.init_Theta_sq / N * std::pow(d, 2.0 * kk - 2.0 * K) +
         2.0 * K / (kk + 1.0) * in.init_mean_err_sq + 6.0 * noise * in.alpha0 * in.alpha0 * std::pow(d, kk) +
         6.0 * noise / ((kk + 1.0) * (kk + 1.0)) +
         2.0 * psi_diminishing_step(in).second * in.C * in.alpha0 * lg * lg / (kk + 1.0);
}

double consensus_bound_constant(const BoundInputs& in, std::size_t k) {
  const double d = delta(in.sigma2, in.alpha, in.gamma, in.lambda);
  const double c = one_minus_gl(in.gamma, in.lambda);
  return std::pow(d, static_cast<double>(k)) * in.init_Theta_norm +
         std::sqrt(static_cast<double>(in.num_agents)) * in.R * in.alpha / (c * (1.0 - d));
}

double consensus_bound_diminishing(const BoundInputs& in, std::size_t k) {
  if (k < in.kstar) throw Error("consensus_bound_diminishing: requires k >= K*");
  const double d = delta(in.sigma2, in.alpha, in.gamma, in.lambda);
  const double c = one_minus_gl(in.gamma, in.lambda);
  const double kk = static_cast<double>(k);
  const double scale = std::sqrt(static_cast<double>(in.num_agents)) * in.R / (c * (1.0 - d));
  const double half_step = in.alpha0 / (kk / 2.0 + 1.0);
  return std::pow(d, kk - static_cast<double>(in.kstar)) * in.init_Theta_norm +
         scale * in.alpha0 * std::pow(d, kk / 2.0) + scale * half_step;
}

bool drift_precondition(std::size_t tau, double gamma, double lambda, double alpha) {
  return alpha * static_cast<double>(tau) <= one_minus_gl(gamma, lambda) * kLog2 / (1.0 + gamma);
}

std::vector<DriftRow> drift_monitor(const Matrix& mean_history, const std::vector<std::size_t>& ks,
                                    std::size_t tau, double gamma, double lambda, double R, double alpha) {
  if (!drift_precondition(tau, gamma, lambda, alpha))
    throw Error("drift_monitor: requires alpha tau <= (1 - gamma lambda) log 2 / (1 + gamma)");
  const double c = one_minus_gl(gamma, lambda);
  const double at = alpha * static_cast<double>(tau);
  auto leq = [](double lhs, double rhs) { return lhs <= rhs * (1.0 + 1e-12) + 1e-15; };
  std::vector<DriftRow> rows;
  for (std::size_t k : ks) {
    if (k < tau) continue;
    if (k >= static_cast<std::size_t>(mean_history.cols()))
      throw Error("drift_monitor: history does not reach k = " + std::to_string(k));
    const Vector now = mean_history.col(static_cast<Eigen::Index>(k));
    const Vector then = mean_history.col(static_cast<Eigen::Index>(k - tau));
    DriftRow r;
    r.k = k;
    r.lhs = (now - then).norm();
    r.lhs_sq = r.lhs * r.lhs;
    r.rhs1 = 2.0 * (1.0 + gamma) * at / c * then.norm() + 2.0 * R * at / c;
    r.rhs2 = 6.0 * (1.0 + gamma) * at / c * now.norm() + 6.0 * R * at / c;
    r.rhs3 = 72.0 * (1.0 + gamma) * (1.0 + gamma) * at * at / (c * c) * now.squaredNorm() +
             72.0 * R * R * at * at / (c * c);
    r.rhs3_loose = 8.0 * now.squaredNorm() + 8.0 * R * R;
    r.ok = leq(r.lhs, r.rhs1) && leq(r.lhs, r.rhs2) && leq(r.lhs_sq, r.rhs3) && leq(r.rhs3, r.rhs3_loose);
    rows.push_back(r);
  }
  return rows;
}

bool dominated(double empirical, double rhs) { return empirical <= rhs * 1.05; }

void write_bound_report_csv(std::ostream& out, const BoundReport& report) {
  out << "k,mse,mse_se,theorem_rhs,mse_ok,consensus_error,consensus_rhs,consensus_worst_ratio,consensus_ok,"
         "drift_lhs,drift_rhs,drift_ok\n";
  for (const auto& r : report.rows) {
    out << r.k << ',' << format_double(r.mse) << ',' << format_double(r.mse_se) << ','
        << format_double(r.theorem_rhs) << ',' << (r.mse_ok ? 1 : 0) << ',' << format_double(r.consensus_error) << ','
        << format_double(r.consensus_rhs) << ',' << format_double(r.consensus_worst_ratio) << ','
        << (r.consensus_ok ? 1 : 0) << ',' << format_double(r.drift_lhs) << ',' << format_double(r.drift_rhs) << ','
        << (r.drift_ok ? 1 : 0) << '\n';
  }
}

}  // namespace dtdlab
