#include "rldd/dist_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rldd/errors.hpp"
#include "rldd/rng.hpp"

namespace rldd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_size(const DistributionSA& a, const DistributionSA& b, const char* what) {
  if (a.size() != b.size()) throw InvalidArgument(std::string(what) + ": size mismatch");
}

}  // namespace

Entropy entropy(const DistributionSA& mu) {
  double h = 0.0;
  for (double p : mu.probs()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  if (mu.size() == 1) return {0.0, 1.0};
  const double normalized = std::clamp(h / std::log(static_cast<double>(mu.size())), 0.0, 1.0);
  return {h, normalized};
}

double coverage(std::span<const double> counts) {
  if (counts.empty()) throw InvalidArgument("coverage: empty count vector");
  std::size_t covered = 0;
  for (double c : counts) {
    if (c < 0.0) throw InvalidArgument("coverage: negative count");
    if (c >= 1.0) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(counts.size());
}

double chi_square(const DistributionSA& beta, const DistributionSA& mu) {
  require_same_size(beta, mu, "chi_square");
  double sum = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu[i] > 0.0) {
      sum += beta[i] * beta[i] / mu[i];
    } else if (beta[i] > 0.0) {
      return kInf;
    }
  }
  return std::max(0.0, sum - 1.0);
}

double weighted_ratio_norm(const DistributionSA& beta, const DistributionSA& mu) {
  require_same_size(beta, mu, "weighted_ratio_norm");
  double expectation = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu[i] > 0.0) {
      const double ratio = beta[i] / mu[i];
      expectation += mu[i] * ratio * ratio;
    } else if (beta[i] > 0.0) {
      return kInf;
    }
  }
  return std::sqrt(expectation);
}

double sup_ratio_norm(const DistributionSA& beta, const DistributionSA& mu) {
  require_same_size(beta, mu, "sup_ratio_norm");
  double best = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu[i] > 0.0) {
      best = std::max(best, beta[i] / mu[i]);
    } else if (beta[i] > 0.0) {
      return kInf;
    }
  }
  return best;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidArgument("total_variation: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - q[i]);
  return 0.5 * sum;
}

double c1_coefficient(const TabularMdp& mdp, const DistributionSA& mu_states) {
  if (mu_states.size() != mdp.n_states()) {
    throw InvalidArgument("c1_coefficient: mu must be a distribution over states");
  }
  double best = 0.0;
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      for (const Successor& succ : mdp.successors(s, a)) {
        if (mu_states[succ.state] == 0.0) return kInf;
        best = std::max(best, succ.prob / mu_states[succ.state]);
      }
    }
  }
  return best;
}

namespace {

using StateMarginal = std::vector<double>;

StateMarginal push_pairs(const TabularMdp& mdp, const DistributionSA& rho) {
  StateMarginal nu(mdp.n_states(), 0.0);
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      const double w = rho[mdp.pair_index(s, a)];
      if (w == 0.0) continue;
      for (const Successor& succ : mdp.successors(s, a)) nu[succ.state] += w * succ.prob;
    }
  }
  return nu;
}

/// Every state marginal reachable from nu in one step under some
/// deterministic policy. Only states carrying mass need an action choice.
void expand(const TabularMdp& mdp, const StateMarginal& nu, std::vector<StateMarginal>& out,
            std::size_t budget) {
  std::vector<std::size_t> support;
  for (std::size_t s = 0; s < nu.size(); ++s) {
    if (nu[s] > 0.0) support.push_back(s);
  }
  std::vector<std::size_t> digit(support.size(), 0);
  while (true) {
    StateMarginal next(mdp.n_states(), 0.0);
    for (std::size_t k = 0; k < support.size(); ++k) {
      const std::size_t s = support[k];
      for (const Successor& succ : mdp.successors(s, digit[k])) next[succ.state] += nu[s] * succ.prob;
    }
    out.push_back(std::move(next));
    if (out.size() > budget) {
      throw InfeasibleError("instance too large for exact c(m): policy-sequence frontier exceeds budget");
    }
    std::size_t k = support.size();
    bool done = true;
    while (k > 0) {
      --k;
      if (++digit[k] < mdp.n_actions()) {
        done = false;
        break;
      }
      digit[k] = 0;
    }
    if (done) return;
  }
}

/// Closed-form choice of the last policy: route each state's mass to the
/// action that maximizes the ratio norm.
double final_norm(const TabularMdp& mdp, const StateMarginal& nu, const DistributionSA& mu,
                  RatioNorm norm) {
  double acc = 0.0;
  for (std::size_t s = 0; s < nu.size(); ++s) {
    if (nu[s] == 0.0) continue;
    double min_mu = kInf;
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) min_mu = std::min(min_mu, mu[mdp.pair_index(s, a)]);
    if (min_mu == 0.0) return kInf;
    if (norm == RatioNorm::kSup) {
      acc = std::max(acc, nu[s] / min_mu);
    } else {
      acc += nu[s] * nu[s] / min_mu;
    }
  }
  return norm == RatioNorm::kSup ? acc : std::sqrt(acc);
}

}  // namespace

double c_of_m(const TabularMdp& mdp, const DistributionSA& rho, const DistributionSA& mu,
              std::size_t m, RatioNorm norm) {
  if (rho.size() != mdp.n_pairs() || mu.size() != mdp.n_pairs()) {
    throw InvalidArgument("c_of_m: rho and mu must be distributions over state-action pairs");
  }
  if (m == 0) return norm == RatioNorm::kSup ? sup_ratio_norm(rho, mu) : weighted_ratio_norm(rho, mu);

  const std::size_t m_eff = std::min<std::size_t>(m, static_cast<std::size_t>(mdp.episode_horizon()));
  const double log_count = static_cast<double>(mdp.n_states() * m_eff) *
                           std::log(static_cast<double>(mdp.n_actions()));
  if (log_count > std::log(kMaxPolicySequences)) {
    std::ostringstream msg;
    msg << "instance too large for exact c(m): " << mdp.n_actions() << "^(" << mdp.n_states()
        << "*" << m_eff << ") policy sequences exceed " << kMaxPolicySequences;
    throw InfeasibleError(msg.str());
  }
  const auto budget = static_cast<std::size_t>(kMaxPolicySequences);

  std::vector<StateMarginal> frontier{push_pairs(mdp, rho)};
  for (std::size_t step = 1; step < m; ++step) {
    std::vector<StateMarginal> next;
    for (const StateMarginal& nu : frontier) expand(mdp, nu, next, budget);
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    frontier = std::move(next);
  }
  double best = 0.0;
  for (const StateMarginal& nu : frontier) best = std::max(best, final_norm(mdp, nu, mu, norm));
  return best;
}

ConcentrabilityReport c2_c3_coefficients(const TabularMdp& mdp, const DistributionSA& rho,
                                         const DistributionSA& mu, std::size_t m_max,
                                         std::optional<double> gamma_override) {
  if (m_max < 1) throw InvalidArgument("c2_c3_coefficients: m_max must be >= 1");
  const double gamma = gamma_override.value_or(mdp.gamma());
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidArgument("c2_c3_coefficients: gamma out of range");

  ConcentrabilityReport report;
  report.gamma = gamma;
  report.m_truncation = m_max;
  report.c1 = c1_coefficient(mdp, state_marginal(mu, mdp.n_states(), mdp.n_actions()));

  const double scale = (1.0 - gamma) * (1.0 - gamma);
  double sum_sup = 0.0;
  double sum_weighted = 0.0;
  double gamma_pow = 1.0;  // gamma^{m-1}
  for (std::size_t m = 1; m <= m_max; ++m) {
    const double cs = c_of_m(mdp, rho, mu, m, RatioNorm::kSup);
    const double cw = c_of_m(mdp, rho, mu, m, RatioNorm::kWeighted);
    report.per_m_values.push_back({m, cs, cw});
    const double w = static_cast<double>(m) * gamma_pow;
    sum_sup += w * cs;
    sum_weighted += w * cw;
    gamma_pow *= gamma;
  }
  // gamma_pow == gamma^{m_max}; tail of sum m gamma^{m-1} past m_max, in closed form.
  const double big_m = static_cast<double>(m_max);
  const double tail_weight =
      gamma < 1.0 ? ((big_m + 1.0) * gamma_pow - big_m * gamma_pow * gamma) / scale : kInf;
  const auto& last = report.per_m_values.back();
  report.c2 = scale * sum_sup;
  report.c3 = scale * sum_weighted;
  report.c2_tail_bound = gamma < 1.0 ? scale * tail_weight * last.c_sup : kInf;
  report.c3_tail_bound = gamma < 1.0 ? scale * tail_weight * last.c_weighted : kInf;
  return report;
}

DistributionSA state_marginal(const DistributionSA& mu_sa, std::size_t n_states, std::size_t n_actions) {
  if (mu_sa.size() != n_states * n_actions) throw InvalidArgument("state_marginal: size mismatch");
  std::vector<double> p(n_states, 0.0);
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) p[s] += mu_sa[s * n_actions + a];
  }
  return DistributionSA::from_counts(p);
}

DistributionSA initial_times_uniform_actions(const TabularMdp& mdp) {
  std::vector<double> p(mdp.n_pairs(), 0.0);
  const double share = 1.0 / static_cast<double>(mdp.n_actions());
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) p[mdp.pair_index(s, a)] = mdp.initial_dist()[s] * share;
  }
  return DistributionSA(std::move(p));
}

AdversaryPayoff adversary_payoff(const DistributionSA& mu) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < mu.size(); ++i) {
    if (mu[i] < mu[arg]) arg = i;
  }
  return {mu[arg] > 0.0 ? 1.0 / mu[arg] : kInf, arg};
}

std::vector<double> sample_dirichlet(std::size_t n, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw InvalidArgument("sample_dirichlet: alpha must be positive");
  std::vector<double> x(n);
  double total = 0.0;
  // Redraw in the (astronomically rare) event that every Gamma draw underflows.
  while (!(total > 0.0)) {
    total = 0.0;
    for (double& v : x) {
      v = rng.gamma(alpha);
      total += v;
    }
  }
  for (double& v : x) v /= total;
  return x;
}

std::vector<DirichletRow> dirichlet_study(const DirichletConfig& config) {
  if (config.n_pairs < 2 || config.n_dists < 1 || config.n_peer_dists < 1 ||
      config.alphas.empty() || config.dataset_sizes.empty()) {
    throw InvalidArgument("dirichlet_study: counts must be >= 1 and n_pairs >= 2");
  }
  for (double a : config.alphas) {
    if (!(a > 0.0)) throw InvalidArgument("dirichlet_study: alphas must be positive");
  }
  for (std::size_t n : config.dataset_sizes) {
    if (n < 1) throw InvalidArgument("dirichlet_study: dataset sizes must be >= 1");
  }

  std::vector<DirichletRow> rows;
  for (std::size_t ai = 0; ai < config.alphas.size(); ++ai) {
    const double alpha = config.alphas[ai];
    Rng rng(derive_seed(config.seed, {ai}));
    DirichletRow row{alpha, 0.0, std::vector<double>(config.dataset_sizes.size(), 0.0), 0.0};
    for (std::size_t d = 0; d < config.n_dists; ++d) {
      const DistributionSA mu(sample_dirichlet(config.n_pairs, alpha, rng));
      row.mean_entropy += entropy(mu).normalized;

      // Expected coverage of an i.i.d. sample of size N: pair i is missed
      // with probability (1 - mu_i)^N.
      for (std::size_t k = 0; k < config.dataset_sizes.size(); ++k) {
        const auto size = static_cast<double>(config.dataset_sizes[k]);
        double covered = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) covered += -std::expm1(size * std::log1p(-mu[i]));
        row.mean_coverage[k] += covered / static_cast<double>(mu.size());
      }

      double chi = 0.0;
      for (std::size_t p = 0; p < config.n_peer_dists; ++p) {
        const double peer_alpha = config.alphas[p % config.alphas.size()];
        const DistributionSA peer(sample_dirichlet(config.n_pairs, peer_alpha, rng));
        chi += chi_square(peer, mu);
      }
      row.mean_chi2_to_peers += chi / static_cast<double>(config.n_peer_dists);
    }
    const auto n = static_cast<double>(config.n_dists);
    row.mean_entropy /= n;
    for (double& c : row.mean_coverage) c /= n;
    row.mean_chi2_to_peers /= n;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace rldd
