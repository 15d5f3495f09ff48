#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rldd/mdp.hpp"

namespace rldd {

struct Entropy {
  double raw;         // nats
  double normalized;  // raw / log(n)
};

/// Shannon entropy with 0 log 0 = 0. A one-element distribution is uniform,
/// so its normalized entropy is reported as 1.
Entropy entropy(const DistributionSA& mu);

/// Fraction of entries with count >= 1.
double coverage(std::span<const double> counts);

/// chi^2(beta || mu) = sum_{mu > 0} beta^2 / mu - 1, or +inf when beta puts
/// mass where mu is zero.
double chi_square(const DistributionSA& beta, const DistributionSA& mu);

/// ||beta / mu||_{2, mu}, computed directly as sqrt(E_mu[(beta/mu)^2]).
double weighted_ratio_norm(const DistributionSA& beta, const DistributionSA& mu);

/// ||beta / mu||_inf over all entries; +inf when beta > 0 = mu somewhere.
double sup_ratio_norm(const DistributionSA& beta, const DistributionSA& mu);

/// Total variation distance 0.5 * sum |p - q|.
double total_variation(std::span<const double> p, std::span<const double> q);

/// C1 = sup_{s,a} max_{s'} p(s'|s,a) / mu(s'), over successors with positive
/// probability. mu_states is a distribution over states.
double c1_coefficient(const TabularMdp& mdp, const DistributionSA& mu_states);

enum class RatioNorm { kSup, kWeighted };

/// Upper bound on n_actions^(n_states * min(m, horizon)) accepted by c_of_m.
inline constexpr double kMaxPolicySequences = 1e7;

/// c(m) = sup over length-m sequences of deterministic stationary policies of
/// ||rho P^{pi_1} ... P^{pi_m} / mu|| in the chosen norm; rho and mu are
/// distributions over state-action pairs.
///
/// Deterministic policies suffice: the ratio is linear in each pi_i and the
/// norm is convex, so the supremum is attained at extreme points of each
/// policy simplex. Distinct intermediate state marginals are deduplicated,
/// and the final policy is chosen in closed form (it only routes the final
/// state marginal to actions), which keeps the result exact.
///
/// Throws InfeasibleError when the instance exceeds kMaxPolicySequences.
double c_of_m(const TabularMdp& mdp, const DistributionSA& rho, const DistributionSA& mu,
              std::size_t m, RatioNorm norm);

struct ConcentrabilityReport {
  struct PerM {
    std::size_t m;
    double c_sup;
    double c_weighted;
  };
  double c1 = 0.0;
  double c2 = 0.0;  // truncated series, sup norm
  double c3 = 0.0;  // truncated series, weighted norm
  /// (1-gamma)^2 * sum_{m > m_max} m gamma^{m-1} c(m_max); valid if c(m) is
  /// non-increasing beyond m_max. Reported, never added to c2/c3.
  double c2_tail_bound = 0.0;
  double c3_tail_bound = 0.0;
  double gamma = 0.0;
  std::size_t m_truncation = 0;
  std::vector<PerM> per_m_values;
};

/// C1, C2 and C3 for (rho, mu). gamma defaults to the MDP's discount; pass an
/// override for undiscounted episodic MDPs, where (1 - gamma)^2 vanishes.
ConcentrabilityReport c2_c3_coefficients(const TabularMdp& mdp, const DistributionSA& rho,
                                         const DistributionSA& mu, std::size_t m_max = 50,
                                         std::optional<double> gamma_override = std::nullopt);

/// State marginal of a state-action distribution.
DistributionSA state_marginal(const DistributionSA& mu_sa, std::size_t n_states, std::size_t n_actions);

/// p0 (x) uniform over actions.
DistributionSA initial_times_uniform_actions(const TabularMdp& mdp);

struct AdversaryPayoff {
  double value;            // max_beta L_mu(beta) = max 1 / mu
  std::size_t argmax_pair; // singleton support of the maximizing beta
};

/// Inner maximization of the robust sampling-distribution game. The
/// maximizer is a point mass on the least-sampled pair.
AdversaryPayoff adversary_payoff(const DistributionSA& mu);

struct DirichletConfig {
  std::size_t n_pairs = 320;
  std::vector<double> alphas{0.1, 0.3, 1.0, 3.0, 10.0, 1e4};
  std::size_t n_dists = 100;
  std::vector<std::size_t> dataset_sizes{50, 200, 1000};
  std::size_t n_peer_dists = 50;
  std::uint64_t seed = 0;
};

struct DirichletRow {
  double alpha;
  double mean_entropy;
  std::vector<double> mean_coverage;  // one per dataset size
  double mean_chi2_to_peers;
};

/// Draws n_dists distributions ~ Dirichlet(alpha * 1) per alpha and reports
/// the mean normalized entropy, the expected coverage of i.i.d. datasets of
/// each size (exact per distribution), and the mean chi^2(peer || mu) to freshly drawn peers. Peers cycle
/// through every alpha in the grid, so each mu is compared with the whole
/// population rather than its own concentration level. Rows follow the order
/// of `alphas`.
std::vector<DirichletRow> dirichlet_study(const DirichletConfig& config);

/// Dirichlet(alpha * 1_n) via normalized Gamma draws.
std::vector<double> sample_dirichlet(std::size_t n, double alpha, Rng& rng);

}  // namespace rldd
