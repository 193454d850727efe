#pragma once

#include "slotalloc/exact.hpp"
#include "slotalloc/lp.hpp"
#include "slotalloc/model.hpp"
#include "slotalloc/policy.hpp"
#include "slotalloc/population.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace slotalloc {

/// Feature families; combinations concatenate their features.
enum class BasisKind {
    FullState = 1,   ///< s_{j,w} for every cell
    TimingClass = 2, ///< early / on-time / late counts per queue
    QueueCost = 3,   ///< sum_{w >= u_j} c_{j,w} s_{j,w} per queue
    QueueTotal = 4   ///< sum_w s_{j,w} per queue
};

/**
 * Linear feature map phi(s) = [L s ; 1], the constant entry present only
 * when includes_constant().
 */
class BasisFunction {
public:
    BasisFunction(const Instance& inst, std::vector<BasisKind> parts, bool includes_constant = true);

    /// "1", "phi2", "3+4", ... (case-insensitive "phi" prefix optional).
    static BasisFunction parse(const Instance& inst, const std::string& spec, bool includes_constant = true);

    const std::vector<BasisKind>& parts() const noexcept { return parts_; }
    bool includes_constant() const noexcept { return constant_; }
    std::size_t dimension() const noexcept { return static_cast<std::size_t>(linear_.rows()) + (constant_ ? 1 : 0); }
    /// "Phi1", "Phi3+4".
    std::string label() const;

    /// Linear part, one row per non-constant feature, one column per cell.
    const Eigen::MatrixXd& linear() const noexcept { return linear_; }

    Eigen::VectorXd evaluate(const FractionalState& s) const;
    Eigen::VectorXd evaluate(const State& s) const { return evaluate(s.cast<double>()); }

private:
    std::vector<BasisKind> parts_;
    bool constant_;
    Eigen::MatrixXd linear_;
    std::shared_ptr<const CellLayout> layout_;
};

struct LspiConfig {
    double gamma = 0.9;
    std::size_t dataset_size = 5000;
    double eps = 1e-3;   ///< ridge A_0 = eps I
    double delta = 1e-2; ///< stop when ||theta_n - theta_{n-1}|| < delta
    std::size_t max_iterations = 20;
    std::uint64_t seed = 1;
    /// Total patients per sampled state, drawn uniformly; default from the steady-state load.
    std::optional<std::pair<int, int>> patient_range;
    std::optional<PathwayMode> pathway_mode;
    /// Integrality of the policy-LP during training.
    bool integral_training = false;

    void validate() const;
};

/// Default patient-count range: 50%..150% of sum(lambda) * mean pathway length.
std::pair<int, int> default_patient_range(const Instance& inst, PathwayMode mode);

struct LspiSample {
    std::uint64_t id = 0;
    Population population;
    State state;
};

/**
 * M sampled states: a uniform total patient count, then per patient a random
 * pathway, a uniform current stage and an initial wait. Populations are kept
 * so treated patients can be routed along their pathways.
 */
std::vector<LspiSample> sample_states(const Instance& inst, std::size_t m, std::mt19937_64& rng,
                                      std::pair<int, int> patient_range, PathwayMode mode);

struct PolicyLpResult {
    Action action;
    double objective = 0.0; ///< C(s,a) + gamma theta' phi(E[s'|s,a]) at the returned action
};

/**
 * max_a C(s,a) + gamma theta' phi(E[s'|s,a]) over a <= floor(s) and the
 * capacities of `period`, with the expected next state built from lambda.
 * Relaxed solutions are rounded down.
 */
PolicyLpResult policy_lp(const Instance& inst, const FractionalState& s, const Eigen::VectorXd& theta,
                         const BasisFunction& phi, double gamma, bool integral, int period = 0);

inline Action policy_lp_action(const Instance& inst, const FractionalState& s, const Eigen::VectorXd& theta,
                               const BasisFunction& phi, double gamma, bool integral, int period = 0) {
    return policy_lp(inst, s, theta, phi, gamma, integral, period).action;
}

struct ParamVector {
    Eigen::VectorXd theta;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> trace; ///< ||theta_n - theta_{n-1}|| per iteration
};

/// Off-policy LSPI-V with LSTD on a fixed dataset; exogenous draws are fresh each iteration.
ParamVector run_lspi(const Instance& inst, const LspiConfig& cfg, const BasisFunction& phi,
                     const std::vector<LspiSample>& dataset);
/// Samples the dataset from cfg, then trains.
ParamVector run_lspi(const Instance& inst, const LspiConfig& cfg, const BasisFunction& phi);

/// Deployed policy-LP policy for a learned parameter vector.
class LspiPolicy final : public Policy {
public:
    LspiPolicy(BasisFunction phi, Eigen::VectorXd theta, double gamma, bool integral = true);

    std::string name() const override { return "lspi"; }
    const Eigen::VectorXd& theta() const noexcept { return theta_; }

protected:
    Action do_decide(const Instance& inst, const FractionalState& s, int period) const override;

private:
    BasisFunction phi_;
    Eigen::VectorXd theta_;
    double gamma_;
    bool integral_;
};

std::string serialize_params(const ParamVector& p, const BasisFunction& phi, const LspiConfig& cfg);
void save_params(const std::filesystem::path& path, const ParamVector& p, const BasisFunction& phi,
                 const LspiConfig& cfg);

struct LoadedParams {
    ParamVector params;
    std::string basis;
    bool includes_constant = true;
    double gamma = 0.0;
};
LoadedParams load_params(const std::filesystem::path& path);

struct RegressionFit {
    Eigen::VectorXd theta; ///< zero for feature columns that never vary from 0
    double mse = 0.0;      ///< mean squared training error
};

/// Least-squares fit of V* on the given state indices; throws RankDeficientError.
RegressionFit fit_theta_regression(const BoundedStateSpace& space, const ValueTable& values, const BasisFunction& phi,
                                   const std::vector<std::size_t>& states);

/// Mean squared error of theta' phi against V* on the given states.
double regression_mse(const BoundedStateSpace& space, const ValueTable& values, const BasisFunction& phi,
                      const Eigen::VectorXd& theta, const std::vector<std::size_t>& states);

struct BasisScore {
    std::string basis;
    bool fittable = true;
    double mean_mse = 0.0;
    std::vector<double> fold_mse;
};

/**
 * k-fold cross-validation over every state of the space. Results are sorted
 * by mean test MSE; unfittable bases go last.
 */
std::vector<BasisScore> kfold_basis_selection(const BoundedStateSpace& space, const ValueTable& values,
                                              const std::vector<BasisFunction>& bases, std::size_t k,
                                              std::uint64_t seed);

} // namespace slotalloc
