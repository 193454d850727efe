#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace slotalloc::lp {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class Relation { LessEqual, Equal, GreaterEqual };
enum class Status { Optimal, Infeasible, Unbounded, IterationLimit };

std::string to_string(Status s);

struct Variable {
    std::string name;
    double lower = 0.0;
    double upper = kInfinity;
    bool integral = false;
    double objective = 0.0;
};

struct Term {
    int var;
    double coef;
};

struct Constraint {
    std::vector<Term> terms;
    Relation relation = Relation::LessEqual;
    double rhs = 0.0;
    std::string name;
};

/**
 * Maximization problem with bounded variables. Lower bounds must be finite;
 * upper bounds may be +infinity.
 */
class LpProblem {
public:
    int add_variable(std::string name, double lower = 0.0, double upper = kInfinity, bool integral = false,
                     double objective = 0.0);
    int add_constraint(std::vector<Term> terms, Relation rel, double rhs, std::string name = {});

    void set_objective(int var, double coef) { vars_.at(var).objective = coef; }
    void add_objective(int var, double coef) { vars_.at(var).objective += coef; }
    void set_objective_constant(double c) { constant_ = c; }
    void set_bounds(int var, double lower, double upper);
    void set_integral(int var, bool integral) { vars_.at(var).integral = integral; }

    std::size_t variable_count() const noexcept { return vars_.size(); }
    std::size_t constraint_count() const noexcept { return rows_.size(); }
    const Variable& variable(int var) const { return vars_.at(var); }
    const std::vector<Variable>& variables() const noexcept { return vars_; }
    const std::vector<Constraint>& constraints() const noexcept { return rows_; }
    double objective_constant() const noexcept { return constant_; }
    bool has_integral() const;

    /// Throws std::invalid_argument when an invariant is violated.
    void validate() const;

private:
    std::vector<Variable> vars_;
    std::vector<Constraint> rows_;
    double constant_ = 0.0;
};

struct LpSolution {
    Status status = Status::IterationLimit;
    double objective_value = 0.0;
    std::vector<double> values;
    /// Row duals y (sign convention: d_j = c_j - y^T A_j).
    std::vector<double> duals;
    std::vector<double> reduced_costs;
    std::size_t pivots = 0;
    std::size_t nodes = 0;
};

struct SolverOptions {
    std::size_t max_pivots = 50'000;
    std::size_t max_nodes = 1'000'000;
    double gap = 1e-6;
    double integrality_tolerance = 1e-6;
};

/// Bounded-variable primal simplex on a dense tableau; integrality ignored.
LpSolution solve_lp(const LpProblem& p, const SolverOptions& opt = {});

/**
 * Depth-first branch and bound on the most fractional variable (ties by
 * lowest index), exploring the nearer rounding first. A rounding heuristic
 * supplies incumbents until one exists and then every 64th node.
 */
LpSolution solve_milp(const LpProblem& p, const SolverOptions& opt = {});

/// Dual objective b^T y + sum_j (d_j > 0 ? u_j d_j : l_j d_j) of an LP solution.
double dual_objective(const LpProblem& p, const LpSolution& s);

/// Largest violation of rows or bounds by `values`.
double max_violation(const LpProblem& p, const std::vector<double>& values);

/**
 * Plain-text listing:
 *   maximize
 *     <coef> <name> ...            (+ constant)
 *   subject to
 *     <row name>: <coef> <name> ... <= | = | >= <rhs>
 *   bounds
 *     <lower> <= <name> <= <upper> [integer]
 */
void write_lp(std::ostream& out, const LpProblem& p);

} // namespace slotalloc::lp
