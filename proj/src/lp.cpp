#include "slotalloc/lp.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace slotalloc::lp {

std::string to_string(Status s) {
    switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
    case Status::IterationLimit: return "iteration_limit";
    }
    return "unknown";
}

int LpProblem::add_variable(std::string name, double lower, double upper, bool integral, double objective) {
    vars_.push_back({std::move(name), lower, upper, integral, objective});
    return static_cast<int>(vars_.size()) - 1;
}

int LpProblem::add_constraint(std::vector<Term> terms, Relation rel, double rhs, std::string name) {
    rows_.push_back({std::move(terms), rel, rhs, std::move(name)});
    return static_cast<int>(rows_.size()) - 1;
}

void LpProblem::set_bounds(int var, double lower, double upper) {
    vars_.at(var).lower = lower;
    vars_.at(var).upper = upper;
}

bool LpProblem::has_integral() const {
    return std::any_of(vars_.begin(), vars_.end(), [](const Variable& v) { return v.integral; });
}

void LpProblem::validate() const {
    for (const auto& v : vars_) {
        if (!std::isfinite(v.lower)) throw std::invalid_argument("variable " + v.name + ": lower bound must be finite");
        if (std::isnan(v.upper) || v.upper < v.lower)
            throw std::invalid_argument("variable " + v.name + ": lower bound exceeds upper bound");
        if (!std::isfinite(v.objective)) throw std::invalid_argument("variable " + v.name + ": non-finite objective");
    }
    for (const auto& c : rows_) {
        if (!std::isfinite(c.rhs)) throw std::invalid_argument("constraint " + c.name + ": non-finite rhs");
        for (const auto& t : c.terms) {
            if (t.var < 0 || static_cast<std::size_t>(t.var) >= vars_.size())
                throw std::invalid_argument("constraint " + c.name + ": undeclared variable");
            if (!std::isfinite(t.coef)) throw std::invalid_argument("constraint " + c.name + ": non-finite coefficient");
        }
    }
}

namespace {

constexpr double kPivotTol = 1e-9;
constexpr double kCostTol = 1e-9;
constexpr double kDropTol = 1e-13;
constexpr double kDegenerateStep = 1e-12;

/**
 * Dense tableau B^{-1}[A | I] with explicit basic values. Nonbasic columns
 * sit at 0 or at their (shifted) upper bound.
 */
class Tableau {
public:
    Tableau(std::size_t rows, std::size_t cols)
        : m_(rows), n_(cols), t_(rows * cols, 0.0), beta_(rows, 0.0), basis_(rows, 0), upper_(cols, kInfinity),
          at_upper_(cols, 0), basic_(cols, 0), cost_(cols, 0.0), d_(cols, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return t_[i * n_ + j]; }
    double at(std::size_t i, std::size_t j) const { return t_[i * n_ + j]; }

    void set_basic(std::size_t row, std::size_t col, double value) {
        basis_[row] = col;
        basic_[col] = 1;
        beta_[row] = value;
    }

    void compute_reduced_costs() {
        d_ = cost_;
        for (std::size_t i = 0; i < m_; ++i) {
            const double cb = cost_[basis_[i]];
            if (cb == 0.0) continue;
            const double* r = &t_[i * n_];
            for (std::size_t j = 0; j < n_; ++j) d_[j] -= cb * r[j];
        }
        for (std::size_t i = 0; i < m_; ++i) d_[basis_[i]] = 0.0;
    }

    /// Exchange basis at (r, q); basic values must be updated by the caller.
    void pivot(std::size_t r, std::size_t q) {
        double* pr = &t_[r * n_];
        const double inv = 1.0 / pr[q];
        nz_.clear();
        for (std::size_t j = 0; j < n_; ++j) {
            if (pr[j] == 0.0) continue;
            pr[j] *= inv;
            if (std::abs(pr[j]) < kDropTol) pr[j] = 0.0;
            else nz_.push_back(j);
        }
        pr[q] = 1.0;
        for (std::size_t i = 0; i < m_; ++i) {
            if (i == r) continue;
            double* ri = &t_[i * n_];
            const double f = ri[q];
            if (f == 0.0) continue;
            for (std::size_t j : nz_) {
                double v = ri[j] - f * pr[j];
                ri[j] = std::abs(v) < kDropTol ? 0.0 : v;
            }
            ri[q] = 0.0;
        }
        const double fd = d_[q];
        if (fd != 0.0) {
            for (std::size_t j : nz_) d_[j] -= fd * pr[j];
        }
        d_[q] = 0.0;
        basic_[basis_[r]] = 0;
        basic_[q] = 1;
        basis_[r] = q;
    }

    /// Primal simplex on the current cost vector.
    Status optimize(std::size_t max_pivots, std::size_t& pivots) {
        bool bland = false;
        while (true) {
            std::size_t q = n_;
            double best = 0.0;
            for (std::size_t j = 0; j < n_; ++j) {
                if (basic_[j] || upper_[j] <= 0.0) continue;
                const double dj = d_[j];
                if (at_upper_[j] ? dj >= -kCostTol : dj <= kCostTol) continue;
                if (bland) {
                    q = j;
                    break;
                }
                if (std::abs(dj) > best) {
                    best = std::abs(dj);
                    q = j;
                }
            }
            if (q == n_) return Status::Optimal;
            if (pivots >= max_pivots) return Status::IterationLimit;

            const double dir = at_upper_[q] ? -1.0 : 1.0;
            double step = upper_[q];
            std::size_t r = m_;
            bool leave_to_upper = false;
            double r_alpha = 0.0;
            for (std::size_t i = 0; i < m_; ++i) {
                const double alpha = t_[i * n_ + q];
                if (std::abs(alpha) <= kPivotTol) continue;
                const std::size_t k = basis_[i];
                double ti;
                bool to_upper;
                if (dir * alpha > 0.0) {
                    ti = beta_[i] / (dir * alpha);
                    to_upper = false;
                } else {
                    if (upper_[k] == kInfinity) continue;
                    ti = (upper_[k] - beta_[i]) / (-dir * alpha);
                    to_upper = true;
                }
                if (ti < 0.0) ti = 0.0;
                const bool strict = ti < step - kDegenerateStep;
                const bool tie = !strict && r != m_ && ti <= step + kDegenerateStep &&
                                 (bland ? basis_[i] < basis_[r] : std::abs(alpha) > std::abs(r_alpha));
                if (strict || tie) {
                    step = strict ? ti : std::min(step, ti);
                    r = i;
                    leave_to_upper = to_upper;
                    r_alpha = alpha;
                }
            }
            if (r == m_ && step == kInfinity) return Status::Unbounded;
            ++pivots;

            for (std::size_t i = 0; i < m_; ++i) {
                const double alpha = t_[i * n_ + q];
                if (alpha != 0.0) beta_[i] -= dir * step * alpha;
            }
            if (r == m_) {
                at_upper_[q] = !at_upper_[q];
            } else {
                const std::size_t leaving = basis_[r];
                const double entering_value = at_upper_[q] ? upper_[q] - step : step;
                at_upper_[leaving] = leave_to_upper ? 1 : 0;
                at_upper_[q] = 0;
                pivot(r, q);
                beta_[r] = entering_value;
            }
            clean_values();
            bland = step <= kDegenerateStep;
        }
    }

    void clean_values() {
        for (std::size_t i = 0; i < m_; ++i) {
            const double u = upper_[basis_[i]];
            if (beta_[i] < 0.0 && beta_[i] > -1e-9) beta_[i] = 0.0;
            if (u != kInfinity && beta_[i] > u && beta_[i] < u + 1e-9) beta_[i] = u;
        }
    }

    std::size_t rows() const { return m_; }
    std::size_t cols() const { return n_; }
    std::vector<double>& beta() { return beta_; }
    std::vector<std::size_t>& basis() { return basis_; }
    std::vector<double>& upper() { return upper_; }
    std::vector<char>& at_upper() { return at_upper_; }
    std::vector<char>& basic() { return basic_; }
    std::vector<double>& cost() { return cost_; }
    std::vector<double>& reduced() { return d_; }

private:
    std::size_t m_, n_;
    std::vector<double> t_;
    std::vector<double> beta_;
    std::vector<std::size_t> basis_;
    std::vector<double> upper_;
    std::vector<char> at_upper_;
    std::vector<char> basic_;
    std::vector<double> cost_;
    std::vector<double> d_;
    std::vector<std::size_t> nz_;
};

LpSolution solve_bounded(const LpProblem& p, const std::vector<double>& lower, const std::vector<double>& upper,
                         const SolverOptions& opt) {
    const std::size_t n = p.variable_count();
    const auto& rows = p.constraints();
    const std::size_t m = rows.size();
    LpSolution sol;
    sol.values.assign(n, 0.0);

    for (std::size_t j = 0; j < n; ++j) {
        if (upper[j] < lower[j] - 1e-12) {
            sol.status = Status::Infeasible;
            return sol;
        }
    }

    // Dense shifted rows: sum a_ij x'_j (rel) b_i - sum a_ij l_j, scaled so rhs >= 0.
    std::vector<double> dense(m * n, 0.0);
    std::vector<double> rhs(m);
    std::vector<Relation> rel(m);
    std::vector<double> sign(m, 1.0);
    for (std::size_t i = 0; i < m; ++i) {
        double b = rows[i].rhs;
        for (const auto& t : rows[i].terms) {
            dense[i * n + t.var] += t.coef;
            b -= t.coef * lower[t.var];
        }
        rel[i] = rows[i].relation;
        if (b < 0.0) {
            sign[i] = -1.0;
            b = -b;
            for (std::size_t j = 0; j < n; ++j) dense[i * n + j] = -dense[i * n + j];
            if (rel[i] == Relation::LessEqual) rel[i] = Relation::GreaterEqual;
            else if (rel[i] == Relation::GreaterEqual) rel[i] = Relation::LessEqual;
        }
        rhs[i] = b;
    }

    // Column layout: structural | one slack/surplus per inequality | one artificial per >=/= row.
    std::vector<std::size_t> logical(m, SIZE_MAX), artificial(m, SIZE_MAX);
    std::size_t cols = n;
    for (std::size_t i = 0; i < m; ++i)
        if (rel[i] != Relation::Equal) logical[i] = cols++;
    for (std::size_t i = 0; i < m; ++i)
        if (rel[i] != Relation::LessEqual) artificial[i] = cols++;

    Tableau tab(m, cols);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) tab.at(i, j) = dense[i * n + j];
        if (logical[i] != SIZE_MAX) tab.at(i, logical[i]) = rel[i] == Relation::LessEqual ? 1.0 : -1.0;
        if (artificial[i] != SIZE_MAX) tab.at(i, artificial[i]) = 1.0;
        tab.set_basic(i, rel[i] == Relation::LessEqual ? logical[i] : artificial[i], rhs[i]);
    }
    for (std::size_t j = 0; j < n; ++j) tab.upper()[j] = upper[j] - lower[j];

    std::size_t pivots = 0;
    const bool phase_one = std::any_of(artificial.begin(), artificial.end(), [](std::size_t c) { return c != SIZE_MAX; });
    if (phase_one) {
        for (std::size_t i = 0; i < m; ++i)
            if (artificial[i] != SIZE_MAX) tab.cost()[artificial[i]] = -1.0;
        tab.compute_reduced_costs();
        const Status st = tab.optimize(opt.max_pivots, pivots);
        sol.pivots = pivots;
        if (st == Status::IterationLimit) {
            sol.status = st;
            return sol;
        }
        double infeas = 0.0, scale = 1.0;
        for (double b : rhs) scale = std::max(scale, std::abs(b));
        for (std::size_t i = 0; i < m; ++i)
            if (tab.cost()[tab.basis()[i]] < 0.0) infeas += tab.beta()[i];
        if (infeas > 1e-7 * scale) {
            sol.status = Status::Infeasible;
            return sol;
        }
        std::vector<char> is_art(cols, 0);
        for (std::size_t c : artificial)
            if (c != SIZE_MAX) is_art[c] = 1;
        // Move remaining zero-level artificials out of the basis where possible.
        for (std::size_t i = 0; i < m; ++i) {
            if (!is_art[tab.basis()[i]]) continue;
            std::size_t best = cols;
            double mag = 1e-7;
            for (std::size_t j = 0; j < cols; ++j) {
                if (is_art[j] || tab.basic()[j]) continue;
                if (std::abs(tab.at(i, j)) > mag) {
                    mag = std::abs(tab.at(i, j));
                    best = j;
                }
            }
            if (best == cols) continue;
            const double value = tab.at_upper()[best] ? tab.upper()[best] : 0.0;
            tab.at_upper()[tab.basis()[i]] = 0;
            tab.at_upper()[best] = 0;
            tab.pivot(i, best);
            tab.beta()[i] = value;
        }
        for (std::size_t j = 0; j < cols; ++j)
            if (is_art[j]) tab.upper()[j] = 0.0;
    }

    std::fill(tab.cost().begin(), tab.cost().end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) tab.cost()[j] = p.variable(static_cast<int>(j)).objective;
    tab.compute_reduced_costs();
    const Status st = tab.optimize(opt.max_pivots, pivots);
    sol.pivots = pivots;
    sol.status = st;
    if (st != Status::Optimal) return sol;

    std::vector<double> value(cols, 0.0);
    for (std::size_t j = 0; j < cols; ++j)
        if (!tab.basic()[j] && tab.at_upper()[j]) value[j] = tab.upper()[j];
    for (std::size_t i = 0; i < m; ++i) value[tab.basis()[i]] = tab.beta()[i];

    double obj = p.objective_constant();
    for (std::size_t j = 0; j < n; ++j) {
        double x = lower[j] + value[j];
        if (x < lower[j]) x = lower[j];
        if (x > upper[j]) x = upper[j];
        sol.values[j] = x;
        obj += p.variable(static_cast<int>(j)).objective * x;
    }
    sol.objective_value = obj;

    const auto& d = tab.reduced();
    sol.reduced_costs.assign(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n));
    sol.duals.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double y;
        if (rel[i] == Relation::LessEqual) y = -d[logical[i]];
        else if (rel[i] == Relation::GreaterEqual) y = d[logical[i]];
        else y = -d[artificial[i]];
        sol.duals[i] = sign[i] * y;
    }
    return sol;
}

} // namespace

LpSolution solve_lp(const LpProblem& p, const SolverOptions& opt) {
    p.validate();
    std::vector<double> lo(p.variable_count()), hi(p.variable_count());
    for (std::size_t j = 0; j < lo.size(); ++j) {
        lo[j] = p.variable(static_cast<int>(j)).lower;
        hi[j] = p.variable(static_cast<int>(j)).upper;
    }
    return solve_bounded(p, lo, hi, opt);
}

constexpr std::size_t kHeuristicPeriod = 64;

LpSolution solve_milp(const LpProblem& p, const SolverOptions& opt) {
    p.validate();
    const std::size_t n = p.variable_count();
    struct Node {
        std::vector<double> lo, hi;
    };
    Node root{std::vector<double>(n), std::vector<double>(n)};
    for (std::size_t j = 0; j < n; ++j) {
        const auto& v = p.variable(static_cast<int>(j));
        root.lo[j] = v.integral ? std::ceil(v.lower - opt.integrality_tolerance) : v.lower;
        root.hi[j] = v.integral && v.upper != kInfinity ? std::floor(v.upper + opt.integrality_tolerance) : v.upper;
    }

    LpSolution best;
    best.status = Status::Infeasible;
    double best_obj = -kInfinity;
    std::size_t nodes = 0, pivots = 0;
    std::vector<Node> stack;
    stack.push_back(std::move(root));
    bool limited = false;

    while (!stack.empty()) {
        if (nodes >= opt.max_nodes) {
            limited = true;
            break;
        }
        Node node = std::move(stack.back());
        stack.pop_back();
        ++nodes;
        LpSolution rel = solve_bounded(p, node.lo, node.hi, opt);
        pivots += rel.pivots;
        if (rel.status == Status::Infeasible) continue;
        if (rel.status == Status::Unbounded) {
            best = rel;
            best.status = Status::Unbounded;
            best.nodes = nodes;
            best.pivots = pivots;
            return best;
        }
        if (rel.status == Status::IterationLimit) {
            limited = true;
            break;
        }
        if (rel.objective_value <= best_obj + opt.gap) continue;

        // Rounding heuristic: fix the integer variables and re-solve for the continuous ones.
        if (best.status != Status::Optimal || nodes % kHeuristicPeriod == 1) {
            for (const bool nearest : {true, false}) {
                Node fixed = node;
                bool changed = false;
                for (std::size_t j = 0; j < n; ++j) {
                    if (!p.variable(static_cast<int>(j)).integral) continue;
                    const double x = rel.values[j];
                    const double r = std::clamp(nearest ? std::round(x) : std::floor(x + opt.integrality_tolerance),
                                                fixed.lo[j], fixed.hi[j]);
                    changed = changed || std::abs(x - r) > opt.integrality_tolerance;
                    fixed.lo[j] = fixed.hi[j] = r;
                }
                if (!changed) break;
                LpSolution cand = solve_bounded(p, fixed.lo, fixed.hi, opt);
                pivots += cand.pivots;
                if (cand.status != Status::Optimal || cand.objective_value <= best_obj) continue;
                best_obj = cand.objective_value;
                best = std::move(cand);
            }
            if (rel.objective_value <= best_obj + opt.gap) continue;
        }

        std::size_t branch = n;
        double most = opt.integrality_tolerance;
        for (std::size_t j = 0; j < n; ++j) {
            if (!p.variable(static_cast<int>(j)).integral) continue;
            const double x = rel.values[j];
            const double dist = std::abs(x - std::round(x));
            if (dist > most) {
                most = dist;
                branch = j;
            }
        }
        if (branch == n) {
            double obj = p.objective_constant();
            for (std::size_t j = 0; j < n; ++j) {
                if (p.variable(static_cast<int>(j)).integral) rel.values[j] = std::round(rel.values[j]);
                obj += p.variable(static_cast<int>(j)).objective * rel.values[j];
            }
            rel.objective_value = obj;
            best_obj = obj;
            best = std::move(rel);
            continue;
        }
        const double x = rel.values[branch];
        Node down = node, up = std::move(node);
        down.hi[branch] = std::floor(x);
        up.lo[branch] = std::ceil(x);
        if (x - std::floor(x) >= 0.5) {
            stack.push_back(std::move(down));
            stack.push_back(std::move(up));
        } else {
            stack.push_back(std::move(up));
            stack.push_back(std::move(down));
        }
    }
    best.nodes = nodes;
    best.pivots = pivots;
    if (limited) best.status = Status::IterationLimit;
    return best;
}

double dual_objective(const LpProblem& p, const LpSolution& s) {
    double total = p.objective_constant();
    for (std::size_t i = 0; i < p.constraint_count(); ++i) total += s.duals[i] * p.constraints()[i].rhs;
    for (std::size_t j = 0; j < p.variable_count(); ++j) {
        const auto& v = p.variable(static_cast<int>(j));
        const double d = s.reduced_costs[j];
        total += (d > 0.0 && v.upper != kInfinity) ? v.upper * d : v.lower * d;
    }
    return total;
}

double max_violation(const LpProblem& p, const std::vector<double>& x) {
    double worst = 0.0;
    for (std::size_t j = 0; j < p.variable_count(); ++j) {
        const auto& v = p.variable(static_cast<int>(j));
        worst = std::max(worst, v.lower - x[j]);
        if (v.upper != kInfinity) worst = std::max(worst, x[j] - v.upper);
    }
    for (const auto& c : p.constraints()) {
        double lhs = 0.0;
        for (const auto& t : c.terms) lhs += t.coef * x[t.var];
        switch (c.relation) {
        case Relation::LessEqual: worst = std::max(worst, lhs - c.rhs); break;
        case Relation::GreaterEqual: worst = std::max(worst, c.rhs - lhs); break;
        case Relation::Equal: worst = std::max(worst, std::abs(lhs - c.rhs)); break;
        }
    }
    return worst;
}

void write_lp(std::ostream& out, const LpProblem& p) {
    auto name = [&](int v) { return p.variable(v).name.empty() ? "x" + std::to_string(v) : p.variable(v).name; };
    out << "maximize\n ";
    for (std::size_t j = 0; j < p.variable_count(); ++j) {
        const double c = p.variable(static_cast<int>(j)).objective;
        if (c != 0.0) out << ' ' << (c >= 0 ? "+" : "") << c << ' ' << name(static_cast<int>(j));
    }
    if (p.objective_constant() != 0.0) out << " + " << p.objective_constant();
    out << "\nsubject to\n";
    for (std::size_t i = 0; i < p.constraint_count(); ++i) {
        const auto& c = p.constraints()[i];
        out << "  " << (c.name.empty() ? "r" + std::to_string(i) : c.name) << ":";
        for (const auto& t : c.terms) out << ' ' << (t.coef >= 0 ? "+" : "") << t.coef << ' ' << name(t.var);
        out << (c.relation == Relation::LessEqual ? " <= " : c.relation == Relation::Equal ? " = " : " >= ") << c.rhs
            << '\n';
    }
    out << "bounds\n";
    for (std::size_t j = 0; j < p.variable_count(); ++j) {
        const auto& v = p.variable(static_cast<int>(j));
        out << "  " << v.lower << " <= " << name(static_cast<int>(j)) << " <= ";
        if (v.upper == kInfinity) out << "inf";
        else out << v.upper;
        if (v.integral) out << " integer";
        out << '\n';
    }
}

} // namespace slotalloc::lp
