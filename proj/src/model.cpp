#include "slotalloc/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace slotalloc {

CellLayout::CellLayout(std::vector<int> wait_caps) : caps_(std::move(wait_caps)) {
    offsets_.reserve(caps_.size() + 1);
    offsets_.push_back(0);
    for (int W : caps_) {
        if (W < 0) throw StructuralError("negative wait cap");
        offsets_.push_back(offsets_.back() + static_cast<std::size_t>(W) + 1);
    }
}

std::size_t CellLayout::index(std::size_t j, int w) const {
    if (j >= caps_.size() || w < 0 || w > caps_[j])
        throw StructuralError("cell (" + std::to_string(j) + "," + std::to_string(w) + ") out of range");
    return offsets_[j] + static_cast<std::size_t>(w);
}

std::size_t CellLayout::queue_of(std::size_t cell) const {
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), cell);
    return static_cast<std::size_t>(it - offsets_.begin()) - 1;
}

std::string to_string(CostRule rule) {
    return rule == CostRule::PerTarget ? "per_target" : "per_target_plus_one";
}

CostRule cost_rule_from_string(const std::string& name) {
    if (name == "per_target") return CostRule::PerTarget;
    if (name == "per_target_plus_one") return CostRule::PerTargetPlusOne;
    throw SchemaError("cost_rule", "unknown rule '" + name + "'");
}

namespace {

void check_probability(double p, const std::string& field) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) throw SchemaError(field, "probability outside [0,1]");
}

} // namespace

Instance::Instance(InstanceData data) : data_(std::move(data)) {
    const std::size_t n = data_.queues.size();
    const std::size_t R = data_.resources.size();
    if (n == 0) throw SchemaError("queues", "at least one queue required");
    if (R == 0) throw SchemaError("resources", "at least one resource required");

    std::set<std::string> ids;
    for (const auto& r : data_.resources) {
        if (!ids.insert(r.id).second) throw SchemaError("resources", "duplicate id '" + r.id + "'");
        if (r.capacity < 0) throw SchemaError("resources[" + r.id + "].capacity", "must be >= 0");
    }
    ids.clear();
    zeta_.assign(n * R, 0);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& q = data_.queues[j];
        const std::string f = "queues[" + q.id + "]";
        if (!ids.insert(q.id).second) throw SchemaError("queues", "duplicate id '" + q.id + "'");
        if (q.access_target < 0) throw SchemaError(f + ".access_target", "must be >= 0");
        if (q.wait_cap < 1) throw SchemaError(f + ".wait_cap", "must be >= 1");
        if (q.wait_cap < q.access_target) throw SchemaError(f + ".wait_cap", "must be >= access_target");
        if (!(q.weight >= 0.0) || !std::isfinite(q.weight)) throw SchemaError(f + ".weight", "must be >= 0");
        if (!(q.reward >= 0.0) || !std::isfinite(q.reward)) throw SchemaError(f + ".reward", "must be >= 0");
        if (data_.cost_rule == CostRule::PerTarget && q.access_target == 0)
            throw SchemaError(f + ".access_target", "per_target cost rule needs access_target >= 1");
        bool positive = false;
        for (const auto& [rid, z] : q.demands) {
            std::size_t r = R;
            for (std::size_t k = 0; k < R; ++k)
                if (data_.resources[k].id == rid) r = k;
            if (r == R) throw SchemaError(f + ".demands", "unknown resource '" + rid + "'");
            if (z < 0) throw SchemaError(f + ".demands[" + rid + "]", "must be >= 0");
            zeta_[j * R + r] = z;
            positive = positive || z > 0;
        }
        if (!positive) throw SchemaError(f + ".demands", "needs a positive demand");
    }

    if (data_.arrivals.size() != n) throw SchemaError("arrivals", "one entry per queue required");
    for (std::size_t j = 0; j < n; ++j)
        if (!std::isfinite(data_.arrivals[j]) || data_.arrivals[j] < 0.0)
            throw SchemaError("arrivals[" + data_.queues[j].id + "]", "must be >= 0");

    auto& tt = data_.transitions;
    if (tt.queue.size() != n) throw SchemaError("transitions", "one row per queue required");
    if (tt.exit.empty()) tt.exit.assign(n, std::nullopt);
    if (tt.exit.size() != n) throw SchemaError("transitions", "exit column size mismatch");
    q_.assign(n * n, 0.0);
    exit_.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::string f = "transitions.rows[" + data_.queues[i].id + "]";
        if (tt.queue[i].size() != n) throw SchemaError(f, "row length mismatch");
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            check_probability(tt.queue[i][j], f);
            q_[i * n + j] = tt.queue[i][j];
            sum += tt.queue[i][j];
        }
        if (sum > 1.0 + 1e-9) throw SchemaError(f, "row sums to " + std::to_string(sum) + " > 1");
        if (tt.exit[i]) {
            check_probability(*tt.exit[i], f + ".Exit");
            if (std::abs(sum + *tt.exit[i] - 1.0) > kRowSumTolerance)
                throw SchemaError(f, "row including Exit sums to " + std::to_string(sum + *tt.exit[i]));
        }
        exit_[i] = std::max(0.0, 1.0 - sum);
    }
    if (tt.start) {
        if (tt.start->size() != n) throw SchemaError("transitions.rows[Start]", "row length mismatch");
        double sum = tt.start_exit.value_or(0.0);
        for (double p : *tt.start) {
            check_probability(p, "transitions.rows[Start]");
            sum += p;
        }
        if (std::abs(sum - 1.0) > kRowSumTolerance)
            throw SchemaError("transitions.rows[Start]", "must sum to 1, got " + std::to_string(sum));
    }

    for (const auto& [period, caps] : data_.capacity_overrides) {
        const std::string f = "capacity_overrides[" + std::to_string(period) + "]";
        if (period < 0) throw SchemaError(f, "period must be >= 0");
        if (caps.size() != R) throw SchemaError(f, "one capacity per resource required");
        for (int c : caps)
            if (c < 0) throw SchemaError(f, "capacity must be >= 0");
    }

    std::vector<int> caps;
    for (const auto& q : data_.queues) caps.push_back(q.wait_cap);
    layout_ = std::make_shared<const CellLayout>(std::move(caps));

    cost_.assign(layout_->size(), 0.0);
    reward_.assign(layout_->size(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& q = data_.queues[j];
        for (int w = 0; w <= q.wait_cap; ++w) {
            const std::size_t c = layout_->index(j, w);
            reward_[c] = q.reward;
            if (w >= q.access_target) {
                const double denom = data_.cost_rule == CostRule::PerTarget ? q.access_target : q.access_target + 1;
                cost_[c] = q.weight * w / denom;
            }
        }
    }

    for (std::size_t j = 0; j < n; ++j)
        for (int w = data_.queues[j].wait_cap; w >= 0; --w) priority_.push_back(layout_->index(j, w));
    rank_.assign(priority_.size(), 0);
    for (std::size_t k = 0; k < priority_.size(); ++k) rank_[priority_[k]] = k;
}

std::size_t Instance::queue_index(const std::string& id) const {
    for (std::size_t j = 0; j < data_.queues.size(); ++j)
        if (data_.queues[j].id == id) return j;
    throw StructuralError("unknown queue '" + id + "'");
}

std::size_t Instance::resource_index(const std::string& id) const {
    for (std::size_t r = 0; r < data_.resources.size(); ++r)
        if (data_.resources[r].id == id) return r;
    throw StructuralError("unknown resource '" + id + "'");
}

double Instance::start_probability(std::size_t j) const {
    if (!data_.transitions.start) throw StructuralError("instance has no Start row");
    return data_.transitions.start->at(j);
}

double Instance::total_arrival_rate() const {
    double total = 0.0;
    for (double l : data_.arrivals) total += l;
    return total;
}

int Instance::capacity(std::size_t r, int period) const {
    auto it = data_.capacity_overrides.find(period);
    if (it != data_.capacity_overrides.end()) return it->second.at(r);
    return data_.resources.at(r).capacity;
}

int TransitionRealization::inflow(std::size_t to) const {
    int total = 0;
    for (std::size_t i = 0; i < n_; ++i) total += (*this)(i, to);
    return total;
}

int TransitionRealization::outflow(std::size_t from) const {
    int total = 0;
    for (std::size_t j = 0; j <= n_; ++j) total += (*this)(from, j);
    return total;
}

int TransitionRealization::total_exits() const {
    int total = 0;
    for (std::size_t i = 0; i < n_; ++i) total += exits(i);
    return total;
}

double waiting_cost(const Instance& inst, std::size_t j, int w) {
    if (j >= inst.queue_count()) throw StructuralError("waiting_cost: queue index out of range");
    if (w < 0 || w > inst.queue(j).wait_cap) throw StructuralError("waiting_cost: wait out of range");
    return inst.cost(j, w);
}

double waiting_cost(const Instance& inst, const std::string& queue_id, int w) {
    return waiting_cost(inst, inst.queue_index(queue_id), w);
}

namespace {

void require_shape(const Instance& inst, const State& s, const Action& a, const char* op) {
    if (!s.same_shape(*inst.layout()) || !a.same_shape(*inst.layout()))
        throw StructuralError(std::string(op) + ": state/action do not match the instance layout");
}

} // namespace

std::vector<int> resource_usage(const Instance& inst, const Action& a) {
    std::vector<int> use(inst.resource_count(), 0);
    for (std::size_t j = 0; j < inst.queue_count(); ++j) {
        const int treated = a.queue_total(j);
        for (std::size_t r = 0; r < inst.resource_count(); ++r) use[r] += inst.demand(j, r) * treated;
    }
    return use;
}

bool is_feasible(const Instance& inst, const State& s, const Action& a, int period) {
    require_shape(inst, s, a, "is_feasible");
    for (std::size_t c = 0; c < s.size(); ++c)
        if (a[c] < 0 || a[c] > s[c]) return false;
    const auto use = resource_usage(inst, a);
    for (std::size_t r = 0; r < use.size(); ++r)
        if (use[r] > inst.capacity(r, period)) return false;
    return true;
}

State next_state(const Instance& inst, const State& s, const Action& a, const TransitionRealization& x,
                 std::span<const int> arrivals, int period) {
    require_shape(inst, s, a, "next_state");
    const std::size_t n = inst.queue_count();
    if (!is_feasible(inst, s, a, period)) throw StructuralError("next_state: infeasible action");
    if (x.queue_count() != n || arrivals.size() != n)
        throw StructuralError("next_state: realization/arrivals size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        if (x.outflow(i) != a.queue_total(i))
            throw StructuralError("next_state: realization row " + inst.queue(i).id + " does not match treated count");
        for (std::size_t j = 0; j <= n; ++j) {
            if (x(i, j) < 0) throw StructuralError("next_state: negative flow");
            if (j < n && x(i, j) > 0 && inst.transition(i, j) <= 0.0)
                throw StructuralError("next_state: flow on a zero-probability transition");
        }
    }
    State out = inst.make_state();
    for (std::size_t j = 0; j < n; ++j) {
        if (arrivals[j] < 0) throw StructuralError("next_state: negative arrivals");
        const int W = inst.queue(j).wait_cap;
        out(j, 0) = arrivals[j] + x.inflow(j);
        for (int w = 1; w < W; ++w) out(j, w) = s(j, w - 1) - a(j, w - 1);
        out(j, W) = (s(j, W - 1) - a(j, W - 1)) + (s(j, W) - a(j, W));
    }
    return out;
}

FractionalState expected_next_state(const Instance& inst, const FractionalState& s, const FractionalAction& a) {
    if (!s.same_shape(*inst.layout()) || !a.same_shape(*inst.layout()))
        throw StructuralError("expected_next_state: state/action do not match the instance layout");
    const std::size_t n = inst.queue_count();
    for (std::size_t c = 0; c < s.size(); ++c)
        if (a[c] < -1e-9 || a[c] > s[c] + 1e-9) throw StructuralError("expected_next_state: action exceeds state");
    std::vector<double> treated(n);
    for (std::size_t i = 0; i < n; ++i) treated[i] = a.queue_total(i);
    FractionalState out = inst.make_fractional_state();
    for (std::size_t j = 0; j < n; ++j) {
        const int W = inst.queue(j).wait_cap;
        double in = inst.arrival_rate(j);
        for (std::size_t i = 0; i < n; ++i) in += inst.transition(i, j) * treated[i];
        out(j, 0) = in;
        for (int w = 1; w < W; ++w) out(j, w) = s(j, w - 1) - a(j, w - 1);
        out(j, W) = (s(j, W - 1) - a(j, W - 1)) + (s(j, W) - a(j, W));
    }
    return out;
}

FractionalState expected_next_state(const Instance& inst, const State& s, const Action& a) {
    require_shape(inst, s, a, "expected_next_state");
    if (!is_feasible(inst, s, a)) throw StructuralError("expected_next_state: infeasible action");
    return expected_next_state(inst, s.cast<double>(), a.cast<double>());
}

std::vector<int> rounded_arrivals(const Instance& inst) {
    std::vector<int> out(inst.queue_count());
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j] = static_cast<int>(std::floor(inst.arrival_rate(j) + 0.5));
    return out;
}

void for_each_action(const Instance& inst, const State& s, const std::function<void(const Action&)>& visit,
                     std::size_t guard, int period) {
    if (!s.same_shape(*inst.layout())) throw StructuralError("for_each_action: state does not match layout");
    const auto& order = inst.priority_order();
    const std::size_t R = inst.resource_count();
    std::vector<int> remaining(R);
    for (std::size_t r = 0; r < R; ++r) remaining[r] = inst.capacity(r, period);
    std::vector<std::size_t> queue_of(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) queue_of[k] = inst.layout()->queue_of(order[k]);

    Action a = inst.make_action();
    std::size_t produced = 0;
    std::function<void(std::size_t)> rec = [&](std::size_t k) {
        if (k == order.size()) {
            if (++produced > guard) throw ResourceLimitError("action enumeration exceeded guard");
            visit(a);
            return;
        }
        const std::size_t j = queue_of[k];
        int hi = s[order[k]];
        for (std::size_t r = 0; r < R; ++r)
            if (inst.demand(j, r) > 0) hi = std::min(hi, remaining[r] / inst.demand(j, r));
        for (int v = hi; v >= 0; --v) {
            a[order[k]] = v;
            for (std::size_t r = 0; r < R; ++r) remaining[r] -= v * inst.demand(j, r);
            rec(k + 1);
            for (std::size_t r = 0; r < R; ++r) remaining[r] += v * inst.demand(j, r);
        }
        a[order[k]] = 0;
    };
    rec(0);
}

std::vector<Action> enumerate_actions(const Instance& inst, const State& s, std::size_t guard, int period) {
    std::vector<Action> out;
    for_each_action(inst, s, [&](const Action& a) { out.push_back(a); }, guard, period);
    return out;
}

bool preferred_action(const Instance& inst, const Action& a, const Action& b) {
    for (std::size_t c : inst.priority_order()) {
        if (a[c] != b[c]) return a[c] > b[c];
    }
    return false;
}

} // namespace slotalloc
