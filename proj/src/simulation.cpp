#include "slotalloc/simulation.hpp"

#include "slotalloc/planners.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace slotalloc {

int InitialPopulation::draw(std::mt19937_64& rng) const {
    if (fixed) return *fixed;
    const double x = std::normal_distribution<double>(mean, sd)(rng);
    return x <= 0.0 ? 0 : static_cast<int>(std::floor(x + 0.5));
}

std::string InitialPopulation::label() const {
    if (fixed) return std::to_string(*fixed);
    std::ostringstream os;
    os << "normal(" << mean << "," << sd << ")";
    return os.str();
}

void SimulationConfig::validate() const {
    if (periods < 1) throw SchemaError("periods", "must be >= 1");
    if (trials < 1) throw SchemaError("trials", "must be >= 1");
    if (plan_ahead < 0) throw SchemaError("plan_ahead", "must be >= 0");
    if (warmup && (*warmup < 0 || *warmup >= periods)) throw SchemaError("warmup", "must lie in [0, periods)");
    if (initial.fixed && *initial.fixed < 0) throw SchemaError("initial", "must be >= 0");
    if (!initial.fixed && !(initial.sd >= 0.0 && std::isfinite(initial.mean)))
        throw SchemaError("initial", "normal distribution needs a finite mean and sd >= 0");
    if (threads < 1) throw SchemaError("threads", "must be >= 1");
}

double TrialResult::mean_contribution() const {
    double sum = 0.0;
    int count = 0;
    for (std::size_t t = static_cast<std::size_t>(warmup); t < contribution.size(); ++t, ++count) sum += contribution[t];
    return count ? sum / count : 0.0;
}

Action realize_action(const Instance& inst, const State& s, const Action& planned) {
    const auto& L = *inst.layout();
    Action a = inst.make_action();
    for (std::size_t j = 0; j < inst.queue_count(); ++j) {
        int left = planned.queue_total(j);
        for (int w = L.wait_cap(j); w >= 0 && left > 0; --w) {
            const int k = std::min(left, s(j, w));
            a(j, w) = k;
            left -= k;
        }
    }
    return a;
}

TrialResult run_trial(const Instance& inst, const Policy& policy, const SimulationConfig& cfg, int trial) {
    cfg.validate();
    const PathwayMode mode = cfg.pathway_mode.value_or(default_pathway_mode(inst));
    const auto key = static_cast<std::uint64_t>(trial);
    std::mt19937_64 init_rng = derive_rng(cfg.seed, {key, static_cast<std::uint64_t>(SimStream::Initial)});
    std::mt19937_64 arrival_rng = derive_rng(cfg.seed, {key, static_cast<std::uint64_t>(SimStream::Arrivals)});

    TrialResult out;
    out.trial = trial;
    out.initial_patients = cfg.initial.draw(init_rng);
    const int p = policy.uses_prediction() ? cfg.plan_ahead : 0;
    out.warmup = cfg.warmup.value_or(std::min(p + 1, cfg.periods - 1));
    Population pop = init_population(inst, out.initial_patients, init_rng, mode, &out.truncated_pathways);

    std::vector<State> states;
    std::vector<Action> performed;
    for (int t = 0; t < cfg.periods; ++t) {
        const State s = pop.state();
        states.push_back(s);
        Action a;
        if (p == 0) {
            a = policy.decide(inst, s, t);
        } else {
            const std::size_t base = static_cast<std::size_t>(std::max(0, t - p));
            const std::vector<Action> since(performed.begin() + static_cast<std::ptrdiff_t>(base), performed.end());
            const Action planned = policy.decide(inst, predict_state(inst, states[base], since), t);
            a = realize_action(inst, s, planned);
        }
        if (!is_feasible(inst, s, a, t)) throw StructuralError(policy.name() + " produced an infeasible action");

        out.contribution.push_back(contribution(inst, s, a));
        std::vector<int> treated(inst.queue_count());
        for (std::size_t j = 0; j < treated.size(); ++j) treated[j] = a.queue_total(j);
        out.treated.push_back(std::move(treated));
        const auto use = resource_usage(inst, a);
        std::vector<int> cap(inst.resource_count()), unused(inst.resource_count());
        for (std::size_t r = 0; r < cap.size(); ++r) {
            cap[r] = inst.capacity(r, t);
            unused[r] = cap[r] - use[r];
        }
        out.capacity.push_back(std::move(cap));
        out.unused.push_back(std::move(unused));

        const StepOutcome step = pop.step(a, arrival_pathways(inst, arrival_rng, &out.truncated_pathways), t);
        for (const auto& ap : step.appointments) out.appointments.push_back({t, ap.queue, ap.wait, ap.on_time});
        performed.push_back(std::move(a));
    }
    return out;
}

std::vector<TrialResult> run_trials(const Instance& inst, const Policy& policy, const SimulationConfig& cfg) {
    cfg.validate();
    std::vector<TrialResult> results(static_cast<std::size_t>(cfg.trials));
    const unsigned workers = std::min<unsigned>(cfg.threads, static_cast<unsigned>(cfg.trials));
    if (workers <= 1) {
        for (int k = 0; k < cfg.trials; ++k) results[static_cast<std::size_t>(k)] = run_trial(inst, policy, cfg, k);
        return results;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int k = next++; k < cfg.trials; k = next++) {
                try {
                    results[static_cast<std::size_t>(k)] = run_trial(inst, policy, cfg, k);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
    return results;
}

MetricsReport aggregate(const Instance& inst, const std::vector<TrialResult>& results) {
    MetricsReport m;
    m.trials = results.size();
    const std::size_t n = inst.queue_count();
    const std::size_t R = inst.resource_count();
    std::vector<double> means;
    for (const auto& r : results) means.push_back(r.mean_contribution());
    if (!means.empty()) {
        double sum = 0.0;
        for (double v : means) sum += v;
        m.mean_contribution = sum / static_cast<double>(means.size());
        if (means.size() > 1) {
            double sq = 0.0;
            for (double v : means) sq += (v - m.mean_contribution) * (v - m.mean_contribution);
            m.contribution_se = std::sqrt(sq / static_cast<double>(means.size() - 1) / static_cast<double>(means.size()));
        }
    }

    std::vector<std::size_t> count(n, 0), on_time(n, 0), late(n, 0);
    std::vector<double> late_wait(n, 0.0);
    std::vector<double> unused(R, 0.0), offered(R, 0.0);
    for (const auto& r : results) {
        for (const auto& ap : r.appointments) {
            if (ap.period < r.warmup) continue;
            ++count[ap.queue];
            if (ap.on_time) {
                ++on_time[ap.queue];
            } else {
                ++late[ap.queue];
                late_wait[ap.queue] += ap.wait;
            }
        }
        for (std::size_t t = static_cast<std::size_t>(r.warmup); t < r.unused.size(); ++t)
            for (std::size_t k = 0; k < R; ++k) {
                unused[k] += r.unused[t][k];
                offered[k] += r.capacity[t][k];
            }
    }
    m.queues.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        m.queues[j].appointments = count[j];
        m.queues[j].pct_within_target = count[j] ? 100.0 * static_cast<double>(on_time[j]) / count[j] : 100.0;
        if (late[j]) m.queues[j].mean_late_wait = late_wait[j] / static_cast<double>(late[j]);
    }
    m.pct_unused.resize(R);
    for (std::size_t k = 0; k < R; ++k) m.pct_unused[k] = offered[k] > 0 ? 100.0 * unused[k] / offered[k] : 0.0;
    return m;
}

namespace {

std::ostream& full_precision(std::ostream& out) {
    out.precision(17);
    return out;
}

} // namespace

void write_periods_csv(std::ostream& out, const Instance& inst, const std::vector<TrialResult>& results) {
    full_precision(out) << "trial,period,item,metric,value\n";
    for (const auto& r : results)
        for (std::size_t t = 0; t < r.contribution.size(); ++t) {
            out << r.trial << ',' << t << ",,contribution," << r.contribution[t] << '\n';
            for (std::size_t j = 0; j < inst.queue_count(); ++j)
                out << r.trial << ',' << t << ',' << inst.queue(j).id << ",treated," << r.treated[t][j] << '\n';
            for (std::size_t k = 0; k < inst.resource_count(); ++k) {
                out << r.trial << ',' << t << ',' << inst.resources()[k].id << ",capacity," << r.capacity[t][k] << '\n';
                out << r.trial << ',' << t << ',' << inst.resources()[k].id << ",unused," << r.unused[t][k] << '\n';
            }
        }
}

void write_appointments_csv(std::ostream& out, const Instance& inst, const std::vector<TrialResult>& results) {
    out << "trial,period,queue,wait,on_time\n";
    for (const auto& r : results)
        for (const auto& ap : r.appointments)
            out << r.trial << ',' << ap.period << ',' << inst.queue(ap.queue).id << ',' << ap.wait << ','
                << (ap.on_time ? 1 : 0) << '\n';
}

void write_metrics_csv(std::ostream& out, const Instance& inst, const MetricsReport& report) {
    full_precision(out) << "metric,item,value\n";
    out << "trials,," << report.trials << '\n';
    out << "mean_contribution,," << report.mean_contribution << '\n';
    out << "contribution_se,," << report.contribution_se << '\n';
    for (std::size_t j = 0; j < report.queues.size(); ++j) {
        const auto& q = report.queues[j];
        const std::string& id = inst.queue(j).id;
        out << "appointments," << id << ',' << q.appointments << '\n';
        out << "pct_within_target," << id << ',' << q.pct_within_target << '\n';
        if (q.mean_late_wait) out << "mean_late_wait," << id << ',' << *q.mean_late_wait << '\n';
    }
    for (std::size_t k = 0; k < report.pct_unused.size(); ++k)
        out << "pct_unused," << inst.resources()[k].id << ',' << report.pct_unused[k] << '\n';
}

} // namespace slotalloc
