#pragma once

#include "slotalloc/model.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace slotalloc {

/// Independent generator for a (seed, key...) tuple.
std::mt19937_64 derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

/// How a fresh pathway picks its first queue.
enum class PathwayMode {
    SyntheticChain, ///< entry queue proportional to lambda, then walk the routing rows
    StartRow        ///< entry queue from the instance's Start row
};

std::string to_string(PathwayMode mode);
PathwayMode pathway_mode_from_string(const std::string& name);
/// StartRow when the instance has a Start row, SyntheticChain otherwise.
PathwayMode default_pathway_mode(const Instance& inst);

inline constexpr int kMaxPathwayLength = 100;

using Pathway = std::vector<int>;

/// Walks the routing rows from `entry` until Exit or the length cap.
Pathway pathway_from(const Instance& inst, std::size_t entry, std::mt19937_64& rng, bool* truncated = nullptr);
Pathway generate_pathway(const Instance& inst, std::mt19937_64& rng, PathwayMode mode, bool* truncated = nullptr);

/// Initial waiting time: exponential with mean u_j, rounded to nearest and capped at W_j.
int sample_initial_wait(const Instance& inst, std::size_t queue, std::mt19937_64& rng);

struct Patient {
    Pathway pathway;
    std::size_t stage = 0; ///< 0-based index into pathway
    int wait = 0;
    std::uint64_t order = 0; ///< insertion rank, used for FIFO selection within a cell

    std::size_t queue() const { return static_cast<std::size_t>(pathway[stage]); }
};

/// One treatment appointment as realized in a period.
struct Appointment {
    std::size_t queue = 0;
    int wait = 0;
    bool on_time = false;
};

struct StepOutcome {
    TransitionRealization flows;
    std::vector<Appointment> appointments;
    int departures = 0;
};

/// Patients with hidden pathways; the aggregate State is what policies see.
class Population {
public:
    explicit Population(Instance inst);

    const Instance& instance() const noexcept { return inst_; }
    const std::vector<Patient>& patients() const noexcept { return patients_; }
    std::size_t size() const noexcept { return patients_.size(); }

    /// Adds a patient at `stage` with waiting time `wait`; pathways must be non-empty.
    void add(Pathway pathway, std::size_t stage = 0, int wait = 0);

    State state() const;

    /**
     * Applies `a` (feasible against state() in `period`): treated patients
     * are the oldest inserted of each cell, advance one stage or depart;
     * untreated patients age up to W_j; `arrivals` join at stage 0, wait 0.
     */
    StepOutcome step(const Action& a, const std::vector<Pathway>& arrivals, int period = 0);

private:
    Instance inst_;
    std::vector<Patient> patients_;
    std::uint64_t next_order_ = 0;
};

/// n patients with random pathway, uniformly drawn current stage and initial wait.
/// `truncated`, when given, is incremented per pathway cut at kMaxPathwayLength.
Population init_population(const Instance& inst, int n, std::mt19937_64& rng, PathwayMode mode,
                           std::size_t* truncated = nullptr);

/**
 * New patients for one period: round-half-up(lambda_j) patients starting at
 * each queue j, each with a freshly walked pathway.
 */
std::vector<Pathway> arrival_pathways(const Instance& inst, std::mt19937_64& rng, std::size_t* truncated = nullptr);

/// Expected number of stages of a fresh pathway (entry distribution of `mode`).
double mean_pathway_length(const Instance& inst, PathwayMode mode);

} // namespace slotalloc
