#pragma once

#include "slotalloc/model.hpp"

#include <string>

namespace slotalloc {

/**
 * Maps a (possibly predicted, fractional) state to a feasible action.
 * Implementations receive the state through do_decide; integer rules floor
 * fractional input, and the returned action is feasible against the
 * floored state.
 */
class Policy {
public:
    virtual ~Policy() = default;

    Action decide(const Instance& inst, const FractionalState& s, int period = 0) const {
        if (!s.same_shape(*inst.layout())) throw StructuralError(name() + ": state does not match the instance");
        return do_decide(inst, s, period);
    }
    Action decide(const Instance& inst, const State& s, int period = 0) const {
        return decide(inst, s.cast<double>(), period);
    }

    virtual std::string name() const = 0;

    /// False for policies fixed far in advance that ignore the planning horizon.
    virtual bool uses_prediction() const { return true; }

protected:
    virtual Action do_decide(const Instance& inst, const FractionalState& s, int period) const = 0;
};

} // namespace slotalloc
