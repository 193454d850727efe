#pragma once

#include "slotalloc/errors.hpp"

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

namespace slotalloc {

/**
 * Flattened (queue, waiting time) index set. Queue j owns cells
 * offset(j) .. offset(j) + wait_cap(j), one per w in 0..W_j.
 */
class CellLayout {
public:
    explicit CellLayout(std::vector<int> wait_caps);

    std::size_t queue_count() const noexcept { return caps_.size(); }
    std::size_t size() const noexcept { return offsets_.back(); }
    int wait_cap(std::size_t j) const { return caps_.at(j); }
    std::size_t offset(std::size_t j) const { return offsets_.at(j); }
    std::size_t index(std::size_t j, int w) const;
    const std::vector<int>& wait_caps() const noexcept { return caps_; }

    /// Queue owning a flat cell index.
    std::size_t queue_of(std::size_t cell) const;

    bool operator==(const CellLayout& o) const noexcept { return caps_ == o.caps_; }

private:
    std::vector<int> caps_;
    std::vector<std::size_t> offsets_;
};

struct StateTag {};
struct ActionTag {};

/**
 * Matrix over the cells of a CellLayout. The tag keeps states and actions
 * from being mixed up; conversion between value types is explicit.
 */
template <class T, class Tag>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    explicit Grid(std::shared_ptr<const CellLayout> layout)
        : layout_(std::move(layout)), cells_(layout_->size(), T{}) {}
    Grid(std::shared_ptr<const CellLayout> layout, std::vector<T> cells)
        : layout_(std::move(layout)), cells_(std::move(cells)) {
        if (cells_.size() != layout_->size())
            throw StructuralError("grid cell count does not match layout");
    }

    const CellLayout& layout() const { return *layout_; }
    const std::shared_ptr<const CellLayout>& layout_ptr() const noexcept { return layout_; }
    bool empty_layout() const noexcept { return !layout_; }

    std::size_t size() const noexcept { return cells_.size(); }
    std::size_t queue_count() const { return layout_->queue_count(); }

    T& operator()(std::size_t j, int w) { return cells_[layout_->index(j, w)]; }
    const T& operator()(std::size_t j, int w) const { return cells_[layout_->index(j, w)]; }
    T& operator[](std::size_t cell) { return cells_[cell]; }
    const T& operator[](std::size_t cell) const { return cells_[cell]; }

    std::span<T> queue(std::size_t j) {
        return {cells_.data() + layout_->offset(j), static_cast<std::size_t>(layout_->wait_cap(j)) + 1};
    }
    std::span<const T> queue(std::size_t j) const {
        return {cells_.data() + layout_->offset(j), static_cast<std::size_t>(layout_->wait_cap(j)) + 1};
    }

    std::vector<T>& cells() noexcept { return cells_; }
    const std::vector<T>& cells() const noexcept { return cells_; }

    T total() const { return std::accumulate(cells_.begin(), cells_.end(), T{}); }
    T queue_total(std::size_t j) const {
        auto q = queue(j);
        return std::accumulate(q.begin(), q.end(), T{});
    }

    bool same_shape(const CellLayout& other) const { return layout_ && *layout_ == other; }
    template <class U, class V>
    bool same_shape(const Grid<U, V>& other) const {
        return layout_ && !other.empty_layout() && *layout_ == other.layout();
    }

    template <class U>
    Grid<U, Tag> cast() const {
        std::vector<U> out(cells_.begin(), cells_.end());
        return Grid<U, Tag>(layout_, std::move(out));
    }

    /// Entrywise floor, clamped at zero (for fractional predictions).
    Grid<int, Tag> floored() const {
        std::vector<int> out(cells_.size());
        for (std::size_t i = 0; i < cells_.size(); ++i) {
            double v = std::floor(static_cast<double>(cells_[i]) + 1e-9);
            out[i] = v > 0 ? static_cast<int>(v) : 0;
        }
        return Grid<int, Tag>(layout_, std::move(out));
    }

    bool operator==(const Grid& o) const {
        if (!layout_ || !o.layout_) return !layout_ && !o.layout_;
        return *layout_ == *o.layout_ && cells_ == o.cells_;
    }

private:
    std::shared_ptr<const CellLayout> layout_;
    std::vector<T> cells_;
};

using State = Grid<int, StateTag>;
using Action = Grid<int, ActionTag>;
using FractionalState = Grid<double, StateTag>;
using FractionalAction = Grid<double, ActionTag>;

} // namespace slotalloc
