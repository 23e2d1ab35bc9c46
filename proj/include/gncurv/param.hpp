#pragma once

// Named, ordered parameter collections. Entries are tagged as belonging to
// the shared encoder block or to one of the task head blocks; flattening a
// block concatenates its tensors in the canonical (construction) order.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gncurv/errors.hpp"
#include "gncurv/tensor.hpp"

namespace gncurv {

/// Selects which parameter block an operation differentiates or flattens.
struct Block {
    enum class Kind { Shared, Task, All };
    Kind kind = Kind::All;
    int task_index = -1;

    static Block shared() { return {Kind::Shared, -1}; }
    static Block task(int t) { return {Kind::Task, t}; }
    static Block all() { return {Kind::All, -1}; }

    bool operator==(const Block&) const = default;
};

struct ParamEntry {
    std::string name;
    int group; // -1 for the shared block, task index otherwise
    Tensor tensor;
};

class ParamSet {
public:
    void add_shared(std::string name, Tensor t) { add(std::move(name), -1, std::move(t)); }

    void add_task(int task, std::string name, Tensor t) {
        if (task < 0) throw DataError("param: negative task index");
        add(std::move(name), task, std::move(t));
    }

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    ParamEntry& entry(std::size_t i) { return entries_[i]; }
    const ParamEntry& entry(std::size_t i) const { return entries_[i]; }

    const Tensor& at(std::string_view name) const {
        for (const auto& e : entries_)
            if (e.name == name) return e.tensor;
        throw DataError("param: no entry named '" + std::string(name) + "'");
    }

    Tensor& at(std::string_view name) {
        for (auto& e : entries_)
            if (e.name == name) return e.tensor;
        throw DataError("param: no entry named '" + std::string(name) + "'");
    }

    bool in_block(std::size_t i, Block b) const {
        const ParamEntry& e = entries_[i];
        switch (b.kind) {
        case Block::Kind::Shared: return e.group < 0;
        case Block::Kind::Task: return e.group == b.task_index;
        case Block::Kind::All: return true;
        }
        return false;
    }

    /// Total element count of a block's flattened vector.
    std::int64_t block_size(Block b) const {
        std::int64_t n = 0;
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (in_block(i, b)) n += entries_[i].tensor.numel();
        return n;
    }

    /// Number of distinct task groups present.
    int task_count() const {
        int t = 0;
        for (const auto& e : entries_)
            if (e.group >= 0 && e.group + 1 > t) t = e.group + 1;
        return t;
    }

    bool all_finite() const {
        for (const auto& e : entries_)
            if (!e.tensor.all_finite()) return false;
        return true;
    }

private:
    void add(std::string name, int group, Tensor t) {
        for (const auto& e : entries_)
            if (e.name == name) throw DataError("param: duplicate name '" + name + "'");
        entries_.push_back(ParamEntry{std::move(name), group, std::move(t)});
    }

    std::vector<ParamEntry> entries_;
};

/// Concatenates a block's tensors into one vector, canonical order.
inline FlatVector flatten(const ParamSet& params, Block block) {
    FlatVector out;
    out.reserve(params.block_size(block));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.in_block(i, block)) continue;
        const auto v = params.entry(i).tensor.values();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

/// Writes a flat vector back into a copy of the template's block entries.
/// The inverse of flatten for matching templates.
inline ParamSet unflatten(const FlatVector& flat, const ParamSet& templ, Block block) {
    if (static_cast<std::int64_t>(flat.size()) != templ.block_size(block))
        throw DataError("unflatten: length mismatch");
    ParamSet out = templ;
    std::size_t off = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!out.in_block(i, block)) continue;
        auto v = out.entry(i).tensor.values();
        for (std::int64_t j = 0; j < out.entry(i).tensor.numel(); ++j)
            v[j] = flat[off++];
    }
    return out;
}

} // namespace gncurv
