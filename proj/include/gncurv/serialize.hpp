#pragma once

// File formats: checkpoint JSON (config + stats + parameters in canonical
// order), stats sidecar, density snapshot JSON, and atomic writes. Doubles
// are serialized by nlohmann::json in shortest round-trip form, so a parsed
// file reproduces the written values exactly.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gncurv/curvature.hpp"
#include "gncurv/dataset.hpp"
#include "gncurv/gn.hpp"
#include "gncurv/param.hpp"

namespace gncurv {

inline constexpr const char* kCheckpointFormat = "gncurv-checkpoint-1";

/// Shortest round-trip decimal form of a double (for CSV cells).
inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

/// Writes content to a temporary file and renames it into place.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write file: " + tmp.string());
        out << content;
        if (!out.flush()) throw DataError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// Rejects keys outside the given whitelist.
inline void require_keys(const nlohmann::json& j,
                         std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw DataError(where + ": unknown key '" + item.key() + "'");
    }
}

inline nlohmann::json gn_config_to_json(const GnConfig& c) {
    return {{"node_feat_dim", c.node_feat_dim},
            {"edge_feat_dim", c.edge_feat_dim},
            {"latent_dim", c.latent_dim},
            {"steps", c.steps},
            {"edge_hidden", c.edge_hidden},
            {"node_hidden", c.node_hidden},
            {"global_hidden", c.global_hidden},
            {"head_hidden", c.head_hidden},
            {"tasks", c.tasks},
            {"share_step_params", c.share_step_params}};
}

inline GnConfig gn_config_from_json(const nlohmann::json& j) {
    require_keys(j,
                 {"node_feat_dim", "edge_feat_dim", "latent_dim", "steps", "edge_hidden",
                  "node_hidden", "global_hidden", "head_hidden", "tasks",
                  "share_step_params"},
                 "model config");
    GnConfig c;
    c.node_feat_dim = j.value("node_feat_dim", c.node_feat_dim);
    c.edge_feat_dim = j.value("edge_feat_dim", c.edge_feat_dim);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.steps = j.value("steps", c.steps);
    c.edge_hidden = j.value("edge_hidden", c.edge_hidden);
    c.node_hidden = j.value("node_hidden", c.node_hidden);
    c.global_hidden = j.value("global_hidden", c.global_hidden);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.tasks = j.value("tasks", c.tasks);
    c.share_step_params = j.value("share_step_params", c.share_step_params);
    c.validate();
    return c;
}

inline nlohmann::json stats_to_json(const TargetStats& stats) {
    auto arr = nlohmann::json::array();
    for (const TaskStats& s : stats) arr.push_back({{"mean", s.mean}, {"std", s.std}});
    return arr;
}

inline TargetStats stats_from_json(const nlohmann::json& j) {
    TargetStats stats;
    for (const auto& e : j) {
        require_keys(e, {"mean", "std"}, "stats");
        stats.push_back({e.at("mean").get<double>(), e.at("std").get<double>()});
    }
    return stats;
}

/// Sidecar with per-task standardization stats and optional decile edges
/// per raw edge feature.
inline void save_stats_sidecar(const std::filesystem::path& path, const TargetStats& stats,
                               const std::vector<std::vector<double>>& edge_bins = {}) {
    nlohmann::json j;
    j["per_task"] = stats_to_json(stats);
    j["edge_bins"] = edge_bins;
    atomic_write(path, j.dump(2) + "\n");
}

struct StatsSidecar {
    TargetStats per_task;
    std::vector<std::vector<double>> edge_bins;
};

inline StatsSidecar load_stats_sidecar(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open stats file: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);
    require_keys(j, {"per_task", "edge_bins"}, "stats sidecar");
    StatsSidecar s;
    s.per_task = stats_from_json(j.at("per_task"));
    s.edge_bins = j.value("edge_bins", std::vector<std::vector<double>>{});
    return s;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
    GnConfig config;
    TargetStats stats;
    ParamSet params;
};

inline void save_checkpoint(const std::filesystem::path& path, const GnConfig& cfg,
                            const TargetStats& stats, const ParamSet& params) {
    nlohmann::json j;
    j["format_version"] = kCheckpointFormat;
    j["config"] = gn_config_to_json(cfg);
    j["stats"] = stats_to_json(stats);
    auto arr = nlohmann::json::array();
    for (const auto& e : params.entries()) {
        nlohmann::json pe;
        pe["name"] = e.name;
        pe["group"] = e.group;
        pe["shape"] = e.tensor.shape();
        pe["values"] = std::vector<double>(e.tensor.values().begin(),
                                           e.tensor.values().end());
        arr.push_back(std::move(pe));
    }
    j["params"] = std::move(arr);
    atomic_write(path, j.dump() + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
    require_keys(j, {"format_version", "config", "stats", "params"}, "checkpoint");
    if (j.at("format_version").get<std::string>() != kCheckpointFormat)
        throw DataError("checkpoint " + path.string() + ": unsupported format version");
    Checkpoint ck;
    ck.config = gn_config_from_json(j.at("config"));
    ck.stats = stats_from_json(j.at("stats"));
    for (const auto& pe : j.at("params")) {
        require_keys(pe, {"name", "group", "shape", "values"}, "checkpoint param");
        const int group = pe.at("group").get<int>();
        Tensor t(pe.at("shape").get<std::vector<std::int64_t>>(),
                 pe.at("values").get<std::vector<double>>());
        if (group < 0)
            ck.params.add_shared(pe.at("name").get<std::string>(), std::move(t));
        else
            ck.params.add_task(group, pe.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Density snapshot documents
// ---------------------------------------------------------------------------

inline nlohmann::json density_to_json(int epoch, const std::string& task_label,
                                      const SpectralDensity& density,
                                      const RitzSpectrum& ritz) {
    nlohmann::json j;
    j["epoch"] = epoch;
    j["task_label"] = task_label;
    j["sigma"] = density.sigma;
    j["grid"] = density.grid;
    j["density"] = density.density;
    auto arr = nlohmann::json::array();
    for (std::size_t i = 0; i < ritz.values.size(); ++i)
        arr.push_back({{"value", ritz.values[i]}, {"weight", ritz.weights[i]}});
    j["ritz"] = std::move(arr);
    return j;
}

} // namespace gncurv
