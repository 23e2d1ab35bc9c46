#pragma once

// Training loop and run artifacts: AdamW with the delayed exponential
// learning-rate schedule, per-epoch standardized MAE metrics, and scheduled
// curvature snapshots (per-task Hessian traces plus spectral densities over
// the shared block, and the total-loss trace for the additivity check).
//
// Everything is sequential and deterministic given the three seeds (init,
// shuffle, probes). Artifact files are rewritten atomically at snapshot
// boundaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gncurv/autodiff.hpp"
#include "gncurv/curvature.hpp"
#include "gncurv/dataset.hpp"
#include "gncurv/gn.hpp"
#include "gncurv/serialize.hpp"

namespace gncurv {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

struct Seeds {
    std::uint64_t init = 1;
    std::uint64_t shuffle = 2;
    std::uint64_t probes = 3;
};

struct CurvatureSettings {
    int probes = 500;      // Hutchinson samples per operator
    int lanczos_iters = 100;
    int slq_runs = 10;
    int grid_points = 1024;
    double sigma = 0.0;    // <= 0: default kernel width
    int max_graphs = 0;    // cap on the curvature evaluation set; 0 = full train split
};

struct TrainConfig {
    int epochs = 512;
    int batch_size = 32;
    double lr0 = 1e-3;
    double lr_decay = 0.997; // applied per epoch after epoch 256
    AdamConfig adam;
    std::optional<std::vector<int>> snapshot_epochs; // unset: powers of two + endpoints
    Seeds seeds;
    GnConfig model;
    CurvatureSettings curvature;

    void validate() const {
        if (epochs < 1) throw DataError("train config: epochs must be >= 1");
        if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
        if (lr0 <= 0.0 || lr_decay <= 0.0)
            throw DataError("train config: rates must be positive");
        model.validate();
    }
};

/// Constant lr0 through epoch 256, then exponential decay per epoch.
inline double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw DataError("lr_at: negative epoch");
    if (epoch <= 256) return cfg.lr0;
    return cfg.lr0 * std::pow(cfg.lr_decay, epoch - 256);
}

/// {0, 1, 2, 4, ..., epochs}: init, early epochs, and the final state.
inline std::vector<int> default_snapshot_epochs(int epochs) {
    std::set<int> s{0, epochs};
    for (int p = 1; p < epochs; p *= 2) s.insert(p);
    return {s.begin(), s.end()};
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct OptimizerState {
    FlatVector m, v;
    long step = 0;
};

/// Decoupled-weight-decay Adam with bias correction:
/// theta' = theta - lr * mhat / (sqrt(vhat) + eps) - lr * lambda * theta.
inline void adamw_step(ParamSet& params, const FlatVector& grads, OptimizerState& state,
                       double lr, const AdamConfig& cfg) {
    FlatVector theta = flatten(params, Block::all());
    if (grads.size() != theta.size()) throw DataError("adamw_step: gradient shape mismatch");
    if (state.m.empty()) {
        state.m.assign(theta.size(), 0.0);
        state.v.assign(theta.size(), 0.0);
    }
    if (state.m.size() != theta.size()) throw DataError("adamw_step: state shape mismatch");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        theta[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps)) + lr * cfg.weight_decay * theta[i];
    }
    params = unflatten(theta, params, Block::all());
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline BatchInputs standardized_inputs(const std::vector<Multigraph>& graphs,
                                       const TargetStats& stats) {
    BatchInputs in = make_inputs(batch_graphs(graphs));
    if (static_cast<std::size_t>(in.targets.cols()) != stats.size())
        throw DataError("standardized_inputs: stats/task count mismatch");
    for (std::int64_t r = 0; r < in.targets.rows(); ++r)
        for (std::int64_t t = 0; t < in.targets.cols(); ++t)
            in.targets.at(r, t) = standardize(in.targets.at(r, t), stats[t]);
    return in;
}

struct SplitMetrics {
    std::vector<double> mae; // per task, standardized targets
    std::vector<double> mse; // per task (the split's mean squared loss)
};

inline SplitMetrics evaluate_split(const std::vector<Multigraph>& graphs,
                                   const ParamSet& params, const GnConfig& cfg,
                                   const TargetStats& stats, int chunk_size) {
    if (graphs.empty()) throw DataError("evaluate_split: empty split");
    SplitMetrics m;
    m.mae.assign(cfg.tasks, 0.0);
    m.mse.assign(cfg.tasks, 0.0);
    for (std::size_t start = 0; start < graphs.size();
         start += static_cast<std::size_t>(chunk_size)) {
        const std::size_t stop = std::min(graphs.size(), start + chunk_size);
        const std::vector<Multigraph> chunk(graphs.begin() + start, graphs.begin() + stop);
        const BatchInputs in = standardized_inputs(chunk, stats);
        const Tensor preds = forward_batch(in, params, cfg);
        for (std::int64_t r = 0; r < preds.rows(); ++r)
            for (int t = 0; t < cfg.tasks; ++t) {
                const double resid = preds.at(r, t) - in.targets.at(r, t);
                m.mae[t] += std::abs(resid);
                m.mse[t] += resid * resid;
            }
    }
    for (int t = 0; t < cfg.tasks; ++t) {
        m.mae[t] /= static_cast<double>(graphs.size());
        m.mse[t] /= static_cast<double>(graphs.size());
    }
    return m;
}

/// Per-task mean |prediction - standardized target| on a split.
inline std::vector<double> evaluate_mae(const std::vector<Multigraph>& graphs,
                                        const ParamSet& params, const GnConfig& cfg,
                                        const TargetStats& stats, int chunk_size = 32) {
    return evaluate_split(graphs, params, cfg, stats, chunk_size).mae;
}

/// MAE of the always-zero predictor on standardized targets: the baseline
/// a trained model must beat.
inline std::vector<double> zero_predictor_mae(const std::vector<Multigraph>& graphs,
                                              const TargetStats& stats) {
    if (graphs.empty()) throw DataError("zero_predictor_mae: empty split");
    std::vector<double> mae(stats.size(), 0.0);
    for (const Multigraph& g : graphs)
        for (std::size_t t = 0; t < stats.size(); ++t)
            mae[t] += std::abs(standardize(g.targets[t], stats[t]));
    for (double& x : mae) x /= static_cast<double>(graphs.size());
    return mae;
}

// ---------------------------------------------------------------------------
// Curvature snapshots
// ---------------------------------------------------------------------------

struct TraceRow {
    int epoch = 0;
    std::string task_label;
    double trace_mean = 0.0;
    double trace_stderr = 0.0;
    int n_samples = 0;
};

/// Per-task Hessian operators over the shared block (task heads frozen) and
/// the total-loss operator, assembled as weighted sums over fixed
/// evaluation chunks so memory stays bounded.
inline std::vector<CurvatureOperator> build_snapshot_operators(
    const ParamSet& params, const GnConfig& cfg, const std::vector<Multigraph>& eval_graphs,
    const TargetStats& stats, int chunk_size) {
    if (eval_graphs.empty()) throw DataError("snapshot: empty evaluation set");
    auto shared_params = std::make_shared<const ParamSet>(params);
    std::vector<std::shared_ptr<const BatchInputs>> chunks;
    std::vector<double> weights;
    for (std::size_t start = 0; start < eval_graphs.size();
         start += static_cast<std::size_t>(chunk_size)) {
        const std::size_t stop = std::min(eval_graphs.size(), start + chunk_size);
        const std::vector<Multigraph> chunk(eval_graphs.begin() + start,
                                            eval_graphs.begin() + stop);
        chunks.push_back(
            std::make_shared<const BatchInputs>(standardized_inputs(chunk, stats)));
        weights.push_back(static_cast<double>(stop - start) /
                          static_cast<double>(eval_graphs.size()));
    }

    std::vector<CurvatureOperator> ops;
    for (int t = 0; t < cfg.tasks; ++t) {
        std::vector<CurvatureOperator> parts;
        for (const auto& in : chunks)
            parts.push_back(hessian_operator(
                [shared_params, cfg, in, t](auto& tp, std::span<const NodeId> leaves) {
                    return build_task_loss(tp, leaves, *shared_params, cfg, *in, t);
                },
                shared_params, Block::shared(), "task" + std::to_string(t) + "-chunk"));
        ops.push_back(combine_operators(std::move(parts), weights,
                                        "task" + std::to_string(t)));
    }
    std::vector<CurvatureOperator> parts;
    for (const auto& in : chunks)
        parts.push_back(hessian_operator(
            [shared_params, cfg, in](auto& tp, std::span<const NodeId> leaves) {
                return build_total_loss(tp, leaves, *shared_params, cfg, *in);
            },
            shared_params, Block::shared(), "total-chunk"));
    ops.push_back(combine_operators(std::move(parts), weights, "total"));
    return ops;
}

/// One curvature snapshot: T+1 trace rows (tasks + total, shared probe
/// seed) and one density document per task.
inline std::vector<TraceRow> curvature_snapshot(
    const ParamSet& params, const GnConfig& cfg, const std::vector<Multigraph>& eval_graphs,
    const TargetStats& stats, int epoch, const CurvatureSettings& cs, int chunk_size,
    std::uint64_t probe_seed, const std::filesystem::path& outdir,
    std::vector<std::filesystem::path>* density_files) {
    std::vector<Multigraph> subset = eval_graphs;
    if (cs.max_graphs > 0 && static_cast<int>(subset.size()) > cs.max_graphs)
        subset.resize(cs.max_graphs);

    const auto ops = build_snapshot_operators(params, cfg, subset, stats, chunk_size);
    const std::uint64_t trace_seed = derive_seed(probe_seed, "trace-epoch",
                                                 static_cast<std::uint64_t>(epoch));

    std::vector<TraceRow> rows;
    for (const CurvatureOperator& op : ops) {
        // identical seed across operators: shared probe vectors
        const TraceEstimate est = hutchinson_trace(op, cs.probes, trace_seed);
        if (!std::isfinite(est.mean))
            throw NumericError("snapshot: non-finite trace for " + op.label());
        rows.push_back({epoch, op.label(), est.mean, est.stderr_of_mean, est.n_samples});
    }

    for (int t = 0; t < cfg.tasks; ++t) {
        const CurvatureOperator& op = ops[t];
        const int iters = std::min<std::int64_t>(cs.lanczos_iters, op.dim());
        const std::uint64_t slq_seed = derive_seed(
            derive_seed(probe_seed, "slq-epoch", static_cast<std::uint64_t>(epoch)),
            "task", static_cast<std::uint64_t>(t));
        const RitzSpectrum ritz = slq_ritz(op, iters, cs.slq_runs, slq_seed);
        const SpectralDensity dens = density_from_ritz(ritz, cs.sigma, cs.grid_points);
        const auto path = outdir / ("density_epoch" + std::to_string(epoch) + "_task" +
                                    std::to_string(t) + ".json");
        atomic_write(path, density_to_json(epoch, op.label(), dens, ritz).dump() + "\n");
        if (density_files) density_files->push_back(path);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct MetricsRow {
    int epoch = 0;
    std::string split;
    std::string task_label;
    double standardized_mae = 0.0;
    double loss = 0.0;
};

struct RunArtifacts {
    std::filesystem::path outdir;
    std::filesystem::path metrics_csv;
    std::filesystem::path trace_csv;
    std::filesystem::path stats_json;
    std::vector<std::filesystem::path> density_files;
    std::vector<std::filesystem::path> checkpoint_files;
    TargetStats stats;
    ParamSet final_params;
};

namespace detail {

inline std::string metrics_csv_text(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os << "epoch,split,task_label,standardized_mae,loss\n";
    for (const auto& r : rows)
        os << r.epoch << "," << r.split << "," << r.task_label << ","
           << format_double(r.standardized_mae) << "," << format_double(r.loss) << "\n";
    return os.str();
}

inline std::string trace_csv_text(const std::vector<TraceRow>& rows) {
    std::ostringstream os;
    os << "epoch,task_label,trace_mean,trace_stderr,n_samples\n";
    for (const auto& r : rows)
        os << r.epoch << "," << r.task_label << "," << format_double(r.trace_mean) << ","
           << format_double(r.trace_stderr) << "," << r.n_samples << "\n";
    return os.str();
}

} // namespace detail

/// Trains on pre-split data: shuffled minibatches, AdamW, per-epoch metrics
/// on both splits, curvature snapshots at the configured epochs (epoch e
/// means "after e epochs"; 0 is initialization). Aborts on non-finite loss.
inline RunArtifacts train(const TrainConfig& cfg, const std::vector<Multigraph>& train_graphs,
                          const std::vector<Multigraph>& test_graphs,
                          const std::filesystem::path& outdir) {
    cfg.validate();
    if (train_graphs.empty()) throw DataError("train: empty training split");
    std::filesystem::create_directories(outdir);

    const TargetStats stats = fit_target_stats(train_graphs);
    if (static_cast<int>(stats.size()) != cfg.model.tasks)
        throw DataError("train: model task count does not match dataset targets");

    RunArtifacts art;
    art.outdir = outdir;
    art.metrics_csv = outdir / "metrics.csv";
    art.trace_csv = outdir / "trace.csv";
    art.stats_json = outdir / "stats.json";
    art.stats = stats;
    save_stats_sidecar(art.stats_json, stats);

    ParamSet params = init_params(cfg.model, cfg.seeds.init);
    OptimizerState opt;
    std::vector<MetricsRow> metrics;
    std::vector<TraceRow> traces;

    const std::vector<int> snaps =
        cfg.snapshot_epochs ? *cfg.snapshot_epochs : default_snapshot_epochs(cfg.epochs);
    const std::set<int> snap_set(snaps.begin(), snaps.end());

    auto flush = [&]() {
        atomic_write(art.metrics_csv, detail::metrics_csv_text(metrics));
        atomic_write(art.trace_csv, detail::trace_csv_text(traces));
    };

    auto snapshot = [&](int epoch) {
        const auto rows =
            curvature_snapshot(params, cfg.model, train_graphs, stats, epoch,
                               cfg.curvature, cfg.batch_size, cfg.seeds.probes, outdir,
                               &art.density_files);
        traces.insert(traces.end(), rows.begin(), rows.end());
        const auto ck = outdir / ("checkpoint_epoch" + std::to_string(epoch) + ".json");
        save_checkpoint(ck, cfg.model, stats, params);
        art.checkpoint_files.push_back(ck);
        flush();
    };

    std::vector<std::size_t> order(train_graphs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch <= cfg.epochs; ++epoch) {
        if (snap_set.count(epoch)) snapshot(epoch);
        if (epoch == cfg.epochs) break;

        Rng shuffle_rng(derive_seed(cfg.seeds.shuffle, "epoch",
                                    static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.index(i)]);

        const double lr = lr_at(epoch, cfg);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Multigraph> batch;
            batch.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i)
                batch.push_back(train_graphs[order[i]]);
            const BatchInputs in = standardized_inputs(batch, stats);

            auto [loss, g] = loss_and_grad(
                [&](auto& tp, std::span<const NodeId> leaves) {
                    return build_total_loss(tp, leaves, params, cfg.model, in);
                },
                params, Block::all());
            if (!std::isfinite(loss))
                throw NumericError("train: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(start / cfg.batch_size));
            adamw_step(params, g, opt, lr, cfg.adam);
        }

        const SplitMetrics train_m =
            evaluate_split(train_graphs, params, cfg.model, stats, cfg.batch_size);
        for (int t = 0; t < cfg.model.tasks; ++t)
            metrics.push_back({epoch + 1, "train", "task" + std::to_string(t),
                               train_m.mae[t], train_m.mse[t]});
        if (!test_graphs.empty()) {
            const SplitMetrics test_m =
                evaluate_split(test_graphs, params, cfg.model, stats, cfg.batch_size);
            for (int t = 0; t < cfg.model.tasks; ++t)
                metrics.push_back({epoch + 1, "test", "task" + std::to_string(t),
                                   test_m.mae[t], test_m.mse[t]});
        }
    }

    const auto final_ck = outdir / "checkpoint_final.json";
    save_checkpoint(final_ck, cfg.model, stats, params);
    art.checkpoint_files.push_back(final_ck);
    art.final_params = params;
    flush();
    return art;
}

// ---------------------------------------------------------------------------
// Run config JSON
// ---------------------------------------------------------------------------

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    require_keys(j,
                 {"epochs", "batch_size", "lr0", "lr_decay", "adam", "snapshot_epochs",
                  "seeds", "model", "curvature"},
                 "train config");
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr0 = j.value("lr0", c.lr0);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        require_keys(a, {"beta1", "beta2", "eps", "weight_decay"}, "adam config");
        c.adam.beta1 = a.value("beta1", c.adam.beta1);
        c.adam.beta2 = a.value("beta2", c.adam.beta2);
        c.adam.eps = a.value("eps", c.adam.eps);
        c.adam.weight_decay = a.value("weight_decay", c.adam.weight_decay);
    }
    if (j.contains("snapshot_epochs"))
        c.snapshot_epochs = j.at("snapshot_epochs").get<std::vector<int>>();
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        require_keys(s, {"init", "shuffle", "probes"}, "seeds config");
        c.seeds.init = s.value("init", c.seeds.init);
        c.seeds.shuffle = s.value("shuffle", c.seeds.shuffle);
        c.seeds.probes = s.value("probes", c.seeds.probes);
    }
    if (j.contains("model")) c.model = gn_config_from_json(j.at("model"));
    if (j.contains("curvature")) {
        const auto& cv = j.at("curvature");
        require_keys(cv, {"probes", "lanczos_iters", "slq_runs", "grid_points", "sigma",
                          "max_graphs"},
                     "curvature config");
        c.curvature.probes = cv.value("probes", c.curvature.probes);
        c.curvature.lanczos_iters = cv.value("lanczos_iters", c.curvature.lanczos_iters);
        c.curvature.slq_runs = cv.value("slq_runs", c.curvature.slq_runs);
        c.curvature.grid_points = cv.value("grid_points", c.curvature.grid_points);
        c.curvature.sigma = cv.value("sigma", c.curvature.sigma);
        c.curvature.max_graphs = cv.value("max_graphs", c.curvature.max_graphs);
    }
    c.validate();
    return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("config " + path.string() + ": " + e.what());
    }
    return train_config_from_json(j);
}

} // namespace gncurv
