// Command-line surface: synthetic dataset generation, training with
// curvature tracking, standalone curvature probes of a checkpoint, the
// random-matrix spectrum demo, and dataset validation.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gncurv/curvature.hpp"
#include "gncurv/dataset.hpp"
#include "gncurv/gn.hpp"
#include "gncurv/serialize.hpp"
#include "gncurv/train.hpp"

namespace fs = std::filesystem;
using namespace gncurv;

namespace {

int run_synth(std::int64_t n, std::uint64_t seed, const std::string& out, int vocab,
              int edge_dim, int tasks) {
    const auto graphs = synth_generate(n, seed, vocab, edge_dim, tasks);
    save_dataset(graphs, out);
    std::cout << "wrote " << graphs.size() << " graphs to " << out << "\n";
    return 0;
}

int run_train(const std::string& data, const std::string& config_path,
              const std::string& outdir, double train_fraction,
              std::uint64_t split_seed) {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = load_train_config(config_path);

    const auto dataset = load_dataset(data);
    const Split sp = split(dataset, SplitSpec{train_fraction, split_seed});
    std::cout << "dataset: " << dataset.size() << " graphs (" << sp.train.size()
              << " train / " << sp.test.size() << " test)\n";

    const RunArtifacts art = train(cfg, sp.train, sp.test, outdir);
    std::cout << "metrics: " << art.metrics_csv << "\n"
              << "traces:  " << art.trace_csv << "\n"
              << "density snapshots: " << art.density_files.size() << "\n"
              << "checkpoints: " << art.checkpoint_files.size() << "\n";
    return 0;
}

int run_curvature(const std::string& checkpoint, const std::string& data,
                  const std::string& task, int probes, int lanczos_iters, int runs,
                  double sigma, int grid_points, std::uint64_t seed,
                  const std::string& outdir) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const auto graphs = load_dataset(data);
    fs::create_directories(outdir);

    const auto ops = build_snapshot_operators(ck.params, ck.config, graphs, ck.stats,
                                              /*chunk_size=*/32);
    std::vector<const CurvatureOperator*> selected;
    for (const auto& op : ops)
        if (task == "all" || op.label() == task) selected.push_back(&op);
    if (selected.empty()) throw DataError("curvature: unknown task label '" + task + "'");

    std::ostringstream csv;
    csv << "epoch,task_label,trace_mean,trace_stderr,n_samples\n";
    for (const CurvatureOperator* op : selected) {
        const TraceEstimate est = hutchinson_trace(*op, probes, seed);
        csv << 0 << "," << op->label() << "," << format_double(est.mean) << ","
            << format_double(est.stderr_of_mean) << "," << est.n_samples << "\n";
        std::cout << op->label() << ": trace " << est.mean << " +/- "
                  << est.stderr_of_mean << " (" << est.n_samples << " probes)\n";
        if (op->label() == "total") continue; // trace only for the total operator
        const int iters = static_cast<int>(std::min<std::int64_t>(lanczos_iters, op->dim()));
        const RitzSpectrum ritz = slq_ritz(*op, iters, runs, derive_seed(seed, op->label()));
        const SpectralDensity dens = density_from_ritz(ritz, sigma, grid_points);
        const auto path = fs::path(outdir) / ("density_" + op->label() + ".json");
        atomic_write(path, density_to_json(0, op->label(), dens, ritz).dump() + "\n");
        std::cout << op->label() << ": density -> " << path << "\n";
    }
    atomic_write(fs::path(outdir) / "trace.csv", csv.str());
    return 0;
}

int run_spectrum_demo(std::int64_t dim, int lanczos_iters, int runs, double sigma,
                      int probes, int grid_points, std::uint64_t seed,
                      const std::string& outdir) {
    fs::create_directories(outdir);
    auto [op, matrix] = random_symmetric_operator(dim, seed);

    const std::vector<double> dense = dense_spectrum_oracle(matrix);
    double exact_trace = 0.0;
    for (std::int64_t i = 0; i < dim; ++i) exact_trace += matrix.at(i, i);

    const int iters = static_cast<int>(std::min<std::int64_t>(lanczos_iters, dim));
    const RitzSpectrum ritz = slq_ritz(op, iters, runs, derive_seed(seed, "demo-slq"));
    const SpectralDensity est = density_from_ritz(ritz, sigma, grid_points);
    const std::vector<double> unit(dense.size(), 1.0 / static_cast<double>(dense.size()));
    const SpectralDensity exact = gaussian_mixture_density(dense, unit, est.sigma, est.grid);

    std::vector<double> diff(est.grid.size());
    for (std::size_t i = 0; i < diff.size(); ++i)
        diff[i] = std::abs(est.density[i] - exact.density[i]);
    const double l1 = trapezoid(est.grid, diff);

    const auto [rmin, rmax] = std::minmax_element(ritz.values.begin(), ritz.values.end());
    const double rel_min = std::abs(*rmin - dense.front()) / std::abs(dense.front());
    const double rel_max = std::abs(*rmax - dense.back()) / std::abs(dense.back());

    const TraceEstimate tr = hutchinson_trace(op, probes, derive_seed(seed, "demo-trace"));

    nlohmann::json j;
    j["dim"] = dim;
    j["seed"] = seed;
    j["lanczos_iters"] = iters;
    j["runs"] = runs;
    j["sigma"] = est.sigma;
    j["ritz_min"] = *rmin;
    j["ritz_max"] = *rmax;
    j["dense_min"] = dense.front();
    j["dense_max"] = dense.back();
    j["rel_err_min"] = rel_min;
    j["rel_err_max"] = rel_max;
    j["density_l1"] = l1;
    j["trace"] = {{"estimate", tr.mean},
                  {"stderr", tr.stderr_of_mean},
                  {"n_samples", tr.n_samples},
                  {"exact", exact_trace}};
    j["grid"] = est.grid;
    j["density"] = est.density;
    j["dense_density"] = exact.density;
    j["dense_eigenvalues"] = dense;
    const auto path = fs::path(outdir) / "spectrum_demo.json";
    atomic_write(path, j.dump() + "\n");

    std::cout << "dim " << dim << ", " << iters << " Lanczos iters, " << runs << " runs\n"
              << "extreme eigenvalues: dense [" << dense.front() << ", " << dense.back()
              << "], ritz [" << *rmin << ", " << *rmax << "]\n"
              << "relative errors: min " << rel_min << ", max " << rel_max << "\n"
              << "density L1 distance (sigma " << est.sigma << "): " << l1 << "\n"
              << "trace: exact " << exact_trace << ", estimate " << tr.mean << " +/- "
              << tr.stderr_of_mean << "\n"
              << "report -> " << path << "\n";
    return 0;
}

int run_validate(const std::string& data) {
    const auto graphs = load_dataset(data); // structural errors throw with line numbers
    std::size_t bad = 0;
    for (const auto& g : graphs) {
        const auto issues = validate_graph(g);
        for (const auto& msg : issues) {
            std::cout << g.id << ": " << msg << "\n";
            ++bad;
        }
    }
    try {
        batch_graphs(graphs);
    } catch (const DataError& e) {
        std::cout << "batching: " << e.what() << "\n";
        ++bad;
    }
    std::cout << graphs.size() << " graphs, " << bad << " problems\n";
    return bad == 0 ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"curvature analysis for multi-task graph networks"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic multigraph dataset");
    std::int64_t synth_n = 512;
    std::uint64_t synth_seed = 1;
    std::string synth_out;
    int synth_vocab = 8, synth_edge_dim = 4, synth_tasks = 3;
    synth->add_option("--n", synth_n, "number of graphs");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output JSONL path")->required();
    synth->add_option("--node-vocab", synth_vocab, "one-hot node vocabulary size");
    synth->add_option("--edge-dim", synth_edge_dim, "edge feature width");
    synth->add_option("--tasks", synth_tasks, "number of targets (1..3)");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model with curvature tracking");
    std::string train_data, train_config, train_outdir;
    double train_fraction = 0.70;
    std::uint64_t split_seed = 0;
    train_cmd->add_option("--data", train_data, "dataset JSONL")->required();
    train_cmd->add_option("--config", train_config, "run config JSON");
    train_cmd->add_option("--outdir", train_outdir, "artifact directory")->required();
    train_cmd->add_option("--train-fraction", train_fraction, "train split fraction");
    train_cmd->add_option("--split-seed", split_seed, "split shuffle seed");

    // curvature
    auto* curv = app.add_subcommand("curvature", "probe a checkpoint's Hessians");
    std::string curv_ckpt, curv_data, curv_task = "all", curv_outdir = "curvature_out";
    int curv_probes = 500, curv_lanczos = 100, curv_runs = 10, curv_grid = 1024;
    double curv_sigma = 0.0;
    std::uint64_t curv_seed = 3;
    curv->add_option("--checkpoint", curv_ckpt, "checkpoint JSON")->required();
    curv->add_option("--data", curv_data, "evaluation dataset JSONL")->required();
    curv->add_option("--task", curv_task, "task label (task0.., total, all)");
    curv->add_option("--probes", curv_probes, "Hutchinson probes");
    curv->add_option("--lanczos", curv_lanczos, "Lanczos iterations");
    curv->add_option("--runs", curv_runs, "SLQ averaging runs");
    curv->add_option("--sigma", curv_sigma, "kernel width (<=0: auto)");
    curv->add_option("--grid", curv_grid, "density grid points");
    curv->add_option("--seed", curv_seed, "probe seed");
    curv->add_option("--outdir", curv_outdir, "output directory");

    // spectrum-demo
    auto* demo = app.add_subcommand(
        "spectrum-demo", "SLQ vs dense oracle on a random symmetric matrix");
    std::int64_t demo_dim = 1000;
    int demo_lanczos = 100, demo_runs = 10, demo_probes = 500, demo_grid = 1024;
    double demo_sigma = 0.0;
    std::uint64_t demo_seed = 7;
    std::string demo_outdir = "spectrum_demo_out";
    demo->add_option("--dim", demo_dim, "matrix dimension");
    demo->add_option("--lanczos", demo_lanczos, "Lanczos iterations");
    demo->add_option("--runs", demo_runs, "SLQ averaging runs");
    demo->add_option("--sigma", demo_sigma, "kernel width (<=0: auto)");
    demo->add_option("--probes", demo_probes, "Hutchinson probes");
    demo->add_option("--grid", demo_grid, "density grid points");
    demo->add_option("--seed", demo_seed, "matrix/probe seed");
    demo->add_option("--outdir", demo_outdir, "output directory");

    // validate
    auto* val = app.add_subcommand("validate", "check dataset invariants");
    std::string val_data;
    val->add_option("--data", val_data, "dataset JSONL")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed())
            return run_synth(synth_n, synth_seed, synth_out, synth_vocab, synth_edge_dim,
                             synth_tasks);
        if (train_cmd->parsed())
            return run_train(train_data, train_config, train_outdir, train_fraction,
                             split_seed);
        if (curv->parsed())
            return run_curvature(curv_ckpt, curv_data, curv_task, curv_probes,
                                 curv_lanczos, curv_runs, curv_sigma, curv_grid,
                                 curv_seed, curv_outdir);
        if (demo->parsed())
            return run_spectrum_demo(demo_dim, demo_lanczos, demo_runs, demo_sigma,
                                     demo_probes, demo_grid, demo_seed, demo_outdir);
        if (val->parsed()) return run_validate(val_data);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
