// Command-line front end: train, flops, sweep, rerun.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "rigl/rigl.hpp"

using namespace rigl;

namespace {

// Flags shared by train, sweep and rerun. Unset flags leave the config alone.
struct Overrides {
    std::string config_path;
    std::optional<std::string> method, distribution, data_dir, dataset, arch, out_dir, buffer_mode, redistribution;
    std::optional<double> sparsity, alpha, learning_rate, t_end_fraction;
    std::optional<std::size_t> delta_t, epochs, batch_size, multiplier;
    std::optional<std::uint64_t> seed;
    bool augment = false;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        app->add_option("--method", method, "dense, small_dense, static, set, rigl, snfs, rigl_sg, rigl_sm, pruning, rigl_struct");
        app->add_option("--sparsity", sparsity, "global sparsity S");
        app->add_option("--distribution", distribution, "uniform, random, er or erk");
        app->add_option("--alpha", alpha, "initial update fraction");
        app->add_option("--delta-t", delta_t, "steps between mask updates");
        app->add_option("--t-end", t_end_fraction, "last update step as a fraction of training");
        app->add_option("--seed", seed);
        app->add_option("--data-dir", data_dir);
        app->add_option("--dataset", dataset, "mnist, cifar10, cifar100, cifar100-coarse or synthetic");
        app->add_option("--arch", arch, "mlp, small-cnn, wrn-22-2, resnet50-cifar or an architecture JSON");
        app->add_option("--epochs", epochs);
        app->add_option("--batch-size", batch_size);
        app->add_option("--lr", learning_rate);
        app->add_option("--multiplier", multiplier, "training length multiplier");
        app->add_option("--buffer-mode", buffer_mode, "auto, sparse or dense");
        app->add_option("--redistribution", redistribution, "auto, none, sparse_grad or sparse_momentum");
        app->add_option("--out-dir", out_dir);
        app->add_flag("--augment", augment, "random flips and pad-crops");
    }

    TrainConfig resolve() const {
        TrainConfig c = config_path.empty() ? TrainConfig{} : load_config(config_path);
        if (method) c.method = *method;
        if (distribution) c.distribution = *distribution;
        if (data_dir) c.data_dir = *data_dir;
        if (dataset) c.dataset = *dataset;
        if (arch) c.arch = *arch;
        if (out_dir) c.out_dir = *out_dir;
        if (buffer_mode) c.buffer_mode = *buffer_mode;
        if (redistribution) c.redistribution = *redistribution;
        if (sparsity) c.sparsity = *sparsity;
        if (alpha) c.alpha = *alpha;
        if (learning_rate) c.learning_rate = *learning_rate;
        if (t_end_fraction) c.t_end_fraction = *t_end_fraction;
        if (delta_t) c.delta_t = *delta_t;
        if (epochs) c.epochs = *epochs;
        if (batch_size) c.batch_size = *batch_size;
        if (multiplier) c.training_multiplier = *multiplier;
        if (seed) c.seed = *seed;
        if (augment) c.augment = true;
        return c;
    }
};

void print_run(const RunResult& r) {
    std::cout << "epoch  train_loss  val_acc  test_acc  sparsity\n";
    for (const auto& m : r.metrics)
        std::cout << std::setw(5) << m.epoch << std::fixed << std::setprecision(4) << std::setw(12) << m.train_loss
                  << std::setw(9) << m.val_acc << std::setw(10) << m.test_acc << std::setw(10) << m.sparsity << '\n';
    std::cout << std::setprecision(2) << "train FLOPs " << r.flops.train_ratio << "x, test FLOPs "
              << r.flops.test_ratio << "x of dense\n";
    if (!r.run_dir.empty()) std::cout << "outputs in " << r.run_dir.string() << '\n';
}

// f_s column of a metrics.csv, or a comma-separated list of numbers.
FlopTrace read_trace(const std::string& src) {
    FlopTrace t;
    if (std::filesystem::exists(src)) {
        std::ifstream is(src);
        std::string line;
        std::getline(is, line);
        if (line != kMetricsCsvHeader) throw InputError(src + ": not a metrics.csv");
        while (std::getline(is, line)) {
            std::vector<std::string> cols;
            std::stringstream ls(line);
            for (std::string cell; std::getline(ls, cell, ',');) cols.push_back(cell);
            if (cols.size() != 7) throw InputError(src + ": malformed row '" + line + "'");
            t.record(std::stod(cols[5]));
        }
    } else {
        std::stringstream ls(src);
        for (std::string cell; std::getline(ls, cell, ',');) t.record(std::stod(cell));
    }
    if (t.empty()) throw InputError("empty FLOP trace");
    return t;
}

template <class T>
std::vector<T> parse_list(const std::vector<std::string>& items) {
    std::vector<T> out;
    for (const auto& s : items) {
        std::stringstream ls(s);
        for (std::string cell; std::getline(ls, cell, ',');) {
            if (cell.empty()) continue;
            std::stringstream cs(cell);
            T v;
            if (!(cs >> v)) throw InputError("cannot parse '" + cell + "'");
            out.push_back(v);
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic sparse training toolkit"};
    app.require_subcommand(1);

    // train
    Overrides train_o;
    auto* train = app.add_subcommand("train", "train one configuration");
    train_o.attach(train);

    // flops
    std::string f_arch = "wrn-22-2", f_dist = "erk", f_method = "rigl", f_trace, f_save;
    double f_sparsity = 0.9;
    std::size_t f_delta_t = 100, f_classes = 0;
    bool f_json = false, f_keep_first = true;
    auto* flops = app.add_subcommand("flops", "FLOP report for an architecture and sparsity");
    flops->add_option("--arch", f_arch, "built-in name or architecture JSON")->capture_default_str();
    flops->add_option("--classes", f_classes, "override the class count of a built-in architecture");
    flops->add_option("--distribution", f_dist)->capture_default_str();
    flops->add_option("--sparsity", f_sparsity)->capture_default_str();
    flops->add_option("--method", f_method)->capture_default_str();
    flops->add_option("--delta-t", f_delta_t)->capture_default_str();
    flops->add_option("--trace", f_trace, "metrics.csv or comma-separated f_s values (snfs, pruning, rigl_sg/sm)");
    flops->add_option("--save-arch", f_save, "write the architecture as JSON");
    flops->add_flag("!--no-dense-first", f_keep_first, "uniform: also sparsify the first layer");
    flops->add_flag("--json", f_json, "print JSON instead of a table");

    // sweep
    Overrides sweep_o;
    std::vector<std::string> s_lr, s_adt, s_sp, s_dist, s_seeds;
    std::size_t s_workers = 1;
    std::string s_prefix = "sweep";
    bool s_write_runs = false;
    auto* sw = app.add_subcommand("sweep", "grid over learning rate, (alpha, delta_t), sparsity, distribution, seed");
    sweep_o.attach(sw);
    sw->add_option("--lrs", s_lr, "learning rates, comma separated");
    sw->add_option("--alpha-dt", s_adt, "alpha:delta_t pairs, e.g. 0.3:100,0.4:200");
    sw->add_option("--sparsities", s_sp);
    sw->add_option("--distributions", s_dist);
    sw->add_option("--seeds", s_seeds);
    sw->add_option("--workers", s_workers)->capture_default_str();
    sw->add_option("--prefix", s_prefix, "writes <prefix>_runs.csv and <prefix>_cells.csv")->capture_default_str();
    sw->add_flag("--write-runs", s_write_runs, "keep per-run output directories");

    // rerun
    Overrides rerun_o;
    std::string r_mask, r_reuse = "positions";
    auto* rr = app.add_subcommand("rerun", "retrain from a mask checkpoint with fresh weights");
    rerun_o.attach(rr);
    rr->add_option("--mask", r_mask, "mask.json from an earlier run")->required()->check(CLI::ExistingFile);
    rr->add_option("--reuse", r_reuse, "positions or densities")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            print_run(run(train_o.resolve()));
        } else if (flops->parsed()) {
            TrainConfig c;
            c.arch = f_arch;
            const ArchSpec spec = base_arch(c, {}, f_classes);
            if (!f_save.empty()) std::ofstream(f_save) << nlohmann::json(spec).dump(2) << '\n';
            const Method method = method_from_string(f_method);
            SparsityConfig sc;
            sc.sparsity = f_sparsity;
            sc.keep_first_layer_dense = f_keep_first;
            set_distribution(sc, f_dist);
            std::vector<double> dens;
            if (method == Method::dense) {
                dens.assign(spec.maskable_indices().size(), 1.0);
            } else {
                for (double s : solve_distribution(spec, sc)) dens.push_back(1.0 - s);
            }
            std::optional<FlopTrace> trace;
            if (!f_trace.empty()) trace = read_trace(f_trace);
            const FlopReport r = flop_report(spec, dens, method, f_delta_t, trace ? &*trace : nullptr);
            if (f_json) {
                std::cout << to_json(r).dump(2) << '\n';
            } else {
                print_report(std::cout, r);
            }
        } else if (sw->parsed()) {
            SweepGrid g;
            g.learning_rates = parse_list<double>(s_lr);
            g.sparsities = parse_list<double>(s_sp);
            g.seeds = parse_list<std::uint64_t>(s_seeds);
            g.distributions = parse_list<std::string>(s_dist);
            for (const auto& pair : parse_list<std::string>(s_adt)) {
                const auto colon = pair.find(':');
                if (colon == std::string::npos) throw InputError("expected alpha:delta_t, got '" + pair + "'");
                g.alpha_delta_t.emplace_back(std::stod(pair.substr(0, colon)),
                                             static_cast<std::size_t>(std::stoull(pair.substr(colon + 1))));
            }
            const SweepResult r = sweep(sweep_o.resolve(), g, s_workers, s_write_runs);
            std::ofstream runs(s_prefix + "_runs.csv"), cells(s_prefix + "_cells.csv");
            write_sweep_runs_csv(runs, r);
            write_sweep_cells_csv(cells, r);
            write_sweep_cells_csv(std::cout, r);
            std::size_t failed = 0;
            for (const auto& x : r.runs) failed += !x.ok;
            if (failed) std::cerr << failed << " of " << r.runs.size() << " runs failed; see " << s_prefix << "_runs.csv\n";
        } else if (rr->parsed()) {
            print_run(rerun_with_mask(rerun_o.resolve(), load_masks(r_mask), mask_reuse_from_string(r_reuse)));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
