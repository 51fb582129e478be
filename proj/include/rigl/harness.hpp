#pragma once

// Experiment driver: configuration, the training loop, metric and checkpoint
// emission, mask re-runs and grid sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigl/arch.hpp"
#include "rigl/data.hpp"
#include "rigl/errors.hpp"
#include "rigl/flops.hpp"
#include "rigl/loss.hpp"
#include "rigl/nn.hpp"
#include "rigl/optim.hpp"
#include "rigl/schedulers.hpp"
#include "rigl/sparsity.hpp"

namespace rigl {

struct TrainConfig {
    // Architecture: a built-in name (mlp, small-cnn, wrn-22-2, resnet50-cifar)
    // or the path of an architecture JSON file.
    std::string arch = "mlp";
    std::vector<std::size_t> mlp_dims{784, 300, 100, 10};

    // Dataset: mnist, cifar10, cifar100, cifar100-coarse or synthetic.
    std::string dataset = "mnist";
    std::string data_dir;  // falls back to $RIGL_DATA_DIR/<dataset>
    std::size_t train_size = 0, val_size = 0, test_size = 0;  // all 0: 70/10/20 split
    std::uint64_t split_seed = 0;
    std::size_t synthetic_size = 2000;
    bool augment = false;

    double sparsity = 0.9;
    std::string distribution = "erk";  // uniform, random, er, erk
    bool keep_first_layer_dense = true;

    std::string method = "rigl";
    double alpha = 0.3;
    std::size_t delta_t = 100;
    double t_end_fraction = 0.75;  // of total steps
    std::string redistribution = "auto";  // auto, none, sparse_grad, sparse_momentum
    double prune_start_fraction = 0.0;
    double prune_stop_fraction = 0.75;

    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double warmup_epochs = 0.0;
    std::vector<double> lr_milestones{0.5, 0.75};  // fractions of total epochs
    double lr_factor = 0.2;
    double label_smoothing = 0.0;
    std::uint64_t seed = 0;
    std::string buffer_mode = "auto";  // auto: dense for snfs, sparse otherwise
    std::size_t training_multiplier = 1;

    std::string out_dir = "runs";
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"arch", c.arch},
         {"mlp_dims", c.mlp_dims},
         {"dataset", c.dataset},
         {"data_dir", c.data_dir},
         {"train_size", c.train_size},
         {"val_size", c.val_size},
         {"test_size", c.test_size},
         {"split_seed", c.split_seed},
         {"synthetic_size", c.synthetic_size},
         {"augment", c.augment},
         {"sparsity", c.sparsity},
         {"distribution", c.distribution},
         {"keep_first_layer_dense", c.keep_first_layer_dense},
         {"method", c.method},
         {"alpha", c.alpha},
         {"delta_t", c.delta_t},
         {"t_end_fraction", c.t_end_fraction},
         {"redistribution", c.redistribution},
         {"prune_start_fraction", c.prune_start_fraction},
         {"prune_stop_fraction", c.prune_stop_fraction},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"momentum", c.momentum},
         {"weight_decay", c.weight_decay},
         {"warmup_epochs", c.warmup_epochs},
         {"lr_milestones", c.lr_milestones},
         {"lr_factor", c.lr_factor},
         {"label_smoothing", c.label_smoothing},
         {"seed", c.seed},
         {"buffer_mode", c.buffer_mode},
         {"training_multiplier", c.training_multiplier},
         {"out_dir", c.out_dir}};
}

// Keys absent from j keep their current value; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    nlohmann::json known;
    to_json(known, c);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    };
    get("arch", c.arch);
    get("mlp_dims", c.mlp_dims);
    get("dataset", c.dataset);
    get("data_dir", c.data_dir);
    get("train_size", c.train_size);
    get("val_size", c.val_size);
    get("test_size", c.test_size);
    get("split_seed", c.split_seed);
    get("synthetic_size", c.synthetic_size);
    get("augment", c.augment);
    get("sparsity", c.sparsity);
    get("distribution", c.distribution);
    get("keep_first_layer_dense", c.keep_first_layer_dense);
    get("method", c.method);
    get("alpha", c.alpha);
    get("delta_t", c.delta_t);
    get("t_end_fraction", c.t_end_fraction);
    get("redistribution", c.redistribution);
    get("prune_start_fraction", c.prune_start_fraction);
    get("prune_stop_fraction", c.prune_stop_fraction);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("learning_rate", c.learning_rate);
    get("momentum", c.momentum);
    get("weight_decay", c.weight_decay);
    get("warmup_epochs", c.warmup_epochs);
    get("lr_milestones", c.lr_milestones);
    get("lr_factor", c.lr_factor);
    get("label_smoothing", c.label_smoothing);
    get("seed", c.seed);
    get("buffer_mode", c.buffer_mode);
    get("training_multiplier", c.training_multiplier);
    get("out_dir", c.out_dir);
}

inline TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    TrainConfig c;
    try {
        from_json(nlohmann::json::parse(is), c);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return c;
}

// FNV-1a over the canonical JSON of everything that affects results.
inline std::string config_hash(const TrainConfig& c) {
    nlohmann::json j = c;
    j.erase("out_dir");
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

inline Method config_method(const TrainConfig& c) { return method_from_string(c.method); }

inline SparsityConfig sparsity_config(const TrainConfig& c) {
    SparsityConfig s;
    s.sparsity = c.sparsity;
    s.keep_first_layer_dense = c.keep_first_layer_dense;
    set_distribution(s, c.distribution);
    if (config_method(c) == Method::rigl_struct) s.granularity = Granularity::channel;
    return s;
}

inline BufferMode config_buffer_mode(const TrainConfig& c) {
    if (c.buffer_mode == "auto") return config_method(c) == Method::snfs ? BufferMode::dense : BufferMode::sparse;
    return buffer_mode_from_string(c.buffer_mode);
}

inline Redistribution config_redistribution(const TrainConfig& c) {
    if (c.redistribution == "auto") return default_redistribution(config_method(c));
    if (c.redistribution == "none") return Redistribution::none;
    if (c.redistribution == "sparse_grad") return Redistribution::sparse_grad;
    if (c.redistribution == "sparse_momentum") return Redistribution::sparse_momentum;
    throw ConfigError("unknown redistribution '" + c.redistribution + "'");
}

// The dense architecture the run is measured against (before small-dense
// width scaling).
inline ArchSpec base_arch(const TrainConfig& c, const Shape& input_shape = {}, std::size_t classes = 0) {
    if (c.arch == "mlp") {
        auto dims = c.mlp_dims;
        if (!input_shape.empty()) dims.front() = shape_size(input_shape);
        if (classes) dims.back() = classes;
        return build_mlp(dims);
    }
    if (c.arch == "small-cnn") {
        return input_shape.empty() ? build_small_cnn() : build_small_cnn(input_shape, classes ? classes : 10);
    }
    if (c.arch == "wrn-22-2") return build_wrn(22, 2, classes ? classes : 10);
    if (c.arch == "resnet50-cifar") return build_resnet50_cifar(classes ? classes : 100);
    if (std::filesystem::exists(c.arch)) {
        std::ifstream is(c.arch);
        try {
            return nlohmann::json::parse(is).get<ArchSpec>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(c.arch + ": " + e.what());
        }
    }
    throw ConfigError("unknown architecture '" + c.arch + "'");
}

inline void validate(const TrainConfig& c) {
    config_method(c);
    sparsity_config(c);
    config_buffer_mode(c);
    config_redistribution(c);
    if (c.epochs == 0) throw ConfigError("epochs must be positive");
    if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (c.training_multiplier == 0) throw ConfigError("training_multiplier must be positive");
    if (c.delta_t == 0) throw ConfigError("delta_t must be positive");
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
    if (!(c.t_end_fraction > 0.0 && c.t_end_fraction <= 1.0)) throw ConfigError("t_end_fraction must be in (0, 1]");
    if (!(c.prune_start_fraction >= 0.0 && c.prune_start_fraction < c.prune_stop_fraction &&
          c.prune_stop_fraction <= 1.0))
        throw ConfigError("prune schedule needs 0 <= start < stop <= 1");
    if (!(c.sparsity >= 0.0 && c.sparsity < 1.0)) throw ConfigError("sparsity must be in [0, 1)");
    if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(c.label_smoothing >= 0.0 && c.label_smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0, 1)");
    if (c.warmup_epochs < 0.0) throw ConfigError("warmup_epochs must be non-negative");
}

// ---- data -----------------------------------------------------------------------

inline std::filesystem::path resolve_data_dir(const TrainConfig& c) {
    if (!c.data_dir.empty()) return c.data_dir;
    if (const char* env = std::getenv("RIGL_DATA_DIR")) {
        const std::filesystem::path root(env);
        for (const char* sub : {"mnist", "mnist-subset"})
            if (c.dataset == "mnist" && std::filesystem::exists(root / sub)) return root / sub;
        return root / c.dataset;
    }
    throw ConfigError("no data directory: pass --data-dir or set RIGL_DATA_DIR");
}

inline Dataset load_dataset(const TrainConfig& c) {
    if (c.dataset == "synthetic") {
        const Shape shape = c.arch == "mlp" ? Shape{1, 8, 8} : Shape{3, 16, 16};
        return make_synthetic(c.synthetic_size, shape, 10, c.split_seed);
    }
    const auto dir = resolve_data_dir(c);
    if (c.dataset == "mnist") return load_mnist_dir(dir);
    if (c.dataset == "cifar10") return load_cifar_dir(dir, CifarVariant::cifar10);
    if (c.dataset == "cifar100") return load_cifar_dir(dir, CifarVariant::cifar100_fine);
    if (c.dataset == "cifar100-coarse") return load_cifar_dir(dir, CifarVariant::cifar100_coarse);
    throw ConfigError("unknown dataset '" + c.dataset + "'");
}

inline SplitSpec split_spec(const TrainConfig& c, std::size_t n) {
    SplitSpec s{c.train_size, c.val_size, c.test_size, c.split_seed};
    if (s.train == 0 && s.val == 0 && s.test == 0) {
        s.train = n * 7 / 10;
        s.val = n / 10;
        s.test = n - s.train - s.val;
    }
    return s;
}

// Splits plus train-set normalization, shared read-only between runs.
struct PreparedData {
    Splits splits;
    Normalizer norm;
};

inline PreparedData prepare_data(const TrainConfig& c) {
    const Dataset all = load_dataset(c);
    PreparedData p{split(all, split_spec(c, all.size())), {}};
    if (p.splits.train.size() == 0) throw ConfigError("training split is empty");
    p.norm = Normalizer::fit(p.splits.train);
    return p;
}

// ---- run ------------------------------------------------------------------------

struct MetricsRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
    double sparsity = 0.0;
    double f_s = 0.0;
    double train_flops_cum = 0.0;
};

inline constexpr const char* kMetricsCsvHeader = "epoch,train_loss,val_acc,test_acc,sparsity,f_s,train_flops_cum";

inline void write_metrics_row(std::ostream& os, const MetricsRecord& r) {
    os << std::setprecision(17) << r.epoch << ',' << r.train_loss << ',' << r.val_acc << ',' << r.test_acc << ','
       << r.sparsity << ',' << r.f_s << ',' << r.train_flops_cum << '\n';
}

struct RunResult {
    TrainConfig config;
    ArchSpec arch;
    std::vector<MetricsRecord> metrics;
    MaskSet initial_masks;
    MaskSet final_masks;
    std::vector<UpdateEvent> events;
    FlopTrace trace;
    FlopReport flops;
    std::size_t total_steps = 0;
    std::filesystem::path run_dir;  // empty when outputs were not written
};

struct RunOptions {
    const PreparedData* data = nullptr;  // loaded from the config when null
    std::optional<MaskSet> initial_masks;
    bool write_outputs = true;
};

inline std::size_t round_steps(double x) { return static_cast<std::size_t>(std::llround(x)); }

inline double accuracy(Network& net, const Dataset& d, const Normalizer& norm, bool flatten,
                       std::size_t chunk = 256) {
    if (d.size() == 0) return 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < d.size(); start += chunk) {
        const std::size_t end = std::min(d.size(), start + chunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Batch b = make_batch(d, idx);
        const Tensor logits = net.forward(to_tensor(b, norm, flatten), false);
        const std::size_t k = logits.shape[1];
        for (std::size_t i = 0; i < b.size(); ++i) {
            const double* z = &logits.values[i * k];
            if (static_cast<std::size_t>(std::max_element(z, z + k) - z) == b.labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(d.size());
}

inline std::string layer_norms(const Network& net) {
    std::ostringstream os;
    for (std::size_t m = 0; m < net.weights().size(); ++m) {
        double s = 0.0;
        for (double v : net.weights()[m].values) s += v * v;
        os << (m ? ", " : "") << net.spec().layers[net.layer_of_weight(m)].name << '=' << std::sqrt(s);
    }
    return os.str();
}

inline RunResult run(const TrainConfig& config, const RunOptions& opts = {}) {
    validate(config);
    const Method method = config_method(config);

    std::optional<PreparedData> owned;
    if (!opts.data) owned = prepare_data(config);
    const PreparedData& data = opts.data ? *opts.data : *owned;
    const Dataset& train = data.splits.train;

    RunResult res;
    res.config = config;
    const ArchSpec base = base_arch(config, train.sample_shape, train.class_count);
    res.arch = method == Method::small_dense ? scale_small_dense(base, 1.0 - config.sparsity) : base;
    const ArchSpec& spec = res.arch;
    const bool flatten = spec.input_shape.size() == 1;
    if (shape_size(spec.input_shape) != train.sample_size())
        throw ConfigError(spec.name + ": input " + shape_str(spec.input_shape) + " does not fit dataset samples " +
                          shape_str(train.sample_shape));

    // Masks.
    const SparsityConfig scfg = sparsity_config(config);
    std::vector<double> targets;
    if (method == Method::dense || method == Method::small_dense) {
        res.initial_masks = dense_masks(spec);
    } else {
        targets = solve_distribution(spec, scfg);
        if (method == Method::pruning) {
            res.initial_masks = dense_masks(spec);
        } else {
            res.initial_masks = init_masks(spec, targets, config.seed, scfg.granularity);
        }
    }
    if (opts.initial_masks) {
        check_masks_match(*opts.initial_masks, spec);
        res.initial_masks = *opts.initial_masks;
    }
    MaskSet masks = res.initial_masks;

    Network net(spec, config.seed);
    apply_mask(masks, net.weights());

    // Schedules.
    const std::size_t steps_per_epoch = train.size() / config.batch_size;
    if (steps_per_epoch == 0)
        throw ConfigError("batch size " + std::to_string(config.batch_size) + " exceeds the " +
                          std::to_string(train.size()) + "-sample training split");
    const std::size_t epochs = config.epochs * config.training_multiplier;
    const std::size_t total_steps = epochs * steps_per_epoch;
    res.total_steps = total_steps;

    UpdatePolicy policy;
    policy.method = method;
    policy.alpha = config.alpha;
    policy.delta_t = config.delta_t;
    policy.t_end = std::max<std::size_t>(1, round_steps(config.t_end_fraction * static_cast<double>(total_steps)));
    policy.redistribution = config_redistribution(config);
    policy.prune.t_start = round_steps(config.prune_start_fraction * static_cast<double>(total_steps));
    policy.prune.t_stop = round_steps(config.prune_stop_fraction * static_cast<double>(total_steps));
    const BufferMode buffer_mode = config_buffer_mode(config);
    MaskUpdater updater(policy, buffer_mode, targets, config.seed ^ 0x9e3779b97f4a7c15ull);

    LrSchedule lr;
    lr.base = config.learning_rate;
    lr.warmup_steps = round_steps(config.warmup_epochs * static_cast<double>(steps_per_epoch));
    lr.factor = config.lr_factor;
    for (double m : config.lr_milestones) lr.milestones.push_back(round_steps(m * static_cast<double>(total_steps)));

    SgdState sgd;
    sgd.momentum = config.momentum;
    sgd.weight_decay = config.weight_decay;
    sgd.buffer_mode = buffer_mode;
    auto params = net.parameters();
    sgd.buffers.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) sgd.buffers[i].assign(params[i].tensor->size(), 0.0);
    std::vector<std::size_t> param_of_mask(masks.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].mask_layer) param_of_mask[*params[i].mask_layer] = i;

    // Outputs.
    std::ofstream metrics_os;
    if (opts.write_outputs) {
        res.run_dir = std::filesystem::path(config.out_dir) / (config.method + "-" + config_hash(config));
        std::filesystem::create_directories(res.run_dir);
        std::ofstream(res.run_dir / "config.json") << nlohmann::json(config).dump(2) << '\n';
        save_masks(res.initial_masks, (res.run_dir / "mask_init.json").string());
        metrics_os.open(res.run_dir / "metrics.csv");
        if (!metrics_os) throw InputError("cannot write " + (res.run_dir / "metrics.csv").string());
        metrics_os << kMetricsCsvHeader << '\n' << std::flush;
    }

    const double f_d_base = forward_flops(base).f_d;
    const AugmentConfig aug{config.augment, 0.5, 4};
    std::vector<LayerTensors> views(masks.size());
    std::size_t t = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const auto order = epoch_order(train.size(), config.seed, epoch);
        std::mt19937_64 aug_rng(config.seed * 1000003ull + epoch);
        double loss_sum = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++t) {
            std::span<const std::size_t> idx(order.data() + s * config.batch_size, config.batch_size);
            Batch batch = make_batch(train, idx);
            augment(batch, aug_rng, aug);
            const Tensor logits = net.forward(to_tensor(batch, data.norm, flatten));
            LossResult loss = cross_entropy_with_label_smoothing(logits, batch.labels, config.label_smoothing);
            if (!std::isfinite(loss.loss))
                throw TrainingError("non-finite loss at step " + std::to_string(t) + " (epoch " +
                                    std::to_string(epoch) + "); weight norms: " + layer_norms(net));
            loss_sum += loss.loss;
            net.backward(loss.logits_grad);
            sgd.learning_rate = lr.at(t);
            sgd_step(sgd, params, &masks);
            if (updater.due(t)) {
                for (std::size_t m = 0; m < masks.size(); ++m)
                    views[m] = {net.weights()[m].values, net.weights()[m].grad, sgd.buffer(param_of_mask[m])};
                UpdateEvent ev = updater.update(t, views, masks);
                apply_mask(masks, net.weights());
                if (!ev.layers.empty()) res.events.push_back(std::move(ev));
            }
        }

        MetricsRecord r;
        r.epoch = epoch + 1;
        r.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
        r.val_acc = accuracy(net, data.splits.val, data.norm, flatten);
        r.test_acc = accuracy(net, data.splits.test, data.norm, flatten);
        r.sparsity = masks.global_sparsity();
        r.f_s = forward_flops(spec, masks).f_s;
        res.trace.record(r.f_s);
        // Per-sample step cost times samples seen so far.
        r.train_flops_cum = static_cast<double>(t * config.batch_size) *
                            train_flops(method, f_d_base, r.f_s, config.delta_t, &res.trace);
        res.metrics.push_back(r);
        if (metrics_os.is_open()) {
            write_metrics_row(metrics_os, r);
            metrics_os.flush();
        }
    }

    res.final_masks = masks;
    res.flops = forward_flops(spec, masks);
    if (method == Method::small_dense) {
        // The scaled model is dense; measure it against the unscaled baseline.
        res.flops.f_d = f_d_base;
        res.flops.test_ratio = round2(res.flops.f_s / f_d_base);
    }
    res.flops.train_flops = train_flops(method, res.flops.f_d, res.flops.f_s, config.delta_t, &res.trace);
    res.flops.train_ratio = round2(res.flops.train_flops / (3.0 * res.flops.f_d));

    if (opts.write_outputs) {
        save_masks(res.final_masks, (res.run_dir / "mask.json").string());
        std::ofstream ev_os(res.run_dir / "events.csv");
        write_events_csv(ev_os, res.events, res.final_masks);
        std::ofstream(res.run_dir / "flops.json") << to_json(res.flops).dump(2) << '\n';
    }
    return res;
}

// ---- re-runs from a mask checkpoint --------------------------------------------

// positions: reuse the exact active set; densities: reuse only per-layer
// densities and draw fresh positions from the run's seed.
enum class MaskReuse { positions, densities };

inline MaskReuse mask_reuse_from_string(const std::string& s) {
    if (s == "positions") return MaskReuse::positions;
    if (s == "densities") return MaskReuse::densities;
    throw InputError("unknown mask reuse mode '" + s + "' (expected positions or densities)");
}

// Weights are always freshly initialized from config.seed.
inline RunResult rerun_with_mask(const TrainConfig& config, const MaskSet& checkpoint, MaskReuse reuse,
                                 const PreparedData* data = nullptr, bool write_outputs = true) {
    validate(config);
    std::optional<PreparedData> owned;
    if (!data) {
        owned = prepare_data(config);
        data = &*owned;
    }
    const ArchSpec spec = base_arch(config, data->splits.train.sample_shape, data->splits.train.class_count);
    check_masks_match(checkpoint, spec);
    RunOptions opts;
    opts.data = data;
    opts.write_outputs = write_outputs;
    if (reuse == MaskReuse::positions) {
        opts.initial_masks = checkpoint;
    } else {
        std::vector<double> sparsities;
        for (const auto& l : checkpoint.layers) sparsities.push_back(l.sparsity());
        const auto gran = config_method(config) == Method::rigl_struct ? Granularity::channel : Granularity::weight;
        opts.initial_masks = init_masks(spec, sparsities, config.seed, gran);
    }
    return run(config, opts);
}

// ---- sweeps ---------------------------------------------------------------------

struct SweepGrid {
    std::vector<double> learning_rates;
    std::vector<std::pair<double, std::size_t>> alpha_delta_t;
    std::vector<double> sparsities;
    std::vector<std::string> distributions;
    std::vector<std::uint64_t> seeds;

    // Empty axes take the base config's value.
    void fill_defaults(const TrainConfig& base) {
        if (learning_rates.empty()) learning_rates = {base.learning_rate};
        if (alpha_delta_t.empty()) alpha_delta_t = {{base.alpha, base.delta_t}};
        if (sparsities.empty()) sparsities = {base.sparsity};
        if (distributions.empty()) distributions = {base.distribution};
        if (seeds.empty()) seeds = {base.seed};
    }
};

struct SweepRun {
    std::size_t cell = 0;
    TrainConfig config;
    bool ok = false;
    std::string error;
    double train_loss = 0.0, val_acc = 0.0, test_acc = 0.0, train_ratio = 0.0, test_ratio = 0.0;
};

struct SweepCell {
    double learning_rate = 0.0, alpha = 0.0, sparsity = 0.0;
    std::size_t delta_t = 0;
    std::string distribution;
    std::size_t n_ok = 0, n_failed = 0;
    double test_acc_mean = 0.0, test_acc_std = 0.0;
    double val_acc_mean = 0.0, val_acc_std = 0.0;
};

struct SweepResult {
    std::vector<SweepRun> runs;
    std::vector<SweepCell> cells;
};

// Mean and sample (n-1) standard deviation; std is 0 for fewer than 2 values.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {std::nan(""), std::nan("")};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

// Cells are the Cartesian product of (lr, (alpha, dT), S, distribution); each
// cell runs once per seed. Runs that throw are recorded and skipped.
inline SweepResult sweep(const TrainConfig& base, SweepGrid grid, std::size_t workers = 1,
                         bool write_outputs = false) {
    grid.fill_defaults(base);
    SweepResult res;
    for (double lr : grid.learning_rates)
        for (const auto& [alpha, dt] : grid.alpha_delta_t)
            for (double s : grid.sparsities)
                for (const auto& dist : grid.distributions) {
                    SweepCell cell{lr, alpha, s, dt, dist};
                    for (auto seed : grid.seeds) {
                        SweepRun r;
                        r.cell = res.cells.size();
                        r.config = base;
                        r.config.learning_rate = lr;
                        r.config.alpha = alpha;
                        r.config.delta_t = dt;
                        r.config.sparsity = s;
                        r.config.distribution = dist;
                        r.config.seed = seed;
                        res.runs.push_back(std::move(r));
                    }
                    res.cells.push_back(cell);
                }
    if (res.runs.empty()) throw InputError("sweep grid is empty");

    const PreparedData data = prepare_data(base);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < res.runs.size(); i = next++) {
            SweepRun& r = res.runs[i];
            try {
                RunOptions opts;
                opts.data = &data;
                opts.write_outputs = write_outputs;
                const RunResult out = run(r.config, opts);
                const auto& last = out.metrics.back();
                r.train_loss = last.train_loss;
                r.val_acc = last.val_acc;
                r.test_acc = last.test_acc;
                r.train_ratio = out.flops.train_ratio;
                r.test_ratio = out.flops.test_ratio;
                r.ok = true;
            } catch (const std::exception& e) {
                r.error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < std::max<std::size_t>(1, workers); ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    for (std::size_t c = 0; c < res.cells.size(); ++c) {
        std::vector<double> test, val;
        for (const auto& r : res.runs) {
            if (r.cell != c) continue;
            if (!r.ok) {
                ++res.cells[c].n_failed;
                continue;
            }
            test.push_back(r.test_acc);
            val.push_back(r.val_acc);
        }
        res.cells[c].n_ok = test.size();
        std::tie(res.cells[c].test_acc_mean, res.cells[c].test_acc_std) = mean_std(test);
        std::tie(res.cells[c].val_acc_mean, res.cells[c].val_acc_std) = mean_std(val);
    }
    return res;
}

inline void write_sweep_runs_csv(std::ostream& os, const SweepResult& r) {
    os << "cell,learning_rate,alpha,delta_t,sparsity,distribution,seed,ok,train_loss,val_acc,test_acc,train_ratio,"
          "test_ratio,error\n"
       << std::setprecision(17);
    for (const auto& x : r.runs) {
        std::string err = x.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        os << x.cell << ',' << x.config.learning_rate << ',' << x.config.alpha << ',' << x.config.delta_t << ','
           << x.config.sparsity << ',' << x.config.distribution << ',' << x.config.seed << ',' << (x.ok ? 1 : 0)
           << ',' << x.train_loss << ',' << x.val_acc << ',' << x.test_acc << ',' << x.train_ratio << ','
           << x.test_ratio << ',' << err << '\n';
    }
}

inline void write_sweep_cells_csv(std::ostream& os, const SweepResult& r) {
    os << "learning_rate,alpha,delta_t,sparsity,distribution,n_ok,n_failed,test_acc_mean,test_acc_std,val_acc_mean,"
          "val_acc_std\n"
       << std::setprecision(17);
    for (const auto& c : r.cells)
        os << c.learning_rate << ',' << c.alpha << ',' << c.delta_t << ',' << c.sparsity << ',' << c.distribution
           << ',' << c.n_ok << ',' << c.n_failed << ',' << c.test_acc_mean << ',' << c.test_acc_std << ','
           << c.val_acc_mean << ',' << c.val_acc_std << '\n';
}

}  // namespace rigl
