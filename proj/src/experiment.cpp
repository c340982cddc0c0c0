#include "ltcl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "ltcl/checkpoint.hpp"
#include "ltcl/csv.hpp"
#include "ltcl/error.hpp"
#include "ltcl/kernels.hpp"
#include "ltcl/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ltcl {

const char* to_string(ExperimentKind kind) noexcept {
    switch (kind) {
        case ExperimentKind::BoundGrid: return "bound_grid";
        case ExperimentKind::LtrTwoPhase: return "ltr_two_phase";
        case ExperimentKind::Compare: return "compare";
    }
    return "unknown";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) { return Rng(seed).split(stream).next_u64(); }

namespace {

// Seed streams of one run.
enum : std::uint64_t { kLongTailStream = 1, kInitStream, kPhase1Stream, kPhase2Stream, kStateStream, kDataStream };

[[noreturn]] void invalid(const std::string& field, const std::string& message) {
    fail(ErrorCode::Validation, field + ": " + message);
}

// Typed access to one JSON object with a field path for messages; finish()
// rejects keys that were never read.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            invalid(path_.empty() ? "config" : path_, "must be an object");
        }
    }

    [[nodiscard]] std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    const json& raw(const std::string& key) {
        if (!has(key)) {
            invalid(field(key), "is required");
        }
        return j_.at(key);
    }

    double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) {
                invalid(field(key), "is required");
            }
            return *fallback;
        }
        const auto& v = j_.at(key);
        if (!v.is_number()) {
            invalid(field(key), "must be a number");
        }
        const double d = v.get<double>();
        if (!std::isfinite(d)) {
            invalid(field(key), "must be finite");
        }
        return d;
    }

    std::int64_t integer(const std::string& key, std::optional<std::int64_t> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) {
                invalid(field(key), "is required");
            }
            return *fallback;
        }
        const auto& v = j_.at(key);
        if (!v.is_number_integer()) {
            invalid(field(key), "must be an integer");
        }
        return v.get<std::int64_t>();
    }

    std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
        if (!has(key)) {
            return fallback;
        }
        const auto& v = j_.at(key);
        if (!v.is_number_unsigned()) {
            invalid(field(key), "must be a non-negative integer");
        }
        return v.get<std::uint64_t>();
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) {
            return fallback;
        }
        const auto& v = j_.at(key);
        if (!v.is_boolean()) {
            invalid(field(key), "must be true or false");
        }
        return v.get<bool>();
    }

    std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) {
                invalid(field(key), "is required");
            }
            return *fallback;
        }
        const auto& v = j_.at(key);
        if (!v.is_string()) {
            invalid(field(key), "must be a string");
        }
        return v.get<std::string>();
    }

    std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) {
                invalid(field(key), "is required");
            }
            return *fallback;
        }
        const auto& v = j_.at(key);
        if (!v.is_array()) {
            invalid(field(key), "must be an array of numbers");
        }
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number() || !std::isfinite(v[i].get<double>())) {
                invalid(field(key) + "[" + std::to_string(i) + "]", "must be a finite number");
            }
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) {
                invalid(field(key), "unknown key");
            }
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

fs::path existing_file(Fields& f, const std::string& key, const fs::path& base_dir) {
    fs::path p = f.text(key);
    if (p.is_relative()) {
        p = base_dir / p;
    }
    p = p.lexically_normal();
    if (!fs::is_regular_file(p)) {
        invalid(f.field(key), "file not found: " + p.string());
    }
    return p;
}

const char* schedule_name(ScheduleKind s) { return s == ScheduleKind::Cosine ? "cosine" : "constant"; }

// Optimizer fields shared by phase1 and strategy entries.
void read_optimizer(Fields& f, TrainConfig& c) {
    c.learning_rate = f.number("learning_rate", c.learning_rate);
    if (c.learning_rate <= 0.0) {
        invalid(f.field("learning_rate"), "must be > 0");
    }
    c.momentum = f.number("momentum", c.momentum);
    if (c.momentum < 0.0 || c.momentum >= 1.0) {
        invalid(f.field("momentum"), "must lie in [0, 1)");
    }
    const auto schedule = f.text("schedule", schedule_name(c.schedule));
    if (schedule == "constant") {
        c.schedule = ScheduleKind::Constant;
    } else if (schedule == "cosine") {
        c.schedule = ScheduleKind::Cosine;
    } else {
        invalid(f.field("schedule"), "must be \"constant\" or \"cosine\", got \"" + schedule + "\"");
    }
    c.lr_min = f.number("lr_min", c.lr_min);
    if (c.lr_min < 0.0 || c.lr_min > c.learning_rate) {
        invalid(f.field("lr_min"), "must lie in [0, learning_rate]");
    }
    const auto epochs = f.integer("epochs", c.epochs);
    if (epochs < 1 || epochs > 1'000'000) {
        invalid(f.field("epochs"), "must be >= 1");
    }
    c.epochs = static_cast<int>(epochs);
    const auto period = f.integer("anneal_period", c.anneal_period);
    if (period < 0 || (period > 0 && period < c.epochs - 1)) {
        invalid(f.field("anneal_period"), "must be 0 (use epochs) or >= epochs - 1");
    }
    c.anneal_period = static_cast<int>(period);
    const auto batch = f.integer("batch_size", c.batch_size);
    if (batch < 0) {
        invalid(f.field("batch_size"), "must be >= 0 (0 = full batch)");
    }
    c.batch_size = batch;
}

json optimizer_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate}, {"momentum", c.momentum},
                {"schedule", schedule_name(c.schedule)}, {"lr_min", c.lr_min},
                {"epochs", c.epochs}, {"anneal_period", c.anneal_period},
                {"batch_size", c.batch_size}};
}

TrainConfig default_phase1() {
    TrainConfig c;
    c.learning_rate = 0.01;
    c.momentum = 0.9;
    c.epochs = 20;
    c.batch_size = 64;
    return c;
}

StrategyParams parse_strategy_entry(const json& entry, const std::string& path) {
    if (entry.is_string()) {
        const auto s = parse_strategy(entry.get<std::string>());
        if (!s) {
            invalid(path, "unknown strategy \"" + entry.get<std::string>() + "\"");
        }
        return default_strategy_params(*s);
    }
    Fields f(entry, path);
    const auto name = f.text("name");
    const auto s = parse_strategy(name);
    if (!s) {
        invalid(f.field("name"), "unknown strategy \"" + name + "\"");
    }
    auto p = default_strategy_params(*s);
    read_optimizer(f, p.phase2);
    p.cl_weight = f.number("cl_weight", p.cl_weight);
    if (p.cl_weight < 0.0) {
        invalid(f.field("cl_weight"), "must be >= 0");
    }
    p.temperature = f.number("temperature", p.temperature);
    if (p.temperature <= 0.0) {
        invalid(f.field("temperature"), "must be > 0");
    }
    p.energy_threshold = f.number("energy_threshold", p.energy_threshold);
    if (p.energy_threshold <= 0.0 || p.energy_threshold > 1.0) {
        invalid(f.field("energy_threshold"), "must lie in (0, 1]");
    }
    p.fisher_max_samples = f.integer("fisher_max_samples", p.fisher_max_samples);
    if (p.fisher_max_samples < 1) {
        invalid(f.field("fisher_max_samples"), "must be >= 1");
    }
    p.gpm_max_samples = f.integer("gpm_max_samples", p.gpm_max_samples);
    if (p.gpm_max_samples < 1) {
        invalid(f.field("gpm_max_samples"), "must be >= 1");
    }
    f.finish();
    return p;
}

}  // namespace

ExperimentConfig parse_config(const json& document, const fs::path& base_dir) {
    if (document.is_object() && document.contains("manifest_version")) {
        Fields m(document, "");
        m.integer("manifest_version");
        m.text("code_version");
        m.text("rng");
        const auto& inner = m.raw("config");
        m.finish();
        return parse_config(inner, base_dir);
    }

    ExperimentConfig c;
    Fields f(document, "");
    c.schema_version = static_cast<int>(f.integer("schema_version"));
    if (c.schema_version != kConfigSchemaVersion) {
        invalid("schema_version", "unsupported version " + std::to_string(c.schema_version) + " (expected " +
                                      std::to_string(kConfigSchemaVersion) + ")");
    }
    const auto kind = f.text("kind");
    if (kind == "bound_grid") {
        c.kind = ExperimentKind::BoundGrid;
    } else if (kind == "ltr_two_phase") {
        c.kind = ExperimentKind::LtrTwoPhase;
    } else if (kind == "compare") {
        c.kind = ExperimentKind::Compare;
    } else {
        invalid("kind", "must be bound_grid, ltr_two_phase or compare, got \"" + kind + "\"");
    }
    const bool two_phase = c.kind != ExperimentKind::BoundGrid;
    c.seed = f.unsigned_integer("seed", 0);
    const auto workers = f.integer("workers", 1);
    if (workers < 1 || workers > 4096) {
        invalid("workers", "must be >= 1");
    }
    c.workers = static_cast<int>(workers);

    {
        Fields d(f.raw("dataset"), "dataset");
        const auto source = d.text("source");
        if (source == "idx") {
            c.dataset.kind = DatasetSource::Kind::Idx;
            c.dataset.train_images = existing_file(d, "train_images", base_dir);
            c.dataset.train_labels = existing_file(d, "train_labels", base_dir);
            c.dataset.test_images = existing_file(d, "test_images", base_dir);
            c.dataset.test_labels = existing_file(d, "test_labels", base_dir);
            c.dataset.pool = d.integer("pool", 1);
            if (c.dataset.pool < 1) {
                invalid("dataset.pool", "must be >= 1");
            }
        } else if (source == "synthetic") {
            c.dataset.kind = DatasetSource::Kind::Synthetic;
            const auto classes = d.integer("n_classes", c.dataset.n_classes);
            if (classes < 2 || classes > 100000) {
                invalid("dataset.n_classes", "must be >= 2");
            }
            c.dataset.n_classes = static_cast<int>(classes);
            c.dataset.n_features = d.integer("n_features", c.dataset.n_features);
            if (c.dataset.n_features < 1) {
                invalid("dataset.n_features", "must be >= 1");
            }
            c.dataset.n_per_class = d.integer("n_per_class", c.dataset.n_per_class);
            if (c.dataset.n_per_class < 1) {
                invalid("dataset.n_per_class", "must be >= 1");
            }
            c.dataset.n_test_per_class = d.integer("n_test_per_class", c.dataset.n_test_per_class);
            if (c.dataset.n_test_per_class < 1) {
                invalid("dataset.n_test_per_class", "must be >= 1");
            }
            c.dataset.separation = d.number("separation", c.dataset.separation);
            if (c.dataset.separation < 0.0) {
                invalid("dataset.separation", "must be >= 0");
            }
        } else {
            invalid("dataset.source", "must be \"idx\" or \"synthetic\", got \"" + source + "\"");
        }
        d.finish();
    }

    {
        Fields lt(f.raw("long_tail"), "long_tail");
        c.long_tail.imbalance_factors = lt.numbers("imbalance_factors");
        if (c.long_tail.imbalance_factors.empty()) {
            invalid("long_tail.imbalance_factors", "must not be empty");
        }
        for (std::size_t i = 0; i < c.long_tail.imbalance_factors.size(); ++i) {
            if (c.long_tail.imbalance_factors[i] < 1.0) {
                invalid("long_tail.imbalance_factors[" + std::to_string(i) + "]", "must be >= 1");
            }
        }
        if (two_phase && c.long_tail.imbalance_factors.size() != 1) {
            invalid("long_tail.imbalance_factors", "two-phase experiments take exactly one imbalance factor");
        }
        c.long_tail.head_fraction = lt.number("head_fraction", c.long_tail.head_fraction);
        if (c.long_tail.head_fraction <= 0.0 || c.long_tail.head_fraction >= 1.0) {
            invalid("long_tail.head_fraction", "must lie in (0, 1)");
        }
        if (lt.has("n_max")) {
            const auto n = lt.integer("n_max");
            if (n < 1) {
                invalid("long_tail.n_max", "must be >= 1");
            }
            c.long_tail.n_max = n;
        }
        lt.finish();
    }

    c.mu = f.numbers("mu");
    if (c.mu.empty()) {
        invalid("mu", "must not be empty");
    }
    for (std::size_t i = 0; i < c.mu.size(); ++i) {
        if (c.mu[i] < 0.0 || (!two_phase && c.mu[i] == 0.0)) {
            invalid("mu[" + std::to_string(i) + "]", two_phase ? "must be >= 0" : "must be > 0 for bound experiments");
        }
    }
    if (two_phase && c.mu.size() != 1) {
        invalid("mu", "two-phase experiments take exactly one value");
    }

    if (f.has("model")) {
        Fields m(f.raw("model"), "model");
        const auto kind_name = m.text("kind", "linear");
        if (kind_name == "linear") {
            c.model.kind = ModelKind::Linear;
        } else if (kind_name == "mlp") {
            c.model.kind = ModelKind::Mlp;
        } else {
            invalid("model.kind", "must be \"linear\" or \"mlp\", got \"" + kind_name + "\"");
        }
        if (m.has("hidden")) {
            const auto hidden = m.numbers("hidden");
            for (std::size_t i = 0; i < hidden.size(); ++i) {
                if (hidden[i] < 1.0 || hidden[i] != std::floor(hidden[i])) {
                    invalid("model.hidden[" + std::to_string(i) + "]", "must be a positive integer");
                }
                c.model.hidden.push_back(static_cast<Index>(hidden[i]));
            }
        }
        if (c.model.kind == ModelKind::Mlp && c.model.hidden.empty()) {
            invalid("model.hidden", "an mlp needs at least one hidden layer");
        }
        if (c.model.kind == ModelKind::Linear && !c.model.hidden.empty()) {
            invalid("model.hidden", "a linear model has no hidden layers");
        }
        m.finish();
    }
    if (!two_phase && c.model.kind != ModelKind::Linear) {
        invalid("model.kind", "bound experiments need the linear model");
    }

    if (f.has("bounds")) {
        Fields b(f.raw("bounds"), "bounds");
        c.bounds.grad_tolerance = b.number("grad_tolerance", c.bounds.grad_tolerance);
        if (c.bounds.grad_tolerance <= 0.0) {
            invalid("bounds.grad_tolerance", "must be > 0");
        }
        const auto samples = b.integer("delta_samples", c.bounds.delta_samples);
        if (samples < 0 || samples > 1'000'000) {
            invalid("bounds.delta_samples", "must be >= 0");
        }
        c.bounds.delta_samples = static_cast<int>(samples);
        c.bounds.lemma2 = b.boolean("lemma2", c.bounds.lemma2);
        b.finish();
    }

    c.phase1 = default_phase1();
    if (f.has("phase1")) {
        Fields p(f.raw("phase1"), "phase1");
        read_optimizer(p, c.phase1);
        p.finish();
    }

    if (f.has("strategies")) {
        const auto& list = f.raw("strategies");
        if (!list.is_array()) {
            invalid("strategies", "must be an array");
        }
        std::set<Strategy> seen;
        for (std::size_t i = 0; i < list.size(); ++i) {
            const auto path = "strategies[" + std::to_string(i) + "]";
            auto p = parse_strategy_entry(list[i], path);
            if (!seen.insert(p.variant).second) {
                invalid(path, std::string("duplicate strategy ") + to_string(p.variant));
            }
            c.strategies.push_back(p);
        }
    }
    if (two_phase && c.strategies.empty()) {
        invalid("strategies", "must list at least one strategy");
    }
    if (!two_phase && !c.strategies.empty()) {
        invalid("strategies", "not used by bound experiments");
    }
    f.finish();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorCode::Validation, "config: cannot open " + path.string());
    }
    json document;
    try {
        document = json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::Validation, "config: " + path.string() + " is not valid JSON (" + e.what() + ")");
    }
    return parse_config(document, fs::absolute(path).parent_path());
}

json to_json(const ExperimentConfig& c) {
    json d;
    if (c.dataset.kind == DatasetSource::Kind::Idx) {
        d = json{{"source", "idx"},
                 {"train_images", fs::absolute(c.dataset.train_images).string()},
                 {"train_labels", fs::absolute(c.dataset.train_labels).string()},
                 {"test_images", fs::absolute(c.dataset.test_images).string()},
                 {"test_labels", fs::absolute(c.dataset.test_labels).string()},
                 {"pool", c.dataset.pool}};
    } else {
        d = json{{"source", "synthetic"},
                 {"n_classes", c.dataset.n_classes},
                 {"n_features", c.dataset.n_features},
                 {"n_per_class", c.dataset.n_per_class},
                 {"n_test_per_class", c.dataset.n_test_per_class},
                 {"separation", c.dataset.separation}};
    }
    json lt{{"imbalance_factors", c.long_tail.imbalance_factors}, {"head_fraction", c.long_tail.head_fraction}};
    if (c.long_tail.n_max) {
        lt["n_max"] = *c.long_tail.n_max;
    }
    json out{{"schema_version", c.schema_version},
             {"kind", to_string(c.kind)},
             {"seed", c.seed},
             {"workers", c.workers},
             {"dataset", d},
             {"long_tail", lt},
             {"mu", c.mu},
             {"model", json{{"kind", c.model.kind == ModelKind::Linear ? "linear" : "mlp"}}},
             {"bounds", json{{"grad_tolerance", c.bounds.grad_tolerance},
                             {"delta_samples", c.bounds.delta_samples},
                             {"lemma2", c.bounds.lemma2}}},
             {"phase1", optimizer_json(c.phase1)}};
    if (!c.model.hidden.empty()) {
        out["model"]["hidden"] = c.model.hidden;
    }
    if (!c.strategies.empty()) {
        json list = json::array();
        for (const auto& s : c.strategies) {
            json e = optimizer_json(s.phase2);
            e["name"] = to_string(s.variant);
            e["cl_weight"] = s.cl_weight;
            e["temperature"] = s.temperature;
            e["energy_threshold"] = s.energy_threshold;
            e["fisher_max_samples"] = s.fisher_max_samples;
            e["gpm_max_samples"] = s.gpm_max_samples;
            list.push_back(e);
        }
        out["strategies"] = list;
    }
    return out;
}

LoadedData load_data(const DatasetSource& source, std::uint64_t seed) {
    LoadedData data;
    if (source.kind == DatasetSource::Kind::Synthetic) {
        data.train = synthetic_gaussian(source.n_classes, source.n_features, source.n_per_class, source.separation,
                                        derive_seed(seed, kDataStream));
        data.test = synthetic_gaussian(source.n_classes, source.n_features, source.n_test_per_class,
                                       source.separation, derive_seed(seed, kDataStream + 1));
        return data;
    }
    data.train = load_idx(source.train_images, source.train_labels);
    data.test = load_idx(source.test_images, source.test_labels);
    const auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(data.train.n_features()))));
    if (side * side != data.train.n_features() || data.test.n_features() != data.train.n_features()) {
        invalid("dataset", "train and test images must be square and of equal size");
    }
    if (data.test.n_classes() != data.train.n_classes()) {
        // Labels beyond the largest one seen still form empty classes.
        const int n = std::max(data.test.n_classes(), data.train.n_classes());
        data.train = LabeledDataset(data.train.features(), data.train.labels(), n);
        data.test = LabeledDataset(data.test.features(), data.test.labels(), n);
    }
    data.image_side = side;
    if (source.pool > 1) {
        if (side % source.pool != 0) {
            invalid("dataset.pool", "must divide the image side " + std::to_string(side));
        }
        data.train = mean_pool(data.train, side, side, source.pool);
        data.test = mean_pool(data.test, side, side, source.pool);
        data.image_side = side / source.pool;
    }
    return data;
}

LabeledDataset build_longtail(const LabeledDataset& train, const LongTailSpec& spec, double imbalance_factor,
                              std::uint64_t seed) {
    return make_longtail(train, imbalance_factor, seed, spec.n_max);
}

Model initial_model(const ExperimentConfig& config, Index n_features, int n_classes) {
    if (config.model.kind == ModelKind::Linear) {
        return make_linear(n_features, n_classes);
    }
    std::vector<Index> sizes{n_features};
    sizes.insert(sizes.end(), config.model.hidden.begin(), config.model.hidden.end());
    sizes.push_back(n_classes);
    return make_mlp(sizes, derive_seed(config.seed, kInitStream));
}

int exit_status(const BoundGridOutcome& outcome) {
    if (outcome.any_tight_violation) {
        return kExitBoundViolation;
    }
    return outcome.any_failure ? kExitRuntime : kExitOk;
}

int exit_status(const TwoPhaseOutcome& outcome) {
    for (const auto& s : outcome.strategies) {
        if (!s.result) {
            return kExitRuntime;
        }
    }
    return kExitOk;
}

int exit_status(const Error& error) {
    return error.code() == ErrorCode::Validation || error.code() == ErrorCode::Configuration ? kExitValidation
                                                                                             : kExitRuntime;
}

void write_manifest(const ExperimentConfig& config, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const json manifest{{"manifest_version", kManifestVersion},
                        {"code_version", LTCL_VERSION},
                        {"rng", std::string(Rng::kName) + "/" + std::to_string(Rng::kVersion)},
                        {"config", to_json(config)}};
    std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + (out_dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

namespace {

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
    return out;
}

std::string percent(double fraction) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(2);
    s << 100.0 * fraction << '%';
    return s.str();
}

}  // namespace

BoundGridOutcome run_bound_grid(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& log) {
    require(config.kind == ExperimentKind::BoundGrid, ErrorCode::Validation, "kind: expected bound_grid");
    const auto data = load_data(config.dataset, config.seed);
    if (config.bounds.lemma2) {
        const Index params = (data.train.n_features() + 1) * data.train.n_classes();
        if (params > kHessianParamGuard) {
            invalid("bounds.lemma2", "dense Hessian needs <= " + std::to_string(kHessianParamGuard) +
                                         " parameters, model has " + std::to_string(params) +
                                         " (pool the images)");
        }
    }
    write_manifest(config, out_dir);
    kernels::set_workers(1);

    BoundGridConfig grid;
    grid.head_fraction = config.long_tail.head_fraction;
    grid.grad_tolerance = config.bounds.grad_tolerance;
    grid.delta_samples = config.bounds.delta_samples;
    grid.lemma2 = config.bounds.lemma2;
    grid.seed = derive_seed(config.seed, kStateStream);
    grid.workers = config.workers;
    const auto lt_seed = derive_seed(config.seed, kLongTailStream);
    const DatasetBuilder builder = [&](double f) { return build_longtail(data.train, config.long_tail, f, lt_seed); };

    BoundGridOutcome outcome;
    outcome.reports = bound_grid(builder, config.long_tail.imbalance_factors, config.mu, grid);
    {
        auto out = open_output(out_dir / "bounds.csv");
        write_bound_csv(out, outcome.reports);
    }

    std::size_t tight = 0;
    std::size_t loose = 0;
    std::size_t lemma2 = 0;
    std::size_t lemma2_cells = 0;
    std::size_t ok = 0;
    for (const auto& r : outcome.reports) {
        if (r.failed) {
            outcome.any_failure = true;
            log << "cell if=" << csv::num(r.imbalance_factor) << " mu=" << csv::num(r.mu_full)
                << " failed: " << r.failure << '\n';
            continue;
        }
        ++ok;
        tight += r.holds_tight ? 1 : 0;
        loose += r.holds_loose ? 1 : 0;
        if (r.holds_lemma2) {
            ++lemma2_cells;
            lemma2 += *r.holds_lemma2 ? 1 : 0;
        }
        if (!r.holds_tight) {
            outcome.any_tight_violation = true;
        }
    }
    log << "bound       holds\n";
    log << "tight       " << tight << "/" << ok << '\n';
    log << "loose       " << loose << "/" << ok << '\n';
    if (config.bounds.lemma2) {
        log << "lemma2      " << lemma2 << "/" << lemma2_cells << '\n';
    }
    log << "wrote " << (out_dir / "bounds.csv").string() << '\n';
    return outcome;
}

namespace {

struct PreparedTwoPhase {
    LoadedData data;
    LabeledDataset longtail;
    HeadTailSplit split;
    Model initial;
    LossSpec loss;
    TrainConfig phase1;
};

PreparedTwoPhase prepare_two_phase(const ExperimentConfig& config) {
    PreparedTwoPhase p;
    p.data = load_data(config.dataset, config.seed);
    p.longtail = build_longtail(p.data.train, config.long_tail, config.long_tail.imbalance_factors.front(),
                                derive_seed(config.seed, kLongTailStream));
    p.split = head_tail_split(p.longtail, config.long_tail.head_fraction);
    if (p.split.tail.empty()) {
        invalid("long_tail.head_fraction", "leaves no tail classes");
    }
    p.initial = initial_model(config, p.longtail.n_features(), p.longtail.n_classes());
    p.loss = LossSpec{config.mu.front()};
    p.phase1 = config.phase1;
    p.phase1.seed = derive_seed(config.seed, kPhase1Stream);
    return p;
}

TwoPhaseOutcome run_strategies(const ExperimentConfig& config, const PreparedTwoPhase& p, const fs::path& out_dir,
                               std::ostream& log) {
    TwoPhaseOutcome outcome;
    outcome.train_counts = p.longtail.class_counts();
    outcome.head_classes = p.split.head_classes;

    kernels::set_workers(config.workers);
    const auto head = train(p.initial, p.split.head, p.loss, p.phase1);
    outcome.head_trace = head.trace;

    const auto n = config.strategies.size();
    outcome.strategies.resize(n);
    // Strategies are independent; kernels inside a strategy run single-threaded
    // when several strategies run at once.
    const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(config.workers), n));
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (std::size_t i = 0; i < n; ++i) {
        auto& slot = outcome.strategies[i];
        slot.variant = config.strategies[i].variant;
        try {
            TwoPhaseConfig tp;
            tp.initial = p.initial;
            tp.loss = p.loss;
            tp.phase1 = p.phase1;
            tp.strategy = config.strategies[i];
            tp.strategy.phase2.seed = derive_seed(config.seed, kPhase2Stream);
            tp.seed = derive_seed(config.seed, kStateStream);
            slot.result = continue_from_head(head.model, head.trace, p.split, p.data.test, tp);
        } catch (const std::exception& e) {
            slot.error = e.what();
        }
    }

    fs::create_directories(out_dir / "checkpoints");
    save_checkpoint(out_dir / "checkpoints" / "head.ckpt", head.model);
    for (const auto& s : outcome.strategies) {
        const std::string name = to_string(s.variant);
        if (!s.result) {
            log << "strategy " << name << " failed: " << s.error << '\n';
            continue;
        }
        auto out = open_output(out_dir / ("metrics_" + name + ".csv"));
        write_metrics_csv(out, outcome.train_counts, s.result->metrics_before, s.result->metrics_after,
                          s.result->transfer);
        save_checkpoint(out_dir / "checkpoints" / (name + ".ckpt"), s.result->model_after_tail);
    }
    return outcome;
}

void write_summary(const TwoPhaseOutcome& outcome, const fs::path& out_dir, std::ostream& log) {
    auto out = open_output(out_dir / "summary.csv");
    out << "variant,status,avg_acc_before,avg_acc_after,head_drop,tail_gain,weight_norm_std\n";
    log << "variant        status  avg_acc_after  head_drop\n";
    std::vector<int> tail;
    for (int c = 0; c < static_cast<int>(outcome.train_counts.size()); ++c) {
        if (std::find(outcome.head_classes.begin(), outcome.head_classes.end(), c) == outcome.head_classes.end()) {
            tail.push_back(c);
        }
    }
    auto line = [&log](const std::string& name, const std::string& status, const std::string& acc,
                       const std::string& drop) {
        std::string padded = name;
        padded.resize(std::max<std::size_t>(padded.size(), 15), ' ');
        std::string st = status;
        st.resize(std::max<std::size_t>(st.size(), 8), ' ');
        std::string ac = acc;
        ac.resize(std::max<std::size_t>(ac.size(), 15), ' ');
        log << padded << st << ac << drop << '\n';
    };
    if (outcome.joint_metrics) {
        const auto& m = *outcome.joint_metrics;
        csv::row(out, {"joint", "ok", "", csv::num(m.avg_class_accuracy), "", "",
                       csv::num(stddev(m.per_class_weight_norm))});
        line("joint", "ok", percent(m.avg_class_accuracy), "-");
    }
    for (const auto& s : outcome.strategies) {
        const std::string name = to_string(s.variant);
        if (!s.result) {
            csv::row(out, {name, "failed", "", "", "", "", ""});
            line(name, "failed", "-", "-");
            continue;
        }
        const auto& r = *s.result;
        const double tail_gain = -mean_drop(r.metrics_before.per_class_accuracy, r.metrics_after.per_class_accuracy,
                                            tail);
        csv::row(out, {name, "ok", csv::num(r.metrics_before.avg_class_accuracy),
                       csv::num(r.metrics_after.avg_class_accuracy), csv::num(r.head_drop), csv::num(tail_gain),
                       csv::num(stddev(r.metrics_after.per_class_weight_norm))});
        line(name, "ok", percent(r.metrics_after.avg_class_accuracy), percent(r.head_drop));
    }
    log << "wrote " << (out_dir / "summary.csv").string() << '\n';
}

}  // namespace

TwoPhaseOutcome run_ltr_two_phase(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& log) {
    require(config.kind == ExperimentKind::LtrTwoPhase, ErrorCode::Validation, "kind: expected ltr_two_phase");
    const auto prepared = prepare_two_phase(config);
    write_manifest(config, out_dir);
    auto outcome = run_strategies(config, prepared, out_dir, log);
    write_summary(outcome, out_dir, log);
    return outcome;
}

TwoPhaseOutcome run_compare(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& log) {
    require(config.kind == ExperimentKind::Compare, ErrorCode::Validation, "kind: expected compare");
    const auto prepared = prepare_two_phase(config);
    write_manifest(config, out_dir);
    auto outcome = run_strategies(config, prepared, out_dir, log);

    kernels::set_workers(config.workers);
    auto joint = train(prepared.initial, prepared.longtail, prepared.loss, prepared.phase1);
    outcome.joint_metrics = evaluate(joint.model, prepared.data.test);
    save_checkpoint(out_dir / "checkpoints" / "joint.ckpt", joint.model);
    outcome.joint_model = std::move(joint.model);

    auto out = open_output(out_dir / "compare.csv");
    out << "variant,class,count,accuracy,weight_norm\n";
    auto rows = [&](const std::string& name, const MetricsReport& m) {
        for (std::size_t c = 0; c < m.per_class_accuracy.size(); ++c) {
            csv::row(out, {name, std::to_string(c), std::to_string(outcome.train_counts[c]),
                           csv::num(m.per_class_accuracy[c]), csv::num(m.per_class_weight_norm[c])});
        }
    };
    rows("joint", *outcome.joint_metrics);
    for (const auto& s : outcome.strategies) {
        if (s.result) {
            rows(to_string(s.variant), s.result->metrics_after);
        }
    }
    out.close();
    write_summary(outcome, out_dir, log);
    return outcome;
}

namespace {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(const std::string& name, const fs::path& source) const {
        const auto it = std::find(header.begin(), header.end(), name);
        require(it != header.end(), ErrorCode::Parse, source.string() + ": missing column " + name);
        return static_cast<std::size_t>(it - header.begin());
    }
};

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + path.string());
    CsvTable t;
    std::string line;
    if (std::getline(in, line)) {
        t.header = csv::split(line);
    }
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto cells = csv::split(line);
        require(cells.size() == t.header.size(), ErrorCode::Parse, path.string() + ": ragged row");
        t.rows.push_back(std::move(cells));
    }
    return t;
}

double to_double(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        fail(ErrorCode::Parse, "not a number: \"" + s + "\"");
    }
    require(used == s.size(), ErrorCode::Parse, "not a number: \"" + s + "\"");
    return v;
}

// metrics_<variant>.csv files of a run, ordered by strategy declaration.
std::vector<std::pair<std::string, fs::path>> metrics_files(const fs::path& run_dir) {
    std::vector<std::pair<std::string, fs::path>> files;
    for (auto s : {Strategy::Naive, Strategy::Ewc, Strategy::ModifiedEwc, Strategy::Lwf, Strategy::Gpm}) {
        const auto p = run_dir / (std::string("metrics_") + to_string(s) + ".csv");
        if (fs::is_regular_file(p)) {
            files.emplace_back(to_string(s), p);
        }
    }
    require(!files.empty(), ErrorCode::Io, run_dir.string() + " holds no metrics_<strategy>.csv files");
    return files;
}

void distance_series(const fs::path& run_dir, bool by_if, std::ostream& out) {
    const auto source = run_dir / "bounds.csv";
    const auto t = read_csv(source);
    const auto c_if = t.column("if", source);
    const auto c_mu = t.column("mu", source);
    const auto c_d = t.column("measured_distance", source);
    const auto c_t = t.column("tight_bound", source);
    const auto c_l = t.column("loose_bound", source);
    std::vector<std::vector<std::string>> rows = t.rows;
    const auto series_col = by_if ? c_mu : c_if;
    const auto x_col = by_if ? c_if : c_mu;
    std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
        const double sa = to_double(a[series_col]);
        const double sb = to_double(b[series_col]);
        return sa != sb ? sa < sb : to_double(a[x_col]) < to_double(b[x_col]);
    });
    out << "series,x,measured_distance,tight_bound,loose_bound\n";
    for (const auto& r : rows) {
        csv::row(out, {(by_if ? "mu=" : "if=") + r[series_col], r[x_col], r[c_d], r[c_t], r[c_l]});
    }
}

}  // namespace

fs::path emit_plot_data(const fs::path& run_dir, const std::string& kind, const fs::path& out_dir) {
    if (std::find(plot_kinds().begin(), plot_kinds().end(), kind) == plot_kinds().end()) {
        std::string all;
        for (const auto& k : plot_kinds()) {
            all += (all.empty() ? "" : ", ") + k;
        }
        invalid("kind", "unknown plot kind \"" + kind + "\" (expected one of " + all + ")");
    }
    require(fs::is_directory(run_dir), ErrorCode::Io, "run directory not found: " + run_dir.string());
    fs::create_directories(out_dir);
    const auto target = out_dir / (kind + ".csv");
    std::ostringstream out;

    if (kind == "distance-vs-if" || kind == "distance-vs-mu") {
        distance_series(run_dir, kind == "distance-vs-if", out);
    } else if (kind == "per-class-delta") {
        out << "series,class,delta,region\n";
        for (const auto& [name, path] : metrics_files(run_dir)) {
            const auto t = read_csv(path);
            const auto c = t.column("class", path);
            const auto d = t.column("delta", path);
            const auto r = t.column("region", path);
            for (const auto& row : t.rows) {
                csv::row(out, {name, row[c], row[d], row[r]});
            }
        }
    } else if (kind == "per-class-norm") {
        out << "series,class,weight_norm\n";
        const auto compare = run_dir / "compare.csv";
        if (fs::is_regular_file(compare)) {
            const auto t = read_csv(compare);
            const auto v = t.column("variant", compare);
            const auto c = t.column("class", compare);
            const auto w = t.column("weight_norm", compare);
            for (const auto& row : t.rows) {
                csv::row(out, {row[v], row[c], row[w]});
            }
        } else {
            bool head_written = false;
            for (const auto& [name, path] : metrics_files(run_dir)) {
                const auto t = read_csv(path);
                const auto c = t.column("class", path);
                const auto before = t.column("weight_norm_before", path);
                const auto after = t.column("weight_norm_after", path);
                if (!head_written) {
                    for (const auto& row : t.rows) {
                        csv::row(out, {"head", row[c], row[before]});
                    }
                    head_written = true;
                }
                for (const auto& row : t.rows) {
                    csv::row(out, {name, row[c], row[after]});
                }
            }
        }
    } else {
        // accuracy-diff: every variant against naive (or the first variant).
        const auto files = metrics_files(run_dir);
        const auto& ref = files.front();
        const auto ref_table = read_csv(ref.second);
        const auto ref_acc = ref_table.column("acc_after", ref.second);
        out << "series,class,diff\n";
        for (std::size_t k = 1; k < files.size(); ++k) {
            const auto& [name, path] = files[k];
            const auto t = read_csv(path);
            const auto c = t.column("class", path);
            const auto a = t.column("acc_after", path);
            require(t.rows.size() == ref_table.rows.size(), ErrorCode::Shape, path.string() + ": class count differs");
            for (std::size_t i = 0; i < t.rows.size(); ++i) {
                const double diff = to_double(t.rows[i][a]) - to_double(ref_table.rows[i][ref_acc]);
                csv::row(out, {name + "-" + ref.first, t.rows[i][c], csv::num(diff)});
            }
        }
    }
    auto file = open_output(target);
    file << out.str();
    return target;
}

}  // namespace ltcl
