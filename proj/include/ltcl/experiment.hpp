#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltcl/bounds.hpp"
#include "ltcl/continual.hpp"
#include "ltcl/datasets.hpp"
#include "ltcl/error.hpp"
#include "ltcl/metrics.hpp"
#include "ltcl/models.hpp"
#include "ltcl/training.hpp"

namespace ltcl {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kManifestVersion = 1;

enum class ExperimentKind { BoundGrid, LtrTwoPhase, Compare };

const char* to_string(ExperimentKind kind) noexcept;

struct DatasetSource {
    enum class Kind { Idx, Synthetic };
    Kind kind = Kind::Idx;
    std::filesystem::path train_images;
    std::filesystem::path train_labels;
    std::filesystem::path test_images;
    std::filesystem::path test_labels;
    // Mean-pool factor for 28x28 images; 1 keeps the raw pixels.
    Index pool = 1;
    // Synthetic Gaussian classes.
    int n_classes = 10;
    Index n_features = 20;
    Index n_per_class = 200;
    Index n_test_per_class = 50;
    double separation = 3.0;
};

struct LongTailSpec {
    std::vector<double> imbalance_factors;
    double head_fraction = 0.6;
    std::optional<Index> n_max;
};

struct ModelSpec {
    ModelKind kind = ModelKind::Linear;
    std::vector<Index> hidden;
};

struct BoundSpec {
    double grad_tolerance = 1e-8;
    int delta_samples = 64;
    bool lemma2 = false;
};

struct ExperimentConfig {
    int schema_version = kConfigSchemaVersion;
    ExperimentKind kind = ExperimentKind::BoundGrid;
    std::uint64_t seed = 0;
    int workers = 1;
    DatasetSource dataset;
    LongTailSpec long_tail;
    std::vector<double> mu;
    ModelSpec model;
    BoundSpec bounds;
    TrainConfig phase1;
    std::vector<StrategyParams> strategies;
};

/// Parses and validates a config (or the `config` member of a run manifest).
/// Relative paths resolve against `base_dir`. Every failure is a Validation
/// error whose message starts with the offending field path.
ExperimentConfig parse_config(const nlohmann::json& document, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved form: every field explicit, paths absolute.
nlohmann::json to_json(const ExperimentConfig& config);

/// Independent seed for a named stage of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct LoadedData {
    LabeledDataset train;
    LabeledDataset test;
    Index image_side = 0;  // 0 for synthetic data
};

LoadedData load_data(const DatasetSource& source, std::uint64_t seed);

/// Long-tailed, count-ordered training set for one imbalance factor.
LabeledDataset build_longtail(const LabeledDataset& train, const LongTailSpec& spec, double imbalance_factor,
                              std::uint64_t seed);

Model initial_model(const ExperimentConfig& config, Index n_features, int n_classes);

struct BoundGridOutcome {
    std::vector<BoundReport> reports;
    bool any_tight_violation = false;
    bool any_failure = false;
};

struct StrategyOutcome {
    Strategy variant = Strategy::Naive;
    std::optional<PhaseResult> result;
    std::string error;
};

struct TwoPhaseOutcome {
    std::vector<Index> train_counts;
    std::vector<int> head_classes;
    TrainTrace head_trace;
    std::vector<StrategyOutcome> strategies;
    // Single-phase training on the whole long-tailed set (compare runs only).
    std::optional<Model> joint_model;
    std::optional<MetricsReport> joint_metrics;
};

/// Every runner writes manifest.json plus its CSVs into `out_dir` and a
/// human-readable summary to `log`.
BoundGridOutcome run_bound_grid(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                std::ostream& log);
TwoPhaseOutcome run_ltr_two_phase(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                  std::ostream& log);
TwoPhaseOutcome run_compare(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

void write_manifest(const ExperimentConfig& config, const std::filesystem::path& out_dir);

// Process exit status of the command-line runner.
enum ExitStatus { kExitOk = 0, kExitValidation = 1, kExitBoundViolation = 2, kExitRuntime = 3 };
int exit_status(const BoundGridOutcome& outcome);
int exit_status(const TwoPhaseOutcome& outcome);
int exit_status(const Error& error);

inline const std::vector<std::string>& plot_kinds() {
    static const std::vector<std::string> kinds = {"distance-vs-if", "distance-vs-mu", "per-class-delta",
                                                   "per-class-norm", "accuracy-diff"};
    return kinds;
}

/// Reshapes the CSVs of a finished run in `run_dir` into `<kind>.csv` under
/// `out_dir`. Returns the written path.
std::filesystem::path emit_plot_data(const std::filesystem::path& run_dir, const std::string& kind,
                                     const std::filesystem::path& out_dir);

}  // namespace ltcl
