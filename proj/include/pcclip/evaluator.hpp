#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pcclip/dataset.hpp"
#include "pcclip/trainer.hpp"

namespace pcclip {

struct EvalReport {
    std::string dataset_id;
    std::string backend_id;
    std::string prompt;
    int shots = 0;
    std::map<std::string, std::string> tags;  // head, mode, translation, ...
    double accuracy = 0.0;                    // percent
    std::vector<std::string> class_names;
    std::vector<double> per_class_accuracy;   // percent; NaN-free, 0 for empty classes
    std::vector<std::size_t> per_class_count;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    double wall_clock_s = 0.0;
    std::vector<int> labels;
    std::vector<int> predictions;
    // Hashes of everything that should stay fixed across an ablation table.
    std::map<std::string, std::string> hashes;
    std::optional<double> paper_reference_full_scale;
    bool supported = true;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Scores cached test features with a bundle. labels index bundle.class_names.
EvalReport evaluate_features(const TrainedBundle& bundle, const std::vector<Matrix>& features,
                             const std::vector<int>& labels, const Matrix& text);

// Extracts features for `test` and scores them. The pipeline must be the one the bundle was trained with.
EvalReport evaluate(const Pipeline& pipeline, const TrainedBundle& bundle, const LabeledDataset& test, int jobs = 1);

// Shared inputs for shot curves and ablation tables.
struct ExperimentConfig {
    Pipeline pipeline;
    LabeledDataset dataset;               // pool episodes are drawn from
    std::optional<LabeledDataset> test;   // standard test split; otherwise the episode residual
    std::string dataset_id = "synthetic";
    int n_way = 0;                        // 0: every class
    int shots = 16;
    std::uint64_t seed = 0;
    FewShotOptions few_shot;
    int jobs = 1;
};

// Features for the whole pool and test set, extracted once per pipeline.
class FeatureCache {
public:
    FeatureCache(const ExperimentConfig& config, const Pipeline& pipeline);
    const std::vector<Matrix>& pool() const { return pool_; }
    const std::vector<Matrix>& test() const { return test_; }
    const std::string& depth_maps_hash() const { return depth_hash_; }

private:
    std::vector<Matrix> pool_;
    std::vector<Matrix> test_;
    std::string depth_hash_;
};

// One independent episode per shot count. All counts share the test set of the
// largest count, and smaller episodes are subsets of larger ones.
std::vector<EvalReport> shot_curve(const std::vector<int>& shots, const ExperimentConfig& config);

// Zero-shot and few-shot rows on the same test set.
std::vector<EvalReport> zero_vs_few_shot(const ExperimentConfig& config);

// Templates: row texts. A template without "[CLASS]" fails validation; the
// learnable-token row is added as an unsupported placeholder when requested.
std::vector<EvalReport> prompt_ablation(const std::vector<std::string>& templates, const ExperimentConfig& config,
                                        bool include_learnable_tokens_row = false);

std::vector<EvalReport> ablate_adapter_modes(const std::vector<AdapterMode>& modes, const ExperimentConfig& config);

// Rows: translation on, translation off (depth images fed to the encoder directly).
std::vector<EvalReport> ablate_translation(const ExperimentConfig& config);

// Templates compared in the prompt-design table, in row order.
const std::vector<std::string>& standard_prompt_templates();
inline constexpr const char* kLearnableTokensRow = "[Learnable Tokens] + [CLASS]";

enum class ReportFormat { json, csv };
ReportFormat parse_report_format(const std::string& s);

std::string reports_to_json(const std::vector<EvalReport>& reports);
std::vector<EvalReport> reports_from_json(const std::string& text);
std::string reports_to_csv(const std::vector<EvalReport>& reports);

// Writes report.json or report.csv under `dir`; with `plot` also writes an
// accuracy-vs-shots PNG and a `<plot>.json` manifest listing plotted points.
void emit_report(const std::vector<EvalReport>& reports, ReportFormat format, const std::filesystem::path& dir,
                 const std::optional<std::filesystem::path>& plot = std::nullopt);

struct PlotPoint {
    double shots;
    double accuracy;
    int px;
    int py;
};
// Line plot of accuracy (y, 0..100) against shot count (x). Returns the plotted points.
std::vector<PlotPoint> plot_shot_curve(const std::vector<EvalReport>& reports, const std::filesystem::path& png,
                                       int width = 480, int height = 360);

// plot_shot_curve plus `<png>.json` listing the plotted points.
void write_plot(const std::vector<EvalReport>& reports, const std::filesystem::path& png);

}  // namespace pcclip
