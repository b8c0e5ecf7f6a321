#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pcclip/dataset.hpp"
#include "pcclip/encoder.hpp"
#include "pcclip/heads.hpp"
#include "pcclip/optimizer.hpp"
#include "pcclip/projection.hpp"
#include "pcclip/translator.hpp"

namespace pcclip {

// Everything upstream of the adapter. Never modified by training.
struct Pipeline {
    ProjectionConfig projection;
    std::shared_ptr<const Translator> translator;  // null: depth images go straight to the encoder
    EncoderPair encoders;
    PromptTemplate prompt{"point cloud of a big [CLASS]."};
    double temperature = 1.0;

    int views() const { return static_cast<int>(projection.views.size()); }
    int feature_dim() const { return encoders.visual->feature_dim(); }
    // Hash over projection config, translator weights, encoder identities, prompt and temperature.
    std::string fingerprint() const;
    void validate() const;
};

// project -> encoder-sized depth image -> translator -> visual encoder -> unit rows. M x C.
Matrix extract_features(const Pipeline& pipeline, const PointCloud& cloud);
// One matrix per cloud, computed on `jobs` threads. Output order follows `clouds`.
std::vector<Matrix> extract_all(const Pipeline& pipeline, const std::vector<PointCloud>& clouds, int jobs = 1);
// K x C unit rows for the given class names.
Matrix text_features(const Pipeline& pipeline, const std::vector<std::string>& class_names);

double cross_entropy(const Vector& probs, int label);

enum class HeadType { zero_shot, viewpoint, interview };
HeadType parse_head_type(const std::string& s);
std::string head_type_name(HeadType h);

enum class AdapterMode { both, view_only, global_only };
AdapterMode parse_adapter_mode(const std::string& s);
std::string adapter_mode_name(AdapterMode m);

struct FewShotOptions {
    HeadType head = HeadType::viewpoint;
    AdapterMode mode = AdapterMode::both;
    OptimizerConfig opt = OptimizerConfig::few_shot();
    int hidden = 0;      // C_h, 0: C
    int global_dim = 0;  // C_g for the inter-view head, 0: C
};

struct TrainingLogRow {
    int epoch = 0;
    double loss = 0.0;
    double train_acc = 0.0;  // percent
};

// Head parameters for one of the three head types.
struct AdapterHead {
    HeadType type = HeadType::zero_shot;
    Vector alpha;  // zero-shot view weights
    ViewpointAdapterParams viewpoint;
    InterViewAdapterParams interview;

    Vector logits(const Matrix& view, const Matrix& text, double temperature) const;
    Vector probs(const Matrix& view, const Matrix& text, double temperature) const;
    std::vector<double> flatten() const;
};

struct TrainedBundle {
    AdapterHead head;
    AdapterMode mode = AdapterMode::both;
    std::vector<std::string> class_names;
    std::string prompt;
    double temperature = 1.0;
    int views = 0;
    int feature_dim = 0;
    // Frozen references.
    std::string pipeline_fingerprint;
    std::string translator_fingerprint;  // "none" when bypassed
    std::string visual_identity;
    std::string text_identity;
    OptimizerConfig opt;
    std::uint64_t init_seed = 0;
    std::vector<TrainingLogRow> log;
};

AdapterHead init_head(HeadType type, int views, int dim, const FewShotOptions& options, std::uint64_t seed);

// Zero-shot bundle: fixed alpha = 1/M, nothing trained.
TrainedBundle zero_shot_bundle(const Pipeline& pipeline, const std::vector<std::string>& class_names);

// Trains on cached features. labels[i] indexes rows of `text`.
TrainedBundle train_on_features(const std::vector<Matrix>& features, const std::vector<int>& labels,
                                const Matrix& text, const std::vector<std::string>& class_names, double temperature,
                                const FewShotOptions& options);

// Extracts features once, trains, and checks the pipeline fingerprint did not change.
TrainedBundle train_few_shot(const Pipeline& pipeline, const LabeledDataset& episode, const FewShotOptions& options,
                             int jobs = 1);

// Fills the frozen-reference fields of `bundle` from `pipeline`.
void stamp_pipeline(TrainedBundle& bundle, const Pipeline& pipeline);

// JSON document with head type, dimensions (M, C, C_h, K), flat parameters and the prompt.
void save_bundle(const std::filesystem::path& file, const TrainedBundle& bundle);
TrainedBundle load_bundle(const std::filesystem::path& file);

void write_training_log(const std::filesystem::path& file, const std::vector<TrainingLogRow>& log);

}  // namespace pcclip
