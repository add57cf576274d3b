#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dwic {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value configuration driving every pipeline stage. The config
// hash covers the scientific parameters only (not paths), so identical
// experiments produce identical artifacts wherever they run.
struct PipelineConfig {
    std::string data_dir;  // defaults to <work_dir>/data
    std::string work_dir = "work";

    std::uint64_t seed = 42;

    // synth
    std::size_t n_patients = 120;
    double lesion_contrast = 6.0;
    double pos_fraction = 0.5;
    std::size_t image_size = 160;
    std::size_t min_slices = 10, max_slices = 16;

    // split
    double test_frac = 0.25;
    double val_frac = 0.15;

    // preprocess
    std::size_t resize_to = 144;
    std::size_t crop_to = 66;
    std::string normalization_scope = "train";  // train | all

    // model
    std::string model = "table3";  // table3 | toy
    double dropout = -1.0;         // <0 keeps the preset's value
    std::size_t fc_hidden = 0;

    // training
    double lr0 = 0.001;
    double momentum = 0.9;
    double weight_decay = 1e-6;
    int batch_size = 8;
    int patience = 10;
    double min_delta = 1e-4;
    double lr_factor = 0.1;
    int cooldown = 0;
    int max_epochs = 100;
    double min_lr = 1e-6;
    double pos_class_weight = 1.0;
    int n_members = 5;
    int parallel_members = 1;

    // stacking
    double cutoff = 0.74;
    int top_k = 5;
    int selector_k = 26;
    int selector_trees = 200;
    bool selector_cv = false;
    int cv_folds = 10;
    int rf_trees = 200;
    int rf_max_depth = -1;
    int rf_min_leaf = 1;
    std::string rf_train_split = "validation";  // validation | train | trainval
    int baseline_member = 1;                    // 1-based CNN index

    // evaluation
    int n_boot = 2000;
    double ppv_threshold = 0.5;

    void validate() const;

    // canonical scientific key/value view (paths excluded)
    std::vector<std::pair<std::string, std::string>> key_values() const;
    std::uint64_t hash() const;
    std::string hash_hex() const;
    std::string provenance() const;  // "config_hash=... seed=..."
};

// key = value lines, '#' comments; unknown keys are rejected
PipelineConfig load_config_file(const std::string& path);
void apply_override(PipelineConfig& cfg, const std::string& key, const std::string& value);
void write_config_file(const std::string& path, const PipelineConfig& cfg);

}  // namespace dwic
