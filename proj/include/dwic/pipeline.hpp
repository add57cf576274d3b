#pragma once

#include <map>
#include <string>
#include <vector>

#include "dwic/config.hpp"
#include "dwic/data.hpp"
#include "dwic/forest.hpp"
#include "dwic/model.hpp"
#include "dwic/stats.hpp"
#include "dwic/trainer.hpp"

namespace dwic {

ModelSpec model_spec_from(const PipelineConfig& cfg);
TrainConfig train_config_from(const PipelineConfig& cfg, std::uint64_t seed);

struct EnsembleResult {
    std::vector<TrainResult> members;  // member i trained with seed base+i+1
};

// Identically configured members differing only in their derived seeds.
// Members may train concurrently; results are independent of the degree of
// parallelism.
EnsembleResult ensemble_train(const ModelSpec& spec, const SliceDataset& train_set,
                              const SliceDataset& val_set, const TrainConfig& base,
                              int n_members, int parallel);

struct SlicePrediction {
    std::string patient_id;
    int slice_index = 0;
    int member = 1;  // 1-based CNN index
    std::string split;
    int slice_label = 0;
    double p_nonpca = 0.0, p_pca = 0.0;
};

void write_predictions_csv(const std::string& path, const std::vector<SlicePrediction>& rows,
                           const std::string& provenance);
std::vector<SlicePrediction> read_predictions_csv(const std::string& path);

// filter -> statistics -> 18*n_members features per patient, patients kept
// in the given order
std::vector<FeatureRow> build_patient_features(const std::vector<SlicePrediction>& preds,
                                               const std::vector<std::string>& patient_order,
                                               const std::map<std::string, int>& patient_labels,
                                               int n_members, double cutoff, int top_k);

void stage_synth(const PipelineConfig& cfg);
void stage_split(const PipelineConfig& cfg);
void stage_preprocess(const PipelineConfig& cfg);
void stage_train(const PipelineConfig& cfg);
void stage_infer(const PipelineConfig& cfg);
void stage_features(const PipelineConfig& cfg);
void stage_select(const PipelineConfig& cfg);
void stage_train_rf(const PipelineConfig& cfg);
void stage_evaluate(const PipelineConfig& cfg);
void stage_plot(const PipelineConfig& cfg);
void run_all(const PipelineConfig& cfg);

}  // namespace dwic
