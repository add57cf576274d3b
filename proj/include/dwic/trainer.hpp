#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dwic/checkpoint.hpp"
#include "dwic/model.hpp"

namespace dwic {

struct TrainConfig {
    double lr0 = 0.001;
    double momentum = 0.9;
    double weight_decay = 1e-6;  // coupled: decayed gradient g + wd*w
    int batch_size = 8;
    int plateau_patience = 10;
    double min_delta = 1e-4;
    double lr_factor = 0.1;
    int cooldown = 0;
    int max_epochs = 100;
    double min_lr = 1e-6;  // training stops once lr decays below this
    std::uint64_t seed = 0;
    double pos_class_weight = 1.0;  // optional; 1 = plain BCE

    void validate() const;
};

// v <- momentum*v - lr*(g + weight_decay*w); w <- w + v
// velocity is created lazily on the first call
template <typename T>
void sgd_step(const std::vector<ParamRef<T>>& params, std::vector<TensorT<T>>& velocity,
              double lr, double momentum, double weight_decay);

// Divides lr by lr_factor^-1 after `patience` consecutive epochs without an
// improvement of more than min_delta over the best monitored value.
class PlateauScheduler {
public:
    PlateauScheduler(double lr0, int patience, double min_delta, double factor,
                     int cooldown = 0);
    double step(double monitor);
    double lr() const { return lr_; }

private:
    double lr_, best_, min_delta_, factor_;
    int patience_, cooldown_len_;
    int num_bad_ = 0, cooldown_left_ = 0;
    bool has_best_ = false;
};

struct SliceDataset {
    std::vector<Tensor> images;  // each [C,H,W]
    std::vector<int> labels;
    std::vector<std::string> patient_ids;
    std::vector<int> slice_indices;

    std::size_t size() const { return images.size(); }
};

struct EpochMetrics {
    int epoch;
    double train_loss, val_loss, val_auc, lr;
};

struct TrainResult {
    std::vector<NamedTensor> best_state;
    double best_val_loss = 0.0;
    int best_epoch = 0;
    std::vector<EpochMetrics> log;
};

// Seeded end to end: init, shuffling and dropout all derive from cfg.seed.
// The model is left holding the best-validation-loss weights.
TrainResult train_model(Model<float>& model, const SliceDataset& train_set,
                        const SliceDataset& val_set, const TrainConfig& cfg);

// eval-mode positive-class probabilities for every slice in the set
std::vector<double> predict_slices(Model<float>& model, const SliceDataset& set,
                                   int batch_size = 16);

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& log,
                       const std::string& provenance);

}  // namespace dwic
