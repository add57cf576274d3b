#include "dwic/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dwic/evaluation.hpp"

namespace dwic {

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw std::invalid_argument("train config: lr0 must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw std::invalid_argument("train config: momentum must be in [0,1)");
    if (batch_size < 2)
        throw std::invalid_argument("train config: batch_size must be >= 2 (batch norm)");
    if (max_epochs < 0) throw std::invalid_argument("train config: max_epochs must be >= 0");
    if (!(lr_factor > 0.0 && lr_factor < 1.0))
        throw std::invalid_argument("train config: lr_factor must be in (0,1)");
    if (plateau_patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
}

template <typename T>
void sgd_step(const std::vector<ParamRef<T>>& params, std::vector<TensorT<T>>& velocity,
              double lr, double momentum, double weight_decay) {
    if (velocity.empty()) {
        velocity.reserve(params.size());
        for (const auto& p : params) velocity.emplace_back(p.value->shape());
    }
    if (velocity.size() != params.size())
        throw std::invalid_argument("sgd_step: velocity/param count mismatch");

    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        if (!p.grad) continue;
        if (p.grad->shape() != p.value->shape() || velocity[i].shape() != p.value->shape())
            throw std::invalid_argument("sgd_step: shape mismatch for " + p.name);
        T* w = p.value->data();
        const T* g = p.grad->data();
        T* v = velocity[i].data();
        for (std::size_t j = 0; j < p.value->size(); ++j) {
            if (!std::isfinite(static_cast<double>(g[j])))
                throw std::domain_error("sgd_step: non-finite gradient in " + p.name);
            const double update = static_cast<double>(momentum) * v[j] -
                                  lr * (static_cast<double>(g[j]) +
                                        weight_decay * static_cast<double>(w[j]));
            v[j] = static_cast<T>(update);
            w[j] = static_cast<T>(w[j] + v[j]);
        }
    }
}

template void sgd_step(const std::vector<ParamRef<float>>&, std::vector<TensorT<float>>&,
                       double, double, double);
template void sgd_step(const std::vector<ParamRef<double>>&, std::vector<TensorT<double>>&,
                       double, double, double);

PlateauScheduler::PlateauScheduler(double lr0, int patience, double min_delta, double factor,
                                   int cooldown)
    : lr_(lr0),
      best_(0.0),
      min_delta_(min_delta),
      factor_(factor),
      patience_(patience),
      cooldown_len_(cooldown) {}

double PlateauScheduler::step(double monitor) {
    if (!has_best_ || monitor < best_ - min_delta_) {
        best_ = monitor;
        has_best_ = true;
        num_bad_ = 0;
        return lr_;
    }
    if (cooldown_left_ > 0) {
        --cooldown_left_;
        num_bad_ = 0;
        return lr_;
    }
    ++num_bad_;
    if (num_bad_ >= patience_) {
        lr_ *= factor_;
        num_bad_ = 0;
        cooldown_left_ = cooldown_len_;
    }
    return lr_;
}

namespace {

Tensor gather_batch(const SliceDataset& set, const std::vector<std::size_t>& order,
                    std::size_t begin, std::size_t end) {
    const auto& shape0 = set.images[order[begin]].shape();
    Tensor batch({end - begin, shape0[0], shape0[1], shape0[2]});
    const std::size_t stride = shape0[0] * shape0[1] * shape0[2];
    for (std::size_t i = begin; i < end; ++i) {
        const Tensor& img = set.images[order[i]];
        if (img.shape() != shape0)
            throw std::invalid_argument("train: inconsistent slice shapes in dataset");
        std::copy(img.data(), img.data() + stride, batch.data() + (i - begin) * stride);
    }
    return batch;
}

struct EvalStats {
    double loss;
    double auc;  // nan when the set has a single class
};

EvalStats evaluate_set(Model<float>& model, const SliceDataset& set, int batch_size,
                       double pos_weight) {
    double loss_sum = 0.0;
    std::size_t counted = 0;
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(set.size());

    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), std::size_t(0));

    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        const std::size_t stop = std::min(set.size(), start + batch_size);
        Tensor batch = gather_batch(set, order, start, stop);
        std::vector<int> batch_labels(set.labels.begin() + start, set.labels.begin() + stop);
        Tensor probs = model.forward(batch, Mode::kEval);
        const auto bce = bce_loss(probs, batch_labels, static_cast<float>(pos_weight));
        loss_sum += static_cast<double>(bce.loss) * static_cast<double>(stop - start);
        counted += stop - start;
        for (std::size_t i = 0; i < stop - start; ++i) {
            scores.push_back(static_cast<double>(probs.at(i, 1)));
            labels.push_back(batch_labels[i]);
        }
    }

    EvalStats st;
    st.loss = loss_sum / static_cast<double>(counted);
    bool has_pos = false, has_neg = false;
    for (int l : labels) (l == 1 ? has_pos : has_neg) = true;
    st.auc = (has_pos && has_neg) ? auc_mann_whitney(scores, labels)
                                  : std::numeric_limits<double>::quiet_NaN();
    return st;
}

}  // namespace

TrainResult train_model(Model<float>& model, const SliceDataset& train_set,
                        const SliceDataset& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0 || val_set.size() == 0)
        throw std::invalid_argument("train: empty dataset");
    if (train_set.labels.size() != train_set.size())
        throw std::invalid_argument("train: label count mismatch");

    Rng rng(cfg.seed);
    model.init_weights(rng);

    TrainResult result;
    result.best_state = snapshot_state(model);
    result.best_val_loss = std::numeric_limits<double>::infinity();
    result.best_epoch = 0;

    if (cfg.max_epochs == 0) return result;

    PlateauScheduler scheduler(cfg.lr0, cfg.plateau_patience, cfg.min_delta, cfg.lr_factor,
                               cfg.cooldown);
    std::vector<Tensor> velocity;
    auto params = model.params();

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t(0));

    double lr = cfg.lr0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t counted = 0;
        for (std::size_t start = 0; start < train_set.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(train_set.size(), start + static_cast<std::size_t>(cfg.batch_size));
            if (stop - start < 2) break;  // batch norm needs at least 2 samples

            Tensor batch = gather_batch(train_set, order, start, stop);
            std::vector<int> batch_labels;
            batch_labels.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i)
                batch_labels.push_back(train_set.labels[order[i]]);

            Tensor probs = model.forward(batch, Mode::kTrain, &rng);
            const auto bce = bce_loss(probs, batch_labels,
                                      static_cast<float>(cfg.pos_class_weight));
            if (!std::isfinite(static_cast<double>(bce.loss))) {
                std::ostringstream os;
                os << "train: non-finite loss at epoch " << epoch << ", batch offset " << start
                   << " (lr=" << lr << ")";
                throw std::runtime_error(os.str());
            }
            loss_sum += static_cast<double>(bce.loss) * static_cast<double>(stop - start);
            counted += stop - start;

            model.zero_grads();
            model.backward(bce.grad_probs);
            sgd_step(params, velocity, lr, cfg.momentum, cfg.weight_decay);
        }

        const double train_loss =
            counted ? loss_sum / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN();
        const EvalStats val = evaluate_set(model, val_set, cfg.batch_size, cfg.pos_class_weight);

        result.log.push_back({epoch, train_loss, val.loss, val.auc, lr});

        if (val.loss < result.best_val_loss) {
            result.best_val_loss = val.loss;
            result.best_epoch = epoch;
            result.best_state = snapshot_state(model);
        }

        lr = scheduler.step(val.loss);
        if (lr < cfg.min_lr) break;
    }

    restore_state(model, result.best_state);
    return result;
}

std::vector<double> predict_slices(Model<float>& model, const SliceDataset& set,
                                   int batch_size) {
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::vector<double> scores;
    scores.reserve(set.size());
    for (std::size_t start = 0; start < set.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop = std::min(set.size(), start + static_cast<std::size_t>(batch_size));
        Tensor batch = gather_batch(set, order, start, stop);
        Tensor probs = model.forward(batch, Mode::kEval);
        for (std::size_t i = 0; i < stop - start; ++i)
            scores.push_back(static_cast<double>(probs.at(i, 1)));
    }
    return scores;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& log,
                       const std::string& provenance) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("metrics csv: cannot open " + path);
    if (!provenance.empty()) os << "# " << provenance << "\n";
    os << "epoch,train_loss,val_loss,val_auc,lr\n";
    char buf[160];
    for (const EpochMetrics& m : log) {
        std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g", m.epoch, m.train_loss,
                      m.val_loss, m.val_auc, m.lr);
        os << buf << "\n";
    }
}

}  // namespace dwic
