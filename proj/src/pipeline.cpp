#include "dwic/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dwic/checkpoint.hpp"
#include "dwic/evaluation.hpp"
#include "dwic/rng.hpp"

namespace dwic {

namespace fs = std::filesystem;

namespace {

struct Paths {
    fs::path data_dir, work;

    fs::path manifest() const { return data_dir / "manifest.csv"; }
    fs::path volumes() const { return data_dir / "volumes"; }
    fs::path prep() const { return work / "prep"; }
    fs::path prep_volumes() const { return prep() / "volumes"; }
    fs::path norm_stats() const { return prep() / "norm_stats.csv"; }
    fs::path checkpoints() const { return work / "checkpoints"; }
    fs::path checkpoint(int member) const {
        return checkpoints() / ("cnn" + std::to_string(member) + ".pcnn");
    }
    fs::path metrics(int member) const {
        return checkpoints() / ("metrics_cnn" + std::to_string(member) + ".csv");
    }
    fs::path predictions() const { return work / "pred" / "predictions.csv"; }
    fs::path features_dir() const { return work / "features"; }
    fs::path features(const std::string& split) const {
        return features_dir() / ("features_" + split + ".csv");
    }
    fs::path feature_names_file() const { return features_dir() / "feature_names.txt"; }
    fs::path selected() const { return features_dir() / "selected.json"; }
    fs::path selected_single() const { return features_dir() / "selected_single.json"; }
    fs::path forest_dir() const { return work / "forest"; }
    fs::path forest() const { return forest_dir() / "forest.pcrf"; }
    fs::path forest_single() const { return forest_dir() / "forest_single.pcrf"; }
    fs::path eval_dir() const { return work / "eval"; }
    fs::path summary() const { return eval_dir() / "summary.txt"; }
    fs::path manifests_dir() const { return work / "manifests"; }
};

Paths make_paths(const PipelineConfig& cfg) {
    Paths p;
    p.work = cfg.work_dir;
    p.data_dir = cfg.data_dir.empty() ? p.work / "data" : fs::path(cfg.data_dir);
    return p;
}

void require_file(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path))
        throw MissingArtifactError("missing artifact " + path.string() + " (run `" + producer +
                                   "` first)");
}

void write_stage_manifest(const Paths& paths, const PipelineConfig& cfg,
                          const std::string& stage, const std::vector<std::string>& outputs) {
    fs::create_directories(paths.manifests_dir());
    std::ofstream os(paths.manifests_dir() / (stage + ".txt"), std::ios::trunc);
    os << "stage=" << stage << "\n";
    os << "config_hash=" << cfg.hash_hex() << "\n";
    os << "seed=" << cfg.seed << "\n";
    for (const std::string& o : outputs) os << "output=" << o << "\n";
}

std::vector<PatientEntry> read_split_manifest(const Paths& paths) {
    require_file(paths.manifest(), "synth");
    auto entries = read_manifest_csv(paths.manifest().string());
    for (const PatientEntry& e : entries)
        if (e.split.empty())
            throw MissingArtifactError("manifest has unassigned splits (run `split` first)");
    return entries;
}

struct PrepData {
    std::vector<PatientEntry> entries;
    std::vector<PatientVolume> volumes;  // aligned with entries
};

PrepData load_prep(const Paths& paths, const std::vector<std::string>& splits_wanted) {
    PrepData d;
    auto entries = read_split_manifest(paths);
    for (PatientEntry& e : entries) {
        if (!splits_wanted.empty() &&
            std::find(splits_wanted.begin(), splits_wanted.end(), e.split) ==
                splits_wanted.end())
            continue;
        const fs::path vp = paths.prep_volumes() / (e.patient_id + ".dwiv");
        require_file(vp, "preprocess");
        d.volumes.push_back(load_volume(vp.string(), e.patient_id));
        d.entries.push_back(e);
    }
    return d;
}

SliceDataset dataset_for_split(const PrepData& d, const std::string& split) {
    std::vector<const PatientVolume*> sel;
    for (std::size_t i = 0; i < d.entries.size(); ++i)
        if (d.entries[i].split == split) sel.push_back(&d.volumes[i]);
    return make_slice_dataset(sel);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

ModelSpec model_spec_from(const PipelineConfig& cfg) {
    ModelSpec spec = (cfg.model == "toy") ? ModelSpec::toy() : ModelSpec::table3();
    spec.in_h = cfg.crop_to;
    spec.in_w = cfg.crop_to;
    if (cfg.dropout >= 0.0) spec.dropout_p = cfg.dropout;
    spec.fc_hidden = cfg.fc_hidden;
    return spec;
}

TrainConfig train_config_from(const PipelineConfig& cfg, std::uint64_t seed) {
    TrainConfig t;
    t.lr0 = cfg.lr0;
    t.momentum = cfg.momentum;
    t.weight_decay = cfg.weight_decay;
    t.batch_size = cfg.batch_size;
    t.plateau_patience = cfg.patience;
    t.min_delta = cfg.min_delta;
    t.lr_factor = cfg.lr_factor;
    t.cooldown = cfg.cooldown;
    t.max_epochs = cfg.max_epochs;
    t.min_lr = cfg.min_lr;
    t.pos_class_weight = cfg.pos_class_weight;
    t.seed = seed;
    return t;
}

EnsembleResult ensemble_train(const ModelSpec& spec, const SliceDataset& train_set,
                              const SliceDataset& val_set, const TrainConfig& base,
                              int n_members, int parallel) {
    if (n_members < 1) throw std::invalid_argument("ensemble: need at least one member");
    EnsembleResult result;
    result.members.resize(static_cast<std::size_t>(n_members));
    std::vector<std::string> errors(static_cast<std::size_t>(n_members));

    std::atomic<int> next{0};
    auto worker = [&]() {
        while (true) {
            const int i = next.fetch_add(1);
            if (i >= n_members) break;
            try {
                Model<float> model(spec);
                TrainConfig cfg = base;
                cfg.seed = base.seed + static_cast<std::uint64_t>(i) + 1;
                result.members[static_cast<std::size_t>(i)] =
                    train_model(model, train_set, val_set, cfg);
            } catch (const std::exception& e) {
                errors[static_cast<std::size_t>(i)] = e.what();
            }
        }
    };

    const int n_threads = std::min(parallel, n_members);
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    for (int i = 0; i < n_members; ++i)
        if (!errors[static_cast<std::size_t>(i)].empty())
            throw TrainingFailure("ensemble member " + std::to_string(i + 1) +
                                  " failed: " + errors[static_cast<std::size_t>(i)]);
    return result;
}

void write_predictions_csv(const std::string& path, const std::vector<SlicePrediction>& rows,
                           const std::string& provenance) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("predictions: cannot open " + path);
    if (!provenance.empty()) os << "# " << provenance << "\n";
    os << "patient_id,slice_index,cnn,split,slice_label,p_nonpca,p_pca\n";
    char buf[96];
    for (const SlicePrediction& r : rows) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g", r.p_nonpca, r.p_pca);
        os << r.patient_id << "," << r.slice_index << "," << r.member << "," << r.split << ","
           << r.slice_label << buf << "\n";
    }
}

std::vector<SlicePrediction> read_predictions_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("predictions: cannot open " + path);
    std::vector<SlicePrediction> out;
    std::string line;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        std::istringstream ss(line);
        SlicePrediction r;
        std::string tok;
        std::getline(ss, r.patient_id, ',');
        std::getline(ss, tok, ',');
        r.slice_index = std::stoi(tok);
        std::getline(ss, tok, ',');
        r.member = std::stoi(tok);
        std::getline(ss, r.split, ',');
        std::getline(ss, tok, ',');
        r.slice_label = std::stoi(tok);
        std::getline(ss, tok, ',');
        r.p_nonpca = std::stod(tok);
        std::getline(ss, tok, ',');
        r.p_pca = std::stod(tok);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<FeatureRow> build_patient_features(const std::vector<SlicePrediction>& preds,
                                               const std::vector<std::string>& patient_order,
                                               const std::map<std::string, int>& patient_labels,
                                               int n_members, double cutoff, int top_k) {
    // per patient, per member: slice probabilities ordered by slice index
    struct MemberProbs {
        std::vector<std::pair<int, double>> pca, nonpca;
    };
    std::map<std::string, std::vector<MemberProbs>> grouped;
    for (const SlicePrediction& p : preds) {
        auto& v = grouped[p.patient_id];
        if (v.empty()) v.resize(static_cast<std::size_t>(n_members));
        if (p.member < 1 || p.member > n_members)
            throw std::invalid_argument("features: CNN index out of range in predictions");
        auto& m = v[static_cast<std::size_t>(p.member - 1)];
        m.pca.emplace_back(p.slice_index, p.p_pca);
        m.nonpca.emplace_back(p.slice_index, p.p_nonpca);
    }

    std::vector<FeatureRow> rows;
    for (const std::string& pid : patient_order) {
        auto it = grouped.find(pid);
        if (it == grouped.end())
            throw std::invalid_argument("features: no predictions for patient " + pid);
        PatientSets sets;
        for (int m = 0; m < n_members; ++m) {
            MemberProbs& mp = it->second[static_cast<std::size_t>(m)];
            if (mp.pca.empty())
                throw std::invalid_argument("features: missing CNN " + std::to_string(m + 1) +
                                            " output for patient " + pid);
            std::sort(mp.pca.begin(), mp.pca.end());
            std::sort(mp.nonpca.begin(), mp.nonpca.end());
            std::vector<double> pca_probs, nonpca_probs;
            for (auto& [s, v] : mp.pca) pca_probs.push_back(v);
            for (auto& [s, v] : mp.nonpca) nonpca_probs.push_back(v);
            sets.sets.push_back({filter_probabilities(pca_probs, cutoff, top_k),
                                 filter_probabilities(nonpca_probs, cutoff, top_k)});
        }
        FeatureRow row;
        row.patient_id = pid;
        row.label = patient_labels.at(pid);
        row.features = assemble_features(sets);
        rows.push_back(std::move(row));
    }
    return rows;
}

void stage_synth(const PipelineConfig& cfg) {
    cfg.validate();
    const Paths paths = make_paths(cfg);
    fs::create_directories(paths.volumes());

    SynthConfig sc;
    sc.n_patients = cfg.n_patients;
    sc.lesion_contrast = cfg.lesion_contrast;
    sc.pos_fraction = cfg.pos_fraction;
    sc.image_size = cfg.image_size;
    sc.min_slices = cfg.min_slices;
    sc.max_slices = cfg.max_slices;
    sc.seed = cfg.seed;

    const auto volumes = synth_generate(sc);
    std::vector<PatientEntry> entries;
    std::vector<std::string> outputs;
    for (const PatientVolume& vol : volumes) {
        const std::string rel = "volumes/" + vol.patient_id + ".dwiv";
        save_volume((paths.data_dir / rel).string(), vol);
        entries.push_back({vol.patient_id, rel, vol.patient_label, ""});
        outputs.push_back("data:" + rel);
    }
    write_manifest_csv(paths.manifest().string(), entries, cfg.provenance());
    outputs.push_back("data:manifest.csv");
    write_stage_manifest(paths, cfg, "synth", outputs);
}

void stage_split(const PipelineConfig& cfg) {
    cfg.validate();
    const Paths paths = make_paths(cfg);
    require_file(paths.manifest(), "synth");

    auto entries = read_manifest_csv(paths.manifest().string());
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (const PatientEntry& e : entries) {
        ids.push_back(e.patient_id);
        labels.push_back(e.patient_label);
    }
    const SplitManifest split = stratified_split(ids, labels, cfg.test_frac, cfg.val_frac,
                                                 cfg.seed);
    auto contains = [](const std::vector<std::string>& v, const std::string& s) {
        return std::binary_search(v.begin(), v.end(), s);
    };
    for (PatientEntry& e : entries) {
        if (contains(split.train, e.patient_id)) e.split = "train";
        else if (contains(split.validation, e.patient_id)) e.split = "validation";
        else if (contains(split.test, e.patient_id)) e.split = "test";
        else throw std::logic_error("split: patient not assigned: " + e.patient_id);
    }
    write_manifest_csv(paths.manifest().string(), entries, cfg.provenance());
    write_stage_manifest(paths, cfg, "split", {"data:manifest.csv"});
}

void stage_preprocess(const PipelineConfig& cfg) {
    cfg.validate();
    const Paths paths = make_paths(cfg);
    const auto entries = read_split_manifest(paths);
    fs::create_directories(paths.prep_volumes());

    std::vector<PatientVolume> prepped;
    prepped.reserve(entries.size());
    for (const PatientEntry& e : entries) {
        const fs::path vp = paths.data_dir / e.path;
        require_file(vp, "synth");
        PatientVolume raw = load_volume(vp.string(), e.patient_id);
        prepped.push_back(preprocess_geometry(raw, cfg.resize_to, cfg.crop_to));
    }

    std::vector<const PatientVolume*> reference;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (cfg.normalization_scope == "all" || entries[i].split == "train")
            reference.push_back(&prepped[i]);
    const NormalizationStats stats = compute_stats(reference);

    std::vector<std::string> outputs;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        normalize_volume(prepped[i], stats);
        const std::string rel = "prep/volumes/" + entries[i].patient_id + ".dwiv";
        save_volume((paths.work / rel).string(), prepped[i]);
        outputs.push_back("work:" + rel);
    }
    save_stats_csv(paths.norm_stats().string(), stats, cfg.provenance());
    outputs.push_back("work:prep/norm_stats.csv");
    write_stage_manifest(paths, cfg, "preprocess", outputs);
}

void stage_train(const PipelineConfig& cfg) {
    cfg.validate();
    const Paths paths = make_paths(cfg);
    const PrepData prep = load_prep(paths, {"train", "validation"});
    const SliceDataset train_set = dataset_for_split(prep, "train");
    const SliceDataset val_set = dataset_for_split(prep, "validation");
    if (train_set.size() == 0 || val_set.size() == 0)
        throw MissingArtifactError("train: empty train or validation split");

    const ModelSpec spec = model_spec_from(cfg);
    const TrainConfig base = train_config_from(cfg, cfg.seed);
    const EnsembleResult ens =
        ensemble_train(spec, train_set, val_set, base, cfg.n_members, cfg.parallel_members);

    fs::create_directories(paths.checkpoints());
    std::vector<std::string> outputs;
    for (int m = 1; m <= cfg.n_members; ++m) {
        const TrainResult& r = ens.members[static_cast<std::size_t>(m - 1)];
        save_checkpoint(paths.checkpoint(m).string(), spec.hash(), r.best_state);
        write_metrics_csv(paths.metrics(m).string(), r.log, cfg.provenance());
        outputs.push_back("work:checkpoints/cnn" + std::to_string(m) + ".pcnn");
        outputs.push_back("work:checkpoints/metrics_cnn" + std::to_string(m) + ".csv");
    }
    write_stage_manifest(paths, cfg, "train", outputs);
}

void stage_infer(const PipelineConfig& cfg) {
    cfg.validate();
    const Paths paths = make_paths(cfg);
    const PrepData prep = load_prep(paths, {});
    const ModelSpec spec = model_spec_from(cfg);

    std::vector<SlicePrediction> rows;
    for (int m = 1; m <= cfg.n_members; ++m) {
        require_file(paths.checkpoint(m), "train");
        Model<float> model(spec);
        load_model(paths.checkpoint(m).string(), model);
        for (std::size_t i = 0; i < prep.entries.size(); ++i) {
            const PatientEntry& e = prep.entries[i];
            std::vector<const PatientVolume*> one{&prep.volumes[i]};
            const SliceDataset ds = make_slice_dataset(one);
            Tensor batch({ds.size(), kNumChannels, prep.volumes[i].h, prep.volumes[i].w});
            const std::size_t stride = kNumChannels * prep.volumes[i].h * prep.volumes[i].w;
            for (std::size_t s = 0; s < ds.size(); ++s)
                std::copy(ds.images[s].data(), ds.images[s].data() + stride,
                          batch.data() + s * stride);
            const Tensor probs = model.forward(batch, Mode::kEval);
            for (std::size_t s = 0; s < ds.size(); ++s) {
                SlicePrediction p;
                p.patient_id = e.patient_id;
                p.slice_index = static_cast<int>(s);
                p.member = m;
                p.split = e.split;
                p.slice_label = ds.labels[s];
                p.p_nonpca = static_cast<double>(probs.at(s, 0));
                p.p_pca = static_cast<double>(probs.at(s, 1));
                rows.push_back(std::move(p));
            }
        }
    }
    fs::create_directories(paths.predictions().parent_path());
    write_predictions_csv(paths.predictions().string(), rows, cfg.provenance());
    write_stage_manifest(paths, cfg, "infer", {"work:pred/predictions.csv"});
}

void stage_features(const PipelineConfig& cfg) {
    cfg.validate();
    const Paths paths = make_paths(cfg);
    require_file(paths.predictions(), "infer");
    const auto entries = read_split_manifest(paths);
    const auto preds = read_predictions_csv(paths.predictions().string());

    std::map<std::string, int> labels;
    for (const PatientEntry& e : entries) labels[e.patient_id] = e.patient_label;

    fs::create_directories(paths.features_dir());
    std::vector<std::string> outputs;
    for (const std::string split : {"train", "validation", "test"}) {
        std::vector<std::string> order;
        for (const PatientEntry& e : entries)
            if (e.split == split) order.push_back(e.patient_id);
        std::vector<SlicePrediction> split_preds;
        for (const SlicePrediction& p : preds)
            if (p.split == split) split_preds.push_back(p);
        const auto rows = build_patient_features(split_preds, order, labels, cfg.n_members,
                                                 cfg.cutoff, cfg.top_k);
        write_features_csv(paths.features(split).string(), rows, cfg.provenance());
        outputs.push_back("work:features/features_" + std::string(split) + ".csv");
    }

    std::ofstream names(paths.feature_names_file(), std::ios::trunc);
    names << "# " << cfg.provenance() << "\n";
    const auto fn = feature_names(cfg.n_members);
    for (std::size_t i = 0; i < fn.size(); ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "f_%03zu", i);
        names << buf << "," << fn[i] << "\n";
    }
    outputs.push_back("work:features/feature_names.txt");
    write_stage_manifest(paths, cfg, "features", outputs);
}

namespace {

// rows of the configured forest-training split, in manifest order
std::vector<FeatureRow> rf_training_rows(const PipelineConfig& cfg, const Paths& paths) {
    std::vector<FeatureRow> rows;
    auto append = [&](const std::string& split) {
        require_file(paths.features(split), "features");
        auto r = read_features_csv(paths.features(split).string());
        rows.insert(rows.end(), r.begin(), r.end());
    };
    if (cfg.rf_train_split == "trainval") {
        append("train");
        append("validation");
    } else {
        append(cfg.rf_train_split);
    }
    if (rows.empty()) throw MissingArtifactError("no feature rows for forest training");
    return rows;
}

FeatureMatrix to_matrix(const std::vector<FeatureRow>& rows, std::vector<int>& labels) {
    FeatureMatrix x;
    x.n_rows = rows.size();
    x.n_cols = rows.front().features.size();
    x.values.reserve(x.n_rows * x.n_cols);
    for (const FeatureRow& r : rows) {
        if (r.features.size() != x.n_cols)
            throw std::invalid_argument("features: ragged rows");
        x.values.insert(x.values.end(), r.features.begin(), r.features.end());
        labels.push_back(r.label);
    }
    return x;
}

void write_selected_json(const fs::path& path, const PipelineConfig& cfg,
                         const std::vector<int>& indices, int n_members) {
    nlohmann::json j;
    j["config_hash"] = cfg.hash_hex();
    j["seed"] = cfg.seed;
    j["k"] = indices.size();
    j["indices"] = indices;
    const auto names = feature_names(n_members);
    std::vector<std::string> sel_names;
    for (int i : indices) sel_names.push_back(names[static_cast<std::size_t>(i)]);
    j["names"] = sel_names;
    std::ofstream os(path, std::ios::trunc);
    os << j.dump(2) << "\n";
}

std::vector<int> read_selected_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingArtifactError("missing " + path.string() + " (run `select` first)");
    nlohmann::json j;
    is >> j;
    return j.at("indices").get<std::vector<int>>();
}

// column window of one ensemble member inside the assembled feature vector
std::pair<int, int> member_window(int member) {
    const int width = 2 * kStatsPerSet;
    return {(member - 1) * width, member * width};
}

}  // namespace

void stage_select(const PipelineConfig& cfg) {
    cfg.validate();
    const Paths paths = make_paths(cfg);
    const auto rows = rf_training_rows(cfg, paths);
    std::vector<int> labels;
    const FeatureMatrix x = to_matrix(rows, labels);

    int k = std::min<int>(cfg.selector_k, static_cast<int>(x.n_cols));
    if (cfg.selector_cv) {
        std::vector<int> grid;
        for (int cand : {10, 18, 26, 34, 42})
            if (cand <= static_cast<int>(x.n_cols)) grid.push_back(cand);
        if (grid.empty()) grid.push_back(k);
        k = select_k_by_cv(x, labels, grid, cfg.cv_folds, cfg.selector_trees,
                           Rng::derive(cfg.seed, 0x5E1EC7CF));
    }
    const auto indices = select_features(x, labels, k, cfg.selector_trees,
                                         Rng::derive(cfg.seed, 0x5E1EC7));
    write_selected_json(paths.selected(), cfg, indices, cfg.n_members);
    write_stage_manifest(paths, cfg, "select", {"work:features/selected.json"});
}

void stage_train_rf(const PipelineConfig& cfg) {
    cfg.validate();
    const Paths paths = make_paths(cfg);
    const auto rows = rf_training_rows(cfg, paths);
    std::vector<int> labels;
    const FeatureMatrix x = to_matrix(rows, labels);

    const auto selected = read_selected_json(paths.selected());
    ForestConfig fc;
    fc.n_trees = cfg.rf_trees;
    fc.max_depth = cfg.rf_max_depth;
    fc.min_samples_leaf = cfg.rf_min_leaf;
    fc.seed = Rng::derive(cfg.seed, 0xF04E57);

    fs::create_directories(paths.forest_dir());
    const ForestModel model = forest_train(x, labels, selected, fc);
    save_forest(paths.forest().string(), model);

    // single-CNN baseline: selector and forest restricted to one member's
    // 18 features
    const auto [lo, hi] = member_window(cfg.baseline_member);
    FeatureMatrix xs;
    xs.n_rows = x.n_rows;
    xs.n_cols = static_cast<std::size_t>(hi - lo);
    for (std::size_t r = 0; r < x.n_rows; ++r)
        for (int c = lo; c < hi; ++c) xs.values.push_back(x.at(r, static_cast<std::size_t>(c)));
    const int k_single = std::min<int>(cfg.selector_k, static_cast<int>(xs.n_cols));
    const auto local = select_features(xs, labels, k_single, cfg.selector_trees,
                                       Rng::derive(cfg.seed, 0x5B5B));
    std::vector<int> single_selected;
    for (int c : local) single_selected.push_back(c + lo);
    write_selected_json(paths.selected_single(), cfg, single_selected, cfg.n_members);

    ForestConfig fcs = fc;
    fcs.seed = Rng::derive(cfg.seed, 0xF04E58);
    const ForestModel single = forest_train(x, labels, single_selected, fcs);
    save_forest(paths.forest_single().string(), single);

    write_stage_manifest(paths, cfg, "train-rf",
                         {"work:forest/forest.pcrf", "work:forest/forest_single.pcrf",
                          "work:features/selected_single.json"});
}

void stage_evaluate(const PipelineConfig& cfg) {
    cfg.validate();
    const Paths paths = make_paths(cfg);
    require_file(paths.predictions(), "infer");
    require_file(paths.features("test"), "features");
    require_file(paths.forest(), "train-rf");
    require_file(paths.forest_single(), "train-rf");

    fs::create_directories(paths.eval_dir());
    std::ofstream summary(paths.summary(), std::ios::trunc);
    summary << "# " << cfg.provenance() << "\n";
    summary << "name,auc,ci_lo,ci_hi,n_pos,n_neg\n";
    std::vector<std::string> outputs{"work:eval/summary.txt"};

    const auto preds = read_predictions_csv(paths.predictions().string());

    // slice level, per CNN, on the held-out test split
    for (int m = 1; m <= cfg.n_members; ++m) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (const SlicePrediction& p : preds) {
            if (p.split != "test" || p.member != m) continue;
            scores.push_back(p.p_pca);
            labels.push_back(p.slice_label);
        }
        if (scores.empty()) throw MissingArtifactError("evaluate: no test predictions");
        RocCurve curve = roc(scores, labels);
        curve.ci95 = bootstrap_ci(scores, labels, cfg.n_boot, 0.95,
                                  Rng::derive(cfg.seed, 0xE0 + static_cast<std::uint64_t>(m)));
        const std::string rel = "eval/roc_slice_cnn" + std::to_string(m) + ".csv";
        write_roc_csv((paths.work / rel).string(), curve, cfg.provenance());
        outputs.push_back("work:" + rel);
        std::size_t n_pos = 0;
        for (int l : labels) n_pos += (l == 1);
        summary << "slice_cnn" << m << "," << format_double(curve.auc) << ","
                << format_double(curve.ci95->first) << "," << format_double(curve.ci95->second)
                << "," << n_pos << "," << (labels.size() - n_pos) << "\n";
    }

    // patient level: ensemble forest and the single-CNN baseline
    const auto test_rows = read_features_csv(paths.features("test").string());
    const ForestModel forest = load_forest(paths.forest().string());
    const ForestModel forest_single = load_forest(paths.forest_single().string());

    std::vector<double> ens_scores, single_scores;
    std::vector<int> patient_labels;
    for (const FeatureRow& r : test_rows) {
        ens_scores.push_back(forest_predict_proba(forest, r.features));
        single_scores.push_back(forest_predict_proba(forest_single, r.features));
        patient_labels.push_back(r.label);
    }

    auto emit_patient_curve = [&](const std::string& name, const std::vector<double>& scores,
                                  std::uint64_t boot_stream, const std::string& rel) {
        RocCurve curve = roc(scores, patient_labels);
        curve.ci95 = bootstrap_ci(scores, patient_labels, cfg.n_boot, 0.95,
                                  Rng::derive(cfg.seed, boot_stream));
        write_roc_csv((paths.work / rel).string(), curve, cfg.provenance());
        outputs.push_back("work:" + rel);
        std::size_t n_pos = 0;
        for (int l : patient_labels) n_pos += (l == 1);
        summary << name << "," << format_double(curve.auc) << ","
                << format_double(curve.ci95->first) << "," << format_double(curve.ci95->second)
                << "," << n_pos << "," << (patient_labels.size() - n_pos) << "\n";
        return curve.auc;
    };

    emit_patient_curve("patient_ensemble", ens_scores, 0xEA, "eval/roc_patient.csv");
    emit_patient_curve("patient_single", single_scores, 0xEB, "eval/roc_patient_single.csv");

    const double p = paired_auc_test(ens_scores, single_scores, patient_labels, cfg.n_boot,
                                     Rng::derive(cfg.seed, 0xAB));
    summary << "paired_p_ensemble_vs_single," << format_double(p) << "\n";

    const ConfusionRates rates = ppv_npv(ens_scores, patient_labels, cfg.ppv_threshold);
    auto emit_rate = [&](const char* name, const std::optional<double>& v) {
        summary << name << "," << (v ? format_double(*v) : "na") << "\n";
    };
    emit_rate("patient_ppv", rates.ppv);
    emit_rate("patient_npv", rates.npv);
    emit_rate("patient_sensitivity", rates.sensitivity);
    emit_rate("patient_specificity", rates.specificity);

    write_stage_manifest(paths, cfg, "evaluate", outputs);
}

void stage_plot(const PipelineConfig& cfg) {
    cfg.validate();
    const Paths paths = make_paths(cfg);
    std::vector<std::string> outputs;
    std::vector<std::pair<std::string, std::string>> curves;
    for (int m = 1; m <= cfg.n_members; ++m)
        curves.emplace_back("roc_slice_cnn" + std::to_string(m),
                            "slice-level ROC, CNN " + std::to_string(m));
    curves.emplace_back("roc_patient", "patient-level ROC, stacked ensemble");
    curves.emplace_back("roc_patient_single", "patient-level ROC, single CNN");

    for (const auto& [stem, title] : curves) {
        const fs::path csv = paths.eval_dir() / (stem + ".csv");
        require_file(csv, "evaluate");
        const RocCurve curve = read_roc_csv(csv.string());
        const fs::path svg = paths.eval_dir() / (stem + ".svg");
        write_roc_svg(svg.string(), curve, title, cfg.provenance());
        outputs.push_back("work:eval/" + stem + ".svg");
    }
    write_stage_manifest(paths, cfg, "plot", outputs);
}

void run_all(const PipelineConfig& cfg) {
    stage_synth(cfg);
    stage_split(cfg);
    stage_preprocess(cfg);
    stage_train(cfg);
    stage_infer(cfg);
    stage_features(cfg);
    stage_select(cfg);
    stage_train_rf(cfg);
    stage_evaluate(cfg);
    stage_plot(cfg);
}

}  // namespace dwic
