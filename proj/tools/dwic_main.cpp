#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dwic/config.hpp"
#include "dwic/pipeline.hpp"

namespace {

// exit codes: 0 ok, 2 config/usage, 3 missing artifact, 4 bad data or
// artifact format, 5 training failure (see docs/cli.md)
constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitFormat = 4;
constexpr int kExitTraining = 5;

struct CommonOptions {
    std::string config_file;
    std::string work_dir;
    std::string data_dir;
    std::vector<std::string> overrides;
    bool seed_given = false;
    std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
    cmd->add_option("--config,-c", opt.config_file, "key=value configuration file");
    cmd->add_option("--workdir,-w", opt.work_dir,
                    "working directory (default: $DWIC_WORKDIR or ./work)");
    cmd->add_option("--data-dir", opt.data_dir, "raw volume directory (default: <workdir>/data)");
    cmd->add_option("--set", opt.overrides, "override a config key, e.g. --set n_members=3")
        ->take_all();
    cmd->add_option_function<std::uint64_t>(
           "--seed",
           [&opt](const std::uint64_t& v) {
               opt.seed = v;
               opt.seed_given = true;
           },
           "master seed");
    cmd->add_option_function<int>(
           "--parallel-members",
           [&opt](const int& v) { opt.overrides.push_back("parallel_members=" + std::to_string(v)); },
           "train ensemble members concurrently");
}

dwic::PipelineConfig build_config(const CommonOptions& opt) {
    dwic::PipelineConfig cfg;
    if (!opt.config_file.empty()) cfg = dwic::load_config_file(opt.config_file);

    for (const std::string& kv : opt.overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw dwic::ConfigError("--set expects key=value, got '" + kv + "'");
        dwic::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }

    if (!opt.work_dir.empty()) {
        cfg.work_dir = opt.work_dir;
    } else if (cfg.work_dir == "work") {
        if (const char* env = std::getenv("DWIC_WORKDIR")) cfg.work_dir = env;
    }
    if (!opt.data_dir.empty()) cfg.data_dir = opt.data_dir;
    if (opt.seed_given) cfg.seed = opt.seed;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-level DWI prostate cancer classification pipeline"};
    app.require_subcommand(1);

    struct StageDef {
        const char* name;
        const char* help;
        void (*fn)(const dwic::PipelineConfig&);
    };
    const std::vector<StageDef> stages = {
        {"synth", "generate a synthetic DWI phantom dataset", dwic::stage_synth},
        {"split", "stratified patient-level train/validation/test split", dwic::stage_split},
        {"preprocess", "resize, center-crop and normalize volumes", dwic::stage_preprocess},
        {"train", "train the ensemble of slice classifiers", dwic::stage_train},
        {"infer", "run the trained CNNs over every slice", dwic::stage_infer},
        {"features", "extract per-patient first-order statistical features",
         dwic::stage_features},
        {"select", "rank features by Gini importance and keep the best k",
         dwic::stage_select},
        {"train-rf", "train the patient-level random forest", dwic::stage_train_rf},
        {"evaluate", "ROC curves, AUCs, confidence intervals, paired test",
         dwic::stage_evaluate},
        {"plot", "render ROC CSVs as SVG plots", dwic::stage_plot},
        {"run-all", "run every stage in order", dwic::run_all},
    };

    std::map<const CLI::App*, std::pair<CommonOptions*, const StageDef*>> dispatch;
    std::vector<std::unique_ptr<CommonOptions>> option_storage;
    for (const StageDef& st : stages) {
        CLI::App* cmd = app.add_subcommand(st.name, st.help);
        option_storage.push_back(std::make_unique<CommonOptions>());
        add_common(cmd, *option_storage.back());
        dispatch[cmd] = {option_storage.back().get(), &st};
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitConfig;
    }

    for (auto& [cmd, entry] : dispatch) {
        if (!cmd->parsed()) continue;
        try {
            const dwic::PipelineConfig cfg = build_config(*entry.first);
            entry.second->fn(cfg);
            std::printf("%s: done (config %s)\n", entry.second->name, cfg.hash_hex().c_str());
            return 0;
        } catch (const dwic::ConfigError& e) {
            std::fprintf(stderr, "config error: %s\n", e.what());
            return kExitConfig;
        } catch (const dwic::MissingArtifactError& e) {
            std::fprintf(stderr, "missing artifact: %s\n", e.what());
            return kExitMissing;
        } catch (const dwic::TrainingFailure& e) {
            std::fprintf(stderr, "training failure: %s\n", e.what());
            return kExitTraining;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return kExitFormat;
        }
    }
    return kExitConfig;
}
