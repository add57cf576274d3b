#include "dwic/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace dwic {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw ConfigError("config: bad numeric value for " + key + ": '" + v + "'");
    }
}

long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw ConfigError("config: bad integer value for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config: bad boolean value for " + key + ": '" + v + "'");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void apply_override(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "data_dir") cfg.data_dir = value;
    else if (key == "work_dir") cfg.work_dir = value;
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "n_patients") cfg.n_patients = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "lesion_contrast") cfg.lesion_contrast = parse_double(key, value);
    else if (key == "pos_fraction") cfg.pos_fraction = parse_double(key, value);
    else if (key == "image_size") cfg.image_size = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "min_slices") cfg.min_slices = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "max_slices") cfg.max_slices = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "test_frac") cfg.test_frac = parse_double(key, value);
    else if (key == "val_frac") cfg.val_frac = parse_double(key, value);
    else if (key == "resize_to") cfg.resize_to = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "crop_to") cfg.crop_to = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "normalization_scope") cfg.normalization_scope = value;
    else if (key == "model") cfg.model = value;
    else if (key == "dropout") cfg.dropout = parse_double(key, value);
    else if (key == "fc_hidden") cfg.fc_hidden = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "lr0") cfg.lr0 = parse_double(key, value);
    else if (key == "momentum") cfg.momentum = parse_double(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "patience") cfg.patience = static_cast<int>(parse_int(key, value));
    else if (key == "min_delta") cfg.min_delta = parse_double(key, value);
    else if (key == "lr_factor") cfg.lr_factor = parse_double(key, value);
    else if (key == "cooldown") cfg.cooldown = static_cast<int>(parse_int(key, value));
    else if (key == "max_epochs") cfg.max_epochs = static_cast<int>(parse_int(key, value));
    else if (key == "min_lr") cfg.min_lr = parse_double(key, value);
    else if (key == "pos_class_weight") cfg.pos_class_weight = parse_double(key, value);
    else if (key == "n_members") cfg.n_members = static_cast<int>(parse_int(key, value));
    else if (key == "parallel_members")
        cfg.parallel_members = static_cast<int>(parse_int(key, value));
    else if (key == "cutoff") cfg.cutoff = parse_double(key, value);
    else if (key == "top_k") cfg.top_k = static_cast<int>(parse_int(key, value));
    else if (key == "selector_k") cfg.selector_k = static_cast<int>(parse_int(key, value));
    else if (key == "selector_trees")
        cfg.selector_trees = static_cast<int>(parse_int(key, value));
    else if (key == "selector_cv") cfg.selector_cv = parse_bool(key, value);
    else if (key == "cv_folds") cfg.cv_folds = static_cast<int>(parse_int(key, value));
    else if (key == "rf_trees") cfg.rf_trees = static_cast<int>(parse_int(key, value));
    else if (key == "rf_max_depth") cfg.rf_max_depth = static_cast<int>(parse_int(key, value));
    else if (key == "rf_min_leaf") cfg.rf_min_leaf = static_cast<int>(parse_int(key, value));
    else if (key == "rf_train_split") cfg.rf_train_split = value;
    else if (key == "baseline_member")
        cfg.baseline_member = static_cast<int>(parse_int(key, value));
    else if (key == "n_boot") cfg.n_boot = static_cast<int>(parse_int(key, value));
    else if (key == "ppv_threshold") cfg.ppv_threshold = parse_double(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
}

PipelineConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    PipelineConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: missing '=' at " + path + ":" + std::to_string(line_no));
        apply_override(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

void PipelineConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("config: " + what);
    };
    require(n_patients >= 2, "n_patients must be >= 2");
    require(lesion_contrast >= 0.0, "lesion_contrast must be >= 0");
    require(pos_fraction > 0.0 && pos_fraction < 1.0, "pos_fraction must be in (0,1)");
    require(image_size >= crop_to, "image_size must be >= crop_to");
    require(min_slices >= 1 && max_slices >= min_slices, "bad slice-count range");
    require(test_frac > 0.0 && test_frac < 1.0, "test_frac must be in (0,1)");
    require(val_frac >= 0.0 && val_frac < 1.0, "val_frac must be in [0,1)");
    require(resize_to >= crop_to, "resize_to must be >= crop_to");
    require(normalization_scope == "train" || normalization_scope == "all",
            "normalization_scope must be train or all");
    require(model == "table3" || model == "toy", "model must be table3 or toy");
    require(dropout < 1.0, "dropout must be < 1");
    require(lr0 > 0.0, "lr0 must be > 0");
    require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0,1)");
    require(weight_decay >= 0.0, "weight_decay must be >= 0");
    require(batch_size >= 2, "batch_size must be >= 2");
    require(patience >= 1, "patience must be >= 1");
    require(lr_factor > 0.0 && lr_factor < 1.0, "lr_factor must be in (0,1)");
    require(max_epochs >= 0, "max_epochs must be >= 0");
    require(pos_class_weight > 0.0, "pos_class_weight must be > 0");
    require(n_members >= 1, "n_members must be >= 1");
    require(parallel_members >= 1, "parallel_members must be >= 1");
    require(cutoff >= 0.0 && cutoff < 1.0, "cutoff must be in [0,1)");
    require(top_k >= 1, "top_k must be >= 1");
    require(selector_k >= 1, "selector_k must be >= 1");
    require(selector_trees >= 1, "selector_trees must be >= 1");
    require(cv_folds >= 2, "cv_folds must be >= 2");
    require(rf_trees >= 1, "rf_trees must be >= 1");
    require(rf_min_leaf >= 1, "rf_min_leaf must be >= 1");
    require(rf_train_split == "validation" || rf_train_split == "train" ||
                rf_train_split == "trainval",
            "rf_train_split must be validation, train, or trainval");
    require(baseline_member >= 1 && baseline_member <= n_members,
            "baseline_member out of range");
    require(n_boot >= 2, "n_boot must be >= 2");
}

std::vector<std::pair<std::string, std::string>> PipelineConfig::key_values() const {
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("seed", std::to_string(seed));
    kv.emplace_back("n_patients", std::to_string(n_patients));
    kv.emplace_back("lesion_contrast", fmt(lesion_contrast));
    kv.emplace_back("pos_fraction", fmt(pos_fraction));
    kv.emplace_back("image_size", std::to_string(image_size));
    kv.emplace_back("min_slices", std::to_string(min_slices));
    kv.emplace_back("max_slices", std::to_string(max_slices));
    kv.emplace_back("test_frac", fmt(test_frac));
    kv.emplace_back("val_frac", fmt(val_frac));
    kv.emplace_back("resize_to", std::to_string(resize_to));
    kv.emplace_back("crop_to", std::to_string(crop_to));
    kv.emplace_back("normalization_scope", normalization_scope);
    kv.emplace_back("model", model);
    kv.emplace_back("dropout", fmt(dropout));
    kv.emplace_back("fc_hidden", std::to_string(fc_hidden));
    kv.emplace_back("lr0", fmt(lr0));
    kv.emplace_back("momentum", fmt(momentum));
    kv.emplace_back("weight_decay", fmt(weight_decay));
    kv.emplace_back("batch_size", std::to_string(batch_size));
    kv.emplace_back("patience", std::to_string(patience));
    kv.emplace_back("min_delta", fmt(min_delta));
    kv.emplace_back("lr_factor", fmt(lr_factor));
    kv.emplace_back("cooldown", std::to_string(cooldown));
    kv.emplace_back("max_epochs", std::to_string(max_epochs));
    kv.emplace_back("min_lr", fmt(min_lr));
    kv.emplace_back("pos_class_weight", fmt(pos_class_weight));
    kv.emplace_back("n_members", std::to_string(n_members));
    kv.emplace_back("cutoff", fmt(cutoff));
    kv.emplace_back("top_k", std::to_string(top_k));
    kv.emplace_back("selector_k", std::to_string(selector_k));
    kv.emplace_back("selector_trees", std::to_string(selector_trees));
    kv.emplace_back("selector_cv", selector_cv ? "1" : "0");
    kv.emplace_back("cv_folds", std::to_string(cv_folds));
    kv.emplace_back("rf_trees", std::to_string(rf_trees));
    kv.emplace_back("rf_max_depth", std::to_string(rf_max_depth));
    kv.emplace_back("rf_min_leaf", std::to_string(rf_min_leaf));
    kv.emplace_back("rf_train_split", rf_train_split);
    kv.emplace_back("baseline_member", std::to_string(baseline_member));
    kv.emplace_back("n_boot", std::to_string(n_boot));
    kv.emplace_back("ppv_threshold", fmt(ppv_threshold));
    return kv;
}

std::uint64_t PipelineConfig::hash() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& [k, v] : key_values()) {
        for (unsigned char ch : k) {
            h ^= ch;
            h *= 0x100000001B3ULL;
        }
        h ^= '=';
        h *= 0x100000001B3ULL;
        for (unsigned char ch : v) {
            h ^= ch;
            h *= 0x100000001B3ULL;
        }
        h ^= '\n';
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string PipelineConfig::hash_hex() const {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
}

std::string PipelineConfig::provenance() const {
    return "config_hash=" + hash_hex() + " seed=" + std::to_string(seed);
}

void write_config_file(const std::string& path, const PipelineConfig& cfg) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ConfigError("config: cannot write " + path);
    os << "# effective configuration (hash " << cfg.hash_hex() << ")\n";
    if (!cfg.work_dir.empty()) os << "work_dir = " << cfg.work_dir << "\n";
    if (!cfg.data_dir.empty()) os << "data_dir = " << cfg.data_dir << "\n";
    for (const auto& [k, v] : cfg.key_values()) os << k << " = " << v << "\n";
}

}  // namespace dwic
