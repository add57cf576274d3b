#include "dwic/forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dwic/rng.hpp"

namespace dwic {

namespace {

double gini(std::size_t c0, std::size_t c1) {
    const double n = static_cast<double>(c0 + c1);
    if (n == 0.0) return 0.0;
    const double p0 = static_cast<double>(c0) / n;
    const double p1 = static_cast<double>(c1) / n;
    return 1.0 - p0 * p0 - p1 * p1;
}

struct TreeBuilder {
    const FeatureMatrix& x;
    const std::vector<int>& labels;
    const std::vector<int>& selected;
    const ForestConfig& cfg;
    Rng& rng;
    Tree tree;
    std::vector<double> importance;  // per selected position
    std::size_t n_bootstrap = 0;

    TreeBuilder(const FeatureMatrix& x_, const std::vector<int>& labels_,
                const std::vector<int>& selected_, const ForestConfig& cfg_, Rng& rng_)
        : x(x_), labels(labels_), selected(selected_), cfg(cfg_), rng(rng_) {
        importance.assign(selected.size(), 0.0);
    }

    int build(std::vector<std::size_t>& rows, int depth) {
        std::size_t c0 = 0, c1 = 0;
        for (std::size_t r : rows) (labels[r] == 1 ? c1 : c0)++;

        const int node_index = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes[node_index].counts[0] = static_cast<std::uint32_t>(c0);
        tree.nodes[node_index].counts[1] = static_cast<std::uint32_t>(c1);

        const bool depth_capped = cfg.max_depth >= 0 && depth >= cfg.max_depth;
        if (c0 == 0 || c1 == 0 || depth_capped ||
            rows.size() < 2 * static_cast<std::size_t>(cfg.min_samples_leaf) || rows.size() < 2)
            return node_index;

        // per-node random feature subset of size ceil(sqrt(p))
        const std::size_t p = selected.size();
        const std::size_t mtry = static_cast<std::size_t>(
            std::ceil(std::sqrt(static_cast<double>(p))));
        std::vector<std::size_t> feats(p);
        std::iota(feats.begin(), feats.end(), std::size_t(0));
        for (std::size_t i = 0; i < mtry; ++i) {
            const std::size_t j = i + rng.uniform_index(p - i);
            std::swap(feats[i], feats[j]);
        }

        const double parent_gini = gini(c0, c1);
        double best_gain = 1e-12;
        std::size_t best_feat = 0;
        double best_thr = 0.0;
        bool found = false;

        std::vector<std::pair<double, int>> vals;
        vals.reserve(rows.size());
        for (std::size_t fi = 0; fi < mtry; ++fi) {
            const std::size_t pos = feats[fi];
            const int col = selected[pos];
            vals.clear();
            for (std::size_t r : rows) vals.emplace_back(x.at(r, col), labels[r]);
            std::sort(vals.begin(), vals.end());

            std::size_t l0 = 0, l1 = 0;
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                (vals[i].second == 1 ? l1 : l0)++;
                if (vals[i].first == vals[i + 1].first) continue;
                const std::size_t nl = i + 1, nr = vals.size() - nl;
                if (nl < static_cast<std::size_t>(cfg.min_samples_leaf) ||
                    nr < static_cast<std::size_t>(cfg.min_samples_leaf))
                    continue;
                const double child =
                    (static_cast<double>(nl) * gini(l0, l1) +
                     static_cast<double>(nr) * gini(c0 - l0, c1 - l1)) /
                    static_cast<double>(vals.size());
                const double gain = parent_gini - child;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feat = pos;
                    best_thr = 0.5 * (vals[i].first + vals[i + 1].first);
                    found = true;
                }
            }
        }
        if (!found) return node_index;

        importance[best_feat] += best_gain * static_cast<double>(rows.size()) /
                                 static_cast<double>(n_bootstrap);

        std::vector<std::size_t> left_rows, right_rows;
        for (std::size_t r : rows) {
            if (x.at(r, selected[best_feat]) < best_thr)
                left_rows.push_back(r);
            else
                right_rows.push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();

        tree.nodes[node_index].feature = static_cast<int>(best_feat);
        tree.nodes[node_index].threshold = best_thr;
        const int left = build(left_rows, depth + 1);
        tree.nodes[node_index].left = left;
        const int right = build(right_rows, depth + 1);
        tree.nodes[node_index].right = right;
        return node_index;
    }
};

void check_training_input(const FeatureMatrix& x, const std::vector<int>& labels,
                          const std::vector<int>& selected) {
    if (x.n_rows == 0 || x.n_rows != labels.size())
        throw std::invalid_argument("forest: row/label count mismatch");
    if (selected.empty()) throw std::invalid_argument("forest: no features selected");
    for (int c : selected)
        if (c < 0 || static_cast<std::size_t>(c) >= x.n_cols)
            throw std::invalid_argument("forest: selected feature out of range");
    bool has0 = false, has1 = false;
    for (int l : labels) {
        if (l != 0 && l != 1) throw std::invalid_argument("forest: labels must be 0/1");
        (l == 1 ? has1 : has0) = true;
    }
    if (!has0 || !has1) throw std::invalid_argument("forest: single-class input");
}

}  // namespace

ForestModel forest_train(const FeatureMatrix& x, const std::vector<int>& labels,
                         const std::vector<int>& selected_features, const ForestConfig& cfg) {
    check_training_input(x, labels, selected_features);
    if (cfg.n_trees < 1) throw std::invalid_argument("forest: need at least one tree");

    ForestModel model;
    model.selected = selected_features;
    model.cfg = cfg;
    model.importances.assign(selected_features.size(), 0.0);

    const std::size_t n = x.n_rows;
    for (int t = 0; t < cfg.n_trees; ++t) {
        Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(t)));
        std::vector<std::size_t> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = rng.uniform_index(n);
        std::sort(rows.begin(), rows.end());

        TreeBuilder builder(x, labels, selected_features, cfg, rng);
        builder.n_bootstrap = n;
        builder.build(rows, 0);
        model.trees.push_back(std::move(builder.tree));

        double total = 0.0;
        for (double v : builder.importance) total += v;
        if (total > 0.0)
            for (std::size_t f = 0; f < builder.importance.size(); ++f)
                model.importances[f] += builder.importance[f] / total;
    }
    for (double& v : model.importances) v /= static_cast<double>(cfg.n_trees);
    return model;
}

double forest_predict_proba(const ForestModel& model, const std::vector<double>& features) {
    if (model.trees.empty()) throw std::invalid_argument("forest: empty model");
    for (int c : model.selected)
        if (static_cast<std::size_t>(c) >= features.size())
            throw std::invalid_argument("forest: feature vector does not cover model inputs");

    std::size_t votes = 0;
    for (const Tree& tree : model.trees) {
        int i = 0;
        while (tree.nodes[i].feature >= 0) {
            const int col = model.selected[static_cast<std::size_t>(tree.nodes[i].feature)];
            i = (features[static_cast<std::size_t>(col)] < tree.nodes[i].threshold)
                    ? tree.nodes[i].left
                    : tree.nodes[i].right;
        }
        if (tree.nodes[i].counts[1] > tree.nodes[i].counts[0]) ++votes;
    }
    return static_cast<double>(votes) / static_cast<double>(model.trees.size());
}

std::vector<int> select_features(const FeatureMatrix& x, const std::vector<int>& labels, int k,
                                 int n_trees, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("select: k must be positive");
    std::vector<int> all(x.n_cols);
    std::iota(all.begin(), all.end(), 0);

    ForestConfig cfg;
    cfg.n_trees = n_trees;
    cfg.seed = seed;
    const ForestModel ranking = forest_train(x, labels, all, cfg);

    std::vector<int> order(x.n_cols);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return ranking.importances[static_cast<std::size_t>(a)] >
               ranking.importances[static_cast<std::size_t>(b)];
    });
    order.resize(std::min<std::size_t>(static_cast<std::size_t>(k), order.size()));
    return order;
}

int select_k_by_cv(const FeatureMatrix& x, const std::vector<int>& labels,
                   const std::vector<int>& k_grid, int cv_folds, int n_trees,
                   std::uint64_t seed) {
    if (k_grid.empty()) throw std::invalid_argument("select cv: empty grid");
    if (cv_folds < 2) throw std::invalid_argument("select cv: need at least 2 folds");

    // stratified fold assignment: per class, shuffled round robin
    std::vector<int> fold_of(x.n_rows, 0);
    Rng rng(Rng::derive(seed, 0xF01D));
    for (int cls = 0; cls < 2; ++cls) {
        std::vector<std::size_t> rows;
        for (std::size_t r = 0; r < x.n_rows; ++r)
            if (labels[r] == cls) rows.push_back(r);
        if (rows.size() < static_cast<std::size_t>(cv_folds))
            throw std::invalid_argument("select cv: fewer samples than folds in a class");
        rng.shuffle(rows);
        for (std::size_t i = 0; i < rows.size(); ++i)
            fold_of[rows[i]] = static_cast<int>(i % static_cast<std::size_t>(cv_folds));
    }

    double best_acc = -1.0;
    int best_k = k_grid.front();
    for (int k : k_grid) {
        double correct = 0.0, total = 0.0;
        for (int fold = 0; fold < cv_folds; ++fold) {
            FeatureMatrix train_x;
            std::vector<int> train_y;
            std::vector<std::size_t> test_rows;
            train_x.n_cols = x.n_cols;
            for (std::size_t r = 0; r < x.n_rows; ++r) {
                if (fold_of[r] == fold) {
                    test_rows.push_back(r);
                } else {
                    for (std::size_t c = 0; c < x.n_cols; ++c)
                        train_x.values.push_back(x.at(r, c));
                    train_y.push_back(labels[r]);
                    ++train_x.n_rows;
                }
            }
            const std::uint64_t fold_seed = Rng::derive(seed, 100 + static_cast<std::uint64_t>(fold));
            const std::vector<int> sel = select_features(train_x, train_y, k, n_trees, fold_seed);
            ForestConfig cfg;
            cfg.n_trees = n_trees;
            cfg.seed = Rng::derive(seed, 200 + static_cast<std::uint64_t>(fold));
            const ForestModel model = forest_train(train_x, train_y, sel, cfg);
            for (std::size_t r : test_rows) {
                std::vector<double> row(x.n_cols);
                for (std::size_t c = 0; c < x.n_cols; ++c) row[c] = x.at(r, c);
                const double proba = forest_predict_proba(model, row);
                const int pred = proba >= 0.5 ? 1 : 0;
                correct += (pred == labels[r]) ? 1.0 : 0.0;
                total += 1.0;
            }
        }
        const double acc = correct / total;
        if (acc > best_acc) {
            best_acc = acc;
            best_k = k;
        }
    }
    return best_k;
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_i32(std::ostream& os, std::int32_t v) { write_u32(os, static_cast<std::uint32_t>(v)); }

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("forest file: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::int32_t read_i32(std::istream& is) { return static_cast<std::int32_t>(read_u32(is)); }

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("forest file: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& is) {
    const std::uint64_t bits = read_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_forest(const std::string& path, const ForestModel& model) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("forest file: cannot open for writing: " + path);
    os.write("PCRF", 4);
    write_u32(os, kForestVersion);
    write_i32(os, model.cfg.n_trees);
    write_i32(os, model.cfg.max_depth);
    write_i32(os, model.cfg.min_samples_leaf);
    write_u64(os, model.cfg.seed);
    write_u32(os, static_cast<std::uint32_t>(model.selected.size()));
    for (int c : model.selected) write_i32(os, c);
    for (double v : model.importances) write_f64(os, v);
    write_u32(os, static_cast<std::uint32_t>(model.trees.size()));
    for (const Tree& t : model.trees) {
        write_u32(os, static_cast<std::uint32_t>(t.nodes.size()));
        for (const TreeNode& n : t.nodes) {
            write_i32(os, n.feature);
            write_f64(os, n.threshold);
            write_i32(os, n.left);
            write_i32(os, n.right);
            write_u32(os, n.counts[0]);
            write_u32(os, n.counts[1]);
        }
    }
    if (!os) throw std::runtime_error("forest file: write failed: " + path);
}

ForestModel load_forest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("forest file: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PCRF", 4) != 0)
        throw std::runtime_error("forest file: bad magic in " + path);
    if (read_u32(is) != kForestVersion)
        throw std::runtime_error("forest file: unsupported version in " + path);

    ForestModel model;
    model.cfg.n_trees = read_i32(is);
    model.cfg.max_depth = read_i32(is);
    model.cfg.min_samples_leaf = read_i32(is);
    model.cfg.seed = read_u64(is);
    const std::uint32_t n_sel = read_u32(is);
    model.selected.resize(n_sel);
    for (int& c : model.selected) c = read_i32(is);
    model.importances.resize(n_sel);
    for (double& v : model.importances) v = read_f64(is);
    const std::uint32_t n_trees = read_u32(is);
    model.trees.resize(n_trees);
    for (Tree& t : model.trees) {
        const std::uint32_t n_nodes = read_u32(is);
        t.nodes.resize(n_nodes);
        for (TreeNode& n : t.nodes) {
            n.feature = read_i32(is);
            n.threshold = read_f64(is);
            n.left = read_i32(is);
            n.right = read_i32(is);
            n.counts[0] = read_u32(is);
            n.counts[1] = read_u32(is);
        }
    }
    if (!is) throw std::runtime_error("forest file: truncated: " + path);
    return model;
}

}  // namespace dwic
