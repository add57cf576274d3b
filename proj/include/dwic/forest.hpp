#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dwic {

// row-major sample matrix
struct FeatureMatrix {
    std::size_t n_rows = 0, n_cols = 0;
    std::vector<double> values;

    double at(std::size_t r, std::size_t c) const { return values[r * n_cols + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * n_cols + c]; }
};

struct ForestConfig {
    int n_trees = 200;
    int max_depth = -1;        // -1 = unlimited, 0 = a single leaf
    int min_samples_leaf = 1;
    std::uint64_t seed = 0;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    std::uint32_t counts[2] = {0, 0};  // class counts of the training subset
};

struct Tree {
    std::vector<TreeNode> nodes;  // node 0 is the root
};

struct ForestModel {
    std::vector<Tree> trees;
    std::vector<int> selected;  // indices into the full feature vector
    ForestConfig cfg;
    std::vector<double> importances;  // per selected feature, mean over trees
};

// Breiman-style forest: bootstrap per tree, Gini splits at midpoints
// between distinct values, ceil(sqrt(p)) features examined per node.
ForestModel forest_train(const FeatureMatrix& x, const std::vector<int>& labels,
                         const std::vector<int>& selected_features, const ForestConfig& cfg);

// fraction of trees whose leaf majority votes class 1 (ties vote class 0)
double forest_predict_proba(const ForestModel& model, const std::vector<double>& features);

// rank all features by mean Gini importance from a bagged ensemble and
// return the top k (constant features carry zero importance and rank last)
std::vector<int> select_features(const FeatureMatrix& x, const std::vector<int>& labels, int k,
                                 int n_trees, std::uint64_t seed);

// stratified k-fold CV over a grid of k values; returns the k with the best
// mean out-of-fold accuracy (ties -> smaller k)
int select_k_by_cv(const FeatureMatrix& x, const std::vector<int>& labels,
                   const std::vector<int>& k_grid, int cv_folds, int n_trees,
                   std::uint64_t seed);

// Forest file: magic "PCRF", u32 version, forest config, selected feature
// list, then flattened node arrays per tree.
inline constexpr std::uint32_t kForestVersion = 1;
void save_forest(const std::string& path, const ForestModel& model);
ForestModel load_forest(const std::string& path);

}  // namespace dwic
