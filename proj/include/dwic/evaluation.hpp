#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dwic {

struct RocCurve {
    std::vector<double> thresholds;  // +inf first, descending
    std::vector<double> fpr;
    std::vector<double> tpr;
    double auc = 0.0;
    std::optional<std::pair<double, double>> ci95;
};

// threshold sweep over unique scores (ties grouped), trapezoid AUC
RocCurve roc(const std::vector<double>& scores, const std::vector<int>& labels);

// (#concordant + 0.5 #ties) / (n_pos * n_neg); independent cross-check of
// the trapezoid AUC
double auc_mann_whitney(const std::vector<double>& scores, const std::vector<int>& labels);

// percentile interval over stratified bootstrap resamples
std::pair<double, double> bootstrap_ci(const std::vector<double>& scores,
                                       const std::vector<int>& labels, int n_boot = 2000,
                                       double level = 0.95, std::uint64_t seed = 0);

// two-tailed paired bootstrap test for a difference in AUC
double paired_auc_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                       const std::vector<int>& labels, int n_resamples = 2000,
                       std::uint64_t seed = 0);

struct ConfusionRates {
    std::optional<double> ppv, npv, sensitivity, specificity;
};

// predictions are positive where score >= threshold; ratios with a zero
// denominator come back absent rather than zero
ConfusionRates ppv_npv(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold);

void write_roc_csv(const std::string& path, const RocCurve& curve, const std::string& provenance);
RocCurve read_roc_csv(const std::string& path);

// self-contained SVG; polyline vertices map 1:1 onto the curve points
void write_roc_svg(const std::string& path, const RocCurve& curve, const std::string& title,
                   const std::string& provenance);

}  // namespace dwic
