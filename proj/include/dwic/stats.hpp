#pragma once

#include <array>
#include <string>
#include <vector>

namespace dwic {

inline constexpr double kDefaultProbCutoff = 0.74;
inline constexpr int kDefaultTopK = 5;
inline constexpr int kStatsPerSet = 9;

enum class PcaClass { kPca, kNonPca };

// per-patient, per-CNN, per-class probability set after filtering: values
// strictly above the cutoff, sorted descending, truncated to top_k
struct ProbabilitySet {
    std::vector<double> values;
};

// Strict inequality at the cutoff; ties beyond top_k resolved by original
// slice order (stable sort).
ProbabilitySet filter_probabilities(const std::vector<double>& slice_probs, double cutoff,
                                    int top_k);

// mean, std, variance, median, sum, extremum (max for the PCa set, min for
// the non-PCa set), skewness, excess kurtosis, range. Population moments;
// degenerate cases (empty set; fewer than 2 values for spread; zero second
// moment for skew/kurtosis) yield the sentinel 0.
std::array<double, kStatsPerSet> extract_stats(const ProbabilitySet& ps, PcaClass cls);

const std::array<std::string, kStatsPerSet>& stat_names(PcaClass cls);

// (cnn, class, stat) lexicographic order; 18 features per member
std::vector<std::string> feature_names(int n_members);

struct PatientSets {
    // sets[member][0] = PCa class, sets[member][1] = non-PCa class
    std::vector<std::array<ProbabilitySet, 2>> sets;
};

std::vector<double> assemble_features(const PatientSets& ps);

struct FeatureRow {
    std::string patient_id;
    int label = 0;
    std::vector<double> features;
};

void write_features_csv(const std::string& path, const std::vector<FeatureRow>& rows,
                        const std::string& provenance);
std::vector<FeatureRow> read_features_csv(const std::string& path);

}  // namespace dwic
