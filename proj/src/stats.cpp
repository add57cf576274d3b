#include "dwic/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dwic {

ProbabilitySet filter_probabilities(const std::vector<double>& slice_probs, double cutoff,
                                    int top_k) {
    if (top_k < 0) throw std::invalid_argument("filter: negative top_k");
    ProbabilitySet ps;
    for (double p : slice_probs) {
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("filter: probability outside [0,1]");
        if (p > cutoff) ps.values.push_back(p);
    }
    std::stable_sort(ps.values.begin(), ps.values.end(), std::greater<double>());
    if (ps.values.size() > static_cast<std::size_t>(top_k))
        ps.values.resize(static_cast<std::size_t>(top_k));
    return ps;
}

std::array<double, kStatsPerSet> extract_stats(const ProbabilitySet& ps, PcaClass cls) {
    std::array<double, kStatsPerSet> out{};
    const std::vector<double>& v = ps.values;
    const std::size_t n = v.size();
    if (n == 0) return out;  // sentinel zeros

    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(n);

    // values arrive sorted descending
    const double vmax = v.front();
    const double vmin = v.back();

    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    if (vmax != vmin) {  // constant sets have exactly zero central moments
        for (double x : v) {
            const double d = x - mean;
            m2 += d * d;
            m3 += d * d * d;
            m4 += d * d * d * d;
        }
        m2 /= static_cast<double>(n);
        m3 /= static_cast<double>(n);
        m4 /= static_cast<double>(n);
    }
    const double median = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);

    out[0] = mean;
    out[1] = (n >= 2) ? std::sqrt(m2) : 0.0;
    out[2] = (n >= 2) ? m2 : 0.0;
    out[3] = median;
    out[4] = sum;
    out[5] = (cls == PcaClass::kPca) ? vmax : vmin;
    out[6] = (m2 > 0.0) ? m3 / std::pow(m2, 1.5) : 0.0;
    out[7] = (m2 > 0.0) ? m4 / (m2 * m2) - 3.0 : 0.0;
    out[8] = vmax - vmin;
    return out;
}

const std::array<std::string, kStatsPerSet>& stat_names(PcaClass cls) {
    static const std::array<std::string, kStatsPerSet> pca{
        "mean", "std", "variance", "median", "sum", "max", "skewness", "kurtosis", "range"};
    static const std::array<std::string, kStatsPerSet> nonpca{
        "mean", "std", "variance", "median", "sum", "min", "skewness", "kurtosis", "range"};
    return cls == PcaClass::kPca ? pca : nonpca;
}

std::vector<std::string> feature_names(int n_members) {
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(n_members) * 2 * kStatsPerSet);
    for (int m = 0; m < n_members; ++m) {
        for (int cls = 0; cls < 2; ++cls) {
            const PcaClass pc = (cls == 0) ? PcaClass::kPca : PcaClass::kNonPca;
            const char* cls_name = (cls == 0) ? "pca" : "nonpca";
            for (const std::string& st : stat_names(pc))
                names.push_back("cnn" + std::to_string(m + 1) + "_" + cls_name + "_" + st);
        }
    }
    return names;
}

std::vector<double> assemble_features(const PatientSets& ps) {
    if (ps.sets.empty()) throw std::invalid_argument("features: no CNN outputs");
    std::vector<double> out;
    out.reserve(ps.sets.size() * 2 * kStatsPerSet);
    for (const auto& member : ps.sets) {
        const auto pca = extract_stats(member[0], PcaClass::kPca);
        const auto nonpca = extract_stats(member[1], PcaClass::kNonPca);
        out.insert(out.end(), pca.begin(), pca.end());
        out.insert(out.end(), nonpca.begin(), nonpca.end());
    }
    return out;
}

void write_features_csv(const std::string& path, const std::vector<FeatureRow>& rows,
                        const std::string& provenance) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("features: cannot open " + path);
    if (!provenance.empty()) os << "# " << provenance << "\n";
    const std::size_t width = rows.empty() ? 0 : rows.front().features.size();
    os << "patient_id,label";
    char buf[48];
    for (std::size_t f = 0; f < width; ++f) {
        std::snprintf(buf, sizeof buf, ",f_%03zu", f);
        os << buf;
    }
    os << "\n";
    for (const FeatureRow& r : rows) {
        if (r.features.size() != width)
            throw std::invalid_argument("features: ragged feature rows");
        os << r.patient_id << "," << r.label;
        for (double v : r.features) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            os << buf;
        }
        os << "\n";
    }
}

std::vector<FeatureRow> read_features_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("features: cannot open " + path);
    std::vector<FeatureRow> out;
    std::string line;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        std::istringstream ss(line);
        FeatureRow r;
        std::string tok;
        std::getline(ss, r.patient_id, ',');
        std::getline(ss, tok, ',');
        r.label = std::stoi(tok);
        while (std::getline(ss, tok, ',')) r.features.push_back(std::stod(tok));
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace dwic
