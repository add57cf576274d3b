#include "dwic/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dwic/rng.hpp"

namespace dwic {

namespace {

void check_scores(const std::vector<double>& scores, const std::vector<int>& labels,
                  const char* who) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument(std::string(who) + ": scores/labels size mismatch");
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!std::isfinite(scores[i]))
            throw std::invalid_argument(std::string(who) + ": non-finite score");
        if (labels[i] == 1)
            has_pos = true;
        else if (labels[i] == 0)
            has_neg = true;
        else
            throw std::invalid_argument(std::string(who) + ": labels must be 0/1");
    }
    if (!has_pos || !has_neg)
        throw std::invalid_argument(std::string(who) + ": both classes required");
}

// mid-rank AUC, O(n log n); used inside the bootstrap loops
double fast_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum_pos += mid_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                        static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double quantile_linear(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double h = p * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

struct SplitIndices {
    std::vector<std::size_t> pos, neg;
};

SplitIndices split_by_class(const std::vector<int>& labels) {
    SplitIndices s;
    for (std::size_t i = 0; i < labels.size(); ++i)
        (labels[i] == 1 ? s.pos : s.neg).push_back(i);
    return s;
}

}  // namespace

RocCurve roc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_scores(scores, labels, "roc");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int l : labels) n_pos += (l == 1);
    const std::size_t n_neg = n - n_pos;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    RocCurve curve;
    curve.thresholds.push_back(std::numeric_limits<double>::infinity());
    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);

    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < n) {
        const double s = scores[order[i]];
        std::size_t j = i;
        while (j < n && scores[order[j]] == s) {
            if (labels[order[j]] == 1)
                ++tp;
            else
                ++fp;
            ++j;
        }
        curve.thresholds.push_back(s);
        curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(n_neg));
        curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(n_pos));
        i = j;
    }

    double auc = 0.0;
    for (std::size_t k = 1; k < curve.fpr.size(); ++k)
        auc += (curve.fpr[k] - curve.fpr[k - 1]) * 0.5 * (curve.tpr[k] + curve.tpr[k - 1]);
    curve.auc = auc;
    return curve;
}

double auc_mann_whitney(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_scores(scores, labels, "auc_mann_whitney");
    const SplitIndices s = split_by_class(labels);
    double acc = 0.0;
    for (std::size_t p : s.pos) {
        for (std::size_t q : s.neg) {
            if (scores[p] > scores[q])
                acc += 1.0;
            else if (scores[p] == scores[q])
                acc += 0.5;
        }
    }
    return acc / (static_cast<double>(s.pos.size()) * static_cast<double>(s.neg.size()));
}

std::pair<double, double> bootstrap_ci(const std::vector<double>& scores,
                                       const std::vector<int>& labels, int n_boot, double level,
                                       std::uint64_t seed) {
    check_scores(scores, labels, "bootstrap_ci");
    if (n_boot < 2) throw std::invalid_argument("bootstrap_ci: need at least 2 resamples");
    const SplitIndices s = split_by_class(labels);

    // stratified resampling keeps both class counts fixed, so degenerate
    // single-class resamples cannot arise
    Rng rng(seed);
    std::vector<double> boot;
    boot.reserve(static_cast<std::size_t>(n_boot));
    std::vector<double> rs;
    std::vector<int> rl;
    const std::size_t m = s.pos.size() + s.neg.size();
    rs.reserve(m);
    rl.reserve(m);

    for (int b = 0; b < n_boot; ++b) {
        rs.clear();
        rl.clear();
        for (std::size_t k = 0; k < s.pos.size(); ++k) {
            rs.push_back(scores[s.pos[rng.uniform_index(s.pos.size())]]);
            rl.push_back(1);
        }
        for (std::size_t k = 0; k < s.neg.size(); ++k) {
            rs.push_back(scores[s.neg[rng.uniform_index(s.neg.size())]]);
            rl.push_back(0);
        }
        boot.push_back(fast_auc(rs, rl));
    }

    const double alpha = (1.0 - level) / 2.0;
    return {quantile_linear(boot, alpha), quantile_linear(boot, 1.0 - alpha)};
}

double paired_auc_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                       const std::vector<int>& labels, int n_resamples, std::uint64_t seed) {
    check_scores(scores_a, labels, "paired_auc_test");
    check_scores(scores_b, labels, "paired_auc_test");
    const SplitIndices s = split_by_class(labels);

    const double d_obs = fast_auc(scores_a, labels) - fast_auc(scores_b, labels);
    if (d_obs == 0.0) return 1.0;

    Rng rng(seed);
    std::vector<double> ra, rb;
    std::vector<int> rl;
    int crossing = 0;
    for (int b = 0; b < n_resamples; ++b) {
        ra.clear();
        rb.clear();
        rl.clear();
        for (std::size_t k = 0; k < s.pos.size(); ++k) {
            const std::size_t idx = s.pos[rng.uniform_index(s.pos.size())];
            ra.push_back(scores_a[idx]);
            rb.push_back(scores_b[idx]);
            rl.push_back(1);
        }
        for (std::size_t k = 0; k < s.neg.size(); ++k) {
            const std::size_t idx = s.neg[rng.uniform_index(s.neg.size())];
            ra.push_back(scores_a[idx]);
            rb.push_back(scores_b[idx]);
            rl.push_back(0);
        }
        const double d = fast_auc(ra, rl) - fast_auc(rb, rl);
        if ((d_obs > 0.0 && d <= 0.0) || (d_obs < 0.0 && d >= 0.0)) ++crossing;
    }
    const double p = 2.0 * static_cast<double>(crossing) / static_cast<double>(n_resamples);
    return std::min(1.0, p);
}

ConfusionRates ppv_npv(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("ppv_npv: scores/labels size mismatch");
    if (!std::isfinite(threshold)) throw std::invalid_argument("ppv_npv: threshold must be finite");

    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (labels[i] == 1)
            pred ? ++tp : ++fn;
        else
            pred ? ++fp : ++tn;
    }

    ConfusionRates r;
    auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    r.ppv = ratio(tp, tp + fp);
    r.npv = ratio(tn, tn + fn);
    r.sensitivity = ratio(tp, tp + fn);
    r.specificity = ratio(tn, tn + fp);
    return r;
}

void write_roc_csv(const std::string& path, const RocCurve& curve,
                   const std::string& provenance) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("roc csv: cannot open " + path);
    if (!provenance.empty()) os << "# " << provenance << "\n";
    os << "threshold,fpr,tpr\n";
    char buf[96];
    for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
        if (std::isinf(curve.thresholds[i]))
            std::snprintf(buf, sizeof buf, "inf,%.17g,%.17g", curve.fpr[i], curve.tpr[i]);
        else
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", curve.thresholds[i],
                          curve.fpr[i], curve.tpr[i]);
        os << buf << "\n";
    }
}

RocCurve read_roc_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("roc csv: cannot open " + path);
    RocCurve curve;
    std::string line;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;  // threshold,fpr,tpr
            continue;
        }
        std::istringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ',');
        curve.thresholds.push_back(tok == "inf" ? std::numeric_limits<double>::infinity()
                                                : std::stod(tok));
        std::getline(ss, tok, ',');
        curve.fpr.push_back(std::stod(tok));
        std::getline(ss, tok, ',');
        curve.tpr.push_back(std::stod(tok));
    }
    double auc = 0.0;
    for (std::size_t k = 1; k < curve.fpr.size(); ++k)
        auc += (curve.fpr[k] - curve.fpr[k - 1]) * 0.5 * (curve.tpr[k] + curve.tpr[k - 1]);
    curve.auc = auc;
    return curve;
}

void write_roc_svg(const std::string& path, const RocCurve& curve, const std::string& title,
                   const std::string& provenance) {
    constexpr double kSize = 640.0, kMargin = 60.0;
    const double span = kSize - 2.0 * kMargin;
    auto map_x = [&](double fpr) { return kMargin + fpr * span; };
    auto map_y = [&](double tpr) { return kMargin + (1.0 - tpr) * span; };

    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("roc svg: cannot open " + path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"640\" "
          "viewBox=\"0 0 640 640\">\n";
    if (!provenance.empty()) os << "<!-- " << provenance << " -->\n";
    os << "<rect width=\"640\" height=\"640\" fill=\"white\"/>\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", kMargin);
    os << "<line x1=\"" << buf << "\" y1=\"" << (kSize - kMargin) << "\" x2=\""
       << (kSize - kMargin) << "\" y2=\"" << (kSize - kMargin)
       << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    os << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin
       << "\" y2=\"" << (kSize - kMargin) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    os << "<line x1=\"" << kMargin << "\" y1=\"" << (kSize - kMargin) << "\" x2=\""
       << (kSize - kMargin) << "\" y2=\"" << kMargin
       << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"6,4\"/>\n";

    os << "<polyline fill=\"none\" stroke=\"#c02020\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
        if (i) os << " ";
        char pt[64];
        std::snprintf(pt, sizeof pt, "%.9g,%.9g", map_x(curve.fpr[i]), map_y(curve.tpr[i]));
        os << pt;
    }
    os << "\"/>\n";

    char auc_label[96];
    std::snprintf(auc_label, sizeof auc_label, "AUC = %.4f", curve.auc);
    os << "<text x=\"" << (kMargin + 20) << "\" y=\"" << (kMargin + 24)
       << "\" font-family=\"sans-serif\" font-size=\"18\">" << title << "</text>\n";
    os << "<text x=\"" << (kSize - kMargin - 140) << "\" y=\"" << (kSize - kMargin - 16)
       << "\" font-family=\"sans-serif\" font-size=\"16\">" << auc_label << "</text>\n";
    os << "<text x=\"" << (kSize / 2 - 80) << "\" y=\"" << (kSize - 16)
       << "\" font-family=\"sans-serif\" font-size=\"14\">false positive rate</text>\n";
    os << "<text x=\"16\" y=\"" << (kSize / 2) << "\" font-family=\"sans-serif\" "
          "font-size=\"14\" transform=\"rotate(-90 16 "
       << (kSize / 2) << ")\">true positive rate</text>\n";
    os << "</svg>\n";
}

}  // namespace dwic
