#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dwic/evaluation.hpp"
#include "dwic/rng.hpp"

using namespace dwic;

TEST_CASE("roc on perfectly ranked scores has AUC 1") {
    const std::vector<double> scores{0.1, 0.2, 0.8, 0.9};
    const std::vector<int> labels{0, 0, 1, 1};
    const RocCurve curve = roc(scores, labels);
    CHECK(curve.auc == doctest::Approx(1.0));
    CHECK(curve.fpr.front() == 0.0);
    CHECK(curve.tpr.front() == 0.0);
    CHECK(curve.fpr.back() == 1.0);
    CHECK(curve.tpr.back() == 1.0);
}

TEST_CASE("all-equal scores trace the diagonal") {
    const std::vector<double> scores{0.5, 0.5, 0.5, 0.5};
    const std::vector<int> labels{0, 1, 0, 1};
    const RocCurve curve = roc(scores, labels);
    CHECK(curve.auc == doctest::Approx(0.5));
    REQUIRE(curve.fpr.size() == 2);  // two points: origin and (1,1)
}

TEST_CASE("hand-computed AUC 0.75 from concordant pairs") {
    const std::vector<double> scores{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> labels{0, 0, 1, 1};
    CHECK(roc(scores, labels).auc == doctest::Approx(0.75));
    CHECK(auc_mann_whitney(scores, labels) == doctest::Approx(0.75));
}

TEST_CASE("roc curve is monotone with valid endpoints") {
    Rng rng(55);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 5 + rng.uniform_index(40);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool pos = false, neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = rng.uniform();
            labels[i] = static_cast<int>(rng.uniform_index(2));
            (labels[i] ? pos : neg) = true;
        }
        if (!pos || !neg) continue;
        const RocCurve curve = roc(scores, labels);
        CHECK(curve.fpr.front() == 0.0);
        CHECK(curve.tpr.front() == 0.0);
        CHECK(curve.fpr.back() == 1.0);
        CHECK(curve.tpr.back() == 1.0);
        for (std::size_t i = 1; i < curve.fpr.size(); ++i) {
            CHECK(curve.fpr[i] >= curve.fpr[i - 1]);
            CHECK(curve.tpr[i] >= curve.tpr[i - 1]);
        }
        CHECK(curve.auc >= 0.0);
        CHECK(curve.auc <= 1.0);
    }
}

TEST_CASE("single-class labels are rejected") {
    CHECK_THROWS_AS(roc({0.1, 0.2}, {1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(auc_mann_whitney({0.1, 0.2}, {0, 0}), std::invalid_argument);
}

TEST_CASE("mann-whitney properties") {
    // reversal antisymmetry
    const std::vector<double> scores{0.2, 0.9, 0.4, 0.6, 0.1};
    const std::vector<int> labels{0, 1, 1, 0, 0};
    std::vector<double> reversed;
    for (double s : scores) reversed.push_back(-s);
    CHECK(auc_mann_whitney(scores, labels) ==
          doctest::Approx(1.0 - auc_mann_whitney(reversed, labels)));

    // all ties -> 0.5
    CHECK(auc_mann_whitney({0.3, 0.3, 0.3}, {1, 0, 1}) == doctest::Approx(0.5));
}

TEST_CASE("trapezoid AUC equals the Mann-Whitney statistic on 1000 random instances") {
    Rng rng(2718);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 4 + rng.uniform_index(47);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        labels[0] = 1;
        labels[1] = 0;
        for (std::size_t i = 0; i < n; ++i) {
            // quantized scores force plenty of ties
            scores[i] = std::floor(rng.uniform() * 8.0) / 8.0;
            if (i >= 2) labels[i] = static_cast<int>(rng.uniform_index(2));
        }
        const double a = roc(scores, labels).auc;
        const double b = auc_mann_whitney(scores, labels);
        CHECK(std::abs(a - b) <= 1e-12);
    }
}

TEST_CASE("AUC is invariant under strictly monotone score transforms") {
    Rng rng(4444);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 6 + rng.uniform_index(30);
        std::vector<double> scores(n), mapped(n);
        std::vector<int> labels(n);
        labels[0] = 1;
        labels[1] = 0;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = rng.uniform(-3.0, 3.0);
            mapped[i] = std::exp(0.5 * scores[i]) + 2.0;  // strictly increasing
            if (i >= 2) labels[i] = static_cast<int>(rng.uniform_index(2));
        }
        CHECK(roc(scores, labels).auc == doctest::Approx(roc(mapped, labels).auc));
    }
}

TEST_CASE("bootstrap interval is deterministic and collapses for perfect separation") {
    std::vector<double> scores;
    std::vector<int> labels;
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const int l = i % 2;
        scores.push_back(l ? rng.uniform(0.8, 1.0) : rng.uniform(0.0, 0.2));
        labels.push_back(l);
    }
    const auto ci_a = bootstrap_ci(scores, labels, 500, 0.95, 9);
    const auto ci_b = bootstrap_ci(scores, labels, 500, 0.95, 9);
    CHECK(ci_a.first == ci_b.first);
    CHECK(ci_a.second == ci_b.second);
    CHECK(ci_a.first > 0.999);
    CHECK(ci_a.second == doctest::Approx(1.0));

    const auto ci_c = bootstrap_ci(scores, labels, 500, 0.95, 10);
    // a different seed resamples differently but stays near (1,1)
    CHECK(ci_c.first > 0.999);
}

TEST_CASE("paired test: identical scores give p = 1") {
    std::vector<double> scores;
    std::vector<int> labels;
    Rng rng(6);
    for (int i = 0; i < 60; ++i) {
        scores.push_back(rng.uniform());
        labels.push_back(i % 2);
    }
    CHECK(paired_auc_test(scores, scores, labels, 400, 3) == doctest::Approx(1.0));
}

TEST_CASE("paired test: perfect vs random scores is significant on n=200") {
    Rng rng(7);
    std::vector<double> perfect, random_scores;
    std::vector<int> labels;
    for (int i = 0; i < 200; ++i) {
        const int l = i % 2;
        labels.push_back(l);
        perfect.push_back(l ? rng.uniform(0.7, 1.0) : rng.uniform(0.0, 0.3));
        random_scores.push_back(rng.uniform());
    }
    const double p = paired_auc_test(perfect, random_scores, labels, 1000, 11);
    CHECK(p < 0.01);

    CHECK(paired_auc_test(perfect, random_scores, labels, 1000, 11) ==
          paired_auc_test(perfect, random_scores, labels, 1000, 11));
}

TEST_CASE("ppv/npv confusion-matrix arithmetic") {
    // TP=3 FP=1 TN=5 FN=1 at threshold 0.5
    const std::vector<double> scores{0.9, 0.8, 0.7, 0.6, 0.4, 0.1, 0.2, 0.3, 0.35, 0.05};
    const std::vector<int> labels{1, 1, 1, 0, 1, 0, 0, 0, 0, 0};
    const ConfusionRates r = ppv_npv(scores, labels, 0.5);
    REQUIRE(r.ppv.has_value());
    REQUIRE(r.npv.has_value());
    CHECK(*r.ppv == doctest::Approx(0.75));
    CHECK(*r.npv == doctest::Approx(5.0 / 6.0));
    CHECK(*r.sensitivity == doctest::Approx(0.75));
    CHECK(*r.specificity == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("ppv/npv: perfect classifier at mid threshold") {
    const std::vector<double> scores{0.9, 0.8, 0.1, 0.2};
    const std::vector<int> labels{1, 1, 0, 0};
    const ConfusionRates r = ppv_npv(scores, labels, 0.5);
    CHECK(*r.ppv == doctest::Approx(1.0));
    CHECK(*r.npv == doctest::Approx(1.0));
    CHECK(*r.sensitivity == doctest::Approx(1.0));
    CHECK(*r.specificity == doctest::Approx(1.0));
}

TEST_CASE("ppv is absent when nothing is predicted positive") {
    const std::vector<double> scores{0.1, 0.2, 0.3};
    const std::vector<int> labels{0, 1, 0};
    const ConfusionRates r = ppv_npv(scores, labels, 0.9);
    CHECK_FALSE(r.ppv.has_value());
    CHECK(r.npv.has_value());

    CHECK_THROWS_AS(ppv_npv(scores, labels, std::numeric_limits<double>::infinity()),
                    std::invalid_argument);
}

TEST_CASE("roc csv round trip") {
    const std::vector<double> scores{0.1, 0.6, 0.35, 0.8, 0.35};
    const std::vector<int> labels{0, 1, 1, 1, 0};
    const RocCurve curve = roc(scores, labels);

    const auto tmp = std::filesystem::temp_directory_path() / "dwic_roc_test.csv";
    write_roc_csv(tmp.string(), curve, "config_hash=test");
    const RocCurve back = read_roc_csv(tmp.string());
    REQUIRE(back.fpr.size() == curve.fpr.size());
    for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
        CHECK(back.fpr[i] == curve.fpr[i]);
        CHECK(back.tpr[i] == curve.tpr[i]);
    }
    CHECK(back.auc == doctest::Approx(curve.auc));
    std::filesystem::remove(tmp);
}
