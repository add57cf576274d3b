#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "dwic/data.hpp"
#include "dwic/evaluation.hpp"

using namespace dwic;

namespace {

// two-sample Kolmogorov-Smirnov p-value (asymptotic)
double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j])
            ++i;
        else
            ++j;
        const double fa = static_cast<double>(i) / a.size();
        const double fb = static_cast<double>(j) / b.size();
        d = std::max(d, std::abs(fa - fb));
    }
    const double ne = static_cast<double>(a.size()) * b.size() / (a.size() + b.size());
    const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k)
        p += 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    return std::min(1.0, std::max(0.0, p));
}

double slice_channel_mean(const PatientVolume& vol, std::size_t s, std::size_t c) {
    double acc = 0.0;
    for (std::size_t y = 0; y < vol.h; ++y)
        for (std::size_t x = 0; x < vol.w; ++x) acc += vol.at(s, c, y, x);
    return acc / static_cast<double>(vol.h * vol.w);
}

// matched filter: best 3x4-window mean of (b1600 - ADC), the lesion's
// differential signature
double lesion_window_score(const PatientVolume& vol, std::size_t s) {
    double best = -1e300;
    for (std::size_t y = 0; y + 3 <= vol.h; ++y) {
        for (std::size_t x = 0; x + 4 <= vol.w; ++x) {
            double acc = 0.0;
            for (std::size_t dy = 0; dy < 3; ++dy)
                for (std::size_t dx = 0; dx < 4; ++dx)
                    acc += vol.at(s, kChanB1600, y + dy, x + dx) -
                           vol.at(s, kChanAdc, y + dy, x + dx);
            best = std::max(best, acc / 12.0);
        }
    }
    return best;
}

}  // namespace

TEST_CASE("normalize: identity stats leave the volume unchanged") {
    SynthConfig sc;
    sc.n_patients = 2;
    sc.image_size = 24;
    sc.seed = 5;
    auto vols = synth_generate(sc);
    PatientVolume copy = vols[0];
    NormalizationStats id;
    id.mean.fill(0.0);
    id.stddev.fill(1.0);
    normalize_volume(copy, id);
    for (std::size_t i = 0; i < copy.voxels.size(); ++i)
        CHECK(copy.voxels[i] == vols[0].voxels[i]);
}

TEST_CASE("normalize: hand case mu=2 std=1 maps {1,3} to {-1,1}") {
    PatientVolume vol;
    vol.patient_id = "t";
    vol.n_slices = 1;
    vol.h = 1;
    vol.w = 2;
    vol.voxels.assign(1 * kNumChannels * 2, 0.0f);
    vol.slice_labels = {0};
    for (std::size_t c = 0; c < kNumChannels; ++c) {
        vol.at(0, c, 0, 0) = 1.0f;
        vol.at(0, c, 0, 1) = 3.0f;
    }
    NormalizationStats st;
    st.mean.fill(2.0);
    st.stddev.fill(1.0);
    normalize_volume(vol, st);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
        CHECK(vol.at(0, c, 0, 0) == -1.0f);
        CHECK(vol.at(0, c, 0, 1) == 1.0f);
    }

    st.stddev.fill(0.0);
    CHECK_THROWS_AS(normalize_volume(vol, st), std::domain_error);
}

TEST_CASE("normalized reference set has mean 0 and std 1 per channel") {
    SynthConfig sc;
    sc.n_patients = 4;
    sc.image_size = 32;
    sc.seed = 9;
    auto vols = synth_generate(sc);
    std::vector<const PatientVolume*> refs;
    for (const auto& v : vols) refs.push_back(&v);
    const NormalizationStats st = compute_stats(refs);
    for (auto& v : vols) normalize_volume(v, st);
    const NormalizationStats post = compute_stats(refs);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
        CHECK(std::abs(post.mean[c]) < 1e-5);
        CHECK(std::abs(post.stddev[c] - 1.0) < 1e-5);
    }
}

TEST_CASE("bilinear resize") {
    SUBCASE("same-size resize is the identity") {
        std::vector<float> src{1, 2, 3, 4, 5, 6, 7, 8, 9};
        std::vector<float> dst(9);
        resize_bilinear(src.data(), 3, 3, dst.data(), 3, 3);
        for (std::size_t i = 0; i < 9; ++i) CHECK(dst[i] == src[i]);
    }
    SUBCASE("constant image stays constant") {
        std::vector<float> src(16, 7.5f);
        std::vector<float> dst(25);
        resize_bilinear(src.data(), 4, 4, dst.data(), 5, 5);
        for (float v : dst) CHECK(v == doctest::Approx(7.5f));
    }
    SUBCASE("2x2 to 4x4 matches the closed-form bilinear oracle") {
        std::vector<float> src{0, 1, 2, 3};  // row major 2x2
        std::vector<float> dst(16);
        resize_bilinear(src.data(), 2, 2, dst.data(), 4, 4);
        // half-pixel centers: source coordinate = (d + 0.5) / 2 - 0.5, clamped
        auto oracle = [&](std::size_t y, std::size_t x) {
            const double fy = std::clamp((y + 0.5) * 0.5 - 0.5, 0.0, 1.0);
            const double fx = std::clamp((x + 0.5) * 0.5 - 0.5, 0.0, 1.0);
            const std::size_t y0 = static_cast<std::size_t>(fy);
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t y1 = std::min<std::size_t>(y0 + 1, 1);
            const std::size_t x1 = std::min<std::size_t>(x0 + 1, 1);
            const double wy = fy - y0, wx = fx - x0;
            return (1 - wy) * ((1 - wx) * src[y0 * 2 + x0] + wx * src[y0 * 2 + x1]) +
                   wy * ((1 - wx) * src[y1 * 2 + x0] + wx * src[y1 * 2 + x1]);
        };
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x)
                CHECK(dst[y * 4 + x] == doctest::Approx(oracle(y, x)).epsilon(1e-6));
    }
}

TEST_CASE("center crop") {
    SUBCASE("same-size crop is the identity") {
        std::vector<float> src{1, 2, 3, 4};
        std::vector<float> dst(4);
        center_crop(src.data(), 2, 2, dst.data(), 2, 2);
        for (std::size_t i = 0; i < 4; ++i) CHECK(dst[i] == src[i]);
    }
    SUBCASE("144 to 66 keeps rows and columns [39, 105)") {
        std::vector<float> src(144 * 144);
        for (std::size_t i = 0; i < src.size(); ++i) src[i] = static_cast<float>(i);
        std::vector<float> dst(66 * 66);
        center_crop(src.data(), 144, 144, dst.data(), 66, 66);
        CHECK(dst[0] == src[39 * 144 + 39]);
        CHECK(dst[66 * 66 - 1] == src[104 * 144 + 104]);
    }
    SUBCASE("marked center pixel stays centered") {
        std::vector<float> src(9 * 9, 0.0f);
        src[4 * 9 + 4] = 1.0f;
        std::vector<float> dst(5 * 5);
        center_crop(src.data(), 9, 9, dst.data(), 5, 5);
        CHECK(dst[2 * 5 + 2] == 1.0f);
    }
    SUBCASE("oversized target is an error") {
        std::vector<float> src(4);
        std::vector<float> dst(16);
        CHECK_THROWS_AS(center_crop(src.data(), 2, 2, dst.data(), 4, 4),
                        std::invalid_argument);
    }
}

TEST_CASE("stratified split reproduces the paper cohort sizes") {
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (int i = 0; i < 427; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "q%03d", i);
        ids.push_back(buf);
        labels.push_back(i < 175 ? 1 : 0);
    }
    const SplitManifest m = stratified_split(ids, labels, 0.25, 0.15, 99);
    CHECK(std::abs(static_cast<int>(m.train.size()) - 271) <= 2);
    CHECK(std::abs(static_cast<int>(m.validation.size()) - 48) <= 2);
    CHECK(std::abs(static_cast<int>(m.test.size()) - 108) <= 2);
    CHECK(m.train.size() + m.validation.size() + m.test.size() == 427);

    // patient-level disjointness
    std::set<std::string> seen;
    for (const auto& v : {m.train, m.validation, m.test})
        for (const auto& id : v) CHECK(seen.insert(id).second);

    // class ratios preserved within five percentage points
    auto pos_frac = [&](const std::vector<std::string>& v) {
        std::size_t pos = 0;
        for (const auto& id : v) pos += (std::stoi(id.substr(1)) < 175);
        return static_cast<double>(pos) / v.size();
    };
    const double overall = 175.0 / 427.0;
    CHECK(std::abs(pos_frac(m.train) - overall) < 0.05);
    CHECK(std::abs(pos_frac(m.validation) - overall) < 0.05);
    CHECK(std::abs(pos_frac(m.test) - overall) < 0.05);
}

TEST_CASE("split of 100 patients floors to 64/11/25") {
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) {
        ids.push_back("p" + std::to_string(1000 + i));
        labels.push_back(i % 2);
    }
    const SplitManifest m = stratified_split(ids, labels, 0.25, 0.15, 7);
    CHECK(m.test.size() == 25);
    CHECK(m.validation.size() == 11);
    CHECK(m.train.size() == 64);
}

TEST_CASE("split determinism and input-order independence") {
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
        ids.push_back("p" + std::to_string(100 + i));
        labels.push_back(i < 15 ? 1 : 0);
    }
    const SplitManifest a = stratified_split(ids, labels, 0.25, 0.15, 4);
    const SplitManifest b = stratified_split(ids, labels, 0.25, 0.15, 4);
    CHECK(a.train == b.train);
    CHECK(a.validation == b.validation);
    CHECK(a.test == b.test);

    std::vector<std::string> rev_ids(ids.rbegin(), ids.rend());
    std::vector<int> rev_labels(labels.rbegin(), labels.rend());
    const SplitManifest c = stratified_split(rev_ids, rev_labels, 0.25, 0.15, 4);
    CHECK(a.train == c.train);
    CHECK(a.test == c.test);

    const SplitManifest d = stratified_split(ids, labels, 0.25, 0.15, 5);
    CHECK(a.train != d.train);

    CHECK_THROWS_AS(stratified_split({"a", "b", "c"}, {1, 1, 1}, 0.25, 0.15, 1),
                    std::invalid_argument);
}

TEST_CASE("volume file round trip is bit exact") {
    SynthConfig sc;
    sc.n_patients = 2;
    sc.image_size = 20;
    sc.seed = 77;
    const auto vols = synth_generate(sc);
    const auto tmp = std::filesystem::temp_directory_path() / "dwic_vol_test.dwiv";
    save_volume(tmp.string(), vols[0]);
    const PatientVolume back = load_volume(tmp.string(), vols[0].patient_id);
    CHECK(back.n_slices == vols[0].n_slices);
    CHECK(back.h == vols[0].h);
    CHECK(back.patient_label == vols[0].patient_label);
    CHECK(back.slice_labels == vols[0].slice_labels);
    for (std::size_t i = 0; i < back.voxels.size(); ++i)
        CHECK(back.voxels[i] == vols[0].voxels[i]);
    std::filesystem::remove(tmp);
}

TEST_CASE("synthetic generator is deterministic") {
    SynthConfig sc;
    sc.n_patients = 3;
    sc.image_size = 28;
    sc.seed = 31;
    const auto a = synth_generate(sc);
    const auto b = synth_generate(sc);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].n_slices == b[i].n_slices);
        CHECK(a[i].slice_labels == b[i].slice_labels);
        for (std::size_t j = 0; j < a[i].voxels.size(); ++j)
            CHECK(a[i].voxels[j] == b[i].voxels[j]);
    }
}

TEST_CASE("labels are emitted consistently") {
    SynthConfig sc;
    sc.n_patients = 10;
    sc.image_size = 24;
    sc.seed = 13;
    const auto vols = synth_generate(sc);
    for (const auto& v : vols) {
        const bool any_pos =
            std::any_of(v.slice_labels.begin(), v.slice_labels.end(),
                        [](std::uint8_t l) { return l == 1; });
        CHECK(static_cast<bool>(v.patient_label) == any_pos);
        CHECK(v.n_slices >= sc.min_slices);
        CHECK(v.n_slices <= sc.max_slices);
    }
}

TEST_CASE("zero contrast leaves positive and negative slices indistinguishable") {
    SynthConfig sc;
    sc.n_patients = 30;
    sc.image_size = 48;
    sc.lesion_contrast = 0.0;
    sc.seed = 101;
    const auto vols = synth_generate(sc);
    std::vector<double> pos_means, neg_means;
    for (const auto& v : vols)
        for (std::size_t s = 0; s < v.n_slices; ++s)
            (v.slice_labels[s] ? pos_means : neg_means)
                .push_back(slice_channel_mean(v, s, kChanB1600));
    REQUIRE(pos_means.size() > 10);
    CHECK(ks_two_sample_p(pos_means, neg_means) > 0.01);
}

TEST_CASE("high contrast lesions are separable by the window-mean oracle") {
    SynthConfig sc;
    sc.n_patients = 24;
    sc.image_size = 64;
    sc.lesion_contrast = 5.0;
    sc.seed = 202;
    const auto vols = synth_generate(sc);
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& v : vols)
        for (std::size_t s = 0; s < v.n_slices; ++s) {
            scores.push_back(lesion_window_score(v, s));
            labels.push_back(v.slice_labels[s]);
        }
    CHECK(auc_mann_whitney(scores, labels) >= 0.99);
}

TEST_CASE("preprocess geometry keeps labels and reshapes to the crop size") {
    SynthConfig sc;
    sc.n_patients = 2;
    sc.image_size = 160;
    sc.lesion_contrast = 6.0;
    sc.seed = 404;
    const auto vols = synth_generate(sc);
    const PatientVolume prepped = preprocess_geometry(vols[0], 144, 66);
    CHECK(prepped.h == 66);
    CHECK(prepped.w == 66);
    CHECK(prepped.n_slices == vols[0].n_slices);
    CHECK(prepped.slice_labels == vols[0].slice_labels);

    // the lesion signature survives resize + crop for a positive patient
    REQUIRE(vols[0].patient_label == 1);
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t s = 0; s < prepped.n_slices; ++s) {
        scores.push_back(lesion_window_score(prepped, s));
        labels.push_back(prepped.slice_labels[s]);
    }
    bool has_pos = false, has_neg = false;
    for (int l : labels) (l ? has_pos : has_neg) = true;
    if (has_pos && has_neg) CHECK(auc_mann_whitney(scores, labels) > 0.9);
}

TEST_CASE("manifest csv round trip") {
    const auto tmp = std::filesystem::temp_directory_path() / "dwic_manifest_test.csv";
    std::vector<PatientEntry> entries{
        {"p0001", "volumes/p0001.dwiv", 1, "train"},
        {"p0002", "volumes/p0002.dwiv", 0, "test"},
    };
    write_manifest_csv(tmp.string(), entries, "config_hash=deadbeef");
    const auto back = read_manifest_csv(tmp.string());
    REQUIRE(back.size() == 2);
    CHECK(back[0].patient_id == "p0001");
    CHECK(back[0].patient_label == 1);
    CHECK(back[1].split == "test");
    std::filesystem::remove(tmp);
}
