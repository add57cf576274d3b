#include "dwic/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dwic/rng.hpp"

namespace dwic {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("volume: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_volume(const std::string& path, const PatientVolume& vol) {
    if (vol.voxels.size() != vol.n_slices * kNumChannels * vol.h * vol.w ||
        vol.slice_labels.size() != vol.n_slices)
        throw std::invalid_argument("volume: inconsistent sizes for " + vol.patient_id);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("volume: cannot open for writing: " + path);
    os.write("DWIV", 4);
    write_u32(os, kVolumeVersion);
    write_u32(os, static_cast<std::uint32_t>(vol.n_slices));
    write_u32(os, static_cast<std::uint32_t>(kNumChannels));
    write_u32(os, static_cast<std::uint32_t>(vol.h));
    write_u32(os, static_cast<std::uint32_t>(vol.w));
    for (float v : vol.voxels) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_u32(os, bits);
    }
    os.write(reinterpret_cast<const char*>(vol.slice_labels.data()),
             static_cast<std::streamsize>(vol.slice_labels.size()));
    os.write(reinterpret_cast<const char*>(&vol.patient_label), 1);
    if (!os) throw std::runtime_error("volume: write failed: " + path);
}

PatientVolume load_volume(const std::string& path, const std::string& patient_id) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("volume: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DWIV", 4) != 0)
        throw std::runtime_error("volume: bad magic in " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kVolumeVersion)
        throw std::runtime_error("volume: unsupported version in " + path);

    PatientVolume vol;
    vol.patient_id = patient_id;
    vol.n_slices = read_u32(is);
    const std::uint32_t c = read_u32(is);
    if (c != kNumChannels) throw std::runtime_error("volume: unexpected channel count in " + path);
    vol.h = read_u32(is);
    vol.w = read_u32(is);
    vol.voxels.resize(vol.n_slices * kNumChannels * vol.h * vol.w);
    for (float& v : vol.voxels) {
        const std::uint32_t bits = read_u32(is);
        std::memcpy(&v, &bits, 4);
    }
    vol.slice_labels.resize(vol.n_slices);
    is.read(reinterpret_cast<char*>(vol.slice_labels.data()),
            static_cast<std::streamsize>(vol.n_slices));
    is.read(reinterpret_cast<char*>(&vol.patient_label), 1);
    if (!is) throw std::runtime_error("volume: truncated file: " + path);
    return vol;
}

NormalizationStats compute_stats(const std::vector<const PatientVolume*>& reference) {
    if (reference.empty()) throw std::invalid_argument("stats: empty reference set");
    NormalizationStats st;
    std::array<double, kNumChannels> sum{}, count{};
    for (const PatientVolume* vol : reference) {
        const std::size_t plane = vol->h * vol->w;
        for (std::size_t s = 0; s < vol->n_slices; ++s)
            for (std::size_t c = 0; c < kNumChannels; ++c) {
                const float* p = vol->voxels.data() + (s * kNumChannels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) sum[c] += p[i];
                count[c] += static_cast<double>(plane);
            }
    }
    for (std::size_t c = 0; c < kNumChannels; ++c) st.mean[c] = sum[c] / count[c];

    std::array<double, kNumChannels> sq{};
    for (const PatientVolume* vol : reference) {
        const std::size_t plane = vol->h * vol->w;
        for (std::size_t s = 0; s < vol->n_slices; ++s)
            for (std::size_t c = 0; c < kNumChannels; ++c) {
                const float* p = vol->voxels.data() + (s * kNumChannels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - st.mean[c];
                    sq[c] += d * d;
                }
            }
    }
    for (std::size_t c = 0; c < kNumChannels; ++c) {
        st.stddev[c] = std::sqrt(sq[c] / count[c]);
        if (!(st.stddev[c] > 0.0))
            throw std::domain_error("stats: zero standard deviation in channel " +
                                    std::to_string(c));
    }
    return st;
}

void normalize_volume(PatientVolume& vol, const NormalizationStats& stats) {
    for (std::size_t c = 0; c < kNumChannels; ++c)
        if (!(stats.stddev[c] > 0.0))
            throw std::domain_error("normalize: zero standard deviation");
    const std::size_t plane = vol.h * vol.w;
    for (std::size_t s = 0; s < vol.n_slices; ++s)
        for (std::size_t c = 0; c < kNumChannels; ++c) {
            float* p = vol.voxels.data() + (s * kNumChannels + c) * plane;
            const float mu = static_cast<float>(stats.mean[c]);
            const float inv = static_cast<float>(1.0 / stats.stddev[c]);
            for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mu) * inv;
        }
}

void save_stats_csv(const std::string& path, const NormalizationStats& stats,
                    const std::string& provenance) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("stats: cannot open " + path);
    if (!provenance.empty()) os << "# " << provenance << "\n";
    os << "channel,mean,std\n";
    char buf[96];
    for (std::size_t c = 0; c < kNumChannels; ++c) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g", c, stats.mean[c], stats.stddev[c]);
        os << buf << "\n";
    }
}

NormalizationStats load_stats_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("stats: cannot open " + path);
    NormalizationStats st;
    std::string line;
    bool header_seen = false;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        std::istringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ',');
        const std::size_t c = static_cast<std::size_t>(std::stoul(tok));
        if (c >= kNumChannels) throw std::runtime_error("stats: bad channel index in " + path);
        std::getline(ss, tok, ',');
        st.mean[c] = std::stod(tok);
        std::getline(ss, tok, ',');
        st.stddev[c] = std::stod(tok);
        ++rows;
    }
    if (rows != kNumChannels) throw std::runtime_error("stats: wrong row count in " + path);
    return st;
}

void resize_bilinear(const float* src, std::size_t sh, std::size_t sw, float* dst,
                     std::size_t dh, std::size_t dw) {
    if (sh == 0 || sw == 0 || dh == 0 || dw == 0)
        throw std::invalid_argument("resize: zero dimension");
    const double sy = static_cast<double>(sh) / static_cast<double>(dh);
    const double sx = static_cast<double>(sw) / static_cast<double>(dw);
    for (std::size_t y = 0; y < dh; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(sh - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, sh - 1);
        const float wy = static_cast<float>(fy - static_cast<double>(y0));
        for (std::size_t x = 0; x < dw; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(sw - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, sw - 1);
            const float wx = static_cast<float>(fx - static_cast<double>(x0));
            const float top = (1.0f - wx) * src[y0 * sw + x0] + wx * src[y0 * sw + x1];
            const float bot = (1.0f - wx) * src[y1 * sw + x0] + wx * src[y1 * sw + x1];
            dst[y * dw + x] = (1.0f - wy) * top + wy * bot;
        }
    }
}

void center_crop(const float* src, std::size_t sh, std::size_t sw, float* dst, std::size_t dh,
                 std::size_t dw) {
    if (dh > sh || dw > sw) throw std::invalid_argument("crop: target larger than source");
    const std::size_t oy = (sh - dh) / 2;
    const std::size_t ox = (sw - dw) / 2;
    for (std::size_t y = 0; y < dh; ++y)
        std::memcpy(dst + y * dw, src + (y + oy) * sw + ox, dw * sizeof(float));
}

PatientVolume preprocess_geometry(const PatientVolume& vol, std::size_t resize_to,
                                  std::size_t crop_to) {
    PatientVolume out;
    out.patient_id = vol.patient_id;
    out.n_slices = vol.n_slices;
    out.h = crop_to;
    out.w = crop_to;
    out.slice_labels = vol.slice_labels;
    out.patient_label = vol.patient_label;
    out.voxels.resize(vol.n_slices * kNumChannels * crop_to * crop_to);

    std::vector<float> resized(resize_to * resize_to);
    const std::size_t src_plane = vol.h * vol.w;
    const std::size_t dst_plane = crop_to * crop_to;
    for (std::size_t s = 0; s < vol.n_slices; ++s) {
        for (std::size_t c = 0; c < kNumChannels; ++c) {
            const float* src = vol.voxels.data() + (s * kNumChannels + c) * src_plane;
            float* dst = out.voxels.data() + (s * kNumChannels + c) * dst_plane;
            resize_bilinear(src, vol.h, vol.w, resized.data(), resize_to, resize_to);
            center_crop(resized.data(), resize_to, resize_to, dst, crop_to, crop_to);
        }
    }
    return out;
}

SplitManifest stratified_split(const std::vector<std::string>& patient_ids,
                               const std::vector<int>& patient_labels, double test_frac,
                               double val_frac_of_trainval, std::uint64_t seed) {
    if (patient_ids.size() != patient_labels.size() || patient_ids.empty())
        throw std::invalid_argument("split: id/label size mismatch");
    if (!(test_frac > 0.0 && test_frac < 1.0) ||
        !(val_frac_of_trainval >= 0.0 && val_frac_of_trainval < 1.0))
        throw std::invalid_argument("split: fractions out of range");

    std::vector<std::string> classes[2];
    for (std::size_t i = 0; i < patient_ids.size(); ++i) {
        const int l = patient_labels[i];
        if (l != 0 && l != 1) throw std::invalid_argument("split: labels must be 0/1");
        classes[l].push_back(patient_ids[i]);
    }
    for (int l = 0; l < 2; ++l) {
        if (classes[l].size() < 3)
            throw std::invalid_argument("split: need at least 3 patients per class");
        std::sort(classes[l].begin(), classes[l].end());
    }

    const std::size_t n = patient_ids.size();
    const std::size_t test_total =
        static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_frac));
    const std::size_t val_total = static_cast<std::size_t>(
        std::floor(static_cast<double>(n - test_total) * val_frac_of_trainval));

    // apportion a total across the two classes proportionally to the given
    // class sizes, assigning the leftover by largest fractional remainder
    auto apportion = [](std::size_t total, const std::array<std::size_t, 2>& sizes)
        -> std::array<std::size_t, 2> {
        const double denom = static_cast<double>(sizes[0] + sizes[1]);
        std::array<std::size_t, 2> base{};
        std::array<double, 2> frac{};
        std::size_t assigned = 0;
        for (int c = 0; c < 2; ++c) {
            const double q = static_cast<double>(total) * static_cast<double>(sizes[c]) / denom;
            base[c] = static_cast<std::size_t>(std::floor(q));
            base[c] = std::min(base[c], sizes[c]);
            frac[c] = q - std::floor(q);
            assigned += base[c];
        }
        while (assigned < total) {
            const int pick = (frac[1] > frac[0]) ? 1 : 0;
            if (base[pick] < sizes[pick]) {
                ++base[pick];
            } else {
                ++base[1 - pick];
            }
            frac[pick] = -1.0;
            ++assigned;
        }
        return base;
    };

    const std::array<std::size_t, 2> class_sizes{classes[0].size(), classes[1].size()};
    const auto test_per_class = apportion(test_total, class_sizes);
    const std::array<std::size_t, 2> remaining{class_sizes[0] - test_per_class[0],
                                               class_sizes[1] - test_per_class[1]};
    const auto val_per_class = apportion(val_total, remaining);

    Rng rng(seed);
    SplitManifest m;
    for (int l = 0; l < 2; ++l) {
        rng.shuffle(classes[l]);
        std::size_t i = 0;
        for (std::size_t k = 0; k < test_per_class[l]; ++k) m.test.push_back(classes[l][i++]);
        for (std::size_t k = 0; k < val_per_class[l]; ++k)
            m.validation.push_back(classes[l][i++]);
        for (; i < classes[l].size(); ++i) m.train.push_back(classes[l][i]);
    }
    std::sort(m.train.begin(), m.train.end());
    std::sort(m.validation.begin(), m.validation.end());
    std::sort(m.test.begin(), m.test.end());
    return m;
}

void write_manifest_csv(const std::string& path, const std::vector<PatientEntry>& entries,
                        const std::string& provenance) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("manifest: cannot open " + path);
    if (!provenance.empty()) os << "# " << provenance << "\n";
    os << "patient_id,path,patient_label,split\n";
    for (const PatientEntry& e : entries)
        os << e.patient_id << "," << e.path << "," << static_cast<int>(e.patient_label) << ","
           << e.split << "\n";
}

std::vector<PatientEntry> read_manifest_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("manifest: cannot open " + path);
    std::vector<PatientEntry> out;
    std::string line;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        std::istringstream ss(line);
        PatientEntry e;
        std::string tok;
        std::getline(ss, e.patient_id, ',');
        std::getline(ss, e.path, ',');
        std::getline(ss, tok, ',');
        e.patient_label = static_cast<std::uint8_t>(std::stoi(tok));
        std::getline(ss, e.split, ',');
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<PatientVolume> synth_generate(const SynthConfig& cfg) {
    if (cfg.n_patients < 2) throw std::invalid_argument("synth: need at least 2 patients");
    if (cfg.lesion_contrast < 0.0) throw std::invalid_argument("synth: negative contrast");
    if (cfg.min_slices < 1 || cfg.max_slices < cfg.min_slices)
        throw std::invalid_argument("synth: bad slice-count range");

    // acquisition-like channel baselines and the restricted-diffusion
    // signature of a lesion (dark ADC, bright high-b)
    constexpr std::array<double, kNumChannels> kBase{1200.0, 900.0, 700.0, 500.0, 350.0, 250.0};
    constexpr std::array<double, kNumChannels> kLesionMult{-1.0, 0.0, 0.1, 0.35, 0.8, 1.0};
    constexpr double kNoiseSigma = 25.0;
    constexpr double kTwoPi = 6.28318530717958647692;

    const std::size_t size = cfg.image_size;
    // keep lesions inside the standard resize-144 / crop-66 center window
    const double crop_half = 0.229 * static_cast<double>(size) - 6.0;
    const double jitter_half = std::min(20.0, std::max(2.0, crop_half));

    Rng rng(cfg.seed);
    const std::size_t n_pos = static_cast<std::size_t>(
        std::lround(static_cast<double>(cfg.n_patients) * cfg.pos_fraction));

    std::vector<PatientVolume> out;
    out.reserve(cfg.n_patients);

    for (std::size_t pi = 0; pi < cfg.n_patients; ++pi) {
        PatientVolume vol;
        char idbuf[16];
        std::snprintf(idbuf, sizeof idbuf, "p%04zu", pi);
        vol.patient_id = idbuf;
        vol.h = size;
        vol.w = size;
        vol.n_slices = cfg.min_slices + rng.uniform_index(cfg.max_slices - cfg.min_slices + 1);
        vol.voxels.assign(vol.n_slices * kNumChannels * size * size, 0.0f);
        vol.slice_labels.assign(vol.n_slices, 0);

        std::array<double, kNumChannels> patient_offset;
        for (double& v : patient_offset) v = rng.normal(0.0, 10.0);

        for (std::size_t s = 0; s < vol.n_slices; ++s) {
            for (std::size_t c = 0; c < kNumChannels; ++c) {
                // three low-frequency gratings per slice channel
                double amp[3], fx[3], fy[3], ph[3];
                for (int g = 0; g < 3; ++g) {
                    amp[g] = rng.uniform(6.0, 14.0);
                    fx[g] = rng.uniform(0.5, 2.5);
                    fy[g] = rng.uniform(0.5, 2.5);
                    ph[g] = rng.uniform(0.0, kTwoPi);
                }
                float* p = vol.voxels.data() + (s * kNumChannels + c) * size * size;
                const double base = kBase[c] + patient_offset[c];
                for (std::size_t y = 0; y < size; ++y) {
                    for (std::size_t x = 0; x < size; ++x) {
                        double v = base;
                        for (int g = 0; g < 3; ++g)
                            v += amp[g] *
                                 std::sin(kTwoPi * (fx[g] * static_cast<double>(x) /
                                                        static_cast<double>(size) +
                                                    fy[g] * static_cast<double>(y) /
                                                        static_cast<double>(size)) +
                                          ph[g]);
                        v += rng.normal(0.0, kNoiseSigma);
                        p[y * size + x] = static_cast<float>(v);
                    }
                }
            }
        }

        const bool positive = pi < n_pos;
        if (positive) {
            const std::size_t lesion_count =
                1 + rng.uniform_index(std::min<std::size_t>(3, vol.n_slices));
            const std::size_t start = rng.uniform_index(vol.n_slices - lesion_count + 1);
            const double cy0 = static_cast<double>(size) / 2.0 +
                               rng.uniform(-jitter_half, jitter_half);
            const double cx0 = static_cast<double>(size) / 2.0 +
                               rng.uniform(-jitter_half, jitter_half);
            for (std::size_t s = start; s < start + lesion_count; ++s) {
                vol.slice_labels[s] = 1;
                const long cy = std::lround(cy0) + static_cast<long>(rng.uniform_index(3)) - 1;
                const long cx = std::lround(cx0) + static_cast<long>(rng.uniform_index(3)) - 1;
                for (std::size_t c = 0; c < kNumChannels; ++c) {
                    const double delta = cfg.lesion_contrast * kNoiseSigma * kLesionMult[c];
                    if (delta == 0.0) continue;
                    float* p = vol.voxels.data() + (s * kNumChannels + c) * size * size;
                    // flat 3x4 pixel blob
                    for (long dy = -1; dy <= 1; ++dy) {
                        for (long dx = -2; dx <= 1; ++dx) {
                            const long y = cy + dy, x = cx + dx;
                            if (y < 0 || x < 0 || y >= static_cast<long>(size) ||
                                x >= static_cast<long>(size))
                                continue;
                            p[y * size + x] += static_cast<float>(delta);
                        }
                    }
                }
            }
            vol.patient_label = 1;
        }
        out.push_back(std::move(vol));
    }
    return out;
}

SliceDataset make_slice_dataset(const std::vector<const PatientVolume*>& volumes) {
    SliceDataset set;
    for (const PatientVolume* vol : volumes) {
        const std::size_t plane = vol->h * vol->w;
        for (std::size_t s = 0; s < vol->n_slices; ++s) {
            Tensor img({kNumChannels, vol->h, vol->w});
            std::copy(vol->voxels.data() + s * kNumChannels * plane,
                      vol->voxels.data() + (s + 1) * kNumChannels * plane, img.data());
            set.images.push_back(std::move(img));
            set.labels.push_back(vol->slice_labels[s]);
            set.patient_ids.push_back(vol->patient_id);
            set.slice_indices.push_back(static_cast<int>(s));
        }
    }
    return set;
}

}  // namespace dwic
