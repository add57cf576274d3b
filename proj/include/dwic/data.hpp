#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dwic/tensor.hpp"
#include "dwic/trainer.hpp"

namespace dwic {

inline constexpr std::size_t kNumChannels = 6;  // ADC, b0, b100, b400, b1000, b1600
inline constexpr std::size_t kChanAdc = 0;
inline constexpr std::size_t kChanB1000 = 4;
inline constexpr std::size_t kChanB1600 = 5;

struct PatientVolume {
    std::string patient_id;
    std::size_t n_slices = 0, h = 0, w = 0;
    std::vector<float> voxels;            // [S, 6, H, W] row-major
    std::vector<std::uint8_t> slice_labels;  // tumor present per slice
    std::uint8_t patient_label = 0;

    float& at(std::size_t s, std::size_t c, std::size_t y, std::size_t x) {
        return voxels[((s * kNumChannels + c) * h + y) * w + x];
    }
    float at(std::size_t s, std::size_t c, std::size_t y, std::size_t x) const {
        return voxels[((s * kNumChannels + c) * h + y) * w + x];
    }
};

// Volume file: magic "DWIV", u32 version, u32 S, u32 C, u32 H, u32 W,
// little-endian f32 raster [S,C,H,W], S bytes of slice labels, one byte of
// patient label. Bit-exact round trip.
inline constexpr std::uint32_t kVolumeVersion = 1;
void save_volume(const std::string& path, const PatientVolume& vol);
PatientVolume load_volume(const std::string& path, const std::string& patient_id);

struct NormalizationStats {
    std::array<double, kNumChannels> mean{};
    std::array<double, kNumChannels> stddev{};
};

// per-channel mean/std over every voxel of the given volumes
NormalizationStats compute_stats(const std::vector<const PatientVolume*>& reference);
void normalize_volume(PatientVolume& vol, const NormalizationStats& stats);
void save_stats_csv(const std::string& path, const NormalizationStats& stats,
                    const std::string& provenance);
NormalizationStats load_stats_csv(const std::string& path);

// bilinear resample with half-pixel-center alignment; same-size is identity
void resize_bilinear(const float* src, std::size_t sh, std::size_t sw, float* dst,
                     std::size_t dh, std::size_t dw);

// centered window, offset = (src - dst) / 2 on each axis
void center_crop(const float* src, std::size_t sh, std::size_t sw, float* dst, std::size_t dh,
                 std::size_t dw);

// resize every channel of every slice to resize_to, then crop to crop_to
PatientVolume preprocess_geometry(const PatientVolume& vol, std::size_t resize_to,
                                  std::size_t crop_to);

struct PatientEntry {
    std::string patient_id;
    std::string path;  // relative to the manifest's directory
    std::uint8_t patient_label = 0;
    std::string split;  // "train" | "validation" | "test" | "" when unassigned
};

struct SplitManifest {
    std::vector<std::string> train, validation, test;
};

// Patient-level stratified split. Per class: test = round(n*test_frac),
// validation = round(remaining*val_frac), remainder to train.
SplitManifest stratified_split(const std::vector<std::string>& patient_ids,
                               const std::vector<int>& patient_labels, double test_frac,
                               double val_frac_of_trainval, std::uint64_t seed);

void write_manifest_csv(const std::string& path, const std::vector<PatientEntry>& entries,
                        const std::string& provenance);
std::vector<PatientEntry> read_manifest_csv(const std::string& path);

struct SynthConfig {
    std::size_t n_patients = 120;
    double lesion_contrast = 6.0;  // lesion amplitude in units of the noise sigma
    double pos_fraction = 0.5;
    std::size_t image_size = 160;
    std::size_t min_slices = 10, max_slices = 16;
    std::uint64_t seed = 0;
};

// Smooth per-channel background texture plus, for positive patients, a
// small (~3x4 px) blob on 1-3 contiguous slices with a restricted-diffusion
// signature: dark ADC, bright b1000/b1600.
std::vector<PatientVolume> synth_generate(const SynthConfig& cfg);

// flatten preprocessed volumes into a per-slice training set
SliceDataset make_slice_dataset(const std::vector<const PatientVolume*>& volumes);

}  // namespace dwic
