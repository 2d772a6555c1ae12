#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scanet/rng.hpp"
#include "scanet/tensor.hpp"

namespace scanet {

// One dual-modality study: co-registered CT and CTA volumes of equal shape,
// each stored flat row-major (slice, row, col), plus the recanalization
// label (1 = favorable).
struct PatientStudy {
    std::string id;
    int slices = 0;
    int height = 0;
    int width = 0;
    std::vector<float> ct;
    std::vector<float> cta;
    int label = 0;

    std::size_t voxels() const {
        return static_cast<std::size_t>(slices) * height * width;
    }
};

// [S x 2 x H x W] tensor; channel 0 = CT, channel 1 = CTA.
Tensor study_tensor(const PatientStudy& study);

// Size in bytes of a serialized study: 16-byte header plus two f32 volumes.
std::uint64_t study_file_size(int slices, int height, int width);

// Binary layout (little-endian):
//   "SCV1" | u8 version=1 | u8 label | u16 slices | u32 height | u32 width
// followed by the CT then CTA payloads as 32-bit floats.
void save_study(const std::filesystem::path& path, const PatientStudy& study);
PatientStudy load_study(const std::filesystem::path& path);

// Linear map of [low, high] to [0, 1] with clamping.
std::vector<float> normalize(const std::vector<float>& volume, float low,
                             float high);
void normalize_in_place(PatientStudy& study, float low, float high);

// Everything the generator draws from; all fields serialize to the manifest
// so a cohort can be regenerated byte-for-byte.
struct GeneratorParams {
    int slices = 8;
    int height = 32;
    int width = 32;
    float noise_sigma = 0.05f;
    // smooth background field: base level plus low-frequency cosine modes
    float base_level = 0.35f;
    float base_jitter = 0.05f;
    int field_modes = 3;
    float field_amp_lo = 0.015f;
    float field_amp_hi = 0.055f;
    // ellipsoidal lesion region, centers and semi-axes as axis fractions;
    // the nominal depth extent is the middle third of the slices
    float region_cx = 0.60f;
    float region_cy = 0.50f;
    float region_cz = 0.50f;
    float region_rx = 0.17f;
    float region_ry = 0.17f;
    float region_rz = 1.0f / 6.0f;
    float center_jitter = 0.10f;
    // intensity added inside the region: dense occlusion (label 0) is bright
    // in both modalities, favorable (label 1) faintly in CTA only
    float ct_amp_unfavorable = 0.10f;
    float cta_amp_unfavorable = 0.30f;
    float cta_amp_favorable = 0.10f;
    // normalization window applied after synthesis (identity by default)
    float window_low = 0.0f;
    float window_high = 1.0f;

    static GeneratorParams toy();          // 8 x 32 x 32
    static GeneratorParams paper_scale();  // 26 x 224 x 224
};

struct StudyEntry {
    std::string path;  // relative to the manifest directory
    std::string id;
    int label = 0;
};

struct CohortManifest {
    std::uint64_t seed = 0;
    GeneratorParams params;
    std::vector<StudyEntry> studies;
};

void save_manifest(const std::filesystem::path& path,
                   const CohortManifest& manifest);
CohortManifest load_manifest(const std::filesystem::path& path);

// Deterministically synthesizes study `index` of a cohort; the same
// (seed, index, params) always produces the same voxels.
PatientStudy synthesize_study(int index, std::uint64_t seed,
                              const GeneratorParams& params);

// Writes n studies plus manifest.json under out_dir and returns the
// manifest. Labels alternate 0,1,0,1,... so both classes are present.
CohortManifest generate_synthetic_cohort(int n, std::uint64_t seed,
                                         const GeneratorParams& params,
                                         const std::filesystem::path& out_dir);

// Loads every study referenced by a manifest file, resolving relative paths
// against the manifest's directory.
std::vector<PatientStudy> load_cohort(const std::filesystem::path& manifest_path);

// Splits indices into k disjoint folds with per-class counts differing by at
// most 1 across folds. Deterministic given seed.
std::vector<std::vector<int>> stratified_kfold(const std::vector<int>& labels,
                                               int k, std::uint64_t seed);

}  // namespace scanet
