#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sammix/dataio.hpp"

namespace sammix::data {

/// Generator constants. Changing any value changes every golden file derived from
/// the phantoms, so treat the defaults as frozen.
struct PhantomConfig {
    std::size_t slices = 48;
    std::size_t raw_size = 96;
    std::size_t image_size = 256;
    std::array<double, 3> spacing{2.5, 0.8, 0.8};

    double air_hu = -1000.0;
    double body_hu = 20.0;
    double organ_hu = 120.0;
    double noise_sigma_hu = 20.0;
    /// Semi-axes of the body ellipse as fractions of raw_size.
    double body_axis_min = 0.40;
    double body_axis_max = 0.46;
    /// Organ in-plane semi-axes as fractions of raw_size.
    double organ_axis_min = 0.12;
    double organ_axis_max = 0.22;
    /// Organ centre offset from the image centre, fraction of raw_size.
    double organ_offset_max = 0.10;
    /// Organ-bearing slice band as a fraction of the volume.
    double band_fraction_min = 0.25;
    double band_fraction_max = 0.55;
    /// Band centre range as fractions of the slice count.
    double band_center_min = 0.25;
    double band_center_max = 0.75;

    std::size_t distractors_min = 2;
    std::size_t distractors_max = 4;
    double distractor_radius_min = 0.03;
    double distractor_radius_max = 0.07;
    std::vector<double> distractor_hu{-80.0, 220.0};

    double window_width = 400.0;
    double window_center = 40.0;
    double middle_fraction = 0.3;

    /// Fractions of volumes assigned to the test and validation splits.
    double test_fraction = 0.2;
    double val_fraction = 0.1;

    /// Contrast and noise shift standing in for a second scanner/site.
    static PhantomConfig cross_domain();
};

/// A raw HU volume plus its exact organ labels (same S x H x W layout).
struct PhantomVolume {
    RawVolume volume;
    std::vector<std::uint8_t> organ;
};

PhantomVolume make_phantom_volume(const PhantomConfig& config, std::uint64_t seed);

/// Windowing, middle-slice extraction and resizing of one labelled volume.
std::vector<Sample> preprocess_volume(const RawVolume& volume, const std::vector<std::uint8_t>& organ,
                                      std::size_t volume_index, const PhantomConfig& config);

struct PhantomSplits {
    Dataset train, val, test;
};

/// Deterministic per seed; every split is fully labelled.
PhantomSplits generate_phantom_splits(std::size_t n_volumes, std::uint64_t seed, const PhantomConfig& config = {});

/// Writes `<out_dir>/{train,val,test}`; optionally also the raw volumes under `<out_dir>/raw`.
PhantomSplits generate_phantoms(std::size_t n_volumes, std::uint64_t seed, const std::filesystem::path& out_dir,
                                const PhantomConfig& config = {}, bool write_raw = false);

// Raw volume files: `<stem>.json` header + `<stem>.f32` voxels + optional `<stem>.labels.u8`.
void save_raw_volume(const PhantomVolume& volume, const std::filesystem::path& stem);
PhantomVolume load_raw_volume(const std::filesystem::path& stem);

} // namespace sammix::data
