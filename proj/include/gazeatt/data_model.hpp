#pragma once

// Shared array/dataset types and the on-disk container formats.
// Containers are a `<name>.hdr.json` text header plus a `<name>.raw` payload
// of little-endian float32 in C order, channel-major.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gazeatt {

// Voxel convention everywhere: index order (z = depth, y = width axis,
// x = height axis); stated in every header to avoid silent transposes.
using Shape3 = std::array<int, 3>;  // (D, W, H)

inline std::size_t shape_voxels(const Shape3& s) {
    return static_cast<std::size_t>(s[0]) * s[1] * s[2];
}

struct ImageVolume {
    int channels = 0;
    Shape3 shape{};            // (D, W, H); D == 1 in 2D mode
    std::vector<float> data;   // C-order, channel-major
    std::optional<std::array<float, 3>> spacing;

    std::size_t voxels() const { return shape_voxels(shape); }
    void validate() const;  // throws std::invalid_argument on violation
    float at(int c, int z, int y, int x) const {
        return data[((static_cast<std::size_t>(c) * shape[0] + z) * shape[1] + y) * shape[2] + x];
    }
};

struct SegmentationMask {
    int regions = 0;
    Shape3 shape{};
    std::vector<float> data;   // ground truth {0,1}; predictions soft [0,1]

    std::size_t voxels() const { return shape_voxels(shape); }
    void validate(bool binary) const;
    float at(int r, int z, int y, int x) const {
        return data[((static_cast<std::size_t>(r) * shape[0] + z) * shape[1] + y) * shape[2] + x];
    }
};

struct GazeSample {
    double t = 0;         // milliseconds, strictly increasing within a sequence
    double x = 0, y = 0, z = 0;  // voxel coordinates
    double duration = 0;  // milliseconds
    enum class Kind { raw, fixation } kind = Kind::raw;
};

struct FixationSequence {
    std::vector<GazeSample> samples;
};

struct GazeMap {
    Shape3 shape{};
    std::vector<float> data;  // values in [0,1]

    std::size_t voxels() const { return shape_voxels(shape); }
    void validate() const;
    float at(int z, int y, int x) const {
        return data[(static_cast<std::size_t>(z) * shape[1] + y) * shape[2] + x];
    }
    float& at(int z, int y, int x) {
        return data[(static_cast<std::size_t>(z) * shape[1] + y) * shape[2] + x];
    }
};

struct DatasetRecord {
    std::string id;
    ImageVolume volume;
    std::optional<SegmentationMask> mask;
    std::optional<std::vector<float>> labels;  // per-class {0,1}
    std::optional<FixationSequence> fixations;
    std::optional<GazeMap> gaze_map;

    void validate() const;  // at least one of {mask, labels}; gaze shape divides volume shape
};

// ---- container I/O ----
// `path` is the basename; `<path>.hdr.json` and `<path>.raw` are produced.
// Payloads round-trip bitwise. Non-finite data is refused on both ends.
void write_volume(const ImageVolume& v, const std::string& path);
ImageVolume read_volume(const std::string& path);

void write_mask(const SegmentationMask& m, const std::string& path);
SegmentationMask read_mask(const std::string& path);

void write_gaze_map(const GazeMap& g, const std::string& path);
GazeMap read_gaze_map(const std::string& path);

// ---- fixation I/O ----
// Comma-separated text, header row `t,x,y,z,duration` (z optional in 2D).
// `bounds`, when given, rejects out-of-range coordinates naming the row.
void write_fixations(const FixationSequence& f, const std::string& path);
FixationSequence read_fixations(const std::string& path,
                                std::optional<Shape3> bounds = std::nullopt);

}  // namespace gazeatt
