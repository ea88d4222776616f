#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tgdm/common.hpp"

namespace tgdm {

/// 3-D scalar intensity grid, z-major (shape = D,H,W = z,y,x), with
/// millimeter spacing/origin metadata.
struct VolumeGrid {
    std::vector<float> data;
    Index3 shape{0, 0, 0};
    Float3 spacing{1.0, 1.0, 1.0};
    Float3 origin{0.0, 0.0, 0.0};

    int64_t numel() const { return volume_of(shape); }
    float& at(int64_t z, int64_t y, int64_t x) {
        return data[(z * shape[1] + y) * shape[2] + x];
    }
    float at(int64_t z, int64_t y, int64_t x) const {
        return data[(z * shape[1] + y) * shape[2] + x];
    }

    static VolumeGrid zeros(Index3 shape, Float3 spacing = {1, 1, 1});
    /// Throws DataError unless shape/spacing are sane, the buffer matches,
    /// and every voxel is finite.
    void validate() const;
};

/// Integer class-id grid; ids live in [0, num_classes).
struct LabelGrid {
    std::vector<uint8_t> data;
    Index3 shape{0, 0, 0};
    Float3 spacing{1.0, 1.0, 1.0};
    Float3 origin{0.0, 0.0, 0.0};
    int num_classes = 2;

    int64_t numel() const { return volume_of(shape); }
    uint8_t& at(int64_t z, int64_t y, int64_t x) {
        return data[(z * shape[1] + y) * shape[2] + x];
    }
    uint8_t at(int64_t z, int64_t y, int64_t x) const {
        return data[(z * shape[1] + y) * shape[2] + x];
    }

    static LabelGrid zeros(Index3 shape, int num_classes, Float3 spacing = {1, 1, 1});
    void validate() const;
};

/// Axis-aligned voxel box, lo inclusive / hi exclusive.
struct BoundingBox {
    Index3 lo{0, 0, 0};
    Index3 hi{0, 0, 0};

    Index3 size() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
    bool valid_within(const Index3& shape) const;
};

// ---- file I/O (.vgf.json header + .vgf.raw little-endian payload) ---------

/// `stem` is the path without the .vgf.* suffix; writes stem.vgf.json and
/// stem.vgf.raw. Intensities are 32-bit little-endian floats, labels are u8.
void write_volume(const std::filesystem::path& stem, const VolumeGrid& grid);
VolumeGrid read_volume(const std::filesystem::path& stem);
void write_labels(const std::filesystem::path& stem, const LabelGrid& grid);
LabelGrid read_labels(const std::filesystem::path& stem);

// ---- geometry --------------------------------------------------------------

enum class Interp { Trilinear, Nearest };

/// Resample to target_shape. Output voxel centers map to input coordinate
/// (i + 0.5) * scale - 0.5 per axis (half-pixel alignment); borders clamp.
VolumeGrid resample(const VolumeGrid& grid, const Index3& target_shape,
                    Interp interp = Interp::Trilinear);
/// Labels resample with nearest neighbor only; Trilinear throws.
LabelGrid resample(const LabelGrid& grid, const Index3& target_shape,
                   Interp interp = Interp::Nearest);

/// Tight box over nonzero voxels, expanded by margin_frac of the box size on
/// each side and clamped to the grid. Throws DataError on an empty mask.
BoundingBox box_from_mask(const LabelGrid& mask, double margin_frac);

VolumeGrid crop_resize(const VolumeGrid& volume, const BoundingBox& box,
                       const Index3& out_shape);
LabelGrid crop_resize(const LabelGrid& labels, const BoundingBox& box,
                      const Index3& out_shape);

/// Nearest-resize the cropped prediction back to the box extent and paste it
/// into a zero (background) canvas of full_shape.
LabelGrid paste_back(const LabelGrid& cropped_pred, const BoundingBox& box,
                     const Index3& full_shape);

}  // namespace tgdm
