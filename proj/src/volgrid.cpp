#include "tgdm/volgrid.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace tgdm {

static_assert(std::endian::native == std::endian::little,
              "vgf I/O assumes a little-endian host");

using nlohmann::json;

namespace {

void check_geometry(const Index3& shape, const Float3& spacing) {
    for (int i = 0; i < 3; ++i) {
        if (shape[i] < 1) throw DataError("grid shape components must be >= 1");
        if (!(spacing[i] > 0.0)) throw DataError("grid spacing components must be > 0");
    }
}

json header_common(const Index3& shape, const Float3& spacing, const Float3& origin,
                   const char* dtype) {
    json j;
    j["dims"] = {shape[0], shape[1], shape[2]};
    j["dtype"] = dtype;
    j["spacing"] = {spacing[0], spacing[1], spacing[2]};
    j["origin"] = {origin[0], origin[1], origin[2]};
    return j;
}

json read_header(const std::filesystem::path& stem) {
    const auto hpath = stem.string() + ".vgf.json";
    std::ifstream in(hpath);
    if (!in) throw DataError("missing header file: " + hpath);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("bad header " + hpath + ": " + e.what());
    }
    return j;
}

void parse_geometry(const json& j, Index3& shape, Float3& spacing, Float3& origin) {
    for (int i = 0; i < 3; ++i) {
        shape[i] = j.at("dims").at(i).get<int64_t>();
        spacing[i] = j.at("spacing").at(i).get<double>();
        origin[i] = j.at("origin").at(i).get<double>();
    }
}

std::vector<char> read_payload(const std::filesystem::path& stem, size_t expected_bytes) {
    const auto rpath = stem.string() + ".vgf.raw";
    std::ifstream in(rpath, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("missing payload file: " + rpath);
    const auto bytes = static_cast<size_t>(in.tellg());
    if (bytes != expected_bytes)
        throw DataError("payload size mismatch in " + rpath + ": header implies " +
                        std::to_string(expected_bytes) + " bytes, file has " +
                        std::to_string(bytes));
    std::vector<char> buf(bytes);
    in.seekg(0);
    in.read(buf.data(), static_cast<std::streamsize>(bytes));
    if (!in) throw DataError("short read from " + rpath);
    return buf;
}

void write_files(const std::filesystem::path& stem, const json& header, const void* payload,
                 size_t bytes) {
    {
        std::ofstream out(stem.string() + ".vgf.json");
        if (!out) throw DataError("cannot write header next to " + stem.string());
        out << header.dump(2) << "\n";
    }
    std::ofstream out(stem.string() + ".vgf.raw", std::ios::binary);
    if (!out) throw DataError("cannot write payload next to " + stem.string());
    out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
    if (!out) throw DataError("short write to " + stem.string() + ".vgf.raw");
}

double source_coord(int64_t i, double scale) {
    return (static_cast<double>(i) + 0.5) * scale - 0.5;
}

}  // namespace

VolumeGrid VolumeGrid::zeros(Index3 shape, Float3 spacing) {
    VolumeGrid g;
    g.shape = shape;
    g.spacing = spacing;
    g.data.assign(static_cast<size_t>(volume_of(shape)), 0.0f);
    return g;
}

void VolumeGrid::validate() const {
    check_geometry(shape, spacing);
    if (static_cast<int64_t>(data.size()) != numel())
        throw DataError("volume buffer size does not match shape");
    for (float v : data)
        if (!std::isfinite(v)) throw DataError("volume contains non-finite values");
}

LabelGrid LabelGrid::zeros(Index3 shape, int num_classes, Float3 spacing) {
    LabelGrid g;
    g.shape = shape;
    g.spacing = spacing;
    g.num_classes = num_classes;
    g.data.assign(static_cast<size_t>(volume_of(shape)), 0);
    return g;
}

void LabelGrid::validate() const {
    check_geometry(shape, spacing);
    if (num_classes < 1 || num_classes > 256) throw DataError("bad num_classes");
    if (static_cast<int64_t>(data.size()) != numel())
        throw DataError("label buffer size does not match shape");
    for (uint8_t v : data)
        if (v >= num_classes)
            throw DataError("label value " + std::to_string(v) + " >= num_classes " +
                            std::to_string(num_classes));
}

bool BoundingBox::valid_within(const Index3& shape) const {
    for (int i = 0; i < 3; ++i)
        if (lo[i] < 0 || hi[i] > shape[i] || lo[i] >= hi[i]) return false;
    return true;
}

void write_volume(const std::filesystem::path& stem, const VolumeGrid& grid) {
    grid.validate();
    auto j = header_common(grid.shape, grid.spacing, grid.origin, "f32le");
    write_files(stem, j, grid.data.data(), grid.data.size() * sizeof(float));
}

VolumeGrid read_volume(const std::filesystem::path& stem) {
    const json j = read_header(stem);
    if (j.at("dtype").get<std::string>() != "f32le")
        throw DataError("expected dtype f32le in " + stem.string());
    VolumeGrid g;
    parse_geometry(j, g.shape, g.spacing, g.origin);
    check_geometry(g.shape, g.spacing);
    const auto buf = read_payload(stem, static_cast<size_t>(g.numel()) * sizeof(float));
    g.data.resize(static_cast<size_t>(g.numel()));
    std::memcpy(g.data.data(), buf.data(), buf.size());
    g.validate();
    return g;
}

void write_labels(const std::filesystem::path& stem, const LabelGrid& grid) {
    grid.validate();
    auto j = header_common(grid.shape, grid.spacing, grid.origin, "u8");
    j["num_classes"] = grid.num_classes;
    write_files(stem, j, grid.data.data(), grid.data.size());
}

LabelGrid read_labels(const std::filesystem::path& stem) {
    const json j = read_header(stem);
    if (j.at("dtype").get<std::string>() != "u8")
        throw DataError("expected dtype u8 in " + stem.string());
    LabelGrid g;
    parse_geometry(j, g.shape, g.spacing, g.origin);
    g.num_classes = j.at("num_classes").get<int>();
    check_geometry(g.shape, g.spacing);
    const auto buf = read_payload(stem, static_cast<size_t>(g.numel()));
    g.data.assign(buf.begin(), buf.end());
    g.validate();
    return g;
}

namespace {

template <typename Grid>
Grid resample_common(const Grid& grid, const Index3& target, bool trilinear) {
    for (int i = 0; i < 3; ++i)
        if (target[i] < 1) throw std::invalid_argument("resample: target shape must be >= 1");
    Grid out = grid;
    out.shape = target;
    out.data.assign(static_cast<size_t>(volume_of(target)), {});
    double scale[3];
    for (int i = 0; i < 3; ++i) {
        scale[i] = static_cast<double>(grid.shape[i]) / static_cast<double>(target[i]);
        out.spacing[i] = grid.spacing[i] * scale[i];
        out.origin[i] = grid.origin[i] + source_coord(0, scale[i]) * grid.spacing[i];
    }
    const int64_t D = grid.shape[0], H = grid.shape[1], W = grid.shape[2];
    const int64_t TD = target[0], TH = target[1], TW = target[2];

#pragma omp parallel for schedule(static)
    for (int64_t z = 0; z < TD; ++z) {
        const double sz = source_coord(z, scale[0]);
        for (int64_t y = 0; y < TH; ++y) {
            const double sy = source_coord(y, scale[1]);
            for (int64_t x = 0; x < TW; ++x) {
                const double sx = source_coord(x, scale[2]);
                if (trilinear) {
                    const double cz = std::clamp(sz, 0.0, static_cast<double>(D - 1));
                    const double cy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
                    const double cx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
                    const int64_t z0 = std::min(static_cast<int64_t>(cz), D - 1);
                    const int64_t y0 = std::min(static_cast<int64_t>(cy), H - 1);
                    const int64_t x0 = std::min(static_cast<int64_t>(cx), W - 1);
                    const int64_t z1 = std::min(z0 + 1, D - 1), y1 = std::min(y0 + 1, H - 1),
                                  x1 = std::min(x0 + 1, W - 1);
                    const double fz = cz - static_cast<double>(z0);
                    const double fy = cy - static_cast<double>(y0);
                    const double fx = cx - static_cast<double>(x0);
                    auto v = [&](int64_t a, int64_t b, int64_t c) {
                        return static_cast<double>(grid.at(a, b, c));
                    };
                    const double c00 = v(z0, y0, x0) * (1 - fx) + v(z0, y0, x1) * fx;
                    const double c01 = v(z0, y1, x0) * (1 - fx) + v(z0, y1, x1) * fx;
                    const double c10 = v(z1, y0, x0) * (1 - fx) + v(z1, y0, x1) * fx;
                    const double c11 = v(z1, y1, x0) * (1 - fx) + v(z1, y1, x1) * fx;
                    const double c0 = c00 * (1 - fy) + c01 * fy;
                    const double c1 = c10 * (1 - fy) + c11 * fy;
                    out.at(z, y, x) = static_cast<float>(c0 * (1 - fz) + c1 * fz);
                } else {
                    const int64_t nz = std::clamp<int64_t>(std::llround(sz), 0, D - 1);
                    const int64_t ny = std::clamp<int64_t>(std::llround(sy), 0, H - 1);
                    const int64_t nx = std::clamp<int64_t>(std::llround(sx), 0, W - 1);
                    out.at(z, y, x) = grid.at(nz, ny, nx);
                }
            }
        }
    }
    return out;
}

}  // namespace

VolumeGrid resample(const VolumeGrid& grid, const Index3& target_shape, Interp interp) {
    return resample_common(grid, target_shape, interp == Interp::Trilinear);
}

LabelGrid resample(const LabelGrid& grid, const Index3& target_shape, Interp interp) {
    if (interp == Interp::Trilinear)
        throw std::invalid_argument("resample: labels must use nearest interpolation");
    return resample_common(grid, target_shape, false);
}

BoundingBox box_from_mask(const LabelGrid& mask, double margin_frac) {
    Index3 lo{mask.shape[0], mask.shape[1], mask.shape[2]};
    Index3 hi{0, 0, 0};
    bool any = false;
    for (int64_t z = 0; z < mask.shape[0]; ++z)
        for (int64_t y = 0; y < mask.shape[1]; ++y)
            for (int64_t x = 0; x < mask.shape[2]; ++x)
                if (mask.at(z, y, x) != 0) {
                    any = true;
                    const Index3 p{z, y, x};
                    for (int i = 0; i < 3; ++i) {
                        lo[i] = std::min(lo[i], p[i]);
                        hi[i] = std::max(hi[i], p[i] + 1);
                    }
                }
    if (!any) throw DataError("box_from_mask: mask has no foreground voxels");
    BoundingBox box{lo, hi};
    for (int i = 0; i < 3; ++i) {
        const int64_t margin = std::llround(margin_frac * static_cast<double>(hi[i] - lo[i]));
        box.lo[i] = std::max<int64_t>(0, lo[i] - margin);
        box.hi[i] = std::min(mask.shape[i], hi[i] + margin);
    }
    return box;
}

namespace {

template <typename Grid>
Grid crop_only(const Grid& grid, const BoundingBox& box) {
    if (!box.valid_within(grid.shape)) throw std::invalid_argument("crop: box outside grid");
    Grid out = grid;
    out.shape = box.size();
    out.data.assign(static_cast<size_t>(volume_of(out.shape)), {});
    for (int i = 0; i < 3; ++i)
        out.origin[i] = grid.origin[i] + static_cast<double>(box.lo[i]) * grid.spacing[i];
    for (int64_t z = 0; z < out.shape[0]; ++z)
        for (int64_t y = 0; y < out.shape[1]; ++y)
            for (int64_t x = 0; x < out.shape[2]; ++x)
                out.at(z, y, x) = grid.at(z + box.lo[0], y + box.lo[1], x + box.lo[2]);
    return out;
}

}  // namespace

VolumeGrid crop_resize(const VolumeGrid& volume, const BoundingBox& box,
                       const Index3& out_shape) {
    return resample(crop_only(volume, box), out_shape, Interp::Trilinear);
}

LabelGrid crop_resize(const LabelGrid& labels, const BoundingBox& box, const Index3& out_shape) {
    return resample(crop_only(labels, box), out_shape, Interp::Nearest);
}

LabelGrid paste_back(const LabelGrid& cropped_pred, const BoundingBox& box,
                     const Index3& full_shape) {
    if (!box.valid_within(full_shape))
        throw std::invalid_argument("paste_back: box outside canvas");
    LabelGrid canvas =
        LabelGrid::zeros(full_shape, cropped_pred.num_classes, cropped_pred.spacing);
    const LabelGrid restored = resample(cropped_pred, box.size(), Interp::Nearest);
    for (int64_t z = 0; z < restored.shape[0]; ++z)
        for (int64_t y = 0; y < restored.shape[1]; ++y)
            for (int64_t x = 0; x < restored.shape[2]; ++x)
                canvas.at(z + box.lo[0], y + box.lo[1], x + box.lo[2]) = restored.at(z, y, x);
    return canvas;
}

}  // namespace tgdm
