#include "abseg/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "abseg/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace abseg {

void LabelMap::validate() const {
    if (num_classes < 1) throw std::invalid_argument("LabelMap: num_classes must be >= 1");
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw std::invalid_argument("LabelMap: voxel " + std::to_string(i) + " has value " +
                                        std::to_string(labels[i]) + " outside [0," +
                                        std::to_string(num_classes - 1) + "]");
    }
}

void MultiModalVolume::validate() const {
    if (ct.shape() != t1ce.shape() || ct.shape() != flair.shape())
        throw std::invalid_argument("MultiModalVolume[" + case_id + "]: modality shapes differ");
    for (double s : spacing)
        if (!(s > 0.0))
            throw std::invalid_argument("MultiModalVolume[" + case_id + "]: nonpositive spacing");
    for (const Tensor* t : {&ct, &t1ce, &flair})
        for (int64_t i = 0; i < t->numel(); ++i)
            if (!std::isfinite((*t)[i]))
                throw std::invalid_argument("MultiModalVolume[" + case_id + "]: non-finite voxel");
}

}  // namespace abseg

namespace abseg::volume_io {

namespace {

// ---------------------------------------------------------------------------
// Byte helpers. All on-disk numeric data is little-endian; this code assumes
// a little-endian host (checked once at load).
// ---------------------------------------------------------------------------

void require_little_endian() {
    const uint16_t probe = 0x0102;
    uint8_t first;
    std::memcpy(&first, &probe, 1);
    if (first != 0x02) throw std::runtime_error("volume_io: big-endian hosts are not supported");
}

std::vector<char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("volume_io: cannot open file: " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff n = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<char> bytes(static_cast<size_t>(n));
    in.read(bytes.data(), n);
    if (!in) throw std::runtime_error("volume_io: short read: " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const void* data, size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("volume_io: cannot open file for writing: " + path);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw std::runtime_error("volume_io: short write: " + path);
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// ---------------------------------------------------------------------------
// raw + JSON sidecar format
// ---------------------------------------------------------------------------

std::string sidecar_path(const std::string& bin_path) {
    if (ends_with(bin_path, ".bin")) return bin_path.substr(0, bin_path.size() - 4) + ".json";
    return bin_path + ".json";
}

struct RawHeader {
    std::array<int64_t, 3> shape;
    std::string dtype;
    Spacing spacing{1.0, 1.0, 1.0};
    int num_classes = 0;  // only for label maps
};

RawHeader read_sidecar(const std::string& bin_path) {
    const std::string jpath = sidecar_path(bin_path);
    std::ifstream in(jpath);
    if (!in) throw std::runtime_error("volume_io: missing sidecar: " + jpath);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("volume_io: bad sidecar JSON " + jpath + ": " + e.what());
    }
    RawHeader h;
    try {
        auto shape = j.at("shape").get<std::vector<int64_t>>();
        if (shape.size() != 3)
            throw std::runtime_error("field 'shape' must have 3 entries");
        std::copy(shape.begin(), shape.end(), h.shape.begin());
        h.dtype = j.at("dtype").get<std::string>();
        if (j.contains("spacing")) {
            auto sp = j.at("spacing").get<std::vector<double>>();
            if (sp.size() != 3) throw std::runtime_error("field 'spacing' must have 3 entries");
            std::copy(sp.begin(), sp.end(), h.spacing.begin());
        }
        if (j.contains("order") && j.at("order").get<std::string>() != "xyz-fastest-first")
            throw std::runtime_error("field 'order' must be xyz-fastest-first");
        if (j.contains("num_classes")) h.num_classes = j.at("num_classes").get<int>();
    } catch (const std::exception& e) {
        throw std::runtime_error("volume_io: sidecar " + jpath + ": " + e.what());
    }
    return h;
}

void write_sidecar(const std::string& bin_path, const RawHeader& h) {
    json j;
    j["shape"] = h.shape;
    j["dtype"] = h.dtype;
    j["spacing"] = h.spacing;
    j["order"] = "xyz-fastest-first";
    if (h.num_classes > 0) j["num_classes"] = h.num_classes;
    std::ofstream out(sidecar_path(bin_path), std::ios::trunc);
    if (!out) throw std::runtime_error("volume_io: cannot write sidecar for " + bin_path);
    out << j.dump(2) << "\n";
}

// On disk x varies fastest; in memory z does. These two loops are the only
// place the order changes.
template <typename T, typename Store>
void disk_to_grid(const T* src, const std::array<int64_t, 3>& sh, Store&& store) {
    const int64_t X = sh[0], Y = sh[1], Z = sh[2];
    int64_t i = 0;
    for (int64_t z = 0; z < Z; ++z)
        for (int64_t y = 0; y < Y; ++y)
            for (int64_t x = 0; x < X; ++x) store(x, y, z, src[i++]);
}

template <typename T, typename Fetch>
std::vector<T> grid_to_disk(const std::array<int64_t, 3>& sh, Fetch&& fetch) {
    const int64_t X = sh[0], Y = sh[1], Z = sh[2];
    std::vector<T> out(static_cast<size_t>(X * Y * Z));
    int64_t i = 0;
    for (int64_t z = 0; z < Z; ++z)
        for (int64_t y = 0; y < Y; ++y)
            for (int64_t x = 0; x < X; ++x) out[static_cast<size_t>(i++)] = fetch(x, y, z);
    return out;
}

template <typename T>
void check_payload_size(const std::string& path, size_t bytes, int64_t voxels) {
    if (bytes != static_cast<size_t>(voxels) * sizeof(T))
        throw std::runtime_error("volume_io: " + path + ": payload has " + std::to_string(bytes) +
                                 " bytes, header declares " + std::to_string(voxels) + " voxels of " +
                                 std::to_string(sizeof(T)) + " bytes");
}

Volume load_raw_volume(const std::string& path) {
    const RawHeader h = read_sidecar(path);
    const std::vector<char> bytes = read_file_bytes(path);
    const int64_t n = h.shape[0] * h.shape[1] * h.shape[2];
    Volume v(Tensor({h.shape[0], h.shape[1], h.shape[2]}), h.spacing);
    if (h.dtype == "float64") {
        check_payload_size<double>(path, bytes.size(), n);
        const double* src = reinterpret_cast<const double*>(bytes.data());
        disk_to_grid(src, h.shape, [&](int64_t x, int64_t y, int64_t z, double val) { v.at(x, y, z) = val; });
    } else if (h.dtype == "float32") {
        check_payload_size<float>(path, bytes.size(), n);
        const float* src = reinterpret_cast<const float*>(bytes.data());
        disk_to_grid(src, h.shape, [&](int64_t x, int64_t y, int64_t z, float val) { v.at(x, y, z) = val; });
    } else {
        throw std::runtime_error("volume_io: " + path + ": unsupported dtype '" + h.dtype +
                                 "' for a scalar volume");
    }
    return v;
}

void save_raw_volume(const Volume& v, const std::string& path) {
    RawHeader h;
    h.shape = {v.nx(), v.ny(), v.nz()};
    h.dtype = "float64";
    h.spacing = v.spacing;
    write_sidecar(path, h);
    auto disk = grid_to_disk<double>(h.shape, [&](int64_t x, int64_t y, int64_t z) { return v.at(x, y, z); });
    write_file_bytes(path, disk.data(), disk.size() * sizeof(double));
}

LabelMap load_raw_labelmap(const std::string& path) {
    const RawHeader h = read_sidecar(path);
    if (h.dtype != "int32")
        throw std::runtime_error("volume_io: " + path + ": unsupported dtype '" + h.dtype +
                                 "' for a label map (expected int32)");
    const std::vector<char> bytes = read_file_bytes(path);
    const int64_t n = h.shape[0] * h.shape[1] * h.shape[2];
    check_payload_size<int32_t>(path, bytes.size(), n);
    int max_label = 0;
    const int32_t* src = reinterpret_cast<const int32_t*>(bytes.data());
    LabelMap lm(h.shape, 1, h.spacing);
    disk_to_grid(src, h.shape, [&](int64_t x, int64_t y, int64_t z, int32_t val) {
        lm.at(x, y, z) = val;
        max_label = std::max(max_label, static_cast<int>(val));
    });
    lm.num_classes = h.num_classes > 0 ? h.num_classes : max_label + 1;
    lm.validate();
    return lm;
}

void save_raw_labelmap(const LabelMap& lm, const std::string& path) {
    RawHeader h;
    h.shape = lm.shape;
    h.dtype = "int32";
    h.spacing = lm.spacing;
    h.num_classes = lm.num_classes;
    write_sidecar(path, h);
    auto disk = grid_to_disk<int32_t>(h.shape, [&](int64_t x, int64_t y, int64_t z) { return lm.at(x, y, z); });
    write_file_bytes(path, disk.data(), disk.size() * sizeof(int32_t));
}

// ---------------------------------------------------------------------------
// NIfTI-1 (.nii, .nii.gz), datatype subset, single-file magic "n+1" only.
// ---------------------------------------------------------------------------

#pragma pack(push, 1)
struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtInt32 = 8;
constexpr int16_t kDtFloat32 = 16;
constexpr int16_t kDtFloat64 = 64;

std::vector<char> read_maybe_gz(const std::string& path) {
    if (!fs::exists(path)) throw std::runtime_error("volume_io: missing file: " + path);
    if (!ends_with(path, ".gz")) return read_file_bytes(path);
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("volume_io: cannot open gzip file: " + path);
    std::vector<char> out;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    const bool bad = n < 0;
    gzclose(f);
    if (bad) throw std::runtime_error("volume_io: gzip read error: " + path);
    return out;
}

void write_maybe_gz(const std::string& path, const std::vector<char>& bytes) {
    if (!ends_with(path, ".gz")) {
        write_file_bytes(path, bytes.data(), bytes.size());
        return;
    }
    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw std::runtime_error("volume_io: cannot open gzip file for writing: " + path);
    const int written = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    if (written != static_cast<int>(bytes.size()))
        throw std::runtime_error("volume_io: gzip write error: " + path);
}

template <typename T>
void byteswap_inplace(T* p, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        char* b = reinterpret_cast<char*>(p + i);
        std::reverse(b, b + sizeof(T));
    }
}

struct NiftiData {
    std::array<int64_t, 3> shape;
    Spacing spacing;
    int16_t datatype;
    std::vector<char> payload;  // host-endian, x fastest
    double scl_slope = 1.0;
    double scl_inter = 0.0;
};

NiftiData read_nifti(const std::string& path) {
    std::vector<char> bytes = read_maybe_gz(path);
    if (bytes.size() < sizeof(Nifti1Header))
        throw std::runtime_error("volume_io: " + path + ": truncated NIfTI header");
    Nifti1Header hdr;
    std::memcpy(&hdr, bytes.data(), sizeof(hdr));

    bool swapped = false;
    if (hdr.sizeof_hdr != 348) {
        byteswap_inplace(&hdr.sizeof_hdr, 1);
        if (hdr.sizeof_hdr != 348)
            throw std::runtime_error("volume_io: " + path + ": field sizeof_hdr is not 348");
        swapped = true;
        std::memcpy(&hdr, bytes.data(), sizeof(hdr));
        byteswap_inplace(hdr.dim, 8);
        byteswap_inplace(&hdr.datatype, 1);
        byteswap_inplace(&hdr.bitpix, 1);
        byteswap_inplace(hdr.pixdim, 8);
        byteswap_inplace(&hdr.vox_offset, 1);
        byteswap_inplace(&hdr.scl_slope, 1);
        byteswap_inplace(&hdr.scl_inter, 1);
    }
    if (std::strncmp(hdr.magic, "n+1", 3) != 0)
        throw std::runtime_error("volume_io: " + path + ": field magic is not 'n+1' (two-file NIfTI unsupported)");
    if (hdr.dim[0] < 3)
        throw std::runtime_error("volume_io: " + path + ": field dim[0] < 3");
    for (int d = 4; d <= hdr.dim[0] && d < 8; ++d)
        if (hdr.dim[d] > 1)
            throw std::runtime_error("volume_io: " + path + ": field dim[" + std::to_string(d) +
                                     "] > 1 (time/vector series unsupported)");

    NiftiData nd;
    nd.shape = {hdr.dim[1], hdr.dim[2], hdr.dim[3]};
    nd.spacing = {hdr.pixdim[1], hdr.pixdim[2], hdr.pixdim[3]};
    nd.datatype = hdr.datatype;
    nd.scl_slope = (hdr.scl_slope == 0.0f) ? 1.0 : static_cast<double>(hdr.scl_slope);
    nd.scl_inter = static_cast<double>(hdr.scl_inter);

    const size_t offset = static_cast<size_t>(hdr.vox_offset);
    if (offset < sizeof(Nifti1Header) || offset > bytes.size())
        throw std::runtime_error("volume_io: " + path + ": field vox_offset out of range");
    nd.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());

    const int64_t n = nd.shape[0] * nd.shape[1] * nd.shape[2];
    const size_t elem =
        nd.datatype == kDtUint8 ? 1 : nd.datatype == kDtInt16 ? 2 : nd.datatype == kDtInt32 ? 4
        : nd.datatype == kDtFloat32 ? 4 : nd.datatype == kDtFloat64 ? 8 : 0;
    if (elem == 0)
        throw std::runtime_error("volume_io: " + path + ": field datatype " +
                                 std::to_string(nd.datatype) + " unsupported");
    if (nd.payload.size() < static_cast<size_t>(n) * elem)
        throw std::runtime_error("volume_io: " + path + ": payload smaller than header shape " +
                                 shape_to_string({nd.shape[0], nd.shape[1], nd.shape[2]}));
    nd.payload.resize(static_cast<size_t>(n) * elem);
    if (swapped) {
        if (elem == 2) byteswap_inplace(reinterpret_cast<int16_t*>(nd.payload.data()), n);
        if (elem == 4) byteswap_inplace(reinterpret_cast<int32_t*>(nd.payload.data()), n);
        if (elem == 8) byteswap_inplace(reinterpret_cast<int64_t*>(nd.payload.data()), n);
    }
    return nd;
}

template <typename T>
void nifti_payload_to_grid(const NiftiData& nd, Volume& v) {
    const T* src = reinterpret_cast<const T*>(nd.payload.data());
    disk_to_grid(src, nd.shape, [&](int64_t x, int64_t y, int64_t z, T val) {
        v.at(x, y, z) = nd.scl_slope * static_cast<double>(val) + nd.scl_inter;
    });
}

Volume load_nifti_volume(const std::string& path) {
    const NiftiData nd = read_nifti(path);
    Volume v(Tensor({nd.shape[0], nd.shape[1], nd.shape[2]}), nd.spacing);
    switch (nd.datatype) {
        case kDtUint8: nifti_payload_to_grid<uint8_t>(nd, v); break;
        case kDtInt16: nifti_payload_to_grid<int16_t>(nd, v); break;
        case kDtInt32: nifti_payload_to_grid<int32_t>(nd, v); break;
        case kDtFloat32: nifti_payload_to_grid<float>(nd, v); break;
        case kDtFloat64: nifti_payload_to_grid<double>(nd, v); break;
        default: break;  // unreachable, read_nifti validated
    }
    return v;
}

Nifti1Header make_nifti_header(const std::array<int64_t, 3>& shape, const Spacing& spacing,
                               int16_t datatype, int16_t bitpix) {
    Nifti1Header hdr;
    std::memset(&hdr, 0, sizeof(hdr));
    hdr.sizeof_hdr = 348;
    hdr.regular = 'r';
    hdr.dim[0] = 3;
    hdr.dim[1] = static_cast<int16_t>(shape[0]);
    hdr.dim[2] = static_cast<int16_t>(shape[1]);
    hdr.dim[3] = static_cast<int16_t>(shape[2]);
    for (int d = 4; d < 8; ++d) hdr.dim[d] = 1;
    hdr.datatype = datatype;
    hdr.bitpix = bitpix;
    hdr.pixdim[0] = 1.0f;
    hdr.pixdim[1] = static_cast<float>(spacing[0]);
    hdr.pixdim[2] = static_cast<float>(spacing[1]);
    hdr.pixdim[3] = static_cast<float>(spacing[2]);
    hdr.vox_offset = 352.0f;
    hdr.scl_slope = 1.0f;
    hdr.scl_inter = 0.0f;
    hdr.xyzt_units = 2;  // NIFTI_UNITS_MM
    std::memcpy(hdr.magic, "n+1", 4);
    return hdr;
}

template <typename T>
void write_nifti(const std::string& path, const std::array<int64_t, 3>& shape, const Spacing& spacing,
                 int16_t datatype, const std::vector<T>& disk_order) {
    for (int64_t d : shape)
        if (d > 32767)
            throw std::runtime_error("volume_io: " + path + ": dimension exceeds NIfTI-1 int16 limit");
    const Nifti1Header hdr = make_nifti_header(shape, spacing, datatype, static_cast<int16_t>(8 * sizeof(T)));
    std::vector<char> bytes(352, 0);
    std::memcpy(bytes.data(), &hdr, sizeof(hdr));
    const char* payload = reinterpret_cast<const char*>(disk_order.data());
    bytes.insert(bytes.end(), payload, payload + disk_order.size() * sizeof(T));
    write_maybe_gz(path, bytes);
}

}  // namespace

VolumeFormat format_from_path(const std::string& path) {
    if (ends_with(path, ".nii") || ends_with(path, ".nii.gz")) return VolumeFormat::nifti1;
    if (ends_with(path, ".bin")) return VolumeFormat::raw_json;
    throw std::runtime_error("volume_io: cannot infer format from path: " + path);
}

Volume load_volume(const std::string& path, VolumeFormat format) {
    require_little_endian();
    if (!fs::exists(path)) throw std::runtime_error("volume_io: missing file: " + path);
    return format == VolumeFormat::nifti1 ? load_nifti_volume(path) : load_raw_volume(path);
}

Volume load_volume(const std::string& path) { return load_volume(path, format_from_path(path)); }

void save_volume(const Volume& v, const std::string& path, VolumeFormat format) {
    require_little_endian();
    if (format == VolumeFormat::raw_json) {
        save_raw_volume(v, path);
    } else {
        auto disk = grid_to_disk<double>({v.nx(), v.ny(), v.nz()},
                                         [&](int64_t x, int64_t y, int64_t z) { return v.at(x, y, z); });
        write_nifti(path, {v.nx(), v.ny(), v.nz()}, v.spacing, kDtFloat64, disk);
    }
}

void save_volume(const Volume& v, const std::string& path) { save_volume(v, path, format_from_path(path)); }

LabelMap load_labelmap(const std::string& path, VolumeFormat format) {
    require_little_endian();
    if (!fs::exists(path)) throw std::runtime_error("volume_io: missing file: " + path);
    if (format == VolumeFormat::raw_json) return load_raw_labelmap(path);

    const NiftiData nd = read_nifti(path);
    if (nd.datatype != kDtInt32 && nd.datatype != kDtInt16 && nd.datatype != kDtUint8)
        throw std::runtime_error("volume_io: " + path + ": field datatype " + std::to_string(nd.datatype) +
                                 " is not an integer label type");
    LabelMap lm(nd.shape, 1, nd.spacing);
    int max_label = 0;
    auto store = [&](int64_t x, int64_t y, int64_t z, int64_t val) {
        lm.at(x, y, z) = static_cast<int32_t>(val);
        max_label = std::max<int>(max_label, static_cast<int>(val));
    };
    if (nd.datatype == kDtUint8)
        disk_to_grid(reinterpret_cast<const uint8_t*>(nd.payload.data()), nd.shape, store);
    else if (nd.datatype == kDtInt16)
        disk_to_grid(reinterpret_cast<const int16_t*>(nd.payload.data()), nd.shape, store);
    else
        disk_to_grid(reinterpret_cast<const int32_t*>(nd.payload.data()), nd.shape, store);
    lm.num_classes = max_label + 1;
    lm.validate();
    return lm;
}

LabelMap load_labelmap(const std::string& path) { return load_labelmap(path, format_from_path(path)); }

void save_labelmap(const LabelMap& labels, const std::string& path, VolumeFormat format) {
    require_little_endian();
    labels.validate();
    if (format == VolumeFormat::raw_json) {
        save_raw_labelmap(labels, path);
    } else {
        auto disk = grid_to_disk<int32_t>(labels.shape,
                                          [&](int64_t x, int64_t y, int64_t z) { return labels.at(x, y, z); });
        write_nifti(path, labels.shape, labels.spacing, kDtInt32, disk);
    }
}

void save_labelmap(const LabelMap& labels, const std::string& path) {
    save_labelmap(labels, path, format_from_path(path));
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    for (const auto& e : entries) {
        if (e.case_id.empty()) throw std::invalid_argument("manifest: empty case_id");
        if (!ids.insert(e.case_id).second)
            throw std::invalid_argument("manifest: duplicate case_id " + e.case_id);
        if (e.split != "train" && e.split != "test")
            throw std::invalid_argument("manifest: case " + e.case_id + " has split '" + e.split +
                                        "' (expected train or test)");
        if (e.split == "train" && !e.has_label())
            throw std::invalid_argument("manifest: train case " + e.case_id + " lacks a label path");
        if (e.ct_path.empty() || e.t1ce_path.empty() || e.flair_path.empty())
            throw std::invalid_argument("manifest: case " + e.case_id + " is missing a modality path");
    }
    if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes)
        throw std::invalid_argument("manifest: class_names size does not match num_classes");
}

std::vector<const CaseEntry*> DatasetManifest::train_entries() const {
    std::vector<const CaseEntry*> out;
    for (const auto& e : entries)
        if (e.split == "train") out.push_back(&e);
    return out;
}

std::vector<const CaseEntry*> DatasetManifest::test_entries() const {
    std::vector<const CaseEntry*> out;
    for (const auto& e : entries)
        if (e.split == "test") out.push_back(&e);
    return out;
}

const CaseEntry& DatasetManifest::find_case(const std::string& case_id) const {
    for (const auto& e : entries)
        if (e.case_id == case_id) return e;
    throw std::runtime_error("manifest: unknown case_id " + case_id);
}

std::string DatasetManifest::resolve(const std::string& path) const {
    if (path.empty() || base_dir.empty()) return path;
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(base_dir) / p).string();
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("manifest: bad JSON in " + path + ": " + e.what());
    }
    DatasetManifest m;
    m.num_classes = j.value("num_classes", 0);
    if (j.contains("class_names")) m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& je : j.at("cases")) {
        CaseEntry e;
        e.case_id = je.at("case_id").get<std::string>();
        e.ct_path = je.at("ct").get<std::string>();
        e.t1ce_path = je.at("t1ce").get<std::string>();
        e.flair_path = je.at("flair").get<std::string>();
        e.label_path = je.value("label", std::string());
        e.split = je.value("split", std::string("train"));
        m.entries.push_back(std::move(e));
    }
    m.base_dir = fs::path(path).parent_path().string();
    m.validate();
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    m.validate();
    json j;
    j["num_classes"] = m.num_classes;
    if (!m.class_names.empty()) j["class_names"] = m.class_names;
    j["cases"] = json::array();
    for (const auto& e : m.entries) {
        json je;
        je["case_id"] = e.case_id;
        je["ct"] = e.ct_path;
        je["t1ce"] = e.t1ce_path;
        je["flair"] = e.flair_path;
        if (e.has_label()) je["label"] = e.label_path;
        je["split"] = e.split;
        j["cases"].push_back(je);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("manifest: cannot write " + path);
    out << j.dump(2) << "\n";
}

MultiModalVolume load_case_volume(const DatasetManifest& m, const CaseEntry& e) {
    MultiModalVolume v;
    v.case_id = e.case_id;
    Volume ct = load_volume(m.resolve(e.ct_path));
    Volume t1 = load_volume(m.resolve(e.t1ce_path));
    Volume fl = load_volume(m.resolve(e.flair_path));
    v.spacing = ct.spacing;
    v.ct = std::move(ct.grid);
    v.t1ce = std::move(t1.grid);
    v.flair = std::move(fl.grid);
    v.validate();
    return v;
}

std::optional<LabelMap> load_case_labels(const DatasetManifest& m, const CaseEntry& e) {
    if (!e.has_label()) return std::nullopt;
    LabelMap lm = load_labelmap(m.resolve(e.label_path));
    if (m.num_classes > 0) {
        lm.num_classes = m.num_classes;
        lm.validate();
    }
    return lm;
}

// ---------------------------------------------------------------------------
// Cross-validation folds
// ---------------------------------------------------------------------------

std::vector<std::string> FoldAssignment::cases_in_fold(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of)
        if (f == fold) out.push_back(id);
    return out;
}

std::vector<std::string> FoldAssignment::cases_not_in_fold(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of)
        if (f != fold) out.push_back(id);
    return out;
}

FoldAssignment make_folds(const DatasetManifest& manifest, int k, uint64_t seed) {
    if (k < 2) throw std::invalid_argument("make_folds: k must be >= 2");
    std::vector<std::string> ids;
    for (const auto* e : manifest.train_entries()) ids.push_back(e->case_id);
    if (static_cast<int>(ids.size()) < k)
        throw std::invalid_argument("make_folds: only " + std::to_string(ids.size()) +
                                    " train cases for k=" + std::to_string(k));
    std::sort(ids.begin(), ids.end());

    Rng rng(seed);
    for (size_t i = ids.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.uniform_index(i));
        std::swap(ids[i - 1], ids[j]);
    }

    FoldAssignment fa;
    fa.k = k;
    for (size_t i = 0; i < ids.size(); ++i) fa.fold_of[ids[i]] = static_cast<int>(i % static_cast<size_t>(k));
    return fa;
}

}  // namespace abseg::volume_io
