#include "abseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

using json = nlohmann::json;

namespace abseg::metrics {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_shapes(const LabelMap& a, const LabelMap& b, const char* op) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(op) + ": label map shapes differ");
}
}  // namespace

double dice_score(const LabelMap& pred, const LabelMap& gt, int class_id, const MetricPolicy& policy) {
    check_shapes(pred, gt, "dice_score");
    int64_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < pred.labels.size(); ++i) {
        const bool pa = pred.labels[i] == class_id;
        const bool pb = gt.labels[i] == class_id;
        inter += (pa && pb) ? 1 : 0;
        a += pa ? 1 : 0;
        b += pb ? 1 : 0;
    }
    if (a == 0 && b == 0) return policy.empty_empty;
    if (a == 0 || b == 0) return policy.one_empty;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

std::vector<SurfaceFace> extract_surface(const LabelMap& mask, int class_id, const Spacing& spacing) {
    // Face centers live on the half-voxel lattice: voxel (x,y,z) has center
    // ((x+.5)sx, (y+.5)sy, (z+.5)sz), so its +x face center is
    // ((x+1)sx, (y+.5)sy, (z+.5)sz). All coordinates are integer multiples
    // of half the pitch, which the accelerated distance path relies on.
    std::vector<SurfaceFace> faces;
    const auto [X, Y, Z] = mask.shape;
    const double hx = spacing[0] / 2.0, hy = spacing[1] / 2.0, hz = spacing[2] / 2.0;
    const double area_x = spacing[1] * spacing[2];
    const double area_y = spacing[0] * spacing[2];
    const double area_z = spacing[0] * spacing[1];

    auto fg = [&](int64_t x, int64_t y, int64_t z) {
        if (x < 0 || x >= X || y < 0 || y >= Y || z < 0 || z >= Z) return false;
        return mask.at(x, y, z) == class_id;
    };

    for (int64_t x = 0; x < X; ++x)
        for (int64_t y = 0; y < Y; ++y)
            for (int64_t z = 0; z < Z; ++z) {
                if (!fg(x, y, z)) continue;
                const double cx = static_cast<double>(2 * x + 1) * hx;
                const double cy = static_cast<double>(2 * y + 1) * hy;
                const double cz = static_cast<double>(2 * z + 1) * hz;
                if (!fg(x - 1, y, z))
                    faces.push_back({{static_cast<double>(2 * x) * hx, cy, cz}, area_x});
                if (!fg(x + 1, y, z))
                    faces.push_back({{static_cast<double>(2 * x + 2) * hx, cy, cz}, area_x});
                if (!fg(x, y - 1, z))
                    faces.push_back({{cx, static_cast<double>(2 * y) * hy, cz}, area_y});
                if (!fg(x, y + 1, z))
                    faces.push_back({{cx, static_cast<double>(2 * y + 2) * hy, cz}, area_y});
                if (!fg(x, y, z - 1))
                    faces.push_back({{cx, cy, static_cast<double>(2 * z) * hz}, area_z});
                if (!fg(x, y, z + 1))
                    faces.push_back({{cx, cy, static_cast<double>(2 * z + 2) * hz}, area_z});
            }
    return faces;
}

namespace {

// One pass of the separable squared-distance transform: lower envelope of
// parabolas rooted at (i*h, f[i]). Infinite entries contribute nothing.
void edt_pass(const double* f, double* out, int64_t n, double h, std::vector<int64_t>& v,
              std::vector<double>& z) {
    v.resize(static_cast<size_t>(n));
    z.resize(static_cast<size_t>(n) + 1);
    int64_t k = -1;
    for (int64_t q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        const double xq = static_cast<double>(q) * h;
        double s = 0.0;
        while (k >= 0) {
            const int64_t p = v[static_cast<size_t>(k)];
            const double xp = static_cast<double>(p) * h;
            s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * xq - 2.0 * xp);
            if (s <= z[static_cast<size_t>(k)])
                --k;
            else
                break;
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
        } else {
            ++k;
            v[static_cast<size_t>(k)] = q;
            z[static_cast<size_t>(k)] = s;
            z[static_cast<size_t>(k) + 1] = kInf;
        }
    }
    if (k < 0) {
        std::fill(out, out + n, kInf);
        return;
    }
    int64_t j = 0;
    for (int64_t q = 0; q < n; ++q) {
        const double x = static_cast<double>(q) * h;
        while (j < k && z[static_cast<size_t>(j) + 1] < x) ++j;
        const int64_t p = v[static_cast<size_t>(j)];
        const double d = x - static_cast<double>(p) * h;
        out[q] = f[p] + d * d;
    }
}

std::array<int64_t, 3> lattice_coord(const SurfaceFace& face, const Spacing& spacing) {
    std::array<int64_t, 3> c{};
    for (int a = 0; a < 3; ++a)
        c[static_cast<size_t>(a)] =
            static_cast<int64_t>(std::llround(face.center_mm[static_cast<size_t>(a)] / (spacing[static_cast<size_t>(a)] / 2.0)));
    return c;
}

}  // namespace

std::vector<double> face_distances_sq(const std::vector<SurfaceFace>& queries,
                                      const std::vector<SurfaceFace>& targets, const Spacing& spacing,
                                      const std::array<int64_t, 3>& grid_shape) {
    (void)grid_shape;
    if (queries.empty()) return {};
    if (targets.empty()) return std::vector<double>(queries.size(), kInf);

    // Bounding box over both face sets on the half-pitch lattice.
    std::array<int64_t, 3> lo{std::numeric_limits<int64_t>::max(), std::numeric_limits<int64_t>::max(),
                              std::numeric_limits<int64_t>::max()};
    std::array<int64_t, 3> hi{std::numeric_limits<int64_t>::min(), std::numeric_limits<int64_t>::min(),
                              std::numeric_limits<int64_t>::min()};
    auto widen = [&](const std::vector<SurfaceFace>& faces) {
        for (const auto& f : faces) {
            const auto c = lattice_coord(f, spacing);
            for (int a = 0; a < 3; ++a) {
                lo[static_cast<size_t>(a)] = std::min(lo[static_cast<size_t>(a)], c[static_cast<size_t>(a)]);
                hi[static_cast<size_t>(a)] = std::max(hi[static_cast<size_t>(a)], c[static_cast<size_t>(a)]);
            }
        }
    };
    widen(queries);
    widen(targets);

    const std::array<int64_t, 3> dims{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
    const int64_t n = dims[0] * dims[1] * dims[2];
    std::vector<double> field(static_cast<size_t>(n), kInf);
    auto at = [&](int64_t x, int64_t y, int64_t z) -> double& {
        return field[static_cast<size_t>((x * dims[1] + y) * dims[2] + z)];
    };
    for (const auto& f : targets) {
        const auto c = lattice_coord(f, spacing);
        at(c[0] - lo[0], c[1] - lo[1], c[2] - lo[2]) = 0.0;
    }

    // Separable passes: x, then y, then z, accumulating squared axis terms in
    // the same order a direct per-pair evaluation would.
    std::vector<int64_t> vbuf;
    std::vector<double> zbuf;
    std::vector<double> line_in, line_out;

    line_in.resize(static_cast<size_t>(dims[0]));
    line_out.resize(static_cast<size_t>(dims[0]));
    for (int64_t y = 0; y < dims[1]; ++y)
        for (int64_t z = 0; z < dims[2]; ++z) {
            for (int64_t x = 0; x < dims[0]; ++x) line_in[static_cast<size_t>(x)] = at(x, y, z);
            edt_pass(line_in.data(), line_out.data(), dims[0], spacing[0] / 2.0, vbuf, zbuf);
            for (int64_t x = 0; x < dims[0]; ++x) at(x, y, z) = line_out[static_cast<size_t>(x)];
        }

    line_in.resize(static_cast<size_t>(dims[1]));
    line_out.resize(static_cast<size_t>(dims[1]));
    for (int64_t x = 0; x < dims[0]; ++x)
        for (int64_t z = 0; z < dims[2]; ++z) {
            for (int64_t y = 0; y < dims[1]; ++y) line_in[static_cast<size_t>(y)] = at(x, y, z);
            edt_pass(line_in.data(), line_out.data(), dims[1], spacing[1] / 2.0, vbuf, zbuf);
            for (int64_t y = 0; y < dims[1]; ++y) at(x, y, z) = line_out[static_cast<size_t>(y)];
        }

    line_in.resize(static_cast<size_t>(dims[2]));
    line_out.resize(static_cast<size_t>(dims[2]));
    for (int64_t x = 0; x < dims[0]; ++x)
        for (int64_t y = 0; y < dims[1]; ++y) {
            for (int64_t z = 0; z < dims[2]; ++z) line_in[static_cast<size_t>(z)] = at(x, y, z);
            edt_pass(line_in.data(), line_out.data(), dims[2], spacing[2] / 2.0, vbuf, zbuf);
            for (int64_t z = 0; z < dims[2]; ++z) at(x, y, z) = line_out[static_cast<size_t>(z)];
        }

    std::vector<double> out(queries.size());
    for (size_t i = 0; i < queries.size(); ++i) {
        const auto c = lattice_coord(queries[i], spacing);
        out[i] = at(c[0] - lo[0], c[1] - lo[1], c[2] - lo[2]);
    }
    return out;
}

double surface_dice(const LabelMap& pred, const LabelMap& gt, int class_id, double tau_mm,
                    const Spacing& spacing, const MetricPolicy& policy) {
    check_shapes(pred, gt, "surface_dice");
    if (tau_mm < 0.0) throw std::invalid_argument("surface_dice: tau must be >= 0");
    const auto faces_p = extract_surface(pred, class_id, spacing);
    const auto faces_g = extract_surface(gt, class_id, spacing);
    if (faces_p.empty() && faces_g.empty()) return policy.empty_empty;
    if (faces_p.empty() || faces_g.empty()) return policy.one_empty;

    const double tau_sq = tau_mm * tau_mm;
    const auto d_pg = face_distances_sq(faces_p, faces_g, spacing, pred.shape);
    const auto d_gp = face_distances_sq(faces_g, faces_p, spacing, pred.shape);

    double close_p = 0.0, total_p = 0.0;
    for (size_t i = 0; i < faces_p.size(); ++i) {
        total_p += faces_p[i].area_mm2;
        if (d_pg[i] <= tau_sq) close_p += faces_p[i].area_mm2;
    }
    double close_g = 0.0, total_g = 0.0;
    for (size_t i = 0; i < faces_g.size(); ++i) {
        total_g += faces_g[i].area_mm2;
        if (d_gp[i] <= tau_sq) close_g += faces_g[i].area_mm2;
    }
    return (close_p + close_g) / (total_p + total_g);
}

double EvaluationReport::mean_dsc(int class_id) const {
    double s = 0.0;
    int n = 0;
    for (const auto& r : rows)
        if (r.class_id == class_id) {
            s += r.dsc;
            ++n;
        }
    return n ? s / n : 0.0;
}

double EvaluationReport::mean_sdsc(int class_id) const {
    double s = 0.0;
    int n = 0;
    for (const auto& r : rows)
        if (r.class_id == class_id) {
            s += r.sdsc;
            ++n;
        }
    return n ? s / n : 0.0;
}

double EvaluationReport::overall_mean_dsc() const {
    double s = 0.0;
    for (const auto& r : rows) s += r.dsc;
    return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

double EvaluationReport::overall_mean_sdsc() const {
    double s = 0.0;
    for (const auto& r : rows) s += r.sdsc;
    return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

namespace {
std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}
std::string pad(const std::string& s, size_t w) {
    return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}
}  // namespace

std::string EvaluationReport::to_table() const {
    std::ostringstream os;
    size_t idw = 8;
    for (const auto& r : rows) idw = std::max(idw, r.case_id.size() + 2);

    auto class_label = [&](int c) -> std::string {
        if (!class_names.empty() && c >= 0 && c < static_cast<int>(class_names.size()))
            return class_names[static_cast<size_t>(c)];
        return "class" + std::to_string(c);
    };

    os << pad("case", idw) << pad("class", 10) << pad("DSC", 9) << pad("SDSC", 9) << "\n";
    for (const auto& r : rows)
        os << pad(r.case_id, idw) << pad(class_label(r.class_id), 10) << pad(fmt(r.dsc), 9)
           << pad(fmt(r.sdsc), 9) << "\n";
    for (int c : classes)
        os << pad("mean", idw) << pad(class_label(c), 10) << pad(fmt(mean_dsc(c)), 9)
           << pad(fmt(mean_sdsc(c)), 9) << "\n";
    os << pad("overall", idw) << pad("all", 10) << pad(fmt(overall_mean_dsc()), 9)
       << pad(fmt(overall_mean_sdsc()), 9) << "\n";
    os << "tolerance tau = " << tau_mm << " mm\n";
    return os.str();
}

std::string EvaluationReport::to_json() const {
    json j;
    j["tau_mm"] = tau_mm;
    j["classes"] = classes;
    if (!class_names.empty()) j["class_names"] = class_names;
    j["rows"] = json::array();
    for (const auto& r : rows) {
        json e;
        e["case_id"] = r.case_id;
        e["class_id"] = r.class_id;
        e["dsc"] = r.dsc;
        e["sdsc"] = r.sdsc;
        j["rows"].push_back(e);
    }
    json means;
    for (int c : classes) {
        json m;
        m["dsc"] = mean_dsc(c);
        m["sdsc"] = mean_sdsc(c);
        means[std::to_string(c)] = m;
    }
    j["per_class_means"] = means;
    j["overall"] = {{"dsc", overall_mean_dsc()}, {"sdsc", overall_mean_sdsc()}};
    return j.dump(2);
}

EvaluationReport evaluate_cases(const EvaluationInputs& inputs, const std::vector<int>& classes,
                                const MetricPolicy& policy, const std::vector<std::string>& class_names) {
    if (inputs.preds.size() != inputs.gts.size() || inputs.preds.size() != inputs.case_ids.size())
        throw std::invalid_argument("evaluate_cases: prediction/ground-truth case sets differ");
    EvaluationReport report;
    report.classes = classes;
    report.class_names = class_names;
    report.tau_mm = policy.tau_mm;
    for (size_t i = 0; i < inputs.preds.size(); ++i) {
        const LabelMap& pred = inputs.preds[i];
        const LabelMap& gt = inputs.gts[i];
        check_shapes(pred, gt, "evaluate_cases");
        for (int c : classes) {
            CaseClassScore row;
            row.case_id = inputs.case_ids[i];
            row.class_id = c;
            row.dsc = dice_score(pred, gt, c, policy);
            row.sdsc = surface_dice(pred, gt, c, policy.tau_mm, gt.spacing, policy);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

}  // namespace abseg::metrics
