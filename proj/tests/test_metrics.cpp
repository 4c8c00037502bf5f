#include <doctest.h>

#include <cmath>
#include <limits>

#include "abseg/metrics.hpp"
#include "abseg/rng.hpp"

using namespace abseg;
namespace met = abseg::metrics;

namespace {

LabelMap cube(std::array<int64_t, 3> grid, std::array<int64_t, 3> lo, std::array<int64_t, 3> hi,
              Spacing spacing = {1, 1, 1}) {
    LabelMap lm(grid, 2, spacing);
    for (int64_t x = lo[0]; x < hi[0]; ++x)
        for (int64_t y = lo[1]; y < hi[1]; ++y)
            for (int64_t z = lo[2]; z < hi[2]; ++z) lm.at(x, y, z) = 1;
    return lm;
}

LabelMap random_mask(std::array<int64_t, 3> grid, double density, uint64_t seed,
                     Spacing spacing = {1, 1, 1}) {
    Rng rng(seed);
    LabelMap lm(grid, 2, spacing);
    // A few random boxes rather than voxel noise, so surfaces are plausible.
    const int boxes = 1 + static_cast<int>(rng.uniform_index(3));
    for (int b = 0; b < boxes; ++b) {
        std::array<int64_t, 3> lo{}, hi{};
        for (int a = 0; a < 3; ++a) {
            lo[a] = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(grid[a] - 2)));
            hi[a] = lo[a] + 1 +
                    static_cast<int64_t>(rng.uniform_index(
                        static_cast<uint64_t>(std::max<int64_t>(1, (grid[a] - lo[a]) / 2))));
        }
        for (int64_t x = lo[0]; x < hi[0]; ++x)
            for (int64_t y = lo[1]; y < hi[1]; ++y)
                for (int64_t z = lo[2]; z < hi[2]; ++z)
                    if (rng.uniform() < density) lm.at(x, y, z) = 1;
    }
    return lm;
}

// O(n^2) brute-force nearest-face-center scan, the reference for the
// accelerated path. Distances accumulate per axis in the same order.
std::vector<double> brute_force_distances_sq(const std::vector<met::SurfaceFace>& queries,
                                             const std::vector<met::SurfaceFace>& targets) {
    std::vector<double> out(queries.size(), std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < queries.size(); ++i)
        for (const auto& t : targets) {
            const double dx = queries[i].center_mm[0] - t.center_mm[0];
            const double dy = queries[i].center_mm[1] - t.center_mm[1];
            const double dz = queries[i].center_mm[2] - t.center_mm[2];
            out[i] = std::min(out[i], dx * dx + dy * dy + dz * dz);
        }
    return out;
}

double brute_force_surface_dice(const LabelMap& pred, const LabelMap& gt, int class_id, double tau,
                                const Spacing& spacing) {
    const auto fp = met::extract_surface(pred, class_id, spacing);
    const auto fg = met::extract_surface(gt, class_id, spacing);
    if (fp.empty() && fg.empty()) return 1.0;
    if (fp.empty() || fg.empty()) return 0.0;
    const auto dpg = brute_force_distances_sq(fp, fg);
    const auto dgp = brute_force_distances_sq(fg, fp);
    double close = 0, total = 0;
    for (size_t i = 0; i < fp.size(); ++i) {
        total += fp[i].area_mm2;
        if (dpg[i] <= tau * tau) close += fp[i].area_mm2;
    }
    for (size_t i = 0; i < fg.size(); ++i) {
        total += fg[i].area_mm2;
        if (dgp[i] <= tau * tau) close += fg[i].area_mm2;
    }
    return close / total;
}

}  // namespace

TEST_CASE("dice_score") {
    SUBCASE("identical nonempty masks score 1") {
        const auto a = cube({8, 8, 8}, {1, 1, 1}, {5, 5, 5});
        CHECK(met::dice_score(a, a, 1) == 1.0);
    }
    SUBCASE("two 4x4x4 cubes overlapping in a 2x4x4 slab score exactly 0.5") {
        // pred occupies x in [0,4), gt x in [2,6): overlap 2*4*4 = 32 voxels.
        const auto pred = cube({8, 8, 8}, {0, 0, 0}, {4, 4, 4});
        const auto gt = cube({8, 8, 8}, {2, 0, 0}, {6, 4, 4});
        CHECK(met::dice_score(pred, gt, 1) == 0.5);
    }
    SUBCASE("class absent from both maps scores 1 by convention") {
        const LabelMap empty({4, 4, 4}, 3);
        CHECK(met::dice_score(empty, empty, 2) == 1.0);
    }
    SUBCASE("class present on one side only scores 0") {
        const auto a = cube({6, 6, 6}, {1, 1, 1}, {3, 3, 3});
        const LabelMap empty({6, 6, 6}, 2);
        CHECK(met::dice_score(a, empty, 1) == 0.0);
        CHECK(met::dice_score(empty, a, 1) == 0.0);
    }
    SUBCASE("policy overrides for empty-mask conventions") {
        met::MetricPolicy policy;
        policy.empty_empty = 0.0;
        policy.one_empty = 0.5;
        const LabelMap empty({4, 4, 4}, 2);
        const auto a = cube({4, 4, 4}, {0, 0, 0}, {2, 2, 2});
        CHECK(met::dice_score(empty, empty, 1, policy) == 0.0);
        CHECK(met::dice_score(a, empty, 1, policy) == 0.5);
    }
    SUBCASE("symmetric in its arguments") {
        const auto a = random_mask({10, 10, 10}, 0.8, 1);
        const auto b = random_mask({10, 10, 10}, 0.8, 2);
        CHECK(met::dice_score(a, b, 1) == met::dice_score(b, a, 1));
    }
    SUBCASE("shape mismatch rejected") {
        CHECK_THROWS_AS(met::dice_score(LabelMap({4, 4, 4}, 2), LabelMap({4, 4, 5}, 2), 1),
                        std::invalid_argument);
    }
}

TEST_CASE("extract_surface") {
    SUBCASE("single voxel exposes 6 faces") {
        LabelMap lm({5, 5, 5}, 2);
        lm.at(2, 2, 2) = 1;
        CHECK(met::extract_surface(lm, 1, {1, 1, 1}).size() == 6);
    }
    SUBCASE("2x1x1 bar exposes 10 faces") {
        LabelMap lm({6, 6, 6}, 2);
        lm.at(2, 2, 2) = 1;
        lm.at(3, 2, 2) = 1;
        CHECK(met::extract_surface(lm, 1, {1, 1, 1}).size() == 10);
    }
    SUBCASE("empty mask has no surface") {
        CHECK(met::extract_surface(LabelMap({4, 4, 4}, 2), 1, {1, 1, 1}).empty());
    }
    SUBCASE("grid-boundary voxels expose faces to the exterior") {
        LabelMap lm({2, 2, 2}, 2);
        for (auto& v : lm.labels) v = 1;
        // full 2x2x2 block: surface is the block's outer hull, 6 sides * 4 faces
        CHECK(met::extract_surface(lm, 1, {1, 1, 1}).size() == 24);
    }
    SUBCASE("anisotropic spacing scales face areas per orientation") {
        LabelMap lm({4, 4, 4}, 2, {1.0, 2.0, 3.0});
        lm.at(1, 1, 1) = 1;
        const auto faces = met::extract_surface(lm, 1, {1.0, 2.0, 3.0});
        REQUIRE(faces.size() == 6);
        double total = 0;
        for (const auto& f : faces) total += f.area_mm2;
        // 2 faces of each orientation: 2*(2*3) + 2*(1*3) + 2*(1*2)
        CHECK(total == doctest::Approx(2 * 6.0 + 2 * 3.0 + 2 * 2.0));
    }
}

TEST_CASE("surface_dice") {
    const Spacing unit{1, 1, 1};
    SUBCASE("identical masks score 1") {
        const auto a = cube({10, 10, 10}, {2, 2, 2}, {7, 6, 8});
        CHECK(met::surface_dice(a, a, 1, 1.0, unit) == 1.0);
    }
    SUBCASE("far-apart unit cubes score 0") {
        LabelMap a({16, 16, 16}, 2), b({16, 16, 16}, 2);
        a.at(1, 1, 1) = 1;
        b.at(14, 14, 14) = 1;
        CHECK(met::surface_dice(a, b, 1, 1.0, unit) == 0.0);
    }
    SUBCASE("empty conventions") {
        const LabelMap empty({6, 6, 6}, 2);
        const auto a = cube({6, 6, 6}, {1, 1, 1}, {4, 4, 4});
        CHECK(met::surface_dice(empty, empty, 1, 1.0, unit) == 1.0);
        CHECK(met::surface_dice(a, empty, 1, 1.0, unit) == 0.0);
    }
    SUBCASE("cube vs one-voxel-shifted cube matches brute force") {
        const auto a = cube({12, 12, 12}, {2, 2, 2}, {7, 7, 7});
        const auto b = cube({12, 12, 12}, {3, 2, 2}, {8, 7, 7});
        // At tau = one pitch every displaced face is exactly 1.0 away, so the
        // score saturates at 1; below the pitch only coincident faces count.
        const double at_pitch = met::surface_dice(a, b, 1, 1.0, unit);
        CHECK(at_pitch == doctest::Approx(brute_force_surface_dice(a, b, 1, 1.0, unit)).epsilon(1e-12));
        CHECK(at_pitch == 1.0);
        const double below = met::surface_dice(a, b, 1, 0.9, unit);
        CHECK(below == doctest::Approx(brute_force_surface_dice(a, b, 1, 0.9, unit)).epsilon(1e-12));
        CHECK(below > 0.0);
        CHECK(below < 1.0);
    }
    SUBCASE("monotone nondecreasing in tau, reaching 1 past the grid diameter") {
        const auto a = random_mask({12, 12, 12}, 0.9, 5);
        const auto b = random_mask({12, 12, 12}, 0.9, 6);
        double prev = -1.0;
        for (double tau : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 30.0}) {
            const double s = met::surface_dice(a, b, 1, tau, unit);
            CHECK(s >= prev);
            prev = s;
        }
        CHECK(prev == 1.0);
    }
    SUBCASE("accelerated distances equal the brute-force scan on random masks") {
        for (uint64_t seed = 0; seed < 8; ++seed) {
            const Spacing sp{1.0, 1.25, 0.75};
            const auto a = random_mask({12, 10, 11}, 0.85, 100 + seed, sp);
            const auto b = random_mask({12, 10, 11}, 0.85, 200 + seed, sp);
            const auto fa = met::extract_surface(a, 1, sp);
            const auto fb = met::extract_surface(b, 1, sp);
            if (fa.empty() || fb.empty()) continue;
            const auto fast = met::face_distances_sq(fa, fb, sp, a.shape);
            const auto brute = brute_force_distances_sq(fa, fb);
            REQUIRE(fast.size() == brute.size());
            for (size_t i = 0; i < fast.size(); ++i)
                CHECK(std::abs(fast[i] - brute[i]) <= 1e-9 * std::max(1.0, brute[i]));
        }
    }
}

TEST_CASE("evaluate_cases") {
    const auto gt0 = cube({10, 10, 10}, {1, 1, 1}, {5, 5, 5});
    const auto gt1 = cube({10, 10, 10}, {2, 2, 2}, {8, 8, 8});

    SUBCASE("perfect predictions give an all-ones report") {
        met::EvaluationInputs in;
        in.case_ids = {"a", "b"};
        in.preds = {gt0, gt1};
        in.gts = {gt0, gt1};
        const auto rep = met::evaluate_cases(in, {1}, {});
        REQUIRE(rep.rows.size() == 2);
        for (const auto& r : rep.rows) {
            CHECK(r.dsc == 1.0);
            CHECK(r.sdsc == 1.0);
        }
        CHECK(rep.overall_mean_dsc() == 1.0);
        CHECK(rep.overall_mean_sdsc() == 1.0);
    }
    SUBCASE("means equal hand-averaged per-case scores") {
        const auto pred0 = cube({10, 10, 10}, {1, 1, 1}, {5, 5, 4});
        const auto pred1 = cube({10, 10, 10}, {2, 2, 2}, {8, 7, 8});
        met::EvaluationInputs in;
        in.case_ids = {"a", "b"};
        in.preds = {pred0, pred1};
        in.gts = {gt0, gt1};
        met::MetricPolicy policy;
        policy.tau_mm = 1.0;
        const auto rep = met::evaluate_cases(in, {1}, policy);
        const double d0 = met::dice_score(pred0, gt0, 1);
        const double d1 = met::dice_score(pred1, gt1, 1);
        CHECK(rep.mean_dsc(1) == doctest::Approx(0.5 * (d0 + d1)).epsilon(1e-12));
        const double s0 = met::surface_dice(pred0, gt0, 1, 1.0, gt0.spacing);
        const double s1 = met::surface_dice(pred1, gt1, 1, 1.0, gt1.spacing);
        CHECK(rep.mean_sdsc(1) == doctest::Approx(0.5 * (s0 + s1)).epsilon(1e-12));
    }
    SUBCASE("table groups DSC and SDSC columns and covers every case x class") {
        met::EvaluationInputs in;
        in.case_ids = {"a"};
        in.preds = {gt0};
        in.gts = {gt0};
        const auto rep = met::evaluate_cases(in, {1}, {});
        const std::string table = rep.to_table();
        CHECK(table.find("DSC") != std::string::npos);
        CHECK(table.find("SDSC") != std::string::npos);
        CHECK(table.find("overall") != std::string::npos);
        const std::string js = rep.to_json();
        CHECK(js.find("\"dsc\"") != std::string::npos);
        CHECK(js.find("\"sdsc\"") != std::string::npos);
    }
    SUBCASE("mismatched case sets rejected") {
        met::EvaluationInputs in;
        in.case_ids = {"a"};
        in.preds = {gt0};
        CHECK_THROWS_AS(met::evaluate_cases(in, {1}, {}), std::invalid_argument);
    }
}
