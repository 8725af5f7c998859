#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "roma/image.hpp"
#include "roma/vision.hpp"

using namespace roma;
namespace fs = std::filesystem;

namespace {

// Independent 3x3 LBP reference: naive neighbor walk with replicate padding.
std::vector<std::uint8_t> lbp_reference(const ImageBuffer& img) {
    const std::size_t h = img.height, w = img.width;
    std::vector<double> gray(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            gray[y * w + x] = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
    const int offs[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}};
    std::vector<std::uint8_t> out(h * w);
    for (long y = 0; y < static_cast<long>(h); ++y)
        for (long x = 0; x < static_cast<long>(w); ++x) {
            std::uint8_t code = 0;
            for (int b = 0; b < 8; ++b) {
                long ny = y + offs[b][0], nx = x + offs[b][1];
                ny = ny < 0 ? 0 : (ny >= static_cast<long>(h) ? static_cast<long>(h) - 1 : ny);
                nx = nx < 0 ? 0 : (nx >= static_cast<long>(w) ? static_cast<long>(w) - 1 : nx);
                if (gray[ny * w + nx] > gray[y * w + x]) code |= static_cast<std::uint8_t>(1u << b);
            }
            out[y * w + x] = code;
        }
    return out;
}

ImageBuffer checker_image(std::size_t h, std::size_t w, std::size_t period = 2) {
    ImageBuffer img(h, w, 3, 0.2);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double v = ((y / period + x / period) % 2 == 0) ? 0.9 : 0.1;
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = v;
        }
    return img;
}

ImageBuffer random_image(std::size_t h, std::size_t w, Rng& rng) {
    ImageBuffer img(h, w, 3);
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

}  // namespace

TEST_CASE("split_patches geometry") {
    ImageBuffer img(192, 192);
    PatchGrid grid = split_patches(img, 16);
    CHECK(grid.rows == 12);
    CHECK(grid.cols == 12);
    CHECK(grid.count() == 144);
    CHECK(grid.patch_row(12) == 1);
    CHECK(grid.patch_col(12) == 0);

    ImageBuffer bad(196, 196);
    CHECK_THROWS_WITH_AS(split_patches(bad, 16), doctest::Contains("196"), ShapeError);
}

TEST_CASE("split_patches is lossless") {
    Rng rng(17);
    ImageBuffer img = random_image(32, 48, rng);
    PatchGrid grid = split_patches(img, 8);
    // Reassemble from patches and compare exactly.
    ImageBuffer back(32, 48, 3);
    for (std::size_t k = 0; k < grid.count(); ++k) {
        const auto px = grid.patch_pixels(k);
        const std::size_t y0 = grid.patch_row(k) * 8, x0 = grid.patch_col(k) * 8;
        std::size_t i = 0;
        for (std::size_t dy = 0; dy < 8; ++dy)
            for (std::size_t dx = 0; dx < 8; ++dx)
                for (std::size_t c = 0; c < 3; ++c) back.at(y0 + dy, x0 + dx, c) = px[i++];
    }
    CHECK(back.data == img.data);
}

TEST_CASE("lbp constant image is all zeros") {
    ImageBuffer img(16, 16, 3, 0.5);
    auto codes = lbp_map(img);
    for (auto c : codes) CHECK(c == 0);
}

TEST_CASE("lbp horizontal ramp sets east bits only") {
    ImageBuffer img(8, 8, 3);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = 0.1 * static_cast<double>(x);
    auto codes = lbp_map(img);
    // Interior pixels: bits TR(2), R(3), BR(4) set -> 0b00011100.
    for (std::size_t y = 1; y < 7; ++y)
        for (std::size_t x = 1; x < 7; ++x) CHECK(codes[y * 8 + x] == 28);
}

TEST_CASE("lbp single bright pixel lights the facing bit of each neighbor") {
    ImageBuffer img(9, 9, 3, 0.3);
    for (std::size_t c = 0; c < 3; ++c) img.at(4, 4, c) = 1.0;
    auto codes = lbp_map(img);
    // Neighbor at offset (dy,dx) from the bright pixel sees it in the
    // opposite direction; with a flat background no other bit fires.
    const int offs[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}};
    for (int b = 0; b < 8; ++b) {
        const std::size_t ny = 4 + offs[b][0], nx = 4 + offs[b][1];
        int facing = -1;
        for (int bb = 0; bb < 8; ++bb)
            if (offs[bb][0] == -offs[b][0] && offs[bb][1] == -offs[b][1]) facing = bb;
        CHECK(codes[ny * 9 + nx] == (1u << facing));
    }
}

TEST_CASE("lbp equals brute-force reference on random images") {
    Rng rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        ImageBuffer img = random_image(11 + trial, 7 + 2 * trial, rng);
        CHECK(lbp_map(img) == lbp_reference(img));
    }
}

TEST_CASE("patch entropy: uniform zero, two equal values one bit") {
    ImageBuffer img(16, 16, 3, 0.5);
    PatchGrid grid = split_patches(img, 8);
    std::vector<std::uint8_t> lbp(16 * 16, 7);
    ScoreMap sm = patch_scores(grid, lbp);
    CHECK(sm.scores[0] == 0.0);

    // Half the codes 3, half 9 inside patch 0.
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) lbp[y * 16 + x] = (x < 4) ? 3 : 9;
    sm = patch_scores(grid, lbp);
    CHECK(sm.scores[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("global brightness shift leaves scores unchanged") {
    Rng rng(29);
    ImageBuffer img = random_image(32, 32, rng);
    ImageBuffer shifted = img;
    for (auto& v : shifted.data) v += 0.1;
    PatchGrid ga = split_patches(img, 8), gb = split_patches(shifted, 8);
    ScoreMap a = patch_scores(ga, lbp_map(img));
    ScoreMap b = patch_scores(gb, lbp_map(shifted));
    CHECK(a.scores == b.scores);
    CHECK(a.image_mean == b.image_mean);
}

TEST_CASE("select_top_patch argmax and tie-break") {
    ScoreMap sm;
    sm.rows = 1;
    sm.cols = 3;
    sm.patch_size = 8;
    sm.scores = {0, 5, 3};
    CHECK(select_top_patch(sm) == 1);
    sm.scores = {2, 2, 2};
    CHECK(select_top_patch(sm) == 0);
}

TEST_CASE("select_top_patch finds a planted textured patch") {
    ImageBuffer img(96, 96, 3, 0.5);
    // Plant texture in patch (3,4) of the 12x12 grid at p=8.
    for (std::size_t y = 24; y < 32; ++y)
        for (std::size_t x = 32; x < 40; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = ((y + x) % 2) ? 0.9 : 0.1;
    PatchGrid grid = split_patches(img, 8);
    ScoreMap sm = patch_scores(grid, lbp_map(img));
    std::size_t expect = 0;
    for (std::size_t k = 1; k < sm.scores.size(); ++k)
        if (sm.scores[k] > sm.scores[expect]) expect = k;
    CHECK(select_top_patch(sm) == expect);
    CHECK(select_top_patch(sm) == 3 * 12 + 4);
}

TEST_CASE("best_candidate_box corner case has a single candidate") {
    ScoreMap sm;
    sm.rows = 12;
    sm.cols = 12;
    sm.patch_size = 16;
    sm.scores.assign(144, 1.0);
    sm.scores[0] = 9.0;
    RegionBox box = best_candidate_box(sm, 0, 96);
    CHECK(box.top == 0);
    CHECK(box.left == 0);
    CHECK(box.side == 96);
}

TEST_CASE("best_candidate_box tie-break is top-left-most") {
    ScoreMap sm;
    sm.rows = 12;
    sm.cols = 12;
    sm.patch_size = 16;
    sm.scores.assign(144, 1.0);
    // Interior top patch: every containing box has equal value.
    const std::size_t top = 6 * 12 + 6;
    RegionBox box = best_candidate_box(sm, top, 96);
    CHECK(box.top == 1 * 16);
    CHECK(box.left == 1 * 16);
}

TEST_CASE("best_candidate_box equals exhaustive enumeration oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        ScoreMap sm;
        sm.rows = 12;
        sm.cols = 12;
        sm.patch_size = 16;
        sm.scores.resize(144);
        for (auto& s : sm.scores) s = rng.uniform();
        const std::size_t top = static_cast<std::size_t>(rng.below(144));

        // Oracle: enumerate all (rows-5)*(cols-5) boxes, filter containment.
        const std::size_t bs = 6;
        bool found = false;
        double best_v = 0.0;
        std::size_t br = 0, bc = 0;
        for (std::size_t r0 = 0; r0 + bs <= 12; ++r0)
            for (std::size_t c0 = 0; c0 + bs <= 12; ++c0) {
                const std::size_t tr = top / 12, tc = top % 12;
                if (tr < r0 || tr >= r0 + bs || tc < c0 || tc >= c0 + bs) continue;
                double sum = 0.0;
                for (std::size_t r = r0; r < r0 + bs; ++r)
                    for (std::size_t c = c0; c < c0 + bs; ++c) sum += sm.scores[r * 12 + c];
                if (!found || sum / 36.0 > best_v) {
                    found = true;
                    best_v = sum / 36.0;
                    br = r0;
                    bc = c0;
                }
            }
        RegionBox box = best_candidate_box(sm, top, 96);
        CHECK(box.top == br * 16);
        CHECK(box.left == bc * 16);
    }
}

TEST_CASE("adaptive selection accepts a textured corner at the top rung") {
    ImageBuffer img(192, 192, 3, 0.5);
    for (std::size_t y = 0; y < 96; ++y)
        for (std::size_t x = 0; x < 96; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = ((y + x) % 2) ? 0.8 : 0.2;
    PatchGrid grid = split_patches(img, 16);
    ScoreMap sm = patch_scores(grid, lbp_map(img));
    auto box = adaptive_region_select(sm, select_top_patch(sm), {96, 64, 32});
    REQUIRE(box.has_value());
    CHECK(box->side == 96);
    CHECK(box->top == 0);
    CHECK(box->left == 0);
}

TEST_CASE("adaptive selection returns none on uniform images") {
    ImageBuffer img(192, 192, 3, 0.5);
    PatchGrid grid = split_patches(img, 16);
    ScoreMap sm = patch_scores(grid, lbp_map(img));
    CHECK(!adaptive_region_select(sm, select_top_patch(sm), {96, 64, 32}).has_value());
}

TEST_CASE("adaptive selection falls through to the smallest rung") {
    // Synthetic scores: a 2x2 hot block deep inside a cold moat, with a
    // high-score far field on the first row/column pulling the image mean
    // up. The 6- and 4-patch boxes are stuck in the moat and miss the mean;
    // the 2-patch box is pure texture.
    ScoreMap sm;
    sm.rows = 12;
    sm.cols = 12;
    sm.patch_size = 16;
    sm.scores.assign(144, 0.1);
    for (std::size_t c = 0; c < 12; ++c) sm.scores[c] = 4.5;
    for (std::size_t r = 1; r < 12; ++r) sm.scores[r * 12] = 4.5;
    sm.scores[6 * 12 + 6] = 3.0;
    sm.scores[6 * 12 + 7] = 3.0;
    sm.scores[7 * 12 + 6] = 3.0;
    sm.scores[7 * 12 + 7] = 3.0;
    double mean = 0.0;
    for (double s : sm.scores) mean += s;
    sm.image_mean = mean / 144.0;

    auto box = adaptive_region_select(sm, 6 * 12 + 6, {96, 64, 32});
    REQUIRE(box.has_value());
    CHECK(box->side == 32);

    // Oracle restatement: the accepted box mean strictly beats the image mean.
    const std::size_t bs = box->side / 16;
    double sum = 0.0;
    for (std::size_t r = box->top / 16; r < box->top / 16 + bs; ++r)
        for (std::size_t c = box->left / 16; c < box->left / 16 + bs; ++c) sum += sm.scores[r * 12 + c];
    CHECK(sum / static_cast<double>(bs * bs) > sm.image_mean);
}

TEST_CASE("inscribed square side and circle containment") {
    CHECK(static_cast<std::size_t>(std::floor(96.0 / std::sqrt(2.0))) == 67);
    Rng rng(37);
    for (int trial = 0; trial < 16; ++trial) {
        const std::size_t L = 96;
        const std::size_t m = 67;
        const double theta = rng.uniform(0.0, 6.2831853);
        const double cy = (static_cast<double>(L) - 1.0) / 2.0;
        for (std::size_t r = 0; r < m; r += 3)
            for (std::size_t q = 0; q < m; q += 3) {
                double sy, sx;
                inscribed_source_coord(L, m, theta, r, q, sy, sx);
                const double dx = sx - cy, dy = sy - cy;
                // Half-pixel slack over the inscribed radius.
                CHECK(dx * dx + dy * dy <= (48.0 + 0.5) * (48.0 + 0.5));
            }
    }
}

TEST_CASE("theta=pi crop mirrors the theta=0 crop") {
    Rng rng(41);
    ImageBuffer img = random_image(96, 96, rng);
    RegionBox box{16, 16, 64};
    ImageBuffer a = inscribed_rotate_crop(img, box, 0.0);
    ImageBuffer b = inscribed_rotate_crop(img, box, 3.14159265358979323846);
    for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(b.at(y, x, c) == doctest::Approx(a.at(63 - y, 63 - x, c)).epsilon(1e-6));
}

TEST_CASE("augment leaves uniform images untouched") {
    ImageBuffer img(96, 96, 3, 0.42);
    Rng rng(43);
    AugmentResult res = apply_rotation_augment(img, rng, AresParams{});
    CHECK(!res.record.applied);
    CHECK(res.image.data == img.data);
}

TEST_CASE("augment covers the top-left block and only the box changes") {
    // Texture confined to the top-left 48x48 so the box lands at (0,0,48).
    ImageBuffer img(96, 96, 3, 0.5);
    for (std::size_t y = 0; y < 48; ++y)
        for (std::size_t x = 0; x < 48; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = ((y + x) % 2) ? 0.8 : 0.2;
    Rng rng(47);
    AresParams params;
    AugmentResult res = apply_rotation_augment(img, rng, params);
    REQUIRE(res.record.applied);
    CHECK(res.record.box.top == 0);
    CHECK(res.record.box.left == 0);
    CHECK(res.record.box.side == 48);

    // covered = the 6x6 patch block at p=8.
    std::set<std::size_t> covered(res.record.covered_patches.begin(), res.record.covered_patches.end());
    CHECK(covered.size() == 36);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 6; ++c) CHECK(covered.count(r * 12 + c) == 1);

    // Pixels outside the box are byte-for-byte the input.
    for (std::size_t y = 0; y < 96; ++y)
        for (std::size_t x = 0; x < 96; ++x) {
            if (y < 48 && x < 48) continue;
            for (std::size_t c = 0; c < 3; ++c) CHECK(res.image.at(y, x, c) == img.at(y, x, c));
        }
}

TEST_CASE("accepted regions always beat the image mean score") {
    Rng rng(53);
    for (int trial = 0; trial < 25; ++trial) {
        ImageBuffer img(96, 96, 3, 0.5);
        // Random planted texture block.
        const std::size_t bx = rng.below(6) * 8, by = rng.below(6) * 8;
        for (std::size_t y = by; y < by + 32; ++y)
            for (std::size_t x = bx; x < bx + 32; ++x)
                for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = rng.uniform();
        PatchGrid grid = split_patches(img, 8);
        ScoreMap sm = patch_scores(grid, lbp_map(img));
        auto box = adaptive_region_select(sm, select_top_patch(sm), {48, 32, 16});
        if (!box) continue;
        const std::size_t bs = box->side / 8;
        double sum = 0.0;
        for (std::size_t r = box->top / 8; r < box->top / 8 + bs; ++r)
            for (std::size_t c = box->left / 8; c < box->left / 8 + bs; ++c) sum += sm.scores[r * sm.cols + c];
        CHECK(sum / static_cast<double>(bs * bs) > sm.image_mean);
    }
}

TEST_CASE("random crop baseline") {
    ImageBuffer img(192, 192);
    Rng rng(59);
    RegionBox full = random_crop_baseline(img, 192, 16, rng);
    CHECK(full.top == 0);
    CHECK(full.left == 0);
    CHECK(full.side == 192);

    Rng a(7), b(7);
    RegionBox ba = random_crop_baseline(img, 96, 16, a);
    RegionBox bb = random_crop_baseline(img, 96, 16, b);
    CHECK(ba.top == bb.top);
    CHECK(ba.left == bb.left);

    // Coverage: all 49 aligned positions show up over 10^4 draws.
    Rng r2(61);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (int i = 0; i < 10000; ++i) {
        RegionBox bx = random_crop_baseline(img, 96, 16, r2);
        seen.insert({bx.top, bx.left});
    }
    CHECK(seen.size() == 49);

    CHECK_THROWS_AS(random_crop_baseline(img, 200, 16, rng), ContractError);
}

TEST_CASE("png round trip and deterministic bytes") {
    Rng rng(67);
    ImageBuffer img = random_image(24, 17, rng);
    const auto dir = fs::temp_directory_path() / "roma_vision_test";
    fs::create_directories(dir);
    const std::string p1 = (dir / "a.png").string();
    const std::string p2 = (dir / "b.png").string();
    save_png(img, p1);
    save_png(img, p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);

    ImageBuffer back = load_png(p1);
    REQUIRE(back.height == 24);
    REQUIRE(back.width == 17);
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(unit_to_u8(back.data[i]) == unit_to_u8(img.data[i]));
    fs::remove_all(dir);
}

TEST_CASE("ppm round trip") {
    Rng rng(71);
    ImageBuffer img = random_image(9, 13, rng);
    const auto dir = fs::temp_directory_path() / "roma_vision_test_ppm";
    fs::create_directories(dir);
    const std::string p = (dir / "img.ppm").string();
    save_ppm(img, p);
    ImageBuffer back = load_ppm(p);
    REQUIRE(back.height == 9);
    REQUIRE(back.width == 13);
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(unit_to_u8(back.data[i]) == unit_to_u8(img.data[i]));
    fs::remove_all(dir);
}
