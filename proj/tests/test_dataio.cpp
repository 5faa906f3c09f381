#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dataio.hpp"
#include "error.hpp"
#include "synthworld.hpp"
#include "test_util.hpp"

using namespace dhm;
namespace io = dhm::dataio;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(static_cast<bool>(in));
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("dhm_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("region_latent: singleton, mean, oracle, permutation invariance") {
    CHECK(io::region_latent({{1.0, 2.0}}) == std::vector<double>{1.0, 2.0});
    CHECK(io::region_latent({{0.0, 0.0}, {2.0, 4.0}}) == std::vector<double>{1.0, 2.0});

    Rng rng(3);
    std::vector<io::LatentVector> vs;
    for (int i = 0; i < 7; ++i) {
        io::LatentVector v(5);
        for (double& x : v) x = rng.normal();
        vs.push_back(v);
    }
    auto mean = io::region_latent(vs);
    for (int j = 0; j < 5; ++j) {
        double s = 0.0;
        for (const auto& v : vs) s += v[static_cast<std::size_t>(j)];
        CHECK(mean[static_cast<std::size_t>(j)] == doctest::Approx(s / 7.0).epsilon(1e-14));
    }
    auto shuffled = vs;
    std::swap(shuffled[0], shuffled[6]);
    std::swap(shuffled[2], shuffled[4]);
    auto mean2 = io::region_latent(shuffled);
    for (int j = 0; j < 5; ++j)
        CHECK(mean[static_cast<std::size_t>(j)] ==
              doctest::Approx(mean2[static_cast<std::size_t>(j)]).epsilon(1e-12));

    CHECK_THROWS_AS(io::region_latent({}), Error);
    CHECK_THROWS_AS(io::region_latent({{1.0}, {1.0, 2.0}}), Error);
}

TEST_CASE("standardize: examples, degenerate column, refits and inversion") {
    std::vector<std::vector<double>> m = {{1.0}, {3.0}};
    auto stats = io::standardize(m);
    CHECK(m[0][0] == doctest::Approx(-1.0));
    CHECK(m[1][0] == doctest::Approx(1.0));
    CHECK(stats.mean[0] == doctest::Approx(2.0));
    CHECK(stats.sd[0] == doctest::Approx(1.0));  // population convention

    std::vector<std::vector<double>> c = {{5.0}, {5.0}, {5.0}};
    io::standardize(c);
    for (const auto& row : c) CHECK(row[0] == 0.0);

    Rng rng(9);
    std::vector<std::vector<double>> big(50, std::vector<double>(4));
    for (auto& row : big)
        for (double& v : row) v = 3.0 * rng.normal() + 1.5;
    auto original = big;
    auto s2 = io::standardize(big);
    for (int j = 0; j < 4; ++j) {
        double mean = 0.0;
        for (const auto& row : big) mean += row[static_cast<std::size_t>(j)];
        CHECK(std::fabs(mean / 50.0) < 1e-12);
    }
    auto roundtrip = big;
    io::unstandardize(roundtrip, s2);
    for (std::size_t i = 0; i < big.size(); ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(roundtrip[i][static_cast<std::size_t>(j)] ==
                  doctest::Approx(original[i][static_cast<std::size_t>(j)]).epsilon(1e-9));

    // stored stats reapply to new data
    std::vector<std::vector<double>> test_rows = {{1.5, 0.0, 0.0, 0.0}};
    io::standardize(test_rows, s2);
    CHECK(test_rows[0][0] == doctest::Approx((1.5 - s2.mean[0]) / s2.sd[0]));

    std::vector<std::vector<double>> bad = {{std::nan("")}, {1.0}};
    CHECK_THROWS_AS(io::standardize(bad), Error);
    std::vector<std::vector<double>> one_row = {{1.0}};
    CHECK_THROWS_AS(io::standardize(one_row), Error);
}

TEST_CASE("make_folds: sizes, determinism, census-scale partition") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
    auto f = io::make_folds(ids, 5, 7);
    std::vector<int> sizes(5, 0);
    for (const auto& [id, fold] : f.assignments) ++sizes[static_cast<std::size_t>(fold)];
    for (int s : sizes) CHECK(s == 2);

    auto f2 = io::make_folds(ids, 5, 7);
    CHECK(f.assignments == f2.assignments);
    auto f3 = io::make_folds(ids, 5, 8);
    CHECK(f.assignments != f3.assignments);

    std::vector<std::string> census;
    for (int i = 0; i < 1571; ++i) census.push_back("tract" + std::to_string(i));
    auto cf = io::make_folds(census, 5, 1);
    std::vector<int> cs(5, 0);
    for (const auto& [id, fold] : cf.assignments) ++cs[static_cast<std::size_t>(fold)];
    std::sort(cs.begin(), cs.end());
    CHECK(cs == std::vector<int>{314, 314, 314, 314, 315});

    CHECK_THROWS_AS(io::make_folds({"a", "b"}, 3, 1), Error);
    CHECK_THROWS_AS(io::make_folds(ids, 1, 1), Error);
}

TEST_CASE("world save/load round-trips byte-identically") {
    World w = synthworld::gen_world(17, 10, 2, 120);
    auto dir1 = temp_dir("world1");
    auto dir2 = temp_dir("world2");
    io::save_world(w, dir1.string());
    World loaded = io::load_world(dir1.string());
    io::save_world(loaded, dir2.string());

    for (const char* f : {"regions.csv", "trips.csv", "tiles.bin", "tiles.json", "truth.json"})
        CHECK(slurp((dir1 / f).string()) == slurp((dir2 / f).string()));

    REQUIRE(loaded.regions.size() == w.regions.size());
    CHECK(loaded.regions[3].x_sd == w.regions[3].x_sd);
    CHECK(loaded.trips.size() == w.trips.size());
    CHECK(loaded.trips[5].chosen == w.trips[5].chosen);
    CHECK(loaded.tiles.size() == w.tiles.size());
    CHECK(loaded.region_truth.size() == w.region_truth.size());
    CHECK(loaded.config.n_regions == w.config.n_regions);
    // pixels go through float32 but stay in range
    for (double v : loaded.tiles[0].pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // a second load sees identical pixels (float32 is the storage type)
    World again = io::load_world(dir2.string());
    CHECK(again.tiles[0].pixels == loaded.tiles[0].pixels);

    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("load_world validates references") {
    World w = synthworld::gen_world(18, 10, 1, 100);
    auto dir = temp_dir("world_bad");
    io::save_world(w, dir.string());
    // corrupt a trip's origin
    auto trips_path = (dir / "trips.csv").string();
    std::string text = slurp(trips_path);
    auto pos = text.find("R0003");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 5, "R9999");
    std::ofstream(trips_path, std::ios::binary) << text;
    CHECK_THROWS_AS(io::load_world(dir.string()), Error);
    fs::remove_all(dir);
}
