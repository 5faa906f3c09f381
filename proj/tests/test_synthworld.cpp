#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "error.hpp"
#include "synthworld.hpp"
#include "test_util.hpp"

using namespace dhm;
namespace sw = dhm::synthworld;

namespace {

double tile_hash(const ImageTile& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.pixels.size(); ++i)
        s += t.pixels[i] * std::cos(0.001 * static_cast<double>(i));
    return s;
}

double mean_abs_gradient(const ImageTile& t) {
    double s = 0.0;
    int n = 0;
    for (int y = 0; y < t.height; ++y)
        for (int x = 0; x < t.width; ++x) {
            double lum = (t.at(y, x, 0) + t.at(y, x, 1) + t.at(y, x, 2)) / 3.0;
            if (x + 1 < t.width) {
                double l2 = (t.at(y, x + 1, 0) + t.at(y, x + 1, 1) + t.at(y, x + 1, 2)) / 3.0;
                s += std::fabs(lum - l2);
                ++n;
            }
            if (y + 1 < t.height) {
                double l2 = (t.at(y + 1, x, 0) + t.at(y + 1, x, 1) + t.at(y + 1, x, 2)) / 3.0;
                s += std::fabs(lum - l2);
                ++n;
            }
        }
    return s / n;
}

}  // namespace

TEST_CASE("gen_world is a pure function of its arguments") {
    World a = sw::gen_world(7, 10, 1, 100);
    World b = sw::gen_world(7, 10, 1, 100);
    CHECK(a.regions.size() == 10);
    CHECK(a.tiles.size() == 10);
    CHECK(a.trips.size() == 100);
    REQUIRE(a.regions.size() == b.regions.size());
    for (std::size_t r = 0; r < a.regions.size(); ++r) {
        CHECK(a.regions[r].region_id == b.regions[r].region_id);
        CHECK(a.regions[r].x_sd == b.regions[r].x_sd);
        CHECK(a.regions[r].shares == b.regions[r].shares);
    }
    for (std::size_t t = 0; t < a.tiles.size(); ++t)
        CHECK(a.tiles[t].pixels == b.tiles[t].pixels);
    for (std::size_t t = 0; t < a.trips.size(); ++t) {
        CHECK(a.trips[t].origin == b.trips[t].origin);
        CHECK(a.trips[t].chosen == b.trips[t].chosen);
    }
}

TEST_CASE("world structure invariants") {
    World w = sw::gen_world(21, 12, 3, 200);
    std::set<std::string> ids;
    for (const auto& r : w.regions) {
        ids.insert(r.region_id);
        CHECK(r.tile_ids.size() == 3);
        double s = 0.0;
        for (double v : r.shares) {
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    for (const auto& t : w.trips) {
        CHECK(ids.count(t.origin) == 1);
        CHECK(ids.count(t.destination) == 1);
        CHECK(t.chosen >= 0);
        CHECK(t.chosen < kNumModes);
    }
    for (const auto& tile : w.tiles)
        for (double v : tile.pixels) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
}

TEST_CASE("rejects undersized worlds") {
    CHECK_THROWS_AS(sw::gen_world(1, 0, 1, 100), Error);
    CHECK_THROWS_AS(sw::gen_world(1, 10, 0, 100), Error);
    CHECK_THROWS_AS(sw::gen_world(1, 10, 1, 0), Error);
    CHECK_THROWS_AS(sw::gen_world(1, 9, 1, 100), Error);  // below the minimum
    CHECK_THROWS_AS(sw::gen_world(1, 10, 1, 99), Error);
}

TEST_CASE("chosen-mode frequencies match the true choice probabilities") {
    // ~1e4 trips per origin region; Monte-Carlo frequency vs the mean of the
    // closed-form softmax probabilities.
    World w = sw::gen_world(5, 10, 1, 100000);
    std::map<std::string, std::vector<double>> freq, expected;
    std::map<std::string, int> count;
    for (const auto& t : w.trips) {
        auto& f = freq[t.origin];
        auto& e = expected[t.origin];
        if (f.empty()) f.assign(kNumModes, 0.0);
        if (e.empty()) e.assign(kNumModes, 0.0);
        f[static_cast<std::size_t>(t.chosen)] += 1.0;
        auto p = sw::ground_truth_probs(t, w);
        for (int k = 0; k < kNumModes; ++k)
            e[static_cast<std::size_t>(k)] += p[static_cast<std::size_t>(k)];
        count[t.origin] += 1;
    }
    for (auto& [rid, f] : freq) {
        REQUIRE(count[rid] > 5000);
        for (int k = 0; k < kNumModes; ++k) {
            double fk = f[static_cast<std::size_t>(k)] / count[rid];
            double ek = expected[rid][static_cast<std::size_t>(k)] / count[rid];
            CHECK(std::fabs(fk - ek) < 0.03);
        }
    }
}

TEST_CASE("fully green archetype renders green-dominant pixels") {
    Archetype a{0, 0.0, 1.0, 0.3, 0.2};
    ImageTile t = sw::render_tile(a, 99);
    int green_dominant = 0;
    for (int y = 0; y < t.height; ++y)
        for (int x = 0; x < t.width; ++x)
            if (t.at(y, x, 1) > t.at(y, x, 0) && t.at(y, x, 1) > t.at(y, x, 2))
                ++green_dominant;
    CHECK(green_dominant >= static_cast<int>(0.9 * t.height * t.width));
}

TEST_CASE("dense straight grid renders dark rows and columns at regular spacing") {
    Archetype a{1, 1.0, 0.0, 0.5, 0.0};
    ImageTile t = sw::render_tile(a, 123, 32, 0.0);
    auto dark_lines = [&](bool columns) {
        std::vector<double> means(32, 0.0);
        double overall = 0.0;
        for (int i = 0; i < 32; ++i) {
            for (int j = 0; j < 32; ++j) {
                int y = columns ? j : i;
                int x = columns ? i : j;
                means[static_cast<std::size_t>(i)] +=
                    (t.at(y, x, 0) + t.at(y, x, 1) + t.at(y, x, 2)) / 3.0;
            }
            means[static_cast<std::size_t>(i)] /= 32.0;
            overall += means[static_cast<std::size_t>(i)];
        }
        overall /= 32.0;
        std::vector<int> dark;
        for (int i = 0; i < 32; ++i)
            if (means[static_cast<std::size_t>(i)] < 0.72 * overall) dark.push_back(i);
        return dark;
    };
    for (bool columns : {true, false}) {
        auto dark = dark_lines(columns);
        CHECK(dark.size() >= 4);
        CHECK(dark.size() <= 8);
        for (std::size_t i = 1; i < dark.size(); ++i) {
            int gap = dark[static_cast<std::size_t>(i)] - dark[i - 1];
            CHECK(gap >= 5);
            CHECK(gap <= 8);
        }
    }
}

TEST_CASE("same archetype and seed give the identical tile") {
    Archetype a{2, 0.6, 0.3, 0.5, 0.4};
    ImageTile t1 = sw::render_tile(a, 4242);
    ImageTile t2 = sw::render_tile(a, 4242);
    CHECK(t1.pixels == t2.pixels);
    ImageTile t3 = sw::render_tile(a, 4243);
    CHECK(tile_hash(t1) != doctest::Approx(tile_hash(t3)).epsilon(1e-12));
}

TEST_CASE("building scale shifts high-frequency energy by at least 10 percent") {
    Archetype small{0, 0.4, 0.2, 0.15, 0.3};
    Archetype large{0, 0.4, 0.2, 0.85, 0.3};
    // average the statistic over seeds so layout nuisance cancels
    double e_small = 0.0, e_large = 0.0;
    for (std::uint64_t s = 0; s < 8; ++s) {
        e_small += mean_abs_gradient(sw::render_tile(small, 100 + s, 32, 0.0));
        e_large += mean_abs_gradient(sw::render_tile(large, 100 + s, 32, 0.0));
    }
    double lo = std::min(e_small, e_large), hi = std::max(e_small, e_large);
    CHECK(hi >= 1.10 * lo);
}

TEST_CASE("ground truth probabilities: uniform, closed form, oracle") {
    World w = sw::gen_world(31, 10, 1, 100);

    // all-zero coefficients -> uniform probabilities
    World zeroed = w;
    for (auto& row : zeroed.truth.beta_im_trip) std::fill(row.begin(), row.end(), 0.0);
    for (auto& row : zeroed.truth.beta_sd_trip) std::fill(row.begin(), row.end(), 0.0);
    std::fill(zeroed.truth.beta_alt.begin(), zeroed.truth.beta_alt.end(), 0.0);
    auto p0 = sw::ground_truth_probs(zeroed.trips[0], zeroed);
    for (double v : p0) CHECK(v == doctest::Approx(1.0 / kNumModes).epsilon(1e-12));

    // two-alternative closed form
    auto two = sw::stable_softmax({std::log(3.0), 0.0});
    CHECK(two[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(two[1] == doctest::Approx(0.25).epsilon(1e-12));

    // brute-force exponentiation oracle + normalization contract
    for (int n = 0; n < 20; ++n) {
        const auto& trip = w.trips[static_cast<std::size_t>(n * 3)];
        auto v = sw::ground_truth_utilities(trip, w);
        auto p = sw::ground_truth_probs(trip, w);
        double z = 0.0;
        for (double u : v) z += std::exp(u);
        double sum = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            CHECK(p[k] == doctest::Approx(std::exp(v[k]) / z).epsilon(1e-10));
            CHECK(p[k] > 0.0);
            sum += p[k];
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("region shares equal the softmax of the regional ground truth") {
    World w = sw::gen_world(33, 15, 1, 100);
    for (std::size_t r = 0; r < w.regions.size(); ++r) {
        auto p = sw::region_share_probs(w.truth, w.region_truth[r].features);
        for (int k = 0; k < kNumModes; ++k)
            CHECK(w.regions[r].shares[static_cast<std::size_t>(k)] ==
                  doctest::Approx(p[static_cast<std::size_t>(k)]).epsilon(1e-12));
    }
}
