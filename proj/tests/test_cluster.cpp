#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>

#include "riskprof/cluster.hpp"
#include "riskprof/synth.hpp"

using namespace riskprof;

namespace {

RiskProfile profile(const std::string& id, std::vector<double> values) {
    RiskProfile p;
    p.patient_id = id;
    p.values = std::move(values);
    for (std::size_t i = 0; i < p.values.size(); ++i)
        p.timestamps.push_back(static_cast<std::int64_t>(i) * 300);
    return p;
}

// Two smooth, weakly correlated base shapes plus per-profile noise. Group
// structure survives per-profile standardization because the shapes differ.
struct Planted {
    std::vector<RiskProfile> profiles;
    std::vector<std::string> group_a, group_b;
};

Planted planted_fixture(std::uint64_t seed, double noise = 0.02) {
    Rng rng(seed);
    const std::size_t len = 40;
    const std::size_t n_a = 2 + rng.index(5);
    const std::size_t n_b = 2 + rng.index(5);
    const double phase = rng.uniform(0.0, 3.0);
    Planted out;
    auto shape_a = [&](std::size_t t) {
        return std::sin(2.0 * 3.14159265358979 * static_cast<double>(t) / 20.0 + phase);
    };
    auto shape_b = [&](std::size_t t) {
        return static_cast<double>(t) / 40.0 +
               0.3 * std::cos(2.0 * 3.14159265358979 * static_cast<double>(t) / 7.0 + phase);
    };
    for (std::size_t i = 0; i < n_a + n_b; ++i) {
        const bool in_a = i < n_a;
        std::vector<double> v(len);
        for (std::size_t t = 0; t < len; ++t)
            v[t] = (in_a ? shape_a(t) : shape_b(t)) + noise * rng.normal();
        const std::string id = (in_a ? "a" : "b") + std::to_string(in_a ? i : i - n_a);
        out.profiles.push_back(profile(id, std::move(v)));
        (in_a ? out.group_a : out.group_b).push_back(id);
    }
    std::sort(out.group_a.begin(), out.group_a.end());
    std::sort(out.group_b.begin(), out.group_b.end());
    return out;
}

std::vector<std::vector<std::string>> as_sets(std::vector<std::vector<std::string>> p) {
    for (auto& c : p) std::sort(c.begin(), c.end());
    std::sort(p.begin(), p.end());
    return p;
}

}  // namespace

TEST_CASE("profile distance is Euclidean with metric axioms") {
    CHECK(profile_distance({0.0, 0.0, 0.0}, {3.0, 4.0, 0.0}) == doctest::Approx(5.0));
    CHECK(profile_distance({1.0, 2.0}, {1.0, 2.0}) == 0.0);
    CHECK_THROWS_AS(profile_distance(std::vector<double>{}, std::vector<double>{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(profile_distance({1.0}, {1.0, 2.0}), std::invalid_argument);

    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> a(8), b(8);
        for (auto& v : a) v = rng.uniform(-10.0, 10.0);
        for (auto& v : b) v = rng.uniform(-10.0, 10.0);
        // symmetry and an independent per-element evaluation
        double sum = 0.0;
        for (std::size_t i = 0; i < 8; ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
        CHECK(profile_distance(a, b) == doctest::Approx(std::sqrt(sum)));
        CHECK(profile_distance(a, b) == profile_distance(b, a));
        CHECK(profile_distance(a, a) == 0.0);
    }
}

TEST_CASE("resample_linear keeps endpoints and interpolates linearly") {
    const std::vector<double> v = {0.0, 1.0, 2.0, 3.0};
    CHECK(resample_linear(v, 4) == v);
    const auto r = resample_linear(v, 7);
    CHECK(r.front() == 0.0);
    CHECK(r.back() == 3.0);
    CHECK(r[2] == doctest::Approx(1.0));
    const auto down = resample_linear(v, 2);
    CHECK(down == std::vector<double>{0.0, 3.0});
}

TEST_CASE("two profiles merge into a single-link dendrogram") {
    const auto d = agglomerate({profile("a", {0.0, 0.0}), profile("b", {3.0, 4.0})},
                               Linkage::Complete, false);
    REQUIRE(d.merges.size() == 1);
    CHECK(d.merges[0].height == doctest::Approx(5.0));
    const auto partition = cut_by_max_gap(d);
    REQUIRE(partition.size() == 2);
}

TEST_CASE("equidistant profiles merge deterministically by patient id") {
    // Three profiles pairwise equidistant: ties break lexicographically.
    const double h = std::sqrt(3.0) / 2.0;
    const auto d = agglomerate({profile("pc", {-0.5, 0.0}), profile("pa", {0.5, 0.0}),
                                profile("pb", {0.0, h})},
                               Linkage::Complete, false);
    REQUIRE(d.merges.size() == 2);
    // First merge joins pa (leaf 0) and pb (leaf 1).
    CHECK(d.leaves == std::vector<std::string>{"pa", "pb", "pc"});
    CHECK(d.merges[0].left == 0);
    CHECK(d.merges[0].right == 1);
}

TEST_CASE("dendrogram heights are non-decreasing") {
    const auto planted = planted_fixture(3);
    const auto d = agglomerate(planted.profiles, Linkage::Complete, true);
    for (std::size_t i = 1; i < d.merges.size(); ++i)
        CHECK(d.merges[i].height >= d.merges[i - 1].height);
    const auto davg = agglomerate(planted.profiles, Linkage::Average, true);
    for (std::size_t i = 1; i < davg.merges.size(); ++i)
        CHECK(davg.merges[i].height >= davg.merges[i - 1].height);
}

TEST_CASE("cut below the dominant gap yields two clusters") {
    // Heights 1, 1.1, 9: the 7.9 gap dominates.
    const auto d = agglomerate({profile("a", {0.0, 0.0}), profile("b", {1.0, 0.0}),
                                profile("c", {0.5, 1.0}), profile("d", {10.0, 10.0})},
                               Linkage::Complete, false);
    const auto partition = cut_by_max_gap(d);
    REQUIRE(partition.size() == 2);
    CHECK(as_sets(partition) ==
          as_sets({{"a", "b", "c"}, {"d"}}));
}

TEST_CASE("all-equal merge heights fall back to two clusters") {
    Dendrogram d;
    d.leaves = {"a", "b", "c", "d"};
    d.merges = {{0, 1, 2.0}, {2, 3, 2.0}, {4, 5, 2.0}};
    const auto partition = cut_by_max_gap(d);
    CHECK(partition.size() == 2);
}

TEST_CASE("planted two-group fixtures are recovered on 100 seeds") {
    std::size_t recovered = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto planted = planted_fixture(seed);
        // Fixture validity: separation ratio >= 5 after the same preprocessing
        // agglomerate applies.
        const std::size_t min_len = 40;
        std::vector<std::vector<double>> std_vecs;
        std::vector<bool> in_a;
        for (const auto& p : planted.profiles) {
            auto v = resample_linear(p.values, min_len);
            standardize(v);
            std_vecs.push_back(std::move(v));
            in_a.push_back(p.patient_id[0] == 'a');
        }
        double max_within = 0.0, min_between = 1e18;
        for (std::size_t i = 0; i < std_vecs.size(); ++i)
            for (std::size_t j = i + 1; j < std_vecs.size(); ++j) {
                const double dist = profile_distance(std_vecs[i], std_vecs[j]);
                if (in_a[i] == in_a[j])
                    max_within = std::max(max_within, dist);
                else
                    min_between = std::min(min_between, dist);
            }
        REQUIRE(min_between / std::max(max_within, 1e-12) >= 5.0);

        const auto d = agglomerate(planted.profiles, Linkage::Complete, true);
        const auto partition = cut_by_max_gap(d);
        if (as_sets(partition) == as_sets({planted.group_a, planted.group_b})) ++recovered;
        // The top merge joins the two groups.
        CHECK(d.merges.back().height > d.merges[d.merges.size() - 2].height);
    }
    CHECK(recovered == 100);
}

TEST_CASE("dendrogram and labels are invariant to input permutation") {
    auto planted = planted_fixture(17);
    const auto d1 = agglomerate(planted.profiles, Linkage::Complete, true);
    auto shuffled = planted.profiles;
    std::reverse(shuffled.begin(), shuffled.end());
    std::swap(shuffled.front(), shuffled[shuffled.size() / 2]);
    const auto d2 = agglomerate(shuffled, Linkage::Complete, true);
    CHECK(d1.leaves == d2.leaves);
    REQUIRE(d1.merges.size() == d2.merges.size());
    for (std::size_t i = 0; i < d1.merges.size(); ++i) {
        CHECK(d1.merges[i].left == d2.merges[i].left);
        CHECK(d1.merges[i].right == d2.merges[i].right);
        CHECK(d1.merges[i].height == d2.merges[i].height);
    }
    CHECK(cut_by_max_gap(d1) == cut_by_max_gap(d2));
}

TEST_CASE("labeling assigns the lower-success cluster as less vulnerable") {
    std::map<std::string, double> rates = {
        {"a", 40.0}, {"b", 42.0}, {"c", 90.0}, {"d", 88.0}, {"e", 95.0}};
    const auto labeled =
        label_clusters({{"a", "b"}, {"c", "d", "e"}}, rates);
    CHECK(labeled.less_vulnerable == std::vector<std::string>{"a", "b"});
    CHECK(labeled.more_vulnerable == std::vector<std::string>{"c", "d", "e"});
    CHECK_FALSE(labeled.tie_warning);

    // Equal means: the smaller cluster becomes less vulnerable, with a warning.
    std::map<std::string, double> equal = {{"a", 50.0}, {"b", 50.0}, {"c", 50.0}};
    const auto tied = label_clusters({{"a"}, {"b", "c"}}, equal);
    CHECK(tied.tie_warning);
    CHECK(tied.less_vulnerable == std::vector<std::string>{"a"});

    CHECK_THROWS_AS(label_clusters({{"a"}, {"b"}, {"c"}}, rates), std::invalid_argument);
    CHECK_THROWS_AS(label_clusters({{"a"}, {"zz"}}, rates), std::runtime_error);
}

TEST_CASE("dendrogram JSON and Newick exports are parseable and stable") {
    const auto planted = planted_fixture(23);
    const auto d = agglomerate(planted.profiles, Linkage::Complete, true);
    const auto restored = dendrogram_from_json(dendrogram_to_json(d));
    CHECK(restored.leaves == d.leaves);
    REQUIRE(restored.merges.size() == d.merges.size());
    for (std::size_t i = 0; i < d.merges.size(); ++i)
        CHECK(restored.merges[i].height == d.merges[i].height);

    const auto newick = dendrogram_to_newick(d);
    CHECK(newick.back() == ';');
    for (const auto& leaf : d.leaves)
        CHECK(newick.find(leaf) != std::string::npos);
}

TEST_CASE("standardize centers and scales in place") {
    std::vector<double> v = {2.0, 4.0, 6.0, 8.0};
    standardize(v);
    double mean = 0.0, var = 0.0;
    for (double x : v) mean += x;
    mean /= 4.0;
    for (double x : v) var += x * x;
    CHECK(mean == doctest::Approx(0.0));
    CHECK(var / 4.0 == doctest::Approx(1.0));

    std::vector<double> flat = {3.0, 3.0, 3.0};
    standardize(flat);  // constant profiles are centered, not divided
    for (double x : flat) CHECK(x == 0.0);
}
