#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdgzsl/rng.hpp"

using namespace sdgzsl;

TEST_CASE("rng: identical seed and stream replay the same sequence") {
    Rng a(42, "noise"), b(42, "noise");
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: streams with different names are decorrelated") {
    Rng a(42, "noise"), b(42, "permute");
    int equal = 0;
    for (int i = 0; i < 64; ++i)
        if (a.next_u64() == b.next_u64()) ++equal;
    CHECK(equal == 0);
}

TEST_CASE("rng: uniform stays in [0, 1)") {
    Rng r(1, "u");
    for (int i = 0; i < 10000; ++i) {
        const double v = r.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("rng: Box-Muller normals have the right first two moments") {
    Rng r(5, "normal");
    const int n = 100000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("rng: permutation output is a permutation") {
    Rng r(9, "perm");
    auto p = r.permutation(17);
    std::vector<std::size_t> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("rng: uniform_below is bounded and hits every value") {
    Rng r(3, "below");
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) ++hits[r.uniform_below(7)];
    for (int h : hits) CHECK(h > 0);
}

TEST_CASE("rng: state round-trip resumes the exact sequence") {
    Rng r(77, "ckpt");
    r.normal();
    r.uniform();
    const auto saved = r.state();
    std::vector<double> expect;
    for (int i = 0; i < 16; ++i) expect.push_back(r.normal());
    Rng restored;
    restored.set_state(saved);
    for (int i = 0; i < 16; ++i) CHECK(restored.normal() == expect[static_cast<std::size_t>(i)]);
}
