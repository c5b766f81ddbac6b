#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mulki/encoder.hpp"
#include "mulki/error.hpp"
#include "mulki/losses.hpp"
#include "mulki/weightspace.hpp"
#include "oracles.hpp"

using namespace mulki;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.normal();
    }
    return v;
}

}  // namespace

TEST_CASE("wc value and gradient") {
    CHECK(wc_value(std::vector<double>{1, 2}, std::vector<double>{1, 2}) == 0.0);
    CHECK(wc_value(std::vector<double>{1, -1}, std::vector<double>{0, 0}) == 2.0);

    Rng rng(1);
    const auto prev = random_vec(rng, 7);
    Tensor theta = Tensor::vector(random_vec(rng, 7), true);
    const auto r = oracle::grad_check({theta}, [&] { return wc_loss(theta, prev); });
    CHECK(r.rel_error < 1e-6);
    const auto g = wc_gradient(theta.to_vector(), prev);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(std::abs(g[i] - 2.0 * (theta[i] - prev[i])) < 1e-15);
        CHECK(std::abs(r.analytic[i] - g[i]) < 1e-12);
    }
    CHECK(wc_loss(theta, prev).item() == doctest::Approx(wc_value(theta.to_vector(), prev)).epsilon(1e-14));
    CHECK_THROWS_AS(wc_loss(theta, std::vector<double>(3)), DimensionError);
}

TEST_CASE("wc is invariant under a shared permutation") {
    Rng rng(2);
    auto a = random_vec(rng, 10);
    auto b = random_vec(rng, 10);
    const double before = wc_value(a, b);
    std::vector<std::size_t> perm(10);
    for (std::size_t i = 0; i < 10; ++i) {
        perm[i] = (i * 3 + 1) % 10;
    }
    std::vector<double> pa(10);
    std::vector<double> pb(10);
    for (std::size_t i = 0; i < 10; ++i) {
        pa[i] = a[perm[i]];
        pb[i] = b[perm[i]];
    }
    CHECK(std::abs(wc_value(pa, pb) - before) < 1e-12);
}

TEST_CASE("we_init starts from the previous parameters") {
    const std::vector<double> prev{1, 2, 3};
    const WEState s = we_init(prev, 4, 2, EnsembleMode::we);
    CHECK(s.theta_hat == prev);
    CHECK(s.m == 0);
    CHECK_THROWS_AS(we_init(prev, 0, 1, EnsembleMode::we), ConfigError);
}

TEST_CASE("two averagings of 0, 3, 6 give 3") {
    WEState s = we_init(std::vector<double>{0.0}, 2, 5, EnsembleMode::we);
    CHECK_FALSE(we_step(s, std::vector<double>{100.0}, 1));
    CHECK(we_step(s, std::vector<double>{3.0}, 2));
    CHECK_FALSE(we_step(s, std::vector<double>{100.0}, 3));
    CHECK(we_step(s, std::vector<double>{6.0}, 4));
    CHECK(s.m == 2);
    CHECK(s.theta_hat[0] == 3.0);
}

TEST_CASE("running average equals the uniform mean of sampled checkpoints") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const std::size_t n = 5;
        const std::size_t interval = 1 + rng.index(4);
        const auto prev = random_vec(rng, n);
        WEState s = we_init(prev, interval, 3, EnsembleMode::we);
        std::vector<std::vector<double>> sampled{prev};
        for (std::size_t k = 1; k <= 10 * interval; ++k) {
            const auto theta = random_vec(rng, n);
            if (we_step(s, theta, k)) {
                sampled.push_back(theta);
            }
            CHECK(s.m == k / interval);
        }
        for (std::size_t i = 0; i < n; ++i) {
            double mean = 0.0;
            for (const auto& v : sampled) {
                mean += v[i];
            }
            mean /= static_cast<double>(sampled.size());
            CHECK(std::abs(s.theta_hat[i] - mean) < 1e-12);
        }
    }
}

TEST_CASE("constant stream is a fixed point") {
    const std::vector<double> c{0.1, -0.7, 1e-3};
    WEState s = we_init(c, 3, 2, EnsembleMode::we);
    for (std::size_t k = 1; k <= 300; ++k) {
        we_step(s, c, k);
    }
    CHECK(s.theta_hat == c);
}

TEST_CASE("ewe replaces live parameters every eta averagings") {
    Rng rng(3);
    const auto prev = random_vec(rng, 4);
    WEState s = we_init(prev, 2, 3, EnsembleMode::ewe);
    std::vector<double> live = prev;
    std::size_t replacements = 0;
    std::vector<std::vector<double>> sampled{prev};
    for (std::size_t k = 1; k <= 24; ++k) {
        for (double& x : live) {
            x += rng.normal(0.0, 0.1);
        }
        if (we_step(s, live, k)) {
            sampled.push_back(live);
        }
        if (ewe_step(s, live, k)) {
            ++replacements;
            CHECK(k % 6 == 0);
            for (std::size_t i = 0; i < 4; ++i) {
                double mean = 0.0;
                for (const auto& v : sampled) {
                    mean += v[i];
                }
                CHECK(std::abs(live[i] - mean / static_cast<double>(sampled.size())) < 1e-12);
            }
        }
    }
    CHECK(replacements == 4);

    WEState every = we_init(prev, 2, 1, EnsembleMode::ewe);
    std::vector<double> l2 = prev;
    for (std::size_t k = 1; k <= 10; ++k) {
        l2[0] += 1.0;
        we_step(every, l2, k);
        ewe_step(every, l2, k);
        if (k % 2 == 0) {
            CHECK(l2 == every.theta_hat);
        }
    }

    WEState plain = we_init(prev, 2, 1000000, EnsembleMode::ewe);
    std::vector<double> l3 = prev;
    for (std::size_t k = 1; k <= 50; ++k) {
        CHECK_FALSE(ewe_step(plain, l3, k));
    }
    WEState we_only = we_init(prev, 1, 1, EnsembleMode::we);
    CHECK_FALSE(ewe_step(we_only, l3, 1));
}

TEST_CASE("final params and off mode") {
    const std::vector<double> prev{1, 1};
    const std::vector<double> live{3, 5};
    WEState off = we_init(prev, 1, 1, EnsembleMode::off);
    CHECK_FALSE(we_step(off, live, 1));
    CHECK(final_params(off, live) == live);
    WEState on = we_init(prev, 1, 1, EnsembleMode::we);
    we_step(on, live, 1);
    CHECK(final_params(on, live) == std::vector<double>{2, 3});
    CHECK(final_params(on, live).size() == live.size());
}

TEST_CASE("ewe on an encoder") {
    const EncoderDims dims{3, 2, 4, 3, 3};
    DualEncoder m = DualEncoder::init(1, dims);
    const auto start = m.params_flat();
    WEState s = we_init(start, 1, 1, EnsembleMode::ewe);
    auto moved = start;
    for (double& x : moved) {
        x += 1.0;
    }
    m.load_flat(moved);
    CHECK(we_step(s, m.params_flat(), 1));
    CHECK(ewe_step(s, m, 1));
    CHECK(m.params_flat() == s.theta_hat);
}

TEST_CASE("we state serialization round-trips") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mulki_test_we";
    fs::remove_all(dir);
    Rng rng(4);
    WEState s = we_init(random_vec(rng, 6), 3, 4, EnsembleMode::ewe);
    we_step(s, random_vec(rng, 6), 3);
    save_we_state(dir / "we", s);
    const WEState back = load_we_state(dir / "we");
    CHECK(back.theta_hat == s.theta_hat);
    CHECK(back.m == s.m);
    CHECK(back.interval == s.interval);
    CHECK(back.eta == s.eta);
    CHECK(back.mode == s.mode);
    CHECK(parse_ensemble_mode("ewe") == EnsembleMode::ewe);
    CHECK_THROWS_AS(parse_ensemble_mode("swa"), ConfigError);
}
