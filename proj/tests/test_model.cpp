#include <doctest.h>

#include <cmath>
#include <vector>

#include "bdre/error.hpp"
#include "bdre/model.hpp"

using namespace bdre;

namespace {

const Point kNoEnv{};

ModelSpec model(const char* name, ParamMap params) { return catalog(name, params); }

// direct product of lambda_{k-1}/mu_k, no logs
double direct_ratio(const ModelSpec& m, std::size_t n, EnvPoint z) {
    double r = 1.0;
    for (std::size_t k = 1; k <= n; ++k) r *= m.birth(k - 1, z) / m.death(k, z);
    return r;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("cumulative ratio values") {
    auto mm1 = model("mm1", {{"lambda", Param::constant(1)}, {"mu", Param::constant(2)}});
    CHECK(cumulative_ratio(mm1, kNoEnv, 10).value(3) == doctest::Approx(0.125).epsilon(1e-14));

    auto mminf = model("mminf", {{"lambda", Param::constant(1)}, {"mu", Param::constant(1)}});
    CHECK(cumulative_ratio(mminf, kNoEnv, 10).value(2) == doctest::Approx(0.5).epsilon(1e-14));

    // K = 1: mu_1 = mu, mu_2 = mu + gamma, all rates 1 -> r_2 = 1 * 1/2
    auto abandon = model("mmk_plus_m",
                         {{"K", Param::constant(1)}, {"lambda", Param::constant(1)}, {"mu", Param::constant(1)},
                          {"gamma", Param::constant(1)}});
    CHECK(cumulative_ratio(abandon, kNoEnv, 10).value(2) == doctest::Approx(0.5).epsilon(1e-14));

    for (const auto& name : catalog_names()) {
        ParamMap p{{"lambda", Param::constant(0.7)}, {"mu", Param::constant(1.3)}, {"K", Param::constant(2)},
                   {"gamma", Param::constant(0.4)}, {"theta", Param::constant(0.5)},
                   {"vartheta", Param::constant(0.2)}, {"c", Param::constant(0.3)}};
        auto m = catalog(name, p);
        auto r = cumulative_ratio(m, kNoEnv, 40);
        CHECK(r.value(0) == 1.0);
        for (std::size_t n = 1; n <= 40; ++n) {
            const double direct = direct_ratio(m, n, kNoEnv);
            if (direct == 0.0) {
                CHECK(r.value(n) == 0.0);
            } else {
                CHECK(r.value(n) == doctest::Approx(direct).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("environment-dependent parameters") {
    auto m = model("mm1", {{"lambda", Param::env(0)}, {"mu", Param::env(1, 2.0, 1.0)}});
    const Point z{0.5, 1.5};
    CHECK(m.birth(3, z) == 0.5);
    CHECK(m.death(3, z) == doctest::Approx(4.0));
    CHECK(m.death(0, z) == 0.0);
    CHECK(log_ratio(m, 2, z) == doctest::Approx(2.0 * std::log(0.125)));
}

TEST_CASE("overflow is reported rather than returned as inf") {
    auto m = model("mminf", {{"lambda", Param::constant(1e6)}, {"mu", Param::constant(1)}});
    auto r = cumulative_ratio(m, kNoEnv, 200);
    CHECK(std::isfinite(r.log_values[200]));
    CHECK_THROWS_AS(r.value(200), Error);
}

TEST_CASE("normalized weights") {
    auto mm1 = model("mm1", {{"lambda", Param::constant(1)}, {"mu", Param::constant(2)}});
    CHECK(normalized_weights(mm1, kNoEnv).kappa[0] == doctest::Approx(0.5).epsilon(1e-9));

    auto mminf = model("mminf", {{"lambda", Param::constant(1)}, {"mu", Param::constant(1)}});
    CHECK(normalized_weights(mminf, kNoEnv).kappa[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

    // oracle: direct series of rho^n/(K! K^{n-K}) with K = 2, rho = 1, summed to n = 200
    auto mmk = model("mmk", {{"K", Param::constant(2)}, {"lambda", Param::constant(1)}, {"mu", Param::constant(1)}});
    double total = 2.0;
    for (int n = 2; n <= 200; ++n) total += 1.0 / (2.0 * std::pow(2.0, n - 2));
    CHECK(normalized_weights(mmk, kNoEnv).kappa[0] == doctest::Approx(1.0 / total).epsilon(1e-9));
    CHECK(1.0 / total == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    auto w = normalized_weights(mm1, kNoEnv, 512);
    double sum = 0.0;
    for (double k : w.kappa) sum += k;
    CHECK(sum + w.tail_bound == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("summability") {
    auto half = model("mm1", {{"lambda", Param::constant(1)}, {"mu", Param::constant(2)}});
    CHECK(check_summability(half, kNoEnv, 200).summable());

    auto critical = model("mm1", {{"lambda", Param::constant(1)}, {"mu", Param::constant(1)}});
    CHECK_FALSE(check_summability(critical, kNoEnv, 200).summable());
    CHECK_THROWS_AS(normalized_weights(critical, kNoEnv), Error);

    auto growth = model("linear_growth",
                        {{"lambda", Param::constant(1)}, {"theta", Param::constant(1)}, {"mu", Param::constant(3)}});
    CHECK(check_summability(growth, kNoEnv, 500).summable());
    // oracle: partial sums of r_n = prod (k-1+1)/(3k) = 3^{-n}
    double partial = 0.0;
    for (int n = 0; n <= 500; ++n) partial += std::pow(3.0, -n);
    CHECK(partial == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("catalog entries") {
    auto mmk = model("mmk", {{"K", Param::constant(2)}, {"lambda", Param::constant(1)}, {"mu", Param::constant(1)}});
    CHECK(cumulative_ratio(mmk, kNoEnv, 5).value(3) == doctest::Approx(0.25).epsilon(1e-14));

    auto loss = model("mmk0", {{"K", Param::constant(2)}, {"lambda", Param::constant(1)}, {"mu", Param::constant(1)}});
    CHECK(loss.birth(2, kNoEnv) == 0.0);
    CHECK(cumulative_ratio(loss, kNoEnv, 5).value(3) == 0.0);

    auto growth = model("linear_growth",
                        {{"lambda", Param::constant(1)}, {"theta", Param::constant(2)}, {"mu", Param::constant(2)}});
    CHECK(cumulative_ratio(growth, kNoEnv, 5).value(1) == doctest::Approx(1.0));

    CHECK_THROWS_AS(catalog("mg1", {}), Error);
    try {
        catalog("mm1", {{"lambda", Param::constant(1)}});
        FAIL("missing mu accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingParam);
    }
}

TEST_CASE("detailed balance at a fixed environment") {
    auto m = model("mmk_plus_m", {{"K", Param::constant(3)}, {"lambda", Param::constant(2.5)},
                                  {"mu", Param::constant(1)}, {"gamma", Param::constant(0.5)}});
    auto w = normalized_weights(m, kNoEnv, 300);
    for (std::size_t n = 0; n + 1 < 60; ++n) {
        const double flow_up = w.kappa[n] * m.birth(n, kNoEnv);
        const double flow_down = w.kappa[n + 1] * m.death(n + 1, kNoEnv);
        CHECK(flow_up == doctest::Approx(flow_down).epsilon(1e-12));
    }
}

TEST_CASE("variability templates") {
    CHECK(geometric_variability(0.9)(2) == doctest::Approx(0.81));
    CHECK(constant_variability(3.0)(100) == 3.0);
    auto table = table_variability({1.0, 0.5, 0.25});
    CHECK(table(1) == 0.5);
    CHECK(table(10) == 0.25);
}

}
