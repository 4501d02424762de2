#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "oracles.hpp"
#include "riskprof/forecast.hpp"
#include "riskprof/synth.hpp"

using namespace riskprof;

namespace {

PatientTrace trace_from(const std::vector<double>& cgm) {
    PatientTrace t;
    t.patient_id = "fx";
    t.cadence = 300;
    for (std::size_t i = 0; i < cgm.size(); ++i) {
        GlucoseSample s;
        s.timestamp = static_cast<std::int64_t>(i) * 300;
        s.cgm = cgm[i];
        s.basal = 1.0;
        t.samples.push_back(s);
    }
    return t;
}

// Hand-built model that is exactly linear in the raw window values.
ForecastModel linear_model(std::size_t history_len, const std::vector<double>& cgm_weights,
                           double bias) {
    ForecastModel m;
    m.mode = ForecastMode::Aggregate;
    m.history_len = history_len;
    m.horizon = 1;
    m.hidden_width = 0;
    const std::size_t d = m.input_dim();
    m.norm.mean.assign(d, 0.0);
    m.norm.scale.assign(d, 1.0);
    m.norm.target_mean = 0.0;
    m.norm.target_scale = 1.0;
    m.out_w.assign(d, 0.0);
    for (std::size_t s = 0; s < history_len; ++s)
        m.out_w[s * kFeaturesPerStep] = cgm_weights[s];
    m.out_b = bias;
    return m;
}

FeatureWindow window_of(const std::vector<double>& cgm) {
    FeatureWindow w;
    w.history_len = cgm.size();
    w.values.assign(cgm.size() * kFeaturesPerStep, 0.0);
    for (std::size_t s = 0; s < cgm.size(); ++s) w.set_cgm(s, cgm[s]);
    return w;
}

ForecastModel random_hidden_model(std::size_t history_len, std::uint64_t seed) {
    ForecastModel m;
    m.history_len = history_len;
    m.horizon = 1;
    m.hidden_width = 8;
    const std::size_t d = m.input_dim();
    Rng rng(seed);
    m.norm.mean.assign(d, 0.0);
    m.norm.scale.assign(d, 1.0);
    for (std::size_t i = 0; i < d; ++i) {
        m.norm.mean[i] = rng.uniform(80.0, 140.0);
        m.norm.scale[i] = rng.uniform(5.0, 40.0);
    }
    m.norm.target_mean = 120.0;
    m.norm.target_scale = 25.0;
    m.hidden_w.resize(m.hidden_width * d);
    m.hidden_b.resize(m.hidden_width);
    m.out_w.resize(m.hidden_width);
    for (auto& v : m.hidden_w) v = rng.uniform(-0.4, 0.4);
    for (auto& v : m.hidden_b) v = rng.uniform(-0.2, 0.2);
    for (auto& v : m.out_w) v = rng.uniform(-0.8, 0.8);
    m.out_b = rng.uniform(-0.5, 0.5);
    return m;
}

}  // namespace

TEST_CASE("constant trace trains to a constant prediction") {
    const auto trace = trace_from(std::vector<double>(220, 120.0));
    TrainConfig cfg;
    cfg.hidden_width = 8;
    cfg.seed = 1;
    const auto model = fit_forecaster({trace}, ForecastMode::Personalized, 12, 6, cfg);
    const auto windows = windowize(trace, 12, 6);
    for (std::size_t i = 0; i < windows.size(); i += 17)
        CHECK(predict(model, windows[i]) == doctest::Approx(120.0).epsilon(1.0 / 120.0));
    CHECK(model.train_rmse < 1.0);
}

TEST_CASE("noisy ramp trains to within the generator noise of the closed form") {
    const double slope = 0.12, intercept = 90.0, noise = 5.0;
    Rng rng(99);
    std::vector<double> cgm(420);
    for (std::size_t i = 0; i < cgm.size(); ++i)
        cgm[i] = intercept + slope * static_cast<double>(i) + noise * rng.normal();
    const auto trace = trace_from(cgm);
    TrainConfig cfg;
    cfg.hidden_width = 8;
    cfg.seed = 2;
    cfg.max_epochs = 3000;
    const auto model = fit_forecaster({trace}, ForecastMode::Personalized, 12, 6, cfg);

    // Closed-form continuation of the ramp as the oracle target.
    const auto windows = windowize(trace, 12, 6);
    double err2 = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < windows.size(); i += 5) {
        const double t = static_cast<double>(windows[i].target_timestamp) / 300.0;
        const double oracle = intercept + slope * t;
        const double got = predict(model, windows[i]);
        err2 += (got - oracle) * (got - oracle);
        ++count;
    }
    CHECK(std::sqrt(err2 / static_cast<double>(count)) < noise);
}

TEST_CASE("aggregate fit over two identical patients matches the personalized fit") {
    const auto base = trace_from([] {
        Rng rng(5);
        std::vector<double> cgm(260);
        double v = 110.0;
        for (auto& c : cgm) {
            v += rng.uniform(-4.0, 4.0);
            v = std::clamp(v, 80.0, 180.0);
            c = v;
        }
        return cgm;
    }());
    auto twin_a = base;
    twin_a.patient_id = "twin_a";
    auto twin_b = base;
    twin_b.patient_id = "twin_b";

    TrainConfig cfg;
    cfg.hidden_width = 8;
    cfg.seed = 31;
    cfg.max_epochs = 600;
    const auto personalized = fit_forecaster({base}, ForecastMode::Personalized, 12, 6, cfg);
    const auto aggregate =
        fit_forecaster({twin_a, twin_b}, ForecastMode::Aggregate, 12, 6, cfg);

    const auto windows = windowize(base, 12, 6);
    for (std::size_t i = 0; i < windows.size(); i += 23)
        CHECK(predict(personalized, windows[i]) ==
              doctest::Approx(predict(aggregate, windows[i])).epsilon(1e-6));
}

TEST_CASE("training is bitwise deterministic under a fixed seed") {
    const auto traces = generate_synthetic_cohort([] {
        SyntheticCohortConfig c;
        c.n_patients = 1;
        c.trace_len = 400;
        c.seed = 17;
        c.patients = {{"p", 0.7, 280.0, 0.2}};
        return c;
    }());
    TrainConfig cfg;
    cfg.hidden_width = 16;
    cfg.seed = 77;
    cfg.max_epochs = 300;
    const auto a = fit_forecaster({traces[0]}, ForecastMode::Personalized, 12, 6, cfg);
    const auto b = fit_forecaster({traces[0]}, ForecastMode::Personalized, 12, 6, cfg);
    CHECK(a.flat_parameters() == b.flat_parameters());
    CHECK(a.train_rmse == b.train_rmse);
}

TEST_CASE("predictions are clamped to the representable glucose range") {
    const auto model = linear_model(3, {1.0, 1.0, 1.0}, 0.0);
    CHECK(predict(model, window_of({200.0, 200.0, 200.0})) == kCgmMax);
    CHECK(predict_unclamped(model, window_of({200.0, 200.0, 200.0})) == 600.0);
    const auto negative = linear_model(3, {-1.0, 0.0, 0.0}, 0.0);
    CHECK(predict(negative, window_of({50.0, 0.0, 0.0})) == 0.0);
}

TEST_CASE("predict rejects shape mismatches") {
    const auto model = linear_model(3, {1.0, 0.0, 0.0}, 0.0);
    CHECK_THROWS_AS(predict(model, window_of({1.0, 2.0})), std::invalid_argument);
}

TEST_CASE("gradient of a linear model is exactly its weights") {
    const auto model = linear_model(3, {0.0, 0.0, 0.7}, 5.0);
    const auto grad = gradient_wrt_cgm(model, window_of({100.0, 100.0, 100.0}));
    CHECK(grad[0] == 0.0);
    CHECK(grad[1] == 0.0);
    CHECK(grad[2] == 0.7);
}

TEST_CASE("zero-weight model has zero gradient") {
    ForecastModel m = random_hidden_model(4, 3);
    for (auto& v : m.out_w) v = 0.0;
    const auto grad = gradient_wrt_cgm(m, window_of({100.0, 120.0, 110.0, 105.0}));
    for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("analytic gradient matches central finite differences") {
    Rng rng(123);
    for (int rep = 0; rep < 20; ++rep) {
        const auto model = random_hidden_model(6, 1000 + static_cast<std::uint64_t>(rep));
        std::vector<double> cgm(6);
        for (auto& v : cgm) v = rng.uniform(60.0, 300.0);
        const auto w = window_of(cgm);
        const auto analytic = gradient_wrt_cgm(model, w);
        const auto fd = oracle::fd_gradient(model, w, 0.05);
        for (std::size_t s = 0; s < 6; ++s) {
            const double denom = std::max({std::abs(fd[s]), std::abs(analytic[s]), 1e-6});
            CHECK(std::abs(analytic[s] - fd[s]) / denom < 1e-4);
        }
    }
}

TEST_CASE("fit_forecaster rejects undersized training sets and bad modes") {
    const auto trace = trace_from(std::vector<double>(40, 100.0));
    TrainConfig cfg;
    cfg.hidden_width = 32;  // 1601 parameters -> needs 160 windows
    cfg.seed = 1;
    CHECK_THROWS_AS(fit_forecaster({trace}, ForecastMode::Personalized, 12, 6, cfg),
                    std::runtime_error);

    auto other = trace;
    other.patient_id = "other";
    CHECK_THROWS_AS(
        fit_forecaster({trace, other}, ForecastMode::Personalized, 12, 6, cfg),
        std::invalid_argument);
}

TEST_CASE("forecast model JSON round trip is exact") {
    const auto traces = trace_from(std::vector<double>(240, 115.0));
    TrainConfig cfg;
    cfg.hidden_width = 4;
    cfg.seed = 9;
    cfg.max_epochs = 50;
    const auto model = fit_forecaster({traces}, ForecastMode::Personalized, 12, 6, cfg);
    const auto loaded = forecast_model_from_json(forecast_model_to_json(model));
    CHECK(loaded.flat_parameters() == model.flat_parameters());
    CHECK(loaded.norm.mean == model.norm.mean);
    CHECK(loaded.norm.target_scale == model.norm.target_scale);
    CHECK(loaded.patient_id == model.patient_id);
    const auto w = windowize(traces, 12, 6).front();
    CHECK(predict(loaded, w) == predict(model, w));
}
