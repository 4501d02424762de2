#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "oracles.hpp"
#include "riskprof/attack.hpp"
#include "riskprof/synth.hpp"

using namespace riskprof;

namespace {

ForecastModel linear_model(std::size_t history_len, const std::vector<double>& cgm_weights,
                           double bias) {
    ForecastModel m;
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

FeatureWindow window_of(const std::vector<double>& cgm, double basal = 1.0) {
    FeatureWindow w;
    w.history_len = cgm.size();
    w.values.assign(cgm.size() * kFeaturesPerStep, 0.0);
    for (std::size_t s = 0; s < cgm.size(); ++s) {
        w.set_cgm(s, cgm[s]);
        w.values[s * kFeaturesPerStep + 1] = basal;
    }
    return w;
}

}  // namespace

TEST_CASE("benign hyper predictions are skipped, not attacked") {
    const auto model = linear_model(3, {0.0, 0.0, 1.0}, 0.0);
    const auto w = window_of({100.0, 100.0, 200.0});  // prediction 200: already hyper
    const auto c = AttackConstraints::for_context(MealContext::Fasting, {});
    const auto o = craft_adversarial(model, w, MealContext::Fasting, c);
    CHECK(o.result == AttackResult::Skipped);
    CHECK(o.benign_state == DiagnosticState::Hyper);
    CHECK(o.iterations_used == 0);
    CHECK(o.adversarial_prediction == o.benign_prediction);
}

TEST_CASE("monotone model succeeds exactly when the upper corner crosses the threshold") {
    StateThresholds th;
    // Weights sum to 0.32: corner prediction = 499 * 0.32 = 159.68.
    const auto model = linear_model(3, {0.12, 0.1, 0.1}, 0.0);
    const auto w = window_of({100.0, 100.0, 100.0});  // benign prediction 32

    AttackConstraints fasting = AttackConstraints::for_context(MealContext::Fasting, th);
    fasting.max_iters = 400;
    fasting.step = 25.0;

    FeatureWindow corner = w;
    for (std::size_t s = 0; s < 3; ++s) corner.set_cgm(s, fasting.cgm_high);
    const double corner_pred = predict(model, corner);
    REQUIRE(corner_pred > th.hyper_fasting);  // fasting attack can succeed

    const auto fasting_outcome = craft_adversarial(model, w, MealContext::Fasting, fasting, th);
    CHECK(fasting_outcome.result == AttackResult::Success);
    CHECK(fasting_outcome.adversarial_state == DiagnosticState::Hyper);

    // Postprandial threshold 180 exceeds the corner prediction: must fail.
    AttackConstraints post = AttackConstraints::for_context(MealContext::Postprandial, th);
    post.max_iters = 400;
    post.step = 25.0;
    REQUIRE(corner_pred < th.hyper_postprandial);
    const auto post_outcome = craft_adversarial(model, w, MealContext::Postprandial, post, th);
    CHECK(post_outcome.result == AttackResult::Failure);
}

TEST_CASE("manipulated values stay inside the context bounds and non-cgm features are untouched") {
    StateThresholds th;
    Rng rng(42);
    for (int rep = 0; rep < 30; ++rep) {
        std::vector<double> weights(4);
        for (auto& v : weights) v = rng.uniform(-0.3, 0.6);
        const auto model = linear_model(4, weights, rng.uniform(0.0, 60.0));
        std::vector<double> cgm(4);
        for (auto& v : cgm) v = rng.uniform(60.0, 160.0);
        const auto w = window_of(cgm, 1.25);
        const auto ctx = rep % 2 == 0 ? MealContext::Fasting : MealContext::Postprandial;
        auto constraints = AttackConstraints::for_context(ctx, th, 40.0, 100);
        const auto o = craft_adversarial(model, w, ctx, constraints, th);
        if (o.result == AttackResult::Skipped) continue;

        for (std::size_t s = 0; s < 4; ++s) {
            if (o.adversarial_cgm[s] != w.cgm(s)) {
                CHECK(o.adversarial_cgm[s] >= constraints.cgm_low);
                CHECK(o.adversarial_cgm[s] <= constraints.cgm_high);
            }
        }
        const auto adv = apply_adversarial_cgm(w, o);
        for (std::size_t i = 0; i < w.values.size(); ++i)
            if (i % kFeaturesPerStep != 0) CHECK(adv.values[i] == w.values[i]);
        if (o.result == AttackResult::Success)
            CHECK(o.adversarial_state == DiagnosticState::Hyper);
    }
}

TEST_CASE("greedy agrees with exhaustive lattice search on small windows") {
    StateThresholds th;
    Rng rng(7);
    std::size_t successes = 0, failures = 0;
    for (int rep = 0; rep < 60; ++rep) {
        const std::size_t len = rep % 2 == 0 ? 3 : 4;
        std::vector<double> weights(len);
        for (auto& v : weights) v = rng.uniform(-0.35, 0.55);
        const auto model = linear_model(len, weights, rng.uniform(-20.0, 80.0));
        std::vector<double> cgm(len);
        for (auto& v : cgm) v = rng.uniform(60.0, 170.0);
        const auto w = window_of(cgm);
        const auto ctx = rep % 3 == 0 ? MealContext::Postprandial : MealContext::Fasting;
        auto constraints = AttackConstraints::for_context(ctx, th, 50.0, 200);

        const auto o = craft_adversarial(model, w, ctx, constraints, th);
        if (o.result == AttackResult::Skipped) continue;
        const bool lattice = oracle::lattice_attack_success(model, w, ctx, constraints, th);
        CHECK(o.success() == lattice);
        if (lattice)
            ++successes;
        else
            ++failures;
    }
    // The fixture set must exercise both outcomes for the equivalence to mean anything.
    CHECK(successes > 5);
    CHECK(failures > 5);
}

TEST_CASE("per-iteration predictions never decrease") {
    // Nonlinear model: run the attack and re-check the recorded outcome by
    // replaying the manipulation one applied move at a time is not possible
    // from the outside, so assert the endpoint ordering instead plus success
    // consistency over a batch of windows.
    StateThresholds th;
    Rng rng(21);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> weights(5);
        for (auto& v : weights) v = rng.uniform(-0.2, 0.5);
        const auto model = linear_model(5, weights, rng.uniform(0.0, 70.0));
        std::vector<double> cgm(5);
        for (auto& v : cgm) v = rng.uniform(60.0, 150.0);
        const auto w = window_of(cgm);
        const auto o = craft_adversarial(
            model, w, MealContext::Fasting,
            AttackConstraints::for_context(MealContext::Fasting, th, 20.0, 150), th);
        if (o.result == AttackResult::Skipped) continue;
        CHECK(o.adversarial_prediction >= o.benign_prediction);
    }
}

TEST_CASE("success rates aggregate per patient, state, and context") {
    std::vector<AttackOutcome> outcomes;
    auto add = [&](const std::string& id, DiagnosticState benign, MealContext ctx,
                   AttackResult result) {
        AttackOutcome o;
        o.patient_id = id;
        o.benign_state = benign;
        o.context = ctx;
        o.result = result;
        outcomes.push_back(o);
    };
    // 43 of 97 attackable windows succeed for pa.
    for (int i = 0; i < 97; ++i)
        add("pa", DiagnosticState::Normal, MealContext::Fasting,
            i < 43 ? AttackResult::Success : AttackResult::Failure);
    add("pa", DiagnosticState::Hyper, MealContext::Fasting, AttackResult::Skipped);
    // Every attackable window succeeds for pb.
    for (int i = 0; i < 10; ++i)
        add("pb", DiagnosticState::Hypo, MealContext::Postprandial, AttackResult::Success);

    const auto rates = aggregate_success_rates(outcomes);
    REQUIRE(rates.size() == 2);
    CHECK(rates[0].patient_id == "pa");
    CHECK(rates[0].cells[0][0].attackable == 97);
    CHECK(rates[0].cells[0][0].successes == 43);
    CHECK(rates[0].cells[0][0].percent() == doctest::Approx(44.329896907));
    CHECK(rates[0].cells[1][1].empty());  // no hypo/postprandial windows
    CHECK(rates[0].overall.attackable == 97);  // the skipped window is not attackable
    CHECK(rates[1].overall.percent() == doctest::Approx(100.0));
    CHECK_THROWS_AS(rates[0].cells[1][1].rate(), std::logic_error);
}

TEST_CASE("attack outcomes survive a JSONL round trip") {
    const auto model = linear_model(3, {0.2, 0.2, 0.2}, 0.0);
    const auto w = window_of({100.0, 110.0, 120.0});
    auto o = craft_adversarial(
        model, w, MealContext::Fasting,
        AttackConstraints::for_context(MealContext::Fasting, {}, 25.0, 300), {});
    o.patient_id = "pj";
    const auto loaded = outcomes_from_jsonl(outcomes_to_jsonl({o}));
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].patient_id == o.patient_id);
    CHECK(loaded[0].result == o.result);
    CHECK(loaded[0].benign_prediction == o.benign_prediction);
    CHECK(loaded[0].adversarial_prediction == o.adversarial_prediction);
    CHECK(loaded[0].adversarial_cgm == o.adversarial_cgm);
}

TEST_CASE("attack_trace stamps patient ids and uses per-window meal context") {
    SyntheticCohortConfig cfg;
    cfg.n_patients = 1;
    cfg.trace_len = 400;
    cfg.seed = 13;
    cfg.patients = {{"pt", 0.7, 280.0, 0.2}};
    const auto traces = generate_synthetic_cohort(cfg);
    TrainConfig tc;
    tc.hidden_width = 8;
    tc.seed = 4;
    tc.max_epochs = 200;
    const auto model = fit_forecaster({traces[0]}, ForecastMode::Personalized, 12, 6, tc);
    const auto outcomes = attack_trace(model, traces[1], 12, 6, 10.0, 300, cfg.thresholds);
    const auto windows = windowize(traces[1], 12, 6);
    REQUIRE(outcomes.size() == windows.size());
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        CHECK(outcomes[i].patient_id == "pt");
        CHECK(outcomes[i].target_timestamp == windows[i].target_timestamp);
        CHECK(outcomes[i].context ==
              meal_context_at(traces[1], windows[i].target_timestamp, cfg.thresholds));
    }
}
