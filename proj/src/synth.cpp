#include "riskprof/synth.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <stdexcept>

namespace riskprof {

std::uint64_t Rng::splitmix() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() { return splitmix(); }

double Rng::uniform() { return static_cast<double>(splitmix() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

std::size_t Rng::index(std::size_t n) {
    return n == 0 ? 0 : static_cast<std::size_t>(splitmix() % n);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    Rng r(seed ^ (0xA24BAED4963EE407ull * (stream + 1)));
    return r.next_u64();
}

namespace {

struct Band {
    double lo, hi;
};

// hyper_ceiling acts as the patient's overall glucose ceiling: it bounds the
// excursion bands and, when low, the postprandial normal band as well.
Band value_band(DiagnosticState state, MealContext ctx, const StateThresholds& th,
                double hyper_ceiling) {
    const double cap = std::min(hyper_ceiling, kCgmMax);
    switch (state) {
        case DiagnosticState::Hypo:
            return {46.0, th.hypo - 6.0};
        case DiagnosticState::Normal:
            if (ctx == MealContext::Fasting)
                return {th.hypo + 14.0, th.hyper_fasting - 7.0};
            return {th.hypo + 18.0,
                    std::max(th.hypo + 26.0,
                             std::min({th.hyper_postprandial - 8.0, 172.0, cap}))};
        default: {
            if (ctx == MealContext::Fasting)
                return {th.hyper_fasting + 7.0,
                        std::max(th.hyper_fasting + 20.0, cap)};
            return {th.hyper_postprandial + 8.0,
                    std::max(th.hyper_postprandial + 24.0, cap)};
        }
    }
}

struct PlannedRun {
    std::size_t start = 0, len = 0;
    DiagnosticState state = DiagnosticState::Hyper;
    double peak_frac = 0.7;  // how far into the band the excursion tops out
};

// Random composition of total into parts >= 1.
std::vector<std::size_t> random_composition(std::size_t total, std::size_t parts, Rng& rng) {
    if (parts <= 1) return {total};
    std::vector<std::size_t> cuts;
    std::vector<std::size_t> pool(total - 1);
    std::iota(pool.begin(), pool.end(), std::size_t{1});
    for (std::size_t i = 0; i < parts - 1; ++i) {
        const std::size_t j = i + rng.index(pool.size() - i);
        std::swap(pool[i], pool[j]);
        cuts.push_back(pool[i]);
    }
    std::sort(cuts.begin(), cuts.end());
    std::vector<std::size_t> sizes;
    std::size_t prev = 0;
    for (std::size_t c : cuts) {
        sizes.push_back(c - prev);
        prev = c;
    }
    sizes.push_back(total - prev);
    return sizes;
}

}  // namespace

std::vector<PatientTrace> generate_synthetic_cohort(const SyntheticCohortConfig& config) {
    if (!config.patients.empty() && config.patients.size() != config.n_patients)
        throw std::invalid_argument("synthetic config: patients list must be empty or have n_patients entries");
    for (const auto& p : config.patients) {
        if (!(p.normal_fraction > 0.0 && p.normal_fraction < 1.0))
            throw std::invalid_argument("synthetic config: normal_fraction must lie in (0,1)");
        if (!(p.hypo_share >= 0.0 && p.hypo_share <= 1.0))
            throw std::invalid_argument("synthetic config: hypo_share must lie in [0,1]");
        if (p.hyper_ceiling <= config.thresholds.hyper_fasting)
            throw std::invalid_argument("synthetic config: hyper_ceiling must exceed the fasting hyper threshold");
    }
    if (!(config.test_fraction > 0.0 && config.test_fraction < 1.0))
        throw std::invalid_argument("synthetic config: test_fraction must lie in (0,1)");
    const std::size_t n = config.trace_len;
    if (config.n_patients > 0 && n < 80)
        throw std::invalid_argument("synthetic config: trace_len must be >= 80");

    const StateThresholds& th = config.thresholds;
    const std::size_t post_window =
        static_cast<std::size_t>(th.postprandial_window / config.cadence);
    const std::size_t split_idx =
        n - static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(n)));

    std::vector<PatientTrace> out;
    for (std::size_t pi = 0; pi < config.n_patients; ++pi) {
        SyntheticPatientParams params;
        if (!config.patients.empty()) params = config.patients[pi];
        if (params.patient_id.empty())
            params.patient_id = "p" + std::string(pi < 10 ? "0" : "") + std::to_string(pi);

        Rng rng(mix_seed(config.seed, pi));

        // Meal schedule on a shared clock with small per-patient jitter. Keep a
        // quiet band just before the train/test boundary so the test trace's
        // meal context is self-contained.
        const std::size_t interval = std::max<std::size_t>(
            post_window + 8,
            static_cast<std::size_t>(std::llround(config.meal_interval_hours * 3600.0 /
                                                  static_cast<double>(config.cadence))));
        const long jitter_max = std::lround(config.meal_jitter_minutes * 60.0 /
                                            static_cast<double>(config.cadence));
        std::vector<std::size_t> meal_at;
        std::vector<double> meal_carbs;
        for (std::size_t base = interval / 2; base < n; base += interval) {
            long idx = static_cast<long>(base);
            if (jitter_max > 0) idx += std::lround(rng.uniform(-double(jitter_max), double(jitter_max)));
            if (idx < 2) idx = 2;
            if (idx >= static_cast<long>(n) - 2) break;
            if (idx >= static_cast<long>(split_idx) - static_cast<long>(post_window) &&
                idx < static_cast<long>(split_idx))
                idx = static_cast<long>(split_idx) - static_cast<long>(post_window) - 1;
            if (!meal_at.empty() && static_cast<std::size_t>(idx) <= meal_at.back() + 4) continue;
            meal_at.push_back(static_cast<std::size_t>(idx));
            meal_carbs.push_back(std::round(rng.uniform(30.0, 80.0)));
        }

        std::vector<char> postprandial(n, 0);
        for (std::size_t m : meal_at)
            for (std::size_t i = m; i < std::min(n, m + post_window); ++i) postprandial[i] = 1;

        // Plan abnormal runs so the realized Normal fraction lands on target.
        const auto target_abnormal = static_cast<std::size_t>(
            std::llround((1.0 - params.normal_fraction) * static_cast<double>(n)));
        std::vector<PlannedRun> runs;
        if (target_abnormal > 0) {
            std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                         std::llround(target_abnormal / 12.0)));
            k = std::min(k, target_abnormal);
            auto sizes = random_composition(target_abnormal, k, rng);
            std::sort(sizes.begin(), sizes.end(), std::greater<>());

            const bool hyper_needs_fasting = params.hyper_ceiling <= th.hyper_postprandial + 8.0;
            std::vector<char> occupied(n, 0);
            const std::size_t sep = 6;
            std::deque<std::size_t> queue(sizes.begin(), sizes.end());
            std::size_t deficit = 0;
            while (!queue.empty()) {
                const std::size_t len = queue.front();
                queue.pop_front();
                DiagnosticState state = rng.uniform() < params.hypo_share
                                            ? DiagnosticState::Hypo
                                            : DiagnosticState::Hyper;
                auto gather = [&](bool require_fasting) {
                    std::vector<std::size_t> starts;
                    if (len > n) return starts;
                    for (std::size_t p = 0; p + len <= n; ++p) {
                        const std::size_t lo = p >= sep ? p - sep : 0;
                        const std::size_t hi = std::min(n, p + len + sep);
                        bool ok = true;
                        for (std::size_t q = lo; q < hi && ok; ++q)
                            if (occupied[q]) ok = false;
                        if (ok && require_fasting)
                            for (std::size_t q = p; q < p + len && ok; ++q)
                                if (postprandial[q]) ok = false;
                        if (ok) starts.push_back(p);
                    }
                    return starts;
                };
                bool fasting_only = state == DiagnosticState::Hyper && hyper_needs_fasting;
                auto starts = gather(fasting_only);
                if (starts.empty() && fasting_only) {
                    state = DiagnosticState::Hypo;
                    fasting_only = false;
                    starts = gather(false);
                }
                if (starts.empty()) {
                    if (len > 3) {
                        queue.push_back(len / 2);
                        queue.push_back(len - len / 2);
                    } else {
                        deficit += len;
                    }
                    continue;
                }
                PlannedRun run;
                run.start = starts[rng.index(starts.size())];
                run.len = len;
                run.state = state;
                run.peak_frac = rng.uniform(0.55, 0.95);
                for (std::size_t q = run.start; q < run.start + run.len; ++q) occupied[q] = 1;
                runs.push_back(run);
            }
            // Absorb any unplaced remainder by stretching existing runs.
            for (auto& run : runs) {
                while (deficit > 0 && run.start + run.len < n && !occupied[run.start + run.len]) {
                    occupied[run.start + run.len] = 1;
                    ++run.len;
                    --deficit;
                }
            }
        }

        std::vector<DiagnosticState> plan(n, DiagnosticState::Normal);
        std::vector<double> peak(n, 0.0);
        std::vector<double> progress(n, 0.0);
        for (const auto& run : runs) {
            for (std::size_t q = run.start; q < run.start + run.len; ++q) {
                plan[q] = run.state;
                peak[q] = run.peak_frac;
                progress[q] = run.len <= 1
                                  ? 0.5
                                  : static_cast<double>(q - run.start) /
                                        static_cast<double>(run.len - 1);
            }
        }

        // Patient-level nuisance parameters.
        const double basal_rate = std::round(rng.uniform(0.7, 1.4) * 20.0) / 20.0;
        const double carb_ratio = rng.uniform(8.0, 12.0);

        PatientTrace full;
        full.patient_id = params.patient_id;
        full.subset = Subset::Synthetic;
        full.cadence = config.cadence;
        full.samples.resize(n);

        double v = config.baseline;
        for (std::size_t i = 0; i < n; ++i) {
            const MealContext ctx =
                postprandial[i] ? MealContext::Postprandial : MealContext::Fasting;
            const Band band = value_band(plan[i], ctx, th, params.hyper_ceiling);
            double center;
            if (plan[i] == DiagnosticState::Normal) {
                double bump = 0.0;
                for (std::size_t mi = meal_at.size(); mi-- > 0;) {
                    if (meal_at[mi] > i) continue;
                    const double dt = static_cast<double>(i - meal_at[mi]);
                    if (dt > 30.0) break;
                    const double shape = (dt / 6.0) * std::exp(1.0 - dt / 6.0);
                    bump += 0.5 * meal_carbs[mi] * shape;
                }
                center = std::clamp(config.baseline + bump, band.lo + 2.0, band.hi - 2.0);
            } else {
                const double depth = band.lo + peak[i] * (band.hi - band.lo);
                const double shape = std::pow(std::sin(3.14159265358979323846 * progress[i]),
                                              0.9);
                center = band.lo + 4.0 + (depth - band.lo - 4.0) * shape;
                center = std::clamp(center, band.lo + 2.0, band.hi - 2.0);
            }
            v += 0.35 * (center - v) + config.noise_scale * rng.normal();
            v = std::clamp(v, band.lo + 0.1, band.hi - 0.1);

            auto& s = full.samples[i];
            s.timestamp = static_cast<std::int64_t>(i) * config.cadence;
            s.cgm = std::round(v * 10.0) / 10.0;
            s.basal = basal_rate;
        }
        for (std::size_t mi = 0; mi < meal_at.size(); ++mi) {
            full.samples[meal_at[mi]].carbs = meal_carbs[mi];
            full.samples[meal_at[mi]].bolus =
                std::round(meal_carbs[mi] / carb_ratio * 20.0) / 20.0;
        }

        PatientTrace train = full;
        train.split = Split::Train;
        train.samples.assign(full.samples.begin(),
                             full.samples.begin() + static_cast<long>(split_idx));
        PatientTrace test = full;
        test.split = Split::Test;
        test.samples.assign(full.samples.begin() + static_cast<long>(split_idx),
                            full.samples.end());
        out.push_back(std::move(train));
        out.push_back(std::move(test));
    }
    return out;
}

}  // namespace riskprof
