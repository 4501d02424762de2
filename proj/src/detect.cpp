#include "riskprof/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "riskprof/synth.hpp"

namespace riskprof {

const char* to_string(VerdictLabel v) {
    return v == VerdictLabel::Benign ? "benign" : "malicious";
}

FeatureScaling FeatureScaling::fit(const std::vector<std::vector<double>>& points) {
    if (points.empty()) throw std::invalid_argument("FeatureScaling: no points");
    const std::size_t d = points.front().size();
    FeatureScaling s;
    s.mean.assign(d, 0.0);
    s.scale.assign(d, 1.0);
    for (const auto& p : points) {
        if (p.size() != d) throw std::invalid_argument("FeatureScaling: ragged points");
        for (std::size_t i = 0; i < d; ++i) s.mean[i] += p[i];
    }
    for (std::size_t i = 0; i < d; ++i) s.mean[i] /= static_cast<double>(points.size());
    std::vector<double> var(d, 0.0);
    for (const auto& p : points)
        for (std::size_t i = 0; i < d; ++i) {
            const double c = p[i] - s.mean[i];
            var[i] += c * c;
        }
    for (std::size_t i = 0; i < d; ++i) {
        const double sd = std::sqrt(var[i] / static_cast<double>(points.size()));
        s.scale[i] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
}

std::vector<double> FeatureScaling::apply(const std::vector<double>& point) const {
    if (point.size() != mean.size())
        throw std::invalid_argument("FeatureScaling: dimension mismatch (" +
                                    std::to_string(point.size()) + " vs " +
                                    std::to_string(mean.size()) + ")");
    std::vector<double> out(point.size());
    for (std::size_t i = 0; i < point.size(); ++i)
        out[i] = (point[i] - mean[i]) / scale[i];
    return out;
}

KnnDetectorModel fit_knn(const std::vector<std::vector<double>>& benign,
                         const std::vector<std::vector<double>>& malicious,
                         const KnnParams& params) {
    if (benign.empty() || malicious.empty())
        throw std::invalid_argument("fit_knn: both classes must be non-empty");
    if (params.k < 1) throw std::invalid_argument("fit_knn: k must be >= 1");
    if (params.minkowski_p < 1.0)
        throw std::invalid_argument("fit_knn: minkowski_p must be >= 1");
    if (params.k > benign.size() + malicious.size())
        throw std::invalid_argument("fit_knn: k exceeds the stored point count");

    KnnDetectorModel model;
    model.params = params;
    std::vector<std::vector<double>> pooled = benign;
    pooled.insert(pooled.end(), malicious.begin(), malicious.end());
    model.scaling = FeatureScaling::fit(pooled);
    model.points.reserve(pooled.size());
    for (const auto& p : pooled) model.points.push_back(model.scaling.apply(p));
    model.labels.assign(benign.size(), 0);
    model.labels.insert(model.labels.end(), malicious.size(), 1);
    return model;
}

VerdictLabel verdict(const KnnDetectorModel& model, const std::vector<double>& window) {
    const auto q = model.scaling.apply(window);
    const double p = model.params.minkowski_p;
    std::vector<std::pair<double, std::size_t>> scored(model.points.size());
    for (std::size_t i = 0; i < model.points.size(); ++i) {
        const auto& pt = model.points[i];
        double acc = 0.0;
        if (p == 2.0) {
            for (std::size_t j = 0; j < q.size(); ++j) {
                const double d = pt[j] - q[j];
                acc += d * d;
            }
            acc = std::sqrt(acc);
        } else {
            for (std::size_t j = 0; j < q.size(); ++j)
                acc += std::pow(std::abs(pt[j] - q[j]), p);
            acc = std::pow(acc, 1.0 / p);
        }
        scored[i] = {acc, i};
    }
    std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(model.params.k),
                      scored.end());
    std::size_t malicious_votes = 0;
    for (std::size_t r = 0; r < model.params.k; ++r)
        malicious_votes += model.labels[scored[r].second];
    return 2 * malicious_votes >= model.params.k ? VerdictLabel::Malicious
                                                 : VerdictLabel::Benign;
}

double sigmoid_kernel(const std::vector<double>& a, const std::vector<double>& b,
                      double gamma, double coef0) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return std::tanh(gamma * dot + coef0);
}

OcsvmDetectorModel fit_ocsvm(const std::vector<std::vector<double>>& benign,
                             const OcsvmParams& params) {
    const std::size_t n = benign.size();
    if (n < 2) throw std::invalid_argument("fit_ocsvm: need at least 2 training windows");
    if (!(params.nu > 0.0 && params.nu <= 1.0))
        throw std::invalid_argument("fit_ocsvm: nu must lie in (0, 1]");
    if (!(params.tol > 0.0)) throw std::invalid_argument("fit_ocsvm: tol must be positive");

    OcsvmDetectorModel model;
    model.params = params;
    model.n_train = n;
    model.scaling = FeatureScaling::fit(benign);
    const std::size_t d = benign.front().size();
    model.gamma_effective = params.gamma > 0.0 ? params.gamma : 1.0 / static_cast<double>(d);

    std::vector<std::vector<double>> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = model.scaling.apply(benign[i]);

    // Full Gram matrix; training sets are capped upstream.
    std::vector<double> K(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const double k = sigmoid_kernel(x[i], x[j], model.gamma_effective, params.coef0);
            K[i * n + j] = k;
            K[j * n + i] = k;
        }
    }

    const double C = 1.0 / (params.nu * static_cast<double>(n));
    std::vector<double> alpha(n, 0.0);
    const auto n_bound = static_cast<std::size_t>(params.nu * static_cast<double>(n));
    for (std::size_t i = 0; i < n_bound && i < n; ++i) alpha[i] = C;
    double remainder = 1.0 - static_cast<double>(std::min(n_bound, n)) * C;
    if (remainder > 1e-15 && n_bound < n) alpha[n_bound] = remainder;

    std::vector<double> grad(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double g = 0.0;
        const double* row = K.data() + i * n;
        for (std::size_t j = 0; j < n; ++j)
            if (alpha[j] > 0.0) g += row[j] * alpha[j];
        grad[i] = g;
    }

    std::size_t iterations = 0;
    while (true) {
        // Most violating pair on the equality-constrained one-class dual.
        // Alphas are snapped to exact bounds below, so the comparisons here
        // are exact too.
        std::size_t up = n, down = n;
        double g_up = std::numeric_limits<double>::infinity();
        double g_down = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (alpha[i] < C && grad[i] < g_up) {
                g_up = grad[i];
                up = i;
            }
            if (alpha[i] > 0.0 && grad[i] > g_down) {
                g_down = grad[i];
                down = i;
            }
        }
        if (up == n || down == n) break;
        const double violation = g_down - g_up;
        if (violation < params.tol) break;
        if (params.max_iter >= 0 && iterations >= static_cast<std::size_t>(params.max_iter))
            throw std::runtime_error("fit_ocsvm: no convergence within max_iter = " +
                                     std::to_string(params.max_iter));

        const double eta = K[up * n + up] + K[down * n + down] - 2.0 * K[up * n + down];
        const double room_up = C - alpha[up];
        const double delta_max = std::min(room_up, alpha[down]);
        double delta = delta_max;
        // Endpoint step whenever the kernel's indefiniteness makes the segment
        // flat or concave.
        if (eta > 1e-12) delta = std::min(violation / eta, delta_max);
        if (!(delta > 0.0)) break;

        if (delta >= room_up)
            alpha[up] = C;
        else
            alpha[up] += delta;
        if (delta >= alpha[down])
            alpha[down] = 0.0;
        else
            alpha[down] -= delta;
        const double* col_up = K.data() + up * n;
        const double* col_down = K.data() + down * n;
        for (std::size_t i = 0; i < n; ++i)
            grad[i] += delta * (col_up[i] - col_down[i]);
        ++iterations;
    }
    model.smo_iterations = iterations;

    // rho from the KKT conditions: average gradient over free vectors when
    // they exist, otherwise the midpoint of the bound gradients.
    double free_sum = 0.0;
    std::size_t free_count = 0;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] > 0.0 && alpha[i] < C) {
            free_sum += grad[i];
            ++free_count;
        } else if (alpha[i] == 0.0) {
            hi = std::min(hi, grad[i]);
        } else {
            lo = std::max(lo, grad[i]);
        }
    }
    if (free_count > 0)
        model.rho = free_sum / static_cast<double>(free_count);
    else
        model.rho = 0.5 * (lo + hi);

    for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] > 0.0) {
            model.support_points.push_back(std::move(x[i]));
            model.alpha.push_back(alpha[i]);
        }
    }
    return model;
}

double decision_value(const OcsvmDetectorModel& model, const std::vector<double>& window) {
    const auto q = model.scaling.apply(window);
    double sum = 0.0;
    for (std::size_t i = 0; i < model.support_points.size(); ++i)
        sum += model.alpha[i] * sigmoid_kernel(model.support_points[i], q,
                                               model.gamma_effective, model.params.coef0);
    return sum - model.rho;
}

VerdictLabel verdict(const OcsvmDetectorModel& model, const std::vector<double>& window) {
    return decision_value(model, window) >= 0.0 ? VerdictLabel::Benign
                                                : VerdictLabel::Malicious;
}

const char* to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::LessVulnerable: return "less_vulnerable";
        case StrategyKind::MoreVulnerable: return "more_vulnerable";
        case StrategyKind::RandomSamples: return "random_samples";
        default: return "all_patients";
    }
}

StrategyKind strategy_from_string(const std::string& s) {
    if (s == "less_vulnerable") return StrategyKind::LessVulnerable;
    if (s == "more_vulnerable") return StrategyKind::MoreVulnerable;
    if (s == "random_samples") return StrategyKind::RandomSamples;
    if (s == "all_patients") return StrategyKind::AllPatients;
    throw std::invalid_argument("unknown training strategy: " + s);
}

std::vector<std::vector<std::string>> select_training_cohorts(
    const TrainingStrategy& strategy, const VulnerabilityClusters& clusters,
    const std::vector<std::string>& all_patients, std::uint64_t seed) {
    switch (strategy.kind) {
        case StrategyKind::LessVulnerable: {
            auto ids = clusters.less_vulnerable;
            std::sort(ids.begin(), ids.end());
            return {ids};
        }
        case StrategyKind::MoreVulnerable: {
            auto ids = clusters.more_vulnerable;
            std::sort(ids.begin(), ids.end());
            return {ids};
        }
        case StrategyKind::AllPatients: {
            auto ids = all_patients;
            std::sort(ids.begin(), ids.end());
            return {ids};
        }
        default: {
            if (all_patients.size() < strategy.cohort_size)
                throw std::invalid_argument(
                    "random_samples: need at least " + std::to_string(strategy.cohort_size) +
                    " patients, have " + std::to_string(all_patients.size()));
            auto pool = all_patients;
            std::sort(pool.begin(), pool.end());
            Rng rng(seed);
            std::vector<std::vector<std::string>> cohorts;
            for (std::size_t run = 0; run < strategy.runs; ++run) {
                auto deck = pool;
                for (std::size_t i = deck.size(); i > 1; --i)
                    std::swap(deck[i - 1], deck[rng.index(i)]);
                std::vector<std::string> cohort(deck.begin(),
                                                deck.begin() + strategy.cohort_size);
                std::sort(cohort.begin(), cohort.end());
                cohorts.push_back(std::move(cohort));
            }
            return cohorts;
        }
    }
}

std::vector<std::vector<const PatientTrace*>> select_training_set(
    const TrainingStrategy& strategy, const VulnerabilityClusters& clusters,
    const std::vector<PatientTrace>& traces, std::uint64_t seed) {
    const auto cohorts =
        select_training_cohorts(strategy, clusters, sorted_patient_ids(traces), seed);
    std::vector<std::vector<const PatientTrace*>> out;
    for (const auto& cohort : cohorts) {
        std::vector<const PatientTrace*> members;
        for (const auto& id : cohort) {
            const auto* t = find_trace(traces, id, Split::Train);
            if (t == nullptr)
                throw std::runtime_error("select_training_set: no training trace for '" +
                                         id + "'");
            members.push_back(t);
        }
        out.push_back(std::move(members));
    }
    return out;
}

namespace {

nlohmann::ordered_json scaling_to_json(const FeatureScaling& s) {
    return {{"mean", s.mean}, {"scale", s.scale}};
}

FeatureScaling scaling_from_json(const nlohmann::json& j) {
    FeatureScaling s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.scale = j.at("scale").get<std::vector<double>>();
    return s;
}

}  // namespace

std::string knn_model_to_json(const KnnDetectorModel& model) {
    nlohmann::ordered_json j;
    j["detector"] = "knn";
    j["k"] = model.params.k;
    j["minkowski_p"] = model.params.minkowski_p;
    j["scaling"] = scaling_to_json(model.scaling);
    j["points"] = model.points;
    j["labels"] = model.labels;
    return j.dump() + "\n";
}

KnnDetectorModel knn_model_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    KnnDetectorModel m;
    m.params.k = j.at("k").get<std::size_t>();
    m.params.minkowski_p = j.at("minkowski_p").get<double>();
    m.scaling = scaling_from_json(j.at("scaling"));
    m.points = j.at("points").get<std::vector<std::vector<double>>>();
    m.labels = j.at("labels").get<std::vector<std::uint8_t>>();
    return m;
}

std::string ocsvm_model_to_json(const OcsvmDetectorModel& model) {
    nlohmann::ordered_json j;
    j["detector"] = "ocsvm";
    j["gamma"] = model.params.gamma;
    j["gamma_effective"] = model.gamma_effective;
    j["coef0"] = model.params.coef0;
    j["nu"] = model.params.nu;
    j["tol"] = model.params.tol;
    j["max_iter"] = model.params.max_iter;
    j["scaling"] = scaling_to_json(model.scaling);
    j["support_points"] = model.support_points;
    j["alpha"] = model.alpha;
    j["rho"] = model.rho;
    j["n_train"] = model.n_train;
    j["smo_iterations"] = model.smo_iterations;
    return j.dump() + "\n";
}

OcsvmDetectorModel ocsvm_model_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    OcsvmDetectorModel m;
    m.params.gamma = j.at("gamma").get<double>();
    m.gamma_effective = j.at("gamma_effective").get<double>();
    m.params.coef0 = j.at("coef0").get<double>();
    m.params.nu = j.at("nu").get<double>();
    m.params.tol = j.at("tol").get<double>();
    m.params.max_iter = j.at("max_iter").get<long long>();
    m.scaling = scaling_from_json(j.at("scaling"));
    m.support_points = j.at("support_points").get<std::vector<std::vector<double>>>();
    m.alpha = j.at("alpha").get<std::vector<double>>();
    m.rho = j.at("rho").get<double>();
    m.n_train = j.at("n_train").get<std::size_t>();
    m.smo_iterations = j.at("smo_iterations").get<std::size_t>();
    return m;
}

}  // namespace riskprof
