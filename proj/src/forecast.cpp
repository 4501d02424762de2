#include "riskprof/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "riskprof/synth.hpp"

namespace riskprof {

const char* to_string(ForecastMode m) {
    return m == ForecastMode::Personalized ? "personalized" : "aggregate";
}

ForecastMode forecast_mode_from_string(const std::string& s) {
    if (s == "personalized") return ForecastMode::Personalized;
    if (s == "aggregate") return ForecastMode::Aggregate;
    throw std::invalid_argument("unknown forecast mode: " + s);
}

std::size_t ForecastModel::parameter_count() const {
    const std::size_t d = input_dim();
    if (hidden_width == 0) return d + 1;
    return hidden_width * d + hidden_width + hidden_width + 1;
}

std::vector<double> ForecastModel::flat_parameters() const {
    std::vector<double> p;
    p.reserve(parameter_count());
    p.insert(p.end(), hidden_w.begin(), hidden_w.end());
    p.insert(p.end(), hidden_b.begin(), hidden_b.end());
    p.insert(p.end(), out_w.begin(), out_w.end());
    p.push_back(out_b);
    return p;
}

namespace {

void check_window(const ForecastModel& model, const FeatureWindow& window) {
    if (window.history_len != model.history_len ||
        window.values.size() != model.input_dim())
        throw std::invalid_argument(
            "predict: window shape mismatch (expected history_len " +
            std::to_string(model.history_len) + ", got " +
            std::to_string(window.history_len) + ")");
    for (double v : window.values)
        if (!std::isfinite(v))
            throw std::invalid_argument("predict: non-finite feature value");
}

}  // namespace

double predict_unclamped(const ForecastModel& model, const FeatureWindow& window) {
    check_window(model, window);
    const std::size_t d = model.input_dim();
    double z = model.out_b;
    if (model.hidden_width == 0) {
        for (std::size_t i = 0; i < d; ++i)
            z += model.out_w[i] * (window.values[i] - model.norm.mean[i]) /
                 model.norm.scale[i];
    } else {
        for (std::size_t j = 0; j < model.hidden_width; ++j) {
            double a = model.hidden_b[j];
            const double* row = model.hidden_w.data() + j * d;
            for (std::size_t i = 0; i < d; ++i)
                a += row[i] * (window.values[i] - model.norm.mean[i]) /
                     model.norm.scale[i];
            z += model.out_w[j] * std::tanh(a);
        }
    }
    return model.norm.target_mean + z * model.norm.target_scale;
}

double predict(const ForecastModel& model, const FeatureWindow& window) {
    return std::clamp(predict_unclamped(model, window), 0.0, kCgmMax);
}

std::vector<double> gradient_wrt_cgm(const ForecastModel& model,
                                     const FeatureWindow& window) {
    check_window(model, window);
    const std::size_t d = model.input_dim();
    std::vector<double> grad(model.history_len, 0.0);
    if (model.hidden_width == 0) {
        for (std::size_t s = 0; s < model.history_len; ++s) {
            const std::size_t i = s * kFeaturesPerStep;
            grad[s] = model.norm.target_scale * model.out_w[i] / model.norm.scale[i];
        }
        return grad;
    }
    for (std::size_t j = 0; j < model.hidden_width; ++j) {
        double a = model.hidden_b[j];
        const double* row = model.hidden_w.data() + j * d;
        for (std::size_t i = 0; i < d; ++i)
            a += row[i] * (window.values[i] - model.norm.mean[i]) / model.norm.scale[i];
        const double h = std::tanh(a);
        const double back = model.out_w[j] * (1.0 - h * h) * model.norm.target_scale;
        for (std::size_t s = 0; s < model.history_len; ++s) {
            const std::size_t i = s * kFeaturesPerStep;
            grad[s] += back * row[i] / model.norm.scale[i];
        }
    }
    return grad;
}

ForecastModel fit_forecaster(const std::vector<PatientTrace>& traces, ForecastMode mode,
                             std::size_t history_len, std::size_t horizon,
                             const TrainConfig& cfg) {
    if (traces.empty()) throw std::invalid_argument("fit_forecaster: no training traces");
    std::set<std::string> ids;
    for (const auto& t : traces) ids.insert(t.patient_id);
    if (mode == ForecastMode::Personalized && ids.size() != 1)
        throw std::invalid_argument(
            "fit_forecaster: personalized mode expects exactly one patient, got " +
            std::to_string(ids.size()));

    // Windows pooled in (patient_id, split) order for a stable training set.
    std::vector<const PatientTrace*> ordered;
    for (const auto& t : traces) ordered.push_back(&t);
    std::sort(ordered.begin(), ordered.end(), [](const PatientTrace* a, const PatientTrace* b) {
        if (a->patient_id != b->patient_id) return a->patient_id < b->patient_id;
        return static_cast<int>(a->split) < static_cast<int>(b->split);
    });
    std::vector<FeatureWindow> windows;
    for (const auto* t : ordered) {
        auto w = windowize(*t, history_len, horizon);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                       std::make_move_iterator(w.end()));
    }

    ForecastModel model;
    model.mode = mode;
    if (mode == ForecastMode::Personalized) model.patient_id = *ids.begin();
    model.history_len = history_len;
    model.horizon = horizon;
    model.hidden_width = cfg.hidden_width;
    model.train_seed = cfg.seed;

    const std::size_t n = windows.size();
    const std::size_t d = model.input_dim();
    const std::size_t min_windows = std::max<std::size_t>(10, model.parameter_count() / 10);
    if (n < min_windows)
        throw std::runtime_error("fit_forecaster: " + std::to_string(n) +
                                 " windows, documented minimum is " +
                                 std::to_string(min_windows));

    // Normalization statistics from the training windows only.
    model.norm.mean.assign(d, 0.0);
    model.norm.scale.assign(d, 1.0);
    for (const auto& w : windows)
        for (std::size_t i = 0; i < d; ++i) model.norm.mean[i] += w.values[i];
    for (std::size_t i = 0; i < d; ++i) model.norm.mean[i] /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    double ymean = 0.0, yvar = 0.0;
    for (const auto& w : windows) {
        for (std::size_t i = 0; i < d; ++i) {
            const double c = w.values[i] - model.norm.mean[i];
            var[i] += c * c;
        }
        ymean += w.target_cgm;
    }
    ymean /= static_cast<double>(n);
    for (const auto& w : windows) {
        const double c = w.target_cgm - ymean;
        yvar += c * c;
    }
    for (std::size_t i = 0; i < d; ++i) {
        const double s = std::sqrt(var[i] / static_cast<double>(n));
        model.norm.scale[i] = s > 1e-9 ? s : 1.0;
    }
    model.norm.target_mean = ymean;
    const double ys = std::sqrt(yvar / static_cast<double>(n));
    model.norm.target_scale = ys > 1e-9 ? ys : 1.0;

    // Pre-normalized design matrix.
    std::vector<double> X(n * d);
    std::vector<double> y(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i)
            X[r * d + i] = (windows[r].values[i] - model.norm.mean[i]) / model.norm.scale[i];
        y[r] = (windows[r].target_cgm - ymean) / model.norm.target_scale;
    }

    const std::size_t h = cfg.hidden_width;
    Rng rng(cfg.seed);
    if (h == 0) {
        model.out_w.assign(d, 0.0);
        const double r0 = 1.0 / std::sqrt(static_cast<double>(d));
        for (auto& w : model.out_w) w = rng.uniform(-r0, r0);
    } else {
        model.hidden_w.assign(h * d, 0.0);
        model.hidden_b.assign(h, 0.0);
        model.out_w.assign(h, 0.0);
        const double r1 = 1.0 / std::sqrt(static_cast<double>(d));
        const double r2 = 1.0 / std::sqrt(static_cast<double>(h));
        for (auto& w : model.hidden_w) w = rng.uniform(-r1, r1);
        for (auto& w : model.out_w) w = rng.uniform(-r2, r2);
    }
    model.out_b = 0.0;

    std::vector<double> hidden(h), ghw(h * d), ghb(h), gow(std::max(h, d));
    auto forward = [&](std::size_t r) {
        const double* x = X.data() + r * d;
        double pred = model.out_b;
        if (h == 0) {
            for (std::size_t i = 0; i < d; ++i) pred += model.out_w[i] * x[i];
        } else {
            for (std::size_t j = 0; j < h; ++j) {
                double a = model.hidden_b[j];
                const double* row = model.hidden_w.data() + j * d;
                for (std::size_t i = 0; i < d; ++i) a += row[i] * x[i];
                hidden[j] = std::tanh(a);
                pred += model.out_w[j] * hidden[j];
            }
        }
        return pred;
    };
    std::vector<double> loss_history;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        double loss = 0.0;
        std::fill(ghw.begin(), ghw.end(), 0.0);
        std::fill(ghb.begin(), ghb.end(), 0.0);
        std::fill(gow.begin(), gow.end(), 0.0);
        double gob = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double* x = X.data() + r * d;
            const double pred = forward(r);
            const double err = pred - y[r];
            loss += err * err;
            const double g = 2.0 * err / static_cast<double>(n);
            gob += g;
            if (h == 0) {
                for (std::size_t i = 0; i < d; ++i) gow[i] += g * x[i];
            } else {
                for (std::size_t j = 0; j < h; ++j) {
                    gow[j] += g * hidden[j];
                    const double back = g * model.out_w[j] * (1.0 - hidden[j] * hidden[j]);
                    ghb[j] += back;
                    double* grow = ghw.data() + j * d;
                    for (std::size_t i = 0; i < d; ++i) grow[i] += back * x[i];
                }
            }
        }
        loss /= static_cast<double>(n);
        if (!std::isfinite(loss))
            throw std::runtime_error("fit_forecaster: non-finite loss at epoch " +
                                     std::to_string(epoch));
        loss_history.push_back(loss);
        if (loss_history.size() > cfg.plateau_epochs) {
            const double old = loss_history[loss_history.size() - 1 - cfg.plateau_epochs];
            if (std::abs(old - loss) <= cfg.plateau_tol * std::max(old, 1e-12)) break;
        }

        const double lr = cfg.learning_rate;
        const double wd = 2.0 * cfg.weight_decay;
        if (h == 0) {
            for (std::size_t i = 0; i < d; ++i)
                model.out_w[i] -= lr * (gow[i] + wd * model.out_w[i]);
        } else {
            for (std::size_t j = 0; j < h * d; ++j)
                model.hidden_w[j] -= lr * (ghw[j] + wd * model.hidden_w[j]);
            for (std::size_t j = 0; j < h; ++j) {
                model.hidden_b[j] -= lr * ghb[j];
                model.out_w[j] -= lr * (gow[j] + wd * model.out_w[j]);
            }
        }
        model.out_b -= lr * gob;
    }
    double final_loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double err = forward(r) - y[r];
        final_loss += err * err;
    }
    model.train_rmse = std::sqrt(final_loss / static_cast<double>(n)) * model.norm.target_scale;
    return model;
}

std::string forecast_model_to_json(const ForecastModel& model) {
    nlohmann::ordered_json j;
    j["mode"] = to_string(model.mode);
    j["patient_id"] = model.patient_id;
    j["history_len"] = model.history_len;
    j["horizon"] = model.horizon;
    j["hidden_width"] = model.hidden_width;
    j["normalization"] = {{"mean", model.norm.mean},
                          {"scale", model.norm.scale},
                          {"target_mean", model.norm.target_mean},
                          {"target_scale", model.norm.target_scale}};
    j["parameters"] = model.flat_parameters();
    j["train_seed"] = model.train_seed;
    j["train_rmse"] = model.train_rmse;
    return j.dump(2) + "\n";
}

ForecastModel forecast_model_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ForecastModel m;
    m.mode = forecast_mode_from_string(j.at("mode").get<std::string>());
    m.patient_id = j.at("patient_id").get<std::string>();
    m.history_len = j.at("history_len").get<std::size_t>();
    m.horizon = j.at("horizon").get<std::size_t>();
    m.hidden_width = j.at("hidden_width").get<std::size_t>();
    const auto& norm = j.at("normalization");
    m.norm.mean = norm.at("mean").get<std::vector<double>>();
    m.norm.scale = norm.at("scale").get<std::vector<double>>();
    m.norm.target_mean = norm.at("target_mean").get<double>();
    m.norm.target_scale = norm.at("target_scale").get<double>();
    m.train_seed = j.at("train_seed").get<std::uint64_t>();
    m.train_rmse = j.at("train_rmse").get<double>();
    const auto params = j.at("parameters").get<std::vector<double>>();
    if (params.size() != m.parameter_count())
        throw std::runtime_error("forecast model: parameter vector size mismatch");
    const std::size_t d = m.input_dim();
    std::size_t pos = 0;
    if (m.hidden_width > 0) {
        m.hidden_w.assign(params.begin(), params.begin() + m.hidden_width * d);
        pos += m.hidden_width * d;
        m.hidden_b.assign(params.begin() + pos, params.begin() + pos + m.hidden_width);
        pos += m.hidden_width;
        m.out_w.assign(params.begin() + pos, params.begin() + pos + m.hidden_width);
        pos += m.hidden_width;
    } else {
        m.out_w.assign(params.begin(), params.begin() + d);
        pos += d;
    }
    m.out_b = params[pos];
    return m;
}

void save_forecast_model(const ForecastModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write model file: " + path);
    out << forecast_model_to_json(model);
    if (!out) throw std::runtime_error("write failed: " + path);
}

ForecastModel load_forecast_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return forecast_model_from_json(text);
}

}  // namespace riskprof
