#pragma once
// Glucose forecaster: a small tanh-hidden-layer regressor over the flattened
// normalized window, trained by deterministic full-batch gradient descent.
// hidden_width == 0 degenerates to a plain linear regressor, which is handy
// for exact fixtures.

#include <cstdint>
#include <string>
#include <vector>

#include "riskprof/data.hpp"

namespace riskprof {

enum class ForecastMode { Personalized, Aggregate };

const char* to_string(ForecastMode m);
ForecastMode forecast_mode_from_string(const std::string& s);

struct FeatureNormalization {
    std::vector<double> mean;   // per input column
    std::vector<double> scale;  // per input column, never zero
    double target_mean = 0.0;
    double target_scale = 1.0;
};

struct ForecastModel {
    ForecastMode mode = ForecastMode::Aggregate;
    std::string patient_id;  // set for Personalized models
    std::size_t history_len = 12;
    std::size_t horizon = 6;
    std::size_t hidden_width = 32;
    FeatureNormalization norm;
    std::vector<double> hidden_w;  // hidden_width x input_dim, row-major
    std::vector<double> hidden_b;  // hidden_width
    std::vector<double> out_w;     // hidden_width, or input_dim when hidden_width == 0
    double out_b = 0.0;
    std::uint64_t train_seed = 0;
    double train_rmse = 0.0;  // mg/dL on the training windows

    std::size_t input_dim() const { return history_len * kFeaturesPerStep; }
    std::size_t parameter_count() const;
    std::vector<double> flat_parameters() const;
};

struct TrainConfig {
    std::size_t hidden_width = 32;
    double learning_rate = 0.05;
    std::size_t max_epochs = 2000;
    std::size_t plateau_epochs = 50;   // early stop when loss stalls this long
    double plateau_tol = 1e-6;         // relative improvement threshold
    double weight_decay = 0.0;         // L2 penalty on weights (biases excluded)
    std::uint64_t seed = 0;
};

/// Personalized mode requires all traces to share one patient_id.
/// Throws std::runtime_error when there are fewer windows than the
/// documented minimum max(10, parameter_count / 10), or on non-finite loss.
ForecastModel fit_forecaster(const std::vector<PatientTrace>& traces, ForecastMode mode,
                             std::size_t history_len, std::size_t horizon,
                             const TrainConfig& cfg);

/// Model output without the range clamp; basis for gradients and ascent checks.
double predict_unclamped(const ForecastModel& model, const FeatureWindow& window);

/// Prediction clamped to [0, 499] mg/dL. Throws std::invalid_argument on a
/// shape mismatch or non-finite features.
double predict(const ForecastModel& model, const FeatureWindow& window);

/// Analytic d(prediction)/d(cgm_t) of the unclamped output, one entry per
/// history step, in mg/dL-per-mg/dL of the raw (unnormalized) window.
std::vector<double> gradient_wrt_cgm(const ForecastModel& model,
                                     const FeatureWindow& window);

std::string forecast_model_to_json(const ForecastModel& model);
ForecastModel forecast_model_from_json(const std::string& text);
void save_forecast_model(const ForecastModel& model, const std::string& path);
ForecastModel load_forecast_model(const std::string& path);

}  // namespace riskprof
