#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "delayprop/embeddings.hpp"
#include "delayprop/ingest.hpp"
#include "delayprop/nnkit.hpp"

namespace delayprop {

enum class TransformKind { identity, sqrt, log };

/// Odd, total value maps: sgn(x)·sqrt|x| or sgn(x)·log(1+|x|).
double value_transform(double x, TransformKind kind);
double value_untransform(double y, TransformKind kind);
std::string to_string(TransformKind kind);
TransformKind transform_from_string(const std::string& s);

struct ForecastConfig {
    int d_model = 64;
    int d_ff = 256;
    int heads = 2;
    int depth = 2;
    double dropout = 0.1;
    int n_prev = 4;
    int n_foll = 8;
    TransformKind transform = TransformKind::sqrt;
    double lr = 1e-3;
    int batch = 32;  // snapshots per optimizer step
    int epochs = 30;
    /// Subtract the mean residual before scaling; off keeps the zero output
    /// equal to translation exactly.
    bool center_targets = false;
    std::uint64_t seed = 1;

    void validate() const;  // throws ConfigError
};

nlohmann::json to_json(const ForecastConfig& cfg);
ForecastConfig forecast_config_from_json(const nlohmann::json& j);

/// Residual scaling in minute space: targets are f((r - mu) / sigma).
struct TargetStats {
    double mu = 0.0;
    double sigma = 1.0;
};

/// z-score constants of the numeric token fields (delays after transform).
struct FeatureStats {
    struct Z {
        double mean = 0.0;
        double std = 1.0;
        double apply(double v) const { return (v - mean) / std; }
    };
    Z minutes_since, past_delay, minutes_until, translation, minute_of_day, n_trains;
};

enum class PredictMode { training, evaluation };

/// training: sigma·f⁻¹(y) + mu + t; evaluation: max(that + s, 0) - s.
double predict_delay(double y, const TargetStats& stats, TransformKind kind, double translation, double scheduled,
                     PredictMode mode);

struct AttentionSnapshot {
    Timestamp t0 = 0;
    std::vector<std::int64_t> trains;
    std::vector<Eigen::MatrixXd> heads;  // first encoder layer
};

nlohmann::json to_json(const AttentionSnapshot& a);

struct Prediction {
    Eigen::MatrixXd raw;        // tokens x n_foll
    Eigen::MatrixXd minutes;    // predicted delays
    Eigen::MatrixXd valid;      // 1 where the future entry is a real RP
    Eigen::MatrixXd scheduled;  // scheduled remaining minutes
};

class Forecaster {
public:
    Forecaster(ForecastConfig cfg, EmbeddingTable rp_table, EmbeddingTable train_table);

    const ForecastConfig& config() const { return cfg_; }
    int feature_width() const;

    TargetStats target_stats;
    FeatureStats feature_stats;

    /// Estimates feature and target statistics from training snapshots.
    void fit_stats(const std::vector<Snapshot>& snapshots);

    Eigen::MatrixXd features(const Snapshot& snap) const;
    /// Normalized transformed residual targets and their validity mask.
    void targets(const Snapshot& snap, Eigen::MatrixXd& y, Eigen::MatrixXd& mask) const;

    nn::Var<double> forward(nn::Tape<double>& t, const Eigen::MatrixXd& features, std::mt19937_64& rng, bool train,
                            AttentionSnapshot* attention = nullptr);
    Prediction predict(const Snapshot& snap, PredictMode mode, AttentionSnapshot* attention = nullptr);

    nn::ParamList<double> parameters();
    nn::Linear<double>& output_layer() { return out_; }

    void save(const std::string& path);
    static Forecaster load(const std::string& path);

private:
    ForecastConfig cfg_;
    EmbeddingTable rp_;
    EmbeddingTable trains_;
    nn::Linear<double> in_;
    nn::Encoder<double> encoder_;
    nn::Linear<double> out_;
};

/// Masked L1 between raw outputs and targets; `empty` is set when no
/// position is valid (the loss is then 0).
nn::Var<double> training_loss(nn::Var<double> raw, const Eigen::MatrixXd& targets, const Eigen::MatrixXd& mask,
                              bool* empty = nullptr);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_mae = 0.0;  // NaN without validation data
};

struct FitResult {
    std::vector<EpochStats> curve;
};

/// Adam over shuffled snapshot batches. A non-finite loss writes
/// `diagnostic_path` (when set) and throws NumericError.
FitResult fit(Forecaster& model, const std::vector<Snapshot>& train, const std::vector<Snapshot>& validation = {},
              const std::string& diagnostic_path = {});

/// Mean absolute error in minutes over positions with realized targets.
double forecaster_mae(Forecaster& model, const std::vector<Snapshot>& snaps, PredictMode mode);

}  // namespace delayprop
