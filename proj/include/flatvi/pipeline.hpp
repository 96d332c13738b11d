#ifndef FLATVI_PIPELINE_HPP_
#define FLATVI_PIPELINE_HPP_

#include "datagen.hpp"
#include "metrics.hpp"
#include "otcfm.hpp"

namespace flatvi {

/// Splits latent codes into integer-time snapshots 0..max label.
inline std::vector<Snapshot> snapshots_by_time(const Matrix &latent, const Vector &size_factors,
                                               const std::vector<int> &time_labels)
{
    require_dims(latent.rows() == size_factors.size() &&
                     static_cast<std::size_t>(latent.rows()) == time_labels.size(),
                 "snapshots_by_time: row count mismatch");
    if (time_labels.empty()) throw DomainError("snapshots_by_time: no cells");
    const int tmax = *std::max_element(time_labels.begin(), time_labels.end());
    std::vector<Snapshot> out;
    for (int t = 0; t <= tmax; ++t) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < time_labels.size(); ++i)
            if (time_labels[i] == t) idx.push_back(i);
        if (idx.empty()) throw DomainError("snapshots_by_time: time point " + std::to_string(t) + " has no cells");
        Snapshot s;
        s.latent = take_rows(latent, idx);
        s.size_factors.resize(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k)
            s.size_factors(static_cast<Eigen::Index>(k)) = size_factors(static_cast<Eigen::Index>(idx[k]));
        out.push_back(std::move(s));
    }
    return out;
}

/// Every snapshot except `leaveout` (-1 keeps all), with integer times.
inline TimeSeriesLatent series_without(const std::vector<Snapshot> &snaps, int leaveout)
{
    TimeSeriesLatent s;
    for (std::size_t t = 0; t < snaps.size(); ++t) {
        if (static_cast<int>(t) == leaveout) continue;
        s.snapshots.push_back(snaps[t]);
        s.times.push_back(static_cast<double>(t));
    }
    return s;
}

struct TrajectoryScores {
    int timepoint = 0;
    double wasserstein = 0.0;
    double mean_l2 = 0.0;
    double density = 0.0;
    double coverage = 0.0;
    double baseline_wasserstein = 0.0;  // real t-1 against real t, no dynamics
};

/// Compares predicted latent codes at t with the observed ones, all
/// standardised with the observed codes' statistics.
inline TrajectoryScores score_prediction(const Matrix &predicted, const Matrix &observed, const Matrix &previous,
                                         std::size_t k, std::uint64_t seed)
{
    const Standardizer st = fit_standardizer(observed);
    const Matrix real = st.apply(observed);
    const Matrix gen = st.apply(predicted);
    TrajectoryScores s;
    s.wasserstein = wasserstein2(real, gen, seed);
    s.mean_l2 = mean_l2(real, gen);
    s.density = density(real, gen, k);
    s.coverage = coverage(real, gen, k);
    s.baseline_wasserstein = wasserstein2(real, st.apply(previous), seed);
    return s;
}

/// Leave-out protocol: train the flow without time point t, push the cells
/// observed at t-1 forward one unit and score against the held-out cells.
inline TrajectoryScores leave_out_evaluation(const std::vector<Snapshot> &snaps, int t, const CfmConfig &config,
                                             std::size_t k, std::size_t steps = 50,
                                             const VelocityNet *pretrained = nullptr)
{
    if (t < 1 || t + 1 > static_cast<int>(snaps.size()))
        throw DomainError("leave_out_evaluation: held-out time point must have a predecessor");
    const TimeSeriesLatent series = series_without(snaps, t);
    VelocityNet field = pretrained ? *pretrained : train_otcfm(series, config).field;
    const auto &prev = snaps[static_cast<std::size_t>(t - 1)];
    const auto &held = snaps[static_cast<std::size_t>(t)];
    const Matrix pushed = simulate_timepoints(field, augmented_state(prev), t - 1, t, steps).back();
    const Eigen::Index d = held.latent.cols();
    TrajectoryScores s = score_prediction(pushed.leftCols(d), held.latent, prev.latent, k, config.seed);
    s.timepoint = t;
    return s;
}

}  // namespace flatvi

#endif  // FLATVI_PIPELINE_HPP_
