#ifndef FLATVI_CLI_HPP_
#define FLATVI_CLI_HPP_

#include "gae.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <set>

namespace flatvi::cli {

inline constexpr const char *kVersion = "0.1.0";

/// Thrown for bad user input; maps to exit code 1.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::uint64_t seed = 0;
    SyntheticSpec data;
    TrainConfig vae;
    GaeConfig gae;
    CfmConfig cfm;
    std::size_t cfm_steps = 50;  // RK4 steps per unit time
    std::size_t k = 5;           // kNN size for Density / Coverage
    int leaveout = -1;           // -1: every intermediate time point
    std::size_t geodesic_pairs = 20;
    std::size_t geodesic_segments = 16;
    std::size_t geodesic_iters = 200;
    std::size_t vor_batch = 256;

    RunConfig()
    {
        vae.lambda = 1.0;
        vae.lr = 1e-3;
        vae.batch_size = 32;
        vae.max_epochs = 100;
        vae.latent_dim = 10;
        cfm.sigma = 0.1;
        cfm.lr = 1e-3;
        cfm.batch_size = 32;
    }
};

namespace detail {

template <class T>
void take(const Json &obj, const char *key, T &dst)
{
    if (obj.contains(key)) dst = obj.at(key).get<T>();
}

inline void reject_unknown(const Json &obj, const std::string &where, std::initializer_list<const char *> keys)
{
    if (!obj.is_object()) throw ValidationError(where + " must be a JSON object");
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto &[k, _] : obj.items())
        if (!known.count(k)) throw ValidationError("unknown config key '" + where + "." + k + "'");
}

}  // namespace detail

inline Json to_json(const RunConfig &c)
{
    return Json{
        {"seed", c.seed},
        {"data",
         {{"d_true", c.data.d_true},
          {"genes", c.data.genes},
          {"timepoints", c.data.timepoints},
          {"cells_per_timepoint", c.data.cells_per_timepoint},
          {"theta_true", c.data.theta_true},
          {"theta_min", c.data.theta_min},
          {"theta_max", c.data.theta_max},
          {"branch_count", c.data.branch_count},
          {"size_factor_min", c.data.size_factor_min},
          {"size_factor_max", c.data.size_factor_max},
          {"latent_noise", c.data.latent_noise}}},
        {"vae",
         {{"lambda", c.vae.lambda},
          {"lr", c.vae.lr},
          {"batch", c.vae.batch_size},
          {"epochs", c.vae.max_epochs},
          {"kl_anneal_epochs", c.vae.kl_anneal_epochs},
          {"latent_dim", c.vae.latent_dim},
          {"hidden", c.vae.hidden}}},
        {"gae",
         {{"lr", c.gae.lr},
          {"batch", c.gae.batch_size},
          {"epochs", c.gae.max_epochs},
          {"scales", c.gae.scales},
          {"alpha", c.gae.alpha},
          {"hidden", c.gae.hidden}}},
        {"cfm",
         {{"sigma", c.cfm.sigma},
          {"lr", c.cfm.lr},
          {"iters", c.cfm.iters},
          {"batch", c.cfm.batch_size},
          {"hidden", c.cfm.hidden},
          {"steps", c.cfm_steps}}},
        {"eval",
         {{"k", c.k},
          {"leaveout", c.leaveout},
          {"geodesic_pairs", c.geodesic_pairs},
          {"geodesic_segments", c.geodesic_segments},
          {"geodesic_iters", c.geodesic_iters},
          {"vor_batch", c.vor_batch}}},
    };
}

/// Overlays a JSON document on the defaults; unknown keys are errors.
inline RunConfig config_from_json(const Json &j)
{
    using detail::reject_unknown;
    using detail::take;
    RunConfig c;
    try {
        reject_unknown(j, "config", {"seed", "data", "vae", "gae", "cfm", "eval"});
        take(j, "seed", c.seed);
        if (j.contains("data")) {
            const Json &d = j.at("data");
            reject_unknown(d, "data",
                           {"d_true", "genes", "timepoints", "cells_per_timepoint", "theta_true", "theta_min",
                            "theta_max", "branch_count", "size_factor_min", "size_factor_max", "latent_noise"});
            take(d, "d_true", c.data.d_true);
            take(d, "genes", c.data.genes);
            take(d, "timepoints", c.data.timepoints);
            take(d, "cells_per_timepoint", c.data.cells_per_timepoint);
            take(d, "theta_true", c.data.theta_true);
            take(d, "theta_min", c.data.theta_min);
            take(d, "theta_max", c.data.theta_max);
            take(d, "branch_count", c.data.branch_count);
            take(d, "size_factor_min", c.data.size_factor_min);
            take(d, "size_factor_max", c.data.size_factor_max);
            take(d, "latent_noise", c.data.latent_noise);
        }
        if (j.contains("vae")) {
            const Json &v = j.at("vae");
            reject_unknown(v, "vae", {"lambda", "lr", "batch", "epochs", "kl_anneal_epochs", "latent_dim", "hidden"});
            take(v, "lambda", c.vae.lambda);
            take(v, "lr", c.vae.lr);
            take(v, "batch", c.vae.batch_size);
            take(v, "epochs", c.vae.max_epochs);
            take(v, "kl_anneal_epochs", c.vae.kl_anneal_epochs);
            take(v, "latent_dim", c.vae.latent_dim);
            take(v, "hidden", c.vae.hidden);
        }
        if (j.contains("gae")) {
            const Json &g = j.at("gae");
            reject_unknown(g, "gae", {"lr", "batch", "epochs", "scales", "alpha", "hidden"});
            take(g, "lr", c.gae.lr);
            take(g, "batch", c.gae.batch_size);
            take(g, "epochs", c.gae.max_epochs);
            take(g, "scales", c.gae.scales);
            take(g, "alpha", c.gae.alpha);
            take(g, "hidden", c.gae.hidden);
        }
        if (j.contains("cfm")) {
            const Json &f = j.at("cfm");
            reject_unknown(f, "cfm", {"sigma", "lr", "iters", "batch", "hidden", "steps"});
            take(f, "sigma", c.cfm.sigma);
            take(f, "lr", c.cfm.lr);
            take(f, "iters", c.cfm.iters);
            take(f, "batch", c.cfm.batch_size);
            take(f, "hidden", c.cfm.hidden);
            take(f, "steps", c.cfm_steps);
        }
        if (j.contains("eval")) {
            const Json &e = j.at("eval");
            reject_unknown(e, "eval",
                           {"k", "leaveout", "geodesic_pairs", "geodesic_segments", "geodesic_iters", "vor_batch"});
            take(e, "k", c.k);
            take(e, "leaveout", c.leaveout);
            take(e, "geodesic_pairs", c.geodesic_pairs);
            take(e, "geodesic_segments", c.geodesic_segments);
            take(e, "geodesic_iters", c.geodesic_iters);
            take(e, "vor_batch", c.vor_batch);
        }
    } catch (const Json::exception &e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    return c;
}

/// 64-bit FNV-1a of the canonical JSON text of the resolved config.
inline std::string config_hash(const RunConfig &c)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : to_json(c).dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Rows of the metrics report: metric,timepoint,value,seed.
struct MetricsReport {
    std::uint64_t seed = 0;
    std::vector<std::array<std::string, 2>> keys;
    std::vector<double> values;

    void add(const std::string &metric, const std::string &timepoint, double value)
    {
        keys.push_back({metric, timepoint});
        values.push_back(value);
    }

    void write(const fs::path &path) const
    {
        std::string out = "metric,timepoint,value,seed\n";
        for (std::size_t i = 0; i < keys.size(); ++i)
            out += keys[i][0] + "," + keys[i][1] + "," + format_double(values[i]) + "," + std::to_string(seed) + "\n";
        flatvi::detail::write_text(path, out);
    }
};

/// Latent table: z0..z{d-1}, log_size_factor, time.
inline void write_embedding(const fs::path &path, const Matrix &latent, const Vector &size_factors,
                            const std::vector<int> &times)
{
    const Eigen::Index d = latent.cols();
    Matrix table(latent.rows(), d + 2);
    table.leftCols(d) = latent;
    table.col(d) = size_factors.array().log().matrix();
    for (Eigen::Index i = 0; i < latent.rows(); ++i) table(i, d + 1) = times[static_cast<std::size_t>(i)];
    std::vector<std::string> header;
    for (Eigen::Index j = 0; j < d; ++j) header.push_back("z" + std::to_string(j));
    header.emplace_back("log_size_factor");
    header.emplace_back("time");
    write_matrix_csv(path, table, header);
}

struct Embedding {
    Matrix latent;
    Vector size_factors;
    std::vector<int> times;
};

inline Embedding read_embedding(const fs::path &path)
{
    const CsvMatrix t = read_matrix_csv(path);
    const auto w = static_cast<Eigen::Index>(t.header.size());
    if (w < 3 || t.header[t.header.size() - 1] != "time" || t.header[t.header.size() - 2] != "log_size_factor")
        throw ParseError(path.string() + ": line 1: expected columns z0..,log_size_factor,time");
    Embedding e;
    e.latent = t.values.leftCols(w - 2);
    e.size_factors = t.values.col(w - 2).array().exp();
    for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
        const double v = t.values(i, w - 1);
        if (v != std::floor(v) || v < 0)
            throw ParseError(path.string() + ": line " + std::to_string(i + 2) + ": time must be a non-negative integer");
        e.times.push_back(static_cast<int>(v));
    }
    return e;
}

struct Options {
    std::string subcommand;
    std::string config_path;
    std::string data;
    std::string out;
    std::string model;
    std::string embedding;
    std::string velocity;
    std::string model_type = "flatvi";
    int from_t = 0;
    int to_t = -1;
    std::optional<double> lambda, sigma;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> latent_dim, epochs, iters, batch, k;
    std::optional<int> leaveout;
};

/// Compact text for --help defaults.
inline std::string short_double(double v)
{
    std::ostringstream s;
    s << v;
    return s.str();
}

inline void log_header(std::ostream &log, const Options &o, const RunConfig &c)
{
    log << "# flatvi " << kVersion << " subcommand=" << o.subcommand << " seed=" << c.seed
        << " config_hash=" << config_hash(c) << "\n";
}

inline void require_path(const std::string &value, const char *flag)
{
    if (value.empty()) throw ValidationError(std::string("missing required flag ") + flag);
}

inline Json vae_hyper(const RunConfig &c) { return to_json(c).at("vae"); }

// --- subcommands -----------------------------------------------------------

inline void cmd_gen_data(const Options &o, const RunConfig &c, std::ostream &log)
{
    require_path(o.out, "--out");
    SyntheticSpec spec = c.data;
    spec.seed = c.seed;
    const SyntheticData s = gen_synthetic(spec);
    const fs::path base = fs::path(o.out) / "data";
    write_dataset(base, s.data, DatasetMeta{spec.d_true, spec.seed});
    Matrix truth(s.truth.latent.rows(), s.truth.latent.cols() + 3);
    truth.leftCols(s.truth.latent.cols()) = s.truth.latent;
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
        truth(i, s.truth.latent.cols()) = s.truth.branch[static_cast<std::size_t>(i)];
        truth(i, s.truth.latent.cols() + 1) = s.truth.size_factors(i);
        truth(i, s.truth.latent.cols() + 2) = s.data.time_labels[static_cast<std::size_t>(i)];
    }
    std::vector<std::string> header;
    for (Eigen::Index j = 0; j < s.truth.latent.cols(); ++j) header.push_back("u" + std::to_string(j));
    header.insert(header.end(), {"branch", "size_factor", "time"});
    write_matrix_csv(with_suffix(base, ".truth.csv"), truth, header);
    Json theta = Json::array();
    for (Eigen::Index g = 0; g < s.truth.theta.size(); ++g) theta.push_back(s.truth.theta(g));
    flatvi::detail::write_text(with_suffix(base, ".theta.json"), theta.dump() + "\n");
    log << "wrote " << s.data.counts.rows() << " cells x " << s.data.counts.cols() << " genes to " << base.string()
        << ".csv\n";
}

inline void cmd_train_vae(const Options &o, const RunConfig &c, std::ostream &log)
{
    require_path(o.data, "--data");
    require_path(o.out, "--out");
    const CountMatrix data = read_dataset(o.data);
    if (o.model_type == "flatvi") {
        TrainConfig tc = c.vae;
        tc.seed = c.seed;
        const TrainedFlatVI t = train_flatvi(data.counts, tc);
        save_checkpoint(to_checkpoint(t.model, c.seed, vae_hyper(c)), o.out);
        log << "final loss " << format_double(t.loss_trace.back()) << " lambda " << format_double(tc.lambda) << "\n";
    } else if (o.model_type == "gae") {
        GaeConfig gc = c.gae;
        gc.seed = c.seed;
        const TrainedGae t = train_gae(log_normalize(data.counts), c.vae.latent_dim, gc);
        Json hyper = to_json(c).at("gae");
        hyper["latent_dim"] = c.vae.latent_dim;
        save_checkpoint(to_checkpoint(t.model, c.seed, hyper), o.out);
        log << "final loss " << format_double(t.loss_trace.back()) << "\n";
    } else {
        throw ValidationError("--model-type must be flatvi or gae");
    }
    log << "checkpoint " << o.out << ".manifest.json\n";
}

inline void cmd_embed(const Options &o, const RunConfig &, std::ostream &log)
{
    require_path(o.data, "--data");
    require_path(o.model, "--model");
    require_path(o.out, "--out");
    const CountMatrix data = read_dataset(o.data);
    const Checkpoint ck = load_checkpoint(o.model);
    const Vector l = size_factors(data.counts);
    Matrix latent;
    if (ck.model_type == "flatvi") {
        const FlatVIModel m = flatvi_from_checkpoint(ck);
        require_dims(m.genes() == data.counts.cols(), "embed: checkpoint gene count differs from data");
        latent = encode_batch(m, data.counts).first;
    } else if (ck.model_type == "gae") {
        const GaeModel m = gae_from_checkpoint(ck);
        require_dims(m.encoder.in_dim() == data.counts.cols(), "embed: checkpoint gene count differs from data");
        latent = m.embed(log_normalize(data.counts));
    } else {
        throw ValidationError("embed: unsupported model_type " + ck.model_type);
    }
    write_embedding(o.out, latent, l, data.time_labels);
    log << "embedded " << latent.rows() << " cells into " << latent.cols() << " dims\n";
}

inline void cmd_train_cfm(const Options &o, const RunConfig &c, std::ostream &log)
{
    require_path(o.embedding, "--embedding");
    require_path(o.out, "--out");
    const Embedding e = read_embedding(o.embedding);
    const auto snaps = snapshots_by_time(e.latent, e.size_factors, e.times);
    if (c.leaveout >= static_cast<int>(snaps.size())) throw ValidationError("--leaveout beyond the last time point");
    CfmConfig cc = c.cfm;
    cc.seed = c.seed;
    const TrainedVelocity t = train_otcfm(series_without(snaps, c.leaveout), cc);
    Json hyper = to_json(c).at("cfm");
    hyper["leaveout"] = c.leaveout;
    save_checkpoint(to_checkpoint(t.field, c.seed, hyper), o.out);
    log << "final loss " << format_double(t.loss_trace.back()) << "\n";
}

inline void cmd_simulate(const Options &o, const RunConfig &c, std::ostream &log)
{
    require_path(o.embedding, "--embedding");
    require_path(o.velocity, "--velocity");
    require_path(o.out, "--out");
    const Embedding e = read_embedding(o.embedding);
    const VelocityNet field = velocity_from_checkpoint(load_checkpoint(o.velocity));
    const auto snaps = snapshots_by_time(e.latent, e.size_factors, e.times);
    const int to_t = o.to_t < 0 ? static_cast<int>(snaps.size()) - 1 : o.to_t;
    if (o.from_t < 0 || o.from_t >= static_cast<int>(snaps.size())) throw ValidationError("--from outside observed times");
    if (to_t < o.from_t) throw ValidationError("--to precedes --from");
    const auto &start = snaps[static_cast<std::size_t>(o.from_t)];
    if (field.state_dim() != start.latent.cols() + 1)
        throw ValidationError("simulate: velocity checkpoint does not match the embedding width");
    const auto traj = simulate_timepoints(field, augmented_state(start), o.from_t, to_t, c.cfm_steps);
    const Eigen::Index d = start.latent.cols();
    const Eigen::Index n = start.latent.rows();
    Matrix latent(n * static_cast<Eigen::Index>(traj.size()), d);
    Vector l(latent.rows());
    std::vector<int> times;
    for (std::size_t s = 0; s < traj.size(); ++s) {
        const auto r = static_cast<Eigen::Index>(s) * n;
        latent.middleRows(r, n) = traj[s].leftCols(d);
        l.segment(r, n) = traj[s].col(d).array().exp().matrix();
        times.insert(times.end(), static_cast<std::size_t>(n), o.from_t + static_cast<int>(s));
    }
    write_embedding(o.out, latent, l, times);
    log << "simulated " << n << " cells from t=" << o.from_t << " to t=" << to_t << "\n";
}

inline void cmd_eval_geometry(const Options &o, const RunConfig &c, std::ostream &log)
{
    require_path(o.data, "--data");
    require_path(o.model, "--model");
    require_path(o.out, "--out");
    const CountMatrix data = read_dataset(o.data);
    const Checkpoint ck = load_checkpoint(o.model);
    if (ck.model_type != "flatvi") throw ValidationError("eval-geometry needs a flatvi checkpoint");
    const FlatVIModel m = flatvi_from_checkpoint(ck);
    require_dims(m.genes() == data.counts.cols(), "eval-geometry: checkpoint gene count differs from data");
    const Vector l = size_factors(data.counts);
    const Matrix means = encode_batch(m, data.counts).first;
    const auto metrics = pullback_metrics(m, means, l);
    double mf = 0.0;
    for (const auto &mt : metrics) mf += magnification_factor(mt);
    mf /= static_cast<double>(metrics.size());
    const RowVector theta = m.theta();
    double nll = 0.0;
    for (Eigen::Index i = 0; i < data.counts.rows(); ++i)
        nll -= nb_log_pmf(data.counts.row(i), decode(m, means.row(i).transpose(), l(i)), theta);
    nll /= static_cast<double>(data.counts.rows());

    MetricsReport rep;
    rep.seed = c.seed;
    rep.add("vor", "all", batched_vor(metrics, c.vor_batch));
    rep.add("mf", "all", mf);
    rep.add("nll", "all", nll);

    if (c.geodesic_pairs > 0) {
        std::vector<double> sorted(l.data(), l.data() + l.size());
        std::sort(sorted.begin(), sorted.end());
        const double l_med = sorted[sorted.size() / 2];
        Rng rng(c.seed);
        GeodesicOptions go;
        go.segments = c.geodesic_segments;
        go.iters = c.geodesic_iters;
        const auto field = model_metric_field(m, l_med);
        double worst = 0.0, total = 0.0;
        for (std::size_t p = 0; p < c.geodesic_pairs; ++p) {
            const auto a = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(means.rows())));
            const auto b = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(means.rows())));
            const GeodesicResult g = geodesic_distance(field, means.row(a).transpose(), means.row(b).transpose(), go);
            const double ratio = g.length > 0.0 ? g.straight_length / g.length : 1.0;
            worst = std::max(worst, ratio);
            total += ratio;
        }
        rep.add("geodesic_ratio_mean", "all", total / static_cast<double>(c.geodesic_pairs));
        rep.add("geodesic_ratio_max", "all", worst);
    }
    rep.write(o.out);
    log << "vor " << format_double(rep.values[0]) << " mf " << format_double(mf) << " nll " << format_double(nll) << "\n";
}

inline void cmd_eval_trajectory(const Options &o, const RunConfig &c, std::ostream &log)
{
    require_path(o.embedding, "--embedding");
    require_path(o.out, "--out");
    const Embedding e = read_embedding(o.embedding);
    const auto snaps = snapshots_by_time(e.latent, e.size_factors, e.times);
    std::vector<int> held;
    if (c.leaveout >= 0) {
        if (c.leaveout < 1 || c.leaveout + 1 > static_cast<int>(snaps.size()))
            throw ValidationError("--leaveout must name a time point with a predecessor");
        held.push_back(c.leaveout);
    } else {
        for (int t = 1; t + 1 < static_cast<int>(snaps.size()); ++t) held.push_back(t);
        if (held.empty()) throw ValidationError("eval-trajectory: need at least three time points");
    }
    if (!o.velocity.empty() && held.size() != 1)
        throw ValidationError("--velocity needs a single --leaveout time point");
    std::optional<VelocityNet> pre;
    if (!o.velocity.empty()) pre = velocity_from_checkpoint(load_checkpoint(o.velocity));
    CfmConfig cc = c.cfm;
    cc.seed = c.seed;
    MetricsReport rep;
    rep.seed = c.seed;
    for (int t : held) {
        const TrajectoryScores s = leave_out_evaluation(snaps, t, cc, c.k, c.cfm_steps, pre ? &*pre : nullptr);
        const std::string ts = std::to_string(t);
        rep.add("wasserstein", ts, s.wasserstein);
        rep.add("mean_l2", ts, s.mean_l2);
        rep.add("density", ts, s.density);
        rep.add("coverage", ts, s.coverage);
        rep.add("baseline_wasserstein", ts, s.baseline_wasserstein);
        log << "t=" << t << " wasserstein " << format_double(s.wasserstein) << " baseline "
            << format_double(s.baseline_wasserstein) << "\n";
    }
    rep.write(o.out);
}

// --- entry point -----------------------------------------------------------

inline void error_line(std::ostream &err, const char *kind, const std::string &message)
{
    err << Json{{"error", kind}, {"message", message}}.dump() << "\n";
}

/// Parses argv, runs one subcommand and returns the process exit code.
inline int run(int argc, const char *const *argv, std::ostream &log = std::cout, std::ostream &err = std::cerr)
{
    const RunConfig defaults;
    Options o;
    CLI::App app{"flatvi: flattened NB-VAE geometry and OT flow matching on count data"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1, 1);
    app.add_option("--config", o.config_path, "JSON run config; flags below override it")->default_str("none");
    app.add_option("--lambda", o.lambda, "flattening weight")->default_str(short_double(defaults.vae.lambda));
    app.add_option("--sigma", o.sigma, "OT-CFM path noise")->default_str(short_double(defaults.cfm.sigma));
    app.add_option("--seed", o.seed, "master seed")->default_str(std::to_string(defaults.seed));
    app.add_option("--latent-dim", o.latent_dim, "latent width")->default_str(std::to_string(defaults.vae.latent_dim));
    app.add_option("--epochs", o.epochs, "training epochs (VAE or GAE)")
        ->default_str(std::to_string(defaults.vae.max_epochs));
    app.add_option("--iters", o.iters, "OT-CFM iterations")->default_str(std::to_string(defaults.cfm.iters));
    app.add_option("--batch", o.batch, "minibatch size for the model being trained (GAE default 256)")
        ->default_str(std::to_string(defaults.vae.batch_size));
    app.add_option("--k", o.k, "kNN size for density and coverage")->default_str(std::to_string(defaults.k));
    app.add_option("--leaveout", o.leaveout, "held-out time point (-1: all intermediate)")
        ->default_str(std::to_string(defaults.leaveout));
    app.add_option("--data", o.data, "dataset base path (<base>.csv + <base>.meta.json)")->default_str("none");
    app.add_option("--out", o.out, "output directory, checkpoint base or CSV path")->default_str("none");
    app.add_option("--model", o.model, "checkpoint base path")->default_str("none");
    app.add_option("--model-type", o.model_type, "train-vae model: flatvi or gae")->default_str("flatvi");
    app.add_option("--embedding", o.embedding, "latent CSV from embed")->default_str("none");
    app.add_option("--velocity", o.velocity, "velocity checkpoint base path")->default_str("none");
    app.add_option("--from", o.from_t, "simulate: start time point")->default_str("0");
    app.add_option("--to", o.to_t, "simulate: end time point (-1: last)")->default_str("-1");
    app.footer("Environment: FLATVI_THREADS caps worker threads for metric evaluation.");
    for (const char *name : {"gen-data", "train-vae", "embed", "train-cfm", "simulate", "eval-geometry",
                             "eval-trajectory"}) {
        auto *sub = app.add_subcommand(name);
        sub->fallthrough();
        sub->callback([&o, name] { o.subcommand = name; });
    }
    app.get_subcommand("gen-data")->description("synthesise a time-resolved NB count dataset");
    app.get_subcommand("train-vae")->description("train FlatVI (or the GAE baseline) and save a checkpoint");
    app.get_subcommand("embed")->description("write posterior-mean latent codes");
    app.get_subcommand("train-cfm")->description("train the OT-CFM velocity field on latent snapshots");
    app.get_subcommand("simulate")->description("push cells forward through the learnt flow");
    app.get_subcommand("eval-geometry")->description("VoR, MF, NLL and geodesic ratios of a checkpoint");
    app.get_subcommand("eval-trajectory")->description("leave-out reconstruction scores");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e, log, err);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e, log, err);
    } catch (const CLI::CallForVersion &e) {
        return app.exit(e, log, err);
    } catch (const CLI::ParseError &e) {
        error_line(err, "validation", e.what());
        return 1;
    }

    RunConfig c;
    try {
        if (!o.config_path.empty()) c = config_from_json(flatvi::detail::read_json(o.config_path));
        if (o.seed) c.seed = *o.seed;
        if (o.lambda) c.vae.lambda = *o.lambda;
        if (o.sigma) c.cfm.sigma = *o.sigma;
        if (o.latent_dim) c.vae.latent_dim = *o.latent_dim;
        if (o.epochs) c.vae.max_epochs = c.gae.max_epochs = *o.epochs;
        if (o.iters) c.cfm.iters = *o.iters;
        if (o.batch) {
            if (o.subcommand == "train-vae") c.vae.batch_size = c.gae.batch_size = *o.batch;
            else c.cfm.batch_size = *o.batch;
        }
        if (o.k) c.k = *o.k;
        if (o.leaveout) c.leaveout = *o.leaveout;

        log_header(log, o, c);
        if (o.subcommand == "gen-data") cmd_gen_data(o, c, log);
        else if (o.subcommand == "train-vae") cmd_train_vae(o, c, log);
        else if (o.subcommand == "embed") cmd_embed(o, c, log);
        else if (o.subcommand == "train-cfm") cmd_train_cfm(o, c, log);
        else if (o.subcommand == "simulate") cmd_simulate(o, c, log);
        else if (o.subcommand == "eval-geometry") cmd_eval_geometry(o, c, log);
        else cmd_eval_trajectory(o, c, log);
    } catch (const ValidationError &e) {
        error_line(err, "validation", e.what());
        return 1;
    } catch (const ParseError &e) {
        error_line(err, "validation", e.what());
        return 1;
    } catch (const DimensionError &e) {
        error_line(err, "validation", e.what());
        return 1;
    } catch (const DomainError &e) {
        error_line(err, "validation", e.what());
        return 1;
    } catch (const std::exception &e) {
        error_line(err, "runtime", e.what());
        return 2;
    }
    return 0;
}

}  // namespace flatvi::cli

#endif  // FLATVI_CLI_HPP_
