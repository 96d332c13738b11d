#include "test_util.hpp"

#include <flatvi/cli.hpp>

#include <fstream>
#include <set>

using namespace flatvi;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run_cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "flatvi");
    std::vector<const char *> argv;
    for (const auto &a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path &p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void write_file(const fs::path &p, const std::string &text)
{
    std::ofstream f(p, std::ios::binary);
    f << text;
}

constexpr const char *kSmallConfig = R"({
  "data": {"genes": 15, "cells_per_timepoint": 30, "timepoints": 2},
  "vae": {"epochs": 2, "latent_dim": 2, "hidden": [16], "batch": 16},
  "gae": {"epochs": 2, "hidden": [16], "batch": 32},
  "cfm": {"iters": 10, "hidden": [16], "steps": 10},
  "eval": {"geodesic_pairs": 2, "geodesic_iters": 5, "geodesic_segments": 4, "k": 3}
})";

/// Every subcommand once, writing into `dir`; returns the concatenated logs.
std::string run_pipeline(const fs::path &dir)
{
    const std::string cfg = (dir / "c.json").string();
    write_file(cfg, kSmallConfig);
    const std::string d = dir.string();
    std::string logs;
    auto step = [&](std::vector<std::string> a) {
        a.insert(a.end(), {"--config", cfg, "--seed", "4"});
        const Result r = run_cli(a);
        EXPECT_EQ(r.code, 0) << a.front() << ": " << r.err;
        logs += r.out;
    };
    step({"gen-data", "--out", d});
    step({"train-vae", "--data", d + "/data", "--out", d + "/vae"});
    step({"train-vae", "--data", d + "/data", "--out", d + "/gae", "--model-type", "gae"});
    step({"embed", "--data", d + "/data", "--model", d + "/vae", "--out", d + "/emb.csv"});
    step({"train-cfm", "--embedding", d + "/emb.csv", "--out", d + "/vel", "--leaveout", "1"});
    step({"simulate", "--embedding", d + "/emb.csv", "--velocity", d + "/vel", "--out", d + "/sim.csv"});
    step({"eval-geometry", "--data", d + "/data", "--model", d + "/vae", "--out", d + "/geo.csv"});
    step({"eval-trajectory", "--embedding", d + "/emb.csv", "--out", d + "/traj.csv", "--iters", "5"});
    return logs;
}

}  // namespace

TEST(Cli, HelpListsFlagsWithDefaults)
{
    const Result r = run_cli({"--help"});
    EXPECT_EQ(r.code, 0);
    for (const char *flag : {"--config", "--lambda", "--sigma", "--seed", "--latent-dim", "--epochs", "--iters",
                             "--batch", "--k", "--leaveout", "gen-data", "train-vae", "embed", "train-cfm", "simulate",
                             "eval-geometry", "eval-trajectory", "FLATVI_THREADS"})
        EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
    EXPECT_NE(r.out.find("[0.1]"), std::string::npos);
}

TEST(Cli, ValidationFailuresExitOneWithJsonLine)
{
    TempDir dir("cli_bad");
    const Result none = run_cli({});
    EXPECT_EQ(none.code, 1);

    const Result flag = run_cli({"gen-data", "--lambda", "abc"});
    EXPECT_EQ(flag.code, 1);
    const Json j = Json::parse(flag.err);
    EXPECT_EQ(j.at("error"), "validation");
    EXPECT_EQ(std::count(flag.err.begin(), flag.err.end(), '\n'), 1);

    write_file(dir.path / "bad.json", R"({"vae": {"lambdaa": 1}})");
    const Result key = run_cli({"gen-data", "--config", (dir.path / "bad.json").string(), "--out", dir.path.string()});
    EXPECT_EQ(key.code, 1);
    EXPECT_NE(Json::parse(key.err).at("message").get<std::string>().find("vae.lambdaa"), std::string::npos);

    EXPECT_EQ(run_cli({"train-vae", "--out", (dir.path / "m").string()}).code, 1);  // no --data
    EXPECT_EQ(run_cli({"train-vae", "--data", (dir.path / "missing").string(), "--out", "x"}).code, 1);
}

TEST(Cli, ConfigRoundTripAndHash)
{
    cli::RunConfig c;
    c.seed = 9;
    c.vae.lambda = 0.5;
    const cli::RunConfig back = cli::config_from_json(cli::to_json(c));
    EXPECT_EQ(cli::to_json(back), cli::to_json(c));
    EXPECT_EQ(cli::config_hash(back), cli::config_hash(c));
    c.vae.lambda = 0.25;
    EXPECT_NE(cli::config_hash(back), cli::config_hash(c));
}

TEST(Cli, PipelineOutputsAreByteDeterministic)
{
    TempDir a("cli_a"), b("cli_b");
    const std::string la = run_pipeline(a.path);
    const std::string lb = run_pipeline(b.path);
    EXPECT_NE(la.find("# flatvi 0.1.0 subcommand=gen-data seed=4"), std::string::npos) << la;
    for (const char *f : {"data.csv", "data.meta.json", "vae.bin", "vae.manifest.json", "gae.bin", "emb.csv",
                          "vel.bin", "sim.csv", "geo.csv", "traj.csv"}) {
        ASSERT_TRUE(fs::exists(a.path / f)) << f;
        EXPECT_EQ(slurp(a.path / f), slurp(b.path / f)) << f;
    }
    std::istringstream geo(slurp(a.path / "geo.csv"));
    std::string header;
    std::getline(geo, header);
    EXPECT_EQ(header, "metric,timepoint,value,seed");
    std::istringstream traj(slurp(a.path / "traj.csv"));
    std::getline(traj, header);
    EXPECT_EQ(header, "metric,timepoint,value,seed");
    std::string line;
    std::set<std::string> metrics;
    while (std::getline(traj, line)) metrics.insert(line.substr(0, line.find(',')));
    for (const char *m : {"wasserstein", "mean_l2", "density", "coverage"}) EXPECT_TRUE(metrics.count(m)) << m;
}
