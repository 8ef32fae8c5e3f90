#include "cli.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using lbea::cli::dispatch;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name)
{
    const fs::path d = fs::temp_directory_path() / ("lbea_cli_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

int run(std::vector<std::string> args, std::string* err_text = nullptr)
{
    args.insert(args.begin(), "lbea");
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    if (err_text) *err_text = err.str();
    return code;
}

}  // namespace

TEST(Cli, FormatDoubleRoundTrips)
{
    const double x = 0.1 + 0.2;
    EXPECT_EQ(std::stod(lbea::cli::format_double(x)), x);
    EXPECT_EQ(lbea::cli::format_double(std::nan("")), "nan");
}

TEST(Cli, UsageErrors)
{
    std::string err;
    EXPECT_EQ(run({"simulate"}, &err), lbea::cli::usage_error);
    EXPECT_NE(err.find("--potential"), std::string::npos);
    EXPECT_EQ(run({"simulate", "--potential", "quadratic", "--bogus"}), lbea::cli::usage_error);
    EXPECT_EQ(run({}), lbea::cli::usage_error);
}

TEST(Cli, MixingRejectsConstantObservable)
{
    const fs::path d = fresh_dir("mix");
    EXPECT_EQ(run({"--out-dir", d.string(), "mixing", "--potential", "quadratic", "--phi", "1"}),
              lbea::cli::usage_error);
}

TEST(Cli, PoissonIncompatibleRhsIsCheckFailure)
{
    const fs::path d = fresh_dir("poisson");
    EXPECT_EQ(run({"--out-dir", d.string(), "poisson-solve", "--potential", "quadratic", "--g", "q^2"}),
              lbea::cli::check_failed);
    EXPECT_TRUE(fs::exists(d / "poisson-solve.manifest.json"));
}

TEST(Cli, SimulateIsDeterministic)
{
    const fs::path a = fresh_dir("sim_a"), b = fresh_dir("sim_b");
    for (const fs::path& d : {a, b})
        ASSERT_EQ(run({"--out-dir", d.string(), "--seed", "5", "simulate", "--potential", "quartic", "--steps", "200",
                       "--chains", "3", "--stride", "50"}),
                  lbea::cli::ok);
    EXPECT_EQ(slurp(a / "simulate.csv"), slurp(b / "simulate.csv"));
    EXPECT_FALSE(slurp(a / "simulate.csv").empty());
}

TEST(Cli, ConfigRerunReproducesArtifacts)
{
    const fs::path a = fresh_dir("cfg_a"), b = fresh_dir("cfg_b");
    ASSERT_EQ(run({"--out-dir", a.string(), "weak-error", "--potential", "quadratic", "--scheme", "implicit-euler",
                   "--ladder", "0.1,0.05,0.025"}),
              lbea::cli::ok);
    ASSERT_TRUE(fs::exists(a / "weak-error.config.toml"));
    ASSERT_EQ(run({"weak-error", "--config", (a / "weak-error.config.toml").string(), "--out-dir", b.string()}), lbea::cli::ok);
    EXPECT_EQ(slurp(a / "weak-error.csv"), slurp(b / "weak-error.csv"));
    EXPECT_EQ(slurp(a / "weak-error.json"), slurp(b / "weak-error.json"));
}

TEST(Cli, ExpansionJsonCarriesOperatorsAndMeasure)
{
    const fs::path d = fresh_dir("exp");
    ASSERT_EQ(run({"--out-dir", d.string(), "expansion", "--potential", "quadratic", "--order", "1", "--degree", "4"}),
              lbea::cli::ok);
    const auto j = nlohmann::json::parse(slurp(d / "expansion.json"));
    EXPECT_TRUE(j.contains("A"));
    EXPECT_TRUE(j.contains("L"));
    EXPECT_TRUE(j.contains("measure"));
    const auto m = nlohmann::json::parse(slurp(d / "expansion.manifest.json"));
    EXPECT_EQ(m["exit_code"], 0);
}

TEST(Cli, ExplicitEulerSweepFlagsDivergence)
{
    const fs::path d = fresh_dir("sweep");
    EXPECT_EQ(run({"--out-dir", d.string(), "moment-sweep", "--potential", "quartic", "--scheme", "explicit-euler",
                   "--delta", "0.5", "--steps", "2000", "--chains", "8"}),
              lbea::cli::check_failed);
}
