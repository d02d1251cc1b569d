#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "ausynth/cli.hpp"
#include "support.hpp"

using namespace ausynth;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string read_all(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string zeros_label(std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += i ? ",0" : "0";
    return s;
}

}  // namespace

TEST(Cli, SynthWithZeroWeightModelWritesZeros) {
    testsupport::TempDir dir("cli");
    TrainConfig cfg = testsupport::small_config(0);
    CganModel m = make_cgan(kNumAUs, kExpressionDim, cfg);
    m.g = zero_weights(m.g_spec);
    save_checkpoint(dir.path() / "model", to_checkpoint(m, 0, 0));
    const auto r = run_cli({"synth", "--model", (dir.path() / "model").string(), "--label", zeros_label(kNumAUs), "--out",
                            (dir.path() / "p.csv").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const LabeledDataset ds = load_dataset(dir.path() / "p.csv");
    ASSERT_EQ(ds.size(), 1u);
    EXPECT_EQ(ds.param_dim, 79u);
    EXPECT_TRUE(ds.samples[0].params.isZero(0.0));
    EXPECT_TRUE(fs::exists(dir.path() / "p.csv.manifest.toml"));
}

TEST(Cli, MeshWithZeroParamsEqualsMeanFaceExport) {
    testsupport::TempDir dir("cli");
    const std::string basis = (dir.path() / "basis").string();
    ASSERT_EQ(run_cli({"basis", "--out", basis, "--rings", "6", "--segments", "8", "--exp-dim", "5", "--id-dim", "4",
                       "--alb-dim", "3", "--seed", "2"})
                  .code,
              0);
    // zero parameters given explicitly and omitted
    LabeledDataset params;
    params.label_dim = 1;
    params.param_dim = 5;
    params.samples.push_back({"a", {0}, Vector::Zero(5)});
    save_dataset(params, dir.path() / "zeros.csv");
    ASSERT_EQ(run_cli({"mesh", "--basis", basis, "--params", (dir.path() / "zeros.csv").string(), "--out",
                       (dir.path() / "a.ply").string()})
                  .code,
              0);
    ASSERT_EQ(run_cli({"mesh", "--basis", basis, "--out", (dir.path() / "b.ply").string()}).code, 0);

    const MorphBasis b = load_basis(basis);
    Mesh mean{Eigen::Map<const DenseMatrix>(b.mean_shape.data(), b.mean_shape.size() / 3, 3), b.faces,
              Vector(Vector::Zero(b.mean_shape.size() / 3)),
              std::vector<Rgb>(b.vertex_count(), ramp_table().front())};
    export_mesh(mean, dir.path() / "mean.ply");
    EXPECT_EQ(read_all(dir.path() / "a.ply"), read_all(dir.path() / "mean.ply"));
    EXPECT_EQ(read_all(dir.path() / "b.ply"), read_all(dir.path() / "mean.ply"));
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run_cli({}).code, cli::kUsageError);
    EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kUsageError);
    EXPECT_EQ(run_cli({"oracle", "--bogus"}).code, cli::kUsageError);
    EXPECT_EQ(run_cli({"train", "--data", "x.csv"}).code, cli::kUsageError);  // missing --out
    EXPECT_EQ(run_cli({"oracle", "--kind", "nope", "--out", "x"}).code, cli::kUsageError);
    const auto missing = run_cli({"eval", "--train", "/nonexistent/a.csv", "--test", "/nonexistent/b.csv", "--out", "/tmp/x"});
    EXPECT_EQ(missing.code, cli::kRuntimeError);
    EXPECT_NE(missing.err.find("ausynth eval:"), std::string::npos);
    const auto version = run_cli({"--version"});
    EXPECT_EQ(version.code, cli::kOk);
    EXPECT_NE(version.out.find(cli::kVersion), std::string::npos);
    EXPECT_EQ(run_cli({"--help"}).code, cli::kOk);
}

TEST(Cli, BadLabelIsRuntimeError) {
    testsupport::TempDir dir("cli");
    CganModel m = make_cgan(2, 3, testsupport::small_config(0));
    save_checkpoint(dir.path() / "model", to_checkpoint(m, 0, 0));
    const auto r = run_cli({"synth", "--model", (dir.path() / "model").string(), "--label", "0,9", "--out",
                            (dir.path() / "p.csv").string()});
    EXPECT_EQ(r.code, cli::kRuntimeError);
    EXPECT_EQ(run_cli({"synth", "--model", (dir.path() / "model").string(), "--label", "0", "--out",
                       (dir.path() / "p.csv").string()})
                  .code,
              cli::kRuntimeError);
}

TEST(Cli, ManifestRecordsSeedAndReplays) {
    testsupport::TempDir dir("cli");
    const std::string out = (dir.path() / "o.csv").string();
    ASSERT_EQ(run_cli({"--seed", "17", "oracle", "--kind", "imbalanced", "--count", "200", "--out", out}).code, 0);
    const std::string first = read_all(out);
    const std::string manifest = read_all(out + ".manifest.toml");
    EXPECT_NE(manifest.find("seed=17"), std::string::npos) << manifest;
    EXPECT_NE(manifest.find("[oracle]"), std::string::npos) << manifest;
    EXPECT_NE(manifest.find("imbalanced"), std::string::npos) << manifest;
    fs::copy_file(out + ".manifest.toml", dir.path() / "replay.toml");
    fs::remove(out);
    ASSERT_EQ(run_cli({"--config", (dir.path() / "replay.toml").string()}).code, 0);
    EXPECT_EQ(read_all(out), first);
    // a different seed changes the data
    ASSERT_EQ(run_cli({"--seed", "18", "oracle", "--kind", "imbalanced", "--count", "200", "--out", out}).code, 0);
    EXPECT_NE(read_all(out), first);
}

TEST(Cli, FlagsOverrideConfig) {
    testsupport::TempDir dir("cli");
    const std::string out = (dir.path() / "o.csv").string();
    std::ofstream(dir.path() / "c.toml") << "seed=3\n[oracle]\ncount=50\nout=\"" << out << "\"\n";
    ASSERT_EQ(run_cli({"--config", (dir.path() / "c.toml").string(), "oracle", "--count", "20"}).code, 0);
    EXPECT_EQ(load_dataset(out).size(), 20u);
}

TEST(Cli, InputsAreNotModified) {
    testsupport::TempDir dir("cli");
    const std::string data = (dir.path() / "d.csv").string();
    ASSERT_EQ(run_cli({"oracle", "--count", "300", "--out", data}).code, 0);
    const std::string before = read_all(data);
    ASSERT_EQ(run_cli({"train", "--data", data, "--out", (dir.path() / "m").string(), "--model", "cgan", "--iters", "5",
                       "--lr", "1e-3", "--width", "8", "--noise-dim", "2"})
                  .code,
              0);
    ASSERT_EQ(run_cli({"augment", "--data", data, "--model", (dir.path() / "m").string(), "--count", "10", "--out",
                       (dir.path() / "aug.csv").string()})
                  .code,
              0);
    EXPECT_EQ(read_all(data), before);
    const LabeledDataset aug = load_dataset(dir.path() / "aug.csv");
    EXPECT_EQ(aug.size(), 310u);
    EXPECT_TRUE(aug.samples.back().synthetic);
    const std::string log = read_all(dir.path() / "m" / "train_log.csv");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 6);
}

TEST(Cli, EvalWritesTextAndCsv) {
    testsupport::TempDir dir("cli");
    const std::string train = (dir.path() / "tr.csv").string();
    const std::string test = (dir.path() / "te.csv").string();
    ASSERT_EQ(run_cli({"oracle", "--count", "500", "--test-subjects", "s8,s9", "--train-out", train, "--test-out", test}).code, 0);
    const std::string prefix = (dir.path() / "rep").string();
    const auto r = run_cli({"eval", "--train", train, "--test", test, "--out", prefix, "--regressor", "osvr"});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = read_all(prefix + ".csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "set,au,mae,mse,count");
    EXPECT_NE(read_all(prefix + ".txt").find("MAE"), std::string::npos);
}
