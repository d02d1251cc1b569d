#include <gtest/gtest.h>

#include <fstream>

#include "ausynth/dataio.hpp"
#include "support.hpp"

using namespace ausynth;

namespace {

LabeledDataset small_dataset() {
    LabeledDataset ds;
    ds.label_dim = 2;
    ds.param_dim = 3;
    for (int i = 0; i < 6; ++i) {
        Sample s;
        s.subject = "p" + std::to_string(i % 3);
        s.labels = {i % 6, (i * 2) % 6};
        s.params = Vector(3);
        s.params << 0.1 * i, -0.25 * i + 0.3, 1.0 / (i + 1.0);
        ds.samples.push_back(s);
    }
    return ds;
}

void write_text(const std::filesystem::path& p, const std::string& body) {
    std::ofstream out(p);
    out << body;
}

}  // namespace

TEST(DatasetText, RoundTrip) {
    testsupport::TempDir dir("dataio");
    LabeledDataset ds = small_dataset();
    ds.samples[4].synthetic = true;
    save_dataset(ds, dir.path() / "d.csv");
    const LabeledDataset back = load_dataset(dir.path() / "d.csv");
    EXPECT_EQ(back.label_dim, 2u);
    EXPECT_EQ(back.param_dim, 3u);
    ASSERT_EQ(back.size(), ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(back.samples[i], ds.samples[i]) << i;
}

TEST(DatasetText, IntensitySevenReportsLine) {
    testsupport::TempDir dir("dataio");
    write_text(dir.path() / "bad.csv", "subject,AU1,x0\na,1,0.5\nb,7,0.25\n");
    try {
        load_dataset(dir.path() / "bad.csv");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find(":3:"), std::string::npos) << msg;
        EXPECT_NE(msg.find("7"), std::string::npos) << msg;
    }
}

TEST(DatasetText, ColumnCountMismatch) {
    testsupport::TempDir dir("dataio");
    write_text(dir.path() / "bad.csv", "subject,AU1,x0,x1\na,1,0.5\n");
    EXPECT_THROW(load_dataset(dir.path() / "bad.csv"), ParseError);
    write_text(dir.path() / "nan.csv", "subject,AU1,x0\na,1,nan\n");
    EXPECT_THROW(load_dataset(dir.path() / "nan.csv"), ParseError);
    write_text(dir.path() / "hdr.csv", "subject,AU1,y0\n");
    EXPECT_THROW(load_dataset(dir.path() / "hdr.csv"), ParseError);
    EXPECT_THROW(load_dataset(dir.path() / "missing.csv"), IoError);
}

TEST(DatasetBinary, RoundTripAtFloat32) {
    testsupport::TempDir dir("dataio");
    LabeledDataset ds = small_dataset();
    for (Sample& s : ds.samples) s.params = s.params.cast<float>().cast<double>();
    save_dataset_binary(ds, dir.path() / "bin");
    const LabeledDataset back = load_dataset_binary(dir.path() / "bin");
    ASSERT_EQ(back.size(), ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(back.samples[i], ds.samples[i]) << i;
}

TEST(Normalize, ExampleMapsMinMaxToUnitInterval) {
    LabeledDataset ds;
    ds.label_dim = 1;
    ds.param_dim = 1;
    for (double v : {2.0, 4.0, 6.0}) {
        Sample s{"a", {0}, Vector::Constant(1, v)};
        ds.samples.push_back(s);
    }
    const NormalizedDataset n = normalize_params(ds);
    EXPECT_DOUBLE_EQ(n.data.samples[0].params(0), -1.0);
    EXPECT_DOUBLE_EQ(n.data.samples[1].params(0), 0.0);
    EXPECT_DOUBLE_EQ(n.data.samples[2].params(0), 1.0);
    EXPECT_DOUBLE_EQ(n.bounds.lower(0), 2.0);
    EXPECT_DOUBLE_EQ(n.bounds.upper(0), 6.0);
    const LabeledDataset back = denormalize_params(n.data);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(back.samples[i].params(0), ds.samples[i].params(0), 1e-12);
}

TEST(Normalize, PerDimensionAndRoundTrip) {
    const LabeledDataset ds = small_dataset();
    const NormalizedDataset n = normalize_params(ds);
    const DenseMatrix p = n.data.param_matrix();
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
        EXPECT_DOUBLE_EQ(p.col(j).minCoeff(), -1.0);
        EXPECT_DOUBLE_EQ(p.col(j).maxCoeff(), 1.0);
    }
    const LabeledDataset back = denormalize_params(n.data);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_LT((back.samples[i].params - ds.samples[i].params).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Normalize, Errors) {
    LabeledDataset ds;
    ds.label_dim = 1;
    ds.param_dim = 1;
    EXPECT_THROW(normalize_params(ds), ConfigError);
    ds.samples.push_back({"a", {0}, Vector::Constant(1, 1.0)});
    ds.samples.push_back({"b", {0}, Vector::Constant(1, 1.0)});
    EXPECT_THROW(normalize_params(ds), ContractError);
    const NormalizedDataset n = normalize_params(small_dataset());
    EXPECT_THROW(normalize_params(n.data), ContractError);
}

TEST(Normalize, HeldOutDataIsClipped) {
    const NormalizedDataset n = normalize_params(small_dataset());
    LabeledDataset held = small_dataset().empty_like();
    Sample s{"z", {0, 0}, Vector::Constant(3, 100.0)};
    held.samples.push_back(s);
    const AppliedNormalization a = apply_normalization(held, n.bounds);
    EXPECT_EQ(a.clipped, 3u);
    EXPECT_TRUE(a.data.samples[0].params.isApprox(Vector::Ones(3)));
}

TEST(Split, PartitionsBySubject) {
    const LabeledDataset ds = small_dataset();
    const DatasetSplit sp = split_by_subject(ds, {"p1"});
    EXPECT_EQ(sp.train.size() + sp.test.size(), ds.size());
    for (const Sample& s : sp.test.samples) EXPECT_EQ(s.subject, "p1");
    for (const Sample& s : sp.train.samples) EXPECT_NE(s.subject, "p1");
    EXPECT_EQ(sp.test.size(), 2u);
    EXPECT_THROW(split_by_subject(ds, {"nobody"}), ConfigError);
}

TEST(Oracle, CountsFollowWeights) {
    const auto counts = allocate_counts({0.70, 0.28, 0.02}, 10000);
    EXPECT_EQ(counts, (std::vector<std::size_t>{7000, 2800, 200}));
    const auto odd = allocate_counts({1.0, 1.0, 1.0}, 10);
    EXPECT_EQ(odd[0] + odd[1] + odd[2], 10u);
}

TEST(Oracle, EmpiricalMomentsMatchAnalytic) {
    const OracleDataset o = synth_oracle_dataset(toy_oracle_config(5, 30000));
    ASSERT_EQ(o.data.size(), 30000u);
    for (std::size_t c = 0; c < o.components.size(); ++c) {
        Vector mean = Vector::Zero(2);
        std::size_t n = 0;
        for (std::size_t i = 0; i < o.data.size(); ++i) {
            if (o.component_of[i] != c) continue;
            EXPECT_EQ(o.data.samples[i].labels, o.components[c].label);
            mean += o.data.samples[i].params;
            ++n;
        }
        mean /= static_cast<double>(n);
        DenseMatrix cov = DenseMatrix::Zero(2, 2);
        for (std::size_t i = 0; i < o.data.size(); ++i) {
            if (o.component_of[i] != c) continue;
            const Vector d = o.data.samples[i].params - mean;
            cov += d * d.transpose();
        }
        cov /= static_cast<double>(n - 1);
        // std error of the mean is 0.1/sqrt(10^4) = 1e-3
        EXPECT_LT((mean - o.components[c].mean).cwiseAbs().maxCoeff(), 5e-3);
        EXPECT_LT((cov - o.components[c].covariance).cwiseAbs().maxCoeff(), 1e-3);
    }
}

TEST(Oracle, DeterministicPerSeed) {
    const OracleDataset a = synth_oracle_dataset(imbalanced_oracle_config(3, 500));
    const OracleDataset b = synth_oracle_dataset(imbalanced_oracle_config(3, 500));
    EXPECT_EQ(a.data.samples, b.data.samples);
    const OracleDataset c = synth_oracle_dataset(imbalanced_oracle_config(4, 500));
    EXPECT_NE(a.data.samples, c.data.samples);
}

TEST(Oracle, FullShape) {
    const SynthOracleConfig cfg = full_oracle_config(1, 500);
    const OracleDataset o = synth_oracle_dataset(cfg);
    EXPECT_EQ(o.data.label_dim, 12u);
    EXPECT_EQ(o.data.param_dim, 79u);
    EXPECT_EQ(o.components.size(), 25u);
}

TEST(Oracle, InvalidConfigIsConfigError) {
    SynthOracleConfig cfg = toy_oracle_config();
    cfg.components[0].covariance(0, 1) = 1.0;
    EXPECT_THROW(synth_oracle_dataset(cfg), ConfigError);
    cfg = toy_oracle_config();
    cfg.components[1].label = {6};
    EXPECT_THROW(synth_oracle_dataset(cfg), ConfigError);
}
