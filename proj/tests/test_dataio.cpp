#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace supersparse;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() / ("supersparse_" + std::string(info->test_suite_name()) + "_" + info->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

void write_text(const fs::path& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string scorer(const std::string& name, const std::string& args = "") {
    return "python3 " + (fs::path(SUPERSPARSE_TEST_DATA_DIR) / name).string() + (args.empty() ? "" : " " + args);
}

template <typename F>
std::string error_of(F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

SparseModel random_model(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return SparseModel(oracle::random_matrix(4, 3, rng), oracle::random_vector(4, rng, 2.0), 0.1234567890123,
                       Similarity::rbf(0.37), TrainingInfo{1e-6, 7, 42, 0.5, 25});
}

}  // namespace

TEST(Csv, LoadsFeaturesAndTarget) {
    TempDir dir;
    write_text(dir / "a.csv", "f1,label,f2\n1.5,-1,2\n3,1,4.25\n");
    const Dataset data = io::load_csv(dir / "a.csv", "label");
    ASSERT_EQ(data.size(), 2);
    ASSERT_EQ(data.dimension(), 2);
    EXPECT_EQ(data.features()(0, 0), 1.5);
    EXPECT_EQ(data.features()(0, 1), 2.0);
    EXPECT_EQ(data.features()(1, 1), 4.25);
    EXPECT_EQ(data.targets()[0], -1.0);
    EXPECT_EQ(data.targets()[1], 1.0);
}

TEST(Csv, MissingTargetIsNamed) {
    TempDir dir;
    write_text(dir / "a.csv", "f1,f2\n1,2\n");
    EXPECT_NE(error_of([&] { io::load_csv(dir / "a.csv", "label"); }).find("'label'"), std::string::npos);
}

TEST(Csv, ParseErrorsCarryRowAndColumn) {
    TempDir dir;
    write_text(dir / "a.csv", "f1,y\n1,2\n3,oops\n");
    const std::string message = error_of([&] { io::load_csv(dir / "a.csv", "y"); });
    EXPECT_NE(message.find(":3:"), std::string::npos) << message;
    EXPECT_NE(message.find("'y'"), std::string::npos) << message;
    write_text(dir / "b.csv", "f1,y\n1,2,3\n");
    EXPECT_THROW(io::load_csv(dir / "b.csv", "y"), ParseError);
    write_text(dir / "c.csv", "");
    EXPECT_THROW(io::load_csv(dir / "c.csv", "y"), ParseError);
    EXPECT_THROW(io::load_csv(dir / "missing.csv", "y"), ParseError);
}

TEST(Csv, GroupColumnIsNotAFeature) {
    TempDir dir;
    write_text(dir / "a.csv", "g,x,y\n4,0.5,1\n9,0.25,-1\n");
    const Dataset data = io::load_csv(dir / "a.csv", "y", "g");
    EXPECT_EQ(data.dimension(), 1);
    EXPECT_EQ(data.groups(), (std::vector<std::int64_t>{4, 9}));
    write_text(dir / "b.csv", "g,x,y\n4.5,0.5,1\n");
    EXPECT_THROW(io::load_csv(dir / "b.csv", "y", "g"), ParseError);
}

TEST(Csv, RoundTripIsExact) {
    TempDir dir;
    std::mt19937_64 rng(1);
    const Dataset data(oracle::random_matrix(20, 3, rng, 1e3), oracle::random_vector(20, rng, 1e-7));
    io::save_csv(data, dir / "a.csv", "target");
    const Dataset back = io::load_csv(dir / "a.csv", "target");
    EXPECT_TRUE(back.features() == data.features());
    EXPECT_TRUE(back.targets() == data.targets());
}

TEST(Model, RoundTripPredictsIdentically) {
    TempDir dir;
    const SparseModel model = random_model(2);
    io::save_model(model, dir / "m.json");
    const SparseModel back = io::load_model(dir / "m.json");
    EXPECT_TRUE(back.prototypes() == model.prototypes());
    EXPECT_TRUE(back.beta() == model.beta());
    EXPECT_EQ(back.bias(), model.bias());
    EXPECT_EQ(back.similarity().spec().gamma, 0.37);
    EXPECT_EQ(back.info().seed, 42u);
    EXPECT_EQ(back.info().n_train, 25);
    std::mt19937_64 rng(3);
    const Matrix probes = oracle::random_matrix(100, 3, rng, 2.0);
    const Vector a = predict_batch(model, probes);
    const Vector b = predict_batch(back, probes);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Model, TruncatedFileFailsToParse) {
    TempDir dir;
    io::save_model(random_model(4), dir / "m.json");
    const std::string text = read_text(dir / "m.json");
    write_text(dir / "cut.json", text.substr(0, text.size() / 2));
    EXPECT_THROW(io::load_model(dir / "cut.json"), ParseError);
}

TEST(Model, UnknownVersionIsRejected) {
    TempDir dir;
    nlohmann::ordered_json doc = io::model_to_json(random_model(5));
    doc["format_version"] = io::kModelFormatVersion + 1;
    write_text(dir / "m.json", doc.dump());
    EXPECT_NE(error_of([&] { io::load_model(dir / "m.json"); }).find("format_version"), std::string::npos);
}

TEST(Model, BlackboxModelsNeedAResolver) {
    TempDir dir;
    const SparseModel model(Matrix::Zero(1, 2), Vector::Ones(1), 0.0,
                            Similarity::blackbox("matcher", [](auto, auto) { return 1.0; }));
    io::save_model(model, dir / "m.json");
    const SparseModel unbound = io::load_model(dir / "m.json");
    EXPECT_THROW(predict(unbound, Vector::Zero(2)), EvaluationError);
    const SparseModel bound = io::load_model(dir / "m.json", [](const SimilaritySpec& spec) {
        return Similarity::from_spec(spec).bind([](auto, auto) { return 2.0; });
    });
    EXPECT_EQ(predict(bound, Vector::Zero(2)), 2.0);
}

TEST(Files, WritesAreByteDeterministic) {
    TempDir dir;
    const Dataset data = io::gen_synthetic(io::SyntheticKind::two_gaussians, 4);
    TrainConfig config;
    config.max_sweeps = 5;
    for (const char* suffix : {"1", "2"}) {
        const FitResult result = fit(data, 2, config);
        io::save_model(result.model, dir / (std::string("m") + suffix));
        io::write_train_trace(result.trace, dir / (std::string("t") + suffix));
        io::save_csv(data, dir / (std::string("d") + suffix));
    }
    for (const char* stem : {"m", "t", "d"}) {
        EXPECT_EQ(read_text(dir / (std::string(stem) + "1")), read_text(dir / (std::string(stem) + "2"))) << stem;
    }
}

TEST(Traces, SelectionTraceColumns) {
    TempDir dir;
    SelectionTrace trace;
    trace.records.push_back(SelectionRecord{3, 0.25, 0.253, true, {}, {}});
    io::write_selection_trace(trace, dir / "s.csv");
    EXPECT_EQ(read_text(dir / "s.csv"), "m,loss,L,chosen\n3,0.25,0.253,1\n");
}

TEST(Generators, AreSeedDeterministic) {
    for (auto kind : {io::SyntheticKind::two_gaussians, io::SyntheticKind::three_clusters, io::SyntheticKind::ring,
                      io::SyntheticKind::sine_regression}) {
        const Dataset a = io::gen_synthetic(kind, 9);
        const Dataset b = io::gen_synthetic(kind, 9);
        const Dataset c = io::gen_synthetic(kind, 10);
        EXPECT_TRUE(a.features() == b.features());
        EXPECT_TRUE(a.targets() == b.targets());
        EXPECT_FALSE(a.features() == c.features());
    }
    EXPECT_EQ(io::gen_synthetic(io::SyntheticKind::two_gaussians, 0).size(), 25);
    EXPECT_THROW(io::synthetic_kind_from_string("spiral"), InvalidArgument);
}

TEST(Generators, TwoGaussianClassCountsDifferByAtMostOne) {
    for (Index n : {1, 2, 25, 26, 101}) {
        const Dataset data = io::gen_synthetic(io::SyntheticKind::two_gaussians, n, 3);
        const Index positives = (data.targets().array() > 0.0).count();
        EXPECT_LE(std::abs(2 * positives - n), 1);
    }
}

TEST(Generators, StatisticsMatchDocumentedParameters) {
    const int seeds = 50;
    double pos_x = 0.0, neg_x = 0.0, spread_y = 0.0;
    double pos_count = 0.0, neg_count = 0.0;
    double sine_residual = 0.0, sine_x = 0.0, sine_count = 0.0;
    std::vector<Eigen::Vector2d> cluster_sum(3, Eigen::Vector2d::Zero());
    std::vector<double> cluster_count(3, 0.0);
    double background_target = 0.0, background_count = 0.0;
    for (int seed = 0; seed < seeds; ++seed) {
        const Dataset g = io::gen_synthetic(io::SyntheticKind::two_gaussians, 25, seed);
        for (Index i = 0; i < g.size(); ++i) {
            (g.targets()[i] > 0 ? pos_x : neg_x) += g.features()(i, 0);
            (g.targets()[i] > 0 ? pos_count : neg_count) += 1.0;
            spread_y += g.features()(i, 1) * g.features()(i, 1);
        }
        const Dataset s = io::gen_synthetic(io::SyntheticKind::sine_regression, 200, seed);
        for (Index i = 0; i < s.size(); ++i) {
            sine_residual += s.targets()[i] - std::sin(s.features()(i, 0));
            sine_x += s.features()(i, 0);
            sine_count += 1.0;
        }
        const Dataset c = io::gen_synthetic(io::SyntheticKind::three_clusters, 120, seed);
        for (Index i = 0; i < c.size(); ++i) {
            const auto k = c.groups()[static_cast<std::size_t>(i)];
            if (k == 3) {
                background_target += std::abs(c.targets()[i]);
                background_count += 1.0;
                continue;
            }
            cluster_sum[static_cast<std::size_t>(k)] += c.features().row(i).transpose();
            cluster_count[static_cast<std::size_t>(k)] += 1.0;
            EXPECT_EQ(c.targets()[i], io::ThreeClusterLayout::target(static_cast<int>(k)));
        }
    }
    const double total = pos_count + neg_count;
    EXPECT_NEAR(pos_x / pos_count, 1.5, 3.0 * 0.75 / std::sqrt(pos_count));
    EXPECT_NEAR(neg_x / neg_count, -1.5, 3.0 * 0.75 / std::sqrt(neg_count));
    // Sample variance of N(0, 0.75^2) has sd 0.75^2 * sqrt(2 / N).
    EXPECT_NEAR(spread_y / total, 0.5625, 3.0 * 0.5625 * std::sqrt(2.0 / total));
    EXPECT_NEAR(pos_count, neg_count, 1.0 * seeds);
    EXPECT_NEAR(sine_residual / sine_count, 0.0, 3.0 * 0.1 / std::sqrt(sine_count));
    EXPECT_NEAR(sine_x / sine_count, std::numbers::pi, 3.0 * 2.0 * std::numbers::pi / std::sqrt(12.0 * sine_count));
    for (int k = 0; k < 3; ++k) {
        const Eigen::Vector2d mean = cluster_sum[static_cast<std::size_t>(k)] / cluster_count[static_cast<std::size_t>(k)];
        const double tolerance = 3.0 * io::ThreeClusterLayout::spread / std::sqrt(cluster_count[static_cast<std::size_t>(k)]);
        EXPECT_NEAR(mean.x(), io::ThreeClusterLayout::center(k).x(), tolerance);
        EXPECT_NEAR(mean.y(), io::ThreeClusterLayout::center(k).y(), tolerance);
    }
    EXPECT_EQ(background_target, 0.0);
    EXPECT_NEAR(background_count / (120.0 * seeds), io::ThreeClusterLayout::background_fraction, 1e-9);
}

TEST(Generators, ThreeClusterCentersAreRecoverable) {
    // k-means on the clustered rows; the background annulus is not one of the planted centers.
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Dataset data = io::gen_synthetic(io::SyntheticKind::three_clusters, 120, seed);
        std::vector<Index> rows;
        for (Index i = 0; i < data.size(); ++i) {
            if (data.groups()[static_cast<std::size_t>(i)] < 3) rows.push_back(i);
        }
        const KMeansResult clusters = kmeans(data.subset(rows).features(), 3, seed);
        for (int k = 0; k < 3; ++k) {
            double nearest = std::numeric_limits<double>::infinity();
            for (Index c = 0; c < 3; ++c) {
                nearest = std::min(nearest, (clusters.centers.row(c).transpose() - io::ThreeClusterLayout::center(k)).norm());
            }
            EXPECT_LT(nearest, 0.15) << "seed " << seed << " center " << k;
        }
    }
}

TEST(Bridge, MatchesNativeRbf) {
    const Similarity bridged = io::blackbox_bridge(scorer("rbf_scorer.py", "0.5"));
    const Similarity native = Similarity::rbf(0.5);
    std::mt19937_64 rng(6);
    for (int k = 0; k < 100; ++k) {
        const Vector a = oracle::random_vector(3, rng, 1.5);
        const Vector b = oracle::random_vector(3, rng, 1.5);
        EXPECT_NEAR(eval(bridged, a, b), eval(native, a, b), 1e-12);
    }
    EXPECT_EQ(bridged.evaluations(), 100u);
}

TEST(Bridge, SymmetricQueriesAgree) {
    const Similarity bridged = io::blackbox_bridge(scorer("rbf_scorer.py", "1.0"));
    std::mt19937_64 rng(7);
    for (int k = 0; k < 20; ++k) {
        const Vector a = oracle::random_vector(2, rng);
        const Vector b = oracle::random_vector(2, rng);
        EXPECT_EQ(eval(bridged, a, b), eval(bridged, b, a));
    }
}

TEST(Bridge, MalformedResponseNamesTheLine) {
    const Similarity bridged = io::blackbox_bridge(scorer("malformed_scorer.py"));
    const Vector a = Vector::Zero(2);
    EXPECT_EQ(eval(bridged, a, a), 0.5);
    EXPECT_EQ(eval(bridged, a, a), 0.5);
    const std::string message = error_of([&] { eval(bridged, a, a); });
    EXPECT_NE(message.find("line 3"), std::string::npos) << message;
}

TEST(Bridge, DeadProcessIsAnEvaluationError) {
    const Similarity bridged = io::blackbox_bridge("exit 0");
    EXPECT_THROW(eval(bridged, Vector::Zero(1), Vector::Zero(1)), EvaluationError);
}

TEST(Bridge, TrainsWithApproximateGradients) {
    const Dataset data = io::gen_synthetic(io::SyntheticKind::two_gaussians, 12, 1);
    TrainConfig config;
    config.grad_mode = GradMode::approximate;
    config.max_sweeps = 3;
    const FitResult bridged = fit(data, 2, config, io::blackbox_bridge(scorer("rbf_scorer.py", "0.5")));
    const FitResult native = fit(data, 2, config, Similarity::rbf(0.5));
    ASSERT_NE(bridged.trace.termination, Termination::error) << bridged.trace.error;
    EXPECT_LT((bridged.model.prototypes() - native.model.prototypes()).cwiseAbs().maxCoeff(), 1e-8);
}
