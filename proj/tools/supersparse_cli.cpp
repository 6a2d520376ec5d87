#include <supersparse/supersparse.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
namespace ss = supersparse;
using json = nlohmann::ordered_json;

namespace {

/// Bad flag values or combinations; exit code 2 like parse errors.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::string> split(const std::string& text, char separator) {
    std::vector<std::string> parts;
    std::stringstream stream(text);
    std::string part;
    while (std::getline(stream, part, separator)) parts.push_back(std::string(ss::io::trim(part)));
    return parts;
}

double parse_number(const std::string& text, const std::string& flag) {
    const auto value = ss::io::parse_double(text);
    if (!value) throw UsageError(flag + ": '" + text + "' is not a number");
    return *value;
}

fs::path sidecar(const fs::path& output, const std::string& suffix) {
    return output.parent_path() / (output.stem().string() + suffix);
}

// ---------------------------------------------------------------------------
// Shared option groups

struct DataOptions {
    std::string data;
    std::string target = "y";
    std::string group_column;
    std::string synthetic;
    ss::Index n = 0;
    bool balanced = false;

    void add(CLI::App& app) {
        app.add_option("--data", data, "Training CSV (header row required)");
        app.add_option("--target", target, "Target column name")->capture_default_str();
        app.add_option("--group-column", group_column, "Integer group id column (subject-disjoint folds)");
        app.add_option("--synthetic", synthetic, "Generate data instead: two_gaussians|three_clusters|ring|sine_regression");
        app.add_option("--n", n, "Sample count for --synthetic (0 = generator default)")->check(CLI::NonNegativeNumber);
        app.add_flag("--balanced", balanced, "Class-balanced weights for +/-1 labels");
    }

    ss::Dataset load(std::uint64_t seed) const {
        ss::Dataset data_set = [&] {
            if (!synthetic.empty()) {
                if (!data.empty()) throw UsageError("--data and --synthetic are mutually exclusive");
                ss::io::SyntheticKind kind;
                try {
                    kind = ss::io::synthetic_kind_from_string(synthetic);
                } catch (const ss::InvalidArgument& e) {
                    throw UsageError(e.what());
                }
                return ss::io::gen_synthetic(kind, n > 0 ? n : ss::io::default_synthetic_size(kind), seed);
            }
            if (data.empty()) throw UsageError("one of --data or --synthetic is required");
            return ss::io::load_csv(data, target,
                                    group_column.empty() ? std::nullopt : std::optional<std::string>(group_column));
        }();
        if (!balanced) return data_set;
        const ss::Dataset weighted = ss::Dataset::class_balanced(data_set.features(), data_set.targets());
        return ss::Dataset(data_set.features(), data_set.targets(), weighted.weights(), data_set.groups());
    }

    json describe() const {
        json doc;
        if (!synthetic.empty()) {
            doc["synthetic"] = synthetic;
            doc["n"] = n;
        } else {
            doc["data"] = data;
            doc["target"] = target;
            if (!group_column.empty()) doc["group_column"] = group_column;
        }
        doc["balanced"] = balanced;
        return doc;
    }
};

struct SimilarityOptions {
    std::string kernel = "rbf";
    double gamma = 0.0;
    std::string scorer;

    void add(CLI::App& app) {
        app.add_option("--kernel", kernel, "Similarity: rbf|linear")
            ->check(CLI::IsMember({"rbf", "linear"}))
            ->capture_default_str();
        app.add_option("--gamma", gamma, "RBF width (0 = 1/d)")->check(CLI::NonNegativeNumber);
        app.add_option("--scorer", scorer, "Black-box scorer command speaking the line protocol");
    }

    double resolved_gamma(ss::Index dimension) const { return gamma > 0.0 ? gamma : ss::default_gamma(dimension); }

    ss::Similarity make(ss::Index dimension) const {
        if (!scorer.empty()) return ss::io::blackbox_bridge(scorer);
        if (kernel == "linear") return ss::Similarity::linear();
        return ss::Similarity::rbf(resolved_gamma(dimension));
    }

    /// Rebinds black-box models loaded from disk to the scorer.
    ss::io::SimilarityResolver resolver() const {
        if (scorer.empty()) return {};
        return [command = scorer](const ss::SimilaritySpec&) { return ss::io::blackbox_bridge(command); };
    }

    json describe(ss::Index dimension) const {
        if (!scorer.empty()) return {{"kind", "blackbox"}, {"scorer", scorer}};
        if (kernel == "linear") return {{"kind", "linear"}};
        return {{"kind", "rbf"}, {"gamma", resolved_gamma(dimension)}};
    }
};

struct TrainOptions {
    double lambda = ss::TrainConfig{}.lambda;
    double eta = ss::TrainConfig{}.eta;
    double epsilon = ss::TrainConfig{}.epsilon;
    int max_sweeps = ss::TrainConfig{}.max_sweeps;
    bool penalty = true;
    double decay_power = ss::TrainConfig{}.penalty_decay_power;
    std::string grad_mode = "analytic";
    std::string box;
    bool raw_step = false;
    CLI::Option* grad_mode_option = nullptr;

    void add(CLI::App& app, int default_sweeps) {
        max_sweeps = default_sweeps;
        app.add_option("--lambda", lambda, "Ridge penalty on beta")->capture_default_str();
        app.add_option("--eta", eta, "Prototype step size")->capture_default_str();
        app.add_option("--epsilon", epsilon, "Convergence tolerance on the objective")->capture_default_str();
        app.add_option("--max-sweeps", max_sweeps, "Cap on full passes over the prototypes")->capture_default_str();
        app.add_flag("--penalty,!--no-penalty", penalty, "Prototype separation penalty (default on)");
        app.add_option("--decay-power", decay_power, "Penalty decay exponent p in t^-p")->capture_default_str();
        grad_mode_option = app.add_option("--grad-mode", grad_mode,
                                          "analytic|approximate|numeric (default approximate with --scorer)")
                               ->check(CLI::IsMember({"analytic", "approximate", "numeric"}));
        app.add_option("--box", box, "Prototype bounds: 'hull', 'LO:HI', or per-dimension 'l1,l2:h1,h2'");
        app.add_flag("--raw-step", raw_step, "Do not divide eta by the total sample weight");
    }

    ss::TrainConfig config(std::uint64_t seed, ss::Index dimension, bool blackbox) const {
        ss::TrainConfig c;
        c.lambda = lambda;
        c.eta = eta;
        c.epsilon = epsilon;
        c.max_sweeps = max_sweeps;
        c.penalty_enabled = penalty;
        c.penalty_decay_power = decay_power;
        c.seed = seed;
        c.normalize_step = !raw_step;
        c.grad_mode = ss::grad_mode_from_string(
            blackbox && grad_mode_option && grad_mode_option->count() == 0 ? "approximate" : grad_mode);
        if (box == "hull") {
            c.project_to_data_hull = true;
        } else if (!box.empty()) {
            const auto sides = split(box, ':');
            if (sides.size() != 2) throw UsageError("--box: expected LO:HI, got '" + box + "'");
            auto side = [&](const std::string& text) {
                const auto cells = split(text, ',');
                if (cells.size() != 1 && static_cast<ss::Index>(cells.size()) != dimension) {
                    throw UsageError("--box: expected 1 or " + std::to_string(dimension) + " values per side");
                }
                ss::Vector v(dimension);
                for (ss::Index k = 0; k < dimension; ++k) {
                    v[k] = parse_number(cells[cells.size() == 1 ? 0 : static_cast<std::size_t>(k)], "--box");
                }
                return v;
            };
            c.box = ss::Box{side(sides[0]), side(sides[1])};
        }
        try {
            c.validate();
        } catch (const ss::InvalidArgument& e) {
            throw UsageError(e.what());
        }
        return c;
    }
};

json config_to_json(const ss::TrainConfig& c) {
    json doc{{"lambda", c.lambda},
             {"eta", c.eta},
             {"epsilon", c.epsilon},
             {"max_sweeps", c.max_sweeps},
             {"penalty_enabled", c.penalty_enabled},
             {"penalty_decay_power", c.penalty_decay_power},
             {"grad_mode", std::string(ss::to_string(c.grad_mode))},
             {"normalize_step", c.normalize_step},
             {"project_to_data_hull", c.project_to_data_hull},
             {"seed", c.seed}};
    if (c.box) {
        doc["box"] = {{"lo", std::vector<double>(c.box->lo.begin(), c.box->lo.end())},
                      {"hi", std::vector<double>(c.box->hi.begin(), c.box->hi.end())}};
    } else {
        doc["box"] = nullptr;
    }
    return doc;
}

struct Manifest {
    Manifest(std::string name, std::uint64_t run_seed = 0) : subcommand(std::move(name)), seed(run_seed) {}

    std::string subcommand;
    std::uint64_t seed = 0;
    json config = json::object();
    json inputs = json::object();
    std::vector<std::string> outputs;
    json results = json::object();
    Clock::time_point start = Clock::now();
    std::uint64_t evaluations = 0;

    void write(const fs::path& primary) const {
        json doc;
        doc["format"] = "supersparse-manifest";
        doc["format_version"] = 1;
        doc["subcommand"] = subcommand;
        doc["seed"] = seed;
        doc["config"] = config;
        doc["inputs"] = inputs;
        doc["outputs"] = outputs;
        doc["results"] = results;
        doc["similarity_evaluations"] = evaluations;
        doc["wall_clock_seconds"] = seconds_since(start);
        std::ofstream out(sidecar(primary, ".manifest.json"), std::ios::binary);
        if (!out) throw ss::Error("cannot write manifest next to '" + primary.string() + "'");
        out << doc.dump(2) << '\n';
    }
};

double evaluate(const ss::SparseModel& model, const ss::Dataset& data, ss::LossKind loss) {
    return ss::evaluate_loss(model, data, loss);
}

// ---------------------------------------------------------------------------
// Baseline methods

const std::vector<std::string> kBaselineMethods{"ps-r", "ps-b", "ps-s", "ps-km", "ridge", "lasso"};

struct MethodRun {
    ss::SparseModel model;
    double seconds = 0.0;
    json details = json::object();
};

MethodRun run_baseline(const std::string& method, const ss::Dataset& train, ss::Index m, double lambda,
                       std::optional<double> lambda1, std::uint64_t seed, const ss::Similarity& similarity) {
    const auto start = Clock::now();
    auto selection = [&](ss::SelectionKind kind) {
        return ss::baseline_pipeline(train, ss::SelectionMethod{kind, m, seed}, lambda, similarity);
    };
    if (method == "ps-r") return {selection(ss::SelectionKind::random), seconds_since(start)};
    if (method == "ps-b") return {selection(ss::SelectionKind::border), seconds_since(start)};
    if (method == "ps-s") return {selection(ss::SelectionKind::spanning), seconds_since(start)};
    if (method == "ps-km") return {selection(ss::SelectionKind::kmedians), seconds_since(start)};
    if (method == "ridge") return {ss::kernel_ridge_full(train, lambda, similarity), seconds_since(start)};
    if (method == "lasso") {
        ss::LassoResult result = lambda1 ? ss::lasso_similarity(train, *lambda1, similarity)
                                         : ss::lasso_with_budget(train, m, similarity);
        json details{{"lambda1", result.model.info().lambda}, {"support", result.support.size()},
                     {"sweeps", result.sweeps}, {"kkt_residual", result.kkt_residual}};
        return {std::move(result.model), seconds_since(start), std::move(details)};
    }
    throw UsageError("unknown method '" + method + "'");
}

void check_m(ss::Index m, const ss::Dataset& data) {
    if (m < 1 || m > data.size()) {
        throw UsageError("--m must be in [1, " + std::to_string(data.size()) + "], got " + std::to_string(m));
    }
}

// ---------------------------------------------------------------------------
// Subcommands

struct TrainCommand {
    DataOptions data;
    SimilarityOptions similarity;
    TrainOptions train;
    ss::Index m = 2;
    std::uint64_t seed = 0;
    std::string out = "model.json";

    void add(CLI::App& app) {
        data.add(app);
        similarity.add(app);
        train.add(app, ss::TrainConfig{}.max_sweeps);
        app.add_option("--m", m, "Number of virtual prototypes")->check(CLI::PositiveNumber)->capture_default_str();
        app.add_option("--seed", seed, "Random seed")->capture_default_str();
        app.add_option("--out", out, "Model file; the trace and manifest are written next to it")->capture_default_str();
    }

    int run() const {
        Manifest manifest("train", seed);
        const ss::Dataset d = data.load(seed);
        check_m(m, d);
        const ss::Similarity sim = similarity.make(d.dimension());
        const ss::TrainConfig config = train.config(seed, d.dimension(), !similarity.scorer.empty());
        const ss::FitResult result = ss::fit(d, m, config, sim);

        const fs::path model_path(out);
        const fs::path trace_path = sidecar(model_path, ".trace.csv");
        ss::io::save_model(result.model, model_path);
        ss::io::write_train_trace(result.trace, trace_path);

        manifest.config = config_to_json(config);
        manifest.config["m"] = m;
        manifest.config["similarity"] = similarity.describe(d.dimension());
        manifest.inputs = data.describe();
        manifest.outputs = {model_path.string(), trace_path.string()};
        manifest.results = {{"termination", std::string(ss::to_string(result.trace.termination))},
                            {"iterations", result.trace.records.size()},
                            {"initial_objective", result.trace.initial_objective},
                            {"final_objective", result.trace.final_objective()}};
        if (!result.trace.error.empty()) manifest.results["error"] = result.trace.error;
        manifest.evaluations = sim.evaluations();
        manifest.write(model_path);
        if (result.trace.termination == ss::Termination::error) {
            std::cerr << "training stopped early: " << result.trace.error << '\n';
            return 1;
        }
        return 0;
    }
};

struct SelectCommand {
    DataOptions data;
    SimilarityOptions similarity;
    TrainOptions train;
    std::string grid;
    std::optional<double> rho;
    std::string loss = "mse";
    int folds = 5;
    std::uint64_t seed = 0;
    std::string out = "model.json";

    void add(CLI::App& app) {
        data.add(app);
        similarity.add(app);
        train.add(app, ss::TrainConfig{}.max_sweeps);
        app.add_option("--grid", grid, "Descending prototype counts, e.g. 10,5,4,3,2 (default from n)");
        app.add_option("--rho", rho, "Size penalty (default 0.1 for mae, 1e-3 otherwise)")->check(CLI::NonNegativeNumber);
        app.add_option("--loss", loss, "Validation loss: mse|mae|error-rate")
            ->check(CLI::IsMember({"mse", "mae", "error-rate"}))
            ->capture_default_str();
        app.add_option("--folds", folds, "Cross-validation folds")->check(CLI::Range(2, 1000))->capture_default_str();
        app.add_option("--seed", seed, "Random seed")->capture_default_str();
        app.add_option("--out", out, "Model file; the selection trace and manifest go next to it")
            ->capture_default_str();
    }

    int run() const {
        Manifest manifest("select-m", seed);
        const ss::Dataset d = data.load(seed);
        const ss::Similarity sim = similarity.make(d.dimension());
        const ss::TrainConfig config = train.config(seed, d.dimension(), !similarity.scorer.empty());

        ss::GridConfig grid_config;
        grid_config.loss = ss::loss_kind_from_string(loss == "error-rate" ? "error_rate" : loss);
        grid_config.rho = rho ? *rho : ss::default_rho(grid_config.loss);
        grid_config.folds = folds;
        grid_config.group_folds = !data.group_column.empty();
        if (grid.empty()) {
            grid_config.grid = ss::default_grid(d.size());
        } else {
            for (const auto& cell : split(grid, ',')) {
                grid_config.grid.push_back(static_cast<ss::Index>(parse_number(cell, "--grid")));
            }
        }
        try {
            grid_config.validate();
        } catch (const ss::InvalidArgument& e) {
            throw UsageError(e.what());
        }

        const ss::SelectionResult result = ss::select_m(d, grid_config, config, sim);
        const fs::path model_path(out);
        const fs::path trace_path = sidecar(model_path, ".selection.csv");
        ss::io::save_model(result.model, model_path);
        ss::io::write_selection_trace(result.trace, trace_path);

        manifest.config = config_to_json(config);
        manifest.config["similarity"] = similarity.describe(d.dimension());
        manifest.config["grid"] = grid_config.grid;
        manifest.config["rho"] = grid_config.rho;
        manifest.config["loss"] = std::string(ss::to_string(grid_config.loss));
        manifest.config["folds"] = folds;
        manifest.config["group_folds"] = grid_config.group_folds;
        manifest.inputs = data.describe();
        manifest.outputs = {model_path.string(), trace_path.string()};
        manifest.results = {{"chosen_m", result.trace.chosen_m}, {"refit_on_all_data", result.trace.refit_on_all_data}};
        manifest.evaluations = sim.evaluations();
        manifest.write(model_path);
        return 0;
    }
};

struct BaselineCommand {
    DataOptions data;
    SimilarityOptions similarity;
    std::string method;
    ss::Index m = 5;
    double lambda = ss::TrainConfig{}.lambda;
    std::optional<double> lambda1;
    std::string test;
    std::uint64_t seed = 0;
    std::string out = "baseline.json";

    void add(CLI::App& app) {
        data.add(app);
        similarity.add(app);
        app.add_option("--method", method, "ps-r|ps-b|ps-s|ps-km|ridge|lasso")
            ->required()
            ->check(CLI::IsMember(kBaselineMethods));
        app.add_option("--m", m, "Prototype budget (ignored by ridge)")->check(CLI::PositiveNumber)->capture_default_str();
        app.add_option("--lambda", lambda, "Ridge penalty for the coefficient solve")->capture_default_str();
        app.add_option("--lambda1", lambda1, "LASSO penalty (default: smallest penalty meeting --m)")
            ->check(CLI::NonNegativeNumber);
        app.add_option("--test", test, "Held-out CSV with the same columns");
        app.add_option("--seed", seed, "Random seed")->capture_default_str();
        app.add_option("--out", out, "Model file; metrics and manifest go next to it")->capture_default_str();
    }

    int run() const {
        Manifest manifest("baseline", seed);
        const ss::Dataset train = data.load(seed);
        if (method != "ridge") check_m(m, train);
        if (lambda < 0.0) throw UsageError("--lambda must be >= 0");
        std::optional<ss::Dataset> held_out;
        if (!test.empty()) {
            if (!fs::exists(test)) throw ss::ParseError("test file '" + test + "' does not exist");
            held_out = ss::io::load_csv(test, data.target);
        }
        const ss::Similarity sim = similarity.make(train.dimension());
        const MethodRun run = run_baseline(method, train, m, lambda, lambda1, seed, sim);

        std::vector<std::string> header{"train_mae", "train_mse", "m", "evals_per_prediction", "train_seconds"};
        std::vector<double> row{evaluate(run.model, train, ss::LossKind::mae), evaluate(run.model, train, ss::LossKind::mse),
                                static_cast<double>(run.model.size()), 0.0, run.seconds};
        if (held_out) {
            header.insert(header.begin() + 2, {"test_mae", "test_mse"});
            row.insert(row.begin() + 2, {evaluate(run.model, *held_out, ss::LossKind::mae),
                                         evaluate(run.model, *held_out, ss::LossKind::mse)});
        }
        const std::uint64_t evaluations_before = sim.evaluations();
        row[row.size() - 2] = static_cast<double>(ss::eval_cost(run.model));
        const std::uint64_t probe = sim.evaluations() - evaluations_before;

        const fs::path model_path(out);
        const fs::path metrics_path = sidecar(model_path, ".metrics.csv");
        ss::io::save_model(run.model, model_path);
        ss::Matrix values(1, static_cast<ss::Index>(row.size()));
        for (std::size_t k = 0; k < row.size(); ++k) values(0, static_cast<ss::Index>(k)) = row[k];
        ss::io::write_csv(metrics_path, header, values);

        manifest.config = {{"method", method}, {"m", m}, {"lambda", lambda}, {"seed", seed},
                           {"similarity", similarity.describe(train.dimension())}};
        if (lambda1) manifest.config["lambda1"] = *lambda1;
        manifest.inputs = data.describe();
        if (held_out) manifest.inputs["test"] = test;
        manifest.outputs = {model_path.string(), metrics_path.string()};
        manifest.results = run.details;
        manifest.results["prototypes"] = run.model.size();
        manifest.evaluations = sim.evaluations() - probe;
        manifest.write(model_path);
        return 0;
    }
};

struct BenchCommand {
    DataOptions data;
    SimilarityOptions similarity;
    TrainOptions train;
    std::string test;
    std::vector<std::string> methods{"sparse", "ps-r", "ps-b", "ps-s", "ps-km", "ridge", "lasso"};
    ss::Index m = 5;
    std::string loss = "mae";
    std::uint64_t seed = 0;
    std::string out = "bench.csv";

    void add(CLI::App& app) {
        data.add(app);
        similarity.add(app);
        train.add(app, ss::experiments::kSweeps);
        app.add_option("--test", test, "Test CSV (required with --data)");
        app.add_option("--methods", methods, "Subset of: sparse ps-r ps-b ps-s ps-km ridge lasso")
            ->delimiter(',')
            ->check(CLI::IsMember({"sparse", "ps-r", "ps-b", "ps-s", "ps-km", "ridge", "lasso"}));
        app.add_option("--m", m, "Prototype budget")->check(CLI::PositiveNumber)->capture_default_str();
        app.add_option("--loss", loss, "Table metric: mae|error-rate")
            ->check(CLI::IsMember({"mae", "error-rate"}))
            ->capture_default_str();
        app.add_option("--seed", seed, "Random seed")->capture_default_str();
        app.add_option("--out", out, "Comparison table CSV")->capture_default_str();
    }

    int run() const {
        Manifest manifest("bench", seed);
        std::optional<ss::Dataset> train_set, test_set;
        json inputs;
        if (data.data.empty() && data.synthetic.empty()) {
            train_set = ss::io::gen_synthetic(ss::io::SyntheticKind::sine_regression, 200, seed);
            test_set = ss::io::gen_synthetic(ss::io::SyntheticKind::sine_regression, 200,
                                             seed + ss::experiments::kTestSeedOffset);
            inputs = {{"synthetic", "sine_regression"}, {"n", 200}, {"test_seed", seed + ss::experiments::kTestSeedOffset}};
        } else {
            train_set = data.load(seed);
            inputs = data.describe();
            if (!test.empty()) {
                if (!fs::exists(test)) throw ss::ParseError("test file '" + test + "' does not exist");
                test_set = ss::io::load_csv(test, data.target);
                inputs["test"] = test;
            } else if (!data.synthetic.empty()) {
                test_set = data.load(seed + ss::experiments::kTestSeedOffset);
                inputs["test_seed"] = seed + ss::experiments::kTestSeedOffset;
            } else {
                throw UsageError("--test is required with --data");
            }
        }
        check_m(m, *train_set);
        if (test_set->dimension() != train_set->dimension()) {
            throw ss::InvalidArgument("test data has " + std::to_string(test_set->dimension()) +
                                      " features, training data has " + std::to_string(train_set->dimension()));
        }
        const ss::LossKind metric = loss == "mae" ? ss::LossKind::mae : ss::LossKind::error_rate;
        const ss::TrainConfig config = train.config(seed, train_set->dimension(), !similarity.scorer.empty());
        const ss::Similarity sim = similarity.make(train_set->dimension());

        ss::Matrix table(static_cast<ss::Index>(methods.size()), 4);
        json details;
        for (std::size_t k = 0; k < methods.size(); ++k) {
            const std::string& method = methods[k];
            std::optional<MethodRun> run;
            if (method == "sparse") {
                const auto start = Clock::now();
                ss::FitResult fitted = ss::fit(*train_set, m, config, sim);
                run = MethodRun{std::move(fitted.model), seconds_since(start),
                                {{"termination", std::string(ss::to_string(fitted.trace.termination))}}};
            } else {
                run = run_baseline(method, *train_set, m, config.lambda, std::nullopt, seed, sim);
            }
            const auto r = static_cast<ss::Index>(k);
            table(r, 0) = evaluate(run->model, *test_set, metric);
            table(r, 1) = static_cast<double>(run->model.size());
            table(r, 2) = static_cast<double>(ss::eval_cost(run->model));
            table(r, 3) = run->seconds;
            details[method] = run->details;
        }

        const fs::path table_path(out);
        std::ofstream file(table_path, std::ios::binary);
        if (!file) throw ss::Error("cannot write '" + out + "'");
        file << "method," << (metric == ss::LossKind::mae ? "mae" : "error") << ",m,evals_per_prediction,train_seconds\n";
        for (std::size_t k = 0; k < methods.size(); ++k) {
            const auto r = static_cast<ss::Index>(k);
            file << methods[k] << ',' << ss::io::format_double(table(r, 0)) << ',' << table(r, 1) << ',' << table(r, 2)
                 << ',' << ss::io::format_double(table(r, 3)) << '\n';
        }
        file.close();

        manifest.config = config_to_json(config);
        manifest.config["m"] = m;
        manifest.config["methods"] = methods;
        manifest.config["loss"] = loss;
        manifest.config["similarity"] = similarity.describe(train_set->dimension());
        manifest.inputs = inputs;
        manifest.outputs = {table_path.string()};
        manifest.results = details;
        manifest.evaluations = sim.evaluations();
        manifest.write(table_path);
        return 0;
    }
};

struct PredictCommand {
    std::string model;
    std::string data;
    std::string target;
    SimilarityOptions similarity;
    std::string out = "predictions.csv";

    void add(CLI::App& app) {
        app.add_option("--model", model, "Model file")->required();
        app.add_option("--data", data, "Input CSV; every column except --target is a feature")->required();
        app.add_option("--target", target, "Optional target column, copied to the output with the residual");
        app.add_option("--scorer", similarity.scorer, "Scorer command for black-box models");
        app.add_option("--out", out, "Predictions CSV")->capture_default_str();
    }

    int run() const {
        Manifest manifest("predict");
        const ss::SparseModel loaded = ss::io::load_model(model, similarity.resolver());
        const ss::io::CsvTable table = ss::io::read_csv(data);
        ss::Index target_column = -1;
        if (!target.empty()) {
            target_column = table.column(target);
            if (target_column < 0) throw ss::ParseError(data + ": no target column named '" + target + "'");
        }
        std::vector<ss::Index> feature_columns;
        for (ss::Index c = 0; c < static_cast<ss::Index>(table.header.size()); ++c) {
            if (c != target_column) feature_columns.push_back(c);
        }
        if (static_cast<ss::Index>(feature_columns.size()) != loaded.dimension()) {
            throw ss::InvalidArgument("model expects " + std::to_string(loaded.dimension()) + " features but '" + data +
                                      "' has " + std::to_string(feature_columns.size()));
        }
        const ss::Index rows = table.values.rows();
        ss::Matrix features(rows, loaded.dimension());
        for (std::size_t k = 0; k < feature_columns.size(); ++k) {
            features.col(static_cast<ss::Index>(k)) = table.values.col(feature_columns[k]);
        }
        const ss::Vector predictions = rows > 0 ? ss::predict_batch(loaded, features) : ss::Vector(0);

        std::vector<std::string> header{"prediction"};
        ss::Matrix values(rows, target_column >= 0 ? 3 : 1);
        if (rows > 0) values.col(0) = predictions;
        if (target_column >= 0) {
            header.insert(header.end(), {"target", "residual"});
            if (rows > 0) {
                values.col(1) = table.values.col(target_column);
                values.col(2) = predictions - values.col(1);
            }
        }
        const fs::path output(out);
        ss::io::write_csv(output, header, values);

        manifest.config = {{"model", model}, {"target", target}};
        manifest.inputs = {{"model", model}, {"data", data}};
        manifest.outputs = {output.string()};
        manifest.results = {{"rows", rows}};
        manifest.evaluations = loaded.similarity().evaluations();
        manifest.write(output);
        return 0;
    }
};

struct GenerateCommand {
    std::string kind;
    ss::Index n = 0;
    std::uint64_t seed = 0;
    std::string out = "data.csv";

    void add(CLI::App& app) {
        app.add_option("--kind", kind, "two_gaussians|three_clusters|ring|sine_regression")
            ->required()
            ->check(CLI::IsMember({"two_gaussians", "three_clusters", "ring", "sine_regression"}));
        app.add_option("--n", n, "Sample count (0 = generator default)")->check(CLI::NonNegativeNumber);
        app.add_option("--seed", seed, "Random seed")->capture_default_str();
        app.add_option("--out", out, "CSV path (columns x0.., y, and group when present)")->capture_default_str();
    }

    int run() const {
        Manifest manifest("generate", seed);
        const auto k = ss::io::synthetic_kind_from_string(kind);
        const ss::Index size = n > 0 ? n : ss::io::default_synthetic_size(k);
        const ss::Dataset d = ss::io::gen_synthetic(k, size, seed);
        const fs::path output(out);
        ss::io::save_csv(d, output);
        manifest.config = {{"kind", kind}, {"n", size}, {"seed", seed}};
        manifest.outputs = {output.string()};
        manifest.write(output);
        return 0;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Super-sparse similarity-space models: training, model-size selection, baselines and benchmarks"};
    app.require_subcommand(1);

    TrainCommand train;
    SelectCommand select;
    BaselineCommand baseline;
    BenchCommand bench;
    PredictCommand predict;
    GenerateCommand generate;

    std::map<CLI::App*, std::function<int()>> handlers;
    auto add = [&](const char* name, const char* help, auto& command) {
        CLI::App* sub = app.add_subcommand(name, help);
        command.add(*sub);
        handlers[sub] = [&command] { return command.run(); };
    };
    add("train", "Fit virtual prototypes and coefficients", train);
    add("select-m", "Choose the prototype count by incremental cross-validation", select);
    add("baseline", "Fit a prototype-selection, ridge or LASSO baseline", baseline);
    add("bench", "Compare methods on a train/test pair (sine regression by default)", bench);
    add("predict", "Score a CSV with a saved model", predict);
    add("generate", "Write a synthetic dataset", generate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        for (auto& [sub, handler] : handlers) {
            if (sub->parsed()) return handler();
        }
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
