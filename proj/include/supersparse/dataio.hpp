#pragma once

#include "common.hpp"
#include "core_types.hpp"
#include "metrics.hpp"
#include "model_selection.hpp"
#include "similarity.hpp"
#include "trainer.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace supersparse::io {

// ---------------------------------------------------------------------------
// Text helpers

/// 17 significant digits, enough to round-trip any double.
inline std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buffer[32];
    const int written = std::snprintf(buffer, sizeof buffer, "%.17g", value);
    return std::string(buffer, static_cast<std::size_t>(written));
}

inline std::string_view trim(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

inline std::optional<double> parse_double(std::string_view text) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    if (text.empty()) return std::nullopt;
    double value = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size()) return std::nullopt;
    return value;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

// ---------------------------------------------------------------------------
// CSV

/// A numeric CSV file: header names and a (possibly empty) row-major body.
struct CsvTable {
    std::vector<std::string> header;
    Matrix values;

    Index column(std::string_view name) const {
        for (std::size_t k = 0; k < header.size(); ++k) {
            if (header[k] == name) return static_cast<Index>(k);
        }
        return -1;
    }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    CsvTable table;
    table.header = split_csv_line(line);
    const std::size_t width = table.header.size();

    std::vector<double> cells;
    Index rows = 0;
    std::size_t line_number = 1;
    while (std::getline(in, line)) {
        ++line_number;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != width) {
            throw ParseError(path.string() + ":" + std::to_string(line_number) + ": expected " + std::to_string(width) +
                             " columns, found " + std::to_string(fields.size()));
        }
        for (std::size_t c = 0; c < width; ++c) {
            const auto value = parse_double(fields[c]);
            if (!value || !std::isfinite(*value)) {
                throw ParseError(path.string() + ":" + std::to_string(line_number) + ": column '" + table.header[c] +
                                 "' is not a finite number: '" + fields[c] + "'");
            }
            cells.push_back(*value);
        }
        ++rows;
    }
    table.values = Matrix(rows, static_cast<Index>(width));
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < static_cast<Index>(width); ++c) {
            table.values(r, c) = cells[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)];
        }
    }
    return table;
}

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Matrix& values) {
    require(values.cols() == static_cast<Index>(header.size()) || values.rows() == 0,
            "write_csv: header width does not match the data");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
    for (Index r = 0; r < values.rows(); ++r) {
        for (Index c = 0; c < values.cols(); ++c) out << (c ? "," : "") << format_double(values(r, c));
        out << '\n';
    }
}

/// Features are every column except the target and the optional group column, in header order.
inline Dataset load_csv(const std::filesystem::path& path, std::string_view target_column,
                        std::optional<std::string> group_column = std::nullopt) {
    const CsvTable table = read_csv(path);
    const Index target = table.column(target_column);
    if (target < 0) throw ParseError(path.string() + ": no target column named '" + std::string(target_column) + "'");
    Index group = -1;
    if (group_column) {
        group = table.column(*group_column);
        if (group < 0) throw ParseError(path.string() + ": no group column named '" + *group_column + "'");
    }
    if (table.values.rows() == 0) throw ParseError(path.string() + ": no data rows");

    std::vector<Index> feature_columns;
    for (Index c = 0; c < static_cast<Index>(table.header.size()); ++c) {
        if (c != target && c != group) feature_columns.push_back(c);
    }
    if (feature_columns.empty()) throw ParseError(path.string() + ": no feature columns");

    Matrix features(table.values.rows(), static_cast<Index>(feature_columns.size()));
    for (std::size_t k = 0; k < feature_columns.size(); ++k) {
        features.col(static_cast<Index>(k)) = table.values.col(feature_columns[k]);
    }
    std::vector<std::int64_t> groups;
    if (group >= 0) {
        for (Index r = 0; r < table.values.rows(); ++r) {
            const double id = table.values(r, group);
            if (id != std::floor(id)) {
                throw ParseError(path.string() + ":" + std::to_string(r + 2) + ": group id must be an integer");
            }
            groups.push_back(static_cast<std::int64_t>(id));
        }
    }
    return Dataset(std::move(features), table.values.col(target), Vector{}, std::move(groups));
}

/// Writes features as x0..x{d-1}, then the target column (and `group` if present).
inline void save_csv(const Dataset& data, const std::filesystem::path& path, std::string_view target_column = "y") {
    std::vector<std::string> header;
    for (Index c = 0; c < data.dimension(); ++c) header.push_back("x" + std::to_string(c));
    header.emplace_back(target_column);
    Matrix values(data.size(), data.dimension() + 1 + (data.has_groups() ? 1 : 0));
    values.leftCols(data.dimension()) = data.features();
    values.col(data.dimension()) = data.targets();
    if (data.has_groups()) {
        header.emplace_back("group");
        for (Index r = 0; r < data.size(); ++r) {
            values(r, data.dimension() + 1) = static_cast<double>(data.groups()[static_cast<std::size_t>(r)]);
        }
    }
    write_csv(path, header, values);
}

// ---------------------------------------------------------------------------
// Model files

inline constexpr int kModelFormatVersion = 1;

using SimilarityResolver = std::function<Similarity(const SimilaritySpec&)>;

inline nlohmann::ordered_json similarity_to_json(const SimilaritySpec& spec) {
    return {{"kind", std::string(to_string(spec.kind))}, {"gamma", spec.gamma}, {"blackbox_id", spec.blackbox_id}};
}

inline nlohmann::ordered_json model_to_json(const SparseModel& model) {
    nlohmann::ordered_json doc;
    doc["format"] = "supersparse-model";
    doc["format_version"] = kModelFormatVersion;
    doc["similarity"] = similarity_to_json(model.similarity().spec());
    auto prototypes = nlohmann::ordered_json::array();
    for (Index j = 0; j < model.size(); ++j) {
        prototypes.push_back(std::vector<double>(model.prototypes().row(j).begin(), model.prototypes().row(j).end()));
    }
    doc["prototypes"] = std::move(prototypes);
    doc["beta"] = std::vector<double>(model.beta().begin(), model.beta().end());
    doc["bias"] = model.bias();
    const TrainingInfo& info = model.info();
    doc["metadata"] = {{"n_train", info.n_train},
                       {"lambda", info.lambda},
                       {"seed", info.seed},
                       {"iterations", info.iterations},
                       {"objective", info.objective}};
    return doc;
}

/// Doubles are written in shortest round-trip form, so save/load is exact.
inline void save_model(const SparseModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << model_to_json(model).dump(2) << '\n';
}

inline SparseModel model_from_json(const nlohmann::json& doc, const SimilarityResolver& resolver = {}) {
    try {
        if (doc.at("format").get<std::string>() != "supersparse-model") throw ParseError("not a supersparse model");
        const int version = doc.at("format_version").get<int>();
        if (version != kModelFormatVersion) {
            throw ParseError("unsupported model format_version " + std::to_string(version) + " (expected " +
                             std::to_string(kModelFormatVersion) + ")");
        }
        const auto& sim = doc.at("similarity");
        SimilaritySpec spec;
        spec.kind = similarity_kind_from_string(sim.at("kind").get<std::string>());
        spec.gamma = sim.at("gamma").get<double>();
        spec.blackbox_id = sim.value("blackbox_id", std::string{});

        const auto rows = doc.at("prototypes").get<std::vector<std::vector<double>>>();
        if (rows.empty()) throw ParseError("model has no prototypes");
        Matrix prototypes(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != rows.front().size()) throw ParseError("ragged prototype rows");
            for (std::size_t c = 0; c < rows[r].size(); ++c) {
                prototypes(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
            }
        }
        const auto beta_values = doc.at("beta").get<std::vector<double>>();
        const Vector beta = Eigen::Map<const Vector>(beta_values.data(), static_cast<Index>(beta_values.size()));
        TrainingInfo info;
        if (doc.contains("metadata")) {
            const auto& meta = doc.at("metadata");
            info.n_train = meta.value("n_train", std::int64_t{0});
            info.lambda = meta.value("lambda", 0.0);
            info.seed = meta.value("seed", std::uint64_t{0});
            info.iterations = meta.value("iterations", std::int64_t{0});
            info.objective = meta.value("objective", 0.0);
        }
        Similarity similarity = resolver ? resolver(spec) : Similarity::from_spec(spec);
        return SparseModel(std::move(prototypes), beta, doc.at("bias").get<double>(), std::move(similarity), info);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed model document: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("invalid model document: ") + e.what());
    }
}

inline SparseModel load_model(const std::filesystem::path& path, const SimilarityResolver& resolver = {}) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    try {
        return model_from_json(doc, resolver);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Trace exports

inline void write_train_trace(const TrainTrace& trace, const std::filesystem::path& path) {
    Matrix values(static_cast<Index>(trace.records.size()), 6);
    for (std::size_t k = 0; k < trace.records.size(); ++k) {
        const auto& r = trace.records[k];
        values.row(static_cast<Index>(k)) << static_cast<double>(r.t), static_cast<double>(r.j), r.omega_previous,
            r.omega_after_z, r.omega, r.step_norm;
    }
    write_csv(path, {"t", "j", "omega_previous", "omega_after_z", "omega", "step_norm"}, values);
}

inline void write_selection_trace(const SelectionTrace& trace, const std::filesystem::path& path) {
    Matrix values(static_cast<Index>(trace.records.size()), 4);
    for (std::size_t k = 0; k < trace.records.size(); ++k) {
        const auto& r = trace.records[k];
        values.row(static_cast<Index>(k)) << static_cast<double>(r.m), r.loss, r.objective, r.chosen ? 1.0 : 0.0;
    }
    write_csv(path, {"m", "loss", "L", "chosen"}, values);
}

inline void write_curve(const std::vector<OperatingPoint>& curve, const std::filesystem::path& path) {
    Matrix values(static_cast<Index>(curve.size()), 3);
    for (std::size_t k = 0; k < curve.size(); ++k) {
        values.row(static_cast<Index>(k)) << curve[k].threshold, curve[k].far, curve[k].frr;
    }
    write_csv(path, {"threshold", "far", "frr"}, values);
}

// ---------------------------------------------------------------------------
// Synthetic data
//
// two_gaussians:   labels alternate +1/-1; class means (+1.5, 0) and (-1.5, 0), isotropic sd 0.75. Default n = 25.
// three_clusters:  85% of samples in three clusters (sd 0.15) centred on a radius-2.5 circle at 90, 210 and 330
//                  degrees, with targets +1, -1, +1; the remaining 15% form a background annulus (radius 6 to 8)
//                  with target 0, which pins the bias near zero. Group id = cluster index, 3 for background.
// ring:            80% on a radius-3 circle (radial sd 0.05, target +1), 20% in a central blob (sd 0.3, target -1).
// sine_regression: x ~ U[0, 2 pi], y = sin(x) + N(0, 0.1^2).

enum class SyntheticKind { two_gaussians, three_clusters, ring, sine_regression };

inline SyntheticKind synthetic_kind_from_string(std::string_view name) {
    if (name == "two_gaussians") return SyntheticKind::two_gaussians;
    if (name == "three_clusters") return SyntheticKind::three_clusters;
    if (name == "ring") return SyntheticKind::ring;
    if (name == "sine_regression") return SyntheticKind::sine_regression;
    throw InvalidArgument("unknown synthetic dataset '" + std::string(name) + "'");
}

inline Index default_synthetic_size(SyntheticKind kind) {
    switch (kind) {
        case SyntheticKind::two_gaussians: return 25;
        case SyntheticKind::three_clusters: return 120;
        case SyntheticKind::ring: return 50;
        case SyntheticKind::sine_regression: return 200;
    }
    return 100;
}

struct ThreeClusterLayout {
    static constexpr double radius = 2.5;
    static constexpr double spread = 0.15;
    static constexpr double background_fraction = 0.15;
    static constexpr double background_inner = 6.0;
    static constexpr double background_outer = 8.0;

    static Eigen::Vector2d center(int k) {
        const double angle = (90.0 + 120.0 * k) * std::numbers::pi / 180.0;
        return {radius * std::cos(angle), radius * std::sin(angle)};
    }
    static double target(int k) { return k == 1 ? -1.0 : 1.0; }
};

inline Dataset gen_synthetic(SyntheticKind kind, Index n, std::uint64_t seed) {
    require(n >= 1, "gen_synthetic: n must be >= 1");
    auto rng = make_rng(seed, 0x5ca1ab1eULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    switch (kind) {
        case SyntheticKind::two_gaussians: {
            Matrix x(n, 2);
            Vector y(n);
            for (Index i = 0; i < n; ++i) {
                const double label = i % 2 == 0 ? 1.0 : -1.0;
                x(i, 0) = 1.5 * label + 0.75 * normal(rng);
                x(i, 1) = 0.75 * normal(rng);
                y[i] = label;
            }
            return Dataset(std::move(x), std::move(y));
        }
        case SyntheticKind::three_clusters: {
            using L = ThreeClusterLayout;
            const Index background = static_cast<Index>(std::round(L::background_fraction * static_cast<double>(n)));
            const Index clustered = n - background;
            Matrix x(n, 2);
            Vector y(n);
            std::vector<std::int64_t> groups(static_cast<std::size_t>(n));
            for (Index i = 0; i < clustered; ++i) {
                const int k = static_cast<int>(i % 3);
                const Eigen::Vector2d c = L::center(k);
                x(i, 0) = c.x() + L::spread * normal(rng);
                x(i, 1) = c.y() + L::spread * normal(rng);
                y[i] = L::target(k);
                groups[static_cast<std::size_t>(i)] = k;
            }
            for (Index i = clustered; i < n; ++i) {
                const double angle = 2.0 * std::numbers::pi * uniform(rng);
                const double r = L::background_inner + (L::background_outer - L::background_inner) * uniform(rng);
                x(i, 0) = r * std::cos(angle);
                x(i, 1) = r * std::sin(angle);
                y[i] = 0.0;
                groups[static_cast<std::size_t>(i)] = 3;
            }
            return Dataset(std::move(x), std::move(y), Vector{}, std::move(groups));
        }
        case SyntheticKind::ring: {
            const Index blob = std::max<Index>(1, n / 5);
            Matrix x(n, 2);
            Vector y(n);
            for (Index i = 0; i < n; ++i) {
                if (i < n - blob) {
                    const double angle = 2.0 * std::numbers::pi * uniform(rng);
                    const double r = 3.0 + 0.05 * normal(rng);
                    x(i, 0) = r * std::cos(angle);
                    x(i, 1) = r * std::sin(angle);
                    y[i] = 1.0;
                } else {
                    x(i, 0) = 0.3 * normal(rng);
                    x(i, 1) = 0.3 * normal(rng);
                    y[i] = -1.0;
                }
            }
            return Dataset(std::move(x), std::move(y));
        }
        case SyntheticKind::sine_regression: {
            Matrix x(n, 1);
            Vector y(n);
            for (Index i = 0; i < n; ++i) {
                x(i, 0) = 2.0 * std::numbers::pi * uniform(rng);
                y[i] = std::sin(x(i, 0)) + 0.1 * normal(rng);
            }
            return Dataset(std::move(x), std::move(y));
        }
    }
    throw InvalidArgument("unknown synthetic dataset kind");
}

inline Dataset gen_synthetic(SyntheticKind kind, std::uint64_t seed) {
    return gen_synthetic(kind, default_synthetic_size(kind), seed);
}

// ---------------------------------------------------------------------------
// Black-box scorer bridge
//
// The scorer is a long-running child process. Each query is one line
//   "d a_1 ... a_d b_1 ... b_d\n"
// (space separated, 17 significant digits) and each reply is one line holding
// a single decimal number.

class SubprocessScorer {
public:
    explicit SubprocessScorer(std::string command) : command_(std::move(command)) {
        int sockets[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM, 0, sockets) != 0) {
            throw EvaluationError("scorer '" + command_ + "': socketpair failed");
        }
        const pid_t pid = ::fork();
        if (pid < 0) {
            ::close(sockets[0]);
            ::close(sockets[1]);
            throw EvaluationError("scorer '" + command_ + "': fork failed");
        }
        if (pid == 0) {
            ::close(sockets[0]);
            ::dup2(sockets[1], STDIN_FILENO);
            ::dup2(sockets[1], STDOUT_FILENO);
            ::close(sockets[1]);
            ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(sockets[1]);
        fd_ = sockets[0];
        pid_ = pid;
    }

    SubprocessScorer(const SubprocessScorer&) = delete;
    SubprocessScorer& operator=(const SubprocessScorer&) = delete;

    ~SubprocessScorer() {
        if (fd_ >= 0) ::close(fd_);
        if (pid_ > 0) {
            int status = 0;
            ::waitpid(pid_, &status, 0);
        }
    }

    const std::string& command() const { return command_; }
    std::uint64_t responses() const { return responses_; }

    double operator()(std::span<const double> a, std::span<const double> b) {
        std::lock_guard<std::mutex> lock(mutex_);
        if (a.size() != b.size()) throw EvaluationError("scorer: argument dimensions differ");
        std::string request = std::to_string(a.size());
        for (double v : a) request += ' ' + format_double(v);
        for (double v : b) request += ' ' + format_double(v);
        request += '\n';
        send_all(request);

        const std::string reply = read_line();
        ++responses_;
        const auto value = parse_double(reply);
        if (!value) {
            throw EvaluationError("scorer '" + command_ + "': malformed response at line " +
                                  std::to_string(responses_) + ": '" + reply + "'");
        }
        return *value;
    }

private:
    void send_all(const std::string& data) {
        std::size_t sent = 0;
        while (sent < data.size()) {
            const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
            if (n <= 0) throw EvaluationError("scorer '" + command_ + "': process is not accepting requests");
            sent += static_cast<std::size_t>(n);
        }
    }

    std::string read_line() {
        while (true) {
            const auto newline = buffer_.find('\n');
            if (newline != std::string::npos) {
                std::string line = buffer_.substr(0, newline);
                buffer_.erase(0, newline + 1);
                return line;
            }
            char chunk[4096];
            const ssize_t n = ::read(fd_, chunk, sizeof chunk);
            if (n <= 0) {
                throw EvaluationError("scorer '" + command_ + "': process closed its output after " +
                                      std::to_string(responses_) + " responses");
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    std::string command_;
    int fd_ = -1;
    pid_t pid_ = -1;
    std::string buffer_;
    std::uint64_t responses_ = 0;
    std::mutex mutex_;
};

/// Black-box similarity backed by a scorer process started once from `command`.
inline Similarity blackbox_bridge(const std::string& command) {
    auto process = std::make_shared<SubprocessScorer>(command);
    return Similarity::blackbox(
        command, [process](std::span<const double> a, std::span<const double> b) { return (*process)(a, b); });
}

}  // namespace supersparse::io
