#include "qdarbor/io.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace qdarbor::io {

namespace fs = std::filesystem;

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

void atomic_write(const std::string& path, const std::string& contents, bool binary) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
        if (!out) throw std::runtime_error("io: cannot open " + tmp + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw std::runtime_error("io: write failed for " + tmp);
    }
    fs::rename(tmp, path);
}

template <typename T>
void put(std::string& out, const T& v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("io: truncated binary file");
    return v;
}

void put_vecf(std::string& out, const Eigen::VectorXf& v) {
    put<std::int64_t>(out, v.size());
    out.append(reinterpret_cast<const char*>(v.data()), sizeof(float) * v.size());
}

Eigen::VectorXf get_vecf(std::istream& in) {
    const auto n = get<std::int64_t>(in);
    Eigen::VectorXf v(n);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(sizeof(float) * n));
    if (!in) throw std::runtime_error("io: truncated float vector");
    return v;
}

void put_vecd(std::string& out, const Eigen::VectorXd& v) {
    put<std::int64_t>(out, v.size());
    out.append(reinterpret_cast<const char*>(v.data()), sizeof(double) * v.size());
}

Eigen::VectorXd get_vecd(std::istream& in) {
    const auto n = get<std::int64_t>(in);
    Eigen::VectorXd v(n);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(sizeof(double) * n));
    if (!in) throw std::runtime_error("io: truncated double vector");
    return v;
}

void put_adam(std::string& out, const Adam& adam) {
    put_vecf(out, adam.m);
    put_vecf(out, adam.v);
    put<std::int64_t>(out, adam.t);
}

void get_adam(std::istream& in, Adam& adam) {
    adam.m = get_vecf(in);
    adam.v = get_vecf(in);
    adam.t = get<std::int64_t>(in);
}

}  // namespace

void atomic_write_text(const std::string& path, const std::string& contents) {
    atomic_write(path, contents, false);
}

void atomic_write_binary(const std::string& path, const std::string& contents) {
    atomic_write(path, contents, true);
}

void save_archive(const std::string& csv_path, const std::string& params_path,
                  const GridArchive& archive) {
    const int k = archive.spec().dims();
    std::ostringstream csv;
    for (int i = 0; i < k; ++i) csv << "cell_index_" << i << ",";
    csv << "threshold,objective,";
    for (int i = 0; i < k; ++i) csv << "measure_" << i << ",";
    csv << "param_offset,param_len\n";

    std::string blob;
    long offset = 0;
    for (long linear : archive.filled_cells()) {
        const CellState& cell = archive.cell_state(linear);
        const Elite& elite = *cell.elite;
        for (int i = 0; i < k; ++i) csv << elite.cell[i] << ",";
        csv << format_double(cell.threshold) << "," << format_double(elite.objective)
            << ",";
        for (int i = 0; i < k; ++i) csv << format_double(elite.measures[i]) << ",";
        csv << offset << "," << elite.params.size() << "\n";
        blob.append(reinterpret_cast<const char*>(elite.params.data()),
                    sizeof(float) * elite.params.size());
        offset += elite.params.size();
    }
    atomic_write_text(csv_path, csv.str());
    atomic_write_binary(params_path, blob);
}

GridArchive load_archive(const std::string& csv_path, const std::string& params_path,
                         const ArchiveSpec& spec) {
    std::ifstream csv(csv_path);
    if (!csv) throw std::runtime_error("io: cannot open archive manifest " + csv_path);
    std::ifstream blob(params_path, std::ios::binary);
    if (!blob) throw std::runtime_error("io: cannot open parameter blob " + params_path);

    GridArchive archive(spec);
    const int k = spec.dims();
    std::string line;
    std::getline(csv, line);  // header
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        auto next = [&]() -> std::string {
            if (!std::getline(ss, field, ','))
                throw std::runtime_error("io: malformed archive row: " + line);
            return field;
        };
        Elite elite;
        elite.cell.resize(k);
        for (int i = 0; i < k; ++i) elite.cell[i] = std::stoi(next());
        const double threshold = std::stod(next());
        elite.objective = std::stod(next());
        elite.measures.resize(k);
        for (int i = 0; i < k; ++i) elite.measures[i] = std::stod(next());
        const long offset = std::stol(next());
        const long len = std::stol(next());

        elite.params.resize(len);
        blob.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
        blob.read(reinterpret_cast<char*>(elite.params.data()),
                  static_cast<std::streamsize>(len * sizeof(float)));
        if (!blob) throw std::runtime_error("io: truncated parameter blob");

        const long linear = archive.linear_index(elite.cell);
        archive.restore_cell(linear, threshold, std::move(elite));
    }
    return archive;
}

void save_nes(const std::string& path, const NesState& state) {
    std::string out;
    put<std::int64_t>(out, state.dims());
    put_vecd(out, state.mu);
    put<double>(out, state.sigma);
    Eigen::VectorXd b_flat(state.dims() * state.dims());
    for (int r = 0; r < state.dims(); ++r)  // row-major
        for (int c = 0; c < state.dims(); ++c) b_flat[r * state.dims() + c] = state.b_factor(r, c);
    put_vecd(out, b_flat);
    put<double>(out, state.eta_mu);
    put<double>(out, state.eta_sigma);
    put<double>(out, state.eta_b);
    put<std::int64_t>(out, state.lambda);
    put<double>(out, state.sigma_init);
    atomic_write_binary(path, out);
}

NesState load_nes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("io: cannot open nes state " + path);
    NesState s;
    const auto d = get<std::int64_t>(in);
    s.mu = get_vecd(in);
    s.sigma = get<double>(in);
    const Eigen::VectorXd b_flat = get_vecd(in);
    s.b_factor.resize(d, d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) s.b_factor(r, c) = b_flat[r * d + c];
    s.eta_mu = get<double>(in);
    s.eta_sigma = get<double>(in);
    s.eta_b = get<double>(in);
    s.lambda = static_cast<int>(get<std::int64_t>(in));
    s.sigma_init = get<double>(in);
    return s;
}

void save_params(const std::string& path, const Eigen::VectorXf& params) {
    std::string out;
    put_vecf(out, params);
    atomic_write_binary(path, out);
}

Eigen::VectorXf load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("io: cannot open params " + path);
    return get_vecf(in);
}

namespace {

void put_channel(std::string& out, const ChannelContext& ctx) {
    put_vecf(out, ctx.critic.net.get_flat());
    put_adam(out, ctx.critic_adam);
    put<double>(out, ctx.reward_norm.raw_mean());
    put<double>(out, ctx.reward_norm.raw_m2());
    put<double>(out, ctx.reward_norm.count());
}

void get_channel(std::istream& in, ChannelContext& ctx) {
    ctx.critic.net.set_flat(get_vecf(in));
    get_adam(in, ctx.critic_adam);
    const double mean = get<double>(in);
    const double m2 = get<double>(in);
    const double count = get<double>(in);
    ctx.reward_norm.restore(mean, m2, count);
}

}  // namespace

void save_vppo_state(const std::string& path, const VppoEstimator& estimator) {
    std::string out;
    const RunningNormalizer& norm = estimator.obs_normalizer();
    put<std::int64_t>(out, norm.dim());
    if (norm.dim() > 0) {
        put_vecd(out, norm.mean());
        put_vecd(out, norm.raw_m2());
        put<double>(out, norm.count());
    }
    put<std::int64_t>(out, static_cast<std::int64_t>(estimator.channels().size()));
    for (const ChannelContext& ctx : estimator.channels()) put_channel(out, ctx);
    put_channel(out, estimator.walk_channel());
    atomic_write_binary(path, out);
}

void load_vppo_state(const std::string& path, VppoEstimator& estimator) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("io: cannot open vppo state " + path);
    const auto dim = get<std::int64_t>(in);
    if (dim > 0) {
        const Eigen::VectorXd mean = get_vecd(in);
        const Eigen::VectorXd m2 = get_vecd(in);
        const double count = get<double>(in);
        estimator.obs_normalizer().restore(mean, m2, count);
    }
    const auto n = get<std::int64_t>(in);
    if (n != static_cast<std::int64_t>(estimator.channels().size()))
        throw std::runtime_error("io: vppo state channel count mismatch");
    for (ChannelContext& ctx : estimator.channels()) get_channel(in, ctx);
    get_channel(in, estimator.walk_channel());
}

}  // namespace qdarbor::io
