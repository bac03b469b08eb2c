#pragma once

#include <string>

#include "qdarbor/archive.hpp"
#include "qdarbor/vppo.hpp"
#include "qdarbor/xnes.hpp"

namespace qdarbor::io {

// temp-then-rename so interrupted runs never leave truncated files
void atomic_write_text(const std::string& path, const std::string& contents);
void atomic_write_binary(const std::string& path, const std::string& contents);

// Manifest CSV (cell_index_*, threshold, objective, measure_*, param_offset,
// param_len) plus a sidecar blob of little-endian float32 parameter vectors.
void save_archive(const std::string& csv_path, const std::string& params_path,
                  const GridArchive& archive);
GridArchive load_archive(const std::string& csv_path, const std::string& params_path,
                         const ArchiveSpec& spec);

void save_nes(const std::string& path, const NesState& state);
NesState load_nes(const std::string& path);

void save_params(const std::string& path, const Eigen::VectorXf& params);
Eigen::VectorXf load_params(const std::string& path);

void save_vppo_state(const std::string& path, const VppoEstimator& estimator);
void load_vppo_state(const std::string& path, VppoEstimator& estimator);

std::string format_double(double v);  // round-trip-exact decimal text

}  // namespace qdarbor::io
