#pragma once

// On-disk formats.
//
// SRRM matrix file (little-endian):
//   "SRRM" | version 0x01 | dtype 0x01 (float64) | u64 rows | u64 cols | rows*cols f64, row-major
//
// SRRC calibration file:
//   "SRRC" | version 0x01 | u64 sample_count | embedded SRRM second-moment matrix

#include <srr/harness.hpp>
#include <srr/scaling.hpp>

#include <json.hpp>
#include <filesystem>
#include <string>
#include <string_view>

namespace srr::io {

using Matrix = MatrixX<double>;

inline constexpr unsigned char kFormatVersion = 0x01;
inline constexpr unsigned char kDtypeFloat64 = 0x01;

std::string encode_matrix(const Matrix& m);
Matrix decode_matrix(std::string_view bytes);

std::string encode_calibration(const CalibrationStats<double>& stats);
CalibrationStats<double> decode_calibration(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

Matrix read_matrix(const std::filesystem::path& path);
void write_matrix(const std::filesystem::path& path, const Matrix& m);

CalibrationStats<double> read_calibration(const std::filesystem::path& path);
void write_calibration(const std::filesystem::path& path, const CalibrationStats<double>& stats);

/// Shortest round-trip decimal form, locale independent.
std::string format_double(double v);

/// Header: instance,ensemble,method,k,scaled_error,surrogate,k_star,seed[,runtime_ms]
std::string report_csv(const harness::ExperimentReport& report, bool include_timing = false);
nlohmann::ordered_json report_json(const harness::ExperimentReport& report,
                                   bool include_timing = false);

}  // namespace srr::io
