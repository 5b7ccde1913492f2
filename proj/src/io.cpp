#include <srr/io.hpp>

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <system_error>
#include <unistd.h>

namespace srr::io {

namespace {

constexpr std::string_view kMatrixMagic = "SRRM";
constexpr std::string_view kCalibrationMagic = "SRRC";
constexpr std::size_t kMatrixHeader = 4 + 1 + 1 + 8 + 8;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_matrix(const Matrix& m) {
  std::string out;
  out.reserve(kMatrixHeader + 8 * static_cast<std::size_t>(m.size()));
  out += kMatrixMagic;
  out.push_back(static_cast<char>(kFormatVersion));
  out.push_back(static_cast<char>(kDtypeFloat64));
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_u64(out, std::bit_cast<std::uint64_t>(m(i, j)));
  return out;
}

Matrix decode_matrix(std::string_view bytes) {
  if (bytes.size() < kMatrixHeader || bytes.substr(0, 4) != kMatrixMagic)
    throw InputError("not an SRRM matrix (bad magic or truncated header)");
  if (static_cast<unsigned char>(bytes[4]) != kFormatVersion)
    throw InputError("unsupported SRRM version " + std::to_string(static_cast<unsigned char>(bytes[4])));
  if (static_cast<unsigned char>(bytes[5]) != kDtypeFloat64)
    throw InputError("unsupported SRRM dtype " + std::to_string(static_cast<unsigned char>(bytes[5])));
  const std::uint64_t rows = get_u64(bytes, 6);
  const std::uint64_t cols = get_u64(bytes, 14);
  if (rows == 0 || cols == 0) throw InputError("SRRM matrix has a zero dimension");
  if (rows > static_cast<std::uint64_t>(kMaxDim) || cols > static_cast<std::uint64_t>(kMaxDim))
    throw InputError("SRRM matrix exceeds the size cap");
  if (bytes.size() != kMatrixHeader + 8 * rows * cols)
    throw InputError("SRRM payload size does not match " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::size_t at = kMatrixHeader;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j, at += 8)
      m(i, j) = std::bit_cast<double>(get_u64(bytes, at));
  require_finite(m, "SRRM matrix");
  return m;
}

std::string encode_calibration(const CalibrationStats<double>& stats) {
  std::string out;
  out += kCalibrationMagic;
  out.push_back(static_cast<char>(kFormatVersion));
  put_u64(out, stats.sample_count);
  out += encode_matrix(stats.second_moment);
  return out;
}

CalibrationStats<double> decode_calibration(std::string_view bytes) {
  if (bytes.size() < 13 || bytes.substr(0, 4) != kCalibrationMagic)
    throw InputError("not an SRRC calibration file");
  if (static_cast<unsigned char>(bytes[4]) != kFormatVersion)
    throw InputError("unsupported SRRC version");
  const std::uint64_t count = get_u64(bytes, 5);
  const Matrix moment = decode_matrix(bytes.substr(13));
  if (count == 0) throw InputError("calibration file has zero samples");
  return CalibrationAccumulator<double>::make_stats(moment, count);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return std::move(ss).str();
}

void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

Matrix read_matrix(const std::filesystem::path& path) { return decode_matrix(read_file(path)); }

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  atomic_write(path, encode_matrix(m));
}

CalibrationStats<double> read_calibration(const std::filesystem::path& path) {
  return decode_calibration(read_file(path));
}

void write_calibration(const std::filesystem::path& path, const CalibrationStats<double>& stats) {
  atomic_write(path, encode_calibration(stats));
}

}  // namespace srr::io
