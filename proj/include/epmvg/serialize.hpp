#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "epmvg/params.hpp"
#include "epmvg/tensor.hpp"

namespace epmvg::numcore {

inline constexpr char kStudentMagic[] = "EPMVG";
inline constexpr char kTeacherMagic[] = "EPMVG-T";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// In-memory image of a checkpoint file. Layout on disk, all integers
// little-endian:
//   magic bytes (no terminator)
//   u32 format version
//   u32 text length, then that many bytes of UTF-8 "key=value\n" lines
//   u32 parameter count
//   per parameter: u32 name length, name bytes, u32 rank, rank x u64 dims,
//                  row-major f64 payload
// Round trips are bit-exact; readers reject truncated or trailing bytes.
struct CheckpointData {
  std::string magic = kStudentMagic;
  std::uint32_t version = kCheckpointVersion;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> params;

  // FormatError when absent.
  const std::string& meta_value(const std::string& key) const;
  bool has_meta(const std::string& key) const;
};

void write_checkpoint(const std::string& path, const CheckpointData& data);

// Verifies magic and version. A student reader handed a teacher file (or
// vice versa) gets a FormatError saying which kind the file actually is.
CheckpointData read_checkpoint(const std::string& path,
                               const std::string& expected_magic);

// Deep-copies every parameter (registration order) into checkpoint form.
CheckpointData snapshot_params(
    const ParamStore& store, std::string magic,
    std::vector<std::pair<std::string, std::string>> meta = {});

// Copies matching payloads into the store's existing tensors, in place, so
// live views of the storage observe the loaded values. Every parameter of
// the store must appear in `data` with an identical shape (FormatError
// otherwise); extra checkpoint entries are ignored so one file can feed
// several stores (e.g. model parameters plus optimizer moments).
void assign_params(const CheckpointData& data, ParamStore& store);

// Per-tensor drift of a store relative to a snapshot taken from it earlier.
// A missing name or shape mismatch makes the comparison itself ill-posed
// and throws ContractError.
struct DriftReport {
  bool identical = true;                                      // bitwise
  std::vector<std::pair<std::string, double>> max_abs_drift;  // per tensor

  std::string summary() const;  // one line, worst offenders first
};

DriftReport compare_params(const CheckpointData& snapshot,
                           const ParamStore& store);

// Numeric meta accessors; FormatError when the key is absent or malformed.
std::uint64_t meta_u64(const CheckpointData& data, const std::string& key);
double meta_f64(const CheckpointData& data, const std::string& key);

// Shortest text that round-trips a double exactly.
std::string format_f64(double v);

}  // namespace epmvg::numcore
