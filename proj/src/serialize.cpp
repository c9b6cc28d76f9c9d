#include "epmvg/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "epmvg/errors.hpp"

namespace epmvg::numcore {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw FormatError("truncated checkpoint file " + path);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string render_meta(
    const std::vector<std::pair<std::string, std::string>>& meta) {
  std::string text;
  for (const auto& [k, v] : meta) {
    if (k.empty() || k.find('=') != std::string::npos ||
        k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos)
      throw FormatError("checkpoint meta key/value may not contain '=' in "
                        "the key or newlines: '" + k + "'");
    text += k;
    text += '=';
    text += v;
    text += '\n';
  }
  return text;
}

std::vector<std::pair<std::string, std::string>> parse_meta(
    const std::string& text, const std::string& path) {
  std::vector<std::pair<std::string, std::string>> meta;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos)
      throw FormatError("unterminated meta line in " + path);
    const std::string line = text.substr(start, end - start);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw FormatError("malformed meta line '" + line + "' in " + path);
    meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    start = end + 1;
  }
  return meta;
}

}  // namespace

const std::string& CheckpointData::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  throw FormatError("checkpoint is missing meta key '" + key + "'");
}

bool CheckpointData::has_meta(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return true;
  return false;
}

void write_checkpoint(const std::string& path, const CheckpointData& data) {
  std::string out;
  out += data.magic;
  put_u32(out, data.version);
  const std::string meta = render_meta(data.meta);
  put_u32(out, std::uint32_t(meta.size()));
  out += meta;
  put_u32(out, std::uint32_t(data.params.size()));
  for (const auto& [name, t] : data.params) {
    if (!t.defined())
      throw FormatError("undefined tensor '" + name + "' in checkpoint");
    put_u32(out, std::uint32_t(name.size()));
    out += name;
    put_u32(out, std::uint32_t(t.ndim()));
    for (std::size_t d = 0; d < t.ndim(); ++d) put_u64(out, t.dim(d));
    for (double v : t.data()) put_f64(out, v);
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + tmp + "' for writing");
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw DataError("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot move '" + tmp + "' into place at '" + path + "'");
}

CheckpointData read_checkpoint(const std::string& path,
                               const std::string& expected_magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());

  Reader r{buf, 0, path};
  const std::string magic = r.bytes(expected_magic.size());
  if (magic != expected_magic)
    throw FormatError("'" + path + "' is not a " + expected_magic +
                      " checkpoint (magic reads '" + magic + "')");
  // The student magic is a prefix of the teacher magic; look ahead so the
  // mix-up produces a clear message instead of a parse failure downstream.
  if (expected_magic == kStudentMagic && r.pos + 2 <= buf.size() &&
      buf.compare(r.pos, 2, "-T") == 0) {
    throw FormatError("'" + path +
                      "' is a teacher checkpoint (EPMVG-T); a student "
                      "checkpoint was expected");
  }

  CheckpointData data;
  data.magic = magic;
  data.version = r.u32();
  if (data.version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(data.version) + " in '" + path +
                      "' (this build reads version " +
                      std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t meta_len = r.u32();
  data.meta = parse_meta(r.bytes(meta_len), path);

  const std::uint32_t n_params = r.u32();
  data.params.reserve(n_params);
  for (std::uint32_t p = 0; p < n_params; ++p) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 8)
      throw FormatError("implausible tensor rank " + std::to_string(rank) +
                        " for '" + name + "' in " + path);
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = r.u64();
      if (dim == 0 || dim > (1u << 30))
        throw FormatError("implausible dimension for '" + name + "' in " +
                          path);
      shape[d] = std::size_t(dim);
      numel *= shape[d];
    }
    std::vector<double> values(numel);
    for (std::size_t i = 0; i < numel; ++i) values[i] = r.f64();
    data.params.emplace_back(name,
                             Tensor::from_data(std::move(shape), std::move(values)));
  }
  if (r.pos != buf.size())
    throw FormatError("trailing bytes after parameters in '" + path + "'");
  return data;
}

CheckpointData snapshot_params(
    const ParamStore& store, std::string magic,
    std::vector<std::pair<std::string, std::string>> meta) {
  CheckpointData data;
  data.magic = std::move(magic);
  data.meta = std::move(meta);
  data.params.reserve(store.count());
  for (const std::string& name : store.names())
    data.params.emplace_back(name, store.get(name).clone());
  return data;
}

void assign_params(const CheckpointData& data, ParamStore& store) {
  std::unordered_map<std::string, const Tensor*> by_name;
  by_name.reserve(data.params.size());
  for (const auto& [name, t] : data.params) by_name.emplace(name, &t);

  for (const std::string& name : store.names()) {
    const auto it = by_name.find(name);
    if (it == by_name.end())
      throw FormatError("checkpoint has no parameter '" + name + "'");
    Tensor dst = store.get(name);
    const Tensor& src = *it->second;
    if (src.shape() != dst.shape())
      throw FormatError("checkpoint parameter '" + name + "' has shape " +
                        shape_str(src.shape()) + " but the model expects " +
                        shape_str(dst.shape()));
    std::ranges::copy(src.data(), dst.mut_data().begin());
  }
}

std::string DriftReport::summary() const {
  if (identical)
    return "all " + std::to_string(max_abs_drift.size()) +
           " parameter tensors bit-identical";
  auto sorted = max_abs_drift;
  std::ranges::stable_sort(
      sorted, [](const auto& a, const auto& b) { return a.second > b.second; });
  std::size_t changed = 0;
  for (const auto& [name, drift] : sorted)
    if (drift > 0.0) ++changed;
  std::ostringstream out;
  out << changed << "/" << sorted.size() << " parameter tensors drifted;";
  const std::size_t show = std::min<std::size_t>(changed, 3);
  for (std::size_t i = 0; i < show; ++i)
    out << (i == 0 ? " worst: " : ", ") << sorted[i].first << " (max |d|="
        << sorted[i].second << ")";
  return out.str();
}

DriftReport compare_params(const CheckpointData& snapshot,
                           const ParamStore& store) {
  if (snapshot.params.size() != store.count())
    throw ContractError("drift comparison over mismatched stores: snapshot "
                        "has " + std::to_string(snapshot.params.size()) +
                        " tensors, store has " + std::to_string(store.count()));
  DriftReport report;
  report.max_abs_drift.reserve(snapshot.params.size());
  for (const auto& [name, before] : snapshot.params) {
    if (!store.has(name))
      throw ContractError("drift comparison: store has no parameter '" +
                          name + "'");
    const Tensor now = store.get(name);
    if (before.shape() != now.shape())
      throw ContractError("drift comparison: '" + name + "' changed shape");
    double drift = 0.0;
    const auto a = before.data();
    const auto b = now.data();
    for (std::size_t i = 0; i < a.size(); ++i)
      drift = std::max(drift, std::fabs(a[i] - b[i]));
    if (!same_bits(before, now)) report.identical = false;
    report.max_abs_drift.emplace_back(name, drift);
  }
  return report;
}

std::uint64_t meta_u64(const CheckpointData& data, const std::string& key) {
  try {
    return std::stoull(data.meta_value(key));
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception&) {
    throw FormatError("meta key '" + key + "' is not an integer");
  }
}

double meta_f64(const CheckpointData& data, const std::string& key) {
  try {
    return std::stod(data.meta_value(key));
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception&) {
    throw FormatError("meta key '" + key + "' is not a number");
  }
}

std::string format_f64(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace epmvg::numcore
