#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "cardiomap/error.hpp"
#include "cardiomap/grid.hpp"
#include "cardiomap/substrate.hpp"

namespace cardiomap {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "raw array files are little-endian");

// ---------------------------------------------------------------------------
// Raw arrays and sidecars
// ---------------------------------------------------------------------------

template <class T>
void write_raw(const fs::path& path, const T* data, std::size_t count) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  if (!out) throw Error("write failed: " + path.string());
}

template <class T>
std::vector<T> read_raw(const fs::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing data file " + path.string());
  const auto bytes = static_cast<std::size_t>(fs::file_size(path));
  if (bytes != expected_count * sizeof(T))
    throw ShapeError(path.string() + ": expected " + std::to_string(expected_count * sizeof(T)) + " bytes, found " +
                     std::to_string(bytes));
  std::vector<T> out(expected_count);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  return out;
}

inline void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline std::size_t shape_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

inline std::string hex_digest(const unsigned char* md, unsigned len) {
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_Digest(data, size, md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  return hex_digest(md, len);
}

inline std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing file " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  return hex_digest(md, len);
}

/// `<stem>.json` next to `<stem><ext>`.
inline fs::path sidecar_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }
inline fs::path data_path(const fs::path& stem, const char* ext) { return fs::path(stem.string() + ext); }

inline void require_kind(const json& j, const char* kind, const fs::path& where) {
  if (j.value("kind", std::string{}) != kind)
    throw ValidationError(where.string() + ": expected a " + std::string(kind) + " sidecar");
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

inline void append_f32(std::vector<float>& out, const Field& f) {
  for (double v : f) out.push_back(static_cast<float>(v));
}

inline Field field_from_f32(const float* p, std::size_t rows, std::size_t cols) {
  Field f(rows, cols);
  for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] = p[i];
  return f;
}

/// Writes `<stem>.f32` (3 x rows x cols, d_xx then d_yy then d_xy) and
/// `<stem>.json`.
inline void save_tensor_field(const fs::path& stem, const DiffusionTensorField& f, std::uint64_t seed = 0,
                              const json& generator_config = json::object()) {
  f.check_shape();
  std::vector<float> buf;
  buf.reserve(3 * f.d_xx.size());
  append_f32(buf, f.d_xx);
  append_f32(buf, f.d_yy);
  append_f32(buf, f.d_xy);
  const auto data = data_path(stem, ".f32");
  write_raw(data, buf.data(), buf.size());
  write_json(sidecar_path(stem), {{"kind", "tensor_field"},
                                  {"data", data.filename().string()},
                                  {"dtype", "float32"},
                                  {"shape", {3, f.rows(), f.cols()}},
                                  {"dx_cm", f.dx},
                                  {"components", {"d_xx", "d_yy", "d_xy"}},
                                  {"seed", seed},
                                  {"generator_config", generator_config}});
}

inline DiffusionTensorField load_tensor_field(const fs::path& stem) {
  const json j = read_json(sidecar_path(stem));
  require_kind(j, "tensor_field", sidecar_path(stem));
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3 || shape[0] != 3) throw ShapeError(stem.string() + ": tensor shape must be [3, rows, cols]");
  const auto raw = read_raw<float>(data_path(stem, ".f32"), shape_count(shape));
  const std::size_t plane = shape[1] * shape[2];
  DiffusionTensorField f;
  f.dx = j.at("dx_cm").get<double>();
  f.d_xx = field_from_f32(raw.data(), shape[1], shape[2]);
  f.d_yy = field_from_f32(raw.data() + plane, shape[1], shape[2]);
  f.d_xy = field_from_f32(raw.data() + 2 * plane, shape[1], shape[2]);
  return f;
}

inline void save_mask(const fs::path& stem, const Mask& m, double dx_cm) {
  const auto data = data_path(stem, ".u8");
  write_raw(data, m.data(), m.size());
  write_json(sidecar_path(stem), {{"kind", "mask"},
                                  {"data", data.filename().string()},
                                  {"dtype", "uint8"},
                                  {"shape", {m.rows(), m.cols()}},
                                  {"dx_cm", dx_cm}});
}

inline Mask load_mask(const fs::path& stem) {
  const json j = read_json(sidecar_path(stem));
  require_kind(j, "mask", sidecar_path(stem));
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2) throw ShapeError(stem.string() + ": mask shape must be [rows, cols]");
  const auto raw = read_raw<unsigned char>(data_path(stem, ".u8"), shape_count(shape));
  Mask m(shape[0], shape[1]);
  std::copy(raw.begin(), raw.end(), m.begin());
  return m;
}

/// Single scalar field (fibre angles, plotted components).
inline void save_scalar_field(const fs::path& stem, const Field& f, double dx_cm, const std::string& quantity) {
  std::vector<float> buf;
  buf.reserve(f.size());
  append_f32(buf, f);
  const auto data = data_path(stem, ".f32");
  write_raw(data, buf.data(), buf.size());
  write_json(sidecar_path(stem), {{"kind", "scalar_field"},
                                  {"data", data.filename().string()},
                                  {"dtype", "float32"},
                                  {"shape", {f.rows(), f.cols()}},
                                  {"dx_cm", dx_cm},
                                  {"quantity", quantity}});
}

inline Field load_scalar_field(const fs::path& stem) {
  const json j = read_json(sidecar_path(stem));
  require_kind(j, "scalar_field", sidecar_path(stem));
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2) throw ShapeError(stem.string() + ": field shape must be [rows, cols]");
  const auto raw = read_raw<float>(data_path(stem, ".f32"), shape_count(shape));
  return field_from_f32(raw.data(), shape[0], shape[1]);
}

// ---------------------------------------------------------------------------
// V_m stacks
// ---------------------------------------------------------------------------

struct VmStackInfo {
  std::size_t frames = 0, rows = 0, cols = 0;
  double dt_record_ms = 1.0;
  double dx_cm = 0.01;
  double V0_mV = -85.0;
  double Vfi_mV = 15.0;
};

/// Streams float32 V_m frames to `<stem>.f32`; the sidecar is written by
/// finish() once the frame count is known.
class VmStackWriter {
 public:
  VmStackWriter(fs::path stem, VmStackInfo info) : stem_(std::move(stem)), info_(info) {
    if (stem_.has_parent_path()) fs::create_directories(stem_.parent_path());
    out_.open(data_path(stem_, ".f32"), std::ios::binary | std::ios::trunc);
    if (!out_) throw Error("cannot open " + data_path(stem_, ".f32").string() + " for writing");
    info_.frames = 0;
  }

  void append(const Field& vm) {
    if (vm.rows() != info_.rows || vm.cols() != info_.cols) throw ShapeError("vm frame shape mismatch");
    buf_.clear();
    append_f32(buf_, vm);
    out_.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size() * sizeof(float)));
    ++info_.frames;
  }

  void finish() {
    out_.close();
    if (!out_) throw Error("write failed: " + data_path(stem_, ".f32").string());
    write_json(sidecar_path(stem_), {{"kind", "vm_stack"},
                                     {"data", data_path(stem_, ".f32").filename().string()},
                                     {"dtype", "float32"},
                                     {"shape", {info_.frames, info_.rows, info_.cols}},
                                     {"dt_record_ms", info_.dt_record_ms},
                                     {"dx_cm", info_.dx_cm},
                                     {"V0_mV", info_.V0_mV},
                                     {"Vfi_mV", info_.Vfi_mV}});
  }

  const VmStackInfo& info() const noexcept { return info_; }

 private:
  fs::path stem_;
  VmStackInfo info_;
  std::ofstream out_;
  std::vector<float> buf_;
};

inline VmStackInfo read_vm_info(const fs::path& stem) {
  const json j = read_json(sidecar_path(stem));
  require_kind(j, "vm_stack", sidecar_path(stem));
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3) throw ShapeError(stem.string() + ": vm shape must be [frames, rows, cols]");
  return {shape[0], shape[1], shape[2], j.at("dt_record_ms").get<double>(), j.at("dx_cm").get<double>(),
          j.at("V0_mV").get<double>(), j.at("Vfi_mV").get<double>()};
}

/// Reads frames one at a time so whole stacks never sit in memory.
class VmStackReader {
 public:
  explicit VmStackReader(const fs::path& stem) : info_(read_vm_info(stem)), in_(data_path(stem, ".f32"), std::ios::binary) {
    if (!in_) throw ValidationError("missing data file " + data_path(stem, ".f32").string());
    const auto expected = info_.frames * info_.rows * info_.cols * sizeof(float);
    if (fs::file_size(data_path(stem, ".f32")) != expected) throw ShapeError(stem.string() + ": vm stack size mismatch");
    buf_.resize(info_.rows * info_.cols);
  }

  const VmStackInfo& info() const noexcept { return info_; }

  bool next(Field& vm) {
    if (read_ >= info_.frames) return false;
    in_.read(reinterpret_cast<char*>(buf_.data()), static_cast<std::streamsize>(buf_.size() * sizeof(float)));
    if (!in_) throw Error("short read in vm stack");
    vm = field_from_f32(buf_.data(), info_.rows, info_.cols);
    ++read_;
    return true;
  }

 private:
  VmStackInfo info_;
  std::ifstream in_;
  std::vector<float> buf_;
  std::size_t read_ = 0;
};

}  // namespace cardiomap
