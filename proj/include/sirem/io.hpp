#pragma once

#include <png.h>

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "audio.hpp"
#include "coil.hpp"
#include "fusion.hpp"
#include "train.hpp"
#include "trajectory.hpp"

namespace sirem::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;
inline constexpr const char *kManifestFile = "manifest.json";
inline constexpr const char *kDatasetFile = "dataset.json";

enum class DType { f32, f64, c64, u8 };

inline std::string dtype_name(DType d) {
  switch (d) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::c64: return "c64";
    case DType::u8: return "u8";
  }
  return "?";
}

inline DType parse_dtype(const std::string &s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  if (s == "c64") return DType::c64;
  if (s == "u8") return DType::u8;
  fail(Errc::unknown_dtype, "unknown dtype '" + s + "'");
}

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::c64: return 8;
    case DType::u8: return 1;
  }
  return 0;
}

// In-memory element type for each on-disk dtype.
template <typename T> struct dtype_of;
template <> struct dtype_of<float> { static constexpr DType value = DType::f32; };
template <> struct dtype_of<double> { static constexpr DType value = DType::f64; };
template <> struct dtype_of<std::complex<float>> { static constexpr DType value = DType::c64; };
template <> struct dtype_of<std::uint8_t> { static constexpr DType value = DType::u8; };

struct ArrayEntry {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::size_t> shape;
  std::string file;
  std::string byte_order = "little";

  std::size_t count() const { return NdArray<std::uint8_t>::count(shape); }
  std::size_t bytes() const { return count() * dtype_size(dtype); }
};

inline std::string shape_string(const std::vector<std::size_t> &s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + "]";
}

struct Manifest {
  int format_version = kFormatVersion;
  std::vector<ArrayEntry> arrays;
  json metadata = json::object();

  const ArrayEntry *find(const std::string &name) const {
    for (const auto &a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
  const ArrayEntry &get(const std::string &name) const {
    const auto *a = find(name);
    require(a != nullptr, Errc::schema_violation, "array '" + name + "' is not in the manifest");
    return *a;
  }
};

inline json to_json(const Manifest &m) {
  json arrays = json::array();
  for (const auto &a : m.arrays)
    arrays.push_back({{"name", a.name}, {"dtype", dtype_name(a.dtype)}, {"shape", a.shape},
                      {"file", a.file}, {"byte_order", a.byte_order}});
  return {{"format_version", m.format_version}, {"arrays", arrays}, {"metadata", m.metadata}};
}

inline Manifest manifest_from_json(const json &j, const std::string &where) {
  auto bad = [&](const std::string &msg) { fail(Errc::format_error, where + ": " + msg); };
  if (!j.is_object()) bad("manifest is not a JSON object");
  Manifest m;
  if (!j.contains("format_version") || !j["format_version"].is_number_integer()) bad("missing format_version");
  m.format_version = j["format_version"].get<int>();
  if (m.format_version != kFormatVersion)
    bad("unsupported format_version " + std::to_string(m.format_version));
  if (!j.contains("arrays") || !j["arrays"].is_array()) bad("missing arrays list");
  for (const auto &e : j["arrays"]) {
    if (!e.is_object() || !e.contains("name") || !e.contains("dtype") || !e.contains("shape") || !e.contains("file"))
      bad("array entry lacks name/dtype/shape/file");
    ArrayEntry a;
    a.name = e["name"].get<std::string>();
    a.dtype = parse_dtype(e["dtype"].get<std::string>());
    for (const auto &d : e["shape"]) {
      if (!d.is_number_integer() || d.get<long long>() <= 0) bad("array '" + a.name + "' has a non-positive extent");
      a.shape.push_back(d.get<std::size_t>());
    }
    a.file = e["file"].get<std::string>();
    a.byte_order = e.value("byte_order", std::string("little"));
    if (a.byte_order != "little") bad("array '" + a.name + "' is not little-endian");
    if (a.file.find("..") != std::string::npos || fs::path(a.file).is_absolute())
      bad("array '" + a.name + "' points outside the manifest directory");
    if (m.find(a.name)) bad("duplicate array name '" + a.name + "'");
    m.arrays.push_back(std::move(a));
  }
  m.metadata = j.value("metadata", json::object());
  return m;
}

inline json read_json(const fs::path &path) {
  std::ifstream in(path);
  require(in.good(), Errc::missing_file, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    fail(Errc::format_error, path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path &path, const json &j) {
  std::ofstream out(path);
  require(out.good(), Errc::io_failure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  require(out.good(), Errc::io_failure, "write failed for " + path.string());
}

inline Manifest read_manifest(const fs::path &dir) {
  return manifest_from_json(read_json(dir / kManifestFile), (dir / kManifestFile).string());
}

inline void write_manifest(const fs::path &dir, const Manifest &m) { write_json(dir / kManifestFile, to_json(m)); }

namespace detail {

template <typename Word>
void to_little(Word *p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < n; ++i) {
      auto *b = reinterpret_cast<unsigned char *>(p + i);
      std::reverse(b, b + sizeof(Word));
    }
  (void)p;
  (void)n;
}

template <typename T>
void swap_elements(std::vector<T> &v) {
  if constexpr (std::is_same_v<T, std::complex<float>>)
    to_little(reinterpret_cast<float *>(v.data()), v.size() * 2);
  else if constexpr (sizeof(T) > 1)
    to_little(v.data(), v.size());
}

}  // namespace detail

// Writes `data` as <dir>/<name>.bin and records it in the manifest.
template <typename T>
void write_array(const fs::path &dir, Manifest &m, const std::string &name, std::vector<std::size_t> shape,
                 std::vector<T> data) {
  require(!shape.empty(), Errc::invalid_argument, "array '" + name + "' needs a shape");
  for (auto s : shape) require(s > 0, Errc::invalid_argument, "array '" + name + "' has an empty axis");
  require(NdArray<T>::count(shape) == data.size(), Errc::shape_mismatch,
          "array '" + name + "' payload does not match " + shape_string(shape));
  require(m.find(name) == nullptr, Errc::invalid_argument, "array '" + name + "' already written");
  ArrayEntry e{name, dtype_of<T>::value, std::move(shape), name + ".bin", "little"};
  detail::swap_elements(data);
  std::ofstream out(dir / e.file, std::ios::binary);
  require(out.good(), Errc::io_failure, "cannot write " + (dir / e.file).string());
  out.write(reinterpret_cast<const char *>(data.data()), static_cast<std::streamsize>(e.bytes()));
  require(out.good(), Errc::io_failure, "write failed for " + (dir / e.file).string());
  m.arrays.push_back(std::move(e));
}

template <typename T>
void write_array(const fs::path &dir, Manifest &m, const std::string &name, const NdArray<T> &a) {
  write_array(dir, m, name, a.shape, a.data);
}

inline void check_payload(const fs::path &dir, const ArrayEntry &e) {
  const fs::path p = dir / e.file;
  require(fs::exists(p), Errc::missing_file, "array '" + e.name + "': missing " + p.string());
  const auto size = fs::file_size(p);
  require(size == e.bytes(), Errc::size_mismatch,
          "array '" + e.name + "': " + std::to_string(size) + " bytes on disk, expected " +
              std::to_string(e.bytes()) + " for " + dtype_name(e.dtype) + " " + shape_string(e.shape));
}

template <typename T>
NdArray<T> read_array(const fs::path &dir, const ArrayEntry &e) {
  require(e.dtype == dtype_of<T>::value, Errc::schema_violation,
          "array '" + e.name + "' has dtype " + dtype_name(e.dtype) + ", expected " +
              dtype_name(dtype_of<T>::value));
  check_payload(dir, e);
  NdArray<T> out(e.shape);
  std::ifstream in(dir / e.file, std::ios::binary);
  in.read(reinterpret_cast<char *>(out.data.data()), static_cast<std::streamsize>(e.bytes()));
  require(static_cast<std::size_t>(in.gcount()) == e.bytes(), Errc::io_failure,
          "short read of array '" + e.name + "'");
  detail::swap_elements(out.data);
  return out;
}

template <typename T>
NdArray<T> read_array(const fs::path &dir, const Manifest &m, const std::string &name) {
  return read_array<T>(dir, m.get(name));
}

// ---------------------------------------------------------------------------
// Speech features.

inline Manifest write_features(const fs::path &dir, const NdArray<float> &features, json metadata = json::object()) {
  require(features.rank() == 2 || features.rank() == 3, Errc::shape_mismatch, "features must be [L, d] or [T, L, d]");
  fs::create_directories(dir);
  Manifest m;
  metadata["feature_dim"] = features.shape.back();
  m.metadata = std::move(metadata);
  write_array(dir, m, "features", features);
  write_manifest(dir, m);
  return m;
}

// Reads features [L, d] (one window) or [T, L, d] (one window per frame).
// Any malformed payload is a format error; nothing is returned partially.
inline std::vector<FeatureSequence> load_features(const fs::path &dir, const std::string &name = "features") {
  Manifest m;
  NdArray<float> a;
  try {
    m = read_manifest(dir);
    a = read_array<float>(dir, m, name);
  } catch (const Error &e) {
    if (e.code() == Errc::missing_file) throw;
    fail(Errc::format_error, std::string("features in ") + dir.string() + ": " + e.what());
  }
  require(a.rank() == 2 || a.rank() == 3, Errc::format_error,
          "features '" + name + "' must be [L, d] or [T, L, d], got " + shape_string(a.shape));
  if (m.metadata.contains("feature_dim"))
    require(m.metadata["feature_dim"].get<std::size_t>() == a.shape.back(), Errc::format_error,
            "features '" + name + "': declared feature_dim differs from the array");
  for (float v : a.data) require(std::isfinite(v), Errc::format_error, "features '" + name + "' contain non-finite values");
  const std::size_t T = a.rank() == 3 ? a.shape[0] : 1;
  const std::size_t L = a.shape[a.rank() - 2], d = a.shape.back();
  std::vector<FeatureSequence> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    out[t].steps = L;
    out[t].dim = d;
    out[t].source = FeatureSource::file_backed;
    out[t].data.assign(a.data.begin() + static_cast<std::ptrdiff_t>(t * L * d),
                       a.data.begin() + static_cast<std::ptrdiff_t>((t + 1) * L * d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset layout: <root>/dataset.json lists utterance ids per split; each
// utterance directory holds a manifest plus one payload per array.

struct UtteranceData {
  std::string id;
  std::vector<KSpaceFrame> kspace;
  Trajectory traj;
  NdArray<float> features;            // [T, L, d]
  std::vector<RealImage> reference;   // T frames
  std::vector<std::vector<Mask>> masks;
  SensitivityMaps maps;
  std::vector<double> timestamps;
  EbAMap eba;

  std::size_t frames() const { return kspace.size(); }
};

struct Dataset {
  fs::path root;
  std::map<std::string, std::vector<std::string>> splits;  // train / val / test
  json metadata = json::object();

  const std::vector<std::string> &split(const std::string &s) const {
    auto it = splits.find(s);
    require(it != splits.end(), Errc::schema_violation, "dataset has no '" + s + "' split");
    return it->second;
  }
  std::vector<std::string> all_ids() const {
    std::vector<std::string> ids;
    for (const char *s : {"train", "val", "test"})
      if (splits.count(s)) ids.insert(ids.end(), splits.at(s).begin(), splits.at(s).end());
    return ids;
  }
  fs::path dir(const std::string &id) const { return root / id; }
};

inline const std::vector<std::string> &utterance_arrays() {
  static const std::vector<std::string> names = {"kspace",    "traj",  "dcf",        "features",  "reference",
                                                 "masks",     "maps",  "timestamps", "eba",       "norm_scale"};
  return names;
}

namespace detail {

struct SchemaCheck {
  const Manifest &m;
  std::string id;
  std::vector<std::string> problems;

  const ArrayEntry *entry(const std::string &name, DType dt, std::size_t rank) {
    const auto *e = m.find(name);
    if (!e) {
      problems.push_back(id + ": array '" + name + "' is missing");
      return nullptr;
    }
    if (e->dtype != dt) {
      problems.push_back(id + ": array '" + name + "' has dtype " + dtype_name(e->dtype) + ", expected " + dtype_name(dt));
      return nullptr;
    }
    if (e->shape.size() != rank) {
      problems.push_back(id + ": array '" + name + "' has rank " + std::to_string(e->shape.size()) + ", expected " +
                         std::to_string(rank));
      return nullptr;
    }
    return e;
  }
  void axis(const ArrayEntry *e, std::size_t ax, const char *axis_name, std::size_t expect) {
    if (e && e->shape[ax] != expect)
      problems.push_back(id + ": array '" + e->name + "' axis " + std::to_string(ax) + " (" + axis_name + ") has " +
                         std::to_string(e->shape[ax]) + " entries, expected " + std::to_string(expect));
  }
};

}  // namespace detail

// Validates one utterance manifest against the layout without reading
// payloads (file sizes are checked). Returns every problem found.
inline std::vector<std::string> validate_utterance(const fs::path &dir, const std::string &id) {
  Manifest m;
  try {
    m = read_manifest(dir);
  } catch (const Error &e) {
    return {id + ": " + e.what()};
  }
  detail::SchemaCheck c{m, id, {}};
  const auto *k = c.entry("kspace", DType::c64, 4);
  const auto *tr = c.entry("traj", DType::f32, 3);
  const auto *dcf = c.entry("dcf", DType::f32, 2);
  const auto *fe = c.entry("features", DType::f32, 3);
  const auto *ref = c.entry("reference", DType::f32, 3);
  const auto *ma = c.entry("masks", DType::u8, 4);
  const auto *mp = c.entry("maps", DType::c64, 3);
  const auto *ts = c.entry("timestamps", DType::f64, 1);
  const auto *eb = c.entry("eba", DType::f32, 2);
  const auto *ns = c.entry("norm_scale", DType::f64, 1);
  if (k) {
    const std::size_t T = k->shape[0], C = k->shape[1], N = k->shape[3];
    c.axis(k, 2, "arms", kArmsPerRotation);
    c.axis(tr, 0, "arms", kArmsPerRotation);
    c.axis(tr, 1, "samples", N);
    c.axis(tr, 2, "k-space components", 2);
    c.axis(dcf, 0, "arms", kArmsPerRotation);
    c.axis(dcf, 1, "samples", N);
    c.axis(fe, 0, "frames", T);
    c.axis(ref, 0, "frames", T);
    c.axis(ma, 0, "frames", T);
    c.axis(mp, 0, "coils", C);
    c.axis(ts, 0, "frames", T);
    c.axis(ns, 0, "frames", T);
    if (ref) {
      const std::size_t H = ref->shape[1], W = ref->shape[2];
      c.axis(ma, 2, "rows", H);
      c.axis(ma, 3, "cols", W);
      c.axis(mp, 1, "rows", H);
      c.axis(mp, 2, "cols", W);
      c.axis(eb, 0, "rows", H);
      c.axis(eb, 1, "cols", W);
    }
  }
  for (const auto &e : m.arrays) {
    try {
      check_payload(dir, e);
    } catch (const Error &err) {
      c.problems.push_back(id + ": " + err.what());
    }
  }
  return c.problems;
}

inline void write_dataset_index(const Dataset &d) {
  json splits = json::object();
  for (const auto &[k, v] : d.splits) splits[k] = v;
  write_json(d.root / kDatasetFile, {{"format_version", kFormatVersion}, {"splits", splits}, {"metadata", d.metadata}});
}

// Reads the index and validates every utterance before returning; all
// problems are reported together in one schema-violation error.
inline Dataset load_dataset(const fs::path &root) {
  const json j = read_json(root / kDatasetFile);
  require(j.is_object() && j.contains("splits") && j["splits"].is_object(), Errc::format_error,
          (root / kDatasetFile).string() + ": missing splits");
  Dataset d;
  d.root = root;
  d.metadata = j.value("metadata", json::object());
  std::vector<std::string> seen;
  for (const auto &[k, v] : j["splits"].items()) {
    auto &ids = d.splits[k];
    for (const auto &id : v) {
      const auto s = id.get<std::string>();
      require(std::find(seen.begin(), seen.end(), s) == seen.end(), Errc::schema_violation,
              "utterance '" + s + "' appears in more than one split");
      seen.push_back(s);
      ids.push_back(s);
    }
  }
  std::vector<std::string> problems;
  for (const auto &id : d.all_ids()) {
    auto p = validate_utterance(d.dir(id), id);
    problems.insert(problems.end(), p.begin(), p.end());
  }
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " problem(s): ";
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    fail(Errc::schema_violation, msg);
  }
  return d;
}

inline void write_utterance(const fs::path &dir, const UtteranceData &u, json metadata = json::object()) {
  fs::create_directories(dir);
  require(!u.kspace.empty(), Errc::empty_input, "utterance '" + u.id + "' has no frames");
  const std::size_t T = u.frames(), C = u.kspace[0].coils, N = u.kspace[0].samples;
  const GridSize g = u.reference.at(0).grid();
  Manifest m;
  metadata["id"] = u.id;
  m.metadata = std::move(metadata);

  std::vector<std::complex<float>> k;
  k.reserve(T * C * kArmsPerRotation * N);
  std::vector<double> scale;
  for (const auto &f : u.kspace) {
    require(f.coils == C && f.samples == N && f.arms == kArmsPerRotation, Errc::shape_mismatch, "k-space frames differ");
    for (const auto &v : f.data) k.emplace_back(static_cast<float>(v.real()), static_cast<float>(v.imag()));
    scale.push_back(f.norm_scale);
  }
  write_array(dir, m, "kspace", {T, C, kArmsPerRotation, N}, std::move(k));
  std::vector<float> traj(u.traj.coords.begin(), u.traj.coords.end());
  write_array(dir, m, "traj", {u.traj.arms, u.traj.samples, 2}, std::move(traj));
  write_array(dir, m, "dcf", {u.traj.arms, u.traj.samples}, std::vector<float>(u.traj.dcf.begin(), u.traj.dcf.end()));
  write_array(dir, m, "features", u.features);
  std::vector<float> ref;
  for (const auto &r : u.reference)
    for (double v : r) ref.push_back(static_cast<float>(v));
  write_array(dir, m, "reference", {T, g.rows, g.cols}, std::move(ref));
  const std::size_t K = u.masks.at(0).size();
  std::vector<std::uint8_t> masks;
  for (const auto &fm : u.masks) {
    require(fm.size() == K, Errc::shape_mismatch, "mask class count differs between frames");
    for (const auto &mk : fm) masks.insert(masks.end(), mk.begin(), mk.end());
  }
  write_array(dir, m, "masks", {T, K, g.rows, g.cols}, std::move(masks));
  std::vector<std::complex<float>> maps;
  for (const auto &v : u.maps.maps) maps.emplace_back(static_cast<float>(v.real()), static_cast<float>(v.imag()));
  write_array(dir, m, "maps", {u.maps.coils, g.rows, g.cols}, std::move(maps));
  write_array(dir, m, "timestamps", {T}, u.timestamps);
  std::vector<float> eba;
  for (double v : u.eba.w) eba.push_back(static_cast<float>(v));
  write_array(dir, m, "eba", {g.rows, g.cols}, std::move(eba));
  write_array(dir, m, "norm_scale", {T}, std::move(scale));
  write_manifest(dir, m);
}

inline UtteranceData load_utterance(const Dataset &d, const std::string &id) {
  const fs::path dir = d.dir(id);
  const auto problems = validate_utterance(dir, id);
  require(problems.empty(), Errc::schema_violation, problems.empty() ? "" : problems.front());
  const Manifest m = read_manifest(dir);
  UtteranceData u;
  u.id = id;
  const auto k = read_array<std::complex<float>>(dir, m, "kspace");
  const auto scale = read_array<double>(dir, m, "norm_scale");
  const std::size_t T = k.shape[0], C = k.shape[1], A = k.shape[2], N = k.shape[3];
  for (std::size_t t = 0; t < T; ++t) {
    KSpaceFrame f(C, A, N);
    const std::size_t off = t * C * A * N;
    for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = cplx(k.data[off + i]);
    f.norm_scale = scale.data[t];
    f.traj_ref = id;
    u.kspace.push_back(std::move(f));
  }
  const auto ref = read_array<float>(dir, m, "reference");
  const GridSize g{ref.shape[1], ref.shape[2]};
  for (std::size_t t = 0; t < T; ++t) {
    RealImage r(g);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = ref.data[t * g.pixels() + i];
    u.reference.push_back(std::move(r));
  }
  const auto tr = read_array<float>(dir, m, "traj");
  const auto dcf = read_array<float>(dir, m, "dcf");
  u.traj.arms = A;
  u.traj.samples = N;
  u.traj.grid = g;
  u.traj.coords.assign(tr.data.begin(), tr.data.end());
  u.traj.dcf.assign(dcf.data.begin(), dcf.data.end());
  u.features = read_array<float>(dir, m, "features");
  const auto masks = read_array<std::uint8_t>(dir, m, "masks");
  const std::size_t K = masks.shape[1];
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<Mask> fm;
    for (std::size_t c = 0; c < K; ++c) {
      Mask mk(g);
      std::copy_n(masks.data.begin() + static_cast<std::ptrdiff_t>((t * K + c) * g.pixels()), g.pixels(), mk.begin());
      fm.push_back(std::move(mk));
    }
    u.masks.push_back(std::move(fm));
  }
  const auto maps = read_array<std::complex<float>>(dir, m, "maps");
  u.maps = SensitivityMaps(C, g);
  for (std::size_t i = 0; i < u.maps.maps.size(); ++i) u.maps.maps[i] = cplx(maps.data[i]);
  u.timestamps = read_array<double>(dir, m, "timestamps").data;
  const auto eba = read_array<float>(dir, m, "eba");
  u.eba.w = RealImage(g);
  for (std::size_t i = 0; i < u.eba.w.size(); ++i) u.eba.w[i] = eba.data[i];
  u.eba.provenance = EbAProvenance::loaded;
  return u;
}

// ---------------------------------------------------------------------------
// Model bundle: decoder tensors and arm logits plus JSON metadata.

inline json config_to_json(const TrainConfig &c) {
  return {{"alpha", c.alpha},       {"beta", c.beta},         {"gamma", c.gamma},
          {"K", c.K},               {"lr", c.lr},             {"weight_decay", c.weight_decay},
          {"batch", c.batch},       {"epochs", c.epochs},     {"clip_norm", c.clip_norm},
          {"val_every", c.val_every}, {"seed", c.seed},       {"zero_features", c.zero_features},
          {"freeze_arms", c.freeze_arms}};
}

// Unknown keys are rejected so typos do not silently fall back to defaults.
inline TrainConfig config_from_json(const json &j, TrainConfig c = {}) {
  require(j.is_object(), Errc::usage, "training config must be a JSON object");
  try {
    for (const auto &[k, v] : j.items()) {
      if (k == "alpha") c.alpha = v.get<double>();
      else if (k == "beta") c.beta = v.get<double>();
      else if (k == "gamma") c.gamma = v.get<double>();
      else if (k == "K") c.K = v.get<double>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "weight_decay") c.weight_decay = v.get<double>();
      else if (k == "batch") c.batch = v.get<std::size_t>();
      else if (k == "epochs") c.epochs = v.get<std::size_t>();
      else if (k == "clip_norm") c.clip_norm = v.get<double>();
      else if (k == "val_every") c.val_every = v.get<std::size_t>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "zero_features") c.zero_features = v.get<bool>();
      else if (k == "freeze_arms") c.freeze_arms = v.get<bool>();
      else if (k == "decoder") continue;
      else fail(Errc::usage, "unknown training config key '" + k + "'");
    }
  } catch (const json::exception &e) {
    fail(Errc::usage, std::string("training config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const Error &e) {
    fail(Errc::usage, e.what());
  }
  return c;
}

inline json shape_to_json(const DecoderShape &s) {
  return {{"input_dim", s.input_dim}, {"hidden", s.hidden}, {"output", {s.output.rows, s.output.cols}}, {"dropout", s.dropout}};
}

inline DecoderShape shape_from_json(const json &j) {
  DecoderShape s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  const auto o = j.at("output").get<std::vector<std::size_t>>();
  require(o.size() == 2, Errc::format_error, "decoder output must be [rows, cols]");
  s.output = {o[0], o[1]};
  s.dropout = j.at("dropout").get<double>();
  return s;
}

struct ModelBundle {
  SiremModel<float> model;
  json metadata = json::object();
};

inline void save_model(const fs::path &dir, const SiremModel<float> &model, json metadata = json::object()) {
  fs::create_directories(dir);
  Manifest m;
  metadata["decoder"] = shape_to_json(model.decoder.shape);
  metadata["decoder_seed"] = model.decoder.seed;
  metadata["freeze_arms"] = model.freeze_arms;
  metadata["zero_features"] = model.zero_features;
  m.metadata = std::move(metadata);
  for (std::size_t i = 0; i < model.decoder.layers.size(); ++i) {
    const auto &l = model.decoder.layers[i];
    auto put = [&](const char *what, const Mat<float> &t) {
      // Eigen stores column-major; the payload is row-major [rows, cols].
      const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r = t;
      write_array(dir, m, "layer" + std::to_string(i) + "." + what,
                  {static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols())},
                  std::vector<float>(r.data(), r.data() + r.size()));
    };
    put("weight", l.weight);
    put("bias", l.bias);
    if (l.has_norm()) {
      put("gain", l.gain);
      put("offset", l.offset);
    }
  }
  write_array(dir, m, "arm_logits", {kArmsPerRotation},
              std::vector<double>(model.logits.ell.begin(), model.logits.ell.end()));
  write_manifest(dir, m);
}

inline ModelBundle load_model(const fs::path &dir) {
  const Manifest m = read_manifest(dir);
  ModelBundle b;
  b.metadata = m.metadata;
  DecoderShape shape;
  try {
    shape = shape_from_json(m.metadata.at("decoder"));
    b.model.decoder.seed = m.metadata.value("decoder_seed", std::uint64_t{0});
    b.model.freeze_arms = m.metadata.value("freeze_arms", false);
    b.model.zero_features = m.metadata.value("zero_features", false);
  } catch (const json::exception &e) {
    fail(Errc::format_error, dir.string() + ": bad decoder metadata: " + e.what());
  }
  b.model.decoder.shape = shape;
  std::vector<std::size_t> widths = shape.hidden;
  widths.push_back(shape.output_size());
  std::size_t fan_in = shape.input_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    DenseLayer<float> l;
    auto get = [&](const char *what, std::size_t rows, std::size_t cols) {
      const auto name = "layer" + std::to_string(i) + "." + what;
      const auto a = read_array<float>(dir, m, name);
      require(a.shape == std::vector<std::size_t>{rows, cols}, Errc::format_error,
              "tensor '" + name + "' has shape " + shape_string(a.shape) + ", expected " + shape_string({rows, cols}));
      Mat<float> t = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          a.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      return t;
    };
    l.weight = get("weight", widths[i], fan_in);
    l.bias = get("bias", widths[i], 1);
    if (i + 1 < widths.size()) {
      l.gain = get("gain", widths[i], 1);
      l.offset = get("offset", widths[i], 1);
    }
    b.model.decoder.layers.push_back(std::move(l));
    fan_in = widths[i];
  }
  const auto logits = read_array<double>(dir, m, "arm_logits");
  require(logits.size() == kArmsPerRotation, Errc::format_error, "arm_logits must have 13 entries");
  std::copy(logits.data.begin(), logits.data.end(), b.model.logits.ell.begin());
  return b;
}

// Features are validated against the model only when both meet.
inline void check_feature_dim(const SiremModel<float> &model, std::size_t dim) {
  require(dim == model.decoder.shape.input_dim, Errc::dimension_mismatch,
          "features have d = " + std::to_string(dim) + " but the model expects " +
              std::to_string(model.decoder.shape.input_dim));
}

// ---------------------------------------------------------------------------
// PNG (8-bit grayscale), WAV (PCM16 mono) and CSV.

inline void write_png(const fs::path &path, const RealImage &img) {
  FILE *fp = std::fopen(path.string().c_str(), "wb");
  require(fp != nullptr, Errc::io_failure, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail(Errc::io_failure, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.cols()), static_cast<png_uint_32>(img.rows()), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(img.cols());
  for (std::size_t r = 0; r < img.rows(); ++r) {
    for (std::size_t c = 0; c < img.cols(); ++c)
      row[c] = static_cast<png_byte>(std::lround(std::clamp(img(r, c), 0.0, 1.0) * 255.0));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline RealImage read_png(const fs::path &path) {
  FILE *fp = std::fopen(path.string().c_str(), "rb");
  require(fp != nullptr, Errc::missing_file, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    fail(Errc::format_error, "not a readable PNG: " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  RealImage img(h, w);
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  for (png_uint_32 r = 0; r < h; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 c = 0; c < w; ++c) img(r, c) = row[c] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// Mono 16-bit PCM at 16 kHz, samples scaled to [-1, 1).
inline std::vector<double> read_wav(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::missing_file, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto u16 = [&](std::size_t o) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[o]) | (static_cast<unsigned char>(bytes[o + 1]) << 8));
  };
  auto u32 = [&](std::size_t o) { return static_cast<std::uint32_t>(u16(o)) | (static_cast<std::uint32_t>(u16(o + 2)) << 16); };
  const std::string where = "WAV " + path.string();
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "RIFF", 4) == 0 && std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          Errc::format_error, where + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    const std::string id(bytes.data() + pos, 4);
    const std::size_t len = u32(pos + 4), body = pos + 8;
    require(body + len <= bytes.size(), Errc::format_error, where + ": truncated '" + id + "' chunk");
    if (id == "fmt ") {
      require(len >= 16, Errc::format_error, where + ": short fmt chunk");
      require(u16(body) == 1, Errc::format_error, where + ": only PCM is supported");
      require(u16(body + 2) == 1, Errc::format_error, where + ": only mono is supported");
      require(u32(body + 4) == static_cast<std::uint32_t>(mel::kSampleRate), Errc::format_error,
              where + ": sample rate must be 16000 Hz");
      require(u16(body + 14) == 16, Errc::format_error, where + ": only 16-bit samples are supported");
      have_fmt = true;
    } else if (id == "data") {
      require(have_fmt, Errc::format_error, where + ": data chunk before fmt chunk");
      std::vector<double> out(len / 2);
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::int16_t>(u16(body + 2 * i)) / 32768.0;
      return out;
    }
    pos = body + len + (len & 1);
  }
  fail(Errc::format_error, where + ": no data chunk");
}

inline void write_wav(const fs::path &path, const std::vector<double> &samples) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::io_failure, "cannot write " + path.string());
  auto put16 = [&](std::uint16_t v) { out.put(static_cast<char>(v & 0xff)).put(static_cast<char>(v >> 8)); };
  auto put32 = [&](std::uint32_t v) { put16(static_cast<std::uint16_t>(v & 0xffff)); put16(static_cast<std::uint16_t>(v >> 16)); };
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(16000);
  put32(32000);
  put16(2);
  put16(16);
  out.write("data", 4);
  put32(data_bytes);
  for (double s : samples)
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(std::clamp(s, -1.0, 32767.0 / 32768.0) * 32768.0))));
  require(out.good(), Errc::io_failure, "write failed for " + path.string());
}

class CsvWriter {
 public:
  CsvWriter(const fs::path &path, const std::vector<std::string> &header) : out_(path), width_(header.size()) {
    require(out_.good(), Errc::io_failure, "cannot write " + path.string());
    row(header);
  }

  void row(const std::vector<std::string> &cells) {
    require(cells.size() == width_, Errc::invalid_argument, "CSV row width differs from the header");
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    require(out_.good(), Errc::io_failure, "CSV write failed");
  }

 private:
  std::ofstream out_;
  std::size_t width_;
};

inline std::string fmt(double v, int precision = 6) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

inline std::vector<std::vector<std::string>> read_csv(const fs::path &path) {
  std::ifstream in(path);
  require(in.good(), Errc::missing_file, "cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace sirem::io
