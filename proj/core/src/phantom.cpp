#include "pvit/phantom.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "pvit/rng.hpp"

namespace pvit {

static_assert(std::endian::native == std::endian::little, "f32 slice I/O assumes a little-endian host");

namespace {

constexpr double kTissue = 0.7;
constexpr double kCortex = 0.9;
constexpr double kVentricle = 0.1;
constexpr double kBandWidth = 0.06;

std::string subject_id(const char* prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%04zu", prefix, index);
  return buf;
}

}  // namespace

const char* plane_name(Plane plane) {
  switch (plane) {
    case Plane::axial:
      return "axial";
    case Plane::coronal:
      return "coronal";
    case Plane::sagittal:
      return "sagittal";
  }
  return "?";
}

Plane parse_plane(std::string_view name) {
  for (Plane p : kPlanes) {
    if (name == plane_name(p)) return p;
  }
  throw std::invalid_argument("unknown plane '" + std::string(name) + "'");
}

void PhantomSpec::validate() const {
  if (!(severity >= 1.0) || !std::isfinite(severity)) throw std::invalid_argument(id + ": severity must be >= 1");
  if (!(thinning >= 0.0 && thinning < 1.0)) throw std::invalid_argument(id + ": thinning must lie in [0, 1)");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw std::invalid_argument(id + ": noise sigma must be >= 0");
  if (label != 0 && label != 1) throw std::invalid_argument(id + ": label must be 0 or 1");
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = {{"id", s.id}, {"label", s.label}, {"severity", s.severity}, {"thinning", s.thinning}, {"noise_sigma", s.noise_sigma}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  j.at("id").get_to(s.id);
  j.at("label").get_to(s.label);
  j.at("severity").get_to(s.severity);
  j.at("thinning").get_to(s.thinning);
  j.at("noise_sigma").get_to(s.noise_sigma);
}

Regime Regime::standard() { return {1.3, 1.8, 0.2, 0.5, 1.0, 1.1, 0.0, 0.05}; }
Regime Regime::hard() { return {1.15, 1.3, 0.2, 0.5, 1.0, 1.1, 0.0, 0.05}; }

double PhantomGeometry::brain_radius(std::size_t row, std::size_t col) const {
  const double x = (static_cast<double>(col) + 0.5) - size / 2;
  const double y = (static_cast<double>(row) + 0.5) - size / 2;
  return std::sqrt((x / brain_a) * (x / brain_a) + (y / brain_b) * (y / brain_b));
}

bool PhantomGeometry::in_ventricle(std::size_t row, std::size_t col, double v) const {
  const double x = std::abs((static_cast<double>(col) + 0.5) - size / 2);  // mirrored pair
  const double y = (static_cast<double>(row) + 0.5) - size / 2;
  const double dx = (x - vent_cx) / (vent_a * v), dy = (y - vent_cy) / (vent_b * v);
  return dx * dx + dy * dy <= 1.0;
}

bool PhantomGeometry::in_band(std::size_t row, std::size_t col, double t) const {
  const double r = brain_radius(row, col);
  return r <= 1.0 && r > 1.0 - kBandWidth * (1.0 - t);
}

PhantomGeometry phantom_geometry(const std::string& subject, Plane plane, std::uint64_t dataset_seed,
                                 std::size_t size) {
  Rng rng(mix_seed(mix_seed(dataset_seed, hash_string(subject)), static_cast<std::uint64_t>(plane) + 1));
  const double s = static_cast<double>(size);
  PhantomGeometry g;
  g.size = s;
  g.brain_a = 0.42 * s * rng.uniform(0.97, 1.03);
  g.brain_b = 0.36 * s * rng.uniform(0.97, 1.03);
  g.vent_cx = 0.12 * s;
  g.vent_cy = -0.02 * s;
  g.vent_a = 0.05 * s;
  g.vent_b = 0.10 * s;
  return g;
}

std::vector<LabeledSlice> generate_subject(const PhantomSpec& spec, std::uint64_t dataset_seed, std::size_t size) {
  spec.validate();
  if (size < 8) throw std::invalid_argument("phantom size must be at least 8");
  std::vector<LabeledSlice> out;
  for (Plane plane : kPlanes) {
    const PhantomGeometry g = phantom_geometry(spec.id, plane, dataset_seed, size);
    // Noise stream is separate from geometry so the analytic scene does not depend on sigma.
    Rng noise(mix_seed(mix_seed(dataset_seed ^ 0x6e6f697365ULL, hash_string(spec.id)), static_cast<std::uint64_t>(plane)));
    LabeledSlice slice{spec.id, plane, spec.label, Tensor({size, size}), Mask(size * size, 0)};
    for (std::size_t r = 0; r < size; ++r) {
      for (std::size_t c = 0; c < size; ++c) {
        const std::size_t i = r * size + c;
        if (g.brain_radius(r, c) > 1.0) continue;  // background stays exactly 0
        double value = kTissue;
        if (g.in_band(r, c, spec.thinning)) value = kCortex;
        if (g.in_ventricle(r, c, spec.severity)) value = kVentricle;
        slice.pixels[i] = value + spec.noise_sigma * noise.normal();
        if (spec.label == 1) {
          const bool vent = g.in_ventricle(r, c, spec.severity) && !g.in_ventricle(r, c, 1.0);
          const bool band = g.in_band(r, c, 0.0) && !g.in_band(r, c, spec.thinning);
          slice.lesion[i] = vent || band;
        }
      }
    }
    out.push_back(std::move(slice));
  }
  return out;
}

std::vector<PhantomSpec> sample_specs(std::size_t n_cases, std::size_t n_controls, std::uint64_t dataset_seed,
                                      const Regime& regime) {
  Rng rng(mix_seed(dataset_seed, hash_string("phantom-specs")));
  std::vector<PhantomSpec> specs;
  for (std::size_t i = 1; i <= n_cases; ++i) {
    PhantomSpec s{subject_id("bat", i), 0, 0, 0.05, 1};
    s.severity = rng.uniform(regime.case_v_lo, regime.case_v_hi);
    s.thinning = rng.uniform(regime.case_t_lo, regime.case_t_hi);
    specs.push_back(s);
  }
  for (std::size_t i = 1; i <= n_controls; ++i) {
    PhantomSpec s{subject_id("ctl", i), 0, 0, 0.05, 0};
    s.severity = rng.uniform(regime.control_v_lo, regime.control_v_hi);
    s.thinning = rng.uniform(regime.control_t_lo, regime.control_t_hi);
    specs.push_back(s);
  }
  return specs;
}

const SubjectRecord& DatasetManifest::subject(const std::string& id) const {
  for (const auto& s : subjects) {
    if (s.spec.id == id) return s;
  }
  throw std::out_of_range("no subject '" + id + "' in manifest");
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  auto subjects = nlohmann::json::array();
  for (const auto& s : m.subjects) {
    auto slices = nlohmann::json::array();
    for (const auto& sl : s.slices) slices.push_back({{"plane", plane_name(sl.plane)}, {"image", sl.image}, {"mask", sl.mask}});
    subjects.push_back({{"spec", s.spec}, {"slices", slices}});
  }
  j = {{"schema", m.schema}, {"seed", m.seed}, {"image_size", m.image_size}, {"subjects", subjects}};
  if (m.folds) j["folds"] = {{"k", m.folds->k}, {"assignment", m.folds->fold}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  j.at("schema").get_to(m.schema);
  j.at("seed").get_to(m.seed);
  j.at("image_size").get_to(m.image_size);
  m.subjects.clear();
  for (const auto& s : j.at("subjects")) {
    SubjectRecord rec;
    s.at("spec").get_to(rec.spec);
    for (const auto& sl : s.at("slices")) {
      rec.slices.push_back({parse_plane(sl.at("plane").get<std::string>()), sl.at("image"), sl.at("mask")});
    }
    m.subjects.push_back(std::move(rec));
  }
  m.folds.reset();
  if (j.contains("folds")) {
    FoldSplit f;
    j["folds"].at("k").get_to(f.k);
    j["folds"].at("assignment").get_to(f.fold);
    m.folds = std::move(f);
  }
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset_dir) { return dataset_dir / "manifest.json"; }

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << nlohmann::json(manifest).dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing manifest " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    nlohmann::json::parse(in).get_to(m);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed manifest: " + e.what());
  }
  if (m.schema != "pvit-manifest-v1") throw std::runtime_error(path.string() + ": unsupported schema " + m.schema);
  const auto root = path.parent_path();
  const auto bytes = m.image_size * m.image_size * sizeof(float);
  std::set<std::string> ids;
  for (const auto& s : m.subjects) {
    if (!ids.insert(s.spec.id).second) throw std::runtime_error(path.string() + ": duplicate subject " + s.spec.id);
    for (const auto& sl : s.slices) {
      for (const auto& f : {sl.image, sl.mask}) {
        std::error_code ec;
        const auto size = std::filesystem::file_size(root / f, ec);
        if (ec) throw std::runtime_error(path.string() + ": missing file " + f);
        if (size != bytes) throw std::runtime_error(path.string() + ": " + f + " does not hold an S×S slice");
      }
    }
  }
  return m;
}

std::vector<LabeledSlice> load_slices(const DatasetManifest& manifest, const std::filesystem::path& dataset_dir) {
  const std::size_t s = manifest.image_size;
  std::vector<LabeledSlice> out;
  for (const auto& subj : manifest.subjects) {
    for (const auto& rec : subj.slices) {
      LabeledSlice sl{subj.spec.id, rec.plane, subj.spec.label, Tensor({s, s}, read_f32(dataset_dir / rec.image, s * s)),
                      Mask(s * s)};
      const auto mask = read_f32(dataset_dir / rec.mask, s * s);
      for (std::size_t i = 0; i < mask.size(); ++i) sl.lesion[i] = mask[i] > 0.5;
      out.push_back(std::move(sl));
    }
  }
  return out;
}

DatasetManifest generate_dataset(std::size_t n_cases, std::size_t n_controls, std::uint64_t dataset_seed,
                                 const std::filesystem::path& out_dir, std::size_t size, const Regime& regime,
                                 std::size_t folds) {
  if (n_cases == 0 || n_controls == 0) throw std::invalid_argument("generate_dataset needs at least one case and one control");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "subjects", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "subjects").string() + ": " + ec.message());

  DatasetManifest m;
  m.seed = dataset_seed;
  m.image_size = size;
  std::map<std::string, std::string> groups;
  std::map<std::string, int> labels;
  for (const auto& spec : sample_specs(n_cases, n_controls, dataset_seed, regime)) {
    SubjectRecord rec{spec, {}};
    const auto dir = std::filesystem::path("subjects") / spec.id;
    std::filesystem::create_directories(out_dir / dir, ec);
    if (ec) throw std::runtime_error("cannot create " + (out_dir / dir).string() + ": " + ec.message());
    for (const auto& slice : generate_subject(spec, dataset_seed, size)) {
      const std::string plane = plane_name(slice.plane);
      SliceRecord sr{slice.plane, (dir / (plane + ".f32")).generic_string(), (dir / (plane + "_mask.f32")).generic_string()};
      write_f32(out_dir / sr.image, slice.pixels.data());
      std::vector<double> mask(slice.lesion.begin(), slice.lesion.end());
      write_f32(out_dir / sr.mask, mask);
      rec.slices.push_back(sr);
    }
    groups[spec.id] = spec.id;  // one subject per anonymized patient
    labels[spec.id] = spec.label;
    m.subjects.push_back(std::move(rec));
  }
  if (folds > 0) m.folds = stratified_group_kfold(groups, labels, folds);
  write_manifest(m, manifest_path(out_dir));
  return m;
}

void write_f32(const std::filesystem::path& path, std::span<const double> values) {
  std::vector<float> buf(values.begin(), values.end());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<float> buf(expected_count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)) || in.peek() != EOF) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(expected_count) + " float32 values");
  }
  return {buf.begin(), buf.end()};
}

std::array<Tensor, 3> extract_triplanar(const Tensor& volume) {
  if (volume.rank() != 3) throw DimensionError("extract_triplanar expects X×Y×Z, got " + shape_string(volume.shape()));
  const std::size_t X = volume.dim(0), Y = volume.dim(1), Z = volume.dim(2);
  const std::size_t x0 = X / 2, y0 = Y / 2, z0 = Z / 2;
  auto at = [&](std::size_t x, std::size_t y, std::size_t z) { return volume[(x * Y + y) * Z + z]; };
  Tensor a({Y, Z}), b({X, Z}), c({X, Y});
  for (std::size_t y = 0; y < Y; ++y)
    for (std::size_t z = 0; z < Z; ++z) a.at(y, z) = at(x0, y, z);
  for (std::size_t x = 0; x < X; ++x)
    for (std::size_t z = 0; z < Z; ++z) b.at(x, z) = at(x, y0, z);
  for (std::size_t x = 0; x < X; ++x)
    for (std::size_t y = 0; y < Y; ++y) c.at(x, y) = at(x, y, z0);
  return {a, b, c};
}

Tensor crop_pad(const Tensor& slice, std::size_t target) {
  if (slice.rank() != 2) throw DimensionError("crop_pad expects a 2-D slice");
  const std::size_t h = slice.rows(), w = slice.cols();
  Tensor out({target, target});
  // Signed offset of the source origin inside the output: positive when padding.
  const auto offset = [](std::size_t from, std::size_t to) {
    return from >= to ? -static_cast<std::ptrdiff_t>((from - to) / 2) : static_cast<std::ptrdiff_t>((to - from) / 2);
  };
  const std::ptrdiff_t oy = offset(h, target), ox = offset(w, target);
  for (std::size_t r = 0; r < target; ++r) {
    const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r) - oy;
    if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(h)) continue;
    for (std::size_t c = 0; c < target; ++c) {
      const std::ptrdiff_t sc = static_cast<std::ptrdiff_t>(c) - ox;
      if (sc >= 0 && sc < static_cast<std::ptrdiff_t>(w)) out.at(r, c) = slice.at(sr, sc);
    }
  }
  return out;
}

Tensor zscore(const Tensor& slice) {
  const double n = static_cast<double>(slice.size());
  double mean = 0.0;
  for (double v : slice.data()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : slice.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd >= 1e-12)) throw std::invalid_argument("zscore: constant slice cannot be normalized");
  Tensor out(slice.shape());
  for (std::size_t i = 0; i < slice.size(); ++i) out[i] = (slice[i] - mean) / sd;
  return out;
}

Tensor downsample_area(const Tensor& slice, std::size_t factor) {
  if (slice.rank() != 2 || factor == 0 || slice.rows() % factor || slice.cols() % factor) {
    throw DimensionError("downsample_area: " + shape_string(slice.shape()) + " is not divisible by " + std::to_string(factor));
  }
  const std::size_t h = slice.rows() / factor, w = slice.cols() / factor;
  Tensor out({h, w});
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t r = 0; r < slice.rows(); ++r)
    for (std::size_t c = 0; c < slice.cols(); ++c) out.at(r / factor, c / factor) += slice.at(r, c) * inv;
  return out;
}

Tensor prepare_input(const Tensor& slice, std::size_t model_size) {
  if (slice.rank() != 2 || model_size == 0 || slice.rows() % model_size) {
    throw DimensionError("prepare_input: cannot reduce " + shape_string(slice.shape()) + " to " + std::to_string(model_size));
  }
  return zscore(downsample_area(slice, slice.rows() / model_size));
}

}  // namespace pvit
