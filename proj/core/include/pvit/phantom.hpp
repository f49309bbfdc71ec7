#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvit/stats.hpp"
#include "pvit/tensor.hpp"

namespace pvit {

using Mask = std::vector<std::uint8_t>;

enum class Plane { axial, coronal, sagittal };
inline constexpr std::array<Plane, 3> kPlanes{Plane::axial, Plane::coronal, Plane::sagittal};
const char* plane_name(Plane plane);
Plane parse_plane(std::string_view name);

struct PhantomSpec {
  std::string id;
  double severity = 1.0;   // ventricle scale v >= 1
  double thinning = 0.0;   // cortical band reduction t in [0, 1)
  double noise_sigma = 0.05;
  int label = 0;

  /// Throws std::invalid_argument outside v >= 1, 0 <= t < 1, sigma >= 0.
  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

/// Parameter ranges for each class. Disjoint by construction.
struct Regime {
  double case_v_lo, case_v_hi, case_t_lo, case_t_hi;
  double control_v_lo, control_v_hi, control_t_lo, control_t_hi;

  static Regime standard();
  /// Narrows the case ventricle range to [1.15, 1.3].
  static Regime hard();
};

struct LabeledSlice {
  std::string subject;
  Plane plane = Plane::axial;
  int label = 0;
  Tensor pixels;  // S×S
  Mask lesion;    // S×S, empty region for controls
};

/// Analytic scene geometry for one plane; all lengths in pixels, origin at the image center.
struct PhantomGeometry {
  double size = 224;
  double brain_a = 0, brain_b = 0;  // brain semi-axes (x, y)
  double vent_cx = 0, vent_cy = 0;  // right ventricle center; left one mirrored in x
  double vent_a = 0, vent_b = 0;    // base ventricle semi-axes at v = 1

  /// Normalized elliptical radius of pixel (row, col) within the brain.
  double brain_radius(std::size_t row, std::size_t col) const;
  bool in_ventricle(std::size_t row, std::size_t col, double v) const;
  bool in_band(std::size_t row, std::size_t col, double t) const;
};

PhantomGeometry phantom_geometry(const std::string& subject, Plane plane, std::uint64_t dataset_seed,
                                 std::size_t size);

/// Three planes of one subject. Deterministic in (dataset seed, subject id, plane).
std::vector<LabeledSlice> generate_subject(const PhantomSpec& spec, std::uint64_t dataset_seed,
                                           std::size_t size = 224);

/// Specs drawn uniformly within each regime; cases first, ids "bat-0001" / "ctl-0001".
std::vector<PhantomSpec> sample_specs(std::size_t n_cases, std::size_t n_controls, std::uint64_t dataset_seed,
                                      const Regime& regime = Regime::standard());

struct SliceRecord {
  Plane plane = Plane::axial;
  std::string image;  // path relative to the manifest directory
  std::string mask;
};

struct SubjectRecord {
  PhantomSpec spec;
  std::vector<SliceRecord> slices;
};

struct DatasetManifest {
  std::string schema = "pvit-manifest-v1";
  std::uint64_t seed = 0;
  std::size_t image_size = 224;
  std::vector<SubjectRecord> subjects;
  std::optional<FoldSplit> folds;

  const SubjectRecord& subject(const std::string& id) const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// Writes slices, masks and manifest.json under out_dir, with a stratified grouped 5-fold split.
DatasetManifest generate_dataset(std::size_t n_cases, std::size_t n_controls, std::uint64_t dataset_seed,
                                 const std::filesystem::path& out_dir, std::size_t size = 224,
                                 const Regime& regime = Regime::standard(), std::size_t folds = 5);

std::filesystem::path manifest_path(const std::filesystem::path& dataset_dir);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Validates the schema and that every referenced file exists with the declared size.
DatasetManifest read_manifest(const std::filesystem::path& path);
/// Reads every slice of the manifest, in subject then plane order.
std::vector<LabeledSlice> load_slices(const DatasetManifest& manifest, const std::filesystem::path& dataset_dir);

/// Raw little-endian f32, row-major.
void write_f32(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected_count);

/// Mid-index planes of an X×Y×Z volume: fixing x (Y×Z), y (X×Z), z (X×Y).
std::array<Tensor, 3> extract_triplanar(const Tensor& volume);
/// Center crop or symmetric zero pad to S×S; odd remainders go bottom/right.
Tensor crop_pad(const Tensor& slice, std::size_t target);
/// (x - mean) / population std. Throws std::invalid_argument when std < 1e-12.
Tensor zscore(const Tensor& slice);
/// Block-mean downsampling of an S×S slice by an integer factor.
Tensor downsample_area(const Tensor& slice, std::size_t factor);
/// Model input: area downsampling to model_size (which must divide the slice size), then zscore.
Tensor prepare_input(const Tensor& slice, std::size_t model_size);

}  // namespace pvit
