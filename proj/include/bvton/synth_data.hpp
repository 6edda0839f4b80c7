#pragma once

// Procedural "fashion photo" generator with exact ground truth: layouts,
// part masks, pose, an in-shop rendering of the same top and the analytic
// person -> in-shop flow.

#include "bvton/types.hpp"
#include "bvton/warp.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bvton::data {

enum Label : std::uint8_t {
  kBackground = 0,
  kHair = 1,
  kFace = 2,
  kTorsoSkin = 3,
  kUpper = 4,
  kBottom = 5,
  kLeftArm = 6,  // image-left
  kRightArm = 7,
};
inline constexpr int kClasses = 8;
inline constexpr int kJoints = 18;
inline constexpr int kParts = 3;  // torso, left sleeve, right sleeve
inline constexpr double kHeatmapSigma = 3.0;

const char* label_name(int label);
/// 8-bit RGB palette used for layout visualization.
std::array<std::uint8_t, 3> palette_color(int label);

enum class Mode { Paired, Unpaired };
enum class Style { Tucked, Untucked, Overlong, Asymmetric };

const char* to_string(Mode m);
const char* to_string(Style s);
Mode parse_mode(const std::string& s);
Style parse_style(const std::string& s);

struct Keypoint {
  double x = 0, y = 0;
  bool visible = false;
};

struct SampleRecord {
  std::string id;
  Mode mode = Mode::Unpaired;
  Style style = Style::Untucked;
  std::uint64_t seed = 0;

  TensorF person;              // (1,3,H,W) storage range
  LabelMap labels;             // H x W class indices
  std::vector<Keypoint> pose;  // kJoints entries, COCO order
  TensorF heatmaps;            // (1,18,H,W)
  TensorF part_masks;          // (1,3,H,W) on the person canvas

  bool has_inshop = false;
  TensorF inshop;        // (1,3,H,W) on the in-shop canvas, white background
  TensorF inshop_mask;   // (1,1,H,W)
  TensorF inshop_parts;  // (1,3,H,W)
  TensorF gt_flow;       // (1,2,H,W) person -> in-shop back-warp offsets
  warp::ControlGrid theta;  // in-shop points (source) to person points (target)

  int height() const { return person.h(); }
  int width() const { return person.w(); }

  TensorF layout() const;          // (1,K,H,W) one-hot
  TensorF mask(int label) const;   // (1,1,H,W)
  TensorF upper_mask() const { return mask(kUpper); }
  TensorF part_mask(int part) const;
  TensorF inshop_part(int part) const;
  /// In-shop clothes with background removed: inshop * inshop_mask.
  TensorF inshop_clothes() const;
  /// Union of hair and bottom-clothes masks (the occluders of the top).
  TensorF occlusion_mask() const;
};

/// Validates resolution and renders one sample deterministically from `seed`.
/// `style` forces a wearing style; otherwise it is drawn from the seed.
SampleRecord generate_sample(std::uint64_t seed, Mode mode, int height = 128, int width = 96,
                             std::optional<Style> style = std::nullopt);

std::string sample_id(Mode mode, std::uint64_t seed);

TensorF one_hot(const LabelMap& labels, int classes = kClasses);
LabelMap argmax_labels(const TensorF& layout);
TensorF pose_heatmaps(const std::vector<Keypoint>& pose, int height, int width, double sigma = kHeatmapSigma);

struct ManifestEntry {
  std::string id;
  Mode mode;
  Style style;
  std::uint64_t seed;
  int height, width;
  std::string dir;
};

void write_sample(const SampleRecord& rec, const std::filesystem::path& sample_dir);
SampleRecord read_sample(const ManifestEntry& entry, const std::filesystem::path& root);

/// Renders samples base_seed .. base_seed + n - 1 into out_dir (appending to an
/// existing manifest) and returns the new manifest entries. A non-empty
/// `styles` forces sample i to styles[i % styles.size()].
std::vector<ManifestEntry> write_dataset(int n, Mode mode, const std::filesystem::path& out_dir,
                                         std::uint64_t base_seed, int height = 128, int width = 96,
                                         const std::vector<Style>& styles = {});
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);
std::vector<SampleRecord> load_dataset(const std::filesystem::path& dir);

/// Union of binary masks.
TensorF mask_union(const TensorF& a, const TensorF& b);

}  // namespace bvton::data
