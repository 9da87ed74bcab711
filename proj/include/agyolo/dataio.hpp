#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "agyolo/tensor.hpp"
#include "agyolo/yolo.hpp"

namespace agyolo {

// ---- images ----

// Binary PPM (P6, maxval 255) -> (1, 3, h, w) tensor with values in [0, 1].
TensorF load_ppm(const std::string& path);
// Values are clamped to [0, 1] and rounded to 8 bits.
void save_ppm(const TensorF& image, const std::string& path);

// Bilinear resampling with half-pixel centers and edge clamping.
TensorF resize_bilinear(const TensorF& image, int out_h, int out_w);
// Stretch (no letterbox) to dim x dim. Labels are normalized, so unchanged.
TensorF resize_stretch(const TensorF& image, int dim);

// ---- datasets ----

struct DatasetItem {
  std::string image;  // resolved path
  std::vector<GroundTruth> objects;
};

// "class cx cy w h" per line. A missing file means no objects.
std::vector<GroundTruth> load_labels(const std::string& path);
void save_labels(const std::string& path, const std::vector<GroundTruth>& objects);

// Label path of an image: extension replaced by ".txt".
std::string label_path_for(const std::string& image_path);

// One image path per line; relative paths resolve against the list's directory.
std::vector<DatasetItem> load_dataset(const std::string& list_path);

// Lazily decoded images of a dataset, kept in memory after first use.
class ImageStore {
 public:
  ImageStore() = default;
  explicit ImageStore(std::vector<DatasetItem> items) : items_(std::move(items)), images_(items_.size()) {}

  [[nodiscard]] std::size_t size() const { return items_.size(); }
  [[nodiscard]] const std::vector<DatasetItem>& items() const { return items_; }
  [[nodiscard]] const DatasetItem& item(std::size_t i) const { return items_.at(i); }
  const TensorF& image(std::size_t i);

 private:
  std::vector<DatasetItem> items_;
  std::vector<TensorF> images_;
};

// ---- augmentation ----

struct AugmentPolicy {
  double jitter = 0.3;      // crop offset per side, as a fraction of the image size
  double flip = 0.5;        // horizontal flip probability
  double hue = 0.1;         // shift in [-hue, hue] of the hue circle
  double saturation = 1.5;  // scale in [1/s, s]
  double exposure = 1.5;    // scale in [1/e, e]

  static AugmentPolicy identity() { return {0, 0, 0, 1, 1}; }
  void validate() const;
};

struct Augmented {
  TensorF image;
  std::vector<GroundTruth> objects;
};

// Random crop within the jitter band (areas outside the image are filled with
// gray), resampled to out_h x out_w (0 keeps the input size), optional mirror,
// and HSV perturbation. Boxes are clipped to the crop; those left with area
// below 1e-4 are dropped.
Augmented augment(const TensorF& image, const std::vector<GroundTruth>& objects, const AugmentPolicy& policy,
                  std::uint64_t seed, int out_h = 0, int out_w = 0);

// ---- synthetic corpus ----

struct SynthOptions {
  int size = 192;  // square image side
  double min_radius = 8;
  double max_radius = 24;
  int min_objects = 1;
  int max_objects = 12;
};

struct SynthLists {
  std::string train;
  std::string test;
  int train_count = 0;
  int test_count = 0;
};

// Green textured fields with non-overlapping bright radial discs. Writes
// images/NNNNNN.ppm with labels next to them, plus train.txt (first
// floor(3/4 count) images) and test.txt. Image i is drawn from seed ^ i.
SynthLists gen_synthetic(int count, std::uint64_t seed, const std::string& out_dir, const SynthOptions& opts = {});

// Renders one synthetic image in memory (used by gen_synthetic).
Augmented render_synthetic(std::uint64_t seed, const SynthOptions& opts = {});

}  // namespace agyolo
