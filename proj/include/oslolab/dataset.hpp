#ifndef OSLOLAB_DATASET_HPP
#define OSLOLAB_DATASET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "oslolab/rng.hpp"
#include "oslolab/tensor.hpp"

namespace oslolab {

struct LabeledDataset {
  std::vector<Tensor> images;  // each [1,H,W], values in [0,1]
  std::vector<int64_t> labels;
  int64_t num_classes = 0;
  std::string name;

  int64_t size() const { return static_cast<int64_t>(images.size()); }
  void validate() const;  // throws on label range / value range / shape drift
};

/// Class-conditional generator: per-class smooth template + per-sample smooth
/// field, small rotation/shift, pixel noise. Tuned so a cnn-a trained on 1000
/// samples memorizes (high train acc) but generalizes with a visible gap.
struct SynthSpec {
  int64_t classes = 10;     // in [4,10]
  int64_t per_class = 300;
  int64_t height = 16;
  int64_t width = 16;
  double field_weight = 0.58;
  double noise_sigma = 0.08;
  double max_rot_deg = 10.0;
  int64_t max_shift = 1;
  // Fraction of samples whose label is flipped to a random other class.
  // Mislabeled points are memorization probes: only a model that fits them
  // can be caught by a membership test at strict FPR.
  double label_noise = 0.08;
};

LabeledDataset synth_dataset(const SynthSpec& spec, uint64_t seed);

/// IDX import/export (big-endian; magic 0x00000803 images / 0x00000801 labels).
LabeledDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);
void save_idx_dataset(const LabeledDataset& data, const std::string& images_path,
                      const std::string& labels_path);

struct SplitPlan {
  std::vector<int64_t> target_train;
  std::vector<int64_t> surrogate_train;
  std::vector<int64_t> eval_members;     // subset of target_train
  std::vector<int64_t> eval_nonmembers;  // disjoint from both training sets

  void validate(int64_t dataset_size) const;  // throws on any violation
  std::string to_json() const;
  static SplitPlan from_json(const std::string& text);
};

struct SplitSizes {
  int64_t target_train = 1000;
  int64_t surrogate_train = 1000;
  int64_t eval_per_side = 200;
};

SplitPlan make_split(const LabeledDataset& data, const SplitSizes& sizes, uint64_t seed);

/// Augmentations (membership baselines + robustness probes). Nearest-neighbor
/// rotation about the image center; translate fills with zeros. Outputs stay
/// in [0,1].
Tensor augment_rotate(const Tensor& img, double degrees);
Tensor augment_translate(const Tensor& img, int64_t dy, int64_t dx);

/// Stack selected images into one [B,1,H,W] batch.
Tensor stack_batch(const LabeledDataset& data, const std::vector<int64_t>& idx);
std::vector<int64_t> gather_labels(const LabeledDataset& data, const std::vector<int64_t>& idx);

/// Clipped-window box mean (window shrinks at borders), used by the generator.
Tensor box_blur(const Tensor& img, int64_t radius);

}  // namespace oslolab

#endif  // OSLOLAB_DATASET_HPP
