#ifndef OSLOLAB_MODELS_HPP
#define OSLOLAB_MODELS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "oslolab/dataset.hpp"
#include "oslolab/rng.hpp"
#include "oslolab/tape.hpp"
#include "oslolab/tensor.hpp"

namespace oslolab {

/// Five architecture families keep target/source/validation models pairwise
/// disjoint: mlp (2 hidden layers), cnn-a (2 conv + fc), cnn-b (3 conv, wide),
/// cnn-c (3 conv + dropout head), cnn-d (2 conv + global-average pool).
struct ArchSpec {
  std::string family = "cnn-a";
  double dropout_rate = 0.0;  // applied to the penultimate activation if > 0
  int64_t input_c = 1, input_h = 16, input_w = 16;
  int64_t num_classes = 10;

  void validate() const;  // throws on unknown family / bad rates
};

struct TrainConfig {
  std::string optimizer = "adam";  // adam | sgd-momentum
  double learning_rate = 1e-3;
  int64_t epochs = 60;
  int64_t batch_size = 128;
  double weight_decay_l2 = 1e-6;
  double weight_decay_l1 = 0.0;
  uint64_t seed = 1;

  void validate() const;
};

struct ModelHandle {
  ArchSpec arch;
  std::vector<Tensor> weights;
  std::vector<std::string> weight_names;
  TrainConfig meta;
  std::vector<double> loss_history;  // mean train loss per epoch
};

/// Fresh weights (Kaiming-uniform fan-in for matrices/filters, zero biases).
ModelHandle init_model(const ArchSpec& arch, uint64_t seed);

/// Update rule shared by the plain and defended trainers: adds weight decay to
/// the incoming gradients, then applies one Adam (bias-corrected) or
/// SGD-momentum step in place.
struct OptimizerState {
  explicit OptimizerState(const ModelHandle& m);
  void apply(ModelHandle& m, const TrainConfig& cfg, std::vector<Tensor>& grads);

 private:
  std::vector<Tensor> mom_, vel_;
  int64_t step_ = 0;
};

/// Full training loop. Bit-reproducible for fixed (arch, data, cfg). Throws
/// std::runtime_error on non-finite loss.
ModelHandle train(const ArchSpec& arch, const LabeledDataset& data, const TrainConfig& cfg);
ModelHandle train(const ArchSpec& arch, const LabeledDataset& data,
                  const std::vector<int64_t>& subset, const TrainConfig& cfg);

/// Record the model's forward pass on an existing tape. `x` is the caller's
/// input var ([B,C,H,W]; mlp accepts the same and flattens). When param_vars
/// is given it receives the weight leaves (needs_grad = params_need_grad) so
/// callers can read their gradients. Dropout fires only when train && rng.
Var forward_on_tape(Tape& t, const ModelHandle& m, Var x, bool train = false,
                    Rng* dropout_rng = nullptr, std::vector<Var>* param_vars = nullptr,
                    bool params_need_grad = false);

/// No-grad conveniences. x: [B,C,H,W] or a single [C,H,W] image.
Tensor logits(const ModelHandle& m, const Tensor& x);            // [B,classes] or [classes]
int64_t predict_label(const ModelHandle& m, const Tensor& x);    // lowest index wins ties
std::vector<int64_t> predict_labels(const ModelHandle& m, const Tensor& batch);
/// Softmax probability of class y for a single image.
double class_confidence(const ModelHandle& m, const Tensor& x, int64_t y);
double accuracy(const ModelHandle& m, const LabeledDataset& data,
                const std::vector<int64_t>& subset);

int64_t argmax_lowest(const double* row, int64_t n);

/// Versioned binary model file with trailing FNV-1a checksum.
void save_model(const ModelHandle& m, const std::string& path);
ModelHandle load_model(const std::string& path);

double weight_l2_norm(const ModelHandle& m);

}  // namespace oslolab

#endif  // OSLOLAB_MODELS_HPP
