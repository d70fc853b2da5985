#ifndef OSLOLAB_TRANSFER_HPP
#define OSLOLAB_TRANSFER_HPP

#include <cstdint>
#include <vector>

#include "oslolab/models.hpp"
#include "oslolab/rng.hpp"
#include "oslolab/tensor.hpp"

namespace oslolab {

/// Gradient-enhancement methods composable inside the staged attack.
/// Fixed composition order: DI/Admix act on the forward pass, TI smooths the
/// ensemble gradient, MI momentum accumulation comes last.
struct TransferMethodParams {
  bool mi = false, di = false, ti = false, admix = false;
  double mu = 1.0;          // momentum decay (MI)
  double di_p = 0.5;        // probability of applying the DI transform
  int64_t ti_radius = 3;    // Gaussian kernel radius; sigma = radius/sqrt(3)
  double admix_eta = 0.2;   // other-image mixing strength
  int64_t admix_count = 3;  // mixed copies per gradient evaluation

  void validate() const;
};

struct SourceEnsemble {
  std::vector<const ModelHandle*> models;
  void validate() const;  // non-empty, consistent shapes/classes
};

struct AttackState {
  Tensor x_current;  // [C,H,W]
  Tensor momentum;   // same shape, zeroed at each sub-procedure start
  Tensor origin;     // the unperturbed x
  int64_t label = 0;
};

/// Mean cross-entropy gradient w.r.t. x over the ensemble (and over admix
/// copies when enabled); DI transforms the forward pass with fresh randomness
/// per call. admix_pool holds candidate other-class images ([C,H,W] each).
Tensor ensemble_loss_grad(const SourceEnsemble& ens, const Tensor& x, int64_t y,
                          const TransferMethodParams& params, Rng& rng,
                          const std::vector<const Tensor*>& admix_pool = {});

/// mu*momentum + g/max(||g||_1, 1e-12)
Tensor mi_accumulate(const Tensor& momentum, const Tensor& g, double mu);

/// With probability p: nearest-neighbor downscale to s in [ceil(0.9*W), W],
/// zero-pad back at a random offset. Returns the gather index map (-1 = pad)
/// so callers can differentiate through it; identity map when not applied.
std::vector<int64_t> di_index_map(int64_t C, int64_t H, int64_t W, double p, Rng& rng);
Tensor di_transform(const Tensor& x, double p, Rng& rng);

/// Convolve a gradient with a normalized Gaussian kernel (zero padding).
Tensor ti_smooth(const Tensor& g, int64_t kernel_radius);

/// x + eta*other for each chosen other; clamped to [0,1].
std::vector<Tensor> admix_mix(const Tensor& x, const std::vector<const Tensor*>& others,
                              double eta, int64_t count, Rng& rng);

/// x + alpha*sign(g), clamped to the [0,1] box.
Tensor fgsm_step(const Tensor& x, const Tensor& g_effective, double alpha);

}  // namespace oslolab

#endif  // OSLOLAB_TRANSFER_HPP
