#include "oslolab/transfer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "oslolab/tape.hpp"

namespace oslolab {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

void TransferMethodParams::validate() const {
  check(mu >= 0, "transfer: mu must be >= 0");
  check(di_p >= 0 && di_p <= 1, "transfer: di_p must be in [0,1]");
  check(ti_radius >= 0, "transfer: ti_radius must be >= 0");
  check(admix_eta >= 0, "transfer: admix_eta must be >= 0");
  check(admix_count >= 1, "transfer: admix_count must be >= 1");
}

void SourceEnsemble::validate() const {
  check(!models.empty(), "ensemble: no source models");
  for (const ModelHandle* m : models) {
    check(m != nullptr, "ensemble: null model");
    check(m->arch.input_c == models[0]->arch.input_c &&
              m->arch.input_h == models[0]->arch.input_h &&
              m->arch.input_w == models[0]->arch.input_w &&
              m->arch.num_classes == models[0]->arch.num_classes,
          "ensemble: models disagree on input shape or class count");
  }
}

std::vector<int64_t> di_index_map(int64_t C, int64_t H, int64_t W, double p, Rng& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(C * H * W));
  const bool apply = p > 0 && rng.uniform() < p;
  if (!apply) {
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
    return idx;
  }
  const auto s_lo = static_cast<int64_t>(std::ceil(0.9 * static_cast<double>(std::min(H, W))));
  const int64_t s = rng.uniform_int(std::min(s_lo, std::min(H, W)), std::min(H, W));
  const int64_t oy = rng.uniform_int(0, H - s);
  const int64_t ox = rng.uniform_int(0, W - s);
  for (auto& v : idx) v = -1;  // zero padding by default
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < s; ++i) {
      const int64_t si = i * H / s;  // nearest-neighbor downscale
      for (int64_t j = 0; j < s; ++j) {
        const int64_t sj = j * W / s;
        idx[static_cast<size_t>((c * H + oy + i) * W + ox + j)] = (c * H + si) * W + sj;
      }
    }
  }
  return idx;
}

Tensor di_transform(const Tensor& x, double p, Rng& rng) {
  check(x.rank() == 3, "di_transform: expected [C,H,W], got " + x.shape_str());
  const std::vector<int64_t> idx = di_index_map(x.shape[0], x.shape[1], x.shape[2], p, rng);
  Tensor out = Tensor::zeros(x.shape);
  for (size_t i = 0; i < idx.size(); ++i)
    if (idx[i] >= 0) out.data[i] = x.data[static_cast<size_t>(idx[i])];
  return out;
}

Tensor ti_smooth(const Tensor& g, int64_t kernel_radius) {
  check(kernel_radius >= 0, "ti_smooth: radius must be >= 0");
  if (kernel_radius == 0) return g;
  check(g.rank() == 3, "ti_smooth: expected [C,H,W], got " + g.shape_str());
  const int64_t r = kernel_radius, K = 2 * r + 1;
  const double sigma = static_cast<double>(r) / std::sqrt(3.0);
  std::vector<double> kern(static_cast<size_t>(K * K));
  double sum = 0;
  for (int64_t i = -r; i <= r; ++i)
    for (int64_t j = -r; j <= r; ++j) {
      const double v = std::exp(-static_cast<double>(i * i + j * j) / (2 * sigma * sigma));
      kern[static_cast<size_t>((i + r) * K + (j + r))] = v;
      sum += v;
    }
  for (double& v : kern) v /= sum;

  const int64_t C = g.shape[0], H = g.shape[1], W = g.shape[2];
  Tensor out = Tensor::zeros(g.shape);
  for (int64_t c = 0; c < C; ++c) {
    const double* gc = &g.data[static_cast<size_t>(c * H * W)];
    double* oc = &out.data[static_cast<size_t>(c * H * W)];
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j) {
        double acc = 0;
        for (int64_t di = -r; di <= r; ++di) {
          const int64_t si = i + di;
          if (si < 0 || si >= H) continue;
          for (int64_t dj = -r; dj <= r; ++dj) {
            const int64_t sj = j + dj;
            if (sj < 0 || sj >= W) continue;
            acc += kern[static_cast<size_t>((di + r) * K + (dj + r))] * gc[si * W + sj];
          }
        }
        oc[i * W + j] = acc;
      }
  }
  return out;
}

std::vector<Tensor> admix_mix(const Tensor& x, const std::vector<const Tensor*>& others,
                              double eta, int64_t count, Rng& rng) {
  check(!others.empty(), "admix: empty other-class pool");
  check(eta >= 0, "admix: eta must be >= 0");
  check(count >= 1, "admix: count must be >= 1");
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    const Tensor* other = others[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(others.size()) - 1))];
    require_same_shape(x, *other, "admix");
    Tensor mixed = x;
    for (size_t j = 0; j < mixed.data.size(); ++j) mixed.data[j] += eta * other->data[j];
    clamp_inplace(mixed, 0.0, 1.0);
    out.push_back(std::move(mixed));
  }
  return out;
}

Tensor fgsm_step(const Tensor& x, const Tensor& g_effective, double alpha) {
  check(alpha > 0, "fgsm_step: alpha must be > 0");
  require_same_shape(x, g_effective, "fgsm_step");
  Tensor out = x;
  for (size_t i = 0; i < out.data.size(); ++i) {
    const double gv = g_effective.data[i];
    out.data[i] += alpha * (gv > 0 ? 1.0 : (gv < 0 ? -1.0 : 0.0));
  }
  clamp_inplace(out, 0.0, 1.0);
  return out;
}

Tensor mi_accumulate(const Tensor& momentum, const Tensor& g, double mu) {
  require_same_shape(momentum, g, "mi_accumulate");
  const double norm = std::max(l1_norm(g), 1e-12);
  Tensor out = momentum;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = mu * out.data[i] + g.data[i] / norm;
  return out;
}

Tensor ensemble_loss_grad(const SourceEnsemble& ens, const Tensor& x, int64_t y,
                          const TransferMethodParams& params, Rng& rng,
                          const std::vector<const Tensor*>& admix_pool) {
  ens.validate();
  params.validate();
  check(x.rank() == 3, "ensemble_loss_grad: expected [C,H,W], got " + x.shape_str());
  const int64_t C = x.shape[0], H = x.shape[1], W = x.shape[2];

  // forward copies: admix adds eta*other on-tape (clamp masks saturated pixels),
  // each copy gets its own DI draw
  std::vector<Tensor> offsets;
  if (params.admix) {
    check(!admix_pool.empty(), "admix: empty other-class pool");
    for (int64_t i = 0; i < params.admix_count; ++i) {
      const Tensor* other = admix_pool[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(admix_pool.size()) - 1))];
      require_same_shape(x, *other, "admix");
      offsets.push_back(scale(*other, params.admix_eta));
    }
  } else {
    offsets.push_back(Tensor::zeros(x.shape));
  }

  Tape t;
  Var xv = t.leaf(x, /*needs_grad=*/true);
  std::vector<Var> losses;
  for (const Tensor& off : offsets) {
    Var copy = t.clamp(t.add(xv, t.constant(off)), 0.0, 1.0);
    if (params.di) {
      std::vector<int64_t> idx = di_index_map(C, H, W, params.di_p, rng);
      copy = t.remap(copy, std::move(idx), x.shape);
    }
    Var batch = t.reshape(copy, {1, C, H, W});
    for (const ModelHandle* m : ens.models) {
      Var z = forward_on_tape(t, *m, batch);
      losses.push_back(t.cross_entropy_logits(z, {y}));
    }
  }
  Var total = losses[0];
  for (size_t i = 1; i < losses.size(); ++i) total = t.add(total, losses[i]);
  Var loss = t.scale(total, 1.0 / static_cast<double>(losses.size()));
  t.backward(loss);
  Tensor g = t.grad(xv);
  if (params.ti) g = ti_smooth(g, params.ti_radius);
  return g;
}

}  // namespace oslolab
