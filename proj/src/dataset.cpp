#include "oslolab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace oslolab {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// img is [1,H,W] or [H,W]; returns (H, W, data offset 0)
std::pair<int64_t, int64_t> hw_of(const Tensor& img) {
  if (img.rank() == 2) return {img.shape[0], img.shape[1]};
  check(img.rank() == 3 && img.shape[0] == 1,
        "expected [H,W] or [1,H,W] image, got " + img.shape_str());
  return {img.shape[1], img.shape[2]};
}

Tensor normalized_unit(const Tensor& t) {
  double lo = t.data[0], hi = t.data[0];
  for (double v : t.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor out = t;
  const double span = std::max(hi - lo, 1e-9);
  for (double& v : out.data) v = (v - lo) / span;
  return out;
}

Tensor smooth_field(Rng& rng, int64_t H, int64_t W, int64_t radius) {
  Tensor t = Tensor::zeros({H, W});
  for (double& v : t.data) v = rng.uniform();
  return normalized_unit(box_blur(box_blur(t, radius), radius));
}

}  // namespace

Tensor box_blur(const Tensor& img, int64_t radius) {
  auto [H, W] = hw_of(img);
  check(radius >= 0, "box_blur: radius must be >= 0");
  Tensor out = Tensor::zeros(img.shape);
  for (int64_t i = 0; i < H; ++i) {
    const int64_t i0 = std::max<int64_t>(0, i - radius), i1 = std::min(H, i + radius + 1);
    for (int64_t j = 0; j < W; ++j) {
      const int64_t j0 = std::max<int64_t>(0, j - radius), j1 = std::min(W, j + radius + 1);
      double s = 0;
      for (int64_t a = i0; a < i1; ++a)
        for (int64_t b = j0; b < j1; ++b) s += img.data[static_cast<size_t>(a * W + b)];
      out.data[static_cast<size_t>(i * W + j)] =
          s / static_cast<double>((i1 - i0) * (j1 - j0));
    }
  }
  return out;
}

void LabeledDataset::validate() const {
  check(images.size() == labels.size(), "dataset: image/label count mismatch");
  check(num_classes > 0, "dataset: num_classes must be positive");
  for (size_t i = 0; i < images.size(); ++i) {
    check(labels[i] >= 0 && labels[i] < num_classes,
          "dataset: label out of range at index " + std::to_string(i));
    check(images[i].shape == images[0].shape, "dataset: shape drift at index " + std::to_string(i));
    for (double v : images[i].data)
      check(v >= 0.0 && v <= 1.0, "dataset: pixel outside [0,1] at index " + std::to_string(i));
  }
}

Tensor augment_rotate(const Tensor& img, double degrees) {
  auto [H, W] = hw_of(img);
  const double cy = (static_cast<double>(H) - 1) / 2.0, cx = (static_cast<double>(W) - 1) / 2.0;
  const double th = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  Tensor out = Tensor::zeros(img.shape);
  for (int64_t i = 0; i < H; ++i) {
    for (int64_t j = 0; j < W; ++j) {
      const double yi = static_cast<double>(i) - cy, xj = static_cast<double>(j) - cx;
      const auto si = static_cast<int64_t>(std::llround(c * yi + s * xj + cy));
      const auto sj = static_cast<int64_t>(std::llround(-s * yi + c * xj + cx));
      if (si >= 0 && si < H && sj >= 0 && sj < W)
        out.data[static_cast<size_t>(i * W + j)] = img.data[static_cast<size_t>(si * W + sj)];
    }
  }
  clamp_inplace(out, 0.0, 1.0);
  return out;
}

Tensor augment_translate(const Tensor& img, int64_t dy, int64_t dx) {
  auto [H, W] = hw_of(img);
  check(std::llabs(dy) < H && std::llabs(dx) < W, "translate: shift exceeds image size");
  Tensor out = Tensor::zeros(img.shape);
  for (int64_t i = 0; i < H; ++i) {
    for (int64_t j = 0; j < W; ++j) {
      const int64_t si = i - dy, sj = j - dx;
      if (si >= 0 && si < H && sj >= 0 && sj < W)
        out.data[static_cast<size_t>(i * W + j)] = img.data[static_cast<size_t>(si * W + sj)];
    }
  }
  return out;
}

LabeledDataset synth_dataset(const SynthSpec& spec, uint64_t seed) {
  check(spec.classes >= 4 && spec.classes <= 10, "synth: classes must be in [4,10]");
  check(spec.per_class > 0 && spec.height > 0 && spec.width > 0, "synth: sizes must be positive");
  check(spec.field_weight >= 0 && spec.field_weight <= 1, "synth: field_weight in [0,1]");
  check(spec.noise_sigma >= 0, "synth: noise_sigma must be >= 0");
  const int64_t H = spec.height, W = spec.width, C = spec.classes;

  std::vector<Tensor> templates;
  templates.reserve(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) {
    Rng trng(derive_seed(seed, "synth-template-" + std::to_string(c)));
    templates.push_back(smooth_field(trng, H, W, 2));
  }

  Rng rng(derive_seed(seed, "synth-samples"));
  LabeledDataset ds;
  ds.num_classes = C;
  ds.name = "synth";
  const int64_t total = C * spec.per_class;
  ds.images.reserve(static_cast<size_t>(total));
  ds.labels.reserve(static_cast<size_t>(total));
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t k = 0; k < spec.per_class; ++k) {
      Tensor field = smooth_field(rng, H, W, 2);
      Tensor img = Tensor::zeros({H, W});
      for (size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = (1 - spec.field_weight) * templates[static_cast<size_t>(c)].data[i] +
                      spec.field_weight * field.data[i];
      img = augment_rotate(img, rng.uniform(-spec.max_rot_deg, spec.max_rot_deg));
      img = augment_translate(img, rng.uniform_int(-spec.max_shift, spec.max_shift),
                              rng.uniform_int(-spec.max_shift, spec.max_shift));
      for (double& v : img.data) v += spec.noise_sigma * rng.normal();
      clamp_inplace(img, 0.0, 1.0);
      ds.images.push_back(Tensor({1, H, W}, std::move(img.data)));
      ds.labels.push_back(c);
    }
  }
  // one global shuffle so class blocks don't align with split boundaries
  Rng prng(derive_seed(seed, "synth-perm"));
  const std::vector<int64_t> perm = prng.permutation(total);
  LabeledDataset shuffled;
  shuffled.num_classes = C;
  shuffled.name = ds.name;
  shuffled.images.reserve(ds.images.size());
  shuffled.labels.reserve(ds.labels.size());
  for (int64_t i = 0; i < total; ++i) {
    shuffled.images.push_back(std::move(ds.images[static_cast<size_t>(perm[static_cast<size_t>(i)])]));
    shuffled.labels.push_back(ds.labels[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
  }
  if (spec.label_noise > 0) {
    // Exact count, not Bernoulli, so the mislabeled share is stable per seed.
    Rng nrng(derive_seed(seed, "label-noise"));
    const std::vector<int64_t> order = nrng.permutation(total);
    const int64_t flips = static_cast<int64_t>(std::llround(spec.label_noise * static_cast<double>(total)));
    for (int64_t i = 0; i < flips; ++i) {
      int64_t& y = shuffled.labels[static_cast<size_t>(order[static_cast<size_t>(i)])];
      y = (y + 1 + nrng.uniform_int(0, C - 2)) % C;
    }
  }
  return shuffled;
}

namespace {

uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  check(in.good(), "idx: truncated " + what);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

LabeledDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imf(images_path, std::ios::binary);
  check(imf.is_open(), "idx: cannot open " + images_path);
  check(read_be32(imf, "image magic") == 0x00000803u, "idx: bad image magic in " + images_path);
  const uint32_t n = read_be32(imf, "count");
  const uint32_t H = read_be32(imf, "rows"), W = read_be32(imf, "cols");
  check(H > 0 && W > 0 && n > 0, "idx: degenerate image dims");
  std::vector<unsigned char> buf(static_cast<size_t>(n) * H * W);
  imf.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  check(imf.gcount() == static_cast<std::streamsize>(buf.size()), "idx: truncated image data");

  std::ifstream lbf(labels_path, std::ios::binary);
  check(lbf.is_open(), "idx: cannot open " + labels_path);
  check(read_be32(lbf, "label magic") == 0x00000801u, "idx: bad label magic in " + labels_path);
  const uint32_t ln = read_be32(lbf, "label count");
  check(ln == n, "idx: label count " + std::to_string(ln) + " != image count " + std::to_string(n));
  std::vector<unsigned char> lab(n);
  lbf.read(reinterpret_cast<char*>(lab.data()), n);
  check(lbf.gcount() == static_cast<std::streamsize>(n), "idx: truncated label data");

  LabeledDataset ds;
  ds.name = "idx";
  int64_t maxl = 0;
  for (uint32_t i = 0; i < n; ++i) {
    std::vector<double> px(static_cast<size_t>(H) * W);
    for (size_t j = 0; j < px.size(); ++j)
      px[j] = static_cast<double>(buf[static_cast<size_t>(i) * H * W + j]) / 255.0;
    ds.images.emplace_back(std::vector<int64_t>{1, H, W}, std::move(px));
    ds.labels.push_back(lab[i]);
    maxl = std::max<int64_t>(maxl, lab[i]);
  }
  ds.num_classes = maxl + 1;
  return ds;
}

void save_idx_dataset(const LabeledDataset& data, const std::string& images_path,
                      const std::string& labels_path) {
  check(!data.images.empty(), "idx: empty dataset");
  auto [H, W] = hw_of(data.images[0]);
  std::ofstream imf(images_path, std::ios::binary);
  check(imf.is_open(), "idx: cannot write " + images_path);
  write_be32(imf, 0x00000803u);
  write_be32(imf, static_cast<uint32_t>(data.images.size()));
  write_be32(imf, static_cast<uint32_t>(H));
  write_be32(imf, static_cast<uint32_t>(W));
  for (const Tensor& img : data.images) {
    for (double v : img.data) {
      const double q = std::clamp(v, 0.0, 1.0) * 255.0;
      const auto byte = static_cast<unsigned char>(std::llround(q));
      imf.write(reinterpret_cast<const char*>(&byte), 1);
    }
  }
  std::ofstream lbf(labels_path, std::ios::binary);
  check(lbf.is_open(), "idx: cannot write " + labels_path);
  write_be32(lbf, 0x00000801u);
  write_be32(lbf, static_cast<uint32_t>(data.labels.size()));
  for (int64_t l : data.labels) {
    const auto byte = static_cast<unsigned char>(l);
    lbf.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

void SplitPlan::validate(int64_t dataset_size) const {
  std::set<int64_t> tset(target_train.begin(), target_train.end());
  std::set<int64_t> sset(surrogate_train.begin(), surrogate_train.end());
  check(tset.size() == target_train.size(), "split: duplicate target-train index");
  check(sset.size() == surrogate_train.size(), "split: duplicate surrogate-train index");
  for (int64_t i : tset)
    check(i >= 0 && i < dataset_size, "split: target index out of range");
  for (int64_t i : sset) {
    check(i >= 0 && i < dataset_size, "split: surrogate index out of range");
    check(tset.find(i) == tset.end(),
          "split: index " + std::to_string(i) + " in both target and surrogate train");
  }
  check(eval_members.size() == eval_nonmembers.size(),
        "split: eval panel must be balanced, got " + std::to_string(eval_members.size()) + "+" +
            std::to_string(eval_nonmembers.size()));
  for (int64_t i : eval_members)
    check(tset.find(i) != tset.end(), "split: eval member " + std::to_string(i) + " not in target-train");
  for (int64_t i : eval_nonmembers) {
    check(i >= 0 && i < dataset_size, "split: nonmember index out of range");
    check(tset.find(i) == tset.end(),
          "split: eval nonmember " + std::to_string(i) + " is in target-train");
  }
}

std::string SplitPlan::to_json() const {
  nlohmann::json j;
  j["target_train"] = target_train;
  j["surrogate_train"] = surrogate_train;
  j["eval_members"] = eval_members;
  j["eval_nonmembers"] = eval_nonmembers;
  return j.dump(2);
}

SplitPlan SplitPlan::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SplitPlan p;
  p.target_train = j.at("target_train").get<std::vector<int64_t>>();
  p.surrogate_train = j.at("surrogate_train").get<std::vector<int64_t>>();
  p.eval_members = j.at("eval_members").get<std::vector<int64_t>>();
  p.eval_nonmembers = j.at("eval_nonmembers").get<std::vector<int64_t>>();
  return p;
}

SplitPlan make_split(const LabeledDataset& data, const SplitSizes& sizes, uint64_t seed) {
  const int64_t n = data.size();
  check(sizes.target_train > 0 && sizes.surrogate_train > 0 && sizes.eval_per_side > 0,
        "split: sizes must be positive");
  check(sizes.target_train + sizes.surrogate_train + sizes.eval_per_side <= n,
        "split: need " + std::to_string(sizes.target_train + sizes.surrogate_train +
                                        sizes.eval_per_side) +
            " samples, dataset has " + std::to_string(n));
  check(sizes.eval_per_side <= sizes.target_train, "split: eval panel larger than target-train");

  Rng rng(derive_seed(seed, "split"));
  const std::vector<int64_t> perm = rng.permutation(n);
  SplitPlan p;
  int64_t at = 0;
  p.target_train.assign(perm.begin(), perm.begin() + sizes.target_train);
  at += sizes.target_train;
  p.surrogate_train.assign(perm.begin() + at, perm.begin() + at + sizes.surrogate_train);
  at += sizes.surrogate_train;
  // nonmembers come from the unused remainder: disjoint from both training sets
  p.eval_nonmembers.assign(perm.begin() + at, perm.begin() + at + sizes.eval_per_side);
  const std::vector<int64_t> mperm = rng.permutation(sizes.target_train);
  for (int64_t i = 0; i < sizes.eval_per_side; ++i)
    p.eval_members.push_back(p.target_train[static_cast<size_t>(mperm[static_cast<size_t>(i)])]);
  p.validate(n);
  return p;
}

Tensor stack_batch(const LabeledDataset& data, const std::vector<int64_t>& idx) {
  check(!idx.empty(), "stack_batch: empty index list");
  const Tensor& first = data.images.at(static_cast<size_t>(idx[0]));
  std::vector<int64_t> shape = {static_cast<int64_t>(idx.size())};
  shape.insert(shape.end(), first.shape.begin(), first.shape.end());
  Tensor out = Tensor::zeros(shape);
  const int64_t stride = first.numel();
  for (size_t i = 0; i < idx.size(); ++i) {
    const Tensor& img = data.images.at(static_cast<size_t>(idx[i]));
    require_same_shape(img, first, "stack_batch");
    std::copy(img.data.begin(), img.data.end(), out.data.begin() + static_cast<int64_t>(i) * stride);
  }
  return out;
}

std::vector<int64_t> gather_labels(const LabeledDataset& data, const std::vector<int64_t>& idx) {
  std::vector<int64_t> out;
  out.reserve(idx.size());
  for (int64_t i : idx) out.push_back(data.labels.at(static_cast<size_t>(i)));
  return out;
}

}  // namespace oslolab
