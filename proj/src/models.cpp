#include "oslolab/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace oslolab {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct Layer {
  enum Kind { kConv, kRelu, kPool, kGap, kFlatten, kFc, kDropout } kind;
  int64_t cin = 0, cout = 0, k = 0, pad = 0;  // conv
  int64_t in = 0, out = 0;                    // fc
  double rate = 0.0;                          // dropout
};

// Families (16x16 grayscale defaults; dims scale with the arch's input):
//   mlp    flatten, fc->128, fc->64, fc->C
//   cnn-a  conv32 / conv64 at full res, one pool, big fc head (overfitting target)
//   cnn-b  conv16 / conv32 / conv32, three stages, fc head
//   cnn-c  conv8(5x5) / conv16 / conv16, fc->64 with dropout head
//   cnn-d  conv16 / conv32, global-average pool, tiny fc
std::vector<Layer> plan_layers(const ArchSpec& a) {
  const int64_t C = a.num_classes, H = a.input_h, W = a.input_w, ci = a.input_c;
  const double drop = a.dropout_rate;
  std::vector<Layer> L;
  auto conv = [&](int64_t i, int64_t o, int64_t k, int64_t p) {
    L.push_back({Layer::kConv, i, o, k, p, 0, 0, 0.0});
  };
  auto relu = [&] { L.push_back({Layer::kRelu}); };
  auto pool = [&] { L.push_back({Layer::kPool}); };
  auto fc = [&](int64_t i, int64_t o) { L.push_back({Layer::kFc, 0, 0, 0, 0, i, o, 0.0}); };
  auto dropout = [&](double r) {
    if (r > 0) L.push_back({Layer::kDropout, 0, 0, 0, 0, 0, 0, r});
  };
  if (a.family == "mlp") {
    L.push_back({Layer::kFlatten});
    fc(ci * H * W, 128);
    relu();
    fc(128, 64);
    relu();
    dropout(drop);
    fc(64, C);
  } else if (a.family == "cnn-a") {
    conv(ci, 32, 3, 1);
    relu();
    conv(32, 64, 3, 1);  // full-resolution second conv: memorizes hard
    relu();
    pool();
    L.push_back({Layer::kFlatten});
    dropout(drop);
    fc(64 * (H / 2) * (W / 2), C);
  } else if (a.family == "cnn-b") {
    conv(ci, 16, 3, 1);
    relu();
    pool();
    conv(16, 32, 3, 1);
    relu();
    pool();
    conv(32, 32, 3, 1);
    relu();
    L.push_back({Layer::kFlatten});
    dropout(drop);
    fc(32 * (H / 4) * (W / 4), C);
  } else if (a.family == "cnn-c") {
    conv(ci, 8, 5, 2);
    relu();
    pool();
    conv(8, 16, 3, 1);
    relu();
    pool();
    conv(16, 16, 3, 1);
    relu();
    L.push_back({Layer::kFlatten});
    fc(16 * (H / 4) * (W / 4), 64);
    relu();
    dropout(drop > 0 ? drop : 0.25);  // the family's defining head
    fc(64, C);
  } else if (a.family == "cnn-d") {
    conv(ci, 16, 3, 1);
    relu();
    pool();
    conv(16, 32, 3, 1);
    relu();
    L.push_back({Layer::kGap});
    dropout(drop);
    fc(32, C);
  } else {
    check(false, "unknown architecture family: " + a.family);
  }
  return L;
}

}  // namespace

void ArchSpec::validate() const {
  check(family == "mlp" || family == "cnn-a" || family == "cnn-b" || family == "cnn-c" ||
            family == "cnn-d",
        "unknown architecture family: " + family);
  check(dropout_rate >= 0 && dropout_rate < 1, "dropout_rate must be in [0,1)");
  check(input_c > 0 && input_h > 0 && input_w > 0, "input dims must be positive");
  check(num_classes >= 2, "num_classes must be >= 2");
  if (family != "mlp") {
    check(input_h % 4 == 0 && input_w % 4 == 0, "conv families need H,W divisible by 4");
  }
}

ModelHandle init_model(const ArchSpec& arch, uint64_t seed) {
  arch.validate();
  ModelHandle m;
  m.arch = arch;
  Rng rng(derive_seed(seed, "init-" + arch.family));
  int conv_i = 0, fc_i = 0;
  for (const Layer& l : plan_layers(arch)) {
    if (l.kind == Layer::kConv) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.cin * l.k * l.k));
      Tensor w = Tensor::zeros({l.cout, l.cin, l.k, l.k});
      for (double& v : w.data) v = rng.uniform(-bound, bound);
      m.weights.push_back(std::move(w));
      m.weight_names.push_back("conv" + std::to_string(++conv_i) + ".w");
      m.weights.push_back(Tensor::zeros({l.cout}));
      m.weight_names.push_back("conv" + std::to_string(conv_i) + ".b");
    } else if (l.kind == Layer::kFc) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
      Tensor w = Tensor::zeros({l.in, l.out});
      for (double& v : w.data) v = rng.uniform(-bound, bound);
      m.weights.push_back(std::move(w));
      m.weight_names.push_back("fc" + std::to_string(++fc_i) + ".w");
      m.weights.push_back(Tensor::zeros({l.out}));
      m.weight_names.push_back("fc" + std::to_string(fc_i) + ".b");
    }
  }
  return m;
}

Var forward_on_tape(Tape& t, const ModelHandle& m, Var x, bool train, Rng* dropout_rng,
                    std::vector<Var>* param_vars, bool params_need_grad) {
  std::vector<Var> params;
  params.reserve(m.weights.size());
  for (const Tensor& w : m.weights) params.push_back(t.leaf(w, params_need_grad));
  if (param_vars) *param_vars = params;

  const Tensor& xv = t.value(x);
  check(xv.rank() == 4, "forward: input must be [B,C,H,W], got " + xv.shape_str());
  check(xv.shape[1] == m.arch.input_c && xv.shape[2] == m.arch.input_h &&
            xv.shape[3] == m.arch.input_w,
        "forward: input " + xv.shape_str() + " does not match arch input dims");
  const int64_t B = xv.shape[0];

  Var h = x;
  size_t pi = 0;
  for (const Layer& l : plan_layers(m.arch)) {
    switch (l.kind) {
      case Layer::kConv:
        h = t.conv2d(h, params[pi], params[pi + 1], static_cast<int>(l.pad));
        pi += 2;
        break;
      case Layer::kRelu:
        h = t.relu(h);
        break;
      case Layer::kPool:
        h = t.maxpool2(h);
        break;
      case Layer::kGap: {
        const Tensor& hv = t.value(h);
        const int64_t c = hv.shape[1], hw = hv.shape[2] * hv.shape[3];
        Var flat = t.reshape(h, {B * c, hw});
        Tensor ones({hw, 1}, std::vector<double>(static_cast<size_t>(hw), 1.0 / static_cast<double>(hw)));
        h = t.reshape(t.matmul(flat, t.constant(std::move(ones))), {B, c});
        break;
      }
      case Layer::kFlatten:
        h = t.reshape(h, {B, t.value(h).numel() / B});
        break;
      case Layer::kFc:
        h = t.bias_add(t.matmul(h, params[pi]), params[pi + 1]);
        pi += 2;
        break;
      case Layer::kDropout: {
        if (!train || dropout_rng == nullptr) break;  // inference: identity
        const Tensor& hv = t.value(h);
        const double keep = 1.0 - l.rate;
        Tensor mask = Tensor::zeros(hv.shape);
        for (double& v : mask.data) v = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
        h = t.mul(h, t.constant(std::move(mask)));
        break;
      }
    }
  }
  return h;
}

namespace {

Tensor as_batch(const ArchSpec& a, const Tensor& x) {
  if (x.rank() == 4) return x;
  check(x.rank() == 3, "expected [B,C,H,W] or [C,H,W], got " + x.shape_str());
  return Tensor({1, a.input_c, a.input_h, a.input_w}, x.data);
}

}  // namespace

Tensor logits(const ModelHandle& m, const Tensor& x) {
  const bool single = x.rank() == 3;
  Tape t;
  Var out = forward_on_tape(t, m, t.constant(as_batch(m.arch, x)));
  Tensor z = t.value(out);
  if (single) return Tensor({m.arch.num_classes}, z.data);
  return z;
}

int64_t argmax_lowest(const double* row, int64_t n) {
  int64_t best = 0;
  for (int64_t j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

int64_t predict_label(const ModelHandle& m, const Tensor& x) {
  const Tensor z = logits(m, x);
  const int64_t C = m.arch.num_classes;
  return argmax_lowest(&z.data[z.numel() - C], C);  // last row covers both forms
}

std::vector<int64_t> predict_labels(const ModelHandle& m, const Tensor& batch) {
  const Tensor z = logits(m, batch);
  const int64_t C = m.arch.num_classes, B = z.numel() / C;
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(B));
  for (int64_t i = 0; i < B; ++i) out.push_back(argmax_lowest(&z.data[static_cast<size_t>(i * C)], C));
  return out;
}

double class_confidence(const ModelHandle& m, const Tensor& x, int64_t y) {
  check(y >= 0 && y < m.arch.num_classes, "class_confidence: label out of range");
  const Tensor z = logits(m, x);
  const Tensor p = kernels::softmax_fwd(z);
  return p.data[p.data.size() - static_cast<size_t>(m.arch.num_classes) + static_cast<size_t>(y)];
}

double accuracy(const ModelHandle& m, const LabeledDataset& data,
                const std::vector<int64_t>& subset) {
  check(!subset.empty(), "accuracy: empty subset");
  int64_t hits = 0;
  constexpr int64_t kChunk = 256;
  for (size_t at = 0; at < subset.size(); at += kChunk) {
    const size_t end = std::min(subset.size(), at + kChunk);
    const std::vector<int64_t> slice(subset.begin() + static_cast<int64_t>(at),
                                     subset.begin() + static_cast<int64_t>(end));
    const std::vector<int64_t> pred = predict_labels(m, stack_batch(data, slice));
    for (size_t i = 0; i < slice.size(); ++i)
      if (pred[i] == data.labels[static_cast<size_t>(slice[i])]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(subset.size());
}

ModelHandle train(const ArchSpec& arch, const LabeledDataset& data, const TrainConfig& cfg) {
  std::vector<int64_t> all(static_cast<size_t>(data.size()));
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
  return train(arch, data, all, cfg);
}

void TrainConfig::validate() const {
  check(optimizer == "adam" || optimizer == "sgd-momentum", "unknown optimizer: " + optimizer);
  check(learning_rate > 0, "learning_rate must be > 0");
  check(epochs >= 1, "epochs must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(weight_decay_l2 >= 0 && weight_decay_l1 >= 0, "weight decay must be >= 0");
}

ModelHandle train(const ArchSpec& arch, const LabeledDataset& data,
                  const std::vector<int64_t>& subset, const TrainConfig& cfg) {
  arch.validate();
  cfg.validate();
  check(!subset.empty(), "train: empty training set");
  for (int64_t i : subset)
    check(i >= 0 && i < data.size(), "train: subset index out of range");
  check(data.num_classes == arch.num_classes, "train: dataset classes " +
                                                  std::to_string(data.num_classes) +
                                                  " != arch classes " +
                                                  std::to_string(arch.num_classes));

  ModelHandle m = init_model(arch, cfg.seed);
  m.meta = cfg;
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));

  OptimizerState opt(m);
  const int64_t n = static_cast<int64_t>(subset.size());

  for (int64_t ep = 0; ep < cfg.epochs; ++ep) {
    const std::vector<int64_t> perm = shuffle_rng.permutation(n);
    double ep_loss = 0;
    for (int64_t at = 0; at < n; at += cfg.batch_size) {
      const int64_t bs = std::min(cfg.batch_size, n - at);
      std::vector<int64_t> idx(static_cast<size_t>(bs));
      for (int64_t i = 0; i < bs; ++i)
        idx[static_cast<size_t>(i)] = subset[static_cast<size_t>(perm[static_cast<size_t>(at + i)])];

      Tape t;
      Var x = t.constant(stack_batch(data, idx));
      std::vector<Var> params;
      Var z = forward_on_tape(t, m, x, /*train=*/true, &dropout_rng, &params,
                              /*params_need_grad=*/true);
      Var loss = t.cross_entropy_logits(z, gather_labels(data, idx));
      const double lv = t.value(loss).data[0];
      if (!std::isfinite(lv))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(ep) +
                                 " batch " + std::to_string(at / cfg.batch_size) +
                                 " (family " + arch.family + ", lr " +
                                 std::to_string(cfg.learning_rate) + ")");
      ep_loss += lv * static_cast<double>(bs);
      t.backward(loss);
      std::vector<Tensor> grads(m.weights.size());
      for (size_t p = 0; p < grads.size(); ++p) grads[p] = t.grad(params[p]);
      opt.apply(m, cfg, grads);
    }
    m.loss_history.push_back(ep_loss / static_cast<double>(n));
  }
  return m;
}

OptimizerState::OptimizerState(const ModelHandle& m) {
  mom_.reserve(m.weights.size());
  vel_.reserve(m.weights.size());
  for (const Tensor& w : m.weights) {
    mom_.push_back(Tensor::zeros(w.shape));
    vel_.push_back(Tensor::zeros(w.shape));
  }
}

void OptimizerState::apply(ModelHandle& m, const TrainConfig& cfg, std::vector<Tensor>& grads) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8, kSgdMu = 0.9;
  const bool adam = cfg.optimizer == "adam";
  ++step_;
  for (size_t p = 0; p < m.weights.size(); ++p) {
    Tensor& g = grads[p];
    Tensor& w = m.weights[p];
    if (cfg.weight_decay_l2 > 0)
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += cfg.weight_decay_l2 * w.data[i];
    if (cfg.weight_decay_l1 > 0)
      for (size_t i = 0; i < g.data.size(); ++i)
        g.data[i] += cfg.weight_decay_l1 * (w.data[i] > 0 ? 1.0 : (w.data[i] < 0 ? -1.0 : 0.0));
    if (adam) {
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
      for (size_t i = 0; i < g.data.size(); ++i) {
        mom_[p].data[i] = kBeta1 * mom_[p].data[i] + (1 - kBeta1) * g.data[i];
        vel_[p].data[i] = kBeta2 * vel_[p].data[i] + (1 - kBeta2) * g.data[i] * g.data[i];
        w.data[i] -= cfg.learning_rate * (mom_[p].data[i] / bc1) /
                     (std::sqrt(vel_[p].data[i] / bc2) + kAdamEps);
      }
    } else {
      for (size_t i = 0; i < g.data.size(); ++i) {
        mom_[p].data[i] = kSgdMu * mom_[p].data[i] + g.data[i];
        w.data[i] -= cfg.learning_rate * mom_[p].data[i];
      }
    }
  }
}

double weight_l2_norm(const ModelHandle& m) {
  double s = 0;
  for (const Tensor& w : m.weights)
    for (double v : w.data) s += v * v;
  return std::sqrt(s);
}

namespace {

constexpr uint32_t kMagic = 0x4F534C4Du;  // "OSLM"
constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f64(std::string& buf, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}
void put_str(std::string& buf, const std::string& s) {
  put_u32(buf, static_cast<uint32_t>(s.size()));
  buf += s;
}

struct Reader {
  const std::string& buf;
  size_t at = 0;
  void need(size_t n, const char* what) {
    if (at + n > buf.size())
      throw std::runtime_error(std::string("model file truncated reading ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[at++])) << (8 * i);
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[at++])) << (8 * i);
    return v;
  }
  double f64(const char* what) {
    const uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(const char* what) {
    const uint32_t n = u32(what);
    need(n, what);
    std::string s = buf.substr(at, n);
    at += n;
    return s;
  }
};

}  // namespace

void save_model(const ModelHandle& m, const std::string& path) {
  std::string buf;
  put_u32(buf, kMagic);
  put_u32(buf, kVersion);
  put_str(buf, m.arch.family);
  put_f64(buf, m.arch.dropout_rate);
  put_u64(buf, static_cast<uint64_t>(m.arch.input_c));
  put_u64(buf, static_cast<uint64_t>(m.arch.input_h));
  put_u64(buf, static_cast<uint64_t>(m.arch.input_w));
  put_u64(buf, static_cast<uint64_t>(m.arch.num_classes));
  put_str(buf, m.meta.optimizer);
  put_f64(buf, m.meta.learning_rate);
  put_u64(buf, static_cast<uint64_t>(m.meta.epochs));
  put_u64(buf, static_cast<uint64_t>(m.meta.batch_size));
  put_f64(buf, m.meta.weight_decay_l2);
  put_f64(buf, m.meta.weight_decay_l1);
  put_u64(buf, m.meta.seed);
  put_u32(buf, static_cast<uint32_t>(m.loss_history.size()));
  for (double v : m.loss_history) put_f64(buf, v);
  put_u32(buf, static_cast<uint32_t>(m.weights.size()));
  for (size_t i = 0; i < m.weights.size(); ++i) {
    put_str(buf, m.weight_names[i]);
    put_u32(buf, static_cast<uint32_t>(m.weights[i].rank()));
    for (int64_t d : m.weights[i].shape) put_u64(buf, static_cast<uint64_t>(d));
    for (double v : m.weights[i].data) put_f64(buf, v);
  }
  put_u64(buf, fnv1a64(buf.data(), buf.size()));
  std::ofstream out(path, std::ios::binary);
  check(out.is_open(), "save_model: cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  check(out.good(), "save_model: write failed for " + path);
}

ModelHandle load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.is_open()) throw std::runtime_error("load_model: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < 16) throw std::runtime_error("model file truncated reading header");
  const uint64_t stored = [&] {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[buf.size() - 8 + static_cast<size_t>(i)]))
           << (8 * i);
    return v;
  }();
  if (fnv1a64(buf.data(), buf.size() - 8) != stored)
    throw std::runtime_error("model file checksum mismatch: " + path);

  Reader r{buf};
  if (r.u32("magic") != kMagic) throw std::runtime_error("not a model file: " + path);
  const uint32_t ver = r.u32("version");
  if (ver != kVersion)
    throw std::runtime_error("model file version " + std::to_string(ver) + ", expected " +
                             std::to_string(kVersion));
  ModelHandle m;
  m.arch.family = r.str("family");
  m.arch.dropout_rate = r.f64("dropout");
  m.arch.input_c = static_cast<int64_t>(r.u64("input_c"));
  m.arch.input_h = static_cast<int64_t>(r.u64("input_h"));
  m.arch.input_w = static_cast<int64_t>(r.u64("input_w"));
  m.arch.num_classes = static_cast<int64_t>(r.u64("num_classes"));
  m.meta.optimizer = r.str("optimizer");
  m.meta.learning_rate = r.f64("lr");
  m.meta.epochs = static_cast<int64_t>(r.u64("epochs"));
  m.meta.batch_size = static_cast<int64_t>(r.u64("batch_size"));
  m.meta.weight_decay_l2 = r.f64("wd2");
  m.meta.weight_decay_l1 = r.f64("wd1");
  m.meta.seed = r.u64("seed");
  const uint32_t nloss = r.u32("loss count");
  for (uint32_t i = 0; i < nloss; ++i) m.loss_history.push_back(r.f64("loss"));
  const uint32_t nw = r.u32("weight count");
  for (uint32_t i = 0; i < nw; ++i) {
    m.weight_names.push_back(r.str("weight name"));
    const uint32_t rank = r.u32("rank");
    std::vector<int64_t> shape;
    int64_t count = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int64_t>(r.u64("dim")));
      count *= shape.back();
    }
    std::vector<double> data(static_cast<size_t>(count));
    for (double& v : data) v = r.f64("weight data");
    m.weights.emplace_back(std::move(shape), std::move(data));
  }
  m.arch.validate();
  return m;
}

}  // namespace oslolab
