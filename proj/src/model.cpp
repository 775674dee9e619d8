#include "fedcast/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedcast/rng.hpp"

namespace fedcast::model {

namespace {

constexpr std::size_t kChunk = 64;  // samples per gradient accumulation chunk

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmView {
  std::span<const double> wx;  // (4n, F)
  std::span<const double> wh;  // (4n, n)
  std::span<const double> b;   // (4n)
  std::span<const double> hw;  // (H, n)
  std::span<const double> hb;  // (H)
};

LstmView lstm_view(const ParamVector& p) {
  return {p.segment("lstm.w_x"), p.segment("lstm.w_h"), p.segment("lstm.bias"), p.segment("head.weight"),
          p.segment("head.bias")};
}

// Per-step activations kept for backprop through time.
struct LstmTrace {
  std::vector<double> h;       // (T+1) * n, row 0 is the zero initial state
  std::vector<double> c;       // (T+1) * n
  std::vector<double> tanh_c;  // T * n
  std::vector<double> gates;   // T * 4n, activated, [i f g o] blocks

  void resize(std::size_t steps, std::size_t n) {
    h.assign((steps + 1) * n, 0.0);
    c.assign((steps + 1) * n, 0.0);
    tanh_c.assign(steps * n, 0.0);
    gates.assign(steps * 4 * n, 0.0);
  }
};

void lstm_forward(const ModelConfig& cfg, const LstmView& v, std::span<const double> x, LstmTrace& tr,
                  std::span<double> out) {
  const std::size_t n = cfg.hidden, F = cfg.features, T = cfg.window;
  tr.resize(T, n);
  for (std::size_t t = 0; t < T; ++t) {
    const double* xt = x.data() + t * F;
    const double* h_prev = tr.h.data() + t * n;
    const double* c_prev = tr.c.data() + t * n;
    double* h_next = tr.h.data() + (t + 1) * n;
    double* c_next = tr.c.data() + (t + 1) * n;
    double* gates = tr.gates.data() + t * 4 * n;
    double* tc = tr.tanh_c.data() + t * n;

    for (std::size_t r = 0; r < 4 * n; ++r) {
      double z = v.b[r];
      const double* wxr = v.wx.data() + r * F;
      for (std::size_t ccol = 0; ccol < F; ++ccol) z += wxr[ccol] * xt[ccol];
      const double* whr = v.wh.data() + r * n;
      for (std::size_t ccol = 0; ccol < n; ++ccol) z += whr[ccol] * h_prev[ccol];
      gates[r] = z;
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double i = sigmoid(gates[j]);
      const double f = sigmoid(gates[n + j]);
      const double g = std::tanh(gates[2 * n + j]);
      const double o = sigmoid(gates[3 * n + j]);
      gates[j] = i;
      gates[n + j] = f;
      gates[2 * n + j] = g;
      gates[3 * n + j] = o;
      c_next[j] = f * c_prev[j] + i * g;
      tc[j] = std::tanh(c_next[j]);
      h_next[j] = o * tc[j];
    }
  }
  const double* h_last = tr.h.data() + T * n;
  for (std::size_t hh = 0; hh < cfg.horizon; ++hh) {
    double p = v.hb[hh];
    const double* row = v.hw.data() + hh * n;
    for (std::size_t j = 0; j < n; ++j) p += row[j] * h_last[j];
    out[hh] = p;
  }
}

void linear_forward(const ModelConfig& cfg, const ParamVector& params, std::span<const double> x,
                    std::span<double> out) {
  const std::size_t in = cfg.window * cfg.features;
  std::span<const double> w = params.segment("linear.weight");
  std::span<const double> b = params.segment("linear.bias");
  for (std::size_t hh = 0; hh < cfg.horizon; ++hh) {
    double p = b[hh];
    const double* row = w.data() + hh * in;
    for (std::size_t j = 0; j < in; ++j) p += row[j] * x[j];
    out[hh] = p;
  }
}

void forward_one(const ModelConfig& cfg, const ParamVector& params, std::span<const double> x, LstmTrace& tr,
                 std::span<double> out) {
  if (cfg.arch == ModelArch::linear) {
    linear_forward(cfg, params, x, out);
  } else {
    lstm_forward(cfg, lstm_view(params), x, tr, out);
  }
}

void check_inputs(const ModelConfig& cfg, const ParamVector& params, const data::SampleSet& samples) {
  if (samples.window != cfg.window || samples.horizon != cfg.horizon || samples.features != cfg.features)
    fail(Err::BadDimensions, "sample shape does not match the model configuration");
  auto layout = make_layout(cfg);
  if (!params.layout || params.dim() != layout->dim || params.layout->hash() != layout->hash())
    fail(Err::LayoutMismatch, "parameter vector does not match the model configuration");
  if (!params.all_finite()) fail(Err::NonFiniteInput, "parameters contain a non-finite value");
}

// One sample's unscaled contribution to the batch gradient: dL/dpred is
// 2*(pred-y)/H here and the caller divides the chunk total by the batch size.
void accumulate_linear(const ModelConfig& cfg, const ParamVector& params, std::span<const double> x,
                       std::span<const double> y, std::span<const double> pred, std::span<double> grad) {
  const std::size_t in = cfg.window * cfg.features;
  const Segment& ws = params.layout->find("linear.weight");
  const Segment& bs = params.layout->find("linear.bias");
  double* gw = grad.data() + ws.offset;
  double* gb = grad.data() + bs.offset;
  for (std::size_t hh = 0; hh < cfg.horizon; ++hh) {
    const double dp = 2.0 * (pred[hh] - y[hh]) / static_cast<double>(cfg.horizon);
    gb[hh] += dp;
    double* row = gw + hh * in;
    for (std::size_t j = 0; j < in; ++j) row[j] += dp * x[j];
  }
}

struct LstmBackBuffers {
  std::vector<double> dh, dc, dz, dp;

  void resize(std::size_t n, std::size_t horizon) {
    dh.assign(n, 0.0);
    dc.assign(n, 0.0);
    dz.assign(4 * n, 0.0);
    dp.assign(horizon, 0.0);
  }
};

void accumulate_lstm(const ModelConfig& cfg, const ParamVector& params, std::span<const double> x,
                     std::span<const double> y, std::span<const double> pred, const LstmTrace& tr,
                     LstmBackBuffers& bb, std::span<double> grad) {
  const std::size_t n = cfg.hidden, F = cfg.features, T = cfg.window, H = cfg.horizon;
  const LstmView v = lstm_view(params);
  const Layout& layout = *params.layout;
  double* gwx = grad.data() + layout.find("lstm.w_x").offset;
  double* gwh = grad.data() + layout.find("lstm.w_h").offset;
  double* gbias = grad.data() + layout.find("lstm.bias").offset;
  double* ghw = grad.data() + layout.find("head.weight").offset;
  double* ghb = grad.data() + layout.find("head.bias").offset;

  bb.resize(n, H);
  const double* h_last = tr.h.data() + T * n;
  for (std::size_t hh = 0; hh < H; ++hh) {
    const double dp = 2.0 * (pred[hh] - y[hh]) / static_cast<double>(H);
    bb.dp[hh] = dp;
    ghb[hh] += dp;
    double* row = ghw + hh * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += dp * h_last[j];
  }
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t hh = 0; hh < H; ++hh) s += v.hw[hh * n + j] * bb.dp[hh];
    bb.dh[j] = s;
  }

  for (std::size_t t = T; t-- > 0;) {
    const double* gates = tr.gates.data() + t * 4 * n;
    const double* tc = tr.tanh_c.data() + t * n;
    const double* h_prev = tr.h.data() + t * n;
    const double* c_prev = tr.c.data() + t * n;
    const double* xt = x.data() + t * F;

    for (std::size_t j = 0; j < n; ++j) {
      const double i = gates[j], f = gates[n + j], g = gates[2 * n + j], o = gates[3 * n + j];
      const double dhj = bb.dh[j];
      bb.dz[3 * n + j] = dhj * tc[j] * o * (1.0 - o);
      bb.dc[j] += dhj * o * (1.0 - tc[j] * tc[j]);
      bb.dz[j] = bb.dc[j] * g * i * (1.0 - i);
      bb.dz[n + j] = bb.dc[j] * c_prev[j] * f * (1.0 - f);
      bb.dz[2 * n + j] = bb.dc[j] * i * (1.0 - g * g);
      bb.dc[j] *= f;  // flows to step t-1
    }
    for (std::size_t r = 0; r < 4 * n; ++r) {
      const double dzr = bb.dz[r];
      gbias[r] += dzr;
      double* wxrow = gwx + r * F;
      for (std::size_t ccol = 0; ccol < F; ++ccol) wxrow[ccol] += dzr * xt[ccol];
      double* whrow = gwh + r * n;
      for (std::size_t ccol = 0; ccol < n; ++ccol) whrow[ccol] += dzr * h_prev[ccol];
    }
    std::fill(bb.dh.begin(), bb.dh.end(), 0.0);
    for (std::size_t r = 0; r < 4 * n; ++r) {
      const double dzr = bb.dz[r];
      const double* whrow = v.wh.data() + r * n;
      for (std::size_t ccol = 0; ccol < n; ++ccol) bb.dh[ccol] += whrow[ccol] * dzr;
    }
  }
}

}  // namespace

const char* arch_name(ModelArch arch) { return arch == ModelArch::linear ? "linear" : "lstm"; }

ModelArch arch_from_name(std::string_view name) {
  if (name == "linear") return ModelArch::linear;
  if (name == "lstm") return ModelArch::lstm;
  fail(Err::BadConfig, "unknown model architecture '" + std::string(name) + "'");
}

std::shared_ptr<const Layout> make_layout(const ModelConfig& cfg) {
  if (cfg.window < 1 || cfg.horizon < 1 || cfg.features < 1)
    fail(Err::BadDimensions, "window, horizon and features must be >= 1");
  auto layout = std::make_shared<Layout>();
  if (cfg.arch == ModelArch::linear) {
    const std::size_t in = cfg.window * cfg.features;
    layout->segments = {
        {"linear.weight", 0, {cfg.horizon, in}},
        {"linear.bias", cfg.horizon * in, {cfg.horizon}},
    };
  } else {
    if (cfg.hidden < 1) fail(Err::BadDimensions, "hidden size must be >= 1");
    const std::size_t n = cfg.hidden;
    std::size_t off = 0;
    auto push = [&](const char* name, std::vector<std::size_t> shape) {
      Segment s{name, off, std::move(shape)};
      off += s.size();
      layout->segments.push_back(std::move(s));
    };
    push("lstm.w_x", {4 * n, cfg.features});
    push("lstm.w_h", {4 * n, n});
    push("lstm.bias", {4 * n});
    push("head.weight", {cfg.horizon, n});
    push("head.bias", {cfg.horizon});
  }
  std::size_t dim = 0;
  for (const Segment& s : layout->segments) dim += s.size();
  layout->dim = dim;
  layout->validate();
  return layout;
}

ParamVector init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamVector p = make_zero(make_layout(cfg));
  Rng rng(derive_seed(seed, {fnv1a64("init")}));
  auto fill_uniform = [&](std::span<double> dst, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : dst) v = rng.uniform(-bound, bound);
  };
  for (const Segment& s : p.layout->segments) {
    std::span<double> dst{p.values.data() + s.offset, s.size()};
    if (s.name == "linear.weight") {
      fill_uniform(dst, cfg.window * cfg.features);
    } else if (s.name == "lstm.w_x") {
      fill_uniform(dst, cfg.features);
    } else if (s.name == "lstm.w_h" || s.name == "head.weight") {
      fill_uniform(dst, cfg.hidden);
    } else if (s.name == "lstm.bias") {
      // forget gate block starts open so early gradients can flow
      for (std::size_t j = cfg.hidden; j < 2 * cfg.hidden; ++j) dst[j] = 1.0;
    }
    // remaining biases stay zero
  }
  return p;
}

std::vector<double> predict(const ModelConfig& cfg, const ParamVector& params, const data::SampleSet& samples,
                            ExecMode mode) {
  check_inputs(cfg, params, samples);
  std::vector<double> out(samples.size() * cfg.horizon, 0.0);
  parallel_for(samples.size(), mode, [&](std::size_t i) {
    LstmTrace tr;
    forward_one(cfg, params, samples.sample_features(i), tr,
                {out.data() + i * cfg.horizon, cfg.horizon});
  });
  return out;
}

double batch_loss(const ModelConfig& cfg, const ParamVector& params, const data::SampleSet& samples,
                  std::span<const std::size_t> batch, ExecMode mode) {
  check_inputs(cfg, params, samples);
  if (batch.empty()) fail(Err::EmptyBatch, "loss over an empty batch");
  std::vector<double> sq(batch.size(), 0.0);
  parallel_for(batch.size(), mode, [&](std::size_t k) {
    const std::size_t i = batch[k];
    LstmTrace tr;
    std::vector<double> pred(cfg.horizon, 0.0);
    forward_one(cfg, params, samples.sample_features(i), tr, pred);
    std::span<const double> y = samples.sample_target(i);
    double s = 0.0;
    for (std::size_t hh = 0; hh < cfg.horizon; ++hh) {
      const double d = pred[hh] - y[hh];
      s += d * d;
    }
    sq[k] = s;
  });
  double total = 0.0;
  for (double s : sq) total += s;  // fixed order, both modes agree
  return total / (static_cast<double>(batch.size()) * static_cast<double>(cfg.horizon));
}

double mean_loss(const ModelConfig& cfg, const ParamVector& params, const data::SampleSet& samples,
                 ExecMode mode) {
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  return batch_loss(cfg, params, samples, all, mode);
}

ParamVector batch_gradient(const ModelConfig& cfg, const ParamVector& params, const data::SampleSet& samples,
                           std::span<const std::size_t> batch, ExecMode mode) {
  check_inputs(cfg, params, samples);
  if (batch.empty()) fail(Err::EmptyBatch, "gradient over an empty batch");
  const std::size_t d = params.dim();
  const std::size_t n_chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<double> chunk_grad(n_chunks * d, 0.0);

  parallel_for(n_chunks, mode, [&](std::size_t ci) {
    std::span<double> grad{chunk_grad.data() + ci * d, d};
    LstmTrace tr;
    LstmBackBuffers bb;
    std::vector<double> pred(cfg.horizon, 0.0);
    const std::size_t begin = ci * kChunk;
    const std::size_t end = std::min(batch.size(), begin + kChunk);
    for (std::size_t k = begin; k < end; ++k) {
      const std::size_t i = batch[k];
      std::span<const double> x = samples.sample_features(i);
      std::span<const double> y = samples.sample_target(i);
      forward_one(cfg, params, x, tr, pred);
      if (cfg.arch == ModelArch::linear) {
        accumulate_linear(cfg, params, x, y, pred, grad);
      } else {
        accumulate_lstm(cfg, params, x, y, pred, tr, bb, grad);
      }
    }
  });

  ParamVector out = make_zero(params.layout);
  for (std::size_t ci = 0; ci < n_chunks; ++ci) {
    const double* g = chunk_grad.data() + ci * d;
    for (std::size_t j = 0; j < d; ++j) out.values[j] += g[j];
  }
  out.scale(1.0 / static_cast<double>(batch.size()));
  if (!out.all_finite()) fail(Err::NonFiniteInput, "gradient overflowed to a non-finite value");
  return out;
}

ParamVector finite_diff_gradient(const ModelConfig& cfg, const ParamVector& params,
                                 const data::SampleSet& samples, std::span<const std::size_t> batch,
                                 double epsilon) {
  ParamVector out = make_zero(params.layout);
  ParamVector probe = params;
  for (std::size_t j = 0; j < params.dim(); ++j) {
    const double saved = probe.values[j];
    probe.values[j] = saved + epsilon;
    const double up = batch_loss(cfg, probe, samples, batch, ExecMode::serial);
    probe.values[j] = saved - epsilon;
    const double down = batch_loss(cfg, probe, samples, batch, ExecMode::serial);
    probe.values[j] = saved;
    out.values[j] = (up - down) / (2.0 * epsilon);
  }
  return out;
}

ClientUpdate local_train(const ModelConfig& cfg, const ParamVector& start, const data::SampleSet& train,
                         const LocalTrainConfig& train_cfg, std::uint64_t seed, ExecMode mode) {
  if (train.size() == 0) fail(Err::EmptyTrainingSet, "local training needs at least one sample");
  if (train_cfg.epochs < 1 || train_cfg.batch_size < 1 || !(train_cfg.lr >= 0))
    fail(Err::BadConfig, "epochs and batch size must be >= 1 and lr >= 0");
  const std::size_t n = train.size();
  ParamVector w = start;

  if (train_cfg.batch_size >= n) {
    // Full-batch path: natural order, no RNG draws at all.
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t e = 0; e < train_cfg.epochs; ++e) {
      ParamVector g = batch_gradient(cfg, w, train, all, mode);
      w.add_scaled(g, -train_cfg.lr);
    }
  } else {
    Rng rng(derive_seed(seed, {fnv1a64("shuffle")}));
    std::vector<std::size_t> order(n);
    for (std::size_t e = 0; e < train_cfg.epochs; ++e) {
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      for (std::size_t begin = 0; begin < n; begin += train_cfg.batch_size) {
        const std::size_t end = std::min(n, begin + train_cfg.batch_size);
        std::span<const std::size_t> slice{order.data() + begin, end - begin};
        ParamVector g = batch_gradient(cfg, w, train, slice, mode);
        w.add_scaled(g, -train_cfg.lr);
      }
    }
  }

  ClientUpdate up;
  up.delta = difference(w, start);
  up.sample_count = n;
  return up;
}

}  // namespace fedcast::model
