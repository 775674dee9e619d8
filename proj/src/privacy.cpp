#include "fedcast/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedcast/rng.hpp"

namespace fedcast::privacy {

ParamVector clip_update(const ParamVector& delta, double clip_norm) {
  if (!(clip_norm > 0)) fail(Err::BadConfig, "clip norm must be > 0");
  ParamVector out = delta;
  const double norm = out.l2_norm();
  if (norm > clip_norm) out.scale(clip_norm / norm);
  return out;
}

void add_gaussian_noise(ParamVector& delta, double noise_multiplier, double clip_norm, std::uint64_t seed) {
  if (noise_multiplier < 0) fail(Err::BadConfig, "noise multiplier must be >= 0");
  if (noise_multiplier == 0) return;
  if (!(clip_norm > 0)) fail(Err::BadConfig, "noise needs a positive clip norm to scale against");
  Rng rng(seed);
  const double sigma = noise_multiplier * clip_norm;
  for (double& v : delta.values) v += rng.normal(0.0, sigma);
}

SparseUpdate sparsify_topk(const ParamVector& delta, double rho) {
  const std::size_t d = delta.dim();
  if (!(rho > 0.0) || rho > 1.0) fail(Err::BadConfig, "top-k fraction must be in (0, 1]");
  if (d == 0) fail(Err::BadDimensions, "cannot sparsify an empty vector");
  std::size_t k = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(d)));
  k = std::clamp<std::size_t>(k, 1, d);

  std::vector<std::uint32_t> order(d);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double ma = std::abs(delta.values[a]), mb = std::abs(delta.values[b]);
    if (ma != mb) return ma > mb;
    return a < b;  // magnitude ties keep the lower index
  });
  order.resize(k);
  std::sort(order.begin(), order.end());

  SparseUpdate out;
  out.dim = d;
  out.indices = std::move(order);
  out.values.reserve(k);
  for (std::uint32_t idx : out.indices) out.values.push_back(delta.values[idx]);
  return out;
}

ParamVector densify(const SparseUpdate& sparse, std::shared_ptr<const Layout> layout) {
  if (!layout || layout->dim != sparse.dim) fail(Err::LayoutMismatch, "sparse update does not fit the layout");
  if (sparse.indices.size() != sparse.values.size())
    fail(Err::BadDimensions, "sparse indices and values differ in length");
  ParamVector out = make_zero(std::move(layout));
  std::uint32_t prev = 0;
  bool first = true;
  for (std::size_t i = 0; i < sparse.indices.size(); ++i) {
    const std::uint32_t idx = sparse.indices[i];
    if (idx >= sparse.dim) fail(Err::BadDimensions, "sparse index out of range");
    if (!first && idx <= prev) fail(Err::BadDimensions, "sparse indices must strictly ascend");
    prev = idx;
    first = false;
    out.values[idx] = sparse.values[i];
  }
  return out;
}

namespace {

void check_secure_cfg(const SecureAggConfig& cfg) {
  if (cfg.quant_bits < 1 || cfg.quant_bits > 40) fail(Err::BadConfig, "quant_bits must be in [1, 40]");
  if (cfg.mask_bits < 8 || cfg.mask_bits > 64 || cfg.mask_bits % 8 != 0)
    fail(Err::BadConfig, "mask_bits must be a multiple of 8 in [8, 64]");
}

std::uint64_t word_mask(std::uint32_t mask_bits) {
  return mask_bits == 64 ? ~0ULL : ((1ULL << mask_bits) - 1);
}

std::uint64_t pair_stream_seed(const SecureAggConfig& cfg, std::size_t a, std::size_t b,
                               std::uint64_t round) {
  const std::uint64_t lo = std::min(a, b), hi = std::max(a, b);
  return derive_seed(cfg.pair_seed_base, {fnv1a64("pairmask"), lo, hi, round});
}

}  // namespace

std::vector<std::uint64_t> quantize(const ParamVector& v, const SecureAggConfig& cfg) {
  check_secure_cfg(cfg);
  const double q = std::ldexp(1.0, static_cast<int>(cfg.quant_bits));
  const std::uint64_t mask = word_mask(cfg.mask_bits);
  std::vector<std::uint64_t> words(v.dim());
  for (std::size_t j = 0; j < v.dim(); ++j) {
    if (!std::isfinite(v.values[j])) fail(Err::NonFiniteInput, "cannot quantize a non-finite value");
    const long long scaled = std::llround(v.values[j] * q);
    words[j] = static_cast<std::uint64_t>(scaled) & mask;  // two's complement wrap
  }
  return words;
}

MaskedUpdate secure_mask(const ParamVector& update, std::size_t client_id,
                         const std::vector<std::size_t>& participants, const SecureAggConfig& cfg,
                         std::uint64_t round) {
  check_secure_cfg(cfg);
  if (participants.size() < 2) fail(Err::BadConfig, "secure aggregation needs at least two participants");
  if (std::find(participants.begin(), participants.end(), client_id) == participants.end())
    fail(Err::ParticipantMissing, "client " + std::to_string(client_id) + " is not in the participant list");
  {
    std::vector<std::size_t> sorted = participants;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      fail(Err::BadConfig, "duplicate participant id");
  }

  MaskedUpdate out;
  out.dim = update.dim();
  out.words = quantize(update, cfg);
  const std::uint64_t mask = word_mask(cfg.mask_bits);
  for (std::size_t peer : participants) {
    if (peer == client_id) continue;
    std::uint64_t state = pair_stream_seed(cfg, client_id, peer, round);
    if (client_id < peer) {
      for (std::uint64_t& w : out.words) w = (w + (splitmix64(state) & mask)) & mask;
    } else {
      for (std::uint64_t& w : out.words) w = (w - (splitmix64(state) & mask)) & mask;
    }
  }
  return out;
}

ParamVector secure_unmask_sum(const std::vector<MaskedUpdate>& masked, std::shared_ptr<const Layout> layout,
                              const SecureAggConfig& cfg) {
  check_secure_cfg(cfg);
  if (masked.empty()) fail(Err::EmptyRound, "no masked updates to sum");
  if (!layout) fail(Err::LayoutMismatch, "missing layout");
  const std::size_t d = layout->dim;
  for (const MaskedUpdate& m : masked) {
    if (m.dim != d || m.words.size() != d) fail(Err::BadDimensions, "masked update has the wrong dimension");
  }
  const std::uint64_t mask = word_mask(cfg.mask_bits);
  const std::uint64_t half = 1ULL << (cfg.mask_bits - 1);
  const double q = std::ldexp(1.0, static_cast<int>(cfg.quant_bits));

  ParamVector out = make_zero(std::move(layout));
  for (std::size_t j = 0; j < d; ++j) {
    std::uint64_t sum = 0;
    for (const MaskedUpdate& m : masked) sum = (sum + m.words[j]) & mask;
    double value;
    if (cfg.mask_bits == 64) {
      value = static_cast<double>(static_cast<std::int64_t>(sum));
    } else {
      value = sum >= half ? static_cast<double>(sum) - std::ldexp(1.0, static_cast<int>(cfg.mask_bits))
                          : static_cast<double>(sum);
    }
    out.values[j] = value / q;
  }
  return out;
}

// Message layout behind these formulas: 14 bytes of framing, 9 bytes of fixed
// update fields, a 4-byte element count, then the encoded coordinates.
std::size_t payload_bytes_dense(std::size_t dim) { return 8 * dim + 27; }
std::size_t payload_bytes_sparse(std::size_t k) { return 12 * k + 27; }
std::size_t payload_bytes_masked(std::size_t dim, std::uint32_t mask_bits) {
  return (mask_bits / 8) * dim + 27;
}

}  // namespace fedcast::privacy
