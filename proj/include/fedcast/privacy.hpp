#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "fedcast/param_vector.hpp"

namespace fedcast::privacy {

/// L2 clipping: delta * min(1, clip_norm / ||delta||). clip_norm must be > 0.
ParamVector clip_update(const ParamVector& delta, double clip_norm);

/// Adds iid Gaussian noise with sigma = noise_multiplier * clip_norm to every
/// coordinate, drawn in coordinate order from the given stream seed.
void add_gaussian_noise(ParamVector& delta, double noise_multiplier, double clip_norm, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Top-k sparsification

struct SparseUpdate {
  std::size_t dim = 0;
  std::vector<std::uint32_t> indices;  // strictly ascending
  std::vector<double> values;          // aligned with indices
};

/// Keeps the k = ceil(rho * dim) coordinates with the largest magnitude,
/// breaking magnitude ties toward the lower index. rho in (0, 1].
SparseUpdate sparsify_topk(const ParamVector& delta, double rho);

ParamVector densify(const SparseUpdate& sparse, std::shared_ptr<const Layout> layout);

// ---------------------------------------------------------------------------
// Pairwise-mask secure aggregation
//
// Updates are quantized to integers (round(v * 2^quant_bits)) and shifted by
// pairwise pseudo-random masks modulo 2^mask_bits. For every participant pair
// the lower id adds the pair's stream and the higher id subtracts it, so the
// masks vanish in the modular sum and the server only ever sees the total.
// The per-coordinate quantization error of the decoded sum is at most
// participants / 2^(quant_bits + 1).

struct SecureAggConfig {
  std::uint64_t pair_seed_base = 0;  // shared secret all participants agree on
  std::uint32_t quant_bits = 20;
  std::uint32_t mask_bits = 64;  // modulus 2^mask_bits, multiple of 8
};

struct MaskedUpdate {
  std::size_t dim = 0;
  std::vector<std::uint64_t> words;  // values mod 2^mask_bits
};

std::vector<std::uint64_t> quantize(const ParamVector& v, const SecureAggConfig& cfg);

MaskedUpdate secure_mask(const ParamVector& update, std::size_t client_id,
                         const std::vector<std::size_t>& participants, const SecureAggConfig& cfg,
                         std::uint64_t round);

/// Sums masked updates modulo 2^mask_bits, decodes centered-signed words and
/// rescales by 2^-quant_bits. Exact mask cancellation requires every
/// participant from the masking round to be present.
ParamVector secure_unmask_sum(const std::vector<MaskedUpdate>& masked, std::shared_ptr<const Layout> layout,
                              const SecureAggConfig& cfg);

// ---------------------------------------------------------------------------
// Uplink payload accounting (bytes on the wire for one model update message)

std::size_t payload_bytes_dense(std::size_t dim);
std::size_t payload_bytes_sparse(std::size_t k);
std::size_t payload_bytes_masked(std::size_t dim, std::uint32_t mask_bits);

}  // namespace fedcast::privacy
