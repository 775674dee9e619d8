#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "fedcast/dataset.hpp"
#include "fedcast/parallel.hpp"
#include "fedcast/param_vector.hpp"

namespace fedcast::model {

enum class ModelArch { linear, lstm };

const char* arch_name(ModelArch arch);
ModelArch arch_from_name(std::string_view name);

struct ModelConfig {
  ModelArch arch = ModelArch::linear;
  std::size_t window = 48;
  std::size_t horizon = 1;
  std::size_t features = data::kFeatureCount;
  std::size_t hidden = 32;  // lstm only

  bool operator==(const ModelConfig&) const = default;
};

/// Named parameter segments for the architecture.
///   linear: linear.weight (H, W*F), linear.bias (H)
///   lstm:   lstm.w_x (4n, F), lstm.w_h (4n, n), lstm.bias (4n),
///           head.weight (H, n), head.bias (H); gate order [i, f, g, o]
std::shared_ptr<const Layout> make_layout(const ModelConfig& cfg);

/// Weights uniform in +-1/sqrt(fan_in), biases zero except the lstm forget
/// gate which starts at 1. Same seed, same bits.
ParamVector init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Predictions for every sample, n*H row-major.
std::vector<double> predict(const ModelConfig& cfg, const ParamVector& params, const data::SampleSet& samples,
                            ExecMode mode);

/// Mean squared error over the given batch indices (mean over samples and
/// horizon steps).
double batch_loss(const ModelConfig& cfg, const ParamVector& params, const data::SampleSet& samples,
                  std::span<const std::size_t> batch, ExecMode mode);

/// Convenience: batch_loss over the whole set.
double mean_loss(const ModelConfig& cfg, const ParamVector& params, const data::SampleSet& samples,
                 ExecMode mode);

/// Analytic gradient of batch_loss with respect to the parameters.
/// Accumulation order is fixed (chunks of 64 samples, summed in chunk order)
/// so serial and OpenMP modes agree bit for bit.
ParamVector batch_gradient(const ModelConfig& cfg, const ParamVector& params, const data::SampleSet& samples,
                           std::span<const std::size_t> batch, ExecMode mode);

/// Central-difference approximation of batch_gradient, for verification.
ParamVector finite_diff_gradient(const ModelConfig& cfg, const ParamVector& params,
                                 const data::SampleSet& samples, std::span<const std::size_t> batch,
                                 double epsilon);

struct LocalTrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  double lr = 0.01;
};

struct ClientUpdate {
  std::size_t client_id = 0;
  ParamVector delta;
  std::size_t sample_count = 0;
};

/// Plain SGD from `start` over the client's training set.
///
/// When batch_size >= n every epoch is one full batch in natural sample order
/// and the RNG is never touched; otherwise each epoch shuffles the indices
/// (Fisher-Yates on the stream derived from `seed`) and walks consecutive
/// slices, keeping the final partial batch. Returns the parameter delta,
/// never the raw weights.
ClientUpdate local_train(const ModelConfig& cfg, const ParamVector& start, const data::SampleSet& train,
                         const LocalTrainConfig& train_cfg, std::uint64_t seed, ExecMode mode);

}  // namespace fedcast::model
