#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedcast/dataset.hpp"
#include "fedcast/model.hpp"

namespace fedcast::metrics {

/// Targets with |y| <= this are left out of the MAPE sum (a relative error
/// against a near-zero meter reading carries no information).
constexpr double kMapeExcludeThreshold = 1e-6;
constexpr double kZeroMeanEps = 1e-9;

struct MapeResult {
  double mape_pct = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;
};

MapeResult mape(std::span<const double> y_true, std::span<const double> y_pred);

/// 100 * RMSE / mean(y_true). Fails with ZeroMeanTarget when the target mean
/// is too close to zero to normalize against.
double cv_rmse(std::span<const double> y_true, std::span<const double> y_pred);

/// Streaming point-by-point accumulation of both metrics, used to pool
/// predictions across clients. Pooling weighs every point once, which is the
/// same as sample-count weighting of per-client means.
struct PooledAccumulator {
  double rel_sum = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;
  double sse = 0.0;
  double y_sum = 0.0;
  std::size_t n = 0;

  void add(double y_true, double y_pred);
  double mape_pct() const;     // AllPointsExcluded when nothing qualified
  double cv_rmse_pct() const;  // ZeroMeanTarget when mean(y) ~ 0
  double rmse() const;
};

struct EvalResult {
  double mape_pct = 0.0;
  double cvrmse_pct = 0.0;
  double rmse = 0.0;
  std::size_t points = 0;    // points that entered the MAPE sum
  std::size_t excluded = 0;  // near-zero targets left out of MAPE
};

/// Both metrics in original kWh units: predictions and targets are pushed
/// back through the client's target scaling before comparison.
EvalResult evaluate(const model::ModelConfig& cfg, const ParamVector& params,
                    const data::SampleSet& scaled_samples, const data::Scaler& scaler, ExecMode mode);

struct ClientEval {
  std::size_t client_id = 0;
  std::string households;  // semicolon-joined ids
  EvalResult test;
};

struct EvalReport {
  std::string model_tag;
  std::size_t horizon = 1;
  EvalResult global;  // pooled over every client's test split
  std::vector<ClientEval> per_client;
};

EvalReport build_eval_report(const model::ModelConfig& cfg, const ParamVector& params,
                             const std::vector<data::ClientDataset>& clients, ExecMode mode);
void write_eval_report_csv(std::ostream& out, const EvalReport& report);
void write_eval_report_json(std::ostream& out, const EvalReport& report);

struct CsvDiff {
  bool match = true;
  std::size_t row = 0;  // 1-based data row of the first mismatch (0 = header/shape)
  std::string column;
  std::string detail;
};

/// Column-aware comparison of two run history tables. Numeric cells compare
/// within `tolerance`, text cells exactly; any wall_ms column is skipped
/// since timings never reproduce.
CsvDiff compare_history_csv(std::istream& a, std::istream& b, double tolerance);

}  // namespace fedcast::metrics
