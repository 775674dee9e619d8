#include "fedcast/metrics.hpp"

#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace fedcast::metrics {

MapeResult mape(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.size() != y_pred.size()) fail(Err::BadDimensions, "target and prediction lengths differ");
  MapeResult r;
  double sum = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (std::abs(y_true[i]) <= kMapeExcludeThreshold) {
      ++r.excluded;
      continue;
    }
    sum += std::abs(y_true[i] - y_pred[i]) / std::abs(y_true[i]);
    ++r.used;
  }
  if (r.used == 0) fail(Err::AllPointsExcluded, "every target was below the exclusion threshold");
  r.mape_pct = 100.0 * sum / static_cast<double>(r.used);
  return r;
}

double cv_rmse(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.size() != y_pred.size()) fail(Err::BadDimensions, "target and prediction lengths differ");
  if (y_true.empty()) fail(Err::BadDimensions, "empty target vector");
  double mean = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    mean += y_true[i];
    const double d = y_true[i] - y_pred[i];
    sq += d * d;
  }
  mean /= static_cast<double>(y_true.size());
  if (std::abs(mean) <= kZeroMeanEps) fail(Err::ZeroMeanTarget, "target mean is too close to zero");
  return 100.0 * std::sqrt(sq / static_cast<double>(y_true.size())) / mean;
}

void PooledAccumulator::add(double y_true, double y_pred) {
  ++n;
  y_sum += y_true;
  const double d = y_true - y_pred;
  sse += d * d;
  if (std::abs(y_true) <= kMapeExcludeThreshold) {
    ++excluded;
  } else {
    rel_sum += std::abs(d) / std::abs(y_true);
    ++used;
  }
}

double PooledAccumulator::mape_pct() const {
  if (used == 0) fail(Err::AllPointsExcluded, "every target was below the exclusion threshold");
  return 100.0 * rel_sum / static_cast<double>(used);
}

double PooledAccumulator::cv_rmse_pct() const {
  if (n == 0) fail(Err::BadDimensions, "no points accumulated");
  const double mean = y_sum / static_cast<double>(n);
  if (std::abs(mean) <= kZeroMeanEps) fail(Err::ZeroMeanTarget, "target mean is too close to zero");
  return 100.0 * rmse() / mean;
}

double PooledAccumulator::rmse() const {
  if (n == 0) fail(Err::BadDimensions, "no points accumulated");
  return std::sqrt(sse / static_cast<double>(n));
}

namespace {

EvalResult finalize(const PooledAccumulator& acc) {
  EvalResult out;
  out.mape_pct = acc.mape_pct();
  out.cvrmse_pct = acc.cv_rmse_pct();
  out.rmse = acc.rmse();
  out.points = acc.used;
  out.excluded = acc.excluded;
  return out;
}

void accumulate_split(const model::ModelConfig& cfg, const ParamVector& params,
                      const data::SampleSet& scaled, const data::Scaler& scaler, ExecMode mode,
                      PooledAccumulator& acc) {
  if (scaled.size() == 0) return;
  std::vector<double> pred = model::predict(cfg, params, scaled, mode);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    acc.add(data::inverse_target(scaler, scaled.y[i]), data::inverse_target(scaler, pred[i]));
  }
}

}  // namespace

EvalResult evaluate(const model::ModelConfig& cfg, const ParamVector& params,
                    const data::SampleSet& scaled_samples, const data::Scaler& scaler, ExecMode mode) {
  if (scaled_samples.size() == 0) fail(Err::EmptyDataset, "nothing to evaluate");
  PooledAccumulator acc;
  accumulate_split(cfg, params, scaled_samples, scaler, mode, acc);
  return finalize(acc);
}

EvalReport build_eval_report(const model::ModelConfig& cfg, const ParamVector& params,
                             const std::vector<data::ClientDataset>& clients, ExecMode mode) {
  if (clients.empty()) fail(Err::EmptyDataset, "no clients to evaluate");
  EvalReport report;
  report.model_tag = model::arch_name(cfg.arch);
  report.horizon = cfg.horizon;
  PooledAccumulator pooled;
  for (const data::ClientDataset& c : clients) {
    PooledAccumulator acc;
    accumulate_split(cfg, params, c.test, c.scaler, mode, acc);
    accumulate_split(cfg, params, c.test, c.scaler, mode, pooled);
    ClientEval ce;
    ce.client_id = c.id;
    for (std::size_t i = 0; i < c.households.size(); ++i) {
      if (i) ce.households += ';';
      ce.households += c.households[i];
    }
    ce.test = finalize(acc);
    report.per_client.push_back(std::move(ce));
  }
  report.global = finalize(pooled);
  return report;
}

void write_eval_report_csv(std::ostream& out, const EvalReport& report) {
  out << "scope,client_id,households,mape_pct,cvrmse_pct,rmse_kwh,points,excluded\n";
  auto row = [&](const std::string& scope, const std::string& id, const std::string& hh,
                 const EvalResult& r) {
    out << scope << ',' << id << ',' << hh << ',' << data::format_double(r.mape_pct) << ','
        << data::format_double(r.cvrmse_pct) << ',' << data::format_double(r.rmse) << ',' << r.points << ','
        << r.excluded << '\n';
  };
  row("global", "", "", report.global);
  for (const ClientEval& ce : report.per_client) {
    row("client", std::to_string(ce.client_id), ce.households, ce.test);
  }
}

void write_eval_report_json(std::ostream& out, const EvalReport& report) {
  nlohmann::json j;
  j["model"] = report.model_tag;
  j["horizon"] = report.horizon;
  auto pack = [](const EvalResult& r) {
    return nlohmann::json{{"mape_pct", r.mape_pct}, {"cvrmse_pct", r.cvrmse_pct},
                          {"rmse_kwh", r.rmse},     {"points", r.points},
                          {"excluded", r.excluded}};
  };
  j["global"] = pack(report.global);
  j["clients"] = nlohmann::json::array();
  for (const ClientEval& ce : report.per_client) {
    nlohmann::json c = pack(ce.test);
    c["client_id"] = ce.client_id;
    c["households"] = ce.households;
    j["clients"].push_back(std::move(c));
  }
  out << j.dump(2) << '\n';
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  std::string body = line;
  if (!body.empty() && body.back() == '\r') body.pop_back();
  for (std::size_t i = 0; i <= body.size(); ++i) {
    if (i == body.size() || body[i] == ',') {
      fields.push_back(body.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace

CsvDiff compare_history_csv(std::istream& a, std::istream& b, double tolerance) {
  std::string la, lb;
  if (!std::getline(a, la) || !std::getline(b, lb)) fail(Err::MalformedHeader, "missing header row");
  std::vector<std::string> ha = split_line(la), hb = split_line(lb);
  if (ha != hb) fail(Err::SchemaMismatch, "history tables have different columns");

  std::vector<bool> skip(ha.size(), false);
  for (std::size_t i = 0; i < ha.size(); ++i) skip[i] = (ha[i] == "wall_ms");

  CsvDiff diff;
  std::size_t row = 0;
  while (true) {
    const bool got_a = static_cast<bool>(std::getline(a, la));
    const bool got_b = static_cast<bool>(std::getline(b, lb));
    if (!got_a && !got_b) break;
    ++row;
    if (got_a != got_b) {
      diff.match = false;
      diff.row = row;
      diff.detail = "row counts differ";
      return diff;
    }
    std::vector<std::string> fa = split_line(la), fb = split_line(lb);
    if (fa.size() != ha.size() || fb.size() != ha.size()) {
      diff.match = false;
      diff.row = row;
      diff.detail = "field count differs from the header";
      return diff;
    }
    for (std::size_t c = 0; c < ha.size(); ++c) {
      if (skip[c]) continue;
      double va, vb;
      bool equal;
      if (parse_number(fa[c], va) && parse_number(fb[c], vb)) {
        equal = std::abs(va - vb) <= tolerance;
      } else {
        equal = fa[c] == fb[c];
      }
      if (!equal) {
        diff.match = false;
        diff.row = row;
        diff.column = ha[c];
        diff.detail = "'" + fa[c] + "' vs '" + fb[c] + "'";
        return diff;
      }
    }
  }
  return diff;
}

}  // namespace fedcast::metrics
