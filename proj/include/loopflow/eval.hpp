#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <span>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "loopflow/core/csv.hpp"
#include "loopflow/core/error.hpp"
#include "loopflow/features.hpp"
#include "loopflow/models/checkpoint.hpp"
#include "loopflow/models/network.hpp"
#include "loopflow/models/predictor.hpp"
#include "loopflow/profiles.hpp"

namespace loopflow {

// ---------------------------------------------------------------------------
// Metrics.

struct Metrics {
  double rmse = 0.0;
  double mae = 0.0;
  double smape = 0.0;  // percent, in [0, 200]
};

/// RMSE, MAE and SMAPE (mean of 2|f - g| / (|f| + |g|), as percent; 0/0 terms count as 0).
inline Metrics compute_metrics(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.size() != observed.size()) throw UsageError("predicted and observed lengths differ");
  if (predicted.empty()) throw DataError("cannot compute metrics of an empty set");
  double ss = 0.0, sa = 0.0, sp = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = observed[i] - predicted[i];
    ss += e * e;
    sa += std::abs(e);
    const double denom = std::abs(observed[i]) + std::abs(predicted[i]);
    if (denom > 0.0) sp += 2.0 * std::abs(e) / denom;
  }
  const auto n = static_cast<double>(predicted.size());
  return {std::sqrt(ss / n), sa / n, 100.0 * sp / n};
}

struct MetricReport {
  ModelKind kind = ModelKind::dpp;
  int R = 0;
  int P = 0;
  int repetitions = 1;
  std::size_t points = 0;
  Metrics overall;
  std::vector<std::pair<std::string, Metrics>> per_station;
  std::string features;
  std::string note;
};

/// Observed and predicted raw flow for every test window and station.
struct PredictionTable {
  std::vector<std::string> stations;
  std::vector<Timestamp> times;  // target time of each row
  int R = 0;
  int P = 0;
  Mat observed;
  Mat predicted;
};

inline PredictionTable predict_windows(Predictor& model, const WindowSet& ws) {
  if (ws.empty()) throw DataError("empty test set");
  PredictionTable out;
  out.stations = ws.frame().stations;
  out.R = ws.R();
  out.P = ws.P();
  const auto idx = ws.all_indices();
  ws.fill_targets(idx, nullptr, out.observed);
  out.predicted = model.predict(ws, idx);
  for (std::size_t i = 0; i < ws.size(); ++i) out.times.push_back(ws.frame().grid.time_at(ws.target_index(i)));
  return out;
}

inline MetricReport report_from(const PredictionTable& tab, ModelKind kind) {
  const auto B = static_cast<std::size_t>(tab.observed.rows());
  const auto N = static_cast<std::size_t>(tab.observed.cols());
  if (B == 0 || N == 0) throw DataError("empty test set");
  MetricReport r;
  r.kind = kind;
  r.R = tab.R;
  r.P = tab.P;
  r.points = B * N;
  // row-major storage: the whole-vector view is the matrix data itself
  r.overall = compute_metrics({tab.predicted.data(), r.points}, {tab.observed.data(), r.points});
  std::vector<double> p(B), o(B);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t b = 0; b < B; ++b) {
      p[b] = tab.predicted(static_cast<Index>(b), static_cast<Index>(n));
      o[b] = tab.observed(static_cast<Index>(b), static_cast<Index>(n));
    }
    r.per_station.emplace_back(tab.stations[n], compute_metrics(p, o));
  }
  return r;
}

/// Metrics over every (station, time) pair of `ws`.
inline MetricReport evaluate_model(Predictor& model, const WindowSet& ws) {
  auto r = report_from(predict_windows(model, ws), model.kind());
  r.features = ws.frame().features.code();
  return r;
}

inline void write_predictions(std::ostream& os, const PredictionTable& tab) {
  os << "station_id,timestamp,P,observed,predicted,residual\n";
  for (Index b = 0; b < tab.observed.rows(); ++b) {
    const auto ts = format_timestamp(tab.times[static_cast<std::size_t>(b)]);
    for (Index n = 0; n < tab.observed.cols(); ++n) {
      const double o = tab.observed(b, n), p = tab.predicted(b, n);
      os << tab.stations[static_cast<std::size_t>(n)] << ',' << ts << ',' << tab.P << ',' << csv::fmt(o) << ','
         << csv::fmt(p) << ',' << csv::fmt(o - p) << '\n';
    }
  }
}

inline nlohmann::json report_json(const MetricReport& r) {
  nlohmann::json j{{"model", to_string(r.kind)}, {"R", r.R},           {"P", r.P},         {"repetitions", r.repetitions},
                   {"points", r.points},         {"rmse", r.overall.rmse}, {"mae", r.overall.mae}, {"smape", r.overall.smape},
                   {"features", r.features}};
  if (!r.note.empty()) j["note"] = r.note;
  auto& st = j["per_station"] = nlohmann::json::array();
  for (const auto& [id, m] : r.per_station) st.push_back({{"station", id}, {"rmse", m.rmse}, {"mae", m.mae}, {"smape", m.smape}});
  return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  try {
    MetricReport r;
    const auto kind = parse_model_kind(j.at("model").get<std::string>());
    if (!kind) throw DataError("unknown model kind in report");
    r.kind = *kind;
    r.R = j.at("R").get<int>();
    r.P = j.at("P").get<int>();
    r.repetitions = j.value("repetitions", 1);
    r.points = j.value("points", std::size_t{0});
    r.overall = {j.at("rmse").get<double>(), j.at("mae").get<double>(), j.at("smape").get<double>()};
    r.features = j.value("features", std::string{});
    r.note = j.value("note", std::string{});
    for (const auto& s : j.value("per_station", nlohmann::json::array())) {
      r.per_station.emplace_back(s.at("station").get<std::string>(),
                                 Metrics{s.at("rmse").get<double>(), s.at("mae").get<double>(), s.at("smape").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

inline constexpr const char* kReportHeader = "model,features,R,P,repetitions,points,rmse,mae,smape";

inline void write_report_row(std::ostream& os, const MetricReport& r) {
  os << to_string(r.kind) << ',' << (r.features.empty() ? "f" : r.features) << ',' << r.R << ',' << r.P << ','
     << r.repetitions << ',' << r.points << ',' << csv::fmt(r.overall.rmse) << ',' << csv::fmt(r.overall.mae) << ','
     << csv::fmt(r.overall.smape) << '\n';
}

inline void write_reports(std::ostream& os, const std::vector<MetricReport>& reports) {
  os << kReportHeader << '\n';
  for (const auto& r : reports) write_report_row(os, r);
}

// ---------------------------------------------------------------------------
// Fitting any model kind and rebuilding its predictor.

/// Trains (or, for dpp and arima, configures) a model on `split`. Profiles for
/// dpp come from the train ranges only.
inline TrainedModel fit_model(const SeriesStore& store, const std::shared_ptr<const Frame>& frame, ModelSpec spec,
                              const SplitSpec& split, const nn::TrainConfig& cfg, const WindowLimits& lim = {}) {
  spec.N = frame->N;
  spec.features = frame->features;
  spec.validate();
  TrainedModel m;
  m.spec = spec;
  m.stations = frame->stations;
  m.seed = cfg.seed;
  m.normalization = Normalization::identity(frame->N, frame->F);
  if (spec.kind == ModelKind::dpp) {
    check_disjoint(split);
    if (split.train.empty()) throw DataError("empty train split");
    m.profile_ranges = split.train;
    return m;
  }
  if (spec.kind == ModelKind::arima) return m;
  (void)store;
  const auto ds = make_split(frame, spec.R, spec.P, split, lim);
  std::shared_ptr<Network> net = build_network(spec, cfg.seed);
  m.history = train_network(*net, ds, cfg);
  m.network = std::move(net);
  m.normalization = ds.normalization;
  return m;
}

inline TrainedModel fit_model(const SeriesStore& store, ModelSpec spec, const SplitSpec& split, const nn::TrainConfig& cfg) {
  return fit_model(store, make_frame(store, spec.features), std::move(spec), split, cfg);
}

inline std::unique_ptr<Predictor> make_predictor(const TrainedModel& m, const SeriesStore& store) {
  if (m.stations != store.stations()) throw DataError("model stations do not match the store");
  switch (m.spec.kind) {
    case ModelKind::dpp:
      return std::make_unique<DppPredictor>(build_profiles(store, m.profile_ranges));
    case ModelKind::arima:
      return std::make_unique<ArimaPredictor>(m.spec);
    default:
      if (!m.network) throw DataError("checkpoint carries no network");
      return std::make_unique<NeuralPredictor>(m.network, m.normalization);
  }
}

// ---------------------------------------------------------------------------
// Bounded worker pool.

/// Runs job(0..count-1) on at most `workers` threads. The first exception is
/// rethrown after all workers finish.
inline void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& job) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < std::min(w, count); ++k) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

// ---------------------------------------------------------------------------
// R x P sweep.

struct SweepCell {
  int R = 0;
  int P = 0;
  std::vector<double> rmse;  // one per repetition
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  std::string error;
};

struct SweepGrid {
  ModelKind kind = ModelKind::lstm;
  std::vector<int> Rs;
  std::vector<int> Ps;
  std::vector<SweepCell> cells;  // R-major
  std::map<int, int> best_R;     // P -> R

  const SweepCell& at(int R, int P) const {
    for (const auto& c : cells) {
      if (c.R == R && c.P == P) return c;
    }
    throw UsageError("no sweep cell for R=" + std::to_string(R) + ", P=" + std::to_string(P));
  }

  /// Lowest mean RMSE per column; ties go to the smaller R.
  void select_best() {
    best_R.clear();
    for (int P : Ps) {
      double best = std::numeric_limits<double>::infinity();
      for (int R : Rs) {
        const auto& c = at(R, P);
        if (!c.failed && c.mean < best) {
          best = c.mean;
          best_R[P] = R;
        }
      }
    }
  }
};

struct SweepOptions {
  std::vector<int> Rs;
  std::vector<int> Ps;
  int repetitions = 5;
  std::uint64_t seed = 1;  // repetition k trains with seed + k in every cell
  int jobs = 1;
  ModelSpec base;          // kind and hyperparameters; R and P are overwritten
  nn::TrainConfig train;
  WindowLimits limits;
};

inline std::vector<int> parse_int_range(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  auto to_int = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw UsageError("bad integer range '" + text + "'");
    }
  };
  while (std::getline(ss, part, ',')) {
    const auto dots = part.find("..");
    if (dots == std::string::npos) {
      out.push_back(to_int(part));
    } else {
      const int a = to_int(part.substr(0, dots)), b = to_int(part.substr(dots + 2));
      if (b < a) throw UsageError("range '" + part + "' is reversed");
      for (int v = a; v <= b; ++v) out.push_back(v);
    }
  }
  if (out.empty()) throw UsageError("empty integer range");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Mean validation RMSE over seeded repetitions for every (R, P). Cells whose
/// training fails are marked and the grid is still returned.
inline SweepGrid sweep(const SeriesStore& store, const SweepOptions& opt, const SplitSpec& split) {
  if (opt.repetitions < 1) throw UsageError("repetitions must be positive");
  SweepGrid grid;
  grid.kind = opt.base.kind;
  grid.Rs = opt.Rs;
  grid.Ps = opt.Ps;
  std::sort(grid.Rs.begin(), grid.Rs.end());
  std::sort(grid.Ps.begin(), grid.Ps.end());
  if (grid.Rs.empty() || grid.Ps.empty()) throw UsageError("sweep needs at least one R and one P");
  for (int R : grid.Rs) {
    for (int P : grid.Ps) check_horizons(R, P, opt.limits);
  }
  check_disjoint(split);
  const auto frame = make_frame(store, opt.base.features);
  const bool stochastic = is_neural(opt.base.kind);
  const int reps = stochastic ? opt.repetitions : 1;
  for (int R : grid.Rs) {
    for (int P : grid.Ps) grid.cells.push_back({R, P, std::vector<double>(static_cast<std::size_t>(reps)), {}, {}, false, {}});
  }
  std::vector<std::string> errors(grid.cells.size() * static_cast<std::size_t>(reps));
  const std::size_t jobs = errors.size();
  parallel_for(jobs, opt.jobs, [&](std::size_t j) {
    auto& cell = grid.cells[j / static_cast<std::size_t>(reps)];
    const auto rep = j % static_cast<std::size_t>(reps);
    try {
      ModelSpec spec = opt.base;
      spec.R = cell.R;
      spec.P = cell.P;
      nn::TrainConfig cfg = opt.train;
      cfg.seed = opt.seed + rep;
      const auto model = fit_model(store, frame, spec, split, cfg, opt.limits);
      const auto predictor = make_predictor(model, store);
      const auto val = build_windows(frame, cell.R, cell.P, split.validation, opt.limits);
      cell.rmse[rep] = evaluate_model(*predictor, val).overall.rmse;
    } catch (const Error& e) {
      errors[j] = e.what();
    }
  });
  for (std::size_t c = 0; c < grid.cells.size(); ++c) {
    auto& cell = grid.cells[c];
    for (int k = 0; k < reps; ++k) {
      const auto& e = errors[c * static_cast<std::size_t>(reps) + static_cast<std::size_t>(k)];
      if (!e.empty() && !cell.failed) {
        cell.failed = true;
        cell.error = e;
      }
    }
    if (cell.failed) continue;
    double s = 0.0;
    for (double v : cell.rmse) s += v;
    cell.mean = s / reps;
    double ss = 0.0;
    for (double v : cell.rmse) ss += (v - cell.mean) * (v - cell.mean);
    cell.std = std::sqrt(ss / reps);
  }
  grid.select_best();
  return grid;
}

inline void write_sweep(std::ostream& os, const SweepGrid& g) {
  os << "model,R,P,repetitions,mean_rmse,std_rmse,failed,error\n";
  for (const auto& c : g.cells) {
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << to_string(g.kind) << ',' << c.R << ',' << c.P << ',' << c.rmse.size() << ','
       << (c.failed ? "" : csv::fmt(c.mean)) << ',' << (c.failed ? "" : csv::fmt(c.std)) << ',' << (c.failed ? 1 : 0)
       << ',' << err << '\n';
  }
}

inline void write_best_R(std::ostream& os, const SweepGrid& g) {
  os << "P,best_R,mean_rmse\n";
  for (const auto& [P, R] : g.best_R) os << P << ',' << R << ',' << csv::fmt(g.at(R, P).mean) << '\n';
}

inline SweepGrid read_sweep(std::istream& is) {
  SweepGrid g;
  std::string line;
  if (!std::getline(is, line) || line.rfind("model,R,P", 0) != 0) throw DataError("not a sweep table");
  std::set<int> Rs, Ps;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = csv::split(line);
    if (f.size() < 7) throw DataError("short sweep row");
    const auto kind = parse_model_kind(f[0]);
    if (!kind) throw DataError("unknown model kind '" + std::string(f[0]) + "'");
    g.kind = *kind;
    SweepCell c;
    const auto R = csv::parse_int(f[1]), P = csv::parse_int(f[2]);
    if (!R || !P) throw DataError("bad R or P in sweep row");
    c.R = static_cast<int>(*R);
    c.P = static_cast<int>(*P);
    c.failed = f[6] == "1";
    if (!c.failed) {
      const auto mean = csv::parse_double(f[4]), sd = csv::parse_double(f[5]);
      if (!mean || !sd) throw DataError("bad RMSE in sweep row");
      c.mean = *mean;
      c.std = *sd;
    }
    if (f.size() > 7) c.error = std::string(f[7]);
    Rs.insert(c.R);
    Ps.insert(c.P);
    g.cells.push_back(std::move(c));
  }
  g.Rs.assign(Rs.begin(), Rs.end());
  g.Ps.assign(Ps.begin(), Ps.end());
  g.select_best();
  return g;
}

// ---------------------------------------------------------------------------
// Feature-combination study.

/// One model per feature set, same seed for each, evaluated on the test range.
inline std::vector<MetricReport> feature_combination_study(const SeriesStore& store, const std::vector<FeatureSet>& sets,
                                                           const ModelSpec& base, const SplitSpec& split,
                                                           const nn::TrainConfig& cfg, int jobs = 1) {
  std::vector<MetricReport> out(sets.size());
  parallel_for(sets.size(), jobs, [&](std::size_t i) {
    ModelSpec spec = base;
    spec.features = sets[i];
    const auto frame = make_frame(store, sets[i]);
    const auto model = fit_model(store, frame, spec, split, cfg);
    const auto predictor = make_predictor(model, store);
    const auto test = build_windows(frame, spec.R, spec.P, split.test, {}, split.align_test_P);
    out[i] = evaluate_model(*predictor, test);
    out[i].note = "percentage error column is SMAPE";
  });
  return out;
}

// ---------------------------------------------------------------------------
// Residual export.

struct ResidualColumn {
  int P = 0;
  std::vector<double> predicted;  // NaN where no valid window ends at that step
};

struct ResidualSeries {
  std::string station;
  Date date;
  std::vector<Timestamp> times;
  std::vector<double> observed;
  std::vector<ResidualColumn> columns;
};

/// Per-interval observed flow at `station` on `date` and, for each model, its
/// prediction for that interval. Inputs may reach back into the previous day.
inline ResidualSeries export_residuals(const SeriesStore& store, const std::string& station, Date date,
                                       const std::vector<std::pair<const TrainedModel*, Predictor*>>& models,
                                       const std::vector<DateRange>& allowed = {}) {
  const auto s = store.station_index(station);
  const auto& g = store.grid();
  const auto [b, e] = g.index_range({date, date});
  if (b < 0 || e > g.size() || b >= e) throw DataError("date " + format_date(date) + " is outside the store");
  if (!allowed.empty() && !in_any(allowed, date)) throw UsageError("date " + format_date(date) + " is outside the test range");
  ResidualSeries out{station, date, {}, {}, {}};
  for (auto t = b; t < e; ++t) {
    out.times.push_back(g.time_at(t));
    out.observed.push_back(store.is_usable(s, Feature::flow, t) ? store.value(s, Feature::flow, t)
                                                               : std::numeric_limits<double>::quiet_NaN());
  }
  for (const auto& [model, predictor] : models) {
    const auto& spec = model->spec;
    const auto frame = make_frame(store, spec.features);
    const std::int64_t back = spec.R - 1 + spec.P;
    auto anchors = window_anchors(*frame, spec.R, spec.P, std::max<std::int64_t>(0, b - back), e);
    std::erase_if(anchors, [&](std::int64_t a) { return a + spec.P < b; });
    ResidualColumn col{spec.P, std::vector<double>(static_cast<std::size_t>(e - b), std::numeric_limits<double>::quiet_NaN())};
    if (!anchors.empty()) {
      const WindowSet ws(frame, spec.R, spec.P, anchors);
      const Mat pred = predictor->predict_all(ws);
      for (std::size_t i = 0; i < ws.size(); ++i) {
        col.predicted[static_cast<std::size_t>(ws.target_index(i) - b)] = pred(static_cast<Index>(i), static_cast<Index>(s));
      }
    }
    out.columns.push_back(std::move(col));
  }
  return out;
}

inline void write_residuals(std::ostream& os, const ResidualSeries& r) {
  os << "station_id,timestamp,observed";
  for (const auto& c : r.columns) os << ",pred_P" << c.P << ",resid_P" << c.P;
  os << '\n';
  auto cell = [](double v) { return std::isnan(v) ? std::string{} : csv::fmt(v); };
  for (std::size_t i = 0; i < r.times.size(); ++i) {
    os << r.station << ',' << format_timestamp(r.times[i]) << ',' << cell(r.observed[i]);
    for (const auto& c : r.columns) os << ',' << cell(c.predicted[i]) << ',' << cell(r.observed[i] - c.predicted[i]);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// SVG heatmaps.

struct Heatmap {
  std::string title;
  std::string row_label;
  std::string col_label;
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<std::vector<double>> values;  // [row][col], NaN drawn grey
};

namespace svg_detail {

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

/// Blue (0) to yellow to red (1).
inline std::string colour(double u) {
  u = std::clamp(u, 0.0, 1.0);
  double r, g, b;
  if (u < 0.5) {
    const double k = u / 0.5;
    r = 49 + k * (255 - 49);
    g = 54 + k * (255 - 54);
    b = 149 + k * (191 - 149);
  } else {
    const double k = (u - 0.5) / 0.5;
    r = 255 + k * (165 - 255);
    g = 255 + k * (0 - 255);
    b = 191 + k * (38 - 191);
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(r), static_cast<int>(g), static_cast<int>(b));
  return buf;
}

}  // namespace svg_detail

inline void write_heatmap_svg(std::ostream& os, const Heatmap& h) {
  using svg_detail::escape;
  const std::size_t R = h.rows.size(), C = h.cols.size();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& row : h.values) {
    for (double v : row) {
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  const double cw = C > 60 ? 3.0 : 28.0, ch = R > 60 ? 3.0 : 18.0;
  const double left = 70, top = 40, right = 20, bottom = 50;
  const double W = left + cw * static_cast<double>(C) + right, H = top + ch * static_cast<double>(R) + bottom;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"13\">" << escape(h.title) << "</text>\n";
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      const double v = r < h.values.size() && c < h.values[r].size() ? h.values[r][c] : std::numeric_limits<double>::quiet_NaN();
      std::string fill = "#bbbbbb";
      if (std::isfinite(v)) {
        fill = svg_detail::colour(hi > lo ? (v - lo) / (hi - lo) : 0.5);
      }
      os << "<rect x=\"" << left + cw * static_cast<double>(c) << "\" y=\"" << top + ch * static_cast<double>(r) << "\" width=\"" << cw
         << "\" height=\"" << ch << "\" fill=\"" << fill << "\"><title>" << escape(h.rows[r]) << ", " << escape(h.cols[c]) << ": "
         << (std::isfinite(v) ? csv::fmt(v) : std::string("n/a")) << "</title></rect>\n";
    }
    if (R <= 60) {
      os << "<text x=\"" << left - 4 << "\" y=\"" << top + ch * (static_cast<double>(r) + 0.7) << "\" text-anchor=\"end\">"
         << escape(h.rows[r]) << "</text>\n";
    }
  }
  const std::size_t step = C > 60 ? C / 12 : 1;
  for (std::size_t c = 0; c < C; c += step) {
    os << "<text x=\"" << left + cw * (static_cast<double>(c) + 0.5) << "\" y=\"" << top + ch * static_cast<double>(R) + 14
       << "\" text-anchor=\"middle\">" << escape(h.cols[c]) << "</text>\n";
  }
  os << "<text x=\"" << left + cw * static_cast<double>(C) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << escape(h.col_label)
     << "</text>\n";
  os << "<text x=\"14\" y=\"" << top + ch * static_cast<double>(R) / 2 << "\" transform=\"rotate(-90 14 "
     << top + ch * static_cast<double>(R) / 2 << ")\" text-anchor=\"middle\">" << escape(h.row_label) << "</text>\n";
  os << "</svg>\n";
}

/// Mean RMSE with R down and P across.
inline Heatmap sweep_heatmap(const SweepGrid& g) {
  Heatmap h;
  h.title = std::string(to_string(g.kind)) + " validation RMSE";
  h.row_label = "past horizon R";
  h.col_label = "prediction horizon P";
  for (int R : g.Rs) h.rows.push_back(std::to_string(R));
  for (int P : g.Ps) h.cols.push_back(std::to_string(P));
  for (int R : g.Rs) {
    std::vector<double> row;
    for (int P : g.Ps) {
      const auto& c = g.at(R, P);
      row.push_back(c.failed ? std::numeric_limits<double>::quiet_NaN() : c.mean);
    }
    h.values.push_back(std::move(row));
  }
  return h;
}

/// Flow / capacity with stations down and time of day across.
inline Heatmap congestion_heatmap(const CongestionMap& m, const TimeGrid& grid) {
  Heatmap h;
  h.title = std::string("congestion ratio, ") + weekday_name(m.weekday);
  h.row_label = "station";
  h.col_label = "time of day";
  h.rows = m.stations;
  const int ipd = grid.intervals_per_day();
  for (int k = 0; k < ipd; ++k) {
    const int minute = grid.minute_of_slot(k);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d:%02d", minute / 60, minute % 60);
    h.cols.emplace_back(buf);
  }
  h.values = m.ratio;
  return h;
}

}  // namespace loopflow
