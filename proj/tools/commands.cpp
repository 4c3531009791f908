#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "loopflow/anomaly.hpp"
#include "loopflow/config.hpp"
#include "loopflow/eval.hpp"
#include "loopflow/features.hpp"
#include "loopflow/ingest.hpp"
#include "loopflow/mask.hpp"
#include "loopflow/models/checkpoint.hpp"
#include "loopflow/profiles.hpp"
#include "loopflow/store_io.hpp"
#include "loopflow/synth.hpp"
#include "loopflow/topology.hpp"

namespace loopflow::cli {
namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small file helpers.

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  return os;
}

const std::string& require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required input ") + flag);
  if (!fs::exists(value)) throw DataError("input '" + value + "' does not exist");
  return value;
}

fs::path prepare_out(const std::string& dir) {
  if (dir.empty()) throw UsageError("missing --out directory");
  fs::create_directories(dir);
  return fs::path(dir);
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Option plumbing: flag > config file > default.

struct Shared {
  std::string config;
  std::string out;
  int jobs = 1;
  std::uint64_t seed = 0;
  std::string train, validation, test;
  int align_P = 0;
  bool no_normalize = false;
};

void add_shared(CLI::App* sub, Shared& s, bool with_seed, bool with_split) {
  sub->add_option("--config", s.config, "Run configuration file (JSON)");
  sub->add_option("--out", s.out, "Output directory");
  sub->add_option("--jobs", s.jobs, "Worker threads")->check(CLI::PositiveNumber);
  if (with_seed) sub->add_option("--seed", s.seed, "Random seed");
  if (with_split) {
    sub->add_option("--train", s.train, "Train date ranges, e.g. 2017-02-06..2017-03-19");
    sub->add_option("--validation", s.validation, "Validation date ranges");
    sub->add_option("--test", s.test, "Test date ranges");
    sub->add_option("--align-test-P", s.align_P, "Fix test targets across every P up to this value");
    sub->add_flag("--no-normalize", s.no_normalize, "Train on raw inputs and targets (ablation)");
  }
}

RunConfig resolve(CLI::App* sub, const Shared& s) {
  RunConfig c = s.config.empty() ? RunConfig{} : load_run_config(s.config);
  if (sub->count("--out")) c.paths.out = s.out;
  if (sub->count("--jobs")) c.jobs = s.jobs;
  if (sub->get_option_no_throw("--seed") && sub->count("--seed")) c.seed = s.seed;
  if (sub->get_option_no_throw("--train")) {
    if (sub->count("--train")) c.split.train = parse_range_list(s.train);
    if (sub->count("--validation")) c.split.validation = parse_range_list(s.validation);
    if (sub->count("--test")) c.split.test = parse_range_list(s.test);
    if (sub->count("--align-test-P")) c.split.align_test_P = s.align_P;
    if (sub->count("--no-normalize")) c.split.normalize = false;
  }
  return c;
}

SplitSpec effective_split(const RunConfig& c, const TimeGrid& g) {
  SplitSpec s = c.split;
  if (s.train.empty() && s.validation.empty() && s.test.empty()) {
    const int align = s.align_test_P;
    const bool norm = s.normalize;
    s = default_split(g);
    s.align_test_P = align;
    s.normalize = norm;
  }
  check_disjoint(s);
  return s;
}

// ---------------------------------------------------------------------------
// Commands.

struct Io {
  std::ostream& out;
  std::ostream& err;
};

int cmd_synth(const RunConfig& c, const std::string& spec_path, Io io) {
  SynthSpec spec = spec_path.empty() ? SynthSpec{} : synth_spec_from_json(read_json(require(spec_path, "--spec")));
  if (c.seed) spec.seed = *c.seed;
  const auto dir = prepare_out(c.paths.out);
  const auto corpus = generate(spec);
  const auto inj = inject_anomalies(corpus.store, spec.anomalies, spec.seed + 1);
  open_out(dir / "topology.json") << dump_topology(corpus.topology) << '\n';
  {
    auto os = open_out(dir / "records.csv");
    write_records(os, inj.corrupted);
  }
  {
    auto os = open_out(dir / "clean_records.csv");
    write_records(os, corpus.store);
  }
  {
    auto os = open_out(dir / "mask.csv");
    write_mask(os, inj.truth.mask, corpus.store);
  }
  io.out << "generated " << corpus.store.station_count() << " stations x " << corpus.store.time_count()
         << " intervals, " << inj.truth.mask.size() << " masked cells -> " << dir.string() << '\n';
  return 0;
}

int cmd_ingest(const RunConfig& c, Io io) {
  const auto topo = load_topology(read_text(require(c.paths.topology, "--topology")));
  std::ifstream is(require(c.paths.records, "--records"));
  auto parsed = parse_records(is);
  const std::chrono::minutes interval{c.interval_minutes};
  const auto grid = infer_grid(parsed.records, interval);
  auto aligned = align_to_grid(parsed.records, grid, topo);
  const auto dir = prepare_out(c.paths.out);
  save_store((dir / "store.lfs").string(), aligned.store);
  {
    auto os = open_out(dir / "ingest_issues.csv");
    os << "line,message\n";
    for (const auto* list : {&parsed.issues, &aligned.issues}) {
      for (const auto& i : *list) {
        std::string m = i.message;
        std::replace(m.begin(), m.end(), ',', ';');
        os << i.line << ',' << m << '\n';
      }
    }
  }
  {
    auto os = open_out(dir / "missing_by_month.csv");
    os << "month,missing_records\n";
    for (const auto& [m, n] : monthly_missing_report(aligned.store)) os << m << ',' << n << '\n';
  }
  {
    // per-relation conservation verdicts over every interval
    auto os = open_out(dir / "conservation.csv");
    os << "whole,parts,case,pass,fail,unverifiable,max_residual\n";
    const auto& st = aligned.store;
    for (const auto& rel : topo.relations()) {
      std::size_t pass = 0, fail = 0, unv = 0;
      double worst = 0.0;
      std::map<std::string, double> flows;
      for (std::int64_t t = 0; t < st.time_count(); ++t) {
        flows.clear();
        flows[rel.whole] = st.value(st.station_index(rel.whole), Feature::flow, t);
        for (const auto& p : rel.parts) flows[p] = st.value(st.station_index(p), Feature::flow, t);
        const auto v = check_conservation(flows, rel);
        if (v.verdict == Verdict::pass) ++pass;
        if (v.verdict == Verdict::fail) ++fail;
        if (v.verdict == Verdict::unverifiable) ++unv;
        if (v.verdict != Verdict::unverifiable) worst = std::max(worst, v.residual);
      }
      std::string parts;
      for (const auto& p : rel.parts) parts += (parts.empty() ? "" : "+") + p;
      os << rel.whole << ',' << parts << ',' << to_string(rel.kind) << ',' << pass << ',' << fail << ',' << unv << ','
         << csv::fmt(worst) << '\n';
    }
  }
  const auto issues = parsed.issues.size() + aligned.issues.size();
  io.out << "ingested " << parsed.records.size() << " records onto " << grid.size() << " intervals; "
         << aligned.store.missing_record_count() << " missing records; " << issues << " issues\n";
  if (issues) io.err << "warning: " << issues << " input issues listed in ingest_issues.csv\n";
  return 0;
}

std::vector<DateRange> profile_ranges_of(const RunConfig& c, const SeriesStore& store, const std::string& range_flag) {
  if (!range_flag.empty()) return parse_range_list(range_flag);
  if (c.detection.profile_range) return {*c.detection.profile_range};
  return {full_range(store)};
}

int cmd_profile(const RunConfig& c, const std::string& range_flag, Io io) {
  const auto store = load_store(require(c.paths.store, "--store"));
  const auto ranges = profile_ranges_of(c, store, range_flag);
  const auto profiles = build_profiles(store, ranges);
  const auto dir = prepare_out(c.paths.out);
  {
    auto os = open_out(dir / "profiles.csv");
    write_profiles(os, profiles);
  }
  if (!c.paths.topology.empty()) {
    const auto topo = load_topology(read_text(require(c.paths.topology, "--topology")));
    const auto caps = resolve_capacities(topo, store);
    auto os = open_out(dir / "congestion.csv");
    os << "weekday,station,slot,ratio\n";
    for (int w = 0; w < 7; ++w) {
      const auto wd = static_cast<Weekday>(w);
      if (!profiles.find(0, wd, Feature::flow)) continue;
      const auto m = congestion_map(profiles, caps, wd);
      for (std::size_t s = 0; s < m.stations.size(); ++s) {
        for (std::size_t k = 0; k < m.ratio[s].size(); ++k) {
          if (!std::isnan(m.ratio[s][k])) os << weekday_name(wd) << ',' << m.stations[s] << ',' << k << ',' << csv::fmt(m.ratio[s][k]) << '\n';
        }
      }
    }
  }
  io.out << "built " << profiles.size() << " profiles -> " << (dir / "profiles.csv").string() << '\n';
  return 0;
}

int cmd_detect(const RunConfig& c, Io io) {
  auto store = load_store(require(c.paths.store, "--store"));
  const auto topo = load_topology(read_text(require(c.paths.topology, "--topology")));
  const auto sum = run_detection(store, topo, c.detection);
  const auto dir = prepare_out(c.paths.out);
  save_store((dir / "store.lfs").string(), store);
  nlohmann::json j{{"missing_records", sum.missing_records}, {"zero_cells", sum.zero_cells},
                   {"long_zero_periods", sum.long_zero_periods}, {"substituted", sum.substituted},
                   {"high_cells", sum.high_cells},           {"unreliable_days", sum.unreliable_days},
                   {"stage", to_string(store.stage())}};
  open_out(dir / "detection.json") << j.dump(2) << '\n';
  {
    auto os = open_out(dir / "anomalies.csv");
    os << "station_id,timestamp,feature,kind,fix\n";
    for (std::size_t s = 0; s < store.station_count(); ++s) {
      for (std::int64_t t = 0; t < store.time_count(); ++t) {
        for (Feature f : kAllFeatures) {
          const auto k = store.anomaly(s, f, t);
          if (k == AnomalyKind::none || k == AnomalyKind::missing) continue;
          os << store.stations()[s] << ',' << format_timestamp(store.grid().time_at(t)) << ',' << to_string(f) << ','
             << to_string(k) << ',' << (store.fix(s, f, t) == CellFix::original ? "none" : "profile") << '\n';
        }
      }
    }
  }
  io.out << "detected " << sum.zero_cells << " daytime-zero cells (" << sum.long_zero_periods << " long periods), "
         << sum.high_cells << " high cells, " << sum.unreliable_days << " unreliable days\n";
  return 0;
}

int cmd_repair(const RunConfig& c, const std::string& range_flag, Io io) {
  auto store = load_store(require(c.paths.store, "--store"));
  const auto profiles = build_profiles(store, profile_ranges_of(c, store, range_flag));
  const auto rep = repair_invalid(store, profiles, c.repair_method, c.repair);
  const auto dir = prepare_out(c.paths.out);
  save_store((dir / "store.lfs").string(), store);
  {
    auto os = open_out(dir / "repair_report.csv");
    write_repair_report(os, rep, store);
  }
  io.out << "repaired " << rep.repaired << " cells with " << to_string(c.repair_method) << ", " << rep.left_invalid
         << " left invalid\n";
  return 0;
}

void write_eval_rows(std::ostream& os, const std::string& label, const RepairEvaluation& ev) {
  for (const auto& [f, s] : ev.by_feature) {
    os << label << ',' << to_string(f) << ',' << csv::fmt(s.rmse_mean) << ',' << csv::fmt(s.rmse_std) << ',' << s.stations
       << ',' << s.cells << ',' << s.unrepaired << '\n';
  }
}

int cmd_repair_eval(const RunConfig& c, const std::vector<std::string>& repaired, const std::string& range_flag, Io io) {
  const auto store = load_store(require(c.paths.store, "--store"));
  Mask mask;
  {
    std::ifstream is(require(c.paths.mask, "--mask"));
    mask = read_mask(is, store);
  }
  const auto dir = prepare_out(c.paths.out);
  auto os = open_out(dir / "repair_eval.csv");
  os << "method,feature,rmse_mean,rmse_std,stations,cells,unrepaired\n";
  std::ostringstream table;
  if (repaired.empty()) {
    if (store.stage() != Stage::high_filtered) throw UsageError("repair-eval needs a detected store or --repaired files");
    const auto profiles = build_profiles(store, profile_ranges_of(c, store, range_flag));
    for (auto m : {RepairMethod::profile, RepairMethod::affine}) {
      SeriesStore s = store;
      repair_invalid(s, profiles, m, c.repair);
      const auto ev = evaluate_repair(s, mask);
      write_eval_rows(os, to_string(m), ev);
      write_eval_rows(table, to_string(m), ev);
    }
  } else {
    for (const auto& path : repaired) {
      const auto s = load_store(require(path, "--repaired"));
      if (s.stations() != store.stations() || !(s.grid() == store.grid())) throw DataError("'" + path + "' does not match the mask store");
      const auto ev = evaluate_repair(s, mask);
      const auto label = fs::path(path).parent_path().filename().string();
      write_eval_rows(os, label.empty() ? path : label, ev);
      write_eval_rows(table, label.empty() ? path : label, ev);
    }
  }
  io.out << "method,feature,rmse_mean,rmse_std,stations,cells,unrepaired\n" << table.str();
  return 0;
}

struct ModelFlags {
  std::string kind;
  int R = 0, P = 0;
  std::string features;
  int epochs = 0, batch = 0, patience = 0;
  double lr = 0.0;
  int hidden = 0;
};

void add_model_flags(CLI::App* sub, ModelFlags& m) {
  sub->add_option("--model", m.kind, "Model kind: dpp, arima, bpnn, sep-bpnn, cnn, lstm, cnn-lstm");
  sub->add_option("--R", m.R, "Past horizon (intervals)");
  sub->add_option("--P", m.P, "Prediction horizon (intervals)");
  sub->add_option("--features", m.features, "Input features, e.g. f, fo, fso");
  sub->add_option("--epochs", m.epochs, "Maximum epochs");
  sub->add_option("--batch", m.batch, "Batch size");
  sub->add_option("--lr", m.lr, "Learning rate");
  sub->add_option("--patience", m.patience, "Early-stopping patience");
  sub->add_option("--hidden", m.hidden, "Hidden size (bpnn, lstm, cnn-lstm)");
}

void apply_model_flags(CLI::App* sub, const ModelFlags& m, RunConfig& c) {
  if (sub->count("--model")) {
    const auto k = parse_model_kind(m.kind);
    if (!k) throw UsageError("unknown model kind '" + m.kind + "'");
    c.model.kind = *k;
  }
  if (sub->count("--R")) c.model.R = m.R;
  if (sub->count("--P")) c.model.P = m.P;
  if (sub->count("--features")) c.model.features = FeatureSet::parse(m.features);
  if (sub->count("--epochs")) c.train.max_epochs = m.epochs;
  if (sub->count("--batch")) c.train.batch_size = m.batch;
  if (sub->count("--lr")) c.train.learning_rate = m.lr;
  if (sub->count("--patience")) c.train.patience = m.patience;
  if (sub->count("--hidden")) {
    c.model.bpnn_hidden = m.hidden;
    c.model.lstm_hidden = m.hidden;
  }
  c.train.validate();
}

std::uint64_t require_seed(const RunConfig& c, const char* command) {
  if (!c.seed) throw UsageError(std::string(command) + " requires an explicit seed (--seed or \"seed\" in the config)");
  return *c.seed;
}

int cmd_dataset(const RunConfig& c, Io io) {
  const auto store = load_store(require(c.paths.store, "--store"));
  const auto split = effective_split(c, store.grid());
  const auto frame = make_frame(store, c.model.features);
  const auto ds = make_split(frame, c.model.R, c.model.P, split);
  const auto dir = prepare_out(c.paths.out);
  nlohmann::json j{{"R", c.model.R},
                   {"P", c.model.P},
                   {"features", c.model.features.code()},
                   {"stations", frame->stations},
                   {"train", ds.train.size()},
                   {"validation", ds.validation.size()},
                   {"test", ds.test.size()},
                   {"normalization",
                    {{"in_mean", ds.normalization.in_mean},
                     {"in_std", ds.normalization.in_std},
                     {"out_mean", ds.normalization.out_mean},
                     {"out_std", ds.normalization.out_std}}}};
  open_out(dir / "dataset.json") << j.dump(1) << '\n';
  auto os = open_out(dir / "windows.csv");
  os << "split,first_input,last_input,target\n";
  const auto& g = store.grid();
  for (const auto& [name, ws] : {std::pair<const char*, const WindowSet*>{"train", &ds.train}, {"validation", &ds.validation}, {"test", &ds.test}}) {
    for (std::size_t i = 0; i < ws->size(); ++i) {
      const auto a = ws->anchor(i);
      os << name << ',' << format_timestamp(g.time_at(a - ws->R() + 1)) << ',' << format_timestamp(g.time_at(a)) << ','
         << format_timestamp(g.time_at(ws->target_index(i))) << '\n';
    }
  }
  io.out << "windows: train " << ds.train.size() << ", validation " << ds.validation.size() << ", test " << ds.test.size() << '\n';
  return 0;
}

void write_history(const fs::path& path, const nn::TrainHistory& h) {
  auto os = open_out(path);
  os << "epoch,train_loss,val_loss,best\n";
  for (const auto& e : h.epochs) {
    os << e.epoch << ',' << csv::fmt(e.train_loss) << ',' << csv::fmt(e.val_loss) << ',' << (e.epoch == h.best_epoch ? 1 : 0) << '\n';
  }
}

int cmd_train(const RunConfig& c, Io io) {
  const auto store = load_store(require(c.paths.store, "--store"));
  nn::TrainConfig cfg = c.train;
  cfg.seed = require_seed(c, "train");
  const auto split = effective_split(c, store.grid());
  const auto dir = prepare_out(c.paths.out);
  TrainedModel m;
  try {
    m = fit_model(store, make_frame(store, c.model.features), c.model, split, cfg);
  } catch (const nn::DivergenceError& e) {
    write_history(dir / "history.csv", e.history);
    throw;
  }
  save_checkpoint((dir / "model.json").string(), m);
  write_history(dir / "history.csv", m.history);
  io.out << "trained " << to_string(m.spec.kind) << " R=" << m.spec.R << " P=" << m.spec.P;
  if (!m.history.epochs.empty()) {
    io.out << ": " << m.history.epochs.size() << " epochs, best " << m.history.best_epoch << " (val "
           << m.history.best_val_loss() << ")";
  }
  io.out << '\n';
  return 0;
}

std::vector<DateRange> test_ranges(const RunConfig& c, const SeriesStore& store) { return effective_split(c, store.grid()).test; }

int cmd_predict(const RunConfig& c, Io io) {
  const auto store = load_store(require(c.paths.store, "--store"));
  const auto model = load_checkpoint(require(c.paths.model, "--model-file"));
  auto predictor = make_predictor(model, store);
  const auto frame = make_frame(store, model.spec.features);
  const auto ws = build_windows(frame, model.spec.R, model.spec.P, test_ranges(c, store), {}, c.split.align_test_P);
  const auto tab = predict_windows(*predictor, ws);
  const auto dir = prepare_out(c.paths.out);
  auto os = open_out(dir / "predictions.csv");
  write_predictions(os, tab);
  io.out << "predicted " << ws.size() << " windows x " << ws.N() << " stations\n";
  return 0;
}

int cmd_evaluate(const RunConfig& c, const std::vector<std::string>& model_files, const std::string& res_station,
                 const std::string& res_date, Io io) {
  const auto store = load_store(require(c.paths.store, "--store"));
  std::vector<std::string> files = model_files;
  if (files.empty() && !c.paths.model.empty()) files.push_back(c.paths.model);
  if (files.empty()) throw UsageError("evaluate needs at least one --model-file");
  const auto split = effective_split(c, store.grid());
  const auto dir = prepare_out(c.paths.out);
  std::vector<MetricReport> reports;
  std::vector<TrainedModel> models;
  std::vector<std::unique_ptr<Predictor>> predictors;
  for (const auto& f : files) {
    models.push_back(load_checkpoint(require(f, "--model-file")));
    predictors.push_back(make_predictor(models.back(), store));
    const auto& spec = models.back().spec;
    const auto frame = make_frame(store, spec.features);
    const auto ws = build_windows(frame, spec.R, spec.P, split.test, {}, split.align_test_P);
    const auto tab = predict_windows(*predictors.back(), ws);
    auto r = report_from(tab, spec.kind);
    r.features = spec.features.code();
    reports.push_back(r);
    auto os = open_out(dir / ("predictions_" + std::string(to_string(spec.kind)) + "_R" + std::to_string(spec.R) + "_P" +
                              std::to_string(spec.P) + ".csv"));
    write_predictions(os, tab);
  }
  {
    auto os = open_out(dir / "reports.csv");
    write_reports(os, reports);
  }
  {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) j.push_back(report_json(r));
    open_out(dir / "reports.json") << j.dump(1) << '\n';
  }
  if (!res_station.empty() || !res_date.empty()) {
    if (res_station.empty() || res_date.empty()) throw UsageError("--residual-station and --residual-date go together");
    std::vector<std::pair<const TrainedModel*, Predictor*>> pairs;
    for (std::size_t i = 0; i < models.size(); ++i) pairs.emplace_back(&models[i], predictors[i].get());
    const auto series = export_residuals(store, res_station, parse_date(res_date), pairs, split.test);
    auto os = open_out(dir / ("residuals_" + res_station + "_" + res_date + ".csv"));
    write_residuals(os, series);
  }
  write_reports(io.out, reports);
  return 0;
}

int cmd_sweep(const RunConfig& c, Io io) {
  const auto store = load_store(require(c.paths.store, "--store"));
  SweepOptions opt;
  opt.Rs = parse_int_range(c.sweep_R);
  opt.Ps = parse_int_range(c.sweep_P);
  opt.repetitions = c.sweep_repetitions;
  opt.seed = require_seed(c, "sweep");
  opt.jobs = c.jobs;
  opt.base = c.model;
  opt.train = c.train;
  const auto split = effective_split(c, store.grid());
  const auto grid = sweep(store, opt, split);
  const auto dir = prepare_out(c.paths.out);
  {
    auto os = open_out(dir / "sweep.csv");
    write_sweep(os, grid);
  }
  {
    auto os = open_out(dir / "best_R.csv");
    write_best_R(os, grid);
  }
  {
    auto os = open_out(dir / "sweep.svg");
    write_heatmap_svg(os, sweep_heatmap(grid));
  }
  std::size_t failed = 0;
  for (const auto& cell : grid.cells) failed += cell.failed;
  write_best_R(io.out, grid);
  if (failed) io.err << "warning: " << failed << " sweep cells failed (see sweep.csv)\n";
  return 0;
}

int cmd_features_study(const RunConfig& c, const std::string& sets_text, Io io) {
  const auto store = load_store(require(c.paths.store, "--store"));
  std::vector<FeatureSet> sets;
  if (sets_text.empty() || sets_text == "all") {
    sets = FeatureSet::all_combinations();
  } else {
    std::stringstream ss(sets_text);
    for (std::string part; std::getline(ss, part, ',');) sets.push_back(FeatureSet::parse(part));
  }
  nn::TrainConfig cfg = c.train;
  cfg.seed = require_seed(c, "features-study");
  const auto split = effective_split(c, store.grid());
  const auto reports = feature_combination_study(store, sets, c.model, split, cfg, c.jobs);
  const auto dir = prepare_out(c.paths.out);
  auto os = open_out(dir / "features_study.csv");
  write_reports(os, reports);
  write_reports(io.out, reports);
  io.out << "note: the percentage error column is SMAPE\n";
  return 0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  for (auto f : csv::split(line)) out.emplace_back(f);
  return out;
}

int cmd_report(const RunConfig& c, const std::vector<std::string>& report_files, const std::vector<std::string>& sweep_files,
               const std::string& profiles_path, Io io) {
  const auto dir = prepare_out(c.paths.out);
  std::size_t produced = 0;
  if (!report_files.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& f : report_files) {
      std::istringstream is(read_text(require(f, "--reports")));
      std::string line;
      if (!std::getline(is, line) || line != kReportHeader) throw DataError("'" + f + "' is not a report table");
      while (std::getline(is, line)) {
        if (!line.empty()) rows.push_back(split_csv_line(line));
      }
    }
    auto csv_os = open_out(dir / "summary.csv");
    csv_os << kReportHeader << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) csv_os << (i ? "," : "") << r[i];
      csv_os << '\n';
    }
    // aligned plain-text table
    const auto header = split_csv_line(kReportHeader);
    std::vector<std::size_t> width(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    auto txt = open_out(dir / "summary.txt");
    auto emit = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) txt << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << r[i];
      txt << '\n';
    };
    emit(header);
    for (const auto& r : rows) emit(r);
    ++produced;
  }
  for (const auto& f : sweep_files) {
    std::istringstream is(read_text(require(f, "--sweep")));
    const auto grid = read_sweep(is);
    auto os = open_out(dir / ("sweep_" + std::string(to_string(grid.kind)) + ".svg"));
    write_heatmap_svg(os, sweep_heatmap(grid));
    ++produced;
  }
  if (!profiles_path.empty()) {
    const auto store = load_store(require(c.paths.store, "--store"));
    const auto topo = load_topology(read_text(require(c.paths.topology, "--topology")));
    std::istringstream is(read_text(require(profiles_path, "--profiles")));
    const auto profiles = read_profiles(is, store.stations(), store.grid().intervals_per_day());
    const auto caps = resolve_capacities(topo, store);
    for (int w = 0; w < 7; ++w) {
      const auto wd = static_cast<Weekday>(w);
      if (!profiles.find(0, wd, Feature::flow)) continue;
      auto os = open_out(dir / ("congestion_" + std::string(weekday_name(wd)) + ".svg"));
      write_heatmap_svg(os, congestion_heatmap(congestion_map(profiles, caps, wd), store.grid()));
      ++produced;
    }
  }
  if (produced == 0) throw UsageError("report needs --reports, --sweep or --profiles inputs");
  io.out << "rendered " << produced << " artifacts -> " << dir.string() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Loop-detector traffic pipeline: ingest, clean, profile, train and evaluate flow predictors"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");
  Io io{out, err};

  Shared sh;
  ModelFlags mf;
  std::string spec_path, topology, records, store_path, mask, model_file, range, method, sets, res_station, res_date;
  std::string sweep_R, sweep_P, profiles_path;
  std::vector<std::string> repaired, model_files, report_files, sweep_files;
  int interval = 0, reps = 0;
  double high_margin = 0.0;

  auto* synth = app.add_subcommand("synth", "Synthetic corpora");
  auto* gen = synth->add_subcommand("generate", "Generate topology, records and ground-truth mask");
  synth->require_subcommand(1);
  add_shared(gen, sh, true, false);
  gen->add_option("--spec", spec_path, "Synthetic corpus spec (JSON); defaults when omitted");

  auto* ingest = app.add_subcommand("ingest", "Align detector records onto the time grid");
  add_shared(ingest, sh, false, false);
  ingest->add_option("--topology", topology, "Topology file (JSON)");
  ingest->add_option("--records", records, "Record file (CSV)");
  ingest->add_option("--interval", interval, "Grid interval in minutes")->check(CLI::PositiveNumber);

  auto* profile = app.add_subcommand("profile", "Build daily profiles");
  add_shared(profile, sh, false, false);
  profile->add_option("--store", store_path, "Store file");
  profile->add_option("--topology", topology, "Topology file, for the congestion table");
  profile->add_option("--range", range, "Date ranges the profiles cover");

  auto* detect = app.add_subcommand("detect", "Flag daytime zeros and high records, repair long zero periods");
  add_shared(detect, sh, false, false);
  detect->add_option("--store", store_path, "Raw store file");
  detect->add_option("--topology", topology, "Topology file");
  detect->add_option("--high-margin", high_margin, "Spreads above the median that mark a high record");
  detect->add_option("--range", range, "Profile date range");

  auto* repair = app.add_subcommand("repair", "Repair the remaining invalid cells");
  add_shared(repair, sh, false, false);
  repair->add_option("--store", store_path, "Detected store file");
  repair->add_option("--method", method, "m1 (profile substitution) or m2 (affine adjustment)")->check(CLI::IsMember({"m1", "m2"}));
  repair->add_option("--range", range, "Profile date ranges");

  auto* reval = app.add_subcommand("repair-eval", "Score repairs against a ground-truth mask");
  add_shared(reval, sh, false, false);
  reval->add_option("--store", store_path, "Detected store file (the mask refers to its stations)");
  reval->add_option("--mask", mask, "Ground-truth mask (CSV)");
  reval->add_option("--repaired", repaired, "Repaired store files; both methods are run when omitted");
  reval->add_option("--range", range, "Profile date ranges");

  auto* dataset = app.add_subcommand("dataset", "Build the supervised windows and normalisation");
  add_shared(dataset, sh, false, true);
  dataset->add_option("--store", store_path, "Repaired store file");
  add_model_flags(dataset, mf);

  auto* train = app.add_subcommand("train", "Train one model");
  add_shared(train, sh, true, true);
  train->add_option("--store", store_path, "Repaired store file");
  add_model_flags(train, mf);

  auto* predict = app.add_subcommand("predict", "Predict the test range with a trained model");
  add_shared(predict, sh, false, true);
  predict->add_option("--store", store_path, "Repaired store file");
  predict->add_option("--model-file", model_file, "Model checkpoint");

  auto* evaluate = app.add_subcommand("evaluate", "Metrics of trained models on the test range");
  add_shared(evaluate, sh, false, true);
  evaluate->add_option("--store", store_path, "Repaired store file");
  evaluate->add_option("--model-file", model_files, "Model checkpoints");
  evaluate->add_option("--residual-station", res_station, "Export residuals for this station");
  evaluate->add_option("--residual-date", res_date, "Export residuals for this date");

  auto* sweep_cmd = app.add_subcommand("sweep", "Validation RMSE over an R x P grid");
  add_shared(sweep_cmd, sh, true, true);
  sweep_cmd->add_option("--store", store_path, "Repaired store file");
  add_model_flags(sweep_cmd, mf);
  sweep_cmd->add_option("--R-range", sweep_R, "Past horizons, e.g. 1..30");
  sweep_cmd->add_option("--P-range", sweep_P, "Prediction horizons, e.g. 1..10");
  sweep_cmd->add_option("--reps", reps, "Repetitions per cell")->check(CLI::PositiveNumber);

  auto* study = app.add_subcommand("features-study", "Train one model per input feature combination");
  add_shared(study, sh, true, true);
  study->add_option("--store", store_path, "Repaired store file");
  add_model_flags(study, mf);
  study->add_option("--sets", sets, "Feature sets, e.g. f,fo,fso (default: all seven)");

  auto* report = app.add_subcommand("report", "Render summary tables and SVG heatmaps");
  add_shared(report, sh, false, false);
  report->add_option("--reports", report_files, "Report tables from evaluate or features-study");
  report->add_option("--sweep", sweep_files, "Sweep tables");
  report->add_option("--profiles", profiles_path, "Profile table, for congestion heatmaps");
  report->add_option("--store", store_path, "Store file (grid and stations for --profiles)");
  report->add_option("--topology", topology, "Topology file (capacities for --profiles)");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub == synth) sub = gen;
    RunConfig c = resolve(sub, sh);
    auto flag = [&](const char* name, std::string& target, const std::string& value) {
      if (sub->get_option_no_throw(name) && sub->count(name)) target = value;
    };
    flag("--topology", c.paths.topology, topology);
    flag("--records", c.paths.records, records);
    flag("--store", c.paths.store, store_path);
    flag("--mask", c.paths.mask, mask);
    flag("--model-file", c.paths.model, model_file);
    if (sub->get_option_no_throw("--interval") && sub->count("--interval")) c.interval_minutes = interval;
    if (sub->get_option_no_throw("--high-margin") && sub->count("--high-margin")) c.detection.high.margin = high_margin;
    if (sub->get_option_no_throw("--method") && sub->count("--method")) {
      c.repair_method = method == "m1" ? RepairMethod::profile : RepairMethod::affine;
    }
    if (sub->get_option_no_throw("--model")) apply_model_flags(sub, mf, c);
    if (sub->get_option_no_throw("--R-range") && sub->count("--R-range")) c.sweep_R = sweep_R;
    if (sub->get_option_no_throw("--P-range") && sub->count("--P-range")) c.sweep_P = sweep_P;
    if (sub->get_option_no_throw("--reps") && sub->count("--reps")) c.sweep_repetitions = reps;
    if (sub->get_option_no_throw("--range") && sub->count("--range") && sub == detect) {
      c.detection.profile_range = parse_range_list(range).front();
    }

    if (sub == gen) return cmd_synth(c, spec_path, io);
    if (sub == ingest) return cmd_ingest(c, io);
    if (sub == profile) return cmd_profile(c, range, io);
    if (sub == detect) return cmd_detect(c, io);
    if (sub == repair) return cmd_repair(c, range, io);
    if (sub == reval) return cmd_repair_eval(c, repaired, range, io);
    if (sub == dataset) return cmd_dataset(c, io);
    if (sub == train) return cmd_train(c, io);
    if (sub == predict) return cmd_predict(c, io);
    if (sub == evaluate) return cmd_evaluate(c, model_files, res_station, res_date, io);
    if (sub == sweep_cmd) return cmd_sweep(c, io);
    if (sub == study) return cmd_features_study(c, sets, io);
    if (sub == report) return cmd_report(c, report_files, sweep_files, profiles_path, io);
    throw UsageError("unknown command");
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const TrainingError& e) {
    err << "training failed: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace loopflow::cli
