// magic: simulate | fit | predict | impute | benchmark | loocv
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "magic/io.hpp"

namespace fs = std::filesystem;
using namespace magic;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw DataError("cannot open '" + path + "' for writing");
  return out;
}

void log(const std::string& msg) { std::cerr << msg << '\n'; }

std::vector<double> parse_alpha_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = parse_double(item);
    if (!v || !(*v >= 0.0 && *v < 1.0))
      throw UsageError("--alpha: '" + item + "' is not a ratio in [0, 1)");
    out.push_back(*v);
  }
  if (out.empty())
    throw UsageError("--alpha needs at least one value");
  return out;
}

std::vector<Method> parse_method_list(const std::string& text) {
  if (text == "all")
    return {Method::Magic, Method::Sgp, Method::Mtgp};
  std::vector<Method> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(parse_method(item));
    } catch (const InvalidArgument& e) {
      throw UsageError(std::string("--method: ") + e.what());
    }
  }
  if (out.empty())
    throw UsageError("--method needs a value");
  return out;
}

std::vector<SampleSeries> simulated_missing(const SimulatedDataset& data, double alpha,
                                            std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x6d61736bULL}));
  std::vector<SampleSeries> out;
  for (const auto& s : data.samples)
    out.push_back(alpha > 0.0 ? apply_missingness(s, alpha, rng) : s);
  return out;
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string method;
  // simulate
  std::string out_dir;
  double alpha = 0.0;
  // fit / predict / impute
  std::string series;
  std::vector<std::string> series_list;
  std::string labels;
  std::string model;
  std::string out;
  std::string q_history;
  std::string curves;
  // benchmark / loocv
  std::string alpha_list;
  int reps = 0;
  std::vector<std::string> features;
  bool quiet = false;
};

RunConfig load_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  apply_environment(c);
  if (o.seed)
    c.seed = *o.seed;
  // benchmark and loocv take a list; only a single method belongs in the config.
  if (!o.method.empty() && o.method != "all" && o.method.find(',') == std::string::npos)
    c.method = o.method;
  c.validate();
  return c;
}

ProgressFn progress_of(const Options& o) {
  if (o.quiet)
    return {};
  return [](const std::string& s) { log(s); };
}

int cmd_simulate(const Options& o) {
  const RunConfig c = load_config(o);
  const SimulatedDataset data = generate_dataset(c.sim_config());
  const auto observed = simulated_missing(data, o.alpha, c.seed);
  fs::create_directories(o.out_dir);
  const fs::path dir(o.out_dir);
  {
    auto out = open_out((dir / "series.csv").string());
    write_series_csv(out, observed, data.grid);
  }
  {
    auto out = open_out((dir / "labels.csv").string());
    write_labels_csv(out, data.samples);
  }
  {
    auto out = open_out((dir / "truth.csv").string());
    write_series_csv(out, data.samples, data.grid);
  }
  {
    auto out = open_out((dir / "latent_means.csv").string());
    out << "class,time,latent_mean,prior_mean\n";
    for (int z = 0; z < 2; ++z)
      for (Index g = 0; g < data.grid.size(); ++g)
        out << z << ',' << format_double(data.grid[g]) << ','
            << format_double(data.latent_means[static_cast<std::size_t>(z)][g]) << ','
            << format_double(data.prior_means[static_cast<std::size_t>(z)][g]) << '\n';
  }
  log("wrote " + std::to_string(data.samples.size()) + " samples to " + o.out_dir);
  return kOk;
}

int cmd_fit(const Options& o) {
  const RunConfig c = load_config(o);
  const TimeGrid grid = c.grid();
  const auto samples = ingest_long_csv(o.series, o.labels, grid);
  for (const auto& s : samples)
    if (!s.label)
      throw DataError("sample '" + s.id + "' has no label");
  const FittedModel model =
      fit_method(parse_method(c.method), grid, c.basis(), samples, c.method_options());
  save_model(o.model, model);
  if (!o.q_history.empty()) {
    auto out = open_out(o.q_history);
    out << "iteration,q\n";
    for (std::size_t k = 0; k < model.q_history.size(); ++k)
      out << k + 1 << ',' << format_double(model.q_history[k]) << '\n';
  }
  log("fitted " + method_name(model.method) + " on " + std::to_string(samples.size()) +
      " samples; " + std::to_string(model.q_history.size()) + " EM iterations");
  return kOk;
}

std::vector<PredictionResult> run_predictions(const FittedModel& model,
                                              const std::vector<SampleSeries>& samples) {
  const QuadratureBasis quad = model.quadrature();
  std::vector<PredictionResult> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back(predict(model, s, quad));
    if (out.back().no_observations)
      log("warning: sample '" + s.id + "' has no observations; classified by the prior");
  }
  return out;
}

int cmd_predict(const Options& o, bool curves_only) {
  const FittedModel model = load_model(o.model);
  std::optional<std::string> labels;
  if (!o.labels.empty())
    labels = o.labels;
  const auto samples = ingest_long_csv(o.series, labels, model.grid);
  const auto results = run_predictions(model, samples);
  if (curves_only) {
    auto out = open_out(o.out);
    write_curves(out, samples, results, model.grid);
    return kOk;
  }
  {
    auto out = open_out(o.out);
    write_predictions(out, samples, results);
  }
  if (!o.curves.empty()) {
    auto out = open_out(o.curves);
    write_curves(out, samples, results, model.grid);
  }
  return kOk;
}

int cmd_benchmark(const Options& o) {
  const RunConfig c = load_config(o);
  BenchmarkConfig b = c.benchmark_config();
  if (!o.alpha_list.empty())
    b.alphas = parse_alpha_list(o.alpha_list);
  b.methods = parse_method_list(o.method.empty() ? "all" : o.method);
  if (o.reps > 0)
    b.repetitions = o.reps;
  const BenchmarkReport report = run_benchmark(b, progress_of(o));
  write_report(o.out, report);
  for (std::size_t k = 0; k < report.rows.size(); ++k)
    log(report.rows[k].method + " alpha=" + format_double(report.rows[k].alpha) + ": " +
        std::to_string(report.seconds[k]) + " s");
  for (const auto& f : report.failures)
    log("failure: " + f);
  return kOk;
}

int cmd_loocv(const Options& o) {
  const RunConfig c = load_config(o);
  const TimeGrid grid = c.grid();
  const BasisConfig basis = c.basis();
  const MethodOptions options = c.method_options();
  const auto methods = parse_method_list(o.method.empty() ? "magic" : o.method);
  if (!o.features.empty() && o.features.size() != o.series_list.size())
    throw UsageError("--feature must be given once per --series");

  BenchmarkReport report;
  report.metadata = {{"protocol", "loocv"},
                     {"seed", std::to_string(c.seed)},
                     {"num_basis", std::to_string(basis.num_basis())},
                     {"lambda", format_double(options.magic.lambda)}};
  for (Method method : methods) {
    std::vector<LoocvResult> per_feature;
    for (std::size_t f = 0; f < o.series_list.size(); ++f) {
      const std::string name =
          o.features.empty() ? fs::path(o.series_list[f]).stem().string() : o.features[f];
      const auto samples = ingest_long_csv(o.series_list[f], o.labels, grid);
      double observed = 0.0;
      for (const auto& s : samples)
        observed += static_cast<double>(s.num_observed());
      const double missing =
          1.0 - observed / (static_cast<double>(samples.size()) * static_cast<double>(grid.size()));
      per_feature.push_back(run_loocv(grid, basis, samples, method, options, progress_of(o)));
      report.rows.push_back(loocv_row(per_feature.back(), name, missing));
      for (const auto& m : per_feature.back().failure_messages)
        log("failure: " + method_name(method) + " " + name + " " + m);
    }
    if (per_feature.size() > 1) {
      double alpha = 0.0;
      for (std::size_t f = 0; f < per_feature.size(); ++f)
        alpha += report.rows[report.rows.size() - 1 - f].alpha;
      alpha /= static_cast<double>(per_feature.size());
      report.rows.push_back(loocv_row(combine_features(per_feature), "meta", alpha));
    }
  }
  write_report(o.out, report);
  return kOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint imputation and classification of sparse time series"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "Flat key = value configuration file");
  app.add_flag("--quiet", o.quiet, "Suppress progress messages");

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { o.seed = s; }, "Seed (overrides config and MAGIC_SEED)");
  };

  auto* sim = app.add_subcommand("simulate", "Write a synthetic two-class dataset");
  sim->add_option("--out-dir", o.out_dir, "Output directory")->required();
  sim->add_option("--alpha", o.alpha, "Missing ratio applied to series.csv")
      ->check(CLI::Range(0.0, 0.999999));
  add_seed(sim);

  auto* fit_cmd = app.add_subcommand("fit", "Fit a model and write a checkpoint");
  fit_cmd->add_option("--series", o.series, "Series CSV (sample_id,time,value)")->required();
  fit_cmd->add_option("--labels", o.labels, "Labels CSV (sample_id,label)")->required();
  fit_cmd->add_option("--model", o.model, "Checkpoint to write")->required();
  fit_cmd->add_option("--method", o.method, "magic | sgp | mtgp");
  fit_cmd->add_option("--q-history", o.q_history, "Write the EM objective trace here");
  add_seed(fit_cmd);

  auto* pred = app.add_subcommand("predict", "Classify samples with a fitted model");
  pred->add_option("--model", o.model, "Checkpoint")->required();
  pred->add_option("--series", o.series, "Series CSV")->required();
  pred->add_option("--labels", o.labels, "Optional labels CSV, echoed in the output");
  pred->add_option("--out", o.out, "Predictions CSV")->required();
  pred->add_option("--curves", o.curves, "Also write imputed curves here");

  auto* imp = app.add_subcommand("impute", "Impute complete curves with a fitted model");
  imp->add_option("--model", o.model, "Checkpoint")->required();
  imp->add_option("--series", o.series, "Series CSV")->required();
  imp->add_option("--out", o.out, "Curves CSV")->required();

  auto* bench = app.add_subcommand("benchmark", "Repeated stratified splits on simulated data");
  bench->add_option("--out", o.out, "Report file")->required();
  bench->add_option("--alpha", o.alpha_list, "Comma-separated missing ratios");
  bench->add_option("--method", o.method, "all or a comma-separated list");
  bench->add_option("--reps", o.reps, "Repetitions")->check(CLI::PositiveNumber);
  add_seed(bench);

  auto* loo = app.add_subcommand("loocv", "Leave-one-out AUC with nested value masking");
  loo->add_option("--series", o.series_list, "Series CSV, one per feature")->required();
  loo->add_option("--labels", o.labels, "Labels CSV")->required();
  loo->add_option("--feature", o.features, "Feature name per --series");
  loo->add_option("--out", o.out, "Report file")->required();
  loo->add_option("--method", o.method, "all or a comma-separated list");
  add_seed(loo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*sim)
      return cmd_simulate(o);
    if (*fit_cmd)
      return cmd_fit(o);
    if (*pred)
      return cmd_predict(o, false);
    if (*imp)
      return cmd_predict(o, true);
    if (*bench)
      return cmd_benchmark(o);
    if (*loo)
      return cmd_loocv(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
