#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "magic/io.hpp"
#include "oracles.hpp"

using namespace magic;

namespace {

std::vector<SampleSeries> ingest(const std::string& series, const std::string& labels,
                                 const TimeGrid& grid) {
  std::istringstream s(series), l(labels);
  return ingest_long_csv(s, "series.csv", labels.empty() ? nullptr : &l, "labels.csv", grid);
}

template <typename F>
std::size_t parse_error_location(F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.location();
  }
  return 0;
}

FittedModel small_model(Method method) {
  SimConfig c;
  c.grid_last = 12;
  c.per_class = 5;
  const SimulatedDataset d = generate_dataset(c);
  std::vector<SampleSeries> s;
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    s.push_back(apply_missingness(d.samples[i], 0.5, derive_seed(2, {i})));
  MethodOptions o;
  o.magic.max_iterations = 3;
  return fit_method(method, d.grid, BasisConfig::open_uniform(5, 0, 12), s, o);
}

} // namespace

TEST(FormatDouble, ShortestRoundTrip) {
  oracle::Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double x = oracle::normal_vector(rng, 1)[0] * std::pow(10.0, oracle::uniform_int(rng, -30, 30));
    EXPECT_EQ(*parse_double(format_double(x)), x);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(2.0), "2");
  EXPECT_FALSE(parse_double("1.5x"));
  EXPECT_FALSE(parse_double(""));
}

TEST(RunConfigTest, ParseOverridesAndComments) {
  const RunConfig c = parse_run_config("# comment\nlambda = 0.5\n\nalphas = 0.5, 0.7\nmethod = sgp  # trailing\n");
  EXPECT_EQ(c.lambda, 0.5);
  EXPECT_EQ(c.alphas, (std::vector<double>{0.5, 0.7}));
  EXPECT_EQ(c.method, "sgp");
  EXPECT_EQ(c.num_basis, 8);
}

TEST(RunConfigTest, RejectsUnknownDuplicateAndMalformed) {
  EXPECT_THROW(parse_run_config("lamda = 1\n"), UsageError);
  EXPECT_THROW(parse_run_config("lambda = 1\nlambda = 2\n"), UsageError);
  EXPECT_THROW(parse_run_config("lambda = abc\n"), UsageError);
  EXPECT_THROW(parse_run_config("max_iterations = 1.5\n"), UsageError);
  EXPECT_THROW(parse_run_config("just words\n"), UsageError);
  try {
    parse_run_config("seed = 3\n\nbogus = 1\n", "my.cfg");
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("my.cfg:3"), std::string::npos) << e.what();
  }
}

TEST(RunConfigTest, ValidateRanges) {
  EXPECT_THROW(parse_run_config("lambda = -1\n").validate(), UsageError);
  EXPECT_THROW(parse_run_config("train_fraction = 1.5\n").validate(), UsageError);
  EXPECT_THROW(parse_run_config("alphas = 1.0\n").validate(), UsageError);
  EXPECT_THROW(parse_run_config("prior_mean = cosine\n").validate(), UsageError);
  EXPECT_NO_THROW(RunConfig{}.validate());
}

TEST(RunConfigTest, FormatParsesBack) {
  RunConfig c;
  c.lambda = 0.1;
  c.alphas = {0.25, 0.75};
  c.knots = {0, 0, 0, 0, 10, 20, 30, 40, 50, 50, 50, 50};
  c.seed = 123456789012345ULL;
  const RunConfig back = parse_run_config(format_run_config(c));
  EXPECT_EQ(format_run_config(back), format_run_config(c));
  EXPECT_EQ(back.knots, c.knots);
  EXPECT_EQ(back.seed, c.seed);
}

TEST(RunConfigTest, EnvironmentSeed) {
  RunConfig c;
  ::setenv("MAGIC_SEED", "77", 1);
  apply_environment(c);
  EXPECT_EQ(c.seed, 77u);
  ::setenv("MAGIC_SEED", "-3", 1);
  EXPECT_THROW(apply_environment(c), UsageError);
  ::unsetenv("MAGIC_SEED");
  c.seed = 5;
  apply_environment(c);
  EXPECT_EQ(c.seed, 5u);
}

TEST(RunConfigTest, DerivedObjects) {
  const RunConfig c = parse_run_config("grid_end = 10\nnum_basis = 5\nprior_mean = sine\n");
  EXPECT_EQ(c.grid().size(), 11);
  EXPECT_EQ(c.basis().num_basis(), 5);
  const MethodOptions o = c.method_options();
  ASSERT_TRUE(o.magic.prior_means.has_value());
  EXPECT_NEAR((*o.magic.prior_means)[0][1], 1.0, 1e-15);
}

TEST(LongCsv, ColumnsInAnyOrderAndAveraging) {
  const TimeGrid g = TimeGrid::integers(0, 5);
  const auto s = ingest("\xEF\xBB\xBFvalue,sample_id,time\n4,a,2\n1,b,0\n6,a,2\n3,a,1\n",
                        "sample_id,label\nb,0\na,1\n", g);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].id, "a");
  EXPECT_EQ(s[0].obs_index, (std::vector<Index>{1, 2}));
  EXPECT_EQ(s[0].obs_values, (VectorXd(2) << 3, 5).finished());
  EXPECT_EQ(s[0].label, 1);
  EXPECT_EQ(s[1].label, 0);
}

TEST(LongCsv, ErrorsCarryLineNumbers) {
  const TimeGrid g = TimeGrid::integers(0, 5);
  EXPECT_EQ(parse_error_location([&] { ingest("sample_id,time,value\na,1,2\na,1.5,3\n", "", g); }), 3u);
  EXPECT_EQ(parse_error_location([&] { ingest("sample_id,time,value\na,1,x\n", "", g); }), 2u);
  EXPECT_EQ(parse_error_location([&] { ingest("sample_id,time\na,1\n", "", g); }), 1u);
  EXPECT_EQ(parse_error_location([&] { ingest("sample_id,time,value\na,1\n", "", g); }), 2u);
  EXPECT_EQ(parse_error_location([&] { ingest("", "", g); }), 1u);
  EXPECT_EQ(parse_error_location([&] {
              ingest("sample_id,time,value\na,1,2\n", "sample_id,label\na,1\nzz,0\n", g);
            }),
            3u);
  EXPECT_EQ(parse_error_location([&] {
              ingest("sample_id,time,value\na,1,2\n", "sample_id,label\na,1\na,0\n", g);
            }),
            3u);
  EXPECT_EQ(parse_error_location([&] {
              ingest("sample_id,time,value\na,1,2\n", "sample_id,label\na,2\n", g);
            }),
            2u);
}

TEST(LongCsv, WriteThenReadIsIdentity) {
  const TimeGrid g = TimeGrid::integers(0, 8);
  SimConfig c;
  c.grid_last = 8;
  c.per_class = 3;
  std::vector<SampleSeries> s;
  for (const auto& x : generate_dataset(c).samples)
    s.push_back(apply_missingness(x, 0.5, 4));
  std::ostringstream series, labels;
  write_series_csv(series, s, g);
  write_labels_csv(labels, s);
  EXPECT_EQ(ingest(series.str(), labels.str(), g), s);
}

TEST(Checkpoint, RoundTripPredictsIdentically) {
  for (Method method : {Method::Magic, Method::Sgp, Method::Mtgp}) {
    const FittedModel m = small_model(method);
    std::stringstream buf;
    save_model(buf, m);
    const FittedModel back = load_model(buf);
    EXPECT_EQ(back.method, m.method);
    EXPECT_EQ(back.num_groups, m.num_groups);
    EXPECT_EQ(back.params.beta, m.params.beta);
    EXPECT_EQ(back.params.noise_variance, m.params.noise_variance);
    EXPECT_EQ(back.posteriors[0].covariance, m.posteriors[0].covariance);
    EXPECT_EQ(back.q_history, m.q_history);
    SampleSeries probe;
    probe.obs_index = {1, 4, 9};
    probe.obs_values = (VectorXd(3) << 0.3, -1.2, 2.0).finished();
    const PredictionResult a = predict(m, probe), b = predict(back, probe);
    EXPECT_EQ(a.probability, b.probability);
    EXPECT_EQ(a.curve, b.curve);
    EXPECT_EQ(a.variance, b.variance);
    EXPECT_EQ(a.map_log_scores, b.map_log_scores);
    // Saving the loaded model reproduces the file.
    std::stringstream again;
    save_model(again, back);
    EXPECT_EQ(again.str(), buf.str());
  }
}

TEST(Checkpoint, TruncationAndCorruption) {
  const FittedModel m = small_model(Method::Sgp);
  std::ostringstream buf;
  save_model(buf, m);
  const std::string text = buf.str();
  for (std::size_t cut : {std::size_t(0), std::size_t(10), text.size() / 2, text.size() - 5}) {
    std::istringstream in(text.substr(0, cut));
    EXPECT_THROW(load_model(in), ParseError) << "cut at " << cut;
  }
  std::string bad = text;
  const auto pos = bad.find("noise_variance");
  bad.replace(pos, 14, "noise_varianXe");
  std::istringstream in(bad);
  try {
    load_model(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_GE(e.location(), pos);
  }
}

TEST(Checkpoint, FutureVersionRejected) {
  const FittedModel m = small_model(Method::Sgp);
  std::ostringstream buf;
  save_model(buf, m);
  std::string text = buf.str();
  text.replace(text.find("version 1"), 9, "version 2");
  std::istringstream in(text);
  EXPECT_THROW(load_model(in), UnsupportedVersionError);
}

TEST(Report, RoundTrip) {
  BenchmarkReport r;
  r.metadata = {{"seed", "1"}, {"repetitions", "20"}};
  r.rows.push_back({"magic", 0.5, 0.91, 0.08, 0.0075, 0.03, 20, 0, "simulation"});
  r.rows.push_back({"sgp", 0.8, std::nan(""), 0.0, 1.25, 2.5, 0, 20, "simulation"});
  std::stringstream buf;
  write_report(buf, r);
  const BenchmarkReport back = parse_report(buf);
  EXPECT_TRUE(back == r);
  const std::string text = buf.str();
  EXPECT_EQ(text.rfind("# magic-report 1\n", 0), 0u);
  EXPECT_NE(text.find("method,alpha,auc_mean,auc_sd,mse_mean,mse_sd,n_reps,n_failures,feature\n"),
            std::string::npos);
}

TEST(Report, MalformedRowsRejected) {
  std::istringstream in("# magic-report 1\nmethod,alpha,auc_mean,auc_sd,mse_mean,mse_sd,n_reps,n_failures,feature\nmagic,0.5,x,0,0,0,1,0,s\n");
  EXPECT_THROW(parse_report(in), ParseError);
}

TEST(PredictionsCsv, Layout) {
  SampleSeries s;
  s.id = "p1";
  s.label = 1;
  s.obs_index = {0};
  s.obs_values = VectorXd::Constant(1, 2.0);
  PredictionResult r;
  r.assigned_class = 1;
  r.probability = 0.75;
  r.map_log_scores = {-3.5, -1.25};
  r.curve = (VectorXd(2) << 2.0, 1.5).finished();
  r.variance = (VectorXd(2) << 0.0, 0.25).finished();
  std::ostringstream p, c;
  write_predictions(p, {s}, {r});
  EXPECT_EQ(p.str(),
            "sample_id,label,assigned_class,probability,log_score0,log_score1\np1,1,1,0.75,-3.5,-1.25\n");
  write_curves(c, {s}, {r}, TimeGrid::integers(0, 1));
  EXPECT_EQ(c.str(), "sample_id,time,value,variance,observed\np1,0,2,0,1\np1,1,1.5,0.25,0\n");
}
