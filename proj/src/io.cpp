#include "magic/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>

namespace magic {

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty())
    return std::nullopt;
  const char* first = s.data();
  if (*first == '+')
    ++first;
  double v = 0.0;
  const auto res = std::from_chars(first, s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    return std::nullopt;
  return v;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos)
    return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i)
      out += ',';
    out += format_double(v[i]);
  }
  return out;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw DataError("cannot open '" + path + "' for writing");
  return out;
}

} // namespace

// ------------------------------------------------------------------ config

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok)
      throw UsageError("config: " + what);
  };
  require(std::isfinite(grid_start) && std::isfinite(grid_end) && grid_end > grid_start,
          "grid_end must exceed grid_start");
  require(grid_step > 0.0 && std::isfinite(grid_step), "grid_step must be positive");
  require(knots.empty() ? num_basis >= 4 : true, "num_basis must be at least 4");
  require(lambda >= 0.0, "lambda must be non-negative");
  require(roughness_weight >= 0.0 && mtgp_roughness_weight >= 0.0,
          "roughness weights must be non-negative");
  require(class_kernel_nugget >= 0.0, "class_kernel_nugget must be non-negative");
  require(tolerance > 0.0, "tolerance must be positive");
  require(max_iterations >= 1, "max_iterations must be at least 1");
  require(kernel_lower > 0.0 && kernel_upper > kernel_lower, "kernel bounds must be 0 < lower < upper");
  require(noise_lower > 0.0 && noise_upper > noise_lower, "noise bounds must be 0 < lower < upper");
  require(optimizer_max_iterations >= 1, "optimizer_max_iterations must be at least 1");
  require(optimizer_gradient_tolerance > 0.0, "optimizer_gradient_tolerance must be positive");
  require(prior_mean == "zero" || prior_mean == "sine", "prior_mean must be zero or sine");
  require(sgp_prior_mean == "zero" || sgp_prior_mean == "pooled",
          "sgp_prior_mean must be zero or pooled");
  require(repetitions >= 1, "repetitions must be at least 1");
  require(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must lie in (0, 1)");
  require(!alphas.empty(), "alphas must not be empty");
  for (double a : alphas)
    require(a >= 0.0 && a < 1.0, "every alpha must lie in [0, 1)");
  require(sim_per_class >= 1, "sim_per_class must be at least 1");
  require(sim_noise_sd > 0.0, "sim_noise_sd must be positive");
  require(sim_class_amplitude > 0.0 && sim_class_length_scale > 0.0 &&
              sim_individual_amplitude > 0.0 && sim_individual_length_scale > 0.0,
          "simulation kernel parameters must be positive");
  try {
    parse_method(method);
  } catch (const InvalidArgument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

TimeGrid RunConfig::grid() const {
  const double steps = (grid_end - grid_start) / grid_step;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps))
    throw UsageError("config: grid_end - grid_start must be a multiple of grid_step");
  const auto n = static_cast<Index>(rounded) + 1;
  VectorXd t(n);
  for (Index k = 0; k < n; ++k)
    t[k] = grid_start + static_cast<double>(k) * grid_step;
  t[n - 1] = grid_end;
  return TimeGrid(t);
}

BasisConfig RunConfig::basis() const {
  try {
    if (!knots.empty())
      return BasisConfig(knots);
    return BasisConfig::open_uniform(num_basis, grid_start, grid_end);
  } catch (const InvalidArgument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

MethodOptions RunConfig::method_options() const {
  MethodOptions o;
  MagicOptions& m = o.magic;
  m.lambda = lambda;
  m.roughness_weight = roughness_weight;
  m.class_kernel_nugget = class_kernel_nugget;
  m.tolerance = tolerance;
  m.max_iterations = max_iterations;
  m.kernel_lower = kernel_lower;
  m.kernel_upper = kernel_upper;
  m.noise_lower = noise_lower;
  m.noise_upper = noise_upper;
  m.optimizer.max_iterations = optimizer_max_iterations;
  m.optimizer.projected_gradient_tolerance = optimizer_gradient_tolerance;
  if (prior_mean == "sine") {
    const VectorXd t = grid().points();
    const VectorXd m0 = sim_mean_amplitude * (sim_mean_frequency * t.array()).sin().matrix();
    m.prior_means = std::array<VectorXd, 2>{m0, -m0};
  }
  o.mtgp_roughness_weight = mtgp_roughness_weight;
  o.sgp_pooled_mean = sgp_prior_mean == "pooled";
  return o;
}

SimConfig RunConfig::sim_config() const {
  const TimeGrid g = grid();
  SimConfig s;
  if (grid_step != 1.0 || grid_start != std::round(grid_start))
    throw UsageError("config: simulation needs an integer grid with grid_step = 1");
  s.grid_first = static_cast<int>(grid_start);
  s.grid_last = static_cast<int>(g.back());
  s.mean_frequency = sim_mean_frequency;
  s.mean_amplitude = sim_mean_amplitude;
  s.class_kernels = {KernelParams{sim_class_amplitude, sim_class_length_scale},
                     KernelParams{sim_class_amplitude, sim_class_length_scale}};
  s.individual_kernel = {sim_individual_amplitude, sim_individual_length_scale};
  s.noise_sd = sim_noise_sd;
  s.per_class = sim_per_class;
  s.seed = seed;
  return s;
}

BenchmarkConfig RunConfig::benchmark_config() const {
  BenchmarkConfig b;
  b.sim = sim_config();
  b.basis = basis();
  b.options = method_options();
  b.alphas = alphas;
  b.repetitions = repetitions;
  b.train_fraction = train_fraction;
  b.seed = seed;
  return b;
}

namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;

template <typename T>
T parse_number(const std::string& value) {
  if constexpr (std::is_floating_point_v<T>) {
    const auto v = parse_double(value);
    if (!v || !std::isfinite(*v))
      throw UsageError("expected a number, got '" + value + "'");
    return *v;
  } else {
    T v{};
    const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size())
      throw UsageError("expected an integer, got '" + value + "'");
    return v;
  }
}

std::vector<double> parse_list(const std::string& value) {
  std::vector<double> out;
  if (trim(value).empty())
    return out;
  for (const auto& item : split(value, ','))
    out.push_back(parse_number<double>(item));
  return out;
}

const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> setters = [] {
    std::map<std::string, Setter> s;
#define MAGIC_NUM(key) \
  s[#key] = [](RunConfig& c, const std::string& v) { c.key = parse_number<decltype(c.key)>(v); }
#define MAGIC_STR(key) s[#key] = [](RunConfig& c, const std::string& v) { c.key = v; }
    MAGIC_NUM(grid_start);
    MAGIC_NUM(grid_end);
    MAGIC_NUM(grid_step);
    MAGIC_NUM(num_basis);
    s["knots"] = [](RunConfig& c, const std::string& v) { c.knots = parse_list(v); };
    MAGIC_NUM(lambda);
    MAGIC_NUM(roughness_weight);
    MAGIC_NUM(mtgp_roughness_weight);
    MAGIC_NUM(class_kernel_nugget);
    MAGIC_NUM(tolerance);
    MAGIC_NUM(max_iterations);
    MAGIC_NUM(kernel_lower);
    MAGIC_NUM(kernel_upper);
    MAGIC_NUM(noise_lower);
    MAGIC_NUM(noise_upper);
    MAGIC_NUM(optimizer_max_iterations);
    MAGIC_NUM(optimizer_gradient_tolerance);
    MAGIC_STR(prior_mean);
    MAGIC_STR(sgp_prior_mean);
    MAGIC_STR(method);
    MAGIC_NUM(seed);
    MAGIC_NUM(repetitions);
    MAGIC_NUM(train_fraction);
    s["alphas"] = [](RunConfig& c, const std::string& v) { c.alphas = parse_list(v); };
    MAGIC_NUM(sim_per_class);
    MAGIC_NUM(sim_noise_sd);
    MAGIC_NUM(sim_mean_frequency);
    MAGIC_NUM(sim_mean_amplitude);
    MAGIC_NUM(sim_class_amplitude);
    MAGIC_NUM(sim_class_length_scale);
    MAGIC_NUM(sim_individual_amplitude);
    MAGIC_NUM(sim_individual_length_scale);
#undef MAGIC_NUM
#undef MAGIC_STR
    return s;
  }();
  return setters;
}

} // namespace

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  const auto& setters = config_setters();
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end())
      throw UsageError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw UsageError(where + "key '" + key + "' given twice");
    try {
      it->second(config, value);
    } catch (const UsageError& e) {
      throw UsageError(where + key + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw UsageError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path);
}

void apply_environment(RunConfig& config) {
  const char* env = std::getenv("MAGIC_SEED");
  if (!env)
    return;
  try {
    config.seed = parse_number<std::uint64_t>(trim(env));
  } catch (const UsageError&) {
    throw UsageError(std::string("MAGIC_SEED must be a non-negative integer, got '") + env + "'");
  }
}

std::string format_run_config(const RunConfig& c) {
  std::ostringstream os;
  auto num = [&](const char* key, double v) { os << key << " = " << format_double(v) << "\n"; };
  auto integer = [&](const char* key, long long v) { os << key << " = " << v << "\n"; };
  num("grid_start", c.grid_start);
  num("grid_end", c.grid_end);
  num("grid_step", c.grid_step);
  integer("num_basis", c.num_basis);
  os << "knots = " << join_doubles(c.knots) << "\n";
  num("lambda", c.lambda);
  num("roughness_weight", c.roughness_weight);
  num("mtgp_roughness_weight", c.mtgp_roughness_weight);
  num("class_kernel_nugget", c.class_kernel_nugget);
  num("tolerance", c.tolerance);
  integer("max_iterations", c.max_iterations);
  num("kernel_lower", c.kernel_lower);
  num("kernel_upper", c.kernel_upper);
  num("noise_lower", c.noise_lower);
  num("noise_upper", c.noise_upper);
  integer("optimizer_max_iterations", c.optimizer_max_iterations);
  num("optimizer_gradient_tolerance", c.optimizer_gradient_tolerance);
  os << "prior_mean = " << c.prior_mean << "\n";
  os << "sgp_prior_mean = " << c.sgp_prior_mean << "\n";
  os << "method = " << c.method << "\n";
  os << "seed = " << c.seed << "\n";
  integer("repetitions", c.repetitions);
  num("train_fraction", c.train_fraction);
  os << "alphas = " << join_doubles(c.alphas) << "\n";
  integer("sim_per_class", c.sim_per_class);
  num("sim_noise_sd", c.sim_noise_sd);
  num("sim_mean_frequency", c.sim_mean_frequency);
  num("sim_mean_amplitude", c.sim_mean_amplitude);
  num("sim_class_amplitude", c.sim_class_amplitude);
  num("sim_class_length_scale", c.sim_class_length_scale);
  num("sim_individual_amplitude", c.sim_individual_amplitude);
  num("sim_individual_length_scale", c.sim_individual_length_scale);
  return os.str();
}

// --------------------------------------------------------------- CSV input

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;
};

CsvTable read_csv(std::istream& in, const std::string& name,
                  const std::vector<std::string>& required) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0)
      line.erase(0, 3);
    if (trim(line).empty())
      continue;
    auto fields = split(line, ',');
    if (!have_header) {
      t.header = fields;
      for (const auto& col : required)
        if (std::find(t.header.begin(), t.header.end(), col) == t.header.end())
          throw ParseError(name + ":" + std::to_string(line_no) + ": missing column '" + col + "'",
                           line_no);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size())
      throw ParseError(name + ":" + std::to_string(line_no) + ": expected " +
                           std::to_string(t.header.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    t.rows.push_back(std::move(fields));
    t.lines.push_back(line_no);
  }
  if (!have_header)
    throw ParseError(name + ": empty file, header row required", 1);
  return t;
}

std::size_t column(const CsvTable& t, const std::string& name) {
  return static_cast<std::size_t>(std::find(t.header.begin(), t.header.end(), name) -
                                  t.header.begin());
}

} // namespace

std::vector<SampleSeries> ingest_long_csv(std::istream& series, const std::string& series_name,
                                          std::istream* labels, const std::string& labels_name,
                                          const TimeGrid& grid, double tol) {
  const CsvTable st = read_csv(series, series_name, {"sample_id", "time", "value"});
  const std::size_t c_id = column(st, "sample_id");
  const std::size_t c_t = column(st, "time");
  const std::size_t c_v = column(st, "value");

  struct Acc {
    std::map<Index, std::pair<double, int>> points;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, Acc> acc;
  for (std::size_t r = 0; r < st.rows.size(); ++r) {
    const auto& row = st.rows[r];
    const std::size_t line = st.lines[r];
    const std::string where = series_name + ":" + std::to_string(line) + ": ";
    const std::string& id = row[c_id];
    if (id.empty())
      throw ParseError(where + "empty sample_id", line);
    const auto t = parse_double(row[c_t]);
    if (!t || !std::isfinite(*t))
      throw ParseError(where + "time '" + row[c_t] + "' is not a number", line);
    const auto v = parse_double(row[c_v]);
    if (!v || !std::isfinite(*v))
      throw ParseError(where + "value '" + row[c_v] + "' is not a number", line);
    const Index g = grid.find(*t, tol);
    if (g < 0)
      throw ParseError(where + "time " + row[c_t] + " is not on the grid", line);
    auto [it, fresh] = acc.try_emplace(id);
    if (fresh)
      order.push_back(id);
    auto& cell = it->second.points[g];
    cell.first += *v;
    cell.second += 1;
  }

  std::unordered_map<std::string, int> label_of;
  if (labels) {
    const CsvTable lt = read_csv(*labels, labels_name, {"sample_id", "label"});
    const std::size_t l_id = column(lt, "sample_id");
    const std::size_t l_z = column(lt, "label");
    for (std::size_t r = 0; r < lt.rows.size(); ++r) {
      const auto& row = lt.rows[r];
      const std::size_t line = lt.lines[r];
      const std::string where = labels_name + ":" + std::to_string(line) + ": ";
      if (row[l_z] != "0" && row[l_z] != "1")
        throw ParseError(where + "label '" + row[l_z] + "' must be 0 or 1", line);
      if (!acc.count(row[l_id]))
        throw ParseError(where + "unknown sample_id '" + row[l_id] + "'", line);
      const int z = row[l_z] == "1" ? 1 : 0;
      const auto [it, fresh] = label_of.emplace(row[l_id], z);
      if (!fresh && it->second != z)
        throw ParseError(where + "conflicting label for '" + row[l_id] + "'", line);
    }
  }

  std::vector<SampleSeries> out;
  out.reserve(order.size());
  for (const auto& id : order) {
    const auto& points = acc.at(id).points;
    SampleSeries s;
    s.id = id;
    s.obs_values.resize(static_cast<Index>(points.size()));
    Index k = 0;
    for (const auto& [g, sum_count] : points) {
      s.obs_index.push_back(g);
      s.obs_values[k++] = sum_count.first / sum_count.second;
    }
    if (const auto it = label_of.find(id); it != label_of.end())
      s.label = it->second;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SampleSeries> ingest_long_csv(const std::string& series_path,
                                          const std::optional<std::string>& labels_path,
                                          const TimeGrid& grid, double tol) {
  std::ifstream series = open_input(series_path);
  if (!labels_path)
    return ingest_long_csv(series, series_path, nullptr, "", grid, tol);
  std::ifstream labels = open_input(*labels_path);
  return ingest_long_csv(series, series_path, &labels, *labels_path, grid, tol);
}

void write_series_csv(std::ostream& out, const std::vector<SampleSeries>& samples,
                      const TimeGrid& grid) {
  out << "sample_id,time,value\n";
  for (const auto& s : samples)
    for (std::size_t k = 0; k < s.obs_index.size(); ++k)
      out << s.id << ',' << format_double(grid[s.obs_index[k]]) << ','
          << format_double(s.obs_values[static_cast<Index>(k)]) << '\n';
}

void write_labels_csv(std::ostream& out, const std::vector<SampleSeries>& samples) {
  out << "sample_id,label\n";
  for (const auto& s : samples)
    if (s.label)
      out << s.id << ',' << *s.label << '\n';
}

// -------------------------------------------------------------- checkpoint

namespace {

void put_vector(std::ostream& out, const char* key, const VectorXd& v) {
  out << key << ' ' << v.size();
  for (Index k = 0; k < v.size(); ++k)
    out << ' ' << format_double(v[k]);
  out << '\n';
}

void put_matrix(std::ostream& out, const char* key, const MatrixXd& m) {
  out << key << ' ' << m.rows() << ' ' << m.cols();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      out << ' ' << format_double(m(r, c));
  out << '\n';
}

// Whitespace-separated tokens with their byte offsets.
class TokenReader {
public:
  explicit TokenReader(std::string text) : text_(std::move(text)) {}

  std::size_t offset() const { return pos_; }

  std::string next(const char* what) {
    skip_space();
    if (pos_ >= text_.size())
      throw ParseError("checkpoint truncated at byte " + std::to_string(pos_) + " (expected " +
                           what + ")",
                       pos_);
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
    last_ = start;
    return text_.substr(start, pos_ - start);
  }

  void expect(const std::string& keyword) {
    const std::string tok = next(keyword.c_str());
    if (tok != keyword)
      fail("expected '" + keyword + "', found '" + tok + "'");
  }

  double number(const char* what) {
    const std::string tok = next(what);
    const auto v = parse_double(tok);
    if (!v)
      fail(std::string("expected ") + what + ", found '" + tok + "'");
    return *v;
  }

  Index count(const char* what) {
    const double v = number(what);
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e8)
      fail(std::string("invalid ") + what);
    return static_cast<Index>(v);
  }

  VectorXd vector(const char* key) {
    expect(key);
    const Index n = count("length");
    VectorXd v(n);
    for (Index k = 0; k < n; ++k)
      v[k] = number("value");
    return v;
  }

  MatrixXd matrix(const char* key) {
    expect(key);
    const Index r = count("rows");
    const Index c = count("columns");
    MatrixXd m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j)
        m(i, j) = number("value");
    return m;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("checkpoint byte " + std::to_string(last_) + ": " + what, last_);
  }

private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
  }

  std::string text_;
  std::size_t pos_ = 0;
  std::size_t last_ = 0;
};

} // namespace

void save_model(std::ostream& out, const FittedModel& m) {
  out << "format magic-checkpoint\n";
  out << "version " << kCheckpointVersion << '\n';
  out << "method " << method_name(m.method) << '\n';
  out << "num_groups " << m.num_groups << '\n';
  put_vector(out, "grid", m.grid.points());
  const auto& knots = m.basis.knots();
  put_vector(out, "knots", Eigen::Map<const VectorXd>(knots.data(), static_cast<Index>(knots.size())));
  out << "class_prior " << format_double(m.prior.p0) << ' ' << format_double(m.prior.p1) << '\n';
  out << "class_kernel_nugget " << format_double(m.class_kernel_nugget) << '\n';
  const auto& p = m.params;
  for (int g = 0; g < 2; ++g)
    out << "theta" << g << ' ' << format_double(p.class_kernels[static_cast<std::size_t>(g)].amplitude)
        << ' ' << format_double(p.class_kernels[static_cast<std::size_t>(g)].length_scale) << '\n';
  out << "theta " << format_double(p.individual_kernel.amplitude) << ' '
      << format_double(p.individual_kernel.length_scale) << '\n';
  out << "noise_variance " << format_double(p.noise_variance) << '\n';
  put_vector(out, "beta", p.beta.vector());
  put_vector(out, "prior_mean0", p.prior_means[0]);
  put_vector(out, "prior_mean1", p.prior_means[1]);
  put_vector(out, "posterior_mean0", m.posteriors[0].mean);
  put_matrix(out, "posterior_cov0", m.posteriors[0].covariance);
  put_vector(out, "posterior_mean1", m.posteriors[1].mean);
  put_matrix(out, "posterior_cov1", m.posteriors[1].covariance);
  put_vector(out, "q_history",
             Eigen::Map<const VectorXd>(m.q_history.data(), static_cast<Index>(m.q_history.size())));
  out << "end\n";
}

void save_model(const std::string& path, const FittedModel& model) {
  std::ofstream out = open_output(path);
  save_model(out, model);
  if (!out)
    throw DataError("failed writing '" + path + "'");
}

FittedModel load_model(std::istream& in) {
  std::ostringstream buf;
  buf << in.rdbuf();
  TokenReader r(buf.str());
  r.expect("format");
  if (r.next("format name") != "magic-checkpoint")
    r.fail("not a model checkpoint");
  r.expect("version");
  const Index version = r.count("version");
  if (version != kCheckpointVersion)
    throw UnsupportedVersionError("checkpoint version " + std::to_string(version) +
                                  " is not supported (this build reads version " +
                                  std::to_string(kCheckpointVersion) + ")");
  FittedModel m;
  r.expect("method");
  try {
    m.method = parse_method(r.next("method"));
  } catch (const InvalidArgument& e) {
    r.fail(e.what());
  }
  r.expect("num_groups");
  m.num_groups = static_cast<int>(r.count("group count"));
  if (m.num_groups < 1 || m.num_groups > 2)
    r.fail("num_groups must be 1 or 2");
  try {
    m.grid = TimeGrid(r.vector("grid"));
    const VectorXd knots = r.vector("knots");
    m.basis = BasisConfig(std::vector<double>(knots.data(), knots.data() + knots.size()));
    r.expect("class_prior");
    m.prior.p0 = r.number("p0");
    m.prior.p1 = r.number("p1");
    m.prior.validate();
    r.expect("class_kernel_nugget");
    m.class_kernel_nugget = r.number("nugget");
    auto& p = m.params;
    for (int g = 0; g < 2; ++g) {
      r.expect("theta" + std::to_string(g));
      p.class_kernels[static_cast<std::size_t>(g)].amplitude = r.number("amplitude");
      p.class_kernels[static_cast<std::size_t>(g)].length_scale = r.number("length scale");
    }
    r.expect("theta");
    p.individual_kernel.amplitude = r.number("amplitude");
    p.individual_kernel.length_scale = r.number("length scale");
    r.expect("noise_variance");
    p.noise_variance = r.number("noise variance");
    p.beta = LogisticCoefficients(r.vector("beta"));
    p.prior_means[0] = r.vector("prior_mean0");
    p.prior_means[1] = r.vector("prior_mean1");
    m.posteriors[0].mean = r.vector("posterior_mean0");
    m.posteriors[0].covariance = r.matrix("posterior_cov0");
    m.posteriors[1].mean = r.vector("posterior_mean1");
    m.posteriors[1].covariance = r.matrix("posterior_cov1");
    const VectorXd q = r.vector("q_history");
    m.q_history.assign(q.data(), q.data() + q.size());
    r.expect("end");
  } catch (const ParseError&) {
    throw;
  } catch (const InvalidArgument& e) {
    r.fail(e.what());
  }
  const Index n = m.grid.size();
  for (int g = 0; g < m.num_groups; ++g) {
    const auto& post = m.posteriors[static_cast<std::size_t>(g)];
    if (post.mean.size() != n || post.covariance.rows() != n || post.covariance.cols() != n)
      r.fail("posterior " + std::to_string(g) + " does not match the grid");
  }
  if (m.params.beta.num_basis() != m.basis.num_basis())
    r.fail("coefficient vector does not match the basis");
  return m;
}

FittedModel load_model(const std::string& path) {
  std::ifstream in = open_input(path);
  return load_model(in);
}

// ------------------------------------------------------------------ report

namespace {
const char* kReportHeader = "method,alpha,auc_mean,auc_sd,mse_mean,mse_sd,n_reps,n_failures,feature";
}

void write_report(std::ostream& out, const BenchmarkReport& report) {
  out << "# magic-report 1\n";
  for (const auto& [k, v] : report.metadata)
    out << "# " << k << '=' << v << '\n';
  out << kReportHeader << '\n';
  for (const auto& r : report.rows)
    out << r.method << ',' << format_double(r.alpha) << ',' << format_double(r.auc_mean) << ','
        << format_double(r.auc_sd) << ',' << format_double(r.mse_mean) << ','
        << format_double(r.mse_sd) << ',' << r.n_reps << ',' << r.n_failures << ',' << r.feature
        << '\n';
}

void write_report(const std::string& path, const BenchmarkReport& report) {
  std::ofstream out = open_output(path);
  write_report(out, report);
  if (!out)
    throw DataError("failed writing '" + path + "'");
}

BenchmarkReport parse_report(std::istream& in) {
  BenchmarkReport report;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  auto fail = [&](const std::string& what) -> void {
    throw ParseError("report line " + std::to_string(line_no) + ": " + what, line_no);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    if (line[0] == '#') {
      if (line_no == 1) {
        if (line != "# magic-report 1")
          fail("unrecognized report version line");
        continue;
      }
      if (header)
        fail("metadata after the table header");
      const std::string body = line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1);
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        fail("metadata line without '='");
      report.metadata.emplace_back(body.substr(0, eq), body.substr(eq + 1));
      continue;
    }
    if (!header) {
      if (line != kReportHeader)
        fail("unexpected table header");
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 9)
      fail("expected 9 fields");
    ReportRow r;
    r.method = f[0];
    double* numbers[] = {&r.alpha, &r.auc_mean, &r.auc_sd, &r.mse_mean, &r.mse_sd};
    for (std::size_t k = 0; k < 5; ++k) {
      const auto v = parse_double(f[k + 1]);
      if (!v)
        fail("field " + std::to_string(k + 2) + " is not a number");
      *numbers[k] = *v;
    }
    int* counts[] = {&r.n_reps, &r.n_failures};
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& s = f[k + 6];
      const auto res = std::from_chars(s.data(), s.data() + s.size(), *counts[k]);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        fail("field " + std::to_string(k + 7) + " is not an integer");
    }
    r.feature = f[8];
    report.rows.push_back(std::move(r));
  }
  if (!header)
    throw ParseError("report has no table header", line_no);
  return report;
}

BenchmarkReport read_report(const std::string& path) {
  std::ifstream in = open_input(path);
  return parse_report(in);
}

// ------------------------------------------------------------- predictions

void write_predictions(std::ostream& out, const std::vector<SampleSeries>& samples,
                       const std::vector<PredictionResult>& results) {
  out << "sample_id,label,assigned_class,probability,log_score0,log_score1\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& r = results[i];
    out << samples[i].id << ',' << (samples[i].label ? std::to_string(*samples[i].label) : "")
        << ',' << r.assigned_class << ',' << format_double(r.probability) << ','
        << format_double(r.map_log_scores[0]) << ',' << format_double(r.map_log_scores[1]) << '\n';
  }
}

void write_curves(std::ostream& out, const std::vector<SampleSeries>& samples,
                  const std::vector<PredictionResult>& results, const TimeGrid& grid) {
  out << "sample_id,time,value,variance,observed\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::size_t k = 0;
    for (Index g = 0; g < grid.size(); ++g) {
      const bool observed = k < s.obs_index.size() && s.obs_index[k] == g;
      if (observed)
        ++k;
      out << s.id << ',' << format_double(grid[g]) << ',' << format_double(results[i].curve[g])
          << ',' << format_double(results[i].variance[g]) << ',' << (observed ? 1 : 0) << '\n';
    }
  }
}

} // namespace magic
