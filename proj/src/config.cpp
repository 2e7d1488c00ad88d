#include "stochbt/config.hpp"

#include "stochbt/exceptions.hpp"
#include "stochbt/io.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace stochbt {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"model", {"n", "length", "nonlinearity", "a", "boundary", "profiles", "K", "control_input"}},
      {"gramians", {"c1", "c2", "tol_lyap", "max_iter", "rel_gap", "max_cond_K"}},
      {"balancing", {"r_list", "tie_policy", "hsv_floor", "cond_max", "split_tol"}},
      {"simulation",
       {"T", "dt", "n_paths", "seed", "controls", "gap_bound", "blowup_threshold", "sample_paths"}},
      {"gap_scan", {"weight", "matrix", "c2", "per_axis", "lo", "hi", "samples"}},
      {"output", {"directory"}},
  };
  return keys;
}

std::string trim(std::string s) {
  boost::algorithm::trim(s);
  return s;
}

std::vector<std::string> split_list(const std::string& text, const char* sep) {
  std::vector<std::string> parts;
  boost::algorithm::split(parts, text, boost::algorithm::is_any_of(sep));
  std::vector<std::string> out;
  for (auto& p : parts) {
    std::string t = trim(p);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

double to_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("[" + key + "] expects a number, got '" + text + "'");
  }
}

long long to_integer(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("[" + key + "] expects an integer, got '" + text + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    if (!text.empty() && text[0] == '-') throw std::invalid_argument(text);
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("[" + key + "] expects a non-negative integer, got '" + text + "'");
  }
}

bool to_bool(const std::string& key, const std::string& text) {
  const std::string t = boost::algorithm::to_lower_copy(text);
  if (t == "true" || t == "on" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "off" || t == "no" || t == "0") return false;
  throw ConfigError("[" + key + "] expects on/off, got '" + text + "'");
}

Matrix to_matrix(const std::string& key, const std::string& text) {
  const auto rows = split_list(text, ";");
  if (rows.empty()) throw ConfigError("[" + key + "] empty matrix");
  std::vector<std::vector<double>> vals;
  for (const auto& r : rows) {
    std::vector<double> row;
    for (const auto& c : split_list(r, ", \t")) row.push_back(to_double(key, c));
    if (!vals.empty() && row.size() != vals.front().size()) throw ConfigError("[" + key + "] ragged matrix");
    vals.push_back(std::move(row));
  }
  Matrix M(static_cast<Index>(vals.size()), static_cast<Index>(vals.front().size()));
  for (Index i = 0; i < M.rows(); ++i)
    for (Index j = 0; j < M.cols(); ++j) M(i, j) = vals[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return M;
}

std::string matrix_literal(const Matrix& M) {
  std::ostringstream os;
  for (Index i = 0; i < M.rows(); ++i) {
    if (i) os << "; ";
    for (Index j = 0; j < M.cols(); ++j) os << (j ? ", " : "") << io::num(M(i, j));
  }
  return os.str();
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? ", " : "") << xs[i];
  return os.str();
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {
    for (const auto& [section, body] : tree) {
      auto it = known_keys().find(section);
      if (it == known_keys().end()) throw ConfigError("unknown section [" + section + "]");
      for (const auto& [key, value] : body) {
        if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
        (void)value;
      }
    }
  }

  std::optional<std::string> get(const std::string& section, const std::string& key) const {
    auto s = tree_.get_child_optional(section);
    if (!s) return std::nullopt;
    auto v = s->get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return trim(*v);
  }

 private:
  const pt::ptree& tree_;
};

}  // namespace

ControlSignal control_by_name(const std::string& name, Index m) {
  const std::string t = boost::algorithm::to_lower_copy(name);
  if (t == "oscillating" || t == "u_tilde") {
    if (m != 2) throw ConfigError("control 'oscillating' needs m = 2 inputs");
    return ControlSignal::oscillating();
  }
  if (t == "smooth" || t == "u_hat") {
    if (m != 2) throw ConfigError("control 'smooth' needs m = 2 inputs");
    return ControlSignal::smooth();
  }
  if (t == "zero") return ControlSignal::zero(m);
  throw ConfigError("unknown control '" + name + "' (expected oscillating, smooth or zero)");
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  try {
    return parse(io::read_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }
  const Reader r(tree);
  ExperimentConfig c;

  if (auto v = r.get("model", "n")) c.model.n = to_integer("model.n", *v);
  if (auto v = r.get("model", "length")) c.model.length = to_double("model.length", *v);
  if (auto v = r.get("model", "nonlinearity")) c.model.nonlinearity = *v;
  if (auto v = r.get("model", "a")) c.model.a = to_double("model.a", *v);
  if (auto v = r.get("model", "boundary")) {
    const std::string b = boost::algorithm::to_lower_copy(*v);
    if (b == "dirichlet")
      c.model.boundary = Boundary::Dirichlet;
    else if (b == "neumann")
      c.model.boundary = Boundary::Neumann;
    else
      throw ConfigError("[model.boundary] expects dirichlet or neumann, got '" + *v + "'");
  }
  if (auto v = r.get("model", "profiles")) c.model.profiles = split_list(*v, ",");
  if (auto v = r.get("model", "K")) c.model.K = to_matrix("model.K", *v);
  if (auto v = r.get("model", "control_input")) c.model.control_input = to_bool("model.control_input", *v);

  if (auto v = r.get("gramians", "c1")) c.gramians.c1 = to_double("gramians.c1", *v);
  if (auto v = r.get("gramians", "c2")) c.gramians.c2 = to_double("gramians.c2", *v);
  if (auto v = r.get("gramians", "tol_lyap")) c.gramians.tol_lyap = to_double("gramians.tol_lyap", *v);
  if (auto v = r.get("gramians", "max_iter"))
    c.gramians.max_iter = static_cast<int>(to_integer("gramians.max_iter", *v));
  if (auto v = r.get("gramians", "rel_gap")) c.gramians.rel_gap = to_double("gramians.rel_gap", *v);
  if (auto v = r.get("gramians", "max_cond_K")) c.gramians.max_cond_K = to_double("gramians.max_cond_K", *v);

  if (auto v = r.get("balancing", "r_list")) {
    c.balancing.r_list.clear();
    for (const auto& s : split_list(*v, ",")) c.balancing.r_list.push_back(to_integer("balancing.r_list", s));
  }
  if (auto v = r.get("balancing", "tie_policy")) c.balancing.tie_policy = parse_tie_policy(*v);
  if (auto v = r.get("balancing", "hsv_floor")) c.balancing.hsv_floor = to_double("balancing.hsv_floor", *v);
  if (auto v = r.get("balancing", "cond_max")) c.balancing.cond_max = to_double("balancing.cond_max", *v);
  if (auto v = r.get("balancing", "split_tol")) c.balancing.split_tol = to_double("balancing.split_tol", *v);

  if (auto v = r.get("simulation", "T")) c.simulation.T = to_double("simulation.T", *v);
  if (auto v = r.get("simulation", "dt")) c.simulation.dt = to_double("simulation.dt", *v);
  if (auto v = r.get("simulation", "n_paths")) c.simulation.n_paths = to_integer("simulation.n_paths", *v);
  if (auto v = r.get("simulation", "seed")) c.simulation.seed = to_u64("simulation.seed", *v);
  if (auto v = r.get("simulation", "controls")) c.simulation.controls = split_list(*v, ",");
  if (auto v = r.get("simulation", "gap_bound")) c.simulation.gap_bound = to_bool("simulation.gap_bound", *v);
  if (auto v = r.get("simulation", "blowup_threshold"))
    c.simulation.blowup_threshold = to_double("simulation.blowup_threshold", *v);
  if (auto v = r.get("simulation", "sample_paths"))
    c.simulation.sample_paths = to_integer("simulation.sample_paths", *v);

  if (auto v = r.get("gap_scan", "weight")) c.gap_scan.weight = *v;
  if (auto v = r.get("gap_scan", "matrix")) c.gap_scan.matrix = to_matrix("gap_scan.matrix", *v);
  if (auto v = r.get("gap_scan", "c2")) c.gap_scan.c2 = to_double("gap_scan.c2", *v);
  if (auto v = r.get("gap_scan", "per_axis")) c.gap_scan.per_axis = to_integer("gap_scan.per_axis", *v);
  if (auto v = r.get("gap_scan", "lo")) c.gap_scan.lo = to_double("gap_scan.lo", *v);
  if (auto v = r.get("gap_scan", "hi")) c.gap_scan.hi = to_double("gap_scan.hi", *v);
  if (auto v = r.get("gap_scan", "samples")) c.gap_scan.samples = to_integer("gap_scan.samples", *v);

  if (auto v = r.get("output", "directory")) c.output.directory = *v;

  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (model.n < 2) fail("[model.n] must be at least 2");
  if (!(model.length > 0.0)) fail("[model.length] must be positive");
  nonlinearity();
  if (model.profiles.empty()) fail("[model.profiles] needs at least one noise profile");
  for (const auto& p : model.profiles) NoiseProfile::named(p);
  if (model.K.rows() != model.K.cols()) fail("[model.K] must be square");
  if (model.K.rows() != static_cast<Index>(model.profiles.size()))
    fail("[model.K] must be d x d with d = number of profiles");
  if (gramians.tol_lyap <= 0.0 || gramians.max_iter < 1 || gramians.rel_gap <= 0.0)
    fail("[gramians] tolerances must be positive");
  if (balancing.r_list.empty()) fail("[balancing.r_list] must not be empty");
  for (Index r : balancing.r_list)
    if (r < 1 || r > model.n) fail("[balancing.r_list] entries must lie in [1, n]");
  if (!(balancing.hsv_floor >= 0.0) || !(balancing.cond_max > 1.0) || !(balancing.split_tol >= 0.0))
    fail("[balancing] thresholds out of range");
  if (!(simulation.T > 0.0)) fail("[simulation.T] must be positive");
  TimeGrid::make(simulation.T, dt());
  if (simulation.n_paths < 2) fail("[simulation.n_paths] must be at least 2");
  if (simulation.controls.empty()) fail("[simulation.controls] must not be empty");
  for (const auto& u : simulation.controls) control_by_name(u, 2);
  if (!(simulation.blowup_threshold > 0.0)) fail("[simulation.blowup_threshold] must be positive");
  if (simulation.sample_paths < 0 || simulation.sample_paths > simulation.n_paths)
    fail("[simulation.sample_paths] must lie in [0, n_paths]");
  if (gap_scan.weight != "Q" && gap_scan.weight != "P") fail("[gap_scan.weight] must be Q or P");
  if (gap_scan.matrix && (gap_scan.matrix->rows() != gap_scan.matrix->cols() || gap_scan.matrix->rows() > 3))
    fail("[gap_scan.matrix] must be square with at most 3 rows");
  if (gap_scan.per_axis < 2 || gap_scan.samples < 1) fail("[gap_scan] needs per_axis >= 2 and samples >= 1");
  if (!(gap_scan.hi > gap_scan.lo)) fail("[gap_scan] needs lo < hi");
  if (output.directory.empty()) fail("[output.directory] must not be empty");
}

std::string ExperimentConfig::to_ini() const {
  std::ostringstream os;
  os << "[model]\n"
     << "n = " << model.n << "\n"
     << "length = " << io::num(model.length) << "\n"
     << "nonlinearity = " << model.nonlinearity << "\n"
     << "a = " << io::num(model.a) << "\n"
     << "boundary = " << (model.boundary == Boundary::Dirichlet ? "dirichlet" : "neumann") << "\n"
     << "profiles = " << join(model.profiles) << "\n"
     << "K = " << matrix_literal(model.K) << "\n"
     << "control_input = " << (model.control_input ? "on" : "off") << "\n\n";
  os << "[gramians]\n"
     << "c1 = " << io::num(c1()) << "\n"
     << "c2 = " << io::num(c2()) << "\n"
     << "tol_lyap = " << io::num(gramians.tol_lyap) << "\n"
     << "max_iter = " << gramians.max_iter << "\n"
     << "rel_gap = " << io::num(gramians.rel_gap) << "\n"
     << "max_cond_K = " << io::num(gramians.max_cond_K) << "\n\n";
  os << "[balancing]\n"
     << "r_list = " << join(balancing.r_list) << "\n"
     << "tie_policy = " << to_string(balancing.tie_policy) << "\n"
     << "hsv_floor = " << io::num(balancing.hsv_floor) << "\n"
     << "cond_max = " << io::num(balancing.cond_max) << "\n"
     << "split_tol = " << io::num(balancing.split_tol) << "\n\n";
  os << "[simulation]\n"
     << "T = " << io::num(simulation.T) << "\n"
     << "dt = " << io::num(dt()) << "\n"
     << "n_paths = " << simulation.n_paths << "\n"
     << "seed = " << simulation.seed << "\n"
     << "controls = " << join(simulation.controls) << "\n"
     << "gap_bound = " << (simulation.gap_bound ? "on" : "off") << "\n"
     << "blowup_threshold = " << io::num(simulation.blowup_threshold) << "\n"
     << "sample_paths = " << simulation.sample_paths << "\n\n";
  os << "[gap_scan]\n"
     << "weight = " << gap_scan.weight << "\n";
  if (gap_scan.matrix) os << "matrix = " << matrix_literal(*gap_scan.matrix) << "\n";
  if (gap_scan.c2) os << "c2 = " << io::num(*gap_scan.c2) << "\n";
  os << "per_axis = " << gap_scan.per_axis << "\n"
     << "lo = " << io::num(gap_scan.lo) << "\n"
     << "hi = " << io::num(gap_scan.hi) << "\n"
     << "samples = " << gap_scan.samples << "\n\n";
  os << "[output]\n"
     << "directory = " << output.directory << "\n";
  return os.str();
}

Nonlinearity ExperimentConfig::nonlinearity() const {
  const std::string t = boost::algorithm::to_lower_copy(model.nonlinearity);
  if (t == "f1") return Nonlinearity::f1(model.a);
  if (t == "f2") return Nonlinearity::f2();
  if (t == "f3") return Nonlinearity::f3();
  if (t == "zero" || t == "none" || t == "linear") return Nonlinearity::zero();
  throw ConfigError("[model.nonlinearity] expects F1, F2, F3 or zero, got '" + model.nonlinearity + "'");
}

StochasticSystem ExperimentConfig::build_system() const {
  std::vector<NoiseProfile> profiles;
  for (const auto& p : model.profiles) profiles.push_back(NoiseProfile::named(p));
  StochasticSystem sys = build_reaction_diffusion(model.n, model.length, nonlinearity(), profiles, model.K,
                                                  model.boundary);
  if (model.control_input) return sys;
  return StochasticSystem(sys.A(), Matrix::Zero(sys.n(), sys.m()), sys.C(), sys.N(), sys.K(), sys.f());
}

double ExperimentConfig::c1() const { return gramians.c1.value_or(default_shift(nonlinearity())); }
double ExperimentConfig::c2() const { return gramians.c2.value_or(c1()); }
double ExperimentConfig::dt() const { return simulation.dt.value_or(1e-3 * simulation.T); }
TimeGrid ExperimentConfig::grid() const { return TimeGrid::make(simulation.T, dt()); }

NoiseBundle ExperimentConfig::noise() const {
  return NoiseBundle(model.K, grid(), simulation.n_paths, simulation.seed);
}

std::vector<ControlSignal> ExperimentConfig::controls() const {
  std::vector<ControlSignal> out;
  for (const auto& u : simulation.controls) out.push_back(control_by_name(u, 2));
  return out;
}

GramianOptions ExperimentConfig::gramian_options() const {
  GramianOptions o;
  o.lyapunov.tol = gramians.tol_lyap;
  o.lyapunov.max_iter = gramians.max_iter;
  o.min_trace.rel_gap = gramians.rel_gap;
  o.min_trace.max_cond_K = gramians.max_cond_K;
  return o;
}

BalancingOptions ExperimentConfig::balancing_options() const {
  BalancingOptions o;
  o.tie_policy = balancing.tie_policy;
  o.hsv_floor = balancing.hsv_floor;
  o.cond_max = balancing.cond_max;
  o.split_tol = balancing.split_tol;
  return o;
}

SimulationOptions ExperimentConfig::simulation_options() const {
  SimulationOptions o;
  o.blowup_threshold = simulation.blowup_threshold;
  return o;
}

}  // namespace stochbt
