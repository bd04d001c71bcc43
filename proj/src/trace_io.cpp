#include "trace_io.hpp"

#include <Eigen/Eigenvalues>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace bilevel {

namespace {

[[noreturn]] void parse_fail(const std::string& where, const std::string& what) {
  fail(ErrorCode::ParseError, "config error at " + where + ": " + what);
}

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) parse_fail(where, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok) parse_fail(where + "/" + key, "unknown key \"" + key + "\"");
  }
}

double get_number(const json& obj, const std::string& where, const char* key,
                  std::optional<double> fallback = std::nullopt) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    parse_fail(where + "/" + key, "missing required key");
  }
  const auto& v = obj.at(key);
  if (!v.is_number()) parse_fail(where + "/" + key, "expected a number");
  return v.get<double>();
}

std::int64_t get_int(const json& obj, const std::string& where, const char* key,
                     std::optional<std::int64_t> fallback = std::nullopt) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    parse_fail(where + "/" + key, "missing required key");
  }
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) parse_fail(where + "/" + key, "expected an integer");
  return v.get<std::int64_t>();
}

std::string get_string(const json& obj, const std::string& where, const char* key,
                       std::optional<std::string> fallback = std::nullopt) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    parse_fail(where + "/" + key, "missing required key");
  }
  const auto& v = obj.at(key);
  if (!v.is_string()) parse_fail(where + "/" + key, "expected a string");
  return v.get<std::string>();
}

bool get_bool(const json& obj, const std::string& where, const char* key,
              bool fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) parse_fail(where + "/" + key, "expected a boolean");
  return v.get<bool>();
}

Vec get_vector(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_array())
    parse_fail(where + "/" + key, "expected an array of numbers");
  const auto& arr = obj.at(key);
  Vec out(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) parse_fail(where + "/" + key, "expected numbers");
    out(static_cast<Index>(i)) = arr[i].get<double>();
  }
  return out;
}

ProblemConfig parse_problem(const json& obj, const std::string& where) {
  ProblemConfig pc;
  if (obj.contains("path")) {
    check_keys(obj, where, {"path"});
    pc.path = get_string(obj, where, "path");
    if (!std::filesystem::exists(pc.path))
      parse_fail(where + "/path", "instance file \"" + pc.path + "\" does not exist");
    return pc;
  }
  pc.family = get_string(obj, where, "family");
  if (pc.family == "plgame") {
    check_keys(obj, where,
               {"family", "d", "l", "n", "mu", "lg", "seed", "range_compatible"});
    pc.plgame.d = get_int(obj, where, "d");
    pc.plgame.l = get_int(obj, where, "l");
    pc.plgame.n = get_int(obj, where, "n");
    pc.plgame.mu = get_number(obj, where, "mu", 1.0);
    pc.plgame.l_interval = get_number(obj, where, "lg", 4.0);
    pc.plgame.seed = static_cast<std::uint64_t>(get_int(obj, where, "seed", 0));
    pc.plgame.range_compatible = get_bool(obj, where, "range_compatible", false);
  } else if (pc.family == "sensing") {
    check_keys(obj, where, {"family", "d", "r", "seed"});
    pc.sensing.d = get_int(obj, where, "d");
    pc.sensing.r = get_int(obj, where, "r", 3);
    pc.sensing.seed = static_cast<std::uint64_t>(get_int(obj, where, "seed", 0));
  } else if (pc.family == "quad") {
    check_keys(obj, where,
               {"family", "d", "p", "mu", "lg", "seed", "p_lo", "p_hi", "r_scale",
                "c_gxy"});
    pc.quad.d = get_int(obj, where, "d");
    pc.quad.p = get_int(obj, where, "p");
    pc.quad.mu_gen = get_number(obj, where, "mu", 1.0);
    pc.quad.lg_gen = get_number(obj, where, "lg", 4.0);
    pc.quad.p_lo = get_number(obj, where, "p_lo", 0.5);
    pc.quad.p_hi = get_number(obj, where, "p_hi", 2.0);
    pc.quad.r_scale = get_number(obj, where, "r_scale", 0.1);
    pc.quad.c_gxy = get_number(obj, where, "c_gxy", 1.0);
    pc.quad.seed = static_cast<std::uint64_t>(get_int(obj, where, "seed", 0));
  } else {
    parse_fail(where + "/family",
               "unknown family \"" + pc.family + "\" (plgame | sensing | quad)");
  }
  return pc;
}

StepSchedule parse_schedule(const json& obj, const std::string& where) {
  const std::string variant = get_string(obj, where, "variant");
  if (variant == "constant") {
    check_keys(obj, where, {"variant", "eta"});
    return StepSchedule::constant(get_number(obj, where, "eta", 1.0));
  }
  if (variant == "polynomial") {
    check_keys(obj, where, {"variant", "k", "m", "exponent"});
    const std::string exp = get_string(obj, where, "exponent");
    double e = 0.0;
    if (exp == "1/2") e = 0.5;
    else if (exp == "1/3") e = 1.0 / 3.0;
    else parse_fail(where + "/exponent", "expected \"1/2\" or \"1/3\"");
    return StepSchedule::polynomial(get_number(obj, where, "k"),
                                    get_number(obj, where, "m"), e);
  }
  parse_fail(where + "/variant", "expected \"constant\" or \"polynomial\"");
}

FeasibleSet parse_set(const json& obj, const std::string& where) {
  const std::string variant = get_string(obj, where, "variant");
  if (variant == "unconstrained") {
    check_keys(obj, where, {"variant"});
    return FeasibleSet::unconstrained();
  }
  if (variant == "ball") {
    check_keys(obj, where, {"variant", "center", "radius"});
    return FeasibleSet::ball(get_vector(obj, where, "center"),
                             get_number(obj, where, "radius"));
  }
  if (variant == "box") {
    check_keys(obj, where, {"variant", "lower", "upper"});
    return FeasibleSet::box(get_vector(obj, where, "lower"),
                            get_vector(obj, where, "upper"));
  }
  parse_fail(where + "/variant", "expected unconstrained, ball or box");
}

SolverEntry parse_solver_entry(const json& obj, const std::string& where) {
  check_keys(obj, where,
             {"name", "gamma", "lambda", "T", "seed", "schedule", "coeffs", "batch",
              "clip", "set", "init_radius", "warm_start_samples"});
  SolverEntry entry;
  try {
    entry.kind = parse_solver_name(get_string(obj, where, "name"));
  } catch (const Error& e) {
    parse_fail(where + "/name", e.what());
  }
  entry.cfg.gamma = get_number(obj, where, "gamma", 0.01);
  entry.cfg.lambda = get_number(obj, where, "lambda", 0.01);
  entry.cfg.horizon = get_int(obj, where, "T", 100);
  entry.cfg.seed = static_cast<std::uint64_t>(get_int(obj, where, "seed", 0));
  if (obj.contains("schedule"))
    entry.cfg.schedule = parse_schedule(obj.at("schedule"), where + "/schedule");
  if (obj.contains("coeffs")) {
    const auto& c = obj.at("coeffs");
    const std::string cw = where + "/coeffs";
    check_keys(c, cw, {"c1", "c2", "c3", "c4", "c5"});
    entry.cfg.coeffs.c1 = get_number(c, cw, "c1", 1.0);
    entry.cfg.coeffs.c2 = get_number(c, cw, "c2", 1.0);
    entry.cfg.coeffs.c3 = get_number(c, cw, "c3", 1.0);
    entry.cfg.coeffs.c4 = get_number(c, cw, "c4", 1.0);
    entry.cfg.coeffs.c5 = get_number(c, cw, "c5", 1.0);
  }
  entry.cfg.batch = get_int(obj, where, "batch", 1);
  if (obj.contains("clip")) {
    const auto& c = obj.at("clip");
    const std::string cw = where + "/clip";
    check_keys(c, cw, {"c_fy", "c_gxy", "mu", "l_g"});
    entry.cfg.clip.c_fy = get_number(c, cw, "c_fy");
    entry.cfg.clip.c_gxy = get_number(c, cw, "c_gxy");
    entry.cfg.clip.mu = get_number(c, cw, "mu");
    entry.cfg.clip.l_g = get_number(c, cw, "l_g");
    entry.clip_given = true;
  }
  if (obj.contains("set")) entry.cfg.set = parse_set(obj.at("set"), where + "/set");
  entry.cfg.init_radius = get_number(obj, where, "init_radius", 1.0);
  entry.cfg.warm_start_samples = get_int(obj, where, "warm_start_samples", 0);
  return entry;
}

DiagnosticsConfig parse_diagnostics(const json& obj, const std::string& where) {
  check_keys(obj, where, {"diag_stride", "oracle"});
  DiagnosticsConfig dc;
  dc.diag_stride = get_int(obj, where, "diag_stride", 10);
  if (dc.diag_stride < 1) parse_fail(where + "/diag_stride", "must be >= 1");
  if (obj.contains("oracle")) dc.oracle = get_bool(obj, where, "oracle", true);
  return dc;
}

OutputConfig parse_output(const json& obj, const std::string& where) {
  check_keys(obj, where, {"dir", "formats"});
  OutputConfig oc;
  oc.dir = get_string(obj, where, "dir", "");
  if (obj.contains("formats")) {
    oc.formats.clear();
    for (const auto& f : obj.at("formats")) {
      if (!f.is_string()) parse_fail(where + "/formats", "expected strings");
      const std::string name = f.get<std::string>();
      if (name != "csv" && name != "gnuplot")
        parse_fail(where + "/formats", "unknown format \"" + name + "\"");
      oc.formats.push_back(name);
    }
  }
  return oc;
}

json schedule_to_json(const StepSchedule& s) {
  if (s.kind() == StepSchedule::Kind::Constant)
    return {{"variant", "constant"}, {"eta", s.eta()}};
  return {{"variant", "polynomial"},
          {"k", s.k()},
          {"m", s.m()},
          {"exponent", std::abs(s.exponent() - 0.5) < 1e-12 ? "1/2" : "1/3"}};
}

json set_to_json(const FeasibleSet& set) {
  switch (set.kind()) {
    case FeasibleSet::Kind::Unconstrained:
      return {{"variant", "unconstrained"}};
    case FeasibleSet::Kind::Ball: {
      json center = json::array();
      for (Index i = 0; i < set.center().size(); ++i) center.push_back(set.center()(i));
      return {{"variant", "ball"}, {"center", center}, {"radius", set.radius()}};
    }
    case FeasibleSet::Kind::Box: {
      json lo = json::array(), hi = json::array();
      for (Index i = 0; i < set.lower().size(); ++i) lo.push_back(set.lower()(i));
      for (Index i = 0; i < set.upper().size(); ++i) hi.push_back(set.upper()(i));
      return {{"variant", "box"}, {"lower", lo}, {"upper", hi}};
    }
  }
  return {};
}

json problem_to_json(const ProblemConfig& pc) {
  if (!pc.path.empty()) return {{"path", pc.path}};
  json j{{"family", pc.family}};
  if (pc.family == "plgame") {
    j["d"] = pc.plgame.d;
    j["l"] = pc.plgame.l;
    j["n"] = pc.plgame.n;
    j["mu"] = pc.plgame.mu;
    j["lg"] = pc.plgame.l_interval;
    j["seed"] = pc.plgame.seed;
    j["range_compatible"] = pc.plgame.range_compatible;
  } else if (pc.family == "sensing") {
    j["d"] = pc.sensing.d;
    j["r"] = pc.sensing.r;
    j["seed"] = pc.sensing.seed;
  } else {
    j["d"] = pc.quad.d;
    j["p"] = pc.quad.p;
    j["mu"] = pc.quad.mu_gen;
    j["lg"] = pc.quad.lg_gen;
    j["p_lo"] = pc.quad.p_lo;
    j["p_hi"] = pc.quad.p_hi;
    j["r_scale"] = pc.quad.r_scale;
    j["c_gxy"] = pc.quad.c_gxy;
    j["seed"] = pc.quad.seed;
  }
  return j;
}

json solver_to_json(const SolverEntry& entry) {
  json j;
  j["name"] = std::string(solver_name(entry.kind));
  j["gamma"] = entry.cfg.gamma;
  j["lambda"] = entry.cfg.lambda;
  j["T"] = entry.cfg.horizon;
  j["seed"] = entry.cfg.seed;
  j["schedule"] = schedule_to_json(entry.cfg.schedule);
  j["coeffs"] = {{"c1", entry.cfg.coeffs.c1}, {"c2", entry.cfg.coeffs.c2},
                 {"c3", entry.cfg.coeffs.c3}, {"c4", entry.cfg.coeffs.c4},
                 {"c5", entry.cfg.coeffs.c5}};
  j["batch"] = entry.cfg.batch;
  if (entry.clip_given)
    j["clip"] = {{"c_fy", entry.cfg.clip.c_fy}, {"c_gxy", entry.cfg.clip.c_gxy},
                 {"mu", entry.cfg.clip.mu}, {"l_g", entry.cfg.clip.l_g}};
  j["set"] = set_to_json(entry.cfg.set);
  j["init_radius"] = entry.cfg.init_radius;
  j["warm_start_samples"] = entry.cfg.warm_start_samples;
  return j;
}

json parse_text(const std::string& text) {
  json root = json::parse(text, nullptr, false);
  if (root.is_discarded()) fail(ErrorCode::ParseError, "config is not valid JSON");
  return root;
}

}  // namespace

ProblemConfig parse_problem_json(const json& obj) {
  return parse_problem(obj, "/problem");
}

RunConfigFile parse_config(const std::string& text) {
  const json root = parse_text(text);
  check_keys(root, "", {"problem", "solver", "diagnostics", "output"});
  if (!root.contains("problem")) parse_fail("/problem", "missing required key");
  if (!root.contains("solver")) parse_fail("/solver", "missing required key");

  RunConfigFile cfg;
  cfg.problem = parse_problem(root.at("problem"), "/problem");
  cfg.solver = parse_solver_entry(root.at("solver"), "/solver");
  if (root.contains("diagnostics"))
    cfg.diagnostics = parse_diagnostics(root.at("diagnostics"), "/diagnostics");
  if (root.contains("output"))
    cfg.output = parse_output(root.at("output"), "/output");
  return cfg;
}

json emit_config(const RunConfigFile& cfg) {
  json j;
  j["problem"] = problem_to_json(cfg.problem);
  j["solver"] = solver_to_json(cfg.solver);
  j["diagnostics"] = {{"diag_stride", cfg.diagnostics.diag_stride}};
  if (cfg.diagnostics.oracle) j["diagnostics"]["oracle"] = *cfg.diagnostics.oracle;
  j["output"] = {{"dir", cfg.output.dir}, {"formats", cfg.output.formats}};
  return j;
}

CompareConfig parse_compare_config(const std::string& text) {
  const json root = parse_text(text);
  check_keys(root, "",
             {"problem", "solvers", "seeds", "base_seed", "threshold", "T",
              "diagnostics", "output"});
  if (!root.contains("problem")) parse_fail("/problem", "missing required key");
  if (!root.contains("solvers")) parse_fail("/solvers", "missing required key");

  CompareConfig cc;
  cc.problem = parse_problem(root.at("problem"), "/problem");
  const auto& solvers = root.at("solvers");
  if (!solvers.is_array() || solvers.size() < 2)
    parse_fail("/solvers", "need an array of at least two solver entries");
  for (std::size_t i = 0; i < solvers.size(); ++i)
    cc.solvers.push_back(
        parse_solver_entry(solvers[i], "/solvers/" + std::to_string(i)));
  cc.seeds = get_int(root, "", "seeds", 10);
  if (cc.seeds < 1) parse_fail("/seeds", "must be >= 1");
  cc.base_seed = static_cast<std::uint64_t>(get_int(root, "", "base_seed", 0));
  cc.threshold = get_number(root, "", "threshold", 1e-2);
  cc.horizon_override = get_int(root, "", "T", 0);
  if (root.contains("diagnostics"))
    cc.diagnostics = parse_diagnostics(root.at("diagnostics"), "/diagnostics");
  if (root.contains("output")) cc.output = parse_output(root.at("output"), "/output");
  return cc;
}

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_optional(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();
}

std::optional<double> parse_optional(const std::string& field, std::size_t row) {
  if (field.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size())
    fail(ErrorCode::ParseError, "trace row " + std::to_string(row) + ": bad number");
  return v;
}

double parse_required(const std::string& field, std::size_t row) {
  const auto v = parse_optional(field, row);
  if (!v) fail(ErrorCode::ParseError, "trace row " + std::to_string(row) + ": empty field");
  return *v;
}

}  // namespace

std::string trace_header_path(const std::string& csv_path) {
  const std::string suffix = ".csv";
  if (csv_path.size() > suffix.size() &&
      csv_path.compare(csv_path.size() - suffix.size(), suffix.size(), suffix) == 0)
    return csv_path.substr(0, csv_path.size() - suffix.size()) + ".header.json";
  return csv_path + ".header.json";
}

void write_trace(const std::string& csv_path, const TraceFile& trace) {
  if (trace.rows.empty())
    fail(ErrorCode::InvalidInput, "write_trace: refusing to write an empty trace");
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) fail(ErrorCode::IoError, "write_trace: cannot open " + csv_path);
  csv << kTraceColumns << "\n";
  for (const auto& r : trace.rows) {
    csv << r.t << ',' << fmt_double(r.eta) << ',' << fmt_double(r.grad_map_norm)
        << ',' << fmt_optional(r.true_grad_norm) << ',' << fmt_optional(r.hyper_err)
        << ',' << fmt_double(r.f_val) << ',' << fmt_optional(r.g_gap) << ','
        << fmt_optional(r.lyapunov) << ',' << r.samples_used << ',' << r.wall_nanos
        << "\n";
  }
  if (!csv.good()) fail(ErrorCode::IoError, "write_trace: write failed for " + csv_path);
  csv.close();

  std::ofstream hdr(trace_header_path(csv_path), std::ios::binary);
  if (!hdr) fail(ErrorCode::IoError, "write_trace: cannot open header sidecar");
  hdr << trace.header.dump(2) << "\n";
  if (!hdr.good()) fail(ErrorCode::IoError, "write_trace: header write failed");
}

TraceFile read_trace(const std::string& csv_path) {
  std::ifstream csv(csv_path, std::ios::binary);
  if (!csv) fail(ErrorCode::IoError, "read_trace: cannot open " + csv_path);
  TraceFile out;

  std::string line;
  if (!std::getline(csv, line)) fail(ErrorCode::ParseError, "read_trace: empty file");
  if (line != kTraceColumns)
    fail(ErrorCode::ParseError, "read_trace: unexpected column header");

  std::size_t row = 1;
  while (std::getline(csv, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 10)
      fail(ErrorCode::ParseError,
           "trace row " + std::to_string(row) + ": expected 10 fields, got " +
               std::to_string(fields.size()));
    TraceRecord rec;
    rec.t = static_cast<std::int64_t>(parse_required(fields[0], row));
    rec.eta = parse_required(fields[1], row);
    rec.grad_map_norm = parse_required(fields[2], row);
    rec.true_grad_norm = parse_optional(fields[3], row);
    rec.hyper_err = parse_optional(fields[4], row);
    rec.f_val = parse_required(fields[5], row);
    rec.g_gap = parse_optional(fields[6], row);
    rec.lyapunov = parse_optional(fields[7], row);
    rec.samples_used = static_cast<std::int64_t>(parse_required(fields[8], row));
    rec.wall_nanos = static_cast<std::int64_t>(parse_required(fields[9], row));
    out.rows.push_back(rec);
  }

  std::ifstream hdr(trace_header_path(csv_path), std::ios::binary);
  if (!hdr) fail(ErrorCode::IoError, "read_trace: missing header sidecar");
  out.header = json::parse(hdr, nullptr, false);
  if (out.header.is_discarded())
    fail(ErrorCode::ParseError, "read_trace: header sidecar is not valid JSON");
  return out;
}

// ---------------------------------------------------------------------------
// Instance container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'B', 'L', 'O', 'I', 'N', 'S', 'T', '1'};

struct TensorOut {
  std::string name;
  const double* data;
  std::int64_t rows, cols;
};

void write_container(const std::string& path, const json& params,
                     const std::string& family,
                     const std::vector<TensorOut>& tensors) {
  json manifest;
  manifest["format_version"] = 1;
  manifest["family"] = family;
  manifest["params"] = params;
  json tj = json::array();
  std::int64_t offset = 0;
  for (const auto& t : tensors) {
    tj.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols},
                  {"offset", offset}});
    offset += t.rows * t.cols;
  }
  manifest["tensors"] = tj;
  const std::string mtext = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "save_instance: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = mtext.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto& t : tensors)
    out.write(reinterpret_cast<const char*>(t.data),
              static_cast<std::streamsize>(t.rows * t.cols * sizeof(double)));
  if (!out.good()) fail(ErrorCode::IoError, "save_instance: write failed for " + path);
}

struct ContainerIn {
  json manifest;
  std::vector<double> payload;

  Mat tensor(const std::string& name) const {
    for (const auto& t : manifest.at("tensors")) {
      if (t.at("name").get<std::string>() != name) continue;
      const auto rows = t.at("rows").get<std::int64_t>();
      const auto cols = t.at("cols").get<std::int64_t>();
      const auto offset = t.at("offset").get<std::int64_t>();
      if (offset + rows * cols > static_cast<std::int64_t>(payload.size()))
        fail(ErrorCode::ParseError, "load_instance: tensor \"" + name + "\" truncated");
      return Eigen::Map<const Mat>(payload.data() + offset, rows, cols);
    }
    fail(ErrorCode::ParseError, "load_instance: tensor \"" + name + "\" missing");
  }
};

ContainerIn read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "load_instance: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(ErrorCode::ParseError, "load_instance: bad magic in " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string mtext(len, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(len));
  if (!in.good()) fail(ErrorCode::ParseError, "load_instance: truncated manifest");

  ContainerIn c;
  c.manifest = json::parse(mtext, nullptr, false);
  if (c.manifest.is_discarded())
    fail(ErrorCode::ParseError, "load_instance: manifest is not valid JSON");

  std::int64_t total = 0;
  for (const auto& t : c.manifest.at("tensors"))
    total += t.at("rows").get<std::int64_t>() * t.at("cols").get<std::int64_t>();
  c.payload.resize(static_cast<std::size_t>(total));
  in.read(reinterpret_cast<char*>(c.payload.data()),
          static_cast<std::streamsize>(total * sizeof(double)));
  if (!in.good()) fail(ErrorCode::ParseError, "load_instance: truncated payload");
  return c;
}

Mat indices_to_mat(const std::vector<std::int32_t>& idx) {
  Mat m(static_cast<Index>(idx.size()), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) m(static_cast<Index>(i), 0) = idx[i];
  return m;
}

std::vector<std::int32_t> mat_to_indices(const Mat& m) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] =
      static_cast<std::int32_t>(m(i, 0));
  return out;
}

}  // namespace

void save_instance(const std::string& path, const InstanceVariant& inst) {
  if (const auto* g = std::get_if<PLGameInstance>(&inst)) {
    json params{{"d", g->d}, {"l", g->l}, {"n", g->n}, {"mu", g->interval_mu},
                {"lg", g->interval_l}, {"seed", g->seed},
                {"range_compatible", g->range_compatible}};
    std::vector<TensorOut> tensors{
        {"p_mat", g->p_mat.data(), g->d, g->d},
        {"q_mat", g->q_mat.data(), g->d, g->d},
        {"r1_mat", g->r1_mat.data(), g->d, g->d},
        {"r2_mat", g->r2_mat.data(), g->d, g->d},
        {"p_samples", g->p_samples.data(), g->d, g->n},
        {"q_samples", g->q_samples.data(), g->d, g->n},
        {"r1_samples", g->r1_samples.data(), g->d, g->n}};
    if (!g->range_compatible)
      tensors.push_back({"r2_samples", g->r2_samples.data(), g->d, g->n});
    write_container(path, params, "plgame", tensors);
    return;
  }
  if (const auto* s = std::get_if<MatrixSensingInstance>(&inst)) {
    json params{{"d", s->d}, {"r", s->r}, {"n", s->n}, {"seed", s->seed}};
    Mat sensing(s->d, s->d * s->n);
    for (std::int64_t i = 0; i < s->n; ++i)
      sensing.middleCols(i * s->d, s->d) = s->sensing[static_cast<std::size_t>(i)];
    const Mat train = indices_to_mat(s->train_idx);
    const Mat val = indices_to_mat(s->val_idx);
    std::vector<TensorOut> tensors{
        {"u_star", s->u_star.data(), s->d, s->r},
        {"h_star", s->h_star.data(), s->d, s->d},
        {"labels", s->labels.data(), s->n, 1},
        {"sensing", sensing.data(), s->d, s->d * s->n},
        {"train_idx", train.data(), train.rows(), 1},
        {"val_idx", val.data(), val.rows(), 1}};
    write_container(path, params, "sensing", tensors);
    return;
  }
  const auto& q = std::get<QuadOracleInstance>(inst);
  json params{{"d", q.d}, {"p", q.p}, {"mu", q.mu_gen}, {"lg", q.lg_gen},
              {"seed", q.seed}};
  std::vector<TensorOut> tensors{
      {"p_mat", q.p_mat.data(), q.d, q.d},
      {"q_mat", q.q_mat.data(), q.p, q.p},
      {"r1_mat", q.r1_mat.data(), q.d, q.p},
      {"r2_mat", q.r2_mat.data(), q.d, q.p}};
  write_container(path, params, "quad", tensors);
}

InstanceVariant load_instance(const std::string& path) {
  const ContainerIn c = read_container(path);
  const std::string family = c.manifest.at("family").get<std::string>();
  const json& params = c.manifest.at("params");
  if (family == "plgame") {
    PLGameInstance g;
    g.d = params.at("d").get<Index>();
    g.l = params.at("l").get<Index>();
    g.n = params.at("n").get<std::int64_t>();
    g.interval_mu = params.at("mu").get<double>();
    g.interval_l = params.at("lg").get<double>();
    g.seed = params.at("seed").get<std::uint64_t>();
    g.range_compatible = params.at("range_compatible").get<bool>();
    g.p_mat = c.tensor("p_mat");
    g.q_mat = c.tensor("q_mat");
    g.r1_mat = c.tensor("r1_mat");
    g.r2_mat = c.tensor("r2_mat");
    g.p_samples = c.tensor("p_samples");
    g.q_samples = c.tensor("q_samples");
    g.r1_samples = c.tensor("r1_samples");
    if (!g.range_compatible) g.r2_samples = c.tensor("r2_samples");
    return g;
  }
  if (family == "sensing") {
    MatrixSensingInstance s;
    s.d = params.at("d").get<Index>();
    s.r = params.at("r").get<Index>();
    s.n = params.at("n").get<std::int64_t>();
    s.seed = params.at("seed").get<std::uint64_t>();
    s.u_star = c.tensor("u_star");
    s.h_star = c.tensor("h_star");
    s.labels = c.tensor("labels").col(0);
    const Mat sensing = c.tensor("sensing");
    s.sensing.reserve(static_cast<std::size_t>(s.n));
    for (std::int64_t i = 0; i < s.n; ++i)
      s.sensing.push_back(sensing.middleCols(i * s.d, s.d));
    s.train_idx = mat_to_indices(c.tensor("train_idx"));
    s.val_idx = mat_to_indices(c.tensor("val_idx"));
    return s;
  }
  if (family == "quad") {
    QuadOracleInstance q;
    q.d = params.at("d").get<Index>();
    q.p = params.at("p").get<Index>();
    q.mu_gen = params.at("mu").get<double>();
    q.lg_gen = params.at("lg").get<double>();
    q.seed = params.at("seed").get<std::uint64_t>();
    q.p_mat = c.tensor("p_mat");
    q.q_mat = c.tensor("q_mat");
    q.r1_mat = c.tensor("r1_mat");
    q.r2_mat = c.tensor("r2_mat");
    return q;
  }
  fail(ErrorCode::ParseError, "load_instance: unknown family \"" + family + "\"");
}

std::string instance_family(const InstanceVariant& inst) {
  if (std::holds_alternative<PLGameInstance>(inst)) return "plgame";
  if (std::holds_alternative<MatrixSensingInstance>(inst)) return "sensing";
  return "quad";
}

namespace {

json eig_summary(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym, Eigen::EigenvaluesOnly);
  const Vec& vals = eig.eigenvalues();
  const double vmax = vals.cwiseAbs().maxCoeff();
  Index rank = 0;
  for (Index i = 0; i < vals.size(); ++i)
    if (std::abs(vals(i)) > 1e-8 * std::max(1.0, vmax)) ++rank;
  return {{"eig_min", vals.minCoeff()}, {"eig_max", vals.maxCoeff()}, {"rank", rank},
          {"dim", vals.size()}};
}

}  // namespace

json instance_summary(const InstanceVariant& inst) {
  if (const auto* g = std::get_if<PLGameInstance>(&inst)) {
    return {{"family", "plgame"}, {"d", g->d}, {"l", g->l}, {"n", g->n},
            {"seed", g->seed}, {"range_compatible", g->range_compatible},
            {"P", eig_summary(g->p_mat)}, {"Q", eig_summary(g->q_mat)},
            {"r2_norm", spectral_norm(g->r2_mat)}};
  }
  if (const auto* s = std::get_if<MatrixSensingInstance>(&inst)) {
    return {{"family", "sensing"}, {"d", s->d}, {"r", s->r}, {"n", s->n},
            {"seed", s->seed}, {"train_size", s->train_idx.size()},
            {"val_size", s->val_idx.size()}, {"h_star_fro", s->h_star.norm()}};
  }
  const auto& q = std::get<QuadOracleInstance>(inst);
  return {{"family", "quad"}, {"d", q.d}, {"p", q.p}, {"seed", q.seed},
          {"Q", eig_summary(q.q_mat)}, {"P", eig_summary(q.p_mat)},
          {"r2_norm", spectral_norm(q.r2_mat)}};
}

json constants_report_to_json(const ConstantsReport& r) {
  const auto windows = [](const std::array<CoeffWindow, 5>& ws) {
    json arr = json::array();
    for (const auto& w : ws) arr.push_back({{"lo", w.lo}, {"hi", w.hi},
                                            {"empty", w.empty()}});
    return arr;
  };
  return {{"kappa", r.kappa},
          {"l_y", r.l_y},
          {"l_f_upper", r.l_f_upper},
          {"l_g_upper", r.l_g_upper},
          {"l_hat", r.l_hat},
          {"l_breve", r.l_breve},
          {"l_check", r.l_check},
          {"c_gy_effective", r.c_gy_effective},
          {"c_gy_heuristic", r.c_gy_heuristic},
          {"eta0", r.eta0},
          {"k", r.k},
          {"m", r.m},
          {"mgbio", {{"gamma_max", r.mgbio_caps.gamma_max}, {"lambda_max", r.mgbio_caps.lambda_max}}},
          {"msgbio",
           {{"gamma_max", r.msgbio_caps.gamma_max}, {"lambda_max", r.msgbio_caps.lambda_max},
            {"coeff_windows", windows(r.msgbio_windows)}}},
          {"vr_msgbio",
           {{"gamma_max", r.vr_caps.gamma_max}, {"lambda_max", r.vr_caps.lambda_max},
            {"coeff_windows", windows(r.vr_windows)}}}};
}

}  // namespace bilevel
