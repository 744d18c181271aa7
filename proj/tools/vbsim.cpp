// vbsim: command-line front end for the seven-level spin-dynamics engine.
//
// Subcommands:
//   presets list|show        bundled / configured rate presets
//   simulate trace           PL turn-on trace (beam-averaged, AOM ramp)
//   simulate spin-resolved   pi-pulse spin-resolved repolarization curve
//   simulate differential    pulsed excited-state differential decay
//   simulate odmr            CW-ODMR spectrum with hyperfine structure
//   simulate suite           synthetic datasets for generate-and-refit
//   sweep                    field-magnitude/tilt maps (resumable cache)
//   fit                      joint rate estimation from dataset directories
//
// Exit codes: 0 success, 2 usage/configuration error, 3 fit did not
// converge. Every run writes a JSON manifest next to its outputs with
// input/output content digests.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vbsim/config.hpp"
#include "vbsim/csv.hpp"
#include "vbsim/fitting.hpp"
#include "vbsim/instrument.hpp"
#include "vbsim/lindblad.hpp"
#include "vbsim/protocols.hpp"
#include "vbsim/rate_model.hpp"
#include "vbsim/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vbsim;

namespace {

constexpr const char* kVersion = "1.0.0";

// --- digests and atomic writes ---

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
               static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_digest(const fs::path& p) {
  return hex64(fnv1a64(read_file(p)));
}

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

// --- run manifest ---

struct RunRecorder {
  std::string command;
  json params = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::chrono::steady_clock::time_point t0 =
      std::chrono::steady_clock::now();

  void add_input(const fs::path& p) {
    inputs[p.string()] = file_digest(p);
  }
  void add_output(const fs::path& p) {
    outputs[p.string()] = file_digest(p);
  }
  void write(const fs::path& path) const {
    json m;
    m["tool"] = "vbsim";
    m["version"] = kVersion;
    m["command"] = command;
    m["params"] = params;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["wall_time_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    write_atomic(path, m.dump(2) + "\n");
  }
};

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

// --- grids ---

std::vector<double> linspace(double a, double b, int n) {
  if (n < 2) throw InvalidArgument("linspace: need at least 2 points");
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = a + (b - a) * i / (n - 1);
  return v;
}

std::vector<double> geomspace(double a, double b, int n) {
  if (!(a > 0) || !(b > a))
    throw InvalidArgument("geomspace: need 0 < min < max");
  if (n < 2) throw InvalidArgument("geomspace: need at least 2 points");
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i)
    v[i] = a * std::pow(b / a, static_cast<double>(i) / (n - 1));
  return v;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidArgument("malformed number in list: '" + item + "'");
    }
  }
  if (out.empty()) throw InvalidArgument("empty list");
  return out;
}

// --- configuration / preset resolution ---

struct ToolContext {
  std::string config_path;  // empty = bundled assets only
  std::optional<LoadedConfig> config;
  int threads = 0;

  void load() {
    if (config_path.empty()) {
      if (const char* env = std::getenv("VBSIM_CONFIG"))
        config_path = env;
    }
    if (!config_path.empty()) config = load_config(config_path);
  }
};

ElectronicRates resolve_rates(const ToolContext& ctx,
                              const std::string& name) {
  if (ctx.config) {
    auto it = ctx.config->rate_presets.find(name);
    if (it != ctx.config->rate_presets.end()) return it->second;
  }
  return preset(name);
}

SpinSystemConfig resolve_system(const ToolContext& ctx,
                                const std::string& isotope) {
  if (isotope == "none") return spin_system_bare();
  if (isotope == "14N") return spin_system_n14();
  if (isotope == "15N") return spin_system_n15();
  if (isotope == "config") {
    if (!ctx.config)
      throw ConfigError("--isotope config requires --config");
    return ctx.config->spin_system;
  }
  throw InvalidArgument("unknown isotope: " + isotope +
                        " (expected none, 14N, 15N, or config)");
}

FidelityModel fidelity_for(const std::string& isotope) {
  if (isotope == "14N") return FidelityModel::n14();
  if (isotope == "15N") return FidelityModel::n15();
  return FidelityModel{1.0, 0.0};
}

Engine engine_from(const std::string& name) {
  if (name == "rate") return Engine::kRate;
  if (name == "lindblad") return Engine::kLindblad;
  throw InvalidArgument("unknown engine: " + name);
}

// --- minimal SVG plotting ---

std::string svg_line_plot(const std::vector<double>& xs,
                          const std::vector<double>& ys,
                          const std::string& xlabel,
                          const std::string& ylabel) {
  const int w = 800, h = 400, pad = 50;
  double xlo = xs.front(), xhi = xs.back();
  double ylo = ys[0], yhi = ys[0];
  for (double y : ys) {
    if (std::isfinite(y)) {
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
    }
  }
  if (yhi == ylo) yhi = ylo + 1.0;
  auto px = [&](double x) {
    return pad + (x - xlo) / (xhi - xlo) * (w - 2 * pad);
  };
  auto py = [&](double y) {
    return h - pad - (y - ylo) / (yhi - ylo) * (h - 2 * pad);
  };
  std::ostringstream s;
  s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w
    << "' height='" << h << "'>\n"
    << "<rect width='100%' height='100%' fill='white'/>\n"
    << "<polyline fill='none' stroke='steelblue' stroke-width='1.5' "
       "points='";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(ys[i])) continue;
    s << px(xs[i]) << ',' << py(ys[i]) << ' ';
  }
  s << "'/>\n"
    << "<text x='" << w / 2 << "' y='" << h - 10
    << "' text-anchor='middle' font-size='14'>" << xlabel << "</text>\n"
    << "<text x='15' y='" << h / 2 << "' font-size='14' transform='rotate(-90 15 "
    << h / 2 << ")' text-anchor='middle'>" << ylabel << "</text>\n</svg>\n";
  return s.str();
}

std::string svg_heatmap(const std::vector<double>& xs,
                        const std::vector<double>& ys,
                        const std::vector<double>& values,
                        const std::string& xlabel,
                        const std::string& ylabel) {
  // values: ys outer, xs inner. NaN cells drawn in red.
  const int cell = 14, pad = 50;
  int w = pad * 2 + cell * static_cast<int>(xs.size());
  int h = pad * 2 + cell * static_cast<int>(ys.size());
  double lo = INFINITY, hi = -INFINITY;
  for (double v : values) {
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) {
    lo = 0;
    hi = 1;
  }
  std::ostringstream s;
  s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w
    << "' height='" << h << "'>\n"
    << "<rect width='100%' height='100%' fill='white'/>\n";
  for (std::size_t j = 0; j < ys.size(); ++j) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double v = values[j * xs.size() + i];
      std::string fill = "rgb(220,60,60)";
      if (std::isfinite(v)) {
        int g = static_cast<int>(255 * (1.0 - (v - lo) / (hi - lo)));
        fill = "rgb(" + std::to_string(g) + "," + std::to_string(g) + ",255)";
      }
      s << "<rect x='" << pad + cell * static_cast<int>(i) << "' y='"
        << pad + cell * static_cast<int>(j) << "' width='" << cell
        << "' height='" << cell << "' fill='" << fill << "'/>\n";
    }
  }
  s << "<text x='" << w / 2 << "' y='" << h - 10
    << "' text-anchor='middle' font-size='14'>" << xlabel << "</text>\n"
    << "<text x='15' y='" << h / 2 << "' font-size='14' transform='rotate(-90 15 "
    << h / 2 << ")' text-anchor='middle'>" << ylabel << "</text>\n</svg>\n";
  return s.str();
}

void write_xy_csv(const fs::path& path, const std::string& xname,
                  const std::string& yname, const std::vector<double>& xs,
                  const std::vector<double>& ys) {
  CsvTable t;
  t.header = {xname, yname};
  t.rows.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) t.rows.push_back({xs[i], ys[i]});
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_csv(path.string(), t);
}

json rates_json(const ElectronicRates& r) {
  return json{{"gamma_P", r.gamma_P},     {"gamma_E", r.gamma_E},
              {"gamma_ISC", r.gamma_ISC}, {"r", r.r},
              {"gamma_s", r.gamma_s},     {"k", r.k},
              {"gamma_1", r.gamma_1},     {"gamma_2", r.gamma_2}};
}

void record_config_input(const ToolContext& ctx, RunRecorder& rec) {
  if (!ctx.config_path.empty()) rec.add_input(ctx.config_path);
}

}  // namespace

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  CLI::App app{"seven-level spin-dynamics simulator and rate estimator"};
  app.require_subcommand(1);

  ToolContext ctx;
  app.add_option("--config", ctx.config_path,
                 "JSON config with rate presets and a spin system "
                 "(default: $VBSIM_CONFIG)");
  app.add_option("--threads", ctx.threads,
                 "number of Eigen threads (0 = library default)");

  // ---- presets ----
  auto* presets_cmd = app.add_subcommand("presets", "rate preset catalog");
  presets_cmd->require_subcommand(1);
  auto* presets_list = presets_cmd->add_subcommand("list", "list preset names");
  std::string show_name;
  auto* presets_show = presets_cmd->add_subcommand("show", "print one preset");
  presets_show->add_option("name", show_name, "preset name")->required();

  // ---- simulate ----
  auto* sim = app.add_subcommand("simulate", "forward-model a measurement");
  sim->require_subcommand(1);

  struct {
    std::string preset = "vb-this-work";
    double power = 10.0, alpha = 1.864;
    double tmax = 3000.0;
    int n = 300;
    double ramp = 40.0, background = 0.0;
    std::string engine = "rate", isotope = "none";
    double B = 12.0, theta = 0.0;
    std::string out;
    bool plot = false;
  } tr;
  auto* sim_trace = sim->add_subcommand("trace", "PL turn-on trace");
  sim_trace->add_option("--preset", tr.preset, "rate preset");
  sim_trace->add_option("--power", tr.power, "laser power, mW");
  sim_trace->add_option("--alpha", tr.alpha, "pump rate per power, MHz/mW");
  sim_trace->add_option("--tmax", tr.tmax, "trace length, ns");
  sim_trace->add_option("-n,--n-times", tr.n, "number of samples");
  sim_trace->add_option("--ramp", tr.ramp, "AOM turn-on ramp, ns");
  sim_trace->add_option("--background", tr.background, "background level");
  sim_trace->add_option("--engine", tr.engine, "rate | lindblad");
  sim_trace->add_option("--isotope", tr.isotope,
                        "nuclear register: none, 14N, 15N, config");
  sim_trace->add_option("--field", tr.B, "field magnitude, mT");
  sim_trace->add_option("--theta", tr.theta, "field tilt, degrees");
  sim_trace->add_option("-o,--out", tr.out, "output path prefix")->required();
  sim_trace->add_flag("--plot", tr.plot, "also write an SVG plot");

  struct {
    std::string preset = "vb-this-work";
    double power = 10.0, alpha = 1.864;
    int target = 0;
    std::string isotope = "14N";
    double tmin = 1.0, tmax = 3000.0;
    int n = 60;
    double window = 125.0, background = 0.0;
    std::string engine = "rate";
    double B = 12.0, theta = 0.0;
    std::string out;
    bool plot = false;
  } sr;
  auto* sim_sr =
      sim->add_subcommand("spin-resolved", "pi-pulse repolarization curve");
  sim_sr->add_option("--preset", sr.preset, "rate preset");
  sim_sr->add_option("--power", sr.power, "laser power, mW");
  sim_sr->add_option("--alpha", sr.alpha, "pump rate per power, MHz/mW");
  sim_sr->add_option("--target", sr.target, "readout sublevel: -1, 0, +1")
      ->check(CLI::IsMember({-1, 0, 1}));
  sim_sr->add_option("--isotope", sr.isotope,
                     "fidelity line: none, 14N, 15N");
  sim_sr->add_option("--tmin", sr.tmin, "first delay, ns");
  sim_sr->add_option("--tmax", sr.tmax, "last delay, ns");
  sim_sr->add_option("-n,--n-times", sr.n, "number of delays (geometric)");
  sim_sr->add_option("--window", sr.window, "readout window, ns");
  sim_sr->add_option("--background", sr.background, "background level");
  sim_sr->add_option("--engine", sr.engine, "rate | lindblad");
  sim_sr->add_option("--field", sr.B, "field magnitude, mT");
  sim_sr->add_option("--theta", sr.theta, "field tilt, degrees");
  sim_sr->add_option("-o,--out", sr.out, "output path prefix")->required();
  sim_sr->add_flag("--plot", sr.plot, "also write an SVG plot");

  struct {
    std::string preset = "vb-this-work";
    double rep = 39.0, dt = 0.005, fwhm = 140.0;
    bool no_irf = false;
    std::string out;
    bool plot = false;
  } df;
  auto* sim_df = sim->add_subcommand(
      "differential", "pulsed excited-state differential decay");
  sim_df->add_option("--preset", df.preset, "rate preset");
  sim_df->add_option("--rep", df.rep, "pulse repetition rate, MHz");
  sim_df->add_option("--dt", df.dt, "sample spacing, ns");
  sim_df->add_option("--fwhm", df.fwhm, "instrument response FWHM, ps");
  sim_df->add_flag("--no-irf", df.no_irf, "skip the response convolution");
  sim_df->add_option("-o,--out", df.out, "output path prefix")->required();
  sim_df->add_flag("--plot", df.plot, "also write an SVG plot");

  struct {
    std::string preset = "vb-this-work";
    double gamma_p = 20.0, omega = 1.0;
    double B = 32.0, theta = 0.0;
    std::string isotope = "14N";
    double fmin = 0.0, fmax = 0.0;
    int nf = 241;
    std::string out;
    bool plot = false;
  } od;
  auto* sim_od = sim->add_subcommand("odmr", "CW-ODMR spectrum");
  sim_od->add_option("--preset", od.preset, "rate preset");
  sim_od->add_option("--gamma-p", od.gamma_p, "CW pump rate, MHz");
  sim_od->add_option("--omega", od.omega, "drive mixing rate, MHz");
  sim_od->add_option("--field", od.B, "field magnitude, mT");
  sim_od->add_option("--theta", od.theta, "field tilt, degrees");
  sim_od->add_option("--isotope", od.isotope,
                     "nuclear register: none, 14N, 15N, config");
  sim_od->add_option("--fmin", od.fmin, "first frequency, MHz (0 = auto)");
  sim_od->add_option("--fmax", od.fmax, "last frequency, MHz (0 = auto)");
  sim_od->add_option("--nf", od.nf, "number of frequency samples");
  sim_od->add_option("-o,--out", od.out, "output path prefix")->required();
  sim_od->add_flag("--plot", od.plot, "also write an SVG plot");

  struct {
    std::string kind = "vb";
    std::string preset;
    double noise = 0.01;
    std::uint64_t seed = 20250826;
    std::string out;
  } su;
  auto* sim_su = sim->add_subcommand(
      "suite", "synthetic dataset suite for generate-and-refit");
  sim_su->add_option("--kind", su.kind, "vb | nv")
      ->check(CLI::IsMember({"vb", "nv"}));
  sim_su->add_option("--preset", su.preset,
                     "truth preset (default vb-this-work-r004 / nv)");
  sim_su->add_option("--noise", su.noise, "multiplicative noise fraction");
  sim_su->add_option("--seed", su.seed, "RNG seed");
  sim_su->add_option("-o,--out", su.out, "output directory")->required();

  // ---- sweep ----
  struct {
    std::string preset = "vb-this-work";
    double gamma_p = 20.0;
    std::string isotope = "15N";
    double bmin = 60.0, bmax = 150.0, db = 4.0;
    std::string thetas = "0,1,2";
    double threshold = 0.7, tmax = 800.0, iz_horizon = 2000.0;
    int n_times = 120;
    std::string out;
    bool plot = false, no_cache = false;
  } sw;
  auto* sweep_cmd =
      app.add_subcommand("sweep", "field-magnitude/tilt timescale map");
  sweep_cmd->add_option("--preset", sw.preset, "rate preset");
  sweep_cmd->add_option("--gamma-p", sw.gamma_p, "pump rate, MHz");
  sweep_cmd->add_option("--isotope", sw.isotope,
                        "nuclear register: none, 14N, 15N, config");
  sweep_cmd->add_option("--bmin", sw.bmin, "first field, mT");
  sweep_cmd->add_option("--bmax", sw.bmax, "last field, mT");
  sweep_cmd->add_option("--db", sw.db, "field step, mT");
  sweep_cmd->add_option("--thetas", sw.thetas,
                        "comma-separated tilt angles, degrees");
  sweep_cmd->add_option("--threshold", sw.threshold,
                        "timescale crossing threshold");
  sweep_cmd->add_option("--tmax", sw.tmax, "trace length per point, ns");
  sweep_cmd->add_option("--n-times", sw.n_times, "samples per trace");
  sweep_cmd->add_option("--iz-horizon", sw.iz_horizon,
                        "nuclear polarization pumping interval, ns");
  sweep_cmd->add_option("-o,--out", sw.out, "output path prefix")->required();
  sweep_cmd->add_flag("--plot", sw.plot, "also write an SVG heatmap");
  sweep_cmd->add_flag("--no-cache", sw.no_cache,
                      "recompute every point, ignore the cache");

  // ---- fit ----
  struct {
    std::string data;
    std::string preset = "vb-this-work";
    int starts = 8, max_iter = 200;
    std::uint64_t seed = 20250826;
    std::vector<std::string> fixed;
    bool profile_r = false;
    double nv_gamma_s = 1.0, nv_gamma_isc = 53.0;
    std::string nv_form = "saturation";
    std::string out;
  } ft;
  auto* fit_cmd =
      app.add_subcommand("fit", "estimate rates from a dataset directory");
  fit_cmd->add_option("--data", ft.data, "directory of dataset CSVs")
      ->required();
  fit_cmd->add_option("--preset", ft.preset,
                      "base preset supplying gamma_1/gamma_2");
  fit_cmd->add_option("--starts", ft.starts, "multi-start count");
  fit_cmd->add_option("--max-iter", ft.max_iter, "iterations per start");
  fit_cmd->add_option("--seed", ft.seed, "multi-start RNG seed");
  fit_cmd->add_option("--fix", ft.fixed,
                      "fix a global, e.g. --fix r=0 (repeatable)");
  fit_cmd->add_flag("--profile-r", ft.profile_r,
                    "profile-likelihood bound on r");
  fit_cmd->add_option("--nv-gamma-s", ft.nv_gamma_s,
                      "singlet decay used for the NV conversion, MHz");
  fit_cmd->add_option("--nv-gamma-isc", ft.nv_gamma_isc,
                      "ISC rate used for the NV conversion, MHz");
  fit_cmd->add_option("--nv-form", ft.nv_form,
                      "NV effective-rate form: saturation|additive|literal")
      ->check(CLI::IsMember({"saturation", "additive", "literal"}));
  fit_cmd->add_option("-o,--out", ft.out, "report path prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ctx.load();

    RunRecorder rec;
    rec.command = join_args(argc, argv);
    rec.params["threads"] = ctx.threads;

    // ---- presets ----
    if (*presets_list) {
      std::map<std::string, ElectronicRates> all = bundled_presets();
      if (ctx.config)
        for (const auto& [name, r] : ctx.config->rate_presets)
          all[name] = r;
      for (const auto& [name, r] : all) std::cout << name << "\n";
      return 0;
    }
    if (*presets_show) {
      ElectronicRates r = resolve_rates(ctx, show_name);
      json j = rates_json(r);
      j["tau0_ns"] = r.tau0_ns();
      j["tau1_ns"] = r.tau1_ns();
      std::cout << j.dump(2) << "\n";
      return 0;
    }

    // ---- simulate trace ----
    if (*sim_trace) {
      ElectronicRates rates = resolve_rates(ctx, tr.preset);
      PlProtocolOptions opt;
      opt.tmax_ns = tr.tmax;
      opt.n_times = tr.n;
      opt.ramp_ns = tr.ramp;
      opt.background = tr.background;
      opt.engine.engine = engine_from(tr.engine);
      opt.engine.system = resolve_system(ctx, tr.isotope);
      opt.engine.field = MagneticField{tr.B, tr.theta};
      SimulatedMeasurement m =
          pl_time_trace_protocol(rates, tr.power, tr.alpha, opt);

      record_config_input(ctx, rec);
      rec.params["preset"] = tr.preset;
      rec.params["rates"] = rates_json(rates);
      rec.params["saturation"] = m.saturation;
      fs::path csv = tr.out + ".csv";
      write_xy_csv(csv, "t_ns", "signal", m.grid, m.signal);
      rec.add_output(csv);
      if (tr.plot) {
        fs::path svg = tr.out + ".svg";
        write_atomic(svg, svg_line_plot(m.grid, m.signal, "t (ns)", "PL"));
        rec.add_output(svg);
      }
      rec.write(tr.out + ".manifest.json");
      std::cout << "wrote " << csv.string() << " (" << m.grid.size()
                << " samples, saturation " << m.saturation << ")\n";
      return 0;
    }

    // ---- simulate spin-resolved ----
    if (*sim_sr) {
      ElectronicRates rates = resolve_rates(ctx, sr.preset);
      SpinResolvedOptions opt;
      opt.readout_window_ns = sr.window;
      opt.background = sr.background;
      opt.engine.engine = engine_from(sr.engine);
      opt.engine.system = resolve_system(
          ctx, sr.engine == "lindblad" ? sr.isotope : std::string("none"));
      opt.engine.field = MagneticField{sr.B, sr.theta};
      std::vector<double> grid = geomspace(sr.tmin, sr.tmax, sr.n);
      SimulatedMeasurement m =
          spin_resolved_protocol(rates, sr.power, sr.alpha,
                                 fidelity_for(sr.isotope), sr.target, grid,
                                 opt);

      record_config_input(ctx, rec);
      rec.params["preset"] = sr.preset;
      rec.params["target"] = sr.target;
      rec.params["isotope"] = sr.isotope;
      fs::path csv = sr.out + ".csv";
      write_xy_csv(csv, "t_ns", "signal", m.grid, m.signal);
      rec.add_output(csv);
      if (sr.plot) {
        fs::path svg = sr.out + ".svg";
        write_atomic(svg, svg_line_plot(m.grid, m.signal, "t (ns)",
                                        "readout signal"));
        rec.add_output(svg);
      }
      rec.write(sr.out + ".manifest.json");
      std::cout << "wrote " << csv.string() << "\n";
      return 0;
    }

    // ---- simulate differential ----
    if (*sim_df) {
      ElectronicRates rates = resolve_rates(ctx, df.preset);
      DifferentialOptions opt;
      opt.dt_ns = df.dt;
      opt.apply_irf = !df.no_irf;
      opt.irf.fwhm_ps = df.fwhm;
      SimulatedMeasurement m =
          excited_state_differential_protocol(rates, df.rep, opt);

      record_config_input(ctx, rec);
      rec.params["preset"] = df.preset;
      rec.params["rep_MHz"] = df.rep;
      fs::path csv = df.out + ".csv";
      write_xy_csv(csv, "t_ns", "signal", m.grid, m.signal);
      rec.add_output(csv);
      if (df.plot) {
        fs::path svg = df.out + ".svg";
        write_atomic(svg, svg_line_plot(m.grid, m.signal, "t (ns)",
                                        "differential PL"));
        rec.add_output(svg);
      }

      // Recover the two excited-state lifetimes from the simulated trace.
      Dataset ds;
      ds.kind = DatasetKind::kDifferential;
      ds.irf_fwhm_ps = opt.apply_irf ? df.fwhm : 0.0;
      ds.times_ns = m.grid;
      ds.signal = m.signal;
      FitProblem prob;
      prob.datasets = {ds};
      prob.base = rates;
      FitOptions fopt;
      fopt.n_starts = 2;
      fopt.fixed = {{"r", rates.r},
                    {"gamma_s", rates.gamma_s},
                    {"k", rates.k}};
      FitResult res = fit(prob, fopt);
      rec.params["tau0_ns"] = res.values.at("tau0_ns");
      rec.params["tau1_ns"] = res.values.at("tau1_ns");
      rec.write(df.out + ".manifest.json");
      std::cout << "wrote " << csv.string() << "\n"
                << "recovered lifetimes: tau0 = " << res.values.at("tau0_ns")
                << " ns, tau1 = " << res.values.at("tau1_ns") << " ns\n";
      return 0;
    }

    // ---- simulate odmr ----
    if (*sim_od) {
      ElectronicRates rates = resolve_rates(ctx, od.preset);
      rates.gamma_P = od.gamma_p;
      SpinSystemConfig cfg = resolve_system(ctx, od.isotope);
      MagneticField B{od.B, od.theta};
      double fmin = od.fmin, fmax = od.fmax;
      if (fmin <= 0.0 || fmax <= 0.0) {
        double span = cfg.gamma_e * std::abs(B.Bz()) + 60.0;
        fmin = cfg.D_gs - span;
        fmax = cfg.D_gs + span;
      }
      std::vector<double> f = linspace(fmin, fmax, od.nf);
      SimulatedMeasurement m = cw_odmr_spectrum(cfg, rates, B, f, od.omega);

      record_config_input(ctx, rec);
      rec.params["preset"] = od.preset;
      rec.params["isotope"] = od.isotope;
      rec.params["gamma_P"] = od.gamma_p;
      fs::path csv = od.out + ".csv";
      write_xy_csv(csv, "f_MHz", "contrast", m.grid, m.signal);
      rec.add_output(csv);
      if (od.plot) {
        fs::path svg = od.out + ".svg";
        write_atomic(svg, svg_line_plot(m.grid, m.signal, "f (MHz)",
                                        "ODMR contrast"));
        rec.add_output(svg);
      }
      rec.write(od.out + ".manifest.json");
      std::cout << "wrote " << csv.string() << "\n";
      return 0;
    }

    // ---- simulate suite ----
    if (*sim_su) {
      std::string preset_name =
          !su.preset.empty() ? su.preset
                             : (su.kind == "nv" ? "nv" : "vb-this-work-r004");
      ElectronicRates truth = resolve_rates(ctx, preset_name);
      std::vector<Dataset> datasets;
      if (su.kind == "vb") {
        VbSuiteOptions opt;
        opt.noise_frac = su.noise;
        opt.seed = su.seed;
        datasets = synthetic_vb_suite(truth, opt);
      } else {
        NvSuiteOptions opt;
        opt.noise_frac = su.noise;
        opt.seed = su.seed;
        datasets = synthetic_nv_suite(truth, opt);
      }
      record_config_input(ctx, rec);
      rec.params["kind"] = su.kind;
      rec.params["preset"] = preset_name;
      rec.params["truth"] = rates_json(truth);
      rec.params["seed"] = su.seed;
      fs::create_directories(su.out);
      for (std::size_t i = 0; i < datasets.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "ds_%03zu.csv", i);
        fs::path csv = fs::path(su.out) / name;
        write_dataset(datasets[i], csv.string());
        rec.add_output(csv);
        rec.add_output(csv.replace_extension(".json"));
      }
      rec.write(fs::path(su.out) / "manifest.json");
      std::cout << "wrote " << datasets.size() << " datasets to " << su.out
                << "\n";
      return 0;
    }

    // ---- sweep ----
    if (*sweep_cmd) {
      ElectronicRates rates = resolve_rates(ctx, sw.preset);
      rates.gamma_P = sw.gamma_p;
      SpinSystemConfig cfg = resolve_system(ctx, sw.isotope);
      std::vector<double> Bs;
      for (double b = sw.bmin; b <= sw.bmax + 1e-9; b += sw.db)
        Bs.push_back(b);
      std::vector<double> thetas = parse_list(sw.thetas);
      FieldSweepOptions opt;
      opt.tmax_ns = sw.tmax;
      opt.n_times = sw.n_times;
      opt.threshold = sw.threshold;
      opt.iz_horizon_ns = sw.iz_horizon;

      fs::path cache_dir = sw.out + ".cache";
      fs::create_directories(cache_dir);
      std::size_t n_nuc = cfg.nuclei.size();
      std::size_t total = thetas.size() * Bs.size(), done = 0, reused = 0;

      CsvTable table;
      table.header = {"B_mT", "theta_deg", "timescale_ns"};
      for (std::size_t i = 0; i < n_nuc; ++i)
        table.header.push_back("iz_" + std::to_string(i + 1));
      std::vector<double> timescales;

      for (double theta : thetas) {
        for (double b : Bs) {
          char key[64];
          std::snprintf(key, sizeof key, "pt_%lld_%lld.json",
                        std::llround(b * 1000.0),
                        std::llround(theta * 1000.0));
          fs::path cache_file = cache_dir / key;
          json pt;
          bool have = false;
          if (!sw.no_cache && fs::exists(cache_file)) {
            try {
              pt = json::parse(read_file(cache_file));
              have = pt.contains("timescale_ns") && pt.contains("iz");
            } catch (const std::exception&) {
              have = false;  // corrupt cache entry: recompute
            }
          }
          if (!have) {
            FieldSweepResult one = field_sweep(cfg, rates, {b}, {theta}, opt);
            const FieldSweepPoint& p = one.points.front();
            pt = json{{"B_mT", b},
                      {"theta_deg", theta},
                      {"timescale_ns", p.timescale_ns},
                      {"iz", p.iz},
                      {"ok", p.ok}};
            write_atomic(cache_file, pt.dump() + "\n");
          } else {
            ++reused;
          }
          double ts = pt["timescale_ns"].is_number()
                          ? pt["timescale_ns"].get<double>()
                          : std::numeric_limits<double>::quiet_NaN();
          std::vector<double> row = {b, theta, ts};
          for (std::size_t i = 0; i < n_nuc; ++i) {
            double iz = std::numeric_limits<double>::quiet_NaN();
            if (pt["iz"].is_array() && i < pt["iz"].size() &&
                pt["iz"][i].is_number())
              iz = pt["iz"][i].get<double>();
            row.push_back(iz);
          }
          table.rows.push_back(row);
          timescales.push_back(ts);
          ++done;
          std::cerr << "\rsweep " << done << "/" << total << std::flush;
        }
      }
      std::cerr << "\n";

      record_config_input(ctx, rec);
      rec.params["preset"] = sw.preset;
      rec.params["gamma_P"] = sw.gamma_p;
      rec.params["isotope"] = sw.isotope;
      rec.params["reused_cache_points"] = reused;
      fs::path csv = sw.out + ".csv";
      if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
      write_csv(csv.string(), table);
      rec.add_output(csv);
      if (sw.plot) {
        fs::path svg = sw.out + ".svg";
        write_atomic(svg, svg_heatmap(Bs, thetas, timescales, "B (mT)",
                                      "theta (deg)"));
        rec.add_output(svg);
      }
      rec.write(sw.out + ".manifest.json");
      std::cout << "wrote " << csv.string() << " (" << total << " points, "
                << reused << " from cache)\n";
      return 0;
    }

    // ---- fit ----
    if (*fit_cmd) {
      std::vector<fs::path> files;
      if (!fs::is_directory(ft.data))
        throw ConfigError("--data is not a directory: " + ft.data);
      for (const auto& entry : fs::directory_iterator(ft.data))
        if (entry.path().extension() == ".csv") files.push_back(entry.path());
      std::sort(files.begin(), files.end());
      if (files.empty())
        throw ConfigError("no .csv datasets in " + ft.data);

      std::vector<Dataset> datasets;
      for (const auto& f : files) {
        datasets.push_back(read_dataset(f.string()));
        rec.add_input(f);
      }
      record_config_input(ctx, rec);
      rec.params["n_datasets"] = datasets.size();

      bool all_nv = true;
      for (const auto& d : datasets)
        if (d.kind != DatasetKind::kNvP0) all_nv = false;

      json report;
      bool converged = false;
      if (all_nv) {
        NvFitOptions opt;
        if (ft.nv_form == "additive") opt.form = NvRateForm::kAdditive;
        if (ft.nv_form == "literal") opt.form = NvRateForm::kLiteral;
        NvFitResult res =
            fit_nv_effective(datasets, ft.nv_gamma_s, ft.nv_gamma_isc, opt);
        converged = res.converged;
        report = json{{"model", "nv-effective"},
                      {"form", ft.nv_form},
                      {"alpha_MHz_per_mW", res.alpha},
                      {"gamma_s_star_MHz", res.gamma_s_star},
                      {"r", res.r},
                      {"residual_norm", res.residual_norm},
                      {"converged", res.converged},
                      {"plateaus", res.plateaus},
                      {"amplitudes", res.amplitudes}};
        std::cout << "alpha = " << res.alpha
                  << " MHz/mW, gamma_s* = " << res.gamma_s_star
                  << " MHz, r = " << res.r
                  << (res.converged ? "" : "  [NOT CONVERGED]") << "\n";
      } else {
        FitProblem prob;
        prob.datasets = datasets;
        prob.base = resolve_rates(ctx, ft.preset);
        FitOptions opt;
        opt.n_starts = ft.starts;
        opt.seed = ft.seed;
        opt.max_iterations = ft.max_iter;
        for (const auto& fx : ft.fixed) {
          auto eq = fx.find('=');
          if (eq == std::string::npos)
            throw InvalidArgument("--fix expects name=value, got: " + fx);
          opt.fixed[fx.substr(0, eq)] = std::stod(fx.substr(eq + 1));
        }
        FitResult res = fit(prob, opt);
        converged = res.converged;
        report = json::parse(fit_report_json(res));
        if (ft.profile_r) {
          ProfileBound pb = profile_bound_r(prob, res, 4.0, 21, opt);
          json scan = json::array();
          for (const auto& [rv, cost] : pb.scan)
            scan.push_back(json{{"r", rv}, {"cost", cost}});
          report["profile_r"] = json{{"lower", pb.lower},
                                     {"upper", pb.upper},
                                     {"open", pb.open},
                                     {"scan", scan}};
        }
        write_atomic(ft.out + ".report.txt", fit_report_text(res));
        rec.add_output(ft.out + ".report.txt");
        std::cout << fit_report_text(res);
      }

      write_atomic(ft.out + ".report.json", report.dump(2) + "\n");
      rec.add_output(ft.out + ".report.json");
      rec.write(ft.out + ".manifest.json");
      if (!converged) {
        std::cerr << "fit did not converge\n";
        return 3;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "vbsim: error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
