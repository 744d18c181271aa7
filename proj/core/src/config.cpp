#include "vbsim/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace vbsim {

using nlohmann::json;

namespace {

double require_number(const json& j, const std::string& path,
                      const std::string& key) {
  if (!j.contains(key))
    throw ConfigError("missing field: " + path + "." + key);
  const auto& v = j.at(key);
  if (!v.is_number())
    throw ConfigError("field is not a number: " + path + "." + key);
  return v.get<double>();
}

double optional_number(const json& j, const std::string& path,
                       const std::string& key, double dflt) {
  if (!j.contains(key)) return dflt;
  const auto& v = j.at(key);
  if (!v.is_number())
    throw ConfigError("field is not a number: " + path + "." + key);
  return v.get<double>();
}

Matrix3d parse_tensor(const json& j, const std::string& path,
                      const std::string& key) {
  if (!j.contains(key)) throw ConfigError("missing field: " + path + "." + key);
  const auto& t = j.at(key);
  if (!t.is_array() || t.size() != 3)
    throw ConfigError("expected 3x3 array: " + path + "." + key);
  Matrix3d m;
  for (int a = 0; a < 3; ++a) {
    const auto& row = t.at(a);
    if (!row.is_array() || row.size() != 3)
      throw ConfigError("expected 3x3 array: " + path + "." + key);
    for (int b = 0; b < 3; ++b) {
      if (!row.at(b).is_number())
        throw ConfigError("expected 3x3 numeric array: " + path + "." + key);
      m(a, b) = row.at(b).get<double>();
    }
  }
  return m;
}

ElectronicRates parse_rates(const json& j, const std::string& path) {
  ElectronicRates r;
  r.gamma_P = optional_number(j, path, "gamma_P", 0.0);
  r.gamma_E = require_number(j, path, "gamma_E");
  r.gamma_ISC = require_number(j, path, "gamma_ISC");
  r.r = require_number(j, path, "r");
  r.gamma_s = require_number(j, path, "gamma_s");
  r.k = require_number(j, path, "k");
  r.gamma_1 = optional_number(j, path, "gamma_1", 0.0);
  r.gamma_2 = optional_number(j, path, "gamma_2", 0.0);
  try {
    r.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return r;
}

NuclearSpecies parse_nucleus(const json& j, const std::string& path) {
  NuclearSpecies n;
  n.spin = require_number(j, path, "spin");
  n.gamma_n = require_number(j, path, "gamma_n");
  n.Q_zz = optional_number(j, path, "Q_zz", 0.0);
  n.A_gs = parse_tensor(j, path, "A_gs");
  n.A_es = parse_tensor(j, path, "A_es");
  try {
    n.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return n;
}

json rates_to_json(const ElectronicRates& r) {
  return json{{"gamma_P", r.gamma_P}, {"gamma_E", r.gamma_E},
              {"gamma_ISC", r.gamma_ISC}, {"r", r.r},
              {"gamma_s", r.gamma_s}, {"k", r.k},
              {"gamma_1", r.gamma_1}, {"gamma_2", r.gamma_2}};
}

json tensor_to_json(const Matrix3d& m) {
  json t = json::array();
  for (int a = 0; a < 3; ++a) {
    json row = json::array();
    for (int b = 0; b < 3; ++b) row.push_back(m(a, b));
    t.push_back(row);
  }
  return t;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("parse error in " + path + ": " + e.what());
  }
  return j;
}

LoadedConfig parse_config_json(const json& j) {
  LoadedConfig cfg;
  if (j.contains("spin_system")) {
    const auto& s = j.at("spin_system");
    cfg.spin_system.D_gs = optional_number(s, "spin_system", "D_gs", cfg.spin_system.D_gs);
    cfg.spin_system.D_es = optional_number(s, "spin_system", "D_es", cfg.spin_system.D_es);
    cfg.spin_system.gamma_e =
        optional_number(s, "spin_system", "gamma_e", cfg.spin_system.gamma_e);
    if (s.contains("nuclei")) {
      int i = 0;
      for (const auto& nj : s.at("nuclei")) {
        cfg.spin_system.nuclei.push_back(parse_nucleus(
            nj, "spin_system.nuclei[" + std::to_string(i) + "]"));
        ++i;
      }
    }
  }
  try {
    cfg.spin_system.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("spin_system: ") + e.what());
  }
  if (j.contains("rate_presets")) {
    for (const auto& [name, pj] : j.at("rate_presets").items())
      cfg.rate_presets[name] = parse_rates(pj, "rate_presets." + name);
  }
  return cfg;
}

}  // namespace

std::string asset_dir() {
  if (const char* env = std::getenv("VBSIM_ASSET_DIR")) return env;
#ifdef VBSIM_DEFAULT_ASSET_DIR
  return VBSIM_DEFAULT_ASSET_DIR;
#else
  return ".";
#endif
}

LoadedConfig load_config(const std::string& path) {
  return parse_config_json(read_json_file(path));
}

std::string serialize_config(const LoadedConfig& cfg) {
  json j;
  j["spin_system"] = {{"D_gs", cfg.spin_system.D_gs},
                      {"D_es", cfg.spin_system.D_es},
                      {"gamma_e", cfg.spin_system.gamma_e}};
  json nuclei = json::array();
  for (const auto& n : cfg.spin_system.nuclei) {
    nuclei.push_back(json{{"spin", n.spin},
                          {"gamma_n", n.gamma_n},
                          {"Q_zz", n.Q_zz},
                          {"A_gs", tensor_to_json(n.A_gs)},
                          {"A_es", tensor_to_json(n.A_es)}});
  }
  j["spin_system"]["nuclei"] = nuclei;
  json presets;
  for (const auto& [name, r] : cfg.rate_presets) presets[name] = rates_to_json(r);
  j["rate_presets"] = presets;
  return j.dump(2);
}

const std::map<std::string, ElectronicRates>& bundled_presets() {
  static const std::map<std::string, ElectronicRates> presets = [] {
    LoadedConfig cfg = load_config(asset_dir() + "/presets.json");
    return cfg.rate_presets;
  }();
  return presets;
}

ElectronicRates preset(const std::string& name) {
  const auto& all = bundled_presets();
  auto it = all.find(name);
  if (it == all.end()) {
    std::ostringstream msg;
    msg << "unknown preset '" << name << "'; known presets:";
    for (const auto& [n, _] : all) msg << " " << n;
    throw ConfigError(msg.str());
  }
  return it->second;
}

std::vector<NuclearSpecies> bundled_hyperfine_14n() {
  json j = read_json_file(asset_dir() + "/hyperfine_14n.json");
  std::vector<NuclearSpecies> out;
  int i = 0;
  for (const auto& nj : j.at("nuclei")) {
    out.push_back(parse_nucleus(nj, "nuclei[" + std::to_string(i) + "]"));
    ++i;
  }
  return out;
}

}  // namespace vbsim
