#pragma once

// Configuration parsing, rate presets, and the bundled hyperfine asset.
//
// File format: JSON. Schema (all rates MHz, see types.hpp for units):
//
//   {
//     "rate_presets": { "<name>": { "gamma_P": ..., "gamma_E": ...,
//         "gamma_ISC": ..., "r": ..., "gamma_s": ..., "k": ...,
//         "gamma_1": ..., "gamma_2": ... }, ... },
//     "spin_system": { "D_gs": ..., "D_es": ..., "gamma_e": ...,
//         "nuclei": [ { "spin": ..., "gamma_n": ..., "Q_zz": ...,
//                       "A_gs": [[3x3]], "A_es": [[3x3]] }, ... ] }
//   }
//
// Parse errors carry the JSON field path of the offending entry.

#include <map>
#include <string>
#include <vector>

#include "vbsim/types.hpp"

namespace vbsim {

struct LoadedConfig {
  SpinSystemConfig spin_system;
  std::map<std::string, ElectronicRates> rate_presets;
};

// Directory holding the bundled assets (presets.json, hyperfine_14n.json).
// Override with the VBSIM_ASSET_DIR environment variable.
std::string asset_dir();

// Parse a config file; throws ConfigError with a field path on bad input.
LoadedConfig load_config(const std::string& path);

// Serialize back to JSON; load_config(serialize(...)) round-trips doubles
// bit-for-bit.
std::string serialize_config(const LoadedConfig& cfg);

// Bundled presets (Table rows plus "nv"), loaded from the asset dir.
const std::map<std::string, ElectronicRates>& bundled_presets();

// Lookup with a descriptive error listing known names.
ElectronicRates preset(const std::string& name);

// The three nearest-nitrogen 14N hyperfine tensors from the bundled asset.
std::vector<NuclearSpecies> bundled_hyperfine_14n();

}  // namespace vbsim
