#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "vbsim/config.hpp"
#include "vbsim/lindblad.hpp"

using namespace vbsim;

namespace {
std::string temp_path(const char* name) {
  return std::string("/tmp/vbsim_test_") + name;
}
}  // namespace

TEST_CASE("bundled presets include the published rate sets") {
  const auto& p = bundled_presets();
  for (const char* name :
       {"vb-this-work", "vb-this-work-r004", "vb-whitefield", "vb-jacques",
        "vb-baber", "vb-reimers", "nv"}) {
    CAPTURE(name);
    CHECK(p.count(name) == 1);
  }
  ElectronicRates tw = preset("vb-this-work");
  CHECK(tw.gamma_E == doctest::Approx(849.0));
  CHECK(tw.gamma_ISC == doctest::Approx(1286.0));
  CHECK(tw.r == doctest::Approx(0.0));
  CHECK(preset("vb-this-work-r004").r == doctest::Approx(0.04));
}

TEST_CASE("unknown preset raises an error that lists the catalog") {
  CHECK_THROWS_WITH_AS(preset("bogus"),
                       doctest::Contains("vb-this-work"), ConfigError);
}

TEST_CASE("config serialization round-trips bit-for-bit") {
  LoadedConfig cfg;
  cfg.spin_system = spin_system_n14();
  cfg.rate_presets["x"] = preset("vb-this-work");
  cfg.rate_presets["x"].gamma_P = 0.1 + 0.2;  // not exactly representable sum
  std::string path = temp_path("roundtrip.json");
  {
    std::ofstream out(path);
    out << serialize_config(cfg);
  }
  LoadedConfig back = load_config(path);
  CHECK(back.rate_presets.at("x").gamma_P == cfg.rate_presets.at("x").gamma_P);
  CHECK(back.rate_presets.at("x").gamma_E == cfg.rate_presets.at("x").gamma_E);
  REQUIRE(back.spin_system.nuclei.size() == cfg.spin_system.nuclei.size());
  for (std::size_t i = 0; i < cfg.spin_system.nuclei.size(); ++i) {
    CHECK(back.spin_system.nuclei[i].A_gs == cfg.spin_system.nuclei[i].A_gs);
    CHECK(back.spin_system.nuclei[i].A_es == cfg.spin_system.nuclei[i].A_es);
    CHECK(back.spin_system.nuclei[i].gamma_n ==
          cfg.spin_system.nuclei[i].gamma_n);
  }
  std::remove(path.c_str());
}

TEST_CASE("missing config file raises ConfigError") {
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("malformed config reports the offending field") {
  std::string path = temp_path("bad.json");
  {
    std::ofstream out(path);
    out << R"({"rate_presets": {"a": {"gamma_P": "fast"}}})";
  }
  CHECK_THROWS_WITH_AS(load_config(path), doctest::Contains("gamma_P"),
                       ConfigError);
  std::remove(path.c_str());
}

TEST_CASE("bundled hyperfine asset: three nitrogens, threefold symmetric") {
  auto nuclei = bundled_hyperfine_14n();
  REQUIRE(nuclei.size() == 3);
  for (const auto& n : nuclei) {
    CHECK(n.spin == doctest::Approx(1.0));
    CHECK(n.dim() == 3);
    // The azimuthal rotation leaves the trace and A_zz invariant.
    CHECK(n.A_gs.trace() == doctest::Approx(nuclei[0].A_gs.trace()));
    CHECK(n.A_gs(2, 2) == doctest::Approx(nuclei[0].A_gs(2, 2)));
    CHECK(n.A_es(2, 2) == doctest::Approx(nuclei[0].A_es(2, 2)));
  }
  // The three in-plane orientations differ.
  CHECK((nuclei[0].A_gs - nuclei[1].A_gs).norm() > 1.0);
}
