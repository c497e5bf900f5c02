#pragma once

// Run configuration for the command-line pipeline. One JSON document holds every
// knob; missing keys take the defaults printed by `fvb --print-config`.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fvb/ewh_sim.hpp"
#include "fvb/io.hpp"
#include "fvb/vae.hpp"
#include "fvb/vb_core.hpp"

namespace fvb {

struct EnsembleConfig {
    std::size_t n_devices = 20;
    double jitter = 0.1;           // relative, volume / power / UA
    double setpoint_jitter = 1.0;  // degC
    EwhParams nominal;
    // Dispatched ensembles start together at a deadband position drawn per episode
    // from [start_level_lo, start_level_hi], each device offset by +-start_spread.
    double start_level_lo = 0.3;
    double start_level_hi = 0.7;
    double start_spread = 0.02;
};

struct RegulationConfig {
    std::string source = "synthetic";  // "synthetic" or "files"
    std::vector<std::string> files;    // CSV (time_s, value), used when source == "files"
    double scale = 1.0;                // kW per unit of file value
    int n_signals = 20;                // synthetic only
    double amplitude_fraction = 0.1;   // peak |r| as a fraction of total rated power
    double min_period_s = 60.0;
    double max_period_s = 900.0;
    int n_components = 6;
};

struct DatasetConfig {
    double test_fraction = 0.3;
    int n_folds = 10;
};

struct IdentifyConfig {
    double epsilon = 0.05;
    double limit_duration_s = 900.0;
    double limit_tol = 0.5;  // kW
    int n_draw_samples = 20;
    double start_level = 0.5;
};

struct RunConfig {
    std::uint64_t seed = 1;
    int workers = 0;  // 0 = available parallelism
    std::string out = "fvb_out";
    EnsembleConfig ensemble;
    WaterDrawModel water_draw = default_water_draw();
    RegulationConfig regulation;
    double horizon_s = 900.0;
    double dt_s = 1.0;
    int draw_samples_per_signal = 1;
    DispatchConfig dispatch;
    DatasetConfig dataset;
    VaeArch vae;  // input_dim 0 = 2 * n_devices
    TrainConfig train;
    IdentifyConfig identify;

    static WaterDrawModel default_water_draw();

    void validate() const;
    int resolved_workers() const;
    VaeArch resolved_arch() const;
    std::size_t n_episodes() const;
    Json to_json() const;
    /// Unknown keys are rejected; missing keys keep their defaults.
    static RunConfig from_json(const Json& j);
};

RunConfig load_config(const std::optional<std::filesystem::path>& path);

/// Sum of sinusoids with periods log-uniform in [min_period, max_period], random
/// phases and weights, rescaled so that max |r| equals amplitude (kW).
SignalSeries synthetic_regulation(const RegulationConfig& cfg, double amplitude, double horizon, double dt,
                                  std::uint64_t seed);

/// One signal per configured source, each exactly horizon/dt samples long.
std::vector<SignalSeries> regulation_signals(const RunConfig& cfg, double total_rated_power);

std::vector<EwhParams> config_devices(const RunConfig& cfg);

}  // namespace fvb
