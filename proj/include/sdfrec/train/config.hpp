#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "sdfrec/core/error.hpp"

namespace sdfrec {

struct TrainingConfig {
    double lambda_lidar = 0.1;
    double lambda_mask = 0.1;
    double lambda_eikonal = 0.1;
    double lambda_sym = 1.0;
    double lambda_int = 0.1;
    double epsilon = 0.2;  // depth window (m) for the stray-weight penalty
    int camera_rays = 96;
    int lidar_rays = 32;
    int samples_per_ray = 64;
    int eikonal_points = 1024;
    int symmetry_points = 256;
    double learning_rate = 5e-4;
    int iterations = 2000;
    uint64_t seed = 1;
    int log_interval = 10;
    int chunk_rays = 32;

    void validate() const {
        if (lambda_lidar < 0 || lambda_mask < 0 || lambda_eikonal < 0 || lambda_sym < 0 ||
            lambda_int < 0)
            throw ConfigError("loss weights must be nonnegative");
        if (epsilon <= 0) throw ConfigError("epsilon must be positive");
        if (camera_rays < 1 || samples_per_ray < 2) throw ConfigError("ray batch too small");
        if (lidar_rays < 0 || eikonal_points < 0 || symmetry_points < 0)
            throw ConfigError("negative sample counts");
        if (iterations < 0) throw ConfigError("iterations must be >= 0");
        if (learning_rate < 0) throw ConfigError("learning rate must be >= 0");
        if (log_interval < 1 || chunk_rays < 1) throw ConfigError("bad logging/chunk settings");
    }
};

namespace detail_cfg {

template <class T>
bool assign(const std::string& key, const std::string& name, const std::string& raw, T& field,
            int line) {
    if (key != name) return false;
    std::istringstream ss(raw);
    ss >> field;
    if (ss.fail() || !(ss >> std::ws).eof())
        throw ConfigError("line " + std::to_string(line) + ": bad value for " + name + ": '" +
                          raw + "'");
    return true;
}

}  // namespace detail_cfg

// Plain `key = value` file, '#' comments. Unknown keys are a hard error.
inline TrainingConfig parse_training_config(std::istream& in) {
    TrainingConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        using detail_cfg::assign;
        bool known = assign(key, "lambda_lidar", val, cfg.lambda_lidar, lineno) ||
                     assign(key, "lambda_mask", val, cfg.lambda_mask, lineno) ||
                     assign(key, "lambda_eikonal", val, cfg.lambda_eikonal, lineno) ||
                     assign(key, "lambda_sym", val, cfg.lambda_sym, lineno) ||
                     assign(key, "lambda_int", val, cfg.lambda_int, lineno) ||
                     assign(key, "epsilon", val, cfg.epsilon, lineno) ||
                     assign(key, "camera_rays", val, cfg.camera_rays, lineno) ||
                     assign(key, "lidar_rays", val, cfg.lidar_rays, lineno) ||
                     assign(key, "samples_per_ray", val, cfg.samples_per_ray, lineno) ||
                     assign(key, "eikonal_points", val, cfg.eikonal_points, lineno) ||
                     assign(key, "symmetry_points", val, cfg.symmetry_points, lineno) ||
                     assign(key, "learning_rate", val, cfg.learning_rate, lineno) ||
                     assign(key, "iterations", val, cfg.iterations, lineno) ||
                     assign(key, "seed", val, cfg.seed, lineno) ||
                     assign(key, "log_interval", val, cfg.log_interval, lineno) ||
                     assign(key, "chunk_rays", val, cfg.chunk_rays, lineno);
        if (!known)
            throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline TrainingConfig load_training_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    return parse_training_config(f);
}

inline std::string dump_training_config(const TrainingConfig& c) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "lambda_lidar = " << c.lambda_lidar << "\n"
       << "lambda_mask = " << c.lambda_mask << "\n"
       << "lambda_eikonal = " << c.lambda_eikonal << "\n"
       << "lambda_sym = " << c.lambda_sym << "\n"
       << "lambda_int = " << c.lambda_int << "\n"
       << "epsilon = " << c.epsilon << "\n"
       << "camera_rays = " << c.camera_rays << "\n"
       << "lidar_rays = " << c.lidar_rays << "\n"
       << "samples_per_ray = " << c.samples_per_ray << "\n"
       << "eikonal_points = " << c.eikonal_points << "\n"
       << "symmetry_points = " << c.symmetry_points << "\n"
       << "learning_rate = " << c.learning_rate << "\n"
       << "iterations = " << c.iterations << "\n"
       << "seed = " << c.seed << "\n"
       << "log_interval = " << c.log_interval << "\n"
       << "chunk_rays = " << c.chunk_rays << "\n";
    return ss.str();
}

}  // namespace sdfrec
