// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "simdet/errors.hpp"

namespace simdet {

// One experiment, one file. Every knob lives in a strict JSON tree;
// unknown keys are rejected with the full key path, and the fully
// resolved tree (defaults included) is echoed next to every run.
struct Config {
    struct Model {
        int hidden = 64;     // width of the first fully connected layer
        int pad_layers = 0;  // pad the chain with identity layers up to this length (0 = off)
    } model;

    struct Precision {
        std::string mode = "fp32";       // fp32 | mixed
        std::string scaling = "dynamic"; // dynamic | static
        double scale_init = 65536.0;     // power of two
        int64_t growth_interval = 2000;
        double growth_factor = 2.0;
        double backoff_factor = 0.5;
        double min_scale = 1.0;
        double max_scale = 16777216.0;
    } precision;

    struct Bn {
        std::string mode = "plain"; // plain | sync | iabn
        double eps = 1e-5;
        double momentum = 0.9;
        double slope = 0.1; // leaky slope of the first activation
    } bn;

    struct Memory {
        bool checkpoint = false;
        std::string policy = "sqrt"; // sqrt only; kept explicit for the resolved dump
    } memory;

    struct Comm {
        std::string backend = "ring";     // ring | ps
        int workers = 1;                  // K
        std::string transport = "inproc"; // inproc | socket
        // analytical cost-model inputs (bytes/s, s)
        double bandwidth = 3.125e9;
        double latency = 0.0;
        double compute_seconds = 0.5;
        double overlap = 0.0;
    } comm;

    struct Train {
        double lr = 0.05;
        double momentum = 0.9;
        int64_t steps = 100;
        int64_t batch_per_worker = 8;
        uint64_t seed = 1;
    } train;

    struct Data {
        int64_t samples = 256;
        int classes = 4;
        int image = 8; // square images, image x image
        int channels = 3;
        double noise = 0.05;
    } data;

    struct Output {
        std::string dir = "out";
        std::string metrics = "metrics.csv";
        std::string checkpoint = "final.ckpt";
        std::string resolved = "resolved.json";
    } output;

    void validate() const;
};

// Strict parse: requires the model and train sections, fills defaults,
// rejects unknown keys and type mismatches naming the offending path.
Config parse_config(const std::string& text);
Config load_config_file(const std::string& path);

// Deterministic dump of the resolved tree, defaults echoed.
std::string resolved_json(const Config& c);

// FNV-1a over the resolved dump with train.steps and the output section
// masked, so resuming to a later step against the same experiment is not
// flagged as a config change.
uint64_t config_digest(const Config& c);

} // namespace simdet
