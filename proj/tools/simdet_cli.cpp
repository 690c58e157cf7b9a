// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "simdet/bench.hpp"
#include "simdet/config.hpp"
#include "simdet/postproc.hpp"
#include "simdet/trainer.hpp"

namespace {

bool verbose() {
    const char* v = std::getenv("SIMDET_LOG");
    return v && std::string(v) != "" && std::string(v) != "0" && std::string(v) != "quiet";
}

simdet::BoxSet read_boxes(const std::string& path, const std::string& format) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw simdet::FormatError("cannot open box file: " + path);
    const bool jsonl = format == "jsonl" || (format == "auto" && path.ends_with(".jsonl"));
    return jsonl ? simdet::read_boxes_jsonl(f) : simdet::read_boxes_csv(f);
}

void write_boxes(std::ostream& os, const simdet::BoxSet& boxes, const std::string& format,
                 const std::string& path) {
    const bool jsonl = format == "jsonl" || (format == "auto" && path.ends_with(".jsonl"));
    if (jsonl) {
        simdet::write_boxes_jsonl(os, boxes);
    } else {
        simdet::write_boxes_csv(os, boxes);
    }
}

int run(int argc, char** argv) {
    CLI::App app{"simdet: desk-scale data-parallel training engine"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, box_path, out_path;
    std::string method, format = "auto";
    double iou = 0.5, nt = 0.3, sigma = 0.5, floor = 0.001;
    bool force = false;
    int64_t measured_steps = 6;

    auto* train = app.add_subcommand("train", "train per the config file");
    train->add_option("config", config_path, "config file (JSON)")->required();

    auto* bscale = app.add_subcommand("bench-scaling", "scaling-efficiency table (model + measured)");
    bscale->add_option("config", config_path, "config file (JSON)")->required();
    bscale->add_option("--measured-steps", measured_steps, "steps per measured run");

    auto* bmem = app.add_subcommand("bench-memory", "peak-memory table over the mode stack");
    bmem->add_option("config", config_path, "config file (JSON)")->required();

    auto* nms = app.add_subcommand("nms", "run a suppression variant over a box file");
    nms->add_option("method", method, "hard | soft-linear | soft-gaussian | weighted")->required();
    nms->add_option("file", box_path, "boxes (CSV or JSON lines)")->required();
    nms->add_option("--iou", iou, "IoU threshold (hard/weighted)");
    nms->add_option("--nt", nt, "linear soft-NMS overlap threshold");
    nms->add_option("--sigma", sigma, "gaussian soft-NMS sigma");
    nms->add_option("--floor", floor, "drop rescored boxes below this");
    nms->add_option("--format", format, "csv | jsonl | auto");
    nms->add_option("--out", out_path, "output file (default stdout)");

    auto* resume = app.add_subcommand("resume", "continue training from a checkpoint");
    resume->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
    resume->add_option("--config", config_path, "config file (JSON)")->required();
    resume->add_flag("--force", force, "ignore a config-digest mismatch");

    CLI11_PARSE(app, argc, argv);

    if (train->parsed() || resume->parsed()) {
        simdet::Config c = simdet::load_config_file(config_path);
        simdet::TrainOptions o;
        if (resume->parsed()) {
            o.resume_from = ckpt_path;
            o.force_resume = force;
        }
        const simdet::TrainResult r = simdet::run_training(c, o);
        if (verbose()) std::cerr << r.metrics_csv;
        std::cout << "steps " << r.first_step << ".." << r.last_step << ", final loss "
                  << (r.losses.empty() ? 0.0 : r.losses.back()) << ", skipped " << r.skipped
                  << ", metrics " << r.metrics_path << ", checkpoint " << r.checkpoint_path << "\n";
        return 0;
    }
    if (bscale->parsed()) {
        simdet::Config c = simdet::load_config_file(config_path);
        std::cout << simdet::scaling_model_csv(simdet::bench_scaling_model(c));
        std::cout << "\n" << simdet::scaling_measured_csv(simdet::bench_scaling_measured(c, measured_steps));
        return 0;
    }
    if (bmem->parsed()) {
        simdet::Config c = simdet::load_config_file(config_path);
        std::cout << simdet::memory_csv(simdet::bench_memory(c));
        return 0;
    }
    if (nms->parsed()) {
        const simdet::BoxSet boxes = read_boxes(box_path, format);
        simdet::BoxSet result;
        if (method == "hard") {
            for (size_t i : simdet::nms_greedy(boxes, iou)) result.push_back(boxes[i]);
        } else if (method == "soft-linear") {
            result = simdet::nms_soft(boxes, simdet::SoftNmsMethod::Linear, nt, sigma, floor);
        } else if (method == "soft-gaussian") {
            result = simdet::nms_soft(boxes, simdet::SoftNmsMethod::Gaussian, nt, sigma, floor);
        } else if (method == "weighted") {
            result = simdet::nms_weighted(boxes, iou);
        } else {
            throw simdet::ParamError("unknown nms method: " + method);
        }
        if (out_path.empty()) {
            write_boxes(std::cout, result, format, box_path);
        } else {
            std::ofstream f(out_path, std::ios::binary);
            if (!f) throw simdet::FormatError("cannot open output file: " + out_path);
            write_boxes(f, result, format, out_path);
        }
        return 0;
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const simdet::ConfigError& e) {
        std::cerr << "[config] " << e.what() << "\n";
        return 2;
    } catch (const simdet::FormatError& e) {
        std::cerr << "[format] " << e.what() << "\n";
        return 3;
    } catch (const simdet::TransportError& e) {
        std::cerr << "[comm] " << e.what() << "\n";
        return 4;
    } catch (const simdet::ProtocolError& e) {
        std::cerr << "[comm] " << e.what() << "\n";
        return 4;
    } catch (const simdet::CollectiveError& e) {
        std::cerr << "[comm] " << e.what() << "\n";
        return 4;
    } catch (const simdet::ParamError& e) {
        std::cerr << "[param] " << e.what() << "\n";
        return 5;
    } catch (const simdet::Error& e) {
        std::cerr << "[error] " << e.what() << "\n";
        return 6;
    } catch (const std::exception& e) {
        std::cerr << "[error] " << e.what() << "\n";
        return 7;
    }
}
