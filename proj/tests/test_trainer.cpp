// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "simdet/checkpoint.hpp"
#include "simdet/dataset.hpp"
#include "simdet/trainer.hpp"

using namespace simdet;
namespace fs = std::filesystem;

namespace {

// small, fast experiment shared by most cases
nlohmann::json base_json() {
    return nlohmann::json{
        {"model", {{"hidden", 16}}},
        {"train", {{"steps", 12}, {"lr", 0.05}, {"batch_per_worker", 8}, {"seed", 3}}},
        {"data", {{"samples", 64}, {"classes", 3}, {"image", 6}, {"channels", 2}, {"noise", 0.1}}},
    };
}

Config base_config() { return parse_config(base_json().dump()); }

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("simdet_test_" + tag + "_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

} // namespace

TEST_CASE("config parsing: defaults, strictness, and key paths") {
    const Config c = parse_config(R"({"model":{},"train":{}})");
    CHECK(c.model.hidden == 64);
    CHECK(c.precision.mode == "fp32");
    CHECK(c.comm.workers == 1);
    CHECK(c.train.lr == 0.05);
    CHECK(c.output.metrics == "metrics.csv");

    CHECK_THROWS_AS(parse_config(R"({"train":{}})"), ConfigError);       // missing model
    CHECK_THROWS_AS(parse_config(R"({"model":{}})"), ConfigError);       // missing train
    CHECK_THROWS_AS(parse_config("not json at all"), ConfigError);
    // misspelled section and nested unknown key both name their path
    try {
        parse_config(R"({"modle":{},"model":{},"train":{}})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("modle") != std::string::npos);
    }
    try {
        parse_config(R"({"model":{},"train":{"learning_rate":0.1}})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("train.learning_rate") != std::string::npos);
    }
    // type mismatches are rejected, not coerced
    CHECK_THROWS_AS(parse_config(R"({"model":{"hidden":"big"},"train":{}})"), ConfigError);

    Config bad = base_config();
    bad.precision.mode = "fp17";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = base_config();
    bad.precision.scale_init = 1000.0; // not a power of two
    bad.precision.mode = "mixed";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = base_config();
    bad.train.batch_per_worker = 1;
    bad.comm.workers = 1; // global batch of 1 cannot feed BN
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("resolved dump and digest: deterministic, resume-friendly masking") {
    const Config a = base_config();
    CHECK(resolved_json(a) == resolved_json(base_config()));
    Config b = a;
    b.train.steps = 999;         // masked
    b.output.dir = "elsewhere";  // masked
    CHECK(config_digest(b) == config_digest(a));
    Config c2 = a;
    c2.train.lr = 0.01; // not masked
    CHECK(config_digest(c2) != config_digest(a));
}

TEST_CASE("synthetic dataset is deterministic and label-balanced") {
    const Dataset d1 = make_synthetic_dataset(7, 48, 2, 6, 3, 0.1);
    const Dataset d2 = make_synthetic_dataset(7, 48, 2, 6, 3, 0.1);
    const Dataset d3 = make_synthetic_dataset(8, 48, 2, 6, 3, 0.1);
    CHECK(dataset_digest(d1) == dataset_digest(d2));
    CHECK(dataset_digest(d1) != dataset_digest(d3));
    for (int64_t i = 0; i < 48; ++i) CHECK(d1.labels[static_cast<size_t>(i)] == i % 3);

    for (int64_t g = 0; g < 100; ++g) {
        const int64_t idx = sample_index(7, g, 48);
        CHECK(idx >= 0);
        CHECK(idx < 48);
        CHECK(idx == sample_index(7, g, 48));
    }
}

TEST_CASE("the global batch is identical for K*b = 1x16 and 2x8") {
    const Dataset ds = make_synthetic_dataset(5, 64, 2, 6, 3, 0.1);
    auto [one, lab1] = gather_batch(ds, 5, 3, 0, 1, 16, DType::F32);
    auto [r0, l0] = gather_batch(ds, 5, 3, 0, 2, 8, DType::F32);
    auto [r1, l1] = gather_batch(ds, 5, 3, 1, 2, 8, DType::F32);
    std::vector<int> cat(l0);
    cat.insert(cat.end(), l1.begin(), l1.end());
    CHECK(cat == lab1);
    for (int64_t i = 0; i < r0.numel(); ++i) CHECK(r0[i] == one[i]);
    for (int64_t i = 0; i < r1.numel(); ++i) CHECK(r1[i] == one[r0.numel() + i]);
}

TEST_CASE("K=1x16 and K=2x8 training stay synchronized") {
    Config c1 = base_config();
    c1.bn.mode = "sync"; // global statistics keep the runs comparable
    c1.train.lr = 0.005; // keep losses well above the float noise floor
    c1.data.noise = 0.4;
    c1.train.batch_per_worker = 16;
    Config c2 = c1;
    c2.comm.workers = 2;
    c2.train.batch_per_worker = 8;
    TrainOptions opts;
    opts.write_outputs = false;
    const TrainResult a = run_training(c1, opts);
    const TrainResult b = run_training(c2, opts);
    REQUIRE(a.losses.size() == b.losses.size());
    // same global batch and statistics; only summation order differs, and
    // that float drift compounds through the weights step over step
    for (size_t i = 0; i < a.losses.size(); ++i) {
        CHECK(a.losses[i] == doctest::Approx(b.losses[i]).epsilon(0.01));
    }
}

TEST_CASE("ring and parameter-server backends produce bitwise-equal trajectories") {
    Config ring = base_config();
    ring.comm.workers = 2;
    Config ps = ring;
    ps.comm.backend = "ps";
    TrainOptions opts;
    opts.write_outputs = false;
    const TrainResult a = run_training(ring, opts);
    const TrainResult b = run_training(ps, opts);
    CHECK(a.weight_digests == b.weight_digests);
    CHECK(a.final_weights == b.final_weights);
    CHECK(a.losses == b.losses);
}

TEST_CASE("training converges on the synthetic task") {
    Config c = base_config();
    c.train.steps = 80;
    c.data.classes = 2;
    c.data.noise = 0.05;
    TrainOptions opts;
    opts.write_outputs = false;
    const TrainResult r = run_training(c, opts);
    CHECK(r.losses.back() < 0.05);
    CHECK(r.losses.back() < r.losses.front());
}

TEST_CASE("metrics rows are well-formed with strictly increasing steps") {
    Config c = base_config();
    TrainOptions opts;
    opts.write_outputs = false;
    const TrainResult r = run_training(c, opts);
    std::istringstream is(r.metrics_csv);
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "step,loss,scale,skipped,step_time_model,peak_bytes");
    long long prev = 0;
    int rows = 0;
    while (std::getline(is, line)) {
        long long step, peak;
        double loss, scale, tm;
        int skip;
        REQUIRE(std::sscanf(line.c_str(), "%lld,%lf,%lf,%d,%lf,%lld", &step, &loss, &scale, &skip,
                            &tm, &peak) == 6);
        CHECK(step == prev + 1);
        CHECK(scale == 1.0); // fp32 run
        CHECK(skip == 0);
        CHECK(peak > 0);
        CHECK(tm > 0.0);
        prev = step;
        ++rows;
    }
    CHECK(rows == c.train.steps);
}

TEST_CASE("checkpoint files round trip and reject corruption") {
    TempDir tmp("ckpt");
    Config c = base_config();
    c.output.dir = (tmp.path / "run").string();
    const TrainResult r = run_training(c);
    REQUIRE_FALSE(r.checkpoint_path.empty());

    const CheckpointState st = load_checkpoint(r.checkpoint_path);
    CHECK(st.step == c.train.steps);
    CHECK(st.config_digest == config_digest(c));
    const ModelSpec spec = model_spec_from(c);
    std::map<std::string, Tensor> loaded;
    for (const auto& [name, t] : st.params) loaded.emplace(name, t);
    CHECK(pack_params(spec, loaded) == r.final_weights);

    // re-saving the loaded state is byte-identical
    const std::string copy = (tmp.path / "copy.ckpt").string();
    save_checkpoint(st, copy);
    std::ifstream f1(r.checkpoint_path, std::ios::binary), f2(copy, std::ios::binary);
    std::stringstream b1, b2;
    b1 << f1.rdbuf();
    b2 << f2.rdbuf();
    CHECK(b1.str() == b2.str());

    // corrupt magic
    std::string bytes = b1.str();
    bytes[0] = 'X';
    const std::string bad = (tmp.path / "bad.ckpt").string();
    std::ofstream(bad, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
    // truncation
    const std::string cut = (tmp.path / "cut.ckpt").string();
    std::ofstream(cut, std::ios::binary)
        .write(b1.str().data(), static_cast<std::streamsize>(bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(cut), FormatError);
    CHECK_THROWS_AS(load_checkpoint((tmp.path / "missing.ckpt").string()), FormatError);
}

TEST_CASE("resume continues bitwise and respects the digest gate") {
    TempDir tmp("resume");
    Config full = base_config();
    full.train.steps = 12;
    full.output.dir = (tmp.path / "full").string();
    const TrainResult whole = run_training(full);

    Config head = full;
    head.train.steps = 6;
    head.output.dir = (tmp.path / "head").string();
    const TrainResult first = run_training(head);

    TrainOptions resume;
    resume.resume_from = first.checkpoint_path;
    Config tail = full;
    tail.output.dir = (tmp.path / "tail").string();
    const TrainResult second = run_training(tail, resume);
    CHECK(second.first_step == 7);

    // rows 7..12 of the full run == the resumed run's rows
    std::istringstream is(whole.metrics_csv);
    std::string line, tail_rows;
    std::getline(is, line); // header
    for (int i = 1; i <= 12; ++i) {
        std::getline(is, line);
        if (i >= 7) tail_rows += line + "\n";
    }
    std::istringstream is2(second.metrics_csv);
    std::getline(is2, line);
    std::string got(std::istreambuf_iterator<char>(is2), {});
    CHECK(got == tail_rows);
    CHECK(second.final_weights == whole.final_weights);

    // digest gate: a different experiment refuses the checkpoint unless forced
    Config other = tail;
    other.train.lr = 0.01;
    other.output.dir = (tmp.path / "other").string();
    CHECK_THROWS_AS(run_training(other, resume), ConfigError);
    TrainOptions forced = resume;
    forced.force_resume = true;
    forced.write_outputs = false;
    CHECK_NOTHROW(run_training(other, forced));

    // nothing to resume when the checkpoint already covers train.steps
    TrainOptions done = resume;
    done.write_outputs = false;
    Config short_run = full;
    short_run.train.steps = 6;
    CHECK_THROWS_AS(run_training(short_run, done), ConfigError);
}

TEST_CASE("an injected overflow skips exactly one step and halves the scale") {
    Config c = base_config();
    c.precision.mode = "mixed";
    c.precision.scale_init = 1024.0;
    TrainOptions opts;
    opts.write_outputs = false;
    opts.inject_inf_step = 5;
    const TrainResult r = run_training(c, opts);
    CHECK(r.skipped == 1);
    CHECK(r.final_scale == 512.0);
    // weights froze across the skipped step
    CHECK(r.weight_digests[4] == r.weight_digests[3]);
    CHECK(r.weight_digests[5] != r.weight_digests[4]);
    // the row records the skip against the scale in effect
    std::istringstream is(r.metrics_csv);
    std::string line;
    for (int i = 0; i <= 5; ++i) std::getline(is, line);
    long long step, peak;
    double loss, scale, tm;
    int skip;
    REQUIRE(std::sscanf(line.c_str(), "%lld,%lf,%lf,%d,%lf,%lld", &step, &loss, &scale, &skip, &tm,
                        &peak) == 6);
    CHECK(step == 5);
    CHECK(skip == 1);
    CHECK(scale == 1024.0);

    // a clean run of the same config skips nothing
    opts.inject_inf_step = -1;
    CHECK(run_training(c, opts).skipped == 0);
}
