// massformer: gen-data | train | evaluate | report-flops | bench
//
// Exit codes: 0 success, 1 internal, 2 configuration, 3 missing
// prerequisite, 4 incompatible artifact.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "massformer/complexity.hpp"
#include "massformer/config.hpp"
#include "massformer/dataset.hpp"
#include "massformer/pipeline.hpp"
#include "massformer/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace massformer;

namespace {

struct prerequisite_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr const char* out_dir_env = "MASSFORMER_OUT_DIR";

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw prerequisite_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << text;
}

std::string file_hash(const fs::path& p) { return hex64(hash_bytes(read_file(p))); }

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Explicit flag, then the environment override, then the fallback.
fs::path resolve_out(const std::string& flag, const fs::path& fallback) {
    fs::path out;
    if (!flag.empty()) out = flag;
    else if (const char* env = std::getenv(out_dir_env); env && *env) out = env;
    else out = fallback;
    if (out.empty()) throw config_error(std::string("no output directory: pass --out or set ") + out_dir_env);
    fs::create_directories(out);
    return out;
}

json load_json(const fs::path& p) {
    if (!fs::exists(p)) return json::object();
    try {
        return json::parse(read_file(p));
    } catch (const json::exception&) {
        return json::object();
    }
}

// manifest.json holds only reproducible facts; wall-clock data goes to timing.json.
void record_step(const fs::path& dir, const std::string& step, json entry, const std::vector<std::string>& files,
                 double seconds) {
    json hashes = json::object();
    for (const auto& f : files) hashes[f] = file_hash(dir / f);
    entry["files"] = hashes;
    auto manifest = load_json(dir / "manifest.json");
    manifest[step] = entry;
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    auto timing = load_json(dir / "timing.json");
    timing[step] = {{"finished_utc", utc_now()}, {"wall_seconds", seconds}};
    write_file(dir / "timing.json", timing.dump(2) + "\n");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

run_config config_for(const std::string& config_path, const fs::path& data_dir, const std::string& profile) {
    if (!config_path.empty()) return load_config(config_path, profile.empty() ? "desk" : profile);
    if (!data_dir.empty()) {
        const auto snap = data_dir / "config.ini";
        if (!fs::exists(snap)) throw prerequisite_error(snap.string() + " not found; run gen-data first");
        return load_config(snap.string());
    }
    return profile_by_name(profile.empty() ? "desk" : profile);
}

std::vector<double> parse_list(const std::string& text, const std::string& what) {
    return detail::split_list<double>(text, what);
}

checkpoint open_checkpoint(const fs::path& path, const run_config& cfg) {
    if (!fs::exists(path)) throw prerequisite_error("checkpoint " + path.string() + " not found");
    auto ck = load_checkpoint(path.string(), &cfg.model);
    const auto expected = data_config_hash(cfg);
    if (ck.data_hash != expected)
        throw version_error("checkpoint " + path.string() + " was trained on data config " + hex64(ck.data_hash) +
                            ", current data config is " + hex64(expected));
    return ck;
}

void log(const std::string& msg) { std::cerr << "[massformer] " << msg << '\n'; }

// ---------------------------------------------------------------------------

struct gen_args {
    std::string config, out, profile;
    std::size_t samples = 0, test_samples = 0;
};

int cmd_gen_data(const gen_args& a) {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = config_for(a.config, {}, a.profile);
    if (a.samples) cfg.data.train_samples = a.samples;
    if (a.test_samples) cfg.data.test_samples = a.test_samples;
    cfg.validate();
    const auto dir = resolve_out(a.out, {});
    write_file(dir / "config.ini", to_ini(cfg));

    json entry;
    entry["config_hash"] = hex64(data_config_hash(cfg));
    entry["seed"] = cfg.scenario.seed;
    std::vector<std::string> files{"config.ini"};
    for (auto [name, role, count] : {std::tuple{"train", data_role::train, cfg.data.train_samples},
                                     std::tuple{"test", data_role::test, cfg.data.test_samples}}) {
        log(std::string("generating ") + name + " set: " + std::to_string(count) + " samples");
        const auto ds = generate_role(cfg, role, count, label_schedule::alternate);
        const std::string file = std::string(name) + ".msfd", index = std::string(name) + "_index.csv";
        save_dataset(ds, (dir / file).string());
        std::ostringstream csv;
        export_index_csv(ds, csv);
        write_file(dir / index, csv.str());
        files.push_back(file);
        files.push_back(index);
        entry[std::string(name) + "_dataset_hash"] = hex64(ds.content_hash());
        entry[std::string(name) + "_samples"] = ds.count();
        std::cout << name << ": " << ds.count() << " samples, S=" << ds.su_count << " M=" << ds.antennas
                  << " N=" << ds.samples << " lambda=" << ds.seq_len << " H=" << ds.size << " C=" << ds.channels
                  << ", dataset hash " << hex64(ds.content_hash()) << '\n';
    }
    record_step(dir, "gen-data", entry, files, seconds_since(t0));
    std::cout << "wrote " << dir.string() << '\n';
    return 0;
}

struct train_args {
    std::string data, ckpt, config, out;
    int stage = 1;
    std::size_t epochs = 0;
    bool resume = false;
};

int cmd_train(const train_args& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path data_dir = a.data;
    auto cfg = config_for(a.config, data_dir, "");
    const fs::path ckpt_path = a.ckpt.empty() ? data_dir / "model.ckpt" : fs::path(a.ckpt);
    const auto train_file = data_dir / "train.msfd";
    if (!fs::exists(train_file)) throw prerequisite_error(train_file.string() + " not found; run gen-data first");
    const auto hash = data_config_hash(cfg);
    const auto ds = load_dataset(train_file.string(), hash);

    auto tcfg = cfg.train;
    tcfg.epochs = a.epochs ? a.epochs : cfg.epochs_for_stage(a.stage);
    checkpoint ck;
    if (a.stage == 1) {
        if (a.resume && fs::exists(ckpt_path)) {
            ck = open_checkpoint(ckpt_path, cfg);
            if (ck.state.stage2_epochs > 0) throw prerequisite_error("checkpoint already entered stage 2");
        } else {
            ck = checkpoint{massformer_model(cfg.model, cfg.train.seed), {}, cfg.train.seed, hash};
        }
    } else {
        if (!fs::exists(ckpt_path)) throw prerequisite_error("stage 2 needs the stage-1 checkpoint " + ckpt_path.string());
        ck = open_checkpoint(ckpt_path, cfg);
        if (ck.state.stage1_epochs == 0) throw prerequisite_error("checkpoint has no stage-1 training");
        if (ck.state.stage2_epochs > 0 && !a.resume) {
            // Stage 1 leaves the collaborative tier at its seeded initial values.
            if (ck.state.joint_finetuned)
                throw prerequisite_error("stage 2 fine-tuned the SU tier; rerun stage 1 or pass --resume");
            const massformer_model fresh(cfg.model, ck.seed);
            auto target = ck.model.collab_parameters();
            const auto source = fresh.collab_parameters();
            for (std::size_t i = 0; i < target.size(); ++i)
                std::ranges::copy(source[i].second.data(), target[i].second.mutable_data().begin());
            ck.state.stage2_epochs = 0;
            ck.state.stage2_opt = {};
            log("restarting stage 2 from the stage-1 state");
        }
    }

    auto progress = [&](const epoch_record& e) {
        std::ostringstream os;
        os << "stage " << a.stage << " epoch " << e.epoch << "/" << tcfg.epochs << " loss " << e.loss << " train_acc "
           << e.train_accuracy << " val_acc " << e.val_accuracy << " (" << e.wall_seconds << " s)";
        log(os.str());
    };
    const auto report = a.stage == 1 ? train_stage1(ds, ck.model, tcfg, ck.state, progress)
                                     : train_stage2(ds, ck.model, tcfg, ck.state, progress);
    if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
    save_checkpoint(ck, ckpt_path.string());

    const auto out = resolve_out(a.out, data_dir);
    const std::string stem = "train_stage" + std::to_string(a.stage);
    std::ostringstream csv;
    report.write_csv(csv);
    write_file(out / (stem + ".csv"), csv.str());
    auto summary = report.summary();
    summary["checkpoint_hash"] = hex64(checkpoint_hash(ck));
    summary["total_epochs"] = a.stage == 1 ? ck.state.stage1_epochs : ck.state.stage2_epochs;
    write_file(out / (stem + ".json"), summary.dump(2) + "\n");

    json entry;
    entry["config_hash"] = hex64(hash);
    entry["seed"] = ck.seed;
    entry["dataset_hash"] = hex64(ds.content_hash());
    entry["checkpoint"] = fs::absolute(ckpt_path).lexically_normal().string();
    entry["checkpoint_hash"] = hex64(checkpoint_hash(ck));
    record_step(out, "train-stage" + std::to_string(a.stage), entry, {stem + ".csv", stem + ".json"},
                seconds_since(t0));
    std::cout << "stage " << a.stage << ": " << report.epochs.size() << " epoch(s) run, "
              << (a.stage == 1 ? ck.state.stage1_epochs : ck.state.stage2_epochs) << " total; checkpoint "
              << ckpt_path.string() << " (" << hex64(checkpoint_hash(ck)) << ")\n";
    return 0;
}

struct eval_args {
    std::string ckpt, data, config, out, pfa, n0, baseline;
};

std::string n0_tag(double n0) {
    std::string s = detail::fmt_double(n0);
    for (auto& ch : s)
        if (ch == '.') ch = 'p';
    return s;
}

int cmd_evaluate(const eval_args& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path data_dir = a.data;
    auto cfg = config_for(a.config, data_dir, "");
    if (!a.pfa.empty()) cfg.eval.pfa_grid = parse_list(a.pfa, "--pfa");
    if (!a.n0.empty()) cfg.eval.n0_list = parse_list(a.n0, "--n0");
    if (a.baseline == "ed") cfg.eval.energy_baseline = true;
    else if (a.baseline == "none") cfg.eval.energy_baseline = false;
    else if (!a.baseline.empty()) throw config_error("--baseline must be ed or none");
    auto grid = cfg.eval.pfa_grid.empty() ? default_pfa_grid() : cfg.eval.pfa_grid;
    if (std::find(grid.begin(), grid.end(), cfg.eval.operating_pfa) == grid.end()) grid.push_back(cfg.eval.operating_pfa);
    std::sort(grid.begin(), grid.end());
    cfg.eval.pfa_grid = grid;
    cfg.validate();
    if (cfg.eval.n0_list.empty()) throw config_error("no noise levels to evaluate");

    const auto ck = open_checkpoint(a.ckpt, cfg);
    if (ck.state.stage2_epochs == 0) throw prerequisite_error("checkpoint has no stage-2 training; run train --stage 2");
    const auto rep = evaluate(ck.model, cfg, cfg.eval.n0_list, [](const std::string& m) { log(m); });
    if (rep.low_calibration_count) log("warning: calibration count below 1/pfa for part of the grid");

    const auto out = resolve_out(a.out, data_dir);
    std::vector<std::string> files{"detection.csv", "detection.json", "pd_vs_n0.csv", "sensing_error.csv",
                                   "accuracy.csv"};
    std::ostringstream csv;
    rep.write_csv(csv);
    write_file(out / "detection.csv", csv.str());
    auto summary = rep.summary();
    summary["checkpoint_hash"] = hex64(checkpoint_hash(ck));
    summary["pfa_grid"] = grid;
    write_file(out / "detection.json", summary.dump(2) + "\n");

    std::vector<std::string> methods{"massformer"};
    if (cfg.eval.energy_baseline) methods.push_back("energy");
    auto table = [&](const std::string& file, auto value) {
        std::ostringstream os;
        os << "n0_dbm_per_hz";
        for (const auto& m : methods) os << ',' << m;
        os << '\n';
        for (double n0 : cfg.eval.n0_list) {
            os << detail::fmt_double(n0);
            for (const auto& m : methods) os << ',' << detail::fmt_double(value(*rep.find(m, n0)));
            os << '\n';
        }
        write_file(out / file, os.str());
    };
    table("pd_vs_n0.csv", [](const method_result& r) { return r.at_operating.pd; });
    table("sensing_error.csv", [](const method_result& r) { return r.at_operating.sensing_error; });
    table("accuracy.csv", [](const method_result& r) { return r.at_operating.accuracy; });
    for (double n0 : cfg.eval.n0_list) {
        const std::string file = "roc_n0_" + n0_tag(n0) + ".csv";
        std::ostringstream os;
        os << "method,pfa,threshold,pd\n";
        for (const auto& m : methods)
            for (const auto& p : rep.find(m, n0)->roc.points)
                os << m << ',' << detail::fmt_double(p.pfa) << ',' << detail::fmt_double(p.gamma) << ','
                   << detail::fmt_double(p.pd) << '\n';
        write_file(out / file, os.str());
        files.push_back(file);
    }

    json entry;
    entry["config_hash"] = hex64(data_config_hash(cfg));
    entry["seed"] = cfg.scenario.seed;
    entry["checkpoint_hash"] = hex64(checkpoint_hash(ck));
    record_step(out, "evaluate", entry, files, seconds_since(t0));

    std::cout << std::setprecision(4) << "pfa = " << cfg.eval.operating_pfa << "\n";
    for (const auto& r : rep.results)
        std::cout << r.method << " N0=" << r.n0_dbm_per_hz << " dBm/Hz: AUC " << r.roc.auc << ", Pd "
                  << r.at_operating.pd << ", sensing error " << r.at_operating.sensing_error << ", accuracy "
                  << r.at_operating.accuracy << '\n';
    std::cout << "wrote " << out.string() << '\n';
    return 0;
}

struct flops_args {
    std::string config, profile, out, layout;
};

int cmd_report_flops(const flops_args& a) {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = config_for(a.config, {}, a.profile);
    if (a.layout == "real_imag") cfg.data.layout = plane_layout::real_imag;
    else if (a.layout == "real_imag_magnitude") cfg.data.layout = plane_layout::real_imag_magnitude;
    else if (!a.layout.empty()) throw config_error("--layout must be real_imag or real_imag_magnitude");
    sync_model_shape(cfg);
    cfg.validate();
    const auto b = count_model_flops(cfg.model, cfg.scenario.antennas, cfg.scenario.samples, cfg.scenario.su_count);
    std::ostringstream table, csv, cx;
    write_flops_table(b, table);
    write_flops_csv(b, csv);
    write_complexity_report(paper_complexity_inputs(), cx);
    std::cout << table.str() << '\n' << cx.str();

    const char* env = std::getenv(out_dir_env);
    if (!a.out.empty() || (env && *env)) {
        const auto out = resolve_out(a.out, {});
        write_file(out / "flops.txt", table.str());
        write_file(out / "flops.csv", csv.str());
        write_file(out / "complexity.txt", cx.str());
        json entry;
        entry["config_hash"] = hex64(hash_bytes(to_ini(cfg)));
        record_step(out, "report-flops", entry, {"flops.txt", "flops.csv", "complexity.txt"}, seconds_since(t0));
    }
    return 0;
}

struct bench_args {
    std::string ckpt, data, config, profile, out;
    std::size_t reps = 100, warmup = 10;
};

int cmd_bench(const bench_args& a) {
    auto cfg = config_for(a.config, a.data.empty() ? fs::path{} : fs::path(a.data), a.profile);
    if (a.reps == 0) throw config_error("--reps must be at least 1");
    const auto model = a.ckpt.empty() ? massformer_model(cfg.model, cfg.train.seed) : open_checkpoint(a.ckpt, cfg).model;
    const auto r = bench_inference(model, cfg, a.reps, a.warmup);
    auto stats = [](const latency_stats& s) {
        return json{{"median_ms", s.median_ms}, {"p95_ms", s.p95_ms}, {"mean_ms", s.mean_ms}, {"reps", s.reps},
                    {"low_confidence", s.low_confidence}};
    };
    json j{{"preprocessing", stats(r.preprocessing)},
           {"inference", stats(r.inference)},
           {"bound_ms", r.bound_ms},
           {"within_bound", r.within_bound()},
           {"published_ms", {{"preprocessing", 0.099}, {"inference", 2.46}}},
           {"threads", 1}};
    std::cout << std::setprecision(4) << "preprocessing: median " << r.preprocessing.median_ms << " ms, p95 "
              << r.preprocessing.p95_ms << " ms\ninference:     median " << r.inference.median_ms << " ms, p95 "
              << r.inference.p95_ms << " ms (" << r.inference.reps << " reps"
              << (r.inference.low_confidence ? ", low confidence" : "") << ")\n"
              << (r.within_bound() ? "within" : "EXCEEDS") << " the " << r.bound_ms << " ms evacuation bound\n";
    const char* env = std::getenv(out_dir_env);
    if (!a.out.empty() || (env && *env)) {
        const auto out = resolve_out(a.out, {});
        write_file(out / "bench.json", j.dump(2) + "\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mobility-aware cooperative spectrum sensing lab"};
    app.require_subcommand(1);

    gen_args g;
    auto* gen = app.add_subcommand("gen-data", "Simulate and store training/test datasets");
    gen->add_option("--config", g.config, "INI configuration file")->check(CLI::ExistingFile);
    gen->add_option("--profile", g.profile, "Base profile when the file names none")->check(CLI::IsMember({"desk", "paper"}));
    gen->add_option("--out", g.out, "Output directory");
    gen->add_option("--samples", g.samples, "Training samples (overrides config)");
    gen->add_option("--test-samples", g.test_samples, "Test samples (overrides config)");

    train_args t;
    auto* train = app.add_subcommand("train", "Run one training stage");
    train->add_option("--stage", t.stage, "1 = SU tier, 2 = collaborative tier")->required()->check(CLI::IsMember({1, 2}));
    train->add_option("--data", t.data, "Directory written by gen-data")->required();
    train->add_option("--ckpt", t.ckpt, "Checkpoint path (default DATA/model.ckpt)");
    train->add_option("--config", t.config, "Override the configuration snapshot in DATA");
    train->add_option("--epochs", t.epochs, "Total epochs for this stage (overrides config)");
    train->add_option("--out", t.out, "Report directory (default DATA)");
    train->add_flag("--resume", t.resume, "Continue the stage from the checkpoint instead of restarting it");

    eval_args e;
    auto* eval = app.add_subcommand("evaluate", "Calibrate thresholds and score detection");
    eval->add_option("--ckpt", e.ckpt, "Trained checkpoint")->required();
    eval->add_option("--data", e.data, "Directory written by gen-data")->required();
    eval->add_option("--config", e.config, "Override the configuration snapshot in DATA");
    eval->add_option("--pfa", e.pfa, "Comma-separated false-alarm grid (default 0.01..0.30)");
    eval->add_option("--n0", e.n0, "Comma-separated noise densities in dBm/Hz");
    eval->add_option("--baseline", e.baseline, "ed or none");
    eval->add_option("--out", e.out, "Report directory (default DATA)");

    flops_args f;
    auto* flops = app.add_subcommand("report-flops", "Print FLOPs, parameter counts and complexity formulas");
    flops->add_option("--config", f.config, "INI configuration file")->check(CLI::ExistingFile);
    flops->add_option("--profile", f.profile, "desk or paper (default paper)")->check(CLI::IsMember({"desk", "paper"}));
    flops->add_option("--layout", f.layout, "real_imag or real_imag_magnitude");
    flops->add_option("--out", f.out, "Also write flops.txt/flops.csv/complexity.txt here");

    bench_args b;
    auto* bench = app.add_subcommand("bench", "Time preprocessing and inference per sample");
    bench->add_option("--ckpt", b.ckpt, "Checkpoint (default: freshly initialized model)");
    bench->add_option("--data", b.data, "Directory written by gen-data");
    bench->add_option("--config", b.config, "INI configuration file");
    bench->add_option("--profile", b.profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    bench->add_option("--reps", b.reps, "Timed repetitions");
    bench->add_option("--warmup", b.warmup, "Warm-up iterations (at least 10)");
    bench->add_option("--out", b.out, "Write bench.json here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen) return cmd_gen_data(g);
        if (*train) return cmd_train(t);
        if (*eval) return cmd_evaluate(e);
        if (*flops) {
            if (f.profile.empty() && f.config.empty()) f.profile = "paper";
            return cmd_report_flops(f);
        }
        if (*bench) return cmd_bench(b);
    } catch (const config_error& err) {
        std::cerr << "configuration error: " << err.what() << '\n';
        return 2;
    } catch (const prerequisite_error& err) {
        std::cerr << "missing prerequisite: " << err.what() << '\n';
        return 3;
    } catch (const version_error& err) {
        std::cerr << "incompatible artifact: " << err.what() << '\n';
        return 4;
    } catch (const parse_error& err) {
        std::cerr << "unreadable artifact: " << err.what() << '\n';
        return 4;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << '\n';
        return 1;
    }
    return 1;
}
