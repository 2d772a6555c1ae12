// Command-line front end: synthetic cohorts, training, cross-validation,
// gradient checking, and attention export over the scanet library.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or data error.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "scanet/checkpoint.hpp"
#include "scanet/data.hpp"
#include "scanet/gradcheck.hpp"
#include "scanet/runconfig.hpp"
#include "scanet/train.hpp"

namespace fs = std::filesystem;
using namespace scanet;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

std::uint64_t parse_env_seed(const char* text) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(text, &used);
        if (used != std::string(text).size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("SCANET_SEED must be a non-negative "
                                      "integer, got '") +
                          text + "'");
    }
}

// --seed flag > explicit config seed > SCANET_SEED > 0
std::uint64_t resolve_seed(bool flag_given, std::uint64_t flag_value,
                           std::uint64_t config_seed) {
    if (flag_given) return flag_value;
    if (config_seed != 0) return config_seed;
    if (const char* env = std::getenv("SCANET_SEED")) return parse_env_seed(env);
    return 0;
}

void check_cohort_shape(const ModelConfig& model,
                        const std::vector<PatientStudy>& cohort) {
    for (const auto& s : cohort) {
        if (s.slices != model.num_slices || s.height != model.slice_h ||
            s.width != model.slice_w)
            throw ArgumentError(
                "study '" + s.id + "' is " + std::to_string(s.slices) + "x" +
                std::to_string(s.height) + "x" + std::to_string(s.width) +
                " but the model expects " + std::to_string(model.num_slices) +
                "x" + std::to_string(model.slice_h) + "x" +
                std::to_string(model.slice_w) +
                " (check --preset/--config against the cohort)");
    }
}

std::string csv_matrix(const std::vector<float>& values, int rows, int cols) {
    std::string out;
    char buf[32];
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.9g",
                          static_cast<double>(
                              values[static_cast<std::size_t>(r) * cols + c]));
            if (c) out += ",";
            out += buf;
        }
        out += "\n";
    }
    return out;
}

// 8-bit binary PGM, each map normalized by its own maximum
void write_pgm(const fs::path& path, const std::vector<float>& values, int rows,
               int cols) {
    float peak = 0.0f;
    for (float v : values) peak = std::max(peak, v);
    if (peak <= 0.0f) peak = 1.0f;
    std::string bytes = "P5\n" + std::to_string(cols) + " " +
                        std::to_string(rows) + "\n255\n";
    for (float v : values)
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(
            std::lround(std::min(1.0f, std::max(0.0f, v / peak)) * 255.0f))));
    write_text(path, bytes);
}

struct CommonOptions {
    std::string config_file;
    std::string preset;
    std::vector<std::string> sets;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;

    void attach(CLI::App* cmd, bool with_seed) {
        cmd->add_option("--config", config_file,
                        "flat key = value config file (preset line + overrides)")
            ->check(CLI::ExistingFile);
        cmd->add_option("--preset", preset, "toy or paper-scale")
            ->check(CLI::IsMember({"toy", "paper-scale"}));
        cmd->add_option("--set", sets, "override one key, e.g. train.max_epochs=5")
            ->take_all();
        if (with_seed)
            seed_opt = cmd->add_option("--seed", seed,
                                       "training seed (SCANET_SEED as fallback)");
    }

    RunConfig resolve() const {
        RunConfig cfg = resolve_run_config(config_file, preset, sets);
        cfg.train.seed = resolve_seed(seed_opt && seed_opt->count() > 0, seed,
                                      cfg.train.seed);
        return cfg;
    }
};

int cmd_gen_data(int n, bool seed_given, std::uint64_t seed,
                 const std::string& out, const CommonOptions& common) {
    RunConfig cfg = resolve_run_config(common.config_file, common.preset,
                                       common.sets);
    const std::uint64_t use_seed = resolve_seed(seed_given, seed, 0);
    const CohortManifest manifest =
        generate_synthetic_cohort(n, use_seed, cfg.gen, out);
    int ones = 0;
    for (const auto& e : manifest.studies) ones += e.label;
    std::printf("wrote %zu studies (%d x %d x %d) to %s\n",
                manifest.studies.size(), cfg.gen.slices, cfg.gen.height,
                cfg.gen.width, out.c_str());
    std::printf("manifest: %s\n", (fs::path(out) / "manifest.json").string().c_str());
    std::printf("labels: %zu unfavorable (0), %d favorable (1)\n",
                manifest.studies.size() - static_cast<std::size_t>(ones), ones);
    return 0;
}

int cmd_train(const std::string& data, const std::string& out,
              const CommonOptions& common) {
    RunConfig cfg = common.resolve();
    cfg.validate();
    const std::vector<PatientStudy> cohort = load_cohort(data);
    check_cohort_shape(cfg.model, cohort);

    std::vector<const PatientStudy*> ptrs;
    std::vector<int> labels;
    for (const auto& s : cohort) {
        ptrs.push_back(&s);
        labels.push_back(s.label);
    }

    SCANet model(cfg.model, cfg.train.seed);
    const TrainHistory history = train(model, ptrs, labels, cfg.train);

    const fs::path run_dir =
        fs::path(out) / ("run-" + std::to_string(cfg.train.seed));
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    if (ec) throw IoError("cannot create " + run_dir.string() + ": " + ec.message());

    save_checkpoint(run_dir / "checkpoint.sckp", model.parameters());
    write_text(run_dir / "history.csv", history_csv(history));
    write_text(run_dir / "model_card.txt",
               model_card(cfg.model, model.parameter_count()));
    write_text(run_dir / "config.cfg", cfg.to_text());

    const std::size_t best = static_cast<std::size_t>(history.best_epoch);
    std::printf("trained %zu epochs (%s), best epoch %d\n",
                history.train_loss.size(), history.stop_reason.c_str(),
                history.best_epoch + 1);
    std::printf("best val loss %.6f, val auc %.4f\n",
                static_cast<double>(history.val_loss[best]),
                static_cast<double>(history.val_auc[best]));
    std::printf("artifacts: %s\n", run_dir.string().c_str());
    return 0;
}

int cmd_cv(const std::string& data, int k, bool permute, const std::string& out,
           const CommonOptions& common) {
    if (k < 2) throw ArgumentError("--k must be at least 2, got " + std::to_string(k));
    RunConfig cfg = common.resolve();
    cfg.validate();
    const std::vector<PatientStudy> cohort = load_cohort(data);
    check_cohort_shape(cfg.model, cohort);

    CvOptions options;
    options.permute_labels = permute;
    const CvResult result =
        cross_validate(cohort, k, cfg.model, cfg.train, options);

    const fs::path run_dir =
        fs::path(out) / ("cv-" + std::to_string(cfg.train.seed));
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    if (ec) throw IoError("cannot create " + run_dir.string() + ": " + ec.message());

    write_text(run_dir / "report.json", report_json(result.report));
    write_text(run_dir / "report.txt", report_table(result.report));
    write_text(run_dir / "config.cfg", cfg.to_text());
    for (std::size_t f = 0; f < result.histories.size(); ++f)
        write_text(run_dir / ("fold_" + std::to_string(f + 1) + "_history.csv"),
                   history_csv(result.histories[f]));

    std::fputs(report_table(result.report).c_str(), stdout);
    std::printf("report: %s\n", (run_dir / "report.json").string().c_str());
    return 0;
}

int cmd_gradcheck(bool inject_conv_bug) {
    testhooks::conv_backward_bug = inject_conv_bug;
    const std::vector<GradCheckRow> rows = gradcheck_suite();
    std::fputs(gradcheck_table(rows).c_str(), stdout);
    int failed = 0;
    for (const auto& r : rows) failed += r.pass ? 0 : 1;
    if (failed == 0) {
        std::printf("all %zu checks passed\n", rows.size());
        return 0;
    }
    std::printf("%d of %zu checks failed\n", failed, rows.size());
    return 1;
}

int cmd_attn_export(const std::string& model_path, const std::string& study_path,
                    const std::string& out, const CommonOptions& common) {
    std::string config_file = common.config_file;
    if (config_file.empty() && common.preset.empty()) {
        // a training run leaves its config next to the checkpoint
        const fs::path sibling = fs::path(model_path).parent_path() / "config.cfg";
        if (fs::exists(sibling)) config_file = sibling.string();
    }
    RunConfig cfg = resolve_run_config(config_file, common.preset, common.sets);
    cfg.model.validate();
    if (!cfg.model.attention_enabled)
        throw ArgumentError(
            "attention export needs an attention model "
            "(model.attention_enabled = false in this config)");

    SCANet model(cfg.model, 0);
    load_checkpoint(model_path, model.parameters());

    const PatientStudy study = load_study(study_path);
    check_cohort_shape(cfg.model, {study});

    AttentionRecord record;
    Tensor probs;
    {
        NoGradGuard ng;
        probs = model.forward(study_tensor(study), &record);
    }

    const fs::path dir = fs::path(out) / ("attn-" + study.id);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    const int t = record.token_count;
    int bad_rows = 0;
    auto check_rows = [&bad_rows](const std::vector<float>& values, int rows,
                                  int cols) {
        for (int r = 0; r < rows; ++r) {
            double s = 0.0;
            for (int c = 0; c < cols; ++c)
                s += values[static_cast<std::size_t>(r) * cols + c];
            if (std::fabs(s - 1.0) > 1e-5) ++bad_rows;
        }
    };

    int sat_files = 0;
    for (std::size_t s = 0; s < record.sat_maps.size(); ++s)
        for (std::size_t l = 0; l < record.sat_maps[s].size(); ++l)
            for (std::size_t h = 0; h < record.sat_maps[s][l].size(); ++h) {
                const auto& map = record.sat_maps[s][l][h];
                check_rows(map, t, t);
                const std::string stem = "sat_s" + std::to_string(s) + "_l" +
                                         std::to_string(l) + "_h" +
                                         std::to_string(h);
                write_text(dir / (stem + ".csv"), csv_matrix(map, t, t));
                write_pgm(dir / (stem + ".pgm"), map, t, t);
                ++sat_files;
            }

    for (std::size_t g = 0; g < record.cat_maps.size(); ++g) {
        const auto& weights = record.cat_maps[g];
        check_rows(weights, 1, static_cast<int>(weights.size()));
        write_text(dir / ("cat_g" + std::to_string(g) + ".csv"),
                   csv_matrix(weights, 1, static_cast<int>(weights.size())));
    }

    std::printf("class probabilities: p0=%.6f p1=%.6f\n",
                static_cast<double>(probs.data()[0]),
                static_cast<double>(probs.data()[1]));
    std::printf("wrote %d attention maps and %zu importance vectors to %s\n",
                sat_files, record.cat_maps.size(), dir.string().c_str());
    if (bad_rows > 0) {
        std::fprintf(stderr,
                     "verification failure: %d attention rows deviate from "
                     "sum 1 by more than 1e-5\n",
                     bad_rows);
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stroke recanalization prediction pipeline"};
    app.require_subcommand(1);
    bool single_thread = false;

    auto add_single_thread = [&single_thread](CLI::App* cmd) {
        cmd->add_flag("--single-thread", single_thread,
                      "force deterministic single-threaded execution (this "
                      "build always runs single-threaded; the flag pins the "
                      "contract)");
    };
    add_single_thread(&app);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "synthesize a labeled cohort");
    int gen_n = 0;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    bool gen_toy = false, gen_paper = false;
    CommonOptions gen_common;
    gen->add_option("--n", gen_n, "number of studies")->required();
    auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_flag("--toy", gen_toy, "8 x 32 x 32 studies (default)");
    gen->add_flag("--paper-scale", gen_paper, "26 x 224 x 224 studies");
    gen_common.attach(gen, false);
    add_single_thread(gen);

    // train
    auto* tr = app.add_subcommand("train", "train one model on a cohort");
    std::string tr_data, tr_out;
    CommonOptions tr_common;
    tr->add_option("--data", tr_data, "cohort manifest.json")->required();
    tr->add_option("--out", tr_out, "artifact directory")->required();
    tr_common.attach(tr, true);
    add_single_thread(tr);

    // cv
    auto* cv = app.add_subcommand("cv", "stratified k-fold cross-validation");
    std::string cv_data, cv_out;
    int cv_k = 5;
    bool cv_permute = false;
    CommonOptions cv_common;
    cv->add_option("--data", cv_data, "cohort manifest.json")->required();
    cv->add_option("--k", cv_k, "number of folds (default 5)");
    cv->add_option("--out", cv_out, "artifact directory")->required();
    cv->add_flag("--permute-labels", cv_permute,
                 "shuffle labels once before splitting (null-signal control)");
    cv_common.attach(cv, true);
    add_single_thread(cv);

    // gradcheck
    auto* gc = app.add_subcommand(
        "gradcheck", "finite-difference check of every op and a tiny model");
    bool gc_inject = false;
    gc->add_flag("--inject-conv-bug", gc_inject)->group("");  // negative control
    add_single_thread(gc);

    // attn-export
    auto* ax = app.add_subcommand("attn-export",
                                  "export attention maps for one study");
    std::string ax_model, ax_study, ax_out;
    CommonOptions ax_common;
    ax->add_option("--model", ax_model, "checkpoint (.sckp)")
        ->required()
        ->check(CLI::ExistingFile);
    ax->add_option("--study", ax_study, "study file (.scv1)")
        ->required()
        ->check(CLI::ExistingFile);
    ax->add_option("--out", ax_out, "output directory")->required();
    ax_common.attach(ax, false);
    add_single_thread(ax);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            if (gen_toy && gen_paper)
                throw ArgumentError("--toy and --paper-scale are exclusive");
            if (gen_paper && gen_common.preset.empty())
                gen_common.preset = "paper-scale";
            if (gen_toy && gen_common.preset.empty()) gen_common.preset = "toy";
            return cmd_gen_data(gen_n, gen_seed_opt->count() > 0, gen_seed,
                                gen_out, gen_common);
        }
        if (tr->parsed()) return cmd_train(tr_data, tr_out, tr_common);
        if (cv->parsed())
            return cmd_cv(cv_data, cv_k, cv_permute, cv_out, cv_common);
        if (gc->parsed()) return cmd_gradcheck(gc_inject);
        if (ax->parsed())
            return cmd_attn_export(ax_model, ax_study, ax_out, ax_common);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
