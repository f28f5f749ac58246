// sauge: train, infer, evaluate, ablate, build-labels.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sauge/data.hpp"
#include "sauge/edge_eval.hpp"
#include "sauge/errors.hpp"
#include "sauge/granularity.hpp"
#include "sauge/png_io.hpp"
#include "sauge/trainer.hpp"

namespace fs = std::filesystem;
using namespace sauge;

namespace {

struct ConfigArgs {
    std::string file;
    std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
    cmd->add_option("-c,--config", a.file, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", a.overrides, "override one key (key=value), repeatable");
}

TrainConfig load_config(const ConfigArgs& a) {
    KeyValues kv = a.file.empty() ? KeyValues{} : KeyValues::load(a.file);
    for (const auto& o : a.overrides) kv.apply_override(o);
    return TrainConfig::from_key_values(kv);
}

std::vector<Sample> load_dataset(const std::string& source) {
    const DatasetManifest m = fs::is_directory(source) ? scan_dataset(source) : load_manifest(source);
    return load_samples(m);
}

std::vector<fs::path> png_files(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

TrainOptions train_options(const fs::path& out_dir, std::optional<FeatureCache>& cache) {
    fs::create_directories(out_dir);
    cache = FeatureCache::from_env();
    TrainOptions opts;
    opts.checkpoint_dir = out_dir;
    opts.log_path = out_dir / "train_log.jsonl";
    opts.cache = cache ? &*cache : nullptr;
    opts.on_step = [](const StepRecord& r) { std::cout << to_json_line(r) << '\n'; };
    return opts;
}

int run_train(const ConfigArgs& cfg_args, const std::string& data, const std::string& out, const std::string& resume,
              const std::string& switches) {
    const std::vector<Sample> samples = load_dataset(data);
    std::optional<FeatureCache> cache;
    const TrainOptions opts = train_options(out, cache);
    std::optional<Checkpoint> ckpt;
    if (!resume.empty()) {
        ckpt.emplace(load_checkpoint(resume));
    } else {
        const TrainConfig cfg = load_config(cfg_args);
        ckpt.emplace(make_checkpoint(cfg));
        std::ofstream(fs::path(out) / "config.txt") << cfg.to_key_values().serialize();
    }
    const TrainResult r = switches.empty() ? train(*ckpt, samples, opts)
                                           : ablate(*ckpt, AblationSwitches::parse(switches), samples, opts);
    std::cerr << "trained " << r.log.size() << " steps, epoch " << ckpt->epoch << "; checkpoint "
              << (r.last_checkpoint ? r.last_checkpoint->string() : "none") << '\n';
    return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& input, const std::string& out,
              std::optional<double> alpha, std::optional<int> candidates) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const auto provider = make_provider(ckpt.config.provider);
    const InferRequest req{alpha, candidates};
    const std::vector<fs::path> images = fs::is_directory(input) ? png_files(input) : std::vector<fs::path>{input};
    fs::create_directories(out);
    for (const auto& path : images) {
        const std::vector<ProbMap> maps = infer(ckpt, *provider, read_png_rgb(path), req);
        const std::vector<std::string> names = infer_file_names(path.stem().string(), req);
        for (std::size_t k = 0; k < maps.size(); ++k) write_png_gray(fs::path(out) / names[k], maps[k]);
        std::cerr << path.filename().string() << ": " << maps.size() << " map(s)\n";
    }
    return 0;
}

AnnotationSet load_annotations(const fs::path& dir) {
    AnnotationSet a;
    for (const auto& p : png_files(dir)) a.labels.push_back(read_png_mask(p));
    if (a.labels.empty()) throw LoadError("no annotation PNGs in " + dir.string());
    return a;
}

int run_evaluate(const std::string& pred_dir, const std::string& gt_dir, const EvalConfig& cfg, int candidates,
                 const std::string& out, const std::string& csv) {
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(gt_dir))
        if (e.is_directory()) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw LoadError("no annotation directories in " + gt_dir);

    std::vector<AnnotationSet> gts;
    std::vector<std::vector<ProbMap>> preds;
    for (const auto& id : ids) {
        gts.push_back(load_annotations(fs::path(gt_dir) / id));
        const InferRequest req{std::nullopt, candidates > 0 ? std::optional<int>(candidates) : std::nullopt};
        std::vector<ProbMap> maps;
        for (const auto& name : infer_file_names(id, req)) {
            const fs::path p = fs::path(pred_dir) / name;
            if (!fs::exists(p)) throw LoadError("missing prediction " + p.string());
            maps.push_back(read_png_gray(p));
        }
        preds.push_back(std::move(maps));
    }
    EvalReport report;
    if (candidates > 0) {
        report = best_match_evaluate(preds, gts, cfg);
    } else {
        std::vector<ProbMap> single;
        for (auto& m : preds) single.push_back(std::move(m.front()));
        report = evaluate(single, gts, cfg);
    }
    const std::string json = report_to_json(report);
    if (out.empty())
        std::cout << json << '\n';
    else
        std::ofstream(out) << json << '\n';
    if (!csv.empty()) std::ofstream(csv) << report_to_csv(report);
    std::fprintf(stderr, "%zu images  ODS %.4f  OIS %.4f  AP %.4f\n", ids.size(), report.ods_f, report.ois_f, report.ap);
    return 0;
}

int run_build_labels(const std::string& data, const std::string& out, double zeta, std::uint64_t seed) {
    const std::vector<Sample> samples = load_dataset(data);
    fs::create_directories(out);
    for (const auto& s : samples) {
        const GranularityLabels l = build_ladder(s.annotations);
        const ConsensusSample c = sample_consensus(s.annotations, zeta, seed);
        const fs::path base = fs::path(out) / s.id;
        write_png_mask(base.string() + "_coarse.png", l.coarse);
        write_png_mask(base.string() + "_medium.png", l.medium);
        write_png_mask(base.string() + "_fine.png", l.fine);
        write_png_mask(base.string() + "_consensus.png", c.label);
        write_png_gray(base.string() + "_soft.png", c.soft);
    }
    std::cerr << "wrote labels for " << samples.size() << " image(s) to " << out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAUGE multi-granularity edge detection"};
    app.require_subcommand(1);

    ConfigArgs train_cfg, ablate_cfg;
    std::string data, out, resume, switches;
    auto* train_cmd = app.add_subcommand("train", "train a model from a manifest or dataset directory");
    add_config_options(train_cmd, train_cfg);
    train_cmd->add_option("--data", data, "manifest file or dataset directory")->required();
    train_cmd->add_option("--out", out, "output directory for checkpoints and the step log")->required();
    train_cmd->add_option("--resume", resume, "continue from a checkpoint (its configuration is used)")
        ->check(CLI::ExistingFile);

    auto* ablate_cmd = app.add_subcommand("ablate", "train with loss terms switched off");
    add_config_options(ablate_cmd, ablate_cfg);
    ablate_cmd->add_option("--data", data, "manifest file or dataset directory")->required();
    ablate_cmd->add_option("--out", out, "output directory")->required();
    ablate_cmd->add_option("--switches", switches, "comma list of soc_off, guide_off, differ_off")->required();

    std::string checkpoint, input;
    std::optional<double> alpha;
    std::optional<int> candidates;
    auto* infer_cmd = app.add_subcommand("infer", "predict edge maps for one image or a directory of PNGs");
    infer_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("--input", input, "PNG image or directory")->required()->check(CLI::ExistingPath);
    infer_cmd->add_option("--out", out)->required();
    auto* alpha_opt = infer_cmd->add_option("--alpha", alpha, "granularity in [0, 1]");
    infer_cmd->add_option("--candidates", candidates, "emit an M-map granularity sweep")->excludes(alpha_opt);

    std::string pred_dir, gt_dir, csv;
    EvalConfig eval_cfg;
    int eval_candidates = 0;
    bool no_nms = false;
    auto* eval_cmd = app.add_subcommand("evaluate", "ODS/OIS/AP of predictions against annotations");
    eval_cmd->add_option("--pred-dir", pred_dir)->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--gt-dir", gt_dir, "one sub-directory of annotation PNGs per image id")
        ->required()
        ->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--tolerance", eval_cfg.tolerance, "match radius as a fraction of the diagonal")
        ->capture_default_str();
    eval_cmd->add_option("--thresholds", eval_cfg.thresholds)->capture_default_str();
    eval_cmd->add_option("--workers", eval_cfg.workers)->capture_default_str();
    eval_cmd->add_option("--candidates", eval_candidates, "best-match over <id>_aKK.png candidates");
    eval_cmd->add_flag("--no-nms", no_nms, "score maps as given, without thinning");
    eval_cmd->add_option("--out", out, "report JSON (stdout if omitted)");
    eval_cmd->add_option("--csv", csv, "precision/recall curve");

    double zeta = 0.2;
    std::uint64_t seed = 0;
    auto* labels_cmd = app.add_subcommand("build-labels", "write granularity ladder and consensus PNGs");
    labels_cmd->add_option("--data", data, "manifest file or dataset directory")->required();
    labels_cmd->add_option("--out", out)->required();
    labels_cmd->add_option("--zeta", zeta)->capture_default_str();
    labels_cmd->add_option("--seed", seed)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) return run_train(train_cfg, data, out, resume, "");
        if (*ablate_cmd) return run_train(ablate_cfg, data, out, "", switches);
        if (*infer_cmd) return run_infer(checkpoint, input, out, alpha, candidates);
        if (*eval_cmd) {
            eval_cfg.apply_nms = !no_nms;
            return run_evaluate(pred_dir, gt_dir, eval_cfg, eval_candidates, out, csv);
        }
        if (*labels_cmd) return run_build_labels(data, out, zeta, seed);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << '\n';
        return 2;
    } catch (const LoadError& e) {
        std::cerr << "load error: " << e.what() << '\n';
        return 3;
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << '\n';
        return 4;
    }
    return 1;
}
