// Command-line front end for the training-data engine and the group
// segmentation network. One binary, subcommands per pipeline stage.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
// Machine-readable results go to stdout as JSON; progress and logs to stderr.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "babyseg/config.hpp"
#include "babyseg/core_ops.hpp"
#include "babyseg/engine.hpp"
#include "babyseg/gmm.hpp"
#include "babyseg/inspect.hpp"
#include "babyseg/io.hpp"
#include "babyseg/nifti.hpp"
#include "babyseg/toy.hpp"
#include "babyseg/train.hpp"
#include "babyseg/weights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace babyseg;

namespace {

EngineConfig load_config_or_default(const std::string& path, bool strict) {
    if (path.empty()) return EngineConfig{};
    return load_config(path, strict);
}

// ---- synth -------------------------------------------------------------------

struct SynthArgs {
    std::string config, sessions, out;
    long count = 1;
    std::optional<std::uint64_t> seed;
    int jobs = 0;
    bool strict = true;
};

int run_synth(const SynthArgs& a) {
    EngineConfig cfg = load_config_or_default(a.config, a.strict);
    if (a.seed) cfg.master_seed = *a.seed; // flag overrides the config value
    const auto session_list = load_sessions(a.sessions);
    if (session_list.empty()) {
        std::cerr << "error: empty session list\n";
        return 1;
    }
    std::vector<LoadedSession> sessions;
    for (const auto& s : session_list) sessions.push_back(load_session(s));
    EmitOptions opt;
    opt.count = a.count;
    opt.jobs = a.jobs;
    opt.progress = [](long done, long total) {
        std::cerr << "\rsample " << done << "/" << total << std::flush;
        if (done == total) std::cerr << "\n";
    };
    const auto entries = emit_dataset(sessions, cfg, a.out, opt);
    json out;
    out["manifest"] = (fs::path(a.out) / "manifest.jsonl").string();
    out["samples"] = entries.size();
    out["config_hash"] = config_hash(cfg);
    std::cout << out.dump(2) << "\n";
    return 0;
}

// ---- remap -------------------------------------------------------------------

int run_remap(const std::string& in, const std::string& table, const std::string& out,
              const std::string& protocol_path) {
    const LabelProtocol proto =
        protocol_path.empty() ? babyseg_protocol() : load_protocol(protocol_path);
    LabelMap lm = read_labelmap(in, LabelProtocol{}); // raw IDs, validated after remap
    const LabelMergeTable t = load_merge_table(table);
    LabelMap remapped = remap_labels(lm, t, proto);
    write_volume(remapped, out);
    std::cerr << "remapped " << in << " -> " << out << "\n";
    return 0;
}

// ---- gmm-labels ---------------------------------------------------------------

int run_gmm_labels(const std::string& image, const std::string& labels, int k,
                   const std::string& out, std::uint64_t seed) {
    const Volume img = read_volume(image);
    const LabelMap lm = read_labelmap(labels);
    Rng rng(seed);
    LabelMap completed = fit_nonbrain_gmm(img, lm, k, rng);
    write_volume(completed, out);
    std::size_t transient = 0;
    for (auto v : completed.data) transient += v >= kNonBrainLabelBase;
    json report;
    report["non_brain_voxels"] = transient;
    report["k"] = k;
    std::cout << report.dump(2) << "\n";
    return 0;
}

// ---- train-toy ----------------------------------------------------------------

struct TrainArgs {
    std::string config, sessions, protocol_path, out_weights, curve;
    bool toy = false;
    long steps = 2000;
    int grid = 0;
    int levels = kToyLevels;
    int filters = kToyFilters;
    double lr = 1e-4;
    long lr_drop_step = 0;
    std::optional<std::uint64_t> seed;
    bool strict = true;
};

int run_train_toy(const TrainArgs& a) {
    std::vector<LoadedSession> sessions;
    LabelProtocol proto;
    EngineConfig cfg;
    if (a.toy) {
        const int extent = a.grid > 0 ? a.grid : 48;
        sessions.push_back(make_toy_session(extent));
        proto = toy_protocol();
        cfg = a.config.empty() ? toy_config(extent) : load_config(a.config, a.strict);
    } else {
        if (a.sessions.empty()) {
            std::cerr << "error: need --sessions or --toy\n";
            return 1;
        }
        proto = a.protocol_path.empty() ? babyseg_protocol() : load_protocol(a.protocol_path);
        cfg = load_config_or_default(a.config, a.strict);
        for (const auto& s : load_sessions(a.sessions)) sessions.push_back(load_session(s, proto));
    }
    if (a.grid > 0) cfg.grid.shape = {a.grid, a.grid, a.grid};
    if (a.seed) cfg.master_seed = *a.seed;

    GroupUNet net(a.levels, a.filters, int(proto.size()), cfg.master_seed ^ 0xbabe5e6ull);
    TrainOptions opt;
    opt.steps = a.steps;
    opt.lr = a.lr;
    opt.lr_drop_step = a.lr_drop_step;
    opt.on_step = [&](const CurveRow& row) {
        if ((row.step + 1) % 25 == 0 || row.step + 1 == a.steps)
            std::cerr << "\rstep " << row.step + 1 << "/" << a.steps << " loss " << row.loss
                      << " val_dice " << row.val_dice << "   " << std::flush;
    };
    const auto curve = train_toy(sessions, cfg, net, proto, opt);
    std::cerr << "\n";
    if (!a.out_weights.empty()) save_weights(net, proto, cfg.grid, a.out_weights);
    if (!a.curve.empty()) save_curve_csv(curve, a.curve);
    json out;
    out["steps"] = curve.size();
    if (!curve.empty()) {
        out["final_loss"] = curve.back().loss;
        if (!std::isnan(curve.back().val_dice)) out["final_val_dice"] = curve.back().val_dice;
    }
    if (!a.out_weights.empty()) out["weights"] = a.out_weights;
    if (!a.curve.empty()) out["curve"] = a.curve;
    std::cout << out.dump(2) << "\n";
    return 0;
}

// ---- segment ------------------------------------------------------------------

int run_segment(const std::string& weights, const std::vector<std::string>& inputs,
                const std::string& out, int grid_extent) {
    LoadedNet loaded = load_weights(weights);
    GridSpec grid = loaded.grid;
    if (grid.shape[0] <= 0) grid = GridSpec{{192, 192, 192}, {0.7, 0.7, 0.7}, "LIA"};
    if (grid_extent > 0) grid.shape = {grid_extent, grid_extent, grid_extent};
    std::vector<Volume> vols;
    for (const auto& p : inputs) vols.push_back(read_volume(p));
    const LabelMap seg = segment(loaded.net, vols, loaded.protocol, grid);
    write_volume(seg, out);
    std::cerr << "segmented " << inputs.size() << " input(s) -> " << out << "\n";
    return 0;
}

// ---- dice ---------------------------------------------------------------------

int run_dice(const std::string& pred, const std::string& truth, const std::string& merge,
             const std::vector<std::uint32_t>& label_ids) {
    LabelMap a = read_labelmap(pred, LabelProtocol{});
    LabelMap b = read_labelmap(truth, LabelProtocol{});
    if (!merge.empty()) {
        const LabelMergeTable t = load_merge_table(merge);
        a = remap_labels(a, t, babyseg_protocol());
        b = remap_labels(b, t, babyseg_protocol());
    }
    std::vector<std::uint32_t> ids = label_ids;
    if (ids.empty()) {
        // default: all foreground IDs present in either map
        std::set<std::uint32_t> seen;
        for (auto v : a.data) seen.insert(v);
        for (auto v : b.data) seen.insert(v);
        seen.erase(0);
        ids.assign(seen.begin(), seen.end());
    }
    const auto scores = dice_overlap(a, b, ids);
    json out;
    for (const auto& [id, s] : scores) out["per_label"][std::to_string(id)] = s;
    out["mean"] = mean_dice(scores);
    std::cout << out.dump(2) << "\n";
    return 0;
}

// ---- inspect ------------------------------------------------------------------

int run_inspect(const std::string& manifest, const std::string& trace_path) {
    TraceStats stats;
    long traces = 0;
    if (!trace_path.empty()) {
        collect_trace_stats(load_json_file(trace_path), stats);
        ++traces;
    } else {
        const auto entries = load_manifest(manifest);
        const fs::path base = fs::path(manifest).parent_path();
        for (const auto& e : entries)
            for (const auto& rel : e.files)
                if (rel.size() > 5 && rel.substr(rel.size() - 5) == ".json") {
                    try {
                        collect_trace_stats(load_json_file((base / rel).string()), stats);
                        ++traces;
                    } catch (const nlohmann::json::exception& ex) {
                        throw DataError(std::string("trace '") + rel + "': " + ex.what());
                    }
                }
    }
    std::cout << trace_stats_to_json(stats, traces).dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"BabySeg training-data engine and group segmentation network"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic training dataset");
    cmd_synth->add_option("--config", synth.config, "Engine config JSON (defaults to the built-in table)");
    cmd_synth->add_option("--sessions", synth.sessions, "Session list JSON")->required();
    cmd_synth->add_option("--count", synth.count, "Number of samples")->default_val(1);
    cmd_synth->add_option("--seed", synth.seed, "Master seed (overrides the config)");
    cmd_synth->add_option("--out", synth.out, "Output directory")->required();
    cmd_synth->add_option("--jobs", synth.jobs, "Worker threads (0 = hardware)")->default_val(0);
    cmd_synth->add_flag("--lenient", [&synth](std::int64_t) { synth.strict = false; },
                        "Warn on unknown config fields instead of failing");

    std::string remap_in, remap_table, remap_out, remap_protocol;
    auto* cmd_remap = app.add_subcommand("remap", "Remap a label map through a merge table");
    cmd_remap->add_option("--in", remap_in, "Input label map (NIfTI)")->required();
    cmd_remap->add_option("--table", remap_table, "Merge table JSON")->required();
    cmd_remap->add_option("--out", remap_out, "Output label map")->required();
    cmd_remap->add_option("--protocol", remap_protocol, "Target protocol JSON (default: built-in)");

    std::string gmm_image, gmm_labels, gmm_out;
    int gmm_k = 6;
    std::uint64_t gmm_seed = 0;
    auto* cmd_gmm = app.add_subcommand("gmm-labels", "Complete a label map with non-brain GMM labels");
    cmd_gmm->add_option("--image", gmm_image, "Intensity image (NIfTI)")->required();
    cmd_gmm->add_option("--labels", gmm_labels, "Brain label map (NIfTI)")->required();
    cmd_gmm->add_option("--k", gmm_k, "Mixture components")->default_val(6);
    cmd_gmm->add_option("--out", gmm_out, "Output label map")->required();
    cmd_gmm->add_option("--seed", gmm_seed, "Restart seed")->default_val(0);

    TrainArgs train;
    auto* cmd_train = app.add_subcommand("train-toy", "Desk-scale training loop");
    cmd_train->add_option("--config", train.config, "Engine config JSON");
    cmd_train->add_option("--sessions", train.sessions, "Session list JSON");
    cmd_train->add_flag("--toy", train.toy, "Use the built-in procedural 48^3 session");
    cmd_train->add_option("--protocol", train.protocol_path, "Label protocol JSON");
    cmd_train->add_option("--steps", train.steps, "Training steps")->default_val(2000);
    cmd_train->add_option("--grid", train.grid, "Isotropic working-grid extent (overrides config)");
    cmd_train->add_option("--levels", train.levels, "U-Net levels")->default_val(kToyLevels);
    cmd_train->add_option("--filters", train.filters, "Convolution filters")->default_val(kToyFilters);
    cmd_train->add_option("--lr", train.lr, "Learning rate")->default_val(1e-4);
    cmd_train->add_option("--lr-drop-step", train.lr_drop_step,
                          "Step at which the rate drops to 1e-5 (0 = never)");
    cmd_train->add_option("--seed", train.seed, "Master seed (overrides the config)");
    cmd_train->add_option("--out-weights", train.out_weights, "Weights output path");
    cmd_train->add_option("--curve", train.curve, "Loss curve CSV path");

    std::string seg_weights, seg_out;
    std::vector<std::string> seg_inputs;
    int seg_grid = 0;
    auto* cmd_seg = app.add_subcommand("segment", "Segment one or more co-registered scans");
    cmd_seg->add_option("--weights", seg_weights, "Weights file")->required();
    cmd_seg->add_option("inputs", seg_inputs, "Input volumes (1..n)")->required()->expected(-1);
    cmd_seg->add_option("--out", seg_out, "Output label map")->required();
    cmd_seg->add_option("--grid", seg_grid, "Isotropic working-grid extent (overrides weights)");

    std::string dice_pred, dice_truth, dice_merge;
    std::vector<std::uint32_t> dice_labels;
    auto* cmd_dice = app.add_subcommand("dice", "Per-label Dice between two label maps");
    cmd_dice->add_option("--pred", dice_pred, "Predicted label map")->required();
    cmd_dice->add_option("--truth", dice_truth, "Reference label map")->required();
    cmd_dice->add_option("--merge", dice_merge, "Merge table applied to both maps before scoring");
    cmd_dice->add_option("--labels", dice_labels, "Label IDs to score (default: all foreground)");

    std::string inspect_manifest, inspect_trace;
    auto* cmd_inspect = app.add_subcommand("inspect", "Summarize sampled parameters for range audits");
    auto* opt_manifest = cmd_inspect->add_option("--manifest", inspect_manifest, "Dataset manifest");
    auto* opt_trace = cmd_inspect->add_option("--trace", inspect_trace, "Single trace JSON");
    opt_manifest->excludes(opt_trace);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e); // prints the message or help text
        return code == 0 ? 0 : 1;     // usage errors exit 1
    }

    try {
        if (cmd_synth->parsed()) return run_synth(synth);
        if (cmd_remap->parsed()) return run_remap(remap_in, remap_table, remap_out, remap_protocol);
        if (cmd_gmm->parsed()) return run_gmm_labels(gmm_image, gmm_labels, gmm_k, gmm_out, gmm_seed);
        if (cmd_train->parsed()) return run_train_toy(train);
        if (cmd_seg->parsed()) return run_segment(seg_weights, seg_inputs, seg_out, seg_grid);
        if (cmd_dice->parsed()) return run_dice(dice_pred, dice_truth, dice_merge, dice_labels);
        if (cmd_inspect->parsed()) {
            if (inspect_manifest.empty() && inspect_trace.empty()) {
                std::cerr << "error: inspect needs --manifest or --trace\n";
                return 1;
            }
            return run_inspect(inspect_manifest, inspect_trace);
        }
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
