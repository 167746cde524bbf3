#ifndef BABYSEG_ENGINE_HPP
#define BABYSEG_ENGINE_HPP

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "babyseg/augment.hpp"
#include "babyseg/config.hpp"
#include "babyseg/core_ops.hpp"
#include "babyseg/corrupt.hpp"
#include "babyseg/io.hpp"
#include "babyseg/nifti.hpp"
#include "babyseg/synth.hpp"

namespace babyseg {

// A session with its volumes in memory. All inputs must be co-registered;
// load_session checks affines against the label map within 1e-4.
struct LoadedSession {
    std::string id;
    LabelMap labels;
    std::vector<Volume> images;
};

inline LoadedSession load_session(const Session& s, const LabelProtocol& protocol = babyseg_protocol()) {
    LoadedSession out;
    out.id = s.id;
    out.labels = read_labelmap(s.label_path, protocol);
    for (const auto& p : s.image_paths) {
        Volume v = read_volume(p);
        if (v.shape != out.labels.shape)
            throw DataError("session '" + s.id + "': image '" + p + "' shape differs from label map");
        for (int i = 0; i < 16; ++i)
            if (std::abs(v.affine.m[std::size_t(i)] - out.labels.affine.m[std::size_t(i)]) > 1e-4)
                throw DataError("session '" + s.id + "': image '" + p + "' is not co-registered");
        out.images.push_back(std::move(v));
    }
    return out;
}

// One emitted training example: n corrupted channels, the masked label map,
// and the full parameter trace.
struct TrainingSample {
    GroupBatch channels;
    LabelMap labels;
    nlohmann::json trace;
    std::string session_id;
    std::uint64_t seed = 0;
};

inline LabelMap strip_transients(const LabelMap& lm) {
    LabelMap out = lm;
    for (auto& id : out.data)
        if (is_transient_label(id)) id = 0;
    return out;
}

// World centroid of the foreground labels; falls back to the FOV center for
// an empty map. Used to keep the anatomy centered on the working grid.
inline Vec3 foreground_center(const LabelMap& lm) {
    double sx = 0, sy = 0, sz = 0;
    std::size_t count = 0;
    std::size_t i = 0;
    for (int x = 0; x < lm.shape[0]; ++x)
        for (int y = 0; y < lm.shape[1]; ++y)
            for (int z = 0; z < lm.shape[2]; ++z, ++i)
                if (lm.data[i] != 0) {
                    sx += x;
                    sy += y;
                    sz += z;
                    ++count;
                }
    if (count == 0) return lm.world_center();
    return transform_point(lm.affine,
                           {sx / double(count), sy / double(count), sz / double(count)});
}

// Full data-engine pipeline for one sample: resample to the working grid,
// apply the sampled spatial transform with blobs and flipping, plan channels,
// synthesize or remap each channel, corrupt, and mask. A pure function of
// (session contents, config, seed).
inline TrainingSample generate_sample(const LoadedSession& session, const EngineConfig& cfg,
                                      std::uint64_t seed) {
    cfg.validate();
    const Rng root(seed);

    // working grid, centered on the anatomy
    const Vec3 center = foreground_center(session.labels);
    const Mat4 target_affine = grid_affine(cfg.grid, center);
    LabelMap lm = resample(session.labels, cfg.grid.shape, cfg.grid.spacing, target_affine);
    GroupBatch reals;
    for (const auto& img : session.images)
        reals.push_back(resample(img, cfg.grid.shape, cfg.grid.spacing, target_affine, Interp::Trilinear));

    nlohmann::json trace;
    trace["schema_version"] = 1;
    trace["seed"] = seed;
    trace["session"] = session.id;

    // spatial transform: gates first, then parameters
    Rng spatial_rng = root.split(1);
    const bool g_translate = spatial_rng.bernoulli(cfg.translation_mm.p);
    const bool g_rotate = spatial_rng.bernoulli(cfg.rotation_deg.p);
    const bool g_scale = spatial_rng.bernoulli(cfg.scaling.p);
    const bool g_shear = spatial_rng.bernoulli(cfg.shear.p);
    AffineParams params = sample_affine(spatial_rng, cfg);
    if (!g_translate) params.translation_mm = {0, 0, 0};
    if (!g_rotate) params.rotation_deg = {0, 0, 0};
    if (!g_scale) params.scale = {1, 1, 1};
    if (!g_shear) params.shear = {1, 1, 1};

    SpatialTransform transform;
    transform.affine = params.matrix(lm.world_center());
    const bool g_warp = spatial_rng.bernoulli(cfg.warp_mm.p);
    nlohmann::json warp_record = {{"applied", false}};
    if (g_warp) {
        const WarpSample warp = sample_warp(spatial_rng, cfg.grid.shape, cfg);
        warp_record = {{"applied", true},
                       {"magnitude_mm", warp.magnitude_mm},
                       {"control_points", warp.control_points}};
        transform.warp = warp.field;
    }
    trace["spatial"] = {{"translation", {{"applied", g_translate}, {"value", params.translation_mm}}},
                        {"rotation", {{"applied", g_rotate}, {"value", params.rotation_deg}}},
                        {"scaling", {{"applied", g_scale}, {"value", params.scale}}},
                        {"shear", {{"applied", g_shear}, {"value", params.shear}}},
                        {"warp", warp_record}};

    auto [vols, warped_lm] = apply_transform(reals, lm, transform);
    lm = std::move(warped_lm);

    // background blobs
    Rng blob_rng = root.split(2);
    auto [blob_lm, blob_params] = synth_blobs(blob_rng, lm, cfg);
    lm = std::move(blob_lm);
    trace["blobs"] = {{"applied", blob_params.applied}};
    if (blob_params.applied) {
        trace["blobs"]["count"] = blob_params.count;
        trace["blobs"]["threshold"] = blob_params.threshold;
        trace["blobs"]["control_points"] = blob_params.control_points;
    }

    // lateral flip
    Rng flip_rng = root.split(3);
    const bool flipped = flip_lateral(vols, lm, flip_rng, cfg.flip.p);
    trace["flip"] = {{"applied", flipped}};

    // channel plan
    Rng plan_rng = root.split(4);
    const ChannelPlan plan = plan_channels(plan_rng, int(vols.size()), cfg);
    trace["plan"] = {{"n", plan.n}, {"n_real", plan.n_real}, {"sources", plan.real_sources}};

    // synthesize / remap, then corrupt
    TrainingSample sample;
    sample.session_id = session.id;
    sample.seed = seed;
    std::vector<BrainMask> masks;
    auto channel_records = nlohmann::json::array();
    for (int c = 0; c < plan.n; ++c) {
        Rng synth_rng = root.split(100 + std::uint64_t(c));
        Volume chan;
        nlohmann::json rec;
        if (c < plan.n_real) {
            const int src = plan.real_sources[std::size_t(c)];
            auto [remapped, rp] = remap_real(vols[std::size_t(src)], synth_rng, cfg);
            chan = std::move(remapped);
            rec = {{"kind", "real"}, {"source", src}, {"lookup", {{"applied", rp.applied}}}};
            if (rp.applied) rec["lookup"]["control_points"] = rp.control_points;
        } else {
            chan = synth_from_labels(lm, synth_rng, cfg);
            rec = {{"kind", "synth"}};
        }
        auto [corrupted, mask, ctrace] = corrupt_channel(chan, lm, root.split(200 + std::uint64_t(c)), cfg);
        rec["stream"] = ctrace.stream_seed;
        rec["steps"] = ctrace.steps;
        channel_records.push_back(std::move(rec));
        masks.push_back(std::move(mask));
        sample.channels.push_back(std::move(corrupted));
    }
    trace["channels"] = std::move(channel_records);

    // aggregate mask joins the per-channel skull strips
    const BrainMask agg = aggregate_mask(masks);
    lm = mask_labels(lm, agg);
    if (!cfg.keep_transients) lm = strip_transients(lm);
    sample.labels = std::move(lm);
    sample.trace = std::move(trace);
    return sample;
}

// Checks the structural contract of an emitted sample.
inline void validate_sample(const TrainingSample& s, const EngineConfig& cfg) {
    if (s.channels.empty()) throw DataError("sample: no channels");
    if (int(s.channels.size()) < int(cfg.channel_count.lo) ||
        int(s.channels.size()) > int(cfg.channel_count.hi))
        throw DataError("sample: channel count outside configured range");
    for (const auto& chan : s.channels) {
        if (!chan.same_geometry(s.labels, 1e-9)) throw DataError("sample: channel geometry mismatch");
        for (float v : chan.data)
            if (!(v >= 0.0f && v <= 1.0f)) throw DataError("sample: channel value outside [0, 1]");
    }
    for (std::uint32_t id : s.labels.data) {
        if (is_transient_label(id)) {
            if (!cfg.keep_transients) throw DataError("sample: unexpected transient label");
        } else if (!s.labels.protocol.contains(id)) {
            throw DataError("sample: label " + std::to_string(id) + " not in protocol");
        }
    }
}

// ---- dataset emission --------------------------------------------------------

inline std::uint64_t sample_seed(std::uint64_t master_seed, long index) {
    return Rng::mix(master_seed ^ Rng::mix(std::uint64_t(index) + 0x51ed2701ab7c3a9dull));
}

inline std::uint32_t payload_crc32(const Volume& v) {
    return std::uint32_t(::crc32(0, reinterpret_cast<const Bytef*>(v.data.data()),
                                 uInt(v.data.size() * sizeof(float))));
}

inline std::uint32_t payload_crc32(const LabelMap& lm) {
    return std::uint32_t(::crc32(0, reinterpret_cast<const Bytef*>(lm.data.data()),
                                 uInt(lm.data.size() * sizeof(std::uint32_t))));
}

struct EmitOptions {
    long count = 0;
    int jobs = 0; // 0 = hardware concurrency
    bool resume = true;
    std::function<void(long done, long total)> progress;
};

// Writes `count` samples (channels + label map + trace) under out_dir and a
// JSON-lines manifest. Deterministic for a fixed (sessions, config, seed)
// regardless of the worker count: sample i derives its own seed and session
// pick from the master seed and i alone. Reruns skip samples whose files
// still match their recorded checksums.
inline std::vector<ManifestEntry> emit_dataset(const std::vector<LoadedSession>& sessions,
                                               const EngineConfig& cfg, const std::string& out_dir,
                                               const EmitOptions& opt) {
    if (sessions.empty()) throw std::invalid_argument("emit_dataset: no sessions");
    if (!cfg.session_weights.empty() && cfg.session_weights.size() != sessions.size())
        throw DataError("emit_dataset: session_weights size does not match session count");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
    const std::uint64_t chash = config_hash(cfg);

    std::map<long, ManifestEntry> have;
    if (opt.resume && fs::exists(manifest_path)) {
        for (auto& e : load_manifest(manifest_path)) {
            if (e.config_hash != chash) continue; // config changed: regenerate
            bool ok = true;
            for (const auto& rel : e.files) {
                const fs::path p = fs::path(out_dir) / rel;
                if (!fs::exists(p)) {
                    ok = false;
                    break;
                }
                if (rel.find(".nii") == std::string::npos) continue;
                auto it = e.checksums.find(rel);
                if (it == e.checksums.end()) continue;
                try {
                    const auto img = read_image(p.string());
                    const std::uint32_t crc = std::holds_alternative<Volume>(img)
                                                  ? payload_crc32(std::get<Volume>(img))
                                                  : payload_crc32(std::get<LabelMap>(img));
                    if (crc != it->second) ok = false;
                } catch (const std::exception&) {
                    ok = false;
                }
                if (!ok) break;
            }
            if (ok) have.emplace(e.index, std::move(e));
        }
    }

    std::vector<long> todo;
    for (long i = 0; i < opt.count; ++i)
        if (!have.count(i)) todo.push_back(i);

    std::mutex mu;
    std::atomic<long> next{0};
    std::atomic<long> done{0};
    std::exception_ptr failure;

    auto worker = [&]() {
        for (;;) {
            const long t = next.fetch_add(1);
            if (t >= long(todo.size())) return;
            const long index = todo[std::size_t(t)];
            try {
                const std::uint64_t seed = sample_seed(cfg.master_seed, index);
                Rng pick = Rng(seed).split(99);
                std::size_t si = 0;
                if (cfg.session_weights.empty()) {
                    si = std::size_t(pick.uniform_int(0, int(sessions.size()) - 1));
                } else {
                    double total = 0.0;
                    for (double w : cfg.session_weights) total += w;
                    double u = pick.uniform(0.0, total);
                    while (si + 1 < sessions.size() && u >= cfg.session_weights[si]) {
                        u -= cfg.session_weights[si];
                        ++si;
                    }
                }
                TrainingSample s = generate_sample(sessions[si], cfg, seed);
                validate_sample(s, cfg);

                char dirname[32];
                std::snprintf(dirname, sizeof(dirname), "sample_%06ld", index);
                const fs::path sdir = fs::path(out_dir) / dirname;
                fs::create_directories(sdir);
                ManifestEntry e;
                e.index = index;
                e.seed = seed;
                e.session_id = s.session_id;
                e.config_hash = chash;
                for (std::size_t c = 0; c < s.channels.size(); ++c) {
                    char fname[32];
                    std::snprintf(fname, sizeof(fname), "chan%02zu.nii.gz", c);
                    const std::string rel = (fs::path(dirname) / fname).string();
                    write_volume(s.channels[c], (fs::path(out_dir) / rel).string());
                    e.files.push_back(rel);
                    e.checksums[rel] = payload_crc32(s.channels[c]);
                }
                const std::string lrel = (fs::path(dirname) / "labels.nii.gz").string();
                write_volume(s.labels, (fs::path(out_dir) / lrel).string());
                e.files.push_back(lrel);
                e.checksums[lrel] = payload_crc32(s.labels);
                const std::string trel = (fs::path(dirname) / "trace.json").string();
                save_json_file(s.trace, (fs::path(out_dir) / trel).string());
                e.files.push_back(trel);

                {
                    std::lock_guard<std::mutex> lock(mu);
                    have.emplace(index, std::move(e));
                }
                const long d = done.fetch_add(1) + 1;
                if (opt.progress) opt.progress(d, long(todo.size()));
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    int jobs = opt.jobs > 0 ? opt.jobs : int(std::thread::hardware_concurrency());
    jobs = std::max(1, std::min<int>(jobs, int(std::max<std::size_t>(todo.size(), 1))));
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);

    std::vector<ManifestEntry> entries;
    for (long i = 0; i < opt.count; ++i) {
        auto it = have.find(i);
        if (it != have.end()) entries.push_back(it->second);
    }
    save_manifest(entries, manifest_path);
    return entries;
}

} // namespace babyseg

#endif // BABYSEG_ENGINE_HPP
