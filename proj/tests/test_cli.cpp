#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include <json.hpp>

#include "babyseg/core_ops.hpp"
#include "babyseg/engine.hpp"
#include "babyseg/io.hpp"
#include "babyseg/nifti.hpp"
#include "babyseg/toy.hpp"
#include "babyseg/weights.hpp"

using namespace babyseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliFixture {
    fs::path dir;

    CliFixture() {
        dir = fs::temp_directory_path() / ("babyseg_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~CliFixture() { fs::remove_all(dir); }

    std::string file(const std::string& name) const { return (dir / name).string(); }

    int run(const std::string& args, const std::string& tag = "out") const {
        const std::string cmd = std::string(BABYSEG_CLI) + " " + args + " > " + file(tag + ".stdout") +
                                " 2> " + file(tag + ".stderr");
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    json stdout_json(const std::string& tag = "out") const {
        std::ifstream in(file(tag + ".stdout"));
        json j;
        in >> j;
        return j;
    }

    // writes a tiny session (label map + one scan) and the session list
    std::string write_session(int extent = 12) const {
        LoadedSession s = make_toy_session(extent);
        write_volume(s.labels, file("labels.nii.gz"));
        write_volume(s.images[0], file("scan.nii.gz"));
        json sessions = json::array();
        sessions.push_back({{"id", "fixture"},
                            {"labels", file("labels.nii.gz")},
                            {"images", {file("scan.nii.gz")}}});
        save_json_file(sessions, file("sessions.json"));
        EngineConfig cfg = toy_config(extent);
        save_json_file(config_to_json(cfg), file("config.json"));
        return file("sessions.json");
    }
};

} // namespace

TEST_CASE("help exits 0, missing subcommand exits 1") {
    CliFixture f;
    CHECK(f.run("--help") == 0);
    CHECK(f.run("") == 1);
    CHECK(f.run("synth") == 1); // missing required flags
}

TEST_CASE("synth produces channels, labels, and trace per sample; seeds repeat bitwise") {
    CliFixture f;
    f.write_session();
    const std::string base = "synth --config " + f.file("config.json") + " --sessions " +
                             f.file("sessions.json") + " --count 3";
    REQUIRE(f.run(base + " --seed 7 --out " + f.file("a")) == 0);
    const json report = f.stdout_json();
    CHECK(report["samples"] == 3);

    const auto manifest = load_manifest(f.file("a/manifest.jsonl"));
    REQUIRE(manifest.size() == 3);
    for (const auto& e : manifest) {
        int chans = 0;
        bool has_labels = false, has_trace = false;
        for (const auto& rel : e.files) {
            if (rel.find("chan") != std::string::npos) ++chans;
            if (rel.find("labels.nii.gz") != std::string::npos) has_labels = true;
            if (rel.find("trace.json") != std::string::npos) has_trace = true;
            CHECK(fs::exists(f.dir / "a" / rel));
        }
        CHECK(chans >= 1);
        CHECK(chans <= 4);
        CHECK(has_labels);
        CHECK(has_trace);
    }

    // same seed in a fresh process and directory: identical payloads
    REQUIRE(f.run(base + " --seed 7 --out " + f.file("b")) == 0);
    const auto manifest_b = load_manifest(f.file("b/manifest.jsonl"));
    REQUIRE(manifest_b.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(manifest[i].seed == manifest_b[i].seed);
        CHECK(manifest[i].checksums == manifest_b[i].checksums);
    }
}

TEST_CASE("synth with an empty session list exits 1, unreadable sessions exit 2") {
    CliFixture f;
    save_json_file(json::array(), f.file("empty.json"));
    CHECK(f.run("synth --sessions " + f.file("empty.json") + " --out " + f.file("x")) == 1);
    CHECK(f.run("synth --sessions " + f.file("nonexistent.json") + " --out " + f.file("x")) == 2);

    // session list referencing a missing label file is a data error
    json sessions = json::array();
    sessions.push_back({{"id", "bad"}, {"labels", f.file("missing.nii.gz")}});
    save_json_file(sessions, f.file("bad.json"));
    CHECK(f.run("synth --sessions " + f.file("bad.json") + " --out " + f.file("x")) == 2);
}

TEST_CASE("remap applies tables and reports unmapped IDs with exit 2") {
    CliFixture f;
    LabelMap lm = LabelMap::zeros({4, 4, 4});
    lm.protocol = LabelProtocol{};
    Rng rng(1);
    for (auto& v : lm.data) v = rng.bernoulli(0.5) ? 8u : 0u; // a "finer" source ID
    write_volume(lm, f.file("src.nii.gz"));
    save_json_file(json{{"map", {{"0", 0}, {"8", 7}}}}, f.file("table.json"));
    REQUIRE(f.run("remap --in " + f.file("src.nii.gz") + " --table " + f.file("table.json") +
                  " --out " + f.file("dst.nii.gz")) == 0);
    LabelMap out = read_labelmap(f.file("dst.nii.gz"));
    std::size_t sevens = 0, eights_in = 0;
    for (std::size_t i = 0; i < lm.data.size(); ++i) {
        sevens += out.data[i] == 7;
        eights_in += lm.data[i] == 8;
    }
    CHECK(sevens == eights_in);

    // identity table round trip
    save_json_file(json{{"map", {{"0", 0}, {"7", 7}}}}, f.file("id.json"));
    REQUIRE(f.run("remap --in " + f.file("dst.nii.gz") + " --table " + f.file("id.json") +
                  " --out " + f.file("dst2.nii.gz")) == 0);
    CHECK(read_labelmap(f.file("dst2.nii.gz")).data == out.data);

    // unmapped ID
    save_json_file(json{{"map", {{"0", 0}}}}, f.file("partial.json"));
    CHECK(f.run("remap --in " + f.file("src.nii.gz") + " --table " + f.file("partial.json") +
                " --out " + f.file("dst3.nii.gz"), "err") == 2);
    std::ifstream err(f.file("err.stderr"));
    std::string text((std::istreambuf_iterator<char>(err)), std::istreambuf_iterator<char>());
    CHECK(text.find("8") != std::string::npos);
}

TEST_CASE("gmm-labels defaults to k=6 and reduces k when voxels are scarce") {
    CliFixture f;
    Volume img = Volume::zeros({4, 4, 4});
    img.data[0] = 0.3f;
    img.data[1] = 0.7f;
    img.data[2] = 0.5f;
    write_volume(img, f.file("img.nii.gz"));
    write_volume(LabelMap::zeros({4, 4, 4}), f.file("lm.nii.gz"));
    REQUIRE(f.run("gmm-labels --image " + f.file("img.nii.gz") + " --labels " + f.file("lm.nii.gz") +
                  " --out " + f.file("out.nii.gz")) == 0);
    const json report = f.stdout_json();
    CHECK(report["non_brain_voxels"] == 3);
    std::ifstream err(f.file("out.stderr"));
    std::string text((std::istreambuf_iterator<char>(err)), std::istreambuf_iterator<char>());
    CHECK(text.find("reducing k from 6") != std::string::npos);
}

TEST_CASE("train-toy writes a curve with one row per step and deterministic weights") {
    CliFixture f;
    const std::string base = "train-toy --toy --grid 16 --levels 2 --filters 4 --seed 5";
    REQUIRE(f.run(base + " --steps 4 --out-weights " + f.file("w1.bsw") + " --curve " +
                  f.file("c1.csv")) == 0);
    REQUIRE(f.run(base + " --steps 4 --out-weights " + f.file("w2.bsw") + " --curve " +
                  f.file("c2.csv")) == 0);

    std::ifstream c1(f.file("c1.csv"));
    std::string line;
    long rows = -1; // header
    while (std::getline(c1, line)) ++rows;
    CHECK(rows == 4);

    // identical runs give identical weights
    auto n1 = load_weights(f.file("w1.bsw"));
    auto n2 = load_weights(f.file("w2.bsw"));
    auto p1 = n1.net.parameters();
    auto p2 = n2.net.parameters();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].second->v == p2[i].second->v);

    // steps 0 leaves the initialization untouched
    REQUIRE(f.run(base + " --steps 0 --out-weights " + f.file("w0.bsw")) == 0);
    auto n0 = load_weights(f.file("w0.bsw"));
    GroupUNet init(2, 4, 7, 5 ^ 0xbabe5e6ull);
    auto pi = init.parameters();
    auto p0 = n0.net.parameters();
    for (std::size_t i = 0; i < pi.size(); ++i) CHECK(pi[i].second->v == p0[i].second->v);
}

TEST_CASE("segment accepts 1..n inputs and duplicates collapse to the same file") {
    CliFixture f;
    REQUIRE(f.run("train-toy --toy --grid 16 --levels 2 --filters 4 --seed 9 --steps 2 "
                  "--out-weights " + f.file("w.bsw")) == 0);
    LoadedSession s = make_toy_session(16);
    write_volume(s.images[0], f.file("in.nii.gz"));
    REQUIRE(f.run("segment --weights " + f.file("w.bsw") + " " + f.file("in.nii.gz") + " --out " +
                  f.file("seg1.nii.gz")) == 0);
    REQUIRE(f.run("segment --weights " + f.file("w.bsw") + " " + f.file("in.nii.gz") + " " +
                  f.file("in.nii.gz") + " --out " + f.file("seg2.nii.gz")) == 0);
    const LabelMap a = read_labelmap(f.file("seg1.nii.gz"), toy_protocol());
    const LabelMap b = read_labelmap(f.file("seg2.nii.gz"), toy_protocol());
    CHECK(a.data == b.data);
    CHECK(a.shape == s.images[0].shape);
    for (auto id : a.data) CHECK(toy_protocol().contains(id));
}

TEST_CASE("dice of a map against itself is 1.0 and merge tables apply before scoring") {
    CliFixture f;
    LabelMap lm = LabelMap::zeros({5, 5, 5});
    lm.protocol = LabelProtocol{};
    Rng rng(2);
    const std::vector<std::uint32_t> src = {0, 7, 8, 12};
    for (auto& v : lm.data) v = src[std::size_t(rng.uniform_int(0, 3))];
    write_volume(lm, f.file("truth.nii.gz"));
    REQUIRE(f.run("dice --pred " + f.file("truth.nii.gz") + " --truth " + f.file("truth.nii.gz")) == 0);
    json out = f.stdout_json();
    CHECK(out["mean"] == 1.0);
    for (const auto& [id, s] : out["per_label"].items()) CHECK(s == 1.0);

    // merge before scoring: 8 -> 7 on both sides must equal a manual pre-merge
    LabelMap pred = lm;
    for (auto& v : pred.data) v = v == 8 ? 7 : v; // predicted cerebellum as one label
    write_volume(pred, f.file("pred.nii.gz"));
    save_json_file(json{{"map", {{"0", 0}, {"7", 7}, {"8", 7}, {"12", 20}}}}, f.file("merge.json"));
    REQUIRE(f.run("dice --pred " + f.file("pred.nii.gz") + " --truth " + f.file("truth.nii.gz") +
                  " --merge " + f.file("merge.json"), "m") == 0);
    json merged = f.stdout_json("m");
    CHECK(merged["per_label"]["7"] == 1.0);
    CHECK(merged["per_label"]["20"] == 1.0);
}

TEST_CASE("inspect summarizes traces and flags corrupt input") {
    CliFixture f;
    f.write_session();
    REQUIRE(f.run("synth --config " + f.file("config.json") + " --sessions " +
                  f.file("sessions.json") + " --count 4 --seed 3 --out " + f.file("ds")) == 0);
    REQUIRE(f.run("inspect --manifest " + f.file("ds/manifest.jsonl"), "insp") == 0);
    const json out = f.stdout_json("insp");
    CHECK(out["traces"] == 4);
    CHECK(out["rows"].contains("gamma_exponent"));
    const auto& gamma = out["rows"]["gamma_exponent"];
    CHECK(gamma["min"].get<double>() >= 0.7);
    CHECK(gamma["max"].get<double>() <= 1.4);

    // empty manifest: empty report, exit 0
    std::ofstream(f.file("empty.jsonl")).close();
    REQUIRE(f.run("inspect --manifest " + f.file("empty.jsonl"), "e") == 0);
    CHECK(f.stdout_json("e")["traces"] == 0);

    // corrupted trace json: exit 2
    {
        std::ofstream bad(f.file("ds/sample_000000/trace.json"), std::ios::trunc);
        bad << "{broken";
    }
    CHECK(f.run("inspect --manifest " + f.file("ds/manifest.jsonl"), "bad") == 2);
}
