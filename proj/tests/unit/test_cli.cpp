#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "diffir/pipeline.hpp"
#include "toy_config.hpp"

using namespace diffir;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    std::string cmd = std::string(DIFFIR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string run_cli_stdout(const std::string& args) {
    std::string out_file = (fs::temp_directory_path() / "diffir_cli_out.txt").string();
    std::string cmd = std::string(DIFFIR_CLI_PATH) + " " + args + " > " + out_file + " 2>/dev/null";
    std::system(cmd.c_str());
    std::ifstream f(out_file);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("count subcommand prints tab-separated cost rows") {
    auto out = run_cli_stdout("count --task inpainting --input 256");
    CHECK(out.find("params_s2\ttotal\t") != std::string::npos);
    CHECK(out.find("mult_adds_s1@256\ttotal\t") != std::string::npos);
    CHECK(out.find("mult_adds_s2@256\tdirformer.attention\t") != std::string::npos);
}

TEST_CASE("count accepts an explicit config") {
    TempDir tmp("diffir_cli_count");
    auto cfg = testcfg::toy_inpainting("");
    std::ofstream((tmp.path / "c.json").string()) << to_json(cfg).dump(1) << "\n";
    auto out = run_cli_stdout("count --config " + (tmp.path / "c.json").string() + " --input 64");
    CHECK(out.find("mult_adds_s2@64\ttotal\t") != std::string::npos);
    // toy config is far smaller than the paper preset
    auto preset = run_cli_stdout("count --task inpainting --input 64");
    CHECK(out != preset);
}

TEST_CASE("unknown commands and flags exit with the config code") {
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("count --nonsense 3") == 2);
    CHECK(run_cli("train-s1") == 2);                        // missing --config
    CHECK(run_cli("train-s1 --config /nonexistent.json") == 2);
}

TEST_CASE("cli pipeline: gen-data, train-s1, eval identity consistency") {
    TempDir tmp("diffir_cli_pipe");
    auto cfg = testcfg::toy_inpainting((tmp.path / "run_s1").string());
    cfg.train.steps = 2;
    cfg.data.n = 12;
    cfg.data.holdout = 4;
    cfg.data.dir = (tmp.path / "corpus").string();
    std::ofstream((tmp.path / "c.json").string()) << to_json(cfg).dump(1) << "\n";
    std::string cpath = (tmp.path / "c.json").string();

    REQUIRE(run_cli("gen-data --config " + cpath) == 0);
    CHECK(fs::exists(tmp.path / "corpus/index.tsv"));

    REQUIRE(run_cli("train-s1 --config " + cpath) == 0);
    CHECK(fs::exists(tmp.path / "run_s1/checkpoint/manifest.json"));
    CHECK(fs::exists(tmp.path / "run_s1/metrics.tsv"));
    CHECK(fs::exists(tmp.path / "run_s1/train_log.tsv"));
    CHECK(fs::exists(tmp.path / "run_s1/config.json"));

    // eval with a zero-step (identity) restorer: PSNR equals the LQ baseline
    auto id_cfg = cfg;
    id_cfg.train.steps = 0;
    id_cfg.out = (tmp.path / "run_id").string();
    std::ofstream((tmp.path / "id.json").string()) << to_json(id_cfg).dump(1) << "\n";
    REQUIRE(run_cli("train-s1 --config " + (tmp.path / "id.json").string()) == 0);

    auto ev_cfg = id_cfg;
    ev_cfg.eval_checkpoint = (tmp.path / "run_id/checkpoint").string();
    ev_cfg.out = (tmp.path / "run_eval").string();
    std::ofstream((tmp.path / "ev.json").string()) << to_json(ev_cfg).dump(1) << "\n";
    REQUIRE(run_cli("eval --config " + (tmp.path / "ev.json").string()) == 0);

    std::ifstream m((tmp.path / "run_eval/metrics.tsv").string());
    std::string comment, header, line;
    std::getline(m, comment);
    CHECK(comment.rfind("# psnr", 0) == 0);  // constants recorded in the header
    std::getline(m, header);
    CHECK(header == "index\tpsnr\tssim\tpsnr_baseline");
    bool any = false;
    while (std::getline(m, line)) {
        std::istringstream ss(line);
        std::string idx, p, s, pb;
        std::getline(ss, idx, '\t');
        std::getline(ss, p, '\t');
        std::getline(ss, s, '\t');
        std::getline(ss, pb, '\t');
        CHECK(p == pb);  // identity restorer: restored PSNR == copy-input PSNR
        any = true;
    }
    CHECK(any);
}

TEST_CASE("same-seed reruns are byte-identical for checkpoint and metrics") {
    TempDir tmp("diffir_cli_det");
    auto cfg = testcfg::toy_inpainting("");
    cfg.train.steps = 3;
    cfg.data.n = 10;
    cfg.data.holdout = 3;
    std::ofstream((tmp.path / "c.json").string()) << to_json(cfg).dump(1) << "\n";
    std::string cpath = (tmp.path / "c.json").string();

    REQUIRE(run_cli("train-s1 --config " + cpath + " --out " + (tmp.path / "a").string() + " --seed 11") == 0);
    REQUIRE(run_cli("train-s1 --config " + cpath + " --out " + (tmp.path / "b").string() + " --seed 11") == 0);
    CHECK(slurp(tmp.path / "a/checkpoint/weights.bin") == slurp(tmp.path / "b/checkpoint/weights.bin"));
    CHECK(slurp(tmp.path / "a/checkpoint/manifest.json") != "");
    CHECK(slurp(tmp.path / "a/metrics.tsv") == slurp(tmp.path / "b/metrics.tsv"));

    REQUIRE(run_cli("train-s1 --config " + cpath + " --out " + (tmp.path / "c").string() + " --seed 12") == 0);
    CHECK(slurp(tmp.path / "a/checkpoint/weights.bin") != slurp(tmp.path / "c/checkpoint/weights.bin"));
}

TEST_CASE("train-s2 via cli with mode override and t override") {
    TempDir tmp("diffir_cli_s2");
    auto cfg = testcfg::toy_inpainting((tmp.path / "s1").string());
    cfg.train.steps = 2;
    cfg.data.n = 10;
    cfg.data.holdout = 3;
    std::ofstream((tmp.path / "s1.json").string()) << to_json(cfg).dump(1) << "\n";
    REQUIRE(run_cli("train-s1 --config " + (tmp.path / "s1.json").string()) == 0);

    auto c2 = cfg;
    c2.train.stage = Stage::s2;
    c2.train.s1_checkpoint = (tmp.path / "s1/checkpoint").string();
    c2.out = (tmp.path / "s2").string();
    std::ofstream((tmp.path / "s2.json").string()) << to_json(c2).dump(1) << "\n";
    REQUIRE(run_cli("train-s2 --config " + (tmp.path / "s2.json").string() + " --mode v2 --t 2") == 0);

    Checkpoint ck = load_checkpoint((tmp.path / "s2/checkpoint").string());
    CHECK(ck.stage == Stage::s2);
    CHECK(ck.mode == Mode::v2_traditional);
    CHECK(ck.schedule_t == 2);

    // v2 leaves the DIRformer identical to its stage-1 input
    Checkpoint s1ck = load_checkpoint((tmp.path / "s1/checkpoint").string());
    for (const auto& [name, t] : ck.tensors) {
        if (name.rfind("dirformer.", 0) == 0) {
            const Tensor* src = s1ck.find(name);
            REQUIRE(src);
            CHECK(t.data == src->data);
        }
    }
}

TEST_CASE("sweep-t runs each requested T") {
    TempDir tmp("diffir_cli_sweep");
    auto cfg = testcfg::toy_inpainting((tmp.path / "sweep").string());
    cfg.data.n = 6;
    cfg.data.holdout = 2;
    std::ofstream((tmp.path / "c.json").string()) << to_json(cfg).dump(1) << "\n";
    auto out = run_cli_stdout("sweep-t --config " + (tmp.path / "c.json").string() + " --t 1,2,4");
    CHECK(out.find("sweep-t\t1\t") != std::string::npos);
    CHECK(out.find("sweep-t\t2\t") != std::string::npos);
    CHECK(out.find("sweep-t\t4\t") != std::string::npos);
    CHECK(out.find("FAIL") == std::string::npos);
    CHECK(fs::exists(tmp.path / "sweep/sweep.tsv"));
}

TEST_CASE("infer writes restored images") {
    TempDir tmp("diffir_cli_infer");
    auto cfg = testcfg::toy_inpainting((tmp.path / "s1").string());
    cfg.train.steps = 1;
    cfg.data.n = 6;
    cfg.data.holdout = 2;
    std::ofstream((tmp.path / "c.json").string()) << to_json(cfg).dump(1) << "\n";
    REQUIRE(run_cli("train-s1 --config " + (tmp.path / "c.json").string()) == 0);

    auto icfg = cfg;
    icfg.eval_checkpoint = (tmp.path / "s1/checkpoint").string();
    icfg.out = (tmp.path / "restored").string();
    std::ofstream((tmp.path / "i.json").string()) << to_json(icfg).dump(1) << "\n";
    REQUIRE(run_cli("infer --config " + (tmp.path / "i.json").string()) == 0);
    CHECK(fs::exists(tmp.path / "restored/restored_00000.png"));
    CHECK(fs::exists(tmp.path / "restored/restored_00001.png"));
}
