#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using std::filesystem::path;

namespace {

std::string g_cli;

std::string tmp_root() {
    auto p = std::filesystem::temp_directory_path() / "signflow_cli_test";
    return p.string();
}

int run(const std::string& args) {
    const std::string cmd = g_cli + " " + args + " >>" + tmp_root() + "/stdout.log 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_tiny_config(const path& p) {
    std::ofstream out(p);
    out << "vocab_size=5\n"
        << "joints=2\n"
        << "coords=2\n"
        << "motif_frames=6\n"
        << "sample_count=24\n"
        << "min_tokens=2\n"
        << "max_tokens=3\n"
        << "d_model=16\n"
        << "heads=2\n"
        << "mlp_hidden=24\n"
        << "producer_blocks=2\n"
        << "encoder_blocks=1\n"
        << "steps=2\n"
        << "max_len=40\n"
        << "epochs=1\n"
        << "batch_size=8\n"
        << "bt_epochs=2\n"
        << "num_averaged=1\n"
        << "warmup_epochs=100\n";
}

} // namespace

int main(int argc, char** argv) {
    REQUIRE(argc >= 2);
    g_cli = argv[1];
    std::filesystem::remove_all(tmp_root());
    std::filesystem::create_directories(tmp_root());
    doctest::Context ctx;
    ctx.applyCommandLine(1, argv);
    return ctx.run();
}

TEST_CASE("unknown subcommands and flags exit with usage code 2") {
    CHECK(run("frobnicate") == 2);
    CHECK(run("synth --bogus-flag 1 --out " + tmp_root() + "/x") == 2);
    CHECK(run("") == 2);
}

TEST_CASE("synth is deterministic across runs") {
    const path root = tmp_root();
    write_tiny_config(root / "tiny.cfg");
    REQUIRE(run("synth --config " + (root / "tiny.cfg").string() + " --seed 1 --out " +
                (root / "c1").string()) == 0);
    REQUIRE(run("synth --config " + (root / "tiny.cfg").string() + " --seed 1 --out " +
                (root / "c2").string()) == 0);
    CHECK(slurp(root / "c1" / "corpus.manifest") == slurp(root / "c2" / "corpus.manifest"));
    CHECK(slurp(root / "c1" / "corpus.meta") == slurp(root / "c2" / "corpus.meta"));
    CHECK(slurp(root / "c1" / "normalizer.txt") == slurp(root / "c2" / "normalizer.txt"));
    CHECK(slurp(root / "c1" / "seq" / "0.sgsq") == slurp(root / "c2" / "seq" / "0.sgsq"));
    CHECK(slurp(root / "c1" / "seq" / "7.sgsq") == slurp(root / "c2" / "seq" / "7.sgsq"));
}

TEST_CASE("unknown config keys are rejected with the key named") {
    const path root = tmp_root();
    {
        std::ofstream out(root / "bad.cfg");
        out << "not_a_real_key=1\n";
    }
    const path log = root / "stdout.log";
    std::filesystem::remove(log);
    CHECK(run("synth --config " + (root / "bad.cfg").string() + " --out " +
              (root / "cx").string()) == 1);
    CHECK(slurp(log).find("not_a_real_key") != std::string::npos);
}

TEST_CASE("full pipeline: train, eval, generate, inspect") {
    const path root = tmp_root();
    write_tiny_config(root / "tiny.cfg");
    const std::string cfg = " --config " + (root / "tiny.cfg").string();
    REQUIRE(run("synth" + cfg + " --seed 2 --out " + (root / "corpus").string()) == 0);
    REQUIRE(run("train" + cfg + " --seed 2 --corpus " + (root / "corpus").string() + " --out " +
                (root / "model.sgck").string()) == 0);
    REQUIRE(run("train-bt" + cfg + " --seed 2 --corpus " + (root / "corpus").string() +
                " --out " + (root / "bt.sgck").string()) == 0);

    SUBCASE("eval on a barely trained model still reports and exits zero") {
        const int rc = run("eval" + cfg + " --ckpt " + (root / "model.sgck").string() + " --bt " +
                           (root / "bt.sgck").string() + " --corpus " +
                           (root / "corpus").string() + " --split test --limit 3 --out " +
                           (root / "report.txt").string());
        CHECK(rc == 0);
        const std::string report = slurp(root / "report.txt");
        CHECK(report.find("bleu1=") != std::string::npos);
        CHECK(report.find("keypoint_mse=") != std::string::npos);
        CHECK(report.find("bt_reference_accuracy=") != std::string::npos);
    }
    SUBCASE("eval without a back-translator instructs to train one") {
        const path log = root / "stdout.log";
        std::filesystem::remove(log);
        CHECK(run("eval" + cfg + " --ckpt " + (root / "model.sgck").string() + " --corpus " +
                  (root / "corpus").string() + " --split test") == 1);
        CHECK(slurp(log).find("train-bt") != std::string::npos);
    }
    SUBCASE("generate from tokens with svg output") {
        REQUIRE(run("generate" + cfg + " --ckpt " + (root / "model.sgck").string() +
                    " --tokens \"1 3 0\" --out " + (root / "gen").string() + " --svg") == 0);
        CHECK(std::filesystem::exists(root / "gen" / "generated.sgsq"));
        CHECK(std::filesystem::exists(root / "gen" / "frame_0.svg"));
    }
    SUBCASE("generate audio modality for an audio-missing sample routes through the mapping") {
        // find an audio-missing sample in the manifest
        std::ifstream manifest(root / "corpus" / "corpus.manifest");
        std::string line, id;
        while (std::getline(manifest, line)) {
            if (line.find("audio=0") != std::string::npos) {
                id = line.substr(3, line.find(' ') - 3);
                break;
            }
        }
        REQUIRE(!id.empty());
        CHECK(run("generate" + cfg + " --ckpt " + (root / "model.sgck").string() +
                  " --corpus " + (root / "corpus").string() + " --sample-id " + id +
                  " --modality audio --out " + (root / "gen_audio").string()) == 0);
        CHECK(std::filesystem::exists(root / "gen_audio" / "generated.sgsq"));
    }
    SUBCASE("inspect summarizes the checkpoint") {
        const path log = root / "stdout.log";
        std::filesystem::remove(log);
        CHECK(run("inspect --ckpt " + (root / "model.sgck").string()) == 0);
        const std::string out = slurp(log);
        CHECK(out.find("config.d_model=16") != std::string::npos);
        CHECK(out.find("ema_present=1") != std::string::npos);
        CHECK(out.find("entry param.producer.blk0.wq.w") != std::string::npos);
    }
}
