#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "wsss/config.hpp"
#include "wsss/errors.hpp"

using namespace wsss;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(WSSS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes: success 0, usage 2, runtime 1") {
    const std::string dir = (fs::temp_directory_path() / "wsss_cli_codes").string();
    fs::remove_all(dir);
    CHECK(run("check-arch --scale desk") == 0);
    CHECK(run("check-arch --scale paper --classes 2") == 0);
    CHECK(run("gen-synth") == 2);                            // missing required --n
    CHECK(run("gen-synth --n 0 --out " + dir + "/x") == 2);  // invalid value
    CHECK(run("definitely-not-a-subcommand") == 2);
    CHECK(run("--help") == 0);
    CHECK(run("eval --checkpoint " + dir + "/nope --manifest " + dir + "/nope.manifest --out " + dir) == 1);
    fs::remove_all(dir);
}

TEST_CASE("gen-synth is deterministic at the file level and train demands a classifier") {
    const std::string dir = (fs::temp_directory_path() / "wsss_cli_synth").string();
    fs::remove_all(dir);
    REQUIRE(run("gen-synth --n 12 --size 32 --classes 1 --seed 77 --out " + dir + "/a") == 0);
    REQUIRE(run("gen-synth --n 12 --size 32 --classes 1 --seed 77 --out " + dir + "/b") == 0);
    CHECK(slurp(dir + "/a/train.manifest") == slurp(dir + "/b/train.manifest"));
    CHECK(slurp(dir + "/a/val.manifest") == slurp(dir + "/b/val.manifest"));
    CHECK(slurp(dir + "/a/images/img_000003.ppm") == slurp(dir + "/b/images/img_000003.ppm"));
    CHECK(fs::exists(dir + "/a/config.json"));

    // joint training without a classifier checkpoint is an ordering error
    CHECK(run("train --train-manifest " + dir + "/a/train.manifest --epochs 1 --out " + dir + "/j") == 1);

    // flags override config-file values; the resolved copy is persisted
    {
        std::ofstream f(dir + "/cfg.json");
        f << "{\"seed\": 5, \"train\": {\"epochs\": 3}}\n";
    }
    REQUIRE(run("gen-synth --n 4 --size 32 --seed 9 --config " + dir + "/cfg.json --out " + dir + "/c") == 0);
    const std::string resolved = slurp(dir + "/c/config.json");
    CHECK(resolved.find("\"seed\": 9") != std::string::npos);        // flag wins
    CHECK(resolved.find("\"epochs\": 3") != std::string::npos);      // file value kept
    fs::remove_all(dir);
}

}  // TEST_SUITE
