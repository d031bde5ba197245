// Drives the sed binary end to end on a tiny config.

#include "doctest.h"

#include "sed/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace sed;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args, const fs::path& work) {
    const fs::path log = work / "last.log";
    const std::string cmd = std::string(SED_BINARY) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

RunConfig tiny_config() {
    RunConfig c;
    c.corpus.vocab_size = 40;
    c.space.dim = 8;
    c.denoiser.d_embed = 8;
    c.denoiser.layers = 1;
    c.denoiser.d_model = 16;
    c.denoiser.heads = 2;
    c.denoiser.head_size = 8;
    c.denoiser.max_len = 32;
    c.denoiser.rel_buckets = 8;
    c.denoiser.rel_max_distance = 32;
    c.schedule.T = 50;
    c.train.seq_len = 16;
    c.train.batch_tokens = 64;
    c.train.steps = 4;
    c.train.log_every = 2;
    c.train.warmup_steps = 2;
    c.sample.length = 24;
    c.eval.n_samples = 3;
    c.eval.prefix_len = 4;
    return c;
}

}  // namespace

TEST_CASE("command line pipeline") {
    const fs::path work = fs::temp_directory_path() / ("sed_cli_" + std::to_string(::getpid()));
    fs::remove_all(work);
    fs::create_directories(work);
    const std::string w = work.string();

    REQUIRE(run("gen-grammar --lines 300 --seed 4 --out " + w + "/grammar.txt", work).code == 0);
    const auto corpus = lines_of(work / "grammar.txt");
    CHECK(corpus.size() == 300);
    CHECK(slurp(work / "grammar.txt").find("the") != std::string::npos);

    save_run_config((work / "base.json").string(), tiny_config());
    const std::string prep_args = "prepare --corpus " + w + "/grammar.txt --config " + w + "/base.json --out ";
    const Run prep = run(prep_args + w + "/prep", work);
    REQUIRE_MESSAGE(prep.code == 0, prep.out);
    CHECK(prep.out.find("D=8") != std::string::npos);
    REQUIRE(run(prep_args + w + "/prep2", work).code == 0);
    CHECK(slurp(work / "prep" / "embedding.semb") == slurp(work / "prep2" / "embedding.semb"));
    CHECK(slurp(work / "prep" / "vocab.txt") == slurp(work / "prep2" / "vocab.txt"));
    const RunConfig prepared = load_run_config((work / "prep" / "config.json").string());
    CHECK(prepared.corpus.vocab_size == 40);
    CHECK(prepared.denoiser.d_embed == 8);

    const Run tr = run("train --config " + w + "/prep/config.json --out " + w + "/run", work);
    REQUIRE_MESSAGE(tr.code == 0, tr.out);
    CHECK(fs::exists(work / "run" / "checkpoint" / "manifest.json"));
    CHECK(fs::exists(work / "run" / "config.json"));
    const auto metrics = lines_of(work / "run" / "metrics.jsonl");
    REQUIRE(metrics.size() == 2);
    CHECK(Json::parse(metrics.back()).at("step") == 4);

    const Run resumed = run("train --resume --steps 6 --out " + w + "/run", work);
    REQUIRE_MESSAGE(resumed.code == 0, resumed.out);
    CHECK(lines_of(work / "run" / "metrics.jsonl").size() == 3);

    SUBCASE("sampling") {
        const Run s = run("sample --checkpoint " + w + "/run --infill-spec \"the ___5 the\" -n 3 --seed 2 --out " + w +
                              "/s.txt",
                          work);
        REQUIRE_MESSAGE(s.code == 0, s.out);
        const auto out = lines_of(work / "s.txt");
        REQUIRE(out.size() == 3);
        for (const auto& line : out) {
            CHECK(line.rfind("the ", 0) == 0);
            CHECK(line.size() >= 8);
            CHECK(line.substr(line.size() - 4) == " the");
        }
        const Json meta = Json::parse(slurp(work / "s.txt.json"));
        CHECK(meta.at("mask") == "1111000001111");
        CHECK(meta.at("length") == 13);

        const Run again =
            run("sample --checkpoint " + w + "/run --infill-spec \"the ___5 the\" -n 3 --seed 2", work);
        CHECK(again.out == slurp(work / "s.txt"));

        const Run multi = run("sample --checkpoint " + w + "/run/checkpoint --scale 1,2.5 -n 2 --steps 10 --out " + w +
                                  "/m.txt",
                              work);
        REQUIRE_MESSAGE(multi.code == 0, multi.out);
        CHECK(lines_of(work / "m.s1.txt").size() == 2);
        CHECK(lines_of(work / "m.s2.5.txt").size() == 2);
        CHECK(Json::parse(slurp(work / "m.s2.5.txt.json")).at("scale") == 2.5);

        const Run traced = run("sample --checkpoint " + w + "/run --steps 10 --trace " + w + "/trace.csv", work);
        REQUIRE(traced.code == 0);
        CHECK(slurp(work / "trace.csv").rfind("t,position,token_id,token_str,rank", 0) == 0);
    }

    SUBCASE("evaluation") {
        const Run ev = run("eval --checkpoint " + w + "/run -n 2 --steps 10 --scales 1,2 --out " + w + "/eval", work);
        REQUIRE_MESSAGE(ev.code == 0, ev.out);
        const Json report = Json::parse(slurp(work / "eval" / "report.json"));
        CHECK(report.dump().find("\"data\"") != std::string::npos);
        CHECK(fs::exists(work / "eval" / "report.txt"));

        const Run infill = run("eval --checkpoint " + w + "/run --task suffix-infill -n 2 --steps 10 --out " + w +
                                   "/eval2",
                               work);
        CHECK_MESSAGE(infill.code == 0, infill.out);
    }

    SUBCASE("forward visualization") {
        const Run vz = run("viz-forward --embedding " + w + "/prep/embedding.semb --vocab " + w +
                               "/prep/vocab.txt --text \"the dog\" --steps 50 --K 8 --out " + w + "/viz",
                           work);
        REQUIRE_MESSAGE(vz.code == 0, vz.out);
        CHECK(fs::exists(work / "viz.csv"));
        CHECK(slurp(work / "viz.html").find("<table") != std::string::npos);
        CHECK(run("viz-forward --checkpoint " + w + "/run --text the --steps 20 --K 4 --out " + w + "/viz2", work)
                  .code == 0);
    }

    SUBCASE("exit codes") {
        CHECK(run("", work).code == 1);
        CHECK(run("bogus", work).code == 1);
        CHECK(run("sample --checkpoint " + w + "/run --scale abc", work).code == 1);
        CHECK(run("sample --checkpoint " + w + "/nowhere", work).code == 2);
        CHECK(run("train --out " + w + "/run2", work).code == 1);
        CHECK(run("sample --checkpoint " + w + "/run --length 999", work).code == 2);
        CHECK(run("--help", work).code == 0);
    }

    fs::remove_all(work);
}
