#include "doctest.h"

#include "sed/embedding.hpp"
#include "sed/viz.hpp"

#include <sstream>

using namespace sed;

TEST_CASE("forward trajectory") {
    const auto sched = cosine_schedule(200);
    const MatD table = init_random(300, 16, 1).values();
    const TokenSeq text{5, 17, 200, 3, 3, 99};
    const auto traj = forward_trajectory(text, table, sched, 128, 10, 4);
    REQUIRE(!traj.steps.empty());
    CHECK(traj.steps.front() == 0);
    CHECK(traj.steps.back() == 200);
    for (size_t s = 1; s < traj.steps.size(); ++s) CHECK(traj.steps[s] > traj.steps[s - 1]);
    CHECK(traj.ranks.front() == std::vector<int>(6, 0));
    CHECK(traj.ranks.back().size() == 6);

    const auto again = forward_trajectory(text, table, sched, 128, 10, 4);
    CHECK(again.ranks == traj.ranks);
    CHECK(intermediate_rank_count(traj) >= 0.0);
}

TEST_CASE("low dimensional spaces pass through more intermediate ranks") {
    const auto sched = cosine_schedule(1000);
    const int V = 1024;
    TokenSeq text;
    Rng rng(2);
    for (int i = 0; i < 24; ++i) text.push_back(static_cast<TokenId>(rng() % V));
    double low = 0.0, high = 0.0;
    for (uint64_t seed = 0; seed < 3; ++seed) {
        const MatD small = init_random(V, 16, 10 + seed).values();
        const MatD big = init_random(V, 256, 20 + seed).values();
        low += intermediate_rank_count(forward_trajectory(text, small, sched, 128, 1, seed));
        high += intermediate_rank_count(forward_trajectory(text, big, sched, 128, 1, seed));
    }
    MESSAGE("D=16: " << low / 3 << "  D=256: " << high / 3);
    CHECK(low > high);
}

TEST_CASE("csv and html output") {
    const auto sched = cosine_schedule(50);
    const std::string text = "abc";
    const Vocab v = build_vocab(std::string_view("abcdefgh"), 10, Granularity::character);
    const MatD table = init_random(v.size(), 4, 3).values();
    const auto traj = forward_trajectory(v.encode(text), table, sched, 8, 10, 1);
    std::ostringstream csv, html;
    write_forward_csv(csv, traj, v);
    write_forward_html(html, traj, v);
    CHECK(csv.str().rfind("t,position,token_id,token_str,rank", 0) == 0);
    CHECK(html.str().find("<table") != std::string::npos);
    // Rank 0 cells are pure green.
    CHECK(html.str().find("background:#00ff40") != std::string::npos);
}
