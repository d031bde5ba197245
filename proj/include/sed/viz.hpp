#pragma once

#include "sed/common.hpp"
#include "sed/corpus.hpp"
#include "sed/schedule.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace sed {

// Nearest-neighbor ranks along one forward-process trajectory of a text.
struct ForwardTrajectory {
    TokenSeq tokens;
    int k = 128;
    std::vector<int> steps;               // recorded t values, increasing, starting at 0
    std::vector<std::vector<int>> ranks;  // ranks[s][i] for steps[s], position i
};

// x_0 = E[w] + sigma0 * eps, then x_t = forward_step(x_{t-1}) for t = 1..T.
// Ranks are recorded at t = 0 and at every `every`-th step (and at T).
ForwardTrajectory forward_trajectory(std::span<const TokenId> tokens, const MatD& embedding,
                                     const NoiseSchedule& sched, int k, int every, uint64_t seed);

// Mean over positions of the number of recorded steps with 0 < rank < k.
double intermediate_rank_count(const ForwardTrajectory& traj);

void write_forward_csv(std::ostream& out, const ForwardTrajectory& traj, const Vocab& vocab);

// Table with one row per recorded step, one cell per position; cells shade
// linearly from green (rank 0) to red (rank k).
void write_forward_html(std::ostream& out, const ForwardTrajectory& traj, const Vocab& vocab);

}  // namespace sed
