#include "sed/viz.hpp"

#include "sed/embedding.hpp"

#include <cstdio>
#include <ostream>

namespace sed {

ForwardTrajectory forward_trajectory(std::span<const TokenId> tokens, const MatD& embedding,
                                     const NoiseSchedule& sched, int k, int every, uint64_t seed) {
    if (tokens.empty()) throw Error("forward trajectory needs at least one token");
    if (every < 1) throw Error("recording interval must be positive");
    if (k < 1) throw Error("neighbor count must be positive");
    k = std::min<int>(k, static_cast<int>(embedding.rows()));
    Rng rng = derive_rng(seed, 0x7669737A);
    ForwardTrajectory traj;
    traj.tokens.assign(tokens.begin(), tokens.end());
    traj.k = k;
    NeighborCache neighbors(embedding, k);

    MatD x = embed_tokens<double>(tokens, embedding, sched.sigma0, rng);
    traj.steps.push_back(0);
    traj.ranks.push_back(neighbors.ranks(x, tokens));
    MatD eps(x.rows(), x.cols());
    for (int t = 1; t <= sched.T; ++t) {
        fill_normal(eps, rng);
        x = forward_step<double>(x, t, eps, sched);
        if (t % every == 0 || t == sched.T) {
            traj.steps.push_back(t);
            traj.ranks.push_back(neighbors.ranks(x, tokens));
        }
    }
    return traj;
}

double intermediate_rank_count(const ForwardTrajectory& traj) {
    const size_t n = traj.tokens.size();
    int64_t count = 0;
    for (const auto& row : traj.ranks) {
        for (int r : row) count += (r > 0 && r < traj.k) ? 1 : 0;
    }
    return static_cast<double>(count) / static_cast<double>(n);
}

void write_forward_csv(std::ostream& out, const ForwardTrajectory& traj, const Vocab& vocab) {
    out << "t,position,token_id,token_str,rank\n";
    for (size_t s = 0; s < traj.steps.size(); ++s) {
        for (size_t i = 0; i < traj.tokens.size(); ++i) {
            std::string unit = vocab.unit(traj.tokens[i]);
            if (unit.find_first_of(",\"") != std::string::npos) {
                std::string q = "\"";
                for (char c : unit) {
                    if (c == '"') q += '"';
                    q += c;
                }
                unit = q + "\"";
            }
            out << traj.steps[s] << ',' << i << ',' << traj.tokens[i] << ',' << unit << ',' << traj.ranks[s][i]
                << '\n';
        }
    }
}

namespace {

std::string html_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case ' ': out += "&nbsp;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

void write_forward_html(std::ostream& out, const ForwardTrajectory& traj, const Vocab& vocab) {
    out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>forward process ranks</title>\n"
        << "<style>table{border-collapse:collapse;font-family:monospace;font-size:12px}"
        << "td{padding:2px 4px;text-align:center}th{padding:2px 6px;text-align:right}</style>\n"
        << "</head><body>\n<p>Rank of the nearest embedding among the " << traj.k
        << " nearest neighbors of the clean token; green is rank 0, red is rank " << traj.k << ".</p>\n<table>\n";
    for (size_t s = 0; s < traj.steps.size(); ++s) {
        out << "<tr><th>t=" << traj.steps[s] << "</th>";
        for (size_t i = 0; i < traj.tokens.size(); ++i) {
            const int r = traj.ranks[s][i];
            const double f = std::min(1.0, static_cast<double>(r) / traj.k);
            char color[16];
            std::snprintf(color, sizeof color, "#%02x%02x40", static_cast<int>(255 * f), static_cast<int>(255 * (1 - f)));
            out << "<td style=\"background:" << color << "\" title=\"rank " << r << "\">"
                << html_escape(vocab.unit(traj.tokens[i])) << "</td>";
        }
        out << "</tr>\n";
    }
    out << "</table>\n</body></html>\n";
}

}  // namespace sed
