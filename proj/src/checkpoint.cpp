#include "sed/checkpoint.hpp"

#include "sed/binary_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace sed {

namespace {

struct Entry {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;
};

std::vector<float> to_floats(const MatD& m) {
    std::vector<float> v(static_cast<size_t>(m.size()));
    for (Eigen::Index k = 0; k < m.size(); ++k) v[static_cast<size_t>(k)] = static_cast<float>(m.data()[k]);
    return v;
}

// The double table is stored as three float32 terms hi + mid + lo. Each split
// is exact, and 3 x 24 mantissa bits cover a double, so values of ordinary
// magnitude come back bit for bit.
std::vector<float> residual_floats(const MatD& m, int level) {
    std::vector<float> v(static_cast<size_t>(m.size()));
    for (Eigen::Index k = 0; k < m.size(); ++k) {
        double x = m.data()[k];
        for (int i = 0; i < level; ++i) x -= static_cast<double>(static_cast<float>(x));
        v[static_cast<size_t>(k)] = static_cast<float>(x);
    }
    return v;
}

std::vector<float> matf_floats(const MatF& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

std::string save_checkpoint(const std::string& dir, const RunConfig& config, const TrainState& state,
                            const Vocab& vocab) {
    const auto& model = state.model;
    const auto& E = model.embedding.values();
    const int64_t V = E.rows();
    const int64_t D = E.cols();

    std::vector<Entry> entries;
    for (const auto& t : model.params.layout->tensors()) {
        const auto* p = model.params.values.data() + t.offset;
        entries.push_back({"denoiser/" + t.name, {t.rows, t.cols}, std::vector<float>(p, p + t.size())});
    }
    entries.push_back({"readout", {V, D}, matf_floats(model.readout)});
    entries.push_back({"embedding", {V, D}, to_floats(E)});
    entries.push_back({"embedding.residual", {V, D}, residual_floats(E, 1)});
    entries.push_back({"embedding.residual2", {V, D}, residual_floats(E, 2)});
    const auto np = static_cast<int64_t>(model.params.values.size());
    entries.push_back({"optimizer/m", {np}, state.optimizer.m});
    entries.push_back({"optimizer/v", {np}, state.optimizer.v});
    entries.push_back({"optimizer/readout_m", {V, D}, state.optimizer.readout_m});
    entries.push_back({"optimizer/readout_v", {V, D}, state.optimizer.readout_v});

    const fs::path target(dir);
    const fs::path tmp = target.string() + ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    Json tensors = Json::array();
    uint64_t hash = 0xcbf29ce484222325ull;
    {
        std::ofstream blob(tmp / "tensors.bin", std::ios::binary);
        if (!blob) throw Error("cannot write " + (tmp / "tensors.bin").string());
        uint64_t offset = 0;
        for (const auto& e : entries) {
            const uint64_t nbytes = e.data.size() * sizeof(float);
            tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"dtype", "float32"}, {"offset", offset},
                               {"nbytes", nbytes}});
            write_f32_le(blob, e.data);
            hash = fnv1a64(std::string_view(reinterpret_cast<const char*>(e.data.data()), nbytes), hash);
            offset += nbytes;
        }
        if (!blob) throw Error("failed writing tensor blob");
    }
    hash = fnv1a64(std::to_string(state.step), hash);
    const std::string id = hex64(hash);

    Json manifest;
    manifest["format_version"] = kCheckpointFormat;
    manifest["checkpoint_id"] = id;
    manifest["step"] = state.step;
    manifest["rng"] = {{"seed", config.train.seed}, {"data_cursor", state.data_cursor}};
    manifest["vocab"] = {{"file", "vocab.txt"}, {"size", vocab.size()}, {"fingerprint", hex64(vocab.fingerprint())}};
    manifest["schedule"] = {{"T", model.schedule.T}, {"offset", model.schedule.offset},
                            {"sigma0", model.schedule.sigma0}};
    manifest["config"] = to_json(config);
    manifest["tensors"] = tensors;
    {
        std::ofstream out(tmp / "manifest.json");
        out << manifest.dump(2) << "\n";
        if (!out) throw Error("failed writing checkpoint manifest");
    }
    vocab.save((tmp / "vocab.txt").string());
    save_run_config((tmp / "config.json").string(), config);

    const fs::path old = target.string() + ".old";
    fs::remove_all(old);
    if (fs::exists(target)) fs::rename(target, old);
    fs::rename(tmp, target);
    fs::remove_all(old);
    return id;
}

Checkpoint load_checkpoint(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream mf(root / "manifest.json");
    if (!mf) throw Error("no checkpoint at " + dir + " (missing manifest.json)");
    Json manifest;
    try {
        manifest = Json::parse(mf);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("corrupt checkpoint manifest in " + dir + ": " + e.what());
    }
    if (manifest.value("format_version", -1) != kCheckpointFormat) {
        throw Error("unsupported checkpoint format in " + dir);
    }

    Checkpoint ck;
    ck.config = run_config_from_json(manifest.at("config"));
    ck.id = manifest.at("checkpoint_id").get<std::string>();
    ck.vocab = Vocab::load((root / "vocab.txt").string(), ck.config.corpus.granularity);
    if (hex64(ck.vocab.fingerprint()) != manifest.at("vocab").at("fingerprint").get<std::string>()) {
        throw Error("vocabulary in " + dir + " does not match the manifest fingerprint");
    }

    std::ifstream blob(root / "tensors.bin", std::ios::binary);
    if (!blob) throw Error("missing tensors.bin in " + dir);
    auto read = [&](const std::string& name, size_t expected) {
        for (const auto& t : manifest.at("tensors")) {
            if (t.at("name") != name) continue;
            const auto nbytes = t.at("nbytes").get<uint64_t>();
            if (nbytes != expected * sizeof(float)) throw Error("tensor " + name + " has an unexpected size");
            std::vector<float> v(expected);
            blob.seekg(static_cast<std::streamoff>(t.at("offset").get<uint64_t>()));
            read_f32_le(blob, v);
            if (!blob) throw Error("truncated tensor blob in " + dir);
            return v;
        }
        throw Error("checkpoint " + dir + " lacks tensor " + name);
    };

    const int V = ck.vocab.size();
    const int D = ck.config.denoiser.d_embed;
    const size_t vd = static_cast<size_t>(V) * static_cast<size_t>(D);
    const auto e = read("embedding", vd);
    const auto r = read("embedding.residual", vd);
    const auto r2 = read("embedding.residual2", vd);
    MatD E(V, D);
    for (size_t k = 0; k < vd; ++k) {
        E.data()[k] = static_cast<double>(e[k]) + static_cast<double>(r[k]) + static_cast<double>(r2[k]);
    }

    auto& state = ck.state;
    state = init_train_state(ck.config.denoiser, ck.config.schedule.build(), EmbeddingMatrix(std::move(E)), 0);
    for (const auto& t : state.model.params.layout->tensors()) {
        const auto v = read("denoiser/" + t.name, t.size());
        std::copy(v.begin(), v.end(), state.model.params.values.begin() + static_cast<std::ptrdiff_t>(t.offset));
    }
    const auto readout = read("readout", vd);
    std::copy(readout.begin(), readout.end(), state.model.readout.data());
    const size_t np = state.model.params.values.size();
    state.optimizer.m = read("optimizer/m", np);
    state.optimizer.v = read("optimizer/v", np);
    state.optimizer.readout_m = read("optimizer/readout_m", vd);
    state.optimizer.readout_v = read("optimizer/readout_v", vd);
    state.step = manifest.at("step").get<int64_t>();
    state.data_cursor = manifest.at("rng").at("data_cursor").get<size_t>();
    return ck;
}

}  // namespace sed
