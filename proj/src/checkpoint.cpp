// SPDX-License-Identifier: Apache-2.0
#include "layerparti/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "layerparti/errors.hpp"

namespace layerparti {

namespace {

constexpr std::array<char, 4> kMagic{'L', 'P', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                                static_cast<char>(v >> 24)};
    out.write(b.data(), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    put_u32(out, static_cast<std::uint32_t>(v));
    put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_floats(std::ostream& out, std::span<const float> values) {
    for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
  public:
    Reader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

    void bytes(char* dst, std::size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError("truncated checkpoint " + path_.string());
    }
    std::uint32_t u32() {
        std::array<unsigned char, 4> b{};
        bytes(reinterpret_cast<char*>(b.data()), 4);
        return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
               static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        return lo | static_cast<std::uint64_t>(u32()) << 32;
    }
    std::vector<float> floats(std::size_t n) {
        std::vector<float> v(n);
        for (auto& x : v) x = std::bit_cast<float>(u32());
        return v;
    }

  private:
    std::istream& in_;
    const std::filesystem::path& path_;
};

nlohmann::ordered_json model_to_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers}, {"d_model", c.d_model},     {"d_ff", c.d_ff},
            {"n_heads", c.n_heads},   {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
            {"n_classes", c.n_classes}, {"dropout_f", c.dropout_f}, {"dropout_u", c.dropout_u}};
}

ModelConfig model_from_json(const nlohmann::ordered_json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers");
    c.d_model = j.at("d_model");
    c.d_ff = j.at("d_ff");
    c.n_heads = j.at("n_heads");
    c.vocab_size = j.at("vocab_size");
    c.max_len = j.at("max_len");
    c.n_classes = j.at("n_classes");
    c.dropout_f = j.at("dropout_f");
    c.dropout_u = j.at("dropout_u");
    return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::ordered_json header;
    header["model"] = model_to_json(ck.params.config());
    auto& params = header["params"] = nlohmann::ordered_json::array();
    for (const auto& e : ck.params.entries()) {
        params.push_back({{"name", e.name}, {"group", e.group}, {"shape", e.tensor.shape()}});
    }
    header["frozen_groups"] = ck.partition.frozen_groups;
    header["partition"] = {{"split_level", ck.partition.split_level},
                           {"unfreeze_threshold", ck.partition.unfreeze_threshold},
                           {"max_iterations", ck.partition.max_iterations}};
    header["vocab"] = ck.vocab.tokens();

    auto& buffers = header["buffers"] = nlohmann::ordered_json::array();
    header["adam"] = {{"beta1", ck.adam.beta1}, {"beta2", ck.adam.beta2}, {"eps", ck.adam.eps}, {"steps", ck.adam.steps()}};
    for (const auto& [name, slot] : ck.adam.slots()) {
        buffers.push_back({{"kind", "adam"}, {"param", name}, {"steps", slot.steps}, {"count", slot.m.size()}});
    }
    if (ck.ensemble) {
        header["ensemble"] = {{"alpha", ck.ensemble->alpha()},
                              {"classes", ck.ensemble->classes()},
                              {"examples", ck.ensemble->size()}};
    }
    header["meta"] = ck.meta;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    const std::string text = header.dump();
    out.write(kMagic.data(), kMagic.size());
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : ck.params.entries()) put_floats(out, e.tensor.data());
    for (const auto& [name, slot] : ck.adam.slots()) {
        put_floats(out, slot.m);
        put_floats(out, slot.v);
    }
    if (ck.ensemble) {
        put_floats(out, ck.ensemble->accumulators());
        for (auto t : ck.ensemble->counts()) put_u32(out, t);
    }
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    Reader rd(in, path);
    std::array<char, 4> magic{};
    rd.bytes(magic.data(), magic.size());
    if (magic != kMagic) throw DataError(path.string() + " is not a checkpoint (bad magic)");
    const auto header_len = rd.u64();
    std::string text(header_len, '\0');
    rd.bytes(text.data(), header_len);

    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }

    Checkpoint ck;
    try {
        const ModelConfig config = model_from_json(header.at("model"));
        ck.params = ParameterStore(config);
        for (const auto& p : header.at("params")) {
            Shape shape = p.at("shape").get<Shape>();
            auto values = rd.floats(shape_numel(shape));
            ck.params.add(p.at("name").get<std::string>(), p.at("group").get<int>(),
                          Tensor::from(std::move(shape), std::move(values), true));
        }
        const auto& part = header.at("partition");
        ck.partition.split_level = part.at("split_level");
        ck.partition.unfreeze_threshold = part.at("unfreeze_threshold");
        ck.partition.max_iterations = part.at("max_iterations");
        ck.partition.frozen_groups = header.at("frozen_groups").get<std::vector<int>>();
        apply_partition(ck.params, ck.partition);

        ck.vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());

        const auto& adam = header.at("adam");
        ck.adam.beta1 = adam.at("beta1");
        ck.adam.beta2 = adam.at("beta2");
        ck.adam.eps = adam.at("eps");
        std::map<std::string, AdamSlot> slots;
        for (const auto& b : header.at("buffers")) {
            AdamSlot slot;
            slot.steps = b.at("steps");
            const std::size_t n = b.at("count");
            slot.m = rd.floats(n);
            slot.v = rd.floats(n);
            slots.emplace(b.at("param").get<std::string>(), std::move(slot));
        }
        ck.adam.restore(adam.at("steps"), std::move(slots));

        if (header.contains("ensemble")) {
            const auto& te = header.at("ensemble");
            const std::size_t n = te.at("examples"), k = te.at("classes");
            auto z = rd.floats(n * k);
            std::vector<std::uint32_t> counts(n);
            for (auto& t : counts) t = rd.u32();
            ck.ensemble = TemporalEnsemble::restore(k, te.at("alpha").get<float>(), std::move(z), std::move(counts));
        }
        ck.meta = header.at("meta");
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint header in " + path.string() + ": " + e.what());
    }
    return ck;
}

}  // namespace layerparti
