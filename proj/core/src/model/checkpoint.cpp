// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "subtoken/config_text.hpp"
#include "subtoken/error.hpp"

namespace subtoken::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        T v;
        std::memcpy(&v, take(sizeof(T), what).data(), sizeof(T));
        return v;
    }

    std::string_view take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw FileError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
        }
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::get(std::string_view name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return a.tensor;
    }
    throw FileError("checkpoint has no array '" + std::string(name) + "'");
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out(kCheckpointMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.config.size()));
    out += ckpt.config;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const auto& a : ckpt.arrays) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
        out += a.name;
        put<std::uint8_t>(out, kDtypeF64);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(a.tensor.rank()));
        for (auto d : a.tensor.shape()) put<std::uint64_t>(out, d);
        out.append(reinterpret_cast<const char*>(a.tensor.raw()), a.tensor.size() * sizeof(double));
    }
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    if (r.take(kCheckpointMagic.size(), "magic") != kCheckpointMagic) throw FileError("not a checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw FileError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const auto config_len = r.get<std::uint32_t>("config length");
    ckpt.config = std::string(r.take(config_len, "config"));
    const auto count = r.get<std::uint32_t>("array count");
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor a;
        const auto name_len = r.get<std::uint32_t>("name length");
        a.name = std::string(r.take(name_len, "name"));
        const auto dtype = r.get<std::uint8_t>("dtype");
        if (dtype != kDtypeF64) throw FileError("array '" + a.name + "' has unsupported dtype " + std::to_string(dtype));
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank == 0 || rank > 8) throw FileError("array '" + a.name + "' has invalid rank");
        Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dim")));
        std::size_t numel = 1;
        for (auto d : shape) {
            if (d == 0 || numel > (std::size_t{1} << 40) / d) throw FileError("array '" + a.name + "' has invalid shape");
            numel *= d;
        }
        std::vector<double> data(numel);
        const auto raw = r.take(numel * sizeof(double), "array data");
        std::memcpy(data.data(), raw.data(), raw.size());
        try {
            a.tensor = Tensor(std::move(shape), std::move(data));
        } catch (const Error& e) {
            throw FileError("array '" + a.name + "': " + e.what());
        }
        ckpt.arrays.push_back(std::move(a));
    }
    if (!r.done()) throw FileError("checkpoint has trailing bytes");
    return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const std::string bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FileError("error writing '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

void collect_arrays(Checkpoint& ckpt, const std::function<void(const ConstParamVisitor&)>& visit) {
    visit([&](const std::string& name, const Tensor& t) {
        Tensor copy(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
        ckpt.arrays.push_back({name, std::move(copy)});
    });
}

void restore_arrays(const Checkpoint& ckpt, const std::function<void(const ParamVisitor&)>& visit) {
    visit([&](const std::string& name, Tensor& t) {
        const Tensor& src = ckpt.get(name);
        if (src.shape() != t.shape()) {
            throw FileError("array '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                            shape_str(t.shape()));
        }
        std::copy(src.data().begin(), src.data().end(), t.data().begin());
    });
}

namespace {

ModelConfig model_config_from(const std::string& text) {
    ModelConfig c;
    for (const auto& [k, v] : parse_key_values(text, "checkpoint config")) apply_model_key(c, k, v);
    c.validate();
    return c;
}

}  // namespace

Checkpoint base_checkpoint(const Transformer& model) {
    Checkpoint ckpt;
    ckpt.config = to_config_text(model.config());
    ckpt.config += std::string("base.frozen=") + (model.base().frozen ? "true" : "false") + "\n";
    collect_arrays(ckpt, [&](const ConstParamVisitor& fn) { model.base().cvisit(fn); });
    return ckpt;
}

Transformer load_base(const Checkpoint& ckpt) {
    const ModelConfig config = model_config_from(ckpt.config);
    bool frozen = false;
    for (const auto& [k, v] : parse_key_values(ckpt.config, "checkpoint config")) {
        if (k == "base.frozen") frozen = parse_flag(k, v);
    }
    BaseWeights w = BaseWeights::create(config);
    restore_arrays(ckpt, [&](const ParamVisitor& fn) { w.visit(fn); });
    w.frozen = frozen;
    return Transformer(config, std::move(w));
}

Checkpoint qi_checkpoint(const Transformer& model) {
    Checkpoint ckpt;
    ckpt.config = to_config_text(model.config()) + to_config_text(model.qi().config);
    collect_arrays(ckpt, [&](const ConstParamVisitor& fn) { model.qi().cvisit(fn); });
    return ckpt;
}

void load_qi(const Checkpoint& ckpt, Transformer& model) {
    ModelConfig mc;
    QiConfig qc;
    for (const auto& [k, v] : parse_key_values(ckpt.config, "checkpoint config")) {
        if (!apply_model_key(mc, k, v) && !apply_qi_key(qc, k, v)) {
            throw FileError("adapter checkpoint has unexpected config key '" + k + "'");
        }
    }
    if (to_config_text(mc) != to_config_text(model.config())) {
        throw ConfigError("adapter checkpoint was trained for a different model configuration");
    }
    QiAdapters adapters = QiAdapters::create(qc, model.config());
    restore_arrays(ckpt, [&](const ParamVisitor& fn) { adapters.visit(fn); });
    model.attach_qi(std::move(adapters));
}

}  // namespace subtoken::model
