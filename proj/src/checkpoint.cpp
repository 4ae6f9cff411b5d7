#include "cpunet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "cpunet/errors.hpp"
#include "cpunet/pgm.hpp"
#include "cpunet/run_config.hpp"

namespace cpunet::io {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Cursor {
public:
    explicit Cursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw DataError("checkpoint: truncated at byte offset " + std::to_string(pos_));
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string text(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t offset() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CpUnet& model, std::size_t step) {
    RunConfig rc;
    rc.model = model.config();
    std::string block;
    for (const auto& [k, v] : section_values(rc, "model")) block += "model." + k + "=" + v + "\n";
    block += "state.step=" + std::to_string(step) + "\n";

    std::vector<std::uint8_t> out{'C', 'P', 'U', 'N'};
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(block.size()));
    out.insert(out.end(), block.begin(), block.end());

    const ParameterStore& store = model.parameters();
    put_u32(out, static_cast<std::uint32_t>(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const Parameter& p = store[i];
        put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        const Shape& shape = p.tensor.shape();
        put_u32(out, static_cast<std::uint32_t>(shape.size()));
        for (std::size_t d : shape) put_u64(out, d);
        for (double v : p.tensor.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const CpUnet& model, std::size_t step) {
    write_file(path, encode_checkpoint(model, step));
}

LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Cursor in(bytes);
    if (in.text(4) != "CPUN") throw DataError("checkpoint: bad magic (not a CPUN checkpoint)");
    const std::uint32_t version = in.u32();
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint: unsupported format version " + std::to_string(version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    }
    const std::string block = in.text(in.u32());

    RunConfig rc;
    LoadedCheckpoint loaded;
    std::istringstream lines(block);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint: malformed config line '" + line + "'");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "state.step") {
            loaded.step = std::stoull(value);
        } else if (key.rfind("model.", 0) == 0) {
            try {
                set_config_value(rc, key, value);
            } catch (const ConfigError& e) {
                throw DataError(std::string("checkpoint: ") + e.what());
            }
        } else {
            throw DataError("checkpoint: unexpected config key '" + key + "'");
        }
    }
    loaded.model = std::make_unique<CpUnet>(rc.model);
    ParameterStore& store = loaded.model->parameters();

    const std::uint32_t count = in.u32();
    if (count != store.size()) {
        throw DataError("checkpoint: holds " + std::to_string(count) + " parameters, config builds " +
                        std::to_string(store.size()));
    }
    for (std::uint32_t r = 0; r < count; ++r) {
        const std::string name = in.text(in.u32());
        Parameter* p = store.find(name);
        if (!p) throw DataError("checkpoint: unknown parameter '" + name + "'");
        const std::uint32_t rank = in.u32();
        Shape shape(rank);
        for (auto& d : shape) d = in.u64();
        if (shape != p->tensor.shape()) {
            throw DataError("checkpoint: parameter '" + name + "' stored as " + shape_str(shape) + ", model has " +
                            shape_str(p->tensor.shape()));
        }
        auto values = p->tensor.mutable_values();
        in.need(values.size() * 8);
        for (double& v : values) v = std::bit_cast<double>(in.u64());
    }
    if (!in.done()) throw DataError("checkpoint: trailing bytes at offset " + std::to_string(in.offset()));
    return loaded;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace cpunet::io
