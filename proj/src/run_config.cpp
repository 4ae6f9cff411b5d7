#include "cpunet/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "cpunet/errors.hpp"

namespace cpunet {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

struct Field {
    std::string section;
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(sec, name, member)                                                                 \
    Field {                                                                                          \
        sec, name, [](RunConfig& c, const std::string& v) { c.member = parse_size(sec "." name, v); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }                               \
    }
#define U64_FIELD(sec, name, member)                                                                 \
    Field {                                                                                         \
        sec, name, [](RunConfig& c, const std::string& v) { c.member = parse_u64(sec "." name, v); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }                              \
    }
#define DOUBLE_FIELD(sec, name, member)                                                                 \
    Field {                                                                                            \
        sec, name, [](RunConfig& c, const std::string& v) { c.member = parse_double(sec "." name, v); }, \
            [](const RunConfig& c) { return fmt_double(c.member); }                                     \
    }
#define BOOL_FIELD(sec, name, member)                                                                 \
    Field {                                                                                          \
        sec, name, [](RunConfig& c, const std::string& v) { c.member = parse_bool(sec "." name, v); }, \
            [](const RunConfig& c) { return fmt_bool(c.member); }                                     \
    }
#define STRING_FIELD(sec, name, member)                                                \
    Field {                                                                           \
        sec, name, [](RunConfig& c, const std::string& v) { c.member = v; },          \
            [](const RunConfig& c) { return c.member; }                               \
    }

const std::vector<Field>& schema() {
    static const std::vector<Field> fields = {
        SIZE_FIELD("model", "stages", model.stages),
        SIZE_FIELD("model", "base_channels", model.base_channels),
        SIZE_FIELD("model", "height", model.height),
        SIZE_FIELD("model", "width", model.width),
        SIZE_FIELD("model", "components", model.components),
        SIZE_FIELD("model", "feature_dim", model.feature_dim),
        SIZE_FIELD("model", "extractor_width", model.extractor_width),
        SIZE_FIELD("model", "groups", model.groups),
        SIZE_FIELD("model", "shift_step", model.shift_step),
        Field{"model", "shift_mode",
              [](RunConfig& c, const std::string& v) {
                  if (v == "translate") c.model.shift_mode = mgcsd::ShiftMode::translate;
                  else if (v == "cyclic") c.model.shift_mode = mgcsd::ShiftMode::cyclic;
                  else throw ConfigError("model.shift_mode: expected translate or cyclic, got '" + v + "'");
              },
              [](const RunConfig& c) {
                  return std::string(c.model.shift_mode == mgcsd::ShiftMode::cyclic ? "cyclic" : "translate");
              }},
        BOOL_FIELD("model", "enable_mgcsd", model.enable_mgcsd),
        BOOL_FIELD("model", "enable_cpm", model.enable_cpm),
        BOOL_FIELD("model", "enable_gf", model.enable_gf),
        SIZE_FIELD("model", "band", model.band),
        U64_FIELD("model", "seed", model.seed),
        BOOL_FIELD("model", "train_target_branch", model.train_target_branch),
        BOOL_FIELD("model", "redraw_per_stage", model.redraw_per_stage),
        Field{"model", "noise_mode",
              [](RunConfig& c, const std::string& v) {
                  if (v == "independent") c.model.noise_mode = cpm::NoiseMode::independent;
                  else if (v == "shared") c.model.noise_mode = cpm::NoiseMode::shared;
                  else throw ConfigError("model.noise_mode: expected independent or shared, got '" + v + "'");
              },
              [](const RunConfig& c) {
                  return std::string(c.model.noise_mode == cpm::NoiseMode::shared ? "shared" : "independent");
              }},

        DOUBLE_FIELD("train", "lr0", train.lr0),
        DOUBLE_FIELD("train", "momentum", train.momentum),
        DOUBLE_FIELD("train", "weight_decay", train.weight_decay),
        SIZE_FIELD("train", "batch_size", train.batch_size),
        SIZE_FIELD("train", "epochs", train.epochs),
        U64_FIELD("train", "seed", train.seed),
        SIZE_FIELD("train", "eval_every", train.eval_every),
        SIZE_FIELD("train", "max_steps", train.max_steps),
        DOUBLE_FIELD("train", "val_fraction", train.val_fraction),

        SIZE_FIELD("synth", "count", synth.count),
        SIZE_FIELD("synth", "height", synth.height),
        SIZE_FIELD("synth", "width", synth.width),
        DOUBLE_FIELD("synth", "blur_sigma_lo", synth.blur_sigma_lo),
        DOUBLE_FIELD("synth", "blur_sigma_hi", synth.blur_sigma_hi),
        DOUBLE_FIELD("synth", "speckle_strength", synth.speckle_strength),
        Field{"synth", "shape_family",
              [](RunConfig& c, const std::string& v) { c.synth.shape_family = synth::parse_shape_family(v); },
              [](const RunConfig& c) { return synth::to_string(c.synth.shape_family); }},
        BOOL_FIELD("synth", "overlap_artifacts", synth.overlap_artifacts),
        SIZE_FIELD("synth", "band", synth.band),
        DOUBLE_FIELD("synth", "min_area_fraction", synth.min_area_fraction),
        DOUBLE_FIELD("synth", "max_area_fraction", synth.max_area_fraction),
        U64_FIELD("synth", "seed", synth_seed),

        STRING_FIELD("paths", "data_dir", paths.data_dir),
        STRING_FIELD("paths", "out_dir", paths.out_dir),
        STRING_FIELD("paths", "checkpoint", paths.checkpoint),
        STRING_FIELD("paths", "image", paths.image),
    };
    return fields;
}

#undef SIZE_FIELD
#undef U64_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

void set_in_section(RunConfig& config, const std::string& section, const std::string& key,
                    const std::string& value) {
    for (const Field& f : schema()) {
        if (f.section == section && f.key == key) {
            f.set(config, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + section + "." + key + "'");
}

}  // namespace

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) throw ConfigError("config key '" + key + "' must be written as section.key");
    set_in_section(config, key.substr(0, dot), key.substr(dot + 1), value);
}

void apply_config_text(RunConfig& config, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside of a section");
        set_in_section(config, section, key, value);
    }
}

void apply_config_file(RunConfig& config, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    apply_config_text(config, ss.str());
}

void apply_override(RunConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must be key=value");
    set_config_value(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::vector<std::pair<std::string, std::string>> section_values(const RunConfig& config, const std::string& section) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const Field& f : schema()) {
        if (f.section == section) out.emplace_back(f.key, f.get(config));
    }
    return out;
}

std::string render_config(const RunConfig& config) {
    std::string out;
    for (const char* section : {"model", "train", "synth", "paths"}) {
        out += std::string("[") + section + "]\n";
        for (const auto& [k, v] : section_values(config, section)) out += k + " = " + v + "\n";
        out += "\n";
    }
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const Field& f : schema()) keys.push_back(f.section + "." + f.key);
    return keys;
}

}  // namespace cpunet
