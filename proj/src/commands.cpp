#include "cpunet/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "cpunet/checkpoint.hpp"
#include "cpunet/cpm.hpp"
#include "cpunet/errors.hpp"
#include "cpunet/gradcheck_suite.hpp"
#include "cpunet/pgm.hpp"
#include "cpunet/train.hpp"

namespace fs = std::filesystem;

namespace cpunet::cli {

namespace {

std::string sample_name(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%05zu.pgm", prefix, i);
    return buf;
}

fs::path prepare_out_dir(const RunConfig& config) {
    const fs::path dir = resolve_out_dir(config);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
    return dir;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::unique_ptr<CpUnet> load_model(const RunConfig& config, std::size_t* step = nullptr) {
    if (config.paths.checkpoint.empty()) throw ConfigError("paths.checkpoint is required");
    io::LoadedCheckpoint ck = io::load_checkpoint(config.paths.checkpoint);
    if (step) *step = ck.step;
    return std::move(ck.model);
}

void check_sizes(const CpUnet& model, const Dataset& data) {
    const auto& mc = model.config();
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const auto& s = data.samples[i];
        if (s.height != mc.height || s.width != mc.width) {
            throw ConfigError("image " + data.names[i] + " is " + shape_str({1, s.height, s.width}) +
                              " but the checkpoint expects " + shape_str({1, mc.height, mc.width}));
        }
    }
}

}  // namespace

fs::path resolve_out_dir(const RunConfig& config) {
    if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') return env;
    return config.paths.out_dir;
}

std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
    const fs::path path = dir / kManifestName;
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest '" + path.string() + "'");
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        ManifestEntry e;
        if (!(fields >> e.image >> e.mask >> e.seed >> e.index)) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'image mask seed index'");
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

Dataset load_dataset(const fs::path& dir) {
    Dataset data;
    for (const ManifestEntry& e : read_manifest(dir)) {
        const io::GrayImage img = io::read_pgm(dir / e.image);
        const io::GrayImage msk = io::read_pgm(dir / e.mask);
        if (img.width != msk.width || img.height != msk.height) {
            throw DataError(e.image + " and " + e.mask + " differ in size");
        }
        synth::Sample s;
        s.height = img.height;
        s.width = img.width;
        s.image = io::to_unit(img);
        try {
            s.mask = io::to_mask(msk);
        } catch (const DataError& err) {
            throw DataError((dir / e.mask).string() + ": " + err.what());
        }
        data.samples.push_back(std::move(s));
        data.names.push_back(e.image);
    }
    return data;
}

ScoreTable score_predictions(std::span<const std::vector<std::uint8_t>> predictions,
                             std::span<const synth::Sample> samples) {
    if (samples.empty()) throw DataError("no samples to evaluate");
    if (predictions.size() != samples.size()) throw ContractError("score_predictions: count mismatch");
    ScoreTable table;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const loss::Metrics m = loss::iou_dice_metrics(predictions[i], samples[i].mask);
        table.rows.push_back(m);
        table.mean_iou += m.iou;
        table.mean_dice += m.dice;
    }
    table.mean_iou /= static_cast<double>(samples.size());
    table.mean_dice /= static_cast<double>(samples.size());
    return table;
}

int cmd_synth(const RunConfig& config, std::ostream& out) {
    config.synth.validate();
    const fs::path dir = config.paths.data_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create data directory '" + dir.string() + "'");

    std::string manifest;
    for (std::size_t i = 0; i < config.synth.count; ++i) {
        const synth::Sample s = synth::generate_sample(config.synth, config.synth_seed, i);
        const std::string img = sample_name("img", i), msk = sample_name("msk", i);
        io::write_pgm(dir / img, io::from_unit(s.image, s.height, s.width));
        io::write_pgm(dir / msk, io::from_mask(s.mask, s.height, s.width));
        manifest += img + "\t" + msk + "\t" + std::to_string(config.synth_seed) + "\t" + std::to_string(i) + "\n";
    }
    io::write_file(dir / kManifestName,
                   std::span(reinterpret_cast<const std::uint8_t*>(manifest.data()), manifest.size()));
    out << "wrote " << config.synth.count << " samples to " << dir.string() << "\n";
    return 0;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
    config.train.validate();
    if (config.paths.checkpoint.empty()) config.model.validate();
    const Dataset data = load_dataset(config.paths.data_dir);
    if (data.samples.empty()) throw DataError("no samples in " + config.paths.data_dir);
    const fs::path dir = prepare_out_dir(config);

    std::unique_ptr<CpUnet> model;
    std::size_t start = 0;
    if (!config.paths.checkpoint.empty()) {
        model = load_model(config, &start);
        out << "resuming from " << config.paths.checkpoint << " at step " << start << "\n";
    } else {
        model = std::make_unique<CpUnet>(config.model);
    }
    check_sizes(*model, data);

    std::ofstream log(dir / "train.log", std::ios::trunc);
    if (!log) throw IoError("cannot write " + (dir / "train.log").string());
    train::TrainHooks hooks;
    hooks.start_step = start;
    hooks.on_step = [&](const train::StepRecord& r) { log << train::format_step(r) << std::endl; };
    hooks.on_eval = [&](const train::EvalRecord& r) {
        log << train::format_eval(r) << std::endl;
        out << "step " << r.step << "  iou " << fmt(r.iou) << "  dice " << fmt(r.dice) << "\n";
    };
    const train::TrainLog result = train::train(*model, data.samples, config.train, hooks);
    log.flush();

    io::save_checkpoint(dir / "model.ckpt", *model, result.final_step);
    {
        const train::Snapshot last = train::snapshot(model->parameters());
        train::restore(model->parameters(), result.best);
        io::save_checkpoint(dir / "best.ckpt", *model, result.best_step + 1);
        train::restore(model->parameters(), last);
    }
    out << "best val dice " << fmt(result.best_val_dice) << " at step " << result.best_step << "\n";
    out << "wrote " << (dir / "model.ckpt").string() << ", " << (dir / "best.ckpt").string() << ", "
        << (dir / "train.log").string() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& config, std::ostream& out) {
    const std::unique_ptr<CpUnet> model = load_model(config);
    const Dataset data = load_dataset(config.paths.data_dir);
    if (data.samples.empty()) throw DataError("no samples in " + config.paths.data_dir);
    check_sizes(*model, data);
    const fs::path dir = prepare_out_dir(config);

    std::vector<std::size_t> all(data.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const train::EvalReport report = train::evaluate(*model, data.samples, all, config.train.seed);

    std::string table = "image\tiou\tdice\n";
    for (std::size_t i = 0; i < all.size(); ++i) {
        table += data.names[i] + "\t" + fmt(report.per_sample[i].iou) + "\t" + fmt(report.per_sample[i].dice) + "\n";
    }
    table += "mean\t" + fmt(report.mean_iou) + "\t" + fmt(report.mean_dice) + "\n";
    io::write_file(dir / "eval.tsv", std::span(reinterpret_cast<const std::uint8_t*>(table.data()), table.size()));
    out << table;
    return 0;
}

int cmd_predict(const RunConfig& config, std::ostream& out) {
    if (config.paths.image.empty()) throw ConfigError("paths.image is required");
    const std::unique_ptr<CpUnet> model = load_model(config);
    const io::GrayImage img = io::read_pgm(config.paths.image);
    const auto& mc = model->config();
    const std::size_t factor = std::size_t{1} << mc.stages;
    if (img.height % factor != 0 || img.width % factor != 0) {
        throw ConfigError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                          ", sides must be divisible by " + std::to_string(factor) + "; resize it to " +
                          std::to_string(mc.height) + "x" + std::to_string(mc.width));
    }
    if (img.height != mc.height || img.width != mc.width) {
        throw ConfigError("image " + shape_str({1, img.height, img.width}) + " does not match the checkpoint input " +
                          shape_str({1, mc.height, mc.width}) + "; resize it first");
    }
    const fs::path dir = prepare_out_dir(config);

    std::mt19937_64 rng(config.train.seed);
    const std::vector<double> pixels = io::to_unit(img);
    const Tensor probs = model->predict(Tensor::constant({1, img.height, img.width}, pixels), rng);
    const std::vector<std::uint8_t> mask = loss::threshold(probs.values());
    const std::vector<std::uint8_t> contour = cpm::contour_pixels(mask, img.height, img.width);

    io::GrayImage overlay = io::from_unit(pixels, img.height, img.width);
    for (std::size_t i = 0; i < contour.size(); ++i) {
        if (contour[i]) overlay.pixels[i] = 255;
    }
    const std::string stem = fs::path(config.paths.image).stem().string();
    const fs::path mask_path = dir / (stem + "_mask.pgm");
    const fs::path overlay_path = dir / (stem + "_overlay.pgm");
    io::write_pgm(mask_path, io::from_mask(mask, img.height, img.width));
    io::write_pgm(overlay_path, overlay);

    std::size_t fg = 0;
    for (auto v : mask) fg += v;
    out << "foreground fraction " << fmt(static_cast<double>(fg) / static_cast<double>(mask.size())) << "\n";
    out << "wrote " << mask_path.string() << " and " << overlay_path.string() << "\n";
    return 0;
}

int cmd_gradcheck(const RunConfig& config, std::ostream& out, bool inject_fault) {
    const CpUnetConfig& mc = config.model;
    if (mc.stages > 2 || mc.height > 16 || mc.width > 16) {
        throw ConfigError("gradcheck needs a small model: stages <= 2 and sides <= 16 (got stages=" +
                          std::to_string(mc.stages) + ", " + std::to_string(mc.height) + "x" +
                          std::to_string(mc.width) + ")");
    }
    GradcheckSuiteOptions options;
    options.inject_fault = inject_fault;
    const std::vector<BlockReport> reports = run_gradcheck_suite(mc, options);
    bool ok = true;
    for (const BlockReport& r : reports) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-18s max_rel_error %.3e  coords %4zu  %s\n", r.block.c_str(),
                      r.result.max_rel_error, r.result.coords_checked, r.passed ? "PASS" : "FAIL");
        out << buf;
        if (!r.passed) {
            out << "  worst tensor: " << r.result.worst_tensor << "\n";
            ok = false;
        }
    }
    return ok ? 0 : 4;
}

}  // namespace cpunet::cli
