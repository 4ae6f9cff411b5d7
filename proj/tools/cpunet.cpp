#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpunet/commands.hpp"
#include "cpunet/errors.hpp"

namespace {

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonOptions& opts) {
    sub->add_option("--config", opts.config_path, "key = value config file with [model]/[train]/[synth]/[paths]");
    sub->add_option("--set", opts.overrides, "override one key, e.g. --set train.lr0=0.01")->take_all();
}

cpunet::RunConfig build_config(const CommonOptions& opts) {
    cpunet::RunConfig config;
    if (!opts.config_path.empty()) cpunet::apply_config_file(config, opts.config_path);
    for (const std::string& s : opts.overrides) cpunet::apply_override(config, s);
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CPU segmentation network with contour-aware decoding"};
    app.require_subcommand(1);

    CommonOptions opts;
    bool inject_fault = false;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic image/mask dataset");
    CLI::App* train = app.add_subcommand("train", "train on a dataset directory");
    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a dataset directory");
    CLI::App* predict = app.add_subcommand("predict", "segment one PGM image");
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every block");
    for (CLI::App* sub : {synth, train, eval, predict, gradcheck}) add_common(sub, opts);
    gradcheck->add_flag("--inject-fault", inject_fault)->group("");

    CLI11_PARSE(app, argc, argv);

    try {
        const cpunet::RunConfig config = build_config(opts);
        if (synth->parsed()) return cpunet::cli::cmd_synth(config, std::cout);
        if (train->parsed()) return cpunet::cli::cmd_train(config, std::cout);
        if (eval->parsed()) return cpunet::cli::cmd_eval(config, std::cout);
        if (predict->parsed()) return cpunet::cli::cmd_predict(config, std::cout);
        return cpunet::cli::cmd_gradcheck(config, std::cout, inject_fault);
    } catch (const cpunet::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
