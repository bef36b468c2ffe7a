#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dregnet/errors.hpp"
#include "dregnet/harness/commands.hpp"

int main(int argc, char** argv) {
    using namespace dregnet::harness;

    CLI::App app{"dregnet: minibatch SGD with distinctive regularization"};
    app.require_subcommand(1);

    std::string config, axis, model, dataset;
    bool whole = false;

    auto* train = app.add_subcommand("train", "Train one run from a config file");
    train->add_option("config", config, "Config file (section.key = value)")->required()->check(CLI::ExistingFile);

    auto* sweep = app.add_subcommand("sweep", "Train every point of one sweep axis");
    sweep->add_option("config", config, "Base config file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--axis", axis, "lambda | position | momentum | batch-size")->required();

    auto* verify = app.add_subcommand("verify", "Run the oracle suites and print a verdict per suite");

    auto* eval = app.add_subcommand("eval", "Report a saved model's accuracy on a dataset");
    eval->add_option("model", model, "Model file written by train")->required()->check(CLI::ExistingFile);
    eval->add_option("dataset", dataset, "Config file whose data.* keys describe the dataset")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_flag("--all", whole, "Use the whole dataset instead of the held-out split");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train(config, std::cout);
        if (*sweep) return cmd_sweep(config, axis, std::cout);
        if (*verify) return cmd_verify(std::cout);
        if (*eval) return cmd_eval(model, dataset, whole, std::cout);
    } catch (const dregnet::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
