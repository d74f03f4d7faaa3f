#include <exception>
#include <functional>
#include <iostream>

#include "commands.hpp"
#include "labelflow/errors.hpp"

int main(int argc, char** argv) {
    using namespace labelflow::cli;
    CLI::App app{"labelflow: graph and continuum label propagation"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    std::function<int()> selected;
    register_commands(app, selected);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidation;
    }

    try {
        return selected();
    } catch (const labelflow::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const labelflow::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const labelflow::SolverError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return kSolver;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
