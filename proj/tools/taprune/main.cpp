#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "taprune/error.hpp"

int main(int argc, char** argv)
{
    using namespace taprune;
    CLI::App app{"Structured pruning with auxiliary-task transfer"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "taprune 0.1.0");
    int exit_code = cli::ok;
    cli::register_commands(app, exit_code);
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return cli::config_error;
    } catch (const cli::CheckFailed& e) {
        std::cerr << "check failed: " << e.message << '\n';
        return cli::check_failure;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return cli::config_error;
    } catch (const FormatError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return cli::config_error;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << '\n';
        return cli::run_failure;
    }
    return exit_code;
}
