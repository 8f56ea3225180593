// Command-line front end: <binary> <subcommand> --config <path>
//
// Exit codes: 0 success, 2 solver failure (SolveFailure / NotFound / NoBracket),
// 3 configuration errors, 4 numerical-precondition errors (NotYamabePositive,
// ConformalKillingKernel), 1 anything else.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "cclab/config.hpp"

namespace {

void usage(std::ostream& out) {
    out << "usage: cclab <subcommand> --config <path>\n"
           "subcommands: lichnerowicz | coupled | k-sweep | two-solutions |\n"
           "             tau-admissibility | halfcont-demo | geom-check\n";
}

}  // namespace

int main(int argc, char** argv) {
    std::string sub, cfg_path;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--config") {
            if (i + 1 >= argc) {
                std::cerr << "error: --config requires a path\n";
                return 3;
            }
            cfg_path = argv[++i];
        } else if (arg == "-h" || arg == "--help") {
            usage(std::cout);
            return 0;
        } else if (sub.empty()) {
            sub = arg;
        } else {
            std::cerr << "error: unexpected argument '" << arg << "'\n";
            usage(std::cerr);
            return 3;
        }
    }
    if (sub.empty() || cfg_path.empty()) {
        usage(std::cerr);
        return 3;
    }

    std::ifstream in(cfg_path);
    if (!in) {
        std::cerr << "error: cannot read config file '" << cfg_path << "'\n";
        return 3;
    }
    std::stringstream text;
    text << in.rdbuf();

    try {
        cclab::RunConfig cfg = cclab::parse_config(text.str(), sub);
        int rc = cclab::run(cfg);
        std::cout << "wrote " << cfg.out_dir << "/summary.txt\n";
        return rc;
    } catch (const cclab::ParseError& e) {
        std::cerr << "config parse error: " << e.what() << "\n";
        return 3;
    } catch (const cclab::UnknownKey& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const cclab::RangeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const cclab::NotYamabePositive& e) {
        std::cerr << "numerical precondition: " << e.what() << "\n";
        return 4;
    } catch (const cclab::ConformalKillingKernel& e) {
        std::cerr << "numerical precondition: " << e.what() << "\n";
        return 4;
    } catch (const cclab::SolveFailure& e) {
        std::cerr << "solver failure: " << e.what() << "\n";
        return 2;
    } catch (const cclab::NotFound& e) {
        std::cerr << "not found: " << e.what() << "\n";
        return 2;
    } catch (const cclab::NoBracket& e) {
        std::cerr << "solver failure: " << e.what() << "\n";
        return 2;
    } catch (const cclab::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
