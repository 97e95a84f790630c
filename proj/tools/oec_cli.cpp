#include <oec/cli.hpp>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv)
{
    // Log to stderr so stdout carries only the summary. Level from OEC_LOG.
    spdlog::set_default_logger(spdlog::stderr_color_mt("oec"));
    const char* level = std::getenv("OEC_LOG");
    spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
    std::vector<std::string> args(argv + 1, argv + argc);
    return oec::cli::main(args, std::cout, std::cerr);
}
