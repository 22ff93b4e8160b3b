#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ntkstop::cli {

inline constexpr const char* version = "0.1.0";

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

const std::vector<std::string>& subcommands();

// Default configuration document of a subcommand; every accepted key appears.
nlohmann::json default_config(const std::string& subcommand);

// Defaults, then the config file (merge patch), then dotted --set overrides.
// Throws UsageError on unknown keys or malformed values.
nlohmann::json resolve_config(const std::string& subcommand, const nlohmann::json& file,
                              const std::vector<std::string>& overrides);

// FNV-1a 64 of the compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

// `args` excludes the program name. Returns 0 on success, 1 on runtime
// failure, 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace ntkstop::cli
