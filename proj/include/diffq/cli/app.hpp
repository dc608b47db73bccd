#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffq/hardened.hpp"

namespace diffq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Bad flags, missing or invalid config files.
class UsageError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

/// JSON form of a hardened model, used by pack and unpack.
nlohmann::json model_to_json(const HardenedModel& model);
HardenedModel model_from_json(const nlohmann::json& j);

}  // namespace diffq::cli
