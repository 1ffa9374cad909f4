#pragma once

#include "mmdstyle/losses.h"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mmdstyle {

/// Parses `gram`, `linear`, `poly`, `gaussian`, `bn`, or a fusion such as
/// `bn:0.5+poly:0.5`. Returns nullopt for anything else.
std::optional<FusionSpec> parse_method(const std::string& text, double poly_c);

/// Snapshot path for iteration `iter`: `<dir>/<stem>_<iter, 4 digits><ext>`.
std::string snapshot_path(const std::string& output, std::size_t iter);

/// Exit codes: 0 success, 1 runtime failure, 2 bad flags.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmdstyle
