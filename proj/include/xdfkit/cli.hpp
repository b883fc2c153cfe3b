#pragma once

#include "xdfkit/format.hpp"
#include "xdfkit/synthlab.hpp"
#include "xdfkit/timeline.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace xdfkit {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;   ///< parse or I/O error
inline constexpr int warnings = 2;  ///< validate found warnings
inline constexpr int check = 3;     ///< strict-mode deviation or failed phase check
inline constexpr int usage = 64;
} // namespace exit_code

inline constexpr unsigned default_port = 8377;

/// Runs the `xdfkit` command line. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// Report building and formatting shared by the CLI and the service.

struct StreamSummary {
    StreamInfo info;
    std::size_t sample_count = 0;
    std::optional<RateReport> rate;  ///< empty when timestamps could not be resolved
    std::optional<std::string> problem;
};

/// One summary per stream, rates measured on synced timestamps.
std::vector<StreamSummary> summarize(const Recording& rec, double threshold = default_deviation_threshold);

/// Columns: id, name, type, format, channels, samples, nominal and effective
/// rate, relative deviation, flag ("DEVIATES" or empty).
std::string format_stream_table(const std::vector<StreamSummary>& rows);

/// One node per line, two spaces per level, `name: text` when text is set.
std::string format_tree(const XmlNode& node);

std::string format_phase_report(const PhaseReport& report, double tolerance);

/// Parse warnings plus per-stream timestamp problems.
std::vector<std::string> validation_warnings(const LoadResult& loaded);

/// Port from XDFKIT_PORT when set and valid, else the default.
unsigned port_from_environment();

} // namespace xdfkit
