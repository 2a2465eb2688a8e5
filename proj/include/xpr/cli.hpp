// Command-line front end: synth, build-map, match, train, eval, selfcheck, bench.
#pragma once

#include "xpr/matching.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

namespace xpr {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitCheck = 3,
};

/// Runs one command; output goes to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct RunManifest {
  std::string command;
  Config config;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::map<std::string, double> timings_ms;
  nlohmann::json flags = nlohmann::json::object();

  nlohmann::json to_json() const;
};

/// Manifest path for an output file or directory: "<out>.manifest.json".
std::filesystem::path manifest_path(const std::filesystem::path& out);

/// One row of a match results file.
struct ResultRow {
  std::uint32_t query_id = 0;
  std::uint32_t best_place = 0;
  std::uint32_t best_k = 0;
  double sim = 0.0;
  double phi = 0.0;
  double psi = 0.0;
  int rank_of_truth = 0;
  std::vector<std::uint32_t> ranked;
};

inline constexpr const char* kResultsHeader = "query_id,best_place,best_k,sim,phi,psi,rank_of_truth,ranked_places";

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
/// Throws DataError with the line number on malformed rows.
std::vector<ResultRow> read_results_csv(std::istream& in, const std::string& source);

/// "R@<k>, <pct>" with two decimals.
std::string format_recall_line(int k, double recall);

}  // namespace xpr
