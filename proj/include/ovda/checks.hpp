#pragma once

// Self-contained verification suite behind `ovda check`: streaming
// equivalence, causality, gradient checks and the alignment oracle.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ovda {

struct CheckOptions {
    std::uint64_t seed = 0;
    // Runs batch mode with a band one frame wider than the cache, which must
    // make the equivalence check fail.
    bool inject_band_bug = false;
};

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

std::vector<CheckResult> run_checks(const CheckOptions& opt);

// "PASS name: detail" lines; returns true when every check passed.
bool print_checks(std::ostream& os, const std::vector<CheckResult>& results);

}  // namespace ovda
