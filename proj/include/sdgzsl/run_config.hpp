#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdgzsl/data.hpp"
#include "sdgzsl/evaluation.hpp"
#include "sdgzsl/trainer.hpp"

namespace sdgzsl {

// One JSON document drives every command: synthetic spec, training and
// evaluation settings. Unknown keys are rejected, and commands dump the
// fully resolved document (defaults filled in) so a run is reproducible
// from the dump alone.
struct RunConfig {
    std::uint64_t seed = 1;
    SyntheticSpec synthetic;
    TrainConfig train;
    EvalConfig eval;
};

// Parse a JSON document; missing keys keep their defaults.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
// Fully resolved dump.
std::string run_config_to_json(const RunConfig& cfg);

// Apply one --set override in "dotted.path=json-value" form, e.g.
// "train.weights.tc=2.5" or "train.stream=\"real\"" (bare strings are also
// accepted). The path must name a key that exists in the resolved document.
void apply_override(RunConfig& cfg, const std::string& assignment);

} // namespace sdgzsl
