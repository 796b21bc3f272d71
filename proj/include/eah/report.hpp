// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <ostream>
#include <string>

#include <json.hpp>

#include "eah/intervention.hpp"
#include "eah/sink_analysis.hpp"
#include "eah/toy_model.hpp"

namespace eah {

using ordered_json = nlohmann::ordered_json;

// Shortest text for `value` rounded to 9 significant digits.
std::string format_real(double value);

// A JSON number holding `value` rounded to 9 significant digits.
ordered_json json_real(double value);

// {"layer", "heads": [{"head", "sink_count", "alpha", "dense"}], "p", "skewness"}.
// Layers are numbered from 1 in every serialized output.
ordered_json to_json(const LayerSinkReport& report);

ordered_json to_json(const EahOutcome& outcome, const EahConfig& config);

ordered_json to_json(const toy::RunDiff& diff);

inline constexpr const char* kSweepCsvHeader =
    "layer,beta,top_n,copy_targets,selected_head,sink_count,p_after,skewness_after";

// Header plus one line per row. Multiple selected heads (top_n > 1) are
// joined with ';'. An undefined skewness is an empty field.
void write_sweep_csv(std::ostream& out, const SweepResult& result);

}  // namespace eah
