#pragma once

// The callable functions offered to the Operator: argument schemas,
// validation against a model, dispatch to the explanation strategies and the
// JSON payloads they return.

#include <stdexcept>
#include <string>
#include <vector>

#include "modelchat/explain.hpp"
#include "modelchat/lm.hpp"

namespace modelchat {

inline constexpr const char* kFeasibilityRestoration = "feasibility_restoration";
inline constexpr const char* kComponentsRetrieval = "components_retrival";
inline constexpr const char* kSensitivityAnalysis = "sensitivity_analysis";
inline constexpr const char* kEvaluateModification = "evaluate_modification";
inline constexpr const char* kExternalTools = "external_tools";

/// The four predefined functions, in the order they are offered.
const std::vector<std::string>& predefined_functions();
bool is_known_function(const std::string& name);

std::vector<ToolSchema> function_schemas(bool include_predefined = true);

class ArgumentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws ArgumentError naming the first problem: unknown function, bad
/// argument shape, unknown component or index.
void validate_call(const ModelIR& ir, const FunctionCall& call);

/// Runs a validated predefined call. Expected failures (feasible model,
/// insufficient adjustables, unsupported sensitivity, ...) are reported in the
/// payload under "error"; anything else propagates.
Json dispatch_call(const ModelIR& ir, const FunctionCall& call, const SolutionSnapshot* baseline = nullptr,
                   const SolverOptions& opts = {});

// Payload builders, shared by the CLI and the service.
Json to_json(const SolveResult& r, const Instance& inst);
Json to_json(const IISResult& r);
Json to_json(const RestorationPlan& p);
Json to_json(const SensitivityReport& r);
Json to_json(const WhatIfReport& r);
Json to_json(const WhyNotReport& r);
Json to_json(const ComponentView& v);
Json to_json(const Modification& m);

/// Every number appearing anywhere in a JSON value, in document order.
std::vector<double> payload_numbers(const Json& j);

}  // namespace modelchat
