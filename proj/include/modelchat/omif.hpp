#pragma once

// Reader and writer for the `.omif` model interchange format, plus the
// constraint micro-language used for counterfactual constraints.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "modelchat/model.hpp"

namespace modelchat {

struct Diagnostic {
  SourcePos pos;
  std::string message;
  std::vector<std::string> expected;  // expected-token hints, possibly empty

  std::string to_string() const;
};

struct ParseResult {
  std::optional<ModelIR> model;
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return model.has_value(); }
};

/// Parses and validates a document. On success the model has parameter
/// sides assigned; otherwise every problem is reported with its position.
ParseResult parse_model(std::string_view text);

/// Canonical document: fixed block order, declaration order within blocks.
std::string serialize_model(const ModelIR& ir);

enum class SpecOrigin { User, ProgrammerAgent };

struct ConstraintSpec {
  std::vector<Binder> binders;  // from an optional `forall i in I:` prefix
  ExprPtr lhs;
  Sense sense = Sense::Le;
  ExprPtr rhs;
  SpecOrigin origin = SpecOrigin::User;

  /// Canonical source text of the specification.
  std::string text() const;
};

struct SpecResult {
  std::optional<ConstraintSpec> spec;
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return spec.has_value(); }
};

/// `[forall i in I, ...:] expr (<= | >= | =) expr`, resolved against `ir`.
SpecResult parse_constraint_dsl(std::string_view text, const ModelIR& ir,
                                SpecOrigin origin = SpecOrigin::User);

/// Splits a block of constraint text on newlines and ';' and parses each
/// non-empty, non-comment line. Diagnostics carry the 1-based line number.
struct SpecBlockResult {
  std::vector<ConstraintSpec> specs;
  std::vector<Diagnostic> diagnostics;
};
SpecBlockResult parse_constraint_block(std::string_view text, const ModelIR& ir,
                                       SpecOrigin origin = SpecOrigin::User);

ConstraintDecl to_constraint(const ConstraintSpec& spec, std::string name, std::string description);

/// Expanded rows of `spec`, each normalized to `terms <= c` or `terms = c`
/// with terms sorted by column label; the sorted list is the spec's
/// canonical form for comparisons.
std::vector<std::string> canonical_form(const ModelIR& ir, const ConstraintSpec& spec);

}  // namespace modelchat
