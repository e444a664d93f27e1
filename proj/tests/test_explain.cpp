#include <doctest.h>

#include <algorithm>
#include <random>

#include "modelchat/explain.hpp"
#include "modelchat/text.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace modelchat;

namespace {

ModelIR with_constraint(const ModelIR& ir, const std::string& text) {
  auto res = parse_constraint_dsl(text, ir);
  REQUIRE(res.ok());
  return attach_counterfactuals(ir, {*res.spec});
}

ConstraintSpec spec_of(const ModelIR& ir, const std::string& text) {
  auto res = parse_constraint_dsl(text, ir);
  REQUIRE_MESSAGE(res.ok(), text);
  return *res.spec;
}

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

// An IIS must be infeasible as a whole and feasible with any member removed.
void check_irreducible(const Instance& inst, const IISResult& iis) {
  CHECK(check_feasible(restrict_instance(inst, iis.members)) == Feasibility::Infeasible);
  for (std::size_t k = 0; k < iis.members.size(); ++k) {
    auto without = iis.members;
    without.erase(without.begin() + static_cast<long>(k));
    CAPTURE(iis.members[k].id);
    CHECK(check_feasible(restrict_instance(inst, without)) == Feasibility::Feasible);
  }
}

// Smallest |delta| on a grid that makes the model feasible when added to
// every instance of one parameter.
std::optional<double> grid_restoration(const ModelIR& ir, const std::string& param, double step,
                                       double limit) {
  for (double d = 0.0; d <= limit + 1e-12; d += step) {
    for (double sign : {1.0, -1.0}) {
      ModelIR m = apply_modification(ir, {{param, {}, ModKind::AddDelta, sign * d, {}}});
      if (check_feasible(instantiate(m)) == Feasibility::Feasible) return sign * d;
    }
  }
  return std::nullopt;
}

double objective_with(const ModelIR& ir, const ParamInstance& p, double delta) {
  SolveResult r = solve_model(apply_modification(ir, {{p.name, p.index, ModKind::AddDelta, delta, {}}}));
  REQUIRE(r.optimal());
  return r.objective;
}

}  // namespace

TEST_CASE("infprod IIS is the labor-free pair") {
  ModelIR ir = testing::load_model("infprod");
  IISResult iis = compute_iis(ir);
  CHECK(iis.ids() == std::vector<std::string>{"M", "D"});
  CHECK_FALSE(iis.indeterminate);
  CHECK(iis.oracle_calls >= static_cast<int>(iis.members.size()));
  check_irreducible(instantiate(ir), iis);
}

TEST_CASE("feasible model has no IIS") {
  CHECK_THROWS_AS(compute_iis(testing::load_model("prod")), ExplainError);
  try {
    compute_iis(testing::load_model("prod"));
  } catch (const ExplainError& e) {
    CHECK(e.kind() == ExplainError::Kind::ModelFeasible);
    CHECK(std::string(e.what()) == "model is feasible");
  }
}

TEST_CASE("property: every IIS is irreducible and appears in the exhaustive list") {
  std::vector<std::pair<std::string, ModelIR>> cases = {
      {"infprod", testing::load_model("infprod")},
      {"two_conflicts", testing::load_fixture("two_conflicts")},
      {"infknap", testing::load_model("infknap")},
      {"prod+cf", with_constraint(testing::load_model("prod"), "x + y >= 10")},
      {"binary_three", testing::load_fixture("binary_three")},
  };
  for (const auto& [name, ir] : cases) {
    CAPTURE(name);
    Instance inst = instantiate(ir);
    IISResult iis = compute_iis(inst);
    check_irreducible(inst, iis);
    auto every = testing::all_iis(inst);
    REQUIRE_FALSE(every.empty());
    CHECK(std::find(every.begin(), every.end(), sorted(iis.ids())) != every.end());
  }
}

TEST_CASE("two independent conflicts: the filter isolates one of them") {
  Instance inst = instantiate(testing::load_fixture("two_conflicts"));
  IISResult iis = compute_iis(inst);
  auto ids = sorted(iis.ids());
  bool x_pair = ids == std::vector<std::string>{"xa", "xb"};
  bool y_pair = ids == std::vector<std::string>{"ya", "yb"};
  CHECK((x_pair || y_pair));
  CHECK(testing::all_iis(inst).size() == 2);
}

TEST_CASE("infknap IIS pins down the item bounds") {
  IISResult iis = compute_iis(testing::load_model("infknap"));
  CHECK(iis.ids() == std::vector<std::string>{"weight_limit", "value_target", "pick[i1].ub", "pick[i3].ub"});
}

TEST_CASE("IIS on a counterfactual names the new row") {
  ModelIR ir = with_constraint(testing::load_model("prod"), "x + y >= 10");
  auto ids = compute_iis(ir).ids();
  CHECK(std::find(ids.begin(), ids.end(), "L") != ids.end());
  CHECK(std::find(ids.begin(), ids.end(), "why_not_1") != ids.end());
}

TEST_CASE("restoration matches the grid oracle on infprod") {
  ModelIR ir = testing::load_model("infprod");
  RestorationPlan plan = restore_feasibility(ir, {{"machine_cap", {}, 1.0}});
  REQUIRE(plan.slacks.size() == 1);
  auto oracle = grid_restoration(ir, "machine_cap", 0.25, 5.0);
  REQUIRE(oracle);
  CHECK(plan.slacks[0].change() == doctest::Approx(*oracle).epsilon(1e-9));
  CHECK(plan.slacks[0].change() == doctest::Approx(1.0));
  CHECK(plan.total_penalty == doctest::Approx(1.0));
  CHECK(plan.certified);
  CHECK_FALSE(plan.defaulted);
  REQUIRE(plan.modifications.size() == 1);
  CHECK(plan.modifications[0].kind == ModKind::AddDelta);

  // The alternative: lowering the requirement.
  RestorationPlan other = restore_feasibility(ir, {{"min_x", {}, 1.0}});
  CHECK(other.slacks[0].change() == doctest::Approx(-1.0));
  CHECK(*grid_restoration(ir, "min_x", 0.25, 5.0) == doctest::Approx(-1.0));
}

TEST_CASE("restoration weights choose the cheaper parameter") {
  ModelIR ir = testing::load_model("infprod");
  RestorationPlan plan = restore_feasibility(ir, {{"machine_cap", {}, 5.0}, {"min_x", {}, 1.0}});
  REQUIRE(plan.slacks.size() == 2);
  CHECK(plan.slacks[0].change() == doctest::Approx(0.0));
  CHECK(plan.slacks[1].change() == doctest::Approx(-1.0));
  CHECK(plan.total_penalty == doctest::Approx(1.0));
}

TEST_CASE("default adjustables come from the IIS") {
  RestorationPlan plan = restore_feasibility(testing::load_model("infprod"), {});
  CHECK(plan.defaulted);
  REQUIRE(plan.iis);
  CHECK(plan.iis->ids() == std::vector<std::string>{"M", "D"});
  CHECK(plan.total_penalty == doctest::Approx(1.0));
  CHECK(plan.certified);
  CHECK(max_violation(instantiate(apply_modification(testing::load_model("infprod"), plan.modifications)),
                      plan.certificate) <= 1e-6);
}

TEST_CASE("adjustables that miss the conflict are reported") {
  try {
    restore_feasibility(testing::load_model("infprod"), {{"labor_cap", {}, 1.0}});
    FAIL("expected insufficient adjustables");
  } catch (const ExplainError& e) {
    CHECK(e.kind() == ExplainError::Kind::InsufficientAdjustables);
    CHECK(std::string(e.what()).find("insufficient adjustables") != std::string::npos);
    CHECK(e.details() == std::vector<std::string>{"M", "D"});
  }
  // Naming the constraint family resolves to its right-hand side.
  try {
    restore_feasibility(testing::load_model("infprod"), {{"L", {}, 1.0}});
    FAIL("expected insufficient adjustables");
  } catch (const ExplainError& e) {
    CHECK(e.kind() == ExplainError::Kind::InsufficientAdjustables);
  }
}

TEST_CASE("coefficients are not adjustable") {
  ModelIR ir = testing::load_model("infprod");
  RestorationPlan plan = restore_feasibility(ir, {{"labor_use", {}, 1.0}, {"machine_cap", {}, 1.0}});
  REQUIRE(plan.rejected.size() == 1);
  CHECK(plan.rejected[0].reason == "lhs-parameter");
  CHECK(plan.rejected[0].warning == lhs_immutability_warning("labor_use"));
  CHECK(plan.slacks.size() == 1);

  try {
    restore_feasibility(ir, {{"labor_use", {}, 1.0}});
    FAIL("expected error");
  } catch (const ExplainError& e) {
    CHECK(e.kind() == ExplainError::Kind::InvalidRequest);
  }
}

TEST_CASE("restoration on a MILP") {
  ModelIR ir = testing::load_model("infknap");
  RestorationPlan plan = restore_feasibility(ir, {});
  CHECK(plan.defaulted);
  CHECK(plan.certified);
  CHECK(plan.total_penalty == doctest::Approx(1.0));
  auto oracle = grid_restoration(ir, "min_value", 0.5, 10.0);
  REQUIRE(oracle);
  double min_value_change = 0.0;
  for (const auto& s : plan.slacks) {
    if (s.param.name == "min_value") min_value_change = s.change();
  }
  CHECK(min_value_change == doctest::Approx(*oracle));
}

TEST_CASE("restoring a feasible model is an error") {
  CHECK_THROWS_AS(restore_feasibility(testing::load_model("prod"), {}), ExplainError);
}

TEST_CASE("shadow prices agree with central finite differences") {
  const double h = 1e-4;
  ModelIR prod = testing::load_model("prod");
  SensitivityReport labor = sensitivity(prod, "labor_cap");
  REQUIRE(labor.shadow_price);
  CHECK(*labor.shadow_price == doctest::Approx(2.0));
  CHECK(labor.row == "L");
  CHECK_FALSE(labor.degenerate);
  SensitivityReport machine = sensitivity(prod, "machine_cap");
  REQUIRE(machine.shadow_price);
  CHECK(*machine.shadow_price == doctest::Approx(1.0));

  std::vector<std::pair<std::string, ModelIR>> models = {{"prod", prod},
                                                         {"supply", testing::load_model("supply")}};
  int compared = 0;
  for (const auto& [name, ir] : models) {
    Instance inst = instantiate(ir);
    REQUIRE_FALSE(solve_lp(inst).degenerate);
    for (const auto& p : ir.params) {
      if (p.side != ParamSide::ConstraintRhs) continue;
      for (const auto& key : index_product(ir, p.index_sets)) {
        ParamInstance pi{p.name, key};
        if (rhs_rows_of(inst, pi).size() != 1) continue;
        SensitivityReport rep = sensitivity(ir, p.name, key);
        REQUIRE(rep.shadow_price);
        double fd = (objective_with(ir, pi, h) - objective_with(ir, pi, -h)) / (2 * h);
        CAPTURE(pi.label());
        CHECK(std::abs(*rep.shadow_price - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
        ++compared;
      }
    }
  }
  CHECK(compared >= 10);
}

TEST_CASE("unsupported sensitivity requests point to what-if") {
  SensitivityReport milp = sensitivity(testing::load_model("knapsack"), "capacity");
  CHECK(milp.unsupported == UnsupportedReason::MilpModel);
  CHECK_FALSE(milp.shadow_price);
  CHECK(milp.suggestion.find("evaluate a specific modification") != std::string::npos);

  SensitivityReport lhs = sensitivity(testing::load_model("prod"), "labor_use", {"X"});
  CHECK(lhs.unsupported == UnsupportedReason::LhsParameter);
  CHECK(lhs.suggestion.find("evaluate a specific modification") != std::string::npos);

  SensitivityReport cost = sensitivity(testing::load_model("prod"), "profit", {"X"});
  CHECK(cost.unsupported == UnsupportedReason::ObjectiveParameter);
  CHECK(to_string(UnsupportedReason::LhsParameter) == "lhs-parameter");
}

TEST_CASE("sensitivity on aggregate or infeasible references is an error") {
  try {
    sensitivity(testing::load_model("supply"), "demand");
    FAIL("expected aggregate error");
  } catch (const ExplainError& e) {
    CHECK(e.kind() == ExplainError::Kind::AggregateParameter);
    CHECK(std::string(e.what()).find("aggregate parameter; query per-row") != std::string::npos);
    CHECK(e.details().size() == 2);
  }
  try {
    sensitivity(testing::load_model("infprod"), "labor_cap");
    FAIL("expected not-optimal error");
  } catch (const ExplainError& e) {
    CHECK(e.kind() == ExplainError::Kind::NotOptimal);
  }
  CHECK_THROWS_AS(sensitivity(testing::load_model("prod"), "labour_cap"), ModelError);
}

TEST_CASE("what-if re-solves") {
  ModelIR ir = testing::load_model("prod");
  WhatIfReport more = evaluate_modification(ir, {{"labor_cap", {}, ModKind::SetTo, 5.0, {}}});
  REQUIRE(more.delta);
  CHECK(*more.delta == doctest::Approx(2.0));
  CHECK(*more.objective == doctest::Approx(12.0));
  REQUIRE(more.changes.size() == 1);
  CHECK(more.changes[0].column == "y");

  WhatIfReport none = evaluate_modification(ir, {{"machine_cap", {}, ModKind::SetTo, 0.0, {}}});
  CHECK(*none.objective == doctest::Approx(8.0));
  CHECK(none.changes.size() == 2);
  CHECK(none.changes[0].column == "x");

  WhatIfReport same = evaluate_modification(ir, {{"labor_cap", {}, ModKind::AddDelta, 0.0, {}}});
  CHECK(*same.delta == 0.0);
  CHECK(same.changes.empty());

  WhatIfReport broke = evaluate_modification(ir, {{"x.lb", {}, ModKind::SetTo, 3.0, {}}});
  CHECK(broke.status == SolveStatus::Infeasible);
  CHECK_FALSE(broke.delta);
}

TEST_CASE("why-not counterfactuals") {
  ModelIR ir = testing::load_model("prod");
  WhyNotReport no_y = apply_counterfactual(ir, {spec_of(ir, "y <= 0")});
  CHECK(*no_y.objective == doctest::Approx(6.0));
  CHECK(*no_y.delta == doctest::Approx(-4.0));
  CHECK(no_y.rows_added == 1);
  CHECK(no_y.canonical == std::vector<std::string>{"+1*y <= 0"});
  CHECK(no_y.families == std::vector<std::string>{"why_not_1"});

  WhyNotReport tautology = apply_counterfactual(ir, {spec_of(ir, "x >= 0")});
  CHECK(*tautology.delta == doctest::Approx(0.0));

  WhyNotReport impossible = apply_counterfactual(ir, {spec_of(ir, "x + y >= 10")});
  CHECK(impossible.status == SolveStatus::Infeasible);
  REQUIRE(impossible.iis);
  auto ids = impossible.iis->ids();
  CHECK(std::find(ids.begin(), ids.end(), "L") != ids.end());
  CHECK(std::find(ids.begin(), ids.end(), "why_not_1") != ids.end());

  ModelIR fac = testing::load_model("facility");
  WhyNotReport single = apply_counterfactual(fac, {spec_of(fac, "sum over s in SITES: open[s] <= 1")});
  CHECK(single.rows_added == 1);
  CHECK(single.status == SolveStatus::Infeasible);
  REQUIRE(single.iis);
  CHECK_FALSE(single.iis->members.empty());
}

TEST_CASE("attached family names avoid collisions") {
  ModelIR ir = testing::load_model("prod");
  ModelIR once = attach_counterfactuals(ir, {spec_of(ir, "y <= 1")});
  std::vector<std::string> names;
  ModelIR twice = attach_counterfactuals(once, {spec_of(ir, "y <= 1"), spec_of(ir, "x <= 1")}, &names);
  CHECK(names == std::vector<std::string>{"why_not_2", "why_not_3"});
  CHECK(twice.find_constraint("why_not_2")->description == "counterfactual constraint: y <= 1");
}

TEST_CASE("rows added equals the number of instantiated rows") {
  ModelIR ir = testing::load_model("supply");
  for (const std::string& text : {std::string("forall f in FACILITY: extra[f] <= 0"),
                                   std::string("forall f in FACILITY, c in CUSTOMER: ship[f, c] <= 60"),
                                   std::string("sum over c in CUSTOMER: ship['plant1', c] <= 70")}) {
    CAPTURE(text);
    ConstraintSpec spec = spec_of(ir, text);
    WhyNotReport rep = apply_counterfactual(ir, {spec});
    std::size_t expected = 1;
    for (const auto& b : spec.binders) expected *= ir.find_set(b.set)->members.size();
    CHECK(rep.rows_added == static_cast<int>(expected));
    CHECK(rep.canonical.size() == expected);
  }
}

TEST_CASE("property: tightening a cap never improves the maximum") {
  ModelIR ir = testing::load_model("prod");
  std::mt19937 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    double a = (rng() % 40) / 10.0;
    double b = a + (rng() % 20) / 10.0;
    WhatIfReport lo = evaluate_modification(ir, {{"labor_cap", {}, ModKind::SetTo, a, {}}});
    WhatIfReport hi = evaluate_modification(ir, {{"labor_cap", {}, ModKind::SetTo, b, {}}});
    REQUIRE(lo.objective);
    REQUIRE(hi.objective);
    CHECK(*lo.objective <= *hi.objective + 1e-9);

    WhyNotReport cf = apply_counterfactual(ir, {spec_of(ir, "x <= " + format_number(a))});
    REQUIRE(cf.delta);
    CHECK(*cf.delta <= 1e-9);
  }
}

TEST_CASE("explanations leave their input untouched") {
  ModelIR ir = testing::load_model("infprod");
  const ModelIR copy = ir;
  compute_iis(ir);
  restore_feasibility(ir, {});
  evaluate_modification(ir, {{"labor_cap", {}, ModKind::SetTo, 9.0, {}}});
  apply_counterfactual(ir, {spec_of(ir, "y <= 1")});
  CHECK(ir == copy);
}
