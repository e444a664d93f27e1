#include <doctest.h>

#include <random>
#include <set>

#include "modelchat/model.hpp"
#include "modelchat/text.hpp"
#include "support.hpp"

using namespace modelchat;

namespace {

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
  auto at = s.find(from);
  REQUIRE(at != std::string::npos);
  return s.replace(at, from.size(), to);
}

std::string prod_text() { return testing::read_file(testing::dataset_path("models/prod.omif")); }

}  // namespace

TEST_CASE("prod validates and tags parameter sides") {
  ModelIR ir = testing::load_model("prod");
  auto rep = validate_model(ir);
  CHECK(rep.ok());
  CHECK(rep.sides.at("labor_cap") == ParamSide::ConstraintRhs);
  CHECK(rep.sides.at("machine_cap") == ParamSide::ConstraintRhs);
  CHECK(rep.sides.at("profit") == ParamSide::ObjectiveCost);
  CHECK(rep.sides.at("labor_use") == ParamSide::ConstraintLhs);
  CHECK(ir.find_param("labor_cap")->side == ParamSide::ConstraintRhs);
}

TEST_CASE("unknown set member in a reference is reported at the constraint") {
  std::string text = testing::read_file(testing::dataset_path("models/supply.omif"));
  text = replace_once(text, "make[f] <= pc['normal', f]", "make['plant9'] <= pc['normal', f]");
  auto res = parse_model(text);
  REQUIRE_FALSE(res.ok());
  bool found = false;
  for (const auto& d : res.diagnostics) {
    if (d.message.find("unknown index") != std::string::npos &&
        d.message.find("constraints.regular_cap") != std::string::npos) {
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("parameter used as coefficient and right-hand side is ambiguous") {
  std::string text = replace_once(prod_text(), "x <= machine_cap", "labor_cap * x <= machine_cap + labor_cap");
  auto res = parse_model(text);
  REQUIRE_FALSE(res.ok());
  bool found = false;
  for (const auto& d : res.diagnostics) found |= d.message.find("ambiguous side") != std::string::npos;
  CHECK(found);
}

TEST_CASE("objective use next to a constraint role keeps the constraint tag") {
  ModelIR ir = testing::load_model("infknap");
  CHECK(ir.find_param("value")->side == ParamSide::ConstraintLhs);
  CHECK(ir.find_param("min_value")->side == ParamSide::ConstraintRhs);
}

TEST_CASE("instantiate prod matches a hand expansion") {
  ModelIR ir = testing::load_model("prod");
  Instance inst = instantiate(ir);
  REQUIRE(inst.num_rows() == 2);
  REQUIRE(inst.num_cols() == 2);
  // Hand expansion: L: 1x + 1y <= 4, M: 1x + 0y <= 2, max 3x + 2y.
  std::vector<std::vector<double>> A = {{1, 1}, {1, 0}};
  CHECK(inst.dense() == A);
  CHECK(inst.rhs == std::vector<double>{4, 2});
  CHECK(inst.cost == std::vector<double>{3, 2});
  CHECK(inst.senses == std::vector<Sense>{Sense::Le, Sense::Le});
  CHECK(inst.objective_sense == ObjectiveSense::Maximize);
  CHECK(inst.num_integer() == 0);
  CHECK(inst.rows[0].label() == "L");
  CHECK(inst.cols[1].label() == "y");
  CHECK(inst.lower == std::vector<double>{0, 0});
  CHECK(inst.upper == std::vector<double>{kInf, kInf});
}

TEST_CASE("every nonzero carries provenance") {
  for (const char* name : testing::kBundledModels) {
    Instance inst = instantiate(testing::load_model(name));
    for (const auto& e : inst.entries) {
      if (e.value != 0.0) CHECK_FALSE(e.sources.empty());
    }
    for (const auto& v : inst.entries) CHECK(std::isfinite(v.value));
  }
  Instance prod = instantiate(testing::load_model("prod"));
  const auto& l_x = prod.entries.front();
  REQUIRE(l_x.sources.size() == 1);
  REQUIRE(l_x.sources[0].param);
  CHECK(l_x.sources[0].param->label() == "labor_use[X]");
  REQUIRE(prod.rhs_sources[0].size() == 1);
  CHECK(prod.rhs_sources[0][0].param->label() == "labor_cap");
}

TEST_CASE("knapsack dimensions") {
  Instance inst = instantiate(testing::load_model("knapsack"));
  CHECK(inst.num_rows() == 1);
  CHECK(inst.num_cols() == 3);
  CHECK(inst.num_integer() == 3);
  CHECK(inst.upper == std::vector<double>{1, 1, 1});
}

TEST_CASE("indexed families expand in set-member order") {
  Instance inst = instantiate(testing::load_model("supply"));
  CHECK(inst.num_cols() == 12);
  CHECK(inst.num_rows() == 11);
  CHECK(inst.cols[6].label() == "ship[plant1,north]");
  CHECK(inst.cols[7].label() == "ship[plant1,south]");
  CHECK(inst.rows[3].label() == "max_cap[plant1]");
  CHECK(inst.rows[10].label() == "meet_demand[south]");
  // flow[f]: sum_c ship[f,c] - make[f] - extra[f] = 0
  auto row = inst.dense()[*inst.find_row("flow[plant2]")];
  CHECK(row[1] == -1.0);
  CHECK(row[4] == -1.0);
  CHECK(row[8] == 1.0);
  CHECK(row[9] == 1.0);
}

TEST_CASE("empty constraint family contributes no rows") {
  Instance inst = instantiate(testing::load_fixture("empty_family"));
  CHECK(inst.num_rows() == 1);
  CHECK(inst.rows[0].family == "real");
}

TEST_CASE("instantiate is deterministic") {
  for (const char* name : testing::kBundledModels) {
    ModelIR ir = testing::load_model(name);
    CHECK(instantiate(ir) == instantiate(ir));
    CHECK(instantiate(ir) == instantiate(testing::load_model(name)));
  }
}

TEST_CASE("add-delta and scale-by give the same instance") {
  ModelIR ir = testing::load_model("prod");
  ModelIR added = apply_modification(ir, {{"labor_cap", {}, ModKind::AddDelta, 1.0, {}}});
  ModelIR scaled = apply_modification(ir, {{"labor_cap", {}, ModKind::ScaleBy, 1.25, {}}});
  Instance a = instantiate(added);
  CHECK(a.rhs[0] == 5.0);
  CHECK(a == instantiate(scaled));
  CHECK(instantiate(ir).rhs[0] == 4.0);  // input untouched
}

TEST_CASE("modification returns a fresh, unsolved model") {
  ModelIR ir = testing::load_model("prod");
  ir.status = SolveStatusCache::Optimal;
  const ModelIR before = ir;
  ModelIR out = apply_modification(ir, {{"machine_cap", {}, ModKind::SetTo, 0.0, {}}});
  CHECK(ir == before);
  CHECK(out.status == SolveStatusCache::Unsolved);
  CHECK(param_value(out, {"machine_cap", {}}) == 0.0);
}

TEST_CASE("unknown modification target suggests close names") {
  ModelIR ir = testing::load_model("prod");
  try {
    apply_modification(ir, {{"labour_cap", {}, ModKind::AddDelta, 1.0, {}}});
    FAIL("expected error");
  } catch (const ModelError& e) {
    CHECK(e.kind() == ModelError::Kind::NotFound);
    REQUIRE_FALSE(e.suggestions().empty());
    CHECK(e.suggestions().front() == "labor_cap");
  }
}

TEST_CASE("invalid index in a modification lists valid members") {
  ModelIR ir = testing::load_model("supply");
  try {
    apply_modification(ir, {{"pc", {"max", "plant9"}, ModKind::SetTo, 1.0, {}}});
    FAIL("expected error");
  } catch (const ModelError& e) {
    CHECK(std::string(e.what()) == "unknown index plant9; valid: plant1, plant2, plant3");
  }
}

TEST_CASE("partial index modifies every matching instance") {
  ModelIR ir = testing::load_model("supply");
  ModelIR out = apply_modification(ir, {{"pc", {"max"}, ModKind::AddDelta, 10.0, {}}});
  CHECK(param_value(out, {"pc", {"max", "plant1"}}) == 110.0);
  CHECK(param_value(out, {"pc", {"max", "plant3"}}) == 75.0);
  CHECK(param_value(out, {"pc", {"normal", "plant1"}}) == 80.0);
  ModelIR star = apply_modification(ir, {{"pc", {"*", "plant2"}, ModKind::ScaleBy, 2.0, {}}});
  CHECK(param_value(star, {"pc", {"normal", "plant2"}}) == 120.0);
  CHECK(param_value(star, {"pc", {"max", "plant2"}}) == 180.0);
}

TEST_CASE("variable bound modification") {
  ModelIR ir = testing::load_model("prod");
  ModelIR out = apply_modification(ir, {{"y.ub", {}, ModKind::SetTo, 1.0, {}}});
  Instance inst = instantiate(out);
  CHECK(inst.upper[1] == 1.0);
  CHECK(inst.upper[0] == kInf);
}

TEST_CASE("scale-by on an equality right-hand side is noted") {
  ModelIR prod = testing::load_model("prod");
  CHECK(modification_notes(prod, {{"labor_cap", {}, ModKind::ScaleBy, 2.0, {}}}).empty());
  ModelIR eq = testing::parse_or_throw(replace_once(prod_text(), "x <= machine_cap", "x = machine_cap"));
  CHECK_FALSE(modification_notes(eq, {{"machine_cap", {}, ModKind::ScaleBy, 2.0, {}}}).empty());
}

TEST_CASE("property: modifications change exactly the entries their provenance implies") {
  ModelIR ir = testing::load_model("supply");
  Instance base = instantiate(ir);
  std::mt19937 rng(7);
  std::vector<ParamInstance> all;
  for (const auto& p : ir.params) {
    for (const auto& t : index_product(ir, p.index_sets)) all.push_back({p.name, t});
  }
  auto depends = [](const std::vector<Contribution>& src, const ParamInstance& pi) {
    for (const auto& c : src) {
      if (c.param && *c.param == pi) return true;
    }
    return false;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const ParamInstance& pi = all[rng() % all.size()];
    double delta = static_cast<double>(static_cast<int>(rng() % 21) - 10) + 0.5;
    Instance got = instantiate(apply_modification(ir, {{pi.name, pi.index, ModKind::AddDelta, delta, {}}}));
    REQUIRE(got.entries.size() == base.entries.size());
    for (std::size_t k = 0; k < got.entries.size(); ++k) {
      bool changed = got.entries[k].value != base.entries[k].value;
      CHECK(changed == depends(base.entries[k].sources, pi));
    }
    for (int i = 0; i < base.num_rows(); ++i) {
      CHECK((got.rhs[i] != base.rhs[i]) == depends(base.rhs_sources[i], pi));
    }
    for (int j = 0; j < base.num_cols(); ++j) {
      CHECK((got.cost[j] != base.cost[j]) == depends(base.cost_sources[j], pi));
    }
  }
}

TEST_CASE("property: add-delta then its inverse restores the instance") {
  std::mt19937 rng(11);
  for (const char* name : testing::kBundledModels) {
    ModelIR ir = testing::load_model(name);
    Instance base = instantiate(ir);
    for (const auto& p : ir.params) {
      double d = 0.1 + (rng() % 1000) / 37.0;
      ModelIR there = apply_modification(ir, {{p.name, {}, ModKind::AddDelta, d, {}}});
      ModelIR back = apply_modification(there, {{p.name, {}, ModKind::AddDelta, -d, {}}});
      Instance got = instantiate(back);
      REQUIRE(got.entries.size() == base.entries.size());
      for (std::size_t k = 0; k < got.entries.size(); ++k) {
        CHECK(std::abs(got.entries[k].value - base.entries[k].value) <= 1e-12);
      }
      for (int i = 0; i < base.num_rows(); ++i) CHECK(std::abs(got.rhs[i] - base.rhs[i]) <= 1e-12);
      for (int j = 0; j < base.num_cols(); ++j) CHECK(std::abs(got.cost[j] - base.cost[j]) <= 1e-12);
    }
  }
}

TEST_CASE("valid models always instantiate") {
  for (const char* name : testing::kBundledModels) {
    ModelIR ir = testing::load_model(name);
    REQUIRE(validate_model(ir).ok());
    CHECK_NOTHROW(instantiate(ir));
  }
}

TEST_CASE("non-finite parameter value names the instance") {
  ModelIR ir = testing::load_model("prod");
  try {
    instantiate(apply_modification(ir, {{"labor_cap", {}, ModKind::SetTo, kInf, {}}}));
    FAIL("expected error");
  } catch (const ModelError& e) {
    CHECK(std::string(e.what()).find("labor_cap") != std::string::npos);
  }
}

TEST_CASE("lookup by name, partial index and description keyword") {
  ModelIR prod = testing::load_model("prod");
  ComponentView cap = lookup_component(prod, "labor_cap");
  CHECK(cap.kind == ComponentKind::Parameter);
  REQUIRE(cap.entries.size() == 1);
  CHECK(cap.entries[0].value == 4.0);

  ModelIR supply = testing::load_model("supply");
  ComponentView pc = lookup_component(supply, "pc", IndexTuple{"max"});
  REQUIRE(pc.entries.size() == 3);
  CHECK(pc.entries[0].index == IndexTuple{"max", "plant1"});
  CHECK(pc.entries[2].value == 65.0);

  try {
    lookup_component(prod, "labor");
    FAIL("expected ambiguity");
  } catch (const ModelError& e) {
    CHECK(std::string(e.what()).find("labor_use, labor_cap, L") != std::string::npos);
  }

  CHECK_THROWS_WITH(resolve_component_name(prod, "machine_capp"),
                    doctest::Contains("did you mean: machine_cap"));
  CHECK_THROWS_WITH(resolve_component_name(prod, "machine"), doctest::Contains("machine_cap, M"));
  CHECK(resolve_component_name(prod, "profit") == "profit");
}

TEST_CASE("ambiguous description keyword lists candidates") {
  ModelIR supply = testing::load_model("supply");
  try {
    lookup_component(supply, "cost");
    FAIL("expected ambiguity");
  } catch (const ModelError& e) {
    CHECK(e.kind() == ModelError::Kind::Ambiguous);
    std::string msg = e.what();
    CHECK(msg.find("transport_cost") != std::string::npos);
    CHECK(msg.find("production_cost") != std::string::npos);
  }
}

TEST_CASE("lookup of an unknown name suggests neighbours") {
  ModelIR prod = testing::load_model("prod");
  try {
    lookup_component(prod, "labr_cap");
    FAIL("expected not-found");
  } catch (const ModelError& e) {
    CHECK(e.kind() == ModelError::Kind::NotFound);
    CHECK(std::find(e.suggestions().begin(), e.suggestions().end(), "labor_cap") != e.suggestions().end());
  }
}

TEST_CASE("lookup includes solved values when a snapshot is given") {
  ModelIR prod = testing::load_model("prod");
  SolutionSnapshot snap;
  snap.status = "optimal";
  snap.primal = {{"x", 2.0}, {"y", 2.0}};
  snap.duals = {{"L", 2.0}, {"M", 1.0}};
  snap.activity = {{"L", 4.0}, {"M", 2.0}};
  ComponentView x = lookup_component(prod, "x", std::nullopt, &snap);
  REQUIRE(x.entries.size() == 1);
  CHECK(x.entries[0].value == 2.0);
  ComponentView l = lookup_component(prod, "L", std::nullopt, &snap);
  REQUIRE(l.entries.size() == 1);
  CHECK(l.entries[0].dual == 2.0);
  CHECK(l.entries[0].expression == "x + y <= 4");
}

TEST_CASE("text helpers") {
  CHECK(edit_distance("labour_cap", "labor_cap") == 1);
  CHECK(closest_names("Labour_cap", {"labor_cap", "machine_cap"}) == std::vector<std::string>{"labor_cap"});
  CHECK(word_tokens("plant1_capacity") == std::vector<std::string>{"plant", "1", "capacity"});
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(-0.0) == "0");
  CHECK(format_number(kInf) == "inf");
  CHECK(digest("abc").size() == 16);
  CHECK(digest("abc", 64) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
