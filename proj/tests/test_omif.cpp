#include <doctest.h>

#include <random>

#include "modelchat/omif.hpp"
#include "support.hpp"

using namespace modelchat;

namespace {

bool has_diag(const std::vector<Diagnostic>& ds, const std::string& needle) {
  for (const auto& d : ds) {
    if (d.message.find(needle) != std::string::npos) return true;
  }
  return false;
}

const Diagnostic* find_diag(const std::vector<Diagnostic>& ds, const std::string& needle) {
  for (const auto& d : ds) {
    if (d.message.find(needle) != std::string::npos) return &d;
  }
  return nullptr;
}

std::string prod_text() { return testing::read_file(testing::dataset_path("models/prod.omif")); }

std::string all_fixture_text() {
  std::string out;
  for (const char* name : testing::kBundledModels) {
    out += testing::read_file(testing::dataset_path(std::string("models/") + name + ".omif"));
  }
  return out;
}

}  // namespace

TEST_CASE("prod parses with its components") {
  ModelIR ir = testing::load_model("prod");
  CHECK(ir.name == "prod");
  CHECK(ir.vars.size() == 2);
  CHECK(ir.constraints.size() == 2);
  CHECK(ir.objective.sense == ObjectiveSense::Maximize);
  for (const auto& v : ir.vars) CHECK_FALSE(v.description.empty());
}

TEST_CASE("round trip is a fixed point on every fixture") {
  std::vector<ModelIR> models;
  for (const char* name : testing::kBundledModels) models.push_back(testing::load_model(name));
  for (const char* name : {"unbounded", "two_conflicts", "binary_three", "prod_integer", "empty_family"}) {
    models.push_back(testing::load_fixture(name));
  }
  for (const auto& ir : models) {
    CAPTURE(ir.name);
    std::string doc = serialize_model(ir);
    ModelIR again = testing::parse_or_throw(doc);
    CHECK(again == ir);
    CHECK(serialize_model(again) == doc);
  }
}

TEST_CASE("empty set serializes as an explicit empty list") {
  std::string doc = serialize_model(testing::load_fixture("empty_family"));
  CHECK(doc.find("NONE = [] desc") != std::string::npos);
}

TEST_CASE("labels needing quotes survive the round trip") {
  std::string text = R"(meta { name: "q"; desc: "quoted labels"; }
sets { S = ['north east', 'a-b', 7, plain] desc "odd labels"; }
params { w[S] = {'north east': 1, 'a-b': 2, 7: 3, plain: -4.5e-1} desc "weights"; }
vars { z[S] continuous lb -inf bounds {'a-b': [1, 2]} desc "amounts"; }
constraints { c[s in S]: w[s] * z[s] <= 10 desc "caps"; }
objective { minimize o: sum over s in S: z[s] desc "total"; }
)";
  ModelIR ir = testing::parse_or_throw(text);
  CHECK(ir.sets[0].members == std::vector<std::string>{"north east", "a-b", "7", "plain"});
  CHECK(ir.params[0].values.at({"plain"}) == -0.45);
  CHECK(ir.vars[0].lower == -kInf);
  CHECK(ir.vars[0].bound_overrides.at({"a-b"}) == std::make_pair(1.0, 2.0));
  CHECK(testing::parse_or_throw(serialize_model(ir)) == ir);
}

TEST_CASE("product of variables is rejected at its position") {
  std::string text = prod_text();
  auto at = text.find("x <= machine_cap");
  text.replace(at, 16, "x * y <= machine_cap");
  auto res = parse_model(text);
  REQUIRE_FALSE(res.ok());
  const Diagnostic* d = find_diag(res.diagnostics, "nonlinearity not supported");
  REQUIRE(d != nullptr);
  CHECK(d->pos.line == 25);
  CHECK(d->pos.column > 1);
}

TEST_CASE("missing description is diagnosed") {
  std::string text = prod_text();
  auto at = text.find(" desc \"available labor hours\"");
  text.erase(at, std::string(" desc \"available labor hours\"").size());
  auto res = parse_model(text);
  REQUIRE_FALSE(res.ok());
  const Diagnostic* d = find_diag(res.diagnostics, "description required");
  REQUIRE(d != nullptr);
  CHECK(d->pos.line == 14);
}

TEST_CASE("duplicate component names are diagnosed") {
  std::string text = prod_text();
  auto at = text.find("  machine_cap = 2");
  text.insert(at, "  labor_cap = 5 desc \"again\";\n");
  auto res = parse_model(text);
  REQUIRE_FALSE(res.ok());
  CHECK(has_diag(res.diagnostics, "duplicate"));
}

TEST_CASE("unterminated block is diagnosed") {
  std::string text = "meta { name: \"m\"; desc: \"d\"; }\nsets {\n  S = [a] desc \"s\";\n";
  auto res = parse_model(text);
  REQUIRE_FALSE(res.ok());
  CHECK(has_diag(res.diagnostics, "unterminated block"));
}

TEST_CASE("syntax errors carry expected-token hints and recovery continues") {
  std::string text = prod_text();
  auto at = text.find("labor_cap = 4");
  text.replace(at, 13, "labor_cap = ");
  at = text.find("x continuous");
  text.replace(at, 12, "x fuzzy");
  auto res = parse_model(text);
  REQUIRE_FALSE(res.ok());
  const Diagnostic* num = find_diag(res.diagnostics, "unexpected identifier 'desc'");
  REQUIRE(num != nullptr);
  CHECK(num->expected == std::vector<std::string>{"number"});
  CHECK(has_diag(res.diagnostics, "unknown domain 'fuzzy'"));
  CHECK(res.diagnostics.front().pos.line < res.diagnostics.back().pos.line);
}

TEST_CASE("malformed sense in the constraint language") {
  ModelIR ir = testing::load_model("prod");
  auto res = parse_constraint_dsl("x < 3", ir);
  REQUIRE_FALSE(res.ok());
  CHECK(has_diag(res.diagnostics, "malformed sense '<'"));
}

TEST_CASE("single-term counterfactual") {
  ModelIR ir = testing::load_model("prod");
  auto res = parse_constraint_dsl("y <= 0", ir);
  REQUIRE(res.ok());
  CHECK(res.spec->sense == Sense::Le);
  CHECK(res.spec->text() == "y <= 0");
  CHECK(canonical_form(ir, *res.spec) == std::vector<std::string>{"+1*y <= 0"});
}

TEST_CASE("aggregated counterfactual over a set") {
  ModelIR ir = testing::load_model("supply");
  auto res = parse_constraint_dsl("sum over f in FACILITY: ship[f, 'south'] <= 50", ir);
  REQUIRE(res.ok());
  auto rows = canonical_form(ir, *res.spec);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0] == "+1*ship[plant1,south] +1*ship[plant2,south] +1*ship[plant3,south] <= 50");

  auto each = parse_constraint_dsl("forall f in FACILITY: extra[f] <= 0", ir);
  REQUIRE(each.ok());
  CHECK(canonical_form(ir, *each.spec).size() == 3);
}

TEST_CASE("canonical form normalizes direction and side") {
  ModelIR ir = testing::load_model("prod");
  auto a = parse_constraint_dsl("x + y >= 10", ir);
  auto b = parse_constraint_dsl("10 - y <= x", ir);
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  CHECK(canonical_form(ir, *a.spec) == canonical_form(ir, *b.spec));
}

TEST_CASE("undeclared name in a counterfactual suggests alternatives") {
  ModelIR ir = testing::load_model("prod");
  auto res = parse_constraint_dsl("x >= q", ir);
  REQUIRE_FALSE(res.ok());
  CHECK(has_diag(res.diagnostics, "'q'"));
  auto close = parse_constraint_dsl("x >= machine_cp", ir);
  REQUIRE_FALSE(close.ok());
  CHECK(has_diag(close.diagnostics, "machine_cap"));
}

TEST_CASE("nonlinear counterfactual is rejected") {
  ModelIR ir = testing::load_model("prod");
  auto res = parse_constraint_dsl("x * y <= 1", ir);
  REQUIRE_FALSE(res.ok());
  CHECK(has_diag(res.diagnostics, "nonlinearity not supported"));
}

TEST_CASE("constraint block splits lines and semicolons") {
  ModelIR ir = testing::load_model("prod");
  auto res = parse_constraint_block("# comment\ny <= 1; x >= 1\n\nx <= z\n", ir);
  CHECK(res.specs.size() == 2);
  REQUIRE(res.diagnostics.size() == 1);
  CHECK(res.diagnostics[0].pos.line == 4);
}

TEST_CASE("sum body binds like a product term") {
  ModelIR ir = testing::load_model("knapsack");
  auto res = parse_constraint_dsl("sum over i in ITEMS: weight[i] * pick[i] + pick['i1'] <= 6", ir);
  REQUIRE(res.ok());
  auto rows = canonical_form(ir, *res.spec);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0] == "+3*pick[i1] +3*pick[i2] +1*pick[i3] <= 6");
  CHECK(res.spec->text() == "(sum over i in ITEMS: weight[i] * pick[i]) + pick['i1'] <= 6");
}

TEST_CASE("fuzz: random bytes never crash the parsers") {
  ModelIR ir = testing::load_model("supply");
  std::mt19937 rng(20240611);
  const std::string corpus = all_fixture_text();
  for (int n = 0; n < 5000; ++n) {
    std::string text;
    std::size_t len = rng() % 200;
    for (std::size_t i = 0; i < len; ++i) text.push_back(static_cast<char>(rng() % 256));
    auto a = parse_model(text);
    CHECK((a.ok() || !a.diagnostics.empty()));
    auto b = parse_constraint_dsl(text, ir);
    CHECK((b.ok() || !b.diagnostics.empty()));
  }
  // Mutations of real documents reach deeper into the grammar.
  for (int n = 0; n < 5000; ++n) {
    std::size_t start = rng() % corpus.size();
    std::string text = corpus.substr(start, rng() % 1500);
    int edits = 1 + static_cast<int>(rng() % 4);
    for (int e = 0; e < edits && !text.empty(); ++e) {
      std::size_t at = rng() % text.size();
      switch (rng() % 3) {
        case 0: text.erase(at, 1 + rng() % 5); break;
        case 1: text.insert(at, 1, "{}[]();:,=<>*+-'\"#x0"[rng() % 20]); break;
        default: text[at] = static_cast<char>(rng() % 128); break;
      }
    }
    auto a = parse_model(text);
    CHECK((a.ok() || !a.diagnostics.empty()));
    auto b = parse_constraint_dsl(text.substr(0, 120), ir);
    CHECK((b.ok() || !b.diagnostics.empty()));
  }
}

TEST_CASE("deep nesting is reported, not overflowed") {
  std::string deep(100000, '(');
  auto res = parse_constraint_dsl(deep, testing::load_model("prod"));
  REQUIRE_FALSE(res.ok());
  CHECK(has_diag(res.diagnostics, "nested too deeply"));
}
