#include "modelchat/omif.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>

#include "modelchat/text.hpp"

namespace modelchat {

std::string Diagnostic::to_string() const {
  std::string out = std::to_string(pos.line) + ":" + std::to_string(pos.column) + ": " + message;
  if (!expected.empty()) out += " (expected " + join(expected, " or ") + ")";
  return out;
}

namespace {

// ---------------------------------------------------------------------------
// Lexer.

enum class Tok { Ident, Number, String, Label, Punct, End, Bad };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  double number = 0.0;
  SourcePos pos;
};

class Lexer {
 public:
  Lexer(std::string_view src, std::vector<Diagnostic>& diags) : src_(src), diags_(diags) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_space();
      Token t;
      t.pos = {line_, col_};
      if (i_ >= src_.size()) {
        t.kind = Tok::End;
        out.push_back(t);
        return out;
      }
      char c = src_[i_];
      auto uc = static_cast<unsigned char>(c);
      if (std::isalpha(uc) || c == '_') {
        t.kind = Tok::Ident;
        while (i_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[i_])) || src_[i_] == '_')) {
          t.text.push_back(src_[i_]);
          advance();
        }
      } else if (std::isdigit(uc) || (c == '.' && i_ + 1 < src_.size() &&
                                      std::isdigit(static_cast<unsigned char>(src_[i_ + 1])))) {
        lex_number(t);
      } else if (c == '"') {
        lex_string(t);
      } else if (c == '\'') {
        lex_label(t);
      } else {
        lex_punct(t);
      }
      out.push_back(std::move(t));
    }
  }

 private:
  void advance() {
    if (src_[i_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++i_;
  }

  void skip_space() {
    while (i_ < src_.size()) {
      char c = src_[i_];
      if (c == '#') {
        while (i_ < src_.size() && src_[i_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  void lex_number(Token& t) {
    std::size_t start = i_;
    while (i_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i_]))) advance();
    if (i_ < src_.size() && src_[i_] == '.') {
      advance();
      while (i_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i_]))) advance();
    }
    if (i_ < src_.size() && (src_[i_] == 'e' || src_[i_] == 'E')) {
      std::size_t save = i_;
      int sl = line_, sc = col_;
      advance();
      if (i_ < src_.size() && (src_[i_] == '+' || src_[i_] == '-')) advance();
      if (i_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i_]))) {
        while (i_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i_]))) advance();
      } else {
        i_ = save;
        line_ = sl;
        col_ = sc;
      }
    }
    t.kind = Tok::Number;
    t.text = std::string(src_.substr(start, i_ - start));
    t.number = std::strtod(t.text.c_str(), nullptr);
    if (!std::isfinite(t.number)) {
      diags_.push_back({t.pos, "numeric literal out of range: " + t.text, {}});
      t.kind = Tok::Bad;
    }
  }

  void lex_string(Token& t) {
    advance();
    while (i_ < src_.size() && src_[i_] != '"') {
      char c = src_[i_];
      if (c == '\n') break;
      if (c == '\\' && i_ + 1 < src_.size()) {
        advance();
        char e = src_[i_];
        t.text.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
        advance();
        continue;
      }
      t.text.push_back(c);
      advance();
    }
    if (i_ < src_.size() && src_[i_] == '"') {
      advance();
      t.kind = Tok::String;
    } else {
      diags_.push_back({t.pos, "unterminated string", {"'\"'"}});
      t.kind = Tok::Bad;
    }
  }

  void lex_label(Token& t) {
    advance();
    while (i_ < src_.size() && src_[i_] != '\'' && src_[i_] != '\n') {
      t.text.push_back(src_[i_]);
      advance();
    }
    if (i_ < src_.size() && src_[i_] == '\'') {
      advance();
      t.kind = Tok::Label;
    } else {
      diags_.push_back({t.pos, "unterminated quoted label", {"\"'\""}});
      t.kind = Tok::Bad;
    }
  }

  void lex_punct(Token& t) {
    static const char* two[] = {"<=", ">=", "==", "=<", "=>", "!="};
    for (const char* op : two) {
      if (src_.substr(i_, 2) == op) {
        t.kind = Tok::Punct;
        t.text = op;
        advance();
        advance();
        return;
      }
    }
    char c = src_[i_];
    static const std::string single = "{}[](),:;=+-*<>/";
    if (single.find(c) != std::string::npos) {
      t.kind = Tok::Punct;
      t.text = std::string(1, c);
    } else {
      t.kind = Tok::Bad;
      t.text = std::string(1, c);
      diags_.push_back({t.pos, "unexpected character", {}});
    }
    advance();
  }

  std::string_view src_;
  std::vector<Diagnostic>& diags_;
  std::size_t i_ = 0;
  int line_ = 1;
  int col_ = 1;
};

// ---------------------------------------------------------------------------
// Parser.

struct SyntaxError {
  Diagnostic diag;
};

constexpr int kMaxDepth = 200;

class Parser {
 public:
  Parser(std::vector<Token> toks, std::vector<Diagnostic>& diags)
      : toks_(std::move(toks)), diags_(diags) {}

  ModelIR parse_document() {
    ModelIR ir;
    while (!at_end()) {
      const Token& t = peek();
      try {
        if (t.kind != Tok::Ident) fail(t, "expected a block name", block_names());
        std::string block = t.text;
        if (block == "meta") {
          next();
          parse_meta(ir);
        } else if (block == "sets") {
          next();
          parse_block([&] { parse_set(ir); });
        } else if (block == "params") {
          next();
          parse_block([&] { parse_param(ir); });
        } else if (block == "vars") {
          next();
          parse_block([&] { parse_var(ir); });
        } else if (block == "constraints") {
          next();
          parse_block([&] { parse_constraint(ir); });
        } else if (block == "objective") {
          next();
          if (seen_objective_) {
            diags_.push_back({t.pos, "duplicate objective block", {}});
          }
          seen_objective_ = true;
          parse_block([&] { parse_objective(ir); });
        } else {
          fail(t, "unknown block '" + block + "'", block_names());
        }
      } catch (const SyntaxError& e) {
        diags_.push_back(e.diag);
        // Resynchronize at the next block keyword at top level.
        next();
        while (!at_end()) {
          const Token& k = peek();
          if (k.kind == Tok::Ident && is_block_name(k.text) && depth_zero()) break;
          track(next());
        }
        brace_depth_ = 0;
      }
    }
    return ir;
  }

  ConstraintSpec parse_spec_line() {
    ConstraintSpec spec;
    if (peek_ident("forall")) {
      next();
      spec.binders = parse_binders();
      expect(":");
    }
    for (const auto& b : spec.binders) scope_.push_back(b.name);
    spec.lhs = parse_expr();
    spec.sense = parse_sense();
    spec.rhs = parse_expr();
    if (!at_end()) fail(peek(), "unexpected trailing input", {"end of constraint"});
    return spec;
  }

  const Token& peek() const { return toks_[std::min(pos_, toks_.size() - 1)]; }
  bool at_end() const { return peek().kind == Tok::End; }

  [[noreturn]] void fail(const Token& t, std::string msg, std::vector<std::string> expected) {
    throw SyntaxError{Diagnostic{t.pos, std::move(msg), std::move(expected)}};
  }

  std::map<std::string, SourcePos> component_pos;

 private:
  static std::vector<std::string> block_names() {
    return {"meta", "sets", "params", "vars", "constraints", "objective"};
  }
  static bool is_block_name(const std::string& s) {
    auto n = block_names();
    return std::find(n.begin(), n.end(), s) != n.end();
  }
  bool depth_zero() const { return brace_depth_ <= 0; }

  void track(const Token& t) {
    if (t.kind != Tok::Punct) return;
    if (t.text == "{") ++brace_depth_;
    if (t.text == "}") --brace_depth_;
  }

  const Token& next() {
    const Token& t = peek();
    if (pos_ < toks_.size() - 1) ++pos_;
    return t;
  }

  bool peek_punct(std::string_view p) const {
    return peek().kind == Tok::Punct && peek().text == p;
  }
  bool peek_ident(std::string_view s) const {
    return peek().kind == Tok::Ident && peek().text == s;
  }

  const Token& expect(std::string_view p) {
    if (!peek_punct(p)) {
      fail(peek(), "unexpected " + describe(peek()), {"'" + std::string(p) + "'"});
    }
    return next();
  }

  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Tok::End: return "end of input";
      case Tok::Ident: return "identifier '" + t.text + "'";
      case Tok::Number: return "number " + t.text;
      case Tok::String: return "string";
      case Tok::Label: return "label '" + t.text + "'";
      case Tok::Punct: return "'" + t.text + "'";
      case Tok::Bad: return "invalid token";
    }
    return "token";
  }

  std::string expect_ident(const std::string& what) {
    if (peek().kind != Tok::Ident) fail(peek(), "unexpected " + describe(peek()), {what});
    return next().text;
  }

  template <typename F>
  void parse_block(F&& item) {
    const Token& open = expect("{");
    ++brace_depth_;
    while (!peek_punct("}")) {
      if (at_end()) fail(open, "unterminated block", {"'}'"});
      try {
        item();
      } catch (const SyntaxError& e) {
        diags_.push_back(e.diag);
        // Skip to the end of the statement or block.
        int depth = 0;
        while (!at_end()) {
          if (peek_punct("{")) ++depth;
          if (peek_punct("}")) {
            if (depth == 0) break;
            --depth;
          }
          if (peek_punct(";") && depth == 0) {
            next();
            break;
          }
          if (peek().kind == Tok::Ident && is_block_name(peek().text) && depth == 0 &&
              pos_ + 1 < toks_.size() && toks_[pos_ + 1].kind == Tok::Punct &&
              toks_[pos_ + 1].text == "{") {
            fail(open, "unterminated block", {"'}'"});
          }
          next();
        }
      }
    }
    next();
    --brace_depth_;
  }

  void parse_meta(ModelIR& ir) {
    parse_block([&] {
      const Token& key = peek();
      std::string k = expect_ident("'name' or 'desc'");
      expect(":");
      if (peek().kind != Tok::String) fail(peek(), "unexpected " + describe(peek()), {"string"});
      std::string v = next().text;
      expect(";");
      if (k == "name") {
        ir.name = v;
      } else if (k == "desc") {
        ir.description = v;
      } else {
        fail(key, "unknown meta key '" + k + "'", {"name", "desc"});
      }
    });
  }

  std::string parse_label_token() {
    const Token& t = peek();
    if (t.kind == Tok::Ident || t.kind == Tok::Label || t.kind == Tok::Number) {
      next();
      return t.text;
    }
    fail(t, "unexpected " + describe(t), {"set member label"});
  }

  std::optional<std::string> parse_desc(const Token& start) {
    if (peek_ident("desc")) {
      next();
      if (peek().kind != Tok::String) fail(peek(), "unexpected " + describe(peek()), {"string"});
      return next().text;
    }
    diags_.push_back({start.pos, "description required", {"desc \"...\""}});
    return std::nullopt;
  }

  std::vector<std::string> parse_dims() {
    std::vector<std::string> dims;
    if (!peek_punct("[")) return dims;
    next();
    dims.push_back(expect_ident("set name"));
    while (peek_punct(",")) {
      next();
      dims.push_back(expect_ident("set name"));
    }
    expect("]");
    return dims;
  }

  void note_pos(const std::string& path, SourcePos pos) { component_pos.emplace(path, pos); }

  void parse_set(ModelIR& ir) {
    const Token& start = peek();
    SetDecl s;
    s.pos = start.pos;
    s.name = expect_ident("set name");
    expect("=");
    expect("[");
    if (!peek_punct("]")) {
      s.members.push_back(parse_label_token());
      while (peek_punct(",")) {
        next();
        s.members.push_back(parse_label_token());
      }
    }
    expect("]");
    s.description = parse_desc(start).value_or("");
    expect(";");
    note_pos("sets." + s.name, s.pos);
    ir.sets.push_back(std::move(s));
  }

  double parse_signed_number(bool allow_inf) {
    bool neg = false;
    if (peek_punct("-")) {
      next();
      neg = true;
    } else if (peek_punct("+")) {
      next();
    }
    const Token& t = peek();
    double v;
    if (t.kind == Tok::Number) {
      v = t.number;
    } else if (allow_inf && t.kind == Tok::Ident && t.text == "inf") {
      v = kInf;
    } else {
      fail(t, "unexpected " + describe(t), {allow_inf ? "number or inf" : "number"});
    }
    next();
    return neg ? -v : v;
  }

  IndexTuple parse_key(std::size_t arity) {
    IndexTuple key;
    if (peek_punct("(")) {
      next();
      key.push_back(parse_label_token());
      while (peek_punct(",")) {
        next();
        key.push_back(parse_label_token());
      }
      expect(")");
    } else {
      key.push_back(parse_label_token());
    }
    (void)arity;
    return key;
  }

  void parse_param(ModelIR& ir) {
    const Token& start = peek();
    ParamDecl p;
    p.pos = start.pos;
    p.name = expect_ident("parameter name");
    p.index_sets = parse_dims();
    expect("=");
    if (peek_punct("{")) {
      next();
      if (!peek_punct("}")) {
        while (true) {
          const Token& kt = peek();
          IndexTuple key = parse_key(p.index_sets.size());
          expect(":");
          double v = parse_signed_number(false);
          if (!p.values.emplace(key, v).second) {
            diags_.push_back({kt.pos, "duplicate value for " + instance_label(p.name, key), {}});
          }
          if (!peek_punct(",")) break;
          next();
        }
      }
      expect("}");
    } else {
      p.values[{}] = parse_signed_number(false);
    }
    if (peek_ident("default")) {
      next();
      p.default_value = parse_signed_number(false);
    }
    p.description = parse_desc(start).value_or("");
    expect(";");
    note_pos("params." + p.name, p.pos);
    ir.params.push_back(std::move(p));
  }

  void parse_var(ModelIR& ir) {
    const Token& start = peek();
    VarDecl v;
    v.pos = start.pos;
    v.name = expect_ident("variable name");
    v.index_sets = parse_dims();
    const Token& dt = peek();
    std::string dom = expect_ident("domain");
    if (dom == "continuous") {
      v.domain = Domain::Continuous;
    } else if (dom == "integer") {
      v.domain = Domain::Integer;
    } else if (dom == "binary") {
      v.domain = Domain::Binary;
    } else {
      fail(dt, "unknown domain '" + dom + "'", {"continuous", "integer", "binary"});
    }
    while (true) {
      if (peek_ident("lb")) {
        next();
        v.lower = parse_signed_number(true);
      } else if (peek_ident("ub")) {
        next();
        v.upper = parse_signed_number(true);
      } else if (peek_ident("bounds")) {
        next();
        expect("{");
        if (!peek_punct("}")) {
          while (true) {
            IndexTuple key = parse_key(v.index_sets.size());
            expect(":");
            expect("[");
            double lo = parse_signed_number(true);
            expect(",");
            double hi = parse_signed_number(true);
            expect("]");
            v.bound_overrides[key] = {lo, hi};
            if (!peek_punct(",")) break;
            next();
          }
        }
        expect("}");
      } else {
        break;
      }
    }
    v.description = parse_desc(start).value_or("");
    expect(";");
    note_pos("vars." + v.name, v.pos);
    ir.vars.push_back(std::move(v));
  }

  std::vector<Binder> parse_binders() {
    std::vector<Binder> out;
    while (true) {
      Binder b;
      b.name = expect_ident("index name");
      if (!peek_ident("in")) fail(peek(), "unexpected " + describe(peek()), {"'in'"});
      next();
      b.set = expect_ident("set name");
      out.push_back(std::move(b));
      if (!peek_punct(",")) break;
      next();
    }
    return out;
  }

  Sense parse_sense() {
    const Token& t = peek();
    if (t.kind == Tok::Punct) {
      if (t.text == "<=") {
        next();
        return Sense::Le;
      }
      if (t.text == ">=") {
        next();
        return Sense::Ge;
      }
      if (t.text == "=" || t.text == "==") {
        next();
        return Sense::Eq;
      }
      if (t.text == "<" || t.text == ">" || t.text == "=<" || t.text == "=>" || t.text == "!=") {
        fail(t, "malformed sense '" + t.text + "'", {"'<='", "'>='", "'='"});
      }
    }
    fail(t, "unexpected " + describe(t), {"'<='", "'>='", "'='"});
  }

  void parse_constraint(ModelIR& ir) {
    const Token& start = peek();
    ConstraintDecl c;
    c.pos = start.pos;
    c.name = expect_ident("constraint name");
    if (peek_punct("[")) {
      next();
      c.binders = parse_binders();
      expect("]");
    }
    expect(":");
    std::size_t scope_mark = scope_.size();
    for (const auto& b : c.binders) scope_.push_back(b.name);
    try {
      c.lhs = parse_expr();
      c.sense = parse_sense();
      c.rhs = parse_expr();
    } catch (...) {
      scope_.resize(scope_mark);
      throw;
    }
    scope_.resize(scope_mark);
    c.description = parse_desc(start).value_or("");
    expect(";");
    note_pos("constraints." + c.name, c.pos);
    ir.constraints.push_back(std::move(c));
  }

  void parse_objective(ModelIR& ir) {
    const Token& start = peek();
    if (seen_objective_item_) fail(start, "only one objective is supported", {"'}'"});
    ObjectiveDecl o;
    o.pos = start.pos;
    std::string sense = expect_ident("'minimize' or 'maximize'");
    if (sense == "minimize") {
      o.sense = ObjectiveSense::Minimize;
    } else if (sense == "maximize") {
      o.sense = ObjectiveSense::Maximize;
    } else {
      fail(start, "unknown objective sense '" + sense + "'", {"minimize", "maximize"});
    }
    o.name = expect_ident("objective name");
    expect(":");
    o.expr = parse_expr();
    o.description = parse_desc(start).value_or("");
    expect(";");
    note_pos("objective", o.pos);
    seen_objective_item_ = true;
    ir.objective = std::move(o);
  }

  // expr   := term (('+' | '-') term)*
  // term   := factor ('*' factor)*
  // factor := '-' factor | primary
  // primary:= NUMBER | ref | '(' expr ')' | 'sum' 'over' binders ':' term
  ExprPtr parse_expr() {
    DepthGuard g(*this);
    SourcePos pos = peek().pos;
    std::vector<std::pair<int, ExprPtr>> terms;
    terms.emplace_back(1, parse_term());
    while (peek_punct("+") || peek_punct("-")) {
      int sign = next().text == "+" ? 1 : -1;
      terms.emplace_back(sign, parse_term());
    }
    if (terms.size() == 1) return terms.front().second;
    return Expr::make_add(std::move(terms), pos);
  }

  ExprPtr parse_term() {
    ExprPtr e = parse_factor();
    while (peek_punct("*") || peek_punct("/")) {
      const Token& op = next();
      if (op.text == "/") {
        if (peek().kind != Tok::Number) {
          fail(op, "division is only supported by a numeric literal", {"number"});
        }
        double d = next().number;
        if (d == 0.0) fail(op, "division by zero", {});
        e = Expr::make_mul(e, Expr::make_number(1.0 / d, op.pos), op.pos);
        continue;
      }
      e = Expr::make_mul(e, parse_factor(), op.pos);
    }
    return e;
  }

  ExprPtr parse_factor() {
    DepthGuard g(*this);
    if (peek_punct("-")) {
      SourcePos pos = next().pos;
      if (peek().kind == Tok::Number) return Expr::make_number(-next().number, pos);
      return Expr::make_neg(parse_factor(), pos);
    }
    return parse_primary();
  }

  ExprPtr parse_primary() {
    const Token& t = peek();
    if (t.kind == Tok::Number) {
      next();
      return Expr::make_number(t.number, t.pos);
    }
    if (t.kind == Tok::Punct && t.text == "(") {
      next();
      ExprPtr e = parse_expr();
      expect(")");
      return e;
    }
    if (t.kind == Tok::Ident) {
      if (t.text == "sum" && pos_ + 1 < toks_.size() && toks_[pos_ + 1].kind == Tok::Ident &&
          toks_[pos_ + 1].text == "over") {
        next();
        next();
        auto binders = parse_binders();
        expect(":");
        std::size_t mark = scope_.size();
        for (const auto& b : binders) scope_.push_back(b.name);
        ExprPtr body;
        try {
          body = parse_term();
        } catch (...) {
          scope_.resize(mark);
          throw;
        }
        scope_.resize(mark);
        return Expr::make_sum(std::move(binders), body, t.pos);
      }
      next();
      std::vector<IndexArg> args;
      if (peek_punct("[")) {
        next();
        while (true) {
          const Token& a = peek();
          if (a.kind == Tok::Ident) {
            bool bound = std::find(scope_.begin(), scope_.end(), a.text) != scope_.end();
            args.push_back({bound ? IndexArg::Kind::Binder : IndexArg::Kind::Label, a.text});
            next();
          } else if (a.kind == Tok::Label || a.kind == Tok::Number) {
            args.push_back({IndexArg::Kind::Label, a.text});
            next();
          } else {
            fail(a, "unexpected " + describe(a), {"index"});
          }
          if (!peek_punct(",")) break;
          next();
        }
        expect("]");
      }
      return Expr::make_ref(t.text, std::move(args), t.pos);
    }
    fail(t, "unexpected " + describe(t), {"number", "name", "'('", "'sum over'"});
  }

  struct DepthGuard {
    explicit DepthGuard(Parser& p) : p_(p) {
      if (++p_.depth_ > kMaxDepth) {
        --p_.depth_;
        p_.fail(p_.peek(), "expression nested too deeply", {});
      }
    }
    ~DepthGuard() { --p_.depth_; }
    Parser& p_;
  };

  std::vector<Token> toks_;
  std::vector<Diagnostic>& diags_;
  std::size_t pos_ = 0;
  int brace_depth_ = 0;
  int depth_ = 0;
  bool seen_objective_ = false;
  bool seen_objective_item_ = false;
  std::vector<std::string> scope_;
};

SourcePos position_for(const Violation& v, const std::map<std::string, SourcePos>& pos) {
  if (v.pos.line > 0) return v.pos;
  if (auto it = pos.find(v.path); it != pos.end()) return it->second;
  return {1, 1};
}

// ---------------------------------------------------------------------------
// Serializer helpers.

bool bare_label(const std::string& s) {
  if (s.empty()) return false;
  bool all_digits = std::all_of(s.begin(), s.end(),
                                [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
  if (all_digits) return true;
  if (!(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  static const std::set<std::string> reserved = {"desc", "default", "lb", "ub", "bounds", "inf",
                                                 "in", "over", "sum", "forall"};
  if (reserved.count(s)) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

std::string label_text(const std::string& s) { return bare_label(s) ? s : "'" + s + "'"; }

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (c == '\n') {
      out += "\\n";
    } else if (c == '\t') {
      out += "\\t";
    } else {
      out += c;
    }
  }
  return out + "\"";
}

std::string key_text(const IndexTuple& key) {
  if (key.size() == 1) return label_text(key[0]);
  std::vector<std::string> parts;
  for (const auto& k : key) parts.push_back(label_text(k));
  return "(" + join(parts, ", ") + ")";
}

std::string dims_text(const std::vector<std::string>& dims) {
  if (dims.empty()) return "";
  return "[" + join(dims, ", ") + "]";
}

std::vector<IndexTuple> ordered_keys(const ModelIR& ir, const std::vector<std::string>& dims,
                                     const std::vector<IndexTuple>& keys) {
  // Product order first, then any keys outside the product (invalid models).
  std::vector<IndexTuple> out;
  std::set<IndexTuple> pending(keys.begin(), keys.end());
  for (const auto& t : index_product(ir, dims)) {
    if (pending.erase(t)) out.push_back(t);
  }
  out.insert(out.end(), pending.begin(), pending.end());
  return out;
}

}  // namespace

ParseResult parse_model(std::string_view text) {
  ParseResult res;
  std::vector<Diagnostic> diags;
  Lexer lex(text, diags);
  auto toks = lex.run();
  // Bad tokens were already reported; drop them so the parser sees the rest.
  toks.erase(std::remove_if(toks.begin(), toks.end(),
                            [](const Token& t) { return t.kind == Tok::Bad; }),
             toks.end());
  Parser parser(std::move(toks), diags);
  ModelIR ir = parser.parse_document();
  if (diags.empty()) {
    ValidationReport rep = validate_model(ir);
    for (const auto& v : rep.violations) {
      diags.push_back({position_for(v, parser.component_pos), v.path + ": " + v.message, {}});
    }
    if (diags.empty()) {
      for (auto& p : ir.params) p.side = rep.sides[p.name];
      res.model = std::move(ir);
    }
  }
  std::stable_sort(diags.begin(), diags.end(), [](const Diagnostic& a, const Diagnostic& b) {
    return a.pos.line != b.pos.line ? a.pos.line < b.pos.line : a.pos.column < b.pos.column;
  });
  res.diagnostics = std::move(diags);
  return res;
}

std::string serialize_model(const ModelIR& ir) {
  std::string out;
  out += "meta {\n";
  out += "  name: " + quote(ir.name) + ";\n";
  if (!ir.description.empty()) out += "  desc: " + quote(ir.description) + ";\n";
  out += "}\n\nsets {\n";
  for (const auto& s : ir.sets) {
    std::vector<std::string> members;
    for (const auto& m : s.members) members.push_back(label_text(m));
    out += "  " + s.name + " = [" + join(members, ", ") + "] desc " + quote(s.description) + ";\n";
  }
  out += "}\n\nparams {\n";
  for (const auto& p : ir.params) {
    out += "  " + p.name + dims_text(p.index_sets) + " = ";
    if (p.index_sets.empty() && p.values.count({})) {
      out += format_number(p.values.at({}));
    } else {
      std::vector<IndexTuple> keys;
      for (const auto& [k, v] : p.values) keys.push_back(k);
      std::vector<std::string> entries;
      for (const auto& k : ordered_keys(ir, p.index_sets, keys)) {
        entries.push_back(key_text(k) + ": " + format_number(p.values.at(k)));
      }
      out += "{" + join(entries, ", ") + "}";
    }
    if (p.default_value) out += " default " + format_number(*p.default_value);
    out += " desc " + quote(p.description) + ";\n";
  }
  out += "}\n\nvars {\n";
  for (const auto& v : ir.vars) {
    out += "  " + v.name + dims_text(v.index_sets) + " " + to_string(v.domain);
    if (v.lower != 0.0) out += " lb " + format_number(v.lower);
    if (v.upper != kInf) out += " ub " + format_number(v.upper);
    if (!v.bound_overrides.empty()) {
      std::vector<IndexTuple> keys;
      for (const auto& [k, b] : v.bound_overrides) keys.push_back(k);
      std::vector<std::string> entries;
      for (const auto& k : ordered_keys(ir, v.index_sets, keys)) {
        const auto& b = v.bound_overrides.at(k);
        entries.push_back(key_text(k) + ": [" + format_number(b.first) + ", " +
                          format_number(b.second) + "]");
      }
      out += " bounds {" + join(entries, ", ") + "}";
    }
    out += " desc " + quote(v.description) + ";\n";
  }
  out += "}\n\nconstraints {\n";
  for (const auto& c : ir.constraints) {
    out += "  " + c.name;
    if (!c.binders.empty()) {
      std::vector<std::string> bs;
      for (const auto& b : c.binders) bs.push_back(b.name + " in " + b.set);
      out += "[" + join(bs, ", ") + "]";
    }
    out += ": " + render_expr(c.lhs) + " " + to_string(c.sense) + " " + render_expr(c.rhs) +
           " desc " + quote(c.description) + ";\n";
  }
  out += "}\n\nobjective {\n";
  if (ir.objective.expr) {
    out += std::string("  ") +
           (ir.objective.sense == ObjectiveSense::Maximize ? "maximize " : "minimize ") +
           ir.objective.name + ": " + render_expr(ir.objective.expr) + " desc " +
           quote(ir.objective.description) + ";\n";
  }
  out += "}\n";
  return out;
}

std::string ConstraintSpec::text() const {
  std::string out;
  if (!binders.empty()) {
    std::vector<std::string> bs;
    for (const auto& b : binders) bs.push_back(b.name + " in " + b.set);
    out += "forall " + join(bs, ", ") + ": ";
  }
  out += render_expr(lhs) + " " + to_string(sense) + " " + render_expr(rhs);
  return out;
}

ConstraintDecl to_constraint(const ConstraintSpec& spec, std::string name,
                             std::string description) {
  ConstraintDecl c;
  c.name = std::move(name);
  c.description = std::move(description);
  c.binders = spec.binders;
  c.lhs = spec.lhs;
  c.sense = spec.sense;
  c.rhs = spec.rhs;
  return c;
}

SpecResult parse_constraint_dsl(std::string_view text, const ModelIR& ir, SpecOrigin origin) {
  SpecResult res;
  std::vector<Diagnostic> diags;
  Lexer lex(text, diags);
  auto toks = lex.run();
  if (!diags.empty()) {
    res.diagnostics = std::move(diags);
    return res;
  }
  Parser parser(std::move(toks), diags);
  ConstraintSpec spec;
  try {
    if (parser.at_end()) parser.fail(parser.peek(), "empty constraint", {"expression"});
    spec = parser.parse_spec_line();
  } catch (const SyntaxError& e) {
    diags.push_back(e.diag);
    res.diagnostics = std::move(diags);
    return res;
  }
  spec.origin = origin;

  // Resolve against the model by validating it as an extra constraint family.
  static const std::string kProbe = "__counterfactual_probe";
  ModelIR probe = ir;
  probe.constraints.push_back(to_constraint(spec, kProbe, "probe"));
  ValidationReport rep = validate_model(probe);
  for (const auto& v : rep.violations) {
    if (v.path != "constraints." + kProbe) continue;
    diags.push_back({v.pos.line > 0 ? v.pos : SourcePos{1, 1}, v.message, {}});
  }
  if (diags.empty()) {
    // Expansion errors (e.g. nonlinear products hidden behind aggregation).
    try {
      Instance inst;
      for (const auto& var : ir.vars) {
        for (const auto& t : index_product(ir, var.index_sets)) inst.cols.push_back({var.name, t});
      }
      append_constraint_rows(ir, probe.constraints.back(), inst);
    } catch (const ModelError& e) {
      diags.push_back({{1, 1}, e.what(), {}});
    }
  }
  if (diags.empty()) res.spec = std::move(spec);
  res.diagnostics = std::move(diags);
  return res;
}

SpecBlockResult parse_constraint_block(std::string_view text, const ModelIR& ir,
                                       SpecOrigin origin) {
  SpecBlockResult out;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    std::size_t piece_start = 0;
    while (piece_start <= line.size()) {
      std::size_t semi = line.find(';', piece_start);
      if (semi == std::string_view::npos) semi = line.size();
      std::string piece = trim(line.substr(piece_start, semi - piece_start));
      if (!piece.empty() && piece[0] != '#') {
        SpecResult r = parse_constraint_dsl(piece, ir, origin);
        if (r.spec) {
          out.specs.push_back(std::move(*r.spec));
        } else {
          for (auto d : r.diagnostics) {
            d.pos.line = line_no;
            d.message = "'" + piece + "': " + d.message;
            out.diagnostics.push_back(std::move(d));
          }
        }
      }
      piece_start = semi + 1;
    }
    start = end + 1;
  }
  return out;
}

std::vector<std::string> canonical_form(const ModelIR& ir, const ConstraintSpec& spec) {
  Instance inst;
  for (const auto& var : ir.vars) {
    for (const auto& t : index_product(ir, var.index_sets)) inst.cols.push_back({var.name, t});
  }
  append_constraint_rows(ir, to_constraint(spec, "spec", "spec"), inst);
  std::vector<std::string> rows;
  for (int i = 0; i < inst.num_rows(); ++i) {
    double sign = inst.senses[i] == Sense::Ge ? -1.0 : 1.0;
    std::vector<std::pair<std::string, double>> terms;
    for (const auto& e : inst.entries) {
      if (e.row == i && e.value != 0.0) terms.emplace_back(inst.cols[e.col].label(), sign * e.value);
    }
    std::sort(terms.begin(), terms.end());
    std::string row;
    for (const auto& [label, coef] : terms) {
      if (!row.empty()) row += " ";
      row += (coef >= 0 ? "+" : "") + format_number(coef) + "*" + label;
    }
    if (row.empty()) row = "0";
    row += inst.senses[i] == Sense::Eq ? " = " : " <= ";
    row += format_number(sign * inst.rhs[i] + 0.0);
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace modelchat
