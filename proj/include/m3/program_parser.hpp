#pragma once

// VisProg-style program text -> TaskGraph.
//
//   line  := OUT '=' FUNC '(' [ arg { ',' arg } ] ')'
//   arg   := KEY '=' value
//   value := IDENT | QUOTED | NUMBER
//
// Whitespace is ignored outside quotes. Strings are delimited by ' or " and
// have no escapes. A line depends on an earlier line when one of its values
// is that line's output name, or when a quoted value contains "{NAME}".

#include <cctype>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "m3/core_graph.hpp"
#include "m3/errors.hpp"

namespace m3 {

// Bound to the virtual input node; references create no extra edge.
inline constexpr std::string_view kImageIdentifier = "IMAGE";

struct ArgValue {
  enum class Kind { kIdentifier, kString, kNumber };
  Kind kind = Kind::kIdentifier;
  std::string text;  // string values without their quotes
  friend bool operator==(const ArgValue&, const ArgValue&) = default;
};

struct ProgramArg {
  std::string key;
  ArgValue value;
  friend bool operator==(const ProgramArg&, const ProgramArg&) = default;
};

struct ProgramLine {
  std::string output_name;
  std::string function_name;
  std::vector<ProgramArg> args;
  std::size_t source_line = 1;
  friend bool operator==(const ProgramLine& a, const ProgramLine& b) {
    return a.output_name == b.output_name && a.function_name == b.function_name &&
           a.args == b.args;
  }
};

namespace detail {

inline bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}
inline bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

class LineCursor {
 public:
  LineCursor(std::string_view text, std::size_t line_no) : s_(text), line_(line_no) {}

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool at_end() {
    skip_ws();
    return pos_ >= s_.size();
  }
  char peek() {
    skip_ws();
    return pos_ < s_.size() ? s_[pos_] : '\0';
  }
  void expect(char c, const char* what) {
    if (peek() != c) fail(std::string("expected ") + what);
    ++pos_;
  }
  std::string identifier(const char* what) {
    skip_ws();
    if (pos_ >= s_.size() || !is_ident_start(s_[pos_])) fail(std::string("expected ") + what);
    std::size_t start = pos_;
    while (pos_ < s_.size() && is_ident_char(s_[pos_])) ++pos_;
    return std::string(s_.substr(start, pos_ - start));
  }
  ArgValue value() {
    char c = peek();
    if (c == '\'' || c == '"') {
      std::size_t open = pos_++;
      std::size_t close = s_.find(c, pos_);
      if (close == std::string_view::npos) {
        pos_ = open;
        fail("unterminated string");
      }
      ArgValue v{ArgValue::Kind::kString, std::string(s_.substr(pos_, close - pos_))};
      pos_ = close + 1;
      return v;
    }
    if (is_ident_start(c)) return {ArgValue::Kind::kIdentifier, identifier("value")};
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+') return number();
    fail("expected a value");
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw SyntaxError(msg, line_, std::min(pos_, s_.size()) + 1);
  }

 private:
  ArgValue number() {
    std::size_t start = pos_;
    auto digits = [&] {
      std::size_t d = pos_;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      return pos_ - d;
    };
    if (s_[pos_] == '-' || s_[pos_] == '+') ++pos_;
    if (digits() == 0) fail("malformed number");
    if (pos_ < s_.size() && s_[pos_] == '.') {
      ++pos_;
      if (digits() == 0) fail("malformed number");
    }
    if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
      ++pos_;
      if (pos_ < s_.size() && (s_[pos_] == '-' || s_[pos_] == '+')) ++pos_;
      if (digits() == 0) fail("malformed exponent");
    }
    if (pos_ < s_.size() && is_ident_char(s_[pos_])) fail("malformed number");
    return {ArgValue::Kind::kNumber, std::string(s_.substr(start, pos_ - start))};
  }

  std::string_view s_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline ProgramLine tokenize_line(std::string_view line, std::size_t line_no = 1) {
  detail::LineCursor cur(line, line_no);
  ProgramLine out;
  out.source_line = line_no;
  out.output_name = cur.identifier("output name");
  cur.expect('=', "'='");
  out.function_name = cur.identifier("function name");
  cur.expect('(', "'('");
  if (cur.peek() != ')') {
    for (;;) {
      ProgramArg arg;
      arg.key = cur.identifier("argument name");
      cur.expect('=', "'=' after argument name");
      arg.value = cur.value();
      out.args.push_back(std::move(arg));
      if (cur.peek() == ',') {
        cur.expect(',', "','");
        continue;
      }
      break;
    }
  }
  cur.expect(')', "')'");
  if (!cur.at_end()) cur.fail("unexpected trailing characters");
  return out;
}

/// Names written as {NAME} inside a quoted value, in order of appearance.
inline std::vector<std::string> brace_references(std::string_view s) {
  std::vector<std::string> refs;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '{') continue;
    std::size_t j = i + 1;
    if (j >= s.size() || !detail::is_ident_start(s[j])) continue;
    while (j < s.size() && detail::is_ident_char(s[j])) ++j;
    if (j < s.size() && s[j] == '}') {
      refs.emplace_back(s.substr(i + 1, j - i - 1));
      i = j;
    }
  }
  return refs;
}

/// Splits on \n (tolerating \r\n) and tokenizes every non-blank line.
inline std::vector<ProgramLine> parse_program_lines(std::string_view text) {
  std::vector<ProgramLine> lines;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(start, end - start);
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    ++line_no;
    bool blank = std::all_of(raw.begin(), raw.end(),
                             [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
    if (!blank) lines.push_back(tokenize_line(raw, line_no));
    start = end + 1;
  }
  return lines;
}

/// One node per line (node k is line k), dependency edges, then
/// validation and virtual-node wiring.
inline TaskGraph build_task_graph(const std::vector<ProgramLine>& lines, const ModelZoo& zoo) {
  TaskGraph g;
  std::map<std::string, int, std::less<>> defined;
  std::set<Edge> edges;
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const auto& line = lines[k];
    const int node = static_cast<int>(k) + 1;
    auto type = zoo.find_type(line.function_name);
    if (!type) {
      throw UnknownFunctionError("line " + std::to_string(line.source_line) + ": unknown function '" +
                                 line.function_name + "'");
    }
    auto resolve = [&](const std::string& name) {
      if (name == kImageIdentifier) return;
      auto it = defined.find(name);
      if (it == defined.end()) {
        throw UndefinedReferenceError("line " + std::to_string(line.source_line) + ": '" + name +
                                      "' is used before it is defined");
      }
      edges.insert({it->second, node});
    };
    for (const auto& arg : line.args) {
      if (arg.value.kind == ArgValue::Kind::kIdentifier) {
        resolve(arg.value.text);
      } else if (arg.value.kind == ArgValue::Kind::kString) {
        for (const auto& ref : brace_references(arg.value.text)) resolve(ref);
      }
    }
    if (line.output_name == kImageIdentifier || defined.count(line.output_name)) {
      throw SyntaxError("output name '" + line.output_name + "' is already bound",
                        line.source_line, 1);
    }
    defined.emplace(line.output_name, node);
    g.node_types.push_back(*type);
  }
  g.edges.assign(edges.begin(), edges.end());
  validate_and_topo_sort(g);
  return augment_virtual_node(std::move(g));
}

inline TaskGraph parse_program(std::string_view text, const ModelZoo& zoo) {
  auto lines = parse_program_lines(text);
  if (lines.empty()) throw SyntaxError("empty program", 1, 1);
  return build_task_graph(lines, zoo);
}

inline std::string format_program(const std::vector<ProgramLine>& lines) {
  std::string out;
  for (const auto& line : lines) {
    out += line.output_name + "=" + line.function_name + "(";
    for (std::size_t a = 0; a < line.args.size(); ++a) {
      const auto& arg = line.args[a];
      if (a) out += ",";
      out += arg.key + "=";
      if (arg.value.kind == ArgValue::Kind::kString) {
        char q = arg.value.text.find('\'') == std::string::npos ? '\'' : '"';
        out += q + arg.value.text + q;
      } else {
        out += arg.value.text;
      }
    }
    out += ")\n";
  }
  return out;
}

}  // namespace m3
