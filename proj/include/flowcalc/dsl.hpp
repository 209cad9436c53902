#pragma once

// Model-specification language:
//
//   model     := ident "=" "Ber" "(" prob ")" ("|" flow)*
//   flow      := kind "(" ("0" | "1") ("+" ident)* ")"
//   kind      := "ScOdds" | "ScRisk1" | "ScRisk0"
//   prob      := integer "/" integer | decimal
//
// Whitespace is insignificant. Flow order is kept exactly as written.

#include <cctype>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace flowcalc {

enum class FlowKind { ScOdds, ScRisk1, ScRisk0 };

inline std::string_view to_string(FlowKind kind) {
  switch (kind) {
    case FlowKind::ScOdds: return "ScOdds";
    case FlowKind::ScRisk1: return "ScRisk1";
    case FlowKind::ScRisk0: return "ScRisk0";
  }
  return "?";
}

inline std::optional<FlowKind> flow_kind_from_string(std::string_view name) {
  if (name == "ScOdds") return FlowKind::ScOdds;
  if (name == "ScRisk1") return FlowKind::ScRisk1;
  if (name == "ScRisk0") return FlowKind::ScRisk0;
  return std::nullopt;
}

// Base probability literal, kept in the form it was written so that
// printing reproduces it. Decimals are stored as digits over a power of ten.
struct ProbabilityLiteral {
  enum class Form { Rational, Decimal };

  std::uint64_t numerator = 1;
  std::uint64_t denominator = 2;
  Form form = Form::Rational;
  int fraction_digits = 0;  // Decimal only

  double value() const {
    return static_cast<double>(numerator) / static_cast<double>(denominator);
  }

  std::string to_string() const {
    if (form == Form::Rational) {
      return std::to_string(numerator) + "/" + std::to_string(denominator);
    }
    std::string digits = std::to_string(numerator);
    if (fraction_digits == 0) return digits;
    if (static_cast<int>(digits.size()) <= fraction_digits) {
      digits.insert(0, static_cast<std::size_t>(fraction_digits) + 1 - digits.size(), '0');
    }
    digits.insert(digits.size() - static_cast<std::size_t>(fraction_digits), ".");
    return digits;
  }

  static ProbabilityLiteral rational(std::uint64_t num, std::uint64_t den) {
    return {num, den, Form::Rational, 0};
  }

  bool operator==(const ProbabilityLiteral&) const = default;
};

struct LinearPredictor {
  bool has_intercept = false;
  std::vector<std::string> terms;

  bool operator==(const LinearPredictor&) const = default;
};

struct Flow {
  FlowKind kind = FlowKind::ScOdds;
  LinearPredictor predictor;
  int position = 1;

  bool operator==(const Flow&) const = default;
};

struct ModelSpec {
  std::string outcome = "y";
  ProbabilityLiteral base;
  std::vector<Flow> flows;

  double base_prob() const { return base.value(); }

  bool operator==(const ModelSpec&) const = default;
};

enum class ParseErrorKind {
  Lexical,
  Syntax,
  UnknownFlow,
  MalformedPredictor,
  ProbabilityRange,
  DuplicateCovariate,
};

inline std::string_view to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::Lexical: return "lexical error";
    case ParseErrorKind::Syntax: return "syntax error";
    case ParseErrorKind::UnknownFlow: return "unknown flow";
    case ParseErrorKind::MalformedPredictor: return "malformed predictor";
    case ParseErrorKind::ProbabilityRange: return "probability out of range";
    case ParseErrorKind::DuplicateCovariate: return "duplicate covariate";
  }
  return "error";
}

// Position is a 1-based column into the input text.
class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, std::size_t position, const std::string& detail)
      : std::runtime_error("column " + std::to_string(position) + ": " +
                           std::string(to_string(kind)) + ": " + detail),
        kind_(kind),
        position_(position) {}

  ParseErrorKind kind() const { return kind_; }
  std::size_t position() const { return position_; }

 private:
  ParseErrorKind kind_;
  std::size_t position_;
};

inline bool is_identifier(std::string_view s) {
  if (s.empty() || !std::isalpha(static_cast<unsigned char>(s.front()))) return false;
  for (char c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  }
  return true;
}

namespace detail {

enum class TokenType { Identifier, Number, Equals, Pipe, LParen, RParen, Plus, Slash, End };

struct Token {
  TokenType type;
  std::string text;
  std::size_t position;  // 1-based
};

inline std::string_view describe(TokenType type) {
  switch (type) {
    case TokenType::Identifier: return "identifier";
    case TokenType::Number: return "number";
    case TokenType::Equals: return "'='";
    case TokenType::Pipe: return "'|'";
    case TokenType::LParen: return "'('";
    case TokenType::RParen: return "')'";
    case TokenType::Plus: return "'+'";
    case TokenType::Slash: return "'/'";
    case TokenType::End: return "end of input";
  }
  return "token";
}

inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  auto single = [&](TokenType type) {
    tokens.push_back({type, std::string(1, text[i]), i + 1});
    ++i;
  };
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (std::isalpha(c)) {
      const std::size_t start = i;
      while (i < text.size() &&
             (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_')) {
        ++i;
      }
      tokens.push_back({TokenType::Identifier, std::string(text.substr(start, i - start)), start + 1});
    } else if (std::isdigit(c)) {
      const std::size_t start = i;
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      if (i < text.size() && text[i] == '.') {
        ++i;
        if (i >= text.size() || !std::isdigit(static_cast<unsigned char>(text[i]))) {
          throw ParseError(ParseErrorKind::Lexical, i + 1, "expected digit after decimal point");
        }
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      }
      tokens.push_back({TokenType::Number, std::string(text.substr(start, i - start)), start + 1});
    } else {
      switch (c) {
        case '=': single(TokenType::Equals); break;
        case '|': single(TokenType::Pipe); break;
        case '(': single(TokenType::LParen); break;
        case ')': single(TokenType::RParen); break;
        case '+': single(TokenType::Plus); break;
        case '/': single(TokenType::Slash); break;
        default: {
          std::string shown = std::isprint(c) ? std::string(1, text[i]) : "\\x" + std::to_string(c);
          throw ParseError(ParseErrorKind::Lexical, i + 1, "unexpected character '" + shown + "'");
        }
      }
    }
  }
  tokens.push_back({TokenType::End, "", text.size() + 1});
  return tokens;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : tokens_(tokenize(text)) {}

  ModelSpec parse_model() {
    ModelSpec spec;
    spec.outcome = expect(TokenType::Identifier, "outcome name").text;
    expect(TokenType::Equals, "'=' after outcome name");
    const Token& ber = expect(TokenType::Identifier, "'Ber'");
    if (ber.text != "Ber") {
      throw ParseError(ParseErrorKind::Syntax, ber.position,
                       "expected base distribution 'Ber', found '" + ber.text + "'");
    }
    expect(TokenType::LParen, "'(' after 'Ber'");
    spec.base = parse_probability();
    expect(TokenType::RParen, "')' after base probability");
    while (peek().type == TokenType::Pipe) {
      advance();
      Flow flow = parse_flow();
      flow.position = static_cast<int>(spec.flows.size()) + 1;
      spec.flows.push_back(std::move(flow));
    }
    if (peek().type != TokenType::End) {
      throw ParseError(ParseErrorKind::Syntax, peek().position,
                       "expected '|' or end of input, found " + found(peek()));
    }
    return spec;
  }

 private:
  const Token& peek() const { return tokens_[index_]; }
  const Token& advance() { return tokens_[index_++]; }

  static std::string found(const Token& t) {
    if (t.type == TokenType::End) return "end of input";
    return "'" + t.text + "'";
  }

  const Token& expect(TokenType type, std::string_view what) {
    if (peek().type != type) {
      throw ParseError(ParseErrorKind::Syntax, peek().position,
                       "expected " + std::string(what) + ", found " + found(peek()));
    }
    return advance();
  }

  static std::uint64_t to_integer(const Token& t) {
    if (t.text.size() > 15) {
      throw ParseError(ParseErrorKind::Syntax, t.position, "numeric literal too long");
    }
    return std::stoull(t.text);
  }

  ProbabilityLiteral parse_probability() {
    const Token& first = expect(TokenType::Number, "probability literal");
    ProbabilityLiteral lit;
    const auto dot = first.text.find('.');
    if (peek().type == TokenType::Slash) {
      if (dot != std::string::npos) {
        throw ParseError(ParseErrorKind::Syntax, first.position,
                         "rational numerator must be an integer");
      }
      advance();
      const Token& second = expect(TokenType::Number, "denominator");
      if (second.text.find('.') != std::string::npos) {
        throw ParseError(ParseErrorKind::Syntax, second.position,
                         "rational denominator must be an integer");
      }
      lit = ProbabilityLiteral::rational(to_integer(first), to_integer(second));
      if (lit.denominator == 0) {
        throw ParseError(ParseErrorKind::ProbabilityRange, second.position, "zero denominator");
      }
    } else {
      std::string digits = first.text;
      int fraction_digits = 0;
      if (dot != std::string::npos) {
        fraction_digits = static_cast<int>(digits.size() - dot - 1);
        digits.erase(dot, 1);
      }
      if (digits.size() > 15) {
        throw ParseError(ParseErrorKind::Syntax, first.position, "numeric literal too long");
      }
      std::uint64_t den = 1;
      for (int i = 0; i < fraction_digits; ++i) den *= 10;
      lit = {std::stoull(digits), den, ProbabilityLiteral::Form::Decimal, fraction_digits};
    }
    if (lit.numerator > lit.denominator) {
      throw ParseError(ParseErrorKind::ProbabilityRange, first.position,
                       "base probability " + lit.to_string() + " is not in [0,1]");
    }
    return lit;
  }

  Flow parse_flow() {
    const Token& name = expect(TokenType::Identifier, "flow name");
    const auto kind = flow_kind_from_string(name.text);
    if (!kind) {
      throw ParseError(ParseErrorKind::UnknownFlow, name.position,
                       "'" + name.text + "' (expected ScOdds, ScRisk1 or ScRisk0)");
    }
    Flow flow;
    flow.kind = *kind;
    expect(TokenType::LParen, "'(' after flow name");
    const Token& prefix = peek();
    if (prefix.type != TokenType::Number || (prefix.text != "0" && prefix.text != "1")) {
      throw ParseError(ParseErrorKind::MalformedPredictor, prefix.position,
                       "predictor must start with '0' or '1', found " + found(prefix));
    }
    advance();
    flow.predictor.has_intercept = prefix.text == "1";
    while (peek().type == TokenType::Plus) {
      advance();
      const Token& term = peek();
      if (term.type != TokenType::Identifier) {
        throw ParseError(ParseErrorKind::MalformedPredictor, term.position,
                         "expected covariate name after '+', found " + found(term));
      }
      advance();
      for (const auto& existing : flow.predictor.terms) {
        if (existing == term.text) {
          throw ParseError(ParseErrorKind::DuplicateCovariate, term.position,
                           "'" + term.text + "' appears twice in one predictor");
        }
      }
      flow.predictor.terms.push_back(term.text);
    }
    if (peek().type != TokenType::RParen) {
      throw ParseError(ParseErrorKind::MalformedPredictor, peek().position,
                       "expected '+' or ')' in predictor, found " + found(peek()));
    }
    advance();
    return flow;
  }

  std::vector<Token> tokens_;
  std::size_t index_ = 0;
};

}  // namespace detail

/// Parses a model specification. Throws ParseError with a 1-based column.
inline ModelSpec parse(std::string_view text) { return detail::Parser(text).parse_model(); }

inline std::string to_string(const LinearPredictor& lp) {
  std::string out = lp.has_intercept ? "1" : "0";
  for (const auto& term : lp.terms) out += "+" + term;
  return out;
}

/// Canonical form: single spaces around '=' and '|', none inside parentheses.
inline std::string pretty_print(const ModelSpec& spec) {
  std::string out = spec.outcome + " = Ber(" + spec.base.to_string() + ")";
  for (const auto& flow : spec.flows) {
    out += " | ";
    out += to_string(flow.kind);
    out += "(" + to_string(flow.predictor) + ")";
  }
  return out;
}

inline std::string intercept_parameter(int position) {
  return "f" + std::to_string(position) + ".intercept";
}

inline std::string coefficient_parameter(int position, std::string_view covariate) {
  return "f" + std::to_string(position) + "." + std::string(covariate);
}

/// Per-flow parameter identifiers in flow order: `f{k}.intercept` then
/// `f{k}.<covariate>` for each term. A covariate shared by two flows gets two
/// distinct coefficients.
inline std::vector<std::string> parameter_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  for (const auto& flow : spec.flows) {
    if (flow.predictor.has_intercept) names.push_back(intercept_parameter(flow.position));
    for (const auto& term : flow.predictor.terms) {
      names.push_back(coefficient_parameter(flow.position, term));
    }
  }
  return names;
}

/// Distinct covariates referenced by the spec, in order of first appearance.
inline std::vector<std::string> covariate_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  for (const auto& flow : spec.flows) {
    for (const auto& term : flow.predictor.terms) {
      bool seen = false;
      for (const auto& n : names) seen = seen || n == term;
      if (!seen) names.push_back(term);
    }
  }
  return names;
}

inline bool references_covariate(const ModelSpec& spec, std::string_view covariate) {
  for (const auto& flow : spec.flows) {
    for (const auto& term : flow.predictor.terms) {
      if (term == covariate) return true;
    }
  }
  return false;
}

}  // namespace flowcalc
