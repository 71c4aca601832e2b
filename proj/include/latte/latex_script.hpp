#pragma once

// LaTeX-aware lexing of candidate sources.
//
// A token is a control word (backslash + ASCII letters), a control symbol
// (backslash + one other character), or a single character. Whitespace only
// separates tokens; a script remembers where whitespace stood so unmodified
// prefixes keep their spacing when a script is rebuilt from tokens.

#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace latte {

namespace detail {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
inline bool is_ascii_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

/// Byte length of the UTF-8 character starting at `s[i]` (1 for ASCII or
/// malformed lead bytes).
inline std::size_t utf8_length(std::string_view s, std::size_t i) {
  const auto lead = static_cast<unsigned char>(s[i]);
  std::size_t n = 1;
  if (lead >= 0xF0) {
    n = 4;
  } else if (lead >= 0xE0) {
    n = 3;
  } else if (lead >= 0xC0) {
    n = 2;
  }
  if (i + n > s.size()) return 1;
  for (std::size_t k = 1; k < n; ++k) {
    if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return 1;
  }
  return n;
}

inline bool is_control_word(std::string_view tok) {
  return tok.size() >= 2 && tok[0] == '\\' && is_ascii_letter(tok[1]);
}

/// True when `left` immediately followed by `right` would lex differently.
inline bool needs_separator(std::string_view left, std::string_view right) {
  if (right.empty() || left.empty()) return false;
  return is_control_word(left) && is_ascii_letter(right.front());
}

struct Lexed {
  std::vector<std::string> tokens;
  std::vector<bool> spaced;  // whitespace preceded token i
};

inline Lexed lex(std::string_view raw) {
  Lexed out;
  bool pending_space = false;
  std::size_t i = 0;
  while (i < raw.size()) {
    const char c = raw[i];
    if (is_space(c)) {
      pending_space = true;
      ++i;
      continue;
    }
    std::size_t len = 1;
    if (c == '\\' && i + 1 < raw.size()) {
      if (is_ascii_letter(raw[i + 1])) {
        len = 2;
        while (i + len < raw.size() && is_ascii_letter(raw[i + len])) ++len;
      } else {
        len = 1 + utf8_length(raw, i + 1);
      }
    } else {
      len = utf8_length(raw, i);
    }
    out.tokens.emplace_back(raw.substr(i, len));
    out.spaced.push_back(pending_space && out.tokens.size() > 1);
    pending_space = false;
    i += len;
  }
  return out;
}

inline std::string join(std::span<const std::string> tokens, const std::vector<bool>& spaced) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0 && ((i < spaced.size() && spaced[i]) || needs_separator(tokens[i - 1], tokens[i]))) {
      out.push_back(' ');
    }
    out += tokens[i];
  }
  return out;
}

}  // namespace detail

inline std::vector<std::string> tokenize(std::string_view raw) { return detail::lex(raw).tokens; }

/// Shortest text that lexes back to `tokens`.
inline std::string detokenize(std::span<const std::string> tokens) { return detail::join(tokens, {}); }

/// Candidate source C_i. Equality compares token sequences.
class LatexScript {
 public:
  LatexScript() = default;

  static LatexScript parse(std::string_view raw) {
    LatexScript s;
    auto lexed = detail::lex(raw);
    s.raw_ = std::string(raw);
    s.tokens_ = std::move(lexed.tokens);
    s.spaced_ = std::move(lexed.spaced);
    return s;
  }

  static LatexScript from_tokens(std::vector<std::string> tokens) { return from_tokens(std::move(tokens), {}); }

  const std::string& raw() const { return raw_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }

  /// tokens[0..n) followed by `tail`; the prefix keeps its original spacing.
  LatexScript splice(std::size_t n, std::span<const std::string> tail) const {
    std::vector<std::string> toks(tokens_.begin(), tokens_.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<bool> spaced(spaced_.begin(), spaced_.begin() + static_cast<std::ptrdiff_t>(std::min(n, spaced_.size())));
    spaced.resize(n, false);
    toks.insert(toks.end(), tail.begin(), tail.end());
    spaced.resize(toks.size(), false);
    return from_tokens(std::move(toks), std::move(spaced));
  }

  friend bool operator==(const LatexScript& a, const LatexScript& b) { return a.tokens_ == b.tokens_; }

 private:
  static LatexScript from_tokens(std::vector<std::string> tokens, std::vector<bool> spaced) {
    LatexScript s;
    s.raw_ = detail::join(tokens, spaced);
    s.tokens_ = std::move(tokens);
    s.spaced_ = std::move(spaced);
    s.spaced_.resize(s.tokens_.size(), false);
    return s;
  }

  std::string raw_;
  std::vector<std::string> tokens_;
  std::vector<bool> spaced_;
};

}  // namespace latte
