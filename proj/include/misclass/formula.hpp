#pragma once

// Model formula mini-language.
//
//   formula   := response [ "||" surrogate ] "~" term { "+" term }
//   term      := ident [ "||" surrogate ]
//   ident     := [A-Za-z_][A-Za-z0-9_.]*
//
// At most one "||" may appear. A proxy on the response marks a
// misclassified dependent variable; a proxy on a term marks a
// misclassified independent variable. The intercept is implicit.

#include <algorithm>
#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "misclass/error.hpp"

namespace misclass {

enum class ProxyPosition { IV, DV };

struct Proxy {
    std::string latent;
    std::string surrogate;
    ProxyPosition position = ProxyPosition::IV;

    bool operator==(const Proxy&) const = default;
};

struct ModelSpec {
    std::string response;
    std::vector<std::string> terms;
    bool intercept = true;
    std::optional<Proxy> proxy;

    bool operator==(const ModelSpec&) const = default;

    bool has_proxy() const { return proxy.has_value(); }

    bool is_iv() const { return proxy && proxy->position == ProxyPosition::IV; }
    bool is_dv() const { return proxy && proxy->position == ProxyPosition::DV; }

    /// Terms other than the latent variable.
    std::vector<std::string> other_terms() const {
        std::vector<std::string> out;
        for (const auto& t : terms) {
            if (!proxy || t != proxy->latent) out.push_back(t);
        }
        return out;
    }

    /// Every variable the model references (response, terms, surrogate).
    std::vector<std::string> variables() const {
        std::vector<std::string> out{response};
        out.insert(out.end(), terms.begin(), terms.end());
        if (proxy) out.push_back(proxy->surrogate);
        return out;
    }
};

namespace detail {

enum class TokenKind { Ident, Tilde, Plus, DoublePipe, End };

struct Token {
    TokenKind kind;
    std::string text;
    std::size_t offset;
};

inline bool ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

inline bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

inline std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (c == '~') {
            tokens.push_back({TokenKind::Tilde, "~", i++});
        } else if (c == '+') {
            tokens.push_back({TokenKind::Plus, "+", i++});
        } else if (c == '|' && i + 1 < text.size() && text[i + 1] == '|') {
            tokens.push_back({TokenKind::DoublePipe, "||", i});
            i += 2;
        } else if (ident_start(c)) {
            const std::size_t start = i;
            while (i < text.size() && ident_char(text[i])) ++i;
            tokens.push_back({TokenKind::Ident, std::string(text.substr(start, i - start)), start});
        } else {
            fail(ErrorCode::SyntaxError,
                 "unexpected character '" + std::string(1, c) + "' at offset " + std::to_string(i));
        }
    }
    tokens.push_back({TokenKind::End, "", text.size()});
    return tokens;
}

class Parser {
public:
    explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

    ModelSpec parse() {
        ModelSpec spec;
        spec.response = expect_ident("response");
        if (accept(TokenKind::DoublePipe)) {
            bind_proxy(spec, spec.response, ProxyPosition::DV);
        }
        if (peek().kind != TokenKind::Tilde) {
            fail(ErrorCode::SyntaxError, "expected '~' at offset " + std::to_string(peek().offset));
        }
        ++pos_;
        do {
            std::string term = expect_ident("term");
            spec.terms.push_back(term);
            if (accept(TokenKind::DoublePipe)) {
                bind_proxy(spec, term, ProxyPosition::IV);
            }
        } while (accept(TokenKind::Plus));
        if (peek().kind != TokenKind::End) {
            fail(ErrorCode::SyntaxError,
                 "unexpected token '" + peek().text + "' at offset " + std::to_string(peek().offset));
        }
        return spec;
    }

private:
    const Token& peek() const { return tokens_[pos_]; }

    bool accept(TokenKind kind) {
        if (peek().kind == kind) {
            ++pos_;
            return true;
        }
        return false;
    }

    std::string expect_ident(const char* what) {
        if (peek().kind != TokenKind::Ident) {
            fail(ErrorCode::SyntaxError, std::string("expected ") + what + " at offset " +
                                             std::to_string(peek().offset));
        }
        return tokens_[pos_++].text;
    }

    void bind_proxy(ModelSpec& spec, const std::string& latent, ProxyPosition position) {
        if (spec.proxy) {
            fail(ErrorCode::DuplicateProxy, "only one '||' proxy binding is allowed");
        }
        std::string surrogate = expect_ident("surrogate");
        spec.proxy = Proxy{latent, std::move(surrogate), position};
    }

    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline ModelSpec parse_formula(std::string_view text) {
    if (std::all_of(text.begin(), text.end(),
                    [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
        fail(ErrorCode::EmptyFormula, "formula is empty");
    }
    auto tokens = detail::tokenize(text);
    const auto pipes = std::count_if(tokens.begin(), tokens.end(), [](const detail::Token& t) {
        return t.kind == detail::TokenKind::DoublePipe;
    });
    if (pipes > 1) fail(ErrorCode::DuplicateProxy, "only one '||' proxy binding is allowed");

    ModelSpec spec = detail::Parser(std::move(tokens)).parse();

    std::set<std::string> seen;
    for (const auto& name : spec.variables()) {
        if (!seen.insert(name).second) {
            fail(ErrorCode::DuplicateName, "variable '" + name + "' appears more than once");
        }
    }
    return spec;
}

/// Canonical text form; parse_formula(to_string(s)) == s.
inline std::string to_string(const ModelSpec& spec) {
    std::string out = spec.response;
    if (spec.is_dv()) out += " || " + spec.proxy->surrogate;
    out += " ~ ";
    for (std::size_t i = 0; i < spec.terms.size(); ++i) {
        if (i > 0) out += " + ";
        out += spec.terms[i];
        if (spec.is_iv() && spec.terms[i] == spec.proxy->latent) out += " || " + spec.proxy->surrogate;
    }
    return out;
}

} // namespace misclass
