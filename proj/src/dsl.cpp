#include "alphamine/dsl.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>

namespace alphamine {

std::string_view feature_name(Feature f) {
    switch (f) {
    case Feature::open: return "open";
    case Feature::high: return "high";
    case Feature::low: return "low";
    case Feature::close: return "close";
    case Feature::volume: return "volume";
    }
    return "?";
}

std::string_view op_kind_name(OpKind k) {
    switch (k) {
    case OpKind::arithmetic: return "arithmetic";
    case OpKind::rolling: return "rolling";
    case OpKind::cross_sectional: return "cross-sectional";
    case OpKind::conditional: return "conditional";
    }
    return "?";
}

namespace {

std::optional<Feature> feature_from_name(std::string_view name) {
    static constexpr std::array<Feature, kFeatureCount> all{
        Feature::open, Feature::high, Feature::low, Feature::close, Feature::volume};
    for (Feature f : all) {
        if (feature_name(f) == name) return f;
    }
    return std::nullopt;
}

std::vector<OperatorSpec> build_catalog() {
    using S = SlotKind;
    constexpr auto ser = S::series;
    constexpr auto win = S::window_int;
    constexpr auto sc = S::scalar_const;
    constexpr auto ar = OpKind::arithmetic;
    constexpr auto ro = OpKind::rolling;
    constexpr auto cs = OpKind::cross_sectional;
    constexpr auto co = OpKind::conditional;
    return {
        {"ADD", ar, {ser, ser}, true},
        {"SUB", ar, {ser, ser}, false},
        {"MUL", ar, {ser, ser}, true},
        {"DIV", ar, {ser, ser}, false},
        {"ABS", ar, {ser}, false},
        {"LOG", ar, {ser}, false},
        {"SIGN", ar, {ser}, false},
        {"POW", ar, {ser, sc}, false},
        {"NEG", ar, {ser}, false},
        {"TS_MIN", ro, {ser, win}, false},
        {"TS_MAX", ro, {ser, win}, false},
        {"TS_SUM", ro, {ser, win}, false},
        {"SMA", ro, {ser, win}, false},
        {"EMA", ro, {ser, win}, false},
        {"TS_STD", ro, {ser, win}, false},
        {"TS_RANK", ro, {ser, win}, false},
        {"TS_CORR", ro, {ser, ser, win}, false},
        {"DELAY", ro, {ser, win}, false},
        {"DELTA", ro, {ser, win}, false},
        {"RANK", cs, {ser}, false},
        {"ZSCORE", cs, {ser}, false},
        {"IF", co, {ser, ser, ser}, false},
        {"GT", co, {ser, ser}, false},
        {"LT", co, {ser, ser}, false},
    };
}

bool is_lag_operator(const OperatorSpec& spec) {
    return spec.name == "DELAY" || spec.name == "DELTA";
}

bool is_positive_integer(double v) {
    return v >= 1.0 && v <= 1e9 && std::floor(v) == v;
}

} // namespace

const std::vector<OperatorSpec>& operator_catalog() {
    static const std::vector<OperatorSpec> catalog = build_catalog();
    return catalog;
}

const OperatorSpec* find_operator(std::string_view name) {
    for (const auto& spec : operator_catalog()) {
        if (spec.name == name) return &spec;
    }
    return nullptr;
}

NodePtr Node::make_op(const OperatorSpec& spec, std::vector<NodePtr> children, SourceSpan span) {
    if (children.size() != spec.arity()) {
        throw ArityError(spec.name + " expects " + std::to_string(spec.arity()) +
                             " argument(s), got " + std::to_string(children.size()),
                         span);
    }
    auto node = std::make_shared<Node>(Key{});
    node->kind_ = NodeKind::op;
    node->op_ = &spec;
    node->span_ = span;
    std::size_t own_lookback = 0;
    std::size_t child_lookback = 0;
    for (std::size_t i = 0; i < children.size(); ++i) {
        const Node& child = *children[i];
        switch (spec.slots[i]) {
        case SlotKind::series:
            break;
        case SlotKind::window_int:
            if (child.kind() != NodeKind::constant) {
                throw SlotKindError(spec.name + " argument " + std::to_string(i + 1) +
                                        " must be a positive integer window",
                                    child.span());
            }
            if (!is_positive_integer(child.value())) {
                throw SlotKindError(spec.name + " window must be a positive integer",
                                    child.span());
            }
            {
                auto w = static_cast<std::size_t>(child.value());
                node->max_window_ = std::max(node->max_window_, w);
                own_lookback = is_lag_operator(spec) ? w : w - 1;
            }
            break;
        case SlotKind::scalar_const:
            if (child.kind() != NodeKind::constant) {
                throw SlotKindError(spec.name + " argument " + std::to_string(i + 1) +
                                        " must be a numeric constant",
                                    child.span());
            }
            break;
        }
        node->size_ += child.size();
        node->max_window_ = std::max(node->max_window_, child.max_window());
        child_lookback = std::max(child_lookback, child.lookback());
    }
    node->lookback_ = own_lookback + child_lookback;
    node->children_ = std::move(children);
    return node;
}

NodePtr Node::make_feature(Feature f, SourceSpan span) {
    auto node = std::make_shared<Node>(Key{});
    node->kind_ = NodeKind::feature;
    node->feature_ = f;
    node->span_ = span;
    return node;
}

NodePtr Node::make_const(double value, SourceSpan span) {
    auto node = std::make_shared<Node>(Key{});
    node->kind_ = NodeKind::constant;
    node->value_ = value;
    node->span_ = span;
    return node;
}

// ---------------------------------------------------------------------------
// Lexer / parser

namespace {

enum class Tok { ident, feature, number, lparen, rparen, comma, end };

struct Token {
    Tok type;
    std::string_view text;
    SourceSpan span;
    double number = 0.0;
};

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    Token next() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        const std::size_t start = pos_;
        if (pos_ >= src_.size()) return {Tok::end, {}, {start, start}};
        const char c = src_[pos_];
        if (c == '(') return single(Tok::lparen);
        if (c == ')') return single(Tok::rparen);
        if (c == ',') return single(Tok::comma);
        if (c == '$') {
            ++pos_;
            const std::size_t id_start = pos_;
            while (pos_ < src_.size() && is_ident_char(src_[pos_])) ++pos_;
            if (pos_ == id_start) throw LexError("expected feature name after '$'", {start, pos_});
            return {Tok::feature, src_.substr(id_start, pos_ - id_start), {start, pos_}};
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            while (pos_ < src_.size() && is_ident_char(src_[pos_])) ++pos_;
            return {Tok::ident, src_.substr(start, pos_ - start), {start, pos_}};
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '.') {
            return number(start);
        }
        throw LexError(std::string("unexpected character '") + c + "'", {start, start + 1});
    }

private:
    static bool is_ident_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    }

    Token single(Tok t) {
        const std::size_t start = pos_++;
        return {t, src_.substr(start, 1), {start, pos_}};
    }

    Token number(std::size_t start) {
        std::size_t p = pos_;
        auto digits = [&] {
            const std::size_t d0 = p;
            while (p < src_.size() && std::isdigit(static_cast<unsigned char>(src_[p]))) ++p;
            return p - d0;
        };
        if (src_[p] == '-') ++p;
        std::size_t nd = digits();
        if (p < src_.size() && src_[p] == '.') {
            ++p;
            nd += digits();
        }
        if (nd == 0) throw LexError("malformed number", {start, std::max(p, start + 1)});
        if (p < src_.size() && (src_[p] == 'e' || src_[p] == 'E')) {
            ++p;
            if (p < src_.size() && (src_[p] == '+' || src_[p] == '-')) ++p;
            if (digits() == 0) throw LexError("malformed exponent", {start, p});
        }
        if (p < src_.size() && is_ident_char(src_[p])) {
            throw LexError("malformed number", {start, p + 1});
        }
        const std::string_view text = src_.substr(start, p - start);
        double value = 0.0;
        // from_chars rejects a leading '+' but accepts '-'.
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
        if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
            throw LexError("number out of range", {start, p});
        }
        pos_ = p;
        return {Tok::number, text, {start, p}, value};
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

class Parser {
public:
    explicit Parser(std::string_view src) : lexer_(src) { advance(); }

    NodePtr parse_all() {
        NodePtr root = parse_expr();
        if (tok_.type != Tok::end) {
            throw ParseError("unexpected trailing input '" + std::string(tok_.text) + "'", tok_.span);
        }
        return root;
    }

private:
    void advance() { tok_ = lexer_.next(); }

    NodePtr parse_expr() {
        const Token t = tok_;
        switch (t.type) {
        case Tok::feature: {
            advance();
            auto f = feature_from_name(t.text);
            if (!f) throw ParseError("unknown feature '$" + std::string(t.text) + "'", t.span);
            return Node::make_feature(*f, t.span);
        }
        case Tok::number:
            advance();
            return Node::make_const(t.number, t.span);
        case Tok::ident:
            return parse_call();
        case Tok::end:
            throw ParseError("unexpected end of input", t.span);
        default:
            throw ParseError("unexpected '" + std::string(t.text) + "'", t.span);
        }
    }

    NodePtr parse_call() {
        const Token name = tok_;
        const OperatorSpec* spec = find_operator(name.text);
        if (!spec) throw ParseError("unknown operator '" + std::string(name.text) + "'", name.span);
        advance();
        if (tok_.type != Tok::lparen) throw ParseError("expected '(' after " + spec->name, tok_.span);
        advance();
        std::vector<NodePtr> args;
        if (tok_.type != Tok::rparen) {
            for (;;) {
                args.push_back(parse_expr());
                if (tok_.type == Tok::comma) {
                    advance();
                    continue;
                }
                break;
            }
        }
        if (tok_.type != Tok::rparen) throw ParseError("expected ',' or ')'", tok_.span);
        const SourceSpan span{name.span.begin, tok_.span.end};
        advance();
        if (args.size() != spec->arity()) {
            // Point at the first surplus argument, or at the whole call when short.
            SourceSpan where = span;
            if (args.size() > spec->arity()) where = args[spec->arity()]->span();
            throw ArityError(spec->name + " expects " + std::to_string(spec->arity()) +
                                 " argument(s), got " + std::to_string(args.size()),
                             where);
        }
        return Node::make_op(*spec, std::move(args), span);
    }

    Lexer lexer_;
    Token tok_{Tok::end, {}, {}};
};

void print_to(const Node& node, std::string& out) {
    switch (node.kind()) {
    case NodeKind::feature:
        out += '$';
        out += feature_name(node.feature());
        return;
    case NodeKind::constant: {
        std::array<char, 64> buf{};
        auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), node.value());
        (void)ec;
        out.append(buf.data(), ptr);
        return;
    }
    case NodeKind::op:
        out += node.op().name;
        out += '(';
        for (std::size_t i = 0; i < node.children().size(); ++i) {
            if (i) out += ", ";
            print_to(*node.children()[i], out);
        }
        out += ')';
        return;
    }
}

int kind_rank(NodeKind k) {
    switch (k) {
    case NodeKind::op: return 0;
    case NodeKind::feature: return 1;
    case NodeKind::constant: return 2;
    }
    return 3;
}

NodePtr canonical_node(const NodePtr& node) {
    if (!node->is_op()) return node;
    std::vector<NodePtr> kids;
    kids.reserve(node->children().size());
    for (const auto& c : node->children()) kids.push_back(canonical_node(c));
    if (node->op().commutative) {
        std::stable_sort(kids.begin(), kids.end(), [](const NodePtr& a, const NodePtr& b) {
            return compare_nodes(*a, *b) < 0;
        });
    }
    return Node::make_op(node->op(), std::move(kids), node->span());
}

} // namespace

FactorExpr parse(std::string_view text) {
    if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
        throw ParseError("empty expression", {0, text.size()});
    }
    Parser p(text);
    return FactorExpr(p.parse_all());
}

std::string print(const Node& node) {
    std::string out;
    print_to(node, out);
    return out;
}

std::string print(const FactorExpr& expr) { return print(expr.root()); }

int compare_nodes(const Node& a, const Node& b) {
    if (a.kind() != b.kind()) return kind_rank(a.kind()) < kind_rank(b.kind()) ? -1 : 1;
    switch (a.kind()) {
    case NodeKind::op: {
        if (int c = a.op().name.compare(b.op().name); c != 0) return c < 0 ? -1 : 1;
        const auto ka = a.children();
        const auto kb = b.children();
        for (std::size_t i = 0; i < std::min(ka.size(), kb.size()); ++i) {
            if (int c = compare_nodes(*ka[i], *kb[i]); c != 0) return c;
        }
        if (ka.size() != kb.size()) return ka.size() < kb.size() ? -1 : 1;
        return 0;
    }
    case NodeKind::feature:
        if (a.feature() == b.feature()) return 0;
        return a.feature() < b.feature() ? -1 : 1;
    case NodeKind::constant:
        if (a.value() == b.value()) return 0;
        return a.value() < b.value() ? -1 : 1;
    }
    return 0;
}

bool structurally_equal(const Node& a, const Node& b) { return compare_nodes(a, b) == 0; }

FactorExpr canonicalize(const FactorExpr& expr) { return FactorExpr(canonical_node(expr.root_ptr())); }

std::vector<const Node*> preorder(const Node& root) {
    std::vector<const Node*> out;
    out.reserve(root.size());
    std::vector<const Node*> stack{&root};
    while (!stack.empty()) {
        const Node* n = stack.back();
        stack.pop_back();
        out.push_back(n);
        const auto kids = n->children();
        for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(it->get());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Expression files

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool is_name(std::string_view s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
}

} // namespace

std::vector<ExprLine> read_expression_lines(std::istream& in) {
    std::vector<ExprLine> out;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        std::string_view body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        ExprLine entry;
        entry.line_no = no;
        // `name: EXPR`. Expressions never contain ':' so the first one splits.
        if (auto colon = body.find(':'); colon != std::string_view::npos) {
            std::string_view name = trim(body.substr(0, colon));
            if (!is_name(name)) {
                throw ExprFileError("line " + std::to_string(no) + ": invalid name '" +
                                        std::string(name) + "'",
                                    no);
            }
            entry.name = std::string(name);
            body = trim(body.substr(colon + 1));
            if (body.empty()) {
                throw ExprFileError("line " + std::to_string(no) + ": missing expression", no);
            }
        }
        entry.text = std::string(body);
        out.push_back(std::move(entry));
    }
    return out;
}

std::vector<ExprLine> read_expression_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open expression file " + path.string());
    return read_expression_lines(in);
}

} // namespace alphamine
