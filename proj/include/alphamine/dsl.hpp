#pragma once

// Formulaic factor language: operator library, AST, parser, printer and
// canonical form. Grammar reference lives in docs/dsl_reference.md.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "alphamine/error.hpp"

namespace alphamine {

enum class OpKind { arithmetic, rolling, cross_sectional, conditional };
enum class SlotKind { series, window_int, scalar_const };
enum class Feature : std::uint8_t { open, high, low, close, volume };

inline constexpr std::size_t kFeatureCount = 5;

std::string_view feature_name(Feature f);
std::string_view op_kind_name(OpKind k);

struct OperatorSpec {
    std::string name;
    OpKind kind;
    std::vector<SlotKind> slots;
    bool commutative = false;

    std::size_t arity() const { return slots.size(); }
};

// Fixed operator library, stable order.
const std::vector<OperatorSpec>& operator_catalog();
// nullptr when unknown.
const OperatorSpec* find_operator(std::string_view name);

struct SourceSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

class DslError : public Error {
public:
    DslError(const std::string& what, SourceSpan span) : Error(what), span_(span) {}
    SourceSpan span() const { return span_; }

private:
    SourceSpan span_;
};

class LexError : public DslError {
public:
    using DslError::DslError;
};
class ParseError : public DslError {
public:
    using DslError::DslError;
};
class ArityError : public DslError {
public:
    using DslError::DslError;
};
class SlotKindError : public DslError {
public:
    using DslError::DslError;
};

enum class NodeKind { op, feature, constant };

class Node;
using NodePtr = std::shared_ptr<const Node>;

// Immutable AST node. Trees are built bottom-up through the factories, which
// validate arity and slot kinds, so every reachable tree is well formed.
class Node {
public:
    static NodePtr make_op(const OperatorSpec& spec, std::vector<NodePtr> children,
                           SourceSpan span = {});
    static NodePtr make_feature(Feature f, SourceSpan span = {});
    static NodePtr make_const(double value, SourceSpan span = {});

    NodeKind kind() const { return kind_; }
    bool is_op() const { return kind_ == NodeKind::op; }
    const OperatorSpec& op() const { return *op_; }
    Feature feature() const { return feature_; }
    double value() const { return value_; }
    SourceSpan span() const { return span_; }
    std::span<const NodePtr> children() const { return children_; }
    // Number of nodes in this subtree.
    std::size_t size() const { return size_; }
    // Largest window/lag anywhere in the subtree (0 if none).
    std::size_t max_window() const { return max_window_; }
    // Prior dates needed before the first fully-defined output.
    std::size_t lookback() const { return lookback_; }

    struct Key {};
    explicit Node(Key) {}

private:
    NodeKind kind_ = NodeKind::constant;
    const OperatorSpec* op_ = nullptr;
    Feature feature_ = Feature::close;
    double value_ = 0.0;
    SourceSpan span_;
    std::vector<NodePtr> children_;
    std::size_t size_ = 1;
    std::size_t max_window_ = 0;
    std::size_t lookback_ = 0;
};

// A factor expression: shared handle to an immutable root node.
class FactorExpr {
public:
    FactorExpr() = default;
    explicit FactorExpr(NodePtr root) : root_(std::move(root)) {}

    const Node& root() const { return *root_; }
    const NodePtr& root_ptr() const { return root_; }
    bool empty() const { return !root_; }
    std::size_t size() const { return root_ ? root_->size() : 0; }

private:
    NodePtr root_;
};

FactorExpr parse(std::string_view text);
std::string print(const FactorExpr& expr);
std::string print(const Node& node);
FactorExpr canonicalize(const FactorExpr& expr);

// Total order used by canonicalize: operator name, then leaf kind, then leaf
// value, then children lexicographically. Returns <0, 0, >0.
int compare_nodes(const Node& a, const Node& b);
// Structural equality (ignores spans).
bool structurally_equal(const Node& a, const Node& b);
inline bool structurally_equal(const FactorExpr& a, const FactorExpr& b) {
    return structurally_equal(a.root(), b.root());
}

// Nodes in pre-order; index i in the result is the node's pre-order id.
std::vector<const Node*> preorder(const Node& root);

// One entry of an expression file: `[name:] EXPR`, `#` comment lines skipped.
struct ExprLine {
    std::size_t line_no = 0;
    std::string name;   // empty when the line carries no name
    std::string text;   // expression source
};

std::vector<ExprLine> read_expression_lines(std::istream& in);
std::vector<ExprLine> read_expression_file(const std::filesystem::path& path);

// Raised while reading an expression file; names the offending line.
class ExprFileError : public Error {
public:
    ExprFileError(const std::string& what, std::size_t line) : Error(what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

} // namespace alphamine
