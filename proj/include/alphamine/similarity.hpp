#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "alphamine/dsl.hpp"
#include "alphamine/error.hpp"

namespace alphamine {

// How a "common subtree" is read.
//  embedded: rooted top-down subtrees; a matched node may keep any
//            order-preserving subset of its children.
//  complete: a node together with all of its descendants.
enum class SubtreeMode { embedded, complete };

// Pre-order node ids (see preorder()) in the query and the other tree.
struct NodePair {
    std::size_t query = 0;
    std::size_t other = 0;
    bool operator==(const NodePair&) const = default;
};

struct SimilarityResult {
    std::size_t raw = 0;          // matched node count s
    std::size_t query_size = 0;   // |T(f)| of the query
    double normalized = 0.0;      // raw / query_size
    std::vector<NodePair> witness;
    std::string matched_name;     // zoo entry that attained the max (originality only)
};

// Node labels agree: same operator, same feature field, or both constants
// (constants match by class, not by value).
bool labels_match(const Node& a, const Node& b);

// Largest common subtree of a and b. Inputs should be canonicalized.
SimilarityResult pairwise_similarity(const FactorExpr& query, const FactorExpr& other,
                                     SubtreeMode mode = SubtreeMode::embedded);

class ZooError : public Error {
public:
    using Error::Error;
};
class EmptyZooError : public ZooError {
public:
    using ZooError::ZooError;
};

struct ZooEntry {
    std::string name;
    FactorExpr expr;     // canonicalized
    std::string source;  // attribution, e.g. "zoo.txt:12"
};

class AlphaZoo {
public:
    // Canonicalizes `expr`; throws ZooError on a duplicate name.
    void add(std::string name, const FactorExpr& expr, std::string source = {});
    bool contains(const std::string& name) const;
    const std::vector<ZooEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

private:
    std::vector<ZooEntry> entries_;
};

// One `name: EXPR` per line. Unnamed lines get `line<N>`. Parse failures are
// rethrown as ZooError naming the line.
AlphaZoo load_zoo(const std::filesystem::path& path);

// S(f) = max over the zoo of s(f, phi); normalized by |T(f)|. Zoo entries are
// scored in parallel and the first maximal entry wins.
SimilarityResult originality(const FactorExpr& f, const AlphaZoo& zoo,
                             SubtreeMode mode = SubtreeMode::embedded);

} // namespace alphamine
