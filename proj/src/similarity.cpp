#include "alphamine/similarity.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

namespace alphamine {

bool labels_match(const Node& a, const Node& b) {
    if (a.kind() != b.kind()) return false;
    switch (a.kind()) {
    case NodeKind::op: return a.op().name == b.op().name;
    case NodeKind::feature: return a.feature() == b.feature();
    case NodeKind::constant: return true;
    }
    return false;
}

namespace {

// Pre-order ids of every node plus child id lists, so the DP can run over
// plain indices.
struct IndexedTree {
    std::vector<const Node*> nodes;
    std::vector<std::vector<std::size_t>> children;

    explicit IndexedTree(const Node& root) : nodes(preorder(root)) {
        std::unordered_map<const Node*, std::size_t> id;
        for (std::size_t i = 0; i < nodes.size(); ++i) id[nodes[i]] = i;
        children.resize(nodes.size());
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            for (const auto& c : nodes[i]->children()) children[i].push_back(id.at(c.get()));
        }
    }
    std::size_t size() const { return nodes.size(); }
};

class EmbeddedMatcher {
public:
    EmbeddedMatcher(const IndexedTree& a, const IndexedTree& b)
        : a_(a), b_(b), best_(a.size() * b.size(), 0) {
        // Children carry larger pre-order ids than their parent, so a reverse
        // sweep sees every child pair before the parent pair.
        for (std::size_t u = a.size(); u-- > 0;) {
            for (std::size_t v = b.size(); v-- > 0;) {
                if (!labels_match(*a.nodes[u], *b.nodes[v])) continue;
                best_[u * b.size() + v] = 1 + align(u, v).back().back();
            }
        }
    }

    std::size_t at(std::size_t u, std::size_t v) const { return best_[u * b_.size() + v]; }

    void witness(std::size_t u, std::size_t v, std::vector<NodePair>& out) const {
        out.push_back({u, v});
        const auto table = align(u, v);
        const auto& cu = a_.children[u];
        const auto& cv = b_.children[v];
        std::size_t i = cu.size(), j = cv.size();
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        while (i > 0 && j > 0) {
            const std::size_t here = table[i][j];
            if (here == table[i - 1][j]) {
                --i;
            } else if (here == table[i][j - 1]) {
                --j;
            } else {
                pairs.emplace_back(cu[i - 1], cv[j - 1]);
                --i;
                --j;
            }
        }
        std::reverse(pairs.begin(), pairs.end());
        for (auto [x, y] : pairs) witness(x, y, out);
    }

private:
    // Max-weight order-preserving alignment of the child lists of u and v.
    std::vector<std::vector<std::size_t>> align(std::size_t u, std::size_t v) const {
        const auto& cu = a_.children[u];
        const auto& cv = b_.children[v];
        std::vector<std::vector<std::size_t>> t(cu.size() + 1, std::vector<std::size_t>(cv.size() + 1, 0));
        for (std::size_t i = 1; i <= cu.size(); ++i) {
            for (std::size_t j = 1; j <= cv.size(); ++j) {
                const std::size_t m = at(cu[i - 1], cv[j - 1]);
                std::size_t best = std::max(t[i - 1][j], t[i][j - 1]);
                if (m > 0) best = std::max(best, t[i - 1][j - 1] + m);
                t[i][j] = best;
            }
        }
        return t;
    }

    const IndexedTree& a_;
    const IndexedTree& b_;
    std::vector<std::size_t> best_;
};

bool complete_equal(const IndexedTree& a, std::size_t u, const IndexedTree& b, std::size_t v) {
    if (!labels_match(*a.nodes[u], *b.nodes[v])) return false;
    const auto& cu = a.children[u];
    const auto& cv = b.children[v];
    if (cu.size() != cv.size()) return false;
    for (std::size_t i = 0; i < cu.size(); ++i) {
        if (!complete_equal(a, cu[i], b, cv[i])) return false;
    }
    return true;
}

void complete_witness(const IndexedTree& a, std::size_t u, const IndexedTree& b, std::size_t v,
                      std::vector<NodePair>& out) {
    out.push_back({u, v});
    for (std::size_t i = 0; i < a.children[u].size(); ++i) {
        complete_witness(a, a.children[u][i], b, b.children[v][i], out);
    }
}

} // namespace

SimilarityResult pairwise_similarity(const FactorExpr& query, const FactorExpr& other, SubtreeMode mode) {
    const IndexedTree a(query.root());
    const IndexedTree b(other.root());
    SimilarityResult res;
    res.query_size = a.size();

    std::size_t best = 0, bu = 0, bv = 0;
    if (mode == SubtreeMode::embedded) {
        const EmbeddedMatcher m(a, b);
        for (std::size_t u = 0; u < a.size(); ++u) {
            for (std::size_t v = 0; v < b.size(); ++v) {
                if (m.at(u, v) > best) {
                    best = m.at(u, v);
                    bu = u;
                    bv = v;
                }
            }
        }
        if (best > 0) m.witness(bu, bv, res.witness);
    } else {
        for (std::size_t u = 0; u < a.size(); ++u) {
            const std::size_t sz = a.nodes[u]->size();
            if (sz <= best) continue;
            for (std::size_t v = 0; v < b.size(); ++v) {
                if (complete_equal(a, u, b, v)) {
                    best = sz;
                    bu = u;
                    bv = v;
                    break;
                }
            }
        }
        if (best > 0) complete_witness(a, bu, b, bv, res.witness);
    }
    res.raw = best;
    res.normalized = static_cast<double>(best) / static_cast<double>(a.size());
    return res;
}

void AlphaZoo::add(std::string name, const FactorExpr& expr, std::string source) {
    if (contains(name)) throw ZooError("duplicate zoo entry name '" + name + "'");
    entries_.push_back({std::move(name), canonicalize(expr), std::move(source)});
}

bool AlphaZoo::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const ZooEntry& e) { return e.name == name; });
}

AlphaZoo load_zoo(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ZooError("cannot open zoo file " + path.string());
    std::vector<ExprLine> lines;
    try {
        lines = read_expression_lines(in);
    } catch (const ExprFileError& e) {
        throw ZooError(path.string() + ": " + e.what());
    }
    AlphaZoo zoo;
    for (const auto& line : lines) {
        const std::string where = path.filename().string() + ":" + std::to_string(line.line_no);
        FactorExpr expr;
        try {
            expr = parse(line.text);
        } catch (const DslError& e) {
            throw ZooError(path.string() + ": line " + std::to_string(line.line_no) + ": " + e.what());
        }
        std::string name = line.name.empty() ? "line" + std::to_string(line.line_no) : line.name;
        if (zoo.contains(name)) {
            throw ZooError(path.string() + ": line " + std::to_string(line.line_no) +
                           ": duplicate name '" + name + "'");
        }
        zoo.add(std::move(name), expr, where);
    }
    return zoo;
}

SimilarityResult originality(const FactorExpr& f, const AlphaZoo& zoo, SubtreeMode mode) {
    if (zoo.empty()) throw EmptyZooError("originality requires a non-empty alpha zoo");
    const FactorExpr query = canonicalize(f);
    const auto& entries = zoo.entries();
    std::vector<SimilarityResult> results(entries.size());
    const auto n = static_cast<std::ptrdiff_t>(entries.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        results[static_cast<std::size_t>(i)] = pairwise_similarity(query, entries[static_cast<std::size_t>(i)].expr, mode);
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < results.size(); ++i) {
        if (results[i].raw > results[best].raw) best = i;
    }
    SimilarityResult out = std::move(results[best]);
    out.matched_name = entries[best].name;
    return out;
}

} // namespace alphamine
