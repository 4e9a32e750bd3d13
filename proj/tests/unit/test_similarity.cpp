#include "doctest.h"

#include <fstream>
#include <map>

#include "alphamine/similarity.hpp"
#include "random_trees.hpp"
#include "subtree_oracle.hpp"

using namespace alphamine;

namespace {

const std::string kData = ALPHAMINE_DATA_DIR;

FactorExpr canon(const std::string& text) { return canonicalize(parse(text)); }

std::size_t sim(const std::string& a, const std::string& b, SubtreeMode mode = SubtreeMode::embedded) {
    return pairwise_similarity(canon(a), canon(b), mode).raw;
}

// Witness must be an injective, label-preserving, parent-preserving map.
void check_witness(const FactorExpr& a, const FactorExpr& b, const SimilarityResult& r) {
    const auto pa = preorder(a.root());
    const auto pb = preorder(b.root());
    REQUIRE(r.witness.size() == r.raw);
    std::map<const Node*, const Node*> fwd;
    std::map<const Node*, const Node*> back;
    for (const auto& pair : r.witness) {
        REQUIRE(pair.query < pa.size());
        REQUIRE(pair.other < pb.size());
        const Node* u = pa[pair.query];
        const Node* v = pb[pair.other];
        CHECK(labels_match(*u, *v));
        CHECK(fwd.emplace(u, v).second);
        CHECK(back.emplace(v, u).second);
    }
    // Parents: map every node to its parent in each tree.
    std::map<const Node*, const Node*> parent_a, parent_b;
    for (const Node* n : pa)
        for (const auto& c : n->children()) parent_a[c.get()] = n;
    for (const Node* n : pb)
        for (const auto& c : n->children()) parent_b[c.get()] = n;
    std::size_t roots = 0;
    for (const auto& [u, v] : fwd) {
        const auto pu = parent_a.find(u);
        if (pu == parent_a.end() || !fwd.count(pu->second)) {
            ++roots;
            continue;
        }
        REQUIRE(parent_b.count(v));
        CHECK(fwd.at(pu->second) == parent_b.at(v));
    }
    if (r.raw > 0) CHECK(roots == 1);
}

} // namespace

TEST_CASE("worked pairs") {
    CHECK(sim("TS_MIN($low, 10)", "SMA($close, 20)") == 1);
    CHECK(sim("ADD($close, $open)", "ADD($open, $close)") == 3);
    CHECK(sim("SMA($close, 10)", "SMA($close, 12)") == 3);   // constants match by class
    CHECK(sim("$close", "$open") == 0);
    CHECK(sim("SUB($close, $open)", "SUB($open, $close)") == 2);
    CHECK(sim("TS_MIN($low, 10)", "TS_MIN(ABS($low), 10)") == 2);
    CHECK(sim("TS_MIN($low, 10)", "TS_MIN(ABS($low), 10)", SubtreeMode::complete) == 1);
    CHECK(sim("RANK(SMA($close, 5))", "ZSCORE(SMA($close, 7))", SubtreeMode::complete) == 3);
}

TEST_CASE("normalization divides by the query size") {
    const FactorExpr q = canon("ABS(SMA($close, 5))");
    const FactorExpr z = canon("SMA($close, 9)");
    const SimilarityResult r = pairwise_similarity(q, z);
    CHECK(r.raw == 3);
    CHECK(r.query_size == 4);
    CHECK(r.normalized == 0.75);
    CHECK(pairwise_similarity(z, q).normalized == 1.0);
}

TEST_CASE("dp equals brute force on 1000 random pairs") {
    testing::RandomTrees gen(2024);
    for (int i = 0; i < 1000; ++i) {
        const FactorExpr a = canonicalize(gen.make(12));
        const FactorExpr b = canonicalize(gen.make(12));
        CAPTURE(print(a));
        CAPTURE(print(b));
        const SimilarityResult r = pairwise_similarity(a, b);
        REQUIRE(r.raw == testing::brute_force_similarity(a, b, true));
        CHECK(pairwise_similarity(b, a).raw == r.raw);
        CHECK(r.raw <= std::min(a.size(), b.size()));
        check_witness(a, b, r);
        const SimilarityResult rc = pairwise_similarity(a, b, SubtreeMode::complete);
        REQUIRE(rc.raw == testing::brute_force_similarity(a, b, false));
        check_witness(a, b, rc);
    }
}

TEST_CASE("self similarity and symmetry on the corpus") {
    const auto lines = read_expression_file(kData + "/corpus.txt");
    std::vector<FactorExpr> exprs;
    for (const auto& l : lines) exprs.push_back(canonicalize(parse(l.text)));
    for (std::size_t i = 0; i < exprs.size(); ++i) {
        const SimilarityResult self = pairwise_similarity(exprs[i], exprs[i]);
        CHECK(self.raw == exprs[i].size());
        CHECK(self.normalized == 1.0);
        for (std::size_t j = i + 1; j < exprs.size(); ++j) {
            CHECK(pairwise_similarity(exprs[i], exprs[j]).raw == pairwise_similarity(exprs[j], exprs[i]).raw);
        }
    }
}

TEST_CASE("zoo loading") {
    const AlphaZoo zoo = load_zoo(kData + "/zoo_alpha101.txt");
    CHECK(zoo.size() == 25);
    for (const auto& e : zoo.entries()) {
        CHECK(structurally_equal(canonicalize(e.expr), e.expr));
        CHECK_FALSE(e.source.empty());
    }

    const std::string path = "zoo_bad_line.txt";
    {
        std::ofstream out(path);
        for (int i = 1; i <= 6; ++i) out << "a" << i << ": SMA($close, " << i + 1 << ")\n";
        out << "a7: SMA($close\n";
    }
    try {
        load_zoo(path);
        FAIL("expected ZooError");
    } catch (const ZooError& e) {
        CHECK(std::string(e.what()).find("line 7") != std::string::npos);
    }
    {
        std::ofstream out(path);
        out << "dup: $close\ndup: $open\n";
    }
    CHECK_THROWS_AS(load_zoo(path), ZooError);
    std::remove(path.c_str());
}

TEST_CASE("originality against a zoo") {
    AlphaZoo empty;
    CHECK_THROWS_AS(originality(parse("$close"), empty), EmptyZooError);

    AlphaZoo single;
    single.add("vol", parse("$volume"));
    const SimilarityResult none = originality(parse("SUB($close, $open)"), single);
    CHECK(none.raw == 0);
    CHECK(none.normalized == 0.0);

    const AlphaZoo zoo = load_zoo(kData + "/zoo_alpha101.txt");
    for (const auto& e : zoo.entries()) {
        const SimilarityResult r = originality(e.expr, zoo);
        CHECK(r.normalized == 1.0);
    }
    // Query given in non-canonical order still finds itself.
    single.add("spread", parse("ADD($high, $low)"));
    const SimilarityResult hit = originality(parse("ADD($low, $high)"), single);
    CHECK(hit.normalized == 1.0);
    CHECK(hit.matched_name == "spread");
}

TEST_CASE("random query against a random zoo matches brute force") {
    testing::RandomTrees gen(77);
    for (int trial = 0; trial < 30; ++trial) {
        AlphaZoo zoo;
        std::vector<FactorExpr> entries;
        for (int i = 0; i < 10; ++i) {
            const FactorExpr e = gen.make(12);
            zoo.add("z" + std::to_string(i), e);
            entries.push_back(canonicalize(e));
        }
        const FactorExpr f = canonicalize(gen.make(8));
        std::size_t best = 0;
        for (const auto& e : entries) best = std::max(best, testing::brute_force_similarity(f, e));
        const SimilarityResult r = originality(f, zoo);
        CHECK(r.raw == best);
        CHECK(r.normalized == doctest::Approx(static_cast<double>(best) / static_cast<double>(f.size())));
    }
}

TEST_CASE("grafting a zoo entry never lowers originality score") {
    testing::RandomTrees gen(13);
    const AlphaZoo zoo = load_zoo(kData + "/zoo_alpha101.txt");
    for (int i = 0; i < 50; ++i) {
        const FactorExpr f = gen.make(8);
        const auto& entry = zoo.entries()[static_cast<std::size_t>(i) % zoo.size()];
        const FactorExpr grafted(Node::make_op(*find_operator("ADD"), {f.root_ptr(), entry.expr.root_ptr()}));
        CHECK(originality(grafted, zoo).raw >= originality(f, zoo).raw);
        CHECK(originality(grafted, zoo).raw >= entry.expr.size());
    }
}
