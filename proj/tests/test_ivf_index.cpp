#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "ecosearch/ivf_index.hpp"
#include "ecosearch/kmeans.hpp"
#include "test_support.hpp"

using namespace ecosearch;
using fixtures::fixture_records;
using fixtures::random_unit_matrix;
using fixtures::row_copy;

namespace {

Corpus corpus_of(EmbeddingMatrix m, std::uint64_t seed = 3) {
    auto n = m.count();
    return build_corpus(std::move(m), fixture_records(n, seed));
}

std::vector<std::uint32_t> positions(const std::vector<SearchHit>& hits) {
    std::vector<std::uint32_t> out;
    for (const auto& h : hits) out.push_back(h.vector_position);
    return out;
}

void expect_same_hits(const std::vector<SearchHit>& a, const std::vector<SearchHit>& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].vector_position, b[i].vector_position) << "rank " << i;
        EXPECT_EQ(a[i].observation_id, b[i].observation_id) << "rank " << i;
        EXPECT_EQ(std::bit_cast<std::uint32_t>(a[i].score), std::bit_cast<std::uint32_t>(b[i].score))
            << "rank " << i;
    }
}

// Resident kB of every mapping of `path`, read from the kernel's page walk.
std::size_t mapped_rss_kb(const std::string& path) {
    std::ifstream in("/proc/self/smaps");
    std::string line;
    bool inside = false;
    std::size_t total = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && std::isxdigit(static_cast<unsigned char>(line[0])) &&
            line.find('-') < line.find(' '))
            inside = line.size() >= path.size() && line.compare(line.size() - path.size(), path.size(), path) == 0;
        else if (inside && line.rfind("Rss:", 0) == 0)
            total += std::stoul(line.substr(4));
    }
    return total;
}

} // namespace

TEST(BuildIvf, AxisVectorsLandInOwnLists) {
    std::vector<float> v = {1, 0, 0, 1};
    auto corpus = corpus_of(EmbeddingMatrix(2, 2, v));
    Centroids c{2, 2, {1, 0, 0, 1}};
    auto index = build_ivf(corpus, c, Quantization::none);
    EXPECT_EQ(index.list_size(0), 1u);
    EXPECT_EQ(index.list_size(1), 1u);
    EXPECT_EQ(index.stored_position(0, 0), 0u);
    EXPECT_EQ(index.stored_position(1, 0), 1u);
}

TEST(BuildIvf, ListsMatchNearestCentroidOracle) {
    auto x = random_unit_matrix(1000, 16, 21);
    auto c = train_kmeans(x, 16, 5, 20);
    auto corpus = corpus_of(std::move(x));
    auto index = build_ivf(corpus, c, Quantization::none);

    std::size_t sum = 0;
    for (std::size_t j = 0; j < 16; ++j) sum += index.list_size(j);
    EXPECT_EQ(sum, 1000u);

    for (std::size_t j = 0; j < 16; ++j) {
        for (std::size_t e = 0; e < index.list_size(j); ++e) {
            auto pos = index.stored_position(j, e);
            // Oracle: argmax of double-precision inner products.
            std::vector<double> s(16);
            for (std::size_t l = 0; l < 16; ++l) {
                double t = 0;
                for (std::size_t d = 0; d < 16; ++d)
                    t += double(corpus.embeddings().row(pos)[d]) * c.row(l)[d];
                s[l] = t;
            }
            auto best = std::max_element(s.begin(), s.end()) - s.begin();
            if (std::size_t(best) != j) {
                EXPECT_NEAR(s[best], s[j], 1e-6) << "position " << pos;
            }
        }
    }
}

TEST(BuildIvf, PartitionCoversEveryPositionOnce) {
    auto x = random_unit_matrix(3000, 8, 2);
    auto c = train_kmeans(sample_rows(x, 500, 1), 40, 1, 10);
    auto corpus = corpus_of(std::move(x));
    for (auto q : {Quantization::none, Quantization::int8}) {
        auto index = build_ivf(corpus, c, q);
        std::vector<int> seen(3000, 0);
        for (std::size_t j = 0; j < index.nlist(); ++j)
            for (std::size_t e = 0; e < index.list_size(j); ++e) ++seen[index.stored_position(j, e)];
        EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int n) { return n == 1; }));
        EXPECT_EQ(index.total_vectors(), 3000u);
    }
}

TEST(BuildIvf, Int8ReconstructionError) {
    auto x = random_unit_matrix(2000, 32, 8);
    auto c = train_kmeans(x, 20, 2, 10);
    auto corpus = corpus_of(std::move(x));
    auto index = build_ivf(corpus, c, Quantization::int8);
    EXPECT_EQ(index.entry_stride(), 4u + 32u);
    for (std::size_t j = 0; j < index.nlist(); ++j) {
        for (std::size_t e = 0; e < index.list_size(j); ++e) {
            auto pos = index.stored_position(j, e);
            auto got = index.stored_vector(j, e);
            for (std::size_t d = 0; d < 32; ++d)
                ASSERT_LT(std::abs(got[d] - corpus.embeddings().row(pos)[d]), 1e-2f);
        }
    }
}

TEST(BuildIvf, ByteIdenticalAcrossBuilds) {
    auto x = random_unit_matrix(1500, 12, 4);
    auto c1 = train_kmeans(x, 25, 9, 15);
    auto c2 = train_kmeans(x, 25, 9, 15);
    auto corpus = corpus_of(std::move(x));
    for (auto q : {Quantization::none, Quantization::int8}) {
        auto a = build_ivf(corpus, c1, q);
        auto b = build_ivf(corpus, c2, q);
        ASSERT_EQ(a.image().size(), b.image().size());
        EXPECT_EQ(std::memcmp(a.image().data(), b.image().data(), a.image().size()), 0);
    }
}

TEST(IndexFile, SaveOpenRoundTripGivesIdenticalHits) {
    fixtures::TempDir dir;
    auto x = random_unit_matrix(4000, 24, 13);
    auto c = train_kmeans(x, 60, 3, 10);
    auto corpus = corpus_of(std::move(x));
    auto queries = random_unit_matrix(10, 24, 99);
    for (auto q : {Quantization::none, Quantization::int8}) {
        auto built = build_ivf(corpus, c, q);
        save_index(built, dir.file("i.inqi"));
        auto opened = open_index(dir.file("i.inqi"));
        EXPECT_TRUE(opened.is_mapped());
        EXPECT_FALSE(built.is_mapped());
        EXPECT_EQ(opened.quantization(), q);
        for (std::size_t i = 0; i < 10; ++i) {
            auto qv = row_copy(queries, i);
            expect_same_hits(built.search(qv, 10, 8, corpus.ids()), opened.search(qv, 10, 8, corpus.ids()));
        }
    }
}

TEST(IndexFile, ListPayloadsAreAligned) {
    auto x = random_unit_matrix(500, 10, 1);
    auto c = train_kmeans(x, 7, 1, 5);
    auto corpus = corpus_of(std::move(x));
    auto index = build_ivf(corpus, c, Quantization::none);
    auto img = index.image();
    ASSERT_GE(img.size(), index_header_size);
    EXPECT_EQ(std::memcmp(img.data(), "INQI", 4), 0);
    std::size_t dir_at = index_header_size + 7 * 10 * sizeof(float);
    for (std::size_t j = 0; j < 7; ++j) {
        std::uint64_t offset;
        std::memcpy(&offset, img.data() + dir_at + j * 16, sizeof offset);
        EXPECT_EQ(offset % list_alignment, 0u);
    }
}

TEST(IndexFile, RejectsBadMagicAndTruncation) {
    fixtures::TempDir dir;
    auto x = random_unit_matrix(300, 8, 1);
    auto c = train_kmeans(x, 5, 1, 5);
    auto corpus = corpus_of(std::move(x));
    auto index = build_ivf(corpus, c, Quantization::none);
    std::string bytes(reinterpret_cast<const char*>(index.image().data()), index.image().size());

    auto expect_code = [&](const std::string& content, errc code) {
        detail::write_file(dir.file("bad.inqi"), content);
        try {
            open_index(dir.file("bad.inqi"));
            ADD_FAILURE() << "expected " << to_string(code);
        } catch (const error& e) {
            EXPECT_EQ(e.code(), code) << e.what();
        }
    };
    auto magic = bytes;
    magic[0] = 'X';
    expect_code(magic, errc::format);
    expect_code(bytes.substr(0, bytes.size() - 40), errc::corruption);
    expect_code(bytes.substr(0, index_header_size + 8), errc::corruption);
}

TEST(IndexFile, ResidencyBudgetCapsResidentPages) {
    fixtures::TempDir dir;
    const std::size_t dim = 256;
    auto x = random_unit_matrix(32000, dim, 31);
    auto c = train_kmeans(sample_rows(x, 2048, 1), 32, 1, 8);
    auto corpus = corpus_of(std::move(x));
    const auto path = std::filesystem::canonical(dir.path()).string() + "/big.inqi";
    save_index(build_ivf(corpus, c, Quantization::none), path);
    const std::size_t file_bytes = std::filesystem::file_size(path);
    const std::size_t budget = 4 << 20;
    ASSERT_GT(file_bytes, 4 * budget);

    auto index = open_index(path);
    index.set_residency_budget(budget);
    std::size_t max_list = 0;
    for (std::size_t j = 0; j < index.nlist(); ++j)
        max_list = std::max(max_list, index.list_size(j) * index.entry_stride());

    auto queries = random_unit_matrix(5, dim, 77);
    std::size_t peak = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        auto q = row_copy(queries, i);
        auto got = index.search(q, 10, index.nlist(), corpus.ids());
        peak = std::max(peak, mapped_rss_kb(path) * 1024);
        expect_same_hits(got, brute_force_search(corpus, q, 10));
    }
    EXPECT_LE(peak, budget + max_list + 2 * residency_granularity) << "file " << file_bytes << " bytes";

    // Without a budget a full scan leaves the whole list region resident.
    index.set_residency_budget(0);
    index.search(row_copy(queries, 0), 10, index.nlist(), corpus.ids());
    EXPECT_GT(mapped_rss_kb(path) * 1024, file_bytes / 2);
}

TEST(IvfSearch, SelfQueryRanksFirst) {
    auto x = random_unit_matrix(2000, 32, 6);
    auto c = train_kmeans(x, 40, 1, 10);
    auto corpus = corpus_of(std::move(x));
    auto index = build_ivf(corpus, c, Quantization::none);
    for (std::size_t i = 0; i < 2000; i += 97) {
        auto q = row_copy(corpus.embeddings(), i);
        auto hits = index.search(q, 5, 1, corpus.ids());
        ASSERT_FALSE(hits.empty());
        EXPECT_EQ(hits[0].vector_position, i);
        EXPECT_NEAR(hits[0].score, 1.0f, 1e-5);
    }
}

TEST(IvfSearch, FullProbeEqualsBruteForce) {
    auto x = random_unit_matrix(10000, 32, 44);
    auto c = train_kmeans(sample_rows(x, 6400, 2), 100, 2, 10);
    auto corpus = corpus_of(std::move(x));
    auto index = build_ivf(corpus, c, Quantization::none);
    auto queries = random_unit_matrix(20, 32, 45);
    for (std::size_t i = 0; i < 20; ++i) {
        auto q = row_copy(queries, i);
        for (std::size_t k : {1u, 10u, 100u})
            expect_same_hits(index.search(q, k, 100, corpus.ids()), brute_force_search(corpus, q, k));
    }
}

TEST(IvfSearch, KLargerThanCorpusReturnsEverything) {
    auto x = random_unit_matrix(30, 4, 1);
    auto c = train_kmeans(x, 3, 1, 5);
    auto corpus = corpus_of(std::move(x));
    auto index = build_ivf(corpus, c, Quantization::none);
    auto q = row_copy(random_unit_matrix(1, 4, 2), 0);
    auto hits = index.search(q, 100, 3, corpus.ids());
    EXPECT_EQ(hits.size(), 30u);
    for (std::size_t i = 1; i < hits.size(); ++i) EXPECT_FALSE(ranks_before(hits[i], hits[i - 1]));
}

TEST(IvfSearch, RecallIsMonotoneInNprobe) {
    auto x = fixtures::clustered_matrix(5000, 16, 30, 0.4f, 3);
    auto c = train_kmeans(x, 50, 1, 10);
    auto corpus = corpus_of(std::move(x));
    auto index = build_ivf(corpus, c, Quantization::none);
    auto queries = random_unit_matrix(15, 16, 9);
    for (std::size_t i = 0; i < 15; ++i) {
        auto q = row_copy(queries, i);
        auto truth = positions(brute_force_search(corpus, q, 10));
        std::set<std::uint32_t> truth_set(truth.begin(), truth.end());
        std::size_t prev = 0;
        for (std::size_t nprobe = 1; nprobe <= 50; ++nprobe) {
            std::size_t found = 0;
            for (auto p : positions(index.search(q, 10, nprobe, corpus.ids()))) found += truth_set.count(p);
            EXPECT_GE(found, prev) << "nprobe " << nprobe;
            prev = found;
        }
        EXPECT_EQ(prev, 10u);
    }
}

TEST(IvfSearch, ScoresBoundedForBothQuantizations) {
    auto x = random_unit_matrix(3000, 16, 12);
    auto c = train_kmeans(x, 30, 1, 10);
    auto corpus = corpus_of(std::move(x));
    auto queries = random_unit_matrix(10, 16, 13);
    for (auto qz : {Quantization::none, Quantization::int8}) {
        auto index = build_ivf(corpus, c, qz);
        for (std::size_t i = 0; i < 10; ++i) {
            auto q = row_copy(queries, i);
            for (const auto& h : index.search(q, 3000, 30, corpus.ids())) {
                EXPECT_GE(h.score, -1.0f - 1e-5f);
                EXPECT_LE(h.score, 1.0f + 1e-5f);
            }
        }
    }
}

TEST(IvfSearch, RejectsBadQueries) {
    auto x = random_unit_matrix(100, 4, 1);
    auto c = train_kmeans(x, 4, 1, 5);
    auto corpus = corpus_of(std::move(x));
    auto index = build_ivf(corpus, c, Quantization::none);
    auto code_of = [&](auto&& fn) {
        try {
            fn();
        } catch (const error& e) {
            return e.code();
        }
        return errc::consistency;
    };
    std::vector<float> unit = {1, 0, 0, 0};
    std::vector<float> shortq = {1, 0, 0};
    std::vector<float> longq = {2, 0, 0, 0};
    EXPECT_EQ(code_of([&] { index.search(shortq, 1, 1, corpus.ids()); }), errc::shape);
    EXPECT_EQ(code_of([&] { index.search(longq, 1, 1, corpus.ids()); }), errc::normalization);
    EXPECT_EQ(code_of([&] { index.search(unit, 0, 1, corpus.ids()); }), errc::domain);
    EXPECT_EQ(code_of([&] { index.search(unit, 1, 0, corpus.ids()); }), errc::domain);
    EXPECT_EQ(code_of([&] { index.search(unit, 1, 5, corpus.ids()); }), errc::domain);
}

TEST(BruteForce, OrthonormalExample) {
    std::vector<float> v = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    auto corpus = corpus_of(EmbeddingMatrix(3, 3, v));
    std::vector<float> q = {0, 1, 0};
    auto hits = brute_force_search(corpus, q, 3);
    ASSERT_EQ(hits.size(), 3u);
    EXPECT_EQ(hits[0].vector_position, 1u);
    EXPECT_EQ(hits[0].score, 1.0f);
    EXPECT_EQ(hits[1].vector_position, 0u);
    EXPECT_EQ(hits[1].score, 0.0f);
    EXPECT_EQ(hits[2].vector_position, 2u);
    EXPECT_LT(hits[1].observation_id, hits[2].observation_id);
}

TEST(BruteForce, EmptyCorpus) {
    auto corpus = build_corpus(EmbeddingMatrix(0, 3, {}), {});
    std::vector<float> q = {1, 0, 0};
    EXPECT_TRUE(brute_force_search(corpus, q, 5).empty());
}

TEST(BruteForce, MatchesQuadraticScan) {
    auto corpus = corpus_of(random_unit_matrix(1000, 20, 71));
    auto queries = random_unit_matrix(25, 20, 72);
    for (std::size_t i = 0; i < 25; ++i) {
        auto q = row_copy(queries, i);
        // Oracle: every score in double, full sort by (score desc, id asc).
        std::vector<std::pair<double, std::uint64_t>> all;
        for (std::size_t p = 0; p < 1000; ++p) {
            double s = 0;
            for (std::size_t d = 0; d < 20; ++d) s += double(corpus.embeddings().row(p)[d]) * q[d];
            all.emplace_back(s, corpus.ids()[p]);
        }
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
            return a.first > b.first || (a.first == b.first && a.second < b.second);
        });
        auto hits = brute_force_search(corpus, q, 50);
        ASSERT_EQ(hits.size(), 50u);
        for (std::size_t r = 0; r < 50; ++r) {
            EXPECT_NEAR(hits[r].score, all[r].first, 1e-6);
            if (hits[r].observation_id != all[r].second) {
                EXPECT_NEAR(all[r].first, all[r + 1].first, 1e-6) << "rank " << r;
            }
        }
    }
}
