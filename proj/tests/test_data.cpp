#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "endol2h/dataset.hpp"

using namespace endol2h;
namespace fs = std::filesystem;

namespace {

struct TempDataset {
    fs::path root;
    TempDataset(const std::vector<std::pair<std::string, int>>& classes, int w = 24, int h = 16) {
        root = fs::temp_directory_path() / ("el2h_data_" + std::to_string(::getpid()));
        fs::remove_all(root);
        for (const auto& [cls, count] : classes) {
            fs::create_directories(root / cls);
            for (int i = 0; i < count; ++i) {
                ImageTensor img(h, w, 3, (i % 10) / 10.0);
                write_png((root / cls / ("img" + std::to_string(i) + ".png")).string(), img);
            }
        }
    }
    ~TempDataset() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("build_manifest counts classes and entries") {
    TempDataset ds({{"a", 10}, {"b", 10}, {"c", 10}, {"d", 10}, {"e", 10}});
    DatasetManifest m = build_manifest(ds.root.string());
    CHECK(m.entries.size() == 50);
    CHECK(m.classes().size() == 5);
}

TEST_CASE("build_manifest filters by resolution") {
    TempDataset ds({{"a", 3}});
    // add one bigger image
    ImageTensor big(32, 48, 3, 0.5);
    write_png((ds.root / "a" / "zbig.png").string(), big);
    DatasetManifest m = build_manifest(ds.root.string(), {}, 48, 32);
    CHECK(m.entries.size() == 1);
    CHECK(m.entries[0].path == "a/zbig.png");
}

TEST_CASE("build_manifest deterministic and serializable") {
    TempDataset ds({{"a", 4}, {"b", 3}});
    DatasetManifest m1 = build_manifest(ds.root.string());
    DatasetManifest m2 = build_manifest(ds.root.string());
    auto f1 = (ds.root / "m1.jsonl").string();
    auto f2 = (ds.root / "m2.jsonl").string();
    save_manifest(m1, f1);
    save_manifest(m2, f2);
    std::ifstream a(f1), b(f2);
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    CHECK(!sa.empty());
}

TEST_CASE("build_manifest empty result gives diagnostics") {
    TempDataset ds({{"a", 2}});
    CHECK_THROWS_WITH_AS(build_manifest(ds.root.string(), {}, 9999, 9999),
                         doctest::Contains("a: 2 scanned, 0 kept"), InputError);
}

TEST_CASE("manifest serialization round trip") {
    TempDataset ds({{"a", 5}, {"b", 5}});
    DatasetManifest m = build_manifest(ds.root.string());
    m = split_manifest(m, 0.6, 0.2, 0.2, 0, 2, 7);
    auto f = (ds.root / "m.jsonl").string();
    save_manifest(m, f);
    DatasetManifest back = load_manifest(f, m.root);
    REQUIRE(back.entries.size() == m.entries.size());
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        CHECK(back.entries[i].path == m.entries[i].path);
        CHECK(back.entries[i].class_label == m.entries[i].class_label);
        CHECK(back.entries[i].split == m.entries[i].split);
    }
}

TEST_CASE("split keeps validation constant across folds") {
    TempDataset ds({{"a", 50}, {"b", 50}});
    DatasetManifest m = build_manifest(ds.root.string());
    std::set<std::string> val0;
    for (const auto& e : split_manifest(m, 0.8, 0.1, 0.1, 0, 5, 99).entries)
        if (e.split == "val") val0.insert(e.path);
    CHECK(val0.size() == 10);  // 100 images, 10% validation
    for (int k = 1; k < 5; ++k) {
        std::set<std::string> valk;
        for (const auto& e : split_manifest(m, 0.8, 0.1, 0.1, k, 5, 99).entries)
            if (e.split == "val") valk.insert(e.path);
        CHECK(valk == val0);
    }
}

TEST_CASE("fold test sets partition the non-validation pool") {
    TempDataset ds({{"a", 25}, {"b", 25}});
    DatasetManifest m = build_manifest(ds.root.string());
    std::set<std::string> pool, covered;
    for (const auto& e : split_manifest(m, 0.7, 0.2, 0.1, 0, 5, 3).entries)
        if (e.split != "val") pool.insert(e.path);
    std::vector<std::set<std::string>> tests(5);
    for (int k = 0; k < 5; ++k)
        for (const auto& e : split_manifest(m, 0.7, 0.2, 0.1, k, 5, 3).entries)
            if (e.split == "test") tests[k].insert(e.path);
    for (int k = 0; k < 5; ++k)
        for (const auto& p : tests[k]) {
            CHECK(pool.count(p) == 1);
            CHECK(covered.count(p) == 0);  // no overlap between folds
            covered.insert(p);
        }
    CHECK(covered == pool);  // union covers the pool
}

TEST_CASE("fold train sets rotate") {
    TempDataset ds({{"a", 30}});
    DatasetManifest m = build_manifest(ds.root.string());
    auto train_of = [&](int k) {
        std::set<std::string> s;
        for (const auto& e : split_manifest(m, 0.8, 0.1, 0.1, k, 5, 1).entries)
            if (e.split == "train") s.insert(e.path);
        return s;
    };
    CHECK(train_of(0) != train_of(1));
}

TEST_CASE("split stratification within one image of global fractions") {
    TempDataset ds({{"a", 40}, {"b", 20}});
    DatasetManifest m = build_manifest(ds.root.string());
    DatasetManifest s = split_manifest(m, 0.8, 0.1, 0.1, 0, 4, 5);
    auto counts = s.counts("val");
    CHECK(std::abs(counts["a"] - 4) <= 1);
    CHECK(std::abs(counts["b"] - 2) <= 1);
}

TEST_CASE("split rejects classes smaller than fold count") {
    TempDataset ds({{"a", 3}});
    DatasetManifest m = build_manifest(ds.root.string());
    CHECK_THROWS_AS(split_manifest(m, 0.8, 0.1, 0.1, 0, 5, 1), InputError);
}

TEST_CASE("split validates fractions and fold index") {
    TempDataset ds({{"a", 10}});
    DatasetManifest m = build_manifest(ds.root.string());
    CHECK_THROWS_AS(split_manifest(m, 0.5, 0.1, 0.1, 0, 2, 1), ConfigError);
    CHECK_THROWS_AS(split_manifest(m, 0.8, 0.1, 0.1, 2, 2, 1), ConfigError);
}

TEST_CASE("load_pair crop arithmetic and determinism") {
    TempDataset ds({{"a", 1}}, /*w=*/64, /*h=*/51);
    DatasetManifest m = build_manifest(ds.root.string());
    // r=12 on 64x51: crop to 60x48, LR 5x4
    PairSample s = load_pair(m, m.entries[0], DegradationConfig::for_scale(12, 0.01, 9));
    CHECK(s.hr.height == 48);
    CHECK(s.hr.width == 60);
    CHECK(s.lr.height == 4);
    CHECK(s.lr.width == 5);
    PairSample s2 = load_pair(m, m.entries[0], DegradationConfig::for_scale(12, 0.01, 9));
    CHECK(s.lr.data == s2.lr.data);

    ManifestEntry bogus{"a/missing.png", "a", ""};
    CHECK_THROWS_WITH_AS(load_pair(m, bogus, DegradationConfig::for_scale(8)),
                         doctest::Contains("missing.png"), IoError);
}
