#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "scanet/data.hpp"

using namespace scanet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<unsigned char> file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

PatientStudy sample_study() {
    PatientStudy s;
    s.id = "sample";
    s.slices = 2;
    s.height = 3;
    s.width = 4;
    s.label = 1;
    for (std::size_t i = 0; i < s.voxels(); ++i) {
        s.ct.push_back(static_cast<float>(i) / 24.0f);
        s.cta.push_back(1.0f - static_cast<float>(i) / 24.0f);
    }
    return s;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i]))
            return false;
    return true;
}

// mean CTA intensity over the nominal (unjittered) lesion ellipsoid
double region_mean_cta(const PatientStudy& s, const GeneratorParams& p) {
    const double cx = p.region_cx * p.width, cy = p.region_cy * p.height,
                 cz = p.region_cz * p.slices;
    const double rx = p.region_rx * p.width, ry = p.region_ry * p.height,
                 rz = p.region_rz * p.slices;
    double acc = 0.0;
    long n = 0;
    for (int z = 0; z < s.slices; ++z)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) {
                const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry,
                             dz = (z + 0.5 - cz) / rz;
                if (dx * dx + dy * dy + dz * dz <= 1.0) {
                    acc += s.cta[(static_cast<std::size_t>(z) * s.height + y) *
                                     s.width +
                                 x];
                    ++n;
                }
            }
    REQUIRE(n > 0);
    return acc / static_cast<double>(n);
}

}  // namespace

TEST_CASE("study file round trip") {
    const fs::path dir = fresh_dir("scanet_data_roundtrip");
    const PatientStudy original = sample_study();
    save_study(dir / "a.scv1", original);

    const PatientStudy loaded = load_study(dir / "a.scv1");
    CHECK(loaded.id == "a");
    CHECK(loaded.slices == original.slices);
    CHECK(loaded.height == original.height);
    CHECK(loaded.width == original.width);
    CHECK(loaded.label == original.label);
    CHECK(bitwise_equal(loaded.ct, original.ct));
    CHECK(bitwise_equal(loaded.cta, original.cta));

    CHECK(fs::file_size(dir / "a.scv1") == study_file_size(2, 3, 4));
}

TEST_CASE("file size arithmetic") {
    CHECK(study_file_size(26, 224, 224) == 10436624ULL);
    CHECK(study_file_size(2, 3, 4) == 16 + 2 * 24 * 4);
    CHECK(study_file_size(1, 1, 1) == 24);
}

TEST_CASE("malformed study files") {
    const fs::path dir = fresh_dir("scanet_data_malformed");
    save_study(dir / "good.scv1", sample_study());
    const std::vector<unsigned char> good = file_bytes(dir / "good.scv1");

    auto write_bytes = [&dir](const std::string& name,
                              const std::vector<unsigned char>& bytes) {
        std::ofstream out(dir / name, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        return dir / name;
    };

    SUBCASE("bad magic") {
        auto bytes = good;
        bytes[0] = 'X';
        const fs::path p = write_bytes("magic.scv1", bytes);
        CHECK_THROWS_WITH_AS(load_study(p), doctest::Contains("bad magic"),
                             FormatError);
        try {
            load_study(p);
        } catch (const FormatError& e) {
            CHECK(e.offset == 0);
        }
    }
    SUBCASE("bad version") {
        auto bytes = good;
        bytes[4] = 9;
        const fs::path p = write_bytes("version.scv1", bytes);
        try {
            load_study(p);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset == 4);
        }
    }
    SUBCASE("bad label byte") {
        auto bytes = good;
        bytes[5] = 7;
        const fs::path p = write_bytes("label.scv1", bytes);
        try {
            load_study(p);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset == 5);
        }
    }
    SUBCASE("truncated header") {
        const fs::path p = write_bytes(
            "header.scv1", {good.begin(), good.begin() + 9});
        try {
            load_study(p);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset == 9);
        }
    }
    SUBCASE("truncated payload") {
        const fs::path p =
            write_bytes("payload.scv1", {good.begin(), good.begin() + 100});
        try {
            load_study(p);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset == 100);
        }
    }
    SUBCASE("trailing bytes") {
        auto bytes = good;
        bytes.push_back(0);
        const fs::path p = write_bytes("trailing.scv1", bytes);
        try {
            load_study(p);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset == good.size());
        }
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_study(dir / "absent.scv1"), IoError);
    }
}

TEST_CASE("normalization window") {
    CHECK(normalize({50.0f}, 0.0f, 100.0f)[0] == 0.5f);
    CHECK(normalize({150.0f}, 0.0f, 100.0f)[0] == 1.0f);
    CHECK(normalize({-10.0f}, 0.0f, 100.0f)[0] == 0.0f);

    const std::vector<float> vol{0.0f, 0.25f, 0.5f, 1.0f};
    CHECK(normalize(vol, 0.0f, 1.0f) == vol);

    CHECK_THROWS_AS(normalize(vol, 1.0f, 1.0f), ConfigError);
    CHECK_THROWS_AS(normalize(vol, 2.0f, 1.0f), ConfigError);
}

TEST_CASE("study tensor layout") {
    const PatientStudy s = sample_study();
    Tensor t = study_tensor(s);
    REQUIRE(t.shape() == Shape{2, 2, 3, 4});
    for (int z = 0; z < 2; ++z)
        for (int i = 0; i < 12; ++i) {
            CHECK(t.data()[static_cast<std::size_t>(z) * 24 + i] ==
                  s.ct[static_cast<std::size_t>(z) * 12 + i]);
            CHECK(t.data()[static_cast<std::size_t>(z) * 24 + 12 + i] ==
                  s.cta[static_cast<std::size_t>(z) * 12 + i]);
        }
}

TEST_CASE("cohort generation") {
    GeneratorParams p = GeneratorParams::toy();

    SUBCASE("deterministic files") {
        const fs::path a = fresh_dir("scanet_gen_a");
        const fs::path b = fresh_dir("scanet_gen_b");
        generate_synthetic_cohort(4, 7, p, a);
        generate_synthetic_cohort(4, 7, p, b);
        for (const char* name :
             {"study_0000.scv1", "study_0001.scv1", "study_0002.scv1",
              "study_0003.scv1", "manifest.json"})
            CHECK(file_bytes(a / name) == file_bytes(b / name));
    }
    SUBCASE("labels alternate") {
        const fs::path dir = fresh_dir("scanet_gen_labels");
        const CohortManifest m = generate_synthetic_cohort(10, 3, p, dir);
        REQUIRE(m.studies.size() == 10);
        int ones = 0;
        for (std::size_t i = 0; i < m.studies.size(); ++i) {
            CHECK(m.studies[i].label == static_cast<int>(i % 2));
            ones += m.studies[i].label;
        }
        CHECK(ones == 5);
        std::set<std::string> ids;
        for (const auto& e : m.studies) ids.insert(e.id);
        CHECK(ids.size() == 10);
    }
    SUBCASE("cohort below two studies is rejected") {
        const fs::path dir = fresh_dir("scanet_gen_reject");
        CHECK_THROWS_AS(generate_synthetic_cohort(1, 3, p, dir), ArgumentError);
        CHECK_THROWS_AS(generate_synthetic_cohort(0, 3, p, dir), ArgumentError);
    }
    SUBCASE("values lie in the unit interval") {
        const PatientStudy s = synthesize_study(0, 11, p);
        for (float v : s.ct) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        for (float v : s.cta) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    SUBCASE("manifest round trip and cohort loading") {
        const fs::path dir = fresh_dir("scanet_gen_manifest");
        const CohortManifest written = generate_synthetic_cohort(4, 21, p, dir);
        const CohortManifest read = load_manifest(dir / "manifest.json");
        CHECK(read.seed == written.seed);
        CHECK(read.params.slices == p.slices);
        CHECK(read.params.noise_sigma == p.noise_sigma);
        REQUIRE(read.studies.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(read.studies[i].path == written.studies[i].path);
            CHECK(read.studies[i].id == written.studies[i].id);
            CHECK(read.studies[i].label == written.studies[i].label);
        }

        const std::vector<PatientStudy> cohort = load_cohort(dir / "manifest.json");
        REQUIRE(cohort.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) {
            const PatientStudy direct =
                synthesize_study(static_cast<int>(i), 21, p);
            CHECK(cohort[i].id == written.studies[i].id);
            CHECK(cohort[i].label == direct.label);
            CHECK(bitwise_equal(cohort[i].ct, direct.ct));
            CHECK(bitwise_equal(cohort[i].cta, direct.cta));
        }
    }
}

TEST_CASE("planted signal is learnable but not trivial") {
    const GeneratorParams p = GeneratorParams::toy();
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 128; ++i) {
        const PatientStudy s = synthesize_study(i, 7, p);
        scores.push_back(region_mean_cta(s, p));
        // dense occlusion (label 0) is the bright class in the region, so the
        // oracle classifier ranks for the complement label
        labels.push_back(1 - s.label);
    }
    const double auc = oracle::pairwise_auc(scores, labels);
    CHECK(auc >= 0.9);
    CHECK(auc < 1.0);
}

TEST_CASE("stratified folding") {
    SUBCASE("balanced ten samples over five folds") {
        const std::vector<int> labels{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
        const auto folds = stratified_kfold(labels, 5, 1);
        REQUIRE(folds.size() == 5);
        for (const auto& f : folds) {
            REQUIRE(f.size() == 2);
            CHECK(labels[static_cast<std::size_t>(f[0])] +
                      labels[static_cast<std::size_t>(f[1])] ==
                  1);
        }
    }
    SUBCASE("cohort of 177 splits 36/36/35/35/35") {
        std::vector<int> labels;
        for (int i = 0; i < 177; ++i) labels.push_back(i % 2);  // 89 zeros, 88 ones
        const auto folds = stratified_kfold(labels, 5, 9);
        std::multiset<std::size_t> sizes;
        for (const auto& f : folds) sizes.insert(f.size());
        CHECK(sizes == std::multiset<std::size_t>{35, 35, 35, 36, 36});
        int lo[2] = {177, 177}, hi[2] = {0, 0};
        for (const auto& f : folds) {
            int count[2] = {0, 0};
            for (int idx : f) ++count[labels[static_cast<std::size_t>(idx)]];
            for (int c = 0; c < 2; ++c) {
                lo[c] = std::min(lo[c], count[c]);
                hi[c] = std::max(hi[c], count[c]);
            }
        }
        CHECK(hi[0] - lo[0] <= 1);
        CHECK(hi[1] - lo[1] <= 1);
    }
    SUBCASE("folds partition the indices") {
        std::vector<int> labels;
        for (int i = 0; i < 53; ++i) labels.push_back(i % 3 == 0 ? 1 : 0);
        const auto folds = stratified_kfold(labels, 4, 77);
        std::set<int> seen;
        std::size_t total = 0;
        for (const auto& f : folds) {
            total += f.size();
            for (int idx : f) CHECK(seen.insert(idx).second);
        }
        CHECK(total == labels.size());
        CHECK(seen.size() == labels.size());
        CHECK(*seen.begin() == 0);
        CHECK(*seen.rbegin() == 52);
    }
    SUBCASE("deterministic given seed") {
        std::vector<int> labels;
        for (int i = 0; i < 30; ++i) labels.push_back(i % 2);
        CHECK(stratified_kfold(labels, 3, 5) == stratified_kfold(labels, 3, 5));
        CHECK(stratified_kfold(labels, 3, 5) != stratified_kfold(labels, 3, 6));
    }
    SUBCASE("error contracts") {
        const std::vector<int> labels{0, 1, 0, 1, 0, 1};
        CHECK_THROWS_AS(stratified_kfold(labels, 1, 0), ArgumentError);
        CHECK_THROWS_AS(stratified_kfold({}, 2, 0), ArgumentError);
        CHECK_THROWS_AS(stratified_kfold({0, 1, 2}, 2, 0), ArgumentError);
        CHECK_THROWS_AS(stratified_kfold(labels, 4, 0), StratificationError);
        const std::vector<int> lopsided{0, 0, 0, 0, 0, 1};
        CHECK_THROWS_AS(stratified_kfold(lopsided, 2, 0), StratificationError);
    }
}
