#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "scanet/checkpoint.hpp"
#include "scanet/model.hpp"

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

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

bool params_bitwise_equal(SCANet& a, SCANet& b) {
    const auto& pa = a.parameters();
    const auto& pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].first != pb[i].first) return false;
        const auto& da = pa[i].second.data();
        const auto& db = pb[i].second.data();
        if (da.size() != db.size()) return false;
        for (std::size_t j = 0; j < da.size(); ++j)
            if (std::bit_cast<std::uint32_t>(da[j]) !=
                std::bit_cast<std::uint32_t>(db[j]))
                return false;
    }
    return true;
}

std::size_t locate(const std::vector<unsigned char>& haystack,
                   const std::string& needle) {
    const auto it = std::search(haystack.begin(), haystack.end(), needle.begin(),
                                needle.end());
    REQUIRE(it != haystack.end());
    return static_cast<std::size_t>(it - haystack.begin());
}

}  // namespace

TEST_CASE("checkpoint round trip restores every parameter bitwise") {
    const fs::path dir = fresh_dir("scanet_ckpt_roundtrip");
    const ModelConfig cfg = ModelConfig::tiny();
    SCANet source(cfg, 42);
    SCANet target(cfg, 99);
    REQUIRE_FALSE(params_bitwise_equal(source, target));

    save_checkpoint(dir / "model.sckp", source.parameters());
    load_checkpoint(dir / "model.sckp", target.parameters());
    CHECK(params_bitwise_equal(source, target));

    // saving the restored copy reproduces the file byte for byte
    save_checkpoint(dir / "again.sckp", target.parameters());
    CHECK(file_bytes(dir / "model.sckp") == file_bytes(dir / "again.sckp"));
}

TEST_CASE("checkpoint rejects a model with a different architecture") {
    const fs::path dir = fresh_dir("scanet_ckpt_arch");
    SCANet tiny(ModelConfig::tiny(), 1);
    save_checkpoint(dir / "tiny.sckp", tiny.parameters());

    ModelConfig wider = ModelConfig::tiny();
    wider.embed_dim = 16;
    SCANet other(wider, 1);
    CHECK_THROWS_AS(load_checkpoint(dir / "tiny.sckp", other.parameters()),
                    FormatError);

    ModelConfig baseline = ModelConfig::tiny();
    baseline.attention_enabled = false;
    SCANet ablated(baseline, 1);
    CHECK_THROWS_AS(load_checkpoint(dir / "tiny.sckp", ablated.parameters()),
                    FormatError);
}

TEST_CASE("malformed checkpoints fail with the right byte offset") {
    const fs::path dir = fresh_dir("scanet_ckpt_malformed");
    SCANet model(ModelConfig::tiny(), 5);
    save_checkpoint(dir / "good.sckp", model.parameters());
    const std::vector<unsigned char> good = file_bytes(dir / "good.sckp");

    auto expect_offset = [&](const std::vector<unsigned char>& bytes,
                             std::size_t offset) {
        write_bytes(dir / "bad.sckp", bytes);
        try {
            load_checkpoint(dir / "bad.sckp", model.parameters());
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset == offset);
        }
    };

    SUBCASE("bad magic") {
        auto bytes = good;
        bytes[1] = 'X';
        expect_offset(bytes, 0);
    }
    SUBCASE("unsupported version") {
        auto bytes = good;
        bytes[4] = 2;
        expect_offset(bytes, 4);
    }
    SUBCASE("wrong record name") {
        auto bytes = good;
        const std::string first = model.parameters().front().first;
        bytes[locate(bytes, first)] ^= 1;
        expect_offset(bytes, 8);  // first record starts right after the header
    }
    SUBCASE("wrong extent") {
        auto bytes = good;
        const std::string first = model.parameters().front().first;
        // name record: u32 len | name | u32 rank | u32 extent0 ...
        const std::size_t extent0 = locate(bytes, first) + first.size() + 4;
        bytes[extent0] += 1;
        expect_offset(bytes, extent0);
    }
    SUBCASE("truncated payload") {
        expect_offset({good.begin(), good.end() - 3}, good.size() - 4);
    }
    SUBCASE("trailing bytes") {
        auto bytes = good;
        bytes.push_back(0);
        expect_offset(bytes, good.size());
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint(dir / "absent.sckp", model.parameters()),
                        IoError);
    }
}

TEST_CASE("model card describes the architecture") {
    const ModelConfig cfg = ModelConfig::paper_scale();
    SCANet model(cfg, 0);
    const std::string card = model_card(cfg, model.parameter_count());
    CHECK(card.find("variant: attention") != std::string::npos);
    CHECK(card.find("26 slices") != std::string::npos);
    CHECK(card.find("14 x 14") != std::string::npos);
    CHECK(card.find("13 branches") != std::string::npos);
    CHECK(card.find("parameters: " + std::to_string(model.parameter_count())) !=
          std::string::npos);

    ModelConfig ablated = cfg;
    ablated.attention_enabled = false;
    CHECK(model_card(ablated, 0).find("conv-baseline") != std::string::npos);
}
