#include "scanet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace scanet {

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

// Bounds-checked little-endian reader that tracks the current byte offset.
struct Reader {
    const std::vector<unsigned char>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > bytes.size())
            throw FormatError(std::string("checkpoint ends inside ") + what, pos);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(&bytes[pos]), n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
    std::vector<unsigned char> bytes;
    bytes.insert(bytes.end(), {'S', 'C', 'K', 'P'});
    put_u32(bytes, 1);  // version
    for (const auto& [name, t] : params) {
        put_u32(bytes, static_cast<std::uint32_t>(name.size()));
        bytes.insert(bytes.end(), name.begin(), name.end());
        put_u32(bytes, static_cast<std::uint32_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d)
            put_u32(bytes, static_cast<std::uint32_t>(t.dim(d)));
        for (float v : t.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path,
                     std::vector<std::pair<std::string, Tensor>>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    Reader r{bytes};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), "SCKP", 4) != 0)
        throw FormatError("bad magic in " + path.string(), 0);
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != 1)
        throw FormatError("unsupported version " + std::to_string(version), 4);

    for (auto& [expected_name, t] : params) {
        const std::size_t record_at = r.pos;
        const std::uint32_t name_len = r.u32("a record's name length");
        const std::string name = r.str(name_len, "a record's name");
        if (name != expected_name)
            throw FormatError("record '" + name + "' where parameter '" +
                              expected_name + "' was expected",
                              record_at);
        const std::size_t shape_at = r.pos;
        const std::uint32_t rank = r.u32("a record's rank");
        if (rank != static_cast<std::uint32_t>(t.rank()))
            throw FormatError("rank " + std::to_string(rank) + " for '" + name +
                              "' where " + std::to_string(t.rank()) +
                              " was expected",
                              shape_at);
        for (int d = 0; d < t.rank(); ++d) {
            const std::size_t at = r.pos;
            const std::uint32_t extent = r.u32("a record's extents");
            if (extent != static_cast<std::uint32_t>(t.dim(d)))
                throw FormatError("extent " + std::to_string(extent) + " for '" +
                                  name + "' axis " + std::to_string(d) + " where " +
                                  std::to_string(t.dim(d)) + " was expected",
                                  at);
        }
        for (auto& v : t.data())
            v = std::bit_cast<float>(r.u32("a record's payload"));
    }
    if (r.pos != bytes.size())
        throw FormatError("trailing bytes after the last parameter", r.pos);
}

std::string model_card(const ModelConfig& config, long long parameter_count) {
    std::ostringstream out;
    out << "model: spatial/cross-attention recanalization classifier\n";
    out << "variant: " << (config.attention_enabled ? "attention" : "conv-baseline")
        << "\n";
    out << "input: " << config.num_slices << " slices x " << config.in_channels
        << " channels x " << config.slice_h << " x " << config.slice_w << "\n";
    out << "global conv:";
    for (const auto& c : config.global_conv)
        out << " " << c.out_channels << "(k" << c.kernel << ",s" << c.stride << ")";
    out << "\n";
    out << "token grid: " << config.token_h << " x " << config.token_w
        << ", embed dim " << config.embed_dim << ", heads " << config.num_heads
        << ", transformer layers " << config.sat_layers << "\n";
    out << "neighborhood: " << config.neighborhood << " slices per branch, "
        << config.branches() << " branches\n";
    out << "branch blocks:";
    for (std::size_t i = 0; i < config.branch_blocks.size(); ++i)
        out << " " << config.branch_blocks[i] << "x" << config.branch_channels[i];
    out << " -> embedding " << config.embed_out() << "\n";
    out << "mlp ratio: " << config.mlp_ratio << ", norm groups "
        << config.norm_groups << ", dropout " << config.dropout << "\n";
    out << "classes: " << config.num_classes << "\n";
    out << "parameters: " << parameter_count << "\n";
    return out.str();
}

}  // namespace scanet
