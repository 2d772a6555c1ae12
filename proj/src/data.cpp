#include "scanet/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include <json.hpp>

namespace scanet {

namespace {

constexpr std::size_t kHeaderSize = 16;
constexpr double kTwoPi = 6.283185307179586476925286766559;

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_volume(std::vector<unsigned char>& out, const std::vector<float>& v) {
    for (float f : v) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::vector<float> get_volume(const unsigned char* p, std::size_t count) {
    std::vector<float> v(count);
    for (std::size_t i = 0; i < count; ++i)
        v[i] = std::bit_cast<float>(get_u32(p + 4 * i));
    return v;
}

}  // namespace

Tensor study_tensor(const PatientStudy& study) {
    const std::size_t plane = static_cast<std::size_t>(study.height) * study.width;
    std::vector<float> data;
    data.reserve(2 * study.voxels());
    for (int s = 0; s < study.slices; ++s) {
        const std::size_t off = static_cast<std::size_t>(s) * plane;
        data.insert(data.end(), study.ct.begin() + off, study.ct.begin() + off + plane);
        data.insert(data.end(), study.cta.begin() + off,
                    study.cta.begin() + off + plane);
    }
    return Tensor::from_data({study.slices, 2, study.height, study.width},
                             std::move(data));
}

std::uint64_t study_file_size(int slices, int height, int width) {
    return kHeaderSize + 2ULL * static_cast<std::uint64_t>(slices) * height * width * 4;
}

void save_study(const std::filesystem::path& path, const PatientStudy& study) {
    if (study.slices < 1 || study.height < 1 || study.width < 1)
        throw ArgumentError("save_study: empty volume");
    if (study.slices > 0xffff)
        throw ArgumentError("save_study: slice count exceeds format limit 65535");
    if (study.ct.size() != study.voxels() || study.cta.size() != study.voxels())
        throw ArgumentError("save_study: volume size disagrees with dimensions");
    if (study.label != 0 && study.label != 1)
        throw ArgumentError("save_study: label must be 0 or 1");

    std::vector<unsigned char> bytes;
    bytes.reserve(static_cast<std::size_t>(study_file_size(
        study.slices, study.height, study.width)));
    bytes.insert(bytes.end(), {'S', 'C', 'V', '1'});
    bytes.push_back(1);  // version
    bytes.push_back(static_cast<unsigned char>(study.label));
    put_u16(bytes, static_cast<std::uint16_t>(study.slices));
    put_u32(bytes, static_cast<std::uint32_t>(study.height));
    put_u32(bytes, static_cast<std::uint32_t>(study.width));
    put_volume(bytes, study.ct);
    put_volume(bytes, study.cta);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

PatientStudy load_study(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < kHeaderSize)
        throw FormatError("truncated header in " + path.string(), bytes.size());
    if (std::memcmp(bytes.data(), "SCV1", 4) != 0)
        throw FormatError("bad magic in " + path.string(), 0);
    if (bytes[4] != 1)
        throw FormatError("unsupported version " + std::to_string(bytes[4]), 4);
    if (bytes[5] > 1)
        throw FormatError("label byte must be 0 or 1", 5);

    PatientStudy study;
    study.label = bytes[5];
    study.slices = get_u16(&bytes[6]);
    study.height = static_cast<int>(get_u32(&bytes[8]));
    study.width = static_cast<int>(get_u32(&bytes[12]));
    if (study.slices < 1) throw FormatError("slice count is zero", 6);
    if (study.height < 1) throw FormatError("height is zero", 8);
    if (study.width < 1) throw FormatError("width is zero", 12);

    const std::uint64_t expected =
        study_file_size(study.slices, study.height, study.width);
    if (bytes.size() < expected)
        throw FormatError("truncated payload in " + path.string(), bytes.size());
    if (bytes.size() > expected)
        throw FormatError("trailing bytes in " + path.string(),
                          static_cast<std::size_t>(expected));

    const std::size_t n = study.voxels();
    study.ct = get_volume(&bytes[kHeaderSize], n);
    study.cta = get_volume(&bytes[kHeaderSize + 4 * n], n);
    study.id = path.stem().string();
    return study;
}

std::vector<float> normalize(const std::vector<float>& volume, float low,
                             float high) {
    if (low >= high)
        throw ConfigError("normalize: window low " + std::to_string(low) +
                          " must be below high " + std::to_string(high));
    const float inv = 1.0f / (high - low);
    std::vector<float> out(volume.size());
    for (std::size_t i = 0; i < volume.size(); ++i)
        out[i] = std::clamp((volume[i] - low) * inv, 0.0f, 1.0f);
    return out;
}

void normalize_in_place(PatientStudy& study, float low, float high) {
    study.ct = normalize(study.ct, low, high);
    study.cta = normalize(study.cta, low, high);
}

GeneratorParams GeneratorParams::toy() { return GeneratorParams{}; }

GeneratorParams GeneratorParams::paper_scale() {
    GeneratorParams p;
    p.slices = 26;
    p.height = 224;
    p.width = 224;
    return p;
}

namespace {

// one cosine mode of the smooth background field
struct FieldMode {
    double amp, fx, fy, fz, phase;
};

struct Field {
    double base;
    std::vector<FieldMode> modes;

    double at(double xf, double yf, double zf) const {
        double v = base;
        for (const auto& m : modes)
            v += m.amp * std::cos(kTwoPi * (m.fx * xf + m.fy * yf + m.fz * zf) +
                                  m.phase);
        return v;
    }
};

Field draw_field(Rng& rng, const GeneratorParams& p) {
    Field f;
    f.base = p.base_level + rng.uniform(-p.base_jitter, p.base_jitter);
    for (int m = 0; m < p.field_modes; ++m) {
        FieldMode mode;
        mode.amp = rng.uniform(p.field_amp_lo, p.field_amp_hi);
        mode.fx = rng.uniform_int(3);
        mode.fy = rng.uniform_int(3);
        mode.fz = rng.uniform_int(3);
        if (mode.fx == 0 && mode.fy == 0 && mode.fz == 0) mode.fx = 1;
        mode.phase = rng.uniform(0.0, kTwoPi);
        f.modes.push_back(mode);
    }
    return f;
}

}  // namespace

PatientStudy synthesize_study(int index, std::uint64_t seed,
                              const GeneratorParams& p) {
    if (index < 0) throw ArgumentError("synthesize_study: negative index");
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(index)));

    PatientStudy study;
    study.slices = p.slices;
    study.height = p.height;
    study.width = p.width;
    study.label = index % 2;

    const Field ct_field = draw_field(rng, p);
    const Field cta_field = draw_field(rng, p);

    // lesion center shared by both modalities (co-registered volumes)
    const double cx = (p.region_cx + rng.uniform(-p.center_jitter, p.center_jitter)) *
                      p.width;
    const double cy = (p.region_cy + rng.uniform(-p.center_jitter, p.center_jitter)) *
                      p.height;
    const double cz = (p.region_cz + rng.uniform(-p.center_jitter, p.center_jitter)) *
                      p.slices;
    const double rx = p.region_rx * p.width;
    const double ry = p.region_ry * p.height;
    const double rz = p.region_rz * p.slices;

    const float ct_amp = study.label == 0 ? p.ct_amp_unfavorable : 0.0f;
    const float cta_amp =
        study.label == 0 ? p.cta_amp_unfavorable : p.cta_amp_favorable;

    auto fill = [&](const Field& field, float amp) {
        std::vector<float> vol;
        vol.reserve(study.voxels());
        for (int z = 0; z < p.slices; ++z) {
            const double zf = (z + 0.5) / p.slices;
            for (int y = 0; y < p.height; ++y) {
                const double yf = (y + 0.5) / p.height;
                for (int x = 0; x < p.width; ++x) {
                    const double xf = (x + 0.5) / p.width;
                    double v = field.at(xf, yf, zf) + p.noise_sigma * rng.normal();
                    const double dx = (x + 0.5 - cx) / rx;
                    const double dy = (y + 0.5 - cy) / ry;
                    const double dz = (z + 0.5 - cz) / rz;
                    if (dx * dx + dy * dy + dz * dz <= 1.0) v += amp;
                    vol.push_back(static_cast<float>(v));
                }
            }
        }
        return vol;
    };
    study.ct = fill(ct_field, ct_amp);
    study.cta = fill(cta_field, cta_amp);
    normalize_in_place(study, p.window_low, p.window_high);
    return study;
}

namespace {

std::string index_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", i);
    return buf;
}

nlohmann::json params_json(const GeneratorParams& p) {
    return {{"slices", p.slices},
            {"height", p.height},
            {"width", p.width},
            {"noise_sigma", p.noise_sigma},
            {"base_level", p.base_level},
            {"base_jitter", p.base_jitter},
            {"field_modes", p.field_modes},
            {"field_amp_lo", p.field_amp_lo},
            {"field_amp_hi", p.field_amp_hi},
            {"region_cx", p.region_cx},
            {"region_cy", p.region_cy},
            {"region_cz", p.region_cz},
            {"region_rx", p.region_rx},
            {"region_ry", p.region_ry},
            {"region_rz", p.region_rz},
            {"center_jitter", p.center_jitter},
            {"ct_amp_unfavorable", p.ct_amp_unfavorable},
            {"cta_amp_unfavorable", p.cta_amp_unfavorable},
            {"cta_amp_favorable", p.cta_amp_favorable},
            {"window_low", p.window_low},
            {"window_high", p.window_high}};
}

GeneratorParams params_from_json(const nlohmann::json& j) {
    GeneratorParams p;
    p.slices = j.at("slices").get<int>();
    p.height = j.at("height").get<int>();
    p.width = j.at("width").get<int>();
    p.noise_sigma = j.at("noise_sigma").get<float>();
    p.base_level = j.at("base_level").get<float>();
    p.base_jitter = j.at("base_jitter").get<float>();
    p.field_modes = j.at("field_modes").get<int>();
    p.field_amp_lo = j.at("field_amp_lo").get<float>();
    p.field_amp_hi = j.at("field_amp_hi").get<float>();
    p.region_cx = j.at("region_cx").get<float>();
    p.region_cy = j.at("region_cy").get<float>();
    p.region_cz = j.at("region_cz").get<float>();
    p.region_rx = j.at("region_rx").get<float>();
    p.region_ry = j.at("region_ry").get<float>();
    p.region_rz = j.at("region_rz").get<float>();
    p.center_jitter = j.at("center_jitter").get<float>();
    p.ct_amp_unfavorable = j.at("ct_amp_unfavorable").get<float>();
    p.cta_amp_unfavorable = j.at("cta_amp_unfavorable").get<float>();
    p.cta_amp_favorable = j.at("cta_amp_favorable").get<float>();
    p.window_low = j.at("window_low").get<float>();
    p.window_high = j.at("window_high").get<float>();
    return p;
}

}  // namespace

void save_manifest(const std::filesystem::path& path,
                   const CohortManifest& manifest) {
    nlohmann::json studies = nlohmann::json::array();
    for (const auto& e : manifest.studies)
        studies.push_back({{"path", e.path}, {"id", e.id}, {"label", e.label}});
    const nlohmann::json doc = {{"seed", manifest.seed},
                                {"params", params_json(manifest.params)},
                                {"studies", studies}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

CohortManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("manifest parse: " + std::string(e.what()), e.byte);
    }
    CohortManifest m;
    try {
        m.seed = doc.at("seed").get<std::uint64_t>();
        m.params = params_from_json(doc.at("params"));
        for (const auto& s : doc.at("studies")) {
            StudyEntry e;
            e.path = s.at("path").get<std::string>();
            e.id = s.at("id").get<std::string>();
            e.label = s.at("label").get<int>();
            if (e.label != 0 && e.label != 1)
                throw FormatError("manifest label must be 0 or 1", 0);
            m.studies.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest structure: " + std::string(e.what()), 0);
    }
    return m;
}

CohortManifest generate_synthetic_cohort(int n, std::uint64_t seed,
                                         const GeneratorParams& params,
                                         const std::filesystem::path& out_dir) {
    if (n < 2) throw ArgumentError("cohort size must be at least 2, got " +
                                   std::to_string(n));
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    CohortManifest manifest;
    manifest.seed = seed;
    manifest.params = params;
    for (int i = 0; i < n; ++i) {
        PatientStudy study = synthesize_study(i, seed, params);
        study.id = "synth-" + index_name(i);
        const std::string filename = "study_" + index_name(i) + ".scv1";
        save_study(out_dir / filename, study);
        manifest.studies.push_back({filename, study.id, study.label});
    }
    save_manifest(out_dir / "manifest.json", manifest);
    return manifest;
}

std::vector<PatientStudy> load_cohort(const std::filesystem::path& manifest_path) {
    const CohortManifest manifest = load_manifest(manifest_path);
    const std::filesystem::path dir = manifest_path.parent_path();
    std::vector<PatientStudy> studies;
    studies.reserve(manifest.studies.size());
    for (const auto& e : manifest.studies) {
        PatientStudy s = load_study(dir / e.path);
        if (s.label != e.label)
            throw FormatError("label in " + e.path + " disagrees with manifest", 5);
        s.id = e.id;
        studies.push_back(std::move(s));
    }
    return studies;
}

std::vector<std::vector<int>> stratified_kfold(const std::vector<int>& labels,
                                               int k, std::uint64_t seed) {
    if (k < 2) throw ArgumentError("stratified_kfold: k must be at least 2");
    if (labels.empty()) throw ArgumentError("stratified_kfold: no labels");
    std::vector<int> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ArgumentError("stratified_kfold: label must be 0 or 1");
        by_class[labels[i]].push_back(static_cast<int>(i));
    }
    for (int c = 0; c < 2; ++c)
        if (static_cast<int>(by_class[c].size()) < k)
            throw StratificationError(
                "class " + std::to_string(c) + " has " +
                std::to_string(by_class[c].size()) + " members, fewer than k=" +
                std::to_string(k));

    Rng rng(mix_seed(seed, 0xf01d));
    std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
    // continuous round-robin across classes keeps total fold sizes within 1
    int cursor = 0;
    for (int c = 0; c < 2; ++c) {
        rng.shuffle(by_class[c]);
        for (int idx : by_class[c]) {
            folds[static_cast<std::size_t>(cursor)].push_back(idx);
            cursor = (cursor + 1) % k;
        }
    }
    for (auto& fold : folds) std::sort(fold.begin(), fold.end());
    return folds;
}

}  // namespace scanet
