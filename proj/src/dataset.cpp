#include "scai/dataset.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "scai/json_io.hpp"

namespace scai {

namespace {

struct ByteWriter {
    std::vector<std::uint8_t> buf;
    void f32(float v) {
        std::uint8_t b[4];
        std::memcpy(b, &v, 4);
        buf.insert(buf.end(), b, b + 4);
    }
    void u8(std::uint8_t v) { buf.push_back(v); }
};

struct ByteReader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
    float f32() {
        if (pos + 4 > buf.size()) throw std::runtime_error("dataset payload truncated");
        float v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::uint8_t u8() {
        if (pos >= buf.size()) throw std::runtime_error("dataset payload truncated");
        return buf[pos++];
    }
};

std::vector<std::uint8_t> serialize_split(const std::vector<Sample>& split) {
    ByteWriter w;
    for (const auto& s : split) {
        w.f32(s.torso_len);
        for (std::size_t k = 0; k < s.gt.size(); ++k) {
            w.f32(s.gt[k].x);
            w.f32(s.gt[k].y);
            w.f32(s.base[k].x);
            w.f32(s.base[k].y);
            w.f32(s.attenuation[k]);
            w.u8(s.occluded[k]);
            w.u8(s.gt[k].visible ? 1 : 0);
        }
    }
    return w.buf;
}

std::vector<Sample> deserialize_split(const std::vector<std::uint8_t>& bytes, int samples,
                                      int keypoints) {
    const std::size_t record = 4 + (std::size_t)keypoints * 22;
    if (bytes.size() != record * (std::size_t)samples)
        throw std::runtime_error("dataset payload has wrong size");
    ByteReader r{bytes};
    std::vector<Sample> out((std::size_t)samples);
    for (auto& s : out) {
        s.torso_len = r.f32();
        s.gt.resize(keypoints);
        s.base.resize(keypoints);
        s.attenuation.resize(keypoints);
        s.occluded.resize(keypoints);
        for (int k = 0; k < keypoints; ++k) {
            s.gt[k].x = r.f32();
            s.gt[k].y = r.f32();
            s.base[k].x = r.f32();
            s.base[k].y = r.f32();
            s.attenuation[k] = r.f32();
            s.occluded[k] = r.u8();
            const bool vis = r.u8() != 0;
            s.gt[k].visible = vis;
            s.base[k].visible = vis;
        }
    }
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& p, const void* data, std::size_t size) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    out.write(static_cast<const char*>(data), (std::streamsize)size);
    if (!out) throw std::runtime_error("failed writing " + p.string());
}

constexpr std::uint64_t kSplitSalt[3] = {1, 2, 3};
const char* kSplitName[3] = {"train", "val", "test"};

}  // namespace

void DatasetConfig::validate() const {
    schema.validate();
    if (geom.width < 8 || geom.height < 8)
        throw std::invalid_argument("dataset: heatmap geometry too small");
    if (!(geom.sigma > 0.f)) throw std::invalid_argument("dataset: sigma must be positive");
    train_noise.validate(schema);
    test_noise.validate(schema);
    if (train_size <= 0 || val_size <= 0 || test_size <= 0)
        throw std::invalid_argument("dataset: split sizes must be positive");
}

const std::vector<Sample>& DatasetBundle::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split: " + name);
}

const NoiseConfig& DatasetBundle::noise_for(const std::string& split_name) const {
    if (split_name == "test") return cfg.test_noise;
    if (split_name == "train" || split_name == "val") return cfg.train_noise;
    throw std::invalid_argument("unknown split: " + split_name);
}

DatasetBundle make_dataset(const DatasetConfig& cfg, int threads) {
    cfg.validate();
    DatasetBundle ds;
    ds.cfg = cfg;
    std::vector<Sample>* splits[3] = {&ds.train, &ds.val, &ds.test};
    const int sizes[3] = {cfg.train_size, cfg.val_size, cfg.test_size};
    for (int si = 0; si < 3; ++si) {
        const NoiseConfig& noise = si == 2 ? cfg.test_noise : cfg.train_noise;
        auto& split = *splits[si];
        split.resize((std::size_t)sizes[si]);
        const std::uint64_t split_seed = mix_seed(cfg.seed, kSplitSalt[si]);
        parallel_for(split.size(), threads, [&](std::size_t i) {
            split[i] = make_sample(cfg.schema, cfg.geom, noise, mix_seed(split_seed, i));
        });
    }
    return ds;
}

std::uint64_t split_digest(const std::vector<Sample>& split) {
    const auto bytes = serialize_split(split);
    return fnv1a64(bytes.data(), bytes.size());
}

void write_dataset(const std::string& dir, const DatasetBundle& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    ordered_json manifest;
    manifest["format"] = "scai-lab-dataset";
    manifest["format_version"] = 1;
    manifest["storage"] = "parametric";
    manifest["seed"] = ds.cfg.seed;
    manifest["heatmap"] = geometry_to_json(ds.cfg.geom);
    manifest["schema"] = schema_to_json(ds.cfg.schema);
    manifest["noise"] = {{"train", noise_to_json(ds.cfg.train_noise)},
                         {"test", noise_to_json(ds.cfg.test_noise)}};
    ordered_json splits;
    const std::vector<Sample>* data[3] = {&ds.train, &ds.val, &ds.test};
    for (int si = 0; si < 3; ++si) {
        const auto bytes = serialize_split(*data[si]);
        const std::string file = std::string(kSplitName[si]) + ".bin";
        write_file(fs::path(dir) / file, bytes.data(), bytes.size());
        splits[kSplitName[si]] = {{"file", file},
                                  {"samples", data[si]->size()},
                                  {"digest", hex64(fnv1a64(bytes.data(), bytes.size()))}};
    }
    manifest["splits"] = splits;
    const std::string text = manifest.dump(2) + "\n";
    write_file(fs::path(dir) / "manifest.json", text.data(), text.size());
}

DatasetBundle load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto mbytes = read_file(fs::path(dir) / "manifest.json");
    const auto manifest = ordered_json::parse(mbytes.begin(), mbytes.end());
    if (manifest.value("format", "") != std::string("scai-lab-dataset"))
        throw std::runtime_error("not a dataset manifest: " + dir);
    if (manifest.value("format_version", 0) != 1)
        throw std::runtime_error("unsupported dataset format version");
    if (manifest.value("storage", "") != std::string("parametric"))
        throw std::runtime_error("unsupported dataset storage kind");

    DatasetBundle ds;
    ds.cfg.seed = manifest.at("seed").get<std::uint64_t>();
    ds.cfg.geom = geometry_from_json(manifest.at("heatmap"));
    ds.cfg.schema = schema_from_json(manifest.at("schema"));
    const int groups = (int)ds.cfg.schema.groups.size();
    ds.cfg.train_noise = noise_from_json(manifest.at("noise").at("train"), groups);
    ds.cfg.test_noise = noise_from_json(manifest.at("noise").at("test"), groups);

    std::vector<Sample>* data[3] = {&ds.train, &ds.val, &ds.test};
    int* sizes[3] = {&ds.cfg.train_size, &ds.cfg.val_size, &ds.cfg.test_size};
    for (int si = 0; si < 3; ++si) {
        const auto& entry = manifest.at("splits").at(kSplitName[si]);
        const int n = entry.at("samples").get<int>();
        const auto bytes = read_file(fs::path(dir) / entry.at("file").get<std::string>());
        const std::string digest = hex64(fnv1a64(bytes.data(), bytes.size()));
        if (digest != entry.at("digest").get<std::string>())
            throw std::runtime_error(std::string("dataset digest mismatch in split ") +
                                     kSplitName[si]);
        *data[si] = deserialize_split(bytes, n, ds.cfg.schema.keypoint_count);
        *sizes[si] = n;
    }
    ds.cfg.validate();
    return ds;
}

}  // namespace scai
