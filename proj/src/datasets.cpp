#include "cstvae/datasets.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cstvae/errors.hpp"
#include "cstvae/rng.hpp"
#include "cstvae/serialize.hpp"

namespace cstvae {

namespace fs = std::filesystem;
using nlohmann::json;

void LabeledImageSet::gather(const std::vector<i64>& idx, std::vector<double>& out) const {
    const i64 px = pixels();
    out.resize(idx.size() * static_cast<std::size_t>(px));
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const i64 i = idx[r];
        if (i < 0 || i >= n) throw ContractError("gather: index out of range");
        const float* src = images.data() + i * px;
        double* dst = out.data() + r * static_cast<std::size_t>(px);
        for (i64 j = 0; j < px; ++j) dst[j] = static_cast<double>(src[j]);
    }
}

namespace {

std::uint32_t read_be32(std::istream& is, std::size_t& offset, const char* what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError(std::string("IDX: truncated while reading ") + what, offset);
    offset += 4;
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

}  // namespace

LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot open IDX image file: " + images_path);
    std::size_t offset = 0;
    const std::uint32_t img_magic = read_be32(img, offset, "image magic");
    if (img_magic != 0x00000803u) {
        throw FormatError("IDX: bad image magic 0x" + crc32_hex(img_magic) + " in " + images_path, 0);
    }
    const std::uint32_t n = read_be32(img, offset, "image count");
    const std::uint32_t h = read_be32(img, offset, "image rows");
    const std::uint32_t w = read_be32(img, offset, "image cols");
    if (n == 0 || h == 0 || w == 0) throw FormatError("IDX: zero dimension in header", 4);

    LabeledImageSet out;
    out.n = n;
    out.h = h;
    out.w = w;
    const std::size_t n_px = std::size_t(n) * h * w;
    std::vector<unsigned char> bytes(n_px);
    img.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n_px));
    if (static_cast<std::size_t>(img.gcount()) != n_px) {
        throw FormatError("IDX: image payload truncated", offset + static_cast<std::size_t>(img.gcount()));
    }
    out.images.resize(n_px);
    for (std::size_t i = 0; i < n_px; ++i) out.images[i] = static_cast<float>(bytes[i]) / 255.0f;

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot open IDX label file: " + labels_path);
    std::size_t loffset = 0;
    const std::uint32_t lab_magic = read_be32(lab, loffset, "label magic");
    if (lab_magic != 0x00000801u) {
        throw FormatError("IDX: bad label magic in " + labels_path, 0);
    }
    const std::uint32_t ln = read_be32(lab, loffset, "label count");
    if (ln != n) {
        throw FormatError("IDX: " + std::to_string(ln) + " labels for " + std::to_string(n) + " images", 4);
    }
    std::vector<unsigned char> lbytes(ln);
    lab.read(reinterpret_cast<char*>(lbytes.data()), static_cast<std::streamsize>(ln));
    if (static_cast<std::size_t>(lab.gcount()) != ln) {
        throw FormatError("IDX: label payload truncated", loffset + static_cast<std::size_t>(lab.gcount()));
    }
    out.labels.assign(lbytes.begin(), lbytes.end());
    return out;
}

LabeledImageSet binarize(const LabeledImageSet& s, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ContractError("binarize: threshold must be in (0,1)");
    }
    LabeledImageSet out = s;
    for (float& v : out.images) v = v > threshold ? 1.0f : 0.0f;
    for (float& v : out.layers) v = v > threshold ? 1.0f : 0.0f;
    return out;
}

LabeledImageSet translate_set(const LabeledImageSet& s, i64 canvas_h, i64 canvas_w, std::uint64_t seed) {
    if (canvas_h < s.h || canvas_w < s.w) {
        throw DimensionError("translate_set: canvas " + std::to_string(canvas_h) + "x" +
                             std::to_string(canvas_w) + " smaller than source " + std::to_string(s.h) +
                             "x" + std::to_string(s.w));
    }
    LabeledImageSet out;
    out.n = s.n;
    out.h = canvas_h;
    out.w = canvas_w;
    out.labels = s.labels;
    out.labels_per = s.labels_per;
    out.images.assign(static_cast<std::size_t>(s.n * canvas_h * canvas_w), 0.0f);
    const i64 max_dy = canvas_h - s.h;
    const i64 max_dx = canvas_w - s.w;
    for (i64 i = 0; i < s.n; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const i64 dy = max_dy > 0 ? rng.uniform_int(max_dy + 1) : 0;
        const i64 dx = max_dx > 0 ? rng.uniform_int(max_dx + 1) : 0;
        const float* src = s.images.data() + i * s.pixels();
        float* dst = out.images.data() + i * out.pixels();
        for (i64 r = 0; r < s.h; ++r) {
            for (i64 c = 0; c < s.w; ++c) dst[(r + dy) * canvas_w + (c + dx)] = src[r * s.w + c];
        }
    }
    return out;
}

LabeledImageSet superimpose_set(const LabeledImageSet& s, i64 canvas, i64 count, std::uint64_t seed) {
    if (s.n < 1) throw ContractError("superimpose_set: empty source set");
    if (canvas < s.h || canvas < s.w) {
        throw DimensionError("superimpose_set: canvas smaller than source digits");
    }
    LabeledImageSet out;
    out.n = count;
    out.h = canvas;
    out.w = canvas;
    out.labels_per = 2;
    out.labels.assign(static_cast<std::size_t>(count) * 2, 0);
    out.images.assign(static_cast<std::size_t>(count * canvas * canvas), 0.0f);
    out.layers.assign(static_cast<std::size_t>(count) * 2 * canvas * canvas, 0.0f);

    const i64 px = canvas * canvas;
    const i64 max_dy = canvas - s.h;
    const i64 max_dx = canvas - s.w;
    for (i64 i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        float* composite_px = out.images.data() + i * px;
        float* front_px = out.layers.data() + (i * 2 + 0) * px;
        float* back_px = out.layers.data() + (i * 2 + 1) * px;
        // First draw is the back layer, second the front.
        for (int which = 0; which < 2; ++which) {
            const i64 src_idx = rng.uniform_int(s.n);
            const i64 dy = max_dy > 0 ? rng.uniform_int(max_dy + 1) : 0;
            const i64 dx = max_dx > 0 ? rng.uniform_int(max_dx + 1) : 0;
            float* layer_px = which == 0 ? back_px : front_px;
            const float* src = s.images.data() + src_idx * s.pixels();
            for (i64 r = 0; r < s.h; ++r) {
                for (i64 c = 0; c < s.w; ++c) layer_px[(r + dy) * canvas + (c + dx)] = src[r * s.w + c];
            }
            out.labels[static_cast<std::size_t>(i * 2 + which)] = s.labels[static_cast<std::size_t>(src_idx)];
        }
        // front over back
        for (i64 j = 0; j < px; ++j) {
            composite_px[j] = front_px[j] + (1.0f - front_px[j]) * back_px[j];
        }
    }
    return out;
}

namespace {

void append_set(std::vector<NamedTensor>& blobs, const std::string& prefix, const LabeledImageSet& s) {
    NamedTensor imgs;
    imgs.name = prefix + "_images";
    imgs.shape = {s.n, s.h, s.w};
    imgs.data.assign(s.images.begin(), s.images.end());
    blobs.push_back(std::move(imgs));

    NamedTensor labs;
    labs.name = prefix + "_labels";
    labs.shape = s.labels_per == 1 ? Shape{s.n} : Shape{s.n, s.labels_per};
    labs.data.assign(s.labels.begin(), s.labels.end());
    blobs.push_back(std::move(labs));

    if (s.has_layers()) {
        NamedTensor lay;
        lay.name = prefix + "_layers";
        lay.shape = {s.n, 2, s.h, s.w};
        lay.data.assign(s.layers.begin(), s.layers.end());
        blobs.push_back(std::move(lay));
    }
}

LabeledImageSet extract_set(const std::vector<NamedTensor>& blobs, const std::string& prefix) {
    LabeledImageSet s;
    bool found = false;
    for (const NamedTensor& t : blobs) {
        if (t.name == prefix + "_images") {
            if (t.shape.size() != 3) throw FormatError("dataset: bad image tensor rank", 0);
            s.n = t.shape[0];
            s.h = t.shape[1];
            s.w = t.shape[2];
            s.images.assign(t.data.begin(), t.data.end());
            found = true;
        } else if (t.name == prefix + "_labels") {
            s.labels_per = t.shape.size() == 2 ? static_cast<int>(t.shape[1]) : 1;
            s.labels.resize(t.data.size());
            for (std::size_t i = 0; i < t.data.size(); ++i) {
                s.labels[i] = static_cast<std::int32_t>(t.data[i]);
            }
        } else if (t.name == prefix + "_layers") {
            s.layers.assign(t.data.begin(), t.data.end());
        }
    }
    if (!found) throw FormatError("dataset: missing tensor " + prefix + "_images", 0);
    if (static_cast<i64>(s.labels.size()) != s.n * s.labels_per) {
        throw FormatError("dataset: label count mismatch for " + prefix, 0);
    }
    return s;
}

}  // namespace

void save_dataset(const std::string& dir, const DatasetBundle& bundle) {
    fs::create_directories(dir);
    std::vector<NamedTensor> blobs;
    append_set(blobs, "train", bundle.train);
    append_set(blobs, "test", bundle.test);
    const std::string data_path = (fs::path(dir) / "data.bin").string();
    write_tensor_container(data_path, blobs);

    json manifest = json::parse(bundle.manifest_json);
    manifest["checksums"] = {{"data.bin", crc32_hex(crc32_file(data_path))}};
    write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

DatasetBundle load_dataset(const std::string& dir) {
    DatasetBundle b;
    b.manifest_json = read_text_file((fs::path(dir) / "manifest.json").string());
    auto blobs = read_tensor_container((fs::path(dir) / "data.bin").string());
    b.train = extract_set(blobs, "train");
    b.test = extract_set(blobs, "test");
    return b;
}

std::string dataset_manifest(const std::string& kind, std::uint64_t seed,
                             const LabeledImageSet& train, const LabeledImageSet& test,
                             const std::string& extra_json_fields) {
    json m;
    m["kind"] = kind;
    m["seed"] = seed;
    m["train_count"] = train.n;
    m["test_count"] = test.n;
    m["image_h"] = train.h;
    m["image_w"] = train.w;
    m["labels_per_image"] = train.labels_per;
    m["has_layers"] = train.has_layers();
    if (!extra_json_fields.empty()) {
        json extra = json::parse(extra_json_fields);
        for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    }
    return m.dump(2);
}

}  // namespace cstvae
