#include "sdgzsl/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sdgzsl/errors.hpp"

namespace sdgzsl {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// SDTensor container
// ---------------------------------------------------------------------------

SdEntry SdEntry::from_f32(Shape shape, std::vector<float> v) {
    SdEntry e;
    e.dtype = SdDtype::f32;
    e.shape = std::move(shape);
    if (v.size() != e.numel()) throw ShapeError("SdEntry: payload does not match shape");
    e.f32 = std::move(v);
    return e;
}

SdEntry SdEntry::from_f64(Shape shape, std::vector<double> v) {
    SdEntry e;
    e.dtype = SdDtype::f64;
    e.shape = std::move(shape);
    if (v.size() != e.numel()) throw ShapeError("SdEntry: payload does not match shape");
    e.f64 = std::move(v);
    return e;
}

SdEntry SdEntry::from_i64(Shape shape, std::vector<std::int64_t> v) {
    SdEntry e;
    e.dtype = SdDtype::i64;
    e.shape = std::move(shape);
    if (v.size() != e.numel()) throw ShapeError("SdEntry: payload does not match shape");
    e.i64 = std::move(v);
    return e;
}

namespace {

class ByteWriter {
public:
    explicit ByteWriter(std::ostream& os) : os_(os) {}

    void bytes(const void* p, std::size_t n) {
        os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        off_ += n;
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u16(std::uint16_t v) { uint_le(v, 2); }
    void u32(std::uint32_t v) { uint_le(v, 4); }
    void u64(std::uint64_t v) { uint_le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void i64(std::int64_t v) { u64(std::bit_cast<std::uint64_t>(v)); }

private:
    void uint_le(std::uint64_t v, int width) {
        unsigned char buf[8];
        for (int i = 0; i < width; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        bytes(buf, static_cast<std::size_t>(width));
    }
    std::ostream& os_;
    std::size_t off_ = 0;
};

class ByteReader {
public:
    explicit ByteReader(std::istream& is) : is_(is) {}

    std::size_t offset() const { return off_; }

    void bytes(void* p, std::size_t n) {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n)
            throw FormatError("SDTensor: truncated at byte offset " + std::to_string(off_));
        off_ += n;
    }
    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint16_t u16() { return static_cast<std::uint16_t>(uint_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint_le(4)); }
    std::uint64_t u64() { return uint_le(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::int64_t i64() { return std::bit_cast<std::int64_t>(u64()); }

private:
    std::uint64_t uint_le(int width) {
        unsigned char buf[8];
        bytes(buf, static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return v;
    }
    std::istream& is_;
    std::size_t off_ = 0;
};

constexpr char kSdMagic[4] = {'S', 'D', 'T', '1'};

} // namespace

void write_sdtensor(std::ostream& os, const SdMap& tensors) {
    ByteWriter w(os);
    w.bytes(kSdMagic, 4);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, e] : tensors) {
        if (name.size() > 0xffff) throw FormatError("SDTensor: entry name too long: " + name);
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u8(static_cast<std::uint8_t>(e.dtype));
        w.u8(static_cast<std::uint8_t>(e.shape.size()));
        for (auto extent : e.shape) w.u64(extent);
        switch (e.dtype) {
            case SdDtype::f32:
                for (float v : e.f32) w.f32(v);
                break;
            case SdDtype::f64:
                for (double v : e.f64) w.f64(v);
                break;
            case SdDtype::i64:
                for (std::int64_t v : e.i64) w.i64(v);
                break;
        }
    }
}

void write_sdtensor(const std::string& path, const SdMap& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("SDTensor: cannot open for writing: " + path);
    write_sdtensor(os, tensors);
    if (!os) throw FormatError("SDTensor: write failed: " + path);
}

SdMap read_sdtensor(std::istream& is) {
    ByteReader r(is);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kSdMagic, 4) != 0)
        throw FormatError("SDTensor: bad magic at byte offset 0");
    const std::uint32_t count = r.u32();
    SdMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        const std::uint8_t dtype_raw = r.u8();
        if (dtype_raw > 2)
            throw FormatError("SDTensor: unknown dtype " + std::to_string(dtype_raw) +
                              " at byte offset " + std::to_string(r.offset() - 1));
        const std::uint8_t rank = r.u8();
        Shape shape(rank);
        for (auto& extent : shape) extent = r.u64();
        SdEntry e;
        e.dtype = static_cast<SdDtype>(dtype_raw);
        e.shape = std::move(shape);
        const std::size_t n = e.numel();
        switch (e.dtype) {
            case SdDtype::f32:
                e.f32.resize(n);
                for (auto& v : e.f32) v = r.f32();
                break;
            case SdDtype::f64:
                e.f64.resize(n);
                for (auto& v : e.f64) v = r.f64();
                break;
            case SdDtype::i64:
                e.i64.resize(n);
                for (auto& v : e.i64) v = r.i64();
                break;
        }
        out.emplace(std::move(name), std::move(e));
    }
    return out;
}

SdMap read_sdtensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("SDTensor: cannot open: " + path);
    return read_sdtensor(is);
}

// ---------------------------------------------------------------------------
// DatasetBundle
// ---------------------------------------------------------------------------

Tensor<float> DatasetBundle::attribute_rows(const std::vector<std::int64_t>& class_ids) const {
    const std::size_t k = attr_dim();
    std::vector<float> v(class_ids.size() * k);
    for (std::size_t i = 0; i < class_ids.size(); ++i) {
        const auto c = class_ids[i];
        if (c < 0 || static_cast<std::size_t>(c) >= attributes.shape()[0])
            throw DataError("attribute_rows: class id " + std::to_string(c) +
                            " has no attribute row");
        std::copy_n(attributes.val().data() + static_cast<std::size_t>(c) * k, k, v.data() + i * k);
    }
    return Tensor<float>::from({class_ids.size(), k}, std::move(v));
}

Tensor<float> DatasetBundle::feature_rows(const std::vector<std::size_t>& sample_idx) const {
    const std::size_t d = feature_dim();
    std::vector<float> v(sample_idx.size() * d);
    for (std::size_t i = 0; i < sample_idx.size(); ++i) {
        if (sample_idx[i] >= sample_count())
            throw DataError("feature_rows: sample index " + std::to_string(sample_idx[i]) +
                            " out of range");
        std::copy_n(features.val().data() + sample_idx[i] * d, d, v.data() + i * d);
    }
    return Tensor<float>::from({sample_idx.size(), d}, std::move(v));
}

std::vector<std::int64_t> DatasetBundle::label_rows(const std::vector<std::size_t>& sample_idx) const {
    std::vector<std::int64_t> out(sample_idx.size());
    for (std::size_t i = 0; i < sample_idx.size(); ++i) {
        if (sample_idx[i] >= sample_count())
            throw DataError("label_rows: sample index out of range");
        out[i] = labels[sample_idx[i]];
    }
    return out;
}

void DatasetBundle::validate() const {
    if (features.shape().size() != 2) throw DataError("bundle: features must be [N x d]");
    if (attributes.shape().size() != 2) throw DataError("bundle: attributes must be [C x k]");
    if (features.shape()[0] != labels.size())
        throw DataError("bundle: feature rows (" + std::to_string(features.shape()[0]) +
                        ") and labels (" + std::to_string(labels.size()) + ") disagree");
    const std::int64_t n_classes = static_cast<std::int64_t>(attributes.shape()[0]);

    std::set<std::int64_t> seen(seen_classes.begin(), seen_classes.end());
    std::set<std::int64_t> unseen(unseen_classes.begin(), unseen_classes.end());
    if (seen.empty() || unseen.empty())
        throw DataError("bundle: seen and unseen class sets must be non-empty");
    for (auto c : seen)
        if (c < 0 || c >= n_classes)
            throw DataError("bundle: seen class " + std::to_string(c) + " has no attribute row");
    for (auto c : unseen) {
        if (c < 0 || c >= n_classes)
            throw DataError("bundle: unseen class " + std::to_string(c) + " has no attribute row");
        if (seen.count(c))
            throw DataError("bundle: class " + std::to_string(c) +
                            " appears in both seen and unseen sets (they must be disjoint)");
    }
    for (auto y : labels)
        if (y < 0 || y >= n_classes)
            throw DataError("bundle: label " + std::to_string(y) + " has no attribute row");

    auto check_split = [&](const std::vector<std::size_t>& idx, const std::set<std::int64_t>& allowed,
                           const char* which) {
        for (auto i : idx) {
            if (i >= labels.size())
                throw DataError(std::string("bundle: ") + which + " index " + std::to_string(i) +
                                " out of range");
            if (!allowed.count(labels[i]))
                throw DataError(std::string("bundle: ") + which + " sample " + std::to_string(i) +
                                " has label " + std::to_string(labels[i]) +
                                " outside the allowed class set");
        }
    };
    check_split(train_seen_idx, seen, "train_seen");
    check_split(test_seen_idx, seen, "test_seen");
    check_split(test_unseen_idx, unseen, "test_unseen");
    if (train_seen_idx.empty()) throw DataError("bundle: train_seen split is empty");
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const char* where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw FormatError(std::string("manifest: unknown key '") + it.key() + "' in " + where);
}

struct TensorRef {
    std::string path, entry;
};

TensorRef parse_ref(const json& j, const char* field) {
    if (!j.is_object()) throw FormatError(std::string("manifest: ") + field + " must be an object");
    reject_unknown_keys(j, {"path", "entry"}, field);
    if (!j.contains("path") || !j.contains("entry"))
        throw FormatError(std::string("manifest: ") + field + " needs 'path' and 'entry'");
    return {j.at("path").get<std::string>(), j.at("entry").get<std::string>()};
}

const SdEntry& lookup(const SdMap& m, const std::string& entry, const std::string& path) {
    auto it = m.find(entry);
    if (it == m.end())
        throw FormatError("manifest: entry '" + entry + "' not found in " + path);
    return it->second;
}

json ref_json(const std::string& path, const std::string& entry) {
    return json{{"path", path}, {"entry", entry}};
}

} // namespace

std::string save_bundle(const DatasetBundle& bundle, const std::string& dir) {
    fs::create_directories(dir);
    const std::string data_path = (fs::path(dir) / "data.sdt").string();

    SdMap m;
    m["features"] = SdEntry::from_f32(bundle.features.shape(), bundle.features.val());
    m["labels"] = SdEntry::from_i64({bundle.labels.size()}, bundle.labels);
    m["attributes"] = SdEntry::from_f32(bundle.attributes.shape(), bundle.attributes.val());
    write_sdtensor(data_path, m);

    json manifest;
    manifest["features"] = ref_json("data.sdt", "features");
    manifest["labels"] = ref_json("data.sdt", "labels");
    manifest["attributes"] = ref_json("data.sdt", "attributes");
    manifest["seen_classes"] = bundle.seen_classes;
    manifest["unseen_classes"] = bundle.unseen_classes;
    manifest["train_seen_idx"] = bundle.train_seen_idx;
    manifest["test_seen_idx"] = bundle.test_seen_idx;
    manifest["test_unseen_idx"] = bundle.test_unseen_idx;

    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ofstream os(manifest_path);
    if (!os) throw FormatError("manifest: cannot open for writing: " + manifest_path);
    os << manifest.dump(2) << "\n";
    return manifest_path;
}

DatasetBundle load_bundle(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw FormatError("manifest: cannot open: " + manifest_path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw FormatError("manifest: invalid JSON in " + manifest_path + ": " + e.what());
    }
    reject_unknown_keys(j,
                        {"features", "labels", "attributes", "seen_classes", "unseen_classes",
                         "train_seen_idx", "test_seen_idx", "test_unseen_idx"},
                        "manifest");
    for (const char* key : {"features", "labels", "attributes", "seen_classes", "unseen_classes",
                            "train_seen_idx", "test_seen_idx", "test_unseen_idx"})
        if (!j.contains(key)) throw FormatError(std::string("manifest: missing key '") + key + "'");

    const fs::path base = fs::path(manifest_path).parent_path();
    auto resolve = [&](const TensorRef& r) { return (base / r.path).string(); };

    // Files referenced by several entries are read once.
    std::map<std::string, SdMap> cache;
    auto load_file = [&](const std::string& path) -> const SdMap& {
        auto it = cache.find(path);
        if (it == cache.end()) it = cache.emplace(path, read_sdtensor(path)).first;
        return it->second;
    };

    DatasetBundle b;
    {
        TensorRef r = parse_ref(j.at("features"), "features");
        const SdEntry& e = lookup(load_file(resolve(r)), r.entry, r.path);
        if (e.dtype != SdDtype::f32 || e.shape.size() != 2)
            throw DataError("bundle: features entry must be a rank-2 f32 tensor");
        b.features = Tensor<float>::from(e.shape, e.f32);
    }
    {
        TensorRef r = parse_ref(j.at("labels"), "labels");
        const SdEntry& e = lookup(load_file(resolve(r)), r.entry, r.path);
        if (e.dtype != SdDtype::i64 || e.shape.size() != 1)
            throw DataError("bundle: labels entry must be a rank-1 i64 tensor");
        b.labels = e.i64;
    }
    {
        TensorRef r = parse_ref(j.at("attributes"), "attributes");
        const SdEntry& e = lookup(load_file(resolve(r)), r.entry, r.path);
        if (e.dtype != SdDtype::f32 || e.shape.size() != 2)
            throw DataError("bundle: attributes entry must be a rank-2 f32 tensor");
        b.attributes = Tensor<float>::from(e.shape, e.f32);
    }
    b.seen_classes = j.at("seen_classes").get<std::vector<std::int64_t>>();
    b.unseen_classes = j.at("unseen_classes").get<std::vector<std::int64_t>>();
    b.train_seen_idx = j.at("train_seen_idx").get<std::vector<std::size_t>>();
    b.test_seen_idx = j.at("test_seen_idx").get<std::vector<std::size_t>>();
    b.test_unseen_idx = j.at("test_unseen_idx").get<std::vector<std::size_t>>();
    b.validate();
    return b;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
    if (seen_classes == 0 || unseen_classes == 0 || attr_dim == 0 || sem_dim == 0 ||
        nuis_dim == 0 || feature_dim == 0 || samples_per_class == 0)
        throw ConfigError("synthetic spec: all sizes must be >= 1");
    if (feature_dim < sem_dim + nuis_dim)
        throw ConfigError("synthetic spec: feature_dim must be >= sem_dim + nuis_dim");
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw ConfigError("synthetic spec: train_fraction must be in (0, 1)");
    if (sem_noise < 0 || obs_noise < 0 || nuis_scale <= 0)
        throw ConfigError("synthetic spec: noise scales must be non-negative (nuis_scale > 0)");
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed, "synth");

    const std::size_t total_classes = spec.seen_classes + spec.unseen_classes;
    const std::size_t n = total_classes * spec.samples_per_class;
    const std::size_t p = spec.sem_dim, q = spec.nuis_dim, d = spec.feature_dim, k = spec.attr_dim;

    // Class attributes.
    std::vector<float> attrs(total_classes * k);
    for (auto& v : attrs) v = static_cast<float>(rng.uniform());

    // Fixed mixing maps. The semantic gain keeps class centers well apart
    // relative to sem_noise; the tanh argument scale keeps the observation
    // mixing clearly nonlinear without saturating.
    std::vector<double> sem_mix(p * k);
    for (auto& v : sem_mix) v = 2.0 * rng.normal() / std::sqrt(static_cast<double>(k));
    const double mix_gain = 1.2 / std::sqrt(static_cast<double>(p + q));
    std::vector<double> obs_mix(d * (p + q));
    for (auto& v : obs_mix) v = rng.normal() * mix_gain;

    std::vector<float> features(n * d);
    std::vector<std::int64_t> labels(n);
    std::vector<float> sem_truth(n * p), nuis_truth(n * q);

    std::size_t row = 0;
    for (std::size_t c = 0; c < total_classes; ++c) {
        // Class-mean semantic factor M a_c.
        std::vector<double> class_sem(p, 0.0);
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < k; ++j)
                class_sem[i] += sem_mix[i * k + j] * attrs[c * k + j];

        for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++row) {
            labels[row] = static_cast<std::int64_t>(c);
            std::vector<double> factors(p + q);
            for (std::size_t i = 0; i < p; ++i) {
                factors[i] = class_sem[i] + spec.sem_noise * rng.normal();
                sem_truth[row * p + i] = static_cast<float>(factors[i]);
            }
            for (std::size_t i = 0; i < q; ++i) {
                factors[p + i] = spec.nuis_scale * rng.normal();
                nuis_truth[row * q + i] = static_cast<float>(factors[p + i]);
            }
            for (std::size_t i = 0; i < d; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < p + q; ++j) acc += obs_mix[i * (p + q) + j] * factors[j];
                features[row * d + i] =
                    static_cast<float>(std::tanh(acc) + spec.obs_noise * rng.normal());
            }
        }
    }

    SyntheticData out;
    out.bundle.features = Tensor<float>::from({n, d}, std::move(features));
    out.bundle.labels = std::move(labels);
    out.bundle.attributes = Tensor<float>::from({total_classes, k}, std::move(attrs));
    out.sem_factors = Tensor<float>::from({n, p}, std::move(sem_truth));
    out.nuis_factors = Tensor<float>::from({n, q}, std::move(nuis_truth));

    for (std::size_t c = 0; c < spec.seen_classes; ++c)
        out.bundle.seen_classes.push_back(static_cast<std::int64_t>(c));
    for (std::size_t c = spec.seen_classes; c < total_classes; ++c)
        out.bundle.unseen_classes.push_back(static_cast<std::int64_t>(c));

    const std::size_t train_per_class =
        static_cast<std::size_t>(std::floor(spec.train_fraction * spec.samples_per_class));
    for (std::size_t c = 0; c < total_classes; ++c) {
        const std::size_t base = c * spec.samples_per_class;
        if (c < spec.seen_classes) {
            for (std::size_t s = 0; s < spec.samples_per_class; ++s)
                (s < train_per_class ? out.bundle.train_seen_idx : out.bundle.test_seen_idx)
                    .push_back(base + s);
        } else {
            for (std::size_t s = 0; s < spec.samples_per_class; ++s)
                out.bundle.test_unseen_idx.push_back(base + s);
        }
    }
    out.bundle.validate();
    return out;
}

std::string save_synthetic(const SyntheticData& data, const SyntheticSpec& spec,
                           const std::string& dir) {
    const std::string manifest_path = save_bundle(data.bundle, dir);

    SdMap factors;
    factors["sem_factors"] = SdEntry::from_f32(data.sem_factors.shape(), data.sem_factors.val());
    factors["nuis_factors"] = SdEntry::from_f32(data.nuis_factors.shape(), data.nuis_factors.val());
    write_sdtensor((fs::path(dir) / "factors.sdt").string(), factors);

    json j;
    j["seen_classes"] = spec.seen_classes;
    j["unseen_classes"] = spec.unseen_classes;
    j["attr_dim"] = spec.attr_dim;
    j["sem_dim"] = spec.sem_dim;
    j["nuis_dim"] = spec.nuis_dim;
    j["feature_dim"] = spec.feature_dim;
    j["samples_per_class"] = spec.samples_per_class;
    j["sem_noise"] = spec.sem_noise;
    j["obs_noise"] = spec.obs_noise;
    j["nuis_scale"] = spec.nuis_scale;
    j["train_fraction"] = spec.train_fraction;
    j["seed"] = spec.seed;
    std::ofstream os((fs::path(dir) / "resolved_spec.json").string());
    os << j.dump(2) << "\n";
    return manifest_path;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

Batch make_batch(const DatasetBundle& bundle, const std::vector<std::size_t>& sample_idx) {
    Batch b;
    b.indices = sample_idx;
    b.x = bundle.feature_rows(sample_idx);
    b.labels = bundle.label_rows(sample_idx);
    b.attrs = bundle.attribute_rows(b.labels);

    std::set<std::int64_t> uniq(b.labels.begin(), b.labels.end());
    b.labels_unique.assign(uniq.begin(), uniq.end());
    b.attrs_unique = bundle.attribute_rows(b.labels_unique);
    return b;
}

BatchIterator::BatchIterator(const DatasetBundle& bundle, std::vector<std::size_t> indices,
                             std::size_t batch_size, Rng& shuffle_rng)
    : bundle_(bundle), order_(std::move(indices)), batch_size_(batch_size) {
    if (batch_size_ == 0) throw ConfigError("batch iterator: batch size must be >= 1");
    if (batch_size_ > order_.size())
        throw ConfigError("batch iterator: batch size " + std::to_string(batch_size_) +
                          " exceeds split size " + std::to_string(order_.size()));
    auto perm = shuffle_rng.permutation(order_.size());
    std::vector<std::size_t> shuffled(order_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) shuffled[i] = order_[perm[i]];
    order_ = std::move(shuffled);
}

std::size_t BatchIterator::batch_count() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchIterator::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
    std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return make_batch(bundle_, idx);
}

} // namespace sdgzsl
