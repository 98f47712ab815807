#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sdgzsl/rng.hpp"
#include "sdgzsl/tensor.hpp"

namespace sdgzsl {

// ---------------------------------------------------------------------------
// SDTensor container: "SDT1" magic, u32 entry count, then per entry
// u16 name length + UTF-8 name, u8 dtype (0=f32, 1=f64, 2=i64), u8 rank,
// rank x u64 extents, row-major payload. All integers little-endian.
// ---------------------------------------------------------------------------

enum class SdDtype : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

struct SdEntry {
    SdDtype dtype = SdDtype::f32;
    Shape shape;
    std::vector<float> f32;
    std::vector<double> f64;
    std::vector<std::int64_t> i64;

    std::size_t numel() const { return shape_numel(shape); }

    static SdEntry from_f32(Shape shape, std::vector<float> v);
    static SdEntry from_f64(Shape shape, std::vector<double> v);
    static SdEntry from_i64(Shape shape, std::vector<std::int64_t> v);
};

using SdMap = std::map<std::string, SdEntry>;

void write_sdtensor(std::ostream& os, const SdMap& tensors);
void write_sdtensor(const std::string& path, const SdMap& tensors);
SdMap read_sdtensor(std::istream& is);
SdMap read_sdtensor(const std::string& path);

// ---------------------------------------------------------------------------
// Dataset bundle
// ---------------------------------------------------------------------------

// Features, integer labels, per-class attribute rows and the three split
// index lists. Class ids index rows of `attributes`. All invariants are
// enforced by validate(), which load paths call eagerly.
struct DatasetBundle {
    Tensor<float> features;           // [N x d]
    std::vector<std::int64_t> labels; // [N]
    Tensor<float> attributes;         // [(S+U) x k]

    std::vector<std::int64_t> seen_classes;
    std::vector<std::int64_t> unseen_classes;
    std::vector<std::size_t> train_seen_idx;
    std::vector<std::size_t> test_seen_idx;
    std::vector<std::size_t> test_unseen_idx;

    std::size_t sample_count() const { return labels.size(); }
    std::size_t feature_dim() const { return features.shape()[1]; }
    std::size_t attr_dim() const { return attributes.shape()[1]; }

    // Attribute rows for the given class ids, as a [n x k] tensor.
    Tensor<float> attribute_rows(const std::vector<std::int64_t>& class_ids) const;
    // Feature rows for the given sample indices.
    Tensor<float> feature_rows(const std::vector<std::size_t>& sample_idx) const;
    std::vector<std::int64_t> label_rows(const std::vector<std::size_t>& sample_idx) const;

    void validate() const;
};

// Write bundle + manifest into a directory; returns the manifest path.
std::string save_bundle(const DatasetBundle& bundle, const std::string& dir);
// Load and eagerly validate a bundle from a manifest file.
DatasetBundle load_bundle(const std::string& manifest_path);

// ---------------------------------------------------------------------------
// Synthetic ground-truth-factorized benchmark
// ---------------------------------------------------------------------------

// Per class c: attribute a_c ~ U(0,1)^k. Per sample of class c: semantic
// factor s = M a_c + sem_noise * N(0,I), nuisance n = nuis_scale * N(0,I)
// drawn independently of the class, observation x = tanh(G [s;n]) +
// obs_noise * N(0,I) through a fixed random mixing G. The tanh keeps the
// semantic/nuisance recovery from being a plain regression problem.
struct SyntheticSpec {
    std::size_t seen_classes = 8;
    std::size_t unseen_classes = 2;
    std::size_t attr_dim = 6;        // k
    std::size_t sem_dim = 4;         // p
    std::size_t nuis_dim = 8;        // q: wider than the cVAE latent so the
                                     // generator cannot cover all of it
    std::size_t feature_dim = 32;    // d, must be >= p + q
    std::size_t samples_per_class = 100;
    double sem_noise = 0.1;
    double obs_noise = 0.02;
    double nuis_scale = 1.0;
    double train_fraction = 0.8; // train/test split on seen classes
    std::uint64_t seed = 1;

    void validate() const;
};

struct SyntheticData {
    DatasetBundle bundle;
    Tensor<float> sem_factors;  // [N x p] ground truth, for diagnostics only
    Tensor<float> nuis_factors; // [N x q]
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Write bundle + ground-truth factors + resolved spec JSON into a directory.
std::string save_synthetic(const SyntheticData& data, const SyntheticSpec& spec,
                           const std::string& dir);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
    std::vector<std::size_t> indices;        // source rows in the bundle
    Tensor<float> x;                         // [B x d]
    std::vector<std::int64_t> labels;        // [B]
    Tensor<float> attrs;                     // [B x k]
    Tensor<float> attrs_unique;              // [N_c x k], ascending class id
    std::vector<std::int64_t> labels_unique; // [N_c]
};

// One shuffled pass over the given sample indices. The permutation is drawn
// from the shuffle stream at construction; the final partial batch is kept.
class BatchIterator {
public:
    BatchIterator(const DatasetBundle& bundle, std::vector<std::size_t> indices,
                  std::size_t batch_size, Rng& shuffle_rng);

    std::optional<Batch> next();
    std::size_t batch_count() const;

private:
    const DatasetBundle& bundle_;
    std::vector<std::size_t> order_;
    std::size_t batch_size_;
    std::size_t cursor_ = 0;
};

// Batch assembly without iteration, shared by the iterator and tests.
Batch make_batch(const DatasetBundle& bundle, const std::vector<std::size_t>& sample_idx);

} // namespace sdgzsl
