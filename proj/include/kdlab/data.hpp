#pragma once

// Dataset ingestion and subset machinery.
//
// IDX files (MNIST family): big-endian headers, magic 0x00000803 for images
// and 0x00000801 for labels; a ".gz" suffix is decompressed transparently.
// CIFAR-10 binary batches: records of 1 label byte + 3072 channel-major
// pixel bytes. Pixels are scaled to [0, 1].

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <zlib.h>

#include "kdlab/analysis_entropy.hpp"
#include "kdlab/common.hpp"
#include "kdlab/losses.hpp"
#include "kdlab/model.hpp"
#include "kdlab/tensor.hpp"

namespace kdlab {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct LabeledDataset {
    Tensor images;            // [N x c x h x w], values in [0, 1]
    std::vector<int> labels;  // length N, each < class_count
    int class_count = 0;
    Split split = Split::train;

    std::size_t size() const { return labels.size(); }

    std::vector<std::size_t> example_shape() const {
        return {images.extent(1), images.extent(2), images.extent(3)};
    }

    std::size_t example_volume() const {
        return images.extent(1) * images.extent(2) * images.extent(3);
    }

    // Batch tensor [k x c x h x w] for the given example indices.
    Tensor gather(const std::vector<std::size_t>& idx, std::size_t begin, std::size_t count) const {
        const std::size_t vol = example_volume();
        Tensor out({count, images.extent(1), images.extent(2), images.extent(3)});
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t src = idx[begin + i];
            std::memcpy(out.data() + i * vol, images.data() + src * vol, vol * sizeof(float));
        }
        return out;
    }

    std::vector<std::size_t> class_histogram() const {
        std::vector<std::size_t> h(static_cast<std::size_t>(class_count), 0);
        for (int l : labels) ++h[static_cast<std::size_t>(l)];
        return h;
    }

    void validate() const {
        if (images.rank() != 4) throw DataError("dataset images must be [N x c x h x w]");
        if (images.extent(0) != labels.size())
            throw DataError("dataset image count " + std::to_string(images.extent(0)) +
                            " does not match label count " + std::to_string(labels.size()));
        for (int l : labels)
            if (l < 0 || l >= class_count)
                throw DataError("label " + std::to_string(l) + " outside class range [0, " +
                                std::to_string(class_count) + ")");
    }
};

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    if (!std::filesystem::exists(path)) throw DataError("file not found: " + path);
    const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
    if (gz) {
        gzFile f = gzopen(path.c_str(), "rb");
        if (!f) throw DataError("cannot open " + path);
        std::vector<std::uint8_t> out;
        std::uint8_t buf[1 << 16];
        int n;
        while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
        const bool bad = n < 0;
        gzclose(f);
        if (bad) throw DataError("gzip decompression failed for " + path);
        return out;
    }
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                     std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off,
                               const std::string& path) {
    if (off + 4 > b.size()) throw DataError("truncated IDX header in " + path);
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

// Parse an MNIST-style image/label file pair.
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                               Split split = Split::train) {
    const auto ib = detail::read_file_bytes(images_path);
    const auto lb = detail::read_file_bytes(labels_path);

    if (detail::read_be32(ib, 0, images_path) != 0x00000803u)
        throw DataError("bad IDX magic in " + images_path + " (expected 0x00000803)");
    if (detail::read_be32(lb, 0, labels_path) != 0x00000801u)
        throw DataError("bad IDX magic in " + labels_path + " (expected 0x00000801)");

    const std::uint32_t n = detail::read_be32(ib, 4, images_path);
    const std::uint32_t rows = detail::read_be32(ib, 8, images_path);
    const std::uint32_t cols = detail::read_be32(ib, 12, images_path);
    const std::uint32_t nl = detail::read_be32(lb, 4, labels_path);
    if (n != nl)
        throw DataError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                        std::to_string(nl) + " labels");
    const std::size_t need = 16 + std::size_t(n) * rows * cols;
    if (ib.size() < need)
        throw DataError("truncated IDX payload in " + images_path + ": have " +
                        std::to_string(ib.size()) + " bytes, need " + std::to_string(need));
    if (lb.size() < 8 + n) throw DataError("truncated IDX payload in " + labels_path);

    LabeledDataset ds;
    ds.split = split;
    ds.class_count = 10;
    ds.images = Tensor({n, 1, rows, cols});
    for (std::size_t i = 0; i < std::size_t(n) * rows * cols; ++i)
        ds.images[i] = float(ib[16 + i]) / 255.0f;
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = int(lb[8 + i]);
    ds.validate();
    return ds;
}

// Write an IDX pair (used for fixtures and the synthetic corpus).
inline void write_idx(const std::string& images_path, const std::string& labels_path,
                      const LabeledDataset& ds) {
    const std::size_t n = ds.size(), rows = ds.images.extent(2), cols = ds.images.extent(3);
    auto put_be32 = [](std::vector<std::uint8_t>& v, std::uint32_t x) {
        v.push_back(std::uint8_t(x >> 24));
        v.push_back(std::uint8_t(x >> 16));
        v.push_back(std::uint8_t(x >> 8));
        v.push_back(std::uint8_t(x));
    };
    std::vector<std::uint8_t> ib;
    put_be32(ib, 0x00000803u);
    put_be32(ib, std::uint32_t(n));
    put_be32(ib, std::uint32_t(rows));
    put_be32(ib, std::uint32_t(cols));
    for (std::size_t i = 0; i < n * rows * cols; ++i) {
        const float v = std::min(1.0f, std::max(0.0f, ds.images[i]));
        ib.push_back(std::uint8_t(std::lround(v * 255.0f)));
    }
    std::vector<std::uint8_t> lb;
    put_be32(lb, 0x00000801u);
    put_be32(lb, std::uint32_t(n));
    for (std::size_t i = 0; i < n; ++i) lb.push_back(std::uint8_t(ds.labels[i]));

    auto write_bytes = [](const std::string& path, const std::vector<std::uint8_t>& bytes) {
        const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
        if (gz) {
            gzFile f = gzopen(path.c_str(), "wb");
            if (!f) throw DataError("cannot write " + path);
            if (gzwrite(f, bytes.data(), unsigned(bytes.size())) != int(bytes.size())) {
                gzclose(f);
                throw DataError("gzip write failed for " + path);
            }
            gzclose(f);
        } else {
            std::ofstream f(path, std::ios::binary | std::ios::trunc);
            if (!f) throw DataError("cannot write " + path);
            f.write(reinterpret_cast<const char*>(bytes.data()),
                    static_cast<std::streamsize>(bytes.size()));
        }
    };
    write_bytes(images_path, ib);
    write_bytes(labels_path, lb);
}

// CIFAR-10 binary batches from `dir`: data_batch_1..5.bin (train) or
// test_batch.bin (test).
inline LabeledDataset load_cifar10(const std::string& dir, Split split) {
    constexpr std::size_t kRecord = 3073;
    std::vector<std::string> files;
    if (split == Split::train)
        for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    else
        files.push_back(dir + "/test_batch.bin");

    std::vector<std::uint8_t> all;
    for (const auto& f : files) {
        if (!std::filesystem::exists(f)) throw DataError("missing CIFAR-10 batch file: " + f);
        auto b = detail::read_file_bytes(f);
        if (b.empty() || b.size() % kRecord != 0)
            throw DataError("bad CIFAR-10 record size in " + f + ": " + std::to_string(b.size()) +
                            " bytes is not a multiple of 3073");
        all.insert(all.end(), b.begin(), b.end());
    }
    const std::size_t n = all.size() / kRecord;
    LabeledDataset ds;
    ds.split = split;
    ds.class_count = 10;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* rec = all.data() + i * kRecord;
        ds.labels[i] = int(rec[0]);
        for (std::size_t p = 0; p < 3072; ++p) ds.images[i * 3072 + p] = float(rec[1 + p]) / 255.0f;
    }
    ds.validate();
    return ds;
}

// Drop every example of `cls`, preserving order and the label space.
inline LabeledDataset remove_class(const LabeledDataset& ds, int cls) {
    if (ds.size() == 0) throw DataError("remove_class on an empty dataset");
    if (cls < 0 || cls >= ds.class_count)
        throw DataError("class " + std::to_string(cls) + " outside [0, " +
                        std::to_string(ds.class_count) + ")");
    std::vector<std::size_t> keep;
    keep.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.labels[i] != cls) keep.push_back(i);
    if (keep.size() == ds.size())
        throw DataError("class " + std::to_string(cls) + " is absent from the dataset");
    LabeledDataset out;
    out.split = ds.split;
    out.class_count = ds.class_count;
    out.images = ds.gather(keep, 0, keep.size());
    out.labels.reserve(keep.size());
    for (std::size_t i : keep) out.labels.push_back(ds.labels[i]);
    return out;
}

enum class SelectionPolicy { random, entropy_ranked };

inline const char* to_string(SelectionPolicy p) {
    return p == SelectionPolicy::random ? "random" : "entropy_ranked";
}

struct TransferSet {
    std::vector<std::size_t> indices;  // unique positions into the source dataset
    SelectionPolicy policy = SelectionPolicy::random;
    std::size_t per_class = 0;
    double selection_temperature = 9.0;
};

// Teacher logits over selected examples, eval mode, fixed chunking.
inline Tensor batched_logits(const Model& model, const LabeledDataset& ds,
                             const std::vector<std::size_t>& idx, std::size_t chunk = 256) {
    Model eval_model = model;
    eval_model.mode = Mode::eval;
    const std::size_t classes = eval_model.shapes.classes;
    Tensor out({idx.size(), classes});
    for (std::size_t at = 0; at < idx.size(); at += chunk) {
        const std::size_t n = std::min(chunk, idx.size() - at);
        auto fwd = forward(eval_model, ds.gather(idx, at, n));
        std::memcpy(out.data() + at * classes, fwd.logits.data(), n * classes * sizeof(float));
    }
    return out;
}

// Pick n examples per present class. `random` samples uniformly without
// replacement; `entropy_ranked` keeps the top n by teacher soft-label entropy
// at T_sel (descending, index-stable ties). Classes missing from the dataset
// are skipped; classes with fewer than n examples are an error.
inline TransferSet select_transfer_set(const LabeledDataset& ds, std::size_t n_per_class,
                                       SelectionPolicy policy, const Model* teacher, double t_sel,
                                       SeededRng& rng) {
    if (n_per_class == 0) throw ConfigError("transfer set needs n_per_class >= 1");
    if (policy == SelectionPolicy::entropy_ranked && !teacher)
        throw ConfigError("entropy_ranked selection requires a teacher");
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.class_count));
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    TransferSet ts;
    ts.policy = policy;
    ts.per_class = n_per_class;
    ts.selection_temperature = t_sel;
    for (int c = 0; c < ds.class_count; ++c) {
        auto& pool = by_class[static_cast<std::size_t>(c)];
        if (pool.empty()) continue;  // absent by construction (missing-class runs)
        if (pool.size() < n_per_class)
            throw DataError("class " + std::to_string(c) + " has only " +
                            std::to_string(pool.size()) + " examples, need " +
                            std::to_string(n_per_class));
        if (policy == SelectionPolicy::random) {
            for (std::size_t i = 0; i < n_per_class; ++i) {
                const std::size_t j = i + rng.below(pool.size() - i);
                std::swap(pool[i], pool[j]);
                ts.indices.push_back(pool[i]);
            }
        } else {
            const Tensor logits = batched_logits(*teacher, ds, pool);
            const std::size_t classes = logits.extent(1);
            std::vector<std::pair<double, std::size_t>> ranked(pool.size());
            for (std::size_t i = 0; i < pool.size(); ++i) {
                Tensor row({classes});
                std::memcpy(row.data(), logits.data() + i * classes, classes * sizeof(float));
                ranked[i] = {entropy(softmax_t(row, t_sel)), pool[i]};
            }
            std::stable_sort(ranked.begin(), ranked.end(),
                             [](const auto& a, const auto& b) { return a.first > b.first; });
            for (std::size_t i = 0; i < n_per_class; ++i) ts.indices.push_back(ranked[i].second);
        }
    }
    return ts;
}

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // population; clamp to 1 when dividing
};

inline ChannelStats normalize_stats(const LabeledDataset& ds) {
    if (ds.size() == 0) throw DataError("normalize_stats on an empty dataset");
    const std::size_t c = ds.images.extent(1);
    const std::size_t plane = ds.images.extent(2) * ds.images.extent(3);
    ChannelStats st;
    st.mean.resize(c);
    st.stddev.resize(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const float* p = ds.images.data() + (i * c + ch) * plane;
            for (std::size_t k = 0; k < plane; ++k) s += double(p[k]);
        }
        const double n = double(ds.size() * plane);
        const double mean = s / n;
        double sq = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const float* p = ds.images.data() + (i * c + ch) * plane;
            for (std::size_t k = 0; k < plane; ++k) {
                const double d = double(p[k]) - mean;
                sq += d * d;
            }
        }
        st.mean[ch] = mean;
        st.stddev[ch] = std::sqrt(sq / n);
    }
    return st;
}

}  // namespace kdlab
