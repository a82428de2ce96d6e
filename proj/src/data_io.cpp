#include "anticollapse/data_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "anticollapse/error.hpp"
#include "anticollapse/numerics.hpp"

namespace anticollapse {

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

EmbeddingBatch generate_mixture(const MixtureConfig& config) {
    if (config.num_classes < 2) throw Error(ErrorKind::InvalidArgument, "mixture needs at least two classes");
    if (config.dim < 2) throw Error(ErrorKind::InvalidArgument, "mixture needs dim >= 2");
    if (config.samples_per_class < 1) throw Error(ErrorKind::InvalidArgument, "mixture needs samples_per_class >= 1");
    if (!(config.noise_sigma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "noise_sigma must be >= 0");
    if (config.orthonormal_means && config.num_classes > config.dim)
        throw Error(ErrorKind::TooManyClasses, "cannot orthonormalize more class means than dimensions");

    SeededRng rng(config.seed);
    Matrix means(config.num_classes, config.dim);
    for (double& v : means.data()) v = rng.normal();
    if (config.orthonormal_means) {
        // modified Gram-Schmidt
        for (std::size_t i = 0; i < means.rows(); ++i) {
            auto ri = means.row(i);
            for (std::size_t j = 0; j < i; ++j) {
                const auto rj = means.row(j);
                const double proj = dot(ri, rj);
                for (std::size_t c = 0; c < ri.size(); ++c) ri[c] -= proj * rj[c];
            }
            const double n = norm(ri);
            if (n < 1e-10) throw Error(ErrorKind::DegenerateInput, "degenerate draw while orthonormalizing means");
            for (double& v : ri) v /= n;
        }
    } else {
        normalize_rows(means);
    }

    EmbeddingBatch batch;
    batch.features = Matrix(config.num_classes * config.samples_per_class, config.dim);
    batch.labels.reserve(batch.features.rows());
    std::size_t r = 0;
    for (std::size_t c = 0; c < config.num_classes; ++c) {
        for (std::size_t s = 0; s < config.samples_per_class; ++s, ++r) {
            auto row = batch.features.row(r);
            const auto mean = means.row(c);
            std::copy(mean.begin(), mean.end(), row.begin());
            if (config.noise_sigma > 0.0) {
                for (double& v : row) v += config.noise_sigma * rng.normal();
                const double n = norm(row);
                for (double& v : row) v /= n;
            }
            batch.labels.push_back(static_cast<Label>(c));
        }
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    void need(std::size_t count, const char* what) const {
        if (bytes_.size() - pos_ < count) throw Error(ErrorKind::TruncatedFile, std::string("file ends inside ") + what);
    }
    std::uint8_t u8() {
        need(1, "header");
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
        return std::bit_cast<double>(v);
    }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorKind::IoError, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string encode(const Matrix& features, std::span<const Label> labels) {
    if (labels.size() != features.rows()) throw Error(ErrorKind::LengthMismatch, "labels length must equal rows");
    if (features.rows() > UINT32_MAX || features.cols() > UINT32_MAX)
        throw Error(ErrorKind::InvalidArgument, "matrix too large for the file format");
    require_finite(features, "embeddings");
    std::string out(kEmbeddingMagic, 4);
    out.push_back(static_cast<char>(kEmbeddingFormatVersion));
    put_u32(out, static_cast<std::uint32_t>(features.rows()));
    put_u32(out, static_cast<std::uint32_t>(features.cols()));
    for (Label l : labels) put_u32(out, l);
    for (double v : features.data()) put_f64(out, v);
    return out;
}

EmbeddingBatch decode_binary(const std::string& bytes) {
    if (bytes.size() < 4) throw Error(ErrorKind::TruncatedFile, "file shorter than magic");
    if (!std::equal(bytes.begin(), bytes.begin() + 4, kEmbeddingMagic)) throw Error(ErrorKind::BadMagic, "not an ACEM file");
    Reader in(bytes);
    for (int i = 0; i < 4; ++i) in.u8();
    const std::uint8_t version = in.u8();
    if (version != kEmbeddingFormatVersion)
        throw Error(ErrorKind::UnsupportedVersion, "format version " + std::to_string(version));
    const std::uint32_t n = in.u32("header");
    const std::uint32_t d = in.u32("header");
    const std::uint64_t payload = 4ull * n + 8ull * n * d;
    if (in.remaining() < payload) throw Error(ErrorKind::TruncatedFile, "payload shorter than header declares");
    if (in.remaining() > payload) throw Error(ErrorKind::MalformedFile, "trailing bytes after payload");
    EmbeddingBatch batch;
    batch.labels.resize(n);
    for (auto& l : batch.labels) l = in.u32("labels");
    batch.features = Matrix(n, d);
    for (double& v : batch.features.data()) {
        v = in.f64("features");
        if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteValue, "non-finite feature value");
    }
    return batch;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

EmbeddingBatch decode_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::MalformedFile, "empty CSV");
    const auto header = split(trim(line), ',');
    if (header.size() < 2 || trim(header[0]) != "label") throw Error(ErrorKind::MalformedFile, "CSV header must be label,f0,...");
    for (std::size_t j = 1; j < header.size(); ++j)
        if (trim(header[j]) != "f" + std::to_string(j - 1)) throw Error(ErrorKind::MalformedFile, "unexpected CSV column name");
    const std::size_t d = header.size() - 1;

    std::vector<Label> labels;
    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto row = trim(line);
        if (row.empty()) continue;
        const auto cells = split(row, ',');
        if (cells.size() != d + 1)
            throw Error(ErrorKind::MalformedFile, "wrong column count on line " + std::to_string(line_no));
        const auto label_cell = trim(cells[0]);
        Label label = 0;
        auto [lp, lec] = std::from_chars(label_cell.data(), label_cell.data() + label_cell.size(), label);
        if (lec != std::errc() || lp != label_cell.data() + label_cell.size())
            throw Error(ErrorKind::MalformedFile, "bad label on line " + std::to_string(line_no));
        labels.push_back(label);
        for (std::size_t j = 1; j <= d; ++j) {
            const auto cell = trim(cells[j]);
            double v = 0.0;
            auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc() || p != cell.data() + cell.size())
                throw Error(ErrorKind::MalformedFile, "bad number on line " + std::to_string(line_no));
            if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteValue, "non-finite value on line " + std::to_string(line_no));
            values.push_back(v);
        }
    }
    EmbeddingBatch batch;
    batch.features = Matrix(labels.size(), d, std::move(values));
    batch.labels = std::move(labels);
    return batch;
}

bool is_csv(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".csv";
}

void check_norms(EmbeddingBatch& batch, const LoadOptions& options, const std::filesystem::path& path,
                 std::vector<std::string>* warnings) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (std::abs(norm(batch.features.row(i)) - 1.0) > options.norm_tolerance) ++off;
    if (off == 0) return;
    if (!options.renormalize) {
        throw Error(ErrorKind::NotNormalized,
                    std::to_string(off) + " rows of " + path.string() + " are not unit norm (load with renormalize)");
    }
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (norm(batch.features.row(i)) == 0.0) throw Error(ErrorKind::DegenerateInput, "zero row cannot be renormalized");
    normalize_rows(batch.features);
    if (warnings) warnings->push_back("NotNormalized: renormalized " + std::to_string(off) + " rows of " + path.string());
}

}  // namespace

void save_embeddings(const EmbeddingBatch& batch, const std::filesystem::path& path) {
    write_file_atomic(path, encode(batch.features, batch.labels));
}

void save_embeddings_csv(const EmbeddingBatch& batch, const std::filesystem::path& path) {
    if (batch.labels.size() != batch.size()) throw Error(ErrorKind::LengthMismatch, "labels length must equal rows");
    std::string out = "label";
    for (std::size_t j = 0; j < batch.dim(); ++j) out += ",f" + std::to_string(j);
    out += '\n';
    char buf[64];
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out += std::to_string(batch.labels[i]);
        for (double v : batch.features.row(i)) {
            out += ',';
            auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
            out.append(buf, p);
        }
        out += '\n';
    }
    write_file_atomic(path, out);
}

EmbeddingBatch load_embeddings(const std::filesystem::path& path, const LoadOptions& options,
                               std::vector<std::string>* warnings) {
    const std::string bytes = read_file(path);
    EmbeddingBatch batch = is_csv(path) ? decode_csv(bytes) : decode_binary(bytes);
    check_norms(batch, options, path, warnings);
    return batch;
}

void save_proxies(const ProxySet& proxies, const std::filesystem::path& path) {
    validate(proxies, std::numeric_limits<double>::infinity());
    write_file_atomic(path, encode(proxies.proxies, proxies.class_ids));
}

ProxySet load_proxies(const std::filesystem::path& path, const LoadOptions& options,
                      std::vector<std::string>* warnings) {
    EmbeddingBatch raw = load_embeddings(path, options, warnings);
    ProxySet proxies{std::move(raw.features), std::move(raw.labels)};
    validate(proxies, options.renormalize ? kUnitNormTolerance : options.norm_tolerance);
    return proxies;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(std::vector<Label> labels, BatchPlan plan, std::uint64_t seed, bool with_replacement)
    : plan_(plan), with_replacement_(with_replacement), rng_(seed) {
    if (plan.classes_per_batch < 2) throw Error(ErrorKind::InvalidArgument, "a batch needs at least two classes");
    if (plan.samples_per_class < 1) throw Error(ErrorKind::InvalidArgument, "samples_per_class must be >= 1");
    class_rows_ = rows_by_class(labels);
    if (class_rows_.size() < plan.classes_per_batch) {
        throw Error(ErrorKind::InvalidArgument, "plan asks for " + std::to_string(plan.classes_per_batch) +
                                                    " classes per batch but data has " +
                                                    std::to_string(class_rows_.size()));
    }
    if (!with_replacement) {
        const auto classes = distinct_labels(labels);
        for (std::size_t c = 0; c < class_rows_.size(); ++c) {
            if (class_rows_[c].size() < plan.samples_per_class) {
                throw Error(ErrorKind::ClassTooSmall, "class " + std::to_string(classes[c]) + " has " +
                                                          std::to_string(class_rows_[c].size()) + " rows, need " +
                                                          std::to_string(plan.samples_per_class));
            }
        }
    }
    row_queues_ = class_rows_;
    row_cursor_.assign(class_rows_.size(), 0);
    for (auto& q : row_queues_) rng_.shuffle(std::span<std::size_t>(q));
    class_order_.resize(class_rows_.size());
    for (std::size_t c = 0; c < class_order_.size(); ++c) class_order_[c] = c;
    rng_.shuffle(std::span<std::size_t>(class_order_));

    const std::size_t classes = class_rows_.size();
    const std::size_t by_classes = (classes + plan.classes_per_batch - 1) / plan.classes_per_batch;
    const std::size_t by_rows = labels.size() / plan.batch_size();
    batches_per_epoch_ = std::max<std::size_t>({1, by_classes, by_rows});
}

std::vector<std::size_t> BatchSampler::draw_classes() {
    const std::size_t p = plan_.classes_per_batch;
    if (class_order_.size() - class_cursor_ < p) {
        rng_.shuffle(std::span<std::size_t>(class_order_));
        class_cursor_ = 0;
    }
    std::vector<std::size_t> out(class_order_.begin() + static_cast<std::ptrdiff_t>(class_cursor_),
                                 class_order_.begin() + static_cast<std::ptrdiff_t>(class_cursor_ + p));
    class_cursor_ += p;
    return out;
}

void BatchSampler::draw_rows(std::size_t cls, std::vector<std::size_t>& out) {
    const std::size_t k = plan_.samples_per_class;
    const auto& rows = class_rows_[cls];
    if (with_replacement_) {
        for (std::size_t i = 0; i < k; ++i) out.push_back(rows[static_cast<std::size_t>(rng_.uniform_index(rows.size()))]);
        return;
    }
    auto& queue = row_queues_[cls];
    auto& cursor = row_cursor_[cls];
    if (queue.size() - cursor < k) {
        rng_.shuffle(std::span<std::size_t>(queue));
        cursor = 0;
    }
    out.insert(out.end(), queue.begin() + static_cast<std::ptrdiff_t>(cursor),
               queue.begin() + static_cast<std::ptrdiff_t>(cursor + k));
    cursor += k;
}

std::vector<std::vector<std::size_t>> BatchSampler::next_epoch() {
    std::vector<std::vector<std::size_t>> batches(batches_per_epoch_);
    for (auto& batch : batches) {
        batch.reserve(plan_.batch_size());
        for (std::size_t cls : draw_classes()) draw_rows(cls, batch);
    }
    return batches;
}

std::vector<std::vector<std::size_t>> batch_sampler(std::span<const Label> labels, const BatchPlan& plan,
                                                    std::uint64_t seed, std::size_t epochs, bool with_replacement) {
    BatchSampler sampler(std::vector<Label>(labels.begin(), labels.end()), plan, seed, with_replacement);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t e = 0; e < epochs; ++e) {
        auto epoch = sampler.next_epoch();
        out.insert(out.end(), std::make_move_iterator(epoch.begin()), std::make_move_iterator(epoch.end()));
    }
    return out;
}

}  // namespace anticollapse
