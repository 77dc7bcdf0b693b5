#include "vnd/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vnd/errors.hpp"
#include "vnd/rng.hpp"

namespace vnd {

VecD FeatureMatrix::row_double(std::size_t i) const {
    VecD out(d);
    const float* p = values.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<double>(p[j]);
    return out;
}

Tensor FeatureMatrix::row_tensor(std::size_t i, const Shape& shape) const {
    if (shape_numel(shape) != d)
        throw ConfigError("row_tensor: shape " + shape_str(shape) + " does not hold " +
                          std::to_string(d) + " features");
    return Tensor(shape, row_double(i));
}

FeatureMatrix FeatureMatrix::select(const std::vector<std::size_t>& ids) const {
    FeatureMatrix out;
    out.d = d;
    out.n = ids.size();
    out.values.reserve(ids.size() * d);
    for (std::size_t id : ids) {
        const float* p = values.data() + id * d;
        out.values.insert(out.values.end(), p, p + d);
        if (has_labels()) out.labels.push_back(labels[id]);
    }
    out.feature_names = feature_names;
    out.source = source;
    out.preprocessing = preprocessing;
    return out;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw DataError(path + ": truncated file");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::ifstream open_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open file");
    return in;
}

} // namespace

FeatureMatrix load_idx(const std::string& path) {
    std::ifstream in = open_binary(path);
    const std::uint32_t magic = read_be32(in, path);
    if (magic == 2049)
        throw DataError(path + ": this is an IDX label file (magic 2049), not an image file");
    if (magic != 2051)
        throw DataError(path + ": bad IDX magic " + std::to_string(magic) +
                        " (expected 2051 for images)");
    const std::uint32_t n = read_be32(in, path);
    const std::uint32_t h = read_be32(in, path);
    const std::uint32_t w = read_be32(in, path);
    if (n == 0 || h == 0 || w == 0) throw DataError(path + ": empty IDX image file");

    FeatureMatrix m;
    m.n = n;
    m.d = static_cast<std::size_t>(h) * w;
    m.values.resize(m.n * m.d);
    std::vector<unsigned char> buf(m.d);
    for (std::size_t i = 0; i < m.n; ++i) {
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(m.d)))
            throw DataError(path + ": truncated IDX payload at image " + std::to_string(i));
        float* dst = m.values.data() + i * m.d;
        for (std::size_t j = 0; j < m.d; ++j) dst[j] = static_cast<float>(buf[j]) / 255.0f;
    }
    m.source = path;
    m.preprocessing = "idx-bytes/255";
    return m;
}

std::vector<int> load_idx_labels(const std::string& path) {
    std::ifstream in = open_binary(path);
    const std::uint32_t magic = read_be32(in, path);
    if (magic != 2049)
        throw DataError(path + ": bad IDX label magic " + std::to_string(magic) +
                        " (expected 2049)");
    const std::uint32_t n = read_be32(in, path);
    std::vector<unsigned char> buf(n);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n)))
        throw DataError(path + ": truncated IDX label payload");
    return std::vector<int>(buf.begin(), buf.end());
}

namespace {

constexpr const char* kMatrixMagic = "vnd-matrix v1";

FeatureMatrix load_matrix_container(std::ifstream& in, const std::string& path) {
    FeatureMatrix m;
    bool with_labels = false;
    std::string line;
    while (std::getline(in, line)) {
        if (line == "data") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "n") ls >> m.n;
        else if (key == "d") ls >> m.d;
        else if (key == "endian") {
            std::string e;
            ls >> e;
            if (e != "little") throw DataError(path + ": unsupported endianness tag '" + e + "'");
        } else if (key == "labels") {
            int v = 0;
            ls >> v;
            with_labels = v != 0;
        } else if (key == "features") {
            std::string name;
            while (ls >> name) m.feature_names.push_back(name);
        } else if (key == "source" || key == "preprocessing") {
            std::string rest;
            std::getline(ls, rest);
            if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
            (key == "source" ? m.source : m.preprocessing) = rest;
        } else if (!key.empty()) {
            throw DataError(path + ": unknown matrix header key '" + key + "'");
        }
    }
    if (m.n == 0 || m.d == 0) throw DataError(path + ": matrix header missing n or d");
    if (!m.feature_names.empty() && m.feature_names.size() != m.d)
        throw DataError(path + ": feature name count does not match d");

    m.values.resize(m.n * m.d);
    if (!in.read(reinterpret_cast<char*>(m.values.data()),
                 static_cast<std::streamsize>(m.values.size() * sizeof(float))))
        throw DataError(path + ": payload shorter than n*d floats");
    if (with_labels) {
        std::vector<std::int32_t> lab(m.n);
        if (!in.read(reinterpret_cast<char*>(lab.data()),
                     static_cast<std::streamsize>(lab.size() * sizeof(std::int32_t))))
            throw DataError(path + ": label payload shorter than n entries");
        m.labels.assign(lab.begin(), lab.end());
    }
    char extra;
    if (in.read(&extra, 1)) throw DataError(path + ": trailing bytes after payload");

    for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = 0; j < m.d; ++j)
            if (!std::isfinite(m.values[i * m.d + j]))
                throw DataError(path + ": non-finite value at row " + std::to_string(i) +
                                ", column " + std::to_string(j));
    if (m.source.empty()) m.source = path;
    return m;
}

std::vector<std::string> tokenize(const std::string& line) {
    std::string norm = line;
    std::replace(norm.begin(), norm.end(), ',', ' ');
    std::replace(norm.begin(), norm.end(), '\t', ' ');
    std::istringstream ls(norm);
    std::vector<std::string> toks;
    std::string t;
    while (ls >> t) toks.push_back(t);
    return toks;
}

bool parse_double(const std::string& s, double& out) {
    try {
        std::size_t used = 0;
        out = std::stod(s, &used);
        return used == s.size();
    } catch (...) {
        return false;
    }
}

FeatureMatrix load_matrix_text(std::ifstream& in, const std::string& path,
                               const std::string& first_line) {
    FeatureMatrix m;
    std::vector<std::string> header = tokenize(first_line);
    if (header.empty()) throw DataError(path + ": empty first line");

    bool headerless = true;
    for (const auto& t : header) {
        double v;
        if (!parse_double(t, v)) {
            headerless = false;
            break;
        }
    }

    std::ptrdiff_t label_col = -1;
    std::vector<std::string> rows;
    if (headerless) {
        m.d = header.size();
        rows.push_back(first_line);
    } else {
        for (std::size_t j = 0; j < header.size(); ++j) {
            std::string low = header[j];
            std::transform(low.begin(), low.end(), low.begin(), ::tolower);
            if (low == "label") {
                if (label_col >= 0) throw DataError(path + ": multiple label columns");
                label_col = static_cast<std::ptrdiff_t>(j);
            } else {
                m.feature_names.push_back(header[j]);
            }
        }
        m.d = m.feature_names.size();
    }
    if (m.d == 0) throw DataError(path + ": no feature columns");

    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        rows.push_back(line);
    }
    if (rows.empty()) throw DataError(path + ": no data rows");

    const std::size_t cols = m.d + (label_col >= 0 ? 1 : 0);
    m.n = rows.size();
    m.values.reserve(m.n * m.d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto toks = tokenize(rows[i]);
        if (toks.size() != cols)
            throw DataError(path + ": row " + std::to_string(i) + " has " +
                            std::to_string(toks.size()) + " columns, expected " +
                            std::to_string(cols));
        for (std::size_t j = 0; j < toks.size(); ++j) {
            double v;
            if (!parse_double(toks[j], v))
                throw DataError(path + ": row " + std::to_string(i) + ", column " +
                                std::to_string(j) + ": not a number: '" + toks[j] + "'");
            if (static_cast<std::ptrdiff_t>(j) == label_col) {
                m.labels.push_back(static_cast<int>(std::llround(v)));
            } else {
                if (!std::isfinite(v))
                    throw DataError(path + ": non-finite value at row " + std::to_string(i) +
                                    ", column " + std::to_string(j));
                m.values.push_back(static_cast<float>(v));
            }
        }
    }
    m.source = path;
    return m;
}

} // namespace

FeatureMatrix load_matrix(const std::string& path) {
    std::ifstream in = open_binary(path);
    std::string first;
    if (!std::getline(in, first)) throw DataError(path + ": empty file");
    if (first == kMatrixMagic) return load_matrix_container(in, path);
    return load_matrix_text(in, path, first);
}

void save_matrix(const FeatureMatrix& m, const std::string& path) {
    if (m.n == 0 || m.d == 0) throw DataError("save_matrix: refusing to write an empty matrix");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << kMatrixMagic << "\n";
    out << "n " << m.n << "\n";
    out << "d " << m.d << "\n";
    out << "endian little\n";
    if (!m.feature_names.empty()) {
        out << "features";
        for (const auto& f : m.feature_names) out << " " << f;
        out << "\n";
    }
    out << "labels " << (m.has_labels() ? 1 : 0) << "\n";
    if (!m.source.empty()) out << "source " << m.source << "\n";
    if (!m.preprocessing.empty()) out << "preprocessing " << m.preprocessing << "\n";
    out << "data\n";
    out.write(reinterpret_cast<const char*>(m.values.data()),
              static_cast<std::streamsize>(m.values.size() * sizeof(float)));
    if (m.has_labels()) {
        std::vector<std::int32_t> lab(m.labels.begin(), m.labels.end());
        out.write(reinterpret_cast<const char*>(lab.data()),
                  static_cast<std::streamsize>(lab.size() * sizeof(std::int32_t)));
    }
    if (!out) throw DataError(path + ": write failed");
}

std::pair<FeatureMatrix, PreprocessStats> preprocess(const FeatureMatrix& data,
                                                     const PreprocessStats* stats) {
    if (data.n == 0) throw DataError("preprocess: empty matrix");
    FeatureMatrix out = data;
    PreprocessStats result;

    // stage 1: per-source global intensity
    double global_mean;
    const bool have_stored_source =
        stats && stats->source_means.count(data.source) > 0;
    if (have_stored_source) {
        global_mean = stats->source_means.at(data.source);
    } else {
        double acc = 0.0;
        for (float v : data.values) acc += v;
        global_mean = acc / static_cast<double>(data.values.size());
    }
    if (!(global_mean > 0.0) || !std::isfinite(global_mean))
        throw DataError("preprocess: source '" + data.source +
                        "' has non-positive global mean " + std::to_string(global_mean));
    for (float& v : out.values) v = static_cast<float>(v / global_mean);
    result.source_means[data.source] = global_mean;

    // stage 2: per-feature scaling by training channel means
    VecD channel_means;
    if (stats) {
        if (stats->channel_means.size() != data.d)
            throw DataError("preprocess: stored stats have " +
                            std::to_string(stats->channel_means.size()) +
                            " channels, data has " + std::to_string(data.d));
        channel_means = stats->channel_means;
    } else {
        channel_means.assign(data.d, 0.0);
        for (std::size_t i = 0; i < out.n; ++i) {
            const float* p = out.values.data() + i * out.d;
            for (std::size_t j = 0; j < out.d; ++j) channel_means[j] += p[j];
        }
        for (double& v : channel_means) v /= static_cast<double>(out.n);
    }
    for (std::size_t j = 0; j < out.d; ++j)
        if (!(channel_means[j] > 0.0) || !std::isfinite(channel_means[j]))
            throw DataError("preprocess: feature " + std::to_string(j) +
                            " has non-positive mean " + std::to_string(channel_means[j]));
    for (std::size_t i = 0; i < out.n; ++i) {
        float* p = out.values.data() + i * out.d;
        for (std::size_t j = 0; j < out.d; ++j)
            p[j] = static_cast<float>(p[j] / channel_means[j]);
    }

    result.channel_means = std::move(channel_means);
    result.from_training = stats == nullptr;
    if (stats) {
        result.source_means.insert(stats->source_means.begin(), stats->source_means.end());
        result.from_training = stats->from_training;
    }
    out.preprocessing += (out.preprocessing.empty() ? "" : "; ");
    out.preprocessing += "global-mean+channel-mean";
    return {std::move(out), std::move(result)};
}

namespace {

std::vector<std::size_t> shuffled_ids(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(Rng::derive(seed, 0x5b117ull));
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + rng.uniform_index(n - i);
        std::swap(ids[i], ids[j]);
    }
    return ids;
}

} // namespace

Split split(const FeatureMatrix& data, const SplitSpec& spec) {
    if (data.n == 0) throw DataError("split: empty matrix");
    if (!(spec.train_fraction > 0.0) || spec.train_fraction >= 1.0 ||
        spec.val_fraction < 0.0 || spec.train_fraction + spec.val_fraction > 1.0)
        throw ConfigError("split: fractions must satisfy 0 < train, 0 <= val, train+val <= 1");

    const auto ids = shuffled_ids(data.n, spec.seed);
    const std::size_t n_train = static_cast<std::size_t>(spec.train_fraction * data.n);
    const std::size_t n_val =
        std::min(static_cast<std::size_t>(spec.val_fraction * data.n), data.n - n_train);
    if (n_train == 0) throw ConfigError("split: training fraction selects zero samples");

    Split out;
    out.train = data.select({ids.begin(), ids.begin() + n_train});
    out.validation = data.select({ids.begin() + n_train, ids.begin() + n_train + n_val});
    out.test = data.select({ids.begin() + n_train + n_val, ids.end()});
    return out;
}

OneDigitOut one_digit_out(const FeatureMatrix& data, int digit, double train_fraction,
                          double val_fraction, std::uint64_t seed) {
    if (!data.has_labels()) throw DataError("one_digit_out: data has no labels");
    std::vector<std::size_t> normal_ids, novel_ids;
    for (std::size_t i = 0; i < data.n; ++i)
        (data.labels[i] == digit ? novel_ids : normal_ids).push_back(i);
    if (normal_ids.empty() || novel_ids.empty())
        throw DataError("one_digit_out: digit " + std::to_string(digit) +
                        " leaves an empty class");

    const auto order = shuffled_ids(normal_ids.size(), Rng::derive(seed, digit));
    const std::size_t n_trainval =
        static_cast<std::size_t>(train_fraction * normal_ids.size());
    const std::size_t n_val = static_cast<std::size_t>(val_fraction * n_trainval);
    if (n_trainval == 0 || n_trainval == normal_ids.size())
        throw ConfigError("one_digit_out: train fraction leaves an empty part");

    std::vector<std::size_t> train_ids, val_ids, test_ids;
    for (std::size_t k = 0; k < n_trainval - n_val; ++k) train_ids.push_back(normal_ids[order[k]]);
    for (std::size_t k = n_trainval - n_val; k < n_trainval; ++k)
        val_ids.push_back(normal_ids[order[k]]);
    for (std::size_t k = n_trainval; k < normal_ids.size(); ++k)
        test_ids.push_back(normal_ids[order[k]]);

    OneDigitOut out;
    out.train = data.select(train_ids);
    out.validation = data.select(val_ids);

    FeatureMatrix test = data.select(test_ids);
    test.labels.assign(test.n, 0);
    const FeatureMatrix novel = data.select(novel_ids);
    test.values.insert(test.values.end(), novel.values.begin(), novel.values.end());
    test.labels.insert(test.labels.end(), novel.n, 1);
    test.n += novel.n;
    out.test = std::move(test);
    return out;
}

FeatureMatrix make_synthetic(const SynthConfig& config) {
    if (config.d == 0 || config.n_normal == 0)
        throw ConfigError("make_synthetic: d and n_normal must be positive");
    FeatureMatrix m;
    m.d = config.d;
    m.n = config.n_normal + config.n_abnormal;
    m.values.reserve(m.n * m.d);
    m.labels.reserve(m.n);
    Rng rng(Rng::derive(config.seed, 0x5e17ull));
    const double shift = config.separation / std::sqrt(static_cast<double>(config.d));
    for (std::size_t i = 0; i < config.n_normal; ++i) {
        for (std::size_t j = 0; j < config.d; ++j)
            m.values.push_back(static_cast<float>(rng.normal()));
        m.labels.push_back(0);
    }
    for (std::size_t i = 0; i < config.n_abnormal; ++i) {
        for (std::size_t j = 0; j < config.d; ++j)
            m.values.push_back(static_cast<float>(shift + rng.normal()));
        m.labels.push_back(1);
    }
    std::ostringstream src;
    src << "synthetic(d=" << config.d << ",sep=" << config.separation << ",seed=" << config.seed
        << ")";
    m.source = src.str();
    return m;
}

} // namespace vnd
