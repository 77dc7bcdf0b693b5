#include <cstring>
#include <fstream>
#include <sstream>

#include "vnd/errors.hpp"
#include "vnd/vae.hpp"

namespace vnd {

namespace {

constexpr const char* kMagic = "vnd-checkpoint v1";

void write_layer_line(std::ostream& out, const LayerSpec& l) {
    out << "layer " << layer_kind_name(l.kind);
    switch (l.kind) {
    case LayerKind::dense:
        out << " units " << l.units;
        if (!l.reshape.empty()) {
            out << " reshape";
            for (std::size_t e : l.reshape) out << " " << e;
        }
        break;
    case LayerKind::conv2d:
    case LayerKind::transposed_conv2d:
        out << " units " << l.units << " filter " << l.filter[0] << " " << l.filter[1]
            << " stride " << l.stride[0] << " " << l.stride[1];
        break;
    case LayerKind::maxpool2d:
        out << " filter " << l.filter[0] << " " << l.filter[1] << " stride " << l.stride[0]
            << " " << l.stride[1];
        break;
    case LayerKind::activation:
        out << " act " << activation_name(l.act);
        break;
    }
    out << "\n";
}

LayerSpec parse_layer_line(const std::string& line) {
    std::istringstream ls(line);
    std::string tag, kind;
    ls >> tag >> kind;
    LayerSpec l;
    if (kind == "dense") l.kind = LayerKind::dense;
    else if (kind == "conv2d") l.kind = LayerKind::conv2d;
    else if (kind == "maxpool2d") l.kind = LayerKind::maxpool2d;
    else if (kind == "transposed_conv2d") l.kind = LayerKind::transposed_conv2d;
    else if (kind == "activation") l.kind = LayerKind::activation;
    else throw DataError("checkpoint: unknown layer kind '" + kind + "'");

    std::string key;
    while (ls >> key) {
        if (key == "units") ls >> l.units;
        else if (key == "filter") ls >> l.filter[0] >> l.filter[1];
        else if (key == "stride") ls >> l.stride[0] >> l.stride[1];
        else if (key == "act") {
            std::string a;
            ls >> a;
            l.act = parse_activation(a);
        } else if (key == "reshape") {
            std::size_t e;
            while (ls >> e) l.reshape.push_back(e);
        } else {
            throw DataError("checkpoint: unknown layer field '" + key + "'");
        }
    }
    return l;
}

void write_blob(std::ostream& out, const Tensor& t) {
    std::vector<float> f(t.numel());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(t[i]);
    out.write(reinterpret_cast<const char*>(f.data()),
              static_cast<std::streamsize>(f.size() * sizeof(float)));
}

void read_blob(std::istream& in, Tensor& t, const std::string& path) {
    std::vector<float> f(t.numel());
    if (!in.read(reinterpret_cast<char*>(f.data()),
                 static_cast<std::streamsize>(f.size() * sizeof(float))))
        throw DataError(path + ": checkpoint weight payload truncated");
    for (std::size_t i = 0; i < f.size(); ++i) t[i] = static_cast<double>(f[i]);
}

} // namespace

void save_checkpoint(const VaeModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << kMagic << "\n";
    out << "arch " << m.arch_name << "\n";
    out << "input_shape";
    for (std::size_t e : m.input_shape) out << " " << e;
    out << "\n";
    out << "latent_dim " << m.latent_dim << "\n";
    out << "decoder_family " << decoder_family_name(m.family) << "\n";
    out << "init_seed " << m.init_seed << "\n";
    out << "encoder_layers " << m.encoder.size() << "\n";
    for (const auto& l : m.encoder) write_layer_line(out, l);
    out << "decoder_layers " << m.decoder.size() << "\n";
    for (const auto& l : m.decoder) write_layer_line(out, l);

    out << "preprocess_sources " << m.stats.source_means.size() << "\n";
    out.precision(17);
    for (const auto& [src, mean] : m.stats.source_means)
        out << "source " << mean << " " << src << "\n";
    out << "preprocess_channels " << m.stats.channel_means.size() << "\n";
    if (!m.stats.channel_means.empty()) {
        out << "channel_means";
        for (double v : m.stats.channel_means) out << " " << v;
        out << "\n";
    }
    out << "preprocess_from_training " << (m.stats.from_training ? 1 : 0) << "\n";
    out << "weights\n";
    for (const auto& l : m.enc_params.layers) {
        write_blob(out, l.weight);
        write_blob(out, l.bias);
    }
    for (const auto& l : m.dec_params.layers) {
        write_blob(out, l.weight);
        write_blob(out, l.bias);
    }
    if (!out) throw DataError(path + ": write failed");
}

VaeModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open checkpoint");
    std::string line;
    if (!std::getline(in, line) || line != kMagic)
        throw DataError(path + ": not a vnd checkpoint (bad magic line)");

    VaeModel m;
    std::size_t n_enc = 0, n_dec = 0, n_sources = 0, n_channels = 0;
    while (std::getline(in, line)) {
        if (line == "weights") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "arch") ls >> m.arch_name;
        else if (key == "input_shape") {
            std::size_t e;
            while (ls >> e) m.input_shape.push_back(e);
        } else if (key == "latent_dim") ls >> m.latent_dim;
        else if (key == "decoder_family") {
            std::string f;
            ls >> f;
            m.family = parse_decoder_family(f);
        } else if (key == "init_seed") ls >> m.init_seed;
        else if (key == "encoder_layers") {
            ls >> n_enc;
            for (std::size_t i = 0; i < n_enc; ++i) {
                if (!std::getline(in, line)) throw DataError(path + ": truncated layer list");
                m.encoder.push_back(parse_layer_line(line));
            }
        } else if (key == "decoder_layers") {
            ls >> n_dec;
            for (std::size_t i = 0; i < n_dec; ++i) {
                if (!std::getline(in, line)) throw DataError(path + ": truncated layer list");
                m.decoder.push_back(parse_layer_line(line));
            }
        } else if (key == "preprocess_sources") {
            ls >> n_sources;
        } else if (key == "source") {
            double mean;
            ls >> mean;
            std::string src;
            std::getline(ls, src);
            if (!src.empty() && src.front() == ' ') src.erase(0, 1);
            m.stats.source_means[src] = mean;
        } else if (key == "preprocess_channels") {
            ls >> n_channels;
        } else if (key == "channel_means") {
            double v;
            while (ls >> v) m.stats.channel_means.push_back(v);
        } else if (key == "preprocess_from_training") {
            int v = 0;
            ls >> v;
            m.stats.from_training = v != 0;
        } else if (!key.empty()) {
            throw DataError(path + ": unknown checkpoint key '" + key + "'");
        }
    }
    if (m.input_shape.empty() || m.latent_dim == 0)
        throw DataError(path + ": checkpoint header incomplete");
    if (m.stats.source_means.size() != n_sources || m.stats.channel_means.size() != n_channels)
        throw DataError(path + ": preprocessing stats inconsistent with declared counts");

    Rng dummy(0);
    m.enc_params = init_params(m.encoder, m.input_shape, dummy);
    m.dec_params = init_params(m.decoder, Shape{m.latent_dim}, dummy);
    for (auto& l : m.enc_params.layers) {
        read_blob(in, l.weight, path);
        read_blob(in, l.bias, path);
    }
    for (auto& l : m.dec_params.layers) {
        read_blob(in, l.weight, path);
        read_blob(in, l.bias, path);
    }
    char extra;
    if (in.read(&extra, 1)) throw DataError(path + ": trailing bytes after weight payload");

    // sanity: heads must be consistent with the declared latent dim and family
    const auto enc_shapes = infer_shapes(m.encoder, m.input_shape);
    if (shape_numel(enc_shapes.back()) != 2 * m.latent_dim)
        throw DataError(path + ": encoder head does not provide 2*latent_dim values");
    const auto dec_shapes = infer_shapes(m.decoder, Shape{m.latent_dim});
    const std::size_t want =
        (m.family == DecoderFamily::gaussian ? 2 : 1) * shape_numel(m.input_shape);
    if (shape_numel(dec_shapes.back()) != want)
        throw DataError(path + ": decoder head size does not match the declared family");
    return m;
}

} // namespace vnd
