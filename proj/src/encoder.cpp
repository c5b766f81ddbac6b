#include "mulki/encoder.hpp"

#include <cmath>

#include "mulki/error.hpp"
#include "mulki/io.hpp"
#include "mulki/rng.hpp"

namespace mulki {

namespace {

struct ParamSpec {
    Shape shape;
    std::size_t fan_in;
};

std::vector<ParamSpec> layout(const EncoderDims& d) {
    return {
        {{d.d_in, d.hidden}, d.d_in},      {{d.hidden}, d.d_in},
        {{d.hidden, d.embed_dim}, d.hidden}, {{d.embed_dim}, d.hidden},
        {{d.vocab_size, d.d_tok}, 1},
        {{d.d_tok, d.hidden}, d.d_tok},    {{d.hidden}, d.d_tok},
        {{d.hidden, d.embed_dim}, d.hidden}, {{d.embed_dim}, d.hidden},
    };
}

enum Param : std::size_t { kImgW1, kImgB1, kImgW2, kImgB2, kTokens, kTxtW1, kTxtB1, kTxtW2, kTxtB2 };

Tensor mlp(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
    const Tensor h = tanh(add_bias(matmul(x, w1), b1));
    return l2_normalize(add_bias(matmul(h, w2), b2), 1);
}

}  // namespace

DualEncoder::DualEncoder(const EncoderDims& dims, std::uint64_t seed, std::vector<Tensor> params)
    : dims_(dims), seed_(seed), params_(std::move(params)) {}

DualEncoder DualEncoder::init(std::uint64_t seed, const EncoderDims& dims) {
    if (dims.d_in == 0 || dims.d_tok == 0 || dims.hidden == 0 || dims.embed_dim == 0 || dims.vocab_size == 0) {
        throw ConfigError("encoder dimensions must all be >= 1");
    }
    Rng rng(mix_seed(seed, 0xE2C0DE));
    std::vector<Tensor> params;
    for (const ParamSpec& p : layout(dims)) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(p.fan_in));
        Tensor t = Tensor::zeros(p.shape, true);
        for (double& v : t.mutable_data()) {
            v = rng.uniform(-bound, bound);
        }
        params.push_back(std::move(t));
    }
    return DualEncoder(dims, seed, std::move(params));
}

Tensor DualEncoder::encode_images(const Tensor& batch) const {
    if (batch.rank() != 2 || batch.cols() != dims_.d_in) {
        throw DimensionError("encode_images: expected [B x " + std::to_string(dims_.d_in) + "], got " +
                             shape_str(batch.shape()));
    }
    return mlp(batch, params_[kImgW1], params_[kImgB1], params_[kImgW2], params_[kImgB2]);
}

Tensor DualEncoder::encode_texts(std::span<const std::size_t> token_ids) const {
    for (std::size_t id : token_ids) {
        if (id >= dims_.vocab_size) {
            throw LookupError("unknown token id " + std::to_string(id) + " (vocab " +
                              std::to_string(dims_.vocab_size) + ")");
        }
    }
    const std::vector<std::size_t> tmpl(token_ids.size(), kTemplateToken);
    const Tensor prompt =
        scale(add(gather_rows(params_[kTokens], token_ids), gather_rows(params_[kTokens], tmpl)), 0.5);
    return mlp(prompt, params_[kTxtW1], params_[kTxtB1], params_[kTxtW2], params_[kTxtB2]);
}

const std::vector<std::string>& DualEncoder::parameter_names() {
    static const std::vector<std::string> names = {"img_w1", "img_b1", "img_w2",      "img_b2", "token_table",
                                                   "txt_w1", "txt_b1", "txt_w2", "txt_b2"};
    return names;
}

std::size_t DualEncoder::parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& p : params_) {
        n += p.numel();
    }
    return n;
}

std::vector<double> DualEncoder::params_flat() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const Tensor& p : params_) {
        flat.insert(flat.end(), p.data().begin(), p.data().end());
    }
    return flat;
}

void DualEncoder::load_flat(std::span<const double> flat) {
    if (flat.size() != parameter_count()) {
        throw DimensionError("load_flat: " + std::to_string(flat.size()) + " values for " +
                             std::to_string(parameter_count()) + " parameters");
    }
    std::size_t off = 0;
    for (Tensor& p : params_) {
        auto dst = p.mutable_data();
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
        off += dst.size();
    }
}

DualEncoder DualEncoder::copy(bool trainable) const {
    std::vector<Tensor> params;
    params.reserve(params_.size());
    for (const Tensor& p : params_) {
        params.push_back(p.clone(trainable));
    }
    return DualEncoder(dims_, seed_, std::move(params));
}

ModelSnapshot::ModelSnapshot(const DualEncoder& model) : frozen_(model.copy(false)) {}

Tensor ModelSnapshot::encode_images(const Tensor& batch) const { return detach(frozen_.encode_images(batch)); }

Tensor ModelSnapshot::encode_texts(std::span<const std::size_t> token_ids) const {
    return detach(frozen_.encode_texts(token_ids));
}

void save_checkpoint(const std::filesystem::path& prefix, const DualEncoder& model) {
    const EncoderDims& d = model.dims();
    Json m;
    m["format"] = "mulki-encoder";
    m["param_order_version"] = kParamOrderVersion;
    m["seed"] = model.seed();
    m["dims"] = {{"d_in", d.d_in},
                 {"d_tok", d.d_tok},
                 {"hidden", d.hidden},
                 {"embed_dim", d.embed_dim},
                 {"vocab_size", d.vocab_size}};
    m["parameters"] = Json::array();
    const auto& names = DualEncoder::parameter_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        m["parameters"].push_back({{"name", names[i]}, {"shape", model.parameters()[i].shape()}});
    }
    save_bundle(prefix, m, model.params_flat());
}

DualEncoder load_checkpoint(const std::filesystem::path& prefix) {
    FlatBundle b = load_bundle(prefix);
    const Json& m = b.manifest;
    try {
        if (m.at("format").get<std::string>() != "mulki-encoder") {
            throw ParseError(prefix.string() + ": not an encoder checkpoint");
        }
        if (m.at("param_order_version").get<int>() != kParamOrderVersion) {
            throw ParseError(prefix.string() + ": unsupported param_order_version");
        }
        const Json& jd = m.at("dims");
        EncoderDims d;
        d.d_in = jd.at("d_in").get<std::size_t>();
        d.d_tok = jd.at("d_tok").get<std::size_t>();
        d.hidden = jd.at("hidden").get<std::size_t>();
        d.embed_dim = jd.at("embed_dim").get<std::size_t>();
        d.vocab_size = jd.at("vocab_size").get<std::size_t>();
        DualEncoder model = DualEncoder::init(m.at("seed").get<std::uint64_t>(), d);
        model.load_flat(b.values);
        return model;
    } catch (const Json::exception& e) {
        throw ParseError(prefix.string() + ".json: " + e.what());
    }
}

}  // namespace mulki
