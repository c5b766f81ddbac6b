#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mulki/tensor.hpp"

namespace mulki {

struct EncoderDims {
    std::size_t d_in = 32;
    std::size_t d_tok = 16;
    std::size_t hidden = 64;
    std::size_t embed_dim = 16;
    std::size_t vocab_size = 26;
};

// Token 0 is the shared prompt template; class tokens start at 1.
inline constexpr std::size_t kTemplateToken = 0;

// Bumped whenever the flat parameter layout changes.
inline constexpr int kParamOrderVersion = 1;

// Image MLP (d_in -> hidden -> embed_dim, tanh) and text path (token table,
// d_tok -> hidden -> embed_dim, tanh). Both paths end in an L2 normalization.
//
// Flat parameter order (version 1):
//   img_w1 [d_in x hidden], img_b1 [hidden], img_w2 [hidden x d], img_b2 [d],
//   token_table [vocab x d_tok],
//   txt_w1 [d_tok x hidden], txt_b1 [hidden], txt_w2 [hidden x d], txt_b2 [d]
// each row-major.
class DualEncoder {
public:
    // Weights uniform in +-1/sqrt(fan_in). The token table is a one-hot lookup,
    // so its fan-in is 1.
    static DualEncoder init(std::uint64_t seed, const EncoderDims& dims);

    const EncoderDims& dims() const { return dims_; }
    std::uint64_t seed() const { return seed_; }

    // [B x d_in] -> [B x embed_dim], unit rows.
    Tensor encode_images(const Tensor& batch) const;
    // One row per class token; each row encodes mean(class token, template token).
    Tensor encode_texts(std::span<const std::size_t> token_ids) const;

    std::span<Tensor> parameters() { return params_; }
    std::span<const Tensor> parameters() const { return params_; }
    static const std::vector<std::string>& parameter_names();
    std::size_t parameter_count() const;

    std::vector<double> params_flat() const;
    void load_flat(std::span<const double> flat);

    // Deep copy; the copy's parameters require grad iff trainable.
    DualEncoder copy(bool trainable) const;

private:
    DualEncoder(const EncoderDims& dims, std::uint64_t seed, std::vector<Tensor> params);

    EncoderDims dims_;
    std::uint64_t seed_ = 0;
    std::vector<Tensor> params_;
};

// Frozen copy of a DualEncoder, used for the C_0 and C_{i-1} teachers.
// Outputs are always off the tape.
class ModelSnapshot {
public:
    explicit ModelSnapshot(const DualEncoder& model);

    Tensor encode_images(const Tensor& batch) const;
    Tensor encode_texts(std::span<const std::size_t> token_ids) const;

    std::vector<double> params_flat() const { return frozen_.params_flat(); }
    const EncoderDims& dims() const { return frozen_.dims(); }
    const DualEncoder& model() const { return frozen_; }
    // Trainable deep copy, used to start a student from this snapshot.
    DualEncoder thaw() const { return frozen_.copy(true); }

private:
    DualEncoder frozen_;
};

inline ModelSnapshot snapshot(const DualEncoder& model) { return ModelSnapshot(model); }

// Checkpoint: "<prefix>.json" (dims, seed, layout version) + "<prefix>.bin"
// (flat parameters, little-endian float64).
void save_checkpoint(const std::filesystem::path& prefix, const DualEncoder& model);
DualEncoder load_checkpoint(const std::filesystem::path& prefix);

}  // namespace mulki
