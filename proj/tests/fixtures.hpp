#pragma once

// Small dual-encoder setups shared by the loss tests and the acceptance binary.

#include <cstdint>
#include <vector>

#include "mulki/encoder.hpp"
#include "mulki/losses.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace mulki;

// d = 8, B = 4, K = 3 unless told otherwise.
struct LossSetup {
    EncoderDims dims;
    ModelSnapshot c0;
    ModelSnapshot prev;
    DualEncoder student;
    BatchInputs batch;
    Tensor protos;  // [K x d] unit rows
};

inline DualEncoder perturbed(const DualEncoder& base, Rng& rng, double sd) {
    DualEncoder m = base.copy(true);
    auto flat = m.params_flat();
    for (double& x : flat) {
        x += rng.normal(0.0, sd);
    }
    m.load_flat(flat);
    return m;
}

inline LossSetup make_setup(std::uint64_t seed, std::size_t b = 4, std::size_t k = 3, std::size_t d = 8) {
    Rng rng(mulki::mix_seed(seed, 77));
    const EncoderDims dims{5, 3, 6, d, k + 2};
    const DualEncoder base = DualEncoder::init(seed, dims);
    const DualEncoder prev = perturbed(base, rng, 0.3);
    DualEncoder student = perturbed(prev, rng, 0.3);
    BatchInputs batch;
    batch.images = oracle::random_matrix(rng, b, dims.d_in);
    for (std::size_t i = 0; i < b; ++i) {
        batch.labels.push_back(i % k);
    }
    for (std::size_t c = 0; c < k; ++c) {
        batch.class_tokens.push_back(c + 1);
    }
    const Tensor protos = oracle::random_unit_rows(rng, k, d);
    return {dims, ModelSnapshot(base), ModelSnapshot(prev), std::move(student), batch, protos};
}

// Student outputs on the tape for the setup's batch.
inline StudentOutputs student_outputs(const LossSetup& s, double tau) {
    const Tensor feats = s.student.encode_images(s.batch.images);
    const Tensor texts = s.student.encode_texts(s.batch.class_tokens);
    return {feats, texts, distributions(feats, texts, s.protos, tau)};
}

inline TeacherOutputs teacher(const LossSetup& s, const ModelSnapshot& t, double tau) {
    return teacher_outputs(t, s.batch.images, s.batch.class_tokens, s.protos, tau);
}

}  // namespace fixture
