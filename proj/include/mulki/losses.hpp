#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mulki/encoder.hpp"
#include "mulki/hyper.hpp"
#include "mulki/tensor.hpp"

namespace mulki {

// Cross-modal probability rows of one model on one batch.
//   img_text_dist   [B x K]  softmax_t sim(f(x), g(t)) / tau
//   proto_text_dist [K x K]  softmax_t sim(p_k, g(t)) / tau
//   text_proto_dist [K x K]  softmax_p sim(g(t_k), p) / tau
struct Distributions {
    Tensor img_text_dist;
    Tensor proto_text_dist;
    Tensor text_proto_dist;
};

// Everything a frozen teacher contributes to distillation. All fields are off the tape.
struct TeacherOutputs {
    Tensor feats;
    Distributions dists;
};

// Student side of the same quantities, on the tape.
struct StudentOutputs {
    Tensor feats;
    Tensor texts;
    Distributions dists;
};

// Per-sample convex weights over the two teachers; constants in the loss graph.
struct SampleWeights {
    Tensor r0;
    Tensor r_prev;
};

struct LossBreakdown {
    double ce = 0.0;
    double csa = 0.0;
    double fd0 = 0.0;
    double fd_prev = 0.0;
    double ird0 = 0.0;
    double ird_prev = 0.0;
    double idd0 = 0.0;
    double idd_prev = 0.0;
    double mdd = 0.0;
    double wc = 0.0;
    double total = 0.0;
    std::vector<double> per_sample_r0;
};

// proto_text / text_proto rows are only computed when protos is non-empty.
Distributions distributions(const Tensor& feats, const Tensor& texts, const Tensor& protos, double tau);

TeacherOutputs teacher_outputs(const ModelSnapshot& teacher, const Tensor& images,
                               std::span<const std::size_t> class_tokens, const Tensor& protos, double tau);

// Symmetric InfoNCE between prototypes P [K x d] and text embeddings T [K x d].
Tensor csa_loss(const Tensor& protos, const Tensor& texts, double tau);

struct FeatureDistillation {
    Tensor per_sample;  // [B] squared L2 distances
    Tensor mean;
};
FeatureDistillation fd_loss(const Tensor& teacher_feats, const Tensor& student_feats);

// ||diag(w) (sim(F_t, P) - sim(F_s, P))||_F / sqrt(B K).
Tensor ird_loss(const Tensor& teacher_feats, const Tensor& student_feats, const Tensor& protos,
                const std::optional<Tensor>& row_weights = std::nullopt);

Tensor image_text_dist(const Tensor& feats, const Tensor& texts, double tau);

// Batch mean of soft cross-entropy rows, optionally weighted per sample.
Tensor i2t_loss(const Tensor& teacher_dist, const Tensor& student_dist,
                const std::optional<Tensor>& weights = std::nullopt);

// Prototype->text plus text->prototype soft cross-entropy, each averaged over K.
Tensor pt_loss(const Distributions& teacher, const Tensor& student_proto_text, const Tensor& student_text_proto);

// s_k = cos(P_teacher_k(x), P_student(x)); r0 = e^-s0 / (e^-s0 + e^-s_prev).
SampleWeights sample_weights(const Tensor& dist_c0, const Tensor& dist_prev, const Tensor& dist_student);

struct MddOptions {
    double alpha = 1.0;
    double beta = 1.0;
    Weighting weighting = Weighting::similarity;
    bool fd = true;
    bool ird = true;
    bool idd = true;
};

struct MddResult {
    Tensor loss;
    // Unweighted per-teacher diagnostics.
    double fd0 = 0.0;
    double fd_prev = 0.0;
    double ird0 = 0.0;
    double ird_prev = 0.0;
    double idd0 = 0.0;
    double idd_prev = 0.0;
    std::vector<double> r0;
};

// Dual-teacher multi-level distillation. For each kept teacher k:
//   r_k * (FD + alpha IRD + beta i2t) per sample, plus c_pt * beta * p&t,
// with c_pt = 0.5 when both teachers are used and 1 for a single kept teacher.
// fixed_weights overrides the weighting mode (used to freeze r during gradient audits).
MddResult mdd_loss(const TeacherOutputs& c0, const TeacherOutputs& prev, const StudentOutputs& student,
                   const Tensor& protos, const MddOptions& options,
                   const std::optional<SampleWeights>& fixed_weights = std::nullopt);

// Sum of squared differences between live parameters and a constant reference.
Tensor wc_loss(const Tensor& theta, std::span<const double> theta_prev);

struct Objective {
    Tensor loss;
    LossBreakdown breakdown;
};

struct BatchInputs {
    Tensor images;                          // [B x d_in]
    std::vector<std::size_t> labels;        // index into class_tokens
    std::vector<std::size_t> class_tokens;  // current task's classes, in task order
};

// L = L_ce + lambda1 L_CSA + lambda2 L_MDD (+ lambda_wc L_WC). Disabled terms are
// not built at all, so a fully disabled configuration is plain fine-tuning.
// student_feats must be student.encode_images(batch.images) on the tape.
// theta_prev is required when WC is active.
Objective total_loss(const DualEncoder& student, const Tensor& student_feats, const ModelSnapshot& c0,
                     const ModelSnapshot& prev, const BatchInputs& batch, const Tensor& protos,
                     const HyperParams& hyper, bool wc_active, std::span<const double> theta_prev,
                     const std::optional<SampleWeights>& fixed_weights = std::nullopt);

Objective total_loss(const DualEncoder& student, const ModelSnapshot& c0, const ModelSnapshot& prev,
                     const BatchInputs& batch, const Tensor& protos, const HyperParams& hyper, bool wc_active,
                     std::span<const double> theta_prev,
                     const std::optional<SampleWeights>& fixed_weights = std::nullopt);

}  // namespace mulki
