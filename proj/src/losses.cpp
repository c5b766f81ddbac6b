#include "mulki/losses.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "mulki/error.hpp"

namespace mulki {

namespace {

std::vector<std::size_t> iota_labels(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

Tensor constant_vector(std::size_t n, double value) { return Tensor::vector(std::vector<double>(n, value)); }

}  // namespace

Distributions distributions(const Tensor& feats, const Tensor& texts, const Tensor& protos, double tau) {
    Distributions d;
    d.img_text_dist = image_text_dist(feats, texts, tau);
    if (protos.numel() > 0) {
        const Tensor sim = scale(cosine_sim_matrix(protos, texts), 1.0 / tau);
        d.proto_text_dist = softmax(sim, 1);
        d.text_proto_dist = softmax(transpose(sim), 1);
    }
    return d;
}

TeacherOutputs teacher_outputs(const ModelSnapshot& teacher, const Tensor& images,
                               std::span<const std::size_t> class_tokens, const Tensor& protos, double tau) {
    TeacherOutputs out;
    out.feats = teacher.encode_images(images);
    out.dists = distributions(out.feats, teacher.encode_texts(class_tokens), protos, tau);
    return out;
}

Tensor csa_loss(const Tensor& protos, const Tensor& texts, double tau) {
    if (protos.rank() != 2 || protos.rows() == 0) {
        throw ContractError("csa_loss needs at least one prototype");
    }
    if (protos.shape() != texts.shape()) {
        throw DimensionError("csa_loss: prototypes " + shape_str(protos.shape()) + " vs texts " +
                             shape_str(texts.shape()));
    }
    const auto labels = iota_labels(protos.rows());
    const Tensor logits = scale(cosine_sim_matrix(protos, texts), 1.0 / tau);
    const Tensor p2t = cross_entropy(logits, labels);
    const Tensor t2p = cross_entropy(transpose(logits), labels);
    return scale(add(p2t, t2p), 0.5);
}

FeatureDistillation fd_loss(const Tensor& teacher_feats, const Tensor& student_feats) {
    if (teacher_feats.shape() != student_feats.shape()) {
        throw DimensionError("fd_loss: teacher " + shape_str(teacher_feats.shape()) + " vs student " +
                             shape_str(student_feats.shape()));
    }
    FeatureDistillation out;
    out.per_sample = row_sq_dist(student_feats, teacher_feats);
    out.mean = mean(out.per_sample);
    return out;
}

Tensor ird_loss(const Tensor& teacher_feats, const Tensor& student_feats, const Tensor& protos,
                const std::optional<Tensor>& row_weights) {
    if (protos.rank() != 2 || protos.rows() == 0) {
        throw ContractError("ird_loss needs at least one prototype");
    }
    if (teacher_feats.shape() != student_feats.shape()) {
        throw DimensionError("ird_loss: teacher " + shape_str(teacher_feats.shape()) + " vs student " +
                             shape_str(student_feats.shape()));
    }
    Tensor diff = sub(cosine_sim_matrix(teacher_feats, protos), cosine_sim_matrix(student_feats, protos));
    if (row_weights) {
        diff = mul_rows(diff, *row_weights);
    }
    const double cells = static_cast<double>(diff.numel());
    return scale(frobenius_norm(diff), 1.0 / std::sqrt(cells));
}

Tensor image_text_dist(const Tensor& feats, const Tensor& texts, double tau) {
    return softmax(scale(cosine_sim_matrix(feats, texts), 1.0 / tau), 1);
}

Tensor i2t_loss(const Tensor& teacher_dist, const Tensor& student_dist, const std::optional<Tensor>& weights) {
    Tensor rows = soft_cross_entropy_rows(teacher_dist, student_dist);
    if (weights) {
        rows = mul(rows, *weights);
    }
    return mean(rows);
}

Tensor pt_loss(const Distributions& teacher, const Tensor& student_proto_text, const Tensor& student_text_proto) {
    const double k = static_cast<double>(student_proto_text.rows());
    const Tensor p2t = soft_cross_entropy(teacher.proto_text_dist, student_proto_text);
    const Tensor t2p = soft_cross_entropy(teacher.text_proto_dist, student_text_proto);
    return scale(add(p2t, t2p), 1.0 / k);
}

SampleWeights sample_weights(const Tensor& dist_c0, const Tensor& dist_prev, const Tensor& dist_student) {
    if (dist_c0.shape() != dist_student.shape() || dist_prev.shape() != dist_student.shape()) {
        throw DimensionError("sample_weights: distribution shapes differ");
    }
    const std::size_t b = dist_student.rows();
    const std::size_t k = dist_student.cols();
    auto row_cos = [k](const Tensor& a, const Tensor& s, std::size_t r) {
        double dot = 0.0;
        double na = 0.0;
        double ns = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            dot += a.at(r, c) * s.at(r, c);
            na += a.at(r, c) * a.at(r, c);
            ns += s.at(r, c) * s.at(r, c);
        }
        return dot / std::sqrt(na * ns);
    };
    std::vector<double> r0(b);
    std::vector<double> rp(b);
    for (std::size_t r = 0; r < b; ++r) {
        const double s0 = row_cos(dist_c0, dist_student, r);
        const double sp = row_cos(dist_prev, dist_student, r);
        // e^-s0 / (e^-s0 + e^-sp) == 1 / (1 + e^(s0 - sp))
        r0[r] = 1.0 / (1.0 + std::exp(s0 - sp));
        rp[r] = 1.0 / (1.0 + std::exp(sp - s0));
    }
    return {Tensor::vector(std::move(r0)), Tensor::vector(std::move(rp))};
}

MddResult mdd_loss(const TeacherOutputs& c0, const TeacherOutputs& prev, const StudentOutputs& student,
                   const Tensor& protos, const MddOptions& options, const std::optional<SampleWeights>& fixed_weights) {
    const std::size_t b = student.feats.rows();
    SampleWeights w;
    if (fixed_weights) {
        w = *fixed_weights;
    } else {
        switch (options.weighting) {
            case Weighting::similarity:
                w = sample_weights(c0.dists.img_text_dist, prev.dists.img_text_dist,
                                   detach(student.dists.img_text_dist));
                break;
            case Weighting::average:
                w = {constant_vector(b, 0.5), constant_vector(b, 0.5)};
                break;
            case Weighting::only_c0:
                w = {constant_vector(b, 1.0), constant_vector(b, 0.0)};
                break;
            case Weighting::only_prev:
                w = {constant_vector(b, 0.0), constant_vector(b, 1.0)};
                break;
        }
    }
    const bool use_c0 = options.weighting != Weighting::only_prev;
    const bool use_prev = options.weighting != Weighting::only_c0;
    const double pt_coef = (use_c0 && use_prev) ? 0.5 : 1.0;
    if ((options.ird || options.idd) && protos.numel() == 0) {
        throw ContractError("mdd_loss: IRD and IDD need prototypes");
    }

    MddResult out;
    out.r0 = w.r0.to_vector();
    Tensor total = Tensor::scalar(0.0);

    auto teacher_term = [&](const TeacherOutputs& t, const Tensor& r, double& fd_v, double& ird_v, double& idd_v) {
        if (options.fd) {
            const FeatureDistillation fd = fd_loss(t.feats, student.feats);
            fd_v = fd.mean.item();
            total = add(total, mean(mul(fd.per_sample, r)));
        }
        if (options.ird && options.alpha != 0.0) {
            ird_v = ird_loss(t.feats, detach(student.feats), protos).item();
            total = add(total, scale(ird_loss(t.feats, student.feats, protos, r), options.alpha));
        }
        if (options.idd && options.beta != 0.0) {
            const Tensor i2t_raw = i2t_loss(t.dists.img_text_dist, detach(student.dists.img_text_dist));
            const Tensor pt = pt_loss(t.dists, student.dists.proto_text_dist, student.dists.text_proto_dist);
            idd_v = i2t_raw.item() + pt.item();
            const Tensor i2t = i2t_loss(t.dists.img_text_dist, student.dists.img_text_dist, r);
            total = add(total, scale(i2t, options.beta));
            total = add(total, scale(pt, pt_coef * options.beta));
        }
    };
    if (use_c0) {
        teacher_term(c0, w.r0, out.fd0, out.ird0, out.idd0);
    }
    if (use_prev) {
        teacher_term(prev, w.r_prev, out.fd_prev, out.ird_prev, out.idd_prev);
    }
    out.loss = total;
    return out;
}

Tensor wc_loss(const Tensor& theta, std::span<const double> theta_prev) {
    if (theta.numel() != theta_prev.size()) {
        throw DimensionError("wc_loss: " + std::to_string(theta.numel()) + " vs " +
                             std::to_string(theta_prev.size()) + " parameters");
    }
    const Tensor ref = Tensor::from_data(theta.shape(), {theta_prev.begin(), theta_prev.end()});
    return sum(square(sub(theta, ref)));
}

Objective total_loss(const DualEncoder& student, const Tensor& student_feats, const ModelSnapshot& c0,
                     const ModelSnapshot& prev, const BatchInputs& batch, const Tensor& protos_in,
                     const HyperParams& hyper, bool wc_active, std::span<const double> theta_prev,
                     const std::optional<SampleWeights>& fixed_weights) {
    Objective obj;
    LossBreakdown& br = obj.breakdown;
    const Tensor protos = detach(protos_in);

    const Tensor texts = student.encode_texts(batch.class_tokens);
    const Tensor logits = scale(cosine_sim_matrix(student_feats, texts), 1.0 / hyper.tau_ce);
    Tensor loss = cross_entropy(logits, batch.labels);
    br.ce = loss.item();

    if (hyper.uses_csa()) {
        const Tensor csa = csa_loss(protos, texts, hyper.tau);
        br.csa = csa.item();
        loss = add(loss, scale(csa, hyper.lambda1));
    }

    if (hyper.any_distillation()) {
        const MddOptions opts{hyper.alpha, hyper.beta, hyper.weighting, hyper.enable.fd, hyper.enable.ird,
                              hyper.enable.idd};
        const bool need_protos = hyper.enable.ird || hyper.enable.idd;
        const Tensor p = need_protos ? protos : Tensor();
        StudentOutputs s{student_feats, texts, distributions(student_feats, texts, p, hyper.tau)};
        TeacherOutputs t0;
        TeacherOutputs tp;
        if (hyper.weighting != Weighting::only_prev) {
            t0 = teacher_outputs(c0, batch.images, batch.class_tokens, p, hyper.tau);
        }
        if (hyper.weighting != Weighting::only_c0) {
            tp = teacher_outputs(prev, batch.images, batch.class_tokens, p, hyper.tau);
        }
        const MddResult mdd = mdd_loss(t0, tp, s, p, opts, fixed_weights);
        br.fd0 = mdd.fd0;
        br.fd_prev = mdd.fd_prev;
        br.ird0 = mdd.ird0;
        br.ird_prev = mdd.ird_prev;
        br.idd0 = mdd.idd0;
        br.idd_prev = mdd.idd_prev;
        br.mdd = mdd.loss.item();
        br.per_sample_r0 = mdd.r0;
        loss = add(loss, scale(mdd.loss, hyper.lambda2));
    }

    if (wc_active && hyper.lambda_wc != 0.0) {
        const Tensor wc = wc_loss(concat_flat(student.parameters()), theta_prev);
        br.wc = wc.item();
        loss = add(loss, scale(wc, hyper.lambda_wc));
    }

    br.total = loss.item();
    obj.loss = loss;
    return obj;
}

Objective total_loss(const DualEncoder& student, const ModelSnapshot& c0, const ModelSnapshot& prev,
                     const BatchInputs& batch, const Tensor& protos, const HyperParams& hyper, bool wc_active,
                     std::span<const double> theta_prev, const std::optional<SampleWeights>& fixed_weights) {
    return total_loss(student, student.encode_images(batch.images), c0, prev, batch, protos, hyper, wc_active,
                      theta_prev, fixed_weights);
}

}  // namespace mulki
