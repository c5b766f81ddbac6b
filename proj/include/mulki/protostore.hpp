#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "mulki/encoder.hpp"
#include "mulki/tensor.hpp"

namespace mulki {

// Sliding-average coefficient schedule: gamma_k = min(gamma0 + k * step, max).
struct GammaSchedule {
    double gamma0 = 0.0;
    double step = 0.04;
    double max = 0.98;
};

// Per-class unit-norm visual prototypes for the task currently in training.
// Prototypes are plain buffers: they are read into losses as constants and
// never receive gradient.
class PrototypeStore {
public:
    explicit PrototypeStore(GammaSchedule schedule = {});

    // Builds p_c = Norm(mean_k C0(x_k^c)) for every class and resets gamma.
    // images_by_class maps class id -> [n_c x d_in], n_c >= 1.
    static PrototypeStore init_from_model(const ModelSnapshot& c0, const std::map<std::size_t, Tensor>& images_by_class,
                                          GammaSchedule schedule = {});
    void initialize(const ModelSnapshot& c0, const std::map<std::size_t, Tensor>& images_by_class);

    // One training iteration: for each class present, p <- Norm(gamma p + (1-gamma) batch mean),
    // then gamma advances once. feats is [B x d]; labels are class ids.
    void ema_update(const Tensor& feats, std::span<const std::size_t> labels);
    void ema_update(const std::map<std::size_t, Tensor>& feats_by_class);

    void purge();

    bool empty() const { return protos_.empty(); }
    std::size_t size() const { return protos_.size(); }
    bool contains(std::size_t class_id) const { return protos_.count(class_id) != 0; }
    const std::vector<double>& get(std::size_t class_id) const;
    // Prototypes of the given classes stacked as a detached [K x d] matrix.
    Tensor matrix(std::span<const std::size_t> class_ids) const;

    double gamma() const { return gamma_; }
    std::size_t updates() const { return updates_; }
    const GammaSchedule& schedule() const { return schedule_; }

private:
    GammaSchedule schedule_;
    double gamma_ = 0.0;
    std::size_t updates_ = 0;
    std::map<std::size_t, std::vector<double>> protos_;
};

}  // namespace mulki
