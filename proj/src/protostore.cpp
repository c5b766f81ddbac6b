#include "mulki/protostore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mulki/error.hpp"

namespace mulki {

namespace {

std::vector<double> normalized(std::vector<double> v, std::size_t class_id) {
    double ss = 0.0;
    for (double x : v) {
        ss += x * x;
    }
    const double nrm = std::sqrt(ss);
    if (!(nrm > 0.0)) {
        throw DegenerateInputError("prototype of class " + std::to_string(class_id) + " has zero norm");
    }
    for (double& x : v) {
        x /= nrm;
    }
    return v;
}

std::vector<double> row_mean(const Tensor& feats) {
    const std::size_t n = feats.rows();
    const std::size_t d = feats.cols();
    std::vector<double> m(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            m[c] += feats.at(r, c);
        }
    }
    for (double& x : m) {
        x /= static_cast<double>(n);
    }
    return m;
}

}  // namespace

PrototypeStore::PrototypeStore(GammaSchedule schedule) : schedule_(schedule), gamma_(schedule.gamma0) {
    if (!(schedule.step > 0.0) || !(schedule.max > 0.0 && schedule.max < 1.0) || schedule.gamma0 < 0.0 ||
        schedule.gamma0 > schedule.max) {
        throw ConfigError("gamma schedule requires step > 0, 0 < max < 1 and 0 <= gamma0 <= max");
    }
}

PrototypeStore PrototypeStore::init_from_model(const ModelSnapshot& c0,
                                               const std::map<std::size_t, Tensor>& images_by_class,
                                               GammaSchedule schedule) {
    PrototypeStore store(schedule);
    store.initialize(c0, images_by_class);
    return store;
}

void PrototypeStore::initialize(const ModelSnapshot& c0, const std::map<std::size_t, Tensor>& images_by_class) {
    std::map<std::size_t, std::vector<double>> fresh;
    for (const auto& [cls, images] : images_by_class) {
        if (images.rank() != 2 || images.rows() == 0) {
            throw DegenerateInputError("class " + std::to_string(cls) + " has no samples for its prototype");
        }
        fresh[cls] = normalized(row_mean(c0.encode_images(images)), cls);
    }
    protos_ = std::move(fresh);
    gamma_ = schedule_.gamma0;
    updates_ = 0;
}

void PrototypeStore::ema_update(const Tensor& feats, std::span<const std::size_t> labels) {
    if (feats.rank() != 2 || feats.rows() != labels.size()) {
        throw DimensionError("ema_update: " + std::to_string(labels.size()) + " labels for features " +
                             shape_str(feats.shape()));
    }
    if (feats.requires_grad()) {
        throw ContractError("ema_update: features must be detached");
    }
    std::map<std::size_t, std::vector<std::size_t>> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        rows[labels[i]].push_back(i);
    }
    const std::size_t d = feats.cols();
    std::map<std::size_t, Tensor> by_class;
    for (const auto& [cls, idx] : rows) {
        std::vector<double> block;
        block.reserve(idx.size() * d);
        for (std::size_t r : idx) {
            for (std::size_t c = 0; c < d; ++c) {
                block.push_back(feats.at(r, c));
            }
        }
        by_class.emplace(cls, Tensor::matrix(idx.size(), d, std::move(block)));
    }
    ema_update(by_class);
}

void PrototypeStore::ema_update(const std::map<std::size_t, Tensor>& feats_by_class) {
    for (const auto& [cls, feats] : feats_by_class) {
        if (!contains(cls)) {
            throw ContractError("ema_update: class " + std::to_string(cls) + " has no prototype");
        }
        if (feats.requires_grad()) {
            throw ContractError("ema_update: features must be detached");
        }
    }
    for (const auto& [cls, feats] : feats_by_class) {
        if (feats.rows() == 0) {
            continue;
        }
        std::vector<double>& p = protos_.at(cls);
        if (feats.cols() != p.size()) {
            throw DimensionError("ema_update: feature width " + std::to_string(feats.cols()) + " vs prototype " +
                                 std::to_string(p.size()));
        }
        const std::vector<double> m = row_mean(feats);
        std::vector<double> blended(p.size());
        for (std::size_t c = 0; c < p.size(); ++c) {
            blended[c] = gamma_ * p[c] + (1.0 - gamma_) * m[c];
        }
        p = normalized(std::move(blended), cls);
    }
    ++updates_;
    gamma_ = std::min(schedule_.gamma0 + static_cast<double>(updates_) * schedule_.step, schedule_.max);
}

void PrototypeStore::purge() {
    protos_.clear();
    gamma_ = schedule_.gamma0;
    updates_ = 0;
}

const std::vector<double>& PrototypeStore::get(std::size_t class_id) const {
    const auto it = protos_.find(class_id);
    if (it == protos_.end()) {
        throw ContractError("no prototype for class " + std::to_string(class_id));
    }
    return it->second;
}

Tensor PrototypeStore::matrix(std::span<const std::size_t> class_ids) const {
    if (class_ids.empty()) {
        throw ContractError("prototype matrix over zero classes");
    }
    const std::size_t d = get(class_ids.front()).size();
    std::vector<double> out;
    out.reserve(class_ids.size() * d);
    for (std::size_t cls : class_ids) {
        const auto& p = get(cls);
        out.insert(out.end(), p.begin(), p.end());
    }
    return Tensor::matrix(class_ids.size(), d, std::move(out));
}

}  // namespace mulki
