#pragma once

#include <fstream>

#include "ss3d/dataset.hpp"
#include "ss3d/tape.hpp"

namespace ss3d {

struct AdamConfig {
    Real lr = 1e-3;
    Real beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Adam over the trainable groups of one ParamStore. Consumes the gradient
// accumulators; callers zero them between steps (accumulate-then-zero).
class Adam {
public:
    Adam(ParamStore& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {
        m_.resize(store.group_count());
        v_.resize(store.group_count());
        for (std::size_t i = 0; i < store.group_count(); ++i) {
            m_[i].assign(store.group_at(i).value.size(), 0.0);
            v_[i].assign(store.group_at(i).value.size(), 0.0);
        }
    }

    Real lr() const { return cfg_.lr; }
    void set_lr(Real lr) { cfg_.lr = lr; }

    void step() {
        ++t_;
        Real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<Real>(t_));
        Real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<Real>(t_));
        for (std::size_t gi = 0; gi < store_->group_count(); ++gi) {
            ParamGroup& g = store_->group_at(gi);
            if (!g.trainable) continue;
            auto& m = m_[gi];
            auto& v = v_[gi];
            for (std::size_t i = 0; i < g.value.size(); ++i) {
                Real grad = g.grad[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad * grad;
                Real mhat = m[i] / bc1;
                Real vhat = v[i] / bc2;
                g.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
        store_->check_finite("adam step");
    }

private:
    ParamStore* store_;
    AdamConfig cfg_;
    i64 t_ = 0;
    std::vector<std::vector<Real>> m_, v_;
};

// Relative-improvement reduce-on-plateau: the metric must improve on the best
// seen value by more than `threshold` (relative) within `patience` epochs or
// the learning rate is multiplied by `factor`.
class ReduceOnPlateau {
public:
    ReduceOnPlateau(Real factor = 0.5, Real threshold = 5e-3, int patience = 5, Real min_lr = 0)
        : factor_(factor), threshold_(threshold), patience_(patience), min_lr_(min_lr) {}

    // Returns true when the learning rate was reduced this step.
    bool step(Real metric, Adam& opt) {
        if (metric < best_ * (1.0 - threshold_)) {
            best_ = metric;
            bad_epochs_ = 0;
            return false;
        }
        if (++bad_epochs_ <= patience_) return false;
        bad_epochs_ = 0;
        Real lr = std::max(min_lr_, opt.lr() * factor_);
        bool reduced = lr < opt.lr();
        opt.set_lr(lr);
        return reduced;
    }

    Real best() const { return best_; }

private:
    Real factor_, threshold_;
    int patience_;
    Real min_lr_;
    Real best_ = std::numeric_limits<Real>::infinity();
    int bad_epochs_ = 0;
};

// Append-only JSON-lines metrics log.
class MetricsLog {
public:
    explicit MetricsLog(const std::string& path) : path_(path) {
        if (!path.empty()) {
            f_.open(path, std::ios::app);
            if (!f_) fail(errc::io_error, "cannot open metrics log: " + path);
        }
    }
    void append(const json& j) {
        lines_.push_back(j);
        if (f_.is_open()) {
            f_ << j.dump() << '\n';
            f_.flush();
        }
    }
    const std::vector<json>& lines() const { return lines_; }

private:
    std::string path_;
    std::ofstream f_;
    std::vector<json> lines_;
};

}  // namespace ss3d
