#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace falconsim {

struct CpdConfig {
    double hazard = 1.0 / 250.0;     // constant per-observation changepoint prob
    int r_young = 5;                 // "recent change" run-length horizon
    double detection_threshold = 0.5; // posterior mass on run lengths < r_young
    int group_size = 50;             // packets per loss-rate observation
    int r_max = 500;                 // run-length truncation
    int refractory = 100;            // observations between triggers
    int warmup = 10;                 // observations used to seed the prior
    double min_beta0 = 1e-8;         // variance floor for the seeded prior;
                                     // raise for count-valued signals whose
                                     // warmup can be all zeros
};

// Non-overlapping groups of `n` loss flags summed into counts; the remainder
// is discarded.
inline std::vector<int> group_losses(const std::vector<int>& flags, int n) {
    if (n < 1) throw std::invalid_argument("group size must be >= 1");
    std::vector<int> counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= flags.size();
         i += static_cast<std::size_t>(n)) {
        int s = 0;
        for (int j = 0; j < n; ++j) s += flags[i + static_cast<std::size_t>(j)];
        counts.push_back(s);
    }
    return counts;
}

// Run-length posterior of the Adams-MacKay online changepoint recursion with
// a Normal observation model of unknown mean and variance
// (Normal-Inverse-Gamma conjugate prior, Student-t predictive).
class RunLengthPosterior {
public:
    explicit RunLengthPosterior(CpdConfig cfg = {}) : cfg_(cfg) { reset(); }

    const CpdConfig& config() const { return cfg_; }

    void reset() {
        probs_.assign(1, 1.0);
        mu_.assign(1, 0.0);
        kappa_.assign(1, 0.0);
        alpha_.assign(1, 0.0);
        beta_.assign(1, 0.0);
        warmup_buf_.clear();
        obs_count_ = 0;
        last_trigger_ = -cfg_.refractory - 1;
        prior_ready_ = false;
    }

    std::int64_t observations() const { return obs_count_; }
    const std::vector<double>& probabilities() const { return probs_; }

    void update(double x) {
        if (!std::isfinite(x)) throw std::invalid_argument("non-finite observation");
        ++obs_count_;
        if (!prior_ready_) {
            warmup_buf_.push_back(x);
            if (static_cast<int>(warmup_buf_.size()) >= cfg_.warmup) seed_prior();
            return;
        }
        const std::size_t R = probs_.size();
        std::vector<double> pred(R);
        for (std::size_t r = 0; r < R; ++r)
            pred[r] = student_t_pdf(x, mu_[r], kappa_[r], alpha_[r], beta_[r]);

        std::vector<double> growth(R + 1, 0.0);
        double cp_mass = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            const double joint = probs_[r] * pred[r];
            growth[r + 1] = joint * (1.0 - cfg_.hazard);
            cp_mass += joint * cfg_.hazard;
        }
        growth[0] = cp_mass;

        // posterior update of the sufficient statistics, shifted by one
        std::vector<double> mu(R + 1), kappa(R + 1), alpha(R + 1), beta(R + 1);
        mu[0] = mu0_; kappa[0] = kappa0_; alpha[0] = alpha0_; beta[0] = beta0_;
        for (std::size_t r = 0; r < R; ++r) {
            kappa[r + 1] = kappa_[r] + 1.0;
            mu[r + 1] = (kappa_[r] * mu_[r] + x) / kappa[r + 1];
            alpha[r + 1] = alpha_[r] + 0.5;
            beta[r + 1] = beta_[r] +
                          kappa_[r] * (x - mu_[r]) * (x - mu_[r]) / (2.0 * kappa[r + 1]);
        }

        // truncate and renormalize
        std::size_t keep = std::min(growth.size(), static_cast<std::size_t>(cfg_.r_max) + 1);
        growth.resize(keep);
        mu.resize(keep); kappa.resize(keep); alpha.resize(keep); beta.resize(keep);
        double z = std::accumulate(growth.begin(), growth.end(), 0.0);
        if (z <= 0 || !std::isfinite(z)) {
            // numerically degenerate; restart the run-length distribution
            growth.assign(1, 1.0);
            mu.assign(1, mu0_); kappa.assign(1, kappa0_);
            alpha.assign(1, alpha0_); beta.assign(1, beta0_);
            z = 1.0;
        }
        for (auto& p : growth) p /= z;
        probs_ = std::move(growth);
        mu_ = std::move(mu); kappa_ = std::move(kappa);
        alpha_ = std::move(alpha); beta_ = std::move(beta);
    }

    // Posterior mass on run lengths shorter than r_young.
    double young_mass() const {
        double m = 0.0;
        for (std::size_t r = 0;
             r < probs_.size() && r < static_cast<std::size_t>(cfg_.r_young); ++r)
            m += probs_[r];
        return m;
    }

    // True iff a change is indicated and the refractory period has elapsed.
    // A positive answer arms the refractory window.
    bool detect() {
        if (!prior_ready_) return false;
        if (obs_count_ - last_trigger_ <= cfg_.refractory) return false;
        if (young_mass() <= cfg_.detection_threshold) return false;
        last_trigger_ = obs_count_;
        return true;
    }

private:
    void seed_prior() {
        const double n = double(warmup_buf_.size());
        mu0_ = warmup_buf_.front();
        kappa0_ = 1.0;
        alpha0_ = 1.0;
        double mean = 0.0;
        for (double v : warmup_buf_) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : warmup_buf_) var += (v - mean) * (v - mean);
        var = n > 1 ? var / (n - 1.0) : 1.0;
        beta0_ = std::max(var, cfg_.min_beta0);
        mu_.assign(1, mu0_);
        kappa_.assign(1, kappa0_);
        alpha_.assign(1, alpha0_);
        beta_.assign(1, beta0_);
        probs_.assign(1, 1.0);
        // the freshly seeded posterior starts at run length 0; without an
        // armed refractory window that young restart would read as a change
        last_trigger_ = obs_count_;
        prior_ready_ = true;
    }

    // Predictive density of the NIG posterior: Student-t with 2*alpha dof,
    // location mu, scale^2 = beta*(kappa+1)/(alpha*kappa).
    static double student_t_pdf(double x, double mu, double kappa, double alpha,
                                double beta) {
        const double nu = 2.0 * alpha;
        const double scale2 = beta * (kappa + 1.0) / (alpha * kappa);
        const double t = (x - mu) * (x - mu) / scale2;
        const double lg = std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) -
                          0.5 * std::log(nu * 3.141592653589793 * scale2) -
                          (nu + 1.0) / 2.0 * std::log1p(t / nu);
        return std::exp(lg);
    }

    CpdConfig cfg_;
    std::vector<double> probs_, mu_, kappa_, alpha_, beta_;
    std::vector<double> warmup_buf_;
    double mu0_ = 0.0, kappa0_ = 1.0, alpha0_ = 1.0, beta0_ = 1.0;
    std::int64_t obs_count_ = 0;
    std::int64_t last_trigger_ = 0;
    bool prior_ready_ = false;
};

} // namespace falconsim
