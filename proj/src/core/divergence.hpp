#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace valcon {

// Probability vector over an ordered, unique set of category labels.
class Distribution {
public:
    Distribution() = default;

    // Validates non-negativity, unit mass (1e-9) and label uniqueness.
    Distribution(std::vector<std::string> labels, std::vector<double> probs);

    static Distribution uniform(std::vector<std::string> labels);
    // Renormalizes non-negative masses; throws if the total is zero.
    static Distribution from_masses(std::vector<std::string> labels, std::vector<double> masses);

    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::vector<double>& probs() const noexcept { return probs_; }
    std::size_t size() const noexcept { return probs_.size(); }

    double operator[](std::size_t i) const { return probs_[i]; }
    // Mass of a label; throws for an unknown label.
    double prob(const std::string& label) const;
    bool has_label(const std::string& label) const;
    std::size_t index_of(const std::string& label) const;

    bool has_zero() const;
    bool same_labels(const Distribution& other) const { return labels_ == other.labels_; }

    friend bool operator==(const Distribution&, const Distribution&) = default;

private:
    std::vector<std::string> labels_;
    std::vector<double> probs_;
};

enum class LogBase { natural, two };
enum class TermTransform { sqrt, identity };

struct DivergenceConfig {
    double smoothing_epsilon = 1e-10;
    LogBase log_base = LogBase::natural;
    TermTransform per_term_transform = TermTransform::sqrt;
    double centroid_tolerance = 1e-10;
    std::size_t centroid_max_iterations = 1000;

    void validate() const;
};

struct CentroidSolution {
    Distribution centroid;
    double objective = 0.0;  // nats
    std::size_t iterations = 0;
    bool converged = false;
};

Distribution empirical_distribution(std::span<const std::string> answers,
                                    std::span<const std::string> label_space);

// Adds epsilon to every mass and renormalizes.
Distribution smooth(const Distribution& d, double epsilon);
// smooth() only when d contains a zero; otherwise returns d unchanged.
Distribution smooth_if_degenerate(const Distribution& d, double epsilon);

double kl_divergence(const Distribution& p, const Distribution& q,
                     const DivergenceConfig& cfg = {});
double js_divergence(const Distribution& p, const Distribution& q,
                     const DivergenceConfig& cfg = {});

// Jensen-Shannon centroid by the geometric-mean fixed point
//   q_k <- normalize(prod_i ((q_k + p_ik) / 2)^(1/n)),
// started at the arithmetic mean. When `objective_trace` is non-null it
// receives the objective before the first step and after every step.
CentroidSolution js_centroid(std::span<const Distribution> ps, const DivergenceConfig& cfg = {},
                             std::vector<double>* objective_trace = nullptr);

// sum_i JSD(q || p_i) in nats on the inputs as given (no smoothing).
double centroid_objective(const Distribution& q, std::span<const Distribution> ps);

// d/dq_k sum_i JSD(q || p_i) = 1/2 sum_i ln(q_k / m_ik), q strictly positive.
std::vector<double> centroid_objective_gradient(const Distribution& q,
                                                std::span<const Distribution> ps);

// Mean per-term transform of JSD(C* || P_i) where C* is the JS centroid.
double dd_divergence(std::span<const Distribution> ps, const DivergenceConfig& cfg = {});

// Shannon entropy with log base |labels|, in [0, 1].
double normalized_entropy(const Distribution& d);

// Lexicographically smallest label among the maxima.
const std::string& argmax_label(const Distribution& d);

// Upper bound of dd_divergence for k labels under the default config:
// k one-hot distributions, one per label.
double dd_upper_bound(std::size_t n_labels);

}  // namespace valcon
