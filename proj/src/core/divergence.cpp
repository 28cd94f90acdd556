#include "divergence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "error.hpp"

namespace valcon {

namespace {

constexpr double kMassTolerance = 1e-9;

void require_same_labels(const Distribution& p, const Distribution& q) {
    if (!p.same_labels(q)) {
        fail(ErrorKind::invalid_argument, "distributions have mismatched label sets");
    }
}

void require_shared_labels(std::span<const Distribution> ps) {
    for (const auto& p : ps) require_same_labels(ps.front(), p);
}

double log_scale(LogBase base) { return base == LogBase::two ? 1.0 / std::log(2.0) : 1.0; }

// Raw sum p_k ln(p_k / q_k) with 0 ln 0 = 0; no label checks.
double kl_raw(std::span<const double> p, std::span<const double> q) {
    double total = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) total += p[k] * std::log(p[k] / q[k]);
    }
    return total;
}

// Per-label JSD term written in d = (p - q) / (p + q), which avoids the
// cancellation of the two KL halves when p and q are close:
//   term = s/4 * [(1+d)ln(1+d) + (1-d)ln(1-d)],  s = p + q.
double js_term(double p, double q) {
    const double s = p + q;
    if (s <= 0.0) return 0.0;
    const double d = (p - q) / s;
    if (std::abs(d) < 1e-2) {
        // Even power series sum_j d^(2j) / (j (2j - 1)).
        const double d2 = d * d;
        double g = 0.0;
        double power = d2;
        for (int j = 1; j <= 6; ++j) {
            g += power / (j * (2.0 * j - 1.0));
            power *= d2;
        }
        return 0.25 * s * g;
    }
    double term = 0.0;
    if (p > 0.0) term += p * std::log(2.0 * p / s);
    if (q > 0.0) term += q * std::log(2.0 * q / s);
    return 0.5 * term;
}

double js_raw(std::span<const double> p, std::span<const double> q) {
    double total = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) total += js_term(p[k], q[k]);
    return std::max(0.0, total);
}

std::vector<Distribution> smoothed_inputs(std::span<const Distribution> ps, double epsilon) {
    std::vector<Distribution> out;
    out.reserve(ps.size());
    for (const auto& p : ps) out.push_back(smooth_if_degenerate(p, epsilon));
    return out;
}

}  // namespace

Distribution::Distribution(std::vector<std::string> labels, std::vector<double> probs)
    : labels_(std::move(labels)), probs_(std::move(probs)) {
    if (labels_.size() != probs_.size()) {
        fail(ErrorKind::invalid_argument, "distribution labels and probs differ in length");
    }
    if (labels_.empty()) fail(ErrorKind::invalid_argument, "distribution has no labels");
    std::set<std::string> seen(labels_.begin(), labels_.end());
    if (seen.size() != labels_.size()) {
        fail(ErrorKind::invalid_argument, "distribution labels are not unique");
    }
    double total = 0.0;
    for (double p : probs_) {
        if (!(p >= 0.0) || !std::isfinite(p)) {
            fail(ErrorKind::invalid_argument, "distribution has a negative or non-finite mass");
        }
        total += p;
    }
    if (std::abs(total - 1.0) > kMassTolerance) {
        fail(ErrorKind::invalid_argument, "distribution mass sums to " + std::to_string(total));
    }
}

Distribution Distribution::uniform(std::vector<std::string> labels) {
    const std::size_t n = labels.size();
    require(n > 0, "uniform distribution needs at least one label");
    return Distribution(std::move(labels), std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

Distribution Distribution::from_masses(std::vector<std::string> labels,
                                       std::vector<double> masses) {
    double total = 0.0;
    for (double m : masses) {
        if (!(m >= 0.0) || !std::isfinite(m)) {
            fail(ErrorKind::invalid_argument, "negative or non-finite mass");
        }
        total += m;
    }
    if (total <= 0.0) fail(ErrorKind::numeric, "cannot normalize zero total mass");
    for (double& m : masses) m /= total;
    return Distribution(std::move(labels), std::move(masses));
}

double Distribution::prob(const std::string& label) const { return probs_[index_of(label)]; }

bool Distribution::has_label(const std::string& label) const {
    return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

std::size_t Distribution::index_of(const std::string& label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) fail(ErrorKind::invalid_argument, "unknown label '" + label + "'");
    return static_cast<std::size_t>(it - labels_.begin());
}

bool Distribution::has_zero() const {
    return std::any_of(probs_.begin(), probs_.end(), [](double p) { return p == 0.0; });
}

void DivergenceConfig::validate() const {
    if (!(smoothing_epsilon > 0.0)) fail(ErrorKind::config, "smoothing_epsilon must be > 0");
    if (!(centroid_tolerance > 0.0)) fail(ErrorKind::config, "centroid_tolerance must be > 0");
    if (centroid_max_iterations < 1) fail(ErrorKind::config, "centroid_max_iterations must be >= 1");
}

Distribution empirical_distribution(std::span<const std::string> answers,
                                    std::span<const std::string> label_space) {
    require(!label_space.empty(), "label space is empty");
    if (answers.empty()) fail(ErrorKind::invalid_argument, "no answers: distribution undefined");
    std::vector<std::string> labels(label_space.begin(), label_space.end());
    std::vector<double> counts(labels.size(), 0.0);
    for (const auto& a : answers) {
        auto it = std::find(labels.begin(), labels.end(), a);
        if (it == labels.end()) fail(ErrorKind::invalid_argument, "answer '" + a + "' not in label space");
        counts[static_cast<std::size_t>(it - labels.begin())] += 1.0;
    }
    const double n = static_cast<double>(answers.size());
    for (double& c : counts) c /= n;
    return Distribution(std::move(labels), std::move(counts));
}

Distribution smooth(const Distribution& d, double epsilon) {
    std::vector<double> probs = d.probs();
    const double denom = 1.0 + epsilon * static_cast<double>(probs.size());
    for (double& p : probs) p = (p + epsilon) / denom;
    return Distribution(d.labels(), std::move(probs));
}

Distribution smooth_if_degenerate(const Distribution& d, double epsilon) {
    return d.has_zero() ? smooth(d, epsilon) : d;
}

double kl_divergence(const Distribution& p, const Distribution& q, const DivergenceConfig& cfg) {
    require_same_labels(p, q);
    const Distribution ps = smooth_if_degenerate(p, cfg.smoothing_epsilon);
    const Distribution qs = smooth_if_degenerate(q, cfg.smoothing_epsilon);
    return std::max(0.0, kl_raw(ps.probs(), qs.probs())) * log_scale(cfg.log_base);
}

double js_divergence(const Distribution& p, const Distribution& q, const DivergenceConfig& cfg) {
    require_same_labels(p, q);
    const Distribution ps = smooth_if_degenerate(p, cfg.smoothing_epsilon);
    const Distribution qs = smooth_if_degenerate(q, cfg.smoothing_epsilon);
    return js_raw(ps.probs(), qs.probs()) * log_scale(cfg.log_base);
}

double centroid_objective(const Distribution& q, std::span<const Distribution> ps) {
    double total = 0.0;
    for (const auto& p : ps) {
        require_same_labels(q, p);
        total += js_raw(q.probs(), p.probs());
    }
    return total;
}

CentroidSolution js_centroid(std::span<const Distribution> ps, const DivergenceConfig& cfg,
                             std::vector<double>* objective_trace) {
    cfg.validate();
    if (ps.empty()) fail(ErrorKind::invalid_argument, "js_centroid needs at least one distribution");
    require_shared_labels(ps);

    const std::vector<Distribution> inputs = smoothed_inputs(ps, cfg.smoothing_epsilon);
    const std::size_t k_labels = inputs.front().size();
    const double n = static_cast<double>(inputs.size());

    std::vector<double> q(k_labels, 0.0);
    for (const auto& p : inputs) {
        for (std::size_t k = 0; k < k_labels; ++k) q[k] += p[k] / n;
    }

    auto objective_of = [&](const std::vector<double>& qv) {
        double total = 0.0;
        for (const auto& p : inputs) total += js_raw(qv, p.probs());
        return total;
    };

    if (objective_trace) {
        objective_trace->clear();
        objective_trace->push_back(objective_of(q));
    }

    CentroidSolution solution;
    std::vector<double> next(k_labels);
    for (std::size_t iter = 1; iter <= cfg.centroid_max_iterations; ++iter) {
        // Geometric mean in log space; subtract the max before exponentiating.
        for (std::size_t k = 0; k < k_labels; ++k) {
            double log_sum = 0.0;
            for (const auto& p : inputs) log_sum += std::log(0.5 * (q[k] + p[k]));
            next[k] = log_sum / n;
        }
        const double shift = *std::max_element(next.begin(), next.end());
        double total = 0.0;
        for (double& v : next) {
            v = std::exp(v - shift);
            total += v;
        }
        double max_change = 0.0;
        for (std::size_t k = 0; k < k_labels; ++k) {
            next[k] /= total;
            max_change = std::max(max_change, std::abs(next[k] - q[k]));
        }
        q.swap(next);
        solution.iterations = iter;
        if (objective_trace) objective_trace->push_back(objective_of(q));
        if (max_change < cfg.centroid_tolerance) {
            solution.converged = true;
            break;
        }
    }

    solution.objective = objective_of(q);
    solution.centroid = Distribution::from_masses(inputs.front().labels(), std::move(q));
    return solution;
}

std::vector<double> centroid_objective_gradient(const Distribution& q,
                                                std::span<const Distribution> ps) {
    require(!ps.empty(), "gradient needs at least one distribution");
    for (double v : q.probs()) {
        if (!(v > 0.0)) fail(ErrorKind::invalid_argument, "gradient requires a strictly positive q");
    }
    std::vector<double> grad(q.size(), 0.0);
    for (const auto& p : ps) {
        require_same_labels(q, p);
        for (std::size_t k = 0; k < q.size(); ++k) {
            grad[k] += 0.5 * std::log(q[k] / (0.5 * (q[k] + p[k])));
        }
    }
    return grad;
}

double dd_divergence(std::span<const Distribution> ps, const DivergenceConfig& cfg) {
    if (ps.empty()) fail(ErrorKind::invalid_argument, "dd_divergence needs at least one distribution");
    const CentroidSolution sol = js_centroid(ps, cfg);
    double total = 0.0;
    for (const auto& p : ps) {
        const double js = js_divergence(sol.centroid, p, cfg);
        total += cfg.per_term_transform == TermTransform::sqrt ? std::sqrt(js) : js;
    }
    return total / static_cast<double>(ps.size());
}

double normalized_entropy(const Distribution& d) {
    if (d.size() < 2) fail(ErrorKind::invalid_argument, "normalized entropy needs at least two labels");
    double h = 0.0;
    for (double p : d.probs()) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::clamp(h / std::log(static_cast<double>(d.size())), 0.0, 1.0);
}

const std::string& argmax_label(const Distribution& d) {
    require(d.size() > 0, "argmax of an empty distribution");
    std::size_t best = 0;
    for (std::size_t k = 1; k < d.size(); ++k) {
        if (d[k] > d[best] || (d[k] == d[best] && d.labels()[k] < d.labels()[best])) best = k;
    }
    return d.labels()[best];
}

double dd_upper_bound(std::size_t n_labels) {
    require(n_labels >= 2, "bound needs at least two labels");
    std::vector<std::string> labels;
    for (std::size_t k = 0; k < n_labels; ++k) labels.push_back("l" + std::to_string(k));
    std::vector<Distribution> one_hots;
    for (std::size_t k = 0; k < n_labels; ++k) {
        std::vector<double> probs(n_labels, 0.0);
        probs[k] = 1.0;
        one_hots.emplace_back(labels, std::move(probs));
    }
    return dd_divergence(one_hots);
}

}  // namespace valcon
