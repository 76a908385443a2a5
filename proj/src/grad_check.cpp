#include "mgssl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mgssl/rng.hpp"

namespace mgssl {

namespace {

double run_forward(const std::vector<std::pair<std::string, Mat*>>& leaves,
                   const LossBuilder& build) {
    Tape tape;
    std::vector<Tensor> ts;
    ts.reserve(leaves.size());
    for (const auto& [name, m] : leaves) ts.push_back(tape.leaf(*m, false));
    return build(tape, ts).scalar_value();
}

// Relative error with a floor so that near-zero gradient pairs compare on an
// absolute scale instead of blowing up.
double rel_err(double a, double b) {
    double scale = std::max({std::fabs(a), std::fabs(b), 1e-6});
    return std::fabs(a - b) / scale;
}

}  // namespace

GradCheckReport grad_check(const std::vector<std::pair<std::string, Mat*>>& leaves,
                           const LossBuilder& build, double h, double tol,
                           int max_entries_per_leaf, uint64_t sample_seed) {
    GradCheckReport report;
    report.tol = tol;

    // Analytic pass.
    Tape tape;
    std::vector<Tensor> ts;
    ts.reserve(leaves.size());
    for (const auto& [name, m] : leaves) ts.push_back(tape.leaf(*m, true));
    Tensor loss = build(tape, ts);
    tape.backward(loss);
    std::vector<Mat> analytic;
    analytic.reserve(leaves.size());
    for (const auto& t : ts) analytic.push_back(tape.grad(t));

    Rng rng(sample_seed);
    for (size_t li = 0; li < leaves.size(); ++li) {
        GradCheckLeaf lr;
        lr.name = leaves[li].first;
        Mat* m = leaves[li].second;

        std::vector<int> entries;
        int n = m->size();
        if (max_entries_per_leaf < 0 || max_entries_per_leaf >= n) {
            entries.resize(n);
            for (int i = 0; i < n; ++i) entries[i] = i;
        } else {
            std::vector<int> all(n);
            for (int i = 0; i < n; ++i) all[i] = i;
            rng.shuffle(all);
            entries.assign(all.begin(), all.begin() + max_entries_per_leaf);
        }

        for (int e : entries) {
            double saved = m->v[e];
            m->v[e] = saved + h;
            double up = run_forward(leaves, build);
            m->v[e] = saved - h;
            double dn = run_forward(leaves, build);
            m->v[e] = saved;
            double numeric = (up - dn) / (2.0 * h);
            double err = rel_err(analytic[li].v[e], numeric);
            lr.max_rel_err = std::max(lr.max_rel_err, err);
            ++lr.entries_checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, lr.max_rel_err);
        report.leaves.push_back(std::move(lr));
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace mgssl
