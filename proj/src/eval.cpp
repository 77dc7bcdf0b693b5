#include "vnd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "vnd/errors.hpp"

namespace vnd {

void LabeledScores::validate() const {
    if (scores.size() != labels.size())
        throw DataError("LabeledScores: scores and labels differ in length");
    if (scores.empty()) throw DataError("LabeledScores: empty");
    for (double s : scores)
        if (!std::isfinite(s)) throw DataError("LabeledScores: non-finite score");
    for (int l : labels)
        if (l != 0 && l != 1) throw DataError("LabeledScores: labels must be 0 or 1");
}

namespace {

std::pair<std::size_t, std::size_t> class_counts(const LabeledScores& ls) {
    std::size_t n1 = 0;
    for (int l : ls.labels) n1 += static_cast<std::size_t>(l);
    const std::size_t n0 = ls.labels.size() - n1;
    if (n0 == 0 || n1 == 0)
        throw DataError("AUC needs both classes present (got " + std::to_string(n0) +
                        " normal, " + std::to_string(n1) + " abnormal)");
    return {n0, n1};
}

} // namespace

double auc(const LabeledScores& ls) {
    ls.validate();
    const auto [n0, n1] = class_counts(ls);
    const std::size_t n = ls.size();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ls.scores[a] < ls.scores[b]; });

    // midranks; tie groups share the average rank, which keeps the rank-sum
    // statistic exactly equal to pair counting with half credit for ties
    double rank_sum_abnormal = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && ls.scores[order[j + 1]] == ls.scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j + 2); // ranks are 1-based
        for (std::size_t k = i; k <= j; ++k)
            if (ls.labels[order[k]] == 1) rank_sum_abnormal += midrank;
        i = j + 1;
    }
    const double u = rank_sum_abnormal -
                     0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
    return u / (static_cast<double>(n1) * static_cast<double>(n0));
}

std::vector<RocPoint> roc_curve(const LabeledScores& ls) {
    ls.validate();
    const auto [n0, n1] = class_counts(ls);
    const std::size_t n = ls.size();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ls.scores[a] > ls.scores[b]; });

    std::vector<RocPoint> roc;
    roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && ls.scores[order[j + 1]] == ls.scores[order[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k)
            (ls.labels[order[k]] == 1 ? tp : fp) += 1;
        roc.push_back({static_cast<double>(fp) / static_cast<double>(n0),
                       static_cast<double>(tp) / static_cast<double>(n1),
                       ls.scores[order[i]]});
        i = j + 1;
    }
    return roc;
}

ClassHistogram histogram(const LabeledScores& ls, int bins) {
    ls.validate();
    if (bins < 1) throw ConfigError("histogram: bins must be >= 1");
    ClassHistogram h;
    h.lo = *std::min_element(ls.scores.begin(), ls.scores.end());
    h.hi = *std::max_element(ls.scores.begin(), ls.scores.end());
    h.normal.assign(bins, 0.0);
    h.abnormal.assign(bins, 0.0);
    const double width = h.hi > h.lo ? (h.hi - h.lo) / bins : 1.0;
    double n0 = 0.0, n1 = 0.0;
    for (std::size_t i = 0; i < ls.size(); ++i) {
        int b = static_cast<int>((ls.scores[i] - h.lo) / width);
        b = std::clamp(b, 0, bins - 1); // max value lands in the last bin
        if (ls.labels[i] == 1) {
            h.abnormal[b] += 1.0;
            n1 += 1.0;
        } else {
            h.normal[b] += 1.0;
            n0 += 1.0;
        }
    }
    if (n0 > 0)
        for (double& v : h.normal) v /= n0;
    if (n1 > 0)
        for (double& v : h.abnormal) v /= n1;
    return h;
}

EvalReport evaluate(const LabeledScores& ls, int bins) {
    EvalReport r;
    r.auc_value = auc(ls);
    const auto [n0, n1] = class_counts(ls);
    r.n_normal = n0;
    r.n_abnormal = n1;
    r.roc = roc_curve(ls);
    r.hist = histogram(ls, bins);
    return r;
}

void write_report(const EvalReport& r, std::ostream& out) {
    out.precision(17);
    out << "auc " << r.auc_value << "\n";
    out << "n_normal " << r.n_normal << "\n";
    out << "n_abnormal " << r.n_abnormal << "\n";
    out << "roc_points " << r.roc.size() << "\n";
    out << "hist_bins " << r.hist.normal.size() << "\n";
    out << "hist_lo " << r.hist.lo << "\n";
    out << "hist_hi " << r.hist.hi << "\n";
    out << "hist_normal";
    for (double v : r.hist.normal) out << " " << v;
    out << "\n";
    out << "hist_abnormal";
    for (double v : r.hist.abnormal) out << " " << v;
    out << "\n";
}

void write_roc_tsv(const std::vector<RocPoint>& roc, std::ostream& out) {
    out.precision(17);
    out << "fpr\ttpr\tthreshold\n";
    for (const auto& p : roc) out << p.fpr << "\t" << p.tpr << "\t" << p.threshold << "\n";
}

} // namespace vnd
