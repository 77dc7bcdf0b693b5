#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "vnd/tensor.hpp"

namespace vnd {

/// Scores with binary labels, 1 = abnormal/novel. AUC needs both classes.
struct LabeledScores {
    VecD scores;
    std::vector<int> labels;

    std::size_t size() const { return scores.size(); }
    void validate() const; // lengths match, labels in {0,1}
};

/// Mann-Whitney AUC: P(score_abnormal > score_normal) + 1/2 P(equal),
/// computed via midranks. Identical to the trapezoidal area under roc_curve.
double auc(const LabeledScores& ls);

struct RocPoint {
    double fpr;
    double tpr;
    double threshold; // classify as abnormal when score >= threshold
};

/// All distinct-threshold operating points, including (0,0) and (1,1).
/// Tied scores collapse into a single point.
std::vector<RocPoint> roc_curve(const LabeledScores& ls);

struct ClassHistogram {
    double lo = 0.0, hi = 0.0; // shared range over both classes
    VecD normal;               // each class normalized to sum 1
    VecD abnormal;
};

ClassHistogram histogram(const LabeledScores& ls, int bins);

struct EvalReport {
    double auc_value = 0.0;
    std::size_t n_normal = 0;
    std::size_t n_abnormal = 0;
    std::vector<RocPoint> roc;
    ClassHistogram hist;
};

EvalReport evaluate(const LabeledScores& ls, int bins = 50);

/// Key-value report text plus flat tables for external plotting.
void write_report(const EvalReport& r, std::ostream& out);
void write_roc_tsv(const std::vector<RocPoint>& roc, std::ostream& out);

} // namespace vnd
