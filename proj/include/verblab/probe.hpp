#pragma once

#include "verblab/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace verblab {

struct ProbeConfig {
    double l1_weight = 0.5;
    double l2_weight = 0.5;
    int iterations = 5;  // full-batch proximal gradient steps
    std::uint64_t seed = 0;
    bool standardize = true;  // z-score features with statistics of the training set
    void validate() const;
};

// Multinomial logistic probe. Scores are weights^T * z(x) + bias over the label list.
struct Probe {
    std::vector<std::string> labels;
    int dim = 0;
    Mat weights;  // dim x n_labels
    std::vector<float> bias;
    std::vector<float> mean, inv_std;  // feature standardisation (identity when disabled)
    int layer = 0;                     // capture layer the probe was trained on, 0 if unknown

    int n_labels() const { return static_cast<int>(labels.size()); }
    std::vector<double> scores(std::span<const float> act) const;
};

// Objective: mean cross-entropy + (l1 * |W|_1 + l2/2 * |W|^2) / n, minimised by proximal gradient
// with soft-thresholding. The bias is not penalised.
Probe train_probe(std::span<const ActivationVector> acts, std::span<const std::string> labels, const ProbeConfig & cfg);

// Argmax of the scores; ties go to the lowest label index.
std::string probe_predict(const Probe & probe, const ActivationVector & act);
int probe_predict_index(const Probe & probe, std::span<const float> act);

void save_probe(const Probe & probe, const std::filesystem::path & path);
Probe load_probe(const std::filesystem::path & path);

struct LabelStats {
    std::string label;
    int support = 0;
    int predicted = 0;
    int correct = 0;
    double precision() const { return predicted ? static_cast<double>(correct) / predicted : 0.0; }
    double recall() const { return support ? static_cast<double>(correct) / support : 0.0; }
};

struct ClassificationReport {
    std::vector<LabelStats> per_label;
    int n = 0;
    int correct = 0;
    double accuracy() const { return n ? static_cast<double>(correct) / n : 0.0; }
};

ClassificationReport classification_report(const Probe & probe, std::span<const ActivationVector> acts,
                                           std::span<const std::string> gold);
// Columns: label,support,predicted,correct,precision,recall
void write_classification_csv(const std::filesystem::path & path, const ClassificationReport & report);

} // namespace verblab
