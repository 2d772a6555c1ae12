#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "scanet/data.hpp"
#include "scanet/metrics.hpp"
#include "scanet/model.hpp"
#include "scanet/tensor.hpp"

namespace scanet {

struct TrainConfig {
    int max_epochs = 200;
    int batch_size = 12;
    float learning_rate = 1e-4f;
    float weight_decay = 1e-4f;
    int patience = 20;        // epochs without val-loss improvement
    float min_delta = 1e-4f;  // improvement below this does not count
    float val_fraction = 0.15f;
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError
};

struct TrainHistory {
    std::vector<float> train_loss;
    std::vector<float> val_loss;
    std::vector<float> val_auc;  // NaN when the val split is single-class
    int best_epoch = -1;         // 0-based index into the vectors
    std::string stop_reason;     // "early-stopping" or "max-epochs"
};

// "epoch,train_loss,val_loss,val_auc" rows, epochs 1-based.
std::string history_csv(const TrainHistory& history);

// Mean of -log p[label] over the batch, with p clamped to at least 1e-7;
// clamped entries get zero gradient.
Tensor cross_entropy_loss(const Tensor& probabilities,
                          const std::vector<int>& labels);

// Decision logic of validation-loss early stopping, separated so the
// contract is testable on a bare loss sequence.
struct EarlyStopper {
    int patience;
    float min_delta;
    int best_epoch = -1;
    float best_loss = std::numeric_limits<float>::infinity();
    int bad_epochs = 0;

    // Returns true when training should stop after this epoch. `improved`
    // is set when this epoch became the new best.
    bool observe(int epoch, float val_loss, bool* improved = nullptr) {
        if (val_loss < best_loss - min_delta) {
            best_loss = val_loss;
            best_epoch = epoch;
            bad_epochs = 0;
            if (improved) *improved = true;
            return false;
        }
        if (improved) *improved = false;
        return ++bad_epochs >= patience;
    }
};

// Minibatch AdamW training with a stratified internal validation split and
// best-epoch weight restore. Deterministic given (model state, cfg.seed).
// `labels` ride alongside `studies` so callers can substitute permuted
// labels without copying volumes.
TrainHistory train(SCANet& model, const std::vector<const PatientStudy*>& studies,
                   const std::vector<int>& labels, const TrainConfig& cfg);

struct CvOptions {
    bool permute_labels = false;  // null-signal control
};

struct CvResult {
    EvalReport report;
    std::vector<TrainHistory> histories;
    std::vector<std::vector<int>> folds;
    std::vector<int> labels_used;  // after any permutation
};

// k-fold stratified cross-validation: each fold trains a fresh model on the
// other folds and is scored on the held-out studies at threshold 0.5.
CvResult cross_validate(const std::vector<PatientStudy>& cohort, int k,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const CvOptions& options = {});

}  // namespace scanet
