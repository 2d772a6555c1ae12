#include "scanet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "scanet/optimizer.hpp"

namespace scanet {

namespace detail {
Tensor make_result(Shape shape, std::vector<float> data,
                   std::vector<NodePtr> parents,
                   std::function<void(TensorImpl&)> backward_fn);
}

void TrainConfig::validate() const {
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(learning_rate > 0.0f)) throw ConfigError("learning_rate must be positive");
    if (weight_decay < 0.0f) throw ConfigError("weight_decay must be non-negative");
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (min_delta < 0.0f) throw ConfigError("min_delta must be non-negative");
    if (!(val_fraction > 0.0f && val_fraction < 0.5f))
        throw ConfigError("val_fraction must lie in (0, 0.5)");
}

std::string history_csv(const TrainHistory& history) {
    std::string out = "epoch,train_loss,val_loss,val_auc\n";
    char line[128];
    for (std::size_t e = 0; e < history.train_loss.size(); ++e) {
        std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g\n", e + 1,
                      static_cast<double>(history.train_loss[e]),
                      static_cast<double>(history.val_loss[e]),
                      static_cast<double>(history.val_auc[e]));
        out += line;
    }
    return out;
}

Tensor cross_entropy_loss(const Tensor& probabilities,
                          const std::vector<int>& labels) {
    if (probabilities.rank() != 2 || probabilities.dim(1) != 2)
        throw ShapeError("cross_entropy_loss: expected [B x 2], got " +
                         shape_str(probabilities.shape()));
    const int b = probabilities.dim(0);
    if (static_cast<int>(labels.size()) != b)
        throw ArgumentError("cross_entropy_loss: " + std::to_string(labels.size()) +
                            " labels for batch of " + std::to_string(b));
    for (int l : labels)
        if (l != 0 && l != 1)
            throw ArgumentError("cross_entropy_loss: label must be 0 or 1");

    constexpr float kFloor = 1e-7f;
    const auto& p = probabilities.data();
    double acc = 0.0;
    for (int i = 0; i < b; ++i)
        acc -= std::log(static_cast<double>(
            std::max(p[static_cast<std::size_t>(2 * i + labels[i])], kFloor)));
    const float value = static_cast<float>(acc / b);

    NodePtr pi = probabilities.impl();
    return detail::make_result(
        {1}, {value}, {pi}, [pi, labels, b](TensorImpl& self) {
            if (!pi->requires_grad) return;
            pi->ensure_grad();
            const float g = self.grad[0];
            for (int i = 0; i < b; ++i) {
                const std::size_t at = static_cast<std::size_t>(2 * i + labels[i]);
                const float prob = pi->data[at];
                if (prob > kFloor)
                    pi->grad[at] += g * (-1.0f / (static_cast<float>(b) * prob));
            }
        });
}

namespace {

// Stratified index split: each class contributes round(fraction * count)
// validation members (at least one, never all).
void split_train_val(const std::vector<int>& labels, float fraction, Rng& rng,
                     std::vector<int>& train_idx, std::vector<int>& val_idx) {
    std::vector<int> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(static_cast<int>(i));
    for (int c = 0; c < 2; ++c) {
        auto& members = by_class[c];
        if (members.empty()) continue;
        rng.shuffle(members);
        int take = static_cast<int>(
            std::lround(fraction * static_cast<double>(members.size())));
        take = std::min(static_cast<int>(members.size()) - 1, std::max(1, take));
        for (std::size_t i = 0; i < members.size(); ++i)
            (i < static_cast<std::size_t>(take) ? val_idx : train_idx)
                .push_back(members[i]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
}

struct EvalOutcome {
    float loss = 0.0f;
    std::vector<double> p1;
};

EvalOutcome evaluate(SCANet& model, const std::vector<Tensor>& tensors,
                     const std::vector<int>& labels, const std::vector<int>& idx) {
    NoGradGuard ng;
    EvalOutcome out;
    std::vector<Tensor> rows;
    std::vector<int> batch_labels;
    for (int i : idx) {
        Tensor probs = model.forward(tensors[static_cast<std::size_t>(i)]);
        out.p1.push_back(static_cast<double>(probs.data()[1]));
        rows.push_back(probs);
        batch_labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
    out.loss = cross_entropy_loss(stack0(rows), batch_labels).item();
    return out;
}

}  // namespace

TrainHistory train(SCANet& model, const std::vector<const PatientStudy*>& studies,
                   const std::vector<int>& labels, const TrainConfig& cfg) {
    cfg.validate();
    if (studies.empty()) throw ArgumentError("train: empty dataset");
    if (studies.size() != labels.size())
        throw ArgumentError("train: " + std::to_string(labels.size()) +
                            " labels for " + std::to_string(studies.size()) +
                            " studies");
    int class_count[2] = {0, 0};
    for (int l : labels) {
        if (l != 0 && l != 1) throw ArgumentError("train: label must be 0 or 1");
        ++class_count[l];
    }
    if (class_count[0] == 0 || class_count[1] == 0)
        throw ArgumentError("train: both classes must be present");

    std::vector<Tensor> tensors;
    tensors.reserve(studies.size());
    for (const PatientStudy* s : studies) tensors.push_back(study_tensor(*s));

    Rng split_rng(mix_seed(cfg.seed, 1));
    std::vector<int> train_idx, val_idx;
    split_train_val(labels, cfg.val_fraction, split_rng, train_idx, val_idx);

    Rng shuffle_rng(mix_seed(cfg.seed, 2));
    Rng dropout_rng(mix_seed(cfg.seed, 3));
    Rng* dropout = model.config().dropout > 0.0f ? &dropout_rng : nullptr;

    std::vector<Tensor> params;
    for (auto& [name, t] : model.parameters()) params.push_back(t);
    OptimizerState state = OptimizerState::for_params(params);
    AdamWConfig opt;
    opt.lr = cfg.learning_rate;
    opt.weight_decay = cfg.weight_decay;

    TrainHistory history;
    EarlyStopper stopper{cfg.patience, cfg.min_delta};
    std::vector<std::vector<float>> best_params;
    history.stop_reason = "max-epochs";

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(train_idx);
        double loss_acc = 0.0;
        for (std::size_t start = 0; start < train_idx.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(train_idx.size(), start + cfg.batch_size);
            std::vector<Tensor> rows;
            std::vector<int> batch_labels;
            for (std::size_t i = start; i < stop; ++i) {
                const int idx = train_idx[i];
                Tensor probs =
                    model.forward(tensors[static_cast<std::size_t>(idx)], nullptr,
                                  dropout);
                rows.push_back(probs);
                batch_labels.push_back(labels[static_cast<std::size_t>(idx)]);
            }
            Tensor loss = cross_entropy_loss(stack0(rows), batch_labels);
            model.zero_grad();
            backward(loss);
            adamw_step(params, state, opt);
            loss_acc += static_cast<double>(loss.item()) *
                        static_cast<double>(stop - start);
        }
        history.train_loss.push_back(
            static_cast<float>(loss_acc / static_cast<double>(train_idx.size())));

        const EvalOutcome val = evaluate(model, tensors, labels, val_idx);
        history.val_loss.push_back(val.loss);
        float auc = std::numeric_limits<float>::quiet_NaN();
        std::vector<int> val_labels;
        for (int i : val_idx) val_labels.push_back(labels[static_cast<std::size_t>(i)]);
        try {
            auc = static_cast<float>(roc_auc(val.p1, val_labels));
        } catch (const MetricError&) {
        }
        history.val_auc.push_back(auc);

        bool improved = false;
        const bool stop = stopper.observe(epoch, val.loss, &improved);
        if (improved) {
            best_params.clear();
            for (const Tensor& t : params) best_params.push_back(t.data());
        }
        if (stop) {
            history.stop_reason = "early-stopping";
            break;
        }
    }

    history.best_epoch = stopper.best_epoch;
    if (!best_params.empty())
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i].data() = best_params[i];
    return history;
}

CvResult cross_validate(const std::vector<PatientStudy>& cohort, int k,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const CvOptions& options) {
    train_cfg.validate();
    model_cfg.validate();
    CvResult result;
    result.labels_used.reserve(cohort.size());
    for (const auto& s : cohort) result.labels_used.push_back(s.label);
    if (options.permute_labels) {
        Rng perm_rng(mix_seed(train_cfg.seed, 4));
        perm_rng.shuffle(result.labels_used);
    }

    result.folds = stratified_kfold(result.labels_used, k, train_cfg.seed);

    std::vector<FoldMetrics> fold_metrics;
    for (std::size_t f = 0; f < result.folds.size(); ++f) {
        std::vector<char> held(cohort.size(), 0);
        for (int i : result.folds[f]) held[static_cast<std::size_t>(i)] = 1;

        std::vector<const PatientStudy*> train_studies;
        std::vector<int> train_labels;
        for (std::size_t i = 0; i < cohort.size(); ++i) {
            if (held[i]) continue;
            train_studies.push_back(&cohort[i]);
            train_labels.push_back(result.labels_used[i]);
        }

        SCANet model(model_cfg, mix_seed(train_cfg.seed, 100 + f));
        TrainConfig fold_cfg = train_cfg;
        fold_cfg.seed = mix_seed(train_cfg.seed, 200 + f);
        result.histories.push_back(
            train(model, train_studies, train_labels, fold_cfg));

        NoGradGuard ng;
        std::vector<double> p1;
        std::vector<int> fold_labels;
        for (int i : result.folds[f]) {
            Tensor probs =
                model.forward(study_tensor(cohort[static_cast<std::size_t>(i)]));
            p1.push_back(static_cast<double>(probs.data()[1]));
            fold_labels.push_back(result.labels_used[static_cast<std::size_t>(i)]);
        }
        FoldMetrics fm;
        fm.roc_auc = roc_auc(p1, fold_labels);
        const ThresholdMetrics tm = confusion_metrics(p1, fold_labels, 0.5);
        fm.accuracy = tm.accuracy;
        fm.precision = tm.precision;
        fm.sensitivity = tm.sensitivity;
        fm.specificity = tm.specificity;
        fm.counts = tm.counts;
        fold_metrics.push_back(fm);
    }

    result.report = aggregate_report(fold_metrics);
    return result;
}

}  // namespace scanet
