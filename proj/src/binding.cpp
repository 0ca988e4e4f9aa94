#include "signflow/binding.hpp"

#include <algorithm>
#include <cmath>

namespace signflow {

namespace {

void check_unit(const TensorPtr& v, const char* who) {
    double s = 0.0;
    for (double x : v->data) s += x * x;
    if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
        throw ContractError(std::string(who) + ": embedding is not unit norm (|v| = " +
                            std::to_string(std::sqrt(s)) + ")");
}

TensorPtr stack_embeddings(const std::vector<TensorPtr>& embs) {
    std::vector<TensorPtr> rows;
    rows.reserve(embs.size());
    for (const auto& e : embs) rows.push_back(reshape(e, {1, e->size()}));
    return concat_rows(rows);
}

} // namespace

TensorPtr cosine_sim(const TensorPtr& a, const TensorPtr& b) {
    if (a->size() != b->size())
        throw ContractError("cosine_sim: length mismatch: " + shape_str(a->shape) + " vs " +
                            shape_str(b->shape));
    check_unit(a, "cosine_sim");
    check_unit(b, "cosine_sim");
    return dot(a, b);
}

TensorPtr info_nce_loss(const PairBatch& batch, double temperature, bool symmetric) {
    if (temperature <= 0.0)
        throw ContractError("info_nce_loss: temperature must be positive, got " +
                            std::to_string(temperature));
    if (batch.anchors.size() != batch.positives.size())
        throw ContractError("info_nce_loss: anchor/positive count mismatch: " +
                            std::to_string(batch.anchors.size()) + " vs " +
                            std::to_string(batch.positives.size()));
    if (batch.anchors.size() < 2)
        throw ContractError("info_nce_loss: batch size must be >= 2 so negatives exist");
    for (const auto& e : batch.anchors) check_unit(e, "info_nce_loss");
    for (const auto& e : batch.positives) check_unit(e, "info_nce_loss");
    const std::size_t n = batch.anchors.size();
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    TensorPtr a = stack_embeddings(batch.anchors);
    TensorPtr p = stack_embeddings(batch.positives);
    TensorPtr fwd = cross_entropy_rows(scale(matmul_nt(a, p), 1.0 / temperature), ids);
    if (!symmetric) return fwd;
    TensorPtr bwd = cross_entropy_rows(scale(matmul_nt(p, a), 1.0 / temperature), ids);
    return scale(add(fwd, bwd), 0.5);
}

TensorPtr triadic_loss(const std::vector<std::pair<ModalPair, PairBatch>>& batches,
                       const BindingConfig& cfg) {
    if (cfg.active_pairs.empty())
        throw ContractError("triadic_loss: no active modality pairs configured");
    TensorPtr total;
    for (const auto& [pair, batch] : batches) {
        const bool active = std::find(cfg.active_pairs.begin(), cfg.active_pairs.end(), pair) !=
                            cfg.active_pairs.end();
        if (!active || batch.anchors.size() < 2) continue;
        TensorPtr term = info_nce_loss(batch, cfg.temperature, cfg.symmetric);
        total = total ? add(total, term) : term;
    }
    return total ? total : scalar(0.0);
}

double emergent_alignment_score(const std::vector<std::vector<double>>& text_embs,
                                const std::vector<std::vector<double>>& audio_embs) {
    const std::size_t n = text_embs.size();
    if (n != audio_embs.size())
        throw ContractError("emergent_alignment_score: count mismatch");
    if (n < 2) throw ContractError("emergent_alignment_score: need at least 2 items");
    auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    double matched = 0.0, mismatched = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        matched += cos(text_embs[i], audio_embs[i]);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) mismatched += cos(text_embs[i], audio_embs[j]);
    }
    matched /= static_cast<double>(n);
    mismatched /= static_cast<double>(n * (n - 1));
    return matched - mismatched;
}

} // namespace signflow
