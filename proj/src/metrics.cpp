#include "signflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "signflow/data.hpp"
#include "signflow/tensor.hpp"

namespace signflow {

double keypoint_mse(const SignSequence& pred, const SignSequence& gt) {
    if (pred.joints != gt.joints || pred.coords != gt.coords)
        throw ContractError("keypoint_mse: joint/coordinate layout mismatch: " +
                            std::to_string(pred.joints) + "x" + std::to_string(pred.coords) +
                            " vs " + std::to_string(gt.joints) + "x" +
                            std::to_string(gt.coords));
    if (pred.frames() == 0 || gt.frames() == 0)
        throw ContractError("keypoint_mse: empty sequence");
    const std::size_t width = gt.frame_width();
    std::vector<double> p = pred.frames() == gt.frames()
                                ? pred.data
                                : resample_frames(pred.data, pred.frames(), width, gt.frames());
    double err = 0.0;
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        const double d = p[i] - gt.data[i];
        err += d * d;
    }
    return err / static_cast<double>(gt.data.size());
}

double dtw_distance(const SignSequence& a, const SignSequence& b) {
    if (a.joints != b.joints || a.coords != b.coords)
        throw ContractError("dtw_distance: joint/coordinate layout mismatch");
    const std::size_t n = a.frames(), m = b.frames();
    if (n == 0 || m == 0) throw ContractError("dtw_distance: empty sequence");
    const std::size_t width = a.frame_width();
    auto frame_dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        const double* fa = a.frame(i);
        const double* fb = b.frame(j);
        for (std::size_t c = 0; c < width; ++c) {
            const double d = fa[c] - fb[c];
            s += d * d;
        }
        return std::sqrt(s);
    };
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev_cost(m + 1, inf), cur_cost(m + 1, inf);
    std::vector<std::size_t> prev_len(m + 1, 0), cur_len(m + 1, 0);
    prev_cost[0] = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        cur_cost.assign(m + 1, inf);
        cur_len.assign(m + 1, 0);
        for (std::size_t j = 1; j <= m; ++j) {
            const double d = frame_dist(i - 1, j - 1);
            double best = prev_cost[j - 1];
            std::size_t blen = prev_len[j - 1];
            if (prev_cost[j] < best) {
                best = prev_cost[j];
                blen = prev_len[j];
            }
            if (cur_cost[j - 1] < best) {
                best = cur_cost[j - 1];
                blen = cur_len[j - 1];
            }
            cur_cost[j] = best + d;
            cur_len[j] = blen + 1;
        }
        std::swap(prev_cost, cur_cost);
        std::swap(prev_len, cur_len);
    }
    return prev_cost[m] / static_cast<double>(prev_len[m]);
}

namespace {

using Ngram = std::vector<std::size_t>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::size_t>& toks, std::size_t n) {
    std::map<Ngram, std::size_t> counts;
    if (toks.size() < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i)
        counts[Ngram(toks.begin() + static_cast<std::ptrdiff_t>(i),
                     toks.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1;
    return counts;
}

} // namespace

double bleu_n(const std::vector<std::size_t>& hypothesis,
              const std::vector<std::size_t>& reference, std::size_t n) {
    if (n == 0) throw ContractError("bleu_n: order must be >= 1");
    if (hypothesis.empty()) return 0.0;
    double log_prec_sum = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
        const auto hyp = ngram_counts(hypothesis, k);
        const auto ref = ngram_counts(reference, k);
        std::size_t total = 0, clipped = 0;
        for (const auto& [gram, count] : hyp) {
            total += count;
            const auto it = ref.find(gram);
            if (it != ref.end()) clipped += std::min(count, it->second);
        }
        if (total == 0 || clipped == 0) return 0.0;
        log_prec_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
    }
    double bleu = std::exp(log_prec_sum / static_cast<double>(n));
    const double c = static_cast<double>(hypothesis.size());
    const double r = static_cast<double>(reference.size());
    if (c < r) bleu *= std::exp(1.0 - r / c);
    return bleu;
}

double rouge_l_f1(const std::vector<std::size_t>& hypothesis,
                  const std::vector<std::size_t>& reference) {
    if (reference.empty()) throw ContractError("rouge_l_f1: empty reference");
    if (hypothesis.empty()) return 0.0;
    const std::size_t n = hypothesis.size(), m = reference.size();
    std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            if (hypothesis[i - 1] == reference[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[m]);
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(n);
    const double r = lcs / static_cast<double>(m);
    return 2.0 * p * r / (p + r);
}

} // namespace signflow
