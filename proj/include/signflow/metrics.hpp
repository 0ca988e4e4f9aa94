#pragma once

#include <cstddef>
#include <vector>

#include "signflow/sequence.hpp"

namespace signflow {

// Mean squared coordinate error; pred is resampled to the reference length
// when the frame counts differ.
double keypoint_mse(const SignSequence& pred, const SignSequence& gt);

// Dynamic time warping with per-frame Euclidean distance and the standard
// three-move recurrence, normalized by warping path length.
double dtw_distance(const SignSequence& a, const SignSequence& b);

// Cumulative BLEU-n: clipped n-gram precision, uniform geometric mean over
// 1..n, brevity penalty exp(1 - r/c) when c < r. Empty hypothesis scores 0.
double bleu_n(const std::vector<std::size_t>& hypothesis,
              const std::vector<std::size_t>& reference, std::size_t n);

// LCS-based F1 with beta = 1.
double rouge_l_f1(const std::vector<std::size_t>& hypothesis,
                  const std::vector<std::size_t>& reference);

} // namespace signflow
