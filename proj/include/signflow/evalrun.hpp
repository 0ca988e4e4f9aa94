#pragma once

#include <optional>
#include <string>
#include <vector>

#include "signflow/backtrans.hpp"
#include "signflow/checkpoint.hpp"
#include "signflow/data.hpp"
#include "signflow/diffusion.hpp"
#include "signflow/ecl.hpp"

namespace signflow {

struct EvaluationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MetricReport {
    double bleu1 = 0.0, bleu2 = 0.0, bleu3 = 0.0, bleu4 = 0.0;
    double rouge_l = 0.0;
    double keypoint_mse = 0.0;
    double dtw = 0.0;
    std::size_t sample_count = 0;
    // exact-recovery rate of the back-translator on the clean evaluation
    // signs, reported so translator quality is visible next to the scores
    double bt_reference_accuracy = 0.0;
};

std::string format_report(const MetricReport& r);
MetricReport parse_report(const std::string& text);

// Conditioning embedding for a sample. Audio conditioning falls back to the
// mapping network when the sample has no audio track.
TensorPtr condition_embedding(const PredictorModel& model, const Corpus& corpus,
                              const CorpusSample& sample, Modality modality);

// Number of evaluation worker threads: min(hardware, SIGNFLOW_THREADS).
std::size_t eval_thread_count();

// Generates (averaged) for every listed sample, back-translates, and reports
// split means. Per-sample seeds derive from (gen.seed, sample id), so the
// report does not depend on the thread count.
MetricReport evaluate_run(const PredictorModel& model, const Corpus& corpus,
                          const std::vector<std::size_t>& sample_ids, const BackTranslator& bt,
                          const DiffusionSchedule& schedule, const GenerationConfig& gen,
                          Modality modality, bool ground_truth_as_prediction = false);

// ---- whole-artifact checkpoints ----
struct ModelStats {
    std::vector<double> mean_first_pose;
    std::vector<double> norm_mean;
    std::vector<double> norm_std;
    std::vector<double> mean_sequence;
    std::size_t mean_sequence_frames = 0;
};

ModelStats stats_from_corpus(const Corpus& corpus);

void save_model_checkpoint(const std::string& path, const PredictorModel& model,
                           const OptimizerState& opt, const EmaState& ema,
                           const ModelStats& stats,
                           const std::map<std::string, std::string>& extra_config = {});

struct LoadedModel {
    PredictorModel model;
    OptimizerState opt;
    EmaState ema;
    ModelStats stats;
    bool ema_loaded = false;
};

LoadedModel load_model_checkpoint(const std::string& path, bool use_ema);

void save_bt_checkpoint(const std::string& path, const BackTranslator& bt);
BackTranslator load_bt_checkpoint(const std::string& path);

} // namespace signflow
