#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "signflow/encoders.hpp"
#include "signflow/sequence.hpp"

namespace signflow {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MotifConfig {
    std::size_t vocab_size = 20;
    std::size_t joints = 8;
    std::size_t coords = 2;
    std::size_t motif_frames = 8;     // L_m
    std::size_t transition_frames = 2;
    double delta_std = 0.35;          // per-frame random-walk step
    double start_std = 0.6;           // motif starting offset
};

// Per-token ground-truth keypoint pattern: a smoothed seeded random walk,
// rescaled so the framewise step std stays at delta_std.
struct MotifTable {
    MotifConfig cfg;
    std::vector<std::vector<double>> motifs; // vocab_size entries, L_m * J * C each

    const std::vector<double>& motif(std::size_t token) const { return motifs.at(token); }
};

MotifTable build_motif_table(const MotifConfig& cfg, std::uint64_t seed);

struct CorpusSample {
    std::size_t sample_id = 0;
    TextTokens tokens;
    std::optional<AudioFeatureSeq> audio;
    SignSequence sign;
};

// Expected frame count of a clean synthetic sequence.
std::size_t synthetic_frames(std::size_t token_count, const MotifConfig& cfg);

CorpusSample synthesize_sample(const TextTokens& tokens, const MotifTable& table,
                               std::uint64_t seed, bool with_audio, const FeatureConfig& fcfg);

// Greedy nearest-motif segmentation of a clean synthetic sequence; the
// independent reference that back-translation quality is measured against.
std::vector<std::size_t> recover_tokens_by_motif(const SignSequence& s, const MotifTable& table);

struct Normalizer {
    std::vector<double> mean; // per coordinate, J*C entries
    std::vector<double> stdev;

    void apply(SignSequence& s) const;
    void invert(SignSequence& s) const;
};

// Two-pass per-coordinate statistics over every frame of the given samples.
// warn is called once per std-floored coordinate.
Normalizer fit_normalizer(const std::vector<const SignSequence*>& train,
                          const std::function<void(const std::string&)>& warn = {});

struct DatasetSplit {
    std::vector<std::size_t> train, dev, test;
    double audio_missing_fraction = 0.0;
};

struct CorpusConfig {
    MotifConfig motif;
    FeatureConfig features;
    std::size_t sample_count = 2000;
    std::size_t min_tokens = 2;
    std::size_t max_tokens = 6;
    double audio_missing_fraction = 0.3;
    double dev_fraction = 0.05;
    double test_fraction = 0.10;
    std::size_t max_token_filter = 20; // samples above this word count are dropped
};

struct Corpus {
    CorpusConfig cfg;
    std::uint64_t seed = 0;
    MotifTable table;
    std::vector<CorpusSample> samples; // normalized signs
    std::vector<bool> audio_present;   // per sample
    DatasetSplit split;
    Normalizer normalizer;
    std::vector<double> mean_first_pose;   // J*C, normalized space, over train split
    std::vector<double> mean_sequence;     // canonical-length mean sequence, train split
    std::size_t mean_sequence_frames = 0;
};

// Deterministic in (cfg, seed): token strings, audio presence, splits,
// normalization, and summary statistics.
Corpus synthesize_corpus(const CorpusConfig& cfg, std::uint64_t seed);

// ---- on-disk formats ----
// Sequence file: magic "SGSQ1", LE u32 frames, u32 joints, u32 coords,
// f32 frame_rate, then frames*joints*coords LE f32 values.
void serialize_sequence(const SignSequence& s, const std::string& path);
SignSequence deserialize_sequence(const std::string& path);

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

// ---- padding ----
struct PaddedBatch {
    std::size_t batch = 0, max_frames = 0, frame_width = 0;
    std::vector<double> values;       // batch x max_frames x frame_width, zero padded
    std::vector<std::uint8_t> valid;  // batch x max_frames
};

PaddedBatch batch_pad(const std::vector<const SignSequence*>& samples, std::size_t max_len);

// Mean over valid frames of squared error, per sample, averaged over the batch.
double masked_mse(const PaddedBatch& a, const PaddedBatch& b);

// Uniform temporal resampling by linear interpolation along the frame axis.
std::vector<double> resample_frames(const std::vector<double>& x, std::size_t frames,
                                    std::size_t width, std::size_t target);

} // namespace signflow
