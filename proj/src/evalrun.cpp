#include "signflow/evalrun.hpp"

#include <cstdlib>
#include <sstream>
#include <thread>

#include "signflow/metrics.hpp"
#include "signflow/rng.hpp"

namespace signflow {

namespace {

constexpr std::uint64_t kTagFeatures = 0x66656174ull;
constexpr std::uint64_t kTagEvalSample = 0x6576616cull;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

std::string format_report(const MetricReport& r) {
    std::ostringstream os;
    os << "bleu1=" << fmt(r.bleu1) << "\n";
    os << "bleu2=" << fmt(r.bleu2) << "\n";
    os << "bleu3=" << fmt(r.bleu3) << "\n";
    os << "bleu4=" << fmt(r.bleu4) << "\n";
    os << "rouge_l=" << fmt(r.rouge_l) << "\n";
    os << "keypoint_mse=" << fmt(r.keypoint_mse) << "\n";
    os << "dtw=" << fmt(r.dtw) << "\n";
    os << "sample_count=" << r.sample_count << "\n";
    os << "bt_reference_accuracy=" << fmt(r.bt_reference_accuracy) << "\n";
    return os.str();
}

MetricReport parse_report(const std::string& text) {
    MetricReport r;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "bleu1") r.bleu1 = std::stod(val);
        else if (key == "bleu2") r.bleu2 = std::stod(val);
        else if (key == "bleu3") r.bleu3 = std::stod(val);
        else if (key == "bleu4") r.bleu4 = std::stod(val);
        else if (key == "rouge_l") r.rouge_l = std::stod(val);
        else if (key == "keypoint_mse") r.keypoint_mse = std::stod(val);
        else if (key == "dtw") r.dtw = std::stod(val);
        else if (key == "sample_count") r.sample_count = std::stoul(val);
        else if (key == "bt_reference_accuracy") r.bt_reference_accuracy = std::stod(val);
    }
    return r;
}

TensorPtr condition_embedding(const PredictorModel& model, const Corpus& corpus,
                              const CorpusSample& sample, Modality modality) {
    TensorPtr text_feats =
        make_tensor({sample.tokens.ids.size(), corpus.cfg.features.text_feat_dim},
                    extract_text_features(sample.tokens, derive_seed(corpus.seed, kTagFeatures),
                                          corpus.cfg.features));
    if (modality == Modality::text) return model.encode_text_features(text_feats);
    if (sample.audio) {
        TensorPtr audio_feats = make_tensor(
            {sample.audio->frame_count(), sample.audio->feat_dim}, sample.audio->frames);
        return model.encode_audio_features(audio_feats);
    }
    return model.map_to_pseudo_audio(model.encode_text_features(text_feats));
}

std::size_t eval_thread_count() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SIGNFLOW_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
    }
    return n;
}

MetricReport evaluate_run(const PredictorModel& model, const Corpus& corpus,
                          const std::vector<std::size_t>& sample_ids, const BackTranslator& bt,
                          const DiffusionSchedule& schedule, const GenerationConfig& gen,
                          Modality modality, bool ground_truth_as_prediction) {
    if (sample_ids.empty()) throw EvaluationError("evaluate_run: no samples to evaluate");
    struct Row {
        double bleu1, bleu2, bleu3, bleu4, rouge, mse, dtw;
        bool clean_exact;
    };
    std::vector<Row> rows(sample_ids.size());
    auto work = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t i = begin; i < sample_ids.size(); i += stride) {
            const CorpusSample& sample = corpus.samples[sample_ids[i]];
            SignSequence pred;
            if (ground_truth_as_prediction) {
                pred = sample.sign;
            } else {
                TensorPtr cond = condition_embedding(model, corpus, sample, modality);
                GenerationConfig g = gen;
                g.seed = derive_seed(gen.seed, kTagEvalSample + sample.sample_id);
                pred = generate_averaged(cond, model, schedule, g, corpus.mean_first_pose,
                                         modality);
            }
            Row& r = rows[i];
            r.mse = keypoint_mse(pred, sample.sign);
            r.dtw = dtw_distance(pred, sample.sign);
            const std::vector<std::size_t> decoded = bt.decode(pred);
            r.bleu1 = bleu_n(decoded, sample.tokens.ids, 1);
            r.bleu2 = bleu_n(decoded, sample.tokens.ids, 2);
            r.bleu3 = bleu_n(decoded, sample.tokens.ids, 3);
            r.bleu4 = bleu_n(decoded, sample.tokens.ids, 4);
            r.rouge = rouge_l_f1(decoded, sample.tokens.ids);
            r.clean_exact = bt.decode(sample.sign) == sample.tokens.ids;
        }
    };
    const std::size_t threads = std::min(eval_thread_count(), sample_ids.size());
    if (threads <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
        for (auto& th : pool) th.join();
    }
    MetricReport report;
    report.sample_count = sample_ids.size();
    for (const Row& r : rows) {
        report.bleu1 += r.bleu1;
        report.bleu2 += r.bleu2;
        report.bleu3 += r.bleu3;
        report.bleu4 += r.bleu4;
        report.rouge_l += r.rouge;
        report.keypoint_mse += r.mse;
        report.dtw += r.dtw;
        report.bt_reference_accuracy += r.clean_exact ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(sample_ids.size());
    report.bleu1 /= n;
    report.bleu2 /= n;
    report.bleu3 /= n;
    report.bleu4 /= n;
    report.rouge_l /= n;
    report.keypoint_mse /= n;
    report.dtw /= n;
    report.bt_reference_accuracy /= n;
    return report;
}

ModelStats stats_from_corpus(const Corpus& corpus) {
    ModelStats s;
    s.mean_first_pose = corpus.mean_first_pose;
    s.norm_mean = corpus.normalizer.mean;
    s.norm_std = corpus.normalizer.stdev;
    s.mean_sequence = corpus.mean_sequence;
    s.mean_sequence_frames = corpus.mean_sequence_frames;
    return s;
}

namespace {

void put_model_config(Checkpoint& ckpt, const ModelConfig& cfg) {
    ckpt.config["kind"] = "model";
    ckpt.config["d_model"] = std::to_string(cfg.d_model);
    ckpt.config["heads"] = std::to_string(cfg.heads);
    ckpt.config["mlp_hidden"] = std::to_string(cfg.mlp_hidden);
    ckpt.config["text_feat_dim"] = std::to_string(cfg.text_feat_dim);
    ckpt.config["audio_feat_dim"] = std::to_string(cfg.audio_feat_dim);
    ckpt.config["joints"] = std::to_string(cfg.joints);
    ckpt.config["coords"] = std::to_string(cfg.coords);
    ckpt.config["steps"] = std::to_string(cfg.steps);
    ckpt.config["max_len"] = std::to_string(cfg.max_len);
    ckpt.config["producer_blocks"] = std::to_string(cfg.producer_blocks);
    ckpt.config["encoder_blocks"] = std::to_string(cfg.encoder_blocks);
}

ModelConfig model_config_from(const Checkpoint& ckpt) {
    auto get = [&](const char* key) {
        const auto it = ckpt.config.find(key);
        if (it == ckpt.config.end())
            throw LoadError(std::string("load_checkpoint: config key '") + key + "' missing");
        return static_cast<std::size_t>(std::stoul(it->second));
    };
    ModelConfig cfg;
    cfg.d_model = get("d_model");
    cfg.heads = get("heads");
    cfg.mlp_hidden = get("mlp_hidden");
    cfg.text_feat_dim = get("text_feat_dim");
    cfg.audio_feat_dim = get("audio_feat_dim");
    cfg.joints = get("joints");
    cfg.coords = get("coords");
    cfg.steps = get("steps");
    cfg.max_len = get("max_len");
    cfg.producer_blocks = get("producer_blocks");
    cfg.encoder_blocks = get("encoder_blocks");
    return cfg;
}

} // namespace

void save_model_checkpoint(const std::string& path, const PredictorModel& model,
                           const OptimizerState& opt, const EmaState& ema,
                           const ModelStats& stats,
                           const std::map<std::string, std::string>& extra_config) {
    Checkpoint ckpt;
    ckpt.ema_present = !ema.shadow.empty();
    put_model_config(ckpt, model.cfg);
    for (const auto& [k, v] : extra_config) ckpt.config[k] = v;
    ckpt.config["adam_lr"] = fmt(opt.lr);
    ckpt.config["adam_beta1"] = fmt(opt.beta1);
    ckpt.config["adam_beta2"] = fmt(opt.beta2);
    ckpt.config["adam_eps"] = fmt(opt.eps);
    ckpt.config["adam_step"] = std::to_string(opt.step);
    ckpt.config["ema_decay"] = fmt(ema.decay);
    ckpt.config["mean_sequence_frames"] = std::to_string(stats.mean_sequence_frames);
    append_store_entries(ckpt, "param.", model.params);
    if (!opt.m.empty()) {
        append_state_entries(ckpt, "adam.m.", model.params, opt.m);
        append_state_entries(ckpt, "adam.v.", model.params, opt.v);
    }
    if (ckpt.ema_present) append_state_entries(ckpt, "ema.", model.params, ema.shadow);
    append_raw_entry(ckpt, "stat.mean_first_pose", stats.mean_first_pose);
    append_raw_entry(ckpt, "stat.norm_mean", stats.norm_mean);
    append_raw_entry(ckpt, "stat.norm_std", stats.norm_std);
    append_raw_entry(ckpt, "stat.mean_sequence", stats.mean_sequence);
    write_checkpoint(ckpt, path);
}

LoadedModel load_model_checkpoint(const std::string& path, bool use_ema) {
    Checkpoint ckpt = read_checkpoint(path);
    if (ckpt.config.count("kind") && ckpt.config.at("kind") != "model")
        throw LoadError("load_model_checkpoint: file holds a '" + ckpt.config.at("kind") +
                        "' checkpoint");
    LoadedModel out{PredictorModel::build(model_config_from(ckpt), 0), {}, {}, {}, false};
    load_store_entries(ckpt, "param.", out.model.params);
    out.opt.lr = std::stod(ckpt.config.at("adam_lr"));
    out.opt.beta1 = std::stod(ckpt.config.at("adam_beta1"));
    out.opt.beta2 = std::stod(ckpt.config.at("adam_beta2"));
    out.opt.eps = std::stod(ckpt.config.at("adam_eps"));
    out.opt.step = std::stoul(ckpt.config.at("adam_step"));
    if (ckpt.find("adam.m." + out.model.params.items().front().first)) {
        out.opt.m = load_state_entries(ckpt, "adam.m.", out.model.params);
        out.opt.v = load_state_entries(ckpt, "adam.v.", out.model.params);
    }
    out.ema.decay = std::stod(ckpt.config.at("ema_decay"));
    if (ckpt.ema_present) {
        out.ema.shadow = load_state_entries(ckpt, "ema.", out.model.params);
        if (use_ema) {
            auto params = out.model.params.tensors();
            for (std::size_t i = 0; i < params.size(); ++i)
                params[i]->data = out.ema.shadow[i];
            out.ema_loaded = true;
        }
    } else if (use_ema) {
        throw LoadError("load_model_checkpoint: EMA weights requested but not present");
    }
    out.stats.mean_first_pose = load_raw_entry(ckpt, "stat.mean_first_pose");
    out.stats.norm_mean = load_raw_entry(ckpt, "stat.norm_mean");
    out.stats.norm_std = load_raw_entry(ckpt, "stat.norm_std");
    out.stats.mean_sequence = load_raw_entry(ckpt, "stat.mean_sequence");
    out.stats.mean_sequence_frames = std::stoul(ckpt.config.at("mean_sequence_frames"));
    return out;
}

void save_bt_checkpoint(const std::string& path, const BackTranslator& bt) {
    Checkpoint ckpt;
    ckpt.config["kind"] = "backtranslator";
    ckpt.config["d_model"] = std::to_string(bt.cfg.d_model);
    ckpt.config["heads"] = std::to_string(bt.cfg.heads);
    ckpt.config["mlp_hidden"] = std::to_string(bt.cfg.mlp_hidden);
    ckpt.config["blocks"] = std::to_string(bt.cfg.blocks);
    ckpt.config["vocab_size"] = std::to_string(bt.cfg.vocab_size);
    ckpt.config["frame_width"] = std::to_string(bt.cfg.frame_width);
    ckpt.config["max_tokens"] = std::to_string(bt.cfg.max_tokens);
    append_store_entries(ckpt, "param.", bt.params);
    write_checkpoint(ckpt, path);
}

BackTranslator load_bt_checkpoint(const std::string& path) {
    Checkpoint ckpt = read_checkpoint(path);
    if (!ckpt.config.count("kind") || ckpt.config.at("kind") != "backtranslator")
        throw LoadError("load_bt_checkpoint: not a back-translator checkpoint: " + path);
    BackTranslatorConfig cfg;
    cfg.d_model = std::stoul(ckpt.config.at("d_model"));
    cfg.heads = std::stoul(ckpt.config.at("heads"));
    cfg.mlp_hidden = std::stoul(ckpt.config.at("mlp_hidden"));
    cfg.blocks = std::stoul(ckpt.config.at("blocks"));
    cfg.vocab_size = std::stoul(ckpt.config.at("vocab_size"));
    cfg.frame_width = std::stoul(ckpt.config.at("frame_width"));
    cfg.max_tokens = std::stoul(ckpt.config.at("max_tokens"));
    BackTranslator bt = BackTranslator::build(cfg, 0);
    load_store_entries(ckpt, "param.", bt.params);
    return bt;
}

} // namespace signflow
