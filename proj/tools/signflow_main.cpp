#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "signflow/config.hpp"
#include "signflow/rng.hpp"

namespace {

using namespace signflow;

constexpr std::uint64_t kTagFeatures = 0x66656174ull;

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> averaged;
    bool no_ecl = false;
};

AppConfig resolve_config(const CommonFlags& f) {
    AppConfig cfg = f.config_path.empty() ? AppConfig{} : load_config_file(f.config_path);
    if (f.seed) cfg.seed = *f.seed;
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.steps) cfg.model.steps = *f.steps;
    if (f.averaged) cfg.gen.num_averaged = *f.averaged;
    if (f.no_ecl) cfg.train.ecl.lambda2 = 0.0;
    cfg.finalize();
    return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "key=value config file");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--steps", f.steps, "refinement step count H (0 = direct regression)");
    cmd->add_option("--averaged", f.averaged, "generations averaged per sample");
    cmd->add_flag("--no-ecl", f.no_ecl, "disable the consistency loss (lambda2 = 0)");
}

int cmd_synth(const CommonFlags& flags, const std::string& out_dir) {
    AppConfig cfg = resolve_config(flags);
    Corpus corpus = synthesize_corpus(cfg.corpus, cfg.seed);
    save_corpus(corpus, out_dir);
    std::cout << "wrote " << corpus.samples.size() << " samples to " << out_dir << "\n";
    return 0;
}

int cmd_train(const CommonFlags& flags, const std::string& corpus_dir, const std::string& out,
              const std::string& log_path) {
    AppConfig cfg = resolve_config(flags);
    Corpus corpus = load_corpus(corpus_dir);
    cfg.corpus = corpus.cfg;
    cfg.finalize();
    PredictorModel model = PredictorModel::build(cfg.model, cfg.seed);
    Trainer trainer(model, corpus, cfg.train);
    std::ofstream log(log_path.empty() ? out + ".log" : log_path, std::ios::app);
    trainer.train(&log);
    // the feature recipe rides along so generation does not need the corpus
    std::map<std::string, std::string> extra;
    extra["feature_seed"] = std::to_string(derive_seed(corpus.seed, kTagFeatures));
    extra["vocab_size"] = std::to_string(corpus.cfg.motif.vocab_size);
    extra["frames_per_token"] = std::to_string(corpus.cfg.features.frames_per_token);
    std::ostringstream jd;
    jd.precision(17);
    jd << corpus.cfg.features.audio_jitter;
    extra["audio_jitter"] = jd.str();
    save_model_checkpoint(out, model, trainer.optimizer(), trainer.ema(),
                          stats_from_corpus(corpus), extra);
    std::cout << "trained " << cfg.train.epochs << " epochs; checkpoint at " << out << "\n";
    return 0;
}

int cmd_train_bt(const CommonFlags& flags, const std::string& corpus_dir,
                 const std::string& out) {
    AppConfig cfg = resolve_config(flags);
    Corpus corpus = load_corpus(corpus_dir);
    BackTranslatorConfig bcfg;
    bcfg.vocab_size = corpus.cfg.motif.vocab_size;
    bcfg.frame_width = corpus.cfg.motif.joints * corpus.cfg.motif.coords;
    bcfg.max_tokens = std::max<std::size_t>(cfg.bt_max_tokens, corpus.cfg.max_tokens + 2);
    BackTranslator bt = BackTranslator::build(bcfg, cfg.seed);
    if (flags.epochs) cfg.bt_train.epochs = *flags.epochs;
    train_backtranslator(bt, corpus, cfg.bt_train, nullptr);
    save_bt_checkpoint(out, bt);
    const double acc = backtranslator_exact_accuracy(
        bt, corpus,
        std::vector<std::size_t>(corpus.split.train.begin(),
                                 corpus.split.train.begin() +
                                     static_cast<std::ptrdiff_t>(
                                         std::min<std::size_t>(200, corpus.split.train.size()))));
    std::cout << "back-translator saved to " << out << " (train exact recovery " << acc << ")\n";
    return 0;
}

int cmd_generate(const CommonFlags& flags, const std::string& ckpt_path,
                 const std::string& corpus_dir, const std::string& tokens_arg,
                 std::optional<std::size_t> sample_id, const std::string& modality_name,
                 const std::string& out_dir, bool svg) {
    AppConfig app = resolve_config(flags);
    LoadedModel loaded = load_model_checkpoint(ckpt_path, /*use_ema=*/true);
    const Modality modality = modality_name == "audio" ? Modality::audio : Modality::text;
    Checkpoint ckpt = read_checkpoint(ckpt_path);
    if (!ckpt.config.count("feature_seed"))
        throw ConfigError("generate: checkpoint lacks the feature recipe; re-run train");
    const std::uint64_t feature_seed = std::stoull(ckpt.config.at("feature_seed"));
    FeatureConfig fcfg;
    fcfg.text_feat_dim = loaded.model.cfg.text_feat_dim;
    fcfg.audio_feat_dim = loaded.model.cfg.audio_feat_dim;
    fcfg.frames_per_token = std::stoul(ckpt.config.at("frames_per_token"));
    fcfg.audio_jitter = std::stod(ckpt.config.at("audio_jitter"));

    TextTokens tokens;
    tokens.vocab_size = std::stoul(ckpt.config.at("vocab_size"));
    bool audio_available = false;
    if (sample_id) {
        if (corpus_dir.empty())
            throw ConfigError("generate: --sample-id requires --corpus");
        Corpus corpus = load_corpus(corpus_dir);
        if (*sample_id >= corpus.samples.size())
            throw ConfigError("generate: sample id out of range");
        tokens = corpus.samples[*sample_id].tokens;
        audio_available = corpus.samples[*sample_id].audio.has_value();
    } else {
        std::stringstream ss(tokens_arg);
        std::size_t id;
        while (ss >> id) tokens.ids.push_back(id);
        if (tokens.ids.empty())
            throw ConfigError("generate: provide --tokens \"a b c\" or --sample-id");
        audio_available = true; // synthetic audio is derivable from tokens
    }
    tokens.validate();

    TensorPtr text_feats =
        make_tensor({tokens.ids.size(), fcfg.text_feat_dim},
                    extract_text_features(tokens, feature_seed, fcfg));
    TensorPtr cond;
    if (modality == Modality::text) {
        cond = loaded.model.encode_text_features(text_feats);
    } else if (audio_available) {
        AudioFeatureSeq audio = extract_audio_features(tokens, feature_seed, fcfg);
        cond = loaded.model.encode_audio_features(
            make_tensor({audio.frame_count(), audio.feat_dim}, audio.frames));
    } else {
        cond = loaded.model.map_to_pseudo_audio(loaded.model.encode_text_features(text_feats));
    }

    DiffusionSchedule schedule;
    if (loaded.model.cfg.steps > 0) schedule = build_schedule(loaded.model.cfg.steps);
    GenerationConfig gen = app.gen;
    SignSequence out = generate_averaged(cond, loaded.model, schedule, gen,
                                         loaded.stats.mean_first_pose, modality);
    Normalizer norm{loaded.stats.norm_mean, loaded.stats.norm_std};
    norm.invert(out);
    std::filesystem::create_directories(out_dir);
    const std::string seq_path = (std::filesystem::path(out_dir) / "generated.sgsq").string();
    serialize_sequence(out, seq_path);
    std::cout << "wrote " << out.frames() << " frames to " << seq_path << "\n";
    if (svg) {
        auto files = render_svg_frames(out, out_dir, app.render);
        std::cout << "wrote " << files.size() << " svg frames to " << out_dir << "\n";
    }
    return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& ckpt_path, const std::string& bt_path,
             const std::string& corpus_dir, const std::string& split_name,
             const std::string& out_path, const std::string& modality_name,
             std::size_t limit) {
    AppConfig app = resolve_config(flags);
    if (bt_path.empty())
        throw EvaluationError(
            "eval: no back-translator given; train one with 'train-bt' and pass --bt");
    Corpus corpus = load_corpus(corpus_dir);
    LoadedModel loaded = load_model_checkpoint(ckpt_path, /*use_ema=*/true);
    BackTranslator bt = load_bt_checkpoint(bt_path);
    const std::vector<std::size_t>& split = split_name == "train" ? corpus.split.train
                                            : split_name == "dev" ? corpus.split.dev
                                                                  : corpus.split.test;
    std::vector<std::size_t> ids = split;
    if (limit > 0 && limit < ids.size()) ids.resize(limit);
    DiffusionSchedule schedule;
    if (loaded.model.cfg.steps > 0) schedule = build_schedule(loaded.model.cfg.steps);
    const Modality modality = modality_name == "audio" ? Modality::audio : Modality::text;
    MetricReport report =
        evaluate_run(loaded.model, corpus, ids, bt, schedule, app.gen, modality);
    const std::string text = format_report(report);
    if (out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(out_path, std::ios::trunc);
        out << text;
        std::cout << "report written to " << out_path << "\n";
    }
    return 0;
}

int cmd_inspect(const std::string& ckpt_path) {
    Checkpoint ckpt = read_checkpoint(ckpt_path);
    std::cout << "version=" << ckpt.version << "\n";
    std::cout << "ema_present=" << (ckpt.ema_present ? 1 : 0) << "\n";
    for (const auto& [k, v] : ckpt.config) std::cout << "config." << k << "=" << v << "\n";
    std::size_t total = 0;
    for (const auto& e : ckpt.entries) total += e.values.size();
    std::cout << "entries=" << ckpt.entries.size() << "\n";
    std::cout << "scalars=" << total << "\n";
    for (const auto& e : ckpt.entries)
        std::cout << "entry " << e.name << " shape=" << shape_str(e.shape) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spoken-to-sign sequence generation pipeline"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string out_dir, corpus_dir, ckpt_path, bt_path, log_path, tokens_arg;
    std::string modality = "text", split = "test", report_out;
    std::optional<std::size_t> sample_id;
    std::size_t limit = 0;
    bool svg = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    add_common(synth, flags);
    synth->add_option("--out", out_dir, "corpus directory")->required();

    auto* train = app.add_subcommand("train", "train the generation model");
    add_common(train, flags);
    train->add_option("--corpus", corpus_dir, "corpus directory")->required();
    train->add_option("--out", ckpt_path, "checkpoint path")->required();
    train->add_option("--log", log_path, "training log path (default <out>.log)");

    auto* train_bt = app.add_subcommand("train-bt", "train the back-translator");
    add_common(train_bt, flags);
    train_bt->add_option("--corpus", corpus_dir, "corpus directory")->required();
    train_bt->add_option("--out", ckpt_path, "checkpoint path")->required();

    auto* generate = app.add_subcommand("generate", "generate a sign sequence");
    add_common(generate, flags);
    generate->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    generate->add_option("--corpus", corpus_dir, "corpus directory (for --sample-id)");
    generate->add_option("--tokens", tokens_arg, "space-separated token ids");
    generate->add_option("--sample-id", sample_id, "generate for a corpus sample");
    generate->add_option("--modality", modality, "text|audio")
        ->check(CLI::IsMember({"text", "audio"}));
    generate->add_option("--out", out_dir, "output directory")->required();
    generate->add_flag("--svg", svg, "render stick-figure SVG frames");

    auto* eval = app.add_subcommand("eval", "evaluate a trained model");
    add_common(eval, flags);
    eval->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    eval->add_option("--bt", bt_path, "back-translator checkpoint");
    eval->add_option("--corpus", corpus_dir, "corpus directory")->required();
    eval->add_option("--split", split, "train|dev|test")
        ->check(CLI::IsMember({"train", "dev", "test"}));
    eval->add_option("--modality", modality, "text|audio")
        ->check(CLI::IsMember({"text", "audio"}));
    eval->add_option("--out", report_out, "report file (stdout when omitted)");
    eval->add_option("--limit", limit, "evaluate at most N samples");

    auto* inspect = app.add_subcommand("inspect", "summarize a checkpoint");
    inspect->add_option("--ckpt", ckpt_path, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(flags, out_dir);
        if (train->parsed()) return cmd_train(flags, corpus_dir, ckpt_path, log_path);
        if (train_bt->parsed()) return cmd_train_bt(flags, corpus_dir, ckpt_path);
        if (generate->parsed())
            return cmd_generate(flags, ckpt_path, corpus_dir, tokens_arg, sample_id, modality,
                                out_dir, svg);
        if (eval->parsed())
            return cmd_eval(flags, ckpt_path, bt_path, corpus_dir, split, report_out, modality,
                            limit);
        if (inspect->parsed()) return cmd_inspect(ckpt_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
