#include "signflow/config.hpp"

#include <fstream>
#include <sstream>

#include "signflow/rng.hpp"

namespace signflow {

void AppConfig::finalize() {
    model.text_feat_dim = corpus.features.text_feat_dim;
    model.audio_feat_dim = corpus.features.audio_feat_dim;
    model.joints = corpus.motif.joints;
    model.coords = corpus.motif.coords;
    train.seed = derive_seed(seed, 0x747261696eull);
    bt_train.seed = derive_seed(seed, 0x6274ull);
    gen.seed = derive_seed(seed, 0x67656eull);
}

void apply_config_entry(AppConfig& cfg, const std::string& key, const std::string& value) {
    auto as_u = [&] { return static_cast<std::size_t>(std::stoul(value)); };
    auto as_d = [&] { return std::stod(value); };
    auto as_b = [&] { return value == "1" || value == "true" || value == "yes"; };

    if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "d_model") cfg.model.d_model = as_u();
    else if (key == "heads") cfg.model.heads = as_u();
    else if (key == "mlp_hidden") cfg.model.mlp_hidden = as_u();
    else if (key == "steps") cfg.model.steps = as_u();
    else if (key == "max_len") cfg.model.max_len = as_u();
    else if (key == "producer_blocks") cfg.model.producer_blocks = as_u();
    else if (key == "encoder_blocks") cfg.model.encoder_blocks = as_u();
    else if (key == "text_feat_dim") cfg.corpus.features.text_feat_dim = as_u();
    else if (key == "audio_feat_dim") cfg.corpus.features.audio_feat_dim = as_u();
    else if (key == "frames_per_token") cfg.corpus.features.frames_per_token = as_u();
    else if (key == "audio_jitter") cfg.corpus.features.audio_jitter = as_d();
    else if (key == "vocab_size") cfg.corpus.motif.vocab_size = as_u();
    else if (key == "joints") cfg.corpus.motif.joints = as_u();
    else if (key == "coords") cfg.corpus.motif.coords = as_u();
    else if (key == "motif_frames") cfg.corpus.motif.motif_frames = as_u();
    else if (key == "transition_frames") cfg.corpus.motif.transition_frames = as_u();
    else if (key == "delta_std") cfg.corpus.motif.delta_std = as_d();
    else if (key == "start_std") cfg.corpus.motif.start_std = as_d();
    else if (key == "sample_count") cfg.corpus.sample_count = as_u();
    else if (key == "min_tokens") cfg.corpus.min_tokens = as_u();
    else if (key == "max_tokens") cfg.corpus.max_tokens = as_u();
    else if (key == "audio_missing_fraction") cfg.corpus.audio_missing_fraction = as_d();
    else if (key == "dev_fraction") cfg.corpus.dev_fraction = as_d();
    else if (key == "test_fraction") cfg.corpus.test_fraction = as_d();
    else if (key == "max_token_filter") cfg.corpus.max_token_filter = as_u();
    else if (key == "epochs") cfg.train.epochs = as_u();
    else if (key == "batch_size") cfg.train.batch_size = as_u();
    else if (key == "lr") cfg.train.lr = as_d();
    else if (key == "ema_decay") cfg.train.ema_decay = as_d();
    else if (key == "train_noise_std") cfg.train.train_noise_std = as_d();
    else if (key == "init_noise_std") {
        cfg.train.init_noise_std = as_d();
        cfg.gen.init_noise_std = as_d();
    } else if (key == "length_loss_weight") cfg.train.length_loss_weight = as_d();
    else if (key == "samples_per_epoch") cfg.train.samples_per_epoch = as_u();
    else if (key == "ecl_samples_per_epoch") cfg.train.ecl_samples_per_epoch = as_u();
    else if (key == "temperature") cfg.train.binding.temperature = as_d();
    else if (key == "binding_symmetric") cfg.train.binding.symmetric = as_b();
    else if (key == "active_pairs") {
        cfg.train.binding.active_pairs.clear();
        std::stringstream ss(value);
        std::string p;
        while (std::getline(ss, p, ',')) {
            if (p == "ts") cfg.train.binding.active_pairs.push_back(ModalPair::text_sign);
            else if (p == "ta") cfg.train.binding.active_pairs.push_back(ModalPair::text_audio);
            else if (p == "as") cfg.train.binding.active_pairs.push_back(ModalPair::audio_sign);
            else throw ConfigError("config: unknown modality pair '" + p + "' (use ts,ta,as)");
        }
    } else if (key == "warmup_epochs") cfg.train.ecl.warmup_epochs = as_u();
    else if (key == "lambda1") cfg.train.ecl.lambda1 = as_d();
    else if (key == "lambda2") cfg.train.ecl.lambda2 = as_d();
    else if (key == "lambda3") cfg.train.ecl.lambda3 = as_d();
    else if (key == "rollout_steps") cfg.train.ecl.rollout_steps = as_u();
    else if (key == "max_rollout_len") cfg.train.ecl.max_rollout_len = as_u();
    else if (key == "map_aux_weight") cfg.train.ecl.map_aux_weight = as_d();
    else if (key == "map_after_sign_embedding") cfg.train.ecl.map_after_sign_embedding = as_b();
    else if (key == "ecl_update_sign_encoder") cfg.train.ecl.update_sign_encoder = as_b();
    else if (key == "bt_epochs") cfg.bt_train.epochs = as_u();
    else if (key == "bt_batch_size") cfg.bt_train.batch_size = as_u();
    else if (key == "bt_samples_per_epoch") cfg.bt_train.samples_per_epoch = as_u();
    else if (key == "bt_lr") cfg.bt_train.lr = as_d();
    else if (key == "bt_noise_std") cfg.bt_train.noise_std = as_d();
    else if (key == "bt_scale_lo") cfg.bt_train.scale_lo = as_d();
    else if (key == "bt_scale_hi") cfg.bt_train.scale_hi = as_d();
    else if (key == "bt_max_tokens") cfg.bt_max_tokens = as_u();
    else if (key == "num_averaged") cfg.gen.num_averaged = as_u();
    else if (key == "noise_injection_std") cfg.gen.noise_injection_std = as_d();
    else if (key == "render_scale") cfg.render.scale = as_d();
    else if (key == "skeleton") {
        cfg.render.skeleton.clear();
        std::stringstream ss(value);
        std::string bone;
        while (std::getline(ss, bone, ',')) {
            const std::size_t dash = bone.find('-');
            if (dash == std::string::npos)
                throw ConfigError("config: skeleton bone '" + bone + "' must be a-b");
            cfg.render.skeleton.emplace_back(std::stoul(bone.substr(0, dash)),
                                             std::stoul(bone.substr(dash + 1)));
        }
    } else {
        throw ConfigError("config: unknown key '" + key + "'");
    }
}

AppConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    AppConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
            line.pop_back();
        std::size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        line = line.substr(start);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) +
                              " is not key=value: '" + line + "'");
        apply_config_entry(cfg, line.substr(0, eq), line.substr(eq + 1));
    }
    cfg.finalize();
    return cfg;
}

} // namespace signflow
