#include "signflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "signflow/rng.hpp"

namespace signflow {

namespace {

constexpr std::uint64_t kTagMotif = 0x6d6f746966ull;
constexpr std::uint64_t kTagFeatures = 0x66656174ull;
constexpr std::uint64_t kTagSample = 0x73616d706c65ull;
constexpr std::uint64_t kTagAudioMask = 0x61756d61736bull;
constexpr std::uint64_t kTagSplit = 0x73706c6974ull;

std::vector<double> smooth_window3(const std::vector<double>& x, std::size_t frames,
                                   std::size_t width) {
    std::vector<double> out(x.size());
    for (std::size_t t = 0; t < frames; ++t) {
        const std::size_t lo = t == 0 ? 0 : t - 1;
        const std::size_t hi = t + 1 < frames ? t + 1 : t;
        const double inv = 1.0 / static_cast<double>(hi - lo + 1);
        for (std::size_t c = 0; c < width; ++c) {
            double acc = 0.0;
            for (std::size_t k = lo; k <= hi; ++k) acc += x[k * width + c];
            out[t * width + c] = acc * inv;
        }
    }
    return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, sa = 0, sb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        sa += (a[i] - ma) * (a[i] - ma);
        sb += (b[i] - mb) * (b[i] - mb);
    }
    if (sa == 0.0 || sb == 0.0) return 1.0;
    return sab / std::sqrt(sa * sb);
}

void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

std::uint32_t get_u32(const std::string& buf, std::size_t off) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off])) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 1])) << 8) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 2])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 3])) << 24);
}

float get_f32(const std::string& buf, std::size_t off) {
    const std::uint32_t bits = get_u32(buf, off);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

std::string fmt_doubles(const std::vector<double>& v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stod(item));
    return out;
}

} // namespace

std::vector<double> resample_frames(const std::vector<double>& x, std::size_t frames,
                                    std::size_t width, std::size_t target) {
    std::vector<double> out(target * width);
    if (frames == 1) {
        for (std::size_t t = 0; t < target; ++t)
            std::copy(x.begin(), x.begin() + width, out.begin() + static_cast<std::ptrdiff_t>(t * width));
        return out;
    }
    for (std::size_t t = 0; t < target; ++t) {
        const double pos = target == 1 ? 0.0
                                       : static_cast<double>(t) *
                                             static_cast<double>(frames - 1) /
                                             static_cast<double>(target - 1);
        const std::size_t i0 = static_cast<std::size_t>(pos);
        const std::size_t i1 = std::min(i0 + 1, frames - 1);
        const double f = pos - static_cast<double>(i0);
        for (std::size_t c = 0; c < width; ++c)
            out[t * width + c] = (1.0 - f) * x[i0 * width + c] + f * x[i1 * width + c];
    }
    return out;
}

MotifTable build_motif_table(const MotifConfig& cfg, std::uint64_t seed) {
    if (cfg.vocab_size == 0 || cfg.joints == 0 || cfg.coords == 0 || cfg.motif_frames == 0)
        throw ContractError("build_motif_table: all dimensions must be positive");
    MotifTable table;
    table.cfg = cfg;
    const std::size_t width = cfg.joints * cfg.coords;
    table.motifs.resize(cfg.vocab_size);
    for (std::size_t tok = 0; tok < cfg.vocab_size; ++tok) {
        Rng rng(derive_seed(seed, kTagMotif + tok));
        std::vector<double> walk(cfg.motif_frames * width);
        std::vector<double> start(width);
        for (std::size_t c = 0; c < width; ++c) start[c] = rng.normal() * cfg.start_std;
        for (std::size_t t = 0; t < cfg.motif_frames; ++t)
            for (std::size_t c = 0; c < width; ++c)
                walk[t * width + c] =
                    (t == 0 ? 0.0 : walk[(t - 1) * width + c]) + rng.normal() * cfg.delta_std;
        std::vector<double> smooth = smooth_window3(walk, cfg.motif_frames, width);
        // rescale so framewise steps keep the configured std
        double scale = 1.0;
        if (cfg.motif_frames > 1) {
            double s2 = 0.0;
            std::size_t n = 0;
            for (std::size_t t = 1; t < cfg.motif_frames; ++t)
                for (std::size_t c = 0; c < width; ++c) {
                    const double d = smooth[t * width + c] - smooth[(t - 1) * width + c];
                    s2 += d * d;
                    ++n;
                }
            const double measured = std::sqrt(s2 / static_cast<double>(n));
            if (measured > 1e-12) scale = cfg.delta_std / measured;
        }
        std::vector<double>& m = table.motifs[tok];
        m.resize(cfg.motif_frames * width);
        for (std::size_t t = 0; t < cfg.motif_frames; ++t)
            for (std::size_t c = 0; c < width; ++c)
                m[t * width + c] = start[c] + (smooth[t * width + c] - smooth[c]) * scale;
    }
    for (std::size_t a = 0; a < cfg.vocab_size; ++a)
        for (std::size_t b = a + 1; b < cfg.vocab_size; ++b)
            if (std::abs(pearson(table.motifs[a], table.motifs[b])) >= 0.99)
                throw ContractError("build_motif_table: motifs " + std::to_string(a) + " and " +
                                    std::to_string(b) + " are not distinct");
    return table;
}

std::size_t synthetic_frames(std::size_t token_count, const MotifConfig& cfg) {
    return token_count * cfg.motif_frames + (token_count - 1) * cfg.transition_frames;
}

CorpusSample synthesize_sample(const TextTokens& tokens, const MotifTable& table,
                               std::uint64_t seed, bool with_audio, const FeatureConfig& fcfg) {
    tokens.validate();
    const MotifConfig& cfg = table.cfg;
    const std::size_t width = cfg.joints * cfg.coords;
    CorpusSample sample;
    sample.tokens = tokens;
    sample.sign.joints = cfg.joints;
    sample.sign.coords = cfg.coords;
    sample.sign.data.reserve(synthetic_frames(tokens.ids.size(), cfg) * width);
    for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
        const auto& m = table.motif(tokens.ids[i]);
        sample.sign.data.insert(sample.sign.data.end(), m.begin(), m.end());
        if (i + 1 < tokens.ids.size()) {
            const auto& next = table.motif(tokens.ids[i + 1]);
            const double* from = m.data() + (cfg.motif_frames - 1) * width;
            const double* to = next.data();
            for (std::size_t t = 1; t <= cfg.transition_frames; ++t) {
                const double f =
                    static_cast<double>(t) / static_cast<double>(cfg.transition_frames + 1);
                for (std::size_t c = 0; c < width; ++c)
                    sample.sign.data.push_back((1.0 - f) * from[c] + f * to[c]);
            }
        }
    }
    if (with_audio) sample.audio = extract_audio_features(tokens, seed, fcfg);
    return sample;
}

std::vector<std::size_t> recover_tokens_by_motif(const SignSequence& s, const MotifTable& table) {
    const MotifConfig& cfg = table.cfg;
    const std::size_t width = cfg.joints * cfg.coords;
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos + cfg.motif_frames <= s.frames()) {
        std::size_t best = 0;
        double best_err = -1.0;
        for (std::size_t tok = 0; tok < cfg.vocab_size; ++tok) {
            const auto& m = table.motif(tok);
            double err = 0.0;
            for (std::size_t i = 0; i < cfg.motif_frames * width; ++i) {
                const double d = s.data[pos * width + i] - m[i];
                err += d * d;
            }
            if (best_err < 0.0 || err < best_err) {
                best_err = err;
                best = tok;
            }
        }
        out.push_back(best);
        pos += cfg.motif_frames + cfg.transition_frames;
    }
    return out;
}

void Normalizer::apply(SignSequence& s) const {
    const std::size_t width = s.frame_width();
    if (mean.size() != width)
        throw ContractError("Normalizer::apply: width mismatch");
    for (std::size_t t = 0; t < s.frames(); ++t) {
        double* f = s.frame(t);
        for (std::size_t c = 0; c < width; ++c) f[c] = (f[c] - mean[c]) / stdev[c];
    }
}

void Normalizer::invert(SignSequence& s) const {
    const std::size_t width = s.frame_width();
    if (mean.size() != width)
        throw ContractError("Normalizer::invert: width mismatch");
    for (std::size_t t = 0; t < s.frames(); ++t) {
        double* f = s.frame(t);
        for (std::size_t c = 0; c < width; ++c) f[c] = f[c] * stdev[c] + mean[c];
    }
}

Normalizer fit_normalizer(const std::vector<const SignSequence*>& train,
                          const std::function<void(const std::string&)>& warn) {
    if (train.empty()) throw ContractError("fit_normalizer: empty training set");
    const std::size_t width = train[0]->frame_width();
    Normalizer n;
    n.mean.assign(width, 0.0);
    n.stdev.assign(width, 0.0);
    std::size_t count = 0;
    for (const auto* s : train) {
        if (s->frame_width() != width)
            throw ContractError("fit_normalizer: inconsistent frame width");
        for (std::size_t t = 0; t < s->frames(); ++t) {
            const double* f = s->frame(t);
            for (std::size_t c = 0; c < width; ++c) n.mean[c] += f[c];
            ++count;
        }
    }
    for (double& m : n.mean) m /= static_cast<double>(count);
    for (const auto* s : train)
        for (std::size_t t = 0; t < s->frames(); ++t) {
            const double* f = s->frame(t);
            for (std::size_t c = 0; c < width; ++c) {
                const double d = f[c] - n.mean[c];
                n.stdev[c] += d * d;
            }
        }
    for (std::size_t c = 0; c < width; ++c) {
        n.stdev[c] = std::sqrt(n.stdev[c] / static_cast<double>(count));
        if (n.stdev[c] < 1e-6) {
            n.stdev[c] = 1e-6;
            if (warn)
                warn("fit_normalizer: coordinate " + std::to_string(c) +
                     " is constant; std floored at 1e-6");
        }
    }
    return n;
}

Corpus synthesize_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
    Corpus corpus;
    corpus.cfg = cfg;
    corpus.seed = seed;
    corpus.table = build_motif_table(cfg.motif, derive_seed(seed, kTagMotif));
    const std::uint64_t feat_seed = derive_seed(seed, kTagFeatures);

    // audio presence: exactly round(f * N) samples are audio-missing
    std::vector<std::size_t> order(cfg.sample_count);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng audio_rng(derive_seed(seed, kTagAudioMask));
    audio_rng.shuffle(order);
    const std::size_t missing =
        static_cast<std::size_t>(std::llround(cfg.audio_missing_fraction *
                                              static_cast<double>(cfg.sample_count)));
    corpus.audio_present.assign(cfg.sample_count, true);
    for (std::size_t i = 0; i < missing; ++i) corpus.audio_present[order[i]] = false;

    corpus.samples.reserve(cfg.sample_count);
    for (std::size_t i = 0; i < cfg.sample_count; ++i) {
        Rng rng(derive_seed(seed, kTagSample + i));
        std::size_t len = cfg.min_tokens + rng.below(cfg.max_tokens - cfg.min_tokens + 1);
        while (len > cfg.max_token_filter)
            len = cfg.min_tokens + rng.below(cfg.max_tokens - cfg.min_tokens + 1);
        TextTokens tokens;
        tokens.vocab_size = cfg.motif.vocab_size;
        tokens.ids.resize(len);
        for (auto& id : tokens.ids) id = rng.below(cfg.motif.vocab_size);
        CorpusSample sample = synthesize_sample(tokens, corpus.table, feat_seed,
                                                corpus.audio_present[i], cfg.features);
        sample.sample_id = i;
        corpus.samples.push_back(std::move(sample));
    }

    // splits
    std::vector<std::size_t> ids(cfg.sample_count);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    Rng split_rng(derive_seed(seed, kTagSplit));
    split_rng.shuffle(ids);
    const std::size_t n_test =
        static_cast<std::size_t>(std::llround(cfg.test_fraction * cfg.sample_count));
    const std::size_t n_dev =
        static_cast<std::size_t>(std::llround(cfg.dev_fraction * cfg.sample_count));
    corpus.split.audio_missing_fraction = cfg.audio_missing_fraction;
    corpus.split.test.assign(ids.begin(), ids.begin() + n_test);
    corpus.split.dev.assign(ids.begin() + n_test, ids.begin() + n_test + n_dev);
    corpus.split.train.assign(ids.begin() + n_test + n_dev, ids.end());

    // normalization fitted on the training split, applied everywhere
    std::vector<const SignSequence*> train_refs;
    train_refs.reserve(corpus.split.train.size());
    for (std::size_t id : corpus.split.train) train_refs.push_back(&corpus.samples[id].sign);
    corpus.normalizer = fit_normalizer(train_refs);
    for (auto& s : corpus.samples) corpus.normalizer.apply(s.sign);

    // summary statistics over the normalized training split
    const std::size_t width = cfg.motif.joints * cfg.motif.coords;
    corpus.mean_first_pose.assign(width, 0.0);
    for (std::size_t id : corpus.split.train) {
        const double* f = corpus.samples[id].sign.frame(0);
        for (std::size_t c = 0; c < width; ++c) corpus.mean_first_pose[c] += f[c];
    }
    for (double& v : corpus.mean_first_pose) v /= static_cast<double>(corpus.split.train.size());

    corpus.mean_sequence_frames = 32;
    corpus.mean_sequence.assign(corpus.mean_sequence_frames * width, 0.0);
    for (std::size_t id : corpus.split.train) {
        const auto& s = corpus.samples[id].sign;
        std::vector<double> r =
            resample_frames(s.data, s.frames(), width, corpus.mean_sequence_frames);
        for (std::size_t i = 0; i < r.size(); ++i) corpus.mean_sequence[i] += r[i];
    }
    for (double& v : corpus.mean_sequence) v /= static_cast<double>(corpus.split.train.size());
    return corpus;
}

void serialize_sequence(const SignSequence& s, const std::string& path) {
    if (s.frames() == 0) throw ContractError("serialize_sequence: empty sequence");
    std::string buf = "SGSQ1";
    put_u32(buf, static_cast<std::uint32_t>(s.frames()));
    put_u32(buf, static_cast<std::uint32_t>(s.joints));
    put_u32(buf, static_cast<std::uint32_t>(s.coords));
    put_f32(buf, static_cast<float>(s.frame_rate));
    for (double v : s.data) put_f32(buf, static_cast<float>(v));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("serialize_sequence: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError("serialize_sequence: write failed for " + path);
}

SignSequence deserialize_sequence(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("deserialize_sequence: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 5 || buf.compare(0, 5, "SGSQ1") != 0)
        throw FormatError("deserialize_sequence: bad magic at byte offset 0 in " + path);
    if (buf.size() < 21)
        throw FormatError("deserialize_sequence: truncated header at byte offset " +
                          std::to_string(buf.size()) + " in " + path);
    SignSequence s;
    const std::uint32_t frames = get_u32(buf, 5);
    const std::uint32_t joints = get_u32(buf, 9);
    const std::uint32_t coords = get_u32(buf, 13);
    s.frame_rate = static_cast<double>(get_f32(buf, 17));
    if (frames == 0) throw FormatError("deserialize_sequence: zero frames at byte offset 5");
    if (joints == 0 || coords == 0)
        throw FormatError("deserialize_sequence: zero dimension at byte offset 9");
    const std::uint64_t count =
        static_cast<std::uint64_t>(frames) * joints * coords;
    if (count > (1ull << 31))
        throw FormatError("deserialize_sequence: dimension overflow at byte offset 5");
    if (buf.size() != 21 + count * 4)
        throw FormatError("deserialize_sequence: truncated payload at byte offset " +
                          std::to_string(buf.size()) + ", expected " +
                          std::to_string(21 + count * 4));
    s.joints = joints;
    s.coords = coords;
    s.data.resize(count);
    for (std::uint64_t i = 0; i < count; ++i)
        s.data[i] = static_cast<double>(get_f32(buf, 21 + i * 4));
    return s;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "seq");
    std::ofstream manifest(fs::path(dir) / "corpus.manifest");
    if (!manifest) throw FormatError("save_corpus: cannot write manifest in " + dir);
    auto split_of = [&](std::size_t id) -> const char* {
        for (std::size_t s : corpus.split.test)
            if (s == id) return "test";
        for (std::size_t s : corpus.split.dev)
            if (s == id) return "dev";
        return "train";
    };
    for (const auto& sample : corpus.samples) {
        std::string rel = "seq/" + std::to_string(sample.sample_id) + ".sgsq";
        serialize_sequence(sample.sign, (fs::path(dir) / rel).string());
        manifest << "id=" << sample.sample_id << " tokens=";
        for (std::size_t i = 0; i < sample.tokens.ids.size(); ++i) {
            if (i) manifest << ",";
            manifest << sample.tokens.ids[i];
        }
        manifest << " audio=" << (sample.audio ? 1 : 0) << " path=" << rel
                 << " split=" << split_of(sample.sample_id) << "\n";
    }
    std::ofstream meta(fs::path(dir) / "corpus.meta");
    meta.precision(17);
    meta << "seed=" << corpus.seed << "\n";
    meta << "vocab_size=" << corpus.cfg.motif.vocab_size << "\n";
    meta << "joints=" << corpus.cfg.motif.joints << "\n";
    meta << "coords=" << corpus.cfg.motif.coords << "\n";
    meta << "motif_frames=" << corpus.cfg.motif.motif_frames << "\n";
    meta << "transition_frames=" << corpus.cfg.motif.transition_frames << "\n";
    meta << "delta_std=" << corpus.cfg.motif.delta_std << "\n";
    meta << "start_std=" << corpus.cfg.motif.start_std << "\n";
    meta << "text_feat_dim=" << corpus.cfg.features.text_feat_dim << "\n";
    meta << "audio_feat_dim=" << corpus.cfg.features.audio_feat_dim << "\n";
    meta << "frames_per_token=" << corpus.cfg.features.frames_per_token << "\n";
    meta << "audio_jitter=" << corpus.cfg.features.audio_jitter << "\n";
    meta << "sample_count=" << corpus.cfg.sample_count << "\n";
    meta << "min_tokens=" << corpus.cfg.min_tokens << "\n";
    meta << "max_tokens=" << corpus.cfg.max_tokens << "\n";
    meta << "audio_missing_fraction=" << corpus.cfg.audio_missing_fraction << "\n";
    meta << "dev_fraction=" << corpus.cfg.dev_fraction << "\n";
    meta << "test_fraction=" << corpus.cfg.test_fraction << "\n";
    meta << "max_token_filter=" << corpus.cfg.max_token_filter << "\n";
    meta << "mean_sequence_frames=" << corpus.mean_sequence_frames << "\n";
    auto fmt_ids = [](const std::vector<std::size_t>& ids) {
        std::string s;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(ids[i]);
        }
        return s;
    };
    meta << "train_ids=" << fmt_ids(corpus.split.train) << "\n";
    meta << "dev_ids=" << fmt_ids(corpus.split.dev) << "\n";
    meta << "test_ids=" << fmt_ids(corpus.split.test) << "\n";
    std::ofstream stats(fs::path(dir) / "normalizer.txt");
    stats.precision(17);
    stats << "mean=" << fmt_doubles(corpus.normalizer.mean) << "\n";
    stats << "std=" << fmt_doubles(corpus.normalizer.stdev) << "\n";
    stats << "mean_first_pose=" << fmt_doubles(corpus.mean_first_pose) << "\n";
    stats << "mean_sequence=" << fmt_doubles(corpus.mean_sequence) << "\n";
}

Corpus load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream meta(fs::path(dir) / "corpus.meta");
    if (!meta) throw FormatError("load_corpus: missing corpus.meta in " + dir);
    Corpus corpus;
    std::string line;
    auto want_key = [](const std::string& l, const std::string& key) -> std::optional<std::string> {
        if (l.rfind(key + "=", 0) == 0) return l.substr(key.size() + 1);
        return std::nullopt;
    };
    while (std::getline(meta, line)) {
        if (auto v = want_key(line, "seed")) corpus.seed = std::stoull(*v);
        else if (auto v = want_key(line, "vocab_size")) corpus.cfg.motif.vocab_size = std::stoul(*v);
        else if (auto v = want_key(line, "joints")) corpus.cfg.motif.joints = std::stoul(*v);
        else if (auto v = want_key(line, "coords")) corpus.cfg.motif.coords = std::stoul(*v);
        else if (auto v = want_key(line, "motif_frames")) corpus.cfg.motif.motif_frames = std::stoul(*v);
        else if (auto v = want_key(line, "transition_frames")) corpus.cfg.motif.transition_frames = std::stoul(*v);
        else if (auto v = want_key(line, "delta_std")) corpus.cfg.motif.delta_std = std::stod(*v);
        else if (auto v = want_key(line, "start_std")) corpus.cfg.motif.start_std = std::stod(*v);
        else if (auto v = want_key(line, "text_feat_dim")) corpus.cfg.features.text_feat_dim = std::stoul(*v);
        else if (auto v = want_key(line, "audio_feat_dim")) corpus.cfg.features.audio_feat_dim = std::stoul(*v);
        else if (auto v = want_key(line, "frames_per_token")) corpus.cfg.features.frames_per_token = std::stoul(*v);
        else if (auto v = want_key(line, "audio_jitter")) corpus.cfg.features.audio_jitter = std::stod(*v);
        else if (auto v = want_key(line, "sample_count")) corpus.cfg.sample_count = std::stoul(*v);
        else if (auto v = want_key(line, "min_tokens")) corpus.cfg.min_tokens = std::stoul(*v);
        else if (auto v = want_key(line, "max_tokens")) corpus.cfg.max_tokens = std::stoul(*v);
        else if (auto v = want_key(line, "audio_missing_fraction")) corpus.cfg.audio_missing_fraction = std::stod(*v);
        else if (auto v = want_key(line, "dev_fraction")) corpus.cfg.dev_fraction = std::stod(*v);
        else if (auto v = want_key(line, "test_fraction")) corpus.cfg.test_fraction = std::stod(*v);
        else if (auto v = want_key(line, "max_token_filter")) corpus.cfg.max_token_filter = std::stoul(*v);
        else if (auto v = want_key(line, "mean_sequence_frames")) corpus.mean_sequence_frames = std::stoul(*v);
        else if (auto v = want_key(line, "train_ids"))
            for (double d : parse_doubles(*v)) corpus.split.train.push_back(static_cast<std::size_t>(d));
        else if (auto v = want_key(line, "dev_ids"))
            for (double d : parse_doubles(*v)) corpus.split.dev.push_back(static_cast<std::size_t>(d));
        else if (auto v = want_key(line, "test_ids"))
            for (double d : parse_doubles(*v)) corpus.split.test.push_back(static_cast<std::size_t>(d));
    }
    corpus.table = build_motif_table(corpus.cfg.motif, derive_seed(corpus.seed, kTagMotif));
    const std::uint64_t feat_seed = derive_seed(corpus.seed, kTagFeatures);

    std::ifstream stats(fs::path(dir) / "normalizer.txt");
    if (!stats) throw FormatError("load_corpus: missing normalizer.txt in " + dir);
    while (std::getline(stats, line)) {
        if (auto v = want_key(line, "mean")) corpus.normalizer.mean = parse_doubles(*v);
        else if (auto v = want_key(line, "std")) corpus.normalizer.stdev = parse_doubles(*v);
        else if (auto v = want_key(line, "mean_first_pose")) corpus.mean_first_pose = parse_doubles(*v);
        else if (auto v = want_key(line, "mean_sequence")) corpus.mean_sequence = parse_doubles(*v);
    }

    std::ifstream manifest(fs::path(dir) / "corpus.manifest");
    if (!manifest) throw FormatError("load_corpus: missing corpus.manifest in " + dir);
    corpus.split.audio_missing_fraction = corpus.cfg.audio_missing_fraction;
    DatasetSplit manifest_split;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        CorpusSample sample;
        std::string split_name = "train", rel;
        bool has_audio = false;
        std::stringstream ss(line);
        std::string field;
        while (ss >> field) {
            if (auto v = want_key(field, "id")) sample.sample_id = std::stoul(*v);
            else if (auto v = want_key(field, "tokens")) {
                for (double d : parse_doubles(*v))
                    sample.tokens.ids.push_back(static_cast<std::size_t>(d));
            } else if (auto v = want_key(field, "audio")) has_audio = (*v == "1");
            else if (auto v = want_key(field, "path")) rel = *v;
            else if (auto v = want_key(field, "split")) split_name = *v;
            else throw FormatError("load_corpus: unknown manifest field '" + field + "'");
        }
        sample.tokens.vocab_size = corpus.cfg.motif.vocab_size;
        sample.sign = deserialize_sequence((fs::path(dir) / rel).string());
        if (has_audio)
            sample.audio = extract_audio_features(sample.tokens, feat_seed, corpus.cfg.features);
        corpus.audio_present.push_back(has_audio);
        if (split_name == "test") manifest_split.test.push_back(sample.sample_id);
        else if (split_name == "dev") manifest_split.dev.push_back(sample.sample_id);
        else manifest_split.train.push_back(sample.sample_id);
        corpus.samples.push_back(std::move(sample));
    }
    // the ordered lists from corpus.meta win; the manifest fields are a fallback
    if (corpus.split.train.empty() && corpus.split.dev.empty() && corpus.split.test.empty()) {
        manifest_split.audio_missing_fraction = corpus.split.audio_missing_fraction;
        corpus.split = manifest_split;
    }
    return corpus;
}

PaddedBatch batch_pad(const std::vector<const SignSequence*>& samples, std::size_t max_len) {
    if (samples.empty()) throw ContractError("batch_pad: empty batch");
    PaddedBatch out;
    out.batch = samples.size();
    out.frame_width = samples[0]->frame_width();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i]->frames() > max_len)
            throw ContractError("batch_pad: sample " + std::to_string(i) + " has " +
                                std::to_string(samples[i]->frames()) + " frames > max_len " +
                                std::to_string(max_len));
        out.max_frames = std::max(out.max_frames, samples[i]->frames());
    }
    out.values.assign(out.batch * out.max_frames * out.frame_width, 0.0);
    out.valid.assign(out.batch * out.max_frames, 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = *samples[i];
        std::copy(s.data.begin(), s.data.end(),
                  out.values.begin() +
                      static_cast<std::ptrdiff_t>(i * out.max_frames * out.frame_width));
        for (std::size_t t = 0; t < s.frames(); ++t) out.valid[i * out.max_frames + t] = 1;
    }
    return out;
}

double masked_mse(const PaddedBatch& a, const PaddedBatch& b) {
    if (a.batch != b.batch || a.max_frames != b.max_frames || a.frame_width != b.frame_width ||
        a.valid != b.valid)
        throw ContractError("masked_mse: batch layout mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < a.batch; ++i) {
        double err = 0.0;
        std::size_t valid_frames = 0;
        for (std::size_t t = 0; t < a.max_frames; ++t) {
            if (!a.valid[i * a.max_frames + t]) continue;
            ++valid_frames;
            const std::size_t off = (i * a.max_frames + t) * a.frame_width;
            for (std::size_t c = 0; c < a.frame_width; ++c) {
                const double d = a.values[off + c] - b.values[off + c];
                err += d * d;
            }
        }
        total += err / static_cast<double>(valid_frames * a.frame_width);
    }
    return total / static_cast<double>(a.batch);
}

} // namespace signflow
