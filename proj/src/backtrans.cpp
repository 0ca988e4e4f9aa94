#include "signflow/backtrans.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "signflow/diffusion.hpp"
#include "signflow/encoders.hpp"
#include "signflow/rng.hpp"

namespace signflow {

BackTranslator BackTranslator::build(const BackTranslatorConfig& cfg, std::uint64_t seed) {
    BackTranslator bt;
    bt.cfg = cfg;
    Rng rng(derive_seed(seed, 0x6274ull));
    bt.frame_proj = Linear(bt.params, "bt.frame_in", cfg.frame_width, cfg.d_model, rng);
    bt.token_table = bt.params.create("bt.tokens", {cfg.vocab_size + 1, cfg.d_model}, rng, 0.5);
    bt.blocks.reserve(cfg.blocks);
    for (std::size_t i = 0; i < cfg.blocks; ++i)
        bt.blocks.emplace_back(bt.params, "bt.blk" + std::to_string(i), cfg.d_model, cfg.heads,
                               cfg.mlp_hidden, rng);
    bt.head = Linear(bt.params, "bt.head", cfg.d_model, cfg.vocab_size + 1, rng);
    return bt;
}

TensorPtr BackTranslator::logits(const TensorPtr& frames, const std::vector<std::size_t>& tokens)
    const {
    const std::size_t f = frames->shape[0];
    std::vector<TensorPtr> rows;
    rows.reserve(2 + tokens.size());
    rows.push_back(frame_proj.forward(frames));
    rows.push_back(slice_rows(token_table, bos_id(), bos_id() + 1));
    for (std::size_t id : tokens) {
        if (id >= cfg.vocab_size)
            throw ContractError("BackTranslator: token id " + std::to_string(id) +
                                " outside vocabulary");
        rows.push_back(slice_rows(token_table, id, id + 1));
    }
    TensorPtr seq = concat_rows(rows);
    const std::size_t total = f + 1 + tokens.size();
    seq = add(seq, make_tensor({total, cfg.d_model}, positional_encoding(total, cfg.d_model)));
    const std::vector<std::uint8_t> mask = causal_mask(total);
    for (const auto& blk : blocks) seq = blk.forward(seq, &mask);
    return head.forward(slice_rows(seq, f, total));
}

std::vector<std::size_t> BackTranslator::decode(const SignSequence& s) const {
    TensorPtr frames = to_tensor(s);
    std::vector<std::size_t> out;
    while (out.size() < cfg.max_tokens) {
        TensorPtr lg = logits(frames, out);
        const std::size_t rows = lg->shape[0], width = lg->shape[1];
        const double* last = lg->data.data() + (rows - 1) * width;
        std::size_t best = 0;
        for (std::size_t j = 1; j < width; ++j)
            if (last[j] > last[best]) best = j;
        if (best == end_id()) break;
        out.push_back(best);
    }
    return out;
}

void train_backtranslator(BackTranslator& bt, const Corpus& corpus,
                          const BackTransTrainConfig& cfg, std::ostream* log) {
    OptimizerState opt;
    opt.lr = cfg.lr;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng(derive_seed(cfg.seed, 0x62746570ull + epoch));
        std::vector<std::size_t> order = corpus.split.train;
        erng.shuffle(order);
        if (cfg.samples_per_epoch > 0 && cfg.samples_per_epoch < order.size())
            order.resize(cfg.samples_per_epoch);
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            TensorPtr batch_loss;
            for (std::size_t i = begin; i < end; ++i) {
                const CorpusSample& sample = corpus.samples[order[i]];
                SignSequence aug = sample.sign;
                Rng arng(derive_seed(cfg.seed, mix64(epoch) ^ (sample.sample_id + 1)));
                const double amp = cfg.scale_lo + (cfg.scale_hi - cfg.scale_lo) * arng.uniform();
                for (double& v : aug.data) v = v * amp + cfg.noise_std * arng.normal();
                std::vector<std::size_t> targets = sample.tokens.ids;
                targets.push_back(bt.end_id());
                TensorPtr lg = bt.logits(to_tensor(aug), sample.tokens.ids);
                TensorPtr loss = cross_entropy_rows(lg, targets);
                batch_loss = batch_loss ? add(batch_loss, loss) : loss;
            }
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - begin));
            bt.params.zero_grads();
            backward(batch_loss);
            adam_step(bt.params.tensors(), opt);
            epoch_loss += batch_loss->data[0] * static_cast<double>(end - begin);
        }
        if (log) {
            (*log) << "bt_epoch=" << epoch
                   << " loss=" << epoch_loss / static_cast<double>(order.size()) << "\n";
            log->flush();
        }
    }
}

double backtranslator_exact_accuracy(const BackTranslator& bt, const Corpus& corpus,
                                     const std::vector<std::size_t>& sample_ids) {
    if (sample_ids.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t id : sample_ids)
        if (bt.decode(corpus.samples[id].sign) == corpus.samples[id].tokens.ids) ++hits;
    return static_cast<double>(hits) / static_cast<double>(sample_ids.size());
}

} // namespace signflow
