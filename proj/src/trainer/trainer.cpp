#include "verblab/trainer.hpp"
#include "verblab/common.hpp"
#include "backprop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

namespace verblab {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be >= 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (warmup_steps < 0) throw ValidationError("warmup_steps must be >= 0");
    if (max_steps < 0) throw ValidationError("max_steps must be >= 0");
    if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
    if (checkpoint_every > 0 && !checkpoint_path) throw ValidationError("checkpoint_every needs checkpoint_path");
}

namespace {

int masked_count(const TrainExample & ex) {
    int c = 0;
    for (std::size_t i = 0; i + 1 < ex.tokens.size() && i < ex.loss_mask.size(); ++i) c += ex.loss_mask[i] ? 1 : 0;
    return c;
}

double lr_at(const TrainConfig & cfg, int step, int total) {
    double lr = cfg.learning_rate;
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) lr *= static_cast<double>(step + 1) / cfg.warmup_steps;
    if (cfg.schedule == LrSchedule::linear_decay && total > cfg.warmup_steps && step >= cfg.warmup_steps) {
        const double frac = static_cast<double>(step - cfg.warmup_steps) / (total - cfg.warmup_steps);
        lr *= std::max(0.0, 1.0 - frac);
    }
    return lr;
}

} // namespace

double evaluate_loss(const ModelHandle & model, std::span<const TrainExample> examples) {
    double sum = 0.0;
    long count = 0;
    for (const auto & ex : examples) {
        const auto l = detail::sequence_loss(model, ex);
        sum += l.sum;
        count += l.count;
    }
    if (count == 0) throw ValidationError("no masked positions to evaluate");
    return sum / static_cast<double>(count);
}

LossCurve train_examples(ModelHandle & model, std::span<const TrainExample> examples, const TrainConfig & cfg) {
    cfg.validate();
    if (examples.empty()) throw ValidationError("no training examples");
    for (const auto & ex : examples) {
        if (ex.tokens.empty() || static_cast<int>(ex.tokens.size()) > model.config.context_len) {
            throw ValidationError("training example length outside [1, context_len]");
        }
        for (TokenId t : ex.tokens) {
            if (t < 0 || t >= model.config.vocab_size) throw ValidationError("token id outside the model vocabulary");
        }
    }

    const int n = static_cast<int>(examples.size());
    const int per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    int total = per_epoch * cfg.epochs;
    if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);

    std::optional<std::ofstream> log;
    if (cfg.log_csv) {
        if (cfg.log_csv->has_parent_path()) std::filesystem::create_directories(cfg.log_csv->parent_path());
        log.emplace(*cfg.log_csv);
        if (!*log) throw RuntimeFailure("cannot write training log: " + cfg.log_csv->string());
        *log << "step,loss,lr\n" << std::setprecision(9);
    }

    auto params = model.params.flat();
    const std::size_t P = params.size();
    std::vector<float> grads(P), m1(P, 0.0f), m2(P, 0.0f);
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    Rng rng(cfg.seed);
    std::vector<int> order(static_cast<std::size_t>(n));
    LossCurve curve;
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs && step < total; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        shuffle_in_place(order, rng);
        for (int b0 = 0; b0 < n && step < total; b0 += cfg.batch_size, ++step) {
            const int b1i = std::min(n, b0 + cfg.batch_size);
            int count = 0;
            for (int k = b0; k < b1i; ++k) count += masked_count(examples[static_cast<std::size_t>(order[k])]);
            const double lr = lr_at(cfg, step, total);
            if (count == 0) {
                curve.points.push_back({step, 0.0, lr});
                continue;
            }

            std::fill(grads.begin(), grads.end(), 0.0f);
            const auto wt = detail::TransposedWeights::build(model);
            const float scale = 1.0f / static_cast<float>(count);
            double loss_sum = 0.0;
            for (int k = b0; k < b1i; ++k) {
                loss_sum += detail::accumulate_gradients(model, wt, examples[static_cast<std::size_t>(order[k])], scale,
                                                         grads)
                                .sum;
            }
            const double loss = loss_sum / count;

            double gnorm2 = 0.0;
            for (float g : grads) gnorm2 += static_cast<double>(g) * g;
            if (!std::isfinite(loss) || !std::isfinite(gnorm2)) {
                std::ostringstream msg;
                msg << "non-finite loss at step " << step << " (epoch " << epoch << ", batch examples";
                for (int k = b0; k < b1i; ++k) msg << ' ' << order[k];
                msg << ")";
                throw RuntimeFailure(msg.str());
            }
            float clip = 1.0f;
            const double gnorm = std::sqrt(gnorm2);
            if (cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip) clip = static_cast<float>(cfg.grad_clip / gnorm);

            const double c1 = 1.0 - std::pow(b1, step + 1);
            const double c2 = 1.0 - std::pow(b2, step + 1);
            const float step_size = static_cast<float>(lr / c1);
            const float inv_c2 = static_cast<float>(1.0 / c2);
            for (std::size_t i = 0; i < P; ++i) {
                const float g = grads[i] * clip;
                m1[i] = static_cast<float>(b1) * m1[i] + static_cast<float>(1.0 - b1) * g;
                m2[i] = static_cast<float>(b2) * m2[i] + static_cast<float>(1.0 - b2) * g * g;
                params[i] -= step_size * m1[i] / (std::sqrt(m2[i] * inv_c2) + static_cast<float>(eps));
            }

            curve.points.push_back({step, loss, lr});
            if (log) *log << step << ',' << loss << ',' << lr << '\n';
            if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
                save_checkpoint(model, *cfg.checkpoint_path);
            }
        }
    }
    model.check_finite();
    return curve;
}

std::vector<TrainExample> make_lm_examples(const Tokenizer & tok, std::span<const std::string> corpus, int context_len,
                                           LossMaskMode mode) {
    std::vector<TrainExample> out;
    for (const auto & doc : corpus) {
        Tokens t = tok.encode(doc);
        t.push_back(Tokenizer::kEot);
        if (t.size() < 2) continue;
        std::size_t first_trained = 0;
        if (mode == LossMaskMode::answer_only) {
            const auto it = std::find(t.rbegin(), t.rend(), Tokenizer::kSep);
            if (it != t.rend()) first_trained = static_cast<std::size_t>(t.rend() - it) - 1;
        }
        // Consecutive chunks overlap by one token so every transition is trained exactly once.
        const std::size_t C = static_cast<std::size_t>(context_len);
        for (std::size_t s = 0; s + 1 < t.size(); s += C - 1) {
            const std::size_t e = std::min(t.size(), s + C);
            TrainExample ex;
            ex.tokens.assign(t.begin() + static_cast<std::ptrdiff_t>(s), t.begin() + static_cast<std::ptrdiff_t>(e));
            ex.loss_mask.assign(ex.tokens.size(), 0);
            bool any = false;
            for (std::size_t i = 0; i + 1 < ex.tokens.size(); ++i) {
                if (s + i >= first_trained) ex.loss_mask[i] = any = true;
            }
            if (any) out.push_back(std::move(ex));
            if (e == t.size()) break;
        }
    }
    return out;
}

std::pair<ModelHandle, LossCurve> train_lm(ModelHandle model, const Tokenizer & tok, std::span<const std::string> corpus,
                                           const TrainConfig & cfg) {
    if (corpus.empty()) throw ValidationError("train_lm: empty corpus");
    if (model.config.vocab_size != tok.vocab_size()) throw ValidationError("model vocabulary does not match tokenizer");
    const auto examples = make_lm_examples(tok, corpus, model.config.context_len, cfg.loss_mask_mode);
    if (examples.empty()) throw ValidationError("train_lm: corpus yields no trainable tokens");
    auto curve = train_examples(model, examples, cfg);
    std::ostringstream prov;
    prov << (model.provenance.empty() ? "" : model.provenance + " | ") << "lm(docs=" << corpus.size()
         << ",steps=" << curve.points.size() << ",lr=" << cfg.learning_rate << ",seed=" << cfg.seed << ")";
    model.provenance = prov.str();
    return {std::move(model), std::move(curve)};
}

// ----------------------------------------------------------------------------------------------

bool truncate_to_budget(Tokens & tokens, int budget) {
    if (static_cast<int>(tokens.size()) <= budget) return false;
    tokens.erase(tokens.begin(), tokens.end() - budget);
    return true;
}

int inverter_slots(int context_len) {
    const int s = std::min(kPlaceholderBudget, (context_len - 2) / 2);
    if (s < 1) throw ValidationError("context too short for an inverter");
    return s;
}

Tokens decoder_prompt(const Tokenizer & tok, DecoderMode mode, int n_rows, std::string_view question, int slots) {
    if (n_rows < 1 || n_rows > kPlaceholderBudget) throw ValidationError("placeholder count outside [1, budget]");
    if (mode == DecoderMode::inverter_single && n_rows != 1) throw ValidationError("single-activation mode uses one row");
    if (slots > 0 && n_rows > slots) throw ValidationError("more rows than placeholder slots");
    Tokens t(static_cast<std::size_t>(std::max(n_rows, slots)), Tokenizer::kPlaceholder);
    t.push_back(Tokenizer::kSep);
    if (mode == DecoderMode::lit) {
        const Tokens q = tok.encode(question);
        t.insert(t.end(), q.begin(), q.end());
    }
    return t;
}

std::vector<TrainExample> make_decoder_examples(const ModelHandle & target, const Tokenizer & tok,
                                                const DecoderDataset & data, int source_layer, DecoderMode mode) {
    if (source_layer < 1 || source_layer > target.config.n_layers) {
        throw ValidationError("source_layer outside [1, " + std::to_string(target.config.n_layers) + "]");
    }
    std::vector<TrainExample> out;
    out.reserve(data.size());
    const int slots = mode == DecoderMode::inverter_multi ? inverter_slots(target.config.context_len) : 0;
    int truncated = 0;
    for (const auto & rec : data) {
        if (rec.context_text.empty()) throw ValidationError("decoder record with empty context");
        if (mode == DecoderMode::lit && rec.answer_text.empty()) throw ValidationError("decoder record with empty answer");
        Tokens ctx = tok.encode(rec.context_text);
        const Tokens full_ctx = ctx;
        if (truncate_to_budget(ctx, slots ? slots : kPlaceholderBudget)) ++truncated;
        ActivationMatrix acts = capture_layer(target, ctx, source_layer);
        if (mode == DecoderMode::inverter_single) {
            Mat last(1, acts.rows.cols);
            std::copy(acts.rows.row(acts.rows.rows - 1), acts.rows.row(acts.rows.rows - 1) + acts.rows.cols, last.row(0));
            acts.rows = std::move(last);
        }

        TrainExample ex;
        ex.tokens = decoder_prompt(tok, mode, acts.n_rows(), rec.question_text, slots);
        const std::size_t prompt_len = ex.tokens.size();
        const Tokens label = mode == DecoderMode::lit ? tok.encode(rec.answer_text) : ctx;
        ex.tokens.insert(ex.tokens.end(), label.begin(), label.end());
        ex.tokens.push_back(Tokenizer::kEot);
        if (static_cast<int>(ex.tokens.size()) > target.config.context_len) {
            throw ValidationError("decoder example exceeds the verbalizer context");
        }
        ex.loss_mask.assign(ex.tokens.size(), 0);
        for (std::size_t i = prompt_len - 1; i + 1 < ex.tokens.size(); ++i) ex.loss_mask[i] = 1;
        ex.patches.push_back(make_patch(std::move(acts), 1, 0));
        out.push_back(std::move(ex));
    }
    if (truncated > 0) {
        std::cerr << "warning: " << truncated << " decoder context(s) left-truncated to " << (slots ? slots : kPlaceholderBudget)
                  << " tokens\n";
    }
    return out;
}

ModelHandle finetune_decoder(ModelHandle verbalizer, const ModelHandle & target, const Tokenizer & tok,
                             const DecoderDataset & data, int source_layer, DecoderMode mode, const TrainConfig & cfg,
                             LossCurve * curve) {
    if (data.empty()) throw ValidationError("finetune_decoder: empty dataset");
    if (verbalizer.config.d_model != target.config.d_model) {
        throw ValidationError("verbalizer and target widths differ; translate activations first");
    }
    if (verbalizer.config.vocab_size != tok.vocab_size()) throw ValidationError("verbalizer vocabulary mismatch");
    const auto examples = make_decoder_examples(target, tok, data, source_layer, mode);
    auto c = train_examples(verbalizer, examples, cfg);
    verbalizer.role = mode == DecoderMode::lit ? ModelRole::verbalizer : ModelRole::inverter;
    verbalizer.decoder = DecoderTag{mode, source_layer};
    std::ostringstream prov;
    prov << (verbalizer.provenance.empty() ? "" : verbalizer.provenance + " | ") << to_string(mode)
         << "(target=" << target.id << ",layer=" << source_layer << ",records=" << data.size()
         << ",steps=" << c.points.size() << ",seed=" << cfg.seed << ")";
    verbalizer.provenance = prov.str();
    if (curve) *curve = std::move(c);
    return verbalizer;
}

} // namespace verblab
