#include "taprune/pipeline/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include "taprune/autodiff/ops.hpp"
#include "taprune/autodiff/optimizer.hpp"
#include "taprune/data/metrics.hpp"
#include "taprune/error.hpp"
#include "taprune/gates/hard_concrete.hpp"
#include "taprune/pipeline/compact.hpp"
#include "taprune/sparsity/controller.hpp"

namespace taprune::pipeline {

using transfer::TaskRole;

namespace {

constexpr std::uint64_t salt_heads = 11;
constexpr std::uint64_t salt_gates = 12;
constexpr std::uint64_t salt_noise = 13;
constexpr std::uint64_t salt_target_batches = 14;
constexpr std::uint64_t salt_auxiliary_batches = 15;
constexpr std::uint64_t salt_finetune = 16;
constexpr std::uint64_t salt_random_mask = 17;

const data::TaskData& task_of(const data::TaskPair& tasks, TaskRole role)
{
    return role == TaskRole::target ? tasks.target : tasks.auxiliary;
}

std::vector<TaskRole> roles_in(const TaskSet& set)
{
    std::vector<TaskRole> out;
    if (set.target) out.push_back(TaskRole::target);
    if (set.auxiliary) out.push_back(TaskRole::auxiliary);
    return out;
}

// Cycles through a shuffled permutation of a split.
class BatchStream {
public:
    BatchStream(const data::Dataset& data, std::size_t batch_size, Rng rng)
        : data_(&data), batch_size_(std::min(batch_size, data.size())), rng_(rng)
    {
        if (data.size() == 0) throw ConfigError("cannot draw batches from an empty split");
        order_.resize(data.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        reshuffle();
    }

    data::TokenBatch next()
    {
        if (pos_ + batch_size_ > order_.size()) reshuffle();
        std::span<const std::size_t> idx(order_.data() + pos_, batch_size_);
        pos_ += batch_size_;
        return data_->batch(idx);
    }

private:
    void reshuffle()
    {
        std::shuffle(order_.begin(), order_.end(), rng_.engine());
        pos_ = 0;
    }

    const data::Dataset* data_;
    std::size_t batch_size_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

void check_finite(const ad::Tensor& loss, std::size_t step, const char* stage)
{
    if (!std::isfinite(loss.item())) {
        throw NumericError(std::string(stage) + " loss diverged at step " + std::to_string(step));
    }
}

void count_batch(StageCounters& c, TaskRole role)
{
    if (role == TaskRole::target) {
        ++c.target_batches;
    } else {
        ++c.auxiliary_batches;
    }
}

struct Snapshot {
    model::GatedTransformer model;
    model::TaskHead target_head;
    model::TaskHead auxiliary_head;
};

Snapshot snapshot(const PrunedModel& p)
{
    return {p.model.clone(), p.target_head.clone(), p.auxiliary_head.clone()};
}

void restore(PrunedModel& p, const Snapshot& s)
{
    p.model.assign_from(s.model);
    auto copy = [](model::TaskHead& dst, const model::TaskHead& src) {
        std::copy(src.weight.data().begin(), src.weight.data().end(), dst.weight.mutable_data().begin());
        std::copy(src.bias.data().begin(), src.bias.data().end(), dst.bias.mutable_data().begin());
    };
    copy(p.target_head, s.target_head);
    copy(p.auxiliary_head, s.auxiliary_head);
}

}  // namespace

void TrainingConfig::validate() const
{
    if (!(model_lr > 0.0) || !(structure_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (finetune_lr && !(*finetune_lr > 0.0)) throw ConfigError("finetune_lr must be positive");
    if (multiplier_lr && !(*multiplier_lr > 0.0)) throw ConfigError("multiplier_lr must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1]");
}

const model::GateValues& PrunedModel::mask(TaskRole role) const
{
    return role == TaskRole::target ? target_mask : auxiliary_mask;
}

const model::TaskHead& PrunedModel::head(TaskRole role) const
{
    return role == TaskRole::target ? target_head : auxiliary_head;
}

model::TaskHead& PrunedModel::head(TaskRole role)
{
    return role == TaskRole::target ? target_head : auxiliary_head;
}

PrunedModel PrunedModel::clone() const
{
    PrunedModel p = *this;
    p.model = model.clone();
    p.target_head = target_head.clone();
    p.auxiliary_head = auxiliary_head.clone();
    return p;
}

PrunedModel prune_stage(const model::GatedTransformer& pretrained, const data::TaskPair& tasks,
                        const ScheduleSpec& spec, const TrainingConfig& config, std::uint64_t seed)
{
    spec.validate();
    config.validate();
    const auto& mc = pretrained.config();
    const auto layout = model::GateLayout::of(mc);
    const auto roles = roles_in(spec.prune_tasks);

    Rng root(seed);
    Rng head_rng = root.fork(salt_heads);
    Rng gate_rng = root.fork(salt_gates);
    Rng noise_rng = root.fork(salt_noise);

    PrunedModel out;
    out.model = pretrained.clone();
    out.target_head = model::TaskHead::create(tasks.target.name, tasks.target.type, mc.hidden_dim, head_rng);
    out.auxiliary_head = model::TaskHead::create(tasks.auxiliary.name, tasks.auxiliary.type, mc.hidden_dim, head_rng);

    // A single pruned task needs exactly one structural parameter set.
    transfer::CouplingStrategy coupling = spec.coupling;
    if (!spec.prune_tasks.both()) coupling.kind = transfer::CouplingKind::single_mask;
    auto coupled = transfer::CoupledGateParams::create(coupling, layout.count(), gate_rng);
    const bool shared = coupling.kind == transfer::CouplingKind::single_mask;
    out.gate_vectors = coupled.parameters().size();

    std::vector<model::TaskHead> heads;
    for (auto r : roles) heads.push_back(out.head(r));
    ad::Optimizer weight_opt(ad::OptimizerKind::adam, config.model_lr,
                             model::trainable_parameters(out.model, heads, config.freeze_embeddings));
    ad::Optimizer gate_opt(ad::OptimizerKind::adam, config.structure_lr, coupled.parameters());

    // One controller per independently constrained gate vector.
    std::map<TaskRole, sparsity::SparsityController> controllers;
    for (auto r : roles) {
        if (shared && !controllers.empty()) break;
        controllers.emplace(r, sparsity::SparsityController(mc, spec.target_sparsity,
                                                            config.effective_multiplier_lr(), spec.prune_steps,
                                                            config.warmup_fraction));
    }

    std::map<TaskRole, BatchStream> streams;
    for (auto r : roles) {
        const auto salt = r == TaskRole::target ? salt_target_batches : salt_auxiliary_batches;
        streams.emplace(r, BatchStream(task_of(tasks, r).train, config.batch_size, root.fork(salt)));
    }

    std::map<TaskRole, double> last_s_hat;
    for (std::size_t step = 0; step < spec.prune_steps; ++step) {
        weight_opt.zero_grad();
        gate_opt.zero_grad();
        std::optional<ad::Tensor> loss_t, loss_a;
        for (auto r : roles) {
            const auto log_alpha = transfer::resolve_task_gates(coupled, r);
            const auto u = gates::draw_uniforms(noise_rng, layout.count());
            const auto gs = model::GateSet::from_flat(gates::sample_gates(log_alpha, u, coupled.config()), layout);
            const auto batch = streams.at(r).next();
            count_batch(out.counters, r);
            const auto& head = out.head(r);
            auto loss = model::task_loss(model::forward(batch, out.model, &gs, head), batch, head.type);
            (r == TaskRole::target ? loss_t : loss_a) = loss;
        }
        ad::Tensor penalty = ad::Tensor::scalar(0.0);
        std::map<TaskRole, double> s_values;
        for (auto& [r, ctl] : controllers) {
            const auto probs = gates::prob_nonzero(transfer::resolve_task_gates(coupled, r), coupled.config());
            auto s_hat = sparsity::expected_sparsity(model::GateSet::from_flat(probs, layout), mc);
            s_values[r] = s_hat.item();
            penalty = ad::add(penalty, ctl.penalty(s_hat));
        }
        auto reg = transfer::delta_regularizer(coupled, coupling.delta_reg_weight);
        auto total = transfer::multitask_loss(loss_t, loss_a, spec.weights, penalty, reg);
        check_finite(total, step, "prune");
        total.backward();
        weight_opt.step();
        gate_opt.step();
        for (auto& [r, ctl] : controllers) ctl.update(s_values[r]);
        last_s_hat = s_values;
        ++out.counters.steps;
    }

    // Binarize every pruned task's structure; a task that was not pruned is
    // served with the other task's mask.
    std::map<TaskRole, std::vector<double>> log_alphas;
    std::map<TaskRole, sparsity::BinarizeResult> masks;
    std::map<TaskRole, double> expected;
    for (auto r : roles) {
        const auto la = transfer::resolve_task_gates(coupled, r);
        log_alphas[r].assign(la.data().begin(), la.data().end());
        masks[r] = sparsity::binarize_to_target(log_alphas[r], mc, spec.target_sparsity, coupled.config());
        if (masks[r].warning) out.warnings.push_back(*masks[r].warning);
        const auto probs = gates::prob_nonzero(la, coupled.config());
        expected[r] = sparsity::expected_sparsity(model::GateSet::from_flat(probs, layout), mc).item();
    }
    for (auto r : {TaskRole::target, TaskRole::auxiliary}) {
        const TaskRole src = masks.count(r) ? r : roles.front();
        auto& mask = r == TaskRole::target ? out.target_mask : out.auxiliary_mask;
        auto& la = r == TaskRole::target ? out.target_log_alpha : out.auxiliary_log_alpha;
        auto& exp_s = r == TaskRole::target ? out.target_expected_sparsity : out.auxiliary_expected_sparsity;
        auto& ach = r == TaskRole::target ? out.target_achieved_sparsity : out.auxiliary_achieved_sparsity;
        mask = masks[src].mask;
        la = log_alphas[src];
        exp_s = expected[src];
        ach = masks[src].achieved_sparsity;
    }
    return out;
}

double evaluate(const PrunedModel& pruned, TaskRole role, const data::Dataset& split)
{
    const auto cm = compact(pruned.model, pruned.mask(role));
    const auto& head = pruned.head(role);
    constexpr std::size_t chunk = 256;
    std::vector<double> outputs;
    outputs.reserve(split.size() * head.type.output_arity());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < split.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(split.size(), start + chunk); ++i) idx.push_back(i);
        const auto out = cm.predict(split.batch(idx), head);
        outputs.insert(outputs.end(), out.begin(), out.end());
    }
    return data::score(outputs, head.type, split);
}

FinetuneResult finetune_stage(PrunedModel& pruned, const data::TaskPair& tasks, const ScheduleSpec& spec,
                              const TrainingConfig& config, std::uint64_t seed)
{
    spec.validate();
    config.validate();
    for (const auto* m : {&pruned.target_mask, &pruned.auxiliary_mask}) {
        if (!m->is_binary()) throw ConfigError("finetuning needs binary masks");
    }
    const auto roles = roles_in(spec.finetune_tasks);
    const TaskRole primary = spec.finetune_tasks.target ? TaskRole::target : TaskRole::auxiliary;
    const auto& primary_data = task_of(tasks, primary);

    Rng root(Rng(seed).fork(salt_finetune));
    std::map<TaskRole, BatchStream> streams;
    std::map<TaskRole, model::GateSet> gate_sets;
    std::vector<model::TaskHead> heads;
    for (auto r : roles) {
        const auto salt = r == TaskRole::target ? salt_target_batches : salt_auxiliary_batches;
        streams.emplace(r, BatchStream(task_of(tasks, r).train, config.batch_size, root.fork(salt)));
        gate_sets.emplace(r, model::GateSet::constant(pruned.mask(r)));
        heads.push_back(pruned.head(r));
    }
    ad::Optimizer opt(ad::OptimizerKind::adam, config.effective_finetune_lr(),
                      model::trainable_parameters(pruned.model, heads, config.freeze_embeddings));

    FinetuneResult result;
    result.best_dev_score = evaluate(pruned, primary, primary_data.dev);
    result.dev_history.push_back(result.best_dev_score);
    if (spec.finetune_epochs == 0) return result;

    auto best = snapshot(pruned);
    const std::size_t steps_per_epoch =
        (primary_data.train.size() + config.batch_size - 1) / config.batch_size;
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= spec.finetune_epochs; ++epoch) {
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            opt.zero_grad();
            std::optional<ad::Tensor> loss_t, loss_a;
            for (auto r : roles) {
                const auto batch = streams.at(r).next();
                count_batch(result.counters, r);
                const auto& head = pruned.head(r);
                auto loss = model::task_loss(model::forward(batch, pruned.model, &gate_sets.at(r), head), batch,
                                             head.type);
                (r == TaskRole::target ? loss_t : loss_a) = loss;
            }
            auto zero = ad::Tensor::scalar(0.0);
            auto total = transfer::multitask_loss(loss_t, loss_a, spec.weights, zero, zero);
            check_finite(total, result.counters.steps, "finetune");
            total.backward();
            opt.step();
            ++result.counters.steps;
        }
        result.epochs_run = epoch;
        const double dev = evaluate(pruned, primary, primary_data.dev);
        result.dev_history.push_back(dev);
        if (dev > result.best_dev_score) {
            result.best_dev_score = dev;
            result.best_epoch = epoch;
            best = snapshot(pruned);
            since_best = 0;
        } else if (config.patience > 0 && ++since_best >= config.patience) {
            break;
        }
    }
    restore(pruned, best);
    return result;
}

RunResult run_schedule(const PrunedModel& pruned, const data::TaskPair& tasks, const ScheduleSpec& spec,
                       const TrainingConfig& config, std::uint64_t seed)
{
    RunResult r;
    r.pruned = pruned.clone();
    r.finetune = finetune_stage(r.pruned, tasks, spec, config, seed);
    r.target_dev = evaluate(r.pruned, TaskRole::target, tasks.target.dev);
    r.target_test = evaluate(r.pruned, TaskRole::target, tasks.target.test);
    if (spec.finetune_tasks.auxiliary) {
        r.auxiliary_test = evaluate(r.pruned, TaskRole::auxiliary, tasks.auxiliary.test);
    }
    return r;
}

RunResult run_schedule(const model::GatedTransformer& pretrained, const data::TaskPair& tasks,
                       const ScheduleSpec& spec, const TrainingConfig& config, std::uint64_t seed)
{
    return run_schedule(prune_stage(pretrained, tasks, spec, config, seed), tasks, spec, config, seed);
}

std::string to_string(AblationMode mode)
{
    switch (mode) {
    case AblationMode::weights_only: return "weights_only";
    case AblationMode::masks_only: return "masks_only";
    case AblationMode::both: return "both";
    }
    return "?";
}

AblationMode parse_ablation_mode(const std::string& text)
{
    if (text == "weights_only") return AblationMode::weights_only;
    if (text == "masks_only") return AblationMode::masks_only;
    if (text == "both") return AblationMode::both;
    throw ConfigError("unknown ablation mode '" + text + "'");
}

model::GateValues random_mask(const model::ModelConfig& config, double target, Rng& rng)
{
    const auto layout = model::GateLayout::of(config);
    auto scores = model::GateValues::filled(layout, 1.0);
    for (std::size_t i = 0; i < layout.num_layers; ++i) {
        for (std::size_t j = 0; j < layout.num_heads; ++j) scores.head(i, j) = rng.uniform_open();
        for (std::size_t u = 0; u < layout.ffn_dim; ++u) scores.fc(i, u) = rng.uniform_open();
    }
    for (std::size_t c = 0; c < layout.hidden_dim; ++c) scores.hidden(c) = rng.uniform_open();
    return sparsity::binarize_scores(scores, config, target).mask;
}

AblationResult run_ablation(AblationMode mode, const model::GatedTransformer& pretrained,
                            const data::TaskPair& tasks, const ScheduleSpec& spec, const TrainingConfig& config,
                            std::uint64_t seed, const PrunedModel* pruned_on_auxiliary)
{
    ScheduleSpec prune_spec = spec;
    prune_spec.prune_tasks = TaskSet{false, true};
    prune_spec.finetune_tasks = TaskSet{true, false};

    std::unique_ptr<PrunedModel> owned;
    if (!pruned_on_auxiliary) {
        owned = std::make_unique<PrunedModel>(prune_stage(pretrained, tasks, prune_spec, config, seed));
        pruned_on_auxiliary = owned.get();
    }
    const auto& source = *pruned_on_auxiliary;

    PrunedModel p;
    p.target_head = source.target_head.clone();
    p.auxiliary_head = source.auxiliary_head.clone();
    switch (mode) {
    case AblationMode::weights_only: {
        p.model = source.model.clone();
        Rng rng(Rng(seed).fork(salt_random_mask));
        p.target_mask = random_mask(pretrained.config(), spec.target_sparsity, rng);
        break;
    }
    case AblationMode::masks_only:
        p.model = pretrained.clone();
        p.target_mask = source.auxiliary_mask;
        break;
    case AblationMode::both:
        p.model = source.model.clone();
        p.target_mask = source.auxiliary_mask;
        break;
    }
    p.auxiliary_mask = p.target_mask;

    AblationResult r;
    r.mode = mode;
    r.mask = p.target_mask;
    r.finetune = finetune_stage(p, tasks, prune_spec, config, seed);
    r.target_dev = evaluate(p, TaskRole::target, tasks.target.dev);
    r.target_test = evaluate(p, TaskRole::target, tasks.target.test);
    r.pruned = std::move(p);
    return r;
}

}  // namespace taprune::pipeline
