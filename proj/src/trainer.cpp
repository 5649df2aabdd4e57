#include "mtlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mtlab/batcheval.hpp"
#include "mtlab/common.hpp"
#include "mtlab/pseudolabel.hpp"

namespace mtlab::trainer {

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::EmaOnly: return "ema-only";
        case TrainMode::SsDgod: return "ss-dgod";
        case TrainMode::WsDgod: return "ws-dgod";
        default: return "uda";
    }
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "ema-only") return TrainMode::EmaOnly;
    if (s == "ss-dgod") return TrainMode::SsDgod;
    if (s == "ws-dgod") return TrainMode::WsDgod;
    if (s == "uda") return TrainMode::Uda;
    throw UsageError("unknown train mode: " + s);
}

TrainerConfig parse_trainer_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config: " + path);
    TrainerConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // trim
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string s) {
            const auto b2 = s.find_first_not_of(" \t");
            const auto e2 = s.find_last_not_of(" \t");
            return b2 == std::string::npos ? std::string() : s.substr(b2, e2 - b2 + 1);
        };
        key = trim(key);
        val = trim(val);
        try {
            if (key == "alpha") c.alpha = std::stod(val);
            else if (key == "beta") c.beta = std::stod(val);
            else if (key == "lr") c.lr = std::stod(val);
            else if (key == "batch") c.batch = std::stoi(val);
            else if (key == "iters_pretrain") c.iters_pretrain = std::stoi(val);
            else if (key == "iters_mt") c.iters_mt = std::stoi(val);
            else if (key == "tau") c.tau = std::stod(val);
            else if (key == "T") c.temperature = std::stod(val);
            else if (key == "pl_mode") c.pl_mode = val;
            else if (key == "ema_every") c.ema_every = std::stoi(val);
            else if (key == "val_every") c.val_every = std::stoi(val);
            else if (key == "seed") c.seed = std::stoull(val);
            else throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key " + key);
        } catch (const std::invalid_argument&) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": bad value for " + key);
        }
    }
    return c;
}

void write_trainer_config(const TrainerConfig& c, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f << "alpha=" << c.alpha << "\n"
      << "beta=" << c.beta << "\n"
      << "lr=" << c.lr << "\n"
      << "batch=" << c.batch << "\n"
      << "iters_pretrain=" << c.iters_pretrain << "\n"
      << "iters_mt=" << c.iters_mt << "\n"
      << "tau=" << c.tau << "\n"
      << "T=" << c.temperature << "\n"
      << "pl_mode=" << c.pl_mode << "\n"
      << "ema_every=" << c.ema_every << "\n"
      << "val_every=" << c.val_every << "\n"
      << "seed=" << c.seed << "\n";
}

namespace {

void validate_config(const TrainerConfig& c) {
    if (c.alpha < 0.0 || c.alpha > 1.0) throw UsageError("alpha must lie in [0,1]");
    if (c.beta < 0.0) throw UsageError("beta must be >= 0");
    if (c.lr < 0.0) throw UsageError("lr must be >= 0");
    if (c.batch < 1) throw UsageError("batch must be >= 1");
    if (c.pl_mode != "soft" && c.pl_mode != "hard") throw UsageError("pl_mode must be soft|hard");
    if (c.ema_every < 1 || c.val_every < 1) throw UsageError("cadences must be >= 1");
}

void sgd_step(nnet::ParamVec& params, const nnet::ParamVec& grad, double lr) {
    for (std::size_t i = 0; i < params.size(); ++i) params.values[i] -= lr * grad.values[i];
}

std::vector<int> sample_indices(Rng& rng, int count, int n) {
    std::vector<int> idx(static_cast<std::size_t>(count));
    for (int& i : idx) i = rng.uniform_int(0, n - 1);
    return idx;
}

pseudolabel::TargetMode pick_target_mode(TrainMode mode, const std::string& pl_mode) {
    const bool soft = pl_mode == "soft";
    if (mode == TrainMode::WsDgod)
        return soft ? pseudolabel::TargetMode::WsSoft : pseudolabel::TargetMode::WsHard;
    return soft ? pseudolabel::TargetMode::SsSoft : pseudolabel::TargetMode::SsHard;
}

}  // namespace

nnet::ParamVec ema_update(const nnet::ParamVec& teacher, const nnet::ParamVec& student,
                          double alpha) {
    if (teacher.config_hash != student.config_hash || teacher.size() != student.size())
        throw ConfigError("teacher/student parameter vectors do not match");
    nnet::ParamVec out = teacher;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.values[i] = alpha * teacher.values[i] + (1.0 - alpha) * student.values[i];
    return out;
}

nnet::ParamVec pretrain(const nnet::ModelConfig& model, const TrainerConfig& config,
                        const std::vector<synthgen::Scene>& labeled) {
    validate_config(config);
    if (labeled.empty()) throw UsageError("pretrain requires labeled scenes");

    Rng rng(derive_seed(config.seed, 1));
    nnet::ParamVec params;
    {
        Rng init_rng(derive_seed(config.seed, 0));
        params = nnet::init_params(init_rng, model);
    }

    std::vector<Image> images(std::size_t(config.batch));
    std::vector<nnet::CellTargets> targets(std::size_t(config.batch));
    for (int it = 0; it < config.iters_pretrain; ++it) {
        const std::vector<int> idx = sample_indices(rng, config.batch, int(labeled.size()));
        std::vector<batcheval::LossJob> jobs;
        jobs.reserve(std::size_t(config.batch));
        for (int b = 0; b < config.batch; ++b) {
            const auto [weak, rec] = synthgen::apply_weak_aug(labeled[std::size_t(idx[std::size_t(b)])], rng);
            images[std::size_t(b)] = weak.image;
            targets[std::size_t(b)] =
                nnet::cell_targets_from_ground_truth(model, weak.boxes, weak.classes);
            jobs.push_back({batcheval::LossKind::Supervised, 0, 1.0 / config.batch,
                            &images[std::size_t(b)], &targets[std::size_t(b)], nullptr});
        }
        batcheval::BatchResult res;
        try {
            res = batcheval::accumulate_parallel(model, params, jobs, 1);
        } catch (const NumericError& e) {
            throw NumericError("pretraining diverged at iteration " + std::to_string(it) + ": " +
                               e.what());
        }
        if (!std::isfinite(res.loss))
            throw NumericError("pretraining diverged at iteration " + std::to_string(it));
        sgd_step(params, res.grad, config.lr);
    }
    return params;
}

namespace {

void run_iterations(TrainState& state, TrainMode mode, const TrainerConfig& config,
                    const TrainData& data, int iters, const TrainOptions& options) {
    const nnet::ModelConfig& model = state.model;
    const bool use_aux = mode != TrainMode::EmaOnly;
    const pseudolabel::TargetMode target_mode = pick_target_mode(mode, config.pl_mode);

    if (!data.labeled.train || data.labeled.train->empty())
        throw UsageError("training requires labeled scenes");
    if (use_aux) {
        if (data.aux.empty()) throw UsageError(to_string(mode) + " requires auxiliary domain data");
        for (const DomainTrainSet& d : data.aux)
            if (!d.train || d.train->empty())
                throw UsageError("auxiliary domain " + d.name + " has no training scenes");
    }

    // term layout: sup, then unsup per aux domain, then regul per aux domain
    state.term_names = {"sup"};
    if (use_aux) {
        for (const DomainTrainSet& d : data.aux) state.term_names.push_back("unsup_" + d.name);
        if (config.beta > 0.0)
            for (const DomainTrainSet& d : data.aux) state.term_names.push_back("regul_" + d.name);
    }
    const int num_terms = int(state.term_names.size());

    const int n_aux = use_aux ? int(data.aux.size()) : 0;
    const std::size_t max_jobs = std::size_t(config.batch) * (1 + 2 * std::size_t(n_aux));
    std::vector<Image> images;           // student views, one per job
    std::vector<Image> weak_images;      // shared weak views for consistency jobs
    std::vector<nnet::CellTargets> targets;
    std::vector<nnet::ForwardOutput> teacher_outputs;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> regul_hashes;

    for (int step = 0; step < iters; ++step) {
        images.clear();
        weak_images.clear();
        targets.clear();
        teacher_outputs.clear();
        regul_hashes.clear();
        images.reserve(max_jobs);
        weak_images.reserve(std::size_t(config.batch) * std::size_t(std::max(1, n_aux)));
        targets.reserve(max_jobs);
        teacher_outputs.reserve(std::size_t(config.batch) * std::size_t(std::max(1, n_aux)));

        std::vector<batcheval::LossJob> jobs;
        jobs.reserve(max_jobs);

        // labeled domain: weak view -> strong view, ground-truth targets
        {
            const auto& scenes = *data.labeled.train;
            const std::vector<int> idx = sample_indices(state.rng, config.batch, int(scenes.size()));
            for (int b = 0; b < config.batch; ++b) {
                const auto [weak, rec] =
                    synthgen::apply_weak_aug(scenes[std::size_t(idx[std::size_t(b)])], state.rng);
                images.push_back(synthgen::apply_strong_aug(weak.image, state.rng));
                targets.push_back(
                    nnet::cell_targets_from_ground_truth(model, weak.boxes, weak.classes));
                jobs.push_back({batcheval::LossKind::Supervised, 0, 1.0 / config.batch,
                                &images.back(), &targets.back(), nullptr});
            }
        }

        // auxiliary domains: teacher consumes the weak view, student the
        // strong view on the same weak base; the consistency branch feeds the
        // identical weak view to both networks.
        for (int d = 0; d < n_aux; ++d) {
            const DomainTrainSet& dom = data.aux[std::size_t(d)];
            const std::vector<int> idx =
                sample_indices(state.rng, config.batch, int(dom.train->size()));
            for (int b = 0; b < config.batch; ++b) {
                const synthgen::Scene& scene = (*dom.train)[std::size_t(idx[std::size_t(b)])];
                const auto [weak, rec] = synthgen::apply_weak_aug(scene, state.rng);
                weak_images.push_back(weak.image);
                const Image& weak_view = weak_images.back();

                teacher_outputs.push_back(nnet::forward(model, state.teacher, weak_view));
                const nnet::ForwardOutput& raw = teacher_outputs.back();

                std::optional<std::vector<int>> weak_label;
                if (mode == TrainMode::WsDgod) weak_label = weak.weak_label;
                const pseudolabel::PseudoLabelSet pl = pseudolabel::build_targets(
                    raw, target_mode, weak_label, config.tau, config.temperature);
                targets.push_back(pl.to_cell_targets());

                images.push_back(synthgen::apply_strong_aug(weak_view, state.rng));
                jobs.push_back({batcheval::LossKind::Pseudo, 1 + d, 1.0 / config.batch,
                                &images.back(), &targets.back(), nullptr});

                if (config.beta > 0.0) {
                    jobs.push_back({batcheval::LossKind::Consistency, 1 + n_aux + d,
                                    config.beta / config.batch, &weak_view, nullptr, &raw});
                    regul_hashes.emplace_back(weak_view.content_hash(), weak_view.content_hash());
                }
            }
        }

        batcheval::BatchResult res;
        try {
            res = batcheval::accumulate_parallel(model, state.student, jobs, num_terms);
        } catch (const NumericError& e) {
            throw NumericError("training diverged at iteration " + std::to_string(state.iteration) +
                               ": " + e.what());
        }
        if (!std::isfinite(res.loss))
            throw NumericError("training diverged at iteration " + std::to_string(state.iteration));

        sgd_step(state.student, res.grad, config.lr);
        state.iteration += 1;
        if (state.iteration % config.ema_every == 0)
            state.teacher = ema_update(state.teacher, state.student, config.alpha);

        state.loss_history.push_back({state.iteration, res.term_loss, res.loss});

        if (options.validator && state.iteration % config.val_every == 0) {
            const double score = options.validator(state.teacher);
            if (score > state.best_val_score || state.best_iteration == 0) {
                state.best_val_score = score;
                state.best_iteration = state.iteration;
                state.best_student = state.student;
                state.best_teacher = state.teacher;
            }
        }
        if (options.hook) {
            options.hook(IterRecord{state.iteration, state.student, state.teacher, res.term_loss,
                                    res.loss, regul_hashes});
        }
    }

    if (!options.validator || state.best_iteration == 0) {
        state.best_student = state.student;
        state.best_teacher = state.teacher;
        state.best_iteration = state.iteration;
    }
}

}  // namespace

void train_resume(TrainState& state, TrainMode mode, const TrainerConfig& config,
                  const TrainData& data, int iters, const TrainOptions& options) {
    validate_config(config);
    if (state.student.config_hash != state.teacher.config_hash)
        throw ConfigError("student and teacher must share one model config");
    run_iterations(state, mode, config, data, iters, options);
}

TrainState train(TrainMode mode, const nnet::ModelConfig& model, const TrainerConfig& config,
                 const TrainData& data, const nnet::ParamVec& init, const TrainOptions& options) {
    validate_config(config);
    if (init.config_hash != model.hash()) throw ConfigError("init params do not match model config");

    TrainState state;
    state.model = model;
    state.student = init;
    state.teacher = init;  // both networks start from the pretrained weights
    state.rng = Rng(derive_seed(config.seed, 2));
    run_iterations(state, mode, config, data, config.iters_mt, options);
    return state;
}

void write_loss_history_csv(const TrainState& state, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f << "iter,term,value\n";
    f.precision(17);
    for (const IterLosses& row : state.loss_history) {
        for (std::size_t t = 0; t < row.terms.size(); ++t)
            f << row.iteration << "," << state.term_names[t] << "," << row.terms[t] << "\n";
        f << row.iteration << ",total," << row.total << "\n";
    }
}

}  // namespace mtlab::trainer
