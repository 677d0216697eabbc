#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cli_impl.hpp"
#include "plm/checkpoint.hpp"
#include "plm/cli.hpp"
#include "plm/contact_image.hpp"
#include "plm/error.hpp"
#include "plm/metrics.hpp"
#include "plm/tokenizer.hpp"
#include "plm/trainer.hpp"

namespace plm {
namespace {

namespace fs = std::filesystem;

constexpr std::string_view kSizeGuidance =
    "Model size guidance: pretraining works best with 512 < hidden_size < 3072 and 8 < layers < 24, "
    "where wider models tolerate more layers. Desk-scale runs use far smaller models.";

// Explicitly given model flags override the preset (or the built-in defaults).
class ModelFlags {
public:
    void add(CLI::App& app) {
        app.add_option("--preset", preset_, "grid preset, e.g. hidden-2048-layer-24-head-16")
            ->check(CLI::IsMember(preset_names()));
        field(app, "--hidden-size", &ModelConfig::hidden_size, "hidden width");
        field(app, "--layers", &ModelConfig::num_layers, "encoder layers");
        field(app, "--heads", &ModelConfig::num_heads, "attention heads");
        field(app, "--ffn-size", &ModelConfig::ffn_size, "feed-forward width (0 = 4 x hidden)");
        field(app, "--max-positions", &ModelConfig::max_positions, "position table size");
        field(app, "--dropout", &ModelConfig::dropout, "dropout rate");
        field(app, "--pre-ln", &ModelConfig::pre_ln, "layer norm before each sublayer (false = post-LN)");
        field(app, "--ln-eps", &ModelConfig::ln_eps, "layer norm epsilon");
        field(app, "--head-hidden", &ModelConfig::head_hidden, "task head hidden width (0 = hidden size)");
    }

    bool architecture_given() const {
        if (!preset_.empty()) return true;
        return std::ranges::any_of(fields_, [this](const auto& f) { return f.first != dropout_ && f.first->count() > 0; });
    }

    bool dropout_given() const { return dropout_->count() > 0; }
    double dropout() const { return dropout_->as<double>(); }

    ModelConfig resolve() const {
        ModelConfig config = preset_.empty() ? ModelConfig{} : preset(preset_);
        for (const auto& [opt, apply] : fields_) {
            if (opt->count() > 0) apply(config);
        }
        config.validate();
        return config;
    }

private:
    template <typename F>
    void field(CLI::App& app, const std::string& name, F ModelConfig::*member, const std::string& help) {
        auto value = std::make_shared<F>(ModelConfig{}.*member);
        CLI::Option* opt = app.add_option(name, *value, help)->capture_default_str();
        if (name == "--dropout") dropout_ = opt;
        fields_.emplace_back(opt, [value, member](ModelConfig& c) { c.*member = *value; });
    }

    std::string preset_;
    CLI::Option* dropout_ = nullptr;
    std::vector<std::pair<CLI::Option*, std::function<void(ModelConfig&)>>> fields_;
};

void add_train_flags(CLI::App& app, TrainOptions& t) {
    app.add_option("--steps", t.schedule.total_steps, "optimizer updates")->capture_default_str();
    app.add_option("--warmup", t.schedule.warmup_steps, "linear warmup steps")->capture_default_str();
    app.add_option("--lr", t.schedule.peak, "peak learning rate")->capture_default_str();
    app.add_option("--batch-size", t.batch_size, "sequences per step")->capture_default_str();
    app.add_option("--max-len", t.max_len, "tokens per sequence including [CLS] and [SEP]")->capture_default_str();
    app.add_option("--clip-norm", t.clip_norm, "global gradient norm limit")->capture_default_str();
    app.add_option("--report-every", t.report_every, "steps between report rows")->capture_default_str();
    app.add_option("--weight-decay", t.adam.weight_decay, "decoupled weight decay")->capture_default_str();
    app.add_option("--beta1", t.adam.beta1, "Adam beta1")->capture_default_str();
    app.add_option("--beta2", t.adam.beta2, "Adam beta2")->capture_default_str();
    app.add_option("--adam-eps", t.adam.eps, "Adam epsilon")->capture_default_str();
    app.add_option("--seed", t.seed, "run seed")->capture_default_str();
}

std::optional<RangeBand> parse_band(const std::string& name) {
    if (name.empty() || name == "all" || name == "none") return std::nullopt;
    for (auto b : {RangeBand::short_range, RangeBand::medium_range, RangeBand::long_range}) {
        if (band_name(b) == name) return b;
    }
    throw ConfigError("unknown band '" + name + "' (expected short, medium or long)");
}

void print_resolved(const CLI::App& sub, std::ostream& out, const ModelConfig* model) {
    out << "# resolved config: " << sub.get_name() << '\n';
    for (const CLI::Option* opt : sub.get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string& name = opt->get_lnames().front();
        if (name == "help" || name == "config") continue;
        const std::string value = opt->count() > 0 ? opt->as<std::string>() : opt->get_default_str();
        if (!value.empty()) out << name << " = " << value << '\n';
    }
    if (model) {
        const std::string text = config_text(*model);
        std::size_t start = 0;
        while (start < text.size()) {
            const auto end = text.find('\n', start);
            out << "# model " << text.substr(start, end - start) << '\n';
            if (end == std::string::npos) break;
            start = end + 1;
        }
    }
    out.flush();
}

void print_report_row(std::ostream& out, const TrainRecord& r) {
    out << fmt::format("step={} lr={:.6g} loss={:.4f} ppl={:.4f} seconds={:.1f}\n", r.step, r.lr, r.loss, r.ppl,
                       r.seconds);
    out.flush();
}

void print_metrics(std::ostream& out, const std::vector<std::pair<std::string, double>>& metrics) {
    for (const auto& [name, value] : metrics) out << fmt::format("{}={:.4f}\n", name, value);
}

fs::path prepare_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
    return fs::path(dir);
}

const ProteinRecord& pick_record(std::span<const ProteinRecord> records, const std::string& id) {
    if (records.empty()) throw ContractError("no records in input");
    if (id.empty()) return records.front();
    for (const auto& r : records) {
        if (r.id == id) return r;
    }
    throw ContractError("no record with id '" + id + "'");
}

// ---- gen ------------------------------------------------------------------------

struct GenArgs {
    std::string kind;
    std::string out_dir;
    std::uint64_t seed = 0;
    SyntheticParams params;
    std::string motifs;
    std::string label_set = "ss3";
};

void add_gen(CLI::App& app, GenArgs& a) {
    app.add_option("--task", a.kind, "motif, homology, contact, mutation or ss_rule")->required();
    app.add_option("-o,--out", a.out_dir, "output directory")->required();
    app.add_option("--count", a.params.count, "records to generate")->capture_default_str();
    app.add_option("--seed", a.seed, "generator seed")->capture_default_str();
    app.add_option("--min-length", a.params.min_length, "shortest sequence")->capture_default_str();
    app.add_option("--max-length", a.params.max_length, "longest sequence")->capture_default_str();
    app.add_option("--family-size", a.params.family_size, "records per family (motif)")->capture_default_str();
    app.add_option("--motifs", a.motifs, "comma-separated motifs (default: eight built-in 5-mers)");
    app.add_option("--pair-rate", a.params.contact_pair_rate, "mirror copy probability (contact)")
        ->capture_default_str();
    app.add_option("--max-near", a.params.max_near, "largest near Hamming distance (mutation)")->capture_default_str();
    app.add_option("--min-far", a.params.min_far, "smallest far Hamming distance (mutation)")->capture_default_str();
    app.add_option("--max-far", a.params.max_far, "largest far Hamming distance (mutation)")->capture_default_str();
    app.add_option("--count-far", a.params.count_far, "far records (mutation)")->capture_default_str();
    app.add_option("--label-set", a.label_set, "ss3 or ss8 (ss_rule)")->capture_default_str();
}

int run_gen(const CLI::App& sub, GenArgs& a, std::ostream& out) {
    print_resolved(sub, out, nullptr);
    const SyntheticKind kind = parse_synthetic_kind(a.kind);
    SyntheticParams p = a.params;
    p.motifs = default_motifs();
    if (!a.motifs.empty()) {
        p.motifs.clear();
        std::size_t start = 0;
        while (start <= a.motifs.size()) {
            const auto end = std::min(a.motifs.find(',', start), a.motifs.size());
            p.motifs.push_back(a.motifs.substr(start, end - start));
            start = end + 1;
        }
    }
    p.ss_task = parse_task_kind(a.label_set);
    const auto records = gen_synthetic(kind, p, a.seed);
    const fs::path dir = prepare_dir(a.out_dir);
    fs::path path;
    std::string text;
    switch (kind) {
        case SyntheticKind::motif:
            path = dir / "motif.fasta";
            text = write_fasta(records);
            break;
        case SyntheticKind::homology:
            path = dir / "homology.txt";
            text = serialize_task_records(records, TaskKind::remote_homology);
            break;
        case SyntheticKind::contact:
            path = dir / "contact.txt";
            text = serialize_task_records(records, TaskKind::contact);
            break;
        case SyntheticKind::mutation:
            path = dir / "mutation.txt";
            text = serialize_task_records(records, TaskKind::fluorescence);
            break;
        case SyntheticKind::ss_rule:
            path = dir / "ss_rule.txt";
            text = serialize_task_records(records, p.ss_task);
            break;
    }
    write_file(path, text);
    out << fmt::format("wrote {} records to {}\n", records.size(), path.string());
    return kExitOk;
}

// ---- pretrain -------------------------------------------------------------------

struct PretrainArgs {
    std::string train;
    std::string valid;
    std::string out_dir;
    ModelFlags model;
    TrainOptions opts;
    double mask_rate = kDefaultMaskRate;
    bool save_optimizer = true;
};

void add_pretrain(CLI::App& app, PretrainArgs& a) {
    app.add_option("--train", a.train, "training FASTA")->required();
    app.add_option("--valid", a.valid, "validation FASTA (default: the training set)");
    app.add_option("-o,--out", a.out_dir, "output directory for model.ckpt and report.csv")->required();
    a.model.add(app);
    add_train_flags(app, a.opts);
    app.add_option("--mask-rate", a.mask_rate, "fraction of residues selected for prediction")->capture_default_str();
    app.add_option("--save-optimizer", a.save_optimizer, "store Adam moments in the checkpoint")->capture_default_str();
    app.footer(std::string(kSizeGuidance));
}

int run_pretrain(const CLI::App& sub, PretrainArgs& a, std::ostream& out) {
    const ModelConfig config = a.model.resolve();
    print_resolved(sub, out, &config);
    const auto train = parse_fasta(read_file(a.train));
    const auto valid = a.valid.empty() ? std::vector<ProteinRecord>{} : parse_fasta(read_file(a.valid));
    const fs::path dir = prepare_dir(a.out_dir);

    PretrainOptions options{config, a.opts, a.mask_rate};
    options.train.on_report = [&out](const TrainRecord& r) { print_report_row(out, r); };
    const TrainResult result = pretrain(train, valid, options);

    save_checkpoint(dir / "model.ckpt", result.model, a.save_optimizer ? &result.optimizer : nullptr);
    write_file(dir / "report.csv", result.report.to_csv());
    const TrainRecord& last = result.report.records.back();
    out << fmt::format("loss={:.4f} ppl={:.4f}\n", last.loss, last.ppl);
    return kExitOk;
}

// ---- finetune -------------------------------------------------------------------

struct FinetuneArgs {
    std::string task;
    std::string head;
    std::string train;
    std::string valid;
    std::string checkpoint;
    std::string out_dir;
    int num_classes = 1195;
    CLI::Option* num_classes_opt = nullptr;
    ModelFlags model;
    TrainOptions opts;
    bool save_optimizer = false;
};

void add_finetune(CLI::App& app, FinetuneArgs& a) {
    app.add_option("--task", a.task, "ss3, ss8, homology, contact, fluorescence or stability")->required();
    app.add_option("--head", a.head, "head to train (must match the task; default: the task's head)");
    app.add_option("--train", a.train, "training task records")->required();
    app.add_option("--valid", a.valid, "validation task records; metrics are printed after training");
    app.add_option("--checkpoint", a.checkpoint, "pretrained checkpoint (default: fresh initialization)");
    app.add_option("-o,--out", a.out_dir, "output directory for model.ckpt and report.csv")->required();
    a.num_classes_opt =
        app.add_option("--num-classes", a.num_classes, "fold classes for the homology head")->capture_default_str();
    a.model.add(app);
    add_train_flags(app, a.opts);
    app.add_option("--save-optimizer", a.save_optimizer, "store Adam moments in the checkpoint")->capture_default_str();
    app.footer(std::string(kSizeGuidance));
}

int run_finetune(const CLI::App& sub, FinetuneArgs& a, std::ostream& out) {
    const TaskKind task = parse_task_kind(a.task);
    if (!a.head.empty() && parse_head_kind(a.head) != head_for_task(task)) {
        throw ContractError("head '" + a.head + "' cannot be trained on task '" + a.task + "' (expected '" +
                            std::string(head_name(head_for_task(task))) + "')");
    }
    std::optional<Model> base;
    ModelConfig config;
    if (!a.checkpoint.empty()) {
        base = load_checkpoint(a.checkpoint).model;
        // Architecture comes from the checkpoint; only dropout may be overridden.
        if (a.model.architecture_given()) {
            throw ConfigError("model architecture flags cannot be combined with --checkpoint");
        }
        if (base->config.has_head(HeadKind::fold)) {
            if (a.num_classes_opt->count() > 0 && a.num_classes != base->config.fold_classes) {
                throw ConfigError(fmt::format("--num-classes {} differs from the checkpoint's fold head ({})",
                                              a.num_classes, base->config.fold_classes));
            }
        } else {
            base->config.fold_classes = a.num_classes;
        }
        config = base->config;
    } else {
        config = a.model.resolve();
        config.fold_classes = a.num_classes;
    }
    if (a.model.dropout_given()) config.dropout = a.model.dropout();
    config.validate();
    print_resolved(sub, out, &config);

    TaskParseOptions parse{config.fold_classes, a.opts.max_len >= 2 ? a.opts.max_len - 2 : 0};
    const auto train = parse_task_records(read_file(a.train), task, parse);
    const auto valid =
        a.valid.empty() ? std::vector<ProteinRecord>{} : parse_task_records(read_file(a.valid), task, parse);
    const fs::path dir = prepare_dir(a.out_dir);

    FinetuneOptions options;
    options.task = task;
    options.model = config;
    options.train = a.opts;
    if (a.model.dropout_given()) options.dropout = a.model.dropout();
    options.train.on_report = [&out](const TrainRecord& r) { print_report_row(out, r); };
    const TrainResult result = finetune(base ? &*base : nullptr, train, valid, options);

    save_checkpoint(dir / "model.ckpt", result.model, a.save_optimizer ? &result.optimizer : nullptr);
    write_file(dir / "report.csv", result.report.to_csv());
    out << fmt::format("loss={:.4f}\n", result.report.records.back().loss);
    if (!valid.empty()) {
        print_metrics(out, evaluate_task(predict_task(result.model, valid, task, a.opts.batch_size, a.opts.max_len),
                                         valid));
    }
    return kExitOk;
}

// ---- eval -----------------------------------------------------------------------

struct EvalArgs {
    std::string task;
    std::string data;
    std::string checkpoint;
    std::string predictions;
    std::string write_predictions;
    std::string band = "all";
    std::size_t max_len = 512;
    std::size_t batch_size = 16;
    int num_classes = 1195;
};

void add_eval(CLI::App& app, EvalArgs& a) {
    app.add_option("--task", a.task, "ss3, ss8, homology, contact, fluorescence or stability")->required();
    app.add_option("--data", a.data, "task records with ground-truth labels")->required();
    auto* ck = app.add_option("--checkpoint", a.checkpoint, "model to run");
    auto* pr = app.add_option("--predictions", a.predictions, "precomputed predictions instead of a model");
    ck->excludes(pr);
    app.add_option("--write-predictions", a.write_predictions, "also write the model's predictions here");
    app.add_option("--band", a.band, "contact pairs counted: all (separation >= 6), short, medium or long")
        ->capture_default_str();
    app.add_option("--max-len", a.max_len, "tokens per sequence when running a model")->capture_default_str();
    app.add_option("--batch-size", a.batch_size, "sequences per forward pass")->capture_default_str();
    app.add_option("--num-classes", a.num_classes, "fold classes (homology, with --predictions)")
        ->capture_default_str();
}

int run_eval(const CLI::App& sub, EvalArgs& a, std::ostream& out) {
    print_resolved(sub, out, nullptr);
    const TaskKind task = parse_task_kind(a.task);
    if (a.checkpoint.empty() == a.predictions.empty()) {
        throw ConfigError("eval needs exactly one of --checkpoint or --predictions");
    }
    const auto band = parse_band(a.band);
    const ContactRange range = band ? band_range(*band) : ContactRange{};

    TaskPredictions pred;
    std::vector<ProteinRecord> records;
    if (!a.checkpoint.empty()) {
        const Model model = load_checkpoint(a.checkpoint).model;
        const HeadKind head = head_for_task(task);
        if (!model.config.has_head(head)) {
            throw ContractError("checkpoint has no '" + std::string(head_name(head)) + "' head for task '" + a.task +
                                "'");
        }
        records = parse_task_records(read_file(a.data), task, {model.config.fold_classes, 0});
        pred = predict_task(model, records, task, a.batch_size, a.max_len);
        if (!a.write_predictions.empty()) write_file(a.write_predictions, cli::write_predictions(pred, records));
    } else {
        records = parse_task_records(read_file(a.data), task, {a.num_classes, 0});
        pred = cli::parse_predictions(read_file(a.predictions), task, records);
    }
    print_metrics(out, evaluate_task(pred, records, range));
    return kExitOk;
}

// ---- visualize ------------------------------------------------------------------

struct VisualizeArgs {
    std::string truth;
    std::string scores;
    std::string checkpoint;
    std::string data;
    std::string id;
    std::string band = "none";
    std::string out_path;
    std::size_t max_len = 512;
};

void add_visualize(CLI::App& app, VisualizeArgs& a) {
    app.add_option("--truth", a.truth, "contact task records; renders the true map of one record");
    app.add_option("--scores", a.scores, "square score matrix (whitespace-separated rows)");
    app.add_option("--checkpoint", a.checkpoint, "model whose contact scores are rendered (with --data)");
    app.add_option("--data", a.data, "contact task records for --checkpoint");
    app.add_option("--id", a.id, "record id (default: first record)");
    app.add_option("--band", a.band, "keep only short, medium or long range pixels")->capture_default_str();
    app.add_option("-o,--out", a.out_path, "output PGM path")->required();
    app.add_option("--max-len", a.max_len, "tokens per sequence when running a model")->capture_default_str();
}

int run_visualize(const CLI::App& sub, VisualizeArgs& a, std::ostream& out) {
    print_resolved(sub, out, nullptr);
    const int sources = int(!a.truth.empty()) + int(!a.scores.empty()) + int(!a.checkpoint.empty());
    if (sources != 1) throw ConfigError("visualize needs exactly one of --truth, --scores or --checkpoint");
    const auto band = parse_band(a.band);
    std::string image;
    std::size_t length = 0;
    if (!a.truth.empty()) {
        const auto records = parse_task_records(read_file(a.truth), TaskKind::contact);
        const auto& map = std::get<ContactMap>(pick_record(records, a.id).label);
        length = map.size;
        image = render_truth_pgm(map, band);
    } else if (!a.scores.empty()) {
        const auto [values, l] = cli::parse_score_matrix(read_file(a.scores));
        length = l;
        image = render_pgm(values, l, band);
    } else {
        if (a.data.empty()) throw ConfigError("--checkpoint needs --data");
        const Model model = load_checkpoint(a.checkpoint).model;
        const auto records = parse_task_records(read_file(a.data), TaskKind::contact);
        const ProteinRecord& rec = pick_record(records, a.id);
        const auto pred = predict_task(model, std::span(&rec, 1), TaskKind::contact, 1, a.max_len);
        const auto& scores = pred.contact_scores.front();
        length = static_cast<std::size_t>(std::llround(std::sqrt(double(scores.size()))));
        image = render_pgm(scores, length, band);
    }
    write_file(a.out_path, image);
    out << fmt::format("wrote {}x{} image to {}\n", length, length, a.out_path);
    return kExitOk;
}

// ---- vocab ----------------------------------------------------------------------

int run_vocab(const std::string& path, std::ostream& out) {
    std::string text;
    for (std::size_t id = 0; id < vocab::kSize; ++id) {
        text += fmt::format("{}\t{}\n", id, vocab::token(static_cast<TokenId>(id)));
    }
    out << text;
    if (!path.empty()) write_file(path, text);
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Protein language model toolkit: synthetic data, MLM pretraining, task finetuning, evaluation."};
    app.name("plm");
    app.require_subcommand(1);
    app.footer(std::string(kSizeGuidance));
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    GenArgs gen;
    PretrainArgs pre;
    FinetuneArgs fine;
    EvalArgs eval;
    VisualizeArgs vis;
    std::string vocab_out;

    CLI::App* gen_cmd = app.add_subcommand("gen", "write a synthetic corpus");
    CLI::App* pre_cmd = app.add_subcommand("pretrain", "masked-LM pretraining");
    CLI::App* fine_cmd = app.add_subcommand("finetune", "train a task head (and the encoder)");
    CLI::App* eval_cmd = app.add_subcommand("eval", "print task metrics as metric=value lines");
    CLI::App* vis_cmd = app.add_subcommand("visualize", "render a contact map as a binary PGM");
    CLI::App* vocab_cmd = app.add_subcommand("vocab", "print the token vocabulary");
    add_gen(*gen_cmd, gen);
    add_pretrain(*pre_cmd, pre);
    add_finetune(*fine_cmd, fine);
    add_eval(*eval_cmd, eval);
    add_visualize(*vis_cmd, vis);
    vocab_cmd->add_option("-o,--out", vocab_out, "also write the table to this file");
    for (CLI::App* sub : {gen_cmd, pre_cmd, fine_cmd, eval_cmd, vis_cmd, vocab_cmd}) {
        sub->add_option("--config", "key = value file; explicit flags override it");
    }

    try {
        std::vector<std::string> args = cli::expand_config(raw_args);
        std::reverse(args.begin(), args.end());
        try {
            app.parse(args);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e, out, err);
            return code == 0 ? kExitOk : kExitUsage;
        }
        if (gen_cmd->parsed()) return run_gen(*gen_cmd, gen, out);
        if (pre_cmd->parsed()) return run_pretrain(*pre_cmd, pre, out);
        if (fine_cmd->parsed()) return run_finetune(*fine_cmd, fine, out);
        if (eval_cmd->parsed()) return run_eval(*eval_cmd, eval, out);
        if (vis_cmd->parsed()) return run_visualize(*vis_cmd, vis, out);
        if (vocab_cmd->parsed()) return run_vocab(vocab_out, out);
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace plm
