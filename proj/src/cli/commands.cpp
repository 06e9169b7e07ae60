#include "voplab/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "voplab/corpus/config_json.hpp"
#include "voplab/corpus/tensor_file.hpp"
#include "voplab/io/json_fields.hpp"
#include "voplab/io/spec_json.hpp"
#include "voplab/protocols/ledger.hpp"

namespace voplab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kRunArtifacts[] = {"resolved_config.json", "log.jsonl", "checkpoint.bin", "report.csv",
                                     "run_info.json", "lr_search.csv"};

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
    }
    return q + "\"";
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t threads = std::min(n, worker_threads());
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::string metric_columns() {
    std::string s;
    for (const char* dir : {"t2v", "v2t"}) {
        for (const char* m : {"R@1", "R@5", "R@10", "MdR", "MnR"}) s += std::string(",") + dir + "_" + m;
    }
    return s;
}

std::string metric_values(const SplitReport& r) {
    std::string s;
    for (const auto* rep : {&r.t2v, &r.v2t}) {
        for (std::size_t k : {1, 5, 10}) {
            auto it = rep->recall_at.find(k);
            s += "," + fixed(it == rep->recall_at.end() ? 0.0 : it->second, 3);
        }
        s += "," + fixed(rep->median_rank, 1) + "," + fixed(rep->mean_rank, 3);
    }
    return s;
}

Corpus load_dataset(const ExperimentConfig& c) {
    if (c.dataset.empty()) throw ConfigError("dataset: path required");
    if (!fs::exists(c.dataset / "manifest.json")) {
        throw ConfigError("dataset '" + c.dataset.string() + "' not found; run generate first");
    }
    Corpus corpus = load_corpus(c.dataset);
    if (to_json(corpus.config) != to_json(c.corpus)) {
        throw ConfigError("dataset '" + c.dataset.string() + "' was generated from a different corpus config");
    }
    if (corpus.split("val").size() == 0) throw ConfigError("corpus.n_val must be positive to train");
    return corpus;
}

void set_logit_scale(VopModel<float>& model, double value) {
    model.params().get(kLogitScale).value_mut()[0] = static_cast<float>(value);
}

std::vector<std::string> truncated_log(const fs::path& path, std::size_t step) {
    std::vector<std::string> keep;
    if (!fs::exists(path)) return keep;
    std::istringstream in(read_file_bytes(path));
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const json r = json::parse(line);
        const std::string kind = r.value("kind", "");
        const std::size_t s = r.value("step", std::size_t{0});
        if (kind == "run" || (kind == "step" && s < step) || (kind == "epoch" && s <= step)) keep.push_back(line);
    }
    return keep;
}

RunOutcome train_once(const ExperimentConfig& c, const Corpus& corpus, bool resume, bool force,
                      std::optional<std::size_t> max_steps, std::string* report_text) {
    const fs::path dir = c.output;
    if (dir.empty()) throw ConfigError("output: path required");
    const fs::path ckpt_path = dir / "checkpoint.bin", log_path = dir / "log.jsonl";
    if (resume) {
        if (!fs::exists(ckpt_path)) throw ConfigError("nothing to resume: '" + ckpt_path.string() + "' is missing");
    } else {
        bool occupied = false;
        for (const char* a : kRunArtifacts) occupied = occupied || fs::exists(dir / a);
        if (occupied && !force) {
            throw ClobberRefused("'" + dir.string() + "' already holds a run; pass --force to overwrite");
        }
        for (const char* a : kRunArtifacts) fs::remove(dir / a);
    }
    fs::create_directories(dir);
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();

    VopModel<float> model(c.model, c.prompts, c.protocol, c.train.seed);
    set_logit_scale(model, c.train.logit_scale_init);
    if (!c.backbone.empty()) {
        const auto backbone = load_checkpoint(c.backbone);
        if (load_parameters(model, backbone, false) == 0) {
            throw ConfigError("backbone '" + c.backbone.string() + "' shares no parameters with the model");
        }
    }
    Trainer trainer(model, corpus, c.train);
    std::size_t resumed_from = 0;
    std::vector<std::string> previous;
    if (resume) {
        const auto ckpt = load_checkpoint(ckpt_path);
        restore_trainer(trainer, ckpt);
        resumed_from = ckpt.state.step;
        previous = truncated_log(log_path, resumed_from);
    }
    write_text(dir / "resolved_config.json", to_json(c).dump(2) + "\n");
    {
        std::string text;
        for (const auto& l : previous) text += l + "\n";
        write_text(log_path, text);
    }
    std::ofstream log(log_path, std::ios::app | std::ios::binary);
    trainer.set_log([&](const json& r) { log << r.dump() << '\n'; });

    const std::size_t spe = trainer.steps_per_epoch();
    const std::size_t stop = std::min(trainer.total_steps(), max_steps.value_or(trainer.total_steps()));
    while (trainer.state().step < stop) {
        const std::size_t next = std::min(stop, (trainer.state().step / spe + 1) * spe);
        trainer.run(next);
        log.flush();
        save_checkpoint(ckpt_path, trainer);
    }
    log.close();

    RunOutcome outcome;
    outcome.val = evaluate_split(model, corpus.split("val"), c.train.eval_batch);
    outcome.trainable = model.params().count(true);
    outcome.percent = 100.0 * double(outcome.trainable) / kReferenceBackboneParams;
    outcome.steps = trainer.state().step;
    outcome.lr = c.train.lr;

    std::string report = std::string(kReportSchema) + "\nbanner,method,split,trainable,percent_vs_119.8M" +
                         metric_columns() + "\n";
    auto row = [&](const std::string& split, const SplitReport& r) {
        report += csv_field(kToyBanner) + "," + std::string(to_string(c.protocol.kind)) + "," + split + "," +
                  std::to_string(outcome.trainable) + "," + format_percent(outcome.percent) + metric_values(r) +
                  "\n";
    };
    row("val", outcome.val);
    if (corpus.split("test").size() > 0) {
        row("test", evaluate_split(model, corpus.split("test"), c.train.eval_batch));
    }
    write_text(dir / "report.csv", report);
    if (report_text) *report_text = report;

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(dir / "run_info.json", json{{"started", started},
                                           {"finished", utc_now()},
                                           {"seconds", seconds},
                                           {"resumed_from_step", resumed_from},
                                           {"stopped_at_step", outcome.steps},
                                           {"complete", outcome.steps == trainer.total_steps()}}
                                          .dump(2) + "\n");
    return outcome;
}

std::string lr_label(double lr) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", lr);
    return buf;
}

}  // namespace

std::size_t worker_threads() {
    if (const char* env = std::getenv("VOPLAB_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) throw ConfigError("VOPLAB_THREADS must be a positive integer");
        return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void cmd_generate(ExperimentConfig c, const CommandOptions& opts, std::ostream& out) {
    if (opts.seed) c.corpus.seed = *opts.seed;
    if (!opts.out.empty()) c.dataset = opts.out;
    if (c.dataset.empty()) throw ConfigError("dataset: path required");
    c.validate();
    if (fs::exists(c.dataset / "manifest.json")) {
        if (!opts.force) {
            throw ClobberRefused("dataset '" + c.dataset.string() + "' exists; pass --force to overwrite");
        }
        fs::remove_all(c.dataset);
    }
    const Corpus corpus = generate_corpus(c.corpus, worker_threads());
    write_corpus(corpus, c.dataset);
    out << "dataset " << c.dataset.string() << " fingerprint " << hex64(corpus.fingerprint()) << " train "
        << corpus.split("train").size() << " val " << corpus.split("val").size() << " test "
        << corpus.split("test").size() << "\n";
}

RunOutcome cmd_train(ExperimentConfig c, const CommandOptions& opts, std::ostream& out) {
    if (opts.seed) c.train.seed = *opts.seed;
    if (!opts.out.empty()) c.output = opts.out;
    if (opts.resume && opts.lr_search) throw ConfigError("--resume and --lr-search are exclusive");
    c.validate();
    const Corpus corpus = load_dataset(c);
    if (opts.lr_search) {
        if (c.output.empty()) throw ConfigError("output: path required");
        for (const char* a : kRunArtifacts) {
            if (fs::exists(c.output / a) && !opts.force) {
                throw ClobberRefused("'" + c.output.string() + "' already holds a run; pass --force to overwrite");
            }
        }
        const auto& grid = c.train.lr_grid;
        std::vector<RunOutcome> results(grid.size());
        parallel_for(grid.size(), [&](std::size_t i) {
            ExperimentConfig sub = c;
            sub.train.lr = grid[i];
            sub.output = c.output / "lr_search" / ("lr_" + lr_label(grid[i]));
            results[i] = train_once(sub, corpus, false, true, std::nullopt, nullptr);
        });
        std::size_t best = 0;
        std::string csv = std::string(kLrSearchSchema) + "\nlr" + metric_columns() + ",selected\n";
        for (std::size_t i = 1; i < grid.size(); ++i) {
            if (results[i].val.t2v.recall_at.at(1) > results[best].val.t2v.recall_at.at(1)) best = i;
        }
        for (std::size_t i = 0; i < grid.size(); ++i) {
            csv += lr_label(grid[i]) + metric_values(results[i].val) + "," + (i == best ? "1" : "0") + "\n";
        }
        c.train.lr = grid[best];
        const fs::path csv_path = c.output / "lr_search.csv";
        auto outcome = train_once(c, corpus, false, true, opts.max_steps, nullptr);
        write_text(csv_path, csv);
        out << csv << "selected lr " << lr_label(grid[best]) << "\n";
        return outcome;
    }
    std::string report;
    auto outcome = train_once(c, corpus, opts.resume, opts.force, opts.max_steps, &report);
    out << report;
    return outcome;
}

void cmd_count_params(const ExperimentConfig& c, const CommandOptions& opts, std::ostream& out) {
    std::vector<std::string> names = opts.protocols.empty() ? c.count_protocols : opts.protocols;
    if (names.empty()) {
        for (auto k : all_protocols()) names.emplace_back(to_string(k));
    }
    std::vector<Protocol> protocols;
    for (const auto& n : names) {
        Protocol p = c.protocol;
        try {
            p.kind = parse_protocol(n);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        protocols.push_back(p);
    }
    const double reconstructed = double(ledger_for(c.model, PromptSpec{}, Protocol{ProtocolKind::full}).model_total);
    std::string csv = std::string(kParamsSchema) +
                      "\nmethod,trainable,total,percent_vs_119.8M,percent_vs_reconstructed,reference_percent,"
                      "residual_pp\n";
    for (const auto& p : protocols) {
        const auto ledger = ledger_for(c.model, prompts_for(p, c.prompts, c.model), p);
        const double vs_rec = 100.0 * double(ledger.trainable_total) / reconstructed;
        // Full is reported against the model it trains rather than the fixed denominator.
        const double measured = p.kind == ProtocolKind::full ? vs_rec : ledger.percent;
        const double reference = reference_percent(p.kind);
        csv += std::string(to_string(p.kind)) + "," + std::to_string(ledger.trainable_total) + "," +
               std::to_string(ledger.model_total) + "," + format_percent(ledger.percent) + "," +
               format_percent(vs_rec) + "," + format_percent(reference) + "," + fixed(std::round((measured - reference) * 1000.0) / 1000.0 + 0.0, 3) +
               "\n";
    }
    if (!opts.out.empty()) {
        const fs::path path = opts.out / "params.csv";
        if (fs::exists(path) && !opts.force) throw ClobberRefused("'" + path.string() + "' exists; pass --force");
        fs::create_directories(opts.out);
        write_text(path, csv);
    }
    out << csv;
}

void cmd_ablate(ExperimentConfig c, const CommandOptions& opts, std::ostream& out) {
    if (opts.seed) c.train.seed = *opts.seed;
    if (!opts.out.empty()) c.output = opts.out;
    AblationSpec spec = c.ablate.value_or(AblationSpec{});
    if (opts.axis) spec.axis = parse_ablation_axis(*opts.axis);
    else if (!c.ablate) throw ConfigError("ablate: no axis given");
    if (opts.values) spec.values = *opts.values;
    if (!spec.values.is_array() || spec.values.empty()) {
        throw ConfigError("ablate: empty value grid for axis '" + std::string(to_string(spec.axis)) + "'");
    }
    if (c.output.empty()) throw ConfigError("output: path required");
    c.validate();

    struct Point {
        json value;
        std::string label;
        ExperimentConfig config;
    };
    std::vector<Point> points;
    for (const auto& v : spec.values) {
        Point p{v, axis_value_label(spec.axis, v), with_axis_value(c, spec.axis, v)};
        p.config.output = c.output / (std::string(to_string(spec.axis)) + "_" + p.label);
        points.push_back(std::move(p));
    }
    if (spec.axis == AblationAxis::depth) {
        std::stable_sort(points.begin(), points.end(), [](const Point& a, const Point& b) {
            const auto& pa = a.config.prompts;
            const auto& pb = b.config.prompts;
            const auto na = pa.depth_last - pa.depth_first, nb = pb.depth_last - pb.depth_first;
            return na != nb ? na < nb : pa.depth_first < pb.depth_first;
        });
    }
    const fs::path csv_path = c.output / "ablation.csv";
    if (fs::exists(csv_path) && !opts.force) {
        throw ClobberRefused("'" + c.output.string() + "' already holds a sweep; pass --force to overwrite");
    }
    const Corpus corpus = load_dataset(c);
    std::vector<RunOutcome> results(points.size());
    parallel_for(points.size(), [&](std::size_t i) {
        results[i] = train_once(points[i].config, corpus, false, opts.force, opts.max_steps, nullptr);
    });
    std::string csv = std::string(kAblationSchema) + "\nbanner,axis,value,method,trainable,percent_vs_119.8M" +
                      metric_columns() + "\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        csv += csv_field(kToyBanner) + "," + std::string(to_string(spec.axis)) + "," + csv_field(points[i].label) +
               "," + std::string(to_string(c.protocol.kind)) + "," + std::to_string(results[i].trainable) + "," +
               format_percent(results[i].percent) + metric_values(results[i].val) + "\n";
    }
    fs::create_directories(c.output);
    write_text(csv_path, csv);
    out << csv;
}

int run_guarded(const std::function<void()>& body, std::ostream& err) {
    try {
        body();
        return kExitOk;
    } catch (const ClobberRefused& e) {
        err << "error: " << e.what() << "\n";
        return kExitClobber;
    } catch (const NonFiniteLoss& e) {
        err << "error: " << e.what() << "\n";
        return kExitNonFinite;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace voplab
