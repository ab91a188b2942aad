#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "ovda/bench.hpp"
#include "ovda/checks.hpp"
#include "ovda/dataio.hpp"
#include "ovda/depth_model.hpp"
#include "ovda/training.hpp"

namespace ovda::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Shared model options: either a checkpoint or a freshly initialised model.
struct ModelOptions {
    std::string checkpoint;
    std::size_t patch = 4;
    std::size_t channels = 16;
    std::size_t modules = 2;
    std::uint64_t seed = 0;
};

// Session overrides; 0 / empty mean "as stored in the model".
struct SessionOptions {
    std::size_t context = 0;
    std::size_t caches = 0;
    std::string precision;
};

void add_model_options(CLI::App* app, ModelOptions& m, bool with_checkpoint = true) {
    if (with_checkpoint) app->add_option("--model", m.checkpoint, "Checkpoint to load (default: untrained model)");
    app->add_option("--patch", m.patch, "Encoder patch size (new models)")->check(CLI::PositiveNumber);
    app->add_option("--channels", m.channels, "Encoder and head channels (new models)")->check(CLI::PositiveNumber);
    app->add_option("--modules", m.modules, "Motion modules (new models)")->check(CLI::PositiveNumber);
    app->add_option("--seed", m.seed, "Seed for initialisation, sampling and scenes");
}

void add_session_options(CLI::App* app, SessionOptions& s) {
    app->add_option("--context", s.context, "Cached frames per motion module (default: the model's)");
    app->add_option("--caches", s.caches, "Virtual caches per motion module (default: the model's)");
    app->add_option("--precision", s.precision, "Cache precision")->check(CLI::IsMember({"fp32", "fp16"}));
}

ModelConfig model_config(const ModelOptions& m, std::size_t context, std::size_t caches, const std::string& precision) {
    ModelConfig cfg;
    cfg.patch = m.patch;
    cfg.encoder_channels = m.channels;
    cfg.head_channels = m.channels;
    cfg.motion_modules = m.modules;
    cfg.context = context;
    cfg.caches = caches;
    if (!precision.empty()) cfg.precision = parse_precision(precision);
    cfg.seed = m.seed;
    return cfg;
}

Model<float> obtain_model(const ModelOptions& m, std::size_t context, std::size_t caches = 1,
                          const std::string& precision = "") {
    if (!m.checkpoint.empty()) return load_checkpoint(m.checkpoint).first;
    return Model<float>::create(model_config(m, context ? context : 16, caches ? caches : 1, precision));
}

StreamOptions stream_options(const SessionOptions& s) {
    StreamOptions o{s.context, s.caches, std::nullopt};
    if (!s.precision.empty()) o.precision = parse_precision(s.precision);
    return o;
}

json config_json(const ModelConfig& c) {
    return {{"patch", c.patch},
            {"encoder_channels", c.encoder_channels},
            {"head_channels", c.head_channels},
            {"motion_modules", c.motion_modules},
            {"context", c.context},
            {"caches", c.caches},
            {"precision", to_string(c.precision)},
            {"seed", c.seed}};
}

json session_json(const Model<float>& model, const SessionOptions& s) {
    return {{"context", s.context ? s.context : model.config.context},
            {"caches", s.caches ? s.caches : model.config.caches},
            {"precision", s.precision.empty() ? to_string(model.config.precision) : s.precision}};
}

void write_run_config(const fs::path& dir, json record) {
    fs::create_directories(dir);
    std::ofstream out(dir / "run_config.json");
    if (!out) throw FormatError("cannot write " + (dir / "run_config.json").string());
    out << record.dump(2) << '\n';
}

fs::path parent_or_cwd(const fs::path& file) {
    return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

std::vector<SequenceManifest> manifests(const std::string& data) {
    const fs::path p(data);
    if (fs::is_regular_file(p)) return {read_manifest(p)};
    return list_dataset(p);
}

std::vector<LoadedSequence> load_dataset(const std::string& data, std::size_t stride) {
    std::vector<LoadedSequence> out;
    for (const auto& m : manifests(data)) out.push_back(load_sequence(m, stride));
    return out;
}

std::string frame_file(std::size_t n) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06zu.pfm", n);
    return buf;
}

DepthSequence read_predictions(const fs::path& dir, const LoadedSequence& gt) {
    DepthSequence pred;
    pred.kind = SequenceKind::Predicted;
    for (std::size_t n = 0; n < gt.depth.size(); ++n) {
        const fs::path f = dir / gt.id / frame_file(n);
        if (!fs::exists(f)) throw FormatError("missing prediction " + f.string());
        pred.frames.push_back(read_pfm(f));
        pred.valid.push_back(Tensor::ones(pred.frames.back().shape()));
    }
    return pred;
}

// Predictions either from PFMs written by `stream` or by streaming a model.
std::vector<DepthSequence> predictions(const std::string& pred_dir, const ModelOptions& m, const SessionOptions& s,
                                       const std::vector<LoadedSequence>& gts) {
    std::vector<DepthSequence> out;
    if (!pred_dir.empty()) {
        for (const auto& g : gts) out.push_back(read_predictions(pred_dir, g));
        return out;
    }
    const Model<float> model = obtain_model(m, s.context, s.caches, s.precision);
    for (const auto& g : gts) out.push_back(predict_sequence(model, g, stream_options(s)));
    return out;
}

// ---- subcommands -------------------------------------------------------------

struct GenArgs {
    std::string out;
    std::size_t sequences = 4;
    std::size_t frames = 64;
    std::size_t width = 64;
    std::size_t height = 48;
    std::uint64_t seed = 0;
    std::string spec;
    std::optional<double> noise;
    std::optional<double> invalid_fraction;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    std::optional<SceneSpec> from_file;
    if (!a.spec.empty()) {
        std::ifstream in(a.spec);
        if (!in) throw SpecError("cannot read scene spec " + a.spec);
        from_file = scene_from_json(std::string(std::istreambuf_iterator<char>(in), {}));
    }
    json seqs = json::array();
    for (std::size_t i = 0; i < a.sequences; ++i) {
        const std::uint64_t scene_seed = a.seed * 1000 + i;
        SceneSpec spec = from_file ? *from_file : random_scene(scene_seed);
        spec.seed = scene_seed;
        if (a.noise) spec.noise = *a.noise;
        if (a.invalid_fraction) spec.invalid_fraction = *a.invalid_fraction;
        char id[32];
        std::snprintf(id, sizeof id, "seq_%03zu", i);
        const auto seq = generate_sequence(spec, a.frames, a.width, a.height);
        write_sequence(fs::path(a.out) / id, id, spec, seq);
        seqs.push_back(id);
    }
    write_run_config(a.out, {{"subcommand", "gen"},
                             {"seed", a.seed},
                             {"sequences", seqs},
                             {"frames", a.frames},
                             {"width", a.width},
                             {"height", a.height},
                             {"spec", a.spec},
                             {"noise", a.noise ? json(*a.noise) : json(nullptr)},
                             {"invalid_fraction", a.invalid_fraction ? json(*a.invalid_fraction) : json(nullptr)}});
    out << "wrote " << a.sequences << " sequences of " << a.frames << " frames to " << a.out << '\n';
    return kOk;
}

struct TrainArgs {
    std::string data, out, csv, resume;
    ModelOptions model;
    SessionOptions session;
    TrainConfig train;
    LossWeights weights;
    AugmentConfig augment;
    bool constant_lr = false;
    bool no_augment = false;
};

int cmd_train(TrainArgs a, std::ostream& out) {
    a.train.seed = a.model.seed;
    a.train.cosine = !a.constant_lr;
    a.augment.enabled = !a.no_augment;
    const auto pool = load_dataset(a.data, 1);
    std::size_t start = 0;
    Model<float> model;
    if (!a.resume.empty()) {
        auto [m, step] = load_checkpoint(a.resume);
        model = std::move(m);
        start = static_cast<std::size_t>(step);
    } else {
        model = Model<float>::create(model_config(a.model, a.session.context ? a.session.context : 16,
                                                  a.session.caches ? a.session.caches : 1, a.session.precision));
    }
    const fs::path ckpt(a.out);
    const fs::path csv = a.csv.empty() ? parent_or_cwd(ckpt) / "train.csv" : fs::path(a.csv);
    fs::create_directories(parent_or_cwd(ckpt));
    fs::create_directories(parent_or_cwd(csv));
    const bool append = !a.resume.empty() && fs::exists(csv);
    std::ofstream log(csv, append ? std::ios::app : std::ios::trunc);
    if (!log) throw FormatError("cannot write " + csv.string());
    if (!append) write_train_csv_header(log);
    const auto history = train(model, pool, a.train, a.weights, a.augment, start,
                               [&](const StepStats& s) { write_train_csv_row(log, s); });
    const std::size_t final_step = start + a.train.steps;
    save_checkpoint(ckpt.string(), model, final_step);
    write_run_config(parent_or_cwd(ckpt),
                     {{"subcommand", "train"},
                      {"seed", a.train.seed},
                      {"data", a.data},
                      {"checkpoint", a.out},
                      {"csv", csv.string()},
                      {"resume", a.resume},
                      {"start_step", start},
                      {"final_step", final_step},
                      {"model", config_json(model.config)},
                      {"train",
                       {{"lr", a.train.lr},
                        {"lr_min", a.train.lr_min},
                        {"cosine", a.train.cosine},
                        {"steps", a.train.steps},
                        {"schedule_steps", a.train.schedule_steps},
                        {"batch", a.train.batch},
                        {"clip_frames", a.train.clip_frames},
                        {"max_stride", a.train.max_stride}}},
                      {"loss", {{"alpha", a.weights.alpha}, {"beta", a.weights.beta}, {"gamma", a.weights.gamma}}},
                      {"augment",
                       {{"enabled", a.augment.enabled},
                        {"max_fraction", a.augment.max_fraction},
                        {"max_rect_side", a.augment.max_rect_side}}}});
    if (!history.empty()) {
        out << "steps " << start + 1 << ".." << final_step << ", final loss " << history.back().loss << '\n';
    }
    return kOk;
}

struct InferArgs {
    std::string data, out;
    std::size_t stride = 1;
    ModelOptions model;
    SessionOptions session;
};

int cmd_stream(const InferArgs& a, std::ostream& out) {
    const Model<float> model = obtain_model(a.model, a.session.context, a.session.caches, a.session.precision);
    const auto seqs = load_dataset(a.data, a.stride);
    const StreamOptions opt = stream_options(a.session);
    fs::create_directories(a.out);
    std::ofstream lat(fs::path(a.out) / "latency.csv");
    lat << "sequence,frame,latency_ms,cache_bytes\n" << std::setprecision(6);
    for (const auto& s : seqs) {
        StreamingSession<float> session(model, opt.context, opt.caches, opt.precision);
        fs::create_directories(fs::path(a.out) / s.id);
        std::vector<double> ms;
        std::size_t peak = 0;
        for (std::size_t n = 0; n < s.rgb.size(); ++n) {
            const auto start = std::chrono::steady_clock::now();
            const Tensor pred = session.step(encode_frame(model.encoder, s.rgb[n]));
            ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
            peak = std::max(peak, session.memory_footprint());
            lat << s.id << ',' << n << ',' << ms.back() << ',' << session.memory_footprint() << '\n';
            write_pfm(fs::path(a.out) / s.id / frame_file(n), pred);
        }
        out << s.id << ": " << s.rgb.size() << " frames, median latency " << median(ms) << " ms, peak cache "
            << peak << " bytes\n";
    }
    write_run_config(a.out, {{"subcommand", "stream"},
                             {"seed", a.model.seed},
                             {"data", a.data},
                             {"model_path", a.model.checkpoint},
                             {"stride", a.stride},
                             {"model", config_json(model.config)},
                             {"session", session_json(model, a.session)}});
    return kOk;
}

int cmd_infer_batch(const InferArgs& a, std::ostream& out) {
    const Model<float> model = obtain_model(a.model, a.session.context, a.session.caches, a.session.precision);
    const std::size_t caches = a.session.caches ? a.session.caches : model.config.caches;
    if (caches != 1) throw std::invalid_argument("infer-batch: the batch oracle supports a single cache only");
    const std::size_t band = a.session.context ? a.session.context : model.config.context;
    for (const auto& s : load_dataset(a.data, a.stride)) {
        fs::create_directories(fs::path(a.out) / s.id);
        const auto preds = predict_batch(model, encode_sequence(model.encoder, s.rgb), band);
        for (std::size_t n = 0; n < preds.size(); ++n) write_pfm(fs::path(a.out) / s.id / frame_file(n), preds[n]);
        out << s.id << ": " << preds.size() << " frames\n";
    }
    write_run_config(a.out, {{"subcommand", "infer-batch"},
                             {"seed", a.model.seed},
                             {"data", a.data},
                             {"model_path", a.model.checkpoint},
                             {"stride", a.stride},
                             {"band", band},
                             {"model", config_json(model.config)}});
    return kOk;
}

struct EvalArgs {
    std::string data, pred, out, align = "first";
    std::size_t stride = 1;
    std::size_t smooth = 4;
    ModelOptions model;
    SessionOptions session;
};

json eval_record(const char* name, const EvalArgs& a) {
    return {{"subcommand", name},
            {"seed", a.model.seed},
            {"data", a.data},
            {"pred", a.pred},
            {"model_path", a.model.checkpoint},
            {"stride", a.stride},
            {"session", {{"context", a.session.context}, {"caches", a.session.caches}, {"precision", a.session.precision}}}};
}

// Writes to --out (plus a run record beside it) or to stdout.
template <class Fn>
void emit(const std::string& path, std::ostream& out, json record, Fn&& write) {
    if (path.empty()) {
        write(out);
        return;
    }
    const fs::path p(path);
    fs::create_directories(parent_or_cwd(p));
    std::ofstream f(p);
    if (!f) throw FormatError("cannot write " + p.string());
    write(f);
    record["output"] = path;
    write_run_config(parent_or_cwd(p), std::move(record));
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const AlignProtocol protocol = parse_align_protocol(a.align);
    const auto gts = load_dataset(a.data, a.stride);
    const auto preds = predictions(a.pred, a.model, a.session, gts);
    std::vector<EvalReport> reports;
    for (std::size_t i = 0; i < gts.size(); ++i) reports.push_back(evaluate(preds[i], gts[i].depth, protocol));
    const EvalReport pooled = pool_reports(reports);
    json record = eval_record("eval", a);
    record["align"] = a.align;
    emit(a.out, out, record, [&](std::ostream& os) { write_report_csv(os, pooled); });
    if (!a.out.empty()) {
        fs::path per_seq(a.out);
        per_seq.replace_filename(per_seq.stem().string() + "_sequences.csv");
        std::ofstream os(per_seq);
        os << "sequence,absrel,delta1,pixels,scale,shift\n" << std::setprecision(9);
        for (std::size_t i = 0; i < gts.size(); ++i) {
            const EvalReport& r = reports[i];
            os << gts[i].id << ',' << r.absrel << ',' << r.delta1 << ',' << r.pixels << ',' << r.align.scale << ','
               << r.align.shift << '\n';
        }
    }
    return kOk;
}

int cmd_drift(const EvalArgs& a, std::ostream& out) {
    if (a.smooth == 0) throw std::invalid_argument("drift: --smooth must be >= 1");
    const auto gts = load_dataset(a.data, a.stride);
    const auto preds = predictions(a.pred, a.model, a.session, gts);
    std::vector<DepthSequence> gt_depth;
    for (const auto& g : gts) gt_depth.push_back(g.depth);
    const DriftCurve curve = scale_drift_curve(preds, gt_depth, a.smooth);
    json record = eval_record("drift", a);
    record["smooth"] = a.smooth;
    emit(a.out, out, record, [&](std::ostream& os) { write_drift_csv(os, curve); });
    return kOk;
}

struct BenchArgs {
    std::string out;
    std::vector<std::size_t> contexts{8, 16, 32};
    std::size_t caches = 1;
    std::string precision = "fp32";
    std::size_t frames = 128;
    std::size_t width = 32, height = 32;
    std::size_t prefix_samples = 16;
    ModelOptions model;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
    if (a.contexts.empty()) throw std::invalid_argument("bench: need at least one --context");
    const std::size_t cmax = *std::max_element(a.contexts.begin(), a.contexts.end());
    if (cmax == 0) throw std::invalid_argument("bench: --context must be >= 1");
    const Model<float> model = obtain_model(a.model, cmax, a.caches, a.precision);
    if (cmax > model.config.context) throw std::invalid_argument("bench: --context exceeds the model's context");
    const std::size_t N = std::max(a.frames, 4 * cmax) + cmax;
    SceneSpec spec = random_scene(a.model.seed);
    spec.forward_velocity = std::min(spec.forward_velocity, 0.02);
    const auto gen = generate_sequence(spec, N, a.width, a.height);
    const auto feats = encode_sequence(model.encoder, gen.rgb);
    std::vector<LatencyReport> rows;
    for (std::size_t c : a.contexts) {
        rows.push_back(measure_latency(model, feats, c, a.caches, parse_precision(a.precision), a.prefix_samples));
    }
    json record{{"subcommand", "bench"},
                {"seed", a.model.seed},
                {"contexts", a.contexts},
                {"caches", a.caches},
                {"precision", a.precision},
                {"frames", N},
                {"width", a.width},
                {"height", a.height},
                {"prefix_samples", a.prefix_samples},
                {"model", config_json(model.config)}};
    emit(a.out, out, record, [&](std::ostream& os) {
        write_bench_csv_header(os);
        for (const auto& r : rows) write_bench_csv_row(os, r);
    });
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Online video depth: synthetic data, training, streaming inference and evaluation", "ovda"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--sequences", gen.sequences, "Number of sequences")->check(CLI::PositiveNumber);
    g->add_option("--frames", gen.frames, "Frames per sequence");
    g->add_option("--width", gen.width, "Frame width")->check(CLI::PositiveNumber);
    g->add_option("--height", gen.height, "Frame height")->check(CLI::PositiveNumber);
    g->add_option("--seed", gen.seed, "Scene seed");
    g->add_option("--spec", gen.spec, "Scene spec JSON used for every sequence");
    g->add_option("--noise", gen.noise, "Override RGB noise stddev");
    g->add_option("--invalid-fraction", gen.invalid_fraction, "Override invalid-pixel probability");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Fine-tune the head on a dataset (encoder frozen)");
    t->add_option("--data", tr.data, "Dataset directory or manifest")->required();
    t->add_option("--out", tr.out, "Checkpoint to write")->required();
    t->add_option("--csv", tr.csv, "Training log (default: train.csv beside the checkpoint)");
    t->add_option("--resume", tr.resume, "Checkpoint to continue from");
    add_model_options(t, tr.model, false);
    add_session_options(t, tr.session);
    t->add_option("--steps", tr.train.steps, "Optimisation steps");
    t->add_option("--lr", tr.train.lr, "Learning rate");
    t->add_option("--lr-min", tr.train.lr_min, "Final learning rate of the cosine schedule");
    t->add_flag("--constant-lr", tr.constant_lr, "Disable the cosine schedule");
    t->add_option("--schedule-steps", tr.train.schedule_steps, "Cosine horizon (default: last step of this run)");
    t->add_option("--batch", tr.train.batch, "Clips per step")->check(CLI::PositiveNumber);
    t->add_option("--clip-frames", tr.train.clip_frames, "Frames per training clip");
    t->add_option("--stride", tr.train.max_stride, "Largest frame stride sampled")->check(CLI::Range(1, 4));
    t->add_option("--alpha", tr.weights.alpha, "Weight of the scene-level SSI loss");
    t->add_option("--beta", tr.weights.beta, "Weight of the temporal gradient matching loss");
    t->add_option("--gamma", tr.weights.gamma, "Weight of the scale-and-shift consistency loss");
    t->add_flag("--no-augment", tr.no_augment, "Disable frame augmentation");
    t->add_option("--max-fraction", tr.augment.max_fraction, "Largest zeroed fraction per frame")
        ->check(CLI::Range(0.0, 1.0));

    InferArgs st;
    auto* s = app.add_subcommand("stream", "Streaming inference; writes inverse-depth PFMs and latency.csv");
    s->add_option("--data", st.data, "Dataset directory or manifest")->required();
    s->add_option("--out", st.out, "Output directory")->required();
    s->add_option("--stride", st.stride, "Frame stride")->check(CLI::Range(1, 4));
    add_model_options(s, st.model);
    add_session_options(s, st.session);

    InferArgs ib;
    auto* b = app.add_subcommand("infer-batch", "Batch-mode reference inference");
    b->group("");
    b->add_option("--data", ib.data, "Dataset directory or manifest")->required();
    b->add_option("--out", ib.out, "Output directory")->required();
    b->add_option("--stride", ib.stride, "Frame stride")->check(CLI::Range(1, 4));
    add_model_options(b, ib.model);
    add_session_options(b, ib.session);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "AbsRel / delta1 against ground truth");
    e->add_option("--data", ev.data, "Ground-truth dataset directory or manifest")->required();
    e->add_option("--pred", ev.pred, "Predictions written by `stream` (default: stream the model)");
    e->add_option("--out", ev.out, "Report CSV (default: stdout)");
    e->add_option("--align", ev.align, "Alignment protocol")->check(CLI::IsMember({"first", "global500", "globalall"}));
    e->add_option("--stride", ev.stride, "Frame stride")->check(CLI::Range(1, 4));
    add_model_options(e, ev.model);
    add_session_options(e, ev.session);

    EvalArgs dr;
    auto* d = app.add_subcommand("drift", "Scale drift versus frame index");
    d->add_option("--data", dr.data, "Ground-truth dataset directory or manifest")->required();
    d->add_option("--pred", dr.pred, "Predictions written by `stream` (default: stream the model)");
    d->add_option("--out", dr.out, "Curve CSV (default: stdout)");
    d->add_option("--smooth", dr.smooth, "Moving-average window (1 = raw)");
    d->add_option("--stride", dr.stride, "Frame stride")->check(CLI::Range(1, 4));
    add_model_options(d, dr.model);
    add_session_options(d, dr.session);

    BenchArgs be;
    auto* n = app.add_subcommand("bench", "Streaming latency versus batch recomputation");
    n->add_option("--out", be.out, "Report CSV (default: stdout)");
    n->add_option("--context", be.contexts, "Context lengths to measure (repeatable)");
    n->add_option("--caches", be.caches, "Virtual caches")->check(CLI::PositiveNumber);
    n->add_option("--precision", be.precision, "Cache precision")->check(CLI::IsMember({"fp32", "fp16"}));
    n->add_option("--frames", be.frames, "Frames measured after warm-up (at least 4x the context)");
    n->add_option("--width", be.width, "Frame width")->check(CLI::PositiveNumber);
    n->add_option("--height", be.height, "Frame height")->check(CLI::PositiveNumber);
    n->add_option("--prefix-samples", be.prefix_samples, "Frames at which batch recomputation is timed")
        ->check(CLI::PositiveNumber);
    add_model_options(n, be.model);

    CheckOptions ck;
    auto* c = app.add_subcommand("check", "Run the verification suite");
    c->add_option("--seed", ck.seed, "Seed for the randomised checks");
    c->add_flag("--inject-band-bug", ck.inject_band_bug, "Widen the batch attention band by one frame");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kOk : kUsageError;
    }

    try {
        if (g->parsed()) return cmd_gen(gen, out);
        if (t->parsed()) return cmd_train(tr, out);
        if (s->parsed()) return cmd_stream(st, out);
        if (b->parsed()) return cmd_infer_batch(ib, out);
        if (e->parsed()) return cmd_eval(ev, out);
        if (d->parsed()) return cmd_drift(dr, out);
        if (n->parsed()) return cmd_bench(be, out);
        if (c->parsed()) return print_checks(out, run_checks(ck)) ? kOk : kCheckFailed;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kUsageError;
    }
    return kUsageError;
}

}  // namespace ovda::cli
