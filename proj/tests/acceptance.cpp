// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>

#include "ovda/bench.hpp"
#include "ovda/dataio.hpp"
#include "ovda/depth_model.hpp"
#include "ovda/gradcheck.hpp"
#include "ovda/losses.hpp"
#include "ovda/training.hpp"
#include "test_support.hpp"

using namespace ovda;
using ovda::testing::random_tensor;
using ovda::testing::uniform_tensor;
using Td = BasicTensor<double>;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(3) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_diff(const std::vector<Tensor>& a, const std::vector<Tensor>& b, std::size_t count) {
    double d = 0;
    for (std::size_t i = 0; i < count; ++i) d = std::max(d, max_abs_diff(a[i], b[i]));
    return d;
}

// ---- 1, 2: streaming equivalence and causality -----------------------------------

Outcome streaming_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0;
    int configs = 0;
    for (std::size_t c : {2u, 4u, 8u, 16u}) {
        for (std::size_t N : {std::size_t{1}, c - 1, c, c + 5, 3 * c}) {
            std::mt19937_64 rng(1000 * c + N);
            const auto model = Model<float>::create(ovda::testing::small_config(c, 17 * c + N));
            const auto feats = ovda::testing::random_features(model, N, 4, 6, rng);
            worst = std::max(worst, max_diff(predict_batch(model, feats), predict_stream(model, feats), N));
            ++configs;
        }
    }
    const double secs = seconds_since(t0);
    return {configs == 20 && worst < 1e-5 && secs < 60,
            std::to_string(configs) + " configs, max |batch - stream| " + num(worst) + ", " + num(secs) + " s"};
}

Outcome causality() {
    const auto t0 = std::chrono::steady_clock::now();
    double leak = 0, downstream = 0;
    for (std::size_t c : {2u, 4u, 8u}) {
        std::mt19937_64 rng(50 + c);
        const std::size_t N = 2 * c + 3;
        const auto model = Model<float>::create(ovda::testing::small_config(c, 60 + c));
        const auto feats = ovda::testing::random_features(model, N, 4, 4, rng);
        const auto base = predict_batch(model, feats);
        const std::size_t per_frame = feats.tokens.size() / N;
        for (std::size_t k = 1; k < N; ++k) {
            auto perturbed = feats;
            for (std::size_t i = k * per_frame; i < (k + 1) * per_frame; ++i) perturbed.tokens[i] += 0.5f;
            const auto out = predict_batch(model, perturbed);
            leak = std::max(leak, max_diff(base, out, k));
            downstream = std::max(downstream, max_abs_diff(base[k], out[k]));
        }
    }
    return {leak <= 1e-6 && downstream > 1e-4 && seconds_since(t0) < 60,
            "max change before the perturbed frame " + num(leak) + " (perturbed frame itself moves " +
                num(downstream) + ")"};
}

// ---- 3: least-squares alignment ---------------------------------------------------

double residual(const std::vector<float>& p, const std::vector<float>& g, double s, double t) {
    double r = 0;
    for (std::size_t i = 0; i < p.size(); ++i) r += std::pow(s * p[i] + t - g[i], 2);
    return r;
}

// Coarse grid, then pattern search with halving steps.
double brute_force_residual(const std::vector<float>& p, const std::vector<float>& g) {
    double bs = 0, bt = 0, best = 1e300;
    for (double s = -6; s <= 6; s += 0.05)
        for (double t = -6; t <= 6; t += 0.05)
            if (const double r = residual(p, g, s, t); r < best) best = r, bs = s, bt = t;
    for (double step = 0.05; step > 1e-13; step *= 0.5) {
        for (bool moved = true; moved;) {
            moved = false;
            for (auto [ds, dt] : {std::pair{step, 0.0}, {-step, 0.0}, {0.0, step}, {0.0, -step}})
                if (const double r = residual(p, g, bs + ds, bt + dt); r < best) {
                    best = r, bs += ds, bt += dt, moved = true;
                }
        }
    }
    return best;
}

Outcome alignment_oracle() {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-3, 3);
    std::normal_distribution<double> noise(0, 0.3);
    double worst_gap = 0, worst_exact = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const double s = u(rng), t = u(rng);
        std::vector<float> p(40), g(40), exact(40);
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = static_cast<float>(u(rng));
            g[i] = static_cast<float>(s * p[i] + t + noise(rng));
            exact[i] = static_cast<float>(s * p[i] + t);
        }
        const auto fit = least_squares_align(p, g);
        worst_gap = std::max(worst_gap, std::abs(residual(p, g, fit.scale, fit.shift) - brute_force_residual(p, g)));
        // Targets were rounded to float, so recover (s, t) from the rounded data.
        const auto e = least_squares_align(p, exact);
        worst_exact = std::max({worst_exact, std::abs(e.scale - s), std::abs(e.shift - t)});
    }
    return {worst_gap <= 1e-6 && worst_exact <= 1e-6,
            "100 instances, max residual gap to brute force " + num(worst_gap) + ", exact affine error " +
                num(worst_exact)};
}

// ---- 4, 5: losses ---------------------------------------------------------------

using LossFn = std::function<ad::Var<double>(const ad::Var<double>&, const SequenceTarget<double>&)>;

SequenceTarget<double> random_target(std::size_t N, std::size_t P, std::mt19937_64& rng) {
    return {uniform_tensor<double>({N, P}, rng, 0.2, 2.0), Td({N, P}, 1.0)};
}

double eval_loss(const LossFn& f, const Td& pred, const SequenceTarget<double>& t) {
    ad::Tape<double> tape(false);
    return f(tape.constant(pred), t).value().item();
}

Outcome loss_correctness() {
    const std::vector<std::pair<std::string, LossFn>> losses{
        {"ssi", [](const ad::Var<double>& p, const SequenceTarget<double>& t) { return loss_ssi_scene(p, t); }},
        {"tgm", [](const ad::Var<double>& p, const SequenceTarget<double>& t) { return loss_tgm(p, t); }},
        {"sascon", [](const ad::Var<double>& p, const SequenceTarget<double>& t) { return loss_sascon(p, t); }},
    };
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(4);
    double affine = 0;
    for (int k = 0; k < 10; ++k) {
        const auto t = random_target(4, 10, rng);
        Td pred = t.gt;
        for (double& v : pred.data()) v = (0.5 + k) * v - 0.3 * k;
        for (const auto& [name, f] : losses) affine = std::max(affine, std::abs(eval_loss(f, pred, t)));
    }

    const SequenceTarget<double> sas_t{Td({2, 2}, {1, 2, 1, 2}), Td({2, 2}, 1.0)};
    const double sascon = eval_loss(losses[2].second, Td({2, 2}, {1, 2, 2, 4}), sas_t);
    const SequenceTarget<double> tgm_t{Td({2, 1}, {1, 2}), Td({2, 1}, 1.0)};
    ad::Tape<double> tape(false);
    const double tgm = tgm_aligned(tape.constant(Td({2, 1}, {1, 3})), tgm_t).value().item();

    double worst_rel = 0;
    int checks = 0;
    bool grads_ok = true;
    for (int seed = 0; seed < 10; ++seed) {
        std::mt19937_64 r(400 + seed);
        const auto t = random_target(3, 6 + seed % 4, r);
        const Td pred = random_tensor<double>(t.gt.shape(), r);
        for (const auto& [name, f] : losses) {
            ad::ScalarFn<double> fn = [&](ad::Tape<double>&, std::span<const ad::Var<double>> v) { return f(v[0], t); };
            const auto rep = ad::gradcheck(fn, {pred}, 1e-5, 1e-4);
            grads_ok = grads_ok && rep.passed;
            worst_rel = std::max(worst_rel, rep.worst);
            ++checks;
        }
    }
    const double secs = seconds_since(t0);
    return {affine <= 1e-6 && sascon == 0.75 && tgm == 1.0 && grads_ok && checks >= 30 && secs < 120,
            "affine max " + num(affine) + ", SaSCon fixture " + num(sascon) + ", TGM fixture " + num(tgm) + ", " +
                std::to_string(checks) + " gradchecks worst rel err " + num(worst_rel)};
}

Outcome gamma_zero_equivalence() {
    std::mt19937_64 rng(5);
    int identical = 0;
    for (int k = 0; k < 10; ++k) {
        const auto td = random_target(4, 12, rng);
        const SequenceTarget<float> t{td.gt.cast<float>(), td.mask.cast<float>()};
        const Tensor pred = random_tensor({4, 12}, rng);
        const LossWeights w{0.3 + k, 1.7, 0.0};
        ad::Tape<float> a, b;
        auto pa = a.parameter(pred), pb = b.parameter(pred);
        auto total = loss_total(pa, t, w);
        auto vda = loss_vda(pb, t, w);
        a.backward(total);
        b.backward(vda);
        const float x = total.value().item(), y = vda.value().item();
        if (std::memcmp(&x, &y, sizeof x) == 0 && a.grad(pa) == b.grad(pb)) ++identical;
    }
    return {identical == 10, std::to_string(identical) + "/10 instances bit-identical in value and gradient"};
}

// ---- 6, 7, 8: metrics and protocols -------------------------------------------------

Outcome metric_fixtures() {
    const std::vector<float> gt{1, 1}, pred{1, 1.5f};
    const double a = absrel(gt, pred), d = delta1(gt, pred);
    const bool perfect = absrel(gt, gt) == 0.0 && delta1(gt, gt) == 1.0;
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<float> u(0.01f, 100.0f);
    bool in_range = true;
    for (int k = 0; k < 1000; ++k) {
        std::vector<float> g(16), p(16);
        for (std::size_t i = 0; i < 16; ++i) g[i] = u(rng), p[i] = u(rng) - 10.0f;
        const double v = delta1(g, p);
        in_range = in_range && v >= 0.0 && v <= 1.0;
    }
    return {a == 0.25 && d == 0.5 && perfect && in_range,
            "absrel " + num(a) + ", delta1 " + num(d) + ", perfect " + (perfect ? "0/1" : "wrong") +
                ", fuzzed delta1 " + (in_range ? "within [0, 1]" : "out of range")};
}

DepthSequence random_gt(std::size_t frames, std::size_t pixels, std::mt19937_64& rng) {
    DepthSequence s;
    for (std::size_t n = 0; n < frames; ++n) {
        s.frames.push_back(uniform_tensor({1, pixels}, rng, 2.0, 60.0));
        s.valid.push_back(Tensor::ones({1, pixels}));
    }
    return s;
}

DepthSequence scaled_disparity(const DepthSequence& gt, const std::function<double(std::size_t)>& scale, double shift) {
    DepthSequence p;
    p.kind = SequenceKind::Predicted;
    for (std::size_t n = 0; n < gt.size(); ++n) {
        Tensor f(gt.frames[n].shape());
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(scale(n) / gt.frames[n][i] + shift);
        p.frames.push_back(std::move(f));
        p.valid.push_back(Tensor::ones(gt.frames[n].shape()));
    }
    return p;
}

Outcome drift_harness() {
    std::mt19937_64 rng(7);
    const std::vector<DepthSequence> gts{random_gt(5, 16, rng), random_gt(9, 16, rng)};
    std::vector<DepthSequence> affine;
    for (const auto& g : gts) affine.push_back(scaled_disparity(g, [](std::size_t) { return 0.7; }, 0.2));
    const auto flat = scale_drift_curve(affine, gts);
    double zero = 0;
    for (double v : flat.smoothed) zero = std::max(zero, std::abs(v));

    const std::vector<DepthSequence> long_gt{random_gt(40, 16, rng)};
    const std::vector<DepthSequence> ramp{
        scaled_disparity(long_gt[0], [](std::size_t j) { return 1.0 / (1.0 + 0.01 * j); }, 0.0)};
    const auto curve = scale_drift_curve(ramp, long_gt);
    double worst_rel = 0;
    for (std::size_t j = 1; j < curve.raw.size(); ++j)
        worst_rel = std::max(worst_rel, std::abs(curve.raw[j] - 0.01 * j) / (0.01 * j));

    bool support = flat.support.size() == 9;
    for (std::size_t j = 0; support && j < 9; ++j) support = flat.support[j] == (j < 5 ? 2u : 1u);
    return {zero <= 1e-6 && worst_rel <= 0.1 && support,
            "affine curve max " + num(zero) + ", ramp max rel err " + num(worst_rel) + ", support " +
                (support ? "matches" : "differs from") + " length counting"};
}

Outcome global_vs_first() {
    std::mt19937_64 rng(8);
    const auto gt = random_gt(30, 32, rng);
    const auto pred = scaled_disparity(gt, [](std::size_t j) { return 1.0 + 0.02 * j; }, 0.05);
    const double first = eval_first_frame(pred, gt).absrel;
    const double global500 = eval_global(pred, gt, 500).absrel;
    const double all = eval_global(pred, gt, std::nullopt).absrel;
    return {all <= first && global500 <= first,
            "AbsRel first " + num(first) + ", global500 " + num(global500) + ", globalall " + num(all)};
}

// ---- 9, 10: trained model on synthetic data ----------------------------------------

std::vector<LoadedSequence> synthetic_set(std::uint64_t first_seed, std::size_t count, std::size_t frames) {
    std::vector<LoadedSequence> out;
    for (std::size_t i = 0; i < count; ++i) {
        SceneSpec spec = random_scene(first_seed + i);
        out.push_back(to_loaded(generate_sequence(spec, frames, 32, 32), "s" + std::to_string(first_seed + i)));
    }
    return out;
}

// Learning rate used for toy-scale training runs; from random initialisation
// smaller rates often sit on the initial plateau for all 200 steps.
constexpr double kToyLr = 0.3;

struct TrainedFixture {
    Model<float> model;
    std::vector<LoadedSequence> held_out;
};

const TrainedFixture& trained_c16() {
    static const TrainedFixture fx = [] {
        ModelConfig cfg;
        cfg.context = 16;
        cfg.seed = 9;
        TrainedFixture f{Model<float>::create(cfg), synthetic_set(200, 3, 48)};
        TrainConfig tc;
        tc.lr = kToyLr;
        tc.steps = 200;
        tc.clip_frames = 16;
        tc.seed = 9;
        AugmentConfig off;
        off.enabled = false;
        train(f.model, synthetic_set(100, 4, 40), tc, LossWeights{}, off);
        return f;
    }();
    return fx;
}

Outcome context_ablation() {
    const auto& fx = trained_c16();
    const double d16 = evaluate_model(fx.model, fx.held_out, AlignProtocol::FirstFrame, {16, 0, {}}).delta1;
    const double d8 = evaluate_model(fx.model, fx.held_out, AlignProtocol::FirstFrame, {8, 0, {}}).delta1;
    double worst = 0;
    for (const auto& s : fx.held_out) {
        const auto feats = encode_sequence(fx.model.encoder, s.rgb);
        worst = std::max(worst, max_diff(predict_batch(fx.model, feats, 16), predict_stream(fx.model, feats, 16),
                                         s.rgb.size()));
    }
    const bool trend = d8 <= d16 + 0.01;
    return {worst < 1e-5, "equivalence at c=16 max diff " + num(worst) + "; delta1 c=8 " + num(d8) + " vs c=16 " +
                              num(d16) + " (trend " + (trend ? "holds" : "does not hold") + ", reported only)"};
}

Outcome precision_mode() {
    const auto& fx = trained_c16();
    const double full = evaluate_model(fx.model, fx.held_out, AlignProtocol::FirstFrame, {0, 0, PrecisionMode::Full32}).delta1;
    const double half =
        evaluate_model(fx.model, fx.held_out, AlignProtocol::FirstFrame, {0, 0, PrecisionMode::Emulated16}).delta1;
    StreamingSession<float> a(fx.model, 0, 0, PrecisionMode::Full32), b(fx.model, 0, 0, PrecisionMode::Emulated16);
    const auto feats = encode_sequence(fx.model.encoder, fx.held_out[0].rgb);
    bool halved = true;
    for (std::size_t n = 0; n < fx.held_out[0].rgb.size(); ++n) {
        a.step(frame_features(feats, n));
        b.step(frame_features(feats, n));
        halved = halved && 2 * b.memory_footprint() == a.memory_footprint();
    }
    return {std::abs(full - half) < 0.005 && halved,
            "delta1 fp32 " + num(full) + " vs fp16 " + num(half) + ", footprint " + std::to_string(b.memory_footprint()) +
                " of " + std::to_string(a.memory_footprint()) + " bytes"};
}

// ---- 11: toy training ---------------------------------------------------------------

struct TrainRun {
    double reduction = 0;
    bool frozen = true;
};

TrainRun toy_training(double lr, bool augment) {
    SceneSpec spec = random_scene(11);
    const std::vector<LoadedSequence> pool{to_loaded(generate_sequence(spec, 24, 32, 32), "toy")};
    Model<float> model = Model<float>::create(ModelConfig{});
    const Tensor w = model.encoder.weight, b = model.encoder.bias;
    TrainConfig cfg;
    cfg.lr = lr;
    cfg.steps = 200;
    TrainRun run;
    AugmentConfig aug;
    aug.enabled = augment;
    const auto history = train(model, pool, cfg, LossWeights{}, aug, 0, [&](const StepStats&) {
        run.frozen = run.frozen && model.encoder.weight == w && model.encoder.bias == b;
    });
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        head += history[i].loss / 5;
        tail += history[history.size() - 5 + i].loss / 5;
    }
    run.reduction = 1.0 - tail / head;
    return run;
}

Outcome toy_training_criterion() {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainRun run = toy_training(kToyLr, false);
    const double secs = seconds_since(t0);
    const TrainRun default_lr = toy_training(TrainConfig{}.lr, false);
    const TrainRun augmented = toy_training(kToyLr, true);
    return {run.reduction >= 0.3 && run.frozen && secs < 300,
            "lr " + num(kToyLr) + ": loss down " + num(100 * run.reduction) + "% (5-step averages), encoder " +
                (run.frozen ? "unchanged" : "MODIFIED") + ", " + num(secs) + " s; for reference lr " +
                num(TrainConfig{}.lr) + " gives " + num(100 * default_lr.reduction) + "%, with frame augmentation " +
                num(100 * augmented.reduction) + "%"};
}

// ---- 12: latency ---------------------------------------------------------------------

Outcome latency_property() {
    ModelConfig cfg;
    cfg.context = 16;
    const Model<float> model = Model<float>::create(cfg);
    SceneSpec spec = random_scene(12);
    spec.forward_velocity = 0.02;
    const std::size_t N = 128 + 16;
    const auto feats = encode_sequence(model.encoder, generate_sequence(spec, N, 32, 32).rgb);
    std::ofstream csv("acceptance_bench.csv");
    write_bench_csv_header(csv);
    bool faster = true;
    std::string detail;
    for (std::size_t c : {8u, 16u}) {
        const auto r = measure_latency(model, feats, c);
        write_bench_csv_row(csv, r);
        faster = faster && N >= 4 * c && r.stream_median_ms < r.batch_prefix_median_ms;
        detail += "c=" + std::to_string(c) + " stream " + num(r.stream_median_ms) + " ms vs batch recompute " +
                  num(r.batch_prefix_median_ms) + " ms; ";
    }
    return {faster, detail + "report in acceptance_bench.csv"};
}

// ---- 13: file formats --------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string le_float(float v) {
    std::string b(4, '\0');
    std::memcpy(b.data(), &v, 4);
    if constexpr (std::endian::native == std::endian::big) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
    return b;
}

Outcome file_formats() {
    const fs::path dir = fs::temp_directory_path() / "ovda_acceptance_formats";
    fs::create_directories(dir);
    // 2x2 map, rows stored bottom-up.
    std::string pfm_golden = "Pf\n2 2\n-1.0\n";
    for (float v : {3.5f, -4.0f, 1.0f, 0.25f}) pfm_golden += le_float(v);
    const Tensor map({2, 2}, {1.0f, 0.25f, 3.5f, -4.0f});
    write_pfm(dir / "a.pfm", map);
    const bool pfm_write = slurp(dir / "a.pfm") == pfm_golden;
    const bool pfm_read = read_pfm(dir / "a.pfm") == map;

    const std::string ppm_golden("P6\n2 1\n255\n\xff\xff\xff\x00\x80\x01", 17);
    {
        std::ofstream(dir / "g.ppm", std::ios::binary) << ppm_golden;
    }
    const Rgb8 img = read_ppm(dir / "g.ppm");
    write_ppm(dir / "b.ppm", img);
    const bool ppm_rt = slurp(dir / "b.ppm") == ppm_golden;
    write_ppm(dir / "w.ppm", to_rgb8(Tensor({1, 1, 3}, 1.0f)));
    const bool ppm_white = slurp(dir / "w.ppm") == std::string("P6\n1 1\n255\n\xff\xff\xff", 14);
    fs::remove_all(dir);
    return {pfm_write && pfm_read && ppm_rt && ppm_white,
            std::string("PFM write ") + (pfm_write ? "ok" : "differs") + ", PFM read " + (pfm_read ? "ok" : "differs") +
                ", PPM round trip " + (ppm_rt ? "ok" : "differs") + ", PPM white pixel " + (ppm_white ? "ok" : "differs")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"streaming equivalence", streaming_equivalence},
        {"causality", causality},
        {"alignment oracle", alignment_oracle},
        {"loss correctness", loss_correctness},
        {"gamma=0 equals the two-term loss", gamma_zero_equivalence},
        {"metric fixtures", metric_fixtures},
        {"scale-drift harness", drift_harness},
        {"global vs first-frame alignment", global_vs_first},
        {"context ablation", context_ablation},
        {"precision mode", precision_mode},
        {"toy training", toy_training_criterion},
        {"streaming latency", latency_property},
        {"file formats", file_formats},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << std::setw(2) << i + 1 << "] " << criteria[i].first << ": "
                  << o.detail << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
