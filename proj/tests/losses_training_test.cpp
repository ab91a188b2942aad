#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ovda/gradcheck.hpp"
#include "ovda/losses.hpp"
#include "ovda/training.hpp"
#include "test_support.hpp"

using namespace ovda;
using Td = BasicTensor<double>;

namespace {

template <class T>
SequenceTarget<T> target(Shape shape, std::vector<T> gt, std::vector<T> mask = {}) {
    if (mask.empty()) mask.assign(gt.size(), T{1});
    return {BasicTensor<T>(shape, std::move(gt)), BasicTensor<T>(shape, std::move(mask))};
}

SequenceTarget<double> random_target(std::size_t N, std::size_t P, std::mt19937_64& rng, double invalid = 0.0) {
    SequenceTarget<double> t{ovda::testing::uniform_tensor<double>({N, P}, rng, 0.2, 2.0), Td({N, P}, 1.0)};
    std::bernoulli_distribution drop(invalid);
    for (double& m : t.mask.data())
        if (drop(rng)) m = 0.0;
    return t;
}

double eval(const std::function<ad::Var<double>(const ad::Var<double>&, const SequenceTarget<double>&)>& loss,
            const Td& pred, const SequenceTarget<double>& t) {
    ad::Tape<double> tape(false);
    return loss(tape.constant(pred), t).value().item();
}

Td affine_of(const Td& g, double a, double b) {
    Td out = g;
    for (double& v : out.data()) v = a * v + b;
    return out;
}

const auto kSsi = [](const ad::Var<double>& p, const SequenceTarget<double>& t) { return loss_ssi_scene(p, t); };
const auto kTgm = [](const ad::Var<double>& p, const SequenceTarget<double>& t) { return loss_tgm(p, t); };
const auto kSascon = [](const ad::Var<double>& p, const SequenceTarget<double>& t) { return loss_sascon(p, t); };
const auto kTotal = [](const ad::Var<double>& p, const SequenceTarget<double>& t) {
    return loss_total(p, t, LossWeights{0.7, 1.3, 0.9});
};

ad::GradcheckReport gradcheck_loss(
    const std::function<ad::Var<double>(const ad::Var<double>&, const SequenceTarget<double>&)>& loss,
    const SequenceTarget<double>& t, const Td& pred) {
    ad::ScalarFn<double> f = [&](ad::Tape<double>&, std::span<const ad::Var<double>> v) { return loss(v[0], t); };
    return ad::gradcheck(f, {pred}, 1e-5, 1e-4);
}

std::vector<LoadedSequence> toy_pool(std::size_t frames = 10) {
    SceneSpec spec = random_scene(3);
    spec.noise = 0.0;
    return {to_loaded(generate_sequence(spec, frames, 16, 16), "toy")};
}

ModelConfig toy_config() {
    ModelConfig cfg = ovda::testing::small_config(4, 21);
    cfg.patch = 4;
    return cfg;
}

}  // namespace

TEST(Ssi, TwoPointExactFitIsZero) {
    const auto t = target<double>({2, 1}, {1, 3});
    EXPECT_NEAR(eval(kSsi, Td({2, 1}, {1, 2}), t), 0.0, 1e-12);
}

TEST(Losses, ZeroUnderGlobalAffineCorruption) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const auto t = random_target(4, 12, rng, 0.2);
        const Td pred = affine_of(t.gt, 0.3 + trial, -0.5 * trial);
        EXPECT_NEAR(eval(kSsi, pred, t), 0.0, 1e-6);
        EXPECT_NEAR(eval(kTgm, pred, t), 0.0, 1e-6);
        EXPECT_NEAR(eval(kSascon, pred, t), 0.0, 1e-6);
        EXPECT_NEAR(eval(kTotal, pred, t), 0.0, 1e-6);
    }
}

TEST(Tgm, HandComputedFixture) {
    const auto t = target<double>({2, 1}, {1, 2});
    ad::Tape<double> tape(false);
    EXPECT_DOUBLE_EQ(tgm_aligned(tape.constant(Td({2, 1}, {1, 3})), t).value().item(), 1.0);
}

TEST(Tgm, ConstantOffsetOnAlignedPredictionCancels) {
    std::mt19937_64 rng(2);
    const auto t = random_target(5, 9, rng, 0.1);
    const Td a = ovda::testing::random_tensor<double>({5, 9}, rng);
    ad::Tape<double> tape(false);
    const double base = tgm_aligned(tape.constant(a), t).value().item();
    EXPECT_NEAR(tgm_aligned(tape.constant(affine_of(a, 1.0, 3.5)), t).value().item(), base, 1e-12);
}

TEST(Tgm, PairsNeedBothFramesValid) {
    // Pixel 1 is invalid in frame 0, so only pixel 0 contributes.
    const auto t = target<double>({2, 2}, {1, 5, 2, 9}, {1, 0, 1, 1});
    ad::Tape<double> tape(false);
    EXPECT_DOUBLE_EQ(tgm_aligned(tape.constant(Td({2, 2}, {1, 0, 3, 100})), t).value().item(), 1.0);
}

TEST(Tgm, SingleFrameIsRejected) {
    const auto t = target<double>({1, 3}, {1, 2, 3});
    EXPECT_THROW(eval(kTgm, Td({1, 3}, {1, 2, 4}), t), std::invalid_argument);
}

TEST(Sascon, TwoFrameFixture) {
    const auto t = target<double>({2, 2}, {1, 2, 1, 2});
    const Td pred({2, 2}, {1, 2, 2, 4});
    EXPECT_DOUBLE_EQ(eval(kSascon, pred, t), 0.75);
}

TEST(Sascon, InvariantToGlobalAffineOfPrediction) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const auto t = random_target(3, 10, rng);
        const Td pred = ovda::testing::random_tensor<double>({3, 10}, rng);
        EXPECT_NEAR(eval(kSascon, affine_of(pred, 2.5, -1.0), t), eval(kSascon, pred, t), 1e-6);
    }
}

TEST(Losses, DegenerateFitsAreFlagged) {
    const auto t = target<double>({2, 2}, {1, 2, 3, 4});
    EXPECT_THROW(eval(kSsi, Td({2, 2}, 1.0), t), AlignmentError);
    EXPECT_THROW(eval(kSascon, Td({2, 2}, {1, 1, 1, 2}), t), AlignmentError);
    const auto one_valid = target<double>({2, 1}, {1, 2}, {1, 0});
    EXPECT_THROW(eval(kSsi, Td({2, 1}, {1, 2}), one_valid), AlignmentError);
    EXPECT_THROW(eval(kSsi, Td({2, 3}, 1.0), t), ShapeError);
}

TEST(Losses, NonNegativeOnRandomInputs) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto t = random_target(3, 8, rng, 0.2);
        const Td pred = ovda::testing::random_tensor<double>({3, 8}, rng);
        EXPECT_GE(eval(kSsi, pred, t), 0.0);
        EXPECT_GE(eval(kTgm, pred, t), 0.0);
        EXPECT_GE(eval(kSascon, pred, t), 0.0);
    }
}

TEST(Total, WeightedSumOfTerms) {
    std::mt19937_64 rng(5);
    const auto t = random_target(3, 8, rng);
    const Td pred = ovda::testing::random_tensor<double>({3, 8}, rng);
    const double a = eval(kSsi, pred, t), b = eval(kTgm, pred, t), c = eval(kSascon, pred, t);
    ad::Tape<double> tape(false);
    const auto p = tape.constant(pred);
    EXPECT_NEAR(loss_total(p, t, {0.7, 1.3, 0.9}).value().item(), 0.7 * a + 1.3 * b + 0.9 * c, 1e-12);
    EXPECT_EQ(loss_total(p, t, {1, 0, 0}).value().item(), a);
    EXPECT_NEAR(eval(kTotal, t.gt, t), 0.0, 1e-12);
}

TEST(Total, GammaZeroIsBitIdenticalToVdaLoss) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const auto td = random_target(4, 10, rng, 0.1);
        const SequenceTarget<float> t{td.gt.cast<float>(), td.mask.cast<float>()};
        const Tensor pred = ovda::testing::random_tensor({4, 10}, rng);
        const LossWeights w{0.5 + trial, 2.0 - 0.1 * trial, 0.0};
        ad::Tape<float> t1, t2;
        auto p1 = t1.parameter(pred), p2 = t2.parameter(pred);
        auto total = loss_total(p1, t, w);
        auto vda = loss_vda(p2, t, w);
        EXPECT_EQ(total.value().item(), vda.value().item());
        t1.backward(total);
        t2.backward(vda);
        EXPECT_TRUE(t1.grad(p1) == t2.grad(p2));
    }
}

class LossGradcheck : public ::testing::TestWithParam<int> {};

TEST_P(LossGradcheck, AllLossesMatchFiniteDifferences) {
    std::mt19937_64 rng(100 + GetParam());
    const std::size_t N = 2 + GetParam() % 2, P = 4 + GetParam() % 5;
    const auto t = random_target(N, P, rng, GetParam() % 3 == 0 ? 0.2 : 0.0);
    const Td pred = ovda::testing::random_tensor<double>({N, P}, rng);
    for (auto [name, loss] : {std::pair{"ssi", +kSsi}, {"tgm", +kTgm}, {"sascon", +kSascon}, {"total", +kTotal}}) {
        const auto r = gradcheck_loss(loss, t, pred);
        EXPECT_TRUE(r.passed) << name << " worst rel err " << r.worst;
    }
}

TEST_P(LossGradcheck, AffineFitMatchesFiniteDifferences) {
    std::mt19937_64 rng(200 + GetParam());
    const auto t = random_target(1, 9, rng, 0.2);
    const Td pred = ovda::testing::random_tensor<double>({1, 9}, rng);
    const Td w = ovda::testing::random_tensor<double>({2}, rng);
    ad::ScalarFn<double> f = [&](ad::Tape<double>& tape, std::span<const ad::Var<double>> v) {
        return ad::sum(ad::mul(affine_fit(v[0], t.gt, t.mask), tape.constant(w)));
    };
    EXPECT_TRUE(ad::gradcheck(f, {pred}, 1e-5, 1e-4).passed);
}

INSTANTIATE_TEST_SUITE_P(Seeds, LossGradcheck, ::testing::Range(0, 10));

TEST(Augment, ZeroFractionIsIdentity) {
    std::mt19937_64 rng(7);
    std::vector<Tensor> frames{ovda::testing::uniform_tensor({8, 8, 3}, rng, 0.1, 1.0)};
    const auto copy = frames;
    AugmentConfig cfg;
    cfg.max_fraction = 0.0;
    frame_augment(frames, cfg, rng);
    EXPECT_TRUE(frames[0] == copy[0]);
}

TEST(Augment, MonteCarloCoverageLaw) {
    std::mt19937_64 rng(8);
    std::vector<Tensor> frames(1000, Tensor({32, 32, 3}, 1.0f));
    const auto fractions = frame_augment(frames, AugmentConfig{}, rng);
    double mean = 0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        EXPECT_GE(fractions[i], 0.0);
        EXPECT_LE(fractions[i], 0.4);
        std::size_t zero = 0;
        for (std::size_t p = 0; p < 32 * 32; ++p) {
            const bool z = frames[i][p * 3] == 0.0f;
            EXPECT_EQ(z, frames[i][p * 3 + 1] == 0.0f);
            EXPECT_EQ(z, frames[i][p * 3 + 2] == 0.0f);
            zero += z;
        }
        EXPECT_DOUBLE_EQ(static_cast<double>(zero) / 1024.0, fractions[i]);
        mean += fractions[i];
    }
    EXPECT_NEAR(mean / 1000.0, 0.2, 0.02);
}

TEST(Augment, NeverExceedsCapOverManyTrials) {
    std::mt19937_64 rng(9);
    std::vector<Tensor> frames(10000, Tensor({7, 9, 3}, 1.0f));
    for (double f : frame_augment(frames, AugmentConfig{}, rng)) ASSERT_LE(f, 0.4);
    AugmentConfig bad;
    bad.max_fraction = 1.5;
    EXPECT_THROW(frame_augment(frames, bad, rng), std::invalid_argument);
}

TEST(Schedule, CosineEndpoints) {
    EXPECT_DOUBLE_EQ(cosine_lr(1e-2, 0.0, 0, 100), 1e-2);
    EXPECT_NEAR(cosine_lr(1e-2, 0.0, 50, 100), 5e-3, 1e-15);
    EXPECT_NEAR(cosine_lr(1e-2, 1e-4, 100, 100), 1e-4, 1e-15);
    EXPECT_DOUBLE_EQ(cosine_lr(1e-2, 0.0, 10, 0), 1e-2);
}

TEST(Targets, NormalisedInverseDepth) {
    DepthSequence d;
    d.frames = {Tensor({1, 3}, {2.0f, 4.0f, 8.0f})};
    d.valid = {Tensor({1, 3}, {1.0f, 1.0f, 0.0f})};
    const auto t = make_target(d);
    // 1/2 and 1/4 have mean 3/8.
    EXPECT_FLOAT_EQ(t.gt[0], 0.5f / 0.375f);
    EXPECT_FLOAT_EQ(t.gt[1], 0.25f / 0.375f);
    EXPECT_EQ(t.gt[2], 0.0f);
    EXPECT_EQ(t.mask[2], 0.0f);
}

TEST(Sampling, ClipsFollowStride) {
    const auto pool = toy_pool(10);
    auto model = Model<float>::create(toy_config());
    std::mt19937_64 rng(10);
    const auto s = make_sample(model, pool[0], 1, 4, 3, nullptr, rng);
    EXPECT_EQ(s.features.tokens.dim(0), 3u);
    const auto direct = make_sample(model, pool[0], 5, 1, 1, nullptr, rng);
    EXPECT_TRUE(std::ranges::equal(frame_features(s.features, 1).tokens.data(), direct.features.tokens.data()));
    EXPECT_THROW(make_sample(model, pool[0], 2, 4, 3, nullptr, rng), std::out_of_range);
}

TEST(TrainStep, ZeroLearningRateLeavesParametersBitIdentical) {
    const auto pool = toy_pool();
    auto model = Model<float>::create(toy_config());
    auto before = model;
    std::mt19937_64 rng(11);
    TrainConfig cfg;
    cfg.clip_frames = 4;
    const auto sample = sample_clip(model, pool, cfg, AugmentConfig{}, rng);
    const auto stats = train_step(model, {sample}, LossWeights{}, 0.0);
    EXPECT_TRUE(std::isfinite(stats.loss));
    auto a = model.named_parameters();
    auto b = before.named_parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(*a[i].second == *b[i].second) << a[i].first;
}

TEST(TrainStep, EncoderFrozenHeadUpdated) {
    const auto pool = toy_pool();
    auto model = Model<float>::create(toy_config());
    const auto enc_w = model.encoder.weight, enc_b = model.encoder.bias, proj = model.head.proj_w;
    TrainConfig cfg;
    cfg.steps = 5;
    cfg.clip_frames = 4;
    cfg.lr = 1e-2;
    train(model, pool, cfg, LossWeights{}, AugmentConfig{});
    EXPECT_TRUE(model.encoder.weight == enc_w);
    EXPECT_TRUE(model.encoder.bias == enc_b);
    EXPECT_FALSE(model.head.proj_w == proj);
}

TEST(TrainStep, NonFiniteInputsAbortBeforeUpdate) {
    const auto pool = toy_pool();
    auto model = Model<float>::create(toy_config());
    std::mt19937_64 rng(12);
    TrainConfig cfg;
    cfg.clip_frames = 3;
    auto sample = sample_clip(model, pool, cfg, AugmentConfig{}, rng);
    sample.features.tokens[0] = std::numeric_limits<float>::quiet_NaN();
    const auto before = model.head.proj_w;
    EXPECT_THROW(train_step(model, {sample}, LossWeights{}, 1e-2), NonFiniteError);
    EXPECT_TRUE(model.head.proj_w == before);
}

TEST(Train, DeterministicAndResumable) {
    const auto pool = toy_pool();
    TrainConfig cfg;
    cfg.steps = 6;
    cfg.clip_frames = 4;
    cfg.lr = 1e-2;
    cfg.seed = 5;
    auto a = Model<float>::create(toy_config());
    auto b = Model<float>::create(toy_config());
    const auto ha = train(a, pool, cfg, LossWeights{}, AugmentConfig{});
    TrainConfig half = cfg;
    half.steps = 3;
    half.schedule_steps = 6;
    train(b, pool, half, LossWeights{}, AugmentConfig{});
    std::vector<StepStats> hb;
    train(b, pool, half, LossWeights{}, AugmentConfig{}, 3, [&](const StepStats& s) { hb.push_back(s); });
    EXPECT_EQ(hb.front().step, 4u);
    EXPECT_EQ(hb.back().loss, ha.back().loss);
    auto pa = a.named_parameters(), pb = b.named_parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(*pa[i].second == *pb[i].second) << pa[i].first;
}

TEST(Train, GammaZeroReportsNoSasconTerm) {
    const auto pool = toy_pool();
    auto model = Model<float>::create(toy_config());
    TrainConfig cfg;
    cfg.steps = 2;
    cfg.clip_frames = 4;
    for (const auto& s : train(model, pool, cfg, LossWeights{1, 1, 0}, AugmentConfig{})) {
        EXPECT_EQ(s.sascon, 0.0);
        EXPECT_FLOAT_EQ(static_cast<float>(s.loss), static_cast<float>(s.ssi + s.tgm));
    }
}

TEST(TrainCsv, Header) {
    std::ostringstream os;
    write_train_csv_header(os);
    write_train_csv_row(os, StepStats{3, 0.5, 0.25, 0.125, 0.125, 0.001});
    EXPECT_EQ(os.str(), "step,loss,ssi,tgm,sascon,lr\n3,0.5,0.25,0.125,0.125,0.001\n");
}

TEST(Ablation, StandardRowsAndDeterminism) {
    const auto rows = standard_ablation();
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0].name, "none");
    EXPECT_FALSE(rows[0].train);
    EXPECT_EQ(rows[1].weights.gamma, 0.0);
    EXPECT_TRUE(rows[2].augment);
    EXPECT_EQ(rows[3].weights.gamma, 1.0);
    EXPECT_TRUE(rows[4].augment && rows[4].weights.gamma == 1.0);

    const auto pool = toy_pool(8);
    TrainConfig cfg;
    cfg.steps = 3;
    cfg.clip_frames = 4;
    cfg.lr = 1e-2;
    const ModelFactory factory = [] { return Model<float>::create(toy_config()); };
    const auto a = ablation_suite(factory, pool, pool, cfg, rows);
    const auto b = ablation_suite(factory, pool, pool, cfg, rows);
    ASSERT_EQ(a.size(), 5u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].absrel, b[i].absrel);
        EXPECT_EQ(a[i].delta1, b[i].delta1);
        EXPECT_GE(a[i].delta1, 0.0);
        EXPECT_LE(a[i].delta1, 1.0);
    }
    std::ostringstream os;
    write_ablation_csv(os, a);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "config,absrel,delta1,final_loss");
}
