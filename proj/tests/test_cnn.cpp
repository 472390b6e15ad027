#include <doctest.h>

#include <cmath>

#include "risamc/error.hpp"
#include "risamc/impairments.hpp"
#include "risamc/nn.hpp"

using namespace risamc;
using namespace risamc::nn;

namespace {

std::vector<sig::LabeledFrame> impaired_frames(int per_class, uint64_t seed) {
    chan::ImpairmentProfile profile;
    std::vector<sig::LabeledFrame> out;
    for (size_t c = 0; c < sig::kNumClasses; ++c)
        for (int i = 0; i < per_class; ++i) {
            sig::LabeledFrame f = sig::synthesize_frame(
                sig::kAllMods[c], {}, derive_seed(seed, {c, static_cast<uint64_t>(i), 0}));
            Rng rng(derive_seed(seed, {c, static_cast<uint64_t>(i), 1}));
            out.push_back(chan::impair(f, profile, rng));
        }
    return out;
}

template <typename S>
std::vector<S> random_batch(int64_t b, const Architecture& a, uint64_t seed) {
    Rng rng(seed);
    std::vector<S> x(static_cast<size_t>(b * a.in_channels * a.input_len));
    for (S& v : x)
        v = static_cast<S>(rng.gaussian());
    return x;
}

} // namespace

TEST_CASE("build_model is deterministic per seed") {
    Architecture a;
    Model<float> m1 = build_model<float>(a, 5);
    Model<float> m2 = build_model<float>(a, 5);
    Model<float> m3 = build_model<float>(a, 6);
    CHECK(m1.fc_w == m2.fc_w);
    CHECK(m1.blocks[0].w == m2.blocks[0].w);
    CHECK(m1.fc_w != m3.fc_w);
}

TEST_CASE("default architecture invariants") {
    Architecture a;
    CHECK(a.blocks() == 6);
    CHECK(a.num_classes == 5);
    CHECK(a.out_len() == 32);
    CHECK(a.fc_inputs() == 96 * 32);
}

TEST_CASE("parameter count matches the hand-computed closed form") {
    Architecture a;
    // conv: sum f_i * c_{i-1} * k; bn: 2 f_i; fc: 5 * fc_in + 5
    const std::vector<int> f = {16, 24, 32, 48, 64, 96};
    int64_t want = 0;
    int c = 2;
    for (int fi : f) {
        want += static_cast<int64_t>(fi) * c * 8 + 2 * fi;
        c = fi;
    }
    want += 5 * (96 * 32) + 5;
    CHECK(a.parameter_count() == want);

    Model<float> m = build_model<float>(a, 1);
    int64_t actual = 0;
    for (const auto& p : trainable_params(m))
        actual += static_cast<int64_t>(p.data->size());
    CHECK(actual == want);
}

TEST_CASE("forward output shape and softmax normalization") {
    Architecture a;
    Model<float> m = build_model<float>(a, 2);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t b = 1 + trial % 3;
        const auto x = random_batch<float>(b, a, 100 + static_cast<uint64_t>(trial));
        const std::vector<float> p = forward<float>(m, x, b, Mode::train);
        REQUIRE(p.size() == static_cast<size_t>(b * 5));
        for (int64_t bi = 0; bi < b; ++bi) {
            double sum = 0.0;
            for (int c = 0; c < 5; ++c) {
                const float v = p[static_cast<size_t>(bi * 5 + c)];
                CHECK(v > 0.0f);
                CHECK(v < 1.0f);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("freshly initialized model does not saturate") {
    // He-uniform fan-in init on the 3072-wide head gives logits with std
    // near 1.2, so single probabilities range roughly [1e-3, 0.9]; assert an
    // unsaturated envelope and that no class is systematically locked in
    Architecture a;
    Model<float> m = build_model<float>(a, 3);
    std::array<double, 5> mean{};
    const int batches = 8;
    for (int t = 0; t < batches; ++t) {
        const auto x = random_batch<float>(4, a, 7 + static_cast<uint64_t>(t));
        const std::vector<float> p = forward<float>(m, x, 4, Mode::train);
        for (size_t i = 0; i < p.size(); ++i) {
            CHECK(p[i] > 1e-4f);
            CHECK(p[i] < 0.97f);
            mean[i % 5] += p[i];
        }
    }
    for (double& v : mean)
        v /= batches * 4;
    for (double v : mean) {
        CHECK(v > 0.03);
        CHECK(v < 0.6);
    }
}

TEST_CASE("forward rejects wrong input sizes") {
    Architecture a;
    Model<float> m = build_model<float>(a, 2);
    std::vector<float> x(123);
    CHECK_THROWS_AS((void)forward<float>(m, x, 1, Mode::infer), ShapeMismatch);
}

TEST_CASE("infer-mode output is independent of batch composition") {
    Architecture a;
    Model<float> m = build_model<float>(a, 4);
    const auto x4 = random_batch<float>(4, a, 11);
    const std::vector<float> p4 = forward<float>(m, x4, 4, Mode::infer);
    const int64_t per = a.in_channels * a.input_len;
    for (int64_t bi = 0; bi < 4; ++bi) {
        std::vector<float> x1(x4.begin() + bi * per, x4.begin() + (bi + 1) * per);
        const std::vector<float> p1 = forward<float>(m, x1, 1, Mode::infer);
        for (int c = 0; c < 5; ++c)
            CHECK(p1[static_cast<size_t>(c)] ==
                  doctest::Approx(p4[static_cast<size_t>(bi * 5 + c)]).epsilon(1e-6));
    }
}

TEST_CASE("gradient check: fc-only toy model") {
    Architecture a;
    a.conv_filters = {};
    a.in_channels = 2;
    a.input_len = 16;
    Model<double> m = build_model<double>(a, 9);
    const auto x = random_batch<double>(3, a, 21);
    const std::vector<int> labels = {0, 2, 4};
    const GradCheckResult r = gradient_check(m, x, labels, 3, 32, 1);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("gradient check: full six-block architecture") {
    Architecture a;
    Model<double> m = build_model<double>(a, 10);
    const auto x = random_batch<double>(2, a, 22);
    const std::vector<int> labels = {1, 3};
    const GradCheckResult r = gradient_check(m, x, labels, 2, 15, 2);
    CHECK(r.checked > 200);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("zero input: conv and fc weight gradients are exactly zero") {
    Architecture a;
    Model<float> m = build_model<float>(a, 12);
    const Model<float> before = m;
    std::vector<float> x(static_cast<size_t>(2 * a.in_channels * a.input_len), 0.0f);
    const std::vector<int> labels = {0, 1};
    std::vector<std::vector<float>> vel;
    (void)sgdm_step(m, x, labels, 2, 0.1, 0.0, &vel);
    // conv weights and the fc weight matrix receive zero gradient, so the
    // sgdm step must leave them bit-identical; the fc bias must move
    for (size_t i = 0; i < m.blocks.size(); ++i)
        CHECK(m.blocks[i].w == before.blocks[i].w);
    CHECK(m.fc_w == before.fc_w);
    CHECK(m.fc_b != before.fc_b);
}

TEST_CASE("loss descent on a fixed batch") {
    Architecture a;
    Model<float> m = build_model<float>(a, 13);
    const auto frames = impaired_frames(8, 31); // 40 frames
    const TrainData d = to_train_data(frames);
    std::vector<std::vector<float>> vel;
    double prev = 1e300;
    int non_decreasing = 0;
    for (int step = 0; step < 20; ++step) {
        const double loss = sgdm_step(m, d.x, d.labels, d.n, 1e-3, 0.9, &vel);
        if (loss >= prev)
            ++non_decreasing;
        prev = loss;
    }
    CHECK(non_decreasing <= 2);
}

TEST_CASE("train overfits 256 frames to 100% train accuracy") {
    Architecture a;
    Model<float> m = build_model<float>(a, 14);
    const auto frames = impaired_frames(51, 32); // 255 frames
    const TrainData d = to_train_data(frames);
    TrainConfig cfg;
    cfg.batch_size = 51;
    cfg.initial_lr = 0.02;
    cfg.lr_drop_period_epochs = 25;
    cfg.max_epochs = 50;
    cfg.shuffle_seed = 3;
    const TrainResult res = train(m, d, d, cfg);
    REQUIRE(res.final_model.history.size() == 50);
    CHECK(res.final_model.history.back().train_acc == doctest::Approx(1.0));
}

TEST_CASE("train throws NonFiniteLoss with the batch index") {
    Architecture a;
    Model<float> m = build_model<float>(a, 15);
    m.fc_w[0] = std::numeric_limits<float>::infinity();
    const auto frames = impaired_frames(2, 33);
    const TrainData d = to_train_data(frames);
    TrainConfig cfg;
    cfg.batch_size = 5;
    cfg.max_epochs = 1;
    try {
        (void)train(m, d, d, cfg);
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
        CHECK(e.batch_index == 0);
    }
}

TEST_CASE("predict: uniform tie returns class 0 and scaling is irrelevant") {
    Architecture a;
    Model<float> m = build_model<float>(a, 16);
    for (auto& p : trainable_params(m))
        std::fill(p.data->begin(), p.data->end(), 0.0f);
    sig::LabeledFrame f = sig::synthesize_frame(sig::Mod::qam16, {}, 8);
    auto [cls, probs] = predict(m, f);
    CHECK(cls == 0); // all logits equal -> lowest index
    for (double v : probs)
        CHECK(v == doctest::Approx(0.2).epsilon(1e-6));
}

TEST_CASE("predict is invariant to positive input scaling") {
    Architecture a;
    Model<float> m = build_model<float>(a, 17);
    sig::LabeledFrame f = sig::synthesize_frame(sig::Mod::psk8, {}, 9);
    auto [c1, p1] = predict(m, f);
    sig::LabeledFrame scaled = f;
    for (cd& v : scaled.samples)
        v *= 37.5;
    auto [c2, p2] = predict(m, scaled);
    CHECK(c1 == c2);
    for (size_t i = 0; i < p1.size(); ++i)
        CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-5));
}

TEST_CASE("evaluate: diagonal for a perfect split by construction") {
    // synthetic sanity: a model can't be perfect untrained, so instead check
    // the accounting identities of the confusion matrix
    Architecture a;
    Model<float> m = build_model<float>(a, 18);
    const auto frames = impaired_frames(4, 34);
    const ConfusionMatrix cm = evaluate(m, frames);
    CHECK(cm.total() == static_cast<int64_t>(frames.size()));
    // row sums = per-class frame counts
    for (size_t r = 0; r < 5; ++r) {
        int64_t row = 0;
        for (int64_t v : cm.counts[r])
            row += v;
        CHECK(row == 4);
    }
    // trace/total equals the independently computed mean per-frame correctness
    Predictor pred(m);
    const std::vector<int> cls = pred.classify(frames);
    int64_t correct = 0;
    for (size_t i = 0; i < frames.size(); ++i)
        if (cls[i] == static_cast<int>(frames[i].label))
            ++correct;
    CHECK(cm.trace() == correct);
    CHECK(cm.accuracy() ==
          doctest::Approx(static_cast<double>(correct) / static_cast<double>(frames.size())));
}

TEST_CASE("evaluate rejects an empty set and a constant classifier scores 0.2") {
    Architecture a;
    Model<float> m = build_model<float>(a, 19);
    CHECK_THROWS_AS((void)evaluate(m, {}), EmptyInput);

    // all-zero parameters -> every frame predicted as class 0
    for (auto& p : trainable_params(m))
        std::fill(p.data->begin(), p.data->end(), 0.0f);
    const auto frames = impaired_frames(6, 35);
    const ConfusionMatrix cm = evaluate(m, frames);
    CHECK(cm.accuracy() == doctest::Approx(0.2));
    for (size_t r = 0; r < 5; ++r)
        CHECK(cm.counts[r][0] == 6);
}
