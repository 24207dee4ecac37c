#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "stdnet/attention.hpp"
#include "stdnet/gradcases.hpp"
#include "stdnet/rng.hpp"

using namespace stdnet;

namespace {

Tensor rand_tensor(std::vector<i64> shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (i64 i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("hidden width rounds up and never drops to zero") {
    CHECK(attention_hidden(512, 16) == 32);
    CHECK(attention_hidden(33, 16) == 3);
    CHECK(attention_hidden(8, 16) == 1);
    CHECK(attention_hidden(1, 4) == 1);
}

TEST_CASE("global average pools") {
    Tensor x = Tensor::zeros({2, 2, 2});
    for (i64 i = 0; i < 8; ++i) x[i] = static_cast<double>(i);
    Tensor gs = gap_spatial(x);  // mean over the trailing 2x2 per channel
    CHECK(gs.dim(0) == 2);
    CHECK(gs[0] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(gs[1] == doctest::Approx(5.5).epsilon(1e-15));

    Tensor y = Tensor::zeros({2, 2, 1, 2});
    for (i64 i = 0; i < 8; ++i) y[i] = static_cast<double>(i);
    Tensor gt = gap_temporal(y);
    CHECK(gt.dim(0) == 2);
    CHECK(gt[0] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(gt[1] == doctest::Approx(5.5).epsilon(1e-15));
}

TEST_CASE("gate output stays strictly inside (0,1)") {
    Rng rng(31);
    for (int rep = 0; rep < 50; ++rep) {
        const i64 c = 1 + static_cast<i64>(rng.below(12));
        AttentionParams p = attention_init(c, 4, rng);
        Tensor a = rand_tensor({c}, rng);
        Tensor alpha = attention_gate(a, p);
        for (i64 i = 0; i < c; ++i) {
            CHECK(alpha[i] > 0.0);
            CHECK(alpha[i] < 1.0);
        }
    }
}

TEST_CASE("zero gate weights rescale by exactly one half") {
    Rng rng(32);
    const i64 c = 6;
    AttentionParams p;
    p.w1 = Tensor::zeros({attention_hidden(c, 4), c});
    p.w2 = Tensor::zeros({c, attention_hidden(c, 4)});
    Tensor x = rand_tensor({c, 2, 3, 3}, rng);
    TemporalAttentionCache cache;
    Tensor y = attention_temporal_forward(x, p, &cache);
    for (i64 i = 0; i < x.numel(); ++i) CHECK(y[i] == 0.5 * x[i]);
    for (i64 i = 0; i < c; ++i) CHECK(cache.gate.alpha[i] == 0.5);
}

TEST_CASE("channel rescaling never grows a channel norm") {
    Rng rng(33);
    for (int rep = 0; rep < 50; ++rep) {
        const i64 c = 2 + static_cast<i64>(rng.below(6));
        AttentionParams p = attention_init(c, 2, rng);
        Tensor x = rand_tensor({c, 2, 3, 3}, rng);
        Tensor y = attention_temporal_forward(x, p, nullptr);
        const i64 vol = x.numel() / c;
        for (i64 ch = 0; ch < c; ++ch) {
            double nx = 0.0, ny = 0.0;
            for (i64 i = 0; i < vol; ++i) {
                nx += x[ch * vol + i] * x[ch * vol + i];
                ny += y[ch * vol + i] * y[ch * vol + i];
            }
            CHECK(std::sqrt(ny) <= std::sqrt(nx));
        }
    }
}

TEST_CASE("spatial attention gates each time slot separately") {
    Rng rng(34);
    const i64 c = 4;
    AttentionParams p = attention_init(c, 2, rng);
    Tensor x = rand_tensor({c, 3, 2, 2}, rng);
    SpatialAttentionCache cache;
    Tensor y = attention_spatial_forward(x, p, &cache);
    CHECK(cache.slots.size() == 3);
    // Each slot must equal the temporal gate applied to that slot alone.
    for (i64 t = 0; t < 3; ++t) {
        Tensor slot = Tensor::zeros({c, 1, 2, 2});
        for (i64 ch = 0; ch < c; ++ch)
            for (i64 i = 0; i < 4; ++i) slot[ch * 4 + i] = x[(ch * 3 + t) * 4 + i];
        Tensor ys = attention_temporal_forward(slot, p, nullptr);
        for (i64 ch = 0; ch < c; ++ch)
            for (i64 i = 0; i < 4; ++i) CHECK(ys[ch * 4 + i] == y[(ch * 3 + t) * 4 + i]);
    }
    // Distinct slot contents give distinct gates.
    CHECK(cache.slots[0].alpha[0] != cache.slots[1].alpha[0]);
}

TEST_CASE("attention backward passes the shared gradient battery") {
    for (const char* name : {"attention_temporal.x", "attention_temporal.w1",
                             "attention_temporal.w2", "attention_spatial.x",
                             "attention_spatial.w1"}) {
        const GradCase* c = find_gradcheck_case(name);
        REQUIRE(c != nullptr);
        GradCheckResult r = c->run();
        INFO(name);
        CHECK(r.pass);
    }
}
