// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "grad_util.hpp"
#include "phymt/nn_core.hpp"

using namespace phymt;
using phymt::testing::check_layer;

namespace {

nn::ModelConfig small_config() {
    nn::ModelConfig c;
    c.n_t = 4;
    c.users = 3;
    c.subcarriers = 4;
    c.t1 = 8;
    c.t2 = 2;
    c.l0 = 3;
    c.patch = 4;
    c.hidden = 32;
    c.encoder_blocks = 2;
    c.backbone.d_model = 16;
    c.backbone.heads = 2;
    c.backbone.ffn = 32;
    c.backbone.max_positions = 16;
    return c;
}

}  // namespace

TEST_CASE("linear identity map passes the input gradient through") {
    SeededRng rng(1);
    nn::Linear lin(3, 3, rng, "id");
    lin.weight.value = RealMatrix::Identity(3, 3);
    RealMatrix x(1, 3);
    x << 0.5, -1.0, 2.0;
    nn::Linear::Cache c;
    const RealMatrix y = lin.forward(x, &c);
    CHECK((y - x).norm() == 0.0);
    // d(|y|^2 / 2)/dx = y = x
    CHECK((lin.backward(y, c) - x).norm() == 0.0);
}

TEST_CASE("layer norm of a constant row is zero before the affine map") {
    nn::LayerNorm ln(5, "ln");
    ln.beta.value.setConstant(0.0);
    const RealMatrix y = ln.forward(RealMatrix::Constant(2, 5, 3.7), nullptr);
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-token attention returns the projected value") {
    SeededRng rng(2);
    nn::Attention a(8, 2, false, rng, "a");
    const RealMatrix x = randn(rng, 1, 8);
    nn::Attention::Cache c;
    const RealMatrix y = a.forward(x, &c);
    for (const auto& p : c.probs) CHECK(p(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    const RealMatrix expect = a.o.forward(a.v.forward(x, nullptr), nullptr);
    CHECK((y - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("finite-difference agreement for every layer kind") {
    SeededRng rng(3);
    nn::Linear lin(6, 5, rng, "lin");
    CHECK(check_layer(lin, randn(rng, 4, 6), rng).max_rel_error < 1e-6);

    nn::LayerNorm ln(6, "ln");
    ln.gamma.value = randn(rng, 1, 6);
    ln.beta.value = randn(rng, 1, 6);
    CHECK(check_layer(ln, randn(rng, 4, 6), rng).max_rel_error < 1e-4);

    nn::Mlp mlp(6, 12, 5, rng, "mlp");
    CHECK(check_layer(mlp, randn(rng, 4, 6), rng).max_rel_error < 1e-4);

    nn::Attention att(8, 2, false, rng, "att");
    CHECK(check_layer(att, randn(rng, 5, 8), rng).max_rel_error < 1e-4);

    nn::Attention causal(8, 2, true, rng, "causal");
    CHECK(check_layer(causal, randn(rng, 5, 8), rng).max_rel_error < 1e-4);

    nn::EncoderBlock eb(8, 2, 16, rng, "eb");
    CHECK(check_layer(eb, randn(rng, 5, 8), rng).max_rel_error < 1e-4);

    nn::DecoderBlock db(8, 2, 16, rng, "db");
    CHECK(check_layer(db, randn(rng, 5, 8), rng).max_rel_error < 1e-4);

    nn::SeBlock se(16, 4, rng, "se");
    CHECK(check_layer(se, randn(rng, 3, 16), rng).max_rel_error < 1e-4);
}

TEST_CASE("frozen parameters are skipped by the checker") {
    SeededRng rng(4);
    nn::Linear lin(3, 2, rng, "f");
    lin.weight.trainable = false;
    lin.bias.trainable = false;
    ParamList ps;
    lin.collect(ps);
    const auto res = nn::grad_check([] { return 0.0; }, [] {}, ps, rng);
    CHECK(res.checked == 0);
}

TEST_CASE("encoder_pre: shape, user permutation equivariance, gradients") {
    SeededRng rng(5);
    const auto cfg = small_config();
    nn::EncoderPre enc(cfg, rng);
    const RealMatrix h = randn(rng, cfg.users, 2 * cfg.n_t);
    const RealMatrix y = enc.forward(h, nullptr);
    CHECK(y.rows() == cfg.users);
    CHECK(y.cols() == cfg.d_model());

    Eigen::PermutationMatrix<Eigen::Dynamic> perm(cfg.users);
    perm.indices() << 2, 0, 1;
    const RealMatrix yp = enc.forward(perm * h, nullptr);
    CHECK((yp - perm * y).cwiseAbs().maxCoeff() < 1e-12);

    CHECK(check_layer(enc, h, rng).max_rel_error < 1e-4);
}

TEST_CASE("encoder_det: token count and gradients") {
    SeededRng rng(6);
    const auto cfg = small_config();
    nn::EncoderDet enc(cfg, rng);
    const RealMatrix h = randn(rng, cfg.users, 2 * cfg.n_t);
    const RealMatrix y = randn(rng, cfg.l0, 2 * cfg.n_t);
    const RealMatrix out = enc.forward(h, y, nullptr);
    CHECK(out.rows() == 1 + cfg.l0);
    CHECK(out.cols() == cfg.d_model());

    const RealMatrix z = enc.forward(RealMatrix::Zero(h.rows(), h.cols()), RealMatrix::Zero(y.rows(), y.cols()), nullptr);
    CHECK(z.allFinite());
    CHECK((z - enc.forward(RealMatrix::Zero(h.rows(), h.cols()), RealMatrix::Zero(y.rows(), y.cols()), nullptr)).norm() == 0.0);

    Param ph("h", h), py("y", y);
    ParamList params;
    enc.collect(params);
    params.push_back(&ph);
    params.push_back(&py);
    const RealMatrix r = randn(rng, out.rows(), out.cols());
    auto loss = [&] { return enc.forward(ph.value, py.value, nullptr).cwiseProduct(r).sum(); };
    auto backward = [&] {
        zero_grads(params);
        nn::EncoderDet::Cache c;
        enc.forward(ph.value, py.value, &c);
        auto [dh, dy] = enc.backward(r, c);
        ph.grad = dh;
        py.grad = dy;
    };
    CHECK(nn::grad_check(loss, backward, params, rng, 400).max_rel_error < 1e-4);
}

TEST_CASE("encoder_det with the full-scale slot count yields nine tokens") {
    SeededRng rng(7);
    nn::ModelConfig cfg;
    cfg.l0 = 8;
    nn::EncoderDet enc(cfg, rng);
    const RealMatrix out = enc.forward(randn(rng, cfg.users, 2 * cfg.n_t), randn(rng, 8, 2 * cfg.n_t), nullptr);
    CHECK(out.rows() == 9);
    CHECK(out.cols() == cfg.d_model());
}

TEST_CASE("encoder_cp: patch count, degenerate input, gradients") {
    SeededRng rng(8);
    nn::ModelConfig cfg;
    cfg.t1 = 16;
    cfg.patch = 4;
    nn::EncoderCp enc(cfg, rng);
    const RealMatrix x = randn(rng, 16, 2 * cfg.subcarriers);
    const auto out = enc.forward(x, nullptr);
    CHECK(out.tokens.rows() == 4);
    CHECK(out.tokens.cols() == cfg.d_model());

    try {
        enc.forward(RealMatrix::Constant(16, 2 * cfg.subcarriers, 0.3), nullptr);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::kDegenerateStats);
    }

    const RealMatrix xn = prediction::normalize(x).x;
    ParamList params;
    enc.collect(params);
    const RealMatrix r = randn(rng, 4, cfg.d_model());
    auto loss = [&] { return enc.forward_normalized(xn, nullptr).cwiseProduct(r).sum(); };
    auto backward = [&] {
        zero_grads(params);
        nn::EncoderCp::Cache c;
        enc.forward_normalized(xn, &c);
        enc.backward(r, c);
    };
    CHECK(nn::grad_check(loss, backward, params, rng, 400).max_rel_error < 1e-4);
}

TEST_CASE("prompt embedding is deterministic, distinct per task, and token-local") {
    SeededRng rng(9);
    nn::PromptEmbedder emb(4096, 8, rng);
    const auto reg = nn::default_registry(4096);
    REQUIRE(reg.size() == 3);
    for (const auto& t : reg) CHECK((emb.forward(t.tokens) - emb.forward(nn::tokenize(t.prompt(), 4096))).norm() == 0.0);

    const int a = nn::tokenize(reg[0].identifier, 4096)[0];
    const int b = nn::tokenize(reg[1].identifier, 4096)[0];
    const int c = nn::tokenize(reg[2].identifier, 4096)[0];
    CHECK(a != b);
    CHECK(b != c);
    CHECK(a != c);
    CHECK(reg[0].identifier != reg[1].identifier);

    const auto x = nn::tokenize("alpha beta gamma delta", 4096);
    const auto y = nn::tokenize("alpha beta omega delta", 4096);
    REQUIRE(x.size() == y.size());
    CHECK(x[0] == y[0]);
    CHECK(x[1] == y[1]);
    CHECK(x[2] != y[2]);
    CHECK(x[3] == y[3]);
}

TEST_CASE("backbone: identity at zero depth, shape, finite outputs, gradients") {
    SeededRng rng(10);
    nn::BackboneConfig zero;
    zero.depth = 0;
    zero.d_model = 16;
    nn::Backbone id(zero, rng);
    const RealMatrix x = randn(rng, 7, 16);
    CHECK((id.forward(x, nullptr) - x).norm() == 0.0);

    nn::BackboneConfig bc;
    bc.d_model = 16;
    bc.heads = 2;
    bc.ffn = 32;
    bc.max_positions = 16;
    nn::Backbone bb(bc, rng);
    for (int n : {1, 5, 16}) CHECK(bb.forward(randn(rng, n, 16), nullptr).rows() == n);

    RealMatrix wide(12, 16);
    for (Eigen::Index i = 0; i < wide.size(); ++i) wide.data()[i] = rng.uniform(-10.0, 10.0);
    CHECK(bb.forward(wide, nullptr).allFinite());

    CHECK(check_layer(bb, randn(rng, 6, 16), rng).max_rel_error < 1e-4);

    bb.attach_adapters(2, 0.02, rng);
    bb.freeze();
    ParamList ad;
    bb.collect_adapters(ad);
    for (Param* p : ad) p->value = randn(rng, p->value.rows(), p->value.cols()) * 0.1;
    CHECK(check_layer(bb, randn(rng, 6, 16), rng).max_rel_error < 1e-4);
}

TEST_CASE("decoder_pre respects the budget and passes gradient checks") {
    SeededRng rng(11);
    const auto cfg = small_config();
    nn::DecoderPre dec(cfg, rng);
    const RealMatrix tok = randn(rng, cfg.users, cfg.d_model());
    const auto out = dec.forward(tok, 10.0, nullptr);
    CHECK(out.positive.rows() == cfg.users);
    CHECK(out.positive.cols() == 2);
    CHECK(std::abs(out.params.lambda.sum() - 10.0) < 1e-9);
    CHECK(std::abs(out.params.p.sum() - 10.0) < 1e-9);

    Param pt("tok", tok);
    ParamList params;
    dec.collect(params);
    params.push_back(&pt);
    const RealVector rl = randn(rng, cfg.users, 1);
    const RealVector rp = randn(rng, cfg.users, 1);
    auto loss = [&] {
        const auto o = dec.forward(pt.value, 10.0, nullptr);
        return o.params.lambda.dot(rl) + o.params.p.dot(rp);
    };
    auto backward = [&] {
        zero_grads(params);
        nn::DecoderPre::Cache c;
        dec.forward(pt.value, 10.0, &c);
        pt.grad = dec.backward_scaled(rl, rp, 10.0, c);
    };
    CHECK(nn::grad_check(loss, backward, params, rng, 400).max_rel_error < 1e-4);
}

TEST_CASE("decoder_det shape, determinism, gradients") {
    SeededRng rng(12);
    const auto cfg = small_config();
    nn::DecoderDet dec(cfg, rng);
    const RealMatrix tok = randn(rng, 1 + cfg.l0, cfg.d_model());
    const RealMatrix y = dec.forward(tok, nullptr);
    CHECK(y.rows() == cfg.l0);
    CHECK(y.cols() == 2 * cfg.users);
    CHECK((y - dec.forward(tok, nullptr)).norm() == 0.0);
    CHECK(check_layer(dec, tok, rng).max_rel_error < 1e-4);
}

TEST_CASE("decoder_cp de-normalization, shape, gradients") {
    SeededRng rng(13);
    nn::ModelConfig cfg;
    cfg.t2 = 4;
    nn::DecoderCp dec(cfg, rng);
    const RealMatrix tok = randn(rng, cfg.cp_patches(), cfg.d_model());
    const RealMatrix y = dec.forward(tok, {0.0, 1.0}, nullptr);
    CHECK(y.rows() == 4);
    CHECK(y.cols() == 2 * cfg.subcarriers);
    CHECK(nn::as_complex_pairs(y, 4, cfg.subcarriers).size() == static_cast<std::size_t>(4 * cfg.subcarriers));
    const RealMatrix y2 = dec.forward(tok, {0.5, 2.0}, nullptr);
    CHECK((y2 - (y.array() * 2.0 + 0.5).matrix()).cwiseAbs().maxCoeff() < 1e-12);

    Param pt("tok", tok);
    ParamList params;
    dec.collect(params);
    params.push_back(&pt);
    const RealMatrix r = randn(rng, 4, 2 * cfg.subcarriers);
    const prediction::NormStats st{0.3, 1.7};
    auto loss = [&] { return dec.forward(pt.value, st, nullptr).cwiseProduct(r).sum(); };
    auto backward = [&] {
        zero_grads(params);
        nn::DecoderCp::Cache c;
        dec.forward(pt.value, st, &c);
        pt.grad = dec.backward(r, c);
    };
    CHECK(nn::grad_check(loss, backward, params, rng, 400).max_rel_error < 1e-4);
}

TEST_CASE("checkpoint round trip is bit exact, including quantized sections") {
    SeededRng rng(14);
    nn::Linear a(5, 3, rng, "a");
    nn::Linear b(4, 4, rng, "b");
    const auto q = lora::nf4_quantize(b.weight.value);
    ParamList ps;
    a.collect(ps);
    ps.push_back(&b.bias);
    const auto path = std::filesystem::temp_directory_path() / "phymt_ckpt_test.bin";
    nn::write_checkpoint(path, {{"note", "x"}}, ps, {{"b.weight", &q}});
    const auto back = nn::read_checkpoint(path);
    REQUIRE(back.values.size() == ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(std::memcmp(back.values[i].data(), ps[i]->value.data(), sizeof(double) * ps[i]->size()) == 0);
    REQUIRE(back.quantized.size() == 1);
    CHECK(back.quantized[0].indices == q.indices);
    CHECK(back.quantized[0].sigma == q.sigma);
    CHECK(back.manifest.at("note") == "x");
    std::filesystem::remove(path);
}
