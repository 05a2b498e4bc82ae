use lumafix_autograd::{Tape, Tensor};
use lumafix_core::dit::{BlockKind, ModelConfig, RestorationNet, TransformerBlock};
use lumafix_core::gradcheck::{check_module, worst};
use lumafix_core::nn::{Binder, Module, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn sfe_matches_scalar_convolution() {
    let net = RestorationNet::new(ModelConfig::default()).unwrap();
    let mut store = net.init_params(1).unwrap();
    let mut r = rng(2);
    let bias = Tensor::randn(&[16], &mut r);
    *store.get_mut("sfe.bias").unwrap() = bias;
    let x = Tensor::randn(&[6, 8, 8], &mut r);

    let tape = Tape::inference();
    let b = Binder::new(&tape, &store);
    let got = net.sfe.forward(&b, tape.constant(x.clone())).unwrap().value();
    assert_eq!(got.shape(), &[16, 8, 8]);

    let w = store.get("sfe.weight").unwrap().data();
    let bias = store.get("sfe.bias").unwrap().data();
    let px = |c: usize, y: isize, xx: isize| {
        if (0..8).contains(&y) && (0..8).contains(&xx) {
            x.data()[c * 64 + y as usize * 8 + xx as usize]
        } else {
            0.0
        }
    };
    for o in 0..16 {
        for y in 0..8isize {
            for xx in 0..8isize {
                let mut acc = bias[o];
                for c in 0..6 {
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            acc +=
                                w[((o * 6 + c) * 3 + ky as usize) * 3 + kx as usize] * px(c, y + ky - 1, xx + kx - 1);
                        }
                    }
                }
                let g = got.data()[o * 64 + y as usize * 8 + xx as usize];
                assert!(
                    (g - acc).abs() <= 1e-6 * acc.abs().max(1.0),
                    "{o},{y},{xx}: {g} vs {acc}"
                );
            }
        }
    }

    let zero = run_sfe_zero(&net, &store);
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

fn run_sfe_zero(net: &RestorationNet, store: &ParamStore) -> Tensor {
    let mut s = store.clone();
    s.get_mut("sfe.bias").unwrap().data_mut().fill(0.0);
    let tape = Tape::inference();
    let b = Binder::new(&tape, &s);
    let y = net
        .sfe
        .forward(&b, tape.constant(Tensor::zeros(&[6, 8, 8])))
        .unwrap()
        .value();
    (*y).clone()
}

fn block_instance(seed: u64) -> (TransformerBlock, ParamStore) {
    let blk = TransformerBlock::new("blk", 8, 2, 6, 2);
    let mut store = ParamStore::new();
    blk.init(&mut store, &mut rng(seed)).unwrap();
    let mut r = rng(seed + 100);
    for t in store.values_mut() {
        let shape = t.shape().to_vec();
        *t = Tensor::rand_uniform(&shape, -0.5, 0.5, &mut r);
    }
    (blk, store)
}

fn run_block(blk: &TransformerBlock, store: &ParamStore, x: &Tensor, temb: &Tensor) -> Tensor {
    let tape = Tape::inference();
    let b = Binder::new(&tape, store);
    let y = blk
        .forward(&b, tape.constant(x.clone()), tape.constant(temb.clone()))
        .unwrap()
        .value();
    (*y).clone()
}

#[test]
fn transformer_block_is_near_identity_with_zero_output_layers() {
    let (blk, mut store) = block_instance(3);
    for name in [
        "blk.attn_out.weight",
        "blk.attn_out.bias",
        "blk.ffn_out.weight",
        "blk.ffn_out.bias",
    ] {
        store.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let x = Tensor::randn(&[8, 3, 5], &mut rng(4));
    let temb = Tensor::randn(&[1, 6], &mut rng(5));
    let y = run_block(&blk, &store, &x, &temb);
    assert_eq!(y.shape(), x.shape());
    let (w, bias) = (
        store.get("blk.time.weight").unwrap(),
        store.get("blk.time.bias").unwrap(),
    );
    for c in 0..8 {
        let proj: f64 = bias.data()[c] + (0..6).map(|i| temb.data()[i] * w.data()[i * 8 + c]).sum::<f64>();
        for p in 0..15 {
            let e = y.data()[c * 15 + p] - (x.data()[c * 15 + p] + proj);
            assert!(e.abs() < 1e-12);
        }
    }
}

#[test]
fn transformer_block_is_permutation_equivariant() {
    let (blk, store) = block_instance(6);
    let (c, n) = (8, 12);
    let x = Tensor::randn(&[c, 1, n], &mut rng(7));
    let temb = Tensor::randn(&[1, 6], &mut rng(8));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng(9));
    let permute = |t: &Tensor| {
        let mut d = vec![0.0; c * n];
        for ch in 0..c {
            for (dst, &src) in perm.iter().enumerate() {
                d[ch * n + dst] = t.data()[ch * n + src];
            }
        }
        Tensor::from_vec(&[c, 1, n], d).unwrap()
    };
    let y_of_px = run_block(&blk, &store, &permute(&x), &temb);
    let py = permute(&run_block(&blk, &store, &x, &temb));
    assert!(y_of_px.max_abs_diff(&py).unwrap() < 1e-12);
}

fn linear(i: usize, o: usize) -> usize {
    i * o + o
}

fn conv(i: usize, o: usize, k: usize) -> usize {
    i * o * k * k + o
}

/// Parameter count walked from the layer shapes, independent of the model code.
fn census(c: &ModelConfig) -> usize {
    let td = c.time_embed_dim;
    let w = |l: usize| c.base_channels * c.channel_mults[l];
    let block = |ch: usize| match c.block_kind {
        BlockKind::Transformer => {
            let hid = ch * c.ffn_mult;
            2 * ch + linear(ch, 3 * ch) + linear(ch, ch) + linear(td, ch) + 2 * ch + linear(ch, hid) + linear(hid, ch)
        }
        BlockKind::Conv => 2 * conv(ch, ch, 3) + linear(td, ch),
    };
    let prompt = |ch: usize| {
        let n = c.prompt_n;
        let api = [3, 5, 7].iter().map(|k| ch * k * k + ch).sum::<usize>()
            + conv(3 * ch, ch, 1)
            + conv(2, n, 3)
            + linear(n, n)
            + n * ch * c.prompt_size * c.prompt_size
            + conv(ch, ch, 3);
        let d = if c.use_api { 2 * ch } else { ch };
        let gps = 3 * linear(d, d) + conv(d, ch, 1) + conv(ch, ch, 1) + conv(ch, ch, 3);
        match (c.use_api, c.use_gps) {
            (true, true) => api + gps,
            (false, true) => gps,
            (true, false) => api + conv(2 * ch, ch, 1),
            (false, false) => 0,
        }
    };
    let mut total = 2 * linear(td, td) + conv(2 * c.image_channels, w(0), 3) + conv(w(0), c.image_channels, 3);
    for l in 0..c.levels - 1 {
        total += c.enc_blocks * block(w(l)) + conv(w(l), w(l + 1), 3);
        total += conv(w(l + 1), w(l), 3) + prompt(w(l)) + conv(2 * w(l), w(l), 1) + c.dec_blocks * block(w(l));
    }
    total + c.bottleneck_blocks * block(w(c.levels - 1))
}

#[test]
fn parameter_census_matches_shape_walk() {
    let mut configs = vec![ModelConfig::default(), ModelConfig::tiny()];
    for (api, gps, kind) in [
        (false, true, BlockKind::Transformer),
        (true, false, BlockKind::Transformer),
        (false, false, BlockKind::Transformer),
        (true, true, BlockKind::Conv),
    ] {
        configs.push(ModelConfig {
            use_api: api,
            use_gps: gps,
            block_kind: kind,
            ..ModelConfig::default()
        });
    }
    for cfg in configs {
        let net = RestorationNet::new(cfg.clone()).unwrap();
        let store = net.init_params(0).unwrap();
        assert_eq!(store.num_scalars(), census(&cfg), "{cfg:?}");
    }
}

fn inputs(cfg: &ModelConfig, h: usize, w: usize, seed: u64) -> (Tensor, Tensor) {
    let mut r = rng(seed);
    let c = cfg.image_channels;
    (
        Tensor::randn(&[c, h, w], &mut r),
        Tensor::rand_uniform(&[c, h, w], 0.0, 1.0, &mut r),
    )
}

#[test]
fn forward_shapes_levels_and_determinism() {
    let cfg = ModelConfig::default();
    let net = RestorationNet::new(cfg.clone()).unwrap();
    let store = net.init_params(5).unwrap();
    let (x, cond) = inputs(&cfg, 16, 24, 6);

    let tape = Tape::inference();
    let b = Binder::new(&tape, &store);
    let out = net
        .forward(&b, tape.constant(x.clone()), tape.constant(cond.clone()), 3)
        .unwrap();
    assert_eq!(out.y.shape(), vec![3, 16, 24]);

    let expect_skips: Vec<Vec<usize>> = (0..cfg.levels - 1)
        .map(|l| vec![cfg.width(l), 16 >> l, 24 >> l])
        .collect();
    let expect_dec: Vec<Vec<usize>> = expect_skips.iter().rev().cloned().collect();
    assert_eq!(out.trace.skips, expect_skips);
    assert_eq!(out.trace.decoder, expect_dec);
    assert_eq!(out.prompts.len(), cfg.levels - 1);
    for (p, want) in out.prompts.iter().zip(&expect_dec) {
        assert_eq!(&p.shape(), want);
    }

    let again = net.predict(&store, &x, &cond, 3).unwrap();
    let again2 = net.predict(&store, &x, &cond, 3).unwrap();
    assert_eq!(again.data(), again2.data());
    assert_eq!(again.data(), out.y.value().data());
    let other_t = net.predict(&store, &x, &cond, 4).unwrap();
    assert_ne!(again.data(), other_t.data());
}

#[test]
fn rejects_bad_resolution_and_mismatched_cond() {
    let cfg = ModelConfig::default();
    let net = RestorationNet::new(cfg.clone()).unwrap();
    let store = net.init_params(0).unwrap();
    let (x, cond) = inputs(&cfg, 12, 12, 1);
    assert!(net.predict(&store, &x, &cond, 1).is_err());
    let (x, _) = inputs(&cfg, 16, 16, 1);
    let (_, cond) = inputs(&cfg, 16, 8, 1);
    assert!(net.predict(&store, &x, &cond, 1).is_err());
}

#[test]
fn ablated_prompts_and_conv_blocks_produce_valid_output() {
    for (api, gps, kind) in [
        (false, false, BlockKind::Transformer),
        (false, true, BlockKind::Transformer),
        (true, false, BlockKind::Transformer),
        (true, true, BlockKind::Conv),
    ] {
        let cfg = ModelConfig {
            use_api: api,
            use_gps: gps,
            block_kind: kind,
            ..ModelConfig::default()
        };
        let net = RestorationNet::new(cfg.clone()).unwrap();
        let store = net.init_params(2).unwrap();
        let (x, cond) = inputs(&cfg, 16, 16, 3);
        let y = net.predict(&store, &x, &cond, 2).unwrap();
        assert_eq!(y.shape(), &[3, 16, 16]);
        assert!(y.is_finite());
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let cfg = ModelConfig::tiny();
    let net = RestorationNet::new(cfg.clone()).unwrap();
    let store = net.init_params(11).unwrap();
    let (x, cond) = inputs(&cfg, 8, 8, 12);
    let target = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut rng(13));
    let report = check_module(
        &store,
        &x,
        |b, v| {
            let c = b.constant(cond.clone());
            Ok(net.forward(b, v, c, 2)?.y.l1_loss(&target)?)
        },
        1e-5,
        12,
    )
    .unwrap();
    let input = &report[0];
    assert!(input.max_rel_err <= 1e-3, "input: {input:?}");
    let w = worst(&report).unwrap();
    assert!(w.max_rel_err <= 1e-3, "{w:?}");
}
