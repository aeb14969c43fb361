mod common;

use proptest::prelude::*;
use srnas::srnet::{extract_architecture, CompactModel, FreeGates, SupernetModel};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn compact_model_reproduces_supernet(seed in 0u64..1_000_000, n_blocks in 1usize..5, four in any::<bool>(), h in 3usize..7, w in 3usize..7) {
        let scale = if four { 4 } else { 2 };
        let net = common::random_supernet(seed, n_blocks, scale);
        let speed = common::random_speed(seed);
        let lr = common::random_lr(seed, h, w);
        let (sr, _) = net.infer(&lr, &speed).unwrap();
        let compact = extract_architecture(&net).unwrap();
        let out = compact.infer(&lr).unwrap();
        prop_assert_eq!(out.shape(), [1, 3, h * scale, w * scale]);
        let diff = out.max_abs_diff(&sr);
        prop_assert!(diff <= 1e-5, "max abs diff {diff:e}");
        let kept = net.blocks.iter().filter(|b| b.uses_block()).count();
        prop_assert!(compact.blocks.len() <= kept);
    }
}

/// `v_0 + Σ_{α_s ≤ α_b} predict(trunk, #m₁>θ, #m₂>θ, #m₃>θ)`, counted by hand.
fn manual_v(net: &SupernetModel<f64>, speed: &srnas::speedmodel::SpeedMLP<f64>) -> f64 {
    let mut v = net.config.v0;
    for blk in &net.blocks {
        if blk.alpha_s.data()[0] <= blk.alpha_b.data()[0] {
            let mut f = vec![net.config.block.trunk_width as f64];
            for conv in &blk.block.convs {
                f.push(conv.mask.m.data().iter().filter(|&&m| m > net.config.thres).count() as f64);
            }
            v += speed.predict(&f).unwrap().ms;
        }
    }
    v
}

#[test]
fn accumulated_latency_matches_manual_sum() {
    for seed in 0..10 {
        let net = common::random_supernet(seed, 4, 2);
        let speed = common::random_speed(seed + 50);
        let (_, v_tape) = net.infer(&common::random_lr(seed, 4, 4), &speed).unwrap();
        let v = manual_v(&net, &speed);
        assert!((v_tape - v).abs() <= 1e-9 * v.abs().max(1.0), "seed {seed}: tape {v_tape} vs {v}");
        assert!((net.predicted_latency(&speed).unwrap() - v).abs() <= 1e-9 * v.abs().max(1.0));
    }
}

#[test]
fn straight_through_gradients_are_bit_equal() {
    for seed in 0..10 {
        let net = common::random_supernet(seed, 3, 2);
        let (g, ids, tr) = common::random_loss(&net, seed, None);
        // Replace every binarized quantity by a free leaf holding the same value.
        let free: Vec<FreeGates<f64>> = tr
            .blocks
            .iter()
            .map(|b| FreeGates {
                binaries: b.binaries.map(|n| g.tensor(n)),
                betas: (g.item(b.beta_s), g.item(b.beta_b)),
            })
            .collect();
        let (gf, _, trf) = common::random_loss(&net, seed, Some(&free));
        for (i, (bt, ft)) in tr.blocks.iter().zip(&trf.blocks).enumerate() {
            let bids = ids.block(i);
            for l in 0..3 {
                let dm = g.grad(bids.convs[l].m).unwrap();
                assert_eq!(dm, g.grad(bt.binaries[l]).unwrap(), "seed {seed} block {i} conv {l}: dL/dm != dL/db");
                assert_eq!(dm, gf.grad(ft.binaries[l]).unwrap(), "seed {seed} block {i} conv {l}: free-leaf dL/db differs");
            }
            let (ds, db) = (g.grad(bids.alpha_s).unwrap(), g.grad(bids.alpha_b).unwrap());
            assert_eq!(ds, g.grad(bt.beta_s).unwrap());
            assert_eq!(db, g.grad(bt.beta_b).unwrap());
            assert_eq!(ds, gf.grad(ft.beta_s).unwrap());
            assert_eq!(db, gf.grad(ft.beta_b).unwrap());
        }
    }
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = common::random_supernet(4, 3, 2);
    let p = dir.path().join("net.bin");
    net.save(&p).unwrap();
    let back = SupernetModel::<f64>::load(&p).unwrap();
    assert_eq!(back, net);

    let compact = extract_architecture(&net).unwrap();
    let q = dir.path().join("compact.bin");
    compact.save(&q).unwrap();
    assert_eq!(CompactModel::<f64>::load(&q).unwrap(), compact);

    // A flipped payload byte must be caught.
    let mut bytes = std::fs::read(&q).unwrap();
    let n = bytes.len();
    bytes[n - 9] ^= 0x40;
    std::fs::write(&q, bytes).unwrap();
    assert!(CompactModel::<f64>::load(&q).is_err());
}

#[test]
fn cast_to_f32_stays_close() {
    let net = common::random_supernet(8, 2, 2);
    let speed = common::random_speed(8);
    let lr = common::random_lr(8, 5, 5);
    let (a, va) = net.infer(&lr, &speed).unwrap();
    let (b, vb) = net.cast::<f32>().infer(&lr.cast(), &speed.cast()).unwrap();
    assert!(a.cast::<f32>().max_abs_diff(&b) < 1e-4);
    assert!(((va as f32) - vb).abs() <= 1e-3 * vb.abs().max(1.0));
}
