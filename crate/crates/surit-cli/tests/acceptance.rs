//! Acceptance suite: one test per shipped guarantee, each ending in a
//! single PASS line with the tolerance it pinned. Failures panic with
//! the offending numbers. The trained-model tests drive the real binary
//! on the default experiment and share one baseline run.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surit_core::data::{feature_pipeline, DataConfig, Dataset, Split};
use surit_core::lattice::{
    hat_node_logprobs, rnnt_node_logprobs, transducer_grad, transducer_loss,
};
use surit_core::model::unmix_forward;
use surit_core::neural::ops;
use surit_core::neural::tensor::Tensor;
use surit_core::oracle;
use surit_core::{
    edit_distance, greedy_decode_asr, greedy_decode_sid, sample_loss_and_grad, AlignmentLattice,
    Architecture, DecodeEvent, EvalReport, LatencyConfig, LatticeMode, LossConfig, LossMode,
    ModelParams, NodeLogits, SpeakerInventory,
};

// ── helpers ──────────────────────────────────────────────────────────

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::from_vec(shape, data).unwrap()
}

/// |g - e| within `rel` of the larger magnitude; coordinates where both
/// sides sit at or below `floor` are uncheckable and pass.
fn close(g: f64, e: f64, rel: f64, floor: f64) -> bool {
    if g.abs() <= floor && e.abs() <= floor {
        return true;
    }
    (g - e).abs() <= rel * g.abs().max(e.abs())
}

fn random_lattice(
    rng: &mut ChaCha8Rng,
    mode: LatticeMode,
    t_len: usize,
    u_len: usize,
    k: usize,
) -> AlignmentLattice {
    let targets: Vec<usize> = (0..u_len).map(|_| rng.gen_range(0..k)).collect();
    let nodes: Vec<NodeLogits> = (0..t_len * (u_len + 1))
        .map(|_| {
            NodeLogits::new(
                rng.gen_range(-2.0..2.0),
                (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap()
        })
        .collect();
    AlignmentLattice::from_nodes(mode, t_len, targets, nodes).unwrap()
}

/// Rebuilds a lattice from the flat (blank, labels) node layout that
/// `LatticeGrad::to_flat` uses, so finite differences can walk it.
fn lattice_from_flat(
    flat: &[f64],
    mode: LatticeMode,
    t_len: usize,
    targets: &[usize],
    k: usize,
) -> AlignmentLattice {
    let nodes: Vec<NodeLogits> = flat
        .chunks(1 + k)
        .map(|c| NodeLogits::new(c[0], c[1..].to_vec()).unwrap())
        .collect();
    assert_eq!(nodes.len(), t_len * (targets.len() + 1));
    AlignmentLattice::from_nodes(mode, t_len, targets.to_vec(), nodes).unwrap()
}

fn tiny_arch() -> Architecture {
    Architecture {
        in_dim: 6,
        vocab: 5,
        profile_dim: 3,
        unmix_channels: 4,
        asr_width: 5,
        asr_embed: 3,
        asr_label_width: 4,
        asr_joint: 4,
        sid_width: 4,
        sid_label_dim: 3,
        sid_joint: 4,
        time_reduction: false,
    }
}

fn tiny_data(seed: u64) -> (Dataset, DataConfig) {
    let cfg = DataConfig {
        seed,
        feat_dim: 2,
        vocab: 5,
        pool_speakers: 6,
        profile_dim: 3,
        train_samples: 0,
        eval_samples: 48,
        min_tokens: 2,
        max_tokens: 4,
        min_delay_frames: 2,
        k_min: 2,
        k_max: 4,
        ..DataConfig::default()
    };
    (Dataset::generate(&cfg, Split::Eval).unwrap(), cfg)
}

// ── crit 1: exact losses vs path enumeration ─────────────────────────

#[test]
fn criterion_1_losses_match_brute_force_enumeration() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc1);
    let mut worst = 0.0f64;
    let mut n = 0usize;
    for trial in 0..1000u32 {
        let t_len = rng.gen_range(1..=5);
        let u_len = rng.gen_range(0..=3);
        let k = rng.gen_range(1..=4);
        for mode in [LatticeMode::Rnnt, LatticeMode::Hat] {
            let lat = random_lattice(&mut rng, mode, t_len, u_len, k);
            let (loss, _) = transducer_loss(&lat).unwrap();
            let oracle_loss = oracle::enumerate_loss(&lat).unwrap().loss;
            let rel = (loss - oracle_loss).abs() / oracle_loss.abs().max(1.0);
            assert!(
                rel <= 1e-9,
                "trial {trial} {mode:?} T={t_len} U={u_len} K={k}: \
                 loss {loss} vs enumeration {oracle_loss} (rel {rel:.2e})"
            );
            worst = worst.max(rel);
            n += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 30.0, "enumeration comparison took {secs:.1}s, budget 30s");
    println!(
        "PASS criterion 1: {n} lattices (T<=5, U<=3, K<=4, both modes) match \
         enumeration within 1e-9 relative (worst {worst:.2e}) in {secs:.1}s"
    );
}

// ── crit 2: gradients vs finite differences ──────────────────────────

/// Runs central finite differences over one tensor of a closure-driven
/// scalar and compares against the analytic gradient.
fn fd_tensor(
    name: &str,
    analytic: &Tensor,
    x0: &[f64],
    f: &mut dyn FnMut(&[f64]) -> f64,
    step: f64,
    rel: f64,
    floor: f64,
) -> usize {
    let fd = oracle::finite_diff(|v| f(v), x0, step);
    assert_eq!(analytic.len(), fd.len(), "{name}: gradient length");
    for (i, (g, e)) in analytic.data().iter().zip(fd.iter()).enumerate() {
        assert!(
            close(*g, *e, rel, floor),
            "{name}[{i}]: grad {g:.6e} vs fd {e:.6e}"
        );
    }
    fd.len()
}

fn check_neural_ops(rng: &mut ChaCha8Rng) -> usize {
    let rt = |rng: &mut ChaCha8Rng, shape: &[usize]| -> Tensor {
        let n: usize = shape.iter().product();
        tensor(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())
    };
    let dot = |y: &Tensor, c: &Tensor| -> f64 {
        y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
    };
    let mut coords = 0;

    // Dense layer: weights, bias and input.
    let l = ops::Linear { w: rt(rng, &[3, 4]), b: rt(rng, &[3]) };
    let x = rt(rng, &[5, 4]);
    let c = rt(rng, &[5, 3]);
    let (dw, db, dx) = ops::linear_backward(&l, &x, &c);
    coords += fd_tensor("linear.w", &dw, l.w.data(), &mut |v| {
        let l2 = ops::Linear { w: tensor(&[3, 4], v.to_vec()), b: l.b.clone() };
        dot(&ops::linear(&l2, &x), &c)
    }, 1e-5, 1e-4, 1e-8);
    coords += fd_tensor("linear.b", &db, l.b.data(), &mut |v| {
        let l2 = ops::Linear { w: l.w.clone(), b: tensor(&[3], v.to_vec()) };
        dot(&ops::linear(&l2, &x), &c)
    }, 1e-5, 1e-4, 1e-8);
    coords += fd_tensor("linear.x", &dx, x.data(), &mut |v| {
        dot(&ops::linear(&l, &tensor(&[5, 4], v.to_vec())), &c)
    }, 1e-5, 1e-4, 1e-8);

    // Same-length convolution.
    let l = ops::ConvLayer { w: rt(rng, &[3, 2, 3]), b: rt(rng, &[3]) };
    let x = rt(rng, &[6, 2]);
    let c = rt(rng, &[6, 3]);
    let (dw, db, dx) = ops::conv1d_backward(&l, &x, &c);
    coords += fd_tensor("conv1d.w", &dw, l.w.data(), &mut |v| {
        let l2 = ops::ConvLayer { w: tensor(&[3, 2, 3], v.to_vec()), b: l.b.clone() };
        dot(&ops::conv1d(&l2, &x), &c)
    }, 1e-5, 1e-4, 1e-8);
    coords += fd_tensor("conv1d.b", &db, l.b.data(), &mut |v| {
        let l2 = ops::ConvLayer { w: l.w.clone(), b: tensor(&[3], v.to_vec()) };
        dot(&ops::conv1d(&l2, &x), &c)
    }, 1e-5, 1e-4, 1e-8);
    coords += fd_tensor("conv1d.x", &dx, x.data(), &mut |v| {
        dot(&ops::conv1d(&l, &tensor(&[6, 2], v.to_vec())), &c)
    }, 1e-5, 1e-4, 1e-8);

    // Elementwise nonlinearities and the row softmax.
    let x = rt(rng, &[4, 3]);
    let c = rt(rng, &[4, 3]);
    let dx = ops::sigmoid_backward(&ops::sigmoid(&x), &c);
    coords += fd_tensor("sigmoid.x", &dx, x.data(), &mut |v| {
        dot(&ops::sigmoid(&tensor(&[4, 3], v.to_vec())), &c)
    }, 1e-5, 1e-4, 1e-8);
    let dx = ops::tanh_backward(&ops::tanh(&x), &c);
    coords += fd_tensor("tanh.x", &dx, x.data(), &mut |v| {
        dot(&ops::tanh(&tensor(&[4, 3], v.to_vec())), &c)
    }, 1e-5, 1e-4, 1e-8);
    let dx = ops::softmax_rows_backward(&ops::softmax_rows(&x), &c);
    coords += fd_tensor("softmax.x", &dx, x.data(), &mut |v| {
        dot(&ops::softmax_rows(&tensor(&[4, 3], v.to_vec())), &c)
    }, 1e-5, 1e-4, 1e-8);

    // Embedding table with a repeated id (gradients must accumulate).
    let table = rt(rng, &[5, 3]);
    let ids = [0usize, 3, 3, 1];
    let c = rt(rng, &[4, 3]);
    let dt = ops::embed_backward(5, 3, &ids, &c);
    coords += fd_tensor("embed.table", &dt, table.data(), &mut |v| {
        let t2 = tensor(&[5, 3], v.to_vec());
        dot(&ops::embed(&t2, &ids).unwrap(), &c)
    }, 1e-5, 1e-4, 1e-8);

    // Recurrent layer over a short sequence: all three parameter blocks
    // plus the inputs, through the full unrolled backward.
    let h = 3;
    let inp = 2;
    let lim = 0.6;
    let l = ops::GruLayer {
        wx: tensor(&[3 * h, inp], (0..3 * h * inp).map(|_| rng.gen_range(-lim..lim)).collect()),
        wh: tensor(&[3 * h, h], (0..3 * h * h).map(|_| rng.gen_range(-lim..lim)).collect()),
        b: tensor(&[3 * h], (0..3 * h).map(|_| rng.gen_range(-lim..lim)).collect()),
    };
    let xs = rt(rng, &[5, inp]);
    let c = rt(rng, &[5, h]);
    let (_, cache) = ops::gru_seq(&l, &xs);
    let (dwx, dwh, db, dxs) = ops::gru_seq_backward(&l, &xs, &cache, &c);
    let run = |l: &ops::GruLayer, xs: &Tensor| dot(&ops::gru_seq(l, xs).0, &c);
    coords += fd_tensor("gru.wx", &dwx, l.wx.data(), &mut |v| {
        let mut l2 = l.clone();
        l2.wx = tensor(&[3 * h, inp], v.to_vec());
        run(&l2, &xs)
    }, 1e-5, 1e-4, 1e-8);
    coords += fd_tensor("gru.wh", &dwh, l.wh.data(), &mut |v| {
        let mut l2 = l.clone();
        l2.wh = tensor(&[3 * h, h], v.to_vec());
        run(&l2, &xs)
    }, 1e-5, 1e-4, 1e-8);
    coords += fd_tensor("gru.b", &db, l.b.data(), &mut |v| {
        let mut l2 = l.clone();
        l2.b = tensor(&[3 * h], v.to_vec());
        run(&l2, &xs)
    }, 1e-5, 1e-4, 1e-8);
    coords += fd_tensor("gru.xs", &dxs, xs.data(), &mut |v| {
        run(&l, &tensor(&[5, inp], v.to_vec()))
    }, 1e-5, 1e-4, 1e-8);

    // Frame pairing (the halving projection's input reshape).
    let x = rt(rng, &[5, 2]);
    let c = rt(rng, &[2, 4]);
    let dx = ops::unpair_frames(&c, 5);
    coords += fd_tensor("pair_frames.x", &dx, x.data(), &mut |v| {
        dot(&ops::pair_frames(&tensor(&[5, 2], v.to_vec())), &c)
    }, 1e-5, 1e-4, 1e-8);

    coords
}

#[test]
fn criterion_2_gradients_match_finite_differences() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc2);

    // (a) Lattice gradients, both modes. The penalty path gets its
    // finite-difference coverage at whole-model level below, where the
    // looser tier absorbs the larger loss magnitudes penalties create.
    let mut lattice_coords = 0usize;
    for trial in 0..150u32 {
        let t_len = rng.gen_range(1..=5);
        let u_len = rng.gen_range(0..=3);
        let k = rng.gen_range(1..=4);
        let mode = if trial % 2 == 0 { LatticeMode::Rnnt } else { LatticeMode::Hat };
        let lat = random_lattice(&mut rng, mode, t_len, u_len, k);
        let (_, occ) = transducer_loss(&lat).unwrap();
        let grad = transducer_grad(&lat, &occ).unwrap().to_flat();

        let targets: Vec<usize> = (0..u_len).map(|u| lat.target(u)).collect();
        let flat0: Vec<f64> = (0..t_len * (u_len + 1))
            .flat_map(|n| {
                let (t, u) = (n / (u_len + 1), n % (u_len + 1));
                let node = lat.node(t, u);
                let mut v = vec![node.blank()];
                v.extend_from_slice(node.labels());
                v
            })
            .collect();
        let fd = oracle::finite_diff(
            |v| transducer_loss(&lattice_from_flat(v, mode, t_len, &targets, k)).unwrap().0,
            &flat0,
            1e-5,
        );
        for (i, (g, e)) in grad.iter().zip(fd.iter()).enumerate() {
            assert!(
                close(*g, *e, 1e-4, 1e-8),
                "lattice trial {trial} {mode:?} coord {i}: grad {g:.6e} vs fd {e:.6e}"
            );
        }
        lattice_coords += grad.len();
    }

    // (b) Every neural building block.
    let op_coords = check_neural_ops(&mut rng);

    // (c) The whole joint loss end to end, every parameter tensor.
    // Central differences at h=1e-4 on a composite this deep carry
    // roundoff near 1e-7, so sub-1e-6 coordinates are uncheckable and
    // the relative bar loosens to 1e-3.
    let arch = tiny_arch();
    let (ds, _) = tiny_data(0xacc2);
    let p = ModelParams::init(&arch, 7).unwrap();
    let cfg = LossConfig {
        lambda: 0.5,
        pit: false,
        latency: LatencyConfig { alpha: 1.0, beta: 0.2, t_buffer: 1, t_delay: 0 },
    };
    let sample = &ds.samples[0];
    let (_, grads) = sample_loss_and_grad(&p, sample, &ds.speakers, &cfg, LossMode::Joint).unwrap();
    let mut model_coords = 0usize;
    for (name, got) in grads.named() {
        let x0 = got.data().to_vec();
        let fd = oracle::finite_diff(
            |v| {
                let mut q = p.clone();
                q.named_mut()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .unwrap()
                    .1
                    .data_mut()
                    .copy_from_slice(v);
                sample_loss_and_grad(&q, sample, &ds.speakers, &cfg, LossMode::Joint)
                    .unwrap()
                    .0
                    .joint
            },
            p.named().into_iter().find(|(n, _)| *n == name).unwrap().1.data(),
            1e-4,
        );
        for (i, (g, e)) in x0.iter().zip(fd.iter()).enumerate() {
            assert!(
                close(*g, *e, 1e-3, 1e-6),
                "model tensor {name}[{i}]: grad {g:.6e} vs fd {e:.6e}"
            );
        }
        model_coords += x0.len();
    }

    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 120.0, "gradient checks took {secs:.1}s, budget 120s");
    println!(
        "PASS criterion 2: finite differences confirm {lattice_coords} lattice \
         coordinates and {op_coords} per-op coordinates within 1e-4, and \
         {model_coords} whole-model coordinates within 1e-3, in {secs:.1}s"
    );
}

// ── crit 3: conservation and normalization identities ────────────────

#[test]
fn criterion_3_stream_split_conserves_and_outcomes_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc3);

    // The split streams add back to the shared encoding bitwise, where
    // the encoding is recomputed here from the public conv ops.
    let arch = tiny_arch();
    let mut conserved = 0usize;
    for seed in 0..40u64 {
        let p = ModelParams::init(&arch, seed).unwrap();
        let t = rng.gen_range(3..24);
        let x = tensor(&[t, 2], (0..t * 2).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let spliced = feature_pipeline(&x).unwrap();
        let f = unmix_forward(&p.unmix, &spliced);
        let h = ops::conv1d(&p.unmix.enc2, &ops::tanh(&ops::conv1d(&p.unmix.enc1, &spliced)));
        for i in 0..h.len() {
            let sum = f.h1.data()[i] + f.h2.data()[i];
            assert_eq!(
                sum.to_bits(),
                h.data()[i].to_bits(),
                "seed {seed} coord {i}: {} + {} != {}",
                f.h1.data()[i],
                f.h2.data()[i],
                h.data()[i]
            );
            conserved += 1;
        }
    }

    // Per-node outcome distributions sum to one in both modes, and the
    // factored mode's blank probability is exactly the logit's sigmoid.
    let mut nodes_checked = 0usize;
    for trial in 0..300u32 {
        let t_len = rng.gen_range(1..=5);
        let u_len = rng.gen_range(0..=3);
        let k = rng.gen_range(1..=4);
        for mode in [LatticeMode::Rnnt, LatticeMode::Hat] {
            let lat = random_lattice(&mut rng, mode, t_len, u_len, k);
            for t in 0..t_len {
                for u in 0..=u_len {
                    let (lb, ll) = lat.outcome_logprobs(t, u);
                    let total = lb.exp() + ll.iter().map(|v| v.exp()).sum::<f64>();
                    assert!(
                        (total - 1.0).abs() <= 1e-12,
                        "trial {trial} {mode:?} node ({t},{u}): outcomes sum to {total}"
                    );
                    let node = lat.node(t, u);
                    if mode == LatticeMode::Hat {
                        let sig = 1.0 / (1.0 + (-node.blank()).exp());
                        assert!(
                            (lb.exp() - sig).abs() <= 1e-15,
                            "factored blank {} vs sigmoid {}",
                            lb.exp(),
                            sig
                        );
                        // Label mass factors as (1 - sigmoid) * softmax.
                        let (_, sm) = hat_node_logprobs(node);
                        let label_total: f64 = sm.iter().map(|v| v.exp()).sum();
                        assert!((label_total - (1.0 - sig)).abs() <= 1e-12);
                    } else {
                        let (b2, l2) = rnnt_node_logprobs(node);
                        assert_eq!(b2, lb);
                        assert_eq!(l2, ll);
                    }
                    nodes_checked += 1;
                }
            }
        }
    }

    println!(
        "PASS criterion 3: {conserved} split coordinates conserve the encoding \
         bitwise and {nodes_checked} node distributions normalize within 1e-12"
    );
}

// ── crit 4: assignment search and loss composition ───────────────────

#[test]
fn criterion_4_assignment_search_and_loss_composition() {
    let arch = tiny_arch();
    let (ds, _) = tiny_data(0xacc4);

    // Searching the stream-to-reference assignment never raises the
    // token loss above the construction-order pairing.
    let mut searched = 0usize;
    for seed in 0..25u64 {
        let p = ModelParams::init(&arch, seed).unwrap();
        for sample in &ds.samples {
            let fixed = LossConfig { pit: false, ..LossConfig::default() };
            let best = LossConfig { pit: true, ..LossConfig::default() };
            let (l_fixed, _) =
                sample_loss_and_grad(&p, sample, &ds.speakers, &fixed, LossMode::AsrOnly).unwrap();
            let (l_best, _) =
                sample_loss_and_grad(&p, sample, &ds.speakers, &best, LossMode::AsrOnly).unwrap();
            assert!(
                l_best.asr <= l_fixed.asr + 1e-12,
                "sample {} seed {seed}: searched {l_best:?} vs fixed {l_fixed:?}",
                sample.utt_id
            );
            searched += 1;
        }
    }
    assert!(searched >= 1000, "only {searched} assignment instances");

    // Joint gradients decompose: token-head tensors match a token-only
    // run, speaker-head tensors match weight times a speaker-only run.
    let lambda = 1.75;
    let p = ModelParams::init(&arch, 99).unwrap();
    let mut decomposed = 0usize;
    for sample in ds.samples.iter().take(20) {
        let joint_cfg = LossConfig { lambda, pit: false, ..LossConfig::default() };
        let solo_cfg = LossConfig { lambda: 1.0, pit: false, ..LossConfig::default() };
        let (_, g_joint) =
            sample_loss_and_grad(&p, sample, &ds.speakers, &joint_cfg, LossMode::Joint).unwrap();
        let (_, g_asr) =
            sample_loss_and_grad(&p, sample, &ds.speakers, &solo_cfg, LossMode::AsrOnly).unwrap();
        let (_, g_sid) =
            sample_loss_and_grad(&p, sample, &ds.speakers, &solo_cfg, LossMode::SidOnly).unwrap();
        for ((name, j), (_, a)) in g_joint.named().into_iter().zip(g_asr.named()) {
            let solo = g_sid.named().into_iter().find(|(n, _)| *n == name).unwrap().1.clone();
            for (i, jv) in j.data().iter().enumerate() {
                let expect = if name.starts_with("asr.") {
                    a.data()[i]
                } else if name.starts_with("sid.") {
                    lambda * solo.data()[i]
                } else {
                    continue;
                };
                assert!(
                    (jv - expect).abs() <= 1e-9 * jv.abs().max(expect.abs()).max(1.0),
                    "{name}[{i}]: joint {jv} vs decomposition {expect}"
                );
                decomposed += 1;
            }
        }
    }

    // Zero speaker weight leaves the run bit-identical to token-only.
    let zero = LossConfig { lambda: 0.0, pit: false, ..LossConfig::default() };
    let solo = LossConfig { lambda: 1.0, pit: false, ..LossConfig::default() };
    for sample in ds.samples.iter().take(10) {
        let (lz, gz) =
            sample_loss_and_grad(&p, sample, &ds.speakers, &zero, LossMode::Joint).unwrap();
        let (la, ga) =
            sample_loss_and_grad(&p, sample, &ds.speakers, &solo, LossMode::AsrOnly).unwrap();
        assert_eq!(lz.sid, 0.0, "zero weight must report zero speaker loss");
        assert_eq!(lz.joint.to_bits(), la.asr.to_bits());
        for ((name, z), (_, a)) in gz.named().into_iter().zip(ga.named()) {
            for (i, (zv, av)) in z.data().iter().zip(a.data()).enumerate() {
                assert_eq!(zv.to_bits(), av.to_bits(), "{name}[{i}] differs under zero weight");
            }
        }
    }

    println!(
        "PASS criterion 4: assignment search never worsens the token loss on \
         {searched} instances, joint gradients decompose by head and weight \
         within 1e-9 over {decomposed} coordinates, and zero speaker weight \
         is bit-identical to a token-only run"
    );
}

// ── crits 5 and 6: the real experiment via the binary ────────────────

fn surit(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_surit"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "surit {:?} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Baseline {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    data: PathBuf,
    checkpoint: PathBuf,
    report: EvalReport,
    train_secs: f64,
}

static BASELINE: OnceLock<Baseline> = OnceLock::new();

/// Generates the default dataset and trains the default model once;
/// the trained-model criteria all read from this.
fn baseline() -> &'static Baseline {
    BASELINE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let data = dir.path().join("data");
        let run = dir.path().join("run");
        let evald = dir.path().join("eval");
        surit(&["generate", "--out", data.to_str().unwrap()]);
        let t0 = Instant::now();
        surit(&["train", "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap()]);
        let train_secs = t0.elapsed().as_secs_f64();
        let checkpoint = run.join("checkpoint.bin");
        surit(&[
            "eval",
            "--model",
            checkpoint.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            evald.to_str().unwrap(),
        ]);
        let report: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(evald.join("eval_report.json")).unwrap())
                .unwrap();
        Baseline { dir, data, checkpoint, report, train_secs }
    })
}

#[test]
fn criterion_5_default_experiment_reaches_low_error_rates() {
    let b = baseline();
    // An untrained model anchors the floor: far worse than trained.
    let dir = tempfile::tempdir().unwrap();
    let run0 = dir.path().join("run0");
    let eval0 = dir.path().join("eval0");
    surit(&[
        "train",
        "--data",
        b.data.to_str().unwrap(),
        "--out",
        run0.to_str().unwrap(),
        "--set",
        "train.epochs=0",
    ]);
    surit(&[
        "eval",
        "--model",
        run0.join("checkpoint.bin").to_str().unwrap(),
        "--data",
        b.data.to_str().unwrap(),
        "--out",
        eval0.to_str().unwrap(),
    ]);
    let untrained: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(eval0.join("eval_report.json")).unwrap())
            .unwrap();

    assert!(
        b.train_secs <= 900.0,
        "default training took {:.0}s, budget 900s",
        b.train_secs
    );
    assert!(
        b.report.wer <= 0.15,
        "token error {:.4} above the 0.15 bar (untrained floor {:.4})",
        b.report.wer,
        untrained.wer
    );
    assert!(
        b.report.ser <= 0.20,
        "speaker error {:.4} above the 0.20 bar (untrained floor {:.4})",
        b.report.ser,
        untrained.ser
    );
    assert!(
        untrained.ser >= 0.5,
        "untrained speaker error {:.4} suspiciously low; the task lost its teeth",
        untrained.ser
    );
    println!(
        "PASS criterion 5: default experiment trains in {:.0}s to token error \
         {:.4} (<= 0.15) and speaker error {:.4} (<= 0.20); untrained floor \
         wer {:.4} / ser {:.4}",
        b.train_secs, b.report.wer, b.report.ser, untrained.wer, untrained.ser
    );
}

fn sweep_rows(csv: &str) -> Vec<(f64, f64, f64, f64)> {
    csv.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 6, "sweep row {l}");
            (
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
                f[5].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn criterion_6_latency_knobs_trade_accuracy_for_earlier_emission() {
    let b = baseline();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    surit(&[
        "sweep-latency",
        "--data",
        b.data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--alphas",
        "1.0,0.8,0.6",
        "--betas",
        "0.0,1.0",
        "--regime",
        "frozen",
        "--base",
        b.checkpoint.to_str().unwrap(),
    ]);
    let rows = sweep_rows(&std::fs::read_to_string(out.join("sweep.csv")).unwrap());
    let cell = |alpha: f64, beta: f64| -> (f64, f64) {
        rows.iter()
            .find(|(a, bt, _, _)| (a - alpha).abs() < 1e-9 && (bt - beta).abs() < 1e-9)
            .map(|(_, _, ser, ratio)| (*ser, *ratio))
            .unwrap_or_else(|| panic!("sweep cell alpha={alpha} beta={beta} missing"))
    };
    let (ser_hi, ratio_hi) = cell(1.0, 0.0);
    let (ser_lo, ratio_lo) = cell(0.6, 0.0);
    let (_, ratio_beta0) = cell(0.8, 0.0);
    let (_, ratio_beta1) = cell(0.8, 1.0);

    assert!(
        ratio_lo <= ratio_hi - 0.05,
        "blank damping 0.6 gives latency ratio {ratio_lo:.4} vs {ratio_hi:.4} at 1.0; \
         expected at least 0.05 lower"
    );
    assert!(
        ser_lo <= ser_hi + 0.10,
        "blank damping 0.6 degrades speaker error to {ser_lo:.4} from {ser_hi:.4}; \
         more than 10 points"
    );
    assert!(
        ratio_beta1 < ratio_beta0,
        "late-emission penalty 1.0 gives latency ratio {ratio_beta1:.4}, \
         not below {ratio_beta0:.4} at penalty 0.0"
    );
    println!(
        "PASS criterion 6: damping 1.0 -> 0.6 moves the latency ratio \
         {ratio_hi:.4} -> {ratio_lo:.4} (>= 0.05 drop) at speaker error \
         {ser_hi:.4} -> {ser_lo:.4} (<= 10 point rise); penalty 0 -> 1 moves \
         it {ratio_beta0:.4} -> {ratio_beta1:.4}"
    );
}

// ── crit 7: decoder causality, one speaker, determinism ──────────────

#[test]
fn criterion_7_decoding_is_causal_single_speaker_and_deterministic() {
    let arch = tiny_arch();
    let (ds, _) = tiny_data(0xacc7);
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc7);
    let w = arch.in_dim;
    let mut trials = 0usize;
    'outer: for seed in 0..40u64 {
        let p = ModelParams::init(&arch, 1000 + seed).unwrap();
        for sample in &ds.samples {
            if trials >= 1000 {
                break 'outer;
            }
            let inv = SpeakerInventory::from_sample(sample, &ds.speakers).unwrap();
            let t = rng.gen_range(4..10);
            let stream = tensor(&[t, w], (0..t * w).map(|_| rng.gen_range(-1.5..1.5)).collect());

            // Determinism: two decodes of the same stream agree exactly.
            let asr_a = greedy_decode_asr(&p.asr, &stream);
            let asr_b = greedy_decode_asr(&p.asr, &stream);
            assert_eq!(asr_a, asr_b, "token decode is not deterministic");
            let (sid_a, te_a) = greedy_decode_sid(&p.sid, &stream, &inv).unwrap();
            let (sid_b, te_b) = greedy_decode_sid(&p.sid, &stream, &inv).unwrap();
            assert_eq!((sid_a.clone(), te_a), (sid_b, te_b));

            // At most one speaker per stream, emitted no later than the
            // stream end, as an index into the sample's inventory.
            assert!(sid_a.len() <= 1, "speaker head emitted {} labels", sid_a.len());
            assert!(te_a >= 1 && te_a <= t);
            if let Some(e) = sid_a.first() {
                assert!(e.symbol < inv.len());
                assert_eq!(e.frame, te_a);
            }

            // Causality: rewrite every frame after a cut; events at or
            // before the cut must be unchanged.
            let cut = rng.gen_range(1..=t);
            let mut fut = stream.clone();
            for r in cut..t {
                for c in 0..w {
                    *fut.at2_mut(r, c) = rng.gen_range(-1.5..1.5);
                }
            }
            let asr_f = greedy_decode_asr(&p.asr, &fut);
            let upto = |ev: &[DecodeEvent]| -> Vec<DecodeEvent> {
                ev.iter().filter(|e| e.frame <= cut).copied().collect()
            };
            assert_eq!(
                upto(&asr_a),
                upto(&asr_f),
                "token decode before frame {cut} changed when later frames did"
            );
            let (sid_f, _) = greedy_decode_sid(&p.sid, &fut, &inv).unwrap();
            assert_eq!(
                upto(&sid_a),
                upto(&sid_f),
                "speaker decode before frame {cut} changed when later frames did"
            );
            trials += 1;
        }
    }
    assert_eq!(trials, 1000);
    println!(
        "PASS criterion 7: 1000 trials: both decoders are deterministic, \
         prefix-stable under future-frame rewrites, and emit at most one \
         speaker per stream"
    );
}

// ── crit 8: edit distance against an independent reference ───────────

/// Full-matrix dynamic program written independently of the shipped
/// rolling-row version.
fn reference_edit(a: &[u32], b: &[u32]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for i in 0..=n {
        d[i][0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[n][m]
}

#[test]
fn criterion_8_edit_distance_matches_independent_dp() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc8);
    let mk = |rng: &mut ChaCha8Rng, max_len: usize, vocab: u32| -> Vec<u32> {
        let n = rng.gen_range(0..=max_len);
        (0..n).map(|_| rng.gen_range(0..vocab)).collect()
    };
    for trial in 0..10_000u32 {
        let vocab = rng.gen_range(1..=5);
        let a = mk(&mut rng, 12, vocab);
        let b = mk(&mut rng, 12, vocab);
        let got = edit_distance(&a, &b);
        let expect = reference_edit(&a, &b);
        assert_eq!(got, expect, "trial {trial}: {a:?} vs {b:?}");

        // Metric axioms on every pair plus a third sequence.
        assert_eq!(edit_distance(&a, &a), 0);
        assert_eq!(got, edit_distance(&b, &a), "symmetry");
        assert!(got <= a.len().max(b.len()), "bounded by the longer side");
        assert!(got >= a.len().abs_diff(b.len()), "at least the length gap");
        let c = mk(&mut rng, 12, vocab);
        assert!(
            edit_distance(&a, &c) <= got + edit_distance(&b, &c),
            "triangle inequality via {c:?}"
        );
    }

    // Worked examples, including the classic string pair.
    let kitten: Vec<u32> = "kitten".bytes().map(u32::from).collect();
    let sitting: Vec<u32> = "sitting".bytes().map(u32::from).collect();
    assert_eq!(edit_distance(&kitten, &sitting), 3);
    assert_eq!(edit_distance::<u32>(&[], &[1, 2, 3]), 3);
    assert_eq!(edit_distance(&[1, 2, 3, 4], &[2, 3, 4, 5]), 2);
    println!(
        "PASS criterion 8: 10000 random pairs match an independent full-matrix \
         dynamic program exactly, with identity, symmetry, bounds and triangle \
         inequality holding on every pair"
    );
}

// ── crit 9: bit-exact reproducibility through the binary ─────────────

#[test]
fn criterion_9_generation_and_training_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--set",
        "data.train_samples=48",
        "--set",
        "data.eval_samples=8",
        "--set",
        "train.epochs=2",
        "--set",
        "train.batch_size=16",
    ];
    let gen = |out: &Path| {
        let mut args = vec!["generate", "--out", out.to_str().unwrap()];
        args.extend_from_slice(&small);
        surit(&args);
    };
    let train = |data: &Path, out: &Path| {
        let mut args =
            vec!["train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(&small);
        surit(&args);
    };

    let (da, db) = (dir.path().join("da"), dir.path().join("db"));
    gen(&da);
    gen(&db);
    for f in ["speakers.json", "train.jsonl", "train.bin", "eval.jsonl", "eval.bin"] {
        let a = std::fs::read(da.join(f)).unwrap();
        let b = std::fs::read(db.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between two generate runs");
    }

    let (ra, rb) = (dir.path().join("ra"), dir.path().join("rb"));
    train(&da, &ra);
    train(&da, &rb);
    for f in ["checkpoint.bin", "train_log.csv"] {
        let a = std::fs::read(ra.join(f)).unwrap();
        let b = std::fs::read(rb.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between two train runs");
    }
    println!(
        "PASS criterion 9: two generate runs and two train runs produced \
         byte-identical manifests, feature payloads, checkpoints and loss logs"
    );
}
