//! Runtime self-check suite: re-derives the lattice losses by brute
//! force, checks every analytic gradient against central finite
//! differences, and exercises the normalization, conservation and
//! penalty invariants on freshly sampled instances. One line per check;
//! any failure flips the process exit code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surit_core::lattice::{
    apply_latency_penalty, hat_node_logprobs, rnnt_node_logprobs, transducer_grad,
    transducer_loss, AlignmentLattice, LatencyConfig, LatticeMode, NodeLogits,
};
use surit_core::model::{sample_loss_and_grad, unmix_forward, LossConfig, LossMode};
use surit_core::oracle::{enumerate_loss, finite_diff};
use surit_core::{Architecture, DataConfig, Dataset, ModelParams, Split, Tensor};

pub struct Check {
    pub name: &'static str,
    pub outcome: Result<String, String>,
}

fn random_lattice(
    rng: &mut ChaCha8Rng,
    mode: LatticeMode,
    t_len: usize,
    u_len: usize,
    label_dim: usize,
) -> AlignmentLattice {
    let nodes = (0..t_len * (u_len + 1))
        .map(|_| {
            let blank = rng.gen_range(-2.0..2.0);
            let labels = (0..label_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            NodeLogits::new(blank, labels).unwrap()
        })
        .collect();
    let targets = (0..u_len).map(|_| rng.gen_range(0..label_dim)).collect();
    AlignmentLattice::from_nodes(mode, t_len, targets, nodes).unwrap()
}

fn loss_vs_enumeration(rng: &mut ChaCha8Rng, mode: LatticeMode, trials: usize) -> Result<String, String> {
    let mut worst = 0.0f64;
    for i in 0..trials {
        let t_len = rng.gen_range(1..=5);
        let u_len = rng.gen_range(0..=3);
        let dim = rng.gen_range(u_len.max(1)..=u_len.max(1) + 3);
        let lat = random_lattice(rng, mode, t_len, u_len, dim);
        let (loss, _) = transducer_loss(&lat).map_err(|e| e.to_string())?;
        let oracle = enumerate_loss(&lat).map_err(|e| e.to_string())?;
        let rel = (loss - oracle.loss).abs() / loss.abs().max(oracle.loss.abs()).max(1.0);
        if rel > worst {
            worst = rel;
        }
        if rel > 1e-9 {
            return Err(format!(
                "trial {i} (T={t_len}, U={u_len}): loss {loss} vs enumerated {} (rel {rel:.2e})",
                oracle.loss
            ));
        }
    }
    Ok(format!("{trials} lattices, worst relative gap {worst:.2e}"))
}

/// Rebuilds the lattice from a flat logit vector so the whole loss can
/// be probed by finite differences.
fn lattice_from_flat(proto: &AlignmentLattice, flat: &[f64]) -> AlignmentLattice {
    let (t_len, u_len, dim) = (proto.t_len(), proto.u_len(), proto.label_dim());
    let stride = 1 + dim;
    let mut nodes = Vec::with_capacity(t_len * (u_len + 1));
    for n in 0..t_len * (u_len + 1) {
        let at = n * stride;
        nodes.push(NodeLogits::new(flat[at], flat[at + 1..at + stride].to_vec()).unwrap());
    }
    let targets = (0..u_len).map(|u| proto.target(u)).collect();
    AlignmentLattice::from_nodes(proto.mode(), t_len, targets, nodes).unwrap()
}

fn grad_vs_finite_differences(rng: &mut ChaCha8Rng, mode: LatticeMode, trials: usize) -> Result<String, String> {
    let mut checked = 0usize;
    for i in 0..trials {
        let t_len = rng.gen_range(1..=4);
        let u_len = rng.gen_range(0..=2);
        let dim = rng.gen_range(u_len.max(1)..=u_len.max(1) + 2);
        let lat = random_lattice(rng, mode, t_len, u_len, dim);
        let (_, occ) = transducer_loss(&lat).map_err(|e| e.to_string())?;
        let grad = transducer_grad(&lat, &occ).map_err(|e| e.to_string())?;

        let stride = 1 + dim;
        let mut flat = vec![0.0; t_len * (u_len + 1) * stride];
        for t in 0..t_len {
            for u in 0..=u_len {
                let n = t * (u_len + 1) + u;
                let node = lat.node(t, u);
                flat[n * stride] = node.blank();
                flat[n * stride + 1..(n + 1) * stride].copy_from_slice(node.labels());
            }
        }
        let fd = finite_diff(
            |v: &[f64]| transducer_loss(&lattice_from_flat(&lat, v)).unwrap().0,
            &flat,
            1e-5,
        );
        let got = grad.to_flat();
        for (j, (g, e)) in got.iter().zip(fd.iter()).enumerate() {
            if g.abs() <= 1e-8 && e.abs() <= 1e-8 {
                continue;
            }
            let rel = (g - e).abs() / g.abs().max(e.abs());
            if rel > 1e-4 {
                return Err(format!(
                    "trial {i} coordinate {j}: gradient {g} vs finite difference {e} (rel {rel:.2e})"
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{trials} lattices, {checked} coordinates within 1e-4"))
}

fn forward_backward_and_cuts(rng: &mut ChaCha8Rng, trials: usize) -> Result<String, String> {
    let mut worst_gap = 0.0f64;
    for i in 0..trials {
        let mode = if i % 2 == 0 { LatticeMode::Rnnt } else { LatticeMode::Hat };
        let t_len = rng.gen_range(1..=7);
        let u_len = rng.gen_range(0..=3);
        let dim = u_len.max(1) + 2;
        let lat = random_lattice(rng, mode, t_len, u_len, dim);
        let (_, occ) = transducer_loss(&lat).map_err(|e| e.to_string())?;
        let gap = occ.forward_backward_gap();
        worst_gap = worst_gap.max(gap);
        if gap > 1e-10 {
            return Err(format!("trial {i}: forward/backward totals differ by {gap:.2e}"));
        }
        for t in 0..t_len.saturating_sub(1) {
            let mass: f64 = (0..=u_len).map(|u| occ.blank_posterior(t, u)).sum();
            if (mass - 1.0).abs() > 1e-12 {
                return Err(format!("trial {i}: blank cut t={t} carries {mass}"));
            }
        }
        for u in 0..u_len {
            let mass: f64 = (0..t_len).map(|t| occ.label_posterior(t, u)).sum();
            if (mass - 1.0).abs() > 1e-12 {
                return Err(format!("trial {i}: label cut u={u} carries {mass}"));
            }
        }
    }
    Ok(format!("{trials} lattices, worst forward/backward gap {worst_gap:.2e}"))
}

fn outcome_normalization(rng: &mut ChaCha8Rng, trials: usize) -> Result<String, String> {
    for i in 0..trials {
        let dim = rng.gen_range(1..=6);
        let blank = rng.gen_range(-4.0..4.0);
        let labels: Vec<f64> = (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let node = NodeLogits::new(blank, labels).unwrap();

        let (lb, ll) = rnnt_node_logprobs(&node);
        let total = lb.exp() + ll.iter().map(|v| v.exp()).sum::<f64>();
        if (total - 1.0).abs() > 1e-12 {
            return Err(format!("trial {i}: softmax outcome mass {total}"));
        }

        let (lb, ll) = hat_node_logprobs(&node);
        let b = lb.exp();
        let total = b + ll.iter().map(|v| v.exp()).sum::<f64>();
        if (total - 1.0).abs() > 1e-12 {
            return Err(format!("trial {i}: factored outcome mass {total} (blank {b})"));
        }
    }
    Ok(format!("{trials} nodes, blank + labels sum to 1 within 1e-12 in both modes"))
}

fn mask_conservation(rng: &mut ChaCha8Rng, trials: usize) -> Result<String, String> {
    let arch = Architecture { in_dim: 6, unmix_channels: 4, ..Architecture::default() };
    let mut coords = 0usize;
    for i in 0..trials {
        let p = ModelParams::init(&arch, rng.gen()).map_err(|e| e.to_string())?;
        let t_len = rng.gen_range(1..=10);
        let data: Vec<f64> = (0..t_len * 6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::from_vec(&[t_len, 6], data).map_err(|e| e.to_string())?;
        let f = unmix_forward(&p.unmix, &x);
        for j in 0..f.h.len() {
            let sum = f.h1.data()[j] + f.h2.data()[j];
            if sum.to_bits() != f.h.data()[j].to_bits() {
                return Err(format!(
                    "trial {i} coordinate {j}: {} + {} != {}",
                    f.h1.data()[j],
                    f.h2.data()[j],
                    f.h.data()[j]
                ));
            }
            coords += 1;
        }
    }
    Ok(format!("{coords} coordinates recombine bitwise"))
}

fn penalty_semantics(rng: &mut ChaCha8Rng, trials: usize) -> Result<String, String> {
    for i in 0..trials {
        let t_len = rng.gen_range(2..=8);
        let lat = random_lattice(rng, LatticeMode::Hat, t_len, 1, 3);

        let mut unpenalized = lat.clone();
        apply_latency_penalty(&mut unpenalized, &LatencyConfig { beta: 0.0, ..Default::default() })
            .map_err(|e| e.to_string())?;
        if unpenalized.fingerprint() != lat.fingerprint() {
            return Err(format!("trial {i}: zero slope still changed the lattice"));
        }

        let cfg = LatencyConfig { beta: 0.4, t_buffer: 1, t_delay: 1, ..Default::default() };
        let mut shaped = lat.clone();
        apply_latency_penalty(&mut shaped, &cfg).map_err(|e| e.to_string())?;
        for t in 0..t_len {
            let over = (t + 1) as f64 - (cfg.t_buffer + cfg.t_delay) as f64;
            let expect = cfg.beta * over.max(0.0);
            for u in 0..=1usize {
                let (b0, l0) = lat.outcome_logprobs(t, u);
                let (b1, l1) = shaped.outcome_logprobs(t, u);
                if b1.to_bits() != b0.to_bits() {
                    return Err(format!("trial {i}: blank shifted at t={t}"));
                }
                for (a, b) in l0.iter().zip(l1.iter()) {
                    if ((a - expect) - b).abs() > 1e-12 {
                        return Err(format!(
                            "trial {i}: label shift at t={t} is {} not {expect}",
                            a - b
                        ));
                    }
                }
            }
        }
    }
    Ok(format!("{trials} lattices, labels shifted by the ramp, blanks untouched"))
}

fn model_grad_check(seed: u64) -> Result<String, String> {
    let dcfg = DataConfig {
        seed,
        feat_dim: 2,
        vocab: 4,
        pool_speakers: 6,
        profile_dim: 3,
        train_samples: 1,
        eval_samples: 1,
        min_tokens: 2,
        max_tokens: 3,
        min_delay_frames: 2,
        k_min: 2,
        k_max: 3,
        ..DataConfig::default()
    };
    let ds = Dataset::generate(&dcfg, Split::Train).map_err(|e| e.to_string())?;
    let sample = &ds.samples[0];
    let arch = Architecture {
        in_dim: 6,
        vocab: 4,
        profile_dim: 3,
        unmix_channels: 3,
        asr_width: 3,
        asr_embed: 2,
        asr_label_width: 2,
        asr_joint: 3,
        sid_width: 3,
        sid_label_dim: 2,
        sid_joint: 3,
        time_reduction: false,
    };
    let p = ModelParams::init(&arch, seed ^ 0x9e37).map_err(|e| e.to_string())?;
    let cfg = LossConfig {
        lambda: 0.5,
        pit: false,
        latency: LatencyConfig { alpha: 1.0, beta: 0.2, t_buffer: 1, t_delay: 0 },
    };
    let (_, grads) = sample_loss_and_grad(&p, sample, &ds.speakers, &cfg, LossMode::Joint)
        .map_err(|e| e.to_string())?;

    let mut checked = 0usize;
    for (name, got) in grads.named() {
        let base = p
            .named()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.data().to_vec())
            .unwrap();
        let fd = finite_diff(
            |v: &[f64]| {
                let mut q = p.clone();
                let mut named = q.named_mut();
                let slot = named.iter_mut().find(|(n, _)| *n == name).unwrap();
                slot.1.data_mut().copy_from_slice(v);
                drop(named);
                sample_loss_and_grad(&q, sample, &ds.speakers, &cfg, LossMode::Joint)
                    .unwrap()
                    .0
                    .joint
            },
            &base,
            1e-4,
        );
        for (j, (g, e)) in got.data().iter().zip(fd.iter()).enumerate() {
            if g.abs() <= 1e-6 && e.abs() <= 1e-6 {
                continue;
            }
            let rel = (g - e).abs() / g.abs().max(e.abs());
            if rel > 1e-3 {
                return Err(format!(
                    "{name} coordinate {j}: gradient {g} vs finite difference {e} (rel {rel:.2e})"
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} coordinates of the full joint loss within 1e-3"))
}

/// Runs the whole suite; `trials` scales the randomized volume.
pub fn run(trials: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut push = |name: &'static str, outcome: Result<String, String>| {
        checks.push(Check { name, outcome });
    };
    push("softmax loss equals path enumeration", loss_vs_enumeration(&mut rng, LatticeMode::Rnnt, trials));
    push("factored loss equals path enumeration", loss_vs_enumeration(&mut rng, LatticeMode::Hat, trials));
    push("lattice gradient matches finite differences (softmax)", grad_vs_finite_differences(&mut rng, LatticeMode::Rnnt, trials));
    push("lattice gradient matches finite differences (factored)", grad_vs_finite_differences(&mut rng, LatticeMode::Hat, trials));
    push("forward/backward agree and cuts carry unit mass", forward_backward_and_cuts(&mut rng, trials));
    push("node outcome distributions normalize", outcome_normalization(&mut rng, trials.max(50)));
    push("stream split conserves the encoding bitwise", mask_conservation(&mut rng, trials));
    push("late-emission penalty shifts labels only", penalty_semantics(&mut rng, trials));
    push("whole-model gradient matches finite differences", model_grad_check(seed));
    checks
}
