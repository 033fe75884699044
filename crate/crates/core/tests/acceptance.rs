//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance -- 1 4 10` runs a subset. A FAIL line does
//! not change the exit status unless GROUPTRAJ_ACCEPTANCE_STRICT=1 is set.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{
    equivariance_error, fd_decoder, fd_encoder, fd_evolution, fd_losses, random_obstacle_config, simplex_rows,
    FdReport,
};
use grouptraj::ablation::{run_ablation, AblationConfig, AblationReport};
use grouptraj::data::{HorizonSpec, SceneRecord};
use grouptraj::diff::{gumbel_softmax, Graph, RngStream, Tensor};
use grouptraj::losses::{entropy, kl_divergence, kl_to_uniform, loss_smooth, loss_sparse, LossConfig};
use grouptraj::metrics::{incidence_score, min_ade_fde};
use grouptraj::model::AblationMode;
use grouptraj::sim::{simulate_run, split_suite, Obstacle, SimConfig, SplitParams};
use grouptraj::train::{
    load_model, make_samples, save_model, split_of, train_on, validation_loss, Split, TrainConfig,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gradient_fidelity() -> Verdict {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    let mut all_ok = true;
    let harnesses: [(&str, fn(u64) -> FdReport); 4] = [
        ("encoder", fd_encoder),
        ("decoder", fd_decoder),
        ("evolution", fd_evolution),
        ("losses", fd_losses),
    ];
    for (name, h) in harnesses {
        let mut total = FdReport::default();
        for seed in 0..20 {
            total.merge(h(1000 + seed));
        }
        all_ok &= total.ok();
        parts.push(format!("{name} {} entries max rel {:.1e}", total.checked, total.max_rel));
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(all_ok && secs < 60.0, format!("{}; {secs:.1}s", parts.join(", ")))
}

fn scalar(g: &Graph, v: grouptraj::diff::Var) -> f64 {
    g.value(v).item()
}

fn distribution_identities() -> Verdict {
    let mut rng = RngStream::new(2);
    let mut worst: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    for _ in 0..1000 {
        let l = 2 + (rng.uniform() * 6.0) as usize;
        let q = simplex_rows(&mut rng, 1, l).remove(0);
        let p = simplex_rows(&mut rng, 1, l).remove(0);
        let h: f64 = -q.iter().map(|v| v * v.ln()).sum::<f64>();
        let mut g = Graph::new();
        let qv = g.constant(Tensor::vector(q));
        let pv = g.constant(Tensor::vector(p));
        let kl_u = kl_to_uniform(&mut g, qv);
        let ent = entropy(&mut g, qv);
        let kl = kl_divergence(&mut g, pv, qv).unwrap();
        worst = worst.max((scalar(&g, kl_u) - ((l as f64).ln() - h)).abs());
        for v in [kl_u, ent, kl] {
            min_value = min_value.min(scalar(&g, v));
        }
    }

    let cfg = LossConfig::default();
    let mut sm_max: f64 = 0.0;
    let mut sp_max: f64 = 0.0;
    for _ in 0..100 {
        let (rows, l) = (1 + (rng.uniform() * 6.0) as usize, 2 + (rng.uniform() * 3.0) as usize);
        let flat: Vec<f64> = simplex_rows(&mut rng, rows, l).concat();
        let mut onehot = vec![0.0; rows * l];
        for r in 0..rows {
            onehot[r * l + (rng.uniform() * l as f64) as usize] = 1.0;
        }
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(rows, l, flat.clone()).unwrap());
        let b = g.constant(Tensor::matrix(rows, l, flat).unwrap());
        let sm = loss_smooth(&mut g, (Some(a), Some(a)), (Some(b), Some(b)), &cfg).unwrap();
        let oh = g.constant(Tensor::matrix(rows, l, onehot).unwrap());
        let sp = loss_sparse(&mut g, Some(oh), Some(oh), &cfg);
        sm_max = sm_max.max(scalar(&g, sm).abs());
        sp_max = sp_max.max(scalar(&g, sp).abs());
    }
    verdict(
        worst <= 1e-9 && sm_max == 0.0 && sp_max == 0.0 && min_value >= 0.0,
        format!("KL identity err {worst:.1e}; SM {sm_max}; SP {sp_max}; min value {min_value:.2e}"),
    )
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sampling_correctness() -> Verdict {
    const DRAWS: usize = 100_000;
    let mut rng = RngStream::new(3);
    let mut freq_err: f64 = 0.0;
    let mut onehot_err: f64 = 0.0;
    for _ in 0..10 {
        let l = 2 + (rng.uniform() * 4.0) as usize;
        let logits: Vec<f64> = (0..l).map(|_| 1.5 * rng.normal()).collect();
        let probs = softmax(&logits);

        let mut g = Graph::new();
        let tiled = g.constant(Tensor::matrix(DRAWS, l, logits.repeat(DRAWS)).unwrap());
        let y = gumbel_softmax(&mut g, tiled, 1.0, Some(&mut rng), true).unwrap();
        let mut counts = vec![0usize; l];
        for r in 0..DRAWS {
            let row = g.value(y).row(r);
            let k = row.iter().position(|&v| v == 1.0).expect("hard sample is one-hot");
            counts[k] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            freq_err = freq_err.max((*c as f64 / DRAWS as f64 - p).abs());
        }

        // noiseless and noisy relaxed samples at low temperature
        let mut g = Graph::new();
        let lv = g.constant(Tensor::vector(logits.clone()));
        let soft = gumbel_softmax(&mut g, lv, 1e-3, None, false).unwrap();
        let top = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        for (j, v) in g.value(soft).data().iter().enumerate() {
            onehot_err = onehot_err.max((v - if j == top { 1.0 } else { 0.0 }).abs());
        }
        let tiled = g.constant(Tensor::matrix(1000, l, logits.repeat(1000)).unwrap());
        let soft = gumbel_softmax(&mut g, tiled, 1e-6, Some(&mut rng), false).unwrap();
        for r in 0..1000 {
            let row = g.value(soft).row(r);
            let top = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            for (j, v) in row.iter().enumerate() {
                onehot_err = onehot_err.max((v - if j == top { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    verdict(
        freq_err <= 0.01 && onehot_err <= 1e-3,
        format!("max frequency error {freq_err:.4}; max one-hot deviation {onehot_err:.1e}"),
    )
}

fn equivariance() -> Verdict {
    let worst = (0..20u64)
        .map(|s| equivariance_error(500 + s, 2 + (s as usize % 5)))
        .fold(0.0, f64::max);
    verdict(worst <= 1e-9, format!("max deviation {worst:.1e} over 20 scenes"))
}

/// Suite and training settings shared by the group-recovery and ablation
/// criteria.
fn experiment_config() -> AblationConfig {
    let mut train = TrainConfig {
        epochs: 80,
        warmup_epochs: 16,
        ..TrainConfig::default()
    };
    train.eval_every = train.epochs;
    train.model.hidden = 16;
    train.model.gru_hidden = 16;
    train.model.variance = 1e-3;
    train.model.horizon = HorizonSpec::new(8, 12, 4).unwrap();
    AblationConfig {
        train,
        ..AblationConfig::default()
    }
}

fn experiment_suite() -> Vec<SceneRecord> {
    split_suite(500, 0, &SplitParams::default()).expect("suite generation")
}

fn group_recovery(rep: &AblationReport) -> Verdict {
    let run = rep
        .runs
        .iter()
        .find(|r| r.mode == AblationMode::DcgDhgSmSp)
        .expect("full model trained");
    let scenes = &run.report.scenes;
    let recovered = scenes
        .iter()
        .filter(|s| s.segments.iter().any(|g| g.true_groups == 2 && g.score.recovered == 2))
        .count();
    let frac = recovered as f64 / scenes.len().max(1) as f64;
    let f1 = run.report.mean_f1.unwrap_or(0.0);
    verdict(
        run.train_seconds <= 3600.0 && f1 >= 0.8 && frac >= 0.7,
        format!(
            "seed {}: F1 {f1:.3}, post-split recovered {recovered}/{} ({:.0}%), trained in {:.0}s",
            run.seed,
            scenes.len(),
            100.0 * frac,
            run.train_seconds
        ),
    )
}

fn ablation_ordering(rep: &AblationReport) -> Verdict {
    use AblationMode::*;
    let row = |m| rep.row(m).expect("mode trained");
    let holds = |a: AblationMode, b: AblationMode| {
        let (ra, rb) = (row(a), row(b));
        let se = (ra.min_ade_se().powi(2) + rb.min_ade_se().powi(2)).sqrt();
        ra.min_ade <= rb.min_ade + se
    };
    let chain = [DcgDhgSmSp, DcgDhgSm, DcgDhg, ScgShg, Scg];
    let mut pass = true;
    let mut broken = Vec::new();
    for w in chain.windows(2) {
        if !holds(w[0], w[1]) {
            pass = false;
            broken.push(format!("{} > {}", w[0].label(), w[1].label()));
        }
    }
    if !holds(Scg, Shg) {
        pass = false;
        broken.push("SHG < SCG".into());
    }
    let table: Vec<String> = AblationMode::ALL
        .iter()
        .map(|&m| format!("{} {:.4}±{:.4}", m.label(), row(m).min_ade, row(m).min_ade_se()))
        .collect();
    let mut detail = table.join(", ");
    if !broken.is_empty() {
        detail.push_str(&format!("; violated: {}", broken.join(", ")));
    }
    verdict(pass, detail)
}

fn smoothness_stability(rep: &AblationReport) -> Verdict {
    let sm = rep.row(AblationMode::DcgDhgSm).expect("mode trained");
    let base = rep.row(AblationMode::DcgDhg).expect("mode trained");
    verdict(
        sm.final_val_min_ade_std <= base.final_val_min_ade_std,
        format!(
            "final val minADE std: DCG+DHG+SM {:.4}, DCG+DHG {:.4}",
            sm.final_val_min_ade_std, base.final_val_min_ade_std
        ),
    )
}

fn metric_oracles() -> Verdict {
    let mut ok = true;
    let truth = vec![0.0; 4];
    ok &= min_ade_fde(&truth, std::slice::from_ref(&truth), 1, 2).unwrap() == (0.0, 0.0);
    let b = vec![0.0, 0.0, 3.0, 0.0];
    ok &= min_ade_fde(&truth, std::slice::from_ref(&b), 1, 2).unwrap() == (1.5, 3.0);
    ok &= min_ade_fde(&truth, &[vec![1.0, 0.0, 1.0, 0.0], b], 1, 2).unwrap() == (1.0, 1.0);

    let t = vec![vec![1u8, 1, 0, 0, 1], vec![0, 0, 1, 1, 0]];
    let as_pred = |rows: &[Vec<u8>]| -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
    };
    let s = incidence_score(&as_pred(&t), &t, 0.5).unwrap();
    ok &= (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0);
    let s = incidence_score(&as_pred(&[t[1].clone(), t[0].clone()]), &t, 0.5).unwrap();
    ok &= (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0);
    let s = incidence_score(&[vec![1.0, 1.0, 0.0]], &[vec![1, 1, 1]], 0.5).unwrap();
    ok &= s.precision == 1.0 && s.recall == 2.0 / 3.0 && (s.f1 - 0.8).abs() <= f64::EPSILON;

    let mut rng = RngStream::new(8);
    let mut mono = 0;
    for _ in 0..100 {
        let (agents, steps, k) = (1 + (rng.uniform() * 4.0) as usize, 1 + (rng.uniform() * 8.0) as usize, 20);
        let len = agents * steps * 2;
        let truth: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
        let samples: Vec<Vec<f64>> = (0..k).map(|_| (0..len).map(|_| rng.normal()).collect()).collect();
        let mut prev = (f64::INFINITY, f64::INFINITY);
        let mut case_ok = true;
        for kk in 1..=k {
            let cur = min_ade_fde(&truth, &samples[..kk], agents, steps).unwrap();
            case_ok &= cur.0 <= prev.0 && cur.1 <= prev.1;
            prev = cur;
        }
        mono += case_ok as usize;
    }
    verdict(ok && mono == 100, format!("hand oracles {}; K-monotone {mono}/100", if ok { "exact" } else { "mismatch" }))
}

fn determinism_and_persistence() -> Verdict {
    let scenes = split_suite(30, 9, &SplitParams::default()).unwrap();
    let mut cfg = TrainConfig {
        epochs: 4,
        warmup_epochs: 1,
        eval_every: 0,
        ..TrainConfig::default()
    };
    cfg.model.hidden = 8;
    cfg.model.gru_hidden = 8;
    let spec = cfg.model.horizon;
    let pick = |s: Split| make_samples(scenes.iter().filter(|r| split_of(&r.id) == s), spec, None).unwrap();
    let (tr, va) = (pick(Split::Train), pick(Split::Val));
    let bits = |cfg: &TrainConfig| {
        let out = train_on(&tr, &va, cfg, |_| {}).unwrap();
        let seq: Vec<u64> = out
            .log
            .iter()
            .flat_map(|e| [e.train.rec, e.train.kl, e.train.smooth, e.train.sparse, e.train.total, e.val.total])
            .map(f64::to_bits)
            .collect();
        (seq, out)
    };
    let (a, out) = bits(&cfg);
    let (b, _) = bits(&cfg);
    let identical = a == b;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_model(&path, &out.best, &cfg, serde_json::json!({})).unwrap();
    let (back, _) = load_model(&path).unwrap();
    let loss = cfg.effective_loss();
    let before = validation_loss(&out.best, cfg.mode.branches(), &va, &loss).unwrap().total;
    let after = validation_loss(&back, cfg.mode.branches(), &va, &loss).unwrap().total;
    let diff = (before - after).abs();
    verdict(
        identical && diff <= 1e-12,
        format!("{} loss values bit-identical: {identical}; checkpoint val loss diff {diff:.1e}", a.len()),
    )
}

fn simulator_sanity() -> Verdict {
    // lone agent from rest: x(t) = v0 (t - tau (1 - e^{-t/tau}))
    let lone = |dt: f64, steps: usize| SimConfig {
        positions: vec![[0.0, 0.0]],
        goals: vec![[1000.0, 0.0]],
        groups: vec![vec![0]],
        dt,
        steps,
        ..SimConfig::default()
    };
    let closed = |c: &SimConfig, t: f64| c.desired_speed * (t - c.relaxation * (1.0 - (-t / c.relaxation).exp()));
    let fine = lone(0.01, 250);
    let run = simulate_run(&fine, "relax").unwrap();
    let mut worst: f64 = 0.0;
    for k in 1..run.states.len() {
        let t = k as f64 * fine.dt;
        let sim = (run.states[k][0][0] - run.states[k - 1][0][0]) / fine.dt;
        let exact = (closed(&fine, t) - closed(&fine, t - fine.dt)) / fine.dt;
        worst = worst.max((sim - exact).abs() / exact);
    }
    let coarse = lone(0.1, 25);
    let run = simulate_run(&coarse, "relax").unwrap();
    let v = (run.states[25][0][0] - run.states[24][0][0]) / coarse.dt;
    let exact = coarse.desired_speed * (1.0 - (-5.0f64).exp());
    let settled = (v - exact).abs() / exact;

    let mut rng = RngStream::new(10);
    let mut min_dist = f64::INFINITY;
    let mut crossings = 0;
    for seed in 0..1000 {
        let cfg = random_obstacle_config(&mut rng, seed);
        let run = simulate_run(&cfg, "obs").unwrap();
        min_dist = min_dist.min(run.min_obstacle_distance);
        for w in run.states.windows(2) {
            for (p, q) in w[0].iter().zip(&w[1]) {
                crossings += cfg
                    .obstacles
                    .iter()
                    .filter(|o| matches!(o, Obstacle::Segment { .. }) && o.blocks(*p, *q))
                    .count();
            }
        }
    }
    verdict(
        worst <= 0.01 && settled <= 0.01 && min_dist > 0.0 && crossings == 0,
        format!(
            "relaxation error {:.2}% (dt 0.01), {:.2}% at 5 tau (dt 0.1); 1000 scenes min obstacle distance {min_dist:.1e}, wall crossings {crossings}",
            100.0 * worst,
            100.0 * settled
        ),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let strict = std::env::var("GROUPTRAJ_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let names = [
        "gradient fidelity",
        "distribution identities",
        "sampling correctness",
        "equivariance",
        "synthetic group recovery",
        "ablation ordering",
        "smoothness stability",
        "metric oracles",
        "determinism and persistence",
        "simulator sanity",
    ];
    let mut failed = 0;
    let mut emit = |n: usize, v: Verdict| {
        println!("criterion {n:>2} {:<28} {}  {}", names[n - 1], if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += !v.pass as usize;
    };

    let simple: [(usize, fn() -> Verdict); 7] = [
        (1, gradient_fidelity),
        (2, distribution_identities),
        (3, sampling_correctness),
        (4, equivariance),
        (8, metric_oracles),
        (9, determinism_and_persistence),
        (10, simulator_sanity),
    ];
    let experiments: [(usize, fn(&AblationReport) -> Verdict); 3] =
        [(5, group_recovery), (6, ablation_ordering), (7, smoothness_stability)];
    let mut ablation: Option<AblationReport> = None;
    for n in (1..=10).filter(|&n| run(n)) {
        if let Some((_, f)) = simple.iter().find(|c| c.0 == n) {
            emit(n, f());
            continue;
        }
        let rep = ablation.get_or_insert_with(|| {
            let t0 = Instant::now();
            let rep = run_ablation(&experiment_suite(), &experiment_config()).expect("ablation runs");
            println!("ablation: {} runs in {:.0}s", rep.runs.len(), t0.elapsed().as_secs_f64());
            rep
        });
        let (_, f) = experiments.iter().find(|c| c.0 == n).expect("criterion exists");
        emit(n, f(rep));
    }
    println!("acceptance: {failed} criteria failed");
    if strict && failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
