//! One test per acceptance criterion. Each prints a single
//! `acceptance <id> <name>: PASS|FAIL <detail>` line (run with
//! `--nocapture` to see them) before asserting.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dualforge::accel::{self, NuChoice};
use dualforge::dadm::{self, bounds, gap, Problem, RunConfig};
use dualforge::dataio::{self, Dataset};
use dualforge::localsolver::{LocalStepConfig, StepMode};
use dualforge::losses::LossKind;
use dualforge::oracle;
use dualforge::pipeline::{self, Algo, KappaChoice, TrainOptions};
use dualforge::regularizer::{soft_threshold, ShiftedElasticNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!("acceptance {id:>2} {name}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn default_instance() -> Dataset {
    dataio::gen_synthetic(2000, 50, 0.3, 42, 0.0).unwrap()
}

fn config(sp: f64, target: f64, max_rounds: u64) -> RunConfig {
    RunConfig {
        seed: 42,
        target_gap: target,
        max_rounds,
        step: LocalStepConfig { sp, ..LocalStepConfig::default() },
        ..RunConfig::default()
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn c01_duality_identities() {
    let clock = Instant::now();
    let data = default_instance();
    let part = dataio::partition(data.n(), 4, 42).unwrap();
    let reg = ShiftedElasticNet::new(1e-3, 1e-5).unwrap();
    let loss = LossKind::SmoothHinge;
    let problem = Problem { data: &data, partition: &part, reg: reg.clone(), loss };
    let (mut worst_split, mut worst_beta, mut syncs) = (0.0f64, 0.0f64, 0);
    let mut observer = |view: &dadm::SyncView<'_>| {
        let sizes: Vec<usize> = view.workers.iter().map(|s| s.shard.len()).collect();
        let xa: Vec<Vec<f64>> = view.workers.iter().map(|s| s.xa_sum.clone()).collect();
        let betas = gap::compute_beta(reg.lambda_eff(), &sizes, &xa);
        let mut local_sum = 0.0;
        for (s, beta) in view.workers.iter().zip(&betas) {
            let input = gap::LocalGapInput {
                n_ell: s.shard.len(),
                loss_sum: s.loss_sum,
                conj_sum: s.conj_sum,
                xa_sum: &s.xa_sum,
                beta,
            };
            local_sum += gap::local_gap(&reg, &input, view.w).unwrap().gap;
        }
        // Global gap recomputed from scratch by the reference formulas.
        let mut alpha = vec![0.0; data.n()];
        for s in view.workers {
            for (&i, &a) in s.shard.iter().zip(&s.alpha) {
                alpha[i] = a;
            }
        }
        let p = oracle::primal(&data, &reg, loss, view.w);
        let global = p - oracle::dual(&data, &reg, loss, &alpha).unwrap();
        worst_split = worst_split.max((global - local_sum).abs() / (1.0 + p.abs()));
        for j in 0..data.d() {
            let s: f64 = betas.iter().map(|b| b[j]).sum();
            worst_beta = worst_beta.max(s.abs());
        }
        syncs += 1;
    };
    dadm::run_observed(&problem, &config(0.2, 1e-300, 60), None, &mut observer).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    let pass = worst_split <= 1e-9 && worst_beta <= 1e-9 && secs < 10.0;
    report(
        1,
        "duality identities",
        pass,
        format!("{syncs} syncs, max |gap - sum local|/(1+|P|) = {worst_split:e}, max |sum beta| = {worst_beta:e}, {secs:.2}s"),
    );
}

#[test]
fn c02_single_worker_matches_sequential_ascent() {
    let clock = Instant::now();
    let data = default_instance();
    let part = dataio::partition(data.n(), 1, 42).unwrap();
    let reg = ShiftedElasticNet::new(1e-3, 1e-5).unwrap();
    let loss = LossKind::SmoothHinge;
    let problem = Problem { data: &data, partition: &part, reg: reg.clone(), loss };
    let epochs = 5;
    let mut seen: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut observer = |view: &dadm::SyncView<'_>| {
        let s = &view.workers[0];
        let mut alpha = vec![0.0; data.n()];
        for (&i, &a) in s.shard.iter().zip(&s.alpha) {
            alpha[i] = a;
        }
        seen.push((alpha, view.w.to_vec()));
    };
    dadm::run_observed(&problem, &config(1.0, 1e-300, epochs), None, &mut observer).unwrap();
    let traj = oracle::single_machine_sdca(&data, &reg, loss, epochs as usize, 42, part.shard(0)).unwrap();
    let mut worst = 0.0f64;
    for (k, (alpha, w)) in seen.iter().enumerate() {
        worst = worst.max(max_abs_diff(alpha, &traj.alphas[k]));
        worst = worst.max(max_abs_diff(w, &traj.ws[k]));
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = seen.len() == epochs as usize + 1 && worst <= 1e-12 && secs < 5.0;
    report(
        2,
        "single-worker reduction",
        pass,
        format!("{} states compared, max abs diff {worst:e}, {secs:.2}s", seen.len()),
    );
}

#[test]
fn c03_dual_monotone() {
    let data = default_instance();
    let part = dataio::partition(data.n(), 4, 42).unwrap();
    let reg = ShiftedElasticNet::new(1e-3, 1e-5).unwrap();
    let problem = Problem { data: &data, partition: &part, reg, loss: LossKind::SmoothHinge };
    let res = dadm::run(&problem, &config(0.2, 1e-300, 200), None).unwrap();
    let worst = res
        .trace
        .windows(2)
        .map(|p| p[0].values.dual - p[1].values.dual)
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = res.trace.len() == 201 && worst <= 1e-10;
    report(
        3,
        "dual monotonicity",
        pass,
        format!("{} rounds, largest per-round decrease {worst:e}", res.trace.len() - 1),
    );
}

#[test]
fn c04_linear_rate_within_bound() {
    let clock = Instant::now();
    let data = default_instance();
    let m = 4;
    let sp = 0.2;
    let lambda = 0.05;
    let part = dataio::partition(data.n(), m, 42).unwrap();
    let reg = ShiftedElasticNet::new(lambda, 1e-5).unwrap();
    let problem = Problem { data: &data, partition: &part, reg, loss: LossKind::SmoothHinge };
    let n_tilde = part
        .sizes()
        .iter()
        .map(|&s| s as f64 / dualforge::rng::batch_size(sp, s) as f64)
        .fold(0.0, f64::max);
    let r = data.stats().r;
    let bound = bounds::smooth_rounds(r, 1.0, lambda, n_tilde, 1e6).unwrap();
    let probe = dadm::run(&problem, &config(sp, 1e-300, 1), None).unwrap();
    let gap0 = probe.trace[0].values.gap;
    let mut cfg = config(sp, 1e-6 * gap0, bound);
    cfg.step.mode = StepMode::ConservativeSmooth;
    let res = dadm::run(&problem, &cfg, None).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    let pass = res.converged && res.rounds <= bound && secs < 30.0;
    report(
        4,
        "linear rate within round bound",
        pass,
        format!(
            "gap0 {gap0:e}, reached {:e} after {} rounds, bound {bound}, {secs:.2}s",
            res.values.gap, res.rounds
        ),
    );
}

#[test]
fn c05_optimum_agrees_with_reference() {
    let data = default_instance();
    let part = dataio::partition(data.n(), 4, 42).unwrap();
    let reg = ShiftedElasticNet::new(1e-3, 1e-5).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for loss in [LossKind::SmoothHinge, LossKind::Logistic] {
        let problem = Problem { data: &data, partition: &part, reg: reg.clone(), loss };
        let res = dadm::run(&problem, &config(0.2, 1e-8, 50_000), None).unwrap();
        let cert = oracle::prox_grad_reference(&data, &reg, loss, 1e-10, 500_000).unwrap();
        let w_err = max_abs_diff(&res.w, &cert.w_star);
        let p_err = (oracle::primal(&data, &reg, loss, &res.w) - cert.primal_at_star).abs();
        let ok = res.converged && w_err <= 1e-4 && p_err <= 2e-8;
        pass &= ok;
        lines.push(format!(
            "{loss}: rounds {} gap {:e} |w - w*|inf {w_err:e} |P - P*| {p_err:e} (reference gap {:e})",
            res.rounds, res.values.gap, cert.certified_gap
        ));
    }
    report(5, "optimum agreement", pass, lines.join("; "));
}

#[test]
fn c06_acceleration_halves_rounds() {
    let clock = Instant::now();
    let data = dataio::gen_synthetic(2000, 200, 0.3, 42, 0.0).unwrap();
    let base = TrainOptions {
        loss: LossKind::SmoothHinge,
        lambda: 1e-7,
        mu: 1e-5,
        m: 8,
        sp: 1.0,
        seed: 42,
        target_gap: 1e-3,
        ..TrainOptions::default()
    };
    let plain = pipeline::train(&data, &TrainOptions { algo: Algo::Dadm, max_rounds: 300, ..base.clone() }).unwrap();
    let last_gap = |o: &pipeline::TrainOutcome| o.records.last().map_or(f64::NAN, |r| r.gap_normalized);
    let last_primal = |o: &pipeline::TrainOutcome| o.records.last().map_or(f64::NAN, |r| r.primal / 2000.0);
    let acc = pipeline::train(
        &data,
        &TrainOptions { algo: Algo::AccDadm, kappa: KappaChoice::Auto, nu: NuChoice::Zero, max_rounds: 300, ..base },
    )
    .unwrap();
    // Unconverged plain runs count as the cap.
    let plain_rounds = plain.rounds;
    let secs = clock.elapsed().as_secs_f64();
    let pass = acc.converged && (acc.rounds as f64) <= 0.5 * plain_rounds as f64 && secs < 120.0;
    report(
        6,
        "acceleration benefit",
        pass,
        format!(
            "plain {} rounds (converged {}, gap/n {:e}, P/n {:e}), accelerated {} rounds (converged {}, gap/n {:e}, P/n {:e}, kappa {:e}), {secs:.1}s",
            plain_rounds,
            plain.converged,
            last_gap(&plain),
            last_primal(&plain),
            acc.rounds,
            acc.converged,
            last_gap(&acc),
            last_primal(&acc),
            acc.resolved.kappa
        ),
    );
}

#[test]
fn c07_smoothing_bound() {
    let mut lines = Vec::new();
    let mut pass = true;
    for gamma in [1.0, 0.1, 0.01] {
        let smooth = LossKind::SmoothedHinge(gamma);
        let (mut max_up, mut max_down) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for k in 0..10_000 {
            let a = -5.0 + 10.0 * k as f64 / 9_999.0;
            // Hinge and its smoothing written out directly.
            let hinge = (1.0 - a).max(0.0);
            let smoothed = if a >= 1.0 {
                0.0
            } else if a <= 1.0 - gamma {
                1.0 - a - gamma / 2.0
            } else {
                (1.0 - a) * (1.0 - a) / (2.0 * gamma)
            };
            assert!((smooth.eval(a, 1.0) - smoothed).abs() <= 1e-12);
            max_up = max_up.max(smoothed - hinge);
            max_down = max_down.max(hinge - smoothed);
        }
        let ok = (0.0..=gamma / 2.0).contains(&max_up) && (0.0..=gamma / 2.0 + 1e-12).contains(&max_down);
        pass &= ok;
        lines.push(format!("gamma {gamma}: max(smoothed - hinge) {max_up:e}, max(hinge - smoothed) {max_down:e}"));
    }
    let mut same = 0.0f64;
    for k in 0..10_000 {
        let a = -5.0 + 10.0 * k as f64 / 9_999.0;
        for y in [1.0, -1.0] {
            same = same.max((LossKind::SmoothedHinge(1.0).eval(a, y) - LossKind::SmoothHinge.eval(a, y)).abs());
        }
    }
    pass &= same <= 1e-12;
    lines.push(format!("width-1 smoothing vs smooth hinge {same:e}"));
    report(7, "smoothing bound", pass, lines.join("; "));
}

#[test]
fn c08_conjugate_and_prox_oracles() {
    let kinds = [LossKind::SmoothHinge, LossKind::Logistic, LossKind::Hinge, LossKind::SmoothedHinge(0.3)];
    let (mut fy, mut sup_err, mut fd_err) = (0.0f64, 0.0f64, 0.0f64);
    for kind in kinds {
        for y in [1.0, -1.0] {
            for k in 1..20 {
                let t = k as f64 / 20.0;
                let b = y * t;
                let conj = kind.conj(b, y).unwrap();
                // φ*(−b) = sup_a (−b a − φ(a)) by brute force on a grid.
                let (sup, _) = oracle::grid_sup(|a| -b * a - kind.eval(a, y), -30.0, 30.0, 1e-4);
                sup_err = sup_err.max((sup - conj).abs());
                // Fenchel-Young: φ(a) + φ*(−b) ≥ −ab, equality at b = −φ'(a).
                for j in 0..40 {
                    let a = -4.0 + 0.2 * j as f64;
                    fy = fy.max(-(kind.eval(a, y) + conj + a * b).min(0.0));
                }
                if kind.is_smooth() {
                    let a = -3.0 + 0.3 * k as f64;
                    let dual = kind.clip_dual(-kind.deriv(a, y), y);
                    let eq = kind.eval(a, y) + kind.conj(dual, y).unwrap() + a * dual;
                    fy = fy.max(eq.abs());
                }
            }
            for j in 0..60 {
                let a = -3.0 + 0.1 * j as f64 + 0.013;
                let fd = oracle::central_difference(|x| kind.eval(x, y), a, 1e-6);
                if (kind == LossKind::Hinge) && ((a * y) - 1.0).abs() < 1e-3 {
                    continue;
                }
                fd_err = fd_err.max((fd - kind.deriv(a, y)).abs());
            }
        }
    }
    // ∇f*(u) per coordinate is argmax_w (u w − ½w² − thr|w|).
    let reg = ShiftedElasticNet::new(0.5, 0.2).unwrap();
    let thr = reg.threshold();
    let mut argmax_err = 0.0f64;
    for k in 0..41 {
        let u = -2.0 + 0.1 * k as f64;
        let (_, arg) = oracle::grid_sup(|w| u * w - 0.5 * w * w - thr * w.abs(), -5.0, 5.0, 1e-6);
        argmax_err = argmax_err.max((reg.grad_conj(&[u])[0] - arg).abs());
        argmax_err = argmax_err.max((soft_threshold(u, thr) - arg).abs());
    }
    let pass = fy <= 1e-6 && sup_err <= 1e-6 && argmax_err <= 1e-6 && fd_err <= 1e-5;
    report(
        8,
        "conjugate and prox oracles",
        pass,
        format!("fenchel-young {fy:e}, grid sup {sup_err:e}, argmax {argmax_err:e}, finite difference {fd_err:e}"),
    );
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dualforge")).args(args).output().unwrap()
}

fn csv_without_time(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let skip = headers.iter().position(|h| h == "time_ms").unwrap();
    let mut out = String::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let row: Vec<&str> = rec.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, f)| f).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[test]
fn c09_deterministic_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.libsvm");
    let gen = run_cli(&["gen", "--n", "600", "--d", "30", "--density", "0.3", "--seed", "42", "--out", data.to_str().unwrap()]);
    assert!(gen.status.success());
    let mut lines = Vec::new();
    let mut pass = true;
    for m in ["1", "4", "8"] {
        let first = dir.path().join(format!("m{m}a"));
        let second = dir.path().join(format!("m{m}b"));
        let a = run_cli(&[
            "train",
            data.to_str().unwrap(),
            "--m",
            m,
            "--sp",
            "0.2",
            "--lambda",
            "1e-3",
            "--target-gap",
            "1e-7",
            "--seed",
            "7",
            "--out",
            first.to_str().unwrap(),
        ]);
        assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
        let b = run_cli(&[
            "train",
            "--from-manifest",
            first.join("manifest.json").to_str().unwrap(),
            "--out",
            second.to_str().unwrap(),
        ]);
        assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
        let (ca, cb) = (csv_without_time(&first.join("metrics.csv")), csv_without_time(&second.join("metrics.csv")));
        let same = ca == cb && !ca.is_empty();
        pass &= same;
        lines.push(format!("m={m}: {} rows identical={same}", ca.lines().count()));
    }
    report(9, "determinism", pass, lines.join("; "));
}

/// `num / 2^shift`, exact while `num` fits in 53 bits.
fn dyadic(num: i128, shift: u32) -> f64 {
    num as f64 / (1u128 << shift) as f64
}

#[test]
fn c10_schedule_formulas() {
    let s = accel::schedule(0.01, 0.08, 1.0, NuChoice::Theory).unwrap();
    let eta = (0.01f64 / 0.17).sqrt();
    let mut pass = s.eta_inv_sq == 17.0;
    pass &= (s.nu - (1.0 - eta) / (1.0 + eta)).abs() <= 1e-12;
    let mut xi = s.xi0;
    for _ in 0..20 {
        let next = s.next_xi(xi);
        pass &= next == (1.0 - s.eta / 2.0) * xi;
        xi = next;
    }
    // Parameters with power-of-two denominators so every quantity is exact
    // in f64, compared against integer arithmetic over 2^40.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    for _ in 0..100 {
        let m: i128 = rng.random_range(1..=64);
        let r_num: i128 = rng.random_range(1..=1 << 12); // R = r_num / 2^6
        let g_exp: u32 = rng.random_range(0..=6); // γ = 2^-g_exp
        let n_exp: u32 = rng.random_range(4..=14); // n = 2^n_exp
        let l_num: i128 = rng.random_range(1..=1 << 10); // λ = l_num / 2^20
        let (r, gamma, n, lambda) =
            (dyadic(r_num, 6), 1.0 / (1u64 << g_exp) as f64, 1usize << n_exp, dyadic(l_num, 20));
        // mR/(γn) = m·r_num·2^(g_exp − 6 − n_exp); over 2^40 that is m·r_num·2^(34 + g_exp − n_exp).
        let first = m * r_num * (1i128 << (34 + g_exp - n_exp));
        let expect = dyadic((first - l_num * (1 << 20)).max(0), 40);
        if accel::default_kappa(m as usize, r, gamma, n, lambda) != expect {
            mismatches += 1;
        }
    }
    pass &= mismatches == 0;
    report(
        10,
        "schedule formulas",
        pass,
        format!("eta^-2 {}, nu {}, {mismatches} kappa mismatches in 100 draws", s.eta_inv_sq, s.nu),
    );
}

#[test]
fn c11_lipschitz_path() {
    let data = default_instance();
    let n = data.n() as f64;
    let m = 4;
    let sp = 0.2;
    let lambda = 1e-3;
    let part = dataio::partition(data.n(), m, 42).unwrap();
    let reg = ShiftedElasticNet::new(lambda, 1e-5).unwrap();
    let r = data.stats().r;
    let n_tilde = part
        .sizes()
        .iter()
        .map(|&s| s as f64 / dualforge::rng::batch_size(sp, s) as f64)
        .fold(0.0, f64::max);

    // Plain method on the raw hinge, exact updates.
    let problem = Problem { data: &data, partition: &part, reg: reg.clone(), loss: LossKind::Hinge };
    let probe = dadm::run(&problem, &config(sp, 1e-300, 1), None).unwrap();
    let gap0 = probe.trace[0].values.gap;
    let g = 4.0 * r;
    let t0 = bounds::lipschitz_t0(n_tilde, g, lambda, gap0, n).unwrap();
    let bound = bounds::lipschitz_rounds(n_tilde, g, lambda, 1e-2, t0).unwrap().total;
    let plain = dadm::run(&problem, &config(sp, 1e-2 * n, bound.min(100_000)), None).unwrap();
    let plain_ok = plain.converged && plain.rounds <= bound;

    // Accelerated method on the smoothed hinge, certified with the dual
    // point of an independent solve of the smoothed problem.
    let opts = TrainOptions {
        algo: Algo::AccDadm,
        loss: LossKind::Hinge,
        lambda,
        mu: 1e-5,
        m,
        sp,
        seed: 42,
        target_gap: 1e-2,
        max_rounds: 20_000,
        ..TrainOptions::default()
    };
    let acc = pipeline::train(&data, &opts).unwrap();
    let (smoothed, _) = accel::smooth_wrap(LossKind::Hinge, 1e-2, 1.0).unwrap();
    let cert = oracle::prox_grad_reference(&data, &reg, smoothed, 1e-6 * n, 200_000).unwrap();
    let (alpha_ref, _) = oracle::certify(&data, &reg, smoothed, &cert.w_star).unwrap();
    // The smoothed dual point is feasible for the hinge dual, whose value
    // bounds the hinge optimum from below.
    let lower = oracle::dual(&data, &reg, LossKind::Hinge, &alpha_ref).unwrap();
    let subopt = (oracle::primal(&data, &reg, LossKind::Hinge, &acc.model.w) - lower) / n;
    let acc_ok = subopt <= 1e-2;
    report(
        11,
        "lipschitz path",
        plain_ok && acc_ok,
        format!(
            "plain hinge: {} rounds to normalized gap {:e} (bound {bound}); smoothed accelerated: {} rounds, certified suboptimality {subopt:e}",
            plain.rounds,
            plain.values.gap / n,
            acc.rounds
        ),
    );
}
