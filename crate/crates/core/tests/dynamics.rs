use ntklab_core::experiments::{synthesize, SyntheticSpec};
use ntklab_core::linalg::min_eigenvalue_symmetric;
use ntklab_core::stats::linear_slope;
use ntklab_core::trainer::train;
use ntklab_core::{GradientFeatures, NetworkParams, TrainConfig, Trajectory};

struct Run {
    traj: Trajectory,
    lambda_min: f64,
    eta: f64,
    n: usize,
    width: usize,
    flips_per_point: Vec<usize>,
    params: NetworkParams,
}

fn standard_run(width: usize) -> Run {
    let problem = synthesize(&SyntheticSpec::figure1(2021)).unwrap();
    let data = &problem.data;
    let mut params = NetworkParams::initialize(width, data.dim(), 1.0, 1).unwrap();
    let features = GradientFeatures::build(&params, data).unwrap();
    let sol = features.min_norm_solution(&params, data.labels()).unwrap();
    let config = TrainConfig {
        loss_tol: 1e-3,
        max_iters: 50_000,
        record_every: 10,
        ..TrainConfig::default()
    };
    let traj = train(&mut params, data, &config, &features, &sol).unwrap();
    let flips_per_point = (0..data.len())
        .map(|i| params.sign_flip_count(data.augmented_row(i)).unwrap())
        .collect();
    Run {
        traj,
        lambda_min: min_eigenvalue_symmetric(features.gram()),
        eta: config.step_size,
        n: data.len(),
        width,
        flips_per_point,
        params,
    }
}

#[test]
fn standard_problem_dynamics() {
    let run = standard_run(5000);
    let traj = &run.traj;
    let losses = &traj.losses;
    assert!(traj.converged);
    assert!(traj.terminal_loss() < 1e-3);

    // Monotone decay after a burn-in of 50 steps, at stride 50 and per step.
    for k in 50..losses.len().saturating_sub(50) {
        assert!(
            losses[k + 50] < losses[k],
            "loss rose between {k} and {}",
            k + 50
        );
    }
    assert!(traj.loss_increases().is_empty());

    // The P₀⊥ component barely moves: it never exceeds a small fraction of
    // the initial distance to the min-norm solution.
    let first = traj.records[0];
    let v_perp_max = traj.records.iter().map(|r| r.v_perp).fold(0.0, f64::max);
    let v_perp_end = traj.terminal().unwrap().v_perp;
    println!(
        "V∥(0) = {:.3}, max V⊥ = {v_perp_max:.3}, final V⊥ = {v_perp_end:.3}, final dist = {:.3}",
        first.v_par,
        traj.terminal().unwrap().dist_minnorm_sq
    );
    assert!(first.v_perp <= 1e-8 * first.v_par);
    assert!(v_perp_max <= 0.1 * first.v_par);

    // Distance to w_L* falls early and then plateaus.
    let d: Vec<f64> = traj.records.iter().map(|r| r.dist_minnorm_sq).collect();
    let half = d.len() / 2;
    let tail_spread = d[half..].iter().fold(0.0f64, |a, &b| a.max(b))
        / d[half..].iter().fold(f64::MAX, |a, &b| a.min(b));
    println!(
        "dist_minnorm first {:.3}, mid {:.3}, last {:.3}, tail spread {tail_spread:.3}",
        d[0],
        d[half],
        d[d.len() - 1]
    );
    assert!(d[d.len() - 1] < 0.2 * d[0]);
    assert!(tail_spread < 1.5);

    // Path length over [K, 2K] shrinks geometrically once the loss is below 1.
    let k0 = losses.iter().position(|&l| l < 1.0).unwrap().max(1);
    let mut segments = Vec::new();
    let mut k = k0;
    while 2 * k <= traj.step_norms.len() {
        segments.push(traj.movement_between(k, 2 * k));
        k *= 2;
    }
    println!("K0 = {k0}, movement over [K, 2K]: {segments:?}");
    assert!(segments.len() >= 2);
    for w in segments.windows(2) {
        assert!(w[1] < 0.75 * w[0]);
    }

    // Fitted exponential rate on the tail against c·η with c = λ_min(G(0)).
    let start = losses.iter().position(|&l| l < 1e-1).unwrap();
    let ks: Vec<f64> = (start..losses.len()).map(|k| k as f64).collect();
    let logs: Vec<f64> = losses[start..].iter().map(|l| l.ln()).collect();
    let rate = -linear_slope(&ks, &logs);
    let c_eta = run.lambda_min * run.eta;
    println!(
        "fitted rate {rate:e}, c·η = {c_eta:e}, ratio {:.3}",
        rate / c_eta
    );
    assert!(rate / c_eta >= 0.25 && rate / c_eta <= 4.0);

    // Sign flips are measured, not gated.
    let worst = *run.flips_per_point.iter().max().unwrap();
    let frac = worst as f64 / run.width as f64;
    println!(
        "largest per-point flip fraction {frac:.4} over {} points",
        run.n
    );
    assert!(frac < 1.0);
    assert_eq!(run.params.signs().len(), run.width);
}
