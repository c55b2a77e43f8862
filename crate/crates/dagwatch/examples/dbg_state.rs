use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use dagwatch::detect::{
    calibrate_cusum, edge_appearance_test, edge_disappearance_test, residual, residual_score,
    CusumState, DetectConfig, EdgeTestConfig,
};
use dagwatch::graph::{is_dag, prune_cycles, threshold_edges, AdjacencyMatrix};
use dagwatch::sim::{generate_stream, Mode, SimConfig};
use dagwatch::solver::{regression_targets, solve_targets, SolverConfig, SolverState};

fn stack(pool: &VecDeque<(DMatrix<f64>, DMatrix<f64>)>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = pool.front().map_or(0, |(z, _)| z.ncols());
    let rows: usize = pool.iter().map(|(z, _)| z.nrows()).sum();
    let mut z_out = DMatrix::zeros(rows, d);
    let mut y_out = DMatrix::zeros(rows, d);
    let mut at = 0;
    for (z, y) in pool {
        z_out.rows_mut(at, z.nrows()).copy_from(z);
        y_out.rows_mut(at, y.nrows()).copy_from(y);
        at += z.nrows();
    }
    (z_out, y_out)
}

fn main() {
    let cfg = SimConfig {
        n: 10,
        edge_prob: 0.2,
        weight_scale: 2.0,
        noise_sd: 0.3,
        flip_count: 2,
        horizon: 200,
        t_star: 120,
        batch_size: 20,
        mode: Mode::Contemporaneous,
        seed: 7,
        positive_weights: false,
    };
    let (batches, truth) = generate_stream(&cfg).unwrap();
    println!("flips = {:?}", truth.flipped);

    let solver_cfg = SolverConfig::default();
    let detect_cfg = DetectConfig {
        warmup_steps: 65,
        burn_in: 13,
        calibration_seed: 7 ^ 0x5eed_ca1b,
        ..DetectConfig::default()
    };
    let edge_cfg = EdgeTestConfig::default();
    let d = cfg.n;
    let warm = detect_cfg.warmup_steps;
    let total = batches.len();

    let baseline_l2 = solver_cfg.lambda2;
    let mut l2 = baseline_l2;
    let mut state = SolverState::new(d, cfg.edge_threshold(), &solver_cfg).unwrap();
    let mut cusum: Option<CusumState> = None;
    let mut confirmed: Option<AdjacencyMatrix> = None;
    let mut h0_scores: Vec<f64> = Vec::new();
    let mut alarm_free = 0usize;
    let mut prev_alarmed = false;
    let mut evidence: VecDeque<(DMatrix<f64>, DMatrix<f64>)> = VecDeque::new();
    let mut streak = vec![0usize; d * d];
    let mut refight = false;

    for idx in 0..total {
        let t = idx + 1;
        let x_now = &batches[idx].data;
        let score = {
            let r = residual(x_now, None, Mode::Contemporaneous, state.current()).unwrap();
            Some(residual_score(&r).unwrap())
        };

        // Per-node residual mean squares against W(t-1), for the probe.
        let pernode: Vec<f64> = {
            let r = residual(x_now, None, Mode::Contemporaneous, state.current()).unwrap();
            (0..d).map(|j| r.column(j).norm_squared() / r.nrows() as f64).collect()
        };

        let mut alarmed = false;
        if t > warm {
            if let (Some(cs), Some(sc)) = (cusum.as_mut(), score) {
                alarmed = cs.advance(sc).unwrap();
                if alarmed {
                    alarm_free = 0;
                    l2 = (l2 * detect_cfg.lambda2_decay).max(baseline_l2 * 1e-6);
                    if !prev_alarmed {
                        evidence.clear();
                    }
                    cs.reset();
                } else {
                    alarm_free += 1;
                    if alarm_free >= detect_cfg.lambda2_recovery_steps {
                        l2 = baseline_l2;
                    }
                }
            }
        } else if let Some(sc) = score {
            if t > detect_cfg.burn_in {
                h0_scores.push(sc);
            }
        }

        let run_cfg = SolverConfig { lambda2: l2, ..solver_cfg.clone() };
        let targets = regression_targets(x_now, None, Mode::Contemporaneous).unwrap();
        if evidence.len() == detect_cfg.evidence_batches {
            evidence.pop_front();
        }
        evidence.push_back((targets.regressors().clone(), targets.responses().clone()));
        if t <= warm || alarmed || refight {
            state.reset_duals(solver_cfg.rho0).unwrap();
            refight = false;
        }
        solve_targets(&targets, &mut state, &run_cfg).unwrap();

        if t == warm {
            let mut rng = ChaCha12Rng::seed_from_u64(detect_cfg.calibration_seed);
            let (c, eta) =
                calibrate_cusum(&h0_scores, detect_cfg.target_far, total - warm, &mut rng)
                    .unwrap();
            println!("calibration (c, eta) = ({c:.4}, {eta:.4})");
            cusum = Some(CusumState::new(c, eta).unwrap());
            confirmed = Some(threshold_edges(state.current()));
        }

        let mut step_events = 0usize;
        if t > warm {
            let conf = confirmed.as_mut().unwrap();
            let w_now = state.current().clone();
            let now_adj = threshold_edges(&w_now);
            let mut due: Vec<(usize, usize)> = Vec::new();
            for parent in 0..d {
                for child in 0..d {
                    if parent == child {
                        continue;
                    }
                    let slot = parent * d + child;
                    if now_adj.get(parent, child) == conf.get(parent, child) {
                        streak[slot] = 0;
                        continue;
                    }
                    streak[slot] += 1;
                    if streak[slot] >= detect_cfg.disagreement_patience {
                        due.push((parent, child));
                    }
                }
            }
            if !due.is_empty() {
                let (z_pool, y_pool) = stack(&evidence);
                for (parent, child) in due {
                    if now_adj.get(parent, child) {
                        if let Some(test) = edge_appearance_test(
                            &z_pool,
                            &y_pool,
                            &w_now,
                            (parent, child),
                            edge_cfg.alpha_add,
                        )
                        .unwrap()
                        {
                            if test.confirm {
                                conf.set(parent, child, true);
                                streak[parent * d + child] = 0;
                                state.plant_edge(parent, child, test.estimate).unwrap();
                                println!(
                                    "  t={t} EVENT Added ({parent},{child}) stat={:.2} est={:+.3}",
                                    test.statistic, test.estimate
                                );
                                step_events += 1;
                            }
                        }
                    } else if let Some(test) = edge_disappearance_test(
                        &z_pool,
                        &y_pool,
                        &*conf,
                        (parent, child),
                        edge_cfg.alpha_rem,
                    )
                    .unwrap()
                    {
                        if test.confirm {
                            conf.set(parent, child, false);
                            streak[parent * d + child] = 0;
                            state.zero_edge(parent, child).unwrap();
                            println!(
                                "  t={t} EVENT Deleted ({parent},{child}) F={:.2}",
                                test.statistic
                            );
                            step_events += 1;
                        }
                    }
                }
            }
            prune_cycles(conf, |p, c| w_now.weight(p, c).abs());
            assert!(is_dag(conf));
            if step_events > 0 {
                refight = true;
                if let Some(cs) = cusum.as_mut() {
                    cs.reset();
                }
            }
        }

        if t >= 119 {
            let mut hot: Vec<(usize, f64)> = pernode.iter().copied().enumerate().collect();
            hot.sort_by(|a, b| b.1.total_cmp(&a.1));
            let raw = state.raw_solution();
            let s_now = cusum.as_ref().map_or(0.0, |cs| cs.s());
            println!(
                "t={:3} sc={:.3} S={:.2} al={} l2={:.0e} out={:2} | hot {}:{:.3} {}:{:.3} {}:{:.3} | w50={:+.2} w30={:+.2} w28={:+.2} w82={:+.2}",
                t,
                score.unwrap(),
                s_now,
                alarmed as u8,
                l2,
                state.outer_iters(),
                hot[0].0,
                hot[0].1,
                hot[1].0,
                hot[1].1,
                hot[2].0,
                hot[2].1,
                raw[(5, 0)],
                raw[(3, 0)],
                raw[(2, 8)],
                raw[(8, 2)],
            );
        }
        prev_alarmed = alarmed;
    }
}
