use dagwatch::detect::{run_sequential, DetectConfig, EdgeTestConfig};
use dagwatch::graph::threshold_edges;
use dagwatch::sim::{generate_stream, Mode, SimConfig};
use dagwatch::solver::SolverConfig;

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
    let det = DetectConfig {
        warmup_steps: 65,
        burn_in: 13,
        calibration_seed: 7 ^ 0x5eed_ca1b,
        ..DetectConfig::default()
    };
    let out = run_sequential(
        &batches,
        Mode::Contemporaneous,
        cfg.edge_threshold(),
        &SolverConfig::default(),
        &EdgeTestConfig::default(),
        &det,
    )
    .unwrap();

    println!("calibration (c, eta) = {:?}", out.calibration);
    println!("first_alarm = {:?}", out.first_alarm);
    println!("events = {:?}", out.events);
    println!("flips = {:?}", truth.flipped);
    println!("true edges before = {:?}", threshold_edges(&truth.w_before).edges());
    println!("true edges after  = {:?}", threshold_edges(&truth.w_after).edges());
    println!("initial confirmed = {:?}", out.initial_confirmed.edges());
    println!("final confirmed   = {:?}", out.confirmed.edges());
    println!("final estimate    = {:?}", threshold_edges(&out.final_graph).edges());
    let fails = out.diagnostics.iter().filter(|d| d.solver_failed).count();
    println!("solver failures: {fails}");
    for d in &out.diagnostics {
        if d.t % 10 == 0 || (d.t >= 115 && d.t <= 135) || d.alarmed || d.events > 0 {
            println!(
                "t={:3} score={:?} S={:.4} alarm={} l2={:.2e} outer={} inner={} ev={} drops={}",
                d.t, d.score, d.cusum, d.alarmed, d.lambda2, d.outer_iters, d.inner_iters,
                d.events, d.projection_drops
            );
        }
    }
}
