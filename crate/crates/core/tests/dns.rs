use rbc_core::dataset::{convective_field, read_episode, write_episode};
use rbc_core::dns::{
    initial_condition, poisson_solve, simulate_episode, step, DnsError, FlowState, PoissonSolver, RbcSolver,
    SimulationConfig,
};
use rbc_core::spectral::{ddx, ddy, laplacian, FourierX};
use rbc_core::{Grid, ScalarField};

fn max_diff(a: &ScalarField<f64>, b: &ScalarField<f64>) -> f64 {
    (a.values() - b.values()).iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

fn divergence(s: &FlowState<f64>) -> f64 {
    let d = ddx(&s.u_x).values() + ddy(&s.u_y).unwrap().values();
    d.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / b.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn noiseless_start_is_conduction_at_rest() {
    let mut cfg = SimulationConfig::desk(1e5);
    cfg.noise_amplitude = 0.0;
    let s = initial_condition::<f64>(&cfg).unwrap();
    let g = cfg.grid;
    for j in 0..g.ny {
        let want = 2.0 - (g.y(j) + 1.0) / 2.0;
        for i in 0..g.nx {
            assert!((s.temperature.get(j, i) - want).abs() < 1e-15);
        }
    }
    assert_eq!(s.u_x.max_abs(), 0.0);
    assert_eq!(s.u_y.max_abs(), 0.0);
    assert_eq!(s.vorticity.max_abs(), 0.0);
}

#[test]
fn initial_noise_is_seeded() {
    let cfg = SimulationConfig::desk(1e5).with_seed(7);
    let a = initial_condition::<f64>(&cfg).unwrap();
    let b = initial_condition::<f64>(&cfg).unwrap();
    assert_eq!(a, b);
    let c = initial_condition::<f64>(&cfg.clone().with_seed(8)).unwrap();
    assert!(max_diff(&a.temperature, &c.temperature) > 0.0);
    // Walls carry no noise.
    for i in 0..cfg.grid.nx {
        assert_eq!(a.temperature.get(0, i), 2.0);
        assert_eq!(a.temperature.get(cfg.grid.ny - 1, i), 1.0);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = SimulationConfig::desk(1e5);
    cfg.record_interval = 0.03;
    assert!(matches!(RbcSolver::<f64>::new(&cfg), Err(DnsError::InvalidConfig(_))));
    let mut cfg = SimulationConfig::desk(-1.0);
    cfg.ra = -1.0;
    assert!(initial_condition::<f64>(&cfg).is_err());
}

#[test]
fn poisson_of_zero_is_zero() {
    let w = ScalarField::<f64>::zeros(Grid::desk());
    assert_eq!(poisson_solve(&w).unwrap().max_abs(), 0.0);
}

#[test]
fn poisson_manufactured_solution_converges_at_second_order() {
    let k = 2.0;
    let c = std::f64::consts::FRAC_PI_2;
    let err = |ny: usize| {
        let g = Grid::new(32, ny).unwrap();
        let w = ScalarField::<f64>::from_fn(g, |x, y| (k * k + c * c) * (k * x).sin() * (c * y).cos());
        let exact = ScalarField::<f64>::from_fn(g, |x, y| (k * x).sin() * (c * y).cos());
        max_diff(&poisson_solve(&w).unwrap(), &exact) / exact.max_abs()
    };
    let (coarse, fine) = (err(33), err(65));
    let dy = 2.0 / 32.0;
    assert!(coarse <= dy * dy, "coarse error {coarse}");
    assert!((coarse / fine - 4.0).abs() < 0.2, "ratio {}", coarse / fine);
}

#[test]
fn poisson_residual_vanishes_on_interior_rows() {
    let g = Grid::desk();
    let w = ScalarField::<f64>::from_fn(g, |x, y| (3.0 * x).cos() * (1.0 - y * y) + (x + 2.0 * y).sin());
    let psi = PoissonSolver::new(g).unwrap().solve(&w);
    let lap = laplacian(&FourierX::new(g), &psi).unwrap();
    let mut res: f64 = 0.0;
    let mut norm: f64 = 0.0;
    for j in 1..g.ny - 1 {
        for i in 0..g.nx {
            res += (lap.get(j, i) + w.get(j, i)).powi(2);
            norm += w.get(j, i).powi(2);
        }
    }
    assert!(res.sqrt() <= 1e-8 * norm.sqrt());
    for i in 0..g.nx {
        assert_eq!(psi.get(0, i), 0.0);
        assert_eq!(psi.get(g.ny - 1, i), 0.0);
    }
}

#[test]
fn conduction_is_a_fixed_point() {
    for ra in [1e3, 1e5] {
        let mut cfg = SimulationConfig::desk(ra);
        cfg.noise_amplitude = 0.0;
        let solver = RbcSolver::<f64>::new(&cfg).unwrap();
        let mut s = initial_condition::<f64>(&cfg).unwrap();
        for _ in 0..100 {
            let next = solver.step(&s).unwrap();
            for (a, b) in [
                (&next.temperature, &s.temperature),
                (&next.vorticity, &s.vorticity),
                (&next.streamfunction, &s.streamfunction),
                (&next.u_x, &s.u_x),
                (&next.u_y, &s.u_y),
            ] {
                assert!(max_diff(a, b) <= 1e-12);
            }
            s = next;
        }
    }
}

#[test]
fn free_step_matches_solver_step() {
    let cfg = SimulationConfig::desk(1e5);
    let s = initial_condition::<f64>(&cfg).unwrap();
    let a = step(&s, &cfg).unwrap();
    let b = RbcSolver::new(&cfg).unwrap().step(&s).unwrap();
    assert_eq!(a, b);
    assert!((a.time - cfg.dt).abs() < 1e-15);
}

#[test]
fn convecting_run_keeps_invariants() {
    let cfg = SimulationConfig::desk(1e5);
    let solver = RbcSolver::<f64>::new(&cfg).unwrap();
    let mut s = initial_condition::<f64>(&cfg).unwrap();
    let g = cfg.grid;
    for n in 1..=2400 {
        s = solver.step(&s).unwrap();
        let (lo, hi) = s.temperature.min_max();
        assert!(lo >= 1.0 - 0.05 && hi <= 2.0 + 0.05, "T range [{lo}, {hi}] at step {n}");
        if n % 40 == 0 {
            assert!(divergence(&s) <= 1e-10, "divergence {} at step {n}", divergence(&s));
            for i in 0..g.nx {
                assert_eq!(s.temperature.get(0, i), 2.0);
                assert_eq!(s.temperature.get(g.ny - 1, i), 1.0);
                assert_eq!(s.streamfunction.get(0, i), 0.0);
                assert_eq!(s.streamfunction.get(g.ny - 1, i), 0.0);
            }
        }
    }
    // Past onset the mean upward heat flux is well established.
    assert!(convective_field(&s).mean() > 1e-2);
}

#[test]
fn viscous_decay_without_buoyancy() {
    let mut cfg = SimulationConfig::desk(1e4);
    cfg.buoyancy = false;
    let solver = RbcSolver::<f64>::new(&cfg).unwrap();
    let g = cfg.grid;
    let t = ScalarField::from_fn(g, |_, y| 1.5 - 0.5 * y);
    let w = ScalarField::from_fn(g, |x, y| {
        (1.0 - y * y) * (2.0 * x.sin() + (3.0 * x + 1.0).cos() * (2.0 * y).sin())
    });
    let mut s = solver.state_from(&t, &w).unwrap();
    let mut ke = s.kinetic_energy();
    let ke0 = ke;
    for n in 0..800 {
        s = solver.step(&s).unwrap();
        let next = s.kinetic_energy();
        assert!(next <= ke * (1.0 + 1e-12), "energy rose at step {n}: {ke} -> {next}");
        ke = next;
    }
    assert!(ke < 0.9 * ke0);
}

#[test]
fn below_onset_perturbations_decay() {
    let cfg = SimulationConfig::desk(150.0);
    let solver = RbcSolver::<f64>::new(&cfg).unwrap();
    let mut s = initial_condition::<f64>(&cfg).unwrap();
    let e0 = s.perturbation_energy(&cfg);
    s = solver.advance(s, 2000).unwrap();
    assert!(s.perturbation_energy(&cfg) * 10.0 <= e0);
}

#[test]
fn halving_dt_changes_fields_by_order_dt() {
    let flux = |dt: f64| {
        let mut cfg = SimulationConfig::desk(1e5);
        cfg.dt = dt;
        let solver = RbcSolver::<f64>::new(&cfg).unwrap();
        let s = solver
            .advance(initial_condition(&cfg).unwrap(), (20.0 / dt).round() as usize)
            .unwrap();
        convective_field(&s).to_flat()
    };
    let (a, b, c) = (flux(0.025), flux(0.0125), flux(0.00625));
    let (e1, e2) = (rel_l2(&a, &b), rel_l2(&b, &c));
    assert!(e1 <= 0.025, "dt change {e1}");
    assert!(e2 < 0.75 * e1, "no convergence: {e1} then {e2}");
}

#[test]
fn oversized_steps_blow_up() {
    let mut cfg = SimulationConfig::desk(1e5);
    cfg.dt = 0.5;
    cfg.noise_amplitude = 0.1;
    let solver = RbcSolver::<f64>::new(&cfg).unwrap();
    let mut s = initial_condition::<f64>(&cfg).unwrap();
    let mut outcome = Ok(());
    for _ in 0..200 {
        match solver.step(&s) {
            Ok(next) => s = next,
            Err(e) => {
                outcome = Err(e);
                break;
            }
        }
    }
    assert!(matches!(outcome, Err(DnsError::Blowup { .. })));
}

#[test]
fn short_episode_counts_and_round_trips() {
    let mut cfg = SimulationConfig::desk(1e5);
    cfg.episode_length = 10.0;
    let ep = simulate_episode::<f64>(&cfg).unwrap();
    assert_eq!(ep.len(), 10);
    let want: Vec<f64> = (101..=110).map(f64::from).collect();
    assert_eq!(ep.times(), &want[..]);
    assert_eq!(ep.snapshot(0).grid().shape(), (32, 48));

    let again = simulate_episode::<f64>(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.rbce"), dir.path().join("b.rbce"));
    write_episode(&ep, &p1).unwrap();
    write_episode(&again, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let back = read_episode::<f64>(&p1).unwrap();
    assert_eq!(back.snapshots(), ep.snapshots());
}

#[test]
fn f32_solver_tracks_f64() {
    let mut cfg = SimulationConfig::desk(1e5);
    cfg.noise_amplitude = 1e-2;
    let s64 = RbcSolver::<f64>::new(&cfg)
        .unwrap()
        .advance(initial_condition(&cfg).unwrap(), 200)
        .unwrap();
    let s32 = RbcSolver::<f32>::new(&cfg)
        .unwrap()
        .advance(initial_condition(&cfg).unwrap(), 200)
        .unwrap();
    let d = max_diff(&s64.temperature, &s32.temperature.cast());
    assert!(d < 1e-4, "f32 drift {d}");
}
