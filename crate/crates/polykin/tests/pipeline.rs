//! End-to-end checks of monitored quantities on full simulations: analytic
//! energy values, stress-form consistency on evolved states, the
//! configuration-diffusion coercivity sandwich, normalization, and the
//! stability of the time-regularity diagnostic.

mod common;

use common::{coupled_setup, equilibrium_setup, reference_setup};
use polykin::diagnostics::{energy, nikolskii_norm, stress_form_consistency};
use polykin::model::{InitialPdf, InitialVelocity, ModeCoeff};
use polykin::solver::Simulation;

#[test]
fn kinetic_energy_of_single_mode_is_half_rho_a_squared() {
    let (mut setup, laws) = equilibrium_setup(0.01, 0.0);
    let a = 0.37;
    setup.v0 = InitialVelocity::Modes { coeffs: vec![ModeCoeff { index: 2, value: a }] };
    let sim = Simulation::new(setup, laws).expect("simulation");
    let state = sim.initial_state().expect("state");
    let report = energy(
        &sim.diag_context(),
        0.0,
        &state.velocity,
        &state.pdf,
        &state.rho_grid,
        0,
        0.0,
    );
    let expected = 0.5 * 1.0 * a * a;
    assert!(
        (report.kinetic - expected).abs() <= 1e-12 * expected,
        "kinetic {} vs {expected}",
        report.kinetic
    );
}

#[test]
fn entropy_of_vanishing_density_is_k_zeta_volume() {
    let (mut setup, laws) = equilibrium_setup(0.01, 0.0);
    setup.psi0 = InitialPdf::Uniform { value: 0.0 };
    let volume = setup.torus.volume();
    let sim = Simulation::new(setup, laws).expect("simulation");
    let state = sim.initial_state().expect("state");
    let report = energy(
        &sim.diag_context(),
        0.0,
        &state.velocity,
        &state.pdf,
        &state.rho_grid,
        0,
        0.0,
    );
    // F(0) = 1, so entropy = k |Omega| zeta
    assert!(
        (report.entropy - volume).abs() <= 1e-9,
        "entropy {} vs {volume}",
        report.entropy
    );
    assert_eq!(report.kinetic, 0.0);
    assert!(report.x_dissipation == 0.0 && report.q_dissipation == 0.0);
}

#[test]
fn stress_forms_agree_on_evolved_states() {
    // equilibrium: all forms vanish
    let (setup, laws) = equilibrium_setup(0.01, 0.0);
    let sim = Simulation::new(setup, laws).expect("simulation");
    let state = sim.initial_state().expect("state");
    let dev = stress_form_consistency(&sim.diag_context(), &state.pdf, &state.rho_grid)
        .expect("consistency");
    assert!(dev <= 1e-10, "equilibrium deviation {dev}");

    // an evolved coupled state: the basis functions are polynomials inside
    // the truncation range, so the three quadratures agree to rounding
    let (setup, laws) = coupled_setup(0.01, 0.1);
    let sim = Simulation::new(setup, laws).expect("simulation");
    let result = sim.run().expect("run");
    let last = result.snapshots.last().expect("snapshot");
    let dev = stress_form_consistency(&sim.diag_context(), &last.pdf, &last.rho)
        .expect("consistency");
    assert!(dev <= 1e-8, "evolved-state deviation {dev}");
}

#[test]
fn q_dissipation_satisfies_the_coercivity_sandwich() {
    let (setup, laws) = coupled_setup(0.01, 0.05);
    let sim = Simulation::new(setup, laws).expect("simulation");
    let result = sim.run().expect("run");
    let last = result.snapshots.last().expect("snapshot");
    let ctx = sim.diag_context();
    let report = energy(&ctx, last.time, &last.velocity, &last.pdf, &last.rho, 0, 0.0);

    // recompute the unweighted square-root gradient integral
    let gpts = ctx.grid.len();
    let nq = ctx.quad.len();
    let cd = ctx.quad.conf_dim();
    let xcache = ctx.basis.xbasis.cache_on(ctx.grid);
    let field = ctx.basis.field_on(&xcache, ctx.quad, &last.pdf, gpts);
    let mut plain = 0.0;
    for g in 0..gpts {
        for a in 0..nq {
            let psi = field.value(g, a);
            if psi <= 1e-12 {
                continue;
            }
            let gq = field.grad_q(g, a);
            let mut norm2 = 0.0;
            for i in 0..cd {
                norm2 += gq[i] * gq[i];
            }
            plain += ctx.grid.weight
                * ctx.quad.plain_weight(a)
                * ctx.maxwellian.values()[a]
                * norm2
                / (4.0 * psi);
        }
    }
    let (c1, c2) = ctx.rouse.coercivity_bounds();
    let k = ctx.laws.k_stress;
    let lower = 4.0 * k * c1 * plain;
    let upper = 4.0 * k * c2 * plain;
    assert!(
        report.q_dissipation >= lower - 1e-12 && report.q_dissipation <= upper + 1e-12,
        "sandwich violated: {lower} <= {} <= {upper}",
        report.q_dissipation
    );
    assert!(report.q_dissipation >= -1e-12 && report.x_dissipation >= -1e-12);
}

#[test]
fn entropy_dominates_the_weighted_positive_mass() {
    // F(s) >= s pointwise gives entropy >= k zeta_min int M [psi]_+
    let (setup, laws) = coupled_setup(0.01, 0.05);
    let zeta_min = laws.zeta_min;
    let k = laws.k_stress;
    let sim = Simulation::new(setup, laws).expect("simulation");
    let result = sim.run().expect("run");
    let ctx = sim.diag_context();
    let xcache = ctx.basis.xbasis.cache_on(ctx.grid);
    for snap in &result.snapshots {
        let report = energy(&ctx, snap.time, &snap.velocity, &snap.pdf, &snap.rho, 0, 0.0);
        let field = ctx.basis.field_on(&xcache, ctx.quad, &snap.pdf, ctx.grid.len());
        let mut positive_mass = 0.0;
        for g in 0..ctx.grid.len() {
            for a in 0..ctx.quad.len() {
                positive_mass += ctx.grid.weight
                    * ctx.quad.plain_weight(a)
                    * ctx.maxwellian.values()[a]
                    * field.value(g, a).max(0.0);
            }
        }
        assert!(
            report.entropy >= k * zeta_min * positive_mass - 1e-10,
            "entropy {} below k zeta_min mass {}",
            report.entropy,
            k * zeta_min * positive_mass
        );
    }
}

#[test]
fn cancellation_gap_stays_at_quadrature_level() {
    let (setup, laws) = coupled_setup(0.01, 0.1);
    let sim = Simulation::new(setup, laws).expect("simulation");
    let result = sim.run().expect("run");
    for r in &result.reports {
        assert!(r.cancellation_gap <= 1e-8, "gap {} at t = {}", r.cancellation_gap, r.time);
    }
}

#[test]
fn normalization_scales_initial_mass_to_one() {
    let (mut setup, laws) = reference_setup(0.01, 0.0);
    setup.psi0 = InitialPdf::Uniform { value: 3.7 };
    setup.normalize_pdf = true;
    let sim = Simulation::new(setup, laws).expect("simulation");
    let state = sim.initial_state().expect("state");
    let report = energy(
        &sim.diag_context(),
        0.0,
        &state.velocity,
        &state.pdf,
        &state.rho_grid,
        0,
        0.0,
    );
    assert!(
        (report.pdf_mass - 1.0).abs() <= 1e-10,
        "normalized weighted mass {}",
        report.pdf_mass
    );
}

#[test]
fn nikolskii_is_stable_under_snapshot_refinement() {
    // the diagnostic changes by at most a few percent when the snapshot
    // density doubles on a smooth series
    let gamma = 0.125;
    let value = |n: usize| -> f64 {
        let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let fields: Vec<Vec<f64>> =
            times.iter().map(|&t| vec![(2.0 * t).sin(), (3.0 * t).cos()]).collect();
        nikolskii_norm(&times, &fields, &[1.0, 1.0], gamma).expect("seminorm")
    };
    let coarse = value(51);
    let fine = value(101);
    let rel = (coarse - fine).abs() / fine;
    assert!(rel <= 0.05, "seminorm moved {:.2}% under refinement", 100.0 * rel);
}

#[test]
fn warnings_surface_fixed_point_monotonicity_breaks() {
    // sanity: the reference run converges monotonically, producing no
    // warnings
    let (setup, laws) = reference_setup(5e-3, 0.05);
    let sim = Simulation::new(setup, laws).expect("simulation");
    let result = sim.run().expect("run");
    assert!(result.warnings.is_empty(), "unexpected warnings: {:?}", result.warnings);
}
