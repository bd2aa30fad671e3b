//! Coupled time integration: the window map taking a candidate
//! (velocity, configuration-density) pair to the solution of the two linear
//! Crank-Nicolson subsolves (with the density resolved exactly through
//! characteristics), the damped Picard iteration that drives it to a fixed
//! point within each window, run orchestration, and refinement sweeps.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::confspace::{kramers_stress, ApproxMaxwellian, ConfBasis, ConfQuadrature, Maxwellian, StressForm};
use crate::diagnostics::{self, DiagContext, EnergyReport};
use crate::galerkin::{
    assemble_fp_dynamics, assemble_fp_mass, assemble_velocity_system, polymer_number_density,
    PdfBasis, ScalarBasis, ScalarGridCache, SpatialGrid, VelocityBasis, VelocityGridCache,
};
use crate::model::{
    Forcing, InitialVelocity, MaterialLaws, MaxwellianMode, ProblemSetup,
};
use crate::transport::{CharMap, VelocityField, VelocityTrajectory};
use crate::truncation::CutoffFamily;
use crate::Error;

/// Controls of the damped Picard iteration over one time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointConfig {
    /// Absolute tolerance on the largest coefficient update.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Damping factor in `(0, 1]`; 1 is the undamped iteration.
    pub damping: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self { tolerance: 1e-12, max_iterations: 40, damping: 1.0 }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.tolerance > 0.0) {
            return Err(Error::config("fixed-point tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("fixed-point iteration needs at least one iteration"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::config("damping factor must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Current simulation state: time, the two coefficient vectors, the
/// committed velocity trajectory driving the flow map, and cached
/// grid fields.
pub struct SimState {
    pub time: f64,
    pub velocity: DVector<f64>,
    pub pdf: DVector<f64>,
    pub trajectory: VelocityTrajectory,
    /// Density at the grid points at the current time.
    pub rho_grid: Vec<f64>,
    /// Clamped polymer number density at the current time.
    pub varrho: Vec<f64>,
    /// Accumulated count of negative-density quadrature hits in the
    /// number-density clamp.
    pub clamp_count: usize,
    pub picard_iterations: usize,
    pub warnings: Vec<String>,
}

/// Output of one application of the window map.
pub struct ThetaOutput {
    pub velocity: DVector<f64>,
    pub pdf: DVector<f64>,
    pub rho_end: Vec<f64>,
    pub clamp_count: usize,
}

#[derive(Debug)]
pub struct StepInfo {
    pub iterations: usize,
    pub residual: f64,
}

/// A stored state snapshot.
pub struct Snapshot {
    pub time: f64,
    pub velocity: DVector<f64>,
    pub pdf: DVector<f64>,
    pub rho: Vec<f64>,
}

pub struct RunResult {
    pub snapshots: Vec<Snapshot>,
    pub reports: Vec<EnergyReport>,
    pub warnings: Vec<String>,
}

/// Velocity over one window: linear interpolation between two coefficient
/// vectors on the same basis.
struct WindowVelocity<'a> {
    basis: &'a VelocityBasis,
    t0: f64,
    t1: f64,
    c0: &'a DVector<f64>,
    c1: &'a DVector<f64>,
}

impl<'a> WindowVelocity<'a> {
    fn coeffs_at(&self, t: f64) -> DVector<f64> {
        let w = ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0);
        self.c0 * (1.0 - w) + self.c1 * w
    }
}

impl<'a> VelocityField for WindowVelocity<'a> {
    fn eval(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        self.basis.eval(&self.coeffs_at(t), x)
    }
    fn grad(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        self.basis.grad(&self.coeffs_at(t), x)
    }
}

/// All machinery of a configured run.
pub struct Simulation {
    setup: ProblemSetup,
    laws: MaterialLaws,
    vbasis: Arc<VelocityBasis>,
    grid: SpatialGrid,
    vcache: VelocityGridCache,
    xcache: ScalarGridCache,
    basis: PdfBasis,
    quad: ConfQuadrature,
    maxwellian: Maxwellian,
    /// Weighted-mass Maxwellian values at the nodes (equal to the exact
    /// values in exact mode).
    mm: Vec<f64>,
    cutoff: CutoffFamily,
    forcing_grid: Vec<[f64; 2]>,
}

impl Simulation {
    pub fn new(setup: ProblemSetup, laws: MaterialLaws) -> Result<Self, Error> {
        setup.validate()?;
        laws.validate()?;
        let torus = setup.torus;
        let vbasis = Arc::new(VelocityBasis::new(torus, setup.velocity_modes)?);
        let xbasis = ScalarBasis::new(torus, setup.pdf_x_modes)?;

        // anti-aliasing grid: four grid points per largest wavenumber
        let mut kmax = vbasis.max_wavenumber().max(xbasis.max_wavenumber());
        if let crate::model::InitialDensity::Sinusoidal { wave, .. } = &setup.rho0 {
            kmax = kmax.max(wave[0].abs()).max(wave[1].abs());
        }
        if let crate::model::InitialPdf::Perturbed { wave, .. } = &setup.psi0 {
            kmax = kmax.max(wave[0].abs()).max(wave[1].abs());
        }
        let n_grid = if setup.spatial_grid > 0 { setup.spatial_grid } else { (4 * kmax.max(2)) as usize };
        let grid = SpatialGrid::new(torus, n_grid)?;
        let vcache = vbasis.cache_on(&grid);
        let xcache = xbasis.cache_on(&grid);

        let radial = setup.radial_order.max(setup.conf_degree + 2);
        let angular = setup.angular_order.max(2 * setup.conf_degree + 2).max(4);
        let quad = ConfQuadrature::new(&setup.chain, radial, angular)?;
        let maxwellian = Maxwellian::new(&setup.chain, &quad)?;
        let mm = match setup.maxwellian {
            MaxwellianMode::Exact => maxwellian.values().to_vec(),
            MaxwellianMode::Approx { index } => ApproxMaxwellian::new(&maxwellian, index)?.values(),
        };
        let conf = ConfBasis::build(&quad, &mm, setup.conf_degree, 0)?;
        let basis = PdfBasis::new(xbasis, conf, setup.pdf_modes)?;
        let cutoff = CutoffFamily::new(setup.truncation_level)?;

        let forcing_grid = match &setup.forcing {
            Forcing::None => vec![[0.0; 2]; grid.len()],
            Forcing::Modes { coeffs } => {
                let mut c = DVector::zeros(vbasis.len());
                for mc in coeffs {
                    if mc.index >= vbasis.len() {
                        return Err(Error::config(format!(
                            "forcing mode index {} exceeds the velocity mode count {}",
                            mc.index,
                            vbasis.len()
                        )));
                    }
                    c[mc.index] = mc.value;
                }
                vcache.field(&c, grid.len())
            }
        };

        Ok(Self {
            setup,
            laws,
            vbasis,
            grid,
            vcache,
            xcache,
            basis,
            quad,
            maxwellian,
            mm,
            cutoff,
            forcing_grid,
        })
    }

    pub fn setup(&self) -> &ProblemSetup {
        &self.setup
    }

    pub fn laws(&self) -> &MaterialLaws {
        &self.laws
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn quadrature(&self) -> &ConfQuadrature {
        &self.quad
    }

    pub fn pdf_basis(&self) -> &PdfBasis {
        &self.basis
    }

    pub fn velocity_basis(&self) -> &VelocityBasis {
        &self.vbasis
    }

    pub fn diag_context(&self) -> DiagContext<'_> {
        DiagContext {
            grid: &self.grid,
            vcache: &self.vcache,
            xcache: &self.xcache,
            basis: &self.basis,
            quad: &self.quad,
            maxwellian: &self.maxwellian,
            mm: &self.mm,
            rouse: &self.setup.rouse,
            cutoff: &self.cutoff,
            laws: &self.laws,
            forcing: &self.forcing_grid,
        }
    }

    fn forced(&self) -> bool {
        !matches!(self.setup.forcing, Forcing::None)
    }

    /// Density on the grid at time `t`, evaluated through backward
    /// characteristics of the committed trajectory plus an optional current
    /// window `(c0, c1, t0, t1)`.
    fn density_grid(
        &self,
        traj: &VelocityTrajectory,
        window: Option<(&DVector<f64>, &DVector<f64>, f64, f64)>,
        t: f64,
    ) -> Vec<f64> {
        if self.setup.rho0.is_constant() {
            let v = self.setup.rho0.eval([0.0, 0.0], &self.setup.torus);
            return vec![v; self.grid.len()];
        }
        self.grid
            .points
            .iter()
            .map(|&x| {
                let foot = self.backtrack(traj, window, x, t);
                self.setup.rho0.eval(self.setup.torus.wrap(foot), &self.setup.torus)
            })
            .collect()
    }

    /// Backward foot `X(x, t; 0)`, integrated window by window so the
    /// integrator never crosses a kink of the piecewise-linear-in-time
    /// velocity.
    fn backtrack(
        &self,
        traj: &VelocityTrajectory,
        window: Option<(&DVector<f64>, &DVector<f64>, f64, f64)>,
        x: [f64; 2],
        t: f64,
    ) -> [f64; 2] {
        let substeps = self.setup.rk4_substeps as f64;
        let mut pos = x;
        let mut now = t;
        if let Some((c0, c1, t0, t1)) = window {
            if now > t0 + 1e-14 {
                let field = WindowVelocity { basis: &self.vbasis, t0, t1, c0, c1 };
                let map = CharMap::new(&field, ((now - t0) / substeps).max(1e-300))
                    .expect("positive substep");
                pos = map.flow(pos, now, t0);
                now = t0;
            }
        }
        let times = traj.times();
        if times.is_empty() {
            return pos;
        }
        // walk committed segments downwards
        let mut hi = times.partition_point(|&s| s < now - 1e-14);
        while hi > 0 && now > times[0] + 1e-14 {
            let lo_t = times[hi - 1];
            let map = CharMap::new(traj, ((now - lo_t) / substeps).max(1e-300))
                .expect("positive substep");
            pos = map.flow(pos, now, lo_t);
            now = lo_t;
            hi -= 1;
        }
        pos
    }

    /// Worst `|det grad X(x, t; 0) - 1|` over a few probe points.
    fn liouville_probe(&self, traj: &VelocityTrajectory, t: f64) -> f64 {
        if t <= 0.0 || traj.len() < 2 {
            return 0.0;
        }
        let substeps = self.setup.rk4_substeps as f64;
        let l = self.setup.torus.lengths;
        let probes = [
            [0.25 * l[0], 0.25 * l[1]],
            [0.75 * l[0], 0.25 * l[1]],
            [0.25 * l[0], 0.75 * l[1]],
            [0.75 * l[0], 0.75 * l[1]],
        ];
        let times = traj.times();
        let mut worst = 0.0f64;
        for &p in &probes {
            let mut pos = p;
            let mut jac = [[1.0, 0.0], [0.0, 1.0]];
            let mut now = t;
            let mut hi = times.partition_point(|&s| s < now - 1e-14);
            while hi > 0 && now > times[0] + 1e-14 {
                let lo_t = times[hi - 1];
                let map = CharMap::new(traj, ((now - lo_t) / substeps).max(1e-300))
                    .expect("positive substep");
                let (q, j) = map.flow_with_jacobian(pos, now, lo_t);
                // chain rule: grad of the composition
                let mut next = [[0.0; 2]; 2];
                for a in 0..2 {
                    for b in 0..2 {
                        next[a][b] = j[a][0] * jac[0][b] + j[a][1] * jac[1][b];
                    }
                }
                pos = q;
                jac = next;
                now = lo_t;
                hi -= 1;
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            worst = worst.max((det - 1.0).abs());
        }
        worst
    }

    /// Project the configured initial data onto the bases.
    pub fn initial_state(&self) -> Result<SimState, Error> {
        let gpts = self.grid.len();
        let rho_grid = self.density_grid(&VelocityTrajectory::new(self.vbasis.clone()), None, 0.0);

        let m = self.vbasis.len();
        let velocity = match &self.setup.v0 {
            InitialVelocity::Zero => DVector::zeros(m),
            InitialVelocity::Modes { coeffs } => {
                let mut c = DVector::zeros(m);
                for mc in coeffs {
                    if mc.index >= m {
                        return Err(Error::config(format!(
                            "initial velocity mode index {} exceeds the mode count {m}",
                            mc.index
                        )));
                    }
                    c[mc.index] = mc.value;
                }
                c
            }
            InitialVelocity::Random { amplitude, count } => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.setup.seed);
                let n = (*count).min(m);
                let mut c = DVector::zeros(m);
                for i in 0..n {
                    c[i] = rng.gen_range(-1.0..1.0);
                }
                let norm = c.norm();
                if norm > 0.0 {
                    c *= amplitude / norm;
                }
                c
            }
            InitialVelocity::TaylorGreen { amplitude } => {
                let l = self.setup.torus.lengths;
                let field: Vec<[f64; 2]> = self
                    .grid
                    .points
                    .iter()
                    .map(|&x| {
                        let (a, b) = (std::f64::consts::TAU * x[0] / l[0], std::f64::consts::TAU * x[1] / l[1]);
                        [amplitude * a.sin() * b.cos(), -amplitude * a.cos() * b.sin()]
                    })
                    .collect();
                let mut c = DVector::zeros(m);
                for i in 0..m {
                    let mut acc = 0.0;
                    for g in 0..gpts {
                        let w = self.vcache.values[i * gpts + g];
                        acc += self.grid.weight * (field[g][0] * w[0] + field[g][1] * w[1]);
                    }
                    c[i] = acc;
                }
                c
            }
        };

        // initial configuration density: optional normalization to unit
        // weighted mass, then truncation, then projection
        let nq = self.quad.len();
        let zeta0: Vec<f64> = rho_grid.iter().map(|&r| self.laws.zeta(r)).collect();
        let mut scale = 1.0;
        if self.setup.normalize_pdf {
            let mut mass = 0.0;
            for g in 0..gpts {
                let x = self.grid.points[g];
                for a in 0..nq {
                    let psi = self.setup.psi0.eval(x, self.quad.node(a), &self.setup.chain, &self.setup.torus);
                    mass += self.grid.weight
                        * self.quad.plain_weight(a)
                        * self.maxwellian.values()[a]
                        * zeta0[g]
                        * psi;
                }
            }
            if !(mass > 0.0) {
                return Err(Error::config("initial configuration density has nonpositive mass"));
            }
            scale = 1.0 / mass;
        }
        let n = self.basis.len();
        let mut pdf = DVector::zeros(n);
        for g in 0..gpts {
            let x = self.grid.points[g];
            for a in 0..nq {
                let psi = scale
                    * self.setup.psi0.eval(x, self.quad.node(a), &self.setup.chain, &self.setup.torus);
                let truncated = self.cutoff.trunc(psi);
                let w = self.grid.weight * self.quad.plain_weight(a) * self.mm[a] * truncated;
                if w == 0.0 {
                    continue;
                }
                for i in 0..n {
                    let (ai, bi) = self.basis.pair(i);
                    pdf[i] += w
                        * self.xcache.values[ai * gpts + g]
                        * self.basis.conf.value(bi, nq, a);
                }
            }
        }

        let xi = self.basis.values_on(&self.xcache, &self.quad, &pdf, gpts);
        let (varrho, clamp) = polymer_number_density(&self.quad, &self.mm, &zeta0, &xi);

        let mut trajectory = VelocityTrajectory::new(self.vbasis.clone());
        trajectory.push(0.0, velocity.clone());

        Ok(SimState {
            time: 0.0,
            velocity,
            pdf,
            trajectory,
            rho_grid,
            varrho,
            clamp_count: clamp,
            picard_iterations: 0,
            warnings: Vec::new(),
        })
    }

    /// One application of the window map: given candidate end-of-window
    /// coefficients, resolve the density along the window, build the
    /// truncated stress and the clamped polymer number density from the
    /// candidate, and solve the two linear Crank-Nicolson systems.
    pub fn theta_map(
        &self,
        state: &SimState,
        u_end: &DVector<f64>,
        xi_end: &DVector<f64>,
        dt: f64,
    ) -> Result<ThetaOutput, Error> {
        if !(dt > 0.0) {
            return Err(Error::domain("window length must be positive"));
        }
        let gpts = self.grid.len();
        let nq = self.quad.len();
        let t0 = state.time;
        let t_mid = t0 + 0.5 * dt;
        let t_end = t0 + dt;

        let window = (u_end, t0, t_end);
        let rho_mid =
            self.density_grid(&state.trajectory, Some((&state.velocity, window.0, window.1, window.2)), t_mid);
        let rho_end =
            self.density_grid(&state.trajectory, Some((&state.velocity, window.0, window.1, window.2)), t_end);

        let zeta_mid: Vec<f64> = rho_mid.iter().map(|&r| self.laws.zeta(r)).collect();
        let zeta_end: Vec<f64> = rho_end.iter().map(|&r| self.laws.zeta(r)).collect();
        let zeta_start: Vec<f64> = state.rho_grid.iter().map(|&r| self.laws.zeta(r)).collect();

        let u_mid_coeffs = (&state.velocity + u_end) * 0.5;
        let xi_mid_coeffs = (&state.pdf + xi_end) * 0.5;
        let u_mid = self.vcache.field(&u_mid_coeffs, gpts);
        let grad_u_mid = self.vcache.field_grad(&u_mid_coeffs, gpts);
        let xi_mid = self.basis.values_on(&self.xcache, &self.quad, &xi_mid_coeffs, gpts);

        // polymer number density (clamped) and the truncated stress from the
        // candidate configuration density
        let (varrho_mid, clamp_count) =
            polymer_number_density(&self.quad, &self.mm, &zeta_mid, &xi_mid);
        let mut tau_mid = vec![[[0.0; 2]; 2]; gpts];
        for g in 0..gpts {
            let (tau, _) = kramers_stress(
                &self.quad,
                &self.maxwellian,
                &self.cutoff,
                zeta_mid[g],
                self.laws.k_stress,
                &xi_mid[g * nq..(g + 1) * nq],
                None,
                StressForm::Divergence,
            )?;
            for a in 0..2 {
                for b in 0..2 {
                    tau_mid[g][a][b] = tau[(a, b)];
                }
            }
        }
        let mu_mid: Vec<f64> =
            (0..gpts).map(|g| self.laws.mu(rho_mid[g], varrho_mid[g])).collect();

        // velocity subsolve
        let blocks = assemble_velocity_system(
            &self.grid,
            &self.vcache,
            &rho_mid,
            &u_mid,
            &mu_mid,
            &tau_mid,
            &self.forcing_grid,
        )?;
        let m = self.vbasis.len();
        let lhs = &blocks.mass - &blocks.dynamics * (0.5 * dt);
        let rhs = (&blocks.mass + &blocks.dynamics * (0.5 * dt)) * &state.velocity
            + &blocks.load * dt;
        let velocity = lhs.clone().lu().solve(&rhs).ok_or_else(|| {
            let eig = blocks.mass.clone().symmetric_eigen();
            Error::Singular(format!(
                "velocity mass system is singular (mass eigenvalues in [{:.3e}, {:.3e}])",
                eig.eigenvalues.min(),
                eig.eigenvalues.max()
            ))
        })?;
        debug_assert_eq!(velocity.len(), m);

        // configuration subsolve, conservative in the weighted mass
        let n_start = assemble_fp_mass(&self.grid, &self.xcache, &self.basis, &zeta_start)?;
        let n_end = assemble_fp_mass(&self.grid, &self.xcache, &self.basis, &zeta_end)?;
        let fp = assemble_fp_dynamics(
            &self.grid,
            &self.xcache,
            &self.basis,
            &self.quad,
            self.maxwellian.values(),
            &self.mm,
            &self.setup.rouse,
            &self.cutoff,
            &zeta_mid,
            &u_mid,
            &grad_u_mid,
            &xi_mid,
        )?;
        let lhs = n_end - &fp.dynamics * (0.5 * dt);
        let rhs = (n_start + &fp.dynamics * (0.5 * dt)) * &state.pdf + &fp.drive * dt;
        let pdf = lhs.clone().lu().solve(&rhs).ok_or_else(|| {
            Error::Singular("configuration mass system is singular".into())
        })?;

        Ok(ThetaOutput { velocity, pdf, rho_end, clamp_count })
    }

    /// Advance one window by damped Picard iteration of the window map.
    pub fn step(&self, state: &mut SimState) -> Result<StepInfo, Error> {
        let dt = self.setup.dt;
        let fp = self.setup.fixed_point;
        let mut u_end = state.velocity.clone();
        let mut xi_end = state.pdf.clone();
        let mut prev_residual = f64::INFINITY;
        let mut committed: Option<ThetaOutput> = None;
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        for it in 1..=fp.max_iterations {
            let theta = self.theta_map(state, &u_end, &xi_end, dt)?;
            let new_u = &u_end * (1.0 - fp.damping) + &theta.velocity * fp.damping;
            let new_xi = &xi_end * (1.0 - fp.damping) + &theta.pdf * fp.damping;
            residual = (&new_u - &u_end).amax().max((&new_xi - &xi_end).amax());
            if fp.damping == 1.0 && residual > prev_residual && residual > fp.tolerance {
                let msg = format!(
                    "fixed-point residual rose from {prev_residual:.3e} to {residual:.3e} \
                     at t = {:.6}, iteration {it}",
                    state.time
                );
                log::warn!("{msg}");
                state.warnings.push(msg);
            }
            prev_residual = residual;
            u_end = new_u;
            xi_end = new_xi;
            iterations = it;
            committed = Some(theta);
            if residual <= fp.tolerance {
                break;
            }
            if it == fp.max_iterations {
                return Err(Error::FixedPoint { iterations: it, residual });
            }
        }
        let theta = committed.expect("at least one iteration ran");

        state.time += dt;
        state.velocity = u_end;
        state.pdf = xi_end;
        state.trajectory.push(state.time, state.velocity.clone());
        state.rho_grid = self.density_grid(&state.trajectory, None, state.time);
        let zeta: Vec<f64> = state.rho_grid.iter().map(|&r| self.laws.zeta(r)).collect();
        let xi = self.basis.values_on(&self.xcache, &self.quad, &state.pdf, self.grid.len());
        let (varrho, clamp) = polymer_number_density(&self.quad, &self.mm, &zeta, &xi);
        state.varrho = varrho;
        state.clamp_count += clamp + theta.clamp_count;
        state.picard_iterations = iterations;
        Ok(StepInfo { iterations, residual })
    }

    fn report(&self, state: &SimState, liouville: f64) -> EnergyReport {
        diagnostics::energy(
            &self.diag_context(),
            state.time,
            &state.velocity,
            &state.pdf,
            &state.rho_grid,
            state.picard_iterations,
            liouville,
        )
    }

    /// Advance from 0 to the final time, producing snapshots at the given
    /// cadence (in steps) and an energy report per step.
    pub fn run_with_cadence(&self, cadence: usize) -> Result<RunResult, Error> {
        let dt = self.setup.dt;
        let t_final = self.setup.t_final;
        let steps_f = t_final / dt;
        let steps = steps_f.round() as usize;
        if (steps_f - steps as f64).abs() > 1e-6 * steps_f.max(1.0) {
            return Err(Error::config(format!(
                "final time {t_final} is not an integer number of steps of {dt}"
            )));
        }
        let cadence = cadence.max(1);
        let mut state = self.initial_state()?;
        let mut reports = vec![self.report(&state, 0.0)];
        let mut snapshots = vec![Snapshot {
            time: 0.0,
            velocity: state.velocity.clone(),
            pdf: state.pdf.clone(),
            rho: state.rho_grid.clone(),
        }];
        for k in 1..=steps {
            self.step(&mut state)?;
            let liouville = if self.setup.rho0.is_constant() {
                0.0
            } else {
                self.liouville_probe(&state.trajectory, state.time)
            };
            reports.push(self.report(&state, liouville));
            if k % cadence == 0 || k == steps {
                snapshots.push(Snapshot {
                    time: state.time,
                    velocity: state.velocity.clone(),
                    pdf: state.pdf.clone(),
                    rho: state.rho_grid.clone(),
                });
            }
        }
        diagnostics::accumulate_residuals(&mut reports);
        Ok(RunResult { snapshots, reports, warnings: std::mem::take(&mut state.warnings) })
    }

    pub fn run(&self) -> Result<RunResult, Error> {
        self.run_with_cadence(1)
    }

    pub fn is_forced(&self) -> bool {
        self.forced()
    }
}

/// Refinement ladders for the convergence sweep; empty axes are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepLadders {
    pub dt: Vec<f64>,
    pub pdf_modes: Vec<usize>,
    pub velocity_modes: Vec<usize>,
    pub truncation: Vec<u32>,
    pub conf_degree: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub level_lo: f64,
    pub level_hi: f64,
    /// `L^2`-in-time, `L^2`-in-space distance between the two runs.
    pub distance: f64,
    /// Previous pair distance over this pair distance (NaN on the first pair).
    pub ratio: f64,
}

/// Distance between two runs on nested bases: coefficient vectors are padded
/// and compared in the orthonormal-basis `l^2` norm, integrated in time with
/// the trapezoid rule over the common snapshot times.
fn run_distance(a: &RunResult, b: &RunResult) -> f64 {
    let mut common: Vec<(usize, usize)> = Vec::new();
    let mut j = 0usize;
    for (i, sa) in a.snapshots.iter().enumerate() {
        while j < b.snapshots.len() && b.snapshots[j].time < sa.time - 1e-9 {
            j += 1;
        }
        if j < b.snapshots.len() && (b.snapshots[j].time - sa.time).abs() <= 1e-9 {
            common.push((i, j));
        }
    }
    if common.len() < 2 {
        return f64::NAN;
    }
    let d2 = |i: usize, j: usize| -> f64 {
        let (sa, sb) = (&a.snapshots[i], &b.snapshots[j]);
        let mut acc = 0.0;
        let nv = sa.velocity.len().max(sb.velocity.len());
        for k in 0..nv {
            let va = if k < sa.velocity.len() { sa.velocity[k] } else { 0.0 };
            let vb = if k < sb.velocity.len() { sb.velocity[k] } else { 0.0 };
            acc += (va - vb) * (va - vb);
        }
        let np = sa.pdf.len().max(sb.pdf.len());
        for k in 0..np {
            let pa = if k < sa.pdf.len() { sa.pdf[k] } else { 0.0 };
            let pb = if k < sb.pdf.len() { sb.pdf[k] } else { 0.0 };
            acc += (pa - pb) * (pa - pb);
        }
        acc
    };
    let mut acc = 0.0;
    for w in common.windows(2) {
        let dt = a.snapshots[w[1].0].time - a.snapshots[w[0].0].time;
        acc += 0.5 * dt * (d2(w[0].0, w[0].1) + d2(w[1].0, w[1].1));
    }
    acc.sqrt()
}

/// Run every level of every ladder and report consecutive-level distances
/// and observed convergence ratios.
pub fn level_sweep(
    setup: &ProblemSetup,
    laws: &MaterialLaws,
    ladders: &SweepLadders,
) -> Result<Vec<SweepRow>, Error> {
    let mut rows = Vec::new();
    let axes: Vec<(&str, Vec<f64>)> = vec![
        ("dt", ladders.dt.clone()),
        ("pdf_modes", ladders.pdf_modes.iter().map(|&v| v as f64).collect()),
        ("velocity_modes", ladders.velocity_modes.iter().map(|&v| v as f64).collect()),
        ("truncation", ladders.truncation.iter().map(|&v| v as f64).collect()),
        ("conf_degree", ladders.conf_degree.iter().map(|&v| v as f64).collect()),
    ];
    for (axis, levels) in axes {
        if levels.len() < 2 {
            continue;
        }
        let mut results = Vec::new();
        for &level in &levels {
            let mut s = setup.clone();
            match axis {
                "dt" => s.dt = level,
                "pdf_modes" => s.pdf_modes = level as usize,
                "velocity_modes" => s.velocity_modes = level as usize,
                "truncation" => s.truncation_level = level as u32,
                "conf_degree" => s.conf_degree = level as usize,
                _ => unreachable!(),
            }
            let sim = Simulation::new(s, laws.clone())?;
            results.push(sim.run()?);
        }
        let mut prev_distance = f64::NAN;
        for i in 0..levels.len() - 1 {
            let distance = run_distance(&results[i], &results[i + 1]);
            let ratio = if prev_distance.is_finite() && distance > 0.0 {
                prev_distance / distance
            } else {
                f64::NAN
            };
            rows.push(SweepRow {
                axis: axis.to_string(),
                level_lo: levels[i],
                level_hi: levels[i + 1],
                distance,
                ratio,
            });
            prev_distance = distance;
        }
    }
    Ok(rows)
}
