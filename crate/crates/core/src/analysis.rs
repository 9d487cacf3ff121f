//! Turnpike verdicts from simulation and Riccati output, and randomized checks of two matrix lemmas.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MflqError, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{self, HatCoefficients, ProblemData};
use crate::riccati::{self, ArePair, ProfileRow};
use crate::simulate::{self, CoupledOutcome, SimulationConfig};
use crate::static_opt::{self, StaticReport, StaticSolution};

pub const LOG_FLOOR: f64 = 1e-14;
pub const MIN_WINDOW_NODES: usize = 5;
pub const LEFT_WINDOW: (f64, f64) = (0.05, 0.45);
pub const RIGHT_WINDOW: (f64, f64) = (0.55, 0.95);
pub const ENVELOPE_SLACK: f64 = 3.0;
pub const ENVELOPE_COVERAGE: f64 = 0.95;
pub const CONTRACTION_TOL: f64 = 1e-10;
pub const BLOCK_PSD_TOL: f64 = 1e-10;
pub const KKT_TOL: f64 = 1e-10;
pub const JENSEN_TOL: f64 = 1e-12;
pub const NODE_PSD_TOL: f64 = 1e-10;
pub const VALUE_TOL: f64 = 0.1;
pub const QUADRATURE_MARGIN: f64 = 0.02;
pub const BOUNDARY_OFFSET: f64 = 0.5;
pub const MIDPOINT_FACTOR: f64 = 5.0;

/// Amplitude and rate of a fitted exponential K e^{−λx}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub K: f64,
    pub lambda: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
}

/// Least squares of ln y against x over the nodes whose abscissa lies in `window`.
///
/// Values are floored at [`LOG_FLOOR`]; floored nodes enter the fit but not R².
pub fn fit_exponential(xs: &[f64], ys: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if xs.len() != ys.len() {
        return Err(MflqError::EnsembleMismatch(
            "abscissae and values differ in length".into(),
        ));
    }
    let mut pts = Vec::new();
    for (&x, &y) in xs.iter().zip(ys) {
        if x < window.0 - 1e-12 || x > window.1 + 1e-12 {
            continue;
        }
        if !y.is_finite() || y < 0.0 {
            return Err(MflqError::Config(format!(
                "series must be finite and nonnegative, got {y}"
            )));
        }
        pts.push((x, y.max(LOG_FLOOR).ln(), y < LOG_FLOOR));
    }
    if pts.len() < MIN_WINDOW_NODES {
        return Err(MflqError::WindowTooSparse(format!(
            "{} nodes in [{}, {}], need {MIN_WINDOW_NODES}",
            pts.len(),
            window.0,
            window.1
        )));
    }
    let nf = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;

    let kept: Vec<&(f64, f64, bool)> = pts.iter().filter(|p| !p.2).collect();
    let r_squared = if kept.is_empty() {
        0.0
    } else {
        let ky = kept.iter().map(|p| p.1).sum::<f64>() / kept.len() as f64;
        let ss_tot: f64 = kept.iter().map(|p| (p.1 - ky).powi(2)).sum();
        let ss_res: f64 = kept.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        if ss_tot > 0.0 {
            (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
        } else {
            0.0
        }
    };
    Ok(DecayFit {
        K: intercept.exp(),
        lambda: -slope,
        r_squared,
        window,
    })
}

/// Left fit against t on [0.05T, 0.45T], right fit against T − t on [0.55T, 0.95T].
pub fn fit_turnpike_decay(mesh: &[f64], series: &[f64], T: f64) -> Result<(DecayFit, DecayFit)> {
    if !(T > 0.0) {
        return Err(MflqError::Config("horizon must be positive".into()));
    }
    let (l0, l1) = (LEFT_WINDOW.0 * T, LEFT_WINDOW.1 * T);
    let (r0, r1) = (RIGHT_WINDOW.0 * T, RIGHT_WINDOW.1 * T);
    let left = fit_exponential(mesh, series, (l0, l1))?;
    // Right branch: select by t, regress against T − t.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &g) in mesh.iter().zip(series) {
        if t >= r0 - 1e-12 && t <= r1 + 1e-12 {
            xs.push(T - t);
            ys.push(g);
        }
    }
    let mut right = fit_exponential(&xs, &ys, (T - r1, T - r0))?;
    right.window = (r0, r1);
    Ok((left, right))
}

/// Fraction of nodes where g(t) ≤ slack·K̂(e^{−λ̂t} + e^{−λ̂(T−t)}) with K̂ the larger and λ̂ the smaller fitted value.
pub fn envelope_coverage(mesh: &[f64], series: &[f64], left: &DecayFit, right: &DecayFit, T: f64, slack: f64) -> f64 {
    let k = slack * left.K.max(right.K);
    let lam = left.lambda.min(right.lambda);
    let hits = mesh
        .iter()
        .zip(series)
        .filter(|(&t, &g)| g <= k * ((-lam * t).exp() + (-lam * (T - t)).exp()))
        .count();
    hits as f64 / mesh.len().max(1) as f64
}

/// (1/T)∫₀ᵀ g dt by the trapezoid rule on the given mesh.
pub fn integral_turnpike(mesh: &[f64], series: &[f64]) -> f64 {
    if mesh.len() < 2 {
        return series.first().copied().unwrap_or(0.0);
    }
    let T = mesh[mesh.len() - 1] - mesh[0];
    let integral: f64 = mesh
        .windows(2)
        .zip(series.windows(2))
        .map(|(t, g)| 0.5 * (t[1] - t[0]) * (g[0] + g[1]))
        .sum();
    integral / T
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueRow {
    pub T: f64,
    pub estimate_over_T: f64,
    pub standard_error_over_T: f64,
    pub V: f64,
    pub difference: f64,
}

/// Runs Riccati, static and simulation stages for every horizon and compares V_T/T with V.
pub fn value_convergence(
    problem: &ProblemData,
    x0: &Vector,
    horizons: &[f64],
    config: &SimulationConfig,
) -> Result<Vec<ValueRow>> {
    if problem.is_trivial() {
        return Ok(horizons
            .iter()
            .map(|&T| ValueRow {
                T,
                estimate_over_T: 0.0,
                standard_error_over_T: 0.0,
                V: 0.0,
                difference: 0.0,
            })
            .collect());
    }
    let are = riccati::solve_are(problem)?;
    let stat = static_opt::solve_static(problem, &are.P)?;
    horizons
        .par_iter()
        .map(|&T| {
            let cfg = SimulationConfig { T, ..*config };
            let path = riccati::integrate_finite_horizon(problem, T, cfg.steps()?)?;
            let path = riccati::integrate_offsets(problem, &are, &path, &stat.lambda_star, &stat.sigma_star)?;
            let stats = simulate::simulate_optimal_stats(problem, &path, &stat, x0, &cfg)?;
            let cost = stats.cost_estimate.expect("optimal ensemble carries a cost");
            Ok(ValueRow {
                T,
                estimate_over_T: cost.mean / T,
                standard_error_over_T: cost.standard_error / T,
                V: stat.V,
                difference: cost.mean / T - stat.V,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueVerdict {
    pub strictly_decreasing: bool,
    pub final_within_tolerance: bool,
    pub passed: bool,
}

/// |V_T/T − V| strictly decreasing, and at the last horizon ≤ 0.1 + 3 SE + 2% of |V|.
pub fn value_verdict(rows: &[ValueRow]) -> ValueVerdict {
    let strictly_decreasing = rows.windows(2).all(|w| w[1].difference.abs() < w[0].difference.abs());
    let final_within_tolerance = rows.last().is_some_and(|r| {
        r.difference.abs() <= VALUE_TOL + 3.0 * r.standard_error_over_T + QUADRATURE_MARGIN * r.V.abs()
    });
    ValueVerdict {
        strictly_decreasing,
        final_within_tolerance,
        passed: strictly_decreasing && final_within_tolerance,
    }
}

pub fn value_csv(rows: &[ValueRow]) -> String {
    let mut s = String::from("T,estimate_over_T,standard_error_over_T,V,difference\n");
    for r in rows {
        s.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e}\n",
            r.T, r.estimate_over_T, r.standard_error_over_T, r.V, r.difference
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionResult {
    pub holds: bool,
    pub max_eigenvalue: f64,
}

/// Largest eigenvalue of M(K + MᵀM)⁻¹Mᵀ, which never exceeds 1 for K ≻ 0.
pub fn matrix_contraction_check(M: &Mat, K: &Mat) -> Result<ContractionResult> {
    if K.nrows() != K.ncols() || K.nrows() != M.ncols() {
        return Err(MflqError::shape("K", format!("expected {0}x{0}", M.ncols())));
    }
    if !(linalg::min_eigenvalue(K) > 0.0) || linalg::asymmetry(K) > model::SYMMETRY_TOL {
        return Err(MflqError::NotPositiveDefinite("K".into()));
    }
    let inner = K + M.transpose() * M;
    let x = linalg::solve(&inner, &M.transpose()).ok_or_else(|| MflqError::NotPositiveDefinite("K + MᵀM".into()))?;
    let max_eigenvalue = linalg::max_eigenvalue(&(M * x));
    Ok(ContractionResult {
        holds: max_eigenvalue <= 1.0 + CONTRACTION_TOL,
        max_eigenvalue,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockPsdResult {
    pub holds: bool,
    pub min_eigenvalue: f64,
    pub schur_min_eigenvalue: f64,
}

/// PSD check of [[ĈᵀΔĈ+Q̂, ĈᵀΔD̂+Ŝᵀ],[D̂ᵀΔĈ+Ŝ, ℛ̂(Δ)]] and of its Schur complement.
///
/// With Ŝ = 0 (cross terms normalized away) this is exactly the block of the lemma.
pub fn block_psd_check(hats: &HatCoefficients, Delta: &Mat) -> Result<BlockPsdResult> {
    let n = hats.A.nrows();
    let m = hats.B.ncols();
    if Delta.shape() != (n, n) {
        return Err(MflqError::shape("Delta", format!("expected {n}x{n}")));
    }
    if linalg::asymmetry(Delta) > model::SYMMETRY_TOL || linalg::min_eigenvalue(Delta) < -1e-12 {
        return Err(MflqError::NotPositiveDefinite(
            "Delta is not positive semi-definite".into(),
        ));
    }
    let tl = hats.C.transpose() * Delta * &hats.C + &hats.Q;
    let off = hats.D.transpose() * Delta * &hats.C + &hats.S;
    let br = &hats.R + hats.D.transpose() * Delta * &hats.D;
    let mut block = Mat::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(&tl);
    block.view_mut((n, 0), (m, n)).copy_from(&off);
    block.view_mut((0, n), (n, m)).copy_from(&off.transpose());
    block.view_mut((n, n), (m, m)).copy_from(&br);
    let min_eigenvalue = linalg::min_eigenvalue(&block);
    let schur_min_eigenvalue = match linalg::solve(&br, &off) {
        Some(x) => linalg::min_eigenvalue(&(&tl - off.transpose() * x)),
        None => f64::NEG_INFINITY,
    };
    Ok(BlockPsdResult {
        holds: min_eigenvalue >= -BLOCK_PSD_TOL && schur_min_eigenvalue >= -BLOCK_PSD_TOL,
        min_eigenvalue,
        schur_min_eigenvalue,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialCounts {
    pub trials: usize,
    pub passed: usize,
    /// Largest contraction eigenvalue, or smallest block eigenvalue, over all trials.
    pub extreme: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaSuiteReport {
    pub seed: u64,
    pub max_size: usize,
    pub contraction: TrialCounts,
    pub block_psd: TrialCounts,
}

impl LemmaSuiteReport {
    pub fn passed(&self) -> bool {
        self.contraction.passed == self.contraction.trials && self.block_psd.passed == self.block_psd.trials
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random symmetric positive definite LᵀL + εI.
fn random_spd(rng: &mut ChaCha8Rng, size: usize, eps: f64) -> Mat {
    let l = random_matrix(rng, size, size);
    linalg::symmetrize(&(l.transpose() * l + Mat::identity(size, size) * eps))
}

/// Random hats satisfying the positivity assumptions, with a nonzero cross term.
pub fn random_valid_hats(rng: &mut ChaCha8Rng, n: usize, m: usize) -> HatCoefficients {
    let R = random_spd(rng, m, 0.1);
    let S = random_matrix(rng, m, n);
    let base = random_spd(rng, n, 0.1);
    let Q = linalg::symmetrize(&(S.transpose() * linalg::solve(&R, &S).expect("R is positive definite") + base));
    HatCoefficients {
        A: random_matrix(rng, n, n),
        B: random_matrix(rng, n, m),
        C: random_matrix(rng, n, n),
        D: random_matrix(rng, n, m),
        Q,
        S,
        R,
    }
}

/// Randomized trials of both lemma checks with sizes drawn from 1..=max_size.
pub fn lemma_suite(trials: usize, seed: u64, max_size: usize) -> Result<LemmaSuiteReport> {
    if max_size == 0 {
        return Err(MflqError::Config("max_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut contraction = TrialCounts {
        trials,
        passed: 0,
        extreme: f64::NEG_INFINITY,
    };
    for _ in 0..trials {
        let n = rng.random_range(1..=max_size);
        let m = rng.random_range(1..=max_size);
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let M = random_matrix(&mut rng, n, m) * scale;
        let K = random_spd(&mut rng, m, 0.1);
        let r = matrix_contraction_check(&M, &K)?;
        contraction.passed += usize::from(r.holds);
        contraction.extreme = contraction.extreme.max(r.max_eigenvalue);
    }
    let mut block = TrialCounts {
        trials,
        passed: 0,
        extreme: f64::INFINITY,
    };
    for _ in 0..trials {
        let n = rng.random_range(1..=max_size);
        let m = rng.random_range(1..=max_size);
        let hats = random_valid_hats(&mut rng, n, m);
        let rank = rng.random_range(0..=n);
        let g = random_matrix(&mut rng, n, rank);
        let Delta = linalg::symmetrize(&(&g * g.transpose()));
        let r = block_psd_check(&hats, &Delta)?;
        block.passed += usize::from(r.holds);
        block.extreme = block.extreme.min(r.min_eigenvalue);
    }
    Ok(LemmaSuiteReport {
        seed,
        max_size,
        contraction,
        block_psd: block,
    })
}

/// Tolerances carried by every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub symmetry: f64,
    pub positive_definite: f64,
    pub riccati_breakdown: f64,
    pub are_stationarity: f64,
    pub are_residual: f64,
    pub kkt_rcond: f64,
    pub kkt_residual: f64,
    pub log_floor: f64,
    pub envelope_slack: f64,
    pub envelope_coverage: f64,
    pub midpoint_factor: f64,
    pub value_tolerance: f64,
    pub quadrature_margin: f64,
}

pub fn tolerances() -> Tolerances {
    Tolerances {
        symmetry: model::SYMMETRY_TOL,
        positive_definite: model::PD_TOL,
        riccati_breakdown: riccati::BREAKDOWN_TOL,
        are_stationarity: riccati::STATIONARITY_TOL,
        are_residual: riccati::RESIDUAL_TOL,
        kkt_rcond: static_opt::RCOND_TOL,
        kkt_residual: KKT_TOL,
        log_floor: LOG_FLOOR,
        envelope_slack: ENVELOPE_SLACK,
        envelope_coverage: ENVELOPE_COVERAGE,
        midpoint_factor: MIDPOINT_FACTOR,
        value_tolerance: VALUE_TOL,
        quadrature_margin: QUADRATURE_MARGIN,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreReport {
    pub P: Vec<Vec<f64>>,
    pub Pi: Vec<Vec<f64>>,
    pub Theta: Vec<Vec<f64>>,
    pub ThetaHat: Vec<Vec<f64>>,
    pub residual_P: f64,
    pub residual_Pi: f64,
}

impl From<&ArePair> for AreReport {
    fn from(a: &ArePair) -> Self {
        AreReport {
            P: linalg::rows_of(&a.P),
            Pi: linalg::rows_of(&a.Pi),
            Theta: linalg::rows_of(&a.Theta),
            ThetaHat: linalg::rows_of(&a.ThetaHat),
            residual_P: a.residual_P,
            residual_Pi: a.residual_Pi,
        }
    }
}

/// A named numeric check with its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }

    fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            tolerance,
            passed: value >= tolerance,
        }
    }
}

/// Gap values at the midpoint and half a time unit inside each boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapProfile {
    pub left: f64,
    pub midpoint: f64,
    pub right: f64,
}

impl GapProfile {
    fn of(mesh: &[f64], series: &[f64], T: f64) -> Self {
        let at = |t: f64| series[nearest_node(mesh, t)];
        GapProfile {
            left: at(BOUNDARY_OFFSET),
            midpoint: at(T / 2.0),
            right: at(T - BOUNDARY_OFFSET),
        }
    }

    /// Midpoint below both boundary values, by `factor`.
    pub fn midpoint_below(&self, factor: f64) -> bool {
        self.midpoint < self.left.min(self.right) / factor
    }
}

pub fn nearest_node(mesh: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (k, &s) in mesh.iter().enumerate() {
        if (s - t).abs() < (mesh[best] - t).abs() {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnpikeReport {
    pub schema: u32,
    pub trivial_problem: bool,
    pub tolerances: Tolerances,
    pub T: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub are: Option<AreReport>,
    #[serde(rename = "static")]
    pub static_solution: Option<StaticReport>,
    pub profile_fit_P: Option<DecayFit>,
    pub profile_fit_Pi: Option<DecayFit>,
    pub fit_left: Option<DecayFit>,
    pub fit_right: Option<DecayFit>,
    pub envelope_coverage: Option<f64>,
    pub gap: GapProfile,
    pub gap_Y: GapProfile,
    pub gap_Z: GapProfile,
    pub integral_gap: f64,
    pub mean_stationarity_residual: f64,
    pub value: ValueRow,
    /// Hard invariants; any failure makes the run fail.
    pub invariants: Vec<Check>,
    /// Statistical turnpike verdicts, reported only.
    pub verdicts: Vec<Check>,
}

impl TurnpikeReport {
    pub fn failed_invariants(&self) -> Vec<&Check> {
        self.invariants.iter().filter(|c| !c.passed).collect()
    }
}

/// Everything a turnpike run produces; the report is the serializable summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnpikeRun {
    pub report: TurnpikeReport,
    pub mesh: Vec<f64>,
    /// gap_X + gap_u, the series the decay fits use.
    pub gap_series: Vec<f64>,
    pub outcome: Option<CoupledOutcome>,
    pub profile: Vec<ProfileRow>,
}

fn zero_gap() -> GapProfile {
    GapProfile {
        left: 0.0,
        midpoint: 0.0,
        right: 0.0,
    }
}

fn trivial_run(x0: &Vector, config: &SimulationConfig) -> Result<TurnpikeRun> {
    let steps = config.steps()?;
    let mesh = riccati::uniform_mesh(config.T, steps);
    let zeros = vec![0.0; mesh.len()];
    Ok(TurnpikeRun {
        report: TurnpikeReport {
            schema: 1,
            trivial_problem: true,
            tolerances: tolerances(),
            T: config.T,
            dt: config.dt,
            n_paths: config.n_paths,
            seed: config.seed,
            x0: x0.iter().copied().collect(),
            are: None,
            static_solution: None,
            profile_fit_P: None,
            profile_fit_Pi: None,
            fit_left: None,
            fit_right: None,
            envelope_coverage: None,
            gap: zero_gap(),
            gap_Y: zero_gap(),
            gap_Z: zero_gap(),
            integral_gap: 0.0,
            mean_stationarity_residual: 0.0,
            value: ValueRow {
                T: config.T,
                estimate_over_T: 0.0,
                standard_error_over_T: 0.0,
                V: 0.0,
                difference: 0.0,
            },
            invariants: Vec::new(),
            verdicts: Vec::new(),
        },
        profile: mesh
            .iter()
            .map(|&t| ProfileRow {
                t,
                err_P: 0.0,
                err_Pi: 0.0,
            })
            .collect(),
        gap_series: zeros,
        mesh,
        outcome: None,
    })
}

fn profile_fit(profile: &[ProfileRow], T: f64, pick: impl Fn(&ProfileRow) -> f64) -> Option<DecayFit> {
    let xs: Vec<f64> = profile.iter().map(|r| T - r.t).collect();
    let ys: Vec<f64> = profile.iter().map(pick).collect();
    fit_exponential(&xs, &ys, (0.2 * T, T)).ok()
}

/// Full pipeline on one horizon: AREs, static problem, Riccati path with offsets, coupled ensembles.
pub fn turnpike_report(problem: &ProblemData, x0: &Vector, config: &SimulationConfig) -> Result<TurnpikeRun> {
    turnpike_run(problem, x0, config, None)
}

/// As [`turnpike_report`], also streaming the optimal paths to `raw` in the binary layout.
pub fn turnpike_report_with_raw(
    problem: &ProblemData,
    x0: &Vector,
    config: &SimulationConfig,
    raw: &mut dyn Write,
) -> Result<TurnpikeRun> {
    turnpike_run(problem, x0, config, Some(raw))
}

fn turnpike_run(
    problem: &ProblemData,
    x0: &Vector,
    config: &SimulationConfig,
    raw: Option<&mut dyn Write>,
) -> Result<TurnpikeRun> {
    if x0.len() != problem.dims.n {
        return Err(MflqError::shape("$.x0", format!("expected length {}", problem.dims.n)));
    }
    if problem.is_trivial() {
        return trivial_run(x0, config);
    }
    let T = config.T;
    let steps = config.steps()?;
    let are = riccati::solve_are(problem)?;
    let stat: StaticSolution = static_opt::solve_static(problem, &are.P)?;
    let kkt = static_opt::kkt_residual(problem, &are.P, &stat);
    let path = riccati::integrate_finite_horizon(problem, T, steps)?;
    let path = riccati::integrate_offsets(problem, &are, &path, &stat.lambda_star, &stat.sigma_star)?;
    let profile = riccati::convergence_profile(&path, &are);
    let outcome = simulate::simulate_coupled(problem, &path, &are, &stat, x0, config, raw)?;
    let mesh = path.mesh.clone();

    let opt = &outcome.optimal;
    let zeros = vec![0.0; mesh.len()];
    let gap_x = opt.gap_X.as_ref().unwrap_or(&zeros);
    let gap_u = opt.gap_u.as_ref().unwrap_or(&zeros);
    let gap_series: Vec<f64> = gap_x.iter().zip(gap_u).map(|(a, b)| a + b).collect();
    let fits = fit_turnpike_decay(&mesh, &gap_series, T).ok();
    let envelope = fits.map(|(l, r)| envelope_coverage(&mesh, &gap_series, &l, &r, T, ENVELOPE_SLACK));
    let cost = opt.cost_estimate.expect("optimal ensemble carries a cost");

    let node_psd = path
        .P
        .iter()
        .chain(&path.Pi)
        .map(linalg::min_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    let jensen = opt
        .second_moment_X
        .iter()
        .zip(&opt.mean_X)
        .map(|(m2, m)| m2 - m.norm_squared())
        .fold(f64::INFINITY, f64::min);
    let min_gap = [
        gap_x,
        gap_u,
        opt.gap_Y.as_ref().unwrap_or(&zeros),
        opt.gap_Z.as_ref().unwrap_or(&zeros),
    ]
    .iter()
    .flat_map(|g| g.iter())
    .fold(f64::INFINITY, |a, &b| a.min(b));
    let invariants = vec![
        Check::at_most("ARE residual P", are.residual_P, riccati::RESIDUAL_TOL),
        Check::at_most("ARE residual Pi", are.residual_Pi, riccati::RESIDUAL_TOL),
        Check::at_most("KKT residual", kkt.max(), KKT_TOL),
        Check::at_least("Riccati nodes PSD", node_psd, -NODE_PSD_TOL),
        Check::at_least("Jensen gap", jensen, -JENSEN_TOL),
        Check::at_least("gap series nonnegative", min_gap, 0.0),
    ];

    let gap = GapProfile::of(&mesh, &gap_series, T);
    let gap_Y = GapProfile::of(&mesh, opt.gap_Y.as_ref().unwrap_or(&zeros), T);
    let gap_Z = GapProfile::of(&mesh, opt.gap_Z.as_ref().unwrap_or(&zeros), T);
    let mean_res = outcome.mean_stationarity_residual();
    let res_tol = 5.0 * (config.dt + 3.0 / (config.n_paths as f64).sqrt());
    let flag = |name: &str, ok: bool| Check {
        name: name.to_string(),
        value: f64::from(u8::from(ok)),
        tolerance: 1.0,
        passed: ok,
    };
    let mut verdicts = vec![
        flag(
            "midpoint gap below boundary gaps / 5",
            gap.midpoint_below(MIDPOINT_FACTOR),
        ),
        flag("midpoint gap_Y below boundary gap_Y", gap_Y.midpoint_below(1.0)),
        flag("midpoint gap_Z below boundary gap_Z", gap_Z.midpoint_below(1.0)),
        Check::at_most("stationarity residual", mean_res, res_tol),
    ];
    if let Some(cov) = envelope {
        verdicts.push(Check::at_least("envelope coverage", cov, ENVELOPE_COVERAGE));
    }

    Ok(TurnpikeRun {
        report: TurnpikeReport {
            schema: 1,
            trivial_problem: false,
            tolerances: tolerances(),
            T,
            dt: config.dt,
            n_paths: config.n_paths,
            seed: config.seed,
            x0: x0.iter().copied().collect(),
            are: Some(AreReport::from(&are)),
            static_solution: Some(StaticReport::from(&stat)),
            profile_fit_P: profile_fit(&profile, T, |r| r.err_P),
            profile_fit_Pi: profile_fit(&profile, T, |r| r.err_Pi),
            fit_left: fits.map(|f| f.0),
            fit_right: fits.map(|f| f.1),
            envelope_coverage: envelope,
            gap,
            gap_Y,
            gap_Z,
            integral_gap: integral_turnpike(&mesh, &gap_series),
            mean_stationarity_residual: mean_res,
            value: ValueRow {
                T,
                estimate_over_T: cost.mean / T,
                standard_error_over_T: cost.standard_error / T,
                V: stat.V,
                difference: cost.mean / T - stat.V,
            },
            invariants,
            verdicts,
        },
        mesh,
        gap_series,
        outcome: Some(outcome),
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh(T: f64, steps: usize) -> Vec<f64> {
        riccati::uniform_mesh(T, steps)
    }

    #[test]
    fn fit_recovers_synthetic_double_exponential() {
        let T = 10.0;
        let t = mesh(T, 1000);
        let g: Vec<f64> = t
            .iter()
            .map(|&s| 2.0 * (-3.0 * s).exp() + 2.0 * (-3.0 * (T - s)).exp())
            .collect();
        let (l, r) = fit_turnpike_decay(&t, &g, T).unwrap();
        for f in [l, r] {
            assert!((f.K - 2.0).abs() < 2e-2, "{f:?}");
            assert!((f.lambda - 3.0).abs() < 5e-3);
            assert!(f.r_squared > 0.999);
        }
        assert_eq!(l.window, (0.5, 4.5));
        assert_eq!(r.window, (5.5, 9.5));
        assert_eq!(envelope_coverage(&t, &g, &l, &r, T, ENVELOPE_SLACK), 1.0);
    }

    #[test]
    fn constant_series_has_no_decay() {
        let t = mesh(10.0, 100);
        let g = vec![1.0; t.len()];
        let (l, _) = fit_turnpike_decay(&t, &g, 10.0).unwrap();
        assert!(l.lambda.abs() < 1e-6);
        assert_eq!(l.r_squared, 0.0);
    }

    #[test]
    fn sparse_window_is_rejected() {
        let t = mesh(10.0, 10);
        let g = vec![1.0; t.len()];
        assert!(matches!(
            fit_turnpike_decay(&t, &g, 10.0),
            Err(MflqError::WindowTooSparse(_))
        ));
    }

    #[test]
    fn floored_nodes_do_not_enter_r_squared() {
        let t = mesh(10.0, 100);
        let g: Vec<f64> = t
            .iter()
            .map(|&s| if s > 3.0 { 0.0 } else { (-2.0 * s).exp() })
            .collect();
        let (l, _) = fit_turnpike_decay(&t, &g, 10.0).unwrap();
        assert!(l.lambda > 2.0);
        assert!(l.r_squared <= 1.0);
    }

    #[test]
    fn integral_examples() {
        let T = 10.0;
        let t = mesh(T, 10_000);
        assert!((integral_turnpike(&t, &vec![0.7; t.len()]) - 0.7).abs() < 1e-12);
        let g: Vec<f64> = t.iter().map(|&s| (-s).exp() + (-(T - s)).exp()).collect();
        let exact = 2.0 / T * (1.0 - (-T).exp());
        assert!((integral_turnpike(&t, &g) - exact).abs() < 1e-7);
    }

    #[test]
    fn contraction_examples() {
        let r = matrix_contraction_check(&Mat::zeros(2, 2), &Mat::identity(2, 2)).unwrap();
        assert!(r.holds);
        assert_eq!(r.max_eigenvalue, 0.0);
        let one = Mat::from_element(1, 1, 1.0);
        let r = matrix_contraction_check(&one, &one).unwrap();
        assert!((r.max_eigenvalue - 0.5).abs() < 1e-15);
        assert!(matches!(
            matrix_contraction_check(&one, &Mat::from_element(1, 1, -1.0)),
            Err(MflqError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn block_examples() {
        let p = ProblemData::scalar(-1.0, 1.0, 0.0, 0.0, 1.0, 1.0);
        let hats = model::assemble_hats(&p);
        let r = block_psd_check(&hats, &Mat::zeros(1, 1)).unwrap();
        assert!(r.holds);
        assert!((r.min_eigenvalue - 1.0).abs() < 1e-15);
        let r = block_psd_check(&hats, &Mat::from_element(1, 1, 1.0)).unwrap();
        assert!((r.min_eigenvalue - 1.0).abs() < 1e-15);
        assert!(matches!(
            block_psd_check(&hats, &Mat::from_element(1, 1, -1.0)),
            Err(MflqError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn small_lemma_suite_passes() {
        let rep = lemma_suite(50, 1, 4).unwrap();
        assert!(rep.passed());
        assert!(rep.contraction.extreme < 1.0);
        assert!(rep.block_psd.extreme >= -BLOCK_PSD_TOL);
    }

    #[test]
    fn value_verdict_logic() {
        let row = |T, d: f64| ValueRow {
            T,
            estimate_over_T: 1.0 + d,
            standard_error_over_T: 0.001,
            V: 1.0,
            difference: d,
        };
        assert!(value_verdict(&[row(10.0, 0.3), row(20.0, 0.15), row(40.0, 0.08)]).passed);
        let v = value_verdict(&[row(10.0, 0.3), row(20.0, 0.35), row(40.0, 0.08)]);
        assert!(!v.strictly_decreasing);
        let v = value_verdict(&[row(10.0, 0.5), row(20.0, 0.4), row(40.0, 0.2)]);
        assert!(!v.final_within_tolerance);
    }

    #[test]
    fn trivial_problem_report() {
        let p = ProblemData::zeros(model::Dimensions { n: 1, m: 1 });
        let cfg = SimulationConfig {
            T: 1.0,
            dt: 0.1,
            n_paths: 4,
            seed: 1,
            coupled: true,
        };
        let run = turnpike_report(&p, &Vector::zeros(1), &cfg).unwrap();
        assert!(run.report.trivial_problem);
        assert!(run.gap_series.iter().all(|g| *g == 0.0));
        let rows = value_convergence(&p, &Vector::zeros(1), &[1.0, 2.0], &cfg).unwrap();
        assert!(rows
            .iter()
            .all(|r| r.estimate_over_T == 0.0 && r.V == 0.0 && r.difference == 0.0));
    }
}
