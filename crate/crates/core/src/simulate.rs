//! Monte Carlo simulation of the finite-horizon optimal pair and the stationary
//! turnpike processes, coupled through common Brownian increments.
//!
//! Paths are simulated in fixed chunks of [`CHUNK`] paths. Each chunk is
//! sequential and chunk partial sums are folded in chunk order, so results do
//! not depend on how many worker threads run the chunks.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MflqError, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{self, ProblemData};
use crate::riccati::{uniform_mesh, ArePair, RiccatiPath};
use crate::rng::BrownianStream;
use crate::static_opt::StaticSolution;

pub const CHUNK: usize = 256;
const BATCH: usize = 8;
const MESH_TOL: f64 = 1e-12;
/// Seed offset for the turnpike ensemble when it is not coupled to the optimal one.
const UNCOUPLED_SEED_SHIFT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub T: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub coupled: bool,
}

impl SimulationConfig {
    /// Number of Euler steps; fails unless dt divides T.
    pub fn steps(&self) -> Result<usize> {
        if !(self.T > 0.0 && self.T.is_finite()) {
            return Err(MflqError::Config(format!("horizon must be positive, got {}", self.T)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(MflqError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_paths == 0 {
            return Err(MflqError::Config("n_paths must be at least 1".into()));
        }
        let k = (self.T / self.dt).round();
        if k < 1.0 || (k * self.dt - self.T).abs() > MESH_TOL * self.T.max(1.0) {
            return Err(MflqError::Config(format!(
                "dt = {} does not divide T = {}",
                self.dt, self.T
            )));
        }
        Ok(k as usize)
    }

    fn turnpike_seed(&self) -> u64 {
        if self.coupled {
            self.seed
        } else {
            self.seed.wrapping_add(UNCOUPLED_SEED_SHIFT)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub standard_error: f64,
}

/// Per-node Monte Carlo moments of one ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mesh: Vec<f64>,
    pub mean_X: Vec<Vector>,
    pub mean_u: Vec<Vector>,
    pub second_moment_X: Vec<f64>,
    pub second_moment_u: Vec<f64>,
    pub gap_X: Option<Vec<f64>>,
    pub gap_u: Option<Vec<f64>>,
    pub gap_Y: Option<Vec<f64>>,
    pub gap_Z: Option<Vec<f64>>,
    pub cost_estimate: Option<CostEstimate>,
}

impl EnsembleStats {
    /// CSV with header `t,meanX0..,m2X,m2u[,gapX,gapu][,gapY,gapZ]`.
    pub fn to_csv(&self) -> String {
        let n = self.mean_X.first().map(|v| v.len()).unwrap_or(0);
        let mut s = String::from("t");
        for i in 0..n {
            s.push_str(&format!(",meanX{i}"));
        }
        s.push_str(",m2X,m2u");
        let gaps: Vec<(&str, &Vec<f64>)> = [
            ("gapX", &self.gap_X),
            ("gapu", &self.gap_u),
            ("gapY", &self.gap_Y),
            ("gapZ", &self.gap_Z),
        ]
        .into_iter()
        .filter_map(|(name, g)| g.as_ref().map(|g| (name, g)))
        .collect();
        for (name, _) in &gaps {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for k in 0..self.mesh.len() {
            s.push_str(&format!("{:e}", self.mesh[k]));
            for v in self.mean_X[k].iter() {
                s.push_str(&format!(",{v:e}"));
            }
            s.push_str(&format!(",{:e},{:e}", self.second_moment_X[k], self.second_moment_u[k]));
            for (_, g) in &gaps {
                s.push_str(&format!(",{:e}", g[k]));
            }
            s.push('\n');
        }
        s
    }
}

/// Stored sample paths of one ensemble, in original (unshifted) coordinates.
///
/// Layout: for each path, (K+1) state rows of length n followed by (K+1) control rows of length m.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPaths {
    pub n: usize,
    pub m: usize,
    pub nodes: usize,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub coupled: bool,
    pub data: Vec<f64>,
}

impl RawPaths {
    fn stride(&self) -> usize {
        self.nodes * (self.n + self.m)
    }

    pub fn X(&self, path: usize, node: usize) -> &[f64] {
        let base = path * self.stride() + node * self.n;
        &self.data[base..base + self.n]
    }

    pub fn u(&self, path: usize, node: usize) -> &[f64] {
        let base = path * self.stride() + self.nodes * self.n + node * self.m;
        &self.data[base..base + self.m]
    }

    pub fn mesh(&self) -> Vec<f64> {
        uniform_mesh(self.dt * (self.nodes - 1) as f64, self.nodes - 1)
    }

    /// Little-endian binary dump: four u64 (n, m, K+1, n_paths) then the f64 data.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        write_raw_header(&mut w, self.n, self.m, self.nodes, self.n_paths)?;
        write_f64s(&mut w, &self.data)
    }
}

pub fn write_raw_header<W: Write + ?Sized>(w: &mut W, n: usize, m: usize, nodes: usize, n_paths: usize) -> Result<()> {
    for v in [n, m, nodes, n_paths] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    Ok(())
}

fn write_f64s<W: Write + ?Sized>(w: &mut W, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn matvec_add(a: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let row = &a[i * cols..(i + 1) * cols];
        let mut acc = out[i];
        for j in 0..cols {
            acc += row[j] * x[j];
        }
        out[i] = acc;
    }
}

fn flat(m: &Mat) -> Vec<f64> {
    linalg::row_major(m)
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_vec(name: &str, v: &Vector, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(MflqError::shape(
            name,
            format!("expected length {len}, got {}", v.len()),
        ));
    }
    Ok(())
}

/// RK4 forward integration of the closed-loop mean m(t) = E[X(t)] − x*.
pub fn propagate_mean(problem: &ProblemData, path: &RiccatiPath, x0: &Vector, x_star: &Vector) -> Result<Vec<Vector>> {
    let n = problem.dims.n;
    check_vec("x0", x0, n)?;
    check_vec("x_star", x_star, n)?;
    if path.dim() != n || path.ThetaHat_mid.len() != path.steps() || path.theta_hat_mid.len() != path.steps() {
        return Err(MflqError::MeshMismatch("Riccati path does not fit the problem".into()));
    }
    let hats = model::assemble_hats(problem);
    let h = path.step();
    let f = |gain: &Mat, offset: &Vector, y: &Vector| -> Vector { (&hats.A + &hats.B * gain) * y + &hats.B * offset };
    let mut out = Vec::with_capacity(path.mesh.len());
    out.push(x0 - x_star);
    for k in 0..path.steps() {
        let y = &out[k];
        let k1 = f(&path.ThetaHat[k], &path.theta_hat[k], y);
        let k2 = f(&path.ThetaHat_mid[k], &path.theta_hat_mid[k], &(y + &k1 * (h / 2.0)));
        let k3 = f(&path.ThetaHat_mid[k], &path.theta_hat_mid[k], &(y + &k2 * (h / 2.0)));
        let k4 = f(&path.ThetaHat[k + 1], &path.theta_hat[k + 1], &(y + &k3 * h));
        let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(next);
    }
    Ok(out)
}

/// Per-node coefficients of the finite-horizon closed loop in shifted coordinates X̃ = X − x*.
///
/// dX̃ = (F_k X̃ + d_k)dt + (G_k X̃ + s_k)dW, ũ = Θ_k X̃ + e_k,
/// Ỹ + λ* = P_k X̃ + y_k, Z = W_k X̃ + z_k.
struct OptimalKernel {
    F: Vec<f64>,
    G: Vec<f64>,
    Theta: Vec<f64>,
    PT: Vec<f64>,
    W: Vec<f64>,
    d: Vec<f64>,
    s: Vec<f64>,
    e: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    x_tilde0: Vec<f64>,
}

impl OptimalKernel {
    fn new(problem: &ProblemData, path: &RiccatiPath, stat: &StaticSolution, x0: &Vector) -> Result<Self> {
        let mean = propagate_mean(problem, path, x0, &stat.x_star)?;
        let hats = model::assemble_hats(problem);
        let nodes = path.mesh.len();
        let mut k = OptimalKernel {
            F: Vec::new(),
            G: Vec::new(),
            Theta: Vec::new(),
            PT: Vec::new(),
            W: Vec::new(),
            d: Vec::new(),
            s: Vec::new(),
            e: Vec::new(),
            y: Vec::new(),
            z: Vec::new(),
            x_tilde0: (x0 - &stat.x_star).iter().copied().collect(),
        };
        for (i, mi) in mean.iter().enumerate().take(nodes) {
            let (th, thh) = (&path.Theta[i], &path.ThetaHat[i]);
            let f = &problem.A + &problem.B * th;
            let g = &problem.C + &problem.D * th;
            let a = (&hats.A + &hats.B * thh) * mi + &hats.B * &path.theta_hat[i];
            let c = (&hats.C + &hats.D * thh) * mi + &hats.D * &path.theta_hat[i] + &stat.sigma_star;
            let d = &a - &f * mi;
            let s = &c - &g * mi;
            let e = (thh - th) * mi + &path.theta_hat[i];
            let y = (&path.Pi[i] - &path.P[i]) * mi + &path.phi_hat[i] + &stat.lambda_star;
            let w = &path.P[i] * &g;
            let z = &path.P[i] * &s;
            k.F.extend(flat(&f));
            k.G.extend(flat(&g));
            k.Theta.extend(flat(th));
            k.PT.extend(flat(&path.P[i]));
            k.W.extend(flat(&w));
            k.d.extend(d.iter());
            k.s.extend(s.iter());
            k.e.extend(e.iter());
            k.y.extend(y.iter());
            k.z.extend(z.iter());
        }
        Ok(k)
    }
}

/// Constant coefficients of the stationary turnpike SDE, X* started at 0.
struct TurnpikeKernel {
    F: Vec<f64>,
    G: Vec<f64>,
    Theta: Vec<f64>,
    P: Vec<f64>,
    PG: Vec<f64>,
    sigma: Vec<f64>,
    p_sigma: Vec<f64>,
    lambda: Vec<f64>,
}

impl TurnpikeKernel {
    fn new(problem: &ProblemData, are: &ArePair, stat: &StaticSolution) -> Self {
        let f = &problem.A + &problem.B * &are.Theta;
        let g = &problem.C + &problem.D * &are.Theta;
        TurnpikeKernel {
            F: flat(&f),
            G: flat(&g),
            Theta: flat(&are.Theta),
            P: flat(&are.P),
            PG: flat(&(&are.P * &g)),
            sigma: stat.sigma_star.iter().copied().collect(),
            p_sigma: (&are.P * &stat.sigma_star).iter().copied().collect(),
            lambda: stat.lambda_star.iter().copied().collect(),
        }
    }
}

/// Column offsets of the per-node accumulator rows.
#[derive(Clone, Copy)]
struct Layout {
    width: usize,
    o_x: usize,
    o_u: usize,
    o_m2x: usize,
    o_m2u: usize,
    o_y: usize,
    o_z: usize,
    t_x: usize,
    t_u: usize,
    t_m2x: usize,
    t_m2u: usize,
    g_x: usize,
    g_u: usize,
    g_y: usize,
    g_z: usize,
}

impl Layout {
    fn new(n: usize, m: usize) -> Self {
        let o_x = 0;
        let o_u = o_x + n;
        let o_m2x = o_u + m;
        let o_m2u = o_m2x + 1;
        let o_y = o_m2u + 1;
        let o_z = o_y + n;
        let t_x = o_z + n;
        let t_u = t_x + n;
        let t_m2x = t_u + m;
        let t_m2u = t_m2x + 1;
        let g_x = t_m2u + 1;
        Layout {
            width: g_x + 4,
            o_x,
            o_u,
            o_m2x,
            o_m2u,
            o_y,
            o_z,
            t_x,
            t_u,
            t_m2x,
            t_m2u,
            g_x,
            g_u: g_x + 1,
            g_y: g_x + 2,
            g_z: g_x + 3,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Record {
    Nothing,
    Optimal,
    Turnpike,
}

struct Engine<'a> {
    problem: &'a ProblemData,
    stat: &'a StaticSolution,
    optimal: Option<OptimalKernel>,
    turnpike: Option<TurnpikeKernel>,
    config: SimulationConfig,
    steps: usize,
    layout: Layout,
    record: Record,
}

struct ChunkResult {
    sums: Vec<f64>,
    cost_sum: f64,
    cost_sq: f64,
    raw: Vec<f64>,
    failure: Option<(usize, usize)>,
}

struct EngineOutput {
    sums: Vec<f64>,
    cost_sum: f64,
    cost_sq: f64,
}

impl<'a> Engine<'a> {
    fn run_chunk(&self, chunk: usize) -> ChunkResult {
        let n = self.problem.dims.n;
        let m = self.problem.dims.m;
        let lay = self.layout;
        let cfg = &self.config;
        let nodes = self.steps + 1;
        let p0 = chunk * CHUNK;
        let np = CHUNK.min(cfg.n_paths - p0);
        let dt = cfg.dt;
        let x_star: &[f64] = self.stat.x_star.as_slice();
        let u_star: &[f64] = self.stat.u_star.as_slice();
        let p = self.problem;
        let (Q, S, R) = (flat(&p.Q), flat(&p.S), flat(&p.R));
        let (q, r) = (p.q.as_slice(), p.r.as_slice());

        let mut sums = vec![0.0; nodes * lay.width];
        let mut raw = if self.record == Record::Nothing {
            Vec::new()
        } else {
            vec![0.0; np * nodes * (n + m)]
        };
        let mut xo = vec![0.0; np * n];
        if let Some(k) = &self.optimal {
            for j in 0..np {
                xo[j * n..(j + 1) * n].copy_from_slice(&k.x_tilde0);
            }
        }
        let mut xt = vec![0.0; np * n];
        let mut opt_streams: Vec<BrownianStream> = if self.optimal.is_some() {
            (0..np)
                .map(|j| BrownianStream::new(cfg.seed, (p0 + j) as u64, dt))
                .collect()
        } else {
            Vec::new()
        };
        let share = self.optimal.is_some() && cfg.coupled;
        let mut tp_streams: Vec<BrownianStream> = if self.turnpike.is_some() && !share {
            (0..np)
                .map(|j| BrownianStream::new(cfg.turnpike_seed(), (p0 + j) as u64, dt))
                .collect()
        } else {
            Vec::new()
        };
        let mut cost = vec![0.0; np];
        let mut dws = vec![0.0; np];

        let mut xs = vec![0.0; n];
        let mut us = vec![0.0; m];
        let mut uo = vec![0.0; m];
        let mut yv = vec![0.0; n];
        let mut zv = vec![0.0; n];
        let mut xt_full = vec![0.0; n];
        let mut ut = vec![0.0; m];
        let mut ut_full = vec![0.0; m];
        let mut yt = vec![0.0; n];
        let mut zt = vec![0.0; n];
        let mut drift = vec![0.0; n];
        let mut diff = vec![0.0; n];
        let mut failure = None;

        'nodes: for k in 0..nodes {
            let row = &mut sums[k * lay.width..(k + 1) * lay.width];
            let w_k = if k == 0 || k == self.steps { 0.5 * dt } else { dt };
            for j in 0..np {
                let xj = &xo[j * n..(j + 1) * n];
                let tj = &xt[j * n..(j + 1) * n];
                if let Some(ok) = &self.optimal {
                    uo.copy_from_slice(&ok.e[k * m..(k + 1) * m]);
                    matvec_add(&ok.Theta[k * m * n..(k + 1) * m * n], m, n, xj, &mut uo);
                    for i in 0..n {
                        xs[i] = xj[i] + x_star[i];
                    }
                    for i in 0..m {
                        us[i] = uo[i] + u_star[i];
                    }
                    yv.copy_from_slice(&ok.y[k * n..(k + 1) * n]);
                    matvec_add(&ok.PT[k * n * n..(k + 1) * n * n], n, n, xj, &mut yv);
                    zv.copy_from_slice(&ok.z[k * n..(k + 1) * n]);
                    matvec_add(&ok.W[k * n * n..(k + 1) * n * n], n, n, xj, &mut zv);
                    for i in 0..n {
                        row[lay.o_x + i] += xs[i];
                        row[lay.o_y + i] += yv[i];
                        row[lay.o_z + i] += zv[i];
                    }
                    for i in 0..m {
                        row[lay.o_u + i] += us[i];
                    }
                    row[lay.o_m2x] += sq_norm(&xs);
                    row[lay.o_m2u] += sq_norm(&us);
                    cost[j] += w_k * running_cost(&Q, &S, &R, q, r, &xs, &us);
                    if self.record == Record::Optimal {
                        let base = j * nodes * (n + m);
                        raw[base + k * n..base + (k + 1) * n].copy_from_slice(&xs);
                        let ub = base + nodes * n + k * m;
                        raw[ub..ub + m].copy_from_slice(&us);
                    }
                }
                if let Some(tk) = &self.turnpike {
                    ut.fill(0.0);
                    matvec_add(&tk.Theta, m, n, tj, &mut ut);
                    for i in 0..n {
                        xt_full[i] = tj[i] + x_star[i];
                    }
                    for i in 0..m {
                        ut_full[i] = ut[i] + u_star[i];
                    }
                    for i in 0..n {
                        row[lay.t_x + i] += xt_full[i];
                    }
                    for i in 0..m {
                        row[lay.t_u + i] += ut_full[i];
                    }
                    row[lay.t_m2x] += sq_norm(&xt_full);
                    row[lay.t_m2u] += sq_norm(&ut_full);
                    if self.record == Record::Turnpike {
                        let base = j * nodes * (n + m);
                        raw[base + k * n..base + (k + 1) * n].copy_from_slice(&xt_full);
                        let ub = base + nodes * n + k * m;
                        raw[ub..ub + m].copy_from_slice(&ut_full);
                    }
                    if self.optimal.is_some() {
                        yt.copy_from_slice(&tk.lambda);
                        matvec_add(&tk.P, n, n, tj, &mut yt);
                        zt.copy_from_slice(&tk.p_sigma);
                        matvec_add(&tk.PG, n, n, tj, &mut zt);
                        row[lay.g_x] += sq_dist(xj, tj);
                        row[lay.g_u] += sq_dist(&uo, &ut);
                        row[lay.g_y] += sq_dist(&yv, &yt);
                        row[lay.g_z] += sq_dist(&zv, &zt);
                    }
                }
            }
            if k == self.steps {
                break;
            }

            if let Some(ok) = &self.optimal {
                let (F, G) = (&ok.F[k * n * n..(k + 1) * n * n], &ok.G[k * n * n..(k + 1) * n * n]);
                let (d, s) = (&ok.d[k * n..(k + 1) * n], &ok.s[k * n..(k + 1) * n]);
                for j in 0..np {
                    let dw = opt_streams[j].next_increment();
                    dws[j] = dw;
                    let xj = &mut xo[j * n..(j + 1) * n];
                    drift.copy_from_slice(d);
                    matvec_add(F, n, n, xj, &mut drift);
                    diff.copy_from_slice(s);
                    matvec_add(G, n, n, xj, &mut diff);
                    let mut finite = true;
                    for i in 0..n {
                        xj[i] += drift[i] * dt + diff[i] * dw;
                        finite &= xj[i].is_finite();
                    }
                    if !finite && failure.is_none() {
                        failure = Some((k + 1, p0 + j));
                    }
                }
            }
            if let Some(tk) = &self.turnpike {
                for j in 0..np {
                    let dw = if share { dws[j] } else { tp_streams[j].next_increment() };
                    let tj = &mut xt[j * n..(j + 1) * n];
                    drift.fill(0.0);
                    matvec_add(&tk.F, n, n, tj, &mut drift);
                    diff.copy_from_slice(&tk.sigma);
                    matvec_add(&tk.G, n, n, tj, &mut diff);
                    let mut finite = true;
                    for i in 0..n {
                        tj[i] += drift[i] * dt + diff[i] * dw;
                        finite &= tj[i].is_finite();
                    }
                    if !finite && failure.is_none() {
                        failure = Some((k + 1, p0 + j));
                    }
                }
            }
            if failure.is_some() {
                break 'nodes;
            }
        }

        let cost_sum = cost.iter().sum();
        let cost_sq = cost.iter().map(|c| c * c).sum();
        ChunkResult {
            sums,
            cost_sum,
            cost_sq,
            raw,
            failure,
        }
    }

    /// Runs all chunks, folding partial sums in chunk order; raw rows go to `sink` in path order.
    fn run(&self, mut sink: impl FnMut(&[f64]) -> Result<()>) -> Result<EngineOutput> {
        let chunks = self.config.n_paths.div_ceil(CHUNK);
        let nodes = self.steps + 1;
        let mut out = EngineOutput {
            sums: vec![0.0; nodes * self.layout.width],
            cost_sum: 0.0,
            cost_sq: 0.0,
        };
        let mut start = 0;
        while start < chunks {
            let end = (start + BATCH).min(chunks);
            let results: Vec<ChunkResult> = (start..end).into_par_iter().map(|c| self.run_chunk(c)).collect();
            let first_failure = results.iter().filter_map(|r| r.failure).min();
            if let Some((step, path)) = first_failure {
                return Err(MflqError::NonFinite { path, step });
            }
            for r in results {
                for (a, b) in out.sums.iter_mut().zip(&r.sums) {
                    *a += b;
                }
                out.cost_sum += r.cost_sum;
                out.cost_sq += r.cost_sq;
                if self.record != Record::Nothing {
                    sink(&r.raw)?;
                }
            }
            start = end;
        }
        Ok(out)
    }
}

fn running_cost(Q: &[f64], S: &[f64], R: &[f64], q: &[f64], r: &[f64], x: &[f64], u: &[f64]) -> f64 {
    let (n, m) = (x.len(), u.len());
    let mut acc = 0.0;
    for i in 0..n {
        let mut qx = 0.0;
        for j in 0..n {
            qx += Q[i * n + j] * x[j];
        }
        acc += x[i] * qx + 2.0 * q[i] * x[i];
    }
    for i in 0..m {
        let (mut sx, mut ru) = (0.0, 0.0);
        for j in 0..n {
            sx += S[i * n + j] * x[j];
        }
        for j in 0..m {
            ru += R[i * m + j] * u[j];
        }
        acc += 2.0 * u[i] * sx + u[i] * ru + 2.0 * r[i] * u[i];
    }
    acc
}

/// ⟨Q̄x̄,x̄⟩ + 2⟨S̄x̄,ū⟩ + ⟨R̄ū,ū⟩ on ensemble means.
fn mean_field_cost(problem: &ProblemData, mean_x: &Vector, mean_u: &Vector) -> f64 {
    (&problem.Q_bar * mean_x).dot(mean_x)
        + 2.0 * (&problem.S_bar * mean_x).dot(mean_u)
        + (&problem.R_bar * mean_u).dot(mean_u)
}

pub(crate) fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dt * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

fn finish_cost(
    problem: &ProblemData,
    stats: &EnsembleStats,
    dt: f64,
    sum: f64,
    sq: f64,
    n_paths: usize,
) -> CostEstimate {
    let nf = n_paths as f64;
    let mean = sum / nf;
    let var = if n_paths > 1 {
        ((sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    let barred: Vec<f64> = stats
        .mean_X
        .iter()
        .zip(&stats.mean_u)
        .map(|(x, u)| mean_field_cost(problem, x, u))
        .collect();
    CostEstimate {
        mean: mean + trapezoid(&barred, dt),
        standard_error: (var / nf).sqrt(),
    }
}

#[allow(clippy::too_many_arguments)]
fn stats_from(
    mesh: &[f64],
    sums: &[f64],
    lay: Layout,
    n: usize,
    m: usize,
    n_paths: usize,
    turnpike_block: bool,
    with_gaps: bool,
) -> EnsembleStats {
    let nf = n_paths as f64;
    let (ox, ou, om2x, om2u) = if turnpike_block {
        (lay.t_x, lay.t_u, lay.t_m2x, lay.t_m2u)
    } else {
        (lay.o_x, lay.o_u, lay.o_m2x, lay.o_m2u)
    };
    let row = |k: usize| &sums[k * lay.width..(k + 1) * lay.width];
    let nodes = mesh.len();
    let col = |c: usize| -> Vec<f64> { (0..nodes).map(|k| row(k)[c] / nf).collect() };
    EnsembleStats {
        mesh: mesh.to_vec(),
        mean_X: (0..nodes)
            .map(|k| Vector::from_iterator(n, row(k)[ox..ox + n].iter().map(|v| v / nf)))
            .collect(),
        mean_u: (0..nodes)
            .map(|k| Vector::from_iterator(m, row(k)[ou..ou + m].iter().map(|v| v / nf)))
            .collect(),
        second_moment_X: col(om2x),
        second_moment_u: col(om2u),
        gap_X: with_gaps.then(|| col(lay.g_x)),
        gap_u: with_gaps.then(|| col(lay.g_u)),
        gap_Y: with_gaps.then(|| col(lay.g_y)),
        gap_Z: with_gaps.then(|| col(lay.g_z)),
        cost_estimate: None,
    }
}

fn check_path_mesh(path: &RiccatiPath, config: &SimulationConfig, steps: usize) -> Result<()> {
    if path.steps() != steps || (path.T - config.T).abs() > MESH_TOL * config.T.max(1.0) {
        return Err(MflqError::MeshMismatch(format!(
            "Riccati path has {} steps on [0, {}], simulation needs {} steps of {} on [0, {}]",
            path.steps(),
            path.T,
            steps,
            config.dt,
            config.T
        )));
    }
    Ok(())
}

fn check_static(problem: &ProblemData, stat: &StaticSolution) -> Result<()> {
    check_vec("x_star", &stat.x_star, problem.dims.n)?;
    check_vec("u_star", &stat.u_star, problem.dims.m)?;
    check_vec("lambda_star", &stat.lambda_star, problem.dims.n)?;
    check_vec("sigma_star", &stat.sigma_star, problem.dims.n)
}

fn raw_container(problem: &ProblemData, config: &SimulationConfig, nodes: usize, seed: u64) -> RawPaths {
    let (n, m) = (problem.dims.n, problem.dims.m);
    RawPaths {
        n,
        m,
        nodes,
        n_paths: config.n_paths,
        dt: config.dt,
        seed,
        coupled: config.coupled,
        data: Vec::with_capacity(config.n_paths * nodes * (n + m)),
    }
}

/// Euler–Maruyama ensemble of the finite-horizon optimal pair (X*_T, u*_T), all paths kept.
pub fn simulate_optimal_ensemble(
    problem: &ProblemData,
    path: &RiccatiPath,
    stat: &StaticSolution,
    x0: &Vector,
    config: &SimulationConfig,
) -> Result<(RawPaths, EnsembleStats)> {
    let steps = config.steps()?;
    check_path_mesh(path, config, steps)?;
    check_static(problem, stat)?;
    let engine = Engine {
        problem,
        stat,
        optimal: Some(OptimalKernel::new(problem, path, stat, x0)?),
        turnpike: None,
        config: *config,
        steps,
        layout: Layout::new(problem.dims.n, problem.dims.m),
        record: Record::Optimal,
    };
    let mut raw = raw_container(problem, config, steps + 1, config.seed);
    let out = engine.run(|rows| {
        raw.data.extend_from_slice(rows);
        Ok(())
    })?;
    let mut stats = stats_from(
        &path.mesh,
        &out.sums,
        engine.layout,
        problem.dims.n,
        problem.dims.m,
        config.n_paths,
        false,
        false,
    );
    stats.cost_estimate = Some(finish_cost(
        problem,
        &stats,
        config.dt,
        out.cost_sum,
        out.cost_sq,
        config.n_paths,
    ));
    Ok((raw, stats))
}

/// Streaming version of [`simulate_optimal_ensemble`]: moments and cost only, no stored paths.
pub fn simulate_optimal_stats(
    problem: &ProblemData,
    path: &RiccatiPath,
    stat: &StaticSolution,
    x0: &Vector,
    config: &SimulationConfig,
) -> Result<EnsembleStats> {
    let steps = config.steps()?;
    check_path_mesh(path, config, steps)?;
    check_static(problem, stat)?;
    let engine = Engine {
        problem,
        stat,
        optimal: Some(OptimalKernel::new(problem, path, stat, x0)?),
        turnpike: None,
        config: *config,
        steps,
        layout: Layout::new(problem.dims.n, problem.dims.m),
        record: Record::Nothing,
    };
    let out = engine.run(|_| Ok(()))?;
    let mut stats = stats_from(
        &path.mesh,
        &out.sums,
        engine.layout,
        problem.dims.n,
        problem.dims.m,
        config.n_paths,
        false,
        false,
    );
    stats.cost_estimate = Some(finish_cost(
        problem,
        &stats,
        config.dt,
        out.cost_sum,
        out.cost_sq,
        config.n_paths,
    ));
    Ok(stats)
}

/// Euler–Maruyama ensemble of the stationary processes (𝑿*, 𝒖*), all paths kept.
pub fn simulate_turnpike_ensemble(
    problem: &ProblemData,
    are: &ArePair,
    stat: &StaticSolution,
    config: &SimulationConfig,
) -> Result<(RawPaths, EnsembleStats)> {
    let steps = config.steps()?;
    check_static(problem, stat)?;
    let engine = Engine {
        problem,
        stat,
        optimal: None,
        turnpike: Some(TurnpikeKernel::new(problem, are, stat)),
        config: *config,
        steps,
        layout: Layout::new(problem.dims.n, problem.dims.m),
        record: Record::Turnpike,
    };
    let mut raw = raw_container(problem, config, steps + 1, config.turnpike_seed());
    // Mark the container with the configured seed so coupled pairs can be matched.
    raw.seed = config.seed;
    let out = engine.run(|rows| {
        raw.data.extend_from_slice(rows);
        Ok(())
    })?;
    let mesh = uniform_mesh(config.T, steps);
    let stats = stats_from(
        &mesh,
        &out.sums,
        engine.layout,
        problem.dims.n,
        problem.dims.m,
        config.n_paths,
        true,
        false,
    );
    Ok((raw, stats))
}

/// Per-node squared gaps between the reconstructed adjoints and their stationary counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointGaps {
    pub gap_Y: Vec<f64>,
    pub gap_Z: Vec<f64>,
}

/// Reconstructs (Y*_T, Z*_T) and (𝒀*, 𝒁*) from stored coupled ensembles.
pub fn build_adjoint_paths(
    problem: &ProblemData,
    path: &RiccatiPath,
    are: &ArePair,
    stat: &StaticSolution,
    optimal: &RawPaths,
    turnpike: &RawPaths,
) -> Result<AdjointGaps> {
    if optimal.seed != turnpike.seed
        || optimal.dt != turnpike.dt
        || optimal.n_paths != turnpike.n_paths
        || optimal.nodes != turnpike.nodes
        || optimal.n != turnpike.n
        || optimal.m != turnpike.m
        || !optimal.coupled
        || !turnpike.coupled
    {
        return Err(MflqError::EnsembleMismatch(
            "ensembles must come from the same coupled configuration".into(),
        ));
    }
    if optimal.nodes != path.mesh.len() || optimal.n != problem.dims.n || optimal.m != problem.dims.m {
        return Err(MflqError::MeshMismatch(
            "ensembles do not match the Riccati path".into(),
        ));
    }
    check_static(problem, stat)?;
    let n = problem.dims.n;
    let x0 = Vector::from_column_slice(optimal.X(0, 0));
    let kernel = OptimalKernel::new(problem, path, stat, &x0)?;
    let tk = TurnpikeKernel::new(problem, are, stat);
    let nodes = optimal.nodes;
    let mut gap_Y = vec![0.0; nodes];
    let mut gap_Z = vec![0.0; nodes];
    let mut xt = vec![0.0; n];
    let mut xs = vec![0.0; n];
    let (mut y, mut z, mut yt, mut zt) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for p in 0..optimal.n_paths {
        for k in 0..nodes {
            for i in 0..n {
                xt[i] = optimal.X(p, k)[i] - stat.x_star[i];
                xs[i] = turnpike.X(p, k)[i] - stat.x_star[i];
            }
            y.copy_from_slice(&kernel.y[k * n..(k + 1) * n]);
            matvec_add(&kernel.PT[k * n * n..(k + 1) * n * n], n, n, &xt, &mut y);
            z.copy_from_slice(&kernel.z[k * n..(k + 1) * n]);
            matvec_add(&kernel.W[k * n * n..(k + 1) * n * n], n, n, &xt, &mut z);
            yt.copy_from_slice(&tk.lambda);
            matvec_add(&tk.P, n, n, &xs, &mut yt);
            zt.copy_from_slice(&tk.p_sigma);
            matvec_add(&tk.PG, n, n, &xs, &mut zt);
            gap_Y[k] += sq_dist(&y, &yt);
            gap_Z[k] += sq_dist(&z, &zt);
        }
    }
    let nf = optimal.n_paths as f64;
    gap_Y.iter_mut().chain(gap_Z.iter_mut()).for_each(|v| *v /= nf);
    Ok(AdjointGaps { gap_Y, gap_Z })
}

/// Trapezoidal cost per path, averaged, with the mean-field quadratic terms on ensemble means.
pub fn estimate_cost(problem: &ProblemData, optimal: &RawPaths, config: &SimulationConfig) -> Result<CostEstimate> {
    let (n, m) = (problem.dims.n, problem.dims.m);
    if optimal.n != n || optimal.m != m || optimal.n_paths == 0 || optimal.nodes < 2 {
        return Err(MflqError::EnsembleMismatch("paths do not fit the problem".into()));
    }
    if (optimal.dt - config.dt).abs() > MESH_TOL * config.dt {
        return Err(MflqError::MeshMismatch(
            "path step differs from the configuration".into(),
        ));
    }
    let (Q, S, R) = (flat(&problem.Q), flat(&problem.S), flat(&problem.R));
    let nodes = optimal.nodes;
    let dt = optimal.dt;
    let (mut sum, mut sq) = (0.0, 0.0);
    let mut mean_x = vec![Vector::zeros(n); nodes];
    let mut mean_u = vec![Vector::zeros(m); nodes];
    for p in 0..optimal.n_paths {
        let mut c = 0.0;
        for k in 0..nodes {
            let w = if k == 0 || k + 1 == nodes { 0.5 * dt } else { dt };
            let (x, u) = (optimal.X(p, k), optimal.u(p, k));
            c += w * running_cost(&Q, &S, &R, problem.q.as_slice(), problem.r.as_slice(), x, u);
            for i in 0..n {
                mean_x[k][i] += x[i];
            }
            for i in 0..m {
                mean_u[k][i] += u[i];
            }
        }
        sum += c;
        sq += c * c;
    }
    let nf = optimal.n_paths as f64;
    let stats = EnsembleStats {
        mesh: optimal.mesh(),
        mean_X: mean_x.into_iter().map(|v| v / nf).collect(),
        mean_u: mean_u.into_iter().map(|v| v / nf).collect(),
        second_moment_X: Vec::new(),
        second_moment_u: Vec::new(),
        gap_X: None,
        gap_u: None,
        gap_Y: None,
        gap_Z: None,
        cost_estimate: None,
    };
    Ok(finish_cost(problem, &stats, dt, sum, sq, optimal.n_paths))
}

/// Result of one streaming coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOutcome {
    /// Optimal-pair moments with all four gap series and the cost estimate.
    pub optimal: EnsembleStats,
    pub turnpike: EnsembleStats,
    /// Analytic closed-loop mean E[X] − x*.
    pub analytic_mean: Vec<Vector>,
    pub mean_Y: Vec<Vector>,
    pub mean_Z: Vec<Vector>,
    /// Max-abs residual of the expected stationarity condition at each node.
    pub stationarity_residual: Vec<f64>,
}

impl CoupledOutcome {
    /// Trapezoidal time average of the stationarity residual.
    pub fn mean_stationarity_residual(&self) -> f64 {
        let T = *self.optimal.mesh.last().unwrap();
        let dt = self.optimal.mesh[1] - self.optimal.mesh[0];
        trapezoid(&self.stationarity_residual, dt) / T
    }
}

/// Streaming coupled simulation of both ensembles; only per-node moments are kept.
///
/// If `raw_sink` is given, optimal-ensemble paths are written to it in the binary layout.
pub fn simulate_coupled(
    problem: &ProblemData,
    path: &RiccatiPath,
    are: &ArePair,
    stat: &StaticSolution,
    x0: &Vector,
    config: &SimulationConfig,
    raw_sink: Option<&mut dyn Write>,
) -> Result<CoupledOutcome> {
    let steps = config.steps()?;
    check_path_mesh(path, config, steps)?;
    check_static(problem, stat)?;
    let (n, m) = (problem.dims.n, problem.dims.m);
    let engine = Engine {
        problem,
        stat,
        optimal: Some(OptimalKernel::new(problem, path, stat, x0)?),
        turnpike: Some(TurnpikeKernel::new(problem, are, stat)),
        config: *config,
        steps,
        layout: Layout::new(n, m),
        record: if raw_sink.is_some() {
            Record::Optimal
        } else {
            Record::Nothing
        },
    };
    let out = match raw_sink {
        Some(w) => {
            write_raw_header(w, n, m, steps + 1, config.n_paths)?;
            engine.run(|rows| write_f64s(w, rows))?
        }
        None => engine.run(|_| Ok(()))?,
    };
    let lay = engine.layout;
    let with_gaps = config.coupled;
    let mut optimal = stats_from(&path.mesh, &out.sums, lay, n, m, config.n_paths, false, with_gaps);
    optimal.cost_estimate = Some(finish_cost(
        problem,
        &optimal,
        config.dt,
        out.cost_sum,
        out.cost_sq,
        config.n_paths,
    ));
    let turnpike = stats_from(&path.mesh, &out.sums, lay, n, m, config.n_paths, true, false);

    let nf = config.n_paths as f64;
    let nodes = steps + 1;
    let row = |k: usize| &out.sums[k * lay.width..(k + 1) * lay.width];
    let mean_Y: Vec<Vector> = (0..nodes)
        .map(|k| Vector::from_iterator(n, row(k)[lay.o_y..lay.o_y + n].iter().map(|v| v / nf)))
        .collect();
    let mean_Z: Vec<Vector> = (0..nodes)
        .map(|k| Vector::from_iterator(n, row(k)[lay.o_z..lay.o_z + n].iter().map(|v| v / nf)))
        .collect();
    let hats = model::assemble_hats(problem);
    let stationarity_residual = (0..nodes)
        .map(|k| {
            let res = hats.B.transpose() * &mean_Y[k]
                + hats.D.transpose() * &mean_Z[k]
                + &hats.S * &optimal.mean_X[k]
                + &hats.R * &optimal.mean_u[k]
                + &problem.r;
            linalg::max_abs_vec(&res)
        })
        .collect();
    Ok(CoupledOutcome {
        analytic_mean: propagate_mean(problem, path, x0, &stat.x_star)?,
        optimal,
        turnpike,
        mean_Y,
        mean_Z,
        stationarity_residual,
    })
}
