//! SAGE-style refinement: per-path Levenberg-Marquardt plus a joint linear
//! solve for the path weights after every sweep.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::model::{Atom, Context, AZ_R, AZ_T, EL_R, EL_T, S, TAU};
use crate::lm::{levenberg_marquardt, Linearization, LmOptions, LmProblem, LmStatus, Normal};
use crate::synth::Path;

/// Fit of one path `γ s(μ)` to a partial residual `x`.
///
/// Parameters are `[τ ns, φ_T, (θ_T), φ_R, (θ_R), Re γ, Im γ]`; elevations
/// are included only for arrays that resolve elevation.
pub struct PathProblem<'a> {
    pub ctx: Context<'a>,
    pub x: &'a [Complex64],
    pub base: Path,
}

impl PathProblem<'_> {
    /// Structural parameter indices (into the atom derivative list) in
    /// parameter-vector order.
    fn structural(&self) -> Vec<usize> {
        let mut k = vec![TAU, AZ_T];
        if self.ctx.estimate_tx_elevation() {
            k.push(EL_T);
        }
        k.push(AZ_R);
        if self.ctx.estimate_rx_elevation() {
            k.push(EL_R);
        }
        k
    }

    pub fn pack(&self, p: &Path) -> Vec<f64> {
        let mut v = Vec::with_capacity(7);
        for k in self.structural() {
            v.push(match k {
                TAU => p.delay_ns,
                AZ_T => p.tx.azimuth,
                EL_T => p.tx.elevation,
                AZ_R => p.rx.azimuth,
                _ => p.rx.elevation,
            });
        }
        v.push(p.weight.re);
        v.push(p.weight.im);
        v
    }

    pub fn unpack(&self, v: &[f64]) -> Path {
        let mut p = self.base.clone();
        for (k, &val) in self.structural().iter().zip(v) {
            match *k {
                TAU => p.delay_ns = val,
                AZ_T => p.tx.azimuth = val,
                EL_T => p.tx.elevation = val,
                AZ_R => p.rx.azimuth = val,
                _ => p.rx.elevation = val,
            }
        }
        let n = v.len();
        p.weight = Complex64::new(v[n - 2], v[n - 1]);
        p
    }

    fn atom(&self, p: &Path) -> Atom {
        self.ctx.atom(p.delay_ns, p.tx, p.rx)
    }
}

impl LmProblem for PathProblem<'_> {
    fn cost(&self, v: &[f64]) -> f64 {
        let p = self.unpack(v);
        self.atom(&p).residual_energy(self.x, p.weight)
    }

    fn linearize(&self, v: &[f64]) -> Linearization {
        let p = self.unpack(v);
        let atom = self.atom(&p);
        let gamma = p.weight;
        let gram = atom.gram();
        let cx = atom.contract(self.x);
        // columns of the complex Jacobian: (derivative index, coefficient)
        let mut cols: Vec<(usize, Complex64)> = self.structural().into_iter().map(|k| (k, gamma)).collect();
        cols.push((S, Complex64::new(1.0, 0.0)));
        cols.push((S, Complex64::new(0.0, 1.0)));
        let n = cols.len();
        let mut normal = DMatrix::zeros(n, n);
        let mut gradient = vec![0.0; n];
        for (a, &(ka, ca)) in cols.iter().enumerate() {
            // c_aᴴ r with r = γ s - x
            gradient[a] = (ca.conj() * (gram[ka][S] * gamma - cx[ka])).re;
            for (b, &(kb, cb)) in cols.iter().enumerate() {
                normal[(a, b)] = (ca.conj() * cb * gram[ka][kb]).re;
            }
        }
        Linearization { cost: atom.residual_energy(self.x, gamma), gradient, normal: Normal::Dense(normal) }
    }
}

/// Joint fit of all paths to `y`; the parameter vector is the
/// concatenation of the per-path vectors of [`PathProblem`].
pub struct JointProblem<'a> {
    pub ctx: Context<'a>,
    pub y: &'a [Complex64],
    pub base: Vec<Path>,
}

impl JointProblem<'_> {
    fn single(&self, i: usize) -> PathProblem<'_> {
        PathProblem { ctx: self.ctx, x: self.y, base: self.base[i].clone() }
    }

    fn width(&self) -> usize {
        self.single(0).structural().len() + 2
    }

    pub fn pack(&self, paths: &[Path]) -> Vec<f64> {
        paths.iter().enumerate().flat_map(|(i, p)| self.single(i).pack(p)).collect()
    }

    pub fn unpack(&self, v: &[f64]) -> Vec<Path> {
        v.chunks_exact(self.width()).enumerate().map(|(i, c)| self.single(i).unpack(c)).collect()
    }
}

impl LmProblem for JointProblem<'_> {
    fn cost(&self, v: &[f64]) -> f64 {
        energy(&super::model::residual(&self.ctx, self.y, &self.unpack(v)))
    }

    fn linearize(&self, v: &[f64]) -> Linearization {
        let paths = self.unpack(v);
        let atoms: Vec<Atom> = paths.iter().map(|p| self.ctx.path_atom(p)).collect();
        let structural = self.single(0).structural();
        let w = structural.len() + 2;
        let n = w * paths.len();
        let cols = |p: &Path| {
            let mut c: Vec<(usize, Complex64)> = structural.iter().map(|&k| (k, p.weight)).collect();
            c.push((S, Complex64::new(1.0, 0.0)));
            c.push((S, Complex64::new(0.0, 1.0)));
            c
        };
        let mut normal = DMatrix::zeros(n, n);
        let mut gradient = vec![0.0; n];
        for (i, (ai, pi)) in atoms.iter().zip(&paths).enumerate() {
            let ci = cols(pi);
            let cx = ai.contract(self.y);
            // ⟨d_k, Σ γ_q s_q⟩
            let mut model = [Complex64::default(); 6];
            for (j, (aj, pj)) in atoms.iter().zip(&paths).enumerate() {
                let g = ai.cross_gram(aj);
                for (k, m) in model.iter_mut().enumerate() {
                    *m += g[k][S] * pj.weight;
                }
                if j < i {
                    continue;
                }
                let cj = cols(pj);
                for (a, &(ka, ca)) in ci.iter().enumerate() {
                    for (b, &(kb, cb)) in cj.iter().enumerate() {
                        let val = (ca.conj() * cb * g[ka][kb]).re;
                        normal[(i * w + a, j * w + b)] = val;
                        normal[(j * w + b, i * w + a)] = val;
                    }
                }
            }
            for (a, &(ka, ca)) in ci.iter().enumerate() {
                gradient[i * w + a] = (ca.conj() * (model[ka] - cx[ka])).re;
            }
        }
        Linearization { cost: self.cost(v), gradient, normal: Normal::Dense(normal) }
    }
}

/// Levenberg-Marquardt over all paths at once.
pub fn fit_joint(ctx: Context, y: &[Complex64], start: &[Path], opts: &LmOptions) -> (Vec<Path>, LmStatus) {
    if start.is_empty() {
        return (Vec::new(), LmStatus::GradientTolerance);
    }
    let problem = JointProblem { ctx, y, base: start.to_vec() };
    let r = levenberg_marquardt(&problem, &problem.pack(start), opts);
    let mut paths = problem.unpack(&r.x);
    for p in &mut paths {
        p.tx = p.tx.canonical();
        p.rx = p.rx.canonical();
    }
    (paths, r.status)
}

/// Fits one path to `x` starting from `start`.
pub fn fit_path(ctx: Context, x: &[Complex64], start: &Path, opts: &LmOptions) -> (Path, LmStatus) {
    let problem = PathProblem { ctx, x, base: start.clone() };
    let r = levenberg_marquardt(&problem, &problem.pack(start), opts);
    let mut p = problem.unpack(&r.x);
    p.tx = p.tx.canonical();
    p.rx = p.rx.canonical();
    (p, r.status)
}

/// Least-squares weights for fixed structural parameters. Returns `None`
/// if the basis is numerically singular.
pub fn solve_weights(ctx: &Context, y: &[Complex64], paths: &[Path]) -> Option<Vec<Complex64>> {
    let atoms: Vec<Atom> = paths.iter().map(|p| ctx.path_atom(p)).collect();
    let n = atoms.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let gram = DMatrix::from_fn(n, n, |i, j| atoms[i].cross(&atoms[j]));
    let rhs = DVector::from_iterator(n, atoms.iter().map(|a| a.project(y)));
    let sol = gram.cholesky()?.solve(&rhs);
    sol.iter().all(|v| v.re.is_finite() && v.im.is_finite()).then(|| sol.iter().copied().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub paths: Vec<Path>,
    /// Residual energy before the first sweep and after each sweep.
    pub cost_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Set when a sweep increased the cost; `paths` is then the best
    /// iterate seen.
    pub diverged: bool,
}

fn energy(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

/// Per-path sweeps until the relative improvement drops below `tol`, then
/// up to `joint_iterations` joint Levenberg-Marquardt steps.
pub fn refine(
    ctx: Context,
    y: &[Complex64],
    start: &[Path],
    opts: &LmOptions,
    max_sweeps: usize,
    tol: f64,
    joint_iterations: usize,
) -> Refinement {
    let mut paths = start.to_vec();
    let mut resid = super::model::residual(&ctx, y, &paths);
    let mut cost = energy(&resid);
    let mut trace = vec![cost];
    let mut best = (cost, paths.clone());
    let mut converged = paths.is_empty();
    let mut diverged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps && !converged {
        sweeps += 1;
        for i in 0..paths.len() {
            let old = ctx.path_atom(&paths[i]);
            old.add_to(&mut resid, paths[i].weight);
            let (p, _) = fit_path(ctx, &resid, &paths[i], opts);
            ctx.path_atom(&p).add_to(&mut resid, -p.weight);
            paths[i] = p;
        }
        resid = super::model::residual(&ctx, y, &paths);
        if let Some(w) = solve_weights(&ctx, y, &paths) {
            let mut trial = paths.clone();
            trial.iter_mut().zip(&w).for_each(|(p, &g)| p.weight = g);
            let r = super::model::residual(&ctx, y, &trial);
            if energy(&r) <= energy(&resid) {
                paths = trial;
                resid = r;
            }
        }
        let new_cost = energy(&resid);
        trace.push(new_cost);
        if new_cost < best.0 {
            best = (new_cost, paths.clone());
        }
        if new_cost > cost * (1.0 + 1e-12) {
            diverged = true;
            break;
        }
        converged = cost == 0.0 || (cost - new_cost) <= tol * cost;
        cost = new_cost;
    }
    if diverged {
        paths = best.1;
    }
    if joint_iterations > 0 && !paths.is_empty() {
        let (joint, _) = fit_joint(ctx, y, &paths, &LmOptions { max_iterations: joint_iterations, ..*opts });
        let c = energy(&super::model::residual(&ctx, y, &joint));
        if c <= best.0.min(cost) {
            trace.push(c);
            paths = joint;
        }
    }
    Refinement { paths, cost_trace: trace, sweeps, converged, diverged }
}
