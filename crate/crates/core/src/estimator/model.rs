//! Single-path signal atoms and their Kronecker-structured inner products.

use num_complex::Complex64;

use crate::array::Direction;
use crate::eadf::{Eadf, EadfSample};
use crate::error::{Error, Result};
use crate::synth::{delay_response, Dims, FrequencyPlan, Path, SystemResponse};

/// Index of the atom and its five structural derivatives.
pub const S: usize = 0;
pub const TAU: usize = 1;
pub const AZ_T: usize = 2;
pub const EL_T: usize = 3;
pub const AZ_R: usize = 4;
pub const EL_R: usize = 5;

/// Everything fixed during an estimation run.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub tx: &'a Eadf,
    pub rx: &'a Eadf,
    pub g: &'a [Complex64],
    /// Normalized delay per ns.
    pub tau_scale: f64,
    pub dims: Dims,
}

impl<'a> Context<'a> {
    pub fn new(dims: Dims, tx: &'a Eadf, rx: &'a Eadf, sys: &'a SystemResponse, plan: &FrequencyPlan) -> Result<Self> {
        if tx.n_beams() != dims.n_tx || rx.n_beams() != dims.n_rx {
            return Err(Error::Dimension(format!(
                "EADFs have {}x{} beams, observation has {}x{}",
                tx.n_beams(),
                rx.n_beams(),
                dims.n_tx,
                dims.n_rx
            )));
        }
        if sys.len() != dims.n_freq || plan.count != dims.n_freq {
            return Err(Error::Dimension(format!("{} frequencies, observation has {}", sys.len(), dims.n_freq)));
        }
        Ok(Self { tx, rx, g: &sys.g, tau_scale: plan.normalize_delay(1.0), dims })
    }

    pub fn estimate_tx_elevation(&self) -> bool {
        !self.tx.azimuth_only()
    }

    pub fn estimate_rx_elevation(&self) -> bool {
        !self.rx.azimuth_only()
    }

    pub fn atom(&self, delay_ns: f64, tx: Direction, rx: Direction) -> Atom {
        let bf = delay_response(self.g, self.tau_scale * delay_ns);
        let center = (bf.len() as f64 - 1.0) / 2.0;
        let dbf = bf
            .iter()
            .enumerate()
            .map(|(m, b)| b * Complex64::new(0.0, -(m as f64 - center) * self.tau_scale))
            .collect();
        Atom {
            bf,
            dbf,
            t: self.tx.evaluate_with_gradient(tx),
            r: self.rx.evaluate_with_gradient(rx),
            n_time: self.dims.n_time,
        }
    }

    pub fn path_atom(&self, p: &Path) -> Atom {
        self.atom(p.delay_ns, p.tx, p.rx)
    }
}

/// `s = 1_T ⊗ b_T ⊗ b_R ⊗ b_f` with its derivative factors.
pub struct Atom {
    pub bf: Vec<Complex64>,
    pub dbf: Vec<Complex64>,
    pub t: EadfSample,
    pub r: EadfSample,
    pub n_time: usize,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

impl Atom {
    fn factors(&self, k: usize) -> (&[Complex64], &[Complex64], &[Complex64]) {
        let t = match k {
            AZ_T => &self.t.d_azimuth,
            EL_T => &self.t.d_elevation,
            _ => &self.t.value,
        };
        let r = match k {
            AZ_R => &self.r.d_azimuth,
            EL_R => &self.r.d_elevation,
            _ => &self.r.value,
        };
        let f = if k == TAU { &self.dbf } else { &self.bf };
        (t, r, f)
    }

    /// Inner products `⟨d_k, d_l⟩` of the atom and its derivatives.
    pub fn gram(&self) -> [[Complex64; 6]; 6] {
        let mut out = [[Complex64::default(); 6]; 6];
        for k in 0..6 {
            let (tk, rk, fk) = self.factors(k);
            for l in k..6 {
                let (tl, rl, fl) = self.factors(l);
                let v = dot(tk, tl) * dot(rk, rl) * dot(fk, fl) * self.n_time as f64;
                out[k][l] = v;
                out[l][k] = v.conj();
            }
        }
        out
    }

    /// `⟨d_k, e_l⟩` where `e` are the derivatives of `other`.
    pub fn cross_gram(&self, other: &Atom) -> [[Complex64; 6]; 6] {
        let mut out = [[Complex64::default(); 6]; 6];
        for (k, row) in out.iter_mut().enumerate() {
            let (tk, rk, fk) = self.factors(k);
            for (l, v) in row.iter_mut().enumerate() {
                let (tl, rl, fl) = other.factors(l);
                *v = dot(tk, tl) * dot(rk, rl) * dot(fk, fl) * self.n_time as f64;
            }
        }
        out
    }

    /// `⟨s_a, s_b⟩` between two atoms.
    pub fn cross(&self, other: &Atom) -> Complex64 {
        dot(&self.t.value, &other.t.value) * dot(&self.r.value, &other.r.value) * dot(&self.bf, &other.bf) * self.n_time as f64
    }

    pub fn energy(&self) -> f64 {
        self.cross(self).re
    }

    /// `⟨d_k, x⟩` for the atom and its five derivatives.
    pub fn contract(&self, x: &[Complex64]) -> [Complex64; 6] {
        let (nf, nr, nt) = (self.bf.len(), self.r.value.len(), self.t.value.len());
        let mut out = [Complex64::default(); 6];
        for t in 0..self.n_time {
            for ix in 0..nt {
                // contractions over rx: [s, tau, az_r, el_r]
                let mut v = [Complex64::default(); 4];
                for ir in 0..nr {
                    let base = ((t * nt + ix) * nr + ir) * nf;
                    let block = &x[base..base + nf];
                    let u0 = dot(&self.bf, block);
                    let u1 = dot(&self.dbf, block);
                    let r = self.r.value[ir].conj();
                    v[0] += r * u0;
                    v[1] += r * u1;
                    v[2] += self.r.d_azimuth[ir].conj() * u0;
                    v[3] += self.r.d_elevation[ir].conj() * u0;
                }
                let tc = self.t.value[ix].conj();
                out[S] += tc * v[0];
                out[TAU] += tc * v[1];
                out[AZ_R] += tc * v[2];
                out[EL_R] += tc * v[3];
                out[AZ_T] += self.t.d_azimuth[ix].conj() * v[0];
                out[EL_T] += self.t.d_elevation[ix].conj() * v[0];
            }
        }
        out
    }

    /// `⟨s, x⟩` only.
    pub fn project(&self, x: &[Complex64]) -> Complex64 {
        let (nf, nr, nt) = (self.bf.len(), self.r.value.len(), self.t.value.len());
        let mut acc = Complex64::default();
        for t in 0..self.n_time {
            for ix in 0..nt {
                let mut v = Complex64::default();
                for ir in 0..nr {
                    let base = ((t * nt + ix) * nr + ir) * nf;
                    v += self.r.value[ir].conj() * dot(&self.bf, &x[base..base + nf]);
                }
                acc += self.t.value[ix].conj() * v;
            }
        }
        acc
    }

    /// `y += coef · s`.
    pub fn add_to(&self, y: &mut [Complex64], coef: Complex64) {
        let (nf, nr, nt) = (self.bf.len(), self.r.value.len(), self.t.value.len());
        for t in 0..self.n_time {
            for ix in 0..nt {
                let w = coef * self.t.value[ix];
                for ir in 0..nr {
                    let wr = w * self.r.value[ir];
                    let base = ((t * nt + ix) * nr + ir) * nf;
                    for (o, b) in y[base..base + nf].iter_mut().zip(&self.bf) {
                        *o += wr * b;
                    }
                }
            }
        }
    }

    /// `‖x - coef · s‖²` evaluated directly.
    pub fn residual_energy(&self, x: &[Complex64], coef: Complex64) -> f64 {
        let (nf, nr, nt) = (self.bf.len(), self.r.value.len(), self.t.value.len());
        let mut acc = 0.0;
        for t in 0..self.n_time {
            for ix in 0..nt {
                let w = coef * self.t.value[ix];
                for ir in 0..nr {
                    let wr = w * self.r.value[ir];
                    let base = ((t * nt + ix) * nr + ir) * nf;
                    for (o, b) in x[base..base + nf].iter().zip(&self.bf) {
                        acc += (o - wr * b).norm_sqr();
                    }
                }
            }
        }
        acc
    }
}

/// `y - Σ γ_p s_p` for the given paths.
pub fn residual(ctx: &Context, y: &[Complex64], paths: &[Path]) -> Vec<Complex64> {
    let mut r = y.to_vec();
    for p in paths {
        ctx.path_atom(p).add_to(&mut r, -p.weight);
    }
    r
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::eadf::{compute_eadf, ComplexPattern};
    use crate::synth::synthesize_specular;

    pub(crate) fn smooth_eadf(beams: usize, n_el: usize, seed: f64) -> Eadf {
        let p = ComplexPattern::sample(beams, 24, n_el, |d| {
            (0..beams)
                .map(|b| {
                    let u = 3.0 * (d.azimuth.sin() * d.elevation.sin() - (b as f64 - 1.0) * 0.3);
                    Complex64::from_polar(1.0 + 0.2 * (b as f64 + seed).cos() * d.elevation.sin(), u + seed * b as f64)
                })
                .collect()
        })
        .unwrap();
        compute_eadf(&p, None).unwrap()
    }

    pub(crate) fn setup() -> (Eadf, Eadf, SystemResponse, FrequencyPlan, Dims) {
        let plan = FrequencyPlan::new(28e9, 100e6, 16);
        let g: Vec<Complex64> = (0..16).map(|m| Complex64::from_polar(1.0 + 0.01 * m as f64, 0.05 * m as f64)).collect();
        let sys = SystemResponse::new(g, &plan).unwrap();
        let dims = Dims { n_freq: 16, n_rx: 4, n_tx: 3, n_time: 2 };
        (smooth_eadf(3, 9, 0.3), smooth_eadf(4, 9, 1.1), sys, plan, dims)
    }

    #[test]
    fn atom_matches_synthesis() {
        let (tx, rx, sys, plan, dims) = setup();
        let ctx = Context::new(dims, &tx, &rx, &sys, &plan).unwrap();
        let p = Path::new(37.2, Direction::new(0.3, 1.2), Direction::new(-0.5, 1.9), Complex64::new(0.7, -0.2));
        let obs = synthesize_specular(&crate::synth::PathSet::new(vec![p.clone()]), &tx, &rx, &sys, &plan, dims).unwrap();
        let mut y = vec![Complex64::default(); dims.len()];
        ctx.path_atom(&p).add_to(&mut y, p.weight);
        assert!(y.iter().zip(&obs.y).all(|(a, b)| (a - b).norm() < 1e-12));
        let a = ctx.path_atom(&p);
        assert!((a.residual_energy(&obs.y, p.weight)).abs() < 1e-20);
        assert!((a.project(&obs.y) - p.weight * a.energy()).norm() < 1e-10 * a.energy());
    }

    #[test]
    fn gram_and_contract_agree_with_dense_vectors() {
        let (tx, rx, sys, plan, dims) = setup();
        let ctx = Context::new(dims, &tx, &rx, &sys, &plan).unwrap();
        let a = ctx.atom(12.0, Direction::new(0.4, 1.4), Direction::new(-0.2, 1.7));
        // dense derivative vectors by finite differences of the synthesized atom
        let dense = |d: f64, k: usize| {
            let mut v = vec![Complex64::default(); dims.len()];
            let (mut tau, mut t, mut r) = (12.0, Direction::new(0.4, 1.4), Direction::new(-0.2, 1.7));
            match k {
                TAU => tau += d,
                AZ_T => t.azimuth += d,
                EL_T => t.elevation += d,
                AZ_R => r.azimuth += d,
                EL_R => r.elevation += d,
                _ => {}
            }
            ctx.atom(tau, t, r).add_to(&mut v, Complex64::new(1.0, 0.0));
            v
        };
        let h = 1e-6;
        let vecs: Vec<Vec<Complex64>> = (0..6)
            .map(|k| {
                if k == S {
                    dense(0.0, S)
                } else {
                    dense(h, k).iter().zip(dense(-h, k)).map(|(p, m)| (p - m) / (2.0 * h)).collect()
                }
            })
            .collect();
        let g = a.gram();
        let x: Vec<Complex64> = (0..dims.len()).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let c = a.contract(&x);
        for k in 0..6 {
            let ck: Complex64 = vecs[k].iter().zip(&x).map(|(u, v)| u.conj() * v).sum();
            assert!((ck - c[k]).norm() < 1e-5 * ck.norm().max(1.0), "contract {k}");
            for l in 0..6 {
                let gkl: Complex64 = vecs[k].iter().zip(&vecs[l]).map(|(u, v)| u.conj() * v).sum();
                assert!((gkl - g[k][l]).norm() < 1e-4 * gkl.norm().max(1.0), "gram {k},{l}: {gkl} vs {}", g[k][l]);
            }
        }
    }
}
