//! Box averages for `ℤ₊^d` and `ℝ₊^d` actions.
//!
//! Continuous actions are generated by bounded generators `L = λ(Φ − id)`;
//! the per-axis average `(1/a)∫₀^a e^{tL} dt = φ₁(aL)` with
//! `φ₁(z) = Σ z^k/(k+1)!` is evaluated by scaling and doubling.

use std::sync::RwLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{loewner_leq, AlgebraContext};
use crate::certificate::Certificate;
use crate::error::{Error, Result};
use crate::linalg::{self, apply_superop, real, transpose_permutation, Mat};
use crate::maps::{random_kernel, Collapse, KernelSpec, PositiveMapRep};

pub const COMMUTE_TOL: f64 = 1e-11;
/// Largest `‖aL‖₁` accepted before the series is refused.
pub const OVERFLOW_GUARD: f64 = 700.0;

fn check_commuting(superops: &[Mat], tol: f64) -> Result<()> {
    for i in 0..superops.len() {
        for j in i + 1..superops.len() {
            let norm = linalg::max_abs(&linalg::commutator(&superops[i], &superops[j]));
            if norm > tol {
                return Err(Error::NonCommuting { norm });
            }
        }
    }
    Ok(())
}

/// Commuting maps `T_1..T_d` with cached powers.
#[derive(Debug)]
pub struct DiscreteAction {
    k: usize,
    maps: Vec<PositiveMapRep>,
    powers: RwLock<Vec<Vec<Mat>>>,
}

impl DiscreteAction {
    pub fn new(maps: Vec<PositiveMapRep>) -> Result<Self> {
        let k = maps.first().map(PositiveMapRep::dim).ok_or_else(|| {
            Error::InvalidKernel("an action needs at least one map".into())
        })?;
        let superops: Vec<Mat> = maps.iter().map(|m| m.superop().clone()).collect();
        check_commuting(&superops, COMMUTE_TOL)?;
        let powers = superops
            .into_iter()
            .map(|_| vec![linalg::identity(k * k)])
            .collect();
        Ok(Self {
            k,
            maps,
            powers: RwLock::new(powers),
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn rank(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[PositiveMapRep] {
        &self.maps
    }

    /// `T_i^j` as a superoperator.
    pub fn power(&self, i: usize, j: usize) -> Mat {
        if let Some(p) = self.powers.read().expect("power cache").get(i).and_then(|v| v.get(j)) {
            return p.clone();
        }
        let mut cache = self.powers.write().expect("power cache");
        let row = &mut cache[i];
        while row.len() <= j {
            let next = self.maps[i].superop() * row.last().expect("identity seeded");
            row.push(next);
        }
        row[j].clone()
    }

    /// `(1/n) Σ_{j<n} T_i^j`.
    pub fn axis_average(&self, i: usize, n: usize) -> Mat {
        let mut s = Mat::zeros(self.k * self.k, self.k * self.k);
        for j in 0..n {
            s += self.power(i, j);
        }
        s / real(n as f64)
    }

    /// Superoperator of `A_n`: the average of `T^u` over `u ∈ {0..n-1}^d`.
    pub fn box_average_superop(&self, n: usize) -> Mat {
        assert!(n >= 1, "box averages start at n = 1");
        let mut a = linalg::identity(self.k * self.k);
        for i in 0..self.rank() {
            a = a * self.axis_average(i, n);
        }
        a
    }

    pub fn box_average(&self, n: usize, f: &Mat) -> Mat {
        apply_superop(&self.box_average_superop(n), f)
    }

    /// Predual side `Y ↦ A_n*(Y)`, the τ-density of `μ∘A_n`.
    pub fn box_average_dual(&self, n: usize, y: &Mat) -> Mat {
        let p = transpose_permutation(self.k);
        let dual = &p * self.box_average_superop(n).transpose() * &p;
        apply_superop(&dual, y)
    }
}

/// `exp(A)` and `φ₁(A)` together, with an a-priori remainder bound.
#[derive(Debug, Clone)]
pub struct SeriesEval {
    pub exp: Mat,
    pub phi1: Mat,
    pub terms: usize,
    pub doublings: u32,
    pub remainder_bound: f64,
}

pub fn exp_and_phi1(a: &Mat, series_tol: f64) -> Result<SeriesEval> {
    let n = a.nrows();
    let norm = linalg::one_norm(a);
    if norm > OVERFLOW_GUARD {
        return Err(Error::SeriesOverflow { bound: norm });
    }
    let mut doublings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > 0.5 {
        scaled_norm /= 2.0;
        doublings += 1;
    }
    let b = a / real(2f64.powi(doublings as i32));
    let mut e = linalg::identity(n);
    let mut f = linalg::identity(n);
    let mut term = linalg::identity(n);
    let mut factorial = 1.0;
    let mut k = 0usize;
    let mut bound;
    // term_k = B^k / k!; exp gets term_k, φ₁ gets term_k / (k+1)
    loop {
        k += 1;
        term = &term * &b / real(k as f64);
        factorial *= k as f64;
        e += &term;
        f += &term / real((k + 1) as f64);
        bound = scaled_norm.powi(k as i32 + 1) / (factorial * (k + 1) as f64) * 2.0;
        if bound < series_tol * f64::EPSILON.max(1e-18) || k > 60 || scaled_norm == 0.0 {
            break;
        }
    }
    let one = linalg::identity(n);
    for _ in 0..doublings {
        f = &f * (&e + &one) * real(0.5);
        e = &e * &e;
    }
    Ok(SeriesEval {
        exp: e,
        phi1: f,
        terms: k,
        doublings,
        remainder_bound: bound * norm.exp(),
    })
}

/// `T_t = Π exp(t_i L_i)` with `L_i = λ_i(Φ_i − id)`.
#[derive(Debug, Clone)]
pub struct ContinuousAction {
    k: usize,
    generators: Vec<Mat>,
    pub rates: Vec<f64>,
    pub series_tol: f64,
}

impl ContinuousAction {
    pub fn new(maps: &[PositiveMapRep], rates: &[f64]) -> Result<Self> {
        let k = maps.first().map(PositiveMapRep::dim).ok_or_else(|| {
            Error::InvalidKernel("an action needs at least one generator".into())
        })?;
        if maps.len() != rates.len() || rates.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("one positive rate per generator".into()));
        }
        let one = linalg::identity(k * k);
        let generators: Vec<Mat> = maps
            .iter()
            .zip(rates)
            .map(|(m, r)| (m.superop() - &one) * real(*r))
            .collect();
        check_commuting(&generators, 1e-10)?;
        Ok(Self {
            k,
            generators,
            rates: rates.to_vec(),
            series_tol: 1.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn rank(&self) -> usize {
        self.generators.len()
    }

    pub fn generator(&self, i: usize) -> &Mat {
        &self.generators[i]
    }

    /// Superoperator of `T_t`.
    pub fn semigroup(&self, t: &[f64]) -> Result<Mat> {
        let mut out = linalg::identity(self.k * self.k);
        for (l, ti) in self.generators.iter().zip(t) {
            out = out * exp_and_phi1(&(l * real(*ti)), self.series_tol)?.exp;
        }
        Ok(out)
    }

    /// Time-one maps `S_i = exp(L_i)`.
    pub fn time_one(&self) -> Result<Vec<Mat>> {
        self.generators
            .iter()
            .map(|l| exp_and_phi1(l, self.series_tol).map(|s| s.exp))
            .collect()
    }

    /// Superoperator of `M_a` and the summed remainder bound.
    pub fn box_average_superop(&self, a: f64) -> Result<(Mat, f64)> {
        if !(a > 0.0) {
            return Err(Error::Config(format!("averaging length must be positive, got {a}")));
        }
        let mut out = linalg::identity(self.k * self.k);
        let mut remainder = 0.0;
        for l in &self.generators {
            let s = exp_and_phi1(&(l * real(a)), self.series_tol)?;
            remainder += s.remainder_bound;
            out = out * s.phi1;
        }
        Ok((out, remainder))
    }

    /// `M_{2^j}` for `j = 0..=max_log2` by `M_{2a} = M_a(1 + T_a)/2` per axis,
    /// which stays clear of the series guard at large `a`.
    pub fn dyadic_box_averages(&self, max_log2: u32) -> Result<Vec<Mat>> {
        let one = linalg::identity(self.k * self.k);
        let mut axes: Vec<(Mat, Mat)> = self
            .generators
            .iter()
            .map(|l| exp_and_phi1(l, self.series_tol).map(|s| (s.phi1, s.exp)))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(max_log2 as usize + 1);
        for j in 0..=max_log2 {
            if j > 0 {
                for (m, t) in axes.iter_mut() {
                    *m = &*m * (&*t + &one) * real(0.5);
                    *t = &*t * &*t;
                }
            }
            out.push(axes.iter().fold(one.clone(), |acc, (m, _)| acc * m));
        }
        Ok(out)
    }

    pub fn box_average(&self, a: f64, f: &Mat) -> Result<Mat> {
        Ok(apply_superop(&self.box_average_superop(a)?.0, f))
    }
}

/// Seeded bounded-generator semigroup over a random kernel.
pub fn random_semigroup(seed: u64, k: usize, d: usize) -> Result<(AlgebraContext, ContinuousAction)> {
    let kernel = random_kernel(
        seed,
        KernelSpec {
            collapse: Collapse::Random,
            ..KernelSpec::new(k, d)
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_6d_67);
    let rates: Vec<f64> = (0..d).map(|_| 0.2 + 1.8 * rng.random::<f64>()).collect();
    let action = ContinuousAction::new(&kernel.maps, &rates)?;
    Ok((kernel.context, action))
}

/// `M_a(f) ⪯ (1/n^d) Σ_{j∈{0..n}^d} S^j M_1(f)` with `n = ⌊a⌋`.
pub fn discretization_check(
    action: &ContinuousAction,
    a: f64,
    f_samples: &[Mat],
    tol: f64,
) -> Result<Certificate> {
    if a < 1.0 {
        return Err(Error::Config(format!("discretization needs a ≥ 1, got {a}")));
    }
    let n = a.floor() as usize;
    let kk = action.dim() * action.dim();
    let (lhs, remainder) = action.box_average_superop(a)?;
    let (m1, _) = action.box_average_superop(1.0)?;
    let mut rhs = linalg::identity(kk);
    for s in action.time_one()? {
        let mut sum = Mat::zeros(kk, kk);
        let mut p = linalg::identity(kk);
        for _ in 0..=n {
            sum += &p;
            p = &p * &s;
        }
        rhs = rhs * sum / real(n as f64);
    }
    let rhs = rhs * m1;
    let mut cert = Certificate::new("discretization", tol)
        .constant("a", a)
        .constant("n", n as f64)
        .constant("series_remainder", remainder);
    for f in f_samples {
        let l = linalg::hermitian_part(&apply_superop(&lhs, f));
        let r = linalg::hermitian_part(&apply_superop(&rhs, f));
        let (_, margin) = loewner_leq(&l, &r, tol)?;
        cert.record(margin, f);
    }
    Ok(cert)
}

/// `|I_l Δ (I_l + u)| / l^d` for integer boxes, exactly.
pub fn folner_ratio_discrete(l: u64, u: &[u64]) -> BigRational {
    assert!(l > 0);
    let mut overlap = BigRational::one();
    for &ui in u {
        let keep = l.saturating_sub(ui);
        overlap *= BigRational::new(BigInt::from(keep), BigInt::from(l));
    }
    (BigRational::one() - overlap) * BigRational::from_integer(BigInt::from(2))
}

/// The same ratio for real boxes `[0, a)^d`.
pub fn folner_ratio_continuous(a: f64, u: &[f64]) -> f64 {
    let overlap: f64 = u.iter().map(|ui| (1.0 - ui / a).max(0.0)).product();
    2.0 * (1.0 - overlap)
}

/// Brute-force symmetric difference count for small boxes.
pub fn folner_count_brute(l: u64, u: &[u64]) -> u64 {
    let d = u.len();
    let mut in_box = std::collections::HashSet::new();
    let mut shifted = std::collections::HashSet::new();
    let total = (l as usize).pow(d as u32);
    for idx in 0..total {
        let mut rem = idx as u64;
        let mut p = Vec::with_capacity(d);
        for _ in 0..d {
            p.push(rem % l);
            rem /= l;
        }
        let q: Vec<u64> = p.iter().zip(u).map(|(a, b)| a + b).collect();
        in_box.insert(p);
        shifted.insert(q);
    }
    in_box.symmetric_difference(&shifted).count() as u64
}
