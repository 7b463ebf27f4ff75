//! Free-group sphere averages and their transfer constants.
//!
//! Letters of `F_r` are `0..r` for the generators and `r..2r` for their
//! inverses. A homomorphism into unitaries gives `φ(a_i) = Ad(u_i)`, and the
//! sphere averages `σ_n` then obey `σ₁σ_n = wσ_{n+1} + (1−w)σ_{n−1}` with
//! `w = (2r−1)/(2r)`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraContext, GnsSpace};
use crate::certificate::Certificate;
use crate::error::{Error, Result};
use crate::limits::fixed_space;
use crate::linalg::{self, eigh, max_abs, real, sandwich_superop, Mat, C64};
use crate::maps::{commutant_lift, PositiveMapRep};

pub const ENUMERATION_CAP: usize = 1_000_000;
pub const SIGMA_POSITIVITY_TOL: f64 = 1e-8;
pub const SIGMA_POSITIVITY_SAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReducedWord {
    pub r: usize,
    pub letters: Vec<usize>,
}

pub fn inverse_letter(r: usize, l: usize) -> usize {
    (l + r) % (2 * r)
}

impl ReducedWord {
    pub fn empty(r: usize) -> Self {
        Self { r, letters: vec![] }
    }

    /// Free reduction of an arbitrary letter sequence.
    pub fn reduce(r: usize, letters: &[usize]) -> Self {
        let mut out: Vec<usize> = Vec::with_capacity(letters.len());
        for &l in letters {
            if out.last() == Some(&inverse_letter(r, l)) {
                out.pop();
            } else {
                out.push(l);
            }
        }
        Self { r, letters: out }
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn is_reduced(&self) -> bool {
        self.letters
            .windows(2)
            .all(|p| p[1] != inverse_letter(self.r, p[0]))
    }

    pub fn concat(&self, other: &ReducedWord) -> ReducedWord {
        let mut all = self.letters.clone();
        all.extend(&other.letters);
        ReducedWord::reduce(self.r, &all)
    }

    pub fn inverse(&self) -> ReducedWord {
        ReducedWord {
            r: self.r,
            letters: self
                .letters
                .iter()
                .rev()
                .map(|&l| inverse_letter(self.r, l))
                .collect(),
        }
    }
}

pub fn sphere_size(r: usize, n: usize) -> u128 {
    if n == 0 {
        1
    } else {
        2 * r as u128 * (2 * r as u128 - 1).pow(n as u32 - 1)
    }
}

/// All reduced words of length `n`, refused above `cap` words.
pub fn enumerate_sphere_capped(r: usize, n: usize, cap: usize) -> Result<Vec<ReducedWord>> {
    if r < 2 {
        return Err(Error::Config(format!("free groups here have rank r ≥ 2 (got {r})")));
    }
    let count = sphere_size(r, n);
    if count > cap as u128 {
        return Err(Error::EnumerationCap { r, n, count, cap });
    }
    let mut level = vec![ReducedWord::empty(r)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(level.len() * (2 * r - 1));
        for w in &level {
            let forbidden = w.letters.last().map(|&l| inverse_letter(r, l));
            for l in 0..2 * r {
                if Some(l) != forbidden {
                    let mut letters = w.letters.clone();
                    letters.push(l);
                    next.push(ReducedWord { r, letters });
                }
            }
        }
        level = next;
    }
    Ok(level)
}

pub fn enumerate_sphere(r: usize, n: usize) -> Result<Vec<ReducedWord>> {
    enumerate_sphere_capped(r, n, ENUMERATION_CAP)
}

fn letter_unitary(us: &[Mat], l: usize) -> Mat {
    let r = us.len();
    if l < r {
        us[l].clone()
    } else {
        us[l - r].adjoint()
    }
}

/// `u_word` with `φ(word)(x) = u_word* x u_word`.
fn word_unitary(us: &[Mat], w: &ReducedWord) -> Mat {
    let k = us[0].nrows();
    w.letters
        .iter()
        .rev()
        .fold(linalg::identity(k), |acc, &l| acc * letter_unitary(us, l))
}

/// Literal `σ_n(x) = |W_n|⁻¹ Σ_{a∈W_n} φ(a)(x)`.
pub fn sphere_average_direct(us: &[Mat], n: usize, x: &Mat) -> Result<Mat> {
    let words = enumerate_sphere(us.len(), n)?;
    let mut sum = Mat::zeros(x.nrows(), x.ncols());
    for w in &words {
        let u = word_unitary(us, w);
        sum += u.adjoint() * x * u;
    }
    Ok(sum / real(words.len() as f64))
}

/// Superoperator of `σ_n` by the literal word sum.
pub fn sphere_superop_direct(us: &[Mat], n: usize) -> Result<Mat> {
    let words = enumerate_sphere(us.len(), n)?;
    let k = us[0].nrows();
    let mut sum = Mat::zeros(k * k, k * k);
    for w in &words {
        let u = word_unitary(us, w);
        sum += sandwich_superop(&u.adjoint(), &u);
    }
    Ok(sum / real(words.len() as f64))
}

/// `σ₁` of the conjugation action of `u_1..u_r`.
pub fn sigma_one(us: &[Mat]) -> Result<PositiveMapRep> {
    let weight = 1.0 / (2 * us.len()) as f64;
    let ads: Vec<PositiveMapRep> = (0..2 * us.len())
        .map(|l| PositiveMapRep::conjugation(&letter_unitary(us, l)))
        .collect();
    let parts: Vec<(f64, &PositiveMapRep)> = ads.iter().map(|a| (weight, a)).collect();
    PositiveMapRep::combination(&parts)
}

pub fn free_w(r: usize) -> BigRational {
    BigRational::new(BigInt::from(2 * r - 1), BigInt::from(2 * r))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A2Row {
    pub n: usize,
    pub residual: f64,
}

/// `‖σ₁σ_n − wσ_{n+1} − (1−w)σ_{n−1}‖` with every `σ` from word sums.
pub fn verify_a2_free(us: &[Mat], n_max: usize) -> Result<Vec<A2Row>> {
    let w = free_w(us.len()).to_f64().expect("finite");
    let sigmas: Vec<Mat> = (0..=n_max + 1)
        .map(|n| sphere_superop_direct(us, n))
        .collect::<Result<_>>()?;
    Ok((1..=n_max)
        .map(|n| {
            let lhs = &sigmas[1] * &sigmas[n];
            let rhs = &sigmas[n + 1] * real(w) + &sigmas[n - 1] * real(1.0 - w);
            A2Row {
                n,
                residual: max_abs(&(lhs - rhs)),
            }
        })
        .collect())
}

/// `σ₀ = id`, `σ_{n+1} = (σ₁σ_n − (1−w)σ_{n−1})/w`, materialized on demand.
#[derive(Debug, Clone)]
pub struct SigmaSequence {
    pub sigma1: PositiveMapRep,
    pub w: BigRational,
    w_f64: f64,
    superops: Vec<Mat>,
}

impl SigmaSequence {
    pub fn new(sigma1: PositiveMapRep, w: BigRational) -> Result<Self> {
        let half = BigRational::new(BigInt::from(1), BigInt::from(2));
        if w <= half || w > BigRational::one() {
            return Err(Error::Config(format!("w must lie in (1/2, 1], got {w}")));
        }
        let k = sigma1.dim();
        let w_f64 = w.to_f64().expect("finite");
        Ok(Self {
            superops: vec![linalg::identity(k * k), sigma1.superop().clone()],
            sigma1,
            w,
            w_f64,
        })
    }

    pub fn w(&self) -> f64 {
        self.w_f64
    }

    pub fn dim(&self) -> usize {
        self.sigma1.dim()
    }

    pub fn materialize(&mut self, n: usize) {
        while self.superops.len() <= n {
            let len = self.superops.len();
            let next = (self.sigma1.superop() * &self.superops[len - 1]
                - &self.superops[len - 2] * real(1.0 - self.w_f64))
                / real(self.w_f64);
            self.superops.push(next);
        }
    }

    pub fn sigma(&mut self, n: usize) -> &Mat {
        self.materialize(n);
        &self.superops[n]
    }

    /// `S_n = (1/(n+1)) Σ_{j≤n} σ_j`.
    pub fn cesaro(&mut self, n: usize) -> Mat {
        self.materialize(n);
        let sum = self.superops[..=n]
            .iter()
            .fold(Mat::zeros(self.superops[0].nrows(), self.superops[0].ncols()), |a, s| a + s);
        sum / real((n + 1) as f64)
    }

    pub fn a2_residual(&mut self, n: usize) -> f64 {
        self.materialize(n + 1);
        let lhs = self.sigma1.superop() * &self.superops[n];
        let rhs = &self.superops[n + 1] * real(self.w_f64)
            + &self.superops[n - 1] * real(1.0 - self.w_f64);
        max_abs(&(lhs - rhs))
    }

    /// Least eigenvalue of `σ_j(P)` over sampled rank-one projections, `j ≤ n`.
    pub fn positivity_margin(&mut self, n: usize, rng: &mut impl Rng, samples: usize) -> f64 {
        self.materialize(n);
        let k = self.dim();
        let ps: Vec<Mat> = (0..samples)
            .map(|_| linalg::random_rank_one_projection(rng, k))
            .collect();
        self.superops[..=n]
            .iter()
            .flat_map(|s| ps.iter().map(move |p| linalg::min_eigenvalue(&linalg::apply_superop(s, p))))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `a_n(l)` with `σ₁ⁿ = Σ_l a_n(l) σ_l`, exact in rational `w`.
#[derive(Debug, Clone)]
pub struct TransferCoeffs {
    pub w: BigRational,
    pub rows: Vec<Vec<BigRational>>,
}

impl TransferCoeffs {
    pub fn new(w: BigRational) -> Self {
        Self {
            w,
            rows: vec![vec![BigRational::one()]],
        }
    }

    pub fn extend_to(&mut self, n: usize) {
        let one_minus = BigRational::one() - &self.w;
        while self.rows.len() <= n {
            let prev = self.rows.last().expect("row 0 seeded");
            let len = prev.len() + 1;
            let mut next = vec![BigRational::zero(); len];
            for (m, slot) in next.iter_mut().enumerate() {
                let mut v = BigRational::zero();
                if m == 1 {
                    v += &prev[0];
                }
                if m >= 2 && m - 1 < prev.len() {
                    v += &self.w * &prev[m - 1];
                }
                if m + 1 < prev.len() {
                    v += &one_minus * &prev[m + 1];
                }
                *slot = v;
            }
            self.rows.push(next);
        }
    }

    pub fn row(&mut self, n: usize) -> &[BigRational] {
        self.extend_to(n);
        &self.rows[n]
    }

    pub fn get(&mut self, n: usize, l: usize) -> BigRational {
        self.row(n).get(l).cloned().unwrap_or_else(BigRational::zero)
    }
}

/// `C_w ≈ max_{n≤n_max} (3n+1)/((n+1)·min_{m≤n} Σ_{l≤3n} a_l(m))`.
pub fn estimate_cw(w: &BigRational, n_max: usize) -> BigRational {
    let mut coeffs = TransferCoeffs::new(w.clone());
    coeffs.extend_to(3 * n_max);
    let mut prefix = vec![BigRational::zero(); 3 * n_max + 1];
    let mut upto = 0usize;
    let mut best = BigRational::one();
    for n in 0..=n_max {
        while upto <= 3 * n {
            for (m, a) in coeffs.rows[upto].iter().enumerate() {
                prefix[m] += a;
            }
            upto += 1;
        }
        let min = prefix[..=n].iter().min().expect("n ≥ 0").clone();
        let ratio = BigRational::new(BigInt::from(3 * n + 1), BigInt::from(n + 1)) / min;
        if ratio > best {
            best = ratio;
        }
    }
    best
}

/// Operator form `S_n(f) ⪯ C_w/(3n+1) Σ_{l≤3n} σ₁^l(f)` on rank-one `f`.
pub fn transfer_inequality_check(
    seq: &mut SigmaSequence,
    c_w: f64,
    n_max: usize,
    rng: &mut impl Rng,
    samples: usize,
    tol: f64,
) -> Certificate {
    let k = seq.dim();
    let mut cert = Certificate::new("free-transfer", tol).constant("c_w", c_w);
    let s1 = seq.sigma1.superop().clone();
    let mut powers = vec![linalg::identity(k * k)];
    while powers.len() <= 3 * n_max {
        let next = &s1 * powers.last().expect("seeded");
        powers.push(next);
    }
    let fs: Vec<Mat> = (0..samples)
        .map(|_| linalg::random_rank_one_projection(rng, k))
        .collect();
    for n in 1..=n_max {
        let lhs = seq.cesaro(n);
        let rhs = powers[..=3 * n]
            .iter()
            .fold(Mat::zeros(k * k, k * k), |a, p| a + p)
            * real(c_w / (3 * n + 1) as f64);
        let gap = rhs - lhs;
        for f in &fs {
            cert.record(linalg::min_eigenvalue(&linalg::apply_superop(&gap, f)), f);
        }
    }
    cert
}

/// `|√(z+4w−4w²) ± √(z−4w+4w²)| ≤ 2√w` for both signs.
pub fn dw_membership(z: C64, w: f64) -> bool {
    let c = 4.0 * w - 4.0 * w * w;
    let a = (z + c).sqrt();
    let b = (z - c).sqrt();
    let bound = 2.0 * w.sqrt();
    (a + b).norm() <= bound + 1e-12 && (a - b).norm() <= bound + 1e-12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub w: f64,
    pub hermiticity: f64,
    pub eigenvalues: Vec<f64>,
    pub members: Vec<bool>,
    pub fixed_rank: usize,
    pub complement_eigenvalues: Vec<f64>,
    pub complement_members: Vec<bool>,
}

/// Spectrum of `u₁` on the GNS space against `D_w`; never asserted.
pub fn spectrum_report(ctx: &AlgebraContext, sigma1: &PositiveMapRep, w: f64) -> Result<SpectrumReport> {
    let gns = GnsSpace::new(ctx.clone());
    let u1 = gns.operator(sigma1.superop());
    let hermiticity = linalg::hermiticity_deviation(&u1);
    let eigenvalues = eigh(&u1).values;
    let fixed = fixed_space(std::slice::from_ref(&u1))?;
    let complement = linalg::column_space(&(linalg::identity(u1.nrows()) - &fixed.projection), 0.5);
    let complement_eigenvalues = eigh(&(complement.adjoint() * &u1 * &complement)).values;
    let member = |v: &f64| dw_membership(C64::new(*v, 0.0), w);
    Ok(SpectrumReport {
        w,
        hermiticity,
        members: eigenvalues.iter().map(member).collect(),
        complement_members: complement_eigenvalues.iter().map(member).collect(),
        eigenvalues,
        fixed_rank: fixed.rank(),
        complement_eigenvalues,
    })
}

/// Exact check of `Σ_{l≤n} σ′_l(y′ − σ′₁y′) = w(y′ − σ′_{n+1}y′) − (1−w)σ′₁y′ + (1−w)σ′_n y′`
/// on coefficient vectors over `σ′_0y′..σ′_{n+1}y′`.
pub fn telescoping_identity(w: &BigRational, n: usize) -> bool {
    let one_minus = BigRational::one() - w;
    let mut lhs = vec![BigRational::zero(); n + 2];
    for l in 0..=n {
        lhs[l] += BigRational::one();
        // σ_l σ_1 = σ_1 for l = 0, else wσ_{l+1} + (1−w)σ_{l−1}
        if l == 0 {
            lhs[1] -= BigRational::one();
        } else {
            lhs[l + 1] -= w;
            lhs[l - 1] -= &one_minus;
        }
    }
    let mut rhs = vec![BigRational::zero(); n + 2];
    rhs[0] += w;
    rhs[n + 1] -= w;
    rhs[1] -= &one_minus;
    rhs[n] += &one_minus;
    lhs == rhs
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayRow {
    pub k: usize,
    pub n: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayTable {
    pub w: f64,
    pub y_norm: f64,
    pub rows: Vec<DecayRow>,
    /// `2‖y′‖/(n+1)` held for `k = 1` at every `n`.
    pub envelope_holds: bool,
    /// Worst `(n+1)·‖S′_n(y′ − σ′₁y′)‖/‖y′‖`.
    pub envelope_ratio: f64,
    /// Whether `(1+w)‖y′‖/(n+1)` also held.
    pub tight_envelope_holds: bool,
    /// Per `k`, the first `n` after which every entry stays below `1e-3‖y′‖`.
    pub thresholds: Vec<(usize, Option<usize>)>,
}

/// `‖S′_n(y′ − σ′_k(y′))‖` in commutant norm for `k ≤ k_max`, `n ≤ n_max`.
pub fn commutant_decay(
    ctx: &AlgebraContext,
    sigma1: &PositiveMapRep,
    w: f64,
    y: &Mat,
    k_max: usize,
    n_max: usize,
) -> Result<DecayTable> {
    let gns = GnsSpace::new(ctx.clone());
    let lift = commutant_lift(ctx, sigma1)?;
    let l = lift.matrix().clone();
    let dim = ctx.dim();
    let norm = |v: &linalg::Vector| gns.right_norm(&linalg::unvec(v, dim));
    let y_vec = linalg::vec(y);
    let y_norm = norm(&y_vec);
    let step = |prev: &linalg::Vector, cur: &linalg::Vector| (&l * cur - prev * real(1.0 - w)) / real(w);
    // σ′_j(y′) for j ≤ k_max
    let mut sig = vec![y_vec.clone(), &l * &y_vec];
    while sig.len() <= k_max {
        let n = sig.len();
        let next = step(&sig[n - 2], &sig[n - 1]);
        sig.push(next);
    }
    let mut rows = Vec::new();
    let mut envelope_ratio: f64 = 0.0;
    let mut tight = true;
    let mut thresholds = Vec::new();
    for k in 1..=k_max {
        let z = &y_vec - &sig[k];
        let mut prev = z.clone();
        let mut cur = &l * &z;
        let mut sum = &prev + &cur;
        let mut last_big = None;
        for n in 0..=n_max {
            if n >= 2 {
                let next = step(&prev, &cur);
                prev = cur;
                cur = next;
                sum += &cur;
            }
            let value = if n == 0 {
                norm(&z)
            } else {
                norm(&(&sum / real((n + 1) as f64)))
            };
            if k == 1 {
                envelope_ratio = envelope_ratio.max(value * (n + 1) as f64 / y_norm.max(f64::MIN_POSITIVE));
                tight &= value <= (1.0 + w) * y_norm / (n + 1) as f64 + 1e-12;
            }
            if value >= 1e-3 * y_norm {
                last_big = Some(n);
            }
            rows.push(DecayRow { k, n, norm: value });
        }
        let threshold = match last_big {
            None => Some(0),
            Some(n) if n < n_max => Some(n + 1),
            Some(_) => None,
        };
        thresholds.push((k, threshold));
    }
    Ok(DecayTable {
        w,
        y_norm,
        rows,
        envelope_holds: envelope_ratio <= 2.0 + 1e-9,
        envelope_ratio,
        tight_envelope_holds: tight,
        thresholds,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GeneralizedSpec {
    pub k: usize,
    pub r: usize,
    pub condition: f64,
    /// Permutation unitaries on a diagonal density (commuting diagonal data).
    pub diagonal: bool,
}

impl GeneralizedSpec {
    pub fn new(k: usize, r: usize) -> Self {
        Self {
            k,
            r,
            condition: 8.0,
            diagonal: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneralizedKernel {
    pub context: AlgebraContext,
    pub unitaries: Vec<Mat>,
    pub sigma1: PositiveMapRep,
    pub w: BigRational,
    /// Block sizes of the eigenvalue multiplicities of `D`.
    pub blocks: Vec<usize>,
}

impl GeneralizedKernel {
    pub fn sequence(&self) -> Result<SigmaSequence> {
        SigmaSequence::new(self.sigma1.clone(), self.w.clone())
    }

    pub fn w_f64(&self) -> f64 {
        self.w.to_f64().expect("finite")
    }
}

fn random_blocks(rng: &mut impl Rng, k: usize) -> Vec<usize> {
    let mut blocks = Vec::new();
    let mut left = k;
    while left > 0 {
        let size = rng.random_range(1..=left.min(3));
        blocks.push(size);
        left -= size;
    }
    blocks
}

/// Conjugation action of `F_r` by unitaries commuting with `D`.
///
/// `D` has eigenvalue blocks, and each `u_i` is block diagonal in its
/// eigenbasis, so `σ₁` is `ρ`-preserving and `ρ`-self-adjoint.
pub fn generalized_kernel(seed: u64, spec: GeneralizedSpec) -> Result<GeneralizedKernel> {
    if spec.k < 2 || spec.r < 2 {
        return Err(Error::Config(format!(
            "generalized kernels need k ≥ 2 and r ≥ 2 (got k={}, r={})",
            spec.k, spec.r
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = random_blocks(&mut rng, spec.k);
    let mut diag = Vec::with_capacity(spec.k);
    for &b in &blocks {
        let v = spec.condition.powf(rng.random::<f64>());
        diag.extend(std::iter::repeat_n(v, b));
    }
    let total: f64 = diag.iter().sum();
    let diag: Vec<f64> = diag.iter().map(|v| v * spec.k as f64 / total).collect();
    let basis = if spec.diagonal {
        linalg::identity(spec.k)
    } else {
        linalg::random_unitary(&mut rng, spec.k)
    };
    let density = &basis * linalg::from_real_diagonal(&diag) * basis.adjoint();
    let context = AlgebraContext::new(linalg::hermitian_part(&density))?;
    let mut unitaries = Vec::with_capacity(spec.r);
    for _ in 0..spec.r {
        let mut u = Mat::zeros(spec.k, spec.k);
        let mut offset = 0;
        for &b in &blocks {
            let block = if spec.diagonal {
                random_permutation(&mut rng, b)
            } else {
                linalg::random_unitary(&mut rng, b)
            };
            u.view_mut((offset, offset), (b, b)).copy_from(&block);
            offset += b;
        }
        unitaries.push(&basis * u * basis.adjoint());
    }
    let sigma1 = sigma_one(&unitaries)?.verified(&context);
    Ok(GeneralizedKernel {
        context,
        sigma1,
        w: free_w(spec.r),
        unitaries,
        blocks,
    })
}

fn random_permutation(rng: &mut impl Rng, n: usize) -> Mat {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut m = Mat::zeros(n, n);
    for (i, &p) in perm.iter().enumerate() {
        m[(p, i)] = linalg::ONE;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::SelfAdjointFunctional;
    use crate::limits::{mean_limit, Averaging, IterativeOptions};
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use std::collections::BTreeSet;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn sphere_counts() {
        assert_eq!(enumerate_sphere(2, 0).unwrap().len(), 1);
        assert_eq!(enumerate_sphere(2, 1).unwrap().len(), 4);
        let w3 = enumerate_sphere(2, 3).unwrap();
        assert_eq!(w3.len(), 36);
        assert!(w3.iter().all(|w| w.is_reduced() && w.len() == 3));
        assert_eq!(w3.iter().collect::<BTreeSet<_>>().len(), 36);
        // brute force over all letter strings
        let brute = (0..64)
            .map(|i| vec![i % 4, (i / 4) % 4, i / 16])
            .filter(|l| ReducedWord { r: 2, letters: l.clone() }.is_reduced())
            .count();
        assert_eq!(brute, 36);
        assert_eq!(enumerate_sphere(3, 4).unwrap().len() as u128, sphere_size(3, 4));
        assert!(matches!(
            enumerate_sphere(2, 14),
            Err(Error::EnumerationCap { .. })
        ));
    }

    #[test]
    fn reduction() {
        let w = ReducedWord::reduce(2, &[0, 1, 3, 2, 0]);
        assert_eq!(w.letters, vec![0]);
        assert_eq!(ReducedWord::reduce(2, &w.letters), w);
        let a = ReducedWord::reduce(2, &[0, 1]);
        let b = ReducedWord::reduce(2, &[1, 0]);
        assert_eq!(a.concat(&b).len(), 4);
        assert!(a.concat(&a.inverse()).is_empty());
    }

    #[test]
    fn direct_average_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let us = vec![linalg::random_unitary(&mut rng, 3), linalg::random_unitary(&mut rng, 3)];
        let x = linalg::random_hermitian(&mut rng, 3);
        assert!(max_abs(&(sphere_average_direct(&us, 0, &x).unwrap() - &x)) < 1e-14);
        let expect = (us[0].adjoint() * &x * &us[0]
            + &us[0] * &x * us[0].adjoint()
            + us[1].adjoint() * &x * &us[1]
            + &us[1] * &x * us[1].adjoint())
            / real(4.0);
        assert!(max_abs(&(sphere_average_direct(&us, 1, &x).unwrap() - expect)) < 1e-13);
        let trivial = vec![linalg::identity(3); 2];
        assert!(max_abs(&(sphere_average_direct(&trivial, 4, &x).unwrap() - &x)) < 1e-13);
    }

    #[test]
    fn a2_pins_free_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 2..=4 {
            let us = vec![linalg::random_unitary(&mut rng, k), linalg::random_unitary(&mut rng, k)];
            let rows = verify_a2_free(&us, 6).unwrap();
            assert!(rows.iter().all(|r| r.residual <= 1e-10), "k={k}");
        }
        assert_eq!(free_w(2), q(3, 4));
    }

    #[test]
    fn recurrence_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let us = vec![linalg::random_unitary(&mut rng, 3), linalg::random_unitary(&mut rng, 3)];
        let mut seq = SigmaSequence::new(sigma_one(&us).unwrap(), free_w(2)).unwrap();
        for n in 0..=8 {
            let direct = sphere_superop_direct(&us, n).unwrap();
            assert!(max_abs(&(direct - seq.sigma(n))) < 1e-9, "n={n}");
        }
        assert!(seq.a2_residual(5) < 1e-12);
        assert!(seq.positivity_margin(8, &mut rng, 50) > -SIGMA_POSITIVITY_TOL);
    }

    #[test]
    fn transfer_coefficient_examples() {
        let w = q(3, 4);
        let mut c = TransferCoeffs::new(w.clone());
        assert_eq!(c.get(2, 2), w.clone());
        assert_eq!(c.get(2, 0), q(1, 4));
        assert_eq!(c.get(3, 3), &w * &w);
        assert_eq!(c.get(3, 1), BigRational::one() - &w * &w);
        for wv in [q(3, 4), q(5, 8), q(9, 10), q(1, 1)] {
            let mut c = TransferCoeffs::new(wv);
            c.extend_to(200);
            for (n, row) in c.rows.iter().enumerate() {
                let s: BigRational = row.iter().sum();
                assert!(s.is_one(), "n={n}");
                for (l, a) in row.iter().enumerate() {
                    assert!(*a >= BigRational::zero());
                    if (l + n) % 2 == 1 {
                        assert!(a.is_zero());
                    }
                }
            }
        }
    }

    #[test]
    fn transfer_coefficients_match_operator_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let us = vec![linalg::random_unitary(&mut rng, 2), linalg::random_unitary(&mut rng, 2)];
        let mut seq = SigmaSequence::new(sigma_one(&us).unwrap(), free_w(2)).unwrap();
        let mut c = TransferCoeffs::new(free_w(2));
        let s1 = seq.sigma1.superop().clone();
        let mut power = linalg::identity(4);
        for n in 0..8 {
            let row = c.row(n).to_vec();
            let combo = row.iter().enumerate().fold(Mat::zeros(4, 4), |acc, (l, a)| {
                acc + seq.sigma(l) * real(a.to_f64().unwrap())
            });
            assert!(max_abs(&(combo - &power)) < 1e-12, "n={n}");
            power = &s1 * power;
        }
    }

    #[test]
    fn cw_estimates() {
        let cases = [(q(3, 4), 1.978), (q(5, 8), 5.977), (q(9, 10), 2.638), (q(1, 1), 2.967)];
        for (w, expect) in cases {
            let c = estimate_cw(&w, 60).to_f64().unwrap();
            assert!((c - expect).abs() < 5e-3, "w={w}: {c}");
        }
        // w = 3/4 creeps up to 2, approaching 2 − 4/(3(n_max+1))
        let mut last = BigRational::zero();
        for n_max in [10usize, 20, 40, 60] {
            let c = estimate_cw(&q(3, 4), n_max);
            assert!(c >= last);
            last = c.clone();
            let closed = 2.0 - 4.0 / (3.0 * (n_max + 1) as f64);
            let c = c.to_f64().unwrap();
            assert!(c < 2.0 && c >= closed - 1e-12);
            if n_max >= 40 {
                assert!(c - closed < 1e-8, "n_max={n_max}");
            }
        }
    }

    #[test]
    fn dw_examples() {
        let w: f64 = 0.75;
        assert!(dw_membership(C64::new(2.0 * (w * (1.0 - w)).sqrt(), 0.0), w));
        assert!(!dw_membership(C64::new(1.0, 0.0), w));
        for w in [0.55, 0.75, 0.9, 1.0] {
            assert!(dw_membership(C64::new(0.0, 0.0), w));
        }
        let threshold = w * (1.0 + 4.0 * (1.0 - w) * (1.0 - w));
        assert!(dw_membership(C64::new(threshold - 1e-6, 0.0), w));
        assert!(!dw_membership(C64::new(threshold + 1e-6, 0.0), w));
    }

    #[test]
    fn telescoping_is_exact() {
        for w in [q(3, 4), q(5, 8), q(1, 1)] {
            assert!((0..=200).all(|n| telescoping_identity(&w, n)));
        }
    }

    #[test]
    fn trivial_and_fixed_decay() {
        let ctx = AlgebraContext::tracial(3);
        let trivial = sigma_one(&[linalg::identity(3), linalg::identity(3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = linalg::random_hermitian(&mut rng, 3);
        let t = commutant_decay(&ctx, &trivial, 0.75, &y, 3, 20).unwrap();
        assert!(t.rows.iter().all(|r| r.norm < 1e-12));
        let gk = generalized_kernel(4, GeneralizedSpec::new(3, 2)).unwrap();
        let t = commutant_decay(&gk.context, &gk.sigma1, 0.75, &gk.context.identity(), 3, 20).unwrap();
        assert!(t.rows.iter().all(|r| r.norm < 1e-10));
    }

    #[test]
    fn generalized_kernels_are_valid() {
        for seed in 0..10 {
            for diagonal in [false, true] {
                let gk = generalized_kernel(seed, GeneralizedSpec { diagonal, ..GeneralizedSpec::new(4, 2) }).unwrap();
                let f = gk.sigma1.flags;
                assert!(f.cp.is_true() && f.rho_preserving.is_true() && f.rho_selfadjoint.is_true());
                let report = spectrum_report(&gk.context, &gk.sigma1, gk.w_f64()).unwrap();
                assert!(report.hermiticity < 1e-10);
                assert!(report.eigenvalues.iter().all(|v| (-1.0 - 1e-9..=1.0 + 1e-9).contains(v)));
                assert!(report.fixed_rank >= 1);
                if diagonal {
                    let d = gk.context.density();
                    let off = (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)));
                    assert!(off.clone().all(|(i, j)| d[(i, j)].norm() < 1e-14));
                    assert!(gk.unitaries.iter().all(|u| off.clone().all(|(i, j)| u[(i, j)].norm() == 0.0 || u[(i, j)].norm() == 1.0)));
                }
            }
        }
    }

    #[test]
    fn transfer_inequality_on_kernel() {
        let gk = generalized_kernel(5, GeneralizedSpec::new(3, 2)).unwrap();
        let c_w = estimate_cw(&gk.w, 60).to_f64().unwrap();
        let mut seq = gk.sequence().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cert = transfer_inequality_check(&mut seq, c_w, 10, &mut rng, 50, 1e-9);
        assert!(cert.passed, "{}", cert.worst_margin);
    }

    #[test]
    fn sphere_mean_limit_routes_agree() {
        let gk = generalized_kernel(6, GeneralizedSpec::new(3, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mu = SelfAdjointFunctional::from_density(linalg::random_hermitian(&mut rng, 3)).unwrap();
        let avg = Averaging::Sphere { sigma1: gk.sigma1.clone(), w: gk.w_f64() };
        let ml = mean_limit(&mu, &avg, IterativeOptions::default(), 6).unwrap();
        assert!(ml.agreement < 1e-8, "{}", ml.agreement);
        assert!(ml.invariance < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn decay_envelope(seed in any::<u64>(), k in 2usize..5) {
            let gk = generalized_kernel(seed, GeneralizedSpec::new(k, 2)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = linalg::random_hermitian(&mut rng, k);
            let t = commutant_decay(&gk.context, &gk.sigma1, gk.w_f64(), &y, 3, 200).unwrap();
            prop_assert!(t.envelope_holds, "{}", t.envelope_ratio);
        }
    }
}
