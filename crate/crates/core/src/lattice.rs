//! Construction-A nested lattice pair, the coset map between F_p^k and
//! Λ_f/Λ_w, and discrete Gaussian sampling over cosets of the coarse lattice.
//!
//! The fine lattice is Λ_f = γ(C + pZⁿ) for a linear code C = rowspace(G) of
//! rank k over F_p; the coarse lattice is Λ_w = γpZⁿ. Since Λ_w is a scaled
//! cubic lattice its Voronoi cell is the centered cube [-pγ/2, pγ/2)ⁿ, and
//! coset representatives live in that cube.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::check_prime;
use crate::seed;

/// Lattice membership tolerance, relative to γ.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Sampler tail cut, in units of σ.
pub const TAIL_SIGMAS: f64 = 12.0;

const MAX_COSETS: u64 = 1 << 20;

/// Serialized description of a nested pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    pub n: usize,
    pub p: u32,
    pub k: usize,
    pub gamma: f64,
    #[serde(rename = "G_code")]
    pub g_code: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "LatticeParams", try_from = "LatticeParams")]
pub struct NestedLatticePair {
    n: usize,
    p: u32,
    k: usize,
    gamma: f64,
    g_code: Vec<Vec<u32>>,
    // All p^k codewords, row-major, indexed by the base-p integer of u
    // (u[0] least significant).
    codewords: Vec<u32>,
    pivots: Vec<usize>,
    // Inverse of the k x k submatrix of G on the pivot columns.
    pivot_inverse: Vec<Vec<u32>>,
}

impl From<NestedLatticePair> for LatticeParams {
    fn from(pair: NestedLatticePair) -> Self {
        pair.params()
    }
}

impl TryFrom<LatticeParams> for NestedLatticePair {
    type Error = Error;

    fn try_from(params: LatticeParams) -> Result<Self> {
        NestedLatticePair::new(params.n, params.p, params.k, params.gamma, Some(params.g_code))
    }
}

/// Centered residue: r maps to r - p when 2r >= p, so every coordinate lands
/// in [-p/2, p/2).
pub fn center(r: u32, p: u32) -> i64 {
    if 2 * r as u64 >= p as u64 {
        r as i64 - p as i64
    } else {
        r as i64
    }
}

/// In-place Gauss-Jordan elimination over F_p. Returns the pivot columns;
/// the rank is their count.
fn gauss_jordan(rows: &mut [Vec<u64>], p: u64) -> Vec<usize> {
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..ncols {
        if r == rows.len() {
            break;
        }
        let Some(sel) = (r..rows.len()).find(|&i| !rows[i][col].is_multiple_of(p)) else {
            continue;
        };
        rows.swap(r, sel);
        let inv = mod_inv(rows[r][col], p);
        for v in rows[r].iter_mut() {
            *v = *v * inv % p;
        }
        let pivot_row = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            let f = row[col];
            if i != r && f != 0 {
                for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                    *v = (*v + (p - f) * pv) % p;
                }
            }
        }
        pivots.push(col);
        r += 1;
    }
    pivots
}

fn mod_pow(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut acc = 1 % p;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % p;
        }
        b = b * b % p;
        e >>= 1;
    }
    acc
}

fn mod_inv(a: u64, p: u64) -> u64 {
    mod_pow(a, p - 2, p)
}

fn invert_square(m: &[Vec<u64>], p: u64) -> Option<Vec<Vec<u32>>> {
    let k = m.len();
    let mut aug: Vec<Vec<u64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().copied().chain((0..k).map(|j| u64::from(i == j))).collect())
        .collect();
    let pivots = gauss_jordan(&mut aug, p);
    if pivots.len() < k || pivots[k - 1] != k - 1 {
        return None;
    }
    Some(
        aug.into_iter()
            .map(|r| r[k..].iter().map(|&v| v as u32).collect())
            .collect(),
    )
}

impl NestedLatticePair {
    /// Validate and build a nested pair. `g_code = None` selects the
    /// repetition code (k = 1, all-ones generator).
    pub fn new(n: usize, p: u32, k: usize, gamma: f64, g_code: Option<Vec<Vec<u32>>>) -> Result<Self> {
        check_prime(p)?;
        if n == 0 || k == 0 || k > n {
            return Err(invalid(format!("need 1 <= k <= n, got k={k}, n={n}")));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(invalid(format!("gamma must be positive, got {gamma}")));
        }
        let g_code = match g_code {
            Some(g) => g,
            None if k == 1 => vec![vec![1; n]],
            None => return Err(invalid("a generator matrix is required when k > 1")),
        };
        if g_code.len() != k || g_code.iter().any(|r| r.len() != n) {
            return Err(invalid(format!("generator must be {k} x {n}")));
        }
        if g_code.iter().flatten().any(|&v| v >= p) {
            return Err(invalid(format!("generator entries must be below p={p}")));
        }
        let cosets = (p as u64).checked_pow(k as u32).filter(|&c| c <= MAX_COSETS);
        let Some(cosets) = cosets else {
            return Err(Error::SizeLimit(format!("p^k = {p}^{k} exceeds {MAX_COSETS} cosets")));
        };
        let pu = p as u64;
        let rows: Vec<Vec<u64>> = g_code.iter().map(|r| r.iter().map(|&v| v as u64).collect()).collect();
        let pivots = gauss_jordan(&mut rows.clone(), pu);
        if pivots.len() < k {
            return Err(invalid(format!(
                "generator has rank {} over F_{p}, expected {k}",
                pivots.len()
            )));
        }
        let sub: Vec<Vec<u64>> = rows.iter().map(|r| pivots.iter().map(|&c| r[c]).collect()).collect();
        let pivot_inverse = invert_square(&sub, pu).ok_or_else(|| invalid("pivot submatrix is singular"))?;

        let mut codewords = Vec::with_capacity(cosets as usize * n);
        let mut u = vec![0u32; k];
        for _ in 0..cosets {
            codewords.extend(Self::mul_code(&g_code, &u, p));
            for d in u.iter_mut() {
                *d += 1;
                if *d < p {
                    break;
                }
                *d = 0;
            }
        }
        Ok(Self {
            n,
            p,
            k,
            gamma,
            g_code,
            codewords,
            pivots,
            pivot_inverse,
        })
    }

    fn mul_code(g: &[Vec<u32>], u: &[u32], p: u32) -> Vec<u32> {
        let n = g[0].len();
        (0..n)
            .map(|j| (u.iter().zip(g).map(|(&ui, row)| ui as u64 * row[j] as u64).sum::<u64>() % p as u64) as u32)
            .collect()
    }

    pub fn params(&self) -> LatticeParams {
        LatticeParams {
            n: self.n,
            p: self.p,
            k: self.k,
            gamma: self.gamma,
            g_code: self.g_code.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn generator(&self) -> &[Vec<u32>] {
        &self.g_code
    }

    /// Side of the coarse cube, pγ.
    pub fn coarse_step(&self) -> f64 {
        self.p as f64 * self.gamma
    }

    /// |Λ_f / Λ_w| = p^k.
    pub fn coset_count(&self) -> usize {
        self.codewords.len() / self.n
    }

    /// (1/n) log p^k, nats per channel use.
    pub fn rate_nats(&self) -> f64 {
        self.k as f64 * (self.p as f64).ln() / self.n as f64
    }

    /// V(Λ_f)^{2/n} = γ² p^{2(n-k)/n}.
    pub fn fine_volume_2n(&self) -> f64 {
        self.gamma.powi(2) * (self.p as f64).powf(2.0 * (self.n - self.k) as f64 / self.n as f64)
    }

    /// V(Λ_w)^{2/n} = (pγ)².
    pub fn coarse_volume_2n(&self) -> f64 {
        self.coarse_step().powi(2)
    }

    /// Codeword for coset index `idx` (base-p digits of u, least significant first).
    pub fn codeword(&self, idx: usize) -> &[u32] {
        &self.codewords[idx * self.n..(idx + 1) * self.n]
    }

    pub fn coset_index(&self, u: &[u32]) -> usize {
        u.iter()
            .rev()
            .fold(0usize, |acc, &d| acc * self.p as usize + d as usize)
    }

    pub fn coset_symbols(&self, mut idx: usize) -> Vec<u32> {
        (0..self.k)
            .map(|_| {
                let d = idx % self.p as usize;
                idx /= self.p as usize;
                d as u32
            })
            .collect()
    }

    /// φ: F_p^k → Λ_f ∩ [-pγ/2, pγ/2)ⁿ.
    pub fn encode_symbols(&self, u: &[u32]) -> Result<CosetRepresentative> {
        if u.len() != self.k {
            return Err(invalid(format!("expected {} info symbols, got {}", self.k, u.len())));
        }
        if u.iter().any(|&s| s >= self.p) {
            return Err(invalid("info symbol out of range"));
        }
        let c = self.codeword(self.coset_index(u));
        Ok(CosetRepresentative(
            c.iter().map(|&r| self.gamma * center(r, self.p) as f64).collect(),
        ))
    }

    /// Nearest integer vector (units of γ) to `point`/γ, checked against the
    /// fine lattice.
    fn lattice_integers(&self, point: &[f64]) -> Result<Vec<i64>> {
        let mut deviation = 0.0f64;
        let z: Vec<i64> = point
            .iter()
            .map(|&x| {
                let t = x / self.gamma;
                let r = t.round();
                deviation = deviation.max((t - r).abs());
                r as i64
            })
            .collect();
        if deviation > MEMBERSHIP_TOL {
            return Err(Error::NotALatticePoint {
                deviation: deviation * self.gamma,
            });
        }
        Ok(z)
    }

    /// φ⁻¹ applied to the coset of `point` (any point of Λ_f, not only a representative).
    pub fn decode_coset(&self, point: &[f64]) -> Result<Vec<u32>> {
        if point.len() != self.n {
            return Err(invalid(format!("expected length {}, got {}", self.n, point.len())));
        }
        let z = self.lattice_integers(point)?;
        let c: Vec<u32> = z.iter().map(|&v| v.rem_euclid(self.p as i64) as u32).collect();
        let u = self.solve_info(&c);
        if Self::mul_code(&self.g_code, &u, self.p) != c {
            return Err(Error::NotALatticePoint { deviation: 0.0 });
        }
        Ok(u)
    }

    /// Info symbols from a codeword via the pivot columns.
    fn solve_info(&self, c: &[u32]) -> Vec<u32> {
        let p = self.p as u64;
        (0..self.k)
            .map(|col| {
                (self
                    .pivots
                    .iter()
                    .enumerate()
                    .map(|(row, &pc)| c[pc] as u64 * self.pivot_inverse[row][col] as u64)
                    .sum::<u64>()
                    % p) as u32
            })
            .collect()
    }

    /// Nearest fine-lattice point in integer units of γ together with the coset index.
    /// Ties go to the lexicographically smallest coordinate vector.
    pub fn quantize_fine_integers(&self, s: &[f64]) -> (Vec<i64>, usize) {
        assert_eq!(s.len(), self.n, "quantize_fine: dimension mismatch");
        let p = self.p as usize;
        let pf = self.p as f64;
        // Per coordinate, the best point of r + pZ for each residue r.
        let mut best_z = vec![0i64; self.n * p];
        let mut best_d = vec![0f64; self.n * p];
        for (j, &sj) in s.iter().enumerate() {
            let t = sj / self.gamma;
            for r in 0..p {
                let m = (t - r as f64) / pf;
                let lo = m.floor() as i64 * self.p as i64 + r as i64;
                let hi = lo + self.p as i64;
                let dlo = (sj - self.gamma * lo as f64).powi(2);
                let dhi = (sj - self.gamma * hi as f64).powi(2);
                let (z, d) = if dhi < dlo { (hi, dhi) } else { (lo, dlo) };
                best_z[j * p + r] = z;
                best_d[j * p + r] = d;
            }
        }
        let mut best: Option<(f64, usize)> = None;
        for idx in 0..self.coset_count() {
            let c = self.codeword(idx);
            let d: f64 = c.iter().enumerate().map(|(j, &r)| best_d[j * p + r as usize]).sum();
            let better = match best {
                None => true,
                Some((bd, bidx)) => d < bd || (d == bd && self.candidate(&best_z, idx) < self.candidate(&best_z, bidx)),
            };
            if better {
                best = Some((d, idx));
            }
        }
        let (_, idx) = best.expect("at least one coset");
        (self.candidate(&best_z, idx), idx)
    }

    fn candidate(&self, table: &[i64], idx: usize) -> Vec<i64> {
        let p = self.p as usize;
        self.codeword(idx)
            .iter()
            .enumerate()
            .map(|(j, &r)| table[j * p + r as usize])
            .collect()
    }

    /// Q_{Λ_f}(s).
    pub fn quantize_fine(&self, s: &[f64]) -> Vec<f64> {
        self.quantize_fine_integers(s)
            .0
            .into_iter()
            .map(|z| self.gamma * z as f64)
            .collect()
    }

    /// [s] mod Λ_w, reduced into [-pγ/2, pγ/2)ⁿ.
    pub fn mod_coarse(&self, s: &[f64]) -> Vec<f64> {
        mod_cube(s, self.coarse_step())
    }

    /// Draw x ~ D_{Λ_w+λ, σ}. Each coordinate uses its own stream derived
    /// from `seed`, so equal seeds give bit-identical codewords.
    pub fn sample_coset_gaussian(
        &self,
        lambda: &CosetRepresentative,
        sigma: f64,
        seed: u64,
    ) -> Result<LatticeCodeword> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid(format!("sampler sigma must be positive, got {sigma}")));
        }
        if lambda.0.len() != self.n {
            return Err(invalid("representative has wrong dimension"));
        }
        let coset = self.decode_coset(&lambda.0)?;
        let step = self.coarse_step();
        let mut x = Vec::with_capacity(self.n);
        let mut shift = Vec::with_capacity(self.n);
        for (j, &lj) in lambda.0.iter().enumerate() {
            let mut rng = seed::rng(seed::derive(seed, SAMPLER_LABEL, j as u64));
            let z = sample_shifted_integer(lj, step, sigma, &mut rng);
            shift.push(z);
            x.push(lj + step * z as f64);
        }
        Ok(LatticeCodeword { x, coset, shift })
    }
}

const SAMPLER_LABEL: u64 = 0x5A4D_504C;

/// Centered cube reduction with side `step`: s - step·floor(s/step + 1/2).
pub fn mod_cube(s: &[f64], step: f64) -> Vec<f64> {
    s.iter().map(|&v| v - step * (v / step + 0.5).floor()).collect()
}

/// Integer range [lo, hi] of the truncated support of D_{step·Z + offset, σ}.
pub fn sampler_support(offset: f64, step: f64, sigma: f64) -> (i64, i64) {
    let t = (TAIL_SIGMAS * sigma / step).ceil() as i64 + 1;
    let c = -offset / step;
    (c.floor() as i64 - t, c.ceil() as i64 + t)
}

/// One coordinate of the coset sampler: returns z such that offset + step·z
/// is distributed as the discrete Gaussian over step·Z + offset.
///
/// Rejection from the uniform proposal on the truncated support; the
/// acceptance probability is the weight ratio against the heaviest point, so
/// the loop terminates quickly even when σ is far below the step.
pub fn sample_shifted_integer<R: Rng + ?Sized>(offset: f64, step: f64, sigma: f64, rng: &mut R) -> i64 {
    let (lo, hi) = sampler_support(offset, step, sigma);
    let c = -offset / step;
    let z_peak = c.round() as i64;
    let x_peak = offset + step * z_peak as f64;
    let denom = 2.0 * sigma * sigma;
    loop {
        let z = rng.random_range(lo..=hi);
        let x = offset + step * z as f64;
        let log_ratio = -(x * x - x_peak * x_peak) / denom;
        if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
            return z;
        }
    }
}

/// E[x²] of the truncated discrete Gaussian over step·Z + offset, summed directly.
pub fn coset_second_moment(offset: f64, step: f64, sigma: f64) -> f64 {
    let (lo, hi) = sampler_support(offset, step, sigma);
    let c = -offset / step;
    let z_peak = c.round() as i64;
    let x_peak = offset + step * z_peak as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for z in lo..=hi {
        let x = offset + step * z as f64;
        let w = (-(x * x - x_peak * x_peak) / (2.0 * sigma * sigma)).exp();
        num += w * x * x;
        den += w;
    }
    num / den
}

/// A coset representative λ ∈ Λ_f inside the centered coarse cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosetRepresentative(pub Vec<f64>);

impl CosetRepresentative {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

/// A transmitted point x = λ + r with r ∈ Λ_w.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeCodeword {
    pub x: Vec<f64>,
    /// Info symbols carried by the coset.
    pub coset: Vec<u32>,
    /// r / (pγ), per coordinate.
    pub shift: Vec<i64>,
}

impl LatticeCodeword {
    /// Write the codeword as one CSV row: coset symbols, then coordinates.
    pub fn write_csv_row<W: std::io::Write>(&self, wtr: &mut csv::Writer<W>) -> Result<()> {
        let mut rec: Vec<String> = self.coset.iter().map(u32::to_string).collect();
        rec.extend(self.x.iter().map(|v| format!("{v:?}")));
        wtr.write_record(&rec)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(p: u32) -> NestedLatticePair {
        NestedLatticePair::new(1, p, 1, 1.0, None).unwrap()
    }

    fn n4() -> NestedLatticePair {
        NestedLatticePair::new(4, 3, 2, 1.0, Some(vec![vec![1, 0, 1, 2], vec![0, 1, 2, 1]])).unwrap()
    }

    #[test]
    fn scalar_pair() {
        let pair = scalar(5);
        assert_eq!(pair.coset_count(), 5);
        assert_relative_eq!(pair.rate_nats(), 5f64.ln());
        assert_relative_eq!(pair.coarse_volume_2n(), 25.0);
        assert_relative_eq!(pair.fine_volume_2n(), 1.0);
    }

    #[test]
    fn repetition_pair_has_p_cosets() {
        let pair = NestedLatticePair::new(8, 5, 1, 0.3, None).unwrap();
        assert_eq!(pair.coset_count(), 5);
        assert_relative_eq!(pair.coarse_volume_2n(), 1.5f64.powi(2), epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_generator_rejected() {
        let g = vec![vec![1, 2, 0], vec![2, 4, 0]];
        assert!(NestedLatticePair::new(3, 5, 2, 1.0, Some(g)).is_err());
        assert!(NestedLatticePair::new(3, 5, 0, 1.0, None).is_err());
        assert!(NestedLatticePair::new(3, 5, 4, 1.0, None).is_err());
        assert!(NestedLatticePair::new(3, 5, 1, -1.0, None).is_err());
        assert!(NestedLatticePair::new(3, 6, 1, 1.0, None).is_err());
    }

    #[test]
    fn generator_with_late_pivots() {
        // first column is zero, so pivots are not the leading columns
        let g = vec![vec![0, 1, 1, 0], vec![0, 0, 1, 1]];
        let pair = NestedLatticePair::new(4, 3, 2, 0.5, Some(g)).unwrap();
        for idx in 0..pair.coset_count() {
            let u = pair.coset_symbols(idx);
            let lam = pair.encode_symbols(&u).unwrap();
            assert_eq!(pair.decode_coset(&lam.0).unwrap(), u);
        }
    }

    #[test]
    fn coarse_points_are_fine_points() {
        let pair = n4();
        let mut rng = seed::rng(3);
        for _ in 0..100 {
            let z: Vec<f64> = (0..4).map(|_| 3.0 * rng.random_range(-20i64..=20) as f64).collect();
            assert_eq!(pair.quantize_fine(&z), z);
        }
        assert_eq!(pair.coset_count(), 9);
    }

    #[test]
    fn encode_examples() {
        let pair = scalar(5);
        assert_eq!(pair.encode_symbols(&[4]).unwrap().0, vec![-1.0]);
        assert_eq!(pair.encode_symbols(&[0]).unwrap().0, vec![0.0]);
        assert!(pair.encode_symbols(&[1, 2]).is_err());
    }

    #[test]
    fn encode_is_bijective_into_cell() {
        let pair = NestedLatticePair::new(8, 5, 1, 0.7, None).unwrap();
        let half = pair.coarse_step() / 2.0;
        let mut seen = Vec::new();
        for u in 0..5 {
            let lam = pair.encode_symbols(&[u]).unwrap();
            assert!(lam.0.iter().all(|&v| -half <= v && v < half));
            assert!(!seen.contains(&lam.0));
            seen.push(lam.0.clone());
            assert_eq!(pair.decode_coset(&lam.0).unwrap(), vec![u]);
        }
    }

    #[test]
    fn binary_field_representatives_stay_in_half_open_cell() {
        let pair = NestedLatticePair::new(3, 2, 1, 1.0, None).unwrap();
        let lam = pair.encode_symbols(&[1]).unwrap();
        assert_eq!(lam.0, vec![-1.0; 3]);
    }

    #[test]
    fn decode_is_invariant_under_coarse_shifts() {
        let pair = n4();
        let mut rng = seed::rng(5);
        for idx in 0..pair.coset_count() {
            let u = pair.coset_symbols(idx);
            let lam = pair.encode_symbols(&u).unwrap();
            let shifted: Vec<f64> = lam
                .0
                .iter()
                .map(|&v| v + 3.0 * rng.random_range(-9i64..=9) as f64)
                .collect();
            assert_eq!(pair.decode_coset(&shifted).unwrap(), u);
        }
        assert_eq!(pair.decode_coset(&[0.0; 4]).unwrap(), vec![0, 0]);
    }

    #[test]
    fn decode_rejects_off_lattice_points() {
        let pair = n4();
        assert!(matches!(
            pair.decode_coset(&[0.5, 0.0, 0.0, 0.0]),
            Err(Error::NotALatticePoint { .. })
        ));
        // integer vector whose residue is not a codeword
        assert!(matches!(
            pair.decode_coset(&[1.0, 0.0, 0.0, 0.0]),
            Err(Error::NotALatticePoint { .. })
        ));
    }

    #[test]
    fn scalar_quantizer() {
        let pair = scalar(5);
        assert_eq!(pair.quantize_fine(&[2.3]), vec![2.0]);
        assert_eq!(pair.quantize_fine(&[-2.7]), vec![-3.0]);
        assert_eq!(pair.quantize_fine(&[4.0]), vec![4.0]);
        // tie goes to the smaller point
        assert_eq!(pair.quantize_fine(&[0.5]), vec![0.0]);
    }

    #[test]
    fn mod_coarse_examples() {
        let pair = scalar(5);
        assert_relative_eq!(pair.mod_coarse(&[7.3])[0], 2.3, epsilon = 1e-12);
        assert_eq!(pair.mod_coarse(&[-2.5]), vec![-2.5]);
        assert_eq!(pair.mod_coarse(&[2.5]), vec![-2.5]);
        assert_eq!(pair.mod_coarse(&[0.0]), vec![0.0]);
    }

    #[test]
    fn sampler_rejects_bad_sigma() {
        let pair = scalar(5);
        let lam = pair.encode_symbols(&[1]).unwrap();
        assert!(pair.sample_coset_gaussian(&lam, 0.0, 1).is_err());
        assert!(pair.sample_coset_gaussian(&lam, -1.0, 1).is_err());
    }

    #[test]
    fn sampler_concentrates_for_tiny_sigma() {
        let pair = NestedLatticePair::new(4, 5, 1, 1.0, None).unwrap();
        let lam = pair.encode_symbols(&[2]).unwrap();
        let sigma = 0.001 * pair.coarse_step();
        let hits = (0..5000u64)
            .filter(|&s| pair.sample_coset_gaussian(&lam, sigma, s).unwrap().x == lam.0)
            .count();
        assert!(hits as f64 / 5000.0 > 0.999);
    }

    #[test]
    fn samples_stay_in_their_coset() {
        let pair = n4();
        for s in 0..500u64 {
            let u = pair.coset_symbols(s as usize % 9);
            let lam = pair.encode_symbols(&u).unwrap();
            let cw = pair.sample_coset_gaussian(&lam, 2.0, s).unwrap();
            for j in 0..4 {
                assert_eq!(cw.x[j], lam.0[j] + 3.0 * cw.shift[j] as f64);
            }
            assert_eq!(pair.decode_coset(&cw.x).unwrap(), u);
            assert_eq!(cw.coset, u);
        }
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let pair = n4();
        let lam = pair.encode_symbols(&[1, 2]).unwrap();
        let a = pair.sample_coset_gaussian(&lam, 4.0, 77).unwrap();
        let b = pair.sample_coset_gaussian(&lam, 4.0, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pair_json_round_trip() {
        let pair = n4();
        let json = serde_json::to_string(&pair).unwrap();
        assert!(json.contains("\"G_code\""));
        let back: NestedLatticePair = serde_json::from_str(&json).unwrap();
        assert_eq!(back.params(), pair.params());
        let bad = r#"{"n":3,"p":5,"k":2,"gamma":1.0,"G_code":[[1,2,0],[2,4,0]]}"#;
        assert!(serde_json::from_str::<NestedLatticePair>(bad).is_err());
    }
}
