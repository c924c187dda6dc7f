//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;
use pir_sim::lattice::NestedLatticePair;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Log-uniform draw on [lo, hi].
pub fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// 256-bit binary floating point (about 77 significant digits).
pub mod hp {
    use super::*;

    pub type F = FBig<HalfEven>;
    const PREC: usize = 256;

    pub fn f(x: f64) -> F {
        F::try_from(x).expect("finite").with_precision(PREC).value()
    }

    pub fn int(x: u64) -> F {
        f(x as f64)
    }

    fn min(v: Vec<F>) -> F {
        v.into_iter()
            .reduce(|a, b| if b < a { b } else { a })
            .expect("non-empty")
    }

    /// max(0, ½·ln(min branch) − ½) from exact-input SNRs.
    pub fn rate(snr_y: &F, snr_w: &[F]) -> f64 {
        let one = int(1);
        let half = f(0.5);
        let mut branches: Vec<F> = snr_w.iter().map(|w| (&half + snr_y) / (&one + w)).collect();
        branches.push(snr_y * &(&half + snr_y) / (&one + snr_y));
        let r = &half * &min(branches).ln() - &half;
        if r < int(0) {
            0.0
        } else {
            r.to_f64().value()
        }
    }

    pub fn theorem1(p: f64, sy2: f64, sw2: f64) -> f64 {
        theorem2(2, p, sy2, sw2)
    }

    pub fn theorem2(n: usize, p: f64, sy2: f64, sw2: f64) -> f64 {
        let half = int((n / 2) as u64);
        let c = &half * &half * f(p);
        rate(&(&c / &f(sy2)), &[&c / &f(sw2)])
    }

    /// Groups given as server index lists; aggregates summed exactly.
    pub fn theorem3(h: &[f64], g: &[f64], s1: &[usize], s2: &[usize], p: f64, sy2: f64, sw2: f64) -> f64 {
        let sum = |s: &[usize], v: &[f64], abs: bool| {
            s.iter()
                .fold(int(0), |acc, &k| acc + f(if abs { v[k].abs() } else { v[k] }))
        };
        let (mut h1, mut h2) = (sum(s1, h, true), sum(s2, h, true));
        let (mut g1, mut g2) = (sum(s1, g, false), sum(s2, g, false));
        if h1 > h2 {
            std::mem::swap(&mut h1, &mut h2);
            std::mem::swap(&mut g1, &mut g2);
        }
        let pp = f(p);
        let snr_y = &h1 * &h1 * &pp / f(sy2);
        let w1 = &g1 * &g1 * &pp / f(sw2);
        let g2s = &g2 * &h1 / &h2;
        let w2 = &g2s * &g2s * &pp / f(sw2);
        rate(&snr_y, &[w1, w2])
    }

    pub fn alpha_opt(p: f64, s2: f64) -> (f64, f64) {
        let two_p = int(2) * f(p);
        let d = &two_p + &f(s2);
        ((&two_p / &d).to_f64().value(), (&two_p * &f(s2) / &d).to_f64().value())
    }

    pub fn upper_bound(p: f64, s2: f64) -> f64 {
        (f(0.5) * (int(1) + f(p) / f(s2)).ln()).to_f64().value()
    }
}

/// Plain-f64 Theorem 3 rate written out directly from the SNR definitions.
pub fn direct_theorem3(h: &[f64], g: &[f64], s1: &[usize], s2: &[usize], p: f64, sy2: f64, sw2: f64) -> f64 {
    let h1: f64 = s1.iter().map(|&k| h[k].abs()).sum();
    let h2: f64 = s2.iter().map(|&k| h[k].abs()).sum();
    let g1: f64 = s1.iter().map(|&k| g[k]).sum();
    let g2: f64 = s2.iter().map(|&k| g[k]).sum();
    let (h1, h2, g1, g2) = if h1 <= h2 { (h1, h2, g1, g2) } else { (h2, h1, g2, g1) };
    let sy = h1 * h1 * p / sy2;
    let w1 = g1 * g1 * p / sw2;
    let w2 = (g2 * h1 / h2).powi(2) * p / sw2;
    let m = ((0.5 + sy) / (1.0 + w1))
        .min((0.5 + sy) / (1.0 + w2))
        .min(sy * (0.5 + sy) / (1.0 + sy));
    (0.5 * m.ln() - 0.5).max(0.0)
}

/// Every ordered pair of disjoint non-empty groups, visited by counting in
/// base 3 from the highest server down (slot 0 idle, 1 first group, 2 second).
pub fn all_partitions_base3(n: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let total = 3usize.pow(n as u32);
    let mut out = Vec::new();
    for code in (0..total).rev() {
        let (mut s1, mut s2) = (Vec::new(), Vec::new());
        let mut c = code;
        for k in 0..n {
            match c % 3 {
                1 => s1.push(k),
                2 => s2.push(k),
                _ => {}
            }
            c /= 3;
        }
        if !s1.is_empty() && !s2.is_empty() {
            out.push((s1, s2));
        }
    }
    out
}

/// Nearest point of γ(C + pZⁿ) by scanning a box of integer points around
/// s/γ. Returns the integer coordinates; ties go to the lexicographically
/// smallest vector.
pub fn brute_nearest(pair: &NestedLatticePair, s: &[f64]) -> Vec<i64> {
    let n = pair.n();
    let p = pair.p() as i64;
    let gamma = pair.gamma();
    let reach = 2 * p;
    let base: Vec<i64> = s.iter().map(|&v| (v / gamma).round() as i64 - reach).collect();
    let width = (2 * reach + 1) as usize;
    let codes: Vec<Vec<u32>> = (0..pair.coset_count()).map(|i| pair.codeword(i).to_vec()).collect();
    let mut best: Option<(f64, Vec<i64>)> = None;
    let mut idx = vec![0usize; n];
    loop {
        let v: Vec<i64> = (0..n).map(|j| base[j] + idx[j] as i64).collect();
        let residues: Vec<u32> = v.iter().map(|&x| x.rem_euclid(p) as u32).collect();
        if codes.contains(&residues) {
            let d: f64 = (0..n).map(|j| (s[j] - gamma * v[j] as f64).powi(2)).sum();
            let better = match &best {
                None => true,
                Some((bd, bv)) => d < *bd || (d == *bd && v < *bv),
            };
            if better {
                best = Some((d, v));
            }
        }
        let mut j = 0;
        loop {
            if j == n {
                return best.expect("box contains lattice points").1;
            }
            idx[j] += 1;
            if idx[j] < width {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Random full-rank k×n generator over F_p.
pub fn random_generator<R: Rng>(rng: &mut R, n: usize, p: u32, k: usize, gamma: f64) -> NestedLatticePair {
    loop {
        let g: Vec<Vec<u32>> = (0..k)
            .map(|_| (0..n).map(|_| rng.random_range(0..p)).collect())
            .collect();
        if let Ok(pair) = NestedLatticePair::new(n, p, k, gamma, Some(g)) {
            return pair;
        }
    }
}

/// Random disjoint non-empty groups over `n` servers; leftovers idle.
pub fn random_groups<R: Rng>(rng: &mut R, n: usize) -> (Vec<usize>, Vec<usize>) {
    loop {
        let (mut s1, mut s2) = (Vec::new(), Vec::new());
        for k in 0..n {
            match rng.random_range(0..3) {
                1 => s1.push(k),
                2 => s2.push(k),
                _ => {}
            }
        }
        if !s1.is_empty() && !s2.is_empty() {
            return (s1, s2);
        }
    }
}

/// Coordinatewise difference of two points that should agree modulo a cube
/// of side `step`. Differences of a whole step are accepted only at the cell
/// boundary, where either representative is correct up to rounding.
pub fn mod_mismatch(a: &[f64], b: &[f64], step: f64, tol: f64) -> Option<usize> {
    (0..a.len()).find(|&j| {
        let d = a[j] - b[j];
        if d.abs() <= tol {
            return false;
        }
        let wrapped = d - step * (d / step).round();
        let at_edge = (a[j].abs() - step / 2.0).abs() <= tol && (b[j].abs() - step / 2.0).abs() <= tol;
        !(wrapped.abs() <= tol && at_edge)
    })
}

pub type TestRng = ChaCha20Rng;
