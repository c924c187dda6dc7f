//! Closed-form achievable PIR rates, the single-antenna upper bound, MMSE
//! scaling, lattice design-condition checks and the server partition
//! optimizers for the fading channel.
//!
//! All rates are in nats per channel use. Every achievable rate has the form
//!
//! ```text
//! R = max(0, ½·log(min{ (½+SNR_y)/(1+SNR_w,i) ..., SNR_y(½+SNR_y)/(1+SNR_y) }) − ½)
//! ```
//!
//! with one eavesdropper branch for the non-fading theorems and two for the
//! block-fading one.

use std::cmp::Ordering;
use std::f64::consts::{E, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::NestedLatticePair;
use crate::protocol::PartitionPlan;

/// Largest server count the exhaustive optimizer accepts.
pub const BRUTE_FORCE_MAX_SERVERS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Eavesdropper branch i (0-based).
    Eavesdropper(usize),
    /// The user's own decoding branch SNR_y(½+SNR_y)/(1+SNR_y).
    SelfNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rate_nats: f64,
    pub binding_branch: Branch,
    /// Value inside the log, before clamping.
    pub min_argument: f64,
    pub snr_y: f64,
    pub snr_w: Vec<f64>,
    pub alpha_opt: f64,
    pub feasible: bool,
}

impl RateReport {
    pub fn rate_bits(&self) -> f64 {
        self.rate_nats / std::f64::consts::LN_2
    }
}

/// Branch values in order: eavesdropper branches, then the self-noise branch.
pub fn branch_values(snr_y: f64, snr_w: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = snr_w.iter().map(|&w| (0.5 + snr_y) / (1.0 + w)).collect();
    v.push(snr_y * (0.5 + snr_y) / (1.0 + snr_y));
    v
}

/// The minimum branch and which branch attains it (first one on ties).
pub fn binding(snr_y: f64, snr_w: &[f64]) -> (f64, Branch) {
    let vals = branch_values(snr_y, snr_w);
    let mut best = (vals[0], 0);
    for (i, &v) in vals.iter().enumerate().skip(1) {
        if v < best.0 {
            best = (v, i);
        }
    }
    let branch = if best.1 == snr_w.len() {
        Branch::SelfNoise
    } else {
        Branch::Eavesdropper(best.1)
    };
    (best.0, branch)
}

/// max(0, ½ ln(x) − ½).
pub fn clamped_rate(min_argument: f64) -> f64 {
    if min_argument > 0.0 {
        (0.5 * min_argument.ln() - 0.5).max(0.0)
    } else {
        0.0
    }
}

fn report(snr_y: f64, snr_w: Vec<f64>, alpha: f64) -> RateReport {
    let (min_argument, binding_branch) = binding(snr_y, &snr_w);
    let rate_nats = clamped_rate(min_argument);
    RateReport {
        rate_nats,
        binding_branch,
        min_argument,
        snr_y,
        snr_w,
        alpha_opt: alpha,
        feasible: rate_nats > 0.0,
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Two servers, unit gains.
pub fn rate_theorem1(power: f64, sigma_y2: f64, sigma_w2: f64) -> Result<RateReport> {
    positive("P", power)?;
    positive("sigma_y2", sigma_y2)?;
    positive("sigma_w2", sigma_w2)?;
    let (alpha, _) = alpha_opt(power, sigma_y2);
    Ok(report(power / sigma_y2, vec![power / sigma_w2], alpha))
}

/// N servers, unit gains, two coherent groups of ⌊N/2⌋.
pub fn rate_theorem2(servers: usize, power: f64, sigma_y2: f64, sigma_w2: f64) -> Result<RateReport> {
    if servers < 2 {
        return Err(invalid(format!("need at least 2 servers, got {servers}")));
    }
    positive("P", power)?;
    positive("sigma_y2", sigma_y2)?;
    positive("sigma_w2", sigma_w2)?;
    let half = (servers / 2) as f64;
    let gain2 = half * half;
    let (alpha, _) = alpha_opt(power, sigma_y2 / gain2);
    Ok(report(gain2 * power / sigma_y2, vec![gain2 * power / sigma_w2], alpha))
}

/// SNRs of the block-fading rate for aggregate gains, groups relabeled so
/// that `h1 <= h2`: (SNR_ỹ, [SNR_w̃1, SNR_w̃2]).
pub fn fading_snrs(h1: f64, h2: f64, g1: f64, g2: f64, power: f64, sigma_y2: f64, sigma_w2: f64) -> (f64, [f64; 2]) {
    let (h1, h2, g1, g2) = if h1 <= h2 { (h1, h2, g1, g2) } else { (h2, h1, g2, g1) };
    let snr_y = h1 * h1 * power / sigma_y2;
    let snr_w1 = g1 * g1 * power / sigma_w2;
    let aligned = if h2 > 0.0 { g2 * h1 / h2 } else { 0.0 };
    let snr_w2 = aligned * aligned * power / sigma_w2;
    (snr_y, [snr_w1, snr_w2])
}

/// Block fading, arbitrary disjoint groups.
pub fn rate_theorem3(plan: &PartitionPlan, power: f64, sigma_y2: f64, sigma_w2: f64) -> Result<RateReport> {
    positive("P", power)?;
    positive("sigma_y2", sigma_y2)?;
    positive("sigma_w2", sigma_w2)?;
    let (snr_y, snr_w) = fading_snrs(
        plan.h_tilde1,
        plan.h_tilde2,
        plan.g_tilde1,
        plan.g_tilde2,
        power,
        sigma_y2,
        sigma_w2,
    );
    let eff = if plan.h_tilde1 > 0.0 {
        sigma_y2 / (plan.h_tilde1 * plan.h_tilde1)
    } else {
        f64::INFINITY
    };
    let (alpha, _) = alpha_opt(power, eff);
    Ok(report(snr_y, snr_w.to_vec(), alpha))
}

/// ½ log(1 + P_total/σ²): all antennas sending the same symbol.
pub fn upper_bound_awgn(total_power: f64, sigma2: f64) -> Result<f64> {
    positive("P_total", total_power)?;
    positive("sigma2", sigma2)?;
    Ok(0.5 * (total_power / sigma2).ln_1p())
}

/// MMSE scaling for the two-codeword sum: α = 2P/(2P+σ²) and the resulting
/// equivalent-noise second moment σ̃² = 2Pσ²/(2P+σ²). A zero noise variance
/// gives α = 1, σ̃² = 0; an infinite one gives α = 0, σ̃² = 2P.
pub fn alpha_opt(power: f64, effective_noise_var: f64) -> (f64, f64) {
    if effective_noise_var.is_infinite() {
        return (0.0, 2.0 * power);
    }
    let denom = 2.0 * power + effective_noise_var;
    (2.0 * power / denom, 2.0 * power * effective_noise_var / denom)
}

/// Equivalent eavesdropper parameter √P·s/√(P²+s²) for an effective noise
/// standard deviation `s` (σ_w scaled by the inverse aggregate gain).
pub fn eavesdropper_sigma(power: f64, effective_sigma: f64) -> f64 {
    if effective_sigma.is_infinite() {
        return power.sqrt();
    }
    power.sqrt() * effective_sigma / (power * power + effective_sigma * effective_sigma).sqrt()
}

/// σ̃_w for the non-fading schemes, where the eavesdropper sees `gain`·x + n_w.
pub fn sigma_tilde_w(power: f64, sigma_w2: f64, gain: f64) -> f64 {
    eavesdropper_sigma(power, sigma_w2.sqrt() / gain.abs())
}

/// (σ̃_w1, σ̃_w2) for the block-fading scheme.
pub fn sigma_tilde_w_fading(plan: &PartitionPlan, power: f64, sigma_w2: f64) -> [f64; 2] {
    let sw = sigma_w2.sqrt();
    let s1 = sw / plan.g_tilde1.abs();
    let s2 = sw / plan.g_tilde2.abs() / plan.scale;
    [eavesdropper_sigma(power, s1), eavesdropper_sigma(power, s2)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodnessReport {
    /// V(Λ_f)^{2/n} / σ̃_y².
    pub vnr_fine: f64,
    /// V(Λ_w)^{2/n} / σ̃_w², one per eavesdropper branch.
    pub vnr_coarse: Vec<f64>,
    pub awgn_good: bool,
    pub secrecy_good: bool,
    /// V(Λ_w)^{2/n} < 2πP/(π−1).
    pub power_cond1: bool,
    /// V(Λ_w)^{2/n} < 2πP/(1+1/ρ_b); only evaluated when ρ_b is supplied.
    pub power_cond2: Option<bool>,
}

pub const AWGN_GOOD_THRESHOLD: f64 = 2.0 * PI * E;
pub const SECRECY_GOOD_THRESHOLD: f64 = 2.0 * PI;

pub fn check_design_conditions(
    pair: &NestedLatticePair,
    sigma_tilde_y: f64,
    sigma_tilde_w: &[f64],
    power: f64,
    rho_b: Option<f64>,
) -> GoodnessReport {
    let vf = pair.fine_volume_2n();
    let vw = pair.coarse_volume_2n();
    let vnr_fine = vf / (sigma_tilde_y * sigma_tilde_y);
    let vnr_coarse: Vec<f64> = sigma_tilde_w.iter().map(|s| vw / (s * s)).collect();
    GoodnessReport {
        vnr_fine,
        awgn_good: vnr_fine > AWGN_GOOD_THRESHOLD,
        secrecy_good: !vnr_coarse.is_empty() && vnr_coarse.iter().all(|&v| v < SECRECY_GOOD_THRESHOLD),
        vnr_coarse,
        power_cond1: vw < 2.0 * PI * power / (PI - 1.0),
        power_cond2: rho_b.map(|r| vw < 2.0 * PI * power / (1.0 + 1.0 / r)),
    }
}

// ---------------------------------------------------------------------------
// Partition optimization
// ---------------------------------------------------------------------------

/// Lexicographic order of two index sets given as bitmasks, comparing their
/// ascending element lists.
pub fn lex_cmp_mask(a: u32, b: u32) -> Ordering {
    if a == b {
        return Ordering::Equal;
    }
    let d = (a ^ b).trailing_zeros();
    let above = !((2u32 << d) - 1);
    if a & (1 << d) != 0 {
        // a holds d; b continues with a larger element or ends
        if b & above != 0 {
            Ordering::Less
        } else {
            Ordering::Greater
        }
    } else if a & above != 0 {
        Ordering::Greater
    } else {
        Ordering::Less
    }
}

fn mask_to_vec(m: u32) -> Vec<usize> {
    (0..32).filter(|&k| m & (1 << k) != 0).collect()
}

/// Per-subset aggregate gains, summed in ascending index order.
struct SubsetSums {
    h: Vec<f64>,
    g: Vec<f64>,
}

impl SubsetSums {
    fn new(h: &[f64], g: &[f64]) -> Self {
        let n = h.len();
        let mut hs = vec![0.0; 1 << n];
        let mut gs = vec![0.0; 1 << n];
        for m in 1usize..(1 << n) {
            let top = usize::BITS - 1 - m.leading_zeros();
            let rest = m & !(1 << top);
            hs[m] = hs[rest] + h[top as usize].abs();
            gs[m] = gs[rest] + g[top as usize];
        }
        Self { h: hs, g: gs }
    }
}

/// Objective maximized by the optimizers. Monotone in the rate and strictly
/// so wherever the rate is positive; every zero-rate split scores `e`.
fn objective(h1: f64, h2: f64, g1: f64, g2: f64, power: f64, sigma_y2: f64, sigma_w2: f64) -> f64 {
    raw_objective(h1, h2, g1, g2, power, sigma_y2, sigma_w2).max(E)
}

fn raw_objective(h1: f64, h2: f64, g1: f64, g2: f64, power: f64, sigma_y2: f64, sigma_w2: f64) -> f64 {
    if h1.max(h2) <= 0.0 {
        return 0.0;
    }
    let (snr_y, snr_w) = fading_snrs(h1, h2, g1, g2, power, sigma_y2, sigma_w2);
    let a = (0.5 + snr_y) / (1.0 + snr_w[0]);
    let b = (0.5 + snr_y) / (1.0 + snr_w[1]);
    let c = snr_y * (0.5 + snr_y) / (1.0 + snr_y);
    a.min(b).min(c)
}

fn check_channel(h: &[f64], g: &[f64], power: f64, sigma_y2: f64, sigma_w2: f64) -> Result<()> {
    if h.len() < 2 {
        return Err(invalid(format!("need at least 2 servers, got {}", h.len())));
    }
    if h.len() != g.len() {
        return Err(invalid("gain vectors differ in length"));
    }
    positive("P", power)?;
    positive("sigma_y2", sigma_y2)?;
    positive("sigma_w2", sigma_w2)
}

#[derive(Clone, Copy)]
struct Candidate {
    score: f64,
    s1: u32,
    s2: u32,
}

impl Candidate {
    /// Higher score first, then lexicographically smaller (S1, S2).
    fn better_than(&self, other: &Candidate) -> bool {
        match self.score.partial_cmp(&other.score) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Less) => false,
            _ => match lex_cmp_mask(self.s1, other.s1) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => lex_cmp_mask(self.s2, other.s2) == Ordering::Less,
            },
        }
    }

    fn pick(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
        match (a, b) {
            (Some(x), Some(y)) => Some(if y.better_than(&x) { y } else { x }),
            (x, None) => x,
            (None, y) => y,
        }
    }
}

/// Exhaustive search over all ordered pairs of disjoint non-empty server
/// sets. Returns the rate-maximizing plan; ties go to the lexicographically
/// smallest (S1, S2) before the plan relabels its groups by aggregate gain.
pub fn optimize_partition_bruteforce(
    h: &[f64],
    g: &[f64],
    power: f64,
    sigma_y2: f64,
    sigma_w2: f64,
) -> Result<PartitionPlan> {
    check_channel(h, g, power, sigma_y2, sigma_w2)?;
    let n = h.len();
    if n > BRUTE_FORCE_MAX_SERVERS {
        return Err(Error::SizeLimit(format!(
            "brute force is limited to {BRUTE_FORCE_MAX_SERVERS} servers, got {n}"
        )));
    }
    let sums = SubsetSums::new(h, g);
    let full: u32 = (1u32 << n) - 1;
    let best = (1..=full)
        .into_par_iter()
        .map(|s1| {
            let rest = full & !s1;
            let mut local: Option<Candidate> = None;
            let mut s2 = rest;
            while s2 != 0 {
                let score = objective(
                    sums.h[s1 as usize],
                    sums.h[s2 as usize],
                    sums.g[s1 as usize],
                    sums.g[s2 as usize],
                    power,
                    sigma_y2,
                    sigma_w2,
                );
                local = Candidate::pick(local, Some(Candidate { score, s1, s2 }));
                s2 = (s2 - 1) & rest;
            }
            local
        })
        .reduce(|| None, Candidate::pick)
        .expect("n >= 2 guarantees a feasible split");
    PartitionPlan::new(mask_to_vec(best.s1), mask_to_vec(best.s2), h, g)
}

/// Group membership during local search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Idle,
    One,
    Two,
}

struct Assignment<'a> {
    slots: Vec<Slot>,
    h: &'a [f64],
    g: &'a [f64],
}

impl<'a> Assignment<'a> {
    fn sums(&self) -> Option<(f64, f64, f64, f64)> {
        let (mut h1, mut h2, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0);
        let (mut c1, mut c2) = (0, 0);
        for (k, s) in self.slots.iter().enumerate() {
            match s {
                Slot::One => {
                    h1 += self.h[k].abs();
                    g1 += self.g[k];
                    c1 += 1;
                }
                Slot::Two => {
                    h2 += self.h[k].abs();
                    g2 += self.g[k];
                    c2 += 1;
                }
                Slot::Idle => {}
            }
        }
        (c1 > 0 && c2 > 0).then_some((h1, h2, g1, g2))
    }

    fn score(&self, power: f64, sigma_y2: f64, sigma_w2: f64) -> Option<f64> {
        self.sums()
            .map(|(h1, h2, g1, g2)| raw_objective(h1, h2, g1, g2, power, sigma_y2, sigma_w2))
    }

    fn sets(&self) -> (Vec<usize>, Vec<usize>) {
        let pick = |t: Slot| {
            self.slots
                .iter()
                .enumerate()
                .filter(|(_, &s)| s == t)
                .map(|(k, _)| k)
                .collect()
        };
        (pick(Slot::One), pick(Slot::Two))
    }
}

/// Greedy balancing by |h| followed by steepest-ascent local search over
/// single-server moves (including to idle) and cross-group swaps.
pub fn optimize_partition_greedy(
    h: &[f64],
    g: &[f64],
    power: f64,
    sigma_y2: f64,
    sigma_w2: f64,
) -> Result<PartitionPlan> {
    optimize_partition_greedy_from(h, g, power, sigma_y2, sigma_w2, &[])
}

/// As [`optimize_partition_greedy`], additionally considering each of
/// `starts` as an initial split; the local search begins from the best one.
/// Servers missing from a start begin idle. The result never scores below
/// any feasible start.
pub fn optimize_partition_greedy_from(
    h: &[f64],
    g: &[f64],
    power: f64,
    sigma_y2: f64,
    sigma_w2: f64,
    starts: &[(&[usize], &[usize])],
) -> Result<PartitionPlan> {
    check_channel(h, g, power, sigma_y2, sigma_w2)?;
    let n = h.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| h[b].abs().total_cmp(&h[a].abs()).then(a.cmp(&b)));
    let mut slots = vec![Slot::Idle; n];
    let (mut h1, mut h2) = (0.0, 0.0);
    for (rank, &k) in order.iter().enumerate() {
        let to_one = match rank {
            0 => true,
            1 => false,
            _ => h1 <= h2,
        };
        if to_one {
            slots[k] = Slot::One;
            h1 += h[k].abs();
        } else {
            slots[k] = Slot::Two;
            h2 += h[k].abs();
        }
    }
    let mut cur = Assignment { slots, h, g };
    let mut cur_score = cur
        .score(power, sigma_y2, sigma_w2)
        .expect("balanced split is feasible");

    for &(s1, s2) in starts {
        let mut slots = vec![Slot::Idle; n];
        for &k in s1.iter().filter(|&&k| k < n) {
            slots[k] = Slot::One;
        }
        for &k in s2.iter().filter(|&&k| k < n) {
            slots[k] = Slot::Two;
        }
        let cand = Assignment { slots, h, g };
        if let Some(sc) = cand.score(power, sigma_y2, sigma_w2) {
            if sc > cur_score {
                cur = cand;
                cur_score = sc;
            }
        }
    }

    loop {
        let mut best: Option<(f64, Vec<Slot>)> = None;
        let consider = |slots: Vec<Slot>, best: &mut Option<(f64, Vec<Slot>)>| {
            let a = Assignment { slots, h, g };
            if let Some(sc) = a.score(power, sigma_y2, sigma_w2) {
                if sc > cur_score && best.as_ref().is_none_or(|(b, _)| sc > *b) {
                    *best = Some((sc, a.slots));
                }
            }
        };
        for k in 0..n {
            for target in [Slot::Idle, Slot::One, Slot::Two] {
                if cur.slots[k] != target {
                    let mut s = cur.slots.clone();
                    s[k] = target;
                    consider(s, &mut best);
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                if cur.slots[a] == Slot::One && cur.slots[b] == Slot::Two {
                    let mut s = cur.slots.clone();
                    s.swap(a, b);
                    consider(s, &mut best);
                }
            }
        }
        match best {
            Some((sc, slots)) => {
                cur.slots = slots;
                cur_score = sc;
            }
            None => break,
        }
    }
    let (s1, s2) = cur.sets();
    PartitionPlan::new(s1, s2, h, g)
}
