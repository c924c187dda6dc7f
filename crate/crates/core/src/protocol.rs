//! One retrieval round end to end: partition the servers into two groups,
//! form answers, map them to cosets, draw coordinated coarse-lattice dithers,
//! align powers, transmit over the MAC and decode the sum at the user.
//!
//! Group 1 always denotes the group with the smaller aggregate user-side gain
//! h̃₁ ≤ h̃₂; it receives Q1 and transmits at full power, while group 2
//! receives Q2 and scales its codeword by h̃₁/h̃₂. Each server also multiplies
//! by the sign of its own h_k, so the user observes h̃₁(x₁ + x₂) + n_y.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{transmit_mac, ChannelRealization, ReceivedBlock, Role};
use crate::error::{invalid, Result};
use crate::field::{
    add_answers, compute_answer, gen_query_pair, recover_message_sign, AnswerVector, MessageStore, QueryPair,
};
use crate::lattice::{LatticeCodeword, LatticeParams, NestedLatticePair};
use crate::rate::{alpha_opt, optimize_partition_bruteforce, optimize_partition_greedy, BRUTE_FORCE_MAX_SERVERS};
use crate::seed;

/// Two disjoint server groups with their aggregate gains. Server indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
    /// Σ_{k∈S1} |h_k|.
    pub h_tilde1: f64,
    pub h_tilde2: f64,
    /// Σ_{k∈S1} g_k.
    pub g_tilde1: f64,
    pub g_tilde2: f64,
    /// h̃₁/h̃₂, applied by every server of group 2.
    pub scale: f64,
    /// sign(h_k) for every server, so that h_k·sign_k = |h_k|.
    pub sign_flips: Vec<i8>,
}

impl PartitionPlan {
    /// Validate the groups against the gains and relabel them so h̃₁ ≤ h̃₂.
    pub fn new(mut s1: Vec<usize>, mut s2: Vec<usize>, h: &[f64], g: &[f64]) -> Result<Self> {
        let n = h.len();
        if g.len() != n {
            return Err(invalid("gain vectors differ in length"));
        }
        if s1.is_empty() || s2.is_empty() {
            return Err(invalid("both server groups must be non-empty"));
        }
        s1.sort_unstable();
        s2.sort_unstable();
        for s in [&s1, &s2] {
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid("duplicate server in a group"));
            }
            if let Some(&k) = s.iter().find(|&&k| k >= n) {
                return Err(invalid(format!("server {k} outside 0..{n}")));
            }
        }
        if s1.iter().any(|k| s2.binary_search(k).is_ok()) {
            return Err(invalid("server groups overlap"));
        }
        let sum_h = |s: &[usize]| s.iter().fold(0.0, |acc, &k| acc + h[k].abs());
        let sum_g = |s: &[usize]| s.iter().fold(0.0, |acc, &k| acc + g[k]);
        let (mut h1, mut h2) = (sum_h(&s1), sum_h(&s2));
        if h1 > h2 {
            std::mem::swap(&mut s1, &mut s2);
            std::mem::swap(&mut h1, &mut h2);
        }
        if h1.is_nan() || h1 <= 0.0 {
            return Err(invalid("a server group has zero aggregate user-side gain"));
        }
        let (g1, g2) = (sum_g(&s1), sum_g(&s2));
        let sign_flips = h.iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect();
        Ok(Self {
            s1,
            s2,
            h_tilde1: h1,
            h_tilde2: h2,
            g_tilde1: g1,
            g_tilde2: g2,
            scale: h1 / h2,
            sign_flips,
        })
    }

    pub fn servers(&self) -> usize {
        self.sign_flips.len()
    }

    pub fn group_of(&self, server: usize) -> Option<Group> {
        if self.s1.binary_search(&server).is_ok() {
            Some(Group::One)
        } else if self.s2.binary_search(&server).is_ok() {
            Some(Group::Two)
        } else {
            None
        }
    }

    /// Amplitude factor applied by a server: sign flip times group scale (0 when idle).
    pub fn tx_factor(&self, server: usize) -> f64 {
        let sign = self.sign_flips[server] as f64;
        match self.group_of(server) {
            Some(Group::One) => sign,
            Some(Group::Two) => sign * self.scale,
            None => 0.0,
        }
    }

    pub fn members(&self, group: Group) -> &[usize] {
        match group {
            Group::One => &self.s1,
            Group::Two => &self.s2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    One,
    Two,
}

impl Group {
    pub fn other(self) -> Group {
        match self {
            Group::One => Group::Two,
            Group::Two => Group::One,
        }
    }

    fn index(self) -> usize {
        match self {
            Group::One => 0,
            Group::Two => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    NonFading,
    Fading,
}

/// How the user forms the two groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSource {
    /// Uniformly random halves of size ⌊N/2⌋ (the odd server idles).
    Random,
    Given {
        s1: Vec<usize>,
        s2: Vec<usize>,
    },
    BruteForce,
    Greedy,
    /// Brute force when N is small enough, greedy otherwise.
    Optimized,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundPlan<'a> {
    pub partition: PartitionPlan,
    #[serde(skip)]
    pub pair: &'a NestedLatticePair,
    pub power: f64,
    pub alpha: f64,
    /// Equivalent-noise second moment at the optimized α.
    pub sigma_tilde2: f64,
    pub mode: Mode,
    /// Sampling seeds of group 1 and group 2.
    pub seeds: [u64; 2],
}

impl RoundPlan<'_> {
    /// Noise variance seen after dividing y by h̃₁.
    pub fn effective_noise_var(&self, sigma_y2: f64) -> f64 {
        sigma_y2 / (self.partition.h_tilde1 * self.partition.h_tilde1)
    }

    /// Receiver scaling α/h̃₁.
    pub fn receiver_scale(&self) -> f64 {
        self.alpha / self.partition.h_tilde1
    }

    pub fn seed(&self, group: Group) -> u64 {
        self.seeds[group.index()]
    }
}

fn random_halves<R: Rng + ?Sized>(servers: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..servers).collect();
    ids.shuffle(rng);
    let half = servers / 2;
    (ids[..half].to_vec(), ids[half..2 * half].to_vec())
}

/// Choose the groups, sign flips, power alignment and MMSE coefficient for a round.
pub fn plan_round<'a, R: Rng + ?Sized>(
    channel: &ChannelRealization,
    pair: &'a NestedLatticePair,
    power: f64,
    mode: Mode,
    source: &PartitionSource,
    seeds: [u64; 2],
    rng: &mut R,
) -> Result<RoundPlan<'a>> {
    let n = channel.servers();
    if n < 2 {
        return Err(invalid("need at least 2 servers"));
    }
    if !(power.is_finite() && power > 0.0) {
        return Err(invalid(format!("power must be positive, got {power}")));
    }
    if mode == Mode::NonFading && channel.h.iter().chain(&channel.g).any(|&v| v != 1.0) {
        return Err(invalid("non-fading mode requires unit channel gains"));
    }
    let (h, g) = (&channel.h, &channel.g);
    // The optimizers need strictly positive noise; a noiseless channel is
    // optimized as if it had unit noise on the zero side.
    let sy = if channel.sigma_y2 > 0.0 { channel.sigma_y2 } else { 1.0 };
    let sw = if channel.sigma_w2 > 0.0 { channel.sigma_w2 } else { 1.0 };
    let partition = match source {
        PartitionSource::Random => {
            let (s1, s2) = random_halves(n, rng);
            PartitionPlan::new(s1, s2, h, g)?
        }
        PartitionSource::Given { s1, s2 } => PartitionPlan::new(s1.clone(), s2.clone(), h, g)?,
        PartitionSource::BruteForce => optimize_partition_bruteforce(h, g, power, sy, sw)?,
        PartitionSource::Greedy => optimize_partition_greedy(h, g, power, sy, sw)?,
        PartitionSource::Optimized if n <= BRUTE_FORCE_MAX_SERVERS => {
            optimize_partition_bruteforce(h, g, power, sy, sw)?
        }
        PartitionSource::Optimized => optimize_partition_greedy(h, g, power, sy, sw)?,
    };
    let eff = channel.sigma_y2 / (partition.h_tilde1 * partition.h_tilde1);
    let (alpha, sigma_tilde2) = alpha_opt(power, eff);
    Ok(RoundPlan {
        partition,
        pair,
        power,
        alpha,
        sigma_tilde2,
        mode,
        seeds,
    })
}

/// Sampling seed of one codeword block for a group.
pub fn block_seed(group_seed: u64, block: usize) -> u64 {
    seed::derive(group_seed, seed::label::BLOCK, block as u64)
}

/// The k answer symbols carried by codeword `block` (zero padded past L).
pub fn answer_block(answer: &AnswerVector, block: usize, k: usize) -> Vec<u32> {
    (0..k)
        .map(|j| answer.0.get(block * k + j).copied().unwrap_or(0))
        .collect()
}

/// A group's unscaled codeword for one block: λ = φ(u) plus a coarse-lattice
/// dither drawn from D_{Λ_w+λ,√P} with the group's shared seed.
pub fn group_codeword(
    answer: &AnswerVector,
    block: usize,
    plan: &RoundPlan<'_>,
    group: Group,
) -> Result<LatticeCodeword> {
    let pair = plan.pair;
    let u = answer_block(answer, block, pair.k());
    let lambda = pair.encode_symbols(&u)?;
    pair.sample_coset_gaussian(&lambda, plan.power.sqrt(), block_seed(plan.seed(group), block))
}

/// What server `server` puts on the air for codeword `block`.
pub fn server_respond(
    query: &[i8],
    store: &MessageStore,
    block: usize,
    plan: &RoundPlan<'_>,
    server: usize,
) -> Result<Vec<f64>> {
    let Some(group) = plan.partition.group_of(server) else {
        return Ok(vec![0.0; plan.pair.n()]);
    };
    let answer = compute_answer(query, store)?;
    let cw = group_codeword(&answer, block, plan, group)?;
    Ok(scale_signal(&cw.x, plan.partition.tx_factor(server)))
}

fn scale_signal(x: &[f64], factor: f64) -> Vec<f64> {
    x.iter().map(|v| factor * v).collect()
}

/// Per-server transmissions for one block given both groups' codewords.
pub fn server_signals(plan: &RoundPlan<'_>, x1: &LatticeCodeword, x2: &LatticeCodeword) -> Vec<Vec<f64>> {
    (0..plan.partition.servers())
        .map(|k| match plan.partition.group_of(k) {
            Some(Group::One) => scale_signal(&x1.x, plan.partition.tx_factor(k)),
            Some(Group::Two) => scale_signal(&x2.x, plan.partition.tx_factor(k)),
            None => vec![0.0; plan.pair.n()],
        })
        .collect()
}

/// MLAN decoding: [Q_{Λ_f}((α/h̃₁)·y)] mod Λ_w, mapped back through φ⁻¹.
/// The result is u₁ + u₂ mod p.
pub fn user_decode(y: &ReceivedBlock, plan: &RoundPlan<'_>) -> Result<Vec<u32>> {
    let pair = plan.pair;
    if y.samples.len() != pair.n() {
        return Err(invalid(format!(
            "received block has length {}, expected {}",
            y.samples.len(),
            pair.n()
        )));
    }
    let c = plan.receiver_scale();
    let scaled: Vec<f64> = y.samples.iter().map(|v| c * v).collect();
    let v_hat = pair.mod_coarse(&pair.quantize_fine(&scaled));
    pair.decode_coset(&v_hat)
}

/// Everything produced while sending one codeword block.
#[derive(Debug, Clone)]
pub struct BlockOutcome {
    pub x1: LatticeCodeword,
    pub x2: LatticeCodeword,
    pub signals: Vec<Vec<f64>>,
    pub y: ReceivedBlock,
    pub decoded: Vec<u32>,
}

pub fn simulate_block<R: Rng + ?Sized>(
    plan: &RoundPlan<'_>,
    channel: &ChannelRealization,
    a1: &AnswerVector,
    a2: &AnswerVector,
    block: usize,
    noise: &mut R,
) -> Result<BlockOutcome> {
    let x1 = group_codeword(a1, block, plan, Group::One)?;
    let x2 = group_codeword(a2, block, plan, Group::Two)?;
    let signals = server_signals(plan, &x1, &x2);
    let y = transmit_mac(&signals, &channel.h, channel.sigma_y2, Role::User, noise)?;
    let decoded = user_decode(&y, plan)?;
    Ok(BlockOutcome {
        x1,
        x2,
        signals,
        y,
        decoded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub decoded: AnswerVector,
    pub symbol_errors: usize,
    /// Channel uses consumed, ⌈L/k⌉·n.
    pub n_total: usize,
    /// L·log p / n_total, nats per channel use.
    pub achieved_rate: f64,
}

impl RetrievalResult {
    pub fn message_error(&self) -> bool {
        self.symbol_errors > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block: usize,
    /// Decoded u₁ + u₂ for this block, before sign correction.
    pub decoded_sum: Vec<u32>,
}

/// Audit record of a full round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub query: QueryPair,
    pub partition: PartitionPlan,
    pub lattice: LatticeParams,
    pub alpha: f64,
    pub sigma_tilde2: f64,
    pub blocks: Vec<BlockRecord>,
    pub result: RetrievalResult,
}

/// Retrieve message `i` (1-based) in ⌈L/k⌉ codeword rounds.
#[allow(clippy::too_many_arguments)]
pub fn run_retrieval(
    store: &MessageStore,
    i: usize,
    channel: &ChannelRealization,
    pair: &NestedLatticePair,
    power: f64,
    mode: Mode,
    source: &PartitionSource,
    master_seed: u64,
) -> Result<RetrievalResult> {
    run_retrieval_traced(store, i, channel, pair, power, mode, source, master_seed).map(|t| t.result)
}

#[allow(clippy::too_many_arguments)]
pub fn run_retrieval_traced(
    store: &MessageStore,
    i: usize,
    channel: &ChannelRealization,
    pair: &NestedLatticePair,
    power: f64,
    mode: Mode,
    source: &PartitionSource,
    master_seed: u64,
) -> Result<RoundTranscript> {
    run_retrieval_observed(store, i, channel, pair, power, mode, source, master_seed, |_, _| {})
}

/// Same as [`run_retrieval_traced`], calling `observe` after every block.
#[allow(clippy::too_many_arguments)]
pub fn run_retrieval_observed<F>(
    store: &MessageStore,
    i: usize,
    channel: &ChannelRealization,
    pair: &NestedLatticePair,
    power: f64,
    mode: Mode,
    source: &PartitionSource,
    master_seed: u64,
    mut observe: F,
) -> Result<RoundTranscript>
where
    F: FnMut(&RoundPlan<'_>, &BlockOutcome),
{
    if store.p() != pair.p() {
        return Err(invalid(format!(
            "store is over F_{} but the lattice over F_{}",
            store.p(),
            pair.p()
        )));
    }
    let m = store.message_count();
    let mut qrng = seed::rng(seed::derive(master_seed, seed::label::QUERY, 0));
    let query = gen_query_pair(i, m, &mut qrng)?;
    let mut prng = seed::rng(seed::derive(master_seed, seed::label::PARTITION, 0));
    let plan = plan_round(
        channel,
        pair,
        power,
        mode,
        source,
        [query.seed1, query.seed2],
        &mut prng,
    )?;

    let a1 = compute_answer(&query.q1, store)?;
    let a2 = compute_answer(&query.q2, store)?;
    let k = pair.k();
    let len = store.message_len();
    let blocks = len.div_ceil(k);
    let mut sum = Vec::with_capacity(blocks * k);
    let mut records = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let mut noise = seed::rng(seed::derive(master_seed, seed::label::NOISE_USER, b as u64));
        let out = simulate_block(&plan, channel, &a1, &a2, b, &mut noise)?;
        observe(&plan, &out);
        sum.extend_from_slice(&out.decoded);
        records.push(BlockRecord {
            block: b,
            decoded_sum: out.decoded,
        });
    }
    sum.truncate(len);
    let decoded = recover_message_sign(&AnswerVector(sum), query.sign_bit(), store.p());
    let truth = store.message(i - 1);
    let symbol_errors = decoded.0.iter().zip(truth).filter(|(a, b)| a != b).count();
    let n_total = blocks * pair.n();
    let achieved_rate = len as f64 * (store.p() as f64).ln() / n_total as f64;
    let result = RetrievalResult {
        decoded,
        symbol_errors,
        n_total,
        achieved_rate,
    };
    Ok(RoundTranscript {
        query,
        lattice: pair.params(),
        alpha: plan.alpha,
        sigma_tilde2: plan.sigma_tilde2,
        partition: plan.partition,
        blocks: records,
        result,
    })
}

/// u₁ + u₂ for one block, as the noiseless decoder should return it.
pub fn expected_block_sum(a1: &AnswerVector, a2: &AnswerVector, block: usize, k: usize, p: u32) -> Vec<u32> {
    let s = add_answers(
        &AnswerVector(answer_block(a1, block, k)),
        &AnswerVector(answer_block(a2, block, k)),
        p,
    );
    s.0
}
