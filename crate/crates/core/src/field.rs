//! Retrieval-layer algebra over F_p: the replicated message store, the signed
//! query pair and the servers' linear answers.
//!
//! Indices are 1-based at the public surface (`QueryPair::index`) and 0-based
//! everywhere inside.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed;

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    if p < 4 {
        return true;
    }
    if p.is_multiple_of(2) {
        return false;
    }
    let mut d = 3u64;
    while d.saturating_mul(d) <= p {
        if p.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

pub(crate) fn check_prime(p: u32) -> Result<()> {
    if is_prime(p as u64) {
        Ok(())
    } else {
        Err(invalid(format!("modulus {p} is not prime")))
    }
}

/// Map a signed small integer into F_p (-1 becomes p-1).
pub fn to_field(v: i64, p: u32) -> u32 {
    v.rem_euclid(p as i64) as u32
}

/// M messages of L symbols each, every symbol a residue in [0, p).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageStore {
    p: u32,
    messages: Vec<Vec<u32>>,
}

impl MessageStore {
    /// Uniform i.i.d. store, deterministic in `seed`.
    pub fn random(p: u32, count: usize, len: usize, seed: u64) -> Result<Self> {
        check_prime(p)?;
        if count == 0 || len == 0 {
            return Err(invalid("message count and length must be at least 1"));
        }
        let mut rng = seed::rng(seed::derive(seed, seed::label::STORE, 0));
        let messages = (0..count)
            .map(|_| (0..len).map(|_| rng.random_range(0..p)).collect())
            .collect();
        Ok(Self { p, messages })
    }

    pub fn from_rows(p: u32, messages: Vec<Vec<u32>>) -> Result<Self> {
        check_prime(p)?;
        let len = messages.first().map(Vec::len).unwrap_or(0);
        if messages.is_empty() || len == 0 {
            return Err(invalid("store must hold at least one non-empty message"));
        }
        for (m, row) in messages.iter().enumerate() {
            if row.len() != len {
                return Err(invalid(format!(
                    "message {} has length {}, expected {len}",
                    m + 1,
                    row.len()
                )));
            }
            if let Some(&s) = row.iter().find(|&&s| s >= p) {
                return Err(invalid(format!("symbol {s} in message {} is not below p={p}", m + 1)));
            }
        }
        Ok(Self { p, messages })
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn message_count(&self) -> usize {
        self.messages.len()
    }

    pub fn message_len(&self) -> usize {
        self.messages[0].len()
    }

    /// Message by 0-based index.
    pub fn message(&self, m: usize) -> &[u32] {
        &self.messages[m]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.messages
    }

    /// One message per row, decimal residues, no header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for row in &self.messages {
            wtr.write_record(row.iter().map(u32::to_string))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(p: u32, r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.parse::<u32>().map_err(|e| invalid(format!("bad residue {f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(p, rows)
    }
}

/// Signed selector queries for the two server groups plus the per-group
/// sampling seeds that let members of one group draw identical lattice points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPair {
    /// Desired message, 1-based.
    pub i: usize,
    pub b: Vec<u8>,
    #[serde(rename = "Q1")]
    pub q1: Vec<i8>,
    #[serde(rename = "Q2")]
    pub q2: Vec<i8>,
    pub seed1: u64,
    pub seed2: u64,
}

impl QueryPair {
    /// Build the pair for a given selector vector `b`.
    pub fn from_selector(i: usize, b: Vec<u8>, seed1: u64, seed2: u64) -> Result<Self> {
        let m = b.len();
        if i == 0 || i > m {
            return Err(invalid(format!("index {i} outside 1..={m}")));
        }
        if b.iter().any(|&x| x > 1) {
            return Err(invalid("selector entries must be 0 or 1"));
        }
        let q1: Vec<i8> = b.iter().map(|&x| x as i8).collect();
        let mut q2: Vec<i8> = b.iter().map(|&x| -(x as i8)).collect();
        if b[i - 1] == 1 {
            q2[i - 1] += 1;
        } else {
            q2[i - 1] -= 1;
        }
        Ok(Self {
            i,
            b,
            q1,
            q2,
            seed1,
            seed2,
        })
    }

    /// The bit b_i that fixes the sign of A1 + A2.
    pub fn sign_bit(&self) -> u8 {
        self.b[self.i - 1]
    }

    pub fn message_count(&self) -> usize {
        self.b.len()
    }
}

/// Draw b uniformly from {0,1}^M and fresh group seeds. Never looks at the store.
pub fn gen_query_pair<R: Rng + ?Sized>(i: usize, m: usize, rng: &mut R) -> Result<QueryPair> {
    if m == 0 || i == 0 || i > m {
        return Err(invalid(format!("index {i} outside 1..={m}")));
    }
    let b: Vec<u8> = (0..m).map(|_| rng.random_range(0..2u8)).collect();
    let seed1 = rng.random();
    let seed2 = rng.random();
    QueryPair::from_selector(i, b, seed1, seed2)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerVector(pub Vec<u32>);

impl AnswerVector {
    pub fn symbols(&self) -> &[u32] {
        &self.0
    }
}

/// A = sum_m Q(m) W_m over F_p, componentwise.
pub fn compute_answer(query: &[i8], store: &MessageStore) -> Result<AnswerVector> {
    if query.len() != store.message_count() {
        return Err(invalid(format!(
            "query length {} does not match message count {}",
            query.len(),
            store.message_count()
        )));
    }
    let p = store.p() as u64;
    let mut acc = vec![0u64; store.message_len()];
    for (&q, row) in query.iter().zip(store.rows()) {
        if !(-1..=1).contains(&q) {
            return Err(invalid(format!("query entry {q} outside {{-1,0,1}}")));
        }
        if q == 0 {
            continue;
        }
        let c = to_field(q as i64, store.p()) as u64;
        for (a, &w) in acc.iter_mut().zip(row) {
            *a = (*a + c * w as u64) % p;
        }
    }
    Ok(AnswerVector(acc.into_iter().map(|a| a as u32).collect()))
}

/// Undo the sign of A1 + A2: identity when b_i = 1, negation mod p when b_i = 0.
pub fn recover_message_sign(decoded: &AnswerVector, b_i: u8, p: u32) -> AnswerVector {
    if b_i == 1 {
        decoded.clone()
    } else {
        AnswerVector(decoded.0.iter().map(|&a| (p - a % p) % p).collect())
    }
}

/// Componentwise sum mod p.
pub fn add_answers(a: &AnswerVector, b: &AnswerVector, p: u32) -> AnswerVector {
    AnswerVector(
        a.0.iter()
            .zip(&b.0)
            .map(|(&x, &y)| ((x as u64 + y as u64) % p as u64) as u32)
            .collect(),
    )
}
