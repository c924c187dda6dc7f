//! Block-fading real AWGN multiple-access channel from the servers to the
//! user, and the curious server's view of the same transmissions.
//!
//! One eavesdropper gain vector `g` is modeled (g_k is the gain from server k
//! to the eavesdropping antenna). Gains are constant over a block of n uses.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub sigma_y2: f64,
    pub sigma_w2: f64,
}

impl ChannelRealization {
    pub fn new(h: Vec<f64>, g: Vec<f64>, sigma_y2: f64, sigma_w2: f64) -> Result<Self> {
        if h.len() < 2 {
            return Err(invalid(format!("need at least 2 servers, got {}", h.len())));
        }
        if g.len() != h.len() {
            return Err(invalid("user and eavesdropper gain vectors differ in length"));
        }
        if h.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(invalid("channel gains must be finite"));
        }
        for (name, v) in [("sigma_y2", sigma_y2), ("sigma_w2", sigma_w2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(Self {
            h,
            g,
            sigma_y2,
            sigma_w2,
        })
    }

    /// h, g i.i.d. N(0, 1).
    pub fn draw<R: Rng + ?Sized>(servers: usize, sigma_y2: f64, sigma_w2: f64, rng: &mut R) -> Result<Self> {
        if servers < 2 {
            return Err(invalid(format!("need at least 2 servers, got {servers}")));
        }
        let h = (0..servers).map(|_| StandardNormal.sample(rng)).collect();
        let g = (0..servers).map(|_| StandardNormal.sample(rng)).collect();
        Self::new(h, g, sigma_y2, sigma_w2)
    }

    /// All gains equal to one.
    pub fn non_fading(servers: usize, sigma_y2: f64, sigma_w2: f64) -> Result<Self> {
        Self::new(vec![1.0; servers], vec![1.0; servers], sigma_y2, sigma_w2)
    }

    pub fn servers(&self) -> usize {
        self.h.len()
    }

    /// Zero-noise test mode on the user side.
    pub fn is_noiseless(&self) -> bool {
        self.sigma_y2 == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Eavesdropper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceivedBlock {
    pub samples: Vec<f64>,
    pub role: Role,
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(invalid(format!("block length mismatch: {a} vs {b}")))
    }
}

/// y = Σ_k gains_k·x_k + noise. Signals are summed in order first, then one
/// noise vector of variance `sigma2` is drawn and added.
pub fn transmit_mac<R: Rng + ?Sized>(
    signals: &[Vec<f64>],
    gains: &[f64],
    sigma2: f64,
    role: Role,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    if signals.is_empty() {
        return Err(invalid("no signals to transmit"));
    }
    if signals.len() != gains.len() {
        return Err(invalid(format!("{} signals but {} gains", signals.len(), gains.len())));
    }
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(invalid(format!("noise variance must be non-negative, got {sigma2}")));
    }
    let n = signals[0].len();
    let mut y = vec![0.0; n];
    for (x, &gain) in signals.iter().zip(gains) {
        check_len(x.len(), n)?;
        for (yj, &xj) in y.iter_mut().zip(x) {
            *yj += gain * xj;
        }
    }
    if sigma2 > 0.0 {
        let sd = sigma2.sqrt();
        for yj in y.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *yj += sd * e;
        }
    }
    Ok(ReceivedBlock { samples: y, role })
}

/// z = w - own_gain·own_signal.
pub fn eavesdropper_cancel_own(w: &ReceivedBlock, own_signal: &[f64], own_gain: f64) -> Result<ReceivedBlock> {
    eavesdropper_cancel_group(w, std::slice::from_ref(&own_signal.to_vec()), &[own_gain])
}

/// Subtract every known contribution Σ gain·signal from w.
pub fn eavesdropper_cancel_group(
    w: &ReceivedBlock,
    group_signals: &[Vec<f64>],
    group_gains: &[f64],
) -> Result<ReceivedBlock> {
    if group_signals.len() != group_gains.len() {
        return Err(invalid("group signals and gains differ in length"));
    }
    let mut z = w.samples.clone();
    for (x, &gain) in group_signals.iter().zip(group_gains) {
        check_len(x.len(), z.len())?;
        for (zj, &xj) in z.iter_mut().zip(x) {
            *zj -= gain * xj;
        }
    }
    Ok(ReceivedBlock {
        samples: z,
        role: Role::Eavesdropper,
    })
}

/// Long-format trace of named blocks: `block,index,value`.
pub fn write_trace_csv<W: std::io::Write>(out: W, blocks: &[(&str, &[f64])]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["block", "index", "value"])?;
    for (name, v) in blocks {
        for (j, x) in v.iter().enumerate() {
            wtr.write_record([name.to_string(), j.to_string(), format!("{x:?}")])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn draw_is_reproducible() {
        let a = ChannelRealization::draw(4, 1.0, 1.0, &mut seed::rng(3)).unwrap();
        let b = ChannelRealization::draw(4, 1.0, 1.0, &mut seed::rng(3)).unwrap();
        assert_eq!(a, b);
        assert!(ChannelRealization::draw(1, 1.0, 1.0, &mut seed::rng(3)).is_err());
    }

    #[test]
    fn non_fading_has_unit_gains() {
        let c = ChannelRealization::non_fading(3, 0.5, 2.0).unwrap();
        assert_eq!(c.h, vec![1.0; 3]);
        assert_eq!(c.g, vec![1.0; 3]);
        assert!(ChannelRealization::non_fading(3, -1.0, 2.0).is_err());
    }

    #[test]
    fn gain_moments() {
        let mut rng = seed::rng(17);
        let draws = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..draws / 2 {
            let c = ChannelRealization::draw(2, 1.0, 1.0, &mut rng).unwrap();
            for v in c.h {
                sum += v;
                sq += v * v;
            }
        }
        let n = draws as f64;
        let mean = sum / n;
        let var = sq / n - mean * mean;
        assert!(mean.abs() < 3.0 / n.sqrt(), "mean {mean}");
        // Var of the sample variance of N(0,1) is 2/n
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "var {var}");
    }

    #[test]
    fn noiseless_superposition() {
        let v = vec![0.5, -1.0, 2.0];
        let y = transmit_mac(&[v.clone(), v.clone()], &[1.0, 1.0], 0.0, Role::User, &mut seed::rng(0)).unwrap();
        assert_eq!(y.samples, vec![1.0, -2.0, 4.0]);
        let y = transmit_mac(std::slice::from_ref(&v), &[1.0], 0.0, Role::User, &mut seed::rng(0)).unwrap();
        assert_eq!(y.samples, v);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = transmit_mac(
            &[vec![1.0, 2.0], vec![1.0]],
            &[1.0, 1.0],
            0.0,
            Role::User,
            &mut seed::rng(0),
        );
        assert!(r.is_err());
        let r = transmit_mac(&[vec![1.0]], &[1.0, 1.0], 0.0, Role::User, &mut seed::rng(0));
        assert!(r.is_err());
    }

    #[test]
    fn noise_variance_calibration() {
        let n = 1_000_000;
        let y = transmit_mac(&[vec![0.0; n]], &[1.0], 4.0, Role::User, &mut seed::rng(5)).unwrap();
        let mean = y.samples.iter().sum::<f64>() / n as f64;
        let var = y.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 4.0).abs() < 0.04, "var {var}");
    }

    #[test]
    fn own_cancellation() {
        let x = vec![1.0, 2.0, -3.0];
        let w = transmit_mac(
            std::slice::from_ref(&x),
            &[0.7],
            0.0,
            Role::Eavesdropper,
            &mut seed::rng(0),
        )
        .unwrap();
        let z = eavesdropper_cancel_own(&w, &x, 0.7).unwrap();
        assert_eq!(z.samples, vec![0.0; 3]);
        let z = eavesdropper_cancel_own(&w, &x, 0.0).unwrap();
        assert_eq!(z.samples, w.samples);
    }

    #[test]
    fn two_server_residual_is_other_signal() {
        let x1 = vec![1.5, -0.5];
        let x2 = vec![0.25, 3.0];
        let w = transmit_mac(
            &[x1.clone(), x2.clone()],
            &[1.0, 1.0],
            0.0,
            Role::Eavesdropper,
            &mut seed::rng(0),
        )
        .unwrap();
        let z2 = eavesdropper_cancel_own(&w, &x2, 1.0).unwrap();
        assert_eq!(z2.samples, x1);
    }

    #[test]
    fn group_cancellation_non_fading_four_servers() {
        let x1 = vec![1.0, -2.0];
        let x2 = vec![0.5, 0.5];
        let sig = vec![x1.clone(), x1.clone(), x2.clone(), x2.clone()];
        let w = transmit_mac(&sig, &[1.0; 4], 0.0, Role::Eavesdropper, &mut seed::rng(0)).unwrap();
        let z = eavesdropper_cancel_group(&w, &sig[2..], &[1.0, 1.0]).unwrap();
        assert_eq!(z.samples, vec![2.0, -4.0]);
        let all = eavesdropper_cancel_group(&w, &sig, &[1.0; 4]).unwrap();
        assert_eq!(all.samples, vec![0.0, 0.0]);
    }

    #[test]
    fn fading_group_residual() {
        // group 1 = {0}, group 2 = {1, 2}; group 2 transmits scaled by h1/h2
        let (h1, h2) = (0.6, 1.5);
        let scale = h1 / h2;
        let g = [0.3, -1.1, 0.4];
        let x1 = vec![1.0, 2.0];
        let x2 = vec![-1.0, 0.5];
        let tx2: Vec<f64> = x2.iter().map(|v| scale * v).collect();
        let sig = vec![x1.clone(), tx2.clone(), tx2.clone()];
        let w = transmit_mac(&sig, &g, 0.0, Role::Eavesdropper, &mut seed::rng(0)).unwrap();
        let z2 = eavesdropper_cancel_group(&w, &sig[..1], &g[..1]).unwrap();
        let g2 = g[1] + g[2];
        for (z, x) in z2.samples.iter().zip(&x2) {
            assert!((z - g2 * scale * x).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_blocks_are_uncorrelated() {
        let n = 100_000;
        let a = transmit_mac(
            &[vec![0.0; n]],
            &[1.0],
            1.0,
            Role::User,
            &mut seed::rng(seed::derive(1, 4, 0)),
        )
        .unwrap();
        let b = transmit_mac(
            &[vec![0.0; n]],
            &[1.0],
            1.0,
            Role::User,
            &mut seed::rng(seed::derive(1, 4, 1)),
        )
        .unwrap();
        let cov = a.samples.iter().zip(&b.samples).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        assert!(cov.abs() < 4.0 / (n as f64).sqrt(), "cov {cov}");
    }

    #[test]
    fn realization_json() {
        let c = ChannelRealization::new(vec![1.0, -0.5], vec![0.2, 0.3], 1.0, 0.5).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: ChannelRealization = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn trace_csv_shape() {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[("y", &[1.0, 2.0]), ("z", &[0.5])]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("block,index,value\n"));
    }
}
