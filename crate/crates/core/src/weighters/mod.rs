//! Importance weights and the models that estimate them.
//!
//! Under elapsed-time sampling a click with eventual label `y` and delay `h`
//! yields, per click, `p1` positive samples and `p0 + p1·P(h>e)` negative ones,
//! so the observed distribution is
//!
//! ```text
//! q(y=1|x) = p1 / (1 + p_dp)          q(y=0|x) = (p0 + p_dp) / (1 + p_dp)
//! p_dp = p1·P(h>e)                    p_rn = p0 / (p0 + p_dp)
//! ```
//!
//! and `p/q` gives weights `1 + p_dp` for positives and `(1 + p_dp)·p_rn` for
//! negatives. Both factors are probabilities, so the weights stay in `[0, 2]`.

mod dfm;
mod estimators;

pub use dfm::{dfm_loss, DfmConfig, DfmModel, DfmSample};
pub use estimators::{
    build_dp_rn_dataset, build_fsiw_dataset, DpRnSample, DualHeadEstimator, FsiwEstimators, FsiwSample,
};

use crate::datagen::{Features, GroundTruth, SyntheticTruth};
use crate::error::{Error, Result};
use crate::relabel::ElapsedPolicy;

/// Floor applied to `f_obs` before taking its reciprocal.
pub const FSIW_OBS_FLOOR: f64 = 1e-3;

fn check_prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{name} = {v} outside [0, 1]")))
    }
}

/// ES-DFM weight of a sample with the given observed label.
pub fn es_weight(observed_label: u8, f_dp: f64, f_rn: f64) -> Result<f64> {
    check_prob("f_dp", f_dp)?;
    check_prob("f_rn", f_rn)?;
    Ok(if observed_label == 1 {
        1.0 + f_dp
    } else {
        (1.0 + f_dp) * f_rn
    })
}

/// Exact `(p_dp, p_rn)` for a click at `click_ts` waiting `elapsed` seconds.
///
/// When no negatives can occur (`p0 + p_dp = 0`) `p_rn` is taken as 1.
pub fn ideal_dp_rn(truth: &SyntheticTruth, x: &Features, click_ts: f64, elapsed: f64) -> (f64, f64) {
    let p1 = truth.cvr(x, click_ts);
    let p_dp = p1 * truth.p_delay_exceeds(x, elapsed);
    let neg = (1.0 - p1) + p_dp;
    let p_rn = if neg > 0.0 { (1.0 - p1) / neg } else { 1.0 };
    (p_dp, p_rn)
}

/// Closed-form ES weight from the known synthetic truth under a Dirac policy.
pub fn ideal_weights(
    truth: &GroundTruth,
    policy: &ElapsedPolicy,
    x: &Features,
    click_ts: f64,
    observed_label: u8,
) -> Result<f64> {
    let GroundTruth::Synthetic(truth) = truth else {
        return Err(Error::Unsupported("ideal weights need a synthetic ground truth".into()));
    };
    let c = policy
        .dirac_constant()
        .ok_or_else(|| Error::Unsupported("ideal weights need a Dirac elapsed policy".into()))?;
    let (p_dp, p_rn) = ideal_dp_rn(truth, x, click_ts, c);
    es_weight(observed_label, p_dp, p_rn)
}

/// Largest `|E_q[w·ℓ] − E_p[ℓ]|` over every cell of a discrete space and a
/// family of bounded test losses.
///
/// `q` is built from the per-click sample counts of elapsed-time sampling, not
/// from the weight formulas, so the check exercises the weights against the
/// stream they are meant to correct. Drifting truths are checked at several
/// phases of the drift.
pub fn importance_identity_check(truth: &SyntheticTruth, policy: &ElapsedPolicy, cells: usize) -> Result<f64> {
    let c = policy
        .dirac_constant()
        .ok_or_else(|| Error::Unsupported("identity check needs a Dirac elapsed policy".into()))?;
    let times: Vec<f64> = match &truth.drift {
        Some(d) => (0..4).map(|k| k as f64 * d.period / 4.0).collect(),
        None => vec![0.0],
    };
    // ℓ(y) pairs: constant, cross-entropy of a few fixed predictions, asymmetric.
    let mut losses: Vec<[f64; 2]> = vec![[1.0, 1.0], [0.0, 1.0], [1.0, 0.0], [0.3, -2.5]];
    for f in [0.01, 0.2269, 0.5, 0.9] {
        losses.push([-(1.0f64 - f).ln(), -f.ln()]);
    }
    let mut worst = 0.0f64;
    for cell in 0..cells as u32 {
        let x = Features::cell(cell);
        for &t in &times {
            let p1 = truth.cvr(&x, t);
            let p0 = 1.0 - p1;
            let survive = truth.p_delay_exceeds(&x, c);
            let pos_per_click = p1 * (1.0 - survive) + p1 * survive;
            let neg_per_click = p0 + p1 * survive;
            let total = pos_per_click + neg_per_click;
            let q = [neg_per_click / total, pos_per_click / total];
            let (p_dp, p_rn) = ideal_dp_rn(truth, &x, t, c);
            let w = [es_weight(0, p_dp, p_rn)?, es_weight(1, p_dp, p_rn)?];
            for l in &losses {
                let under_q = q[0] * w[0] * l[0] + q[1] * w[1] * l[1];
                let under_p = p0 * l[0] + p1 * l[1];
                worst = worst.max((under_q - under_p).abs());
            }
        }
    }
    Ok(worst)
}

/// Value `f(x)` that weighted training converges to when `f_rn` is frozen at `f_rn_value`.
pub fn analytic_fixed_point(p1: f64, p_h_gt_e: f64, f_rn_value: f64) -> Result<f64> {
    check_prob("p1", p1)?;
    check_prob("p(h>e)", p_h_gt_e)?;
    check_prob("f_rn", f_rn_value)?;
    let denom = p1 + (1.0 - p1 + p1 * p_h_gt_e) * f_rn_value;
    if denom == 0.0 {
        return Err(Error::Numeric("fixed point undefined: zero denominator".into()));
    }
    Ok(p1 / denom)
}

/// FSIW weight: `1/f_obs` for positives, `f_tn` for negatives.
pub fn fsiw_weight(observed_label: u8, f_obs: f64, f_tn: f64) -> Result<f64> {
    check_prob("f_obs", f_obs)?;
    check_prob("f_tn", f_tn)?;
    if observed_label == 1 {
        if f_obs < FSIW_OBS_FLOOR {
            log::debug!("f_obs = {f_obs} floored to {FSIW_OBS_FLOOR}");
        }
        Ok(1.0 / f_obs.max(FSIW_OBS_FLOOR))
    } else {
        Ok(f_tn)
    }
}
