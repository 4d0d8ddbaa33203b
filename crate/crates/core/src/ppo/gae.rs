use crate::error::{Error, Result};

/// Truncated generalized advantage estimates.
///
/// `values[k]` is `V(s_k)`; the successor value of the last step is
/// `bootstrap`. A `done` step has no successor: its TD target is the reward
/// alone and the recursion restarts.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Domain(format!(
            "GAE inputs differ in length: rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    if n == 0 {
        return Err(Error::Domain("GAE needs at least one step".into()));
    }
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for k in (0..n).rev() {
        let (next_v, carry) = if dones[k] {
            (0.0, 0.0)
        } else if k + 1 == n {
            (bootstrap, 0.0)
        } else {
            (values[k + 1], acc)
        };
        let delta = rewards[k] + gamma * next_v - values[k];
        acc = delta + gamma * lambda * carry;
        adv[k] = acc;
    }
    Ok(adv)
}

/// `advantages + values`, the critic regression targets.
pub fn returns(advantages: &[f64], values: &[f64]) -> Vec<f64> {
    advantages.iter().zip(values).map(|(a, v)| a + v).collect()
}
