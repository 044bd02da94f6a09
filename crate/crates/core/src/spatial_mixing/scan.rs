use crate::error::{Error, Result};
use crate::spatial_mixing::PatchSequence;
use serde::{Deserialize, Serialize};

/// Floor applied to scan denominators, preserving sign.
pub const EPS_DEN: f64 = 1e-8;

/// Initial scan memory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// `n0 = d0 = k0`
    #[default]
    K,
    /// `n0 = k0 * v0`, `d0 = k0`
    Kv,
}

/// Sign-preserving clamp of a denominator away from zero.
#[inline]
pub fn clamp_den(x: f64) -> f64 {
    if x.abs() >= EPS_DEN {
        x
    } else if x >= 0.0 {
        EPS_DEN
    } else {
        -EPS_DEN
    }
}

/// Running memory of one scan: numerator `n` and denominator `d` per lane.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanState {
    pub n: Vec<f64>,
    pub d: Vec<f64>,
    pub step: usize,
}

impl ScanState {
    pub fn start(k0: &[f64], v0: &[f64], init: InitMode) -> Self {
        let n = match init {
            InitMode::K => k0.to_vec(),
            InitMode::Kv => k0.iter().zip(v0).map(|(k, v)| k * v).collect(),
        };
        Self {
            n,
            d: k0.to_vec(),
            step: 0,
        }
    }

    /// Folds in step `i >= 1` with decay logits `w`.
    pub fn advance(&mut self, k: &[f64], v: &[f64], w: &[f64]) {
        for l in 0..self.n.len() {
            let a = (-w[l]).exp();
            self.n[l] = self.n[l] * a + k[l] * v[l];
            self.d[l] = self.d[l] * a + k[l];
        }
        self.step += 1;
    }

    /// WKV output for the current step; `eu[l]` is `e^u` for the lane's channel.
    pub fn output(&self, k: &[f64], v: &[f64], eu: &[f64], out: &mut [f64]) {
        for l in 0..self.n.len() {
            let num = self.n[l] + eu[l] * k[l] * v[l];
            out[l] = num / clamp_den(self.d[l] + eu[l] * k[l]);
        }
    }
}

/// Per-lane `e^u` for a patch of `channels` channels, `area` lanes each.
pub(crate) fn lane_exp_u(u: &[f64], area: usize) -> Vec<f64> {
    u.iter()
        .flat_map(|&x| std::iter::repeat_n(x.exp(), area))
        .collect()
}

fn check_inputs(k: &PatchSequence, v: &PatchSequence, w: &PatchSequence, u: &[f64]) -> Result<()> {
    if k.count() != v.count() {
        return Err(Error::shape("value patch count", k.count(), v.count()));
    }
    if k.count() != w.count() {
        return Err(Error::shape("decay patch count", k.count(), w.count()));
    }
    if !k.same_layout(v) || !k.same_layout(w) {
        return Err(Error::invalid(
            "key, value and decay patches must share one layout",
        ));
    }
    if u.len() != k.channels {
        return Err(Error::shape(
            "position compensation length",
            k.channels,
            u.len(),
        ));
    }
    if k.count() == 0 {
        return Err(Error::invalid("scan needs at least one patch"));
    }
    Ok(())
}

/// Intermediate values kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct ScanCache {
    /// Memory after each step, `[batch][step][lane]`.
    n: Vec<f64>,
    d: Vec<f64>,
    /// Unclamped denominators.
    den: Vec<f64>,
    out: Vec<f64>,
    init: InitMode,
}

/// Recursive weighted key-value scan over patches.
///
/// `u` is the effective per-channel position compensation (already squashed).
pub fn wkv_scan(
    k: &PatchSequence,
    v: &PatchSequence,
    w: &PatchSequence,
    u: &[f64],
    init: InitMode,
) -> Result<PatchSequence> {
    wkv_scan_cached(k, v, w, u, init).map(|(y, _)| y)
}

pub fn wkv_scan_cached(
    k: &PatchSequence,
    v: &PatchSequence,
    w: &PatchSequence,
    u: &[f64],
    init: InitMode,
) -> Result<(PatchSequence, ScanCache)> {
    check_inputs(k, v, w, u)?;
    let (count, len) = (k.count(), k.patch_len());
    let eu = lane_exp_u(u, k.patch * k.patch);
    let total = k.data.len();
    let mut cache = ScanCache {
        n: vec![0.0; total],
        d: vec![0.0; total],
        den: vec![0.0; total],
        out: vec![0.0; total],
        init,
    };
    for s in 0..k.batch {
        let mut state = ScanState::start(k.step(s, 0), v.step(s, 0), init);
        for i in 0..count {
            let (ki, vi) = (k.step(s, i), v.step(s, i));
            if i > 0 {
                state.advance(ki, vi, w.step(s, i));
            }
            let at = (s * count + i) * len;
            let out = &mut cache.out[at..at + len];
            state.output(ki, vi, &eu, out);
            for l in 0..len {
                cache.den[at + l] = state.d[l] + eu[l] * ki[l];
            }
            if let Some(l) = out.iter().position(|y| !y.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "scan step {i} (sample {s}, lane {l}): n={}, d={}",
                    state.n[l], state.d[l]
                )));
            }
            cache.n[at..at + len].copy_from_slice(&state.n);
            cache.d[at..at + len].copy_from_slice(&state.d);
        }
    }
    let y = k.with_data(cache.out.clone());
    Ok((y, cache))
}

/// Gradients of a scan with respect to keys, values, decay logits and the
/// per-channel `u`.
#[derive(Clone, Debug)]
pub struct ScanGrads {
    pub k: PatchSequence,
    pub v: PatchSequence,
    pub w: PatchSequence,
    pub u: Vec<f64>,
}

pub fn wkv_scan_backward(
    k: &PatchSequence,
    v: &PatchSequence,
    w: &PatchSequence,
    u: &[f64],
    cache: &ScanCache,
    dy: &PatchSequence,
) -> Result<ScanGrads> {
    check_inputs(k, v, w, u)?;
    if !k.same_layout(dy) {
        return Err(Error::invalid(
            "scan output gradient layout differs from the keys",
        ));
    }
    let (count, len) = (k.count(), k.patch_len());
    let area = k.patch * k.patch;
    let eu = lane_exp_u(u, area);
    let total = k.data.len();
    let mut gk = vec![0.0; total];
    let mut gv = vec![0.0; total];
    let mut gw = vec![0.0; total];
    let mut geu = vec![0.0; len];
    let mut carry_n = vec![0.0; len];
    let mut carry_d = vec![0.0; len];
    for s in 0..k.batch {
        carry_n.fill(0.0);
        carry_d.fill(0.0);
        for i in (0..count).rev() {
            let at = (s * count + i) * len;
            let (ki, vi) = (k.step(s, i), v.step(s, i));
            for l in 0..len {
                let den = cache.den[at + l];
                let dd = clamp_den(den);
                let g = dy.data[at + l];
                let g_num = g / dd;
                let g_den = if den.abs() >= EPS_DEN {
                    -g * cache.out[at + l] / dd
                } else {
                    0.0
                };
                let gn = g_num + carry_n[l];
                let gd = g_den + carry_d[l];
                gk[at + l] += g_num * eu[l] * vi[l] + g_den * eu[l];
                gv[at + l] += g_num * eu[l] * ki[l];
                geu[l] += g_num * ki[l] * vi[l] + g_den * ki[l];
                if i > 0 {
                    let prev = at - len;
                    let a = (-w.data[at + l]).exp();
                    gk[at + l] += gn * vi[l] + gd;
                    gv[at + l] += gn * ki[l];
                    gw[at + l] = -a * (gn * cache.n[prev + l] + gd * cache.d[prev + l]);
                    carry_n[l] = a * gn;
                    carry_d[l] = a * gd;
                } else {
                    match cache.init {
                        InitMode::K => gk[at + l] += gn + gd,
                        InitMode::Kv => {
                            gk[at + l] += gn * vi[l] + gd;
                            gv[at + l] += gn * ki[l];
                        }
                    }
                }
            }
        }
    }
    // d/du of e^u is e^u; sum lanes per channel.
    let gu = (0..k.channels)
        .map(|c| (c * area..(c + 1) * area).map(|l| geu[l] * eu[l]).sum())
        .collect();
    Ok(ScanGrads {
        k: k.with_data(gk),
        v: v.with_data(gv),
        w: w.with_data(gw),
        u: gu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(count: usize, data: Vec<f64>) -> PatchSequence {
        PatchSequence::from_steps(1, count, 1, 1, data).unwrap()
    }

    #[test]
    fn single_patch_closed_form() {
        let k = seq(1, vec![1.0]);
        let v = seq(1, vec![1.0]);
        let w = seq(1, vec![0.3]);
        // u -> 0+, e^u -> 1
        let y = wkv_scan(&k, &v, &w, &[1e-300], InitMode::K).unwrap();
        assert!((y.data[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn memoryless_limit_returns_values() {
        let k = seq(4, vec![0.7, -1.3, 2.0, 0.4]);
        let v = seq(4, vec![5.0, -2.0, 0.25, 9.0]);
        let w = seq(4, vec![f64::INFINITY; 4]);
        let y = wkv_scan(&k, &v, &w, &[0.5], InitMode::K).unwrap();
        for i in 1..4 {
            assert!((y.data[i] - v.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn clamp_preserves_sign() {
        assert_eq!(clamp_den(0.0), EPS_DEN);
        assert_eq!(clamp_den(-1e-12), -EPS_DEN);
        assert_eq!(clamp_den(3e-9), EPS_DEN);
        assert_eq!(clamp_den(-0.5), -0.5);
    }

    #[test]
    fn zero_keys_stay_finite() {
        let z = seq(3, vec![0.0; 3]);
        let y = wkv_scan(&z, &z, &z, &[0.5], InitMode::K).unwrap();
        assert!(y.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mismatched_counts_rejected() {
        let a = seq(3, vec![1.0; 3]);
        let b = seq(2, vec![1.0; 2]);
        assert!(wkv_scan(&a, &b, &a, &[0.5], InitMode::K).is_err());
        assert!(wkv_scan(&a, &a, &b, &[0.5], InitMode::K).is_err());
        assert!(wkv_scan(&a, &a, &a, &[0.5, 0.5], InitMode::K).is_err());
    }

    #[test]
    fn non_finite_names_step() {
        let k = seq(3, vec![1.0, 1.0, f64::INFINITY]);
        let v = seq(3, vec![1.0; 3]);
        let w = seq(3, vec![0.5; 3]);
        let err = wkv_scan(&k, &v, &w, &[0.5], InitMode::K).unwrap_err();
        assert!(err.to_string().contains("step 2"), "{err}");
    }

    #[test]
    fn kv_init_changes_first_numerator() {
        let k = seq(1, vec![2.0]);
        let v = seq(1, vec![3.0]);
        let w = seq(1, vec![0.0]);
        let e = 0.5f64.exp();
        let y = wkv_scan(&k, &v, &w, &[0.5], InitMode::Kv).unwrap();
        assert!((y.data[0] - (6.0 + e * 6.0) / (2.0 + e * 2.0)).abs() < 1e-14);
        let y = wkv_scan(&k, &v, &w, &[0.5], InitMode::K).unwrap();
        assert!((y.data[0] - (2.0 + e * 6.0) / (2.0 + e * 2.0)).abs() < 1e-14);
    }
}
