//! Leading-edge estimate of the in-pulse photon time distribution.
//!
//! Photons relative to their trigger fill a box of the pump-pulse width,
//! smoothed by the detection jitter and sitting on a flat background of dark
//! counts. The edge is located coarsely with a sliding window of the pulse
//! width, then refined by binned Poisson maximum likelihood over both edges
//! of the box.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::model::Ps;

/// Fewer tags than this and the channel is reported absent.
pub const MIN_EDGE_COUNT: usize = 20;

const HALF_RANGE_PS: f64 = 40_000.0;
const BIN_PS: f64 = 250.0;
const SIGMA_MIN_PS: f64 = 20.0;
const SIGMA_MAX_PS: f64 = 15_000.0;
const EM_ITERATIONS: usize = 25;
const SIGMA_GRID: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFit {
    /// Leading edge of the box, ps relative to the trigger.
    pub edge_ps: f64,
    /// Gaussian smoothing of the edges, ps.
    pub sigma_ps: f64,
    /// Background density, counts per ps.
    pub background_per_ps: f64,
    /// Tags used by the fit (inside the fit range).
    pub count: usize,
}

fn phi_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z * FRAC_1_SQRT_2))
}

/// Antiderivative of the standard normal CDF: `zΦ(z) + φ(z)`.
fn phi_cdf_integral(z: f64) -> f64 {
    z * phi_cdf(z) + (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Integral over `[lo, hi]` of a unit-height box `[edge, edge + width]`
/// smoothed by a Gaussian of width `sigma`.
fn smoothed_box_integral(lo: f64, hi: f64, edge: f64, width: f64, sigma: f64) -> f64 {
    let rise = |c: f64| sigma * (phi_cdf_integral((hi - c) / sigma) - phi_cdf_integral((lo - c) / sigma));
    (rise(edge) - rise(edge + width)).max(0.0)
}

struct Bins {
    lo: Vec<f64>,
    counts: Vec<f64>,
    /// Coarse leading edge the ranges were built around.
    anchor: f64,
}

impl Bins {
    /// Histogram of `sorted` over the ranges around both edges of a box whose
    /// coarse leading edge is `anchor`.
    fn around_edges(sorted: &[Ps], anchor: f64, width: f64) -> Self {
        let ranges = if width > 2.0 * HALF_RANGE_PS {
            vec![
                (anchor - HALF_RANGE_PS, anchor + HALF_RANGE_PS),
                (anchor + width - HALF_RANGE_PS, anchor + width + HALF_RANGE_PS),
            ]
        } else {
            vec![(anchor - HALF_RANGE_PS, anchor + width + HALF_RANGE_PS)]
        };
        let mut lo = Vec::new();
        let mut counts = Vec::new();
        for (start, end) in ranges {
            let n = ((end - start) / BIN_PS).ceil() as usize;
            let first = lo.len();
            lo.extend((0..n).map(|i| start + i as f64 * BIN_PS));
            counts.resize(first + n, 0.0);
            let from = sorted.partition_point(|&t| (t as f64) < start);
            for &t in &sorted[from..] {
                let t = t as f64;
                if t >= end {
                    break;
                }
                let i = (((t - start) / BIN_PS) as usize).min(n - 1);
                counts[first + i] += 1.0;
            }
        }
        Bins { lo, counts, anchor }
    }

    fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Profile log-likelihood over the signal and background amplitudes for
    /// a given edge and smoothing; returns it with the background density.
    fn profile(&self, edge: f64, width: f64, sigma: f64) -> (f64, f64) {
        let shape: Vec<f64> = self
            .lo
            .iter()
            .map(|&lo| smoothed_box_integral(lo, lo + BIN_PS, edge, width, sigma))
            .collect();
        let shape_sum: f64 = shape.iter().sum();
        let flat_sum = BIN_PS * self.lo.len() as f64;
        let total = self.total();
        if shape_sum <= 0.0 {
            return (f64::NEG_INFINITY, total / flat_sum);
        }
        // EM for the mixture weights of two fixed-shape components.
        let mut a = 0.5 * total / shape_sum;
        let mut b = 0.5 * total / flat_sum;
        for _ in 0..EM_ITERATIONS {
            let (mut wa, mut wb) = (0.0, 0.0);
            for (s, n) in shape.iter().zip(&self.counts) {
                if *n == 0.0 {
                    continue;
                }
                let mu = a * s + b * BIN_PS;
                wa += n * a * s / mu;
                wb += n * b * BIN_PS / mu;
            }
            a = wa / shape_sum;
            b = wb / flat_sum;
        }
        let mut ll = 0.0;
        for (s, n) in shape.iter().zip(&self.counts) {
            let mu = a * s + b * BIN_PS;
            if *n > 0.0 {
                if mu <= 0.0 {
                    return (f64::NEG_INFINITY, b);
                }
                ll += n * mu.ln();
            }
            ll -= mu;
        }
        (ll, b)
    }
}

fn golden_max(lo: f64, hi: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Start of the width-`width` window holding the most tags.
fn densest_window_start(sorted: &[Ps], width: Ps) -> Ps {
    let mut best = (0usize, sorted[0]);
    let mut j = 0;
    for (i, &start) in sorted.iter().enumerate() {
        while j < sorted.len() && sorted[j] <= start + width {
            j += 1;
        }
        if j - i > best.0 {
            best = (j - i, start);
        }
    }
    best.1
}

/// Fit the leading edge of a channel's trigger-relative photon times.
/// Returns `None` below [`MIN_EDGE_COUNT`] tags.
pub fn fit_leading_edge(t_rel: &[Ps], pulse_width_ps: Ps) -> Option<EdgeFit> {
    fit_leading_edges(&[t_rel], pulse_width_ps).pop().flatten()
}

/// Fit the leading edges of several channels that share one smoothing width
/// (the channels of a run see the same jitter). Each channel keeps its own
/// edge and background; channels below [`MIN_EDGE_COUNT`] tags give `None`.
///
/// A single sparse channel has only a handful of tags on each flank, too few
/// to pin the smoothing on its own; sharing it keeps the fit from collapsing
/// onto the first tag.
pub fn fit_leading_edges(channels: &[&[Ps]], pulse_width_ps: Ps) -> Vec<Option<EdgeFit>> {
    fit_edges(channels, pulse_width_ps, None)
}

/// As [`fit_leading_edges`] with the smoothing held at `sigma_ps`.
///
/// A run with very few background tags near the edges can still prefer a
/// near-zero smoothing with the edge on its first tag; refitting with the
/// smoothing taken from the other runs of the session removes that.
pub fn fit_leading_edges_with_sigma(channels: &[&[Ps]], pulse_width_ps: Ps, sigma_ps: f64) -> Vec<Option<EdgeFit>> {
    fit_edges(channels, pulse_width_ps, Some(sigma_ps.clamp(SIGMA_MIN_PS, SIGMA_MAX_PS)))
}

fn fit_edges(channels: &[&[Ps]], pulse_width_ps: Ps, fixed_sigma: Option<f64>) -> Vec<Option<EdgeFit>> {
    let width = pulse_width_ps.max(1) as f64;
    let bins: Vec<Option<Bins>> = channels
        .iter()
        .map(|t_rel| {
            (t_rel.len() >= MIN_EDGE_COUNT).then(|| {
                let mut sorted = t_rel.to_vec();
                sorted.sort_unstable();
                let anchor = densest_window_start(&sorted, pulse_width_ps.max(1)) as f64;
                Bins::around_edges(&sorted, anchor, width)
            })
        })
        .collect();

    // Coarse scan of each edge at a typical smoothing, then alternate
    // refinements of the shared smoothing and the individual edges.
    let mut sigma = fixed_sigma.unwrap_or(1_500.0);
    let half = HALF_RANGE_PS / 2.0;
    let steps = (2.0 * half / BIN_PS) as usize;
    let mut edges: Vec<f64> = bins
        .iter()
        .map(|b| match b {
            Some(b) => (0..=steps)
                .map(|i| b.anchor - half + i as f64 * BIN_PS)
                .map(|e| (e, b.profile(e, width, sigma).0))
                .fold((b.anchor, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
                .0,
            None => 0.0,
        })
        .collect();
    if bins.iter().all(Option::is_none) {
        return vec![None; channels.len()];
    }
    let rounds = if fixed_sigma.is_some() { 1 } else { 4 };
    for _ in 0..rounds {
        if fixed_sigma.is_none() {
            let total = |ls: f64| -> f64 {
                bins.iter()
                    .zip(&edges)
                    .filter_map(|(b, &e)| b.as_ref().map(|b| b.profile(e, width, ls.exp()).0))
                    .sum()
            };
            // The profile in σ can have a spurious narrow peak at small σ, so
            // bracket the best grid point before the golden-section refinement.
            let (lo, hi) = (SIGMA_MIN_PS.ln(), SIGMA_MAX_PS.ln());
            let step = (hi - lo) / SIGMA_GRID as f64;
            let best = (0..=SIGMA_GRID)
                .map(|i| lo + i as f64 * step)
                .map(|ls| (ls, total(ls)))
                .fold((lo, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
                .0;
            sigma = golden_max((best - step).max(lo), (best + step).min(hi), 1e-3, total).exp();
        }
        let span = (3.0 * sigma).max(2.0 * BIN_PS);
        for (b, e) in bins.iter().zip(edges.iter_mut()) {
            if let Some(b) = b {
                *e = golden_max(*e - span, *e + span, 1.0, |x| b.profile(x, width, sigma).0);
            }
        }
    }
    bins.iter()
        .zip(&edges)
        .map(|(b, &edge)| {
            b.as_ref().map(|b| EdgeFit {
                edge_ps: edge,
                sigma_ps: sigma,
                background_per_ps: b.profile(edge, width, sigma).1,
                count: b.total() as usize,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sample(edge: f64, width: f64, sigma: f64, n: usize, background: usize, seed: u64) -> Vec<Ps> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, sigma.max(1e-9)).unwrap();
        let mut out: Vec<Ps> = (0..n)
            .map(|_| (edge + rng.gen::<f64>() * width + jitter.sample(&mut rng)).round() as Ps)
            .collect();
        out.extend((0..background).map(|_| rng.gen_range(-750_000..1_250_000)));
        out
    }

    #[test]
    fn smoothed_box_integral_limits() {
        // Whole box recovered when the range covers it.
        let full = smoothed_box_integral(-1e6, 1e6, 0.0, 500_000.0, 1_400.0);
        assert!((full - 500_000.0).abs() < 1e-3, "{full}");
        // Half of the rising edge sits on each side of the edge.
        let left = smoothed_box_integral(-1e5, 0.0, 0.0, 500_000.0, 1_400.0);
        let oracle = 1_400.0 / (2.0 * PI).sqrt();
        assert!((left - oracle).abs() < 1e-6, "{left} vs {oracle}");
    }

    #[test]
    fn recovers_edge_with_jitter_and_background() {
        for (seed, edge) in [(1, -56_410.0), (2, -64_910.0), (3, 7_150.0)] {
            let tags = sample(edge, 500_000.0, 1_480.0, 3_000, 300, seed);
            let fit = fit_leading_edge(&tags, 500_000).unwrap();
            assert!((fit.edge_ps - edge).abs() < 1_200.0, "{fit:?} vs {edge}");
            assert!((fit.sigma_ps - 1_480.0).abs() < 400.0, "{fit:?}");
        }
    }

    #[test]
    fn noiseless_edge_is_exact_to_a_bin() {
        let tags = sample(-65_000.0, 500_000.0, 0.0, 2_000, 0, 4);
        let fit = fit_leading_edge(&tags, 500_000).unwrap();
        assert!((fit.edge_ps + 65_000.0).abs() < BIN_PS, "{fit:?}");
    }

    #[test]
    fn unbiased_over_many_samples() {
        let edge = -60_000.0;
        let d: Vec<f64> = (0..100)
            .map(|s| fit_leading_edge(&sample(edge, 500_000.0, 1_400.0, 1_500, 50, 100 + s), 500_000).unwrap().edge_ps - edge)
            .collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sem = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!(mean.abs() < 4.0 * sem, "{mean} ± {sem}");
    }

    #[test]
    fn fixed_sigma_is_kept() {
        let tags = sample(-60_000.0, 500_000.0, 1_400.0, 1_500, 50, 7);
        let fit = fit_leading_edges_with_sigma(&[&tags], 500_000, 1_400.0)[0].unwrap();
        assert_eq!(fit.sigma_ps, 1_400.0);
        assert!((fit.edge_ps + 60_000.0).abs() < 1_200.0, "{fit:?}");
    }

    #[test]
    fn too_few_tags_is_absent() {
        assert!(fit_leading_edge(&[1, 2, 3], 500_000).is_none());
    }
}
