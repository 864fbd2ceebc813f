use crate::error::{Error, Result};
use crate::lipnet::{LipNetParams, PreparedNet};
use crate::numcore::{dist2, norm2, RngState};
use crate::observer::PairedDataset;

/// Above this many record pairs the immersion estimate subsamples.
pub const MAX_IMMERSION_PAIRS: usize = 1_000_000;

/// Step used for the local (small-perturbation) probe pairs.
pub const LOCAL_PROBE_STEP: f64 = 1e-4;

/// Largest difference quotient `‖f(u) − f(v)‖/‖u − v‖` over the probe pairs.
///
/// This is a lower bound on the Lipschitz constant of `map`. Coincident pairs
/// are skipped.
pub fn empirical_lipschitz<F>(map: F, probes: &[(Vec<f64>, Vec<f64>)]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if probes.is_empty() {
        return Err(Error::invalid(
            "empirical_lipschitz needs at least one probe pair",
        ));
    }
    let mut best = 0.0_f64;
    for (u, v) in probes {
        let den = dist2(u, v);
        if den == 0.0 {
            continue;
        }
        best = best.max(dist2(&map(u)?, &map(v)?) / den);
    }
    Ok(best)
}

/// Probe pairs over the bounding box of `points`.
///
/// Half of the pairs are independent uniform draws from the box; the other
/// half pair a uniform point with a neighbor at distance [`LOCAL_PROBE_STEP`].
pub fn probe_pairs(
    points: &[Vec<f64>],
    count: usize,
    rng: &mut RngState,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("probe_pairs needs at least one point"))?;
    let dim = first.len();
    let mut lo = first.clone();
    let mut hi = first.clone();
    for p in points {
        for i in 0..dim {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let draw =
        |rng: &mut RngState| -> Vec<f64> { (0..dim).map(|i| rng.uniform(lo[i], hi[i])).collect() };
    let mut pairs = Vec::with_capacity(count);
    for k in 0..count {
        let u = draw(rng);
        let v = if k % 2 == 0 {
            draw(rng)
        } else {
            let dir: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let n = norm2(&dir).max(f64::MIN_POSITIVE);
            u.iter()
                .zip(&dir)
                .map(|(a, d)| a + LOCAL_PROBE_STEP * d / n)
                .collect()
        };
        pairs.push((u, v));
    }
    Ok(pairs)
}

/// Empirical Lipschitz value of a network over the box spanned by `inputs`.
pub fn network_lipschitz(
    params: &LipNetParams,
    inputs: &[Vec<f64>],
    count: usize,
    rng: &mut RngState,
) -> Result<f64> {
    let net = PreparedNet::new(params)?;
    let probes = probe_pairs(inputs, count, rng)?;
    empirical_lipschitz(|z| net.forward(z), &probes)
}

/// Pairwise estimate of the immersion's Lipschitz constant, `max ‖zᵢ − zⱼ‖/‖xᵢ − xⱼ‖`.
///
/// Requires a noiseless dataset. Uses every pair when there are at most
/// [`MAX_IMMERSION_PAIRS`], otherwise a seeded random subset of that size.
pub fn estimate_immersion_lipschitz(ds: &PairedDataset) -> Result<f64> {
    if ds.meta.sigma != 0.0 {
        return Err(Error::NoisyDataset(ds.meta.sigma));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::invalid(
            "immersion estimate needs at least two records",
        ));
    }
    let ratio = |i: usize, j: usize| -> f64 {
        let (a, b) = (&ds.records[i], &ds.records[j]);
        let dx = dist2(&a.x, &b.x);
        if dx == 0.0 {
            0.0
        } else {
            dist2(&a.z, &b.z) / dx
        }
    };
    let total = n * (n - 1) / 2;
    let mut best = 0.0_f64;
    if total <= MAX_IMMERSION_PAIRS {
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(ratio(i, j));
            }
        }
    } else {
        let mut rng = RngState::with_stream(ds.meta.seed, 0x1_0000);
        for _ in 0..MAX_IMMERSION_PAIRS {
            let i = rng.below(n);
            let mut j = rng.below(n - 1);
            if j >= i {
                j += 1;
            }
            best = best.max(ratio(i, j));
        }
    }
    Ok(best)
}

/// `max ‖xᵢ‖`, the data surrogate for the essential state bound.
pub fn essential_state_bound(ds: &PairedDataset) -> f64 {
    ds.records.iter().map(|r| norm2(&r.x)).fold(0.0, f64::max)
}

/// `e^{−t_burn}·max ‖zᵢ‖`, a transient proxy for a slowest decay rate of 1.
pub fn transient_bound(ds: &PairedDataset) -> f64 {
    let zmax = ds.records.iter().map(|r| norm2(&r.z)).fold(0.0, f64::max);
    (-ds.meta.t_burn).exp() * zmax
}
