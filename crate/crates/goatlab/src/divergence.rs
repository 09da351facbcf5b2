//! Worst-case total-variation shift over capped re-weighting families.
//!
//! For finite distributions the divergence studied here is
//! `d1(p, q) = 2 * sup_J |p(J) - q(J)|` over subsets `J`, which equals the
//! L1 distance `sum_i |p_i - q_i|`. Given a skewed source distribution `s`
//! and the family `Z = { z : 0 <= z_i <= C, sum z_i = 1 }`, the supremum of
//! `d1(z, s)` over the family has a closed form obtained by piling capped
//! mass onto the lightest points of `s`. A brute-force enumeration of the
//! family's vertices provides an independent oracle, and
//! [`verify_uniform_minimax`] checks the minimax property: among
//! full-support sources, the uniform one has the strictly smallest
//! worst-case shift.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// A validated probability vector: finite, non-negative entries summing to
/// one within `1e-9`. Entries are stored as given (not renormalized).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    p: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(p: Vec<f64>) -> Result<DiscreteDist> {
        if p.is_empty() {
            return Err(Error::config("distribution must have at least one point"));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::numeric(format!("probabilities must be finite and >= 0: {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::numeric(format!("probabilities sum to {sum}, expected 1")));
        }
        Ok(DiscreteDist { p })
    }

    pub fn uniform(n: usize) -> Result<DiscreteDist> {
        if n == 0 {
            return Err(Error::config("distribution must have at least one point"));
        }
        Ok(DiscreteDist { p: vec![1.0 / n as f64; n] })
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest absolute deviation from the uniform distribution.
    pub fn linf_from_uniform(&self) -> f64 {
        let u = 1.0 / self.p.len() as f64;
        self.p.iter().map(|v| (v - u).abs()).fold(0.0, f64::max)
    }

    pub fn has_full_support(&self) -> bool {
        self.p.iter().all(|&v| v > 0.0)
    }
}

/// The capped simplex `{ z : 0 <= z_i <= cap, sum z_i = 1 }` on `n` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapFamily {
    pub n: usize,
    pub cap: f64,
}

impl CapFamily {
    /// Requires `cap * n >= 1`, otherwise the family is empty.
    pub fn new(n: usize, cap: f64) -> Result<CapFamily> {
        if n == 0 {
            return Err(Error::config("family needs at least one point"));
        }
        if !cap.is_finite() || cap <= 0.0 {
            return Err(Error::config(format!("cap must be positive, got {cap}")));
        }
        if cap * (n as f64) < 1.0 - 1e-12 {
            return Err(Error::config(format!(
                "empty family: cap {cap} times {n} points cannot reach total mass 1"
            )));
        }
        Ok(CapFamily { n, cap })
    }

    pub fn contains(&self, z: &DiscreteDist) -> bool {
        z.len() == self.n && z.probs().iter().all(|&v| v <= self.cap + 1e-12)
    }
}

/// Total-variation style divergence via the L1 identity.
pub fn variation_divergence(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!(
            "distributions have different sizes: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum())
}

/// The defining form `2 * max_J |p(J) - q(J)|` by exhaustive subset
/// enumeration. Exponential; only sensible as a test oracle (`n <= 20`).
pub fn subset_sup_divergence(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("distributions have different sizes".to_string()));
    }
    let n = p.len();
    if n > 20 {
        return Err(Error::config(format!("subset enumeration limited to n <= 20, got {n}")));
    }
    let mut best = 0.0f64;
    for mask in 0u32..(1u32 << n) {
        let mut diff = 0.0;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                diff += p.probs()[i] - q.probs()[i];
            }
        }
        best = best.max(diff.abs());
    }
    Ok(2.0 * best)
}

/// Exact supremum of `d1(z, s)` over the capped family, in closed form.
///
/// Sorting `s` ascending with prefix sums `S_k`, the value is
/// `2 * max_k ( min(cap * k, 1) - S_k )`: a subset `J` of the `k` lightest
/// points can carry at most `min(cap*k, 1)` of `z`'s mass, and the lightest
/// points maximize the gap. The maximizing `z` piles `cap` onto
/// `floor(1/cap)` lightest points plus the remainder on the next one; see
/// [`worst_case_witness`].
pub fn worst_case_d1(s: &DiscreteDist, family: &CapFamily) -> Result<f64> {
    if s.len() != family.n {
        return Err(Error::shape(format!(
            "distribution has {} points but family has {}",
            s.len(),
            family.n
        )));
    }
    let mut sorted = s.probs().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = 0.0f64;
    let mut prefix = 0.0f64;
    for (k, &mass) in sorted.iter().enumerate() {
        prefix += mass;
        let placed = (family.cap * (k + 1) as f64).min(1.0);
        best = best.max(placed - prefix);
    }
    Ok(2.0 * best)
}

/// The distribution achieving [`worst_case_d1`]: `floor(1/cap)` of the
/// lightest points of `s` receive mass `cap`, the next lightest receives
/// the remainder. Ties in mass break toward the lowest index.
pub fn worst_case_witness(s: &DiscreteDist, family: &CapFamily) -> Result<DiscreteDist> {
    if s.len() != family.n {
        return Err(Error::shape("distribution size does not match family".to_string()));
    }
    let n = family.n;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        s.probs()[i].partial_cmp(&s.probs()[j]).unwrap().then(i.cmp(&j))
    });
    let m = (1.0 / family.cap).floor() as usize;
    let m = m.min(n);
    let residual = (1.0 - family.cap * m as f64).max(0.0);
    let mut z = vec![0.0; n];
    for &i in order.iter().take(m) {
        z[i] = family.cap;
    }
    if residual > 1e-12 {
        if m >= n {
            return Err(Error::numeric("residual mass with no free point".to_string()));
        }
        z[order[m]] = residual;
    }
    // Repair float drift so the witness is a valid distribution.
    let sum: f64 = z.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::numeric(format!("witness mass {sum} != 1")));
    }
    DiscreteDist::new(z)
}

/// Brute-force supremum over the family by enumerating its vertices: every
/// vertex has `floor(1/cap)` coordinates at the cap, at most one fractional
/// coordinate carrying the remainder, and zeros elsewhere. Exact for
/// `n <= 12`.
pub fn brute_force_worst_case(s: &DiscreteDist, family: &CapFamily) -> Result<f64> {
    if s.len() != family.n {
        return Err(Error::shape("distribution size does not match family".to_string()));
    }
    let n = family.n;
    if n > 12 {
        return Err(Error::config(format!("vertex enumeration limited to n <= 12, got {n}")));
    }
    let m = ((1.0 / family.cap).floor() as usize).min(n);
    let residual = (1.0 - family.cap * m as f64).max(0.0);
    let has_residual = residual > 1e-12;
    let mut best = 0.0f64;
    let probs = s.probs();
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        if !has_residual {
            let mut d1 = 0.0;
            for (i, &si) in probs.iter().enumerate() {
                let zi = if mask & (1 << i) != 0 { family.cap } else { 0.0 };
                d1 += (zi - si).abs();
            }
            best = best.max(d1);
        } else {
            for b in 0..n {
                if mask & (1 << b) != 0 {
                    continue;
                }
                let mut d1 = 0.0;
                for (i, &si) in probs.iter().enumerate() {
                    let zi = if mask & (1 << i) != 0 {
                        family.cap
                    } else if i == b {
                        residual
                    } else {
                        0.0
                    };
                    d1 += (zi - si).abs();
                }
                best = best.max(d1);
            }
        }
    }
    Ok(best)
}

/// One sampled counterexample candidate that failed the minimax check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimaxFailure {
    pub trial: usize,
    pub probs: Vec<f64>,
    pub margin: f64,
}

/// Report from [`verify_uniform_minimax`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimaxReport {
    pub n: usize,
    pub cap: f64,
    pub trials: usize,
    pub uniform_worst_case: f64,
    /// Smallest observed `worst_case(s) - worst_case(uniform)`.
    pub min_margin: f64,
    pub mean_margin: f64,
    pub failures: Vec<MinimaxFailure>,
}

impl MinimaxReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.min_margin > 0.0
    }
}

/// Sample random full-support non-uniform sources and check that each has a
/// strictly larger worst-case capped shift than the uniform source.
///
/// Sources are Dirichlet(1,...,1) draws; draws closer than `1e-6` to
/// uniform in L-infinity (or without full support) are redrawn so the
/// strictness claim is well posed. Requires `cap > 1/n`.
pub fn verify_uniform_minimax(
    n: usize,
    cap: f64,
    trials: usize,
    seed: u64,
) -> Result<MinimaxReport> {
    if n < 2 {
        return Err(Error::config(format!("need at least two points, got {n}")));
    }
    let family = CapFamily::new(n, cap)?;
    if cap <= 1.0 / n as f64 {
        return Err(Error::config(format!(
            "cap {cap} must exceed 1/n = {} for a non-degenerate family",
            1.0 / n as f64
        )));
    }
    if trials == 0 {
        return Err(Error::config("need at least one trial"));
    }
    let uniform = DiscreteDist::uniform(n)?;
    let uniform_wc = worst_case_d1(&uniform, &family)?;
    let mut rng = stream_rng(seed, 0xD17);
    let mut min_margin = f64::INFINITY;
    let mut sum_margin = 0.0;
    let mut failures = Vec::new();
    for trial in 0..trials {
        let dist = loop {
            // Exponential spacings: normalized Exp(1) draws are Dirichlet(1,..,1).
            let draws: Vec<f64> = (0..n).map(|_| -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln()).collect();
            let total: f64 = draws.iter().sum();
            let p: Vec<f64> = draws.iter().map(|v| v / total).collect();
            let cand = DiscreteDist::new(p)?;
            if cand.has_full_support() && cand.linf_from_uniform() > 1e-6 {
                break cand;
            }
        };
        let wc = worst_case_d1(&dist, &family)?;
        let margin = wc - uniform_wc;
        min_margin = min_margin.min(margin);
        sum_margin += margin;
        if margin <= 0.0 {
            failures.push(MinimaxFailure { trial, probs: dist.probs().to_vec(), margin });
        }
    }
    Ok(MinimaxReport {
        n,
        cap,
        trials,
        uniform_worst_case: uniform_wc,
        min_margin,
        mean_margin: sum_margin / trials as f64,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dist(p: &[f64]) -> DiscreteDist {
        DiscreteDist::new(p.to_vec()).unwrap()
    }

    fn random_dist(rng: &mut impl Rng, n: usize) -> DiscreteDist {
        loop {
            let draws: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-12..1.0f64)).collect();
            let total: f64 = draws.iter().sum();
            let d = DiscreteDist::new(draws.iter().map(|v| v / total).collect());
            if let Ok(d) = d {
                return d;
            }
        }
    }

    #[test]
    fn d1_hand_values() {
        assert_eq!(variation_divergence(&dist(&[0.5, 0.5]), &dist(&[0.5, 0.5])).unwrap(), 0.0);
        assert_eq!(variation_divergence(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap(), 2.0);
        let v = variation_divergence(&dist(&[0.7, 0.3]), &dist(&[0.3, 0.7])).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
    }

    #[test]
    fn d1_matches_subset_supremum_definition() {
        let mut rng = stream_rng(5, 0x51);
        for n in 2..=10 {
            for _ in 0..20 {
                let p = random_dist(&mut rng, n);
                let q = random_dist(&mut rng, n);
                let l1 = variation_divergence(&p, &q).unwrap();
                let sup = subset_sup_divergence(&p, &q).unwrap();
                assert!(
                    (l1 - sup).abs() < 1e-12,
                    "n={n}: L1 {l1} vs subset sup {sup}"
                );
            }
        }
    }

    #[test]
    fn d1_rejects_size_mismatch() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.3, 0.3, 0.4]);
        assert!(matches!(variation_divergence(&p, &q), Err(Error::Shape(_))));
    }

    #[test]
    fn dist_validation_rejects_bad_vectors() {
        assert!(DiscreteDist::new(vec![]).is_err());
        assert!(DiscreteDist::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDist::new(vec![-0.1, 1.1]).is_err());
        assert!(DiscreteDist::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn cap_family_rejects_impossible_caps() {
        assert!(CapFamily::new(4, 0.2).is_err(), "0.2 * 4 < 1");
        assert!(CapFamily::new(4, 0.25).is_ok());
        assert!(CapFamily::new(0, 0.5).is_err());
        assert!(CapFamily::new(4, f64::NAN).is_err());
    }

    #[test]
    fn worst_case_hand_values() {
        // Skewed source: caps go on the three light points; two fit at 0.5.
        let fam = CapFamily::new(4, 0.5).unwrap();
        let wc = worst_case_d1(&dist(&[0.7, 0.1, 0.1, 0.1]), &fam).unwrap();
        assert!((wc - 1.6).abs() < 1e-12);

        // Uniform source at an integer 1/cap: matches 2(1 - 1/(cap*n)).
        let u4 = DiscreteDist::uniform(4).unwrap();
        let wc_u = worst_case_d1(&u4, &fam).unwrap();
        assert!((wc_u - 1.0).abs() < 1e-15);
        assert!((wc_u - 2.0 * (1.0 - 1.0 / (0.5 * 4.0))).abs() < 1e-15);

        // Degenerate boundary cap = 1/n: the only member is uniform.
        let tight = CapFamily::new(4, 0.25).unwrap();
        assert_eq!(worst_case_d1(&u4, &tight).unwrap(), 0.0);
        let skew = dist(&[0.4, 0.3, 0.2, 0.1]);
        let wc_tight = worst_case_d1(&skew, &tight).unwrap();
        let direct = variation_divergence(&u4, &skew).unwrap();
        assert!((wc_tight - direct).abs() < 1e-12);

        // Single point: the family is forced to the same delta.
        let one = CapFamily::new(1, 1.0).unwrap();
        assert_eq!(worst_case_d1(&dist(&[1.0]), &one).unwrap(), 0.0);
    }

    #[test]
    fn uniform_closed_form_at_integer_reciprocal_caps() {
        for &(n, cap) in &[(4usize, 0.5f64), (6, 0.5), (8, 0.25), (9, 1.0 / 3.0), (2, 0.5)] {
            let u = DiscreteDist::uniform(n).unwrap();
            let fam = CapFamily::new(n, cap).unwrap();
            let wc = worst_case_d1(&u, &fam).unwrap();
            let closed = 2.0 * (1.0 - 1.0 / (cap * n as f64));
            assert!(
                (wc - closed).abs() < 1e-12,
                "n={n} cap={cap}: {wc} vs closed form {closed}"
            );
        }
    }

    #[test]
    fn closed_form_matches_vertex_enumeration() {
        let mut rng = stream_rng(9, 0x52);
        for case in 0..200 {
            let n = rng.gen_range(2..=8);
            let s = random_dist(&mut rng, n);
            let cap = rng.gen_range((1.0 / n as f64) * 1.001..1.2);
            let fam = CapFamily::new(n, cap).unwrap();
            let closed = worst_case_d1(&s, &fam).unwrap();
            let brute = brute_force_worst_case(&s, &fam).unwrap();
            assert!(
                (closed - brute).abs() < 1e-9,
                "case {case} n={n} cap={cap}: closed {closed} vs brute {brute}"
            );
        }
    }

    #[test]
    fn witness_is_feasible_and_achieves_the_supremum() {
        let mut rng = stream_rng(13, 0x53);
        for _ in 0..100 {
            let n = rng.gen_range(2..=8);
            let s = random_dist(&mut rng, n);
            let cap = rng.gen_range((1.0 / n as f64) * 1.001..1.5);
            let fam = CapFamily::new(n, cap).unwrap();
            let z = worst_case_witness(&s, &fam).unwrap();
            assert!(fam.contains(&z));
            let achieved = variation_divergence(&z, &s).unwrap();
            let sup = worst_case_d1(&s, &fam).unwrap();
            assert!(
                (achieved - sup).abs() < 1e-12,
                "witness reaches {achieved} but supremum is {sup}"
            );
        }
    }

    #[test]
    fn worst_case_is_monotone_in_cap() {
        let mut rng = stream_rng(21, 0x54);
        for _ in 0..50 {
            let n = rng.gen_range(2..=8);
            let s = random_dist(&mut rng, n);
            let lo = rng.gen_range((1.0 / n as f64) * 1.001..1.0);
            let hi = lo + rng.gen_range(0.01..0.5);
            let wc_lo = worst_case_d1(&s, &CapFamily::new(n, lo).unwrap()).unwrap();
            let wc_hi = worst_case_d1(&s, &CapFamily::new(n, hi).unwrap()).unwrap();
            assert!(
                wc_hi >= wc_lo - 1e-12,
                "larger cap must not shrink the worst case: {wc_lo} -> {wc_hi}"
            );
        }
    }

    #[test]
    fn skewed_two_point_source_beats_uniform() {
        let fam = CapFamily::new(2, 0.6).unwrap();
        let skew = worst_case_d1(&dist(&[0.9, 0.1]), &fam).unwrap();
        assert!((skew - 1.0).abs() < 1e-12, "cap 0.6 on the light point: 2*(0.6-0.1)");
        let uni = worst_case_d1(&DiscreteDist::uniform(2).unwrap(), &fam).unwrap();
        assert!((uni - 0.2).abs() < 1e-12, "best z is (0.6, 0.4): L1 = 0.2");
        assert!(skew > uni);
    }

    #[test]
    fn uniform_minimax_holds_on_reference_family() {
        let report = verify_uniform_minimax(4, 0.5, 1000, 7).unwrap();
        assert!(report.passed(), "failures: {:?}", report.failures);
        assert!(report.min_margin > 0.0);
        assert!((report.uniform_worst_case - 1.0).abs() < 1e-12);
        assert_eq!(report.failures.len(), 0);
    }

    #[test]
    fn uniform_minimax_holds_at_non_integer_reciprocal_caps() {
        for &(n, cap) in &[(3usize, 0.4f64), (5, 0.3), (6, 0.21)] {
            let report = verify_uniform_minimax(n, cap, 200, 11).unwrap();
            assert!(report.passed(), "n={n} cap={cap}: {:?}", report.failures);
        }
    }

    #[test]
    fn minimax_rejects_degenerate_caps() {
        assert!(verify_uniform_minimax(4, 0.25, 10, 0).is_err(), "cap == 1/n");
        assert!(verify_uniform_minimax(4, 0.2, 10, 0).is_err(), "empty family");
        assert!(verify_uniform_minimax(1, 1.0, 10, 0).is_err());
        assert!(verify_uniform_minimax(4, 0.5, 0, 0).is_err());
    }

    #[test]
    fn minimax_report_serializes_to_json() {
        let report = verify_uniform_minimax(4, 0.5, 10, 3).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"min_margin\""));
        let back: MinimaxReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.trials, 10);
    }
}
