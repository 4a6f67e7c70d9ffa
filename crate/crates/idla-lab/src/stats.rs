//! Ensemble orchestration and statistical verdicts: reproducible
//! parallel trials, Gaussian fits with distribution distance, FKG
//! correlation tests, and the van der Corput scans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{self, GrowthMode};
use crate::error::{Error, Result};
use crate::observables::{self, AnnularTestFunction, TimeSpec};
use crate::poly::{mesh_from_harmonic, zk_real_imag, ExactPolynomial};
use crate::util::KahanComplex;

/// One statistic value from one trial.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ObservableRecord {
    pub seed: u64,
    pub stream: u64,
    pub t: f64,
    pub name: String,
    pub k: i32,
    pub re: f64,
    pub im: f64,
}

impl ObservableRecord {
    fn check_finite(self) -> Result<Self> {
        if self.re.is_finite() && self.im.is_finite() {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(format!(
                "statistic {} produced a non-finite value",
                self.name
            )))
        }
    }
}

/// Named harmonic test polynomials for ensemble statistics (d = 2).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PsiSpec {
    One,
    RePk(u32),
    ImPk(u32),
}

impl PsiSpec {
    pub fn polynomial(&self) -> ExactPolynomial {
        match *self {
            PsiSpec::One => ExactPolynomial::one(2),
            PsiSpec::RePk(k) => zk_real_imag(2, 0, 1, k).0,
            PsiSpec::ImPk(k) => zk_real_imag(2, 0, 1, k).1,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            PsiSpec::One => "one".into(),
            PsiSpec::RePk(k) => format!("re_p{k}"),
            PsiSpec::ImPk(k) => format!("im_p{k}"),
        }
    }
}

/// How each trial's cluster is grown.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    Discrete { particles: u64 },
    Poisson { t: f64 },
    /// Discrete growth until the lattice ball of this radius is covered.
    CoverRadius { radius: f64 },
}

/// Statistics computed per trial from the grown history.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticSpec {
    Moments {
        kmax: u32,
        t: f64,
    },
    Phi {
        psi: PsiSpec,
        m: u32,
        times: Vec<f64>,
    },
    LatenessX {
        phi: AnnularTestFunction,
        r_scale: f64,
    },
    BoxCount {
        label: String,
        lo: [i64; 3],
        hi: [i64; 3],
        t: f64,
    },
    /// Negated absorption time of a fixed site (increasing functional).
    NegAbsorptionTime {
        label: String,
        site: [i64; 3],
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub d: usize,
    pub mode: EnsembleMode,
    pub trials: u32,
    pub base_seed: u64,
    pub statistics: Vec<StatisticSpec>,
    #[serde(default = "default_failure_fraction")]
    pub max_failure_fraction: f64,
}

fn default_failure_fraction() -> f64 {
    0.01
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(Error::InvalidConfig("need at least 2 trials".into()));
        }
        if self.max_failure_fraction < 0.0 {
            return Err(Error::InvalidConfig("negative failure budget".into()));
        }
        Ok(())
    }
}

fn run_trial(config: &EnsembleConfig, stream: u64) -> Result<Vec<ObservableRecord>> {
    let seed = config.base_seed;
    let history = match config.mode {
        EnsembleMode::Discrete { particles } => {
            cluster::grow(config.d, GrowthMode::Discrete(particles), seed, stream)?
        }
        EnsembleMode::Poisson { t } => {
            cluster::grow(config.d, GrowthMode::Poisson(t), seed, stream)?
        }
        EnsembleMode::CoverRadius { radius } => {
            cluster::grow_until_radius_covered(config.d, radius, seed, stream)?
        }
    };
    let mut records = Vec::new();
    for stat in &config.statistics {
        match stat {
            StatisticSpec::Moments { kmax, t } => {
                let time = if history.poisson {
                    TimeSpec::Time(*t)
                } else {
                    TimeSpec::Count(*t as u64)
                };
                let ms = observables::complex_moments(&history, time, *kmax)?;
                for (i, &(re, im)) in ms.iter().enumerate() {
                    records.push(
                        ObservableRecord {
                            seed,
                            stream,
                            t: *t,
                            name: "M".into(),
                            k: i as i32 + 1,
                            re,
                            im,
                        }
                        .check_finite()?,
                    );
                }
            }
            StatisticSpec::Phi { psi, m, times } => {
                let mesh = mesh_from_harmonic(&psi.polynomial(), *m);
                for &t in times {
                    let v = observables::phi_a(&history, &mesh, t)?;
                    records.push(
                        ObservableRecord {
                            seed,
                            stream,
                            t,
                            name: format!("phi_{}", psi.label()),
                            k: *m as i32,
                            re: v,
                            im: 0.0,
                        }
                        .check_finite()?,
                    );
                }
            }
            StatisticSpec::LatenessX { phi, r_scale } => {
                let field = cluster::lateness(&history)?;
                let x = observables::lateness_statistic(&field, phi, *r_scale)?;
                records.push(
                    ObservableRecord {
                        seed,
                        stream,
                        t: history.t_max,
                        name: "X_R".into(),
                        k: *r_scale as i32,
                        re: x,
                        im: 0.0,
                    }
                    .check_finite()?,
                );
            }
            StatisticSpec::BoxCount { label, lo, hi, t } => {
                let count = history.sites()[..history.count_at(*t)]
                    .iter()
                    .filter(|&&site| {
                        let c = cluster::unpack(site, config.d);
                        (0..config.d).all(|i| lo[i] <= c[i] && c[i] <= hi[i])
                    })
                    .count();
                records.push(
                    ObservableRecord {
                        seed,
                        stream,
                        t: *t,
                        name: format!("box_count_{label}"),
                        k: 0,
                        re: count as f64,
                        im: 0.0,
                    }
                    .check_finite()?,
                );
            }
            StatisticSpec::NegAbsorptionTime { label, site } => {
                let packed = cluster::pack(&site[..config.d]);
                let time = history
                    .arrival_of(packed)
                    .or_else(|| history.f0(packed).map(|n| n as f64))
                    .ok_or(Error::ClusterTooSmall {
                        radius: (cluster::norm_sq(packed, config.d) as f64).sqrt(),
                    })?;
                records.push(
                    ObservableRecord {
                        seed,
                        stream,
                        t: history.t_max,
                        name: format!("neg_absorption_{label}"),
                        k: 0,
                        re: -time,
                        im: 0.0,
                    }
                    .check_finite()?,
                );
            }
        }
    }
    Ok(records)
}

/// Run trials `lo..hi` (streams) in parallel; records come back in
/// trial order, so the output is a deterministic function of the
/// configuration.
pub fn run_ensemble_range(
    config: &EnsembleConfig,
    lo: u64,
    hi: u64,
) -> Result<Vec<ObservableRecord>> {
    config.validate()?;
    let results: Vec<(u64, Result<Vec<ObservableRecord>>)> = (lo..hi)
        .into_par_iter()
        .map(|stream| (stream, run_trial(config, stream)))
        .collect();
    let total = results.len();
    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    if failed as f64 > config.max_failure_fraction * total as f64 {
        return Err(Error::TrialFailures { failed, total });
    }
    Ok(results
        .into_iter()
        .filter_map(|(_, r)| r.ok())
        .flatten()
        .collect())
}

/// Run the configured number of trials with streams `1..=trials`.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<Vec<ObservableRecord>> {
    run_ensemble_range(config, 1, config.trials as u64 + 1)
}

/// Pull one named sample vector out of an ensemble record list.
pub fn extract_samples(
    records: &[ObservableRecord],
    name: &str,
    k: i32,
    t: Option<f64>,
    imaginary: bool,
) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.name == name && r.k == k && t.is_none_or(|t| (r.t - t).abs() < 1e-9))
        .map(|r| if imaginary { r.im } else { r.re })
        .collect()
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

/// Outcome of one acceptance-style check.  The pass flag is a pure
/// function of (target, estimate, tolerance) — plus the one-sided flag —
/// and the tolerance always carries the Monte Carlo standard error
/// computed from the same samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestVerdict {
    pub statistic: String,
    pub target: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub tolerance: f64,
    /// One-sided verdicts pass when `estimate >= target - tolerance`.
    pub one_sided: bool,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub runtime_ms: u64,
}

impl TestVerdict {
    pub fn two_sided(statistic: impl Into<String>, target: f64, estimate: f64, se: f64, tol: f64) -> Self {
        Self {
            statistic: statistic.into(),
            target,
            estimate,
            std_error: se,
            tolerance: tol,
            one_sided: false,
            pass: (estimate - target).abs() <= tol,
            p_value: None,
            runtime_ms: 0,
        }
    }

    pub fn one_sided_ge(statistic: impl Into<String>, target: f64, estimate: f64, se: f64, tol: f64) -> Self {
        Self {
            statistic: statistic.into(),
            target,
            estimate,
            std_error: se,
            tolerance: tol,
            one_sided: true,
            pass: estimate >= target - tol,
            p_value: None,
            runtime_ms: 0,
        }
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p_value = Some(p);
        self
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n-1) with its moment-based standard error
/// `sqrt((m4 - s^4)/n)`.
pub fn variance_with_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu = mean(xs);
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for &x in xs {
        let d = x - mu;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    let var = m2 / (n - 1.0);
    let m4 = m4 / n;
    let se = ((m4 - var * var).max(0.0) / n).sqrt();
    (var, se)
}

/// Sample covariance (n-1) with the moment-based standard error
/// `sqrt((m22 - cov^2)/n)`.
pub fn covariance_with_se(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let mut c = 0.0;
    let mut m22 = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        c += dx * dy;
        m22 += dx * dx * dy * dy;
    }
    let cov = c / (n - 1.0);
    let m22 = m22 / n;
    let se = ((m22 - cov * cov).max(0.0) / n).sqrt();
    (cov, se)
}

/// Pearson correlation with the delta-method standard error
/// `(1 - r^2)/sqrt(n - 1)`.
pub fn correlation_with_se(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let (cov, _) = covariance_with_se(xs, ys);
    let (vx, _) = variance_with_se(xs);
    let (vy, _) = variance_with_se(ys);
    let r = cov / (vx * vy).sqrt();
    let se = (1.0 - r * r).abs() / ((xs.len() as f64) - 1.0).sqrt();
    (r, se)
}

/// Asymptotic Kolmogorov distribution tail `Q(lambda)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut q = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        q += if j % 2 == 1 { 2.0 * term } else { -2.0 * term };
    }
    q.clamp(0.0, 1.0)
}

/// Empirical-CDF sup distance of `xs` against the normal fitted to its
/// own mean and variance, with the asymptotic p-value.
pub fn ks_normal(xs: &[f64]) -> Result<(f64, f64)> {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = xs.len();
    if n < 8 {
        return Err(Error::DegenerateSamples);
    }
    let mu = mean(xs);
    let (var, _) = variance_with_se(xs);
    if var <= 0.0 {
        return Err(Error::DegenerateSamples);
    }
    let normal = Normal::new(mu, var.sqrt()).expect("valid fitted normal");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = normal.cdf(x);
        d = d.max((f - i as f64 / n as f64).abs());
        d = d.max(((i + 1) as f64 / n as f64 - f).abs());
    }
    let nf = n as f64;
    let lambda = (nf.sqrt() + 0.12 + 0.11 / nf.sqrt()) * d;
    Ok((d, kolmogorov_q(lambda)))
}

/// Compare the sample variance against a target with tolerance
/// `max(rel_tol * target, z * se)`; the KS normality p-value rides along.
pub fn gaussian_fit(
    name: impl Into<String>,
    samples: &[f64],
    target_variance: f64,
    rel_tol: f64,
    z: f64,
) -> Result<TestVerdict> {
    if samples.len() < 50 {
        return Err(Error::DegenerateSamples);
    }
    let (var, se) = variance_with_se(samples);
    if var == 0.0 {
        return Err(Error::DegenerateSamples);
    }
    let (_, p) = ks_normal(samples)?;
    let tol = (rel_tol * target_variance.abs()).max(z * se);
    Ok(TestVerdict::two_sided(name, target_variance, var, se, tol).with_p(p))
}

/// One-sided nonnegative-correlation verdict for two increasing
/// statistics: passes when `r >= -z * se`.
pub fn fkg_correlation(
    name: impl Into<String>,
    f_samples: &[f64],
    g_samples: &[f64],
    z: f64,
) -> Result<TestVerdict> {
    if f_samples.len() != g_samples.len() || f_samples.len() < 8 {
        return Err(Error::DegenerateSamples);
    }
    let (vf, _) = variance_with_se(f_samples);
    let (vg, _) = variance_with_se(g_samples);
    if vf == 0.0 || vg == 0.0 {
        return Err(Error::DegenerateSamples);
    }
    let (r, se) = correlation_with_se(f_samples, g_samples);
    Ok(TestVerdict::one_sided_ge(name, 0.0, r, se, z * se))
}

// ---------------------------------------------------------------------------
// Van der Corput scan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VdcRow {
    pub k: u32,
    /// "count" for the lattice-count error, "zk" for the plain power
    /// sums, "pk" for the discrete harmonic sums.
    pub variant: String,
    /// Sup of `t^(-1/3) |error(t)|` over `[10, checkpoint]`, one entry
    /// per checkpoint.
    pub sup_at: Vec<(f64, f64)>,
    pub argmax_t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VdcTable {
    pub t_max: f64,
    pub rows: Vec<VdcRow>,
}

/// Scan the normalized lattice-disk errors over all count change points
/// in `[10, t_max]`:
/// (a) `|#{pi |z|^2 <= t} - t|`, (b) `t^(-k/2) |sum z^k|`,
/// (c) `t^(-k/2) |sum p_k(z)|`, each scaled by `t^(-1/3)`.
pub fn vdc_scan(kmax: u32, t_max: f64, checkpoints: &[f64]) -> VdcTable {
    assert!(kmax <= 7, "power tables sized for k <= 7");
    let rmax2 = (t_max / std::f64::consts::PI).floor() as i64;
    let rmax = (rmax2 as f64).sqrt().ceil() as i64;
    let mut sites: Vec<(i64, i32, i32)> = Vec::new();
    for x in -rmax..=rmax {
        for y in -rmax..=rmax {
            let n2 = x * x + y * y;
            if n2 <= rmax2 {
                sites.push((n2, x as i32, y as i32));
            }
        }
    }
    sites.sort_unstable();

    // Monomials z^a zbar^b needed: the plain powers (k, 0) plus every
    // monomial of each p_k.
    type PairTerm = ((u32, u32), (f64, f64));
    let mut monomials: Vec<(u32, u32)> = Vec::new();
    let mut pk_terms: Vec<Vec<PairTerm>> = Vec::new();
    for k in 1..=kmax {
        if !monomials.contains(&(k, 0)) {
            monomials.push((k, 0));
        }
        let p = crate::poly::discrete_zk(k as i64);
        let mut terms = Vec::new();
        for (&(a, b), c) in p.terms() {
            if !monomials.contains(&(a, b)) {
                monomials.push((a, b));
            }
            terms.push(((a, b), c.to_f64()));
        }
        pk_terms.push(terms);
    }
    let mono_index = |a: u32, b: u32| monomials.iter().position(|&m| m == (a, b)).unwrap();
    let mut sums = vec![KahanComplex::new(); monomials.len()];

    // One tracker per (k, variant).
    struct Tracker {
        k: u32,
        variant: &'static str,
        sup_at: Vec<f64>,
        overall: f64,
        argmax: f64,
    }
    let mut trackers: Vec<Tracker> = Vec::new();
    trackers.push(Tracker {
        k: 0,
        variant: "count",
        sup_at: vec![0.0; checkpoints.len()],
        overall: 0.0,
        argmax: 0.0,
    });
    for k in 1..=kmax {
        for variant in ["zk", "pk"] {
            trackers.push(Tracker {
                k,
                variant,
                sup_at: vec![0.0; checkpoints.len()],
                overall: 0.0,
                argmax: 0.0,
            });
        }
    }

    let max_a = monomials.iter().map(|m| m.0).max().unwrap_or(0) as usize;
    let max_b = monomials.iter().map(|m| m.1).max().unwrap_or(0) as usize;
    let mut count = 0u64;
    let mut i = 0usize;
    while i < sites.len() {
        let shell = sites[i].0;
        // Absorb the whole shell.
        while i < sites.len() && sites[i].0 == shell {
            let (x, y) = (sites[i].1 as f64, sites[i].2 as f64);
            let mut zp = [(1.0, 0.0); 8];
            for a in 1..=max_a {
                let (pr, pi) = zp[a - 1];
                zp[a] = (pr * x - pi * y, pr * y + pi * x);
            }
            let mut zbp = [(1.0, 0.0); 8];
            for b in 1..=max_b {
                let (pr, pi) = zbp[b - 1];
                zbp[b] = (pr * x + pi * y, -pr * y + pi * x);
            }
            for (mi, &(a, b)) in monomials.iter().enumerate() {
                let (ar, ai) = zp[a as usize];
                let (br, bi) = zbp[b as usize];
                sums[mi].add(ar * br - ai * bi, ar * bi + ai * br);
            }
            count += 1;
            i += 1;
        }
        let t_left = std::f64::consts::PI * shell as f64;
        let t_right = if i < sites.len() {
            (std::f64::consts::PI * sites[i].0 as f64).min(t_max)
        } else {
            t_max
        };
        if t_right <= 10.0 {
            continue;
        }

        // Current sums of z^k and p_k over the disk.
        let zk_abs: Vec<f64> = (1..=kmax)
            .map(|k| {
                let (re, im) = sums[mono_index(k, 0)].value();
                re.hypot(im)
            })
            .collect();
        let pk_abs: Vec<f64> = pk_terms
            .iter()
            .map(|terms| {
                let mut re = 0.0;
                let mut im = 0.0;
                for &((a, b), (cr, ci)) in terms {
                    let (sr, si) = sums[mono_index(a, b)].value();
                    re += cr * sr - ci * si;
                    im += cr * si + ci * sr;
                }
                re.hypot(im)
            })
            .collect();

        fn update(
            tracker: &mut Tracker,
            checkpoints: &[f64],
            t_left: f64,
            t_right: f64,
            value_at: impl Fn(f64) -> f64,
        ) {
            let lo = t_left.max(10.0);
            for (ci, &cp) in checkpoints.iter().enumerate() {
                let hi = t_right.min(cp);
                if hi <= lo {
                    continue;
                }
                for t in [lo, hi] {
                    let v = value_at(t);
                    if v > tracker.sup_at[ci] {
                        tracker.sup_at[ci] = v;
                    }
                    if v > tracker.overall {
                        tracker.overall = v;
                        tracker.argmax = t;
                    }
                }
            }
        }

        for tr in trackers.iter_mut() {
            let k = tr.k;
            match tr.variant {
                "count" => {
                    let c = count as f64;
                    update(tr, checkpoints, t_left, t_right, move |t| {
                        (c - t).abs() * t.powf(-1.0 / 3.0)
                    });
                }
                "zk" => {
                    let v = zk_abs[k as usize - 1];
                    update(tr, checkpoints, t_left, t_right, move |t| {
                        v * t.powf(-(k as f64) / 2.0 - 1.0 / 3.0)
                    });
                }
                _ => {
                    let v = pk_abs[k as usize - 1];
                    update(tr, checkpoints, t_left, t_right, move |t| {
                        v * t.powf(-(k as f64) / 2.0 - 1.0 / 3.0)
                    });
                }
            }
        }
    }

    VdcTable {
        t_max,
        rows: trackers
            .into_iter()
            .map(|tr| VdcRow {
                k: tr.k,
                variant: tr.variant.into(),
                sup_at: checkpoints.iter().copied().zip(tr.sup_at).collect(),
                argmax_t: tr.argmax,
            })
            .collect(),
    }
}
