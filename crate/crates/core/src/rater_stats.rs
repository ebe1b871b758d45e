//! Statistics for real-vs-synthetic rating studies: per-rater accuracy
//! breakdowns, exact binomial tests against chance, and Cohen's kappa with
//! its large-sample z-test.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::feature_store::Origin;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no responses")]
    Empty,
    #[error("responses cover only one truth class ({0})")]
    SingleClass(Origin),
    #[error("binomial test needs 0 <= k <= n, got k = {k}, n = {n}")]
    BadCount { k: u64, n: u64 },
    #[error("null probability must lie strictly inside (0, 1), got {0}")]
    BadProbability(f64),
    #[error("kappa needs at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("kappa is undefined: expected agreement is 1 (both raters used a single label)")]
    UndefinedKappa,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterOutcome {
    pub rater_tag: String,
    pub n_real: u64,
    pub n_synth: u64,
    pub correct_real: u64,
    pub correct_synth: u64,
}

impl RaterOutcome {
    pub fn n(&self) -> u64 {
        self.n_real + self.n_synth
    }

    pub fn correct(&self) -> u64 {
        self.correct_real + self.correct_synth
    }

    pub fn overall_accuracy(&self) -> f64 {
        self.correct() as f64 / self.n() as f64
    }

    pub fn real_accuracy(&self) -> f64 {
        self.correct_real as f64 / self.n_real as f64
    }

    pub fn synth_accuracy(&self) -> f64 {
        self.correct_synth as f64 / self.n_synth as f64
    }

    /// Fraction of synthetic images the rater called real.
    pub fn accepted_as_real(&self) -> f64 {
        (self.n_synth - self.correct_synth) as f64 / self.n_synth as f64
    }
}

/// Tallies `(truth, answer)` pairs.
pub fn rater_outcome(responses: &[(Origin, Origin)], rater_tag: impl Into<String>) -> Result<RaterOutcome, StatsError> {
    if responses.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut out = RaterOutcome {
        rater_tag: rater_tag.into(),
        n_real: 0,
        n_synth: 0,
        correct_real: 0,
        correct_synth: 0,
    };
    for &(truth, answer) in responses {
        let correct = u64::from(truth == answer);
        match truth {
            Origin::Real => {
                out.n_real += 1;
                out.correct_real += correct;
            }
            Origin::Synthetic => {
                out.n_synth += 1;
                out.correct_synth += correct;
            }
        }
    }
    if out.n_real == 0 {
        return Err(StatsError::SingleClass(Origin::Synthetic));
    }
    if out.n_synth == 0 {
        return Err(StatsError::SingleClass(Origin::Real));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    #[default]
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinomialResult {
    pub k: u64,
    pub n: u64,
    pub p0: f64,
    pub p_value: f64,
    pub sided: Sided,
}

/// Neumaier-compensated sum.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.c
    }
}

/// `ln(n!) - ln(sqrt(2 pi n) (n / e)^n)` for n = 0..=15.
#[allow(clippy::excessive_precision)]
const STIRLING_ERROR_TABLE: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_22,
    0.041_340_695_955_409_294_09,
    0.027_677_925_684_998_339_15,
    0.020_790_672_103_765_093_11,
    0.016_644_691_189_821_192_16,
    0.013_876_128_823_070_747_99,
    0.011_896_709_945_891_770_10,
    0.010_411_265_261_972_096_50,
    0.009_255_462_182_712_732_918,
    0.008_330_563_433_362_871_256,
    0.007_573_675_487_951_840_795,
    0.006_942_840_107_209_529_866,
    0.006_408_994_188_004_207_068,
    0.005_951_370_112_758_847_736,
    0.005_554_733_551_962_801_371,
];

/// Stirling-series error term of `ln(n!)`.
fn stirling_error(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        return STIRLING_ERROR_TABLE[n as usize];
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, evaluated by series when `x` is
/// close to `np` to avoid cancellation.
fn deviance(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let next = s + ej / f64::from(2 * j + 1);
            if next == s {
                return next;
            }
            s = next;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// `ln P(X = x)` for `X ~ Binomial(n, p)` via Loader's saddle-point
/// expansion, which keeps full relative precision for large `n`.
fn ln_binomial_pmf(x: u64, n: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    let (xf, nf) = (x as f64, n as f64);
    if x == 0 {
        if n == 0 {
            return 0.0;
        }
        return if p < 0.1 {
            -deviance(nf, nf * q) - nf * p
        } else {
            nf * q.ln()
        };
    }
    if x == n {
        return if q < 0.1 {
            -deviance(nf, nf * p) - nf * q
        } else {
            nf * p.ln()
        };
    }
    let lc = stirling_error(nf)
        - stirling_error(xf)
        - stirling_error(nf - xf)
        - deviance(xf, nf * p)
        - deviance(nf - xf, nf * q);
    let lf = (2.0 * std::f64::consts::PI).ln() + xf.ln() + (-xf / nf).ln_1p();
    lc - 0.5 * lf
}

/// Log-pmf terms of Binomial(n, p0) for every outcome.
fn log_pmf_terms(n: u64, p0: f64) -> Vec<f64> {
    (0..=n).map(|i| ln_binomial_pmf(i, n, p0)).collect()
}

/// `log(sum(exp(terms)))` with the largest term factored out.
fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut acc = CompensatedSum::default();
    for t in terms {
        acc.add((t - max).exp());
    }
    max + acc.total().ln()
}

/// Relative slack used to decide which outcomes are "as extreme" as the
/// observed one in the two-sided test.
const TWO_SIDED_RELATIVE_SLACK: f64 = 1e-7;

/// Exact binomial test of `k` successes in `n` trials against `p0`.
///
/// One-sided (`Greater`) sums the upper tail `P(X >= k)`. Two-sided sums the
/// probabilities of all outcomes no more likely than `k`.
pub fn binomial_test(k: u64, n: u64, p0: f64, sided: Sided) -> Result<BinomialResult, StatsError> {
    if k > n {
        return Err(StatsError::BadCount { k, n });
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::BadProbability(p0));
    }
    let p_value = match sided {
        Sided::Greater if k == 0 => 1.0,
        Sided::Greater => {
            let terms = log_pmf_terms(n, p0);
            log_sum_exp(terms[k as usize..].iter().copied()).exp()
        }
        Sided::TwoSided => {
            let terms = log_pmf_terms(n, p0);
            let cutoff = terms[k as usize] + TWO_SIDED_RELATIVE_SLACK.ln_1p();
            log_sum_exp(terms.iter().copied().filter(|&t| t <= cutoff)).exp()
        }
    };
    Ok(BinomialResult {
        k,
        n,
        p0,
        p_value: p_value.min(1.0),
        sided,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementBand {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl AgreementBand {
    pub fn label(self) -> &'static str {
        match self {
            AgreementBand::Poor => "Poor",
            AgreementBand::Slight => "Slight",
            AgreementBand::Fair => "Fair",
            AgreementBand::Moderate => "Moderate",
            AgreementBand::Substantial => "Substantial",
            AgreementBand::AlmostPerfect => "Almost perfect",
        }
    }
}

impl fmt::Display for AgreementBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Landis-Koch bands. Upper bounds are closed, so exactly 0.20 is slight.
pub fn interpret_band(kappa: f64) -> AgreementBand {
    if kappa < 0.0 {
        AgreementBand::Poor
    } else if kappa <= 0.20 {
        AgreementBand::Slight
    } else if kappa <= 0.40 {
        AgreementBand::Fair
    } else if kappa <= 0.60 {
        AgreementBand::Moderate
    } else if kappa <= 0.80 {
        AgreementBand::Substantial
    } else {
        AgreementBand::AlmostPerfect
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub po: f64,
    pub pe: f64,
    pub kappa: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub n: usize,
    pub band: AgreementBand,
}

/// Two-sided standard normal tail `P(|Z| >= |z|)`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Cohen's kappa for two raters labelling the same items.
///
/// `se = sqrt(po (1 - po) / (n (1 - pe)^2))` and `z = kappa / se`. When the
/// raters agree on every item `se` is 0; `z` is then infinite and the
/// p-value 0.
pub fn cohen_kappa<L: Ord + Clone>(pairs: &[(L, L)]) -> Result<KappaResult, StatsError> {
    let n = pairs.len();
    if n < 2 {
        return Err(StatsError::TooFewItems(n));
    }
    let mut marg_a: BTreeMap<&L, u64> = BTreeMap::new();
    let mut marg_b: BTreeMap<&L, u64> = BTreeMap::new();
    let mut agree = 0u64;
    for (a, b) in pairs {
        *marg_a.entry(a).or_default() += 1;
        *marg_b.entry(b).or_default() += 1;
        agree += u64::from(a == b);
    }
    let nf = n as f64;
    let po = agree as f64 / nf;
    // integer numerator keeps pe independent of item order
    let pe_num: u64 = marg_a
        .iter()
        .map(|(label, &ca)| ca * marg_b.get(label).copied().unwrap_or(0))
        .sum();
    if pe_num == (n as u64) * (n as u64) {
        return Err(StatsError::UndefinedKappa);
    }
    let pe = pe_num as f64 / (nf * nf);
    let kappa = (po - pe) / (1.0 - pe);
    let se = (po * (1.0 - po) / (nf * (1.0 - pe).powi(2))).sqrt();
    let z = if se > 0.0 {
        kappa / se
    } else if kappa > 0.0 {
        f64::INFINITY
    } else if kappa < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let p_value = if se > 0.0 || kappa != 0.0 {
        normal_two_sided_p(z)
    } else {
        1.0
    };
    Ok(KappaResult {
        po,
        pe,
        kappa,
        se,
        z,
        p_value,
        n,
        band: interpret_band(kappa),
    })
}
