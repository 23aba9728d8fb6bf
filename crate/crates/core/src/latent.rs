//! Recall data, surrogate/intake relationships and occasion likelihoods.
//!
//! Component layout for `D = q + p` dietary components: the first `q` are
//! episodic (zero recalls allowed), the last `p` regular. The surrogate vector
//! of an occasion has length `2q + p`: `q` consumption indicators, `q`
//! episodic amounts, `p` regular amounts.

use std::io::{Read, Write};

use thiserror::Error;

use crate::copula::{copula_factor_from_scores, CopulaError, SphericalCorrelation};
use crate::densities::{normal_ln_pdf, normal_score, DensityError, ErrorMixture, Univariate};
use crate::special::norm_cdf;
use crate::splines::{SplineBasis, SplineError};

/// Largest scaled recall per component.
pub const SCALED_MAX: f64 = 20.0;

/// Lower bound on consumption probabilities inside `X / P(X)`.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("component `{0}` has no positive recall")]
    AllZeroComponent(String),
    #[error("subject {subject}, occasion {occasion}: regular component `{name}` must be positive, got {value}")]
    NonPositiveRegular {
        subject: String,
        occasion: usize,
        name: String,
        value: f64,
    },
    #[error("subject {subject}, occasion {occasion}: invalid amount {value} for `{name}`")]
    InvalidAmount {
        subject: String,
        occasion: usize,
        name: String,
        value: f64,
    },
    #[error("no subject has at least {0} recalls")]
    InsufficientReplicates(usize),
    #[error("consumption probability {0} below the floor")]
    DegenerateProbability(f64),
    #[error("intake {value} outside [{lower}, {upper}]")]
    OutOfRange { value: f64, lower: f64, upper: f64 },
    #[error("malformed recall file at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Copula(#[from] CopulaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Repeated recalls for `n` subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallDataset {
    names: Vec<String>,
    episodic: usize,
    subject_ids: Vec<String>,
    // subject -> occasion -> amounts (length q + p)
    recalls: Vec<Vec<Vec<f64>>>,
    scale_factors: Vec<f64>,
}

impl RecallDataset {
    /// Builds and validates a dataset whose first `episodic` components may
    /// contain zeros.
    pub fn new(
        names: Vec<String>,
        episodic: usize,
        subject_ids: Vec<String>,
        recalls: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self, LatentError> {
        let d = names.len();
        if episodic > d || d == 0 {
            return Err(LatentError::Shape(format!("{episodic} episodic components among {d}")));
        }
        if subject_ids.len() != recalls.len() || recalls.is_empty() {
            return Err(LatentError::Shape(format!(
                "{} subject ids for {} subjects",
                subject_ids.len(),
                recalls.len()
            )));
        }
        for (sid, occ) in subject_ids.iter().zip(&recalls) {
            if occ.is_empty() {
                return Err(LatentError::Shape(format!("subject {sid} has no recalls")));
            }
            for (j, y) in occ.iter().enumerate() {
                if y.len() != d {
                    return Err(LatentError::Shape(format!(
                        "subject {sid}, occasion {}: {} values for {d} components",
                        j + 1,
                        y.len()
                    )));
                }
                for (l, &v) in y.iter().enumerate() {
                    if !v.is_finite() || v < 0.0 {
                        return Err(LatentError::InvalidAmount {
                            subject: sid.clone(),
                            occasion: j + 1,
                            name: names[l].clone(),
                            value: v,
                        });
                    }
                    if l >= episodic && v <= 0.0 {
                        return Err(LatentError::NonPositiveRegular {
                            subject: sid.clone(),
                            occasion: j + 1,
                            name: names[l].clone(),
                            value: v,
                        });
                    }
                }
            }
        }
        for l in 0..d {
            let any = recalls.iter().flatten().any(|y| y[l] > 0.0);
            if !any {
                return Err(LatentError::AllZeroComponent(names[l].clone()));
            }
        }
        Ok(Self {
            names,
            episodic,
            subject_ids,
            recalls,
            scale_factors: vec![1.0; d],
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
    /// `q`.
    pub fn num_episodic(&self) -> usize {
        self.episodic
    }
    /// `p`.
    pub fn num_regular(&self) -> usize {
        self.names.len() - self.episodic
    }
    /// `q + p`.
    pub fn num_components(&self) -> usize {
        self.names.len()
    }
    pub fn num_subjects(&self) -> usize {
        self.recalls.len()
    }
    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }
    /// Recall amounts of subject `i`, one row per occasion.
    pub fn subject(&self, i: usize) -> &[Vec<f64>] {
        &self.recalls[i]
    }
    pub fn total_occasions(&self) -> usize {
        self.recalls.iter().map(Vec::len).sum()
    }
    /// Multipliers applied by [`RecallDataset::scaled`]; all one for raw data.
    pub fn scale_factors(&self) -> &[f64] {
        &self.scale_factors
    }

    /// Full observation vector `(indicators, episodic amounts, regular amounts)`.
    pub fn observation(&self, i: usize, j: usize) -> Vec<f64> {
        let y = &self.recalls[i][j];
        let q = self.episodic;
        let mut out = Vec::with_capacity(y.len() + q);
        out.extend(y[..q].iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }));
        out.extend_from_slice(y);
        out
    }

    /// Fraction of zero recalls of component `l`.
    pub fn zero_rate(&self, l: usize) -> f64 {
        let total = self.total_occasions() as f64;
        let zeros = self.recalls.iter().flatten().filter(|y| y[l] == 0.0).count() as f64;
        zeros / total
    }

    /// Rescales each component so that its largest recall is 20, recording
    /// the multipliers (composed with any earlier scaling).
    pub fn scaled(&self) -> Self {
        let d = self.names.len();
        let mut factors = vec![1.0; d];
        for (l, f) in factors.iter_mut().enumerate() {
            let max = self.recalls.iter().flatten().map(|y| y[l]).fold(0.0f64, f64::max);
            *f = if max == SCALED_MAX { 1.0 } else { SCALED_MAX / max };
        }
        let recalls = self
            .recalls
            .iter()
            .map(|occ| {
                occ.iter()
                    .map(|y| y.iter().zip(&factors).map(|(&v, &c)| v * c).collect())
                    .collect()
            })
            .collect();
        Self {
            names: self.names.clone(),
            episodic: self.episodic,
            subject_ids: self.subject_ids.clone(),
            recalls,
            scale_factors: self.scale_factors.iter().zip(&factors).map(|(a, b)| a * b).collect(),
        }
    }

    /// Ensures enough replication for identifiability.
    pub fn check_replicates(&self, min: usize) -> Result<(), LatentError> {
        if self.recalls.iter().any(|o| o.len() >= min) {
            Ok(())
        } else {
            Err(LatentError::InsufficientReplicates(min))
        }
    }

    /// Reads `subject,occasion,<names...>`. Components listed in `episodic`
    /// (or, when `None`, every component with a zero recall) are moved to the
    /// front in file order.
    pub fn read_csv<R: Read>(reader: R, episodic: Option<&[String]>) -> Result<Self, LatentError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| LatentError::Format {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        if header.len() < 3 || &header[0] != "subject" || &header[1] != "occasion" {
            return Err(LatentError::Format {
                line: 1,
                message: "header must start with `subject,occasion` followed by component names".into(),
            });
        }
        let file_names: Vec<String> = header.iter().skip(2).map(str::to_owned).collect();
        let mut ids: Vec<String> = Vec::new();
        let mut rows: Vec<Vec<(u64, Vec<f64>)>> = Vec::new();
        let mut index = std::collections::HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| LatentError::Format {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != header.len() {
                return Err(LatentError::Format {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            let occasion: u64 = rec[1].parse().map_err(|_| LatentError::Format {
                line,
                message: format!("occasion `{}` is not a nonnegative integer", &rec[1]),
            })?;
            let values = rec
                .iter()
                .skip(2)
                .map(|f| {
                    f.parse::<f64>().map_err(|_| LatentError::Format {
                        line,
                        message: format!("`{f}` is not a number"),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let sid = rec[0].to_owned();
            let slot = *index.entry(sid.clone()).or_insert_with(|| {
                ids.push(sid);
                rows.push(Vec::new());
                rows.len() - 1
            });
            rows[slot].push((occasion, values));
        }
        if rows.is_empty() {
            return Err(LatentError::Format {
                line: 2,
                message: "no recall rows".into(),
            });
        }
        let is_episodic: Vec<bool> = match episodic {
            Some(list) => {
                for name in list {
                    if !file_names.contains(name) {
                        return Err(LatentError::Shape(format!("unknown episodic component `{name}`")));
                    }
                }
                file_names.iter().map(|n| list.contains(n)).collect()
            }
            None => (0..file_names.len())
                .map(|l| rows.iter().flatten().any(|(_, v)| v[l] == 0.0))
                .collect(),
        };
        let order: Vec<usize> = (0..file_names.len())
            .filter(|&l| is_episodic[l])
            .chain((0..file_names.len()).filter(|&l| !is_episodic[l]))
            .collect();
        let q = is_episodic.iter().filter(|&&e| e).count();
        let names = order.iter().map(|&l| file_names[l].clone()).collect();
        let recalls = rows
            .into_iter()
            .map(|mut occ| {
                occ.sort_by_key(|(o, _)| *o);
                occ.into_iter()
                    .map(|(_, v)| order.iter().map(|&l| v[l]).collect())
                    .collect()
            })
            .collect();
        Self::new(names, q, ids, recalls)
    }

    /// Writes the dataset in the format read by [`RecallDataset::read_csv`].
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), LatentError> {
        write!(w, "subject,occasion")?;
        for n in &self.names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for (sid, occ) in self.subject_ids.iter().zip(&self.recalls) {
            for (j, y) in occ.iter().enumerate() {
                write!(w, "{sid},{}", j + 1)?;
                for v in y {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Variance function `s²(x) = B(x)ᵀ exp(ϑ)`; arguments beyond the basis
/// support are clamped to its ends.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceFunction {
    basis: SplineBasis,
    exp_coefs: Vec<f64>,
    log_coefs: Vec<f64>,
}

impl VarianceFunction {
    pub fn new(basis: SplineBasis, log_coefs: Vec<f64>) -> Result<Self, LatentError> {
        if log_coefs.len() != basis.num_bases() {
            return Err(LatentError::Shape(format!(
                "{} coefficients for {} bases",
                log_coefs.len(),
                basis.num_bases()
            )));
        }
        let exp_coefs = log_coefs.iter().map(|c| c.exp()).collect();
        Ok(Self {
            basis,
            exp_coefs,
            log_coefs,
        })
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }
    pub fn log_coefs(&self) -> &[f64] {
        &self.log_coefs
    }

    pub fn variance(&self, x: f64) -> f64 {
        self.basis.combine_clamped(x, &self.exp_coefs)
    }

    pub fn sd(&self, x: f64) -> f64 {
        self.variance(x).sqrt()
    }
}

/// Probit consumption curve `P(x) = Φ(B(x)ᵀβ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumptionCurve {
    basis: SplineBasis,
    coefs: Vec<f64>,
}

impl ConsumptionCurve {
    pub fn new(basis: SplineBasis, coefs: Vec<f64>) -> Result<Self, LatentError> {
        if coefs.len() != basis.num_bases() {
            return Err(LatentError::Shape(format!(
                "{} coefficients for {} bases",
                coefs.len(),
                basis.num_bases()
            )));
        }
        Ok(Self { basis, coefs })
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }
    pub fn coefs(&self) -> &[f64] {
        &self.coefs
    }

    /// `h(x) = B(x)ᵀβ`.
    pub fn linear_predictor(&self, x: f64) -> Result<f64, LatentError> {
        if !self.basis.contains(x) {
            return Err(LatentError::OutOfRange {
                value: x,
                lower: self.basis.lower(),
                upper: self.basis.upper(),
            });
        }
        Ok(self.basis.combine_clamped(x, &self.coefs))
    }

    pub fn probability(&self, x: f64) -> Result<f64, LatentError> {
        Ok(norm_cdf(self.linear_predictor(x)?))
    }
}

/// `P(x)` for a consumption curve.
pub fn consumption_prob(curve: &ConsumptionCurve, x: f64) -> Result<f64, LatentError> {
    curve.probability(x)
}

/// Long-term intakes of one subject and the derived transformed vector.
#[derive(Debug, Clone, PartialEq)]
pub struct IntakeState {
    pub x: Vec<f64>,
    pub x_plus: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub probs: Vec<f64>,
}

impl IntakeState {
    /// Derives `X⁺` and `X̃` from `x` and the `q` consumption curves.
    pub fn new(x: Vec<f64>, curves: &[ConsumptionCurve]) -> Result<Self, LatentError> {
        let q = curves.len();
        if q > x.len() {
            return Err(LatentError::Shape(format!("{q} curves for {} components", x.len())));
        }
        let mut h = Vec::with_capacity(q);
        let mut probs = Vec::with_capacity(q);
        for (c, &xl) in curves.iter().zip(&x) {
            let hl = c.linear_predictor(xl)?;
            let pl = norm_cdf(hl);
            if pl < PROB_FLOOR {
                return Err(LatentError::DegenerateProbability(pl));
            }
            h.push(hl);
            probs.push(pl);
        }
        let x_plus: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(l, &v)| if l < q { v / probs[l] } else { v })
            .collect();
        let mut x_tilde = h;
        x_tilde.extend_from_slice(&x_plus);
        Ok(Self {
            x,
            x_plus,
            x_tilde,
            probs,
        })
    }
}

/// Mean of surrogate `l` (0-based, `0..2q+p`) given `X̃`; equal to `X̃_l`.
pub fn surrogate_mean(x_tilde: &[f64], l: usize) -> f64 {
    x_tilde[l]
}

/// Conditional law of the surrogates given `X̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorLaw {
    episodic: usize,
    marginals: Vec<ErrorMixture>,
    variance: Vec<VarianceFunction>,
    correlation: SphericalCorrelation,
}

impl ErrorLaw {
    /// `marginals`, `variance` and `correlation` cover the `q + p` amount
    /// coordinates; the `q` indicator coordinates carry independent standard
    /// normal errors.
    pub fn new(
        episodic: usize,
        marginals: Vec<ErrorMixture>,
        variance: Vec<VarianceFunction>,
        correlation: SphericalCorrelation,
    ) -> Result<Self, LatentError> {
        let d = marginals.len();
        if variance.len() != d || correlation.dim() != d || episodic > d {
            return Err(LatentError::Shape(format!(
                "{} marginals, {} variance functions, correlation of dimension {}",
                d,
                variance.len(),
                correlation.dim()
            )));
        }
        Ok(Self {
            episodic,
            marginals,
            variance,
            correlation,
        })
    }

    pub fn num_episodic(&self) -> usize {
        self.episodic
    }
    pub fn marginals(&self) -> &[ErrorMixture] {
        &self.marginals
    }
    pub fn variance_functions(&self) -> &[VarianceFunction] {
        &self.variance
    }
    pub fn correlation(&self) -> &SphericalCorrelation {
        &self.correlation
    }

    /// Log density of one occasion's surrogates `w` (length `2q+p`).
    pub fn log_lik_occasion(&self, w: &[f64], x_tilde: &[f64]) -> Result<f64, LatentError> {
        let q = self.episodic;
        let d = self.marginals.len();
        if w.len() != q + d || x_tilde.len() != q + d {
            return Err(LatentError::Shape(format!(
                "surrogate vectors must have length {}",
                q + d
            )));
        }
        let mut total = 0.0;
        for l in 0..q {
            total += normal_ln_pdf(w[l], x_tilde[l], 1.0);
        }
        let mut scores = Vec::with_capacity(d);
        for k in 0..d {
            let l = q + k;
            let s = self.variance[k].sd(x_tilde[l]);
            let e = (w[l] - x_tilde[l]) / s;
            let m = &self.marginals[k];
            total += m.ln_pdf(e) - s.ln();
            let y = normal_score(m.cdf(e), m.sf(e));
            if !y.is_finite() {
                return Err(CopulaError::BoundaryScore { index: l }.into());
            }
            scores.push(y);
        }
        Ok(total + copula_factor_from_scores(&self.correlation, &scores))
    }
}

/// Log density of one occasion; see [`ErrorLaw::log_lik_occasion`].
pub fn log_lik_occasion(w: &[f64], x_tilde: &[f64], law: &ErrorLaw) -> Result<f64, LatentError> {
    law.log_lik_occasion(w, x_tilde)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{Gaussian, RestrictedErrorKernel};

    fn toy() -> RecallDataset {
        RecallDataset::new(
            vec!["a".into(), "b".into()],
            1,
            vec!["s1".into(), "s2".into()],
            vec![
                vec![vec![0.0, 2.0], vec![5.0, 4.0]],
                vec![vec![500.0, 1.0], vec![10.0, 8.0], vec![0.0, 3.0]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn scaling_examples() {
        let s = toy().scaled();
        assert_eq!(s.scale_factors(), &[0.04, 2.5]);
        assert_eq!(s.subject(1)[0], vec![20.0, 2.5]);
        assert_eq!(s.subject(0)[0][0], 0.0);
        let again = s.scaled();
        assert_eq!(again.subject(1), s.subject(1));
        assert_eq!(again.scale_factors(), s.scale_factors());
    }

    #[test]
    fn validation() {
        let bad = RecallDataset::new(vec!["a".into()], 0, vec!["s".into()], vec![vec![vec![0.0]]]);
        assert!(matches!(bad, Err(LatentError::NonPositiveRegular { .. })));
        let zero = RecallDataset::new(vec!["a".into()], 1, vec!["s".into()], vec![vec![vec![0.0]]]);
        assert!(matches!(zero, Err(LatentError::AllZeroComponent(_))));
        assert!(toy().check_replicates(3).is_ok());
        assert!(toy().check_replicates(4).is_err());
    }

    #[test]
    fn observation_layout() {
        let d = toy();
        assert_eq!(d.observation(0, 0), vec![0.0, 0.0, 2.0]);
        assert_eq!(d.observation(0, 1), vec![1.0, 5.0, 4.0]);
        assert!((d.zero_rate(0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn csv_roundtrip_and_reordering() {
        let text = "subject,occasion,reg,epi\nA,2,1.5,0\nA,1,2.25,3\nB,1,0.1,0\n";
        let d = RecallDataset::read_csv(text.as_bytes(), None).unwrap();
        assert_eq!(d.names(), &["epi".to_string(), "reg".to_string()]);
        assert_eq!(d.num_episodic(), 1);
        assert_eq!(d.subject(0), &[vec![3.0, 2.25], vec![0.0, 1.5]]);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = RecallDataset::read_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back, d);
        let err = RecallDataset::read_csv("subject,occasion,a\nA,1,x\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, LatentError::Format { line: 2, .. }), "{err}");
    }

    #[test]
    fn surrogate_means() {
        let basis = SplineBasis::new(0.0, 10.0, 12).unwrap();
        let always = ConsumptionCurve::new(basis.clone(), vec![40.0; 12]).unwrap();
        let s = IntakeState::new(vec![3.0, 2.0], &[always]).unwrap();
        assert_eq!(s.x_tilde[1], 3.0);
        assert_eq!(surrogate_mean(&s.x_tilde, 2), 2.0);
        let half = ConsumptionCurve::new(basis.clone(), vec![0.0; 12]).unwrap();
        assert_eq!(consumption_prob(&half, 7.3).unwrap(), 0.5);
        let s = IntakeState::new(vec![2.0, 1.0], &[half]).unwrap();
        assert_eq!(s.x_tilde[1], 4.0);
        assert!((s.probs[0] * s.x_plus[0] - s.x[0]).abs() < 1e-15);
        let four = ConsumptionCurve::new(basis.clone(), vec![4.0; 12]).unwrap();
        assert!((four.probability(1.0).unwrap() - 0.999_968_328_758_166_9).abs() < 1e-15);
        assert!(four.probability(10.5).is_err());
        let never = ConsumptionCurve::new(basis, vec![-40.0; 12]).unwrap();
        assert!(matches!(
            IntakeState::new(vec![1.0], &[never]),
            Err(LatentError::DegenerateProbability(_))
        ));
    }

    fn law(q: usize, d: usize, var_coef: f64) -> ErrorLaw {
        let basis = SplineBasis::new(0.0, 20.0, 12).unwrap();
        ErrorLaw::new(
            q,
            vec![ErrorMixture::standard(); d],
            vec![VarianceFunction::new(basis, vec![var_coef; 12]).unwrap(); d],
            SphericalCorrelation::identity(d),
        )
        .unwrap()
    }

    #[test]
    fn zero_error_occasion() {
        let l = law(1, 2, 0.8f64.ln());
        let xt = [0.3, 2.0, 5.0];
        let ll = l.log_lik_occasion(&xt, &xt).unwrap();
        let phi0 = Gaussian::<f64>::standard().ln_pdf(0.0);
        assert!((ll - (3.0 * phi0 - 2.0 * 0.8f64.sqrt().ln())).abs() < 1e-12);
    }

    #[test]
    fn heteroscedastic_normal_oracle() {
        // s(x) = x/3 represented exactly is not possible with constant
        // coefficients, so compare against s² read back from the function
        let basis = SplineBasis::new(0.0, 20.0, 12).unwrap();
        let coefs: Vec<f64> = (0..12).map(|j| (0.2 * j as f64).ln_1p()).collect();
        let vf = VarianceFunction::new(basis, coefs).unwrap();
        let law = ErrorLaw::new(
            0,
            vec![ErrorMixture::standard()],
            vec![vf.clone()],
            SphericalCorrelation::identity(1),
        )
        .unwrap();
        let (x, w) = (4.0, 5.3);
        let v = vf.variance(x);
        let want = -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (w - x) * (w - x) / (2.0 * v);
        assert!((law.log_lik_occasion(&[w], &[x]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_in_w() {
        let basis = SplineBasis::new(0.0, 20.0, 12).unwrap();
        let kern = RestrictedErrorKernel::new(0.4, 2.0, 2.0, 1.0).unwrap();
        let mix = ErrorMixture::new(vec![1.0], vec![kern]).unwrap();
        let corr = SphericalCorrelation::new(vec![0.5], vec![]).unwrap();
        let law = ErrorLaw::new(
            0,
            vec![mix.clone(), mix],
            vec![VarianceFunction::new(basis, vec![0.0; 12]).unwrap(); 2],
            corr,
        )
        .unwrap();
        let xt = [3.0, 4.0];
        // direct two-dimensional copula formula
        let oracle = |w0: f64, w1: f64| {
            let e = [w0 - xt[0], w1 - xt[1]];
            let y: Vec<f64> = e.iter().map(|&v| crate::special::norm_quantile(kern.cdf(v))).collect();
            let r: f64 = 0.5;
            let c = -0.5 * (1.0 - r * r).ln()
                - (r * r * (y[0] * y[0] + y[1] * y[1]) - 2.0 * r * y[0] * y[1]) / (2.0 * (1.0 - r * r));
            c + kern.ln_pdf(e[0]) + kern.ln_pdf(e[1])
        };
        let delta = 1e-4;
        for &(a, b) in &[(3.4, 2.9), (1.0, 6.0), (4.5, 4.5)] {
            let got = law.log_lik_occasion(&[a, b], &xt).unwrap();
            assert!((got - oracle(a, b)).abs() < 1e-10);
            let up = law.log_lik_occasion(&[a + delta, b], &xt).unwrap();
            let fd = (up - got) / delta;
            let want = (oracle(a + delta, b) - oracle(a, b)) / delta;
            assert!((fd - want).abs() < 1e-5);
        }
    }
}
