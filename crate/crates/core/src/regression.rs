//! Travel-time regressions: a baseline on occupancy and hour of day (OLS),
//! and the same model augmented with travel-time band indicators (OLS+).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::feed::Direction;
use crate::labeling::TravelTimeBand;
use crate::local_hour;
use crate::trigger::TripApproachRecord;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("design is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("{n} rows cannot identify {p} coefficients")]
    TooFewRows { n: usize, p: usize },

    #[error("OLS and OLS+ designs cover different rows: {0}")]
    RowMismatch(String),

    #[error("trip {0} has no band")]
    MissingBand(String),

    #[error("reference band {0} does not occur in the data")]
    MissingReference(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub trip_id: String,
    pub direction: Direction,
    pub approach_ts: i64,
    pub hour: u32,
    pub occupancy: f64,
    pub eff_tt_s: f64,
    pub band: Option<TravelTimeBand>,
}

/// How band indicators enter the OLS+ design alongside the intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandEncoding {
    /// Effect coding: band effects sum to zero; the last band's effect is
    /// minus the sum of the others.
    #[default]
    SumToZero,
    /// Treatment coding against a reference band (effect 0).
    Reference(TravelTimeBand),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDesign {
    pub columns: Vec<String>,
    /// `n x p`, intercept first.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub trip_ids: Vec<String>,
    pub reference_hour: Option<u32>,
    /// `None` for the baseline design.
    pub band_encoding: Option<BandEncoding>,
    /// Bands present in the rows, in ordinal order; only these are encoded.
    pub bands: Vec<TravelTimeBand>,
}

pub const INTERCEPT: &str = "const";
pub const OCCUPANCY: &str = "occupancy";

pub fn hour_column(h: u32) -> String {
    format!("Hour_{h}")
}

/// Builds the design for one direction. Hours present in the data get a
/// dummy each except the earliest, which is the reference. With
/// `band_encoding`, indicators for the bands present are added and every
/// record must carry a band; an absent band would only add a zero column.
pub fn build_design(
    records: &[TripRecord],
    band_encoding: Option<BandEncoding>,
    scope: Direction,
) -> Result<RegressionDesign> {
    let rows: Vec<&TripRecord> = records.iter().filter(|r| r.direction == scope).collect();
    let hours: BTreeSet<u32> = rows.iter().map(|r| r.hour).collect();
    let reference_hour = hours.iter().next().copied();
    let dummy_hours: Vec<u32> = hours.iter().skip(1).copied().collect();

    let mut columns = vec![INTERCEPT.to_string(), OCCUPANCY.to_string()];
    columns.extend(dummy_hours.iter().map(|&h| hour_column(h)));
    let bands: Vec<TravelTimeBand> = match band_encoding {
        None => Vec::new(),
        Some(_) => {
            let mut present = BTreeSet::new();
            for r in &rows {
                present.insert(r.band.ok_or_else(|| RegressionError::MissingBand(r.trip_id.clone()))?);
            }
            present.into_iter().collect()
        }
    };
    let band_cols: Vec<TravelTimeBand> = match band_encoding {
        None => Vec::new(),
        Some(BandEncoding::SumToZero) => bands[..bands.len().saturating_sub(1)].to_vec(),
        Some(BandEncoding::Reference(r)) => {
            if !bands.is_empty() && !bands.contains(&r) {
                return Err(RegressionError::MissingReference(r.name().to_string()).into());
            }
            bands.iter().copied().filter(|&b| b != r).collect()
        }
    };
    columns.extend(band_cols.iter().map(|b| b.dummy_name().to_string()));

    let p = columns.len();
    let mut data = Vec::with_capacity(rows.len() * p);
    for r in &rows {
        data.push(1.0);
        data.push(r.occupancy);
        data.extend(dummy_hours.iter().map(|&h| (r.hour == h) as u8 as f64));
        if let Some(enc) = band_encoding {
            let band = r.band.ok_or_else(|| RegressionError::MissingBand(r.trip_id.clone()))?;
            for &b in &band_cols {
                let v = match enc {
                    BandEncoding::SumToZero if Some(&band) == bands.last() => -1.0,
                    _ => (band == b) as u8 as f64,
                };
                data.push(v);
            }
        }
    }
    let design = RegressionDesign {
        columns,
        x: DMatrix::from_row_slice(rows.len(), p, &data),
        y: DVector::from_iterator(rows.len(), rows.iter().map(|r| r.eff_tt_s)),
        trip_ids: rows.iter().map(|r| r.trip_id.clone()).collect(),
        reference_hour,
        band_encoding,
        bands,
    };
    if rows.len() >= p {
        check_rank(&design)?;
    }
    Ok(design)
}

fn rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let tol = max * (m.nrows().max(m.ncols()) as f64) * 1e-12;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Adds columns one at a time and names every column that fails to raise the
/// rank.
fn check_rank(d: &RegressionDesign) -> Result<()> {
    let mut kept: Vec<usize> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..d.x.ncols() {
        let mut trial = kept.clone();
        trial.push(j);
        if rank(&d.x.select_columns(&trial)) == trial.len() {
            kept = trial;
        } else {
            bad.push(d.columns[j].clone());
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(RegressionError::RankDeficient { columns: bad }.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    pub name: String,
    pub coef: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    /// Whether the value is implied by the encoding rather than estimated
    /// directly.
    pub derived: bool,
}

impl Coefficient {
    /// `**` below 0.05, `*` below 0.10.
    pub fn stars(&self) -> &'static str {
        if self.p < 0.05 {
            "**"
        } else if self.p < 0.10 {
            "*"
        } else {
            ""
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub mae: f64,
    pub n: usize,
    pub df: usize,
    pub actual: Vec<f64>,
    pub fitted: Vec<f64>,
    pub trip_ids: Vec<String>,
    pub band_encoding: Option<BandEncoding>,
    pub bands: Vec<TravelTimeBand>,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn intercept(&self) -> f64 {
        self.coefficient(INTERCEPT).map_or(0.0, |c| c.coef)
    }

    /// Effect of each band relative to the encoding's baseline; NaN for
    /// bands absent from the data. Differences between entries do not depend
    /// on the encoding.
    pub fn band_effects(&self) -> Option<[f64; TravelTimeBand::COUNT]> {
        let enc = self.band_encoding?;
        let mut out = [f64::NAN; TravelTimeBand::COUNT];
        for &b in &self.bands {
            out[b.index()] = match (enc, self.coefficient(b.dummy_name())) {
                (_, Some(c)) => c.coef,
                (BandEncoding::Reference(r), None) if r == b => 0.0,
                _ => f64::NAN,
            };
        }
        Some(out)
    }

    /// Prediction for a record outside the fitted rows. Hours without a
    /// coefficient count as the reference hour; a missing band contributes 0.
    pub fn predict(&self, record: &TripRecord) -> f64 {
        let coef = |name: &str| self.coefficient(name).map_or(0.0, |c| c.coef);
        let mut y = self.intercept() + coef(OCCUPANCY) * record.occupancy + coef(&hour_column(record.hour));
        if self.band_encoding.is_some() {
            y += record.band.map_or(0.0, |b| coef(b.dummy_name()));
        }
        y
    }

    /// Mean absolute error on held-out records.
    pub fn heldout_mae(&self, records: &[TripRecord]) -> Option<f64> {
        (!records.is_empty()).then(|| {
            records.iter().map(|r| (r.eff_tt_s - self.predict(r)).abs()).sum::<f64>() / records.len() as f64
        })
    }

    /// Residuals `y - fitted`.
    pub fn residuals(&self) -> Vec<f64> {
        self.actual.iter().zip(&self.fitted).map(|(a, f)| a - f).collect()
    }

    pub fn report_csv(&self) -> String {
        let mut s = String::from("variable,coef,se,t,p,stars\n");
        for c in &self.coefficients {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.4},{:.6},{}", c.name, c.coef, c.se, c.t, c.p, c.stars());
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "statistic,value\nintercept,{:.6}\nr_squared,{:.6}\nmae,{:.6}\nn,{}\n",
            self.intercept(),
            self.r_squared,
            self.mae,
            self.n
        )
    }
}

/// Least squares via a thin QR factorization. Standard errors use the
/// unbiased residual variance with `n - p` degrees of freedom; p-values are
/// two-sided Student t.
pub fn ols_fit(design: &RegressionDesign) -> Result<FitResult> {
    let (n, p) = design.x.shape();
    if n <= p {
        return Err(RegressionError::TooFewRows { n, p }.into());
    }
    check_rank(design)?;
    let qr = design.x.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let qty = q.transpose() * &design.y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numeric("singular R factor".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numeric("singular R factor".into()))?;
    let cov_unscaled = &r_inv * r_inv.transpose();

    let fitted = &design.x * &beta;
    let resid = &design.y - &fitted;
    let ssr = resid.norm_squared();
    let mean_y = design.y.mean();
    let sst: f64 = design.y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let df = n - p;
    let sigma2 = ssr / df as f64;
    let t_dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let stat = |name: String, coef: f64, var: f64, derived: bool| {
        let se = (sigma2 * var).max(0.0).sqrt();
        let t = if se > 0.0 { coef / se } else { f64::INFINITY * coef.signum() };
        let p = if t.is_finite() { (2.0 * t_dist.sf(t.abs())).clamp(0.0, 1.0) } else { 0.0 };
        Coefficient {
            name,
            coef,
            se,
            t,
            p,
            derived,
        }
    };

    let mut coefficients: Vec<Coefficient> = (0..p)
        .map(|j| stat(design.columns[j].clone(), beta[j], cov_unscaled[(j, j)], false))
        .collect();

    if let (Some(BandEncoding::SumToZero), Some(last)) = (design.band_encoding, design.bands.last()) {
        let idx: Vec<usize> = design.bands[..design.bands.len() - 1]
            .iter()
            .map(|b| design.columns.iter().position(|c| c == b.dummy_name()).expect("band column"))
            .collect();
        let coef = -idx.iter().map(|&j| beta[j]).sum::<f64>();
        let var: f64 = idx.iter().flat_map(|&a| idx.iter().map(move |&b| (a, b))).map(|(a, b)| cov_unscaled[(a, b)]).sum();
        coefficients.push(stat(last.dummy_name().to_string(), coef, var, true));
    }

    Ok(FitResult {
        coefficients,
        r_squared: if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 },
        mae: resid.iter().map(|v| v.abs()).sum::<f64>() / n as f64,
        n,
        df,
        actual: design.y.iter().copied().collect(),
        fitted: fitted.iter().copied().collect(),
        trip_ids: design.trip_ids.clone(),
        band_encoding: design.band_encoding,
        bands: design.bands.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub scope: Direction,
    pub ols: FitResult,
    pub ols_plus: FitResult,
    pub delta_r2: f64,
    pub delta_mae: f64,
    /// Band effects from OLS+, Low through High; NaN for absent bands.
    pub ladder: [f64; TravelTimeBand::COUNT],
}

impl Comparison {
    /// Strictly increasing over the bands present.
    pub fn ladder_increasing(&self) -> bool {
        let present: Vec<f64> = self.ladder.iter().copied().filter(|v| v.is_finite()).collect();
        present.len() >= 2 && present.windows(2).all(|w| w[0] < w[1])
    }

    pub fn scatter_csv(&self) -> String {
        let mut s = String::from("actual,predicted,model\n");
        for (name, fit) in [("OLS", &self.ols), ("OLS+", &self.ols_plus)] {
            for (a, f) in fit.actual.iter().zip(&fit.fitted) {
                let _ = writeln!(s, "{a:.3},{f:.3},{name}");
            }
        }
        s
    }
}

/// Fits both models on the records of `scope` that carry a band.
pub fn compare_ols_vs_olsplus(records: &[TripRecord], scope: Direction, encoding: BandEncoding) -> Result<Comparison> {
    let banded: Vec<TripRecord> = records.iter().filter(|r| r.band.is_some()).cloned().collect();
    let base = build_design(&banded, None, scope)?;
    let plus = build_design(&banded, Some(encoding), scope)?;
    if base.trip_ids != plus.trip_ids {
        return Err(RegressionError::RowMismatch(format!("{} vs {} rows", base.trip_ids.len(), plus.trip_ids.len())).into());
    }
    let ols = ols_fit(&base)?;
    let ols_plus = ols_fit(&plus)?;
    let ladder = ols_plus.band_effects().expect("OLS+ has bands");
    Ok(Comparison {
        scope,
        delta_r2: ols_plus.r_squared - ols.r_squared,
        delta_mae: ols_plus.mae - ols.mae,
        ols,
        ols_plus,
        ladder,
    })
}

/// Replaces each trip's band with the band of the previous trip in the same
/// direction (by approach time). The first trip of each direction has no
/// predecessor and is dropped.
pub fn lookahead_bands(records: &[TripRecord]) -> Vec<TripRecord> {
    let mut by_dir: BTreeMap<Direction, Vec<&TripRecord>> = BTreeMap::new();
    for r in records {
        by_dir.entry(r.direction).or_default().push(r);
    }
    let mut out = Vec::new();
    for (_, mut v) in by_dir {
        v.sort_by(|a, b| a.approach_ts.cmp(&b.approach_ts).then_with(|| a.trip_id.cmp(&b.trip_id)));
        for w in v.windows(2) {
            let mut r = w[1].clone();
            r.band = w[0].band;
            out.push(r);
        }
    }
    out
}

/// Band predictions file: needs `trip_id`, `eff_tt_s` and `pred_band`
/// columns; anything else is ignored.
pub fn read_band_predictions(path: &Path) -> Result<BTreeMap<String, (f64, TravelTimeBand)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: missing column {name}", path.display())))
    };
    let (ti, ei, bi) = (col("trip_id")?, col("eff_tt_s")?, col("pred_band")?);
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let bad = || Error::Format(format!("{}: malformed row {:?}", path.display(), row));
        let eff: f64 = row.get(ei).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let band: TravelTimeBand = row.get(bi).ok_or_else(bad)?.parse()?;
        out.insert(row.get(ti).ok_or_else(bad)?.to_string(), (eff, band));
    }
    Ok(out)
}

/// Joins trip attributes with band predictions; trips missing from either
/// side, or lacking occupancy, are left out.
pub fn join_trip_records(
    attributes: &[TripApproachRecord],
    bands: &BTreeMap<String, (f64, TravelTimeBand)>,
    utc_offset_s: i64,
) -> Vec<TripRecord> {
    let mut seen = BTreeSet::new();
    attributes
        .iter()
        .filter(|a| a.occupancy.is_finite() && seen.insert(a.trip_id.as_str()))
        .filter_map(|a| {
            bands.get(&a.trip_id).map(|&(eff, band)| TripRecord {
                trip_id: a.trip_id.clone(),
                direction: a.direction,
                approach_ts: a.approach_ts,
                hour: local_hour(a.approach_ts, utc_offset_s),
                occupancy: a.occupancy,
                eff_tt_s: eff,
                band: Some(band),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: usize, hour: u32, occ: f64, y: f64, band: Option<TravelTimeBand>) -> TripRecord {
        TripRecord {
            trip_id: format!("t{id}"),
            direction: Direction::Inbound,
            approach_ts: id as i64 * 600,
            hour,
            occupancy: occ,
            eff_tt_s: y,
            band,
        }
    }

    #[test]
    fn encoding_example_row() {
        let recs = vec![
            rec(0, 6, 30.0, 100.0, Some(TravelTimeBand::Low)),
            rec(1, 7, 10.0, 100.0, Some(TravelTimeBand::High)),
        ];
        let d = build_design(&recs, Some(BandEncoding::Reference(TravelTimeBand::High)), Direction::Inbound).unwrap();
        assert_eq!(d.reference_hour, Some(6));
        let col = |n: &str| d.columns.iter().position(|c| c == n).unwrap();
        assert_eq!(d.x[(0, col("occupancy"))], 30.0);
        assert_eq!(d.x[(0, col("Hour_7"))], 0.0);
        assert_eq!(d.x[(1, col("Hour_7"))], 1.0);
        assert_eq!(d.x[(0, col("TTB_Low"))], 1.0);
        // Other direction is scoped out.
        assert_eq!(build_design(&recs, None, Direction::Outbound).unwrap().x.nrows(), 0);
    }

    #[test]
    fn exact_fit_recovers_line() {
        let recs: Vec<_> = (0..20).map(|i| rec(i, 8, i as f64 * 3.0, 100.0 + 2.0 * i as f64 * 3.0, None)).collect();
        let fit = ols_fit(&build_design(&recs, None, Direction::Inbound).unwrap()).unwrap();
        assert!((fit.intercept() - 100.0).abs() < 1e-8);
        assert!((fit.coefficient("occupancy").unwrap().coef - 2.0).abs() < 1e-8);
        assert!((fit.r_squared - 1.0).abs() < 1e-8);
    }

    #[test]
    fn collinear_columns_are_named() {
        // Every hour-7 trip is High: the dummies coincide.
        let recs: Vec<_> = (0..30)
            .map(|i| {
                let late = i % 2 == 0;
                let band = if late { TravelTimeBand::High } else { TravelTimeBand::ALL[i % 3] };
                rec(i, if late { 7 } else { 6 }, (i * 7 % 11) as f64, i as f64, Some(band))
            })
            .collect();
        let err = build_design(&recs, Some(BandEncoding::Reference(TravelTimeBand::Low)), Direction::Inbound)
            .unwrap_err()
            .to_string();
        assert!(err.contains("TTB_High"), "{err}");
    }

    #[test]
    fn too_few_rows() {
        let recs = vec![rec(0, 6, 1.0, 1.0, None), rec(1, 6, 2.0, 2.0, None)];
        let d = build_design(&recs, None, Direction::Inbound).unwrap();
        assert!(matches!(
            ols_fit(&d),
            Err(Error::Regression(RegressionError::TooFewRows { n: 2, p: 2 }))
        ));
    }

    #[test]
    fn lookahead_shifts_within_direction() {
        let mut a = rec(0, 6, 1.0, 1.0, Some(TravelTimeBand::High));
        let b = rec(1, 6, 1.0, 1.0, Some(TravelTimeBand::Low));
        let mut c = rec(2, 6, 1.0, 1.0, Some(TravelTimeBand::Moderate));
        c.direction = Direction::Outbound;
        a.approach_ts = -5;
        let out = lookahead_bands(&[b, a, c]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].trip_id, "t1");
        assert_eq!(out[0].band, Some(TravelTimeBand::High));
    }

    fn random_records(n: usize, seed: u64) -> Vec<TripRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let band = TravelTimeBand::ALL[rng.random_range(0..4)];
                let hour = rng.random_range(6..=21);
                let occ = rng.random_range(0.0..150.0);
                let y = 80.0 + 0.3 * occ + 25.0 * band.index() as f64 + rng.random_range(-20.0..20.0);
                rec(i, hour, occ, y, Some(band))
            })
            .collect()
    }

    #[test]
    fn residuals_are_orthogonal_and_nesting_holds() {
        let recs = random_records(300, 1);
        let cmp = compare_ols_vs_olsplus(&recs, Direction::Inbound, BandEncoding::SumToZero).unwrap();
        assert!(cmp.delta_r2 >= 0.0);
        let d = build_design(&recs, Some(BandEncoding::SumToZero), Direction::Inbound).unwrap();
        let r = DVector::from_vec(cmp.ols_plus.residuals());
        for j in 0..d.x.ncols() {
            let col = d.x.column(j);
            assert!(col.dot(&r).abs() <= 1e-6 * col.norm() * r.norm());
        }
        assert!(cmp.ladder_increasing());
    }

    #[test]
    fn encodings_agree_on_contrasts_and_fit() {
        let recs = random_records(200, 2);
        let a = compare_ols_vs_olsplus(&recs, Direction::Inbound, BandEncoding::SumToZero).unwrap();
        let b = compare_ols_vs_olsplus(&recs, Direction::Inbound, BandEncoding::Reference(TravelTimeBand::Low)).unwrap();
        assert!((a.ols_plus.r_squared - b.ols_plus.r_squared).abs() < 1e-10);
        for i in 1..4 {
            assert!(((a.ladder[i] - a.ladder[0]) - (b.ladder[i] - b.ladder[0])).abs() < 1e-8);
        }
        assert!(a.ladder.iter().sum::<f64>().abs() < 1e-8);
    }

    #[test]
    fn only_present_bands_are_encoded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recs: Vec<_> = (0..60)
            .map(|i| {
                let band = TravelTimeBand::ALL[i % 3];
                let y = 100.0 + 20.0 * band.index() as f64 + rng.random_range(-1.0..1.0);
                rec(i, 6 + (i % 2) as u32, rng.random_range(0.0..50.0), y, Some(band))
            })
            .collect();
        for enc in [BandEncoding::SumToZero, BandEncoding::Reference(TravelTimeBand::Low)] {
            let d = build_design(&recs, Some(enc), Direction::Inbound).unwrap();
            assert_eq!(d.bands, TravelTimeBand::ALL[..3].to_vec());
            assert!(!d.columns.iter().any(|c| c == "TTB_High"));
            let fit = ols_fit(&d).unwrap();
            let e = fit.band_effects().unwrap();
            assert!(e[3].is_nan());
            assert!((e[1] - e[0] - 20.0).abs() < 1.0 && (e[2] - e[1] - 20.0).abs() < 1.0);
        }
        let err = build_design(&recs, Some(BandEncoding::Reference(TravelTimeBand::High)), Direction::Inbound).unwrap_err();
        assert!(err.to_string().contains("High"));
    }

    #[test]
    fn heldout_prediction_matches_fitted_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let recs: Vec<_> = (0..40)
            .map(|i| rec(i, 6 + (i % 3) as u32, rng.random_range(0.0..50.0), rng.random_range(80.0..160.0), Some(TravelTimeBand::ALL[i % 4])))
            .collect();
        let fit = ols_fit(&build_design(&recs, Some(BandEncoding::SumToZero), Direction::Inbound).unwrap()).unwrap();
        for (r, f) in recs.iter().zip(&fit.fitted) {
            assert!((fit.predict(r) - f).abs() < 1e-9);
        }
        assert!((fit.heldout_mae(&recs).unwrap() - fit.mae).abs() < 1e-9);
        assert!(fit.heldout_mae(&[]).is_none());
    }

    #[test]
    fn fit_ignores_row_order() {
        let mut recs = random_records(120, 3);
        let a = ols_fit(&build_design(&recs, None, Direction::Inbound).unwrap()).unwrap();
        recs.reverse();
        let b = ols_fit(&build_design(&recs, None, Direction::Inbound).unwrap()).unwrap();
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((x.coef - y.coef).abs() < 1e-9 * x.coef.abs().max(1.0));
        }
    }

    #[test]
    fn report_has_expected_header() {
        let fit = ols_fit(&build_design(&random_records(50, 4), None, Direction::Inbound).unwrap()).unwrap();
        assert!(fit.report_csv().starts_with("variable,coef,se,t,p,stars\nconst,"));
        assert!(fit.summary_csv().contains("r_squared,"));
        assert!(fit.coefficients.iter().all(|c| (0.0..=1.0).contains(&c.p)));
    }
}
