//! Masked MAE / RMSE / MAPE and the historical-average baseline.

use std::io::Write;
use std::ops::Range;

use crate::data::SpeedSeries;
use crate::error::{Error, Result};
use crate::sparse::DenseMatrix;

/// Truth and prediction over the same entries, with `mask[i]` true where
/// entry `i` is observed.
#[derive(Debug, Clone, Copy)]
pub struct MaskedPair<'a> {
    truth: &'a [f64],
    prediction: &'a [f64],
    mask: &'a [bool],
}

impl<'a> MaskedPair<'a> {
    pub fn new(truth: &'a [f64], prediction: &'a [f64], mask: &'a [bool]) -> Result<Self> {
        if truth.len() != prediction.len() || truth.len() != mask.len() {
            return Err(Error::DimensionMismatch {
                op: "masked_pair",
                left: (truth.len(), prediction.len()),
                right: (mask.len(), 1),
            });
        }
        Ok(Self {
            truth,
            prediction,
            mask,
        })
    }

    fn observed(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..self.truth.len())
            .filter(|&i| self.mask[i])
            .map(|i| (i, self.truth[i], self.prediction[i]))
    }

    fn count(&self) -> Result<f64> {
        match self.mask.iter().filter(|&&m| m).count() {
            0 => Err(Error::EmptyMask),
            c => Ok(c as f64),
        }
    }
}

pub fn masked_mae(p: &MaskedPair) -> Result<f64> {
    let n = p.count()?;
    Ok(p.observed().map(|(_, t, y)| (t - y).abs()).sum::<f64>() / n)
}

pub fn masked_rmse(p: &MaskedPair) -> Result<f64> {
    let n = p.count()?;
    Ok((p.observed().map(|(_, t, y)| (t - y) * (t - y)).sum::<f64>() / n).sqrt())
}

/// Mean absolute percentage error as a fraction (0.05 means 5%).
pub fn masked_mape(p: &MaskedPair) -> Result<f64> {
    let n = p.count()?;
    let mut total = 0.0;
    for (i, t, y) in p.observed() {
        if t == 0.0 {
            return Err(Error::ZeroTruth(i));
        }
        total += ((t - y) / t).abs();
    }
    Ok(total / n)
}

pub const WEEK_STEPS: usize = 2016;

/// Historical-average forecast for every step in `eval_range`: the mean of
/// the observed values at `t - j·period`, `j = 1..=lookback`. Entries with no
/// such observation are returned unmasked (`false`) with value 0.
pub fn historical_average(
    series: &SpeedSeries,
    eval_range: Range<usize>,
    period: usize,
    lookback: usize,
) -> (DenseMatrix, Vec<bool>) {
    let n = series.n_nodes();
    let end = eval_range.end.min(series.n_steps());
    let rows = end.saturating_sub(eval_range.start);
    let mut pred = DenseMatrix::zeros(rows, n);
    let mut mask = vec![false; rows * n];
    for (r, t) in (eval_range.start..end).enumerate() {
        for i in 0..n {
            let past: Vec<f64> = (1..=lookback)
                .map_while(|j| t.checked_sub(j * period))
                .filter(|&s| series.observed(s, i))
                .map(|s| series.values.get(s, i))
                .collect();
            if !past.is_empty() {
                pred.set(r, i, past.iter().sum::<f64>() / past.len() as f64);
                mask[r * n + i] = true;
            }
        }
    }
    (pred, mask)
}

/// Scores at one forecast horizon, in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonMetrics {
    /// Steps ahead, 1-based.
    pub horizon: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
}

impl HorizonMetrics {
    /// Scores one horizon. Entries whose truth is zero are dropped from the
    /// MAPE mask only.
    pub fn compute(horizon: usize, truth: &[f64], prediction: &[f64], mask: &[bool]) -> Result<Self> {
        let pair = MaskedPair::new(truth, prediction, mask)?;
        let nonzero: Vec<bool> = mask.iter().zip(truth).map(|(&m, &t)| m && t != 0.0).collect();
        Ok(Self {
            horizon,
            mae: masked_mae(&pair)?,
            rmse: masked_rmse(&pair)?,
            mape: masked_mape(&MaskedPair::new(truth, prediction, &nonzero)?)?,
        })
    }
}

/// Writes `horizon_minutes,metric,value` records; MAPE is printed in percent.
pub fn write_report<W: Write>(w: &mut W, rows: &[HorizonMetrics], minutes_per_step: usize) -> Result<()> {
    writeln!(w, "horizon_minutes,metric,value")?;
    for r in rows {
        let minutes = r.horizon * minutes_per_step;
        writeln!(w, "{minutes},MAE,{:.4}", r.mae)?;
        writeln!(w, "{minutes},RMSE,{:.4}", r.rmse)?;
        writeln!(w, "{minutes},MAPE,{:.4}%", r.mape * 100.0)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair<'a>(t: &'a [f64], p: &'a [f64], m: &'a [bool]) -> MaskedPair<'a> {
        MaskedPair::new(t, p, m).unwrap()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(masked_mae(&pair(&[2.0], &[1.0], &[true])).unwrap(), 1.0);
        assert_eq!(
            masked_mae(&pair(&[1.0, 9.0], &[2.0, 0.0], &[true, false])).unwrap(),
            1.0
        );
        assert_eq!(
            masked_mae(&pair(&[3.0, 4.0], &[3.0, 4.0], &[true, true])).unwrap(),
            0.0
        );
    }

    #[test]
    fn rmse_examples() {
        let r = masked_rmse(&pair(&[0.0, 0.0], &[3.0, 4.0], &[true, true])).unwrap();
        assert_eq!(r, 12.5f64.sqrt());
        assert_eq!(masked_rmse(&pair(&[5.0], &[5.0], &[true])).unwrap(), 0.0);
    }

    #[test]
    fn mape_examples() {
        assert_eq!(masked_mape(&pair(&[2.0], &[1.0], &[true])).unwrap(), 0.5);
        assert_eq!(masked_mape(&pair(&[7.0], &[7.0], &[true])).unwrap(), 0.0);
        assert!(matches!(
            masked_mape(&pair(&[0.0], &[1.0], &[true])),
            Err(Error::ZeroTruth(0))
        ));
        assert_eq!(
            masked_mape(&pair(&[0.0, 4.0], &[1.0, 2.0], &[false, true])).unwrap(),
            0.5
        );
    }

    #[test]
    fn empty_mask_and_shape_errors() {
        assert!(matches!(
            masked_mae(&pair(&[1.0], &[1.0], &[false])),
            Err(Error::EmptyMask)
        ));
        assert!(MaskedPair::new(&[1.0], &[1.0, 2.0], &[true]).is_err());
    }

    fn weekly_series(steps: usize, f: impl Fn(usize) -> f64) -> SpeedSeries {
        let values = DenseMatrix::from_vec(steps, 1, (0..steps).map(f).collect()).unwrap();
        SpeedSeries::dense(
            vec!["a".into()],
            (0..steps as i64).map(|t| t * 300).collect(),
            values,
        )
        .unwrap()
    }

    #[test]
    fn historical_average_of_four_prior_slots() {
        let period = 3;
        let s = weekly_series(15, |t| {
            if t % period == 0 {
                (t / period + 1) as f64
            } else {
                9.0
            }
        });
        let (pred, mask) = historical_average(&s, 12..13, period, 4);
        assert!(mask[0]);
        assert_eq!(pred.get(0, 0), 2.5);
    }

    #[test]
    fn historical_average_is_exact_on_periodic_series() {
        let s = weekly_series(5 * WEEK_STEPS, |t| 50.0 + (t % WEEK_STEPS) as f64 / 100.0);
        let range = 4 * WEEK_STEPS..5 * WEEK_STEPS;
        let (pred, mask) = historical_average(&s, range.clone(), WEEK_STEPS, 4);
        let truth: Vec<f64> = range.map(|t| s.values.get(t, 0)).collect();
        let mae = masked_mae(&MaskedPair::new(&truth, pred.as_slice(), &mask).unwrap()).unwrap();
        assert_eq!(mae, 0.0);
    }

    #[test]
    fn historical_average_without_history_is_masked() {
        let s = weekly_series(10, |_| 4.0);
        let (pred, mask) = historical_average(&s, 0..10, 5, 4);
        assert!(!mask[..5].iter().any(|&m| m));
        assert!(mask[5..].iter().all(|&m| m));
        assert!(pred.as_slice()[5..].iter().all(|&v| v == 4.0));
    }

    #[test]
    fn historical_average_skips_missing_slots() {
        let values = DenseMatrix::from_vec(9, 1, vec![1.0, 0.0, 0.0, 3.0, 0.0, 0.0, 8.0, 0.0, 0.0]).unwrap();
        let mut mask = vec![true; 9];
        mask[3] = false;
        let s = SpeedSeries::new(vec!["a".into()], (0..9).map(|t| t * 300).collect(), values, mask).unwrap();
        let (pred, m) = historical_average(&s, 6..7, 3, 4);
        assert!(m[0]);
        assert_eq!(pred.get(0, 0), 1.0);
    }

    #[test]
    fn report_layout() {
        let rows = [HorizonMetrics {
            horizon: 3,
            mae: 2.0,
            rmse: 3.0,
            mape: 0.05,
        }];
        let mut buf = Vec::new();
        write_report(&mut buf, &rows, 5).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "horizon_minutes,metric,value\n15,MAE,2.0000\n15,RMSE,3.0000\n15,MAPE,5.0000%\n"
        );
    }
}
