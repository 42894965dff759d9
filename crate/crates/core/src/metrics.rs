//! Masked point-forecast metrics.

use crate::error::{Error, Result};
use ndarray::{ArrayView, Dimension, Zip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Mae,
    Rmse,
    Mape,
    /// `mean |(ŷ − y) / (ŷ + y)|`, without the usual factor 2.
    Smape,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mae, Metric::Rmse, Metric::Mape, Metric::Smape];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::Mape => "mape",
            Metric::Smape => "smape",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Unknown { what: "metric", name: s.into() })
    }

    pub fn compute<D: Dimension>(
        self,
        pred: ArrayView<f64, D>,
        target: ArrayView<f64, D>,
        mask: ArrayView<bool, D>,
    ) -> Result<f64> {
        if pred.shape() != target.shape() || pred.shape() != mask.shape() {
            return Err(Error::Shape(format!(
                "metric inputs {:?}, {:?}, {:?}",
                pred.shape(),
                target.shape(),
                mask.shape()
            )));
        }
        let mut total = 0.0;
        let mut count = 0usize;
        let mut bad = None;
        Zip::from(&pred).and(&target).and(&mask).for_each(|&p, &y, &m| {
            if !m {
                return;
            }
            let e = p - y;
            let term = match self {
                Metric::Mae => e.abs(),
                Metric::Rmse => e * e,
                Metric::Mape => {
                    if y == 0.0 {
                        bad.get_or_insert("observed target is zero");
                    }
                    (e / y).abs()
                }
                Metric::Smape => {
                    if p + y == 0.0 {
                        bad.get_or_insert("prediction plus target is zero");
                    }
                    (e / (p + y)).abs()
                }
            };
            total += term;
            count += 1;
        });
        if let Some(reason) = bad {
            return Err(Error::MetricDomain(format!("{}: {reason}", self.as_str())));
        }
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let mean = total / count as f64;
        Ok(if self == Metric::Rmse { mean.sqrt() } else { mean })
    }
}

pub fn mae<D: Dimension>(pred: ArrayView<f64, D>, target: ArrayView<f64, D>, mask: ArrayView<bool, D>) -> Result<f64> {
    Metric::Mae.compute(pred, target, mask)
}

pub fn rmse<D: Dimension>(pred: ArrayView<f64, D>, target: ArrayView<f64, D>, mask: ArrayView<bool, D>) -> Result<f64> {
    Metric::Rmse.compute(pred, target, mask)
}

pub fn mape<D: Dimension>(pred: ArrayView<f64, D>, target: ArrayView<f64, D>, mask: ArrayView<bool, D>) -> Result<f64> {
    Metric::Mape.compute(pred, target, mask)
}

pub fn smape<D: Dimension>(pred: ArrayView<f64, D>, target: ArrayView<f64, D>, mask: ArrayView<bool, D>) -> Result<f64> {
    Metric::Smape.compute(pred, target, mask)
}
