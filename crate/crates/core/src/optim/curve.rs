use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub elapsed_seconds: f64,
    pub loss: f64,
}

/// Loss against iteration and cumulative training time.
///
/// Row 0 is the initial head, before any update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

impl TrainingCurve {
    pub fn push(&mut self, iteration: usize, elapsed_seconds: f64, loss: f64) {
        debug_assert!(self.points.last().is_none_or(|p| p.iteration < iteration));
        self.points.push(CurvePoint {
            iteration,
            elapsed_seconds,
            loss,
        });
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.loss)
    }

    /// First point whose loss is at or below `target`.
    pub fn first_reaching(&self, target: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.loss <= target)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if w[1].iteration <= w[0].iteration {
                return Err(Error::Validation(format!(
                    "curve iterations not increasing at {} -> {}",
                    w[0].iteration, w[1].iteration
                )));
            }
            if w[1].elapsed_seconds < w[0].elapsed_seconds {
                return Err(Error::Validation(format!(
                    "curve time decreases at iteration {}",
                    w[1].iteration
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for p in &self.points {
            out.serialize(p).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.iter().collect::<Vec<_>>() != ["iteration", "elapsed_seconds", "loss"] {
            return Err(Error::Validation(format!(
                "curve CSV header must be iteration,elapsed_seconds,loss; got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut curve = TrainingCurve::default();
        for row in rdr.deserialize() {
            curve.points.push(row.map_err(csv_err)?);
        }
        curve.validate()?;
        Ok(curve)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("curve CSV: {e}"))
}
