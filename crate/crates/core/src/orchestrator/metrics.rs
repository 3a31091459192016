use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed CSV header, one column per [`MetricsRow`] field except wall-clock time.
pub const METRICS_HEADER: &[&str] = &[
    "epoch",
    "env_steps",
    "eval_return_mean",
    "eval_return_std",
    "train_return",
    "k_b",
    "k_f",
    "gan_alpha",
    "forward_model_loss",
    "backward_model_loss",
    "backward_policy_loss",
    "gan_d_loss",
    "gan_g_loss",
    "gan_value",
    "gan_d_fake",
    "n_hs_b",
    "n_hs_f",
    "n_backward",
    "n_forward",
    "non_finite",
    "imitation_loss",
    "actor_loss",
    "q1_loss",
    "q2_loss",
    "v_loss",
    "alpha",
    "entropy",
    "forward_mse",
    "backward_mse",
    "policy_mse",
];

/// One evaluation point. Optional fields are empty in the CSV when their stage did not run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub env_steps: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    /// Mean undiscounted return of training episodes finished this epoch.
    pub train_return: Option<f64>,
    pub k_b: usize,
    pub k_f: usize,
    pub gan_alpha: f64,
    pub forward_model_loss: Option<f64>,
    pub backward_model_loss: Option<f64>,
    pub backward_policy_loss: Option<f64>,
    pub gan_d_loss: Option<f64>,
    pub gan_g_loss: Option<f64>,
    pub gan_value: Option<f64>,
    pub gan_d_fake: Option<f64>,
    pub n_hs_b: usize,
    pub n_hs_f: usize,
    pub n_backward: usize,
    pub n_forward: usize,
    pub non_finite: usize,
    pub imitation_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub q1_loss: Option<f64>,
    pub q2_loss: Option<f64>,
    pub v_loss: Option<f64>,
    pub alpha: f64,
    pub entropy: Option<f64>,
    pub forward_mse: Option<f64>,
    pub backward_mse: Option<f64>,
    pub policy_mse: Option<f64>,
    /// Seconds spent in the epoch; logged, never written to the CSV.
    #[serde(skip)]
    pub wall_clock: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.env_steps.to_string(),
            self.eval_return_mean.to_string(),
            self.eval_return_std.to_string(),
            opt(self.train_return),
            self.k_b.to_string(),
            self.k_f.to_string(),
            self.gan_alpha.to_string(),
            opt(self.forward_model_loss),
            opt(self.backward_model_loss),
            opt(self.backward_policy_loss),
            opt(self.gan_d_loss),
            opt(self.gan_g_loss),
            opt(self.gan_value),
            opt(self.gan_d_fake),
            self.n_hs_b.to_string(),
            self.n_hs_f.to_string(),
            self.n_backward.to_string(),
            self.n_forward.to_string(),
            self.non_finite.to_string(),
            opt(self.imitation_loss),
            opt(self.actor_loss),
            opt(self.q1_loss),
            opt(self.q2_loss),
            opt(self.v_loss),
            self.alpha.to_string(),
            opt(self.entropy),
            opt(self.forward_mse),
            opt(self.backward_mse),
            opt(self.policy_mse),
        ]
    }

    pub fn csv_line(&self) -> String {
        self.cells().join(",")
    }
}

pub fn header_line() -> String {
    METRICS_HEADER.join(",")
}

/// Append-only CSV writer; the header is written when the file is created.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Start a fresh file containing the header and `rows`.
    pub fn create(path: &Path, rows: &[MetricsRow]) -> Result<Self> {
        let mut w = Self {
            out: BufWriter::new(File::create(path)?),
        };
        writeln!(w.out, "{}", header_line())?;
        for r in rows {
            w.append(r)?;
        }
        Ok(w)
    }

    /// Continue an existing file whose header matches.
    pub fn open_append(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.lines().next() != Some(header_line().as_str()) {
            return Err(Error::State(format!("{} does not start with the metrics header", path.display())));
        }
        Ok(Self {
            out: BufWriter::new(OpenOptions::new().append(true).open(path)?),
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.csv_line())?;
        self.out.flush()?;
        Ok(())
    }
}

/// Env steps at the first evaluation whose mean return reaches `threshold`.
pub fn steps_to_threshold(rows: &[MetricsRow], threshold: f64) -> Option<u64> {
    rows.iter().find(|r| r.eval_return_mean >= threshold).map(|r| r.env_steps)
}

/// One named column of a metrics CSV; empty cells become `None`.
pub fn read_column(text: &str, column: &str) -> Result<Vec<Option<f64>>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Input("empty metrics file".into()))?;
    let idx = header
        .split(',')
        .position(|c| c == column)
        .ok_or_else(|| Error::Input(format!("no column '{column}' in metrics header")))?;
    lines
        .map(|l| {
            let cell = l.split(',').nth(idx).unwrap_or("");
            if cell.is_empty() {
                Ok(None)
            } else {
                cell.parse()
                    .map(Some)
                    .map_err(|_| Error::Input(format!("bad '{column}' cell '{cell}'")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_matches_header_width() {
        assert_eq!(MetricsRow::default().cells().len(), METRICS_HEADER.len());
    }

    #[test]
    fn read_back_column() {
        let r = MetricsRow {
            epoch: 2,
            env_steps: 400,
            eval_return_mean: -150.5,
            ..Default::default()
        };
        let text = format!("{}\n{}\n", header_line(), r.csv_line());
        assert_eq!(read_column(&text, "eval_return_mean").unwrap(), vec![Some(-150.5)]);
        assert_eq!(read_column(&text, "policy_mse").unwrap(), vec![None]);
        assert!(read_column(&text, "nope").is_err());
    }
}
