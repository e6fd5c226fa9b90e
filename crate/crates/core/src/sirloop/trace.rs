use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One outer iteration of a reconstruction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IterRecord {
    pub k: usize,
    pub t1: usize,
    pub t2: usize,
    /// Cumulative, including initialization.
    pub nfe: u64,
    /// Reconstruction loss at the last inner step.
    pub loss: f64,
    pub psnr: Option<f64>,
    pub mse: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InitRecord {
    pub nfe: u64,
    pub steps: usize,
    pub loss: Option<f64>,
    pub psnr: Option<f64>,
    pub mse: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunTrace {
    pub init: InitRecord,
    pub records: Vec<IterRecord>,
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunSummary {
    pub iterations: usize,
    pub total_nfe: u64,
    pub init_nfe: u64,
    pub init_psnr: Option<f64>,
    pub psnr: Option<f64>,
    pub mse: Option<f64>,
    pub final_loss: Option<f64>,
    pub mean_iteration_ms: f64,
    pub total_ms: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunTrace {
    pub fn total_nfe(&self) -> u64 {
        self.records.last().map_or(self.init.nfe, |r| r.nfe)
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.records.last().map_or(self.init.psnr, |r| r.psnr)
    }

    pub fn final_mse(&self) -> Option<f64> {
        self.records.last().map_or(self.init.mse, |r| r.mse)
    }

    pub fn mean_iteration_ms(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.wall_ms).sum::<f64>() / self.records.len() as f64
    }

    /// One row per outer iteration. Wall time is left out unless asked for
    /// so that reruns with the same seed produce identical files.
    pub fn to_csv(&self, with_wall_time: bool) -> String {
        let mut out = String::from("k,t1,t2,nfe,loss,psnr");
        out.push_str(if with_wall_time { ",wall_ms\n" } else { "\n" });
        for r in &self.records {
            let _ = write!(out, "{},{},{},{},{},{}", r.k, r.t1, r.t2, r.nfe, r.loss, opt(r.psnr));
            if with_wall_time {
                let _ = write!(out, ",{:.3}", r.wall_ms);
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            iterations: self.records.len(),
            total_nfe: self.total_nfe(),
            init_nfe: self.init.nfe,
            init_psnr: self.init.psnr,
            psnr: self.final_psnr(),
            mse: self.final_mse(),
            final_loss: self.records.last().map(|r| r.loss).or(self.init.loss),
            mean_iteration_ms: self.mean_iteration_ms(),
            total_ms: self.init.wall_ms + self.records.iter().map(|r| r.wall_ms).sum::<f64>(),
        }
    }
}

/// Per-update wall time of the score-distillation loop by phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PhaseTimes {
    pub render_ms: f64,
    pub eps_ms: f64,
    pub backprop_ms: f64,
    pub codec_ms: f64,
    pub optim_ms: f64,
    pub total_ms: f64,
}

impl PhaseTimes {
    pub fn phase_sum(&self) -> f64 {
        self.render_ms + self.eps_ms + self.backprop_ms + self.codec_ms + self.optim_ms
    }

    pub fn add(&mut self, o: &PhaseTimes) {
        self.render_ms += o.render_ms;
        self.eps_ms += o.eps_ms;
        self.backprop_ms += o.backprop_ms;
        self.codec_ms += o.codec_ms;
        self.optim_ms += o.optim_ms;
        self.total_ms += o.total_ms;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SdsRecord {
    pub update: usize,
    pub t: usize,
    pub nfe: u64,
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub times: PhaseTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SdsTrace {
    pub records: Vec<SdsRecord>,
    /// NFE count at the first evaluation meeting the target, if any.
    pub reached_at_nfe: Option<u64>,
}

impl SdsTrace {
    pub fn total_nfe(&self) -> u64 {
        self.records.last().map_or(0, |r| r.nfe)
    }

    pub fn final_mse(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.mse)
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.psnr)
    }

    pub fn totals(&self) -> PhaseTimes {
        let mut t = PhaseTimes::default();
        for r in &self.records {
            t.add(&r.times);
        }
        t
    }

    /// Deterministic per-update metrics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("update,t,nfe,mse,psnr\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.update, r.t, r.nfe, opt(r.mse), opt(r.psnr));
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("update,nfe,render_ms,eps_ms,backprop_ms,codec_ms,optim_ms,total_ms\n");
        for r in &self.records {
            let t = &r.times;
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.update, r.nfe, t.render_ms, t.eps_ms, t.backprop_ms, t.codec_ms, t.optim_ms, t.total_ms
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(k: usize, nfe: u64) -> IterRecord {
        IterRecord {
            k,
            t1: 300,
            t2: 500,
            nfe,
            loss: 0.25,
            psnr: Some(20.5),
            mse: Some(0.01),
            wall_ms: 3.0,
        }
    }

    #[test]
    fn csv_rows() {
        let trace = RunTrace {
            init: InitRecord {
                nfe: 10,
                steps: 2,
                loss: None,
                psnr: None,
                mse: None,
                wall_ms: 1.0,
            },
            records: vec![rec(0, 20), rec(1, 30)],
        };
        let csv = trace.to_csv(false);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().nth(1).unwrap(), "0,300,500,20,0.25,20.5");
        assert!(trace.to_csv(true).lines().nth(2).unwrap().ends_with(",3.000"));
        let s = trace.summary();
        assert_eq!(s.total_nfe, 30);
        assert_eq!(s.total_ms, 7.0);
    }
}
