use std::io::Write;

use super::{EpochRecord, StepRecord, Trainer};
use crate::error::{Error, Result};

/// Receives progress from [`Trainer::fit`].
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _record: &EpochRecord, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Streams `step,epoch,loss_1..loss_K,mean,variance,total` rows. Floats are
/// written in shortest round-trip form, so equal runs give equal bytes.
pub struct LossCsv<W: Write> {
    out: W,
    k: usize,
    header_written: bool,
}

impl<W: Write> LossCsv<W> {
    pub fn new(out: W, k: usize) -> Self {
        Self {
            out,
            k,
            header_written: false,
        }
    }

    /// Appends rows to an existing log without a second header.
    pub fn resume(out: W, k: usize) -> Self {
        Self {
            out,
            k,
            header_written: true,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn io(e: std::io::Error) -> Error {
        Error::io("loss log", e)
    }

    pub fn write(&mut self, r: &StepRecord) -> Result<()> {
        if !self.header_written {
            let mut h = String::from("step,epoch");
            for k in 1..=self.k {
                h.push_str(&format!(",loss_{k}"));
            }
            h.push_str(",mean,variance,total\n");
            self.out.write_all(h.as_bytes()).map_err(Self::io)?;
            self.header_written = true;
        }
        let mut row = format!("{},{}", r.step, r.epoch);
        for l in &r.losses.per_env {
            row.push_str(&format!(",{l}"));
        }
        row.push_str(&format!(
            ",{},{},{}\n",
            r.losses.mean, r.losses.variance, r.losses.total
        ));
        self.out.write_all(row.as_bytes()).map_err(Self::io)
    }
}

impl<W: Write> TrainObserver for LossCsv<W> {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        self.write(record)
    }

    fn on_epoch(&mut self, _record: &EpochRecord, _trainer: &Trainer) -> Result<()> {
        self.out.flush().map_err(Self::io)
    }
}
