//! Trajectory and table files.

use std::io::{self, Read, Write};

use proxstep_core::analysis::ConvergenceTable;
use proxstep_core::scheme::{StepRecord, Trajectory};

/// Enough digits to read every `f64` back exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trajectory_header(dim: usize, constraints: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..dim).map(|k| format!("q{k}")));
    h.extend((0..dim).map(|k| format!("u{k}")));
    h.extend((0..constraints).map(|k| format!("lambda{k}")));
    h.push("active_count".into());
    h.push("kkt_residual".into());
    h
}

/// Streams records as CSV rows; the header is written on creation.
pub struct TrajectoryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W, dim: usize, constraints: usize) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(trajectory_header(dim, constraints))?;
        Ok(TrajectoryWriter { inner })
    }

    pub fn write(&mut self, rec: &StepRecord) -> csv::Result<()> {
        let mut row = Vec::with_capacity(2 * rec.q.len() + rec.lambda.len() + 3);
        row.push(fmt_f64(rec.t));
        row.extend(
            rec.q
                .iter()
                .chain(&rec.u)
                .chain(&rec.lambda)
                .map(|x| fmt_f64(*x)),
        );
        row.push(rec.active.len().to_string());
        row.push(fmt_f64(rec.kkt_residual));
        self.inner.write_record(row)
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory) -> csv::Result<()> {
    let first = &traj.records[0];
    let mut w = TrajectoryWriter::new(out, first.q.len(), first.lambda.len())?;
    for r in &traj.records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

/// Header and numeric rows of a trajectory CSV.
pub fn read_csv<R: Read>(input: R) -> csv::Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| csv::Error::from(io::Error::new(io::ErrorKind::InvalidData, e)))
            })
            .collect::<csv::Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_convergence<W: Write>(out: W, table: &ConvergenceTable) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h", "dq_inf", "du_l1", "rate"])?;
    for r in &table.rows {
        w.write_record([
            fmt_f64(r.h),
            fmt_f64(r.dq_inf),
            fmt_f64(r.du_l1),
            r.rate.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02214076e23,
            f64::MIN_POSITIVE,
            0.0,
        ] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
