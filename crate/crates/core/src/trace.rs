//! Chain traces and their on-disk formats.
//!
//! CSV: one row per record point with columns `t,eta,sync,theta_norm`
//! followed by one `metric_<name>` column per attached metric. `t` counts
//! completed iterations; `eta` and `sync` describe the iteration that produced
//! the row.
//!
//! Binary sidecar: an 8-byte little-endian `u64` giving `d`, then the recorded
//! `θ_t` rows as little-endian `f64`, row-major.

use std::io::{self, Read, Write};

use crate::vector;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainTrace {
    dim: usize,
    record_t: Vec<usize>,
    params: Vec<f64>,
    eta_used: Vec<f64>,
    synced: Vec<bool>,
    sync_events: Vec<usize>,
    metrics: Vec<(String, Vec<f64>)>,
    gradient_evals: u64,
}

impl ChainTrace {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Logs iteration `eta_used.len()`.
    pub fn push_iteration(&mut self, eta: f64, synced: bool) {
        if synced {
            self.sync_events.push(self.eta_used.len());
        }
        self.eta_used.push(eta);
        self.synced.push(synced);
    }

    pub fn record(&mut self, t: usize, theta: &[f64]) {
        debug_assert_eq!(theta.len(), self.dim);
        self.record_t.push(t);
        self.params.extend_from_slice(theta);
    }

    pub fn add_gradient_evals(&mut self, n: u64) {
        self.gradient_evals += n;
    }

    /// Number of records.
    pub fn len(&self) -> usize {
        self.record_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_t.is_empty()
    }

    pub fn iterations(&self) -> usize {
        self.eta_used.len()
    }

    pub fn record_iterations(&self) -> &[usize] {
        &self.record_t
    }

    pub fn param(&self, i: usize) -> &[f64] {
        &self.params[i * self.dim..(i + 1) * self.dim]
    }

    pub fn params(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.params.chunks_exact(self.dim.max(1))
    }

    /// Row-major `records × d` matrix of the recorded global parameters.
    pub fn params_flat(&self) -> &[f64] {
        &self.params
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.len().checked_sub(1).map(|i| self.param(i))
    }

    pub fn eta_used(&self) -> &[f64] {
        &self.eta_used
    }

    pub fn sync_events(&self) -> &[usize] {
        &self.sync_events
    }

    pub fn gradient_evals(&self) -> u64 {
        self.gradient_evals
    }

    pub fn metrics(&self) -> &[(String, Vec<f64>)] {
        &self.metrics
    }

    /// Attaches a metric column; `values` must have one entry per record.
    pub fn add_metric(&mut self, name: impl Into<String>, values: Vec<f64>) {
        assert_eq!(
            values.len(),
            self.len(),
            "metric needs one value per record"
        );
        self.metrics.push((name.into(), values));
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t,eta,sync,theta_norm")?;
        for (name, _) in &self.metrics {
            write!(w, ",metric_{name}")?;
        }
        writeln!(w)?;
        for (i, &t) in self.record_t.iter().enumerate() {
            let it = t.saturating_sub(1);
            let eta = self.eta_used.get(it).copied().unwrap_or(f64::NAN);
            let sync = self.synced.get(it).copied().unwrap_or(false);
            write!(
                w,
                "{t},{eta},{},{}",
                u8::from(sync),
                vector::norm(self.param(i))
            )?;
            for (_, values) in &self.metrics {
                write!(w, ",{}", values[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }

    pub fn write_sidecar<W: Write>(&self, w: W) -> io::Result<()> {
        write_sidecar(w, self.dim, &self.params)
    }
}

/// Writes a sidecar file holding row-major `rows × dim` values.
pub fn write_sidecar<W: Write>(mut w: W, dim: usize, rows: &[f64]) -> io::Result<()> {
    w.write_all(&(dim as u64).to_le_bytes())?;
    for x in rows {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a sidecar file, returning `(dim, row-major values)`.
pub fn read_sidecar<R: Read>(mut r: R) -> io::Result<(usize, Vec<f64>)> {
    let mut header = [0u8; 8];
    r.read_exact(&mut header)?;
    let dim = u64::from_le_bytes(header) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if dim == 0 || bytes.len() % 8 != 0 || (bytes.len() / 8) % dim != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!(
                "sidecar payload of {} bytes does not hold rows of dimension {dim}",
                bytes.len()
            ),
        ));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((dim, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace() -> ChainTrace {
        let mut tr = ChainTrace::new(2);
        for t in 0..4 {
            tr.push_iteration(0.1, t % 2 == 0);
            tr.record(t + 1, &[t as f64, -1.0]);
        }
        tr.add_metric("w2", vec![4.0, 3.0, 2.0, 1.0]);
        tr
    }

    #[test]
    fn csv_layout() {
        let csv = sample_trace().to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,eta,sync,theta_norm,metric_w2");
        assert_eq!(lines[1], "1,0.1,1,1,4");
        assert_eq!(lines[2], "2,0.1,0,1.4142135623730951,3");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn sidecar_layout_and_roundtrip() {
        let tr = sample_trace();
        let mut buf = Vec::new();
        tr.write_sidecar(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 * 8);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        assert_eq!(&buf[8..16], &0.0f64.to_le_bytes());
        let (dim, values) = read_sidecar(buf.as_slice()).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(values, tr.params_flat());
        assert!(read_sidecar(&buf[..20]).is_err());
    }

    #[test]
    fn sync_events_follow_flags() {
        assert_eq!(sample_trace().sync_events(), &[0, 2]);
    }
}
