//! Uniformly sampled multichannel series and their CSV form.
//!
//! The CSV layout is a mandatory header `t,<channel>...` followed by one row
//! per sample. Floats are written with Rust's shortest round-trip formatting,
//! so reading a written file reproduces every value bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{invalid, Result};

/// Relative tolerance used when checking that a CSV time column is uniform.
const UNIFORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub t0: f64,
    pub dt: f64,
    /// `T x H`, one column per channel.
    pub values: Array2<f64>,
    pub channel_names: Vec<String>,
}

impl TimeSeries {
    pub fn new(t0: f64, dt: f64, values: Array2<f64>, channel_names: Vec<String>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid(format!("dt must be positive and finite, got {dt}"));
        }
        if !t0.is_finite() {
            return invalid("t0 must be finite");
        }
        if values.nrows() < 2 {
            return invalid(format!("a series needs at least 2 samples, got {}", values.nrows()));
        }
        if values.ncols() != channel_names.len() {
            return invalid(format!("{} channel names for {} columns", channel_names.len(), values.ncols()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("series contains non-finite values");
        }
        Ok(Self { t0, dt, values, channel_names })
    }

    pub fn from_rows(t0: f64, dt: f64, channel_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let h = channel_names.len();
        if rows.iter().any(|r| r.len() != h) {
            return invalid(format!("every row must have {h} values"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values =
            Array2::from_shape_vec((rows.len(), h), flat).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
        Self::new(t0, dt, values, channel_names)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.dt
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        match self.channel_names.iter().position(|c| c == name) {
            Some(i) => Ok(i),
            None => invalid(format!("unknown channel `{name}`; available: {}", self.channel_names.join(", "))),
        }
    }

    pub fn channel(&self, index: usize) -> ArrayView1<'_, f64> {
        self.values.column(index)
    }

    /// The first `len` samples.
    pub fn head(&self, len: usize) -> Result<Self> {
        if len < 2 || len > self.len() {
            return invalid(format!("cannot take {len} samples of a {}-sample series", self.len()));
        }
        Ok(Self {
            t0: self.t0,
            dt: self.dt,
            values: self.values.slice(ndarray::s![..len, ..]).to_owned(),
            channel_names: self.channel_names.clone(),
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(self.channel_names.iter().cloned());
        w.write_record(&header)?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            let mut rec = Vec::with_capacity(row.len() + 1);
            rec.push(self.time(i).to_string());
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 2 || &header[0] != "t" {
            return invalid("CSV header must start with `t` followed by at least one channel");
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut times = Vec::new();
        let mut flat = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return invalid(format!("row {} has {} fields, expected {}", line + 1, rec.len(), header.len()));
            }
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| crate::Error::InvalidArgument(format!("row {}: cannot parse `{field}`", line + 1)))?;
                if k == 0 {
                    times.push(v);
                } else {
                    flat.push(v);
                }
            }
        }
        if times.len() < 2 {
            return invalid("CSV must contain at least 2 samples");
        }
        let t0 = times[0];
        let n = times.len();
        let dt = (times[n - 1] - t0) / (n - 1) as f64;
        if dt.is_nan() || dt <= 0.0 {
            return invalid("time column must be increasing");
        }
        for (i, w) in times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if ((step - dt) / dt).abs() > UNIFORM_TOL {
                return invalid(format!("time column is not uniformly spaced at row {}", i + 2));
            }
        }
        let values =
            Array2::from_shape_vec((n, names.len()), flat).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
        Self::new(t0, dt, values, names)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TimeSeries {
        TimeSeries::from_rows(
            0.0,
            0.5,
            vec!["x".into(), "y".into()],
            &[vec![1.0, 2.0], vec![0.1 + 0.2, -3.5e-12], vec![1e300, 7.0]],
        )
        .unwrap()
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x,y"));
        assert_eq!(lines.next(), Some("0,1,2"));
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TimeSeries::read_csv("x,y\n1,2\n2,3\n".as_bytes()).is_err());
        assert!(TimeSeries::read_csv("t,y\n0,2\n".as_bytes()).is_err());
        assert!(TimeSeries::read_csv("t,y\n0,2\n1,3\n5,4\n".as_bytes()).is_err());
        assert!(TimeSeries::read_csv("t,y\n0,2\n1,abc\n".as_bytes()).is_err());
        assert!(TimeSeries::read_csv("t,y\n0,2\n1,NaN\n".as_bytes()).is_err());
    }

    #[test]
    fn channel_lookup() {
        let ts = sample();
        assert_eq!(ts.channel_index("y").unwrap(), 1);
        assert!(ts.channel_index("z").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bitwise(
            values in proptest::collection::vec(-1e12f64..1e12, 2..40),
            dt in 1e-4f64..10.0,
        ) {
            let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v, v.sin()]).collect();
            let ts = TimeSeries::from_rows(0.0, dt, vec!["a".into(), "b".into()], &rows).unwrap();
            let mut buf = Vec::new();
            ts.write_csv(&mut buf).unwrap();
            let back = TimeSeries::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(&back.values, &ts.values);
            prop_assert!(((back.dt - dt) / dt).abs() < 1e-12);
        }
    }
}
