use std::fmt::Write as _;

/// Uniformly sampled channels. `rows[k][c]` is channel `c` at `time[k]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeriesRecord {
    pub names: Vec<String>,
    pub time: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("record is empty")]
    Empty,
    #[error("header must start with \"time\"")]
    Header,
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
}

impl TimeSeriesRecord {
    pub fn new(names: Vec<String>) -> Self {
        TimeSeriesRecord {
            names,
            time: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.names.len());
        self.time.push(t);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn channel(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.index(name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    /// Value of `name` at the last sample not later than `t`.
    pub fn at(&self, name: &str, t: f64) -> Option<f64> {
        let c = self.index(name)?;
        let k = self.time.partition_point(|x| *x <= t + 1e-9);
        if k == 0 {
            return None;
        }
        Some(self.rows[k - 1][c])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(16 * (self.names.len() + 1) * (self.len() + 1));
        out.push_str("time");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (t, row) in self.time.iter().zip(&self.rows) {
            out.push_str(&format_g9(*t));
            for v in row {
                out.push(',');
                out.push_str(&format_g9(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, RecordError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(RecordError::Empty)?;
        let mut cols = header.split(',');
        if cols.next().map(str::trim) != Some("time") {
            return Err(RecordError::Header);
        }
        let mut rec = TimeSeriesRecord::new(cols.map(|c| c.trim().to_string()).collect());
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Result<Vec<f64>, _> =
                line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| RecordError::Row {
                line: i + 2,
                reason: e.to_string(),
            })?;
            if vals.len() != rec.names.len() + 1 {
                return Err(RecordError::Row {
                    line: i + 2,
                    reason: format!(
                        "expected {} fields, found {}",
                        rec.names.len() + 1,
                        vals.len()
                    ),
                });
            }
            rec.push(vals[0], vals[1..].to_vec());
        }
        Ok(rec)
    }
}

/// Formats like C's `%.9g`: nine significant digits, trailing zeros
/// removed, exponent form outside `1e-4 ≤ |x| < 1e9`.
pub fn format_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..9).contains(&exp) {
        let m = strip_zeros(mantissa);
        let mut s = String::new();
        let _ = write!(s, "{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
        s
    } else {
        let decimals = (8 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
