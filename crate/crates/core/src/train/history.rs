use crate::error::{Error, Result};

/// Per-iteration loss values with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistory {
    columns: Vec<String>,
    rows: Vec<(usize, Vec<f64>)>,
}

impl LossHistory {
    pub fn new(columns: Vec<String>) -> Self {
        LossHistory {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[(usize, Vec<f64>)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, step: usize, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::Invalid(format!(
                "history row has {} values for {} columns",
                values.len(),
                self.columns.len()
            )));
        }
        self.rows.push((step, values));
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|(_, r)| r[i]).collect())
    }

    /// Mean of a column over rows `range`.
    pub fn mean(&self, name: &str, range: std::ops::Range<usize>) -> Option<f64> {
        let col = self.column(name)?;
        let slice = col.get(range)?;
        (!slice.is_empty()).then(|| slice.iter().sum::<f64>() / slice.len() as f64)
    }

    /// `step,<columns...>` header, then one row per iteration. Values use
    /// the shortest decimal form that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        self.to_csv_rows(self.rows.len())
    }

    pub fn to_csv_rows(&self, n: usize) -> String {
        let mut s = format!("step,{}\n", self.columns.join(","));
        for (step, values) in self.rows.iter().take(n) {
            s.push_str(&step.to_string());
            for v in values {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }

    pub(crate) fn describe_last(&self) -> String {
        match self.rows.last() {
            None => String::new(),
            Some((_, v)) => self
                .columns
                .iter()
                .zip(v)
                .map(|(c, x)| format!("{c}={x:.4}"))
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}
