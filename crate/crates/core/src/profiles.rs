//! Minute-resolution time-series store: one CSV column per profile, one row
//! per minute, header row of profile names, values in kW (or kvar for
//! reactive profiles).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::powerflow::OperatingPoint;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileLibrary {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    columns: Vec<Vec<f64>>,
}

impl ProfileLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if let Some(first) = self.columns.first() {
            if first.len() != values.len() {
                return Err(Error::Data(format!(
                    "profile `{name}` has {} rows, expected {}",
                    values.len(),
                    first.len()
                )));
            }
        }
        if self.index.contains_key(&name) {
            return Err(Error::Data(format!("duplicate profile `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn minutes(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.columns[i].as_slice())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); names.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(Error::Data(format!("profile row {row} has {} fields", rec.len())));
            }
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("profile `{}` row {row}: `{field}` is not a number", names[c])))?;
                if !v.is_finite() {
                    return Err(Error::Data(format!("profile `{}` row {row} is not finite", names[c])));
                }
                columns[c].push(v);
            }
        }
        let mut lib = ProfileLibrary::new();
        for (n, col) in names.into_iter().zip(columns) {
            lib.insert(n, col)?;
        }
        Ok(lib)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for m in 0..self.minutes() {
            w.write_record(self.columns.iter().map(|c| format!("{:.4}", c[m])))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Checks that every profile referenced by the feeder is present.
    pub fn check_feeder(&self, feeder: &FeederModel) -> Result<()> {
        let refs = feeder
            .loads()
            .iter()
            .flat_map(|l| [l.profile.as_deref(), l.kvar_profile.as_deref()])
            .chain(feeder.pv().iter().map(|p| p.profile.as_deref()))
            .flatten();
        for r in refs {
            if !self.index.contains_key(r) {
                return Err(Error::DanglingReference {
                    kind: "profile",
                    id: r.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Operating point at `minute`. Loads without a profile sit at their
    /// nominal demand; PV without a profile is dark. Reactive setpoints are zero.
    pub fn operating_point(&self, feeder: &FeederModel, minute: usize) -> OperatingPoint {
        let at = |name: &Option<String>| name.as_deref().and_then(|n| self.get(n)).map(|c| c[minute]);
        let load_kw: Vec<f64> = feeder
            .loads()
            .iter()
            .map(|l| at(&l.profile).unwrap_or(l.peak_kw))
            .collect();
        let load_kvar = feeder
            .loads()
            .iter()
            .zip(&load_kw)
            .map(|(l, &kw)| at(&l.kvar_profile).unwrap_or_else(|| l.kvar_for(kw)))
            .collect();
        let pv_kw = feeder
            .pv()
            .iter()
            .map(|p| at(&p.profile).unwrap_or(0.0).max(0.0))
            .collect();
        OperatingPoint {
            load_kw,
            load_kvar,
            pv_kw,
            pv_kvar: vec![0.0; feeder.pv().len()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut lib = ProfileLibrary::new();
        lib.insert("load1", vec![1.0, 2.5, 3.25]).unwrap();
        lib.insert("pv1", vec![0.0, 0.5, 0.0]).unwrap();
        let mut buf = Vec::new();
        lib.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("load1,pv1\n"));
        let back = ProfileLibrary::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, lib);
    }

    #[test]
    fn ragged_and_non_numeric_rows_are_rejected() {
        assert!(ProfileLibrary::read_csv("a,b\n1,2\n3\n".as_bytes()).is_err());
        assert!(ProfileLibrary::read_csv("a\nx\n".as_bytes()).is_err());
        let mut lib = ProfileLibrary::new();
        lib.insert("a", vec![1.0]).unwrap();
        assert!(lib.insert("b", vec![1.0, 2.0]).is_err());
        assert!(lib.insert("a", vec![1.0]).is_err());
    }
}
