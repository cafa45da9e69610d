//! Labelled point sets and their on-disk formats.
//!
//! Two formats are supported:
//!
//! - CSV: `d` feature columns followed by one integer label column. A header
//!   row is optional and detected by failing to parse the first record as
//!   numbers.
//! - Binary (little-endian): `u32 n, u32 d, u32 num_classes`, then `n * d`
//!   `f64` features row-major, then `n` `u32` labels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2, Axis};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `n` labelled points in `d` dimensions with labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(points: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::domain("num_classes must be positive"));
        }
        if points.nrows() != labels.len() {
            return Err(Error::domain(format!(
                "{} rows but {} labels",
                points.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::domain(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite feature value"));
        }
        // Row slices are handed out throughout the crate.
        let points = if points.is_standard_layout() {
            points
        } else {
            points.as_standard_layout().to_owned()
        };
        Ok(Dataset {
            points,
            labels,
            num_classes,
        })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::domain("ragged rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::domain(e.to_string()))?;
        Dataset::new(points, labels, num_classes)
    }

    pub fn empty(dim: usize, num_classes: usize) -> Self {
        Dataset {
            points: Array2::zeros((0, dim)),
            labels: Vec::new(),
            num_classes: num_classes.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        let flat = self.points.as_slice().expect("standard layout");
        &flat[i * d..(i + 1) * d]
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            points: self.points.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Applies `f` to every row, producing a dataset with the same labels.
    pub fn map_rows<F>(&self, out_dim: usize, f: F) -> Dataset
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let mut flat = Vec::with_capacity(self.len() * out_dim);
        for i in 0..self.len() {
            let mapped = f(self.row(i));
            debug_assert_eq!(mapped.len(), out_dim);
            flat.extend(mapped);
        }
        Dataset {
            points: Array2::from_shape_vec((self.len(), out_dim), flat).expect("shape"),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Stable content digest (first 8 bytes of SHA-256 over the binary encoding).
    pub fn content_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update((self.len() as u64).to_le_bytes());
        hasher.update((self.dim() as u64).to_le_bytes());
        hasher.update((self.num_classes as u64).to_le_bytes());
        for v in self.points.iter() {
            hasher.update(v.to_bits().to_le_bytes());
        }
        for &y in &self.labels {
            hasher.update((y as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    // ---- CSV ----

    /// Reads CSV; `num_classes` defaults to `max(label) + 1` when `None`.
    pub fn read_csv<R: Read>(reader: R, num_classes: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut flat = Vec::new();
        let mut labels = Vec::new();
        let mut dim: Option<usize> = None;
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::format(format!(
                    "line {}: need at least one feature and a label",
                    line + 1
                )));
            }
            let parsed: std::result::Result<Vec<f64>, _> = record
                .iter()
                .take(record.len() - 1)
                .map(str::parse::<f64>)
                .collect();
            let label = record[record.len() - 1].parse::<usize>();
            let (features, label) = match (parsed, label) {
                (Ok(f), Ok(l)) => (f, l),
                _ if line == 0 => continue, // header
                _ => {
                    return Err(Error::format(format!(
                        "line {}: unparseable record",
                        line + 1
                    )))
                }
            };
            match dim {
                None => dim = Some(features.len()),
                Some(d) if d != features.len() => {
                    return Err(Error::format(format!(
                        "line {}: expected {d} features, found {}",
                        line + 1,
                        features.len()
                    )))
                }
                _ => {}
            }
            flat.extend(features);
            labels.push(label);
        }
        let d = dim.unwrap_or(0);
        let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        let points = Array2::from_shape_vec((labels.len(), d), flat)
            .map_err(|e| Error::format(e.to_string()))?;
        Dataset::new(points, labels, k)
    }

    /// Writes CSV with a header row `x0,...,x{d-1},label`. Floats use the
    /// shortest representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    // ---- binary ----

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let n = r.read_u32::<LittleEndian>()? as usize;
        let d = r.read_u32::<LittleEndian>()? as usize;
        let k = r.read_u32::<LittleEndian>()? as usize;
        let mut flat = vec![0.0; n * d];
        r.read_f64_into::<LittleEndian>(&mut flat)?;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let points =
            Array2::from_shape_vec((n, d), flat).map_err(|e| Error::format(e.to_string()))?;
        Dataset::new(points, labels, k)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let to_u32 = |v: usize| {
            u32::try_from(v).map_err(|_| Error::format(format!("{v} does not fit in u32")))
        };
        w.write_u32::<LittleEndian>(to_u32(self.len())?)?;
        w.write_u32::<LittleEndian>(to_u32(self.dim())?)?;
        w.write_u32::<LittleEndian>(to_u32(self.num_classes)?)?;
        for v in self.points.iter() {
            w.write_f64::<LittleEndian>(*v)?;
        }
        for &y in &self.labels {
            w.write_u32::<LittleEndian>(to_u32(y)?)?;
        }
        Ok(())
    }

    /// Loads by extension: `.bin` is binary, anything else CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        if path.extension().is_some_and(|e| e == "bin") {
            Dataset::read_binary(file)
        } else {
            Dataset::read_csv(file, None)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = BufWriter::new(File::create(path)?);
        if path.extension().is_some_and(|e| e == "bin") {
            self.write_binary(&mut file)?;
        } else {
            self.write_csv(&mut file)?;
        }
        file.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> Dataset {
        Dataset::from_rows(
            &[vec![0.0, 1.5], vec![-2.25, 3.0], vec![1e-7, -4.0]],
            vec![0, 2, 1],
            3,
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_labels_and_nan() {
        assert!(Dataset::from_rows(&[vec![0.0]], vec![3], 3).is_err());
        assert!(Dataset::from_rows(&[vec![f64::NAN]], vec![0], 1).is_err());
        assert!(Dataset::from_rows(&[vec![0.0]], vec![0, 0], 1).is_err());
    }

    #[test]
    fn csv_with_and_without_header() {
        let with = "a,b,label\n1,2,0\n3,4,1\n";
        let without = "1,2,0\n3,4,1\n";
        let a = Dataset::read_csv(with.as_bytes(), None).unwrap();
        let b = Dataset::read_csv(without.as_bytes(), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a.dim(), 2);
        assert_eq!(a.num_classes(), 2);
        assert_eq!(a.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn csv_rejects_ragged() {
        assert!(Dataset::read_csv("1,2,0\n3,1\n".as_bytes(), None).is_err());
    }

    #[test]
    fn binary_layout() {
        let ds = toy();
        let mut buf = Vec::new();
        ds.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 6 * 8 + 3 * 4);
        assert_eq!(&buf[0..4], &3u32.to_le_bytes());
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &3u32.to_le_bytes());
        assert_eq!(&buf[12..20], &0.0f64.to_le_bytes());
        assert_eq!(&buf[buf.len() - 4..], &1u32.to_le_bytes());
    }

    #[test]
    fn subset_and_hash() {
        let ds = toy();
        let s = ds.subset(&[2, 0]);
        assert_eq!(s.labels(), &[1, 0]);
        assert_eq!(s.row(0), ds.row(2));
        assert_ne!(ds.content_hash(), s.content_hash());
        assert_eq!(ds.content_hash(), toy().content_hash());
    }

    proptest! {
        #[test]
        fn csv_and_binary_round_trip(
            rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 0..20),
            seed in 0usize..5,
        ) {
            let labels: Vec<usize> = (0..rows.len()).map(|i| (i + seed) % 4).collect();
            let ds = if rows.is_empty() {
                Dataset::new(Array2::zeros((0, 3)), vec![], 4).unwrap()
            } else {
                Dataset::from_rows(&rows, labels, 4).unwrap()
            };
            let mut bin = Vec::new();
            ds.write_binary(&mut bin).unwrap();
            prop_assert_eq!(&Dataset::read_binary(bin.as_slice()).unwrap(), &ds);
            if !ds.is_empty() {
                let mut text = Vec::new();
                ds.write_csv(&mut text).unwrap();
                prop_assert_eq!(&Dataset::read_csv(text.as_slice(), Some(4)).unwrap(), &ds);
            }
        }
    }
}
