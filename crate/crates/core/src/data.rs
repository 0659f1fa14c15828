//! Vertically partitioned datasets: synthetic generation, column splits and
//! CSV ingestion.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

/// Aligned per-party feature blocks. Party 0 is the guest and owns the labels.
#[derive(Clone, Debug, PartialEq)]
pub struct VerticalDataset {
    parts: Vec<DMatrix<f64>>,
    labels: Vec<f64>,
    ids: Vec<String>,
}

impl VerticalDataset {
    pub fn new(parts: Vec<DMatrix<f64>>, labels: Vec<f64>, ids: Vec<String>) -> Result<Self> {
        let m = labels.len();
        if parts.is_empty() {
            return Err(DataError::Shape("no parties".into()).into());
        }
        if m == 0 {
            return Err(DataError::Shape("no samples".into()).into());
        }
        for (i, p) in parts.iter().enumerate() {
            if p.nrows() != m {
                return Err(DataError::Alignment(format!(
                    "party {i} has {} rows, labels have {m}",
                    p.nrows()
                ))
                .into());
            }
            if p.ncols() == 0 {
                return Err(DataError::Shape(format!("party {i} has no features")).into());
            }
        }
        if ids.len() != m {
            return Err(DataError::Alignment(format!("{} ids for {m} rows", ids.len())).into());
        }
        let mut seen = HashSet::new();
        for (line, id) in ids.iter().enumerate() {
            if !seen.insert(id) {
                return Err(DataError::DuplicateId {
                    id: id.clone(),
                    line: line + 1,
                }
                .into());
            }
        }
        Ok(VerticalDataset { parts, labels, ids })
    }

    /// Uses row indices `0..m` as ids.
    pub fn with_row_ids(parts: Vec<DMatrix<f64>>, labels: Vec<f64>) -> Result<Self> {
        let ids = (0..labels.len()).map(|i| i.to_string()).collect();
        Self::new(parts, labels, ids)
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn n_total(&self) -> usize {
        self.parts.iter().map(|p| p.ncols()).sum()
    }

    pub fn party_count(&self) -> usize {
        self.parts.len()
    }

    pub fn feature_counts(&self) -> Vec<usize> {
        self.parts.iter().map(|p| p.ncols()).collect()
    }

    pub fn part(&self, i: usize) -> &DMatrix<f64> {
        &self.parts[i]
    }

    pub fn parts(&self) -> &[DMatrix<f64>] {
        &self.parts
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// All parties' columns side by side, guest first.
    pub fn concatenated(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.m(), self.n_total());
        let mut col = 0;
        for p in &self.parts {
            out.columns_mut(col, p.ncols()).copy_from(p);
            col += p.ncols();
        }
        out
    }
}

/// Shuffles the columns of `x` with `seed` and cuts them into contiguous blocks
/// of the given widths. Returns the dataset and the permutation: column `j` of
/// the concatenated parts is column `perm[j]` of `x`.
pub fn vertical_split(
    x: &DMatrix<f64>,
    y: &[f64],
    counts: &[usize],
    seed: u64,
) -> Result<(VerticalDataset, Vec<usize>)> {
    let total: usize = counts.iter().sum();
    if total != x.ncols() {
        return Err(DataError::Shape(format!(
            "feature counts sum to {total}, data has {} columns",
            x.ncols()
        ))
        .into());
    }
    if y.len() != x.nrows() {
        return Err(DataError::Shape(format!("{} labels for {} rows", y.len(), x.nrows())).into());
    }
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(counts.len());
    let mut start = 0;
    for &c in counts {
        let cols = &perm[start..start + c];
        parts.push(x.select_columns(cols));
        start += c;
    }
    Ok((VerticalDataset::with_row_ids(parts, y.to_vec())?, perm))
}

/// Inverse of [`vertical_split`]: puts every column back at its original index.
pub fn reassemble(ds: &VerticalDataset, perm: &[usize]) -> Result<DMatrix<f64>> {
    let joined = ds.concatenated();
    if perm.len() != joined.ncols() {
        return Err(DataError::Shape("permutation length differs from column count".into()).into());
    }
    let mut out = DMatrix::zeros(joined.nrows(), joined.ncols());
    for (j, &orig) in perm.iter().enumerate() {
        out.set_column(orig, &joined.column(j));
    }
    Ok(out)
}

/// Parameters of the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub m: usize,
    pub n: usize,
    /// Rank of the noise-free feature matrix.
    pub rank: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Distance each sample is pushed away from the decision boundary.
    pub margin: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            m: 1000,
            n: 40,
            rank: 10,
            noise: 0.1,
            margin: 1.0,
            seed: 0,
        }
    }
}

/// Low-rank features with labels from a hidden linear rule.
///
/// `X = F G` with Gaussian `F` (m x r) and `G` (r x n). A ground-truth
/// direction `w` is drawn from the row space of `G`; each sample is labelled
/// by the sign of `x . w` and then shifted by `margin` along `w` away from the
/// boundary, which keeps the rank at `r`. Noise is added last. Labels are
/// `{0, 1}`.
pub fn synth(spec: &SynthSpec) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let SynthSpec {
        m,
        n,
        rank,
        noise,
        margin,
        seed,
    } = *spec;
    if m == 0 || n == 0 || rank == 0 || rank > n {
        return Err(DataError::Shape(format!("invalid synth shape m={m} n={n} rank={rank}")).into());
    }
    if !(noise >= 0.0 && margin >= 0.0) {
        return Err(DataError::Shape("noise and margin must be non-negative".into()).into());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut normal = |r: usize, c: usize, scale: f64| {
        DMatrix::from_fn(r, c, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
    };
    let f = normal(m, rank, 1.0);
    let g = normal(rank, n, 1.0 / (rank as f64).sqrt());
    let a = normal(rank, 1, 1.0);
    let mut x = f * &g;
    let w: DVector<f64> = (g.transpose() * a).column(0).into_owned();
    let w = w.normalize();
    let scores = &x * &w;
    let mut y = Vec::with_capacity(m);
    for i in 0..m {
        let side = if scores[i] >= 0.0 { 1.0 } else { -1.0 };
        let mut row = x.row_mut(i);
        row += w.transpose() * (side * margin);
        y.push(if side > 0.0 { 1.0 } else { 0.0 });
    }
    if noise > 0.0 {
        x += normal(m, n, noise);
    }
    Ok((x, y))
}

/// Rescales every column to mean 0 and variance 1 (constant columns become 0).
pub fn standardize(x: &mut DMatrix<f64>) {
    let m = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / m;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        let sd = var.sqrt();
        for v in col.iter_mut() {
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
    }
}

/// Feature splits used in the original experiments: guest first, then hosts.
pub fn reference_splits() -> [(&'static str, [usize; 4]); 3] {
    [
        ("mimic3", [114, 200, 200, 200]),
        ("epsilon", [200, 600, 600, 600]),
        ("nus_wide", [34, 200, 200, 200]),
    ]
}

/// How to read one party's CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSchema {
    pub id_column: String,
    /// Present only in the guest's file.
    pub label_column: Option<String>,
    pub standardize: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id_column: "id".into(),
            label_column: None,
            standardize: false,
        }
    }
}

/// One party's rows as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct PartyTable {
    pub ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub features: DMatrix<f64>,
    pub labels: Option<Vec<f64>>,
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<PartyTable> {
    let p = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: p.clone(),
            source,
        },
        other => DataError::Parse {
            path: p.clone(),
            line: 1,
            message: format!("{other:?}"),
        },
    })?;
    let header = reader
        .headers()
        .map_err(|e| DataError::Parse {
            path: p.clone(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let id_col = find(&schema.id_column)?;
    let label_col = schema.label_column.as_deref().map(find).transpose()?;
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != id_col && Some(c) != label_col)
        .collect();
    let feature_names = feature_cols
        .iter()
        .map(|&c| header[c].trim().to_string())
        .collect();

    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let parse_err = |message: String| DataError::Parse {
            path: p.clone(),
            line,
            message,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let id = rec[id_col].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId { id, line }.into());
        }
        let num = |c: usize| {
            let cell = rec[c].trim();
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("non-numeric value {cell:?} in column {:?}", &header[c])))
        };
        for &c in &feature_cols {
            values.push(num(c)?);
        }
        if let Some(c) = label_col {
            labels.push(num(c)?);
        }
        ids.push(id);
    }
    let mut features = DMatrix::from_row_slice(ids.len(), feature_cols.len(), &values);
    if schema.standardize {
        standardize(&mut features);
    }
    Ok(PartyTable {
        ids,
        feature_names,
        features,
        labels: label_col.map(|_| labels),
    })
}

pub fn save_csv(path: &Path, table: &PartyTable, schema: &CsvSchema) -> Result<()> {
    let io = |e: csv::Error| DataError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec![schema.id_column.clone()];
    if let (Some(name), Some(_)) = (&schema.label_column, &table.labels) {
        header.push(name.clone());
    }
    header.extend(table.feature_names.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for (i, id) in table.ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        if let (Some(_), Some(labels)) = (&schema.label_column, &table.labels) {
            row.push(format!("{:?}", labels[i]));
        }
        row.extend(table.features.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

/// All parties must list the same ids in the same order.
pub fn check_alignment(tables: &[PartyTable]) -> Result<()> {
    let Some(first) = tables.first() else {
        return Err(DataError::Alignment("no parties".into()).into());
    };
    for (k, t) in tables.iter().enumerate().skip(1) {
        if t.ids.len() != first.ids.len() {
            return Err(DataError::Alignment(format!(
                "party {k} has {} rows, party 0 has {}",
                t.ids.len(),
                first.ids.len()
            ))
            .into());
        }
        if let Some(i) = (0..t.ids.len()).find(|&i| t.ids[i] != first.ids[i]) {
            return Err(DataError::Alignment(format!(
                "row {} differs: party 0 has id {:?}, party {k} has {:?}",
                i + 1,
                first.ids[i],
                t.ids[i]
            ))
            .into());
        }
    }
    Ok(())
}

/// Builds a dataset from per-party tables. Exactly one table must carry labels;
/// it becomes the guest and the others keep their order as hosts.
pub fn assemble(tables: Vec<PartyTable>) -> Result<VerticalDataset> {
    check_alignment(&tables)?;
    let owners: Vec<usize> = (0..tables.len())
        .filter(|&i| tables[i].labels.is_some())
        .collect();
    if owners.len() != 1 {
        return Err(DataError::Alignment(format!(
            "exactly one party must hold labels, found {}",
            owners.len()
        ))
        .into());
    }
    let guest = owners[0];
    let mut tables = tables;
    let guest_table = tables.remove(guest);
    let ids = guest_table.ids.clone();
    let labels = guest_table.labels.clone().expect("label owner");
    let mut parts = vec![guest_table.features];
    parts.extend(tables.into_iter().map(|t| t.features));
    VerticalDataset::new(parts, labels, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn rank(x: &DMatrix<f64>) -> usize {
        x.clone().svd(false, false).rank(1e-9)
    }

    #[test]
    fn synth_is_exactly_low_rank_without_noise() {
        let spec = SynthSpec {
            m: 50,
            n: 8,
            rank: 2,
            noise: 0.0,
            margin: 0.5,
            seed: 3,
        };
        let (x, y) = synth(&spec).unwrap();
        assert_eq!(rank(&x), 2);
        assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(y.iter().any(|&v| v == 1.0) && y.iter().any(|&v| v == 0.0));
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec::default();
        assert_eq!(synth(&spec).unwrap(), synth(&spec).unwrap());
        let other = SynthSpec { seed: 1, ..spec };
        assert_ne!(synth(&spec).unwrap().0, synth(&other).unwrap().0);
        assert!(synth(&SynthSpec { rank: 50, ..spec }).is_err());
    }

    #[test]
    fn split_widths_and_roundtrip() {
        let (x, y) = synth(&SynthSpec {
            m: 10,
            n: 714,
            rank: 5,
            ..Default::default()
        })
        .unwrap();
        let (ds, perm) = vertical_split(&x, &y, &[114, 200, 200, 200], 1).unwrap();
        assert_eq!(ds.feature_counts(), vec![114, 200, 200, 200]);
        assert_eq!(reassemble(&ds, &perm).unwrap(), x);
        assert!(vertical_split(&x, &y, &[100, 200], 1).is_err());
    }

    #[test]
    fn single_party_split_is_a_permutation() {
        let x = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        let (ds, perm) = vertical_split(&x, &[0.0, 1.0, 0.0], &[4], 2).unwrap();
        for (j, &orig) in perm.iter().enumerate() {
            assert_eq!(ds.part(0).column(j), x.column(orig));
        }
    }

    fn table(ids: &[&str], labels: Option<Vec<f64>>) -> PartyTable {
        PartyTable {
            ids: ids.iter().map(|s| s.to_string()).collect(),
            feature_names: vec!["a".into(), "b".into()],
            features: DMatrix::from_fn(ids.len(), 2, |i, j| i as f64 + 0.5 * j as f64),
            labels,
        }
    }

    #[test]
    fn csv_roundtrip_and_hosts_without_labels() {
        let dir = tempfile::tempdir().unwrap();
        let guest_schema = CsvSchema {
            label_column: Some("y".into()),
            ..Default::default()
        };
        let g = table(&["r1", "r2", "r3"], Some(vec![1.0, 0.0, 1.0]));
        let gp = dir.path().join("guest.csv");
        save_csv(&gp, &g, &guest_schema).unwrap();
        assert_eq!(load_csv(&gp, &guest_schema).unwrap(), g);

        let h = table(&["r1", "r2", "r3"], None);
        let hp = dir.path().join("host.csv");
        save_csv(&hp, &h, &CsvSchema::default()).unwrap();
        let loaded = load_csv(&hp, &CsvSchema::default()).unwrap();
        assert_eq!(loaded, h);

        let ds = assemble(vec![loaded, load_csv(&gp, &guest_schema).unwrap()]).unwrap();
        assert_eq!(ds.labels(), &[1.0, 0.0, 1.0]);
        assert_eq!(ds.party_count(), 2);
    }

    #[test]
    fn misaligned_ids_are_rejected() {
        let g = table(&["a", "b"], Some(vec![1.0, 0.0]));
        let h = table(&["b", "a"], None);
        assert!(matches!(
            assemble(vec![g, h]),
            Err(Error::Data(DataError::Alignment(_)))
        ));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "id,a\nr1,1.0\nr2,abc\n").unwrap();
        match load_csv(&p, &CsvSchema::default()) {
            Err(Error::Data(DataError::Parse { line, .. })) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "id,a\nr1,1.0\nr1,2.0\n").unwrap();
        assert!(matches!(
            load_csv(&p, &CsvSchema::default()),
            Err(Error::Data(DataError::DuplicateId { line: 3, .. }))
        ));
        std::fs::write(&p, "key,a\nr1,1.0\n").unwrap();
        assert!(matches!(
            load_csv(&p, &CsvSchema::default()),
            Err(Error::Data(DataError::MissingColumn(_)))
        ));
    }

    #[test]
    fn standardize_columns() {
        let mut x = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]);
        standardize(&mut x);
        let col = x.column(0);
        assert!(col.sum().abs() < 1e-12);
        assert!((col.iter().map(|v| v * v).sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
        assert!(x.column(1).iter().all(|&v| v == 0.0));
    }
}
