//! Dataset ingestion, encoding, stratified folds and bootstrap resampling.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DteError, Result};
use crate::rng::rng_for;

/// Tokens treated as a missing value. Missing values are rejected.
const MISSING_TOKENS: &[&str] = &["", "?", "NA", "N/A", "na", "null", "NULL"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// String-valued column, expanded to one indicator per category.
    /// Categories are sorted lexicographically.
    Categorical {
        categories: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceColumn {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl SourceColumn {
    pub fn width(&self) -> usize {
        match &self.kind {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical { categories } => categories.len(),
        }
    }
}

/// How a raw file maps onto the feature matrix and the label vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    /// Feature columns in file order, label column excluded.
    pub columns: Vec<SourceColumn>,
    pub label_column: String,
    /// Position of the label column among the raw file columns.
    pub label_position: usize,
    /// Original label values; class id `c` is `class_names[c]`.
    pub class_names: Vec<String>,
}

impl Schema {
    /// Plain numeric schema with columns `x1..xp` and classes `1..K`.
    pub fn numeric(p: usize, n_classes: usize) -> Self {
        Schema {
            columns: (1..=p).map(|j| SourceColumn { name: format!("x{j}"), kind: ColumnKind::Numeric }).collect(),
            label_column: "y".to_string(),
            label_position: p,
            class_names: (1..=n_classes).map(|c| c.to_string()).collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Number of encoded feature columns.
    pub fn width(&self) -> usize {
        self.columns.iter().map(SourceColumn::width).sum()
    }

    /// Encoded column names; one-hot columns are named `column=value`.
    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for col in &self.columns {
            match &col.kind {
                ColumnKind::Numeric => out.push(col.name.clone()),
                ColumnKind::Categorical { categories } => {
                    out.extend(categories.iter().map(|v| format!("{}={}", col.name, v)))
                }
            }
        }
        out
    }

    /// Encodes one row of raw feature fields (label excluded, file order).
    pub fn encode_row(&self, fields: &[&str], line: u64) -> Result<Vec<f64>> {
        if fields.len() != self.columns.len() {
            return Err(DteError::Parse {
                line,
                message: format!("expected {} feature fields, found {}", self.columns.len(), fields.len()),
            });
        }
        let mut out = Vec::with_capacity(self.width());
        for (col, raw) in self.columns.iter().zip(fields) {
            let raw = raw.trim();
            if is_missing(raw) {
                return Err(missing(line, &col.name));
            }
            match &col.kind {
                ColumnKind::Numeric => out.push(parse_finite(raw, line, &col.name)?),
                ColumnKind::Categorical { categories } => {
                    let hit = categories.iter().position(|c| c == raw).ok_or_else(|| DteError::Parse {
                        line,
                        message: format!("unknown category {raw:?} in column {}", col.name),
                    })?;
                    out.extend((0..categories.len()).map(|k| if k == hit { 1.0 } else { 0.0 }));
                }
            }
        }
        Ok(out)
    }
}

fn is_missing(raw: &str) -> bool {
    MISSING_TOKENS.contains(&raw) || raw.eq_ignore_ascii_case("nan")
}

fn missing(line: u64, column: &str) -> DteError {
    DteError::Parse { line, message: format!("missing value in column {column}") }
}

fn parse_finite(raw: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| DteError::Parse { line, message: format!("column {column}: {raw:?} is not a number") })?;
    if !v.is_finite() {
        return Err(DteError::Parse { line, message: format!("column {column}: non-finite value {raw:?}") });
    }
    Ok(v)
}

/// A labelled feature matrix. Labels are class ids in `0..K`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    schema: Schema,
}

impl Dataset {
    /// Checks shape, finiteness and label range. Resampled subsets may miss
    /// classes, so class presence is checked separately by
    /// [`Dataset::require_all_classes`].
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, schema: Schema) -> Result<Self> {
        let (n, p) = features.shape();
        if n == 0 || p == 0 {
            return Err(DteError::validation(format!(
                "dataset must have at least one row and one feature, got {n}x{p}"
            )));
        }
        if labels.len() != n {
            return Err(DteError::validation(format!("{} labels for {n} rows", labels.len())));
        }
        if schema.width() != p {
            return Err(DteError::DimensionMismatch { expected: schema.width(), got: p });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(DteError::validation(format!("non-finite feature value at row {}, column {}", i % n, i / n)));
        }
        let k = schema.n_classes();
        if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
            return Err(DteError::validation(format!("label {bad} outside 0..{k}")));
        }
        Ok(Dataset { features, labels, schema })
    }

    /// Numeric dataset from row vectors, with `K = max label + 1`.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let x = crate::linalg::from_rows(rows, p)?;
        let k = labels.iter().max().map_or(1, |&m| m + 1);
        Dataset::new(x, labels, Schema::numeric(p, k))
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.schema.n_classes()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }

    /// Errors unless `K >= 2` and every class has at least one row.
    pub fn require_all_classes(&self) -> Result<()> {
        if self.n_classes() < 2 {
            return Err(DteError::validation(format!("need at least two classes, found {}", self.n_classes())));
        }
        if let Some(c) = self.class_counts().iter().position(|&n| n == 0) {
            return Err(DteError::validation(format!("class {:?} has no rows", self.schema.class_names[c])));
        }
        Ok(())
    }

    /// Rows at `indices`, in order, duplicates kept.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let x = self.features.select_rows(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset { features: x, labels, schema: self.schema.clone() }
    }

    /// Writes the dataset back in its raw form (categoricals decoded,
    /// label restored at its original position).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n_fields = self.schema.columns.len() + 1;
        let label_pos = self.schema.label_position.min(n_fields - 1);
        let mut header: Vec<String> = self.schema.columns.iter().map(|c| c.name.clone()).collect();
        header.insert(label_pos, self.schema.label_column.clone());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut fields = Vec::with_capacity(n_fields);
            let mut j = 0;
            for col in &self.schema.columns {
                match &col.kind {
                    ColumnKind::Numeric => fields.push(format!("{}", self.features[(i, j)])),
                    ColumnKind::Categorical { categories } => {
                        let hit = (0..categories.len()).find(|&k| self.features[(i, j + k)] == 1.0).unwrap_or(0);
                        fields.push(categories[hit].clone());
                    }
                }
                j += col.width();
            }
            fields.insert(label_pos, self.schema.class_names[self.labels[i]].clone());
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Selects the label column by header name or zero-based position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl LabelColumn {
    /// Numeric strings are positions when the file has no header.
    pub fn parse(raw: &str, has_header: bool) -> Self {
        match raw.parse::<usize>() {
            Ok(i) if !has_header => LabelColumn::Index(i),
            _ => LabelColumn::Name(raw.to_string()),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn, has_header: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, label, has_header)
}

pub(crate) struct RawTable {
    pub header: Option<Vec<String>>,
    /// (line number, fields)
    pub rows: Vec<(u64, Vec<String>)>,
}

pub(crate) fn read_table<R: Read>(input: R, has_header: bool) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(has_header).flexible(true).from_reader(input);
    let header = if has_header {
        let h = reader.headers()?;
        if h.is_empty() {
            None
        } else {
            Some(h.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>())
        }
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut arity = header.as_ref().map(Vec::len);
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let expected = *arity.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DteError::Parse {
                line,
                message: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(RawTable { header, rows })
}

/// Parses a CSV into a dataset. Columns whose every value parses as a
/// number are numeric; any other column is one-hot encoded. Labels are
/// numbered in order of first appearance.
pub fn read_csv<R: Read>(input: R, label: &LabelColumn, has_header: bool) -> Result<Dataset> {
    let table = read_table(input, has_header)?;
    if table.rows.is_empty() {
        return Err(DteError::validation("no data rows"));
    }
    let width = table.rows[0].1.len();
    let names: Vec<String> = match &table.header {
        Some(h) => h.clone(),
        None => (0..width).map(|j| format!("col{j}")).collect(),
    };
    let label_pos = match label {
        LabelColumn::Name(name) => names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| DteError::validation(format!("label column {name:?} not found")))?,
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(DteError::validation(format!("label column index {i} out of range for {width} columns")))
        }
    };
    if width < 2 {
        return Err(DteError::validation("need at least one feature column"));
    }

    let mut class_names: Vec<String> = Vec::new();
    let mut class_of: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(table.rows.len());
    for (line, fields) in &table.rows {
        let raw = fields[label_pos].trim();
        if is_missing(raw) {
            return Err(missing(*line, &names[label_pos]));
        }
        let next = class_names.len();
        let c = *class_of.entry(raw.to_string()).or_insert_with(|| {
            class_names.push(raw.to_string());
            next
        });
        labels.push(c);
    }

    let mut columns = Vec::with_capacity(width - 1);
    for j in (0..width).filter(|&j| j != label_pos) {
        let mut numeric = true;
        let mut values = BTreeSet::new();
        for (line, fields) in &table.rows {
            let raw = fields[j].trim();
            if is_missing(raw) {
                return Err(missing(*line, &names[j]));
            }
            if numeric && raw.parse::<f64>().is_err() {
                numeric = false;
            }
            if !numeric {
                values.insert(raw.to_string());
            }
        }
        let kind = if numeric {
            ColumnKind::Numeric
        } else {
            for (_, fields) in &table.rows {
                values.insert(fields[j].trim().to_string());
            }
            ColumnKind::Categorical { categories: values.into_iter().collect() }
        };
        columns.push(SourceColumn { name: names[j].clone(), kind });
    }
    let schema = Schema { columns, label_column: names[label_pos].clone(), label_position: label_pos, class_names };

    let p = schema.width();
    let n = table.rows.len();
    let mut x = DMatrix::zeros(n, p);
    for (i, (line, fields)) in table.rows.iter().enumerate() {
        let feats: Vec<&str> =
            fields.iter().enumerate().filter(|&(j, _)| j != label_pos).map(|(_, s)| s.as_str()).collect();
        let encoded = schema.encode_row(&feats, *line)?;
        for (j, v) in encoded.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let ds = Dataset::new(x, labels, schema)?;
    ds.require_all_classes()?;
    Ok(ds)
}

/// Reads feature rows for a fitted schema. With a header, columns are
/// matched by name in any order and the label column may be present (it
/// is ignored); any other column is an error. Without a header, rows hold
/// the feature columns in schema order, optionally with the label at its
/// original position.
pub fn read_features<R: Read>(input: R, schema: &Schema, has_header: bool) -> Result<DMatrix<f64>> {
    let table = read_table(input, has_header)?;
    let order: Vec<usize> = match &table.header {
        Some(header) => {
            if let Some(extra) =
                header.iter().find(|h| **h != schema.label_column && !schema.columns.iter().any(|c| &c.name == *h))
            {
                return Err(DteError::validation(format!("unknown column {extra:?}")));
            }
            schema
                .columns
                .iter()
                .map(|c| {
                    header
                        .iter()
                        .position(|h| *h == c.name)
                        .ok_or_else(|| DteError::validation(format!("missing column {:?}", c.name)))
                })
                .collect::<Result<_>>()?
        }
        None => {
            let k = schema.columns.len();
            match table.rows.first().map(|r| r.1.len()) {
                None => (0..k).collect(),
                Some(w) if w == k => (0..k).collect(),
                Some(w) if w == k + 1 => (0..=k).filter(|&j| j != schema.label_position).collect(),
                Some(w) => return Err(DteError::validation(format!("expected {k} feature columns, found {w}"))),
            }
        }
    };
    let mut x = DMatrix::zeros(table.rows.len(), schema.width());
    for (i, (line, fields)) in table.rows.iter().enumerate() {
        let feats: Vec<&str> = order.iter().map(|&j| fields[j].as_str()).collect();
        for (j, v) in schema.encode_row(&feats, *line)?.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    Ok(x)
}

/// Replicated stratified K-fold assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub replicates: usize,
    pub folds: usize,
    pub seed: u64,
    /// `assignments[r][i]` is the test fold of row `i` in replicate `r`.
    pub assignments: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// (train rows, test rows) for one replicate and fold, ascending.
    pub fn split(&self, replicate: usize, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.assignments[replicate].iter().enumerate() {
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Each class is shuffled and dealt round-robin over the folds; the dealing
/// position carries over between classes, so fold sizes also differ by at
/// most one.
pub fn stratified_folds(ds: &Dataset, replicates: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(DteError::validation(format!("need at least 2 folds, got {folds}")));
    }
    if replicates == 0 {
        return Err(DteError::validation("need at least one replicate"));
    }
    let counts = ds.class_counts();
    if let Some((c, &size)) = counts.iter().enumerate().find(|&(_, &n)| n < folds) {
        return Err(DteError::validation(format!(
            "class {:?} has {size} rows, fewer than {folds} folds",
            ds.schema().class_names[c]
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, &c) in ds.labels().iter().enumerate() {
        members[c].push(i);
    }
    let assignments = (0..replicates)
        .map(|r| {
            let mut rng = rng_for(seed, &[0xF01D, r as u64]);
            let mut assign = vec![0; ds.n_rows()];
            let mut next = 0;
            for class in &members {
                let mut rows = class.clone();
                rows.shuffle(&mut rng);
                for i in rows {
                    assign[i] = next;
                    next = (next + 1) % folds;
                }
            }
            assign
        })
        .collect();
    Ok(FoldPlan { replicates, folds, seed, assignments })
}

/// Row indices drawn uniformly with replacement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSample {
    pub indices: Vec<usize>,
    pub seed: u64,
}

/// Bootstrap of `n` rows.
pub fn bootstrap(n: usize, seed: u64) -> Result<BootstrapSample> {
    if n == 0 {
        return Err(DteError::validation("cannot bootstrap an empty dataset"));
    }
    let mut rng = rng_for(seed, &[0xB007]);
    let indices = (0..n).map(|_| rng.random_range(0..n)).collect();
    Ok(BootstrapSample { indices, seed })
}
