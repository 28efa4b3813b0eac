//! Schema-driven CSV tables.
//!
//! The schema file has one line per column, `name,kind[,cardinality]`, where
//! `kind` is `continuous`, `categorical` or `label`. Blank lines and lines
//! starting with `#` are ignored. Exactly one column must be the label.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use super::{Dataset, FeatureGroup, FeatureKind};
use crate::matrix::Matrix2D;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnKind {
    Continuous,
    Categorical { cardinality: Option<usize> },
    Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

pub fn parse_schema(text: &str) -> Result<Vec<ColumnSpec>> {
    let mut cols = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |why: &str| Error::Schema(format!("schema line {}: {why}: {line:?}", lineno + 1));
        if parts.len() < 2 || parts.len() > 3 || parts[0].is_empty() {
            return Err(bad("expected name,kind[,cardinality]"));
        }
        let cardinality = match parts.get(2) {
            Some(c) => Some(c.parse::<usize>().ok().filter(|&c| c > 0).ok_or_else(|| bad("bad cardinality"))?),
            None => None,
        };
        let kind = match parts[1] {
            "continuous" => ColumnKind::Continuous,
            "categorical" => ColumnKind::Categorical { cardinality },
            "label" => ColumnKind::Label,
            _ => return Err(bad("unknown kind")),
        };
        if cardinality.is_some() && !matches!(kind, ColumnKind::Categorical { .. }) {
            return Err(bad("only categorical columns take a cardinality"));
        }
        if cols.iter().any(|c: &ColumnSpec| c.name == parts[0]) {
            return Err(bad("duplicate column"));
        }
        cols.push(ColumnSpec { name: parts[0].to_string(), kind });
    }
    match cols.iter().filter(|c| c.kind == ColumnKind::Label).count() {
        1 => Ok(cols),
        n => Err(Error::Schema(format!("schema needs exactly one label column, found {n}"))),
    }
}

/// How each schema column maps to features: z-score statistics for
/// continuous columns and the ordered level lists of categorical and label
/// columns.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularEncoding {
    pub columns: Vec<(ColumnSpec, ColumnEncoding)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnEncoding {
    Continuous { mean: f64, std: f64 },
    Levels(Vec<String>),
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(RawTable { header, rows })
}

fn column_index(table: &RawTable, schema: &[ColumnSpec]) -> Result<Vec<usize>> {
    let idx = schema
        .iter()
        .map(|c| {
            table
                .header
                .iter()
                .position(|h| *h == c.name)
                .ok_or_else(|| Error::Schema(format!("column {:?} missing from CSV header", c.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(extra) = table.header.iter().find(|h| !schema.iter().any(|c| c.name == **h)) {
        return Err(Error::Schema(format!("CSV column {extra:?} not in schema")));
    }
    Ok(idx)
}

/// Numeric order when every level parses as a number, lexicographic otherwise.
fn sort_levels(levels: &mut [String]) {
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        levels.sort_by(|a, b| {
            a.parse::<f64>().unwrap().partial_cmp(&b.parse::<f64>().unwrap()).unwrap_or(Ordering::Equal)
        });
    } else {
        levels.sort();
    }
}

fn parse_number(v: &str, column: &str, row: usize) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Schema(format!("row {row}, column {column:?}: {v:?} is not a finite number")))
}

impl TabularEncoding {
    fn fit(table: &RawTable, schema: &[ColumnSpec], idx: &[usize]) -> Result<Self> {
        let n = table.rows.len().max(1) as f64;
        let mut columns = Vec::new();
        for (spec, &j) in schema.iter().zip(idx) {
            let enc = match spec.kind {
                ColumnKind::Continuous => {
                    let vals = table
                        .rows
                        .iter()
                        .enumerate()
                        .map(|(r, row)| parse_number(&row[j], &spec.name, r + 1))
                        .collect::<Result<Vec<_>>>()?;
                    let mean = vals.iter().sum::<f64>() / n;
                    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                    ColumnEncoding::Continuous { mean, std: if std > 0.0 { std } else { 1.0 } }
                }
                ColumnKind::Categorical { .. } | ColumnKind::Label => {
                    let mut levels: Vec<String> = table.rows.iter().map(|row| row[j].clone()).collect();
                    levels.sort();
                    levels.dedup();
                    sort_levels(&mut levels);
                    if let ColumnKind::Categorical { cardinality: Some(c) } = spec.kind {
                        if levels.len() > c {
                            return Err(Error::Schema(format!(
                                "column {:?} has {} levels, schema allows {c}",
                                spec.name,
                                levels.len()
                            )));
                        }
                    }
                    ColumnEncoding::Levels(levels)
                }
            };
            columns.push((spec.clone(), enc));
        }
        Ok(Self { columns })
    }

    fn label_levels(&self) -> &[String] {
        self.columns
            .iter()
            .find_map(|(s, e)| match (&s.kind, e) {
                (ColumnKind::Label, ColumnEncoding::Levels(l)) => Some(&l[..]),
                _ => None,
            })
            .expect("schema has a label column")
    }

    fn encode(&self, table: &RawTable, idx: &[usize]) -> Result<Dataset> {
        let mut groups = Vec::new();
        let mut width = 0;
        for (spec, enc) in &self.columns {
            let (kind, w) = match (&spec.kind, enc) {
                (ColumnKind::Label, _) => continue,
                (_, ColumnEncoding::Continuous { .. }) => (FeatureKind::Continuous, 1),
                (_, ColumnEncoding::Levels(l)) => (FeatureKind::Categorical { levels: l.clone() }, l.len()),
            };
            groups.push(FeatureGroup { name: spec.name.clone(), kind, columns: width..width + w });
            width += w;
        }
        let n = table.rows.len();
        let mut x = Matrix2D::zeros(n, width);
        let mut labels = Vec::with_capacity(n);
        for (r, row) in table.rows.iter().enumerate() {
            let out = x.row_mut(r);
            let mut at = 0;
            for ((spec, enc), &j) in self.columns.iter().zip(idx) {
                let v = &row[j];
                let level_of = |levels: &[String]| {
                    levels.iter().position(|l| l == v).ok_or_else(|| Error::UnknownCategory {
                        column: spec.name.clone(),
                        value: v.clone(),
                    })
                };
                match (&spec.kind, enc) {
                    (ColumnKind::Label, ColumnEncoding::Levels(l)) => labels.push(level_of(l)?),
                    (_, ColumnEncoding::Continuous { mean, std }) => {
                        out[at] = (parse_number(v, &spec.name, r + 1)? - mean) / std;
                        at += 1;
                    }
                    (_, ColumnEncoding::Levels(l)) => {
                        out[at + level_of(l)?] = 1.0;
                        at += l.len();
                    }
                }
            }
        }
        let names = self.label_levels().to_vec();
        Dataset::new(x, labels, names.len(), groups, names)
    }
}

fn read_schema(schema_path: &Path) -> Result<Vec<ColumnSpec>> {
    parse_schema(&fs::read_to_string(schema_path)?)
}

/// Loads a table, fitting the encoding on this file.
pub fn load_csv(path: &Path, schema_path: &Path) -> Result<Dataset> {
    load_csv_encoded(path, schema_path).map(|(ds, _)| ds)
}

/// [`load_csv`] that also returns the fitted encoding, for reuse on the
/// validation and test files.
pub fn load_csv_encoded(path: &Path, schema_path: &Path) -> Result<(Dataset, TabularEncoding)> {
    let schema = read_schema(schema_path)?;
    let table = read_table(path)?;
    let idx = column_index(&table, &schema)?;
    let enc = TabularEncoding::fit(&table, &schema, &idx)?;
    let ds = enc.encode(&table, &idx)?;
    Ok((ds, enc))
}

/// Loads a table with an existing encoding; unseen categories are errors.
pub fn load_csv_with_encoding(path: &Path, enc: &TabularEncoding) -> Result<Dataset> {
    let schema: Vec<ColumnSpec> = enc.columns.iter().map(|(s, _)| s.clone()).collect();
    let table = read_table(path)?;
    let idx = column_index(&table, &schema)?;
    enc.encode(&table, &idx)
}

/// Writes `ds` as a CSV table plus its schema. Categorical groups are written
/// as level names and the label as its class name in a `label` column.
pub fn write_csv(ds: &Dataset, path: &Path, schema_path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = Vec::new();
    let mut schema = String::new();
    for g in &ds.groups {
        match &g.kind {
            FeatureKind::Continuous if g.columns.len() == 1 => {
                header.push(g.name.clone());
                schema.push_str(&format!("{},continuous\n", g.name));
            }
            FeatureKind::Continuous => {
                for (i, _) in g.columns.clone().enumerate() {
                    header.push(format!("{}_{i}", g.name));
                    schema.push_str(&format!("{}_{i},continuous\n", g.name));
                }
            }
            FeatureKind::Categorical { levels } => {
                header.push(g.name.clone());
                schema.push_str(&format!("{},categorical,{}\n", g.name, levels.len()));
            }
        }
    }
    header.push("label".into());
    schema.push_str("label,label\n");
    wtr.write_record(&header)?;
    for (r, row) in ds.x.iter_rows().enumerate() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for g in &ds.groups {
            match &g.kind {
                FeatureKind::Continuous => rec.extend(row[g.columns.clone()].iter().map(|v| v.to_string())),
                FeatureKind::Categorical { levels } => {
                    let block = &row[g.columns.clone()];
                    rec.push(levels[crate::matrix::argmax(block)].clone());
                }
            }
        }
        rec.push(ds.class_names[ds.labels[r]].clone());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    fs::write(schema_path, schema)?;
    Ok(())
}
