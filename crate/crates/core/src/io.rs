//! Model files and dataset CSVs.
//!
//! A model file is line-oriented ASCII:
//!
//! ```text
//! hemppcat-model 1
//! dim <d>
//! rank <k>
//! components <J>
//! groups <L>
//! noise group|component
//! weights <J values>
//! variances <L values for group noise, J for component noise>
//! mean <j> <d values>            (j = 1..J)
//! factor <j> <d*k values>        (column-major, j = 1..J)
//! end
//! ```
//!
//! Fields are separated by single spaces and floats use Rust's shortest
//! round-trip exponent form, so a save/load cycle is bitwise exact.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{validate_params, Dataset, Hyper, ModelParams, NoiseKind};

pub const MODEL_MAGIC: &str = "hemppcat-model";
pub const MODEL_VERSION: &str = "1";

pub fn model_to_string(params: &ModelParams, hyper: &Hyper) -> Result<String> {
    validate_params(params, hyper)?;
    let mut s = String::new();
    let floats = |s: &mut String, xs: &mut dyn Iterator<Item = f64>| {
        for x in xs {
            write!(s, " {x:e}").expect("writing to a String");
        }
        s.push('\n');
    };
    writeln!(s, "{MODEL_MAGIC} {MODEL_VERSION}").unwrap();
    writeln!(s, "dim {}", hyper.dim).unwrap();
    writeln!(s, "rank {}", hyper.rank).unwrap();
    writeln!(s, "components {}", hyper.components).unwrap();
    writeln!(s, "groups {}", hyper.groups).unwrap();
    let noise = match params.noise {
        NoiseKind::Group => "group",
        NoiseKind::Component => "component",
    };
    writeln!(s, "noise {noise}").unwrap();
    s.push_str("weights");
    floats(&mut s, &mut params.weights.iter().copied());
    s.push_str("variances");
    floats(&mut s, &mut params.variances.iter().copied());
    for (j, m) in params.means.iter().enumerate() {
        write!(s, "mean {}", j + 1).unwrap();
        floats(&mut s, &mut m.iter().copied());
    }
    for (j, f) in params.factors.iter().enumerate() {
        write!(s, "factor {}", j + 1).unwrap();
        floats(&mut s, &mut f.iter().copied());
    }
    s.push_str("end\n");
    Ok(s)
}

pub fn save_model(params: &ModelParams, hyper: &Hyper, path: &Path) -> Result<()> {
    let text = model_to_string(params, hyper)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ModelParams, Hyper)> {
    parse_model(&fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    /// Next line split into fields, which must start with `key`.
    fn expect(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (i, line) = self.inner.next().ok_or(Error::Parse {
            line: self.last + 1,
            msg: format!("file ends before `{key}`"),
        })?;
        self.last = i + 1;
        let fields: Vec<&str> = line.split(' ').collect();
        if fields[0] != key {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected `{key}`, found `{}`", fields[0]),
            });
        }
        Ok((i + 1, fields[1..].to_vec()))
    }

    fn scalar(&mut self, key: &str) -> Result<usize> {
        let (line, fields) = self.expect(key)?;
        match fields.as_slice() {
            [v] => v.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("`{key}` needs a non-negative integer, found `{v}`"),
            }),
            _ => Err(Error::Parse {
                line,
                msg: format!("`{key}` takes one value"),
            }),
        }
    }

    fn floats(&mut self, key: &str, index: Option<usize>, count: usize) -> Result<Vec<f64>> {
        let (line, mut fields) = self.expect(key)?;
        if let Some(index) = index {
            let got = fields.first().and_then(|f| f.parse::<usize>().ok());
            if got != Some(index) {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected `{key} {index}`"),
                });
            }
            fields.remove(0);
        }
        if fields.len() != count {
            return Err(Error::Parse {
                line,
                msg: format!("`{key}` needs {count} values, found {}", fields.len()),
            });
        }
        fields
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad number `{f}`"),
                })
            })
            .collect()
    }
}

pub fn parse_model(text: &str) -> Result<(ModelParams, Hyper)> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (line, fields) = lines.expect(MODEL_MAGIC)?;
    match fields.as_slice() {
        [v] if *v == MODEL_VERSION => {}
        [v] => return Err(Error::SchemaVersion((*v).to_string())),
        _ => {
            return Err(Error::Parse {
                line,
                msg: "missing schema version".into(),
            })
        }
    }
    let dim = lines.scalar("dim")?;
    let rank = lines.scalar("rank")?;
    let components = lines.scalar("components")?;
    let groups = lines.scalar("groups")?;
    let hyper = Hyper::new(dim, rank, components, groups)?;
    let (line, fields) = lines.expect("noise")?;
    let noise = match fields.as_slice() {
        ["group"] => NoiseKind::Group,
        ["component"] => NoiseKind::Component,
        _ => {
            return Err(Error::Parse {
                line,
                msg: "noise must be `group` or `component`".into(),
            })
        }
    };
    let weights = lines.floats("weights", None, components)?;
    let n_var = match noise {
        NoiseKind::Group => groups,
        NoiseKind::Component => components,
    };
    let variances = lines.floats("variances", None, n_var)?;
    let mut means = Vec::with_capacity(components);
    for j in 0..components {
        means.push(DVector::from_vec(lines.floats("mean", Some(j + 1), dim)?));
    }
    let mut factors = Vec::with_capacity(components);
    for j in 0..components {
        let data = lines.floats("factor", Some(j + 1), dim * rank)?;
        factors.push(DMatrix::from_vec(dim, rank, data));
    }
    let (line, fields) = lines.expect("end")?;
    if !fields.is_empty() || lines.inner.any(|(_, l)| !l.is_empty()) {
        return Err(Error::Parse {
            line,
            msg: "unexpected content after `end`".into(),
        });
    }
    let params = ModelParams {
        factors,
        means,
        variances,
        weights,
        noise,
    };
    validate_params(&params, &hyper)?;
    Ok((params, hyper))
}

/// Rows of a dataset CSV before the [`Dataset`] invariants are applied.
/// Test sets may leave some noise groups unrepresented, which a `Dataset`
/// does not allow.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// `d x n`, one sample per column.
    pub samples: DMatrix<f64>,
    /// 0-based.
    pub groups: Vec<usize>,
    /// 0-based.
    pub labels: Option<Vec<usize>>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    pub fn into_dataset(self) -> Result<Dataset> {
        Dataset::new(self.samples, self.groups, self.labels)
    }
}

impl From<&Dataset> for Table {
    fn from(ds: &Dataset) -> Self {
        Table {
            samples: ds.samples().clone(),
            groups: ds.groups().to_vec(),
            labels: ds.labels().map(<[usize]>::to_vec),
        }
    }
}

fn one_based(field: &str, what: &str, line: usize) -> Result<usize> {
    match field.trim().parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v - 1),
        _ => Err(Error::Parse {
            line,
            msg: format!("{what} must be a positive integer, found `{field}`"),
        }),
    }
}

/// Reads a dataset CSV: a header, any number of feature columns, a `group`
/// column and an optional `label` column (both 1-based).
pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let group_col = names.iter().position(|&h| h == "group").ok_or(Error::Parse {
        line: 1,
        msg: "header has no `group` column".into(),
    })?;
    let label_col = names.iter().position(|&h| h == "label");
    if names.iter().filter(|&&h| h == "group").count() > 1 || names.iter().filter(|&&h| h == "label").count() > 1 {
        return Err(Error::Parse {
            line: 1,
            msg: "duplicate `group` or `label` column".into(),
        });
    }
    let feature_cols: Vec<usize> = (0..names.len())
        .filter(|&c| c != group_col && Some(c) != label_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no feature columns".into(),
        });
    }
    if let Some(c) = feature_cols.iter().find(|&&c| names[c].parse::<f64>().is_ok()) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header field `{}` looks numeric; a header row is required", names[*c]),
        });
    }

    let mut data = Vec::new();
    let mut groups = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = r + 2;
        for &c in &feature_cols {
            let field = record[c].trim();
            let x: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number `{field}` in column `{}`", names[c]),
            })?;
            data.push(x);
        }
        groups.push(one_based(&record[group_col], "group", line)?);
        if let (Some(c), Some(l)) = (label_col, labels.as_mut()) {
            l.push(one_based(&record[c], "label", line)?);
        }
    }
    if groups.is_empty() {
        return Err(Error::InvalidDataset("no samples".into()));
    }
    let d = feature_cols.len();
    let n = groups.len();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidDataset("non-finite sample value".into()));
    }
    Ok(Table {
        samples: DMatrix::from_vec(d, n, data),
        groups,
        labels,
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_table(fs::File::open(path)?)?.into_dataset()
}

pub fn read_table_file(path: &Path) -> Result<Table> {
    read_table(fs::File::open(path)?)
}

/// Writes the CSV layout read by [`read_table`], with features named
/// `x1..xd`.
pub fn write_table<W: Write>(table: &Table, writer: W) -> Result<()> {
    let d = table.samples.nrows();
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    let mut header: Vec<String> = (1..=d).map(|c| format!("x{c}")).collect();
    header.push("group".into());
    if table.labels.is_some() {
        header.push("label".into());
    }
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(d + 2);
    for i in 0..table.len() {
        row.clear();
        row.extend(table.samples.column(i).iter().map(|x| x.to_string()));
        row.push((table.groups[i] + 1).to_string());
        if let Some(l) = &table.labels {
            row.push((l[i] + 1).to_string());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_table(&Table::from(dataset), fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_problem;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn model_round_trip_is_bitwise() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for t in 0..100 {
            let (_, mut p) = random_problem(&mut rng, 3 + t % 5, 1 + t % 2, 1 + t % 3, 1 + t % 4, 1);
            let hyper = Hyper::new(p.dim(), p.rank(), p.n_components(), p.variances.len()).unwrap();
            if t % 7 == 0 {
                p.weights = vec![0.0; p.n_components()];
                p.weights[0] = 1.0;
            }
            p.means[0][0] = 1e-300 * (t as f64 + 0.1);
            let text = model_to_string(&p, &hyper).unwrap();
            let (q, h) = parse_model(&text).unwrap();
            assert_eq!(h, hyper);
            let bits = |m: &ModelParams| -> Vec<u64> {
                m.factors
                    .iter()
                    .flat_map(|f| f.iter().copied())
                    .chain(m.means.iter().flat_map(|v| v.iter().copied()))
                    .chain(m.variances.iter().copied())
                    .chain(m.weights.iter().copied())
                    .map(f64::to_bits)
                    .collect()
            };
            assert_eq!(bits(&p), bits(&q));
            assert_eq!(p, q);
        }
    }

    fn sample_text() -> String {
        let p = ModelParams {
            factors: vec![DMatrix::from_vec(3, 1, vec![1.0, 0.0, -2.5])],
            means: vec![DVector::from_vec(vec![0.0, 1.0, 2.0])],
            variances: vec![0.5, 2.0],
            weights: vec![1.0],
            noise: NoiseKind::Group,
        };
        model_to_string(&p, &Hyper::new(3, 1, 1, 2).unwrap()).unwrap()
    }

    #[test]
    fn rank_not_below_dim_rejected() {
        let text = sample_text().replace("rank 1", "rank 3");
        assert!(matches!(parse_model(&text), Err(Error::InvalidHyper(_))));
    }

    #[test]
    fn truncated_file_rejected() {
        let text = sample_text();
        let lines: Vec<&str> = text.lines().collect();
        for cut in 0..lines.len() {
            let partial = lines[..cut].join("\n");
            assert!(parse_model(&partial).is_err(), "accepted {cut} lines");
        }
        let short = text.replacen(" -2.5e0", "", 1);
        assert!(parse_model(&short).is_err());
    }

    #[test]
    fn schema_version_checked() {
        let text = sample_text().replacen("hemppcat-model 1", "hemppcat-model 2", 1);
        assert!(matches!(parse_model(&text), Err(Error::SchemaVersion(_))));
    }

    #[test]
    fn invariants_checked_on_load() {
        let text = sample_text().replace("variances 5e-1 2e0", "variances -1e0 2e0");
        assert!(matches!(parse_model(&text), Err(Error::InvalidVariance { .. })));
        let text = sample_text().replace("weights 1e0", "weights 9e-1");
        assert!(matches!(parse_model(&text), Err(Error::NotSimplex(_))));
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (ds, _) = random_problem(&mut rng, 4, 1, 2, 3, 12);
        let mut buf = Vec::new();
        write_table(&Table::from(&ds), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,x3,x4,group,label\n"));
        let back = read_table(buf.as_slice()).unwrap().into_dataset().unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_without_labels_and_column_order() {
        let text = "group,a,b\n1,0.5,1\n2,-1,3e2\n";
        let t = read_table(text.as_bytes()).unwrap();
        assert_eq!(t.groups, vec![0, 1]);
        assert!(t.labels.is_none());
        assert_eq!(t.samples, DMatrix::from_vec(2, 2, vec![0.5, 1.0, -1.0, 300.0]));
    }

    #[test]
    fn csv_errors() {
        assert!(read_table("x1,group\n".as_bytes()).is_err());
        assert!(read_table("x1,x2\n1,2\n".as_bytes()).is_err());
        assert!(read_table("1.0,group\n2.0,1\n".as_bytes()).is_err());
        assert!(read_table("x1,group\n1.0,0\n".as_bytes()).is_err());
        assert!(read_table("x1,group\nabc,1\n".as_bytes()).is_err());
        assert!(read_table("x1,group\n1,1,5\n".as_bytes()).is_err());
        // Group 1 empty.
        assert!(read_table("x1,group\n1,2\n".as_bytes()).unwrap().into_dataset().is_err());
    }
}
